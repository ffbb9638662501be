import pytest

from lineagestore import reuse, synth
from lineagestore.catalog import Catalog
from lineagestore.errors import ReuseError, ValidationError
from lineagestore.provrc import BACKWARD, FORWARD, decompress
from lineagestore.reuse import (BASE, CONFIRMED, DIM, GEN, REJECTED, TEMPORARY, Registry, args_digest,
                                canonical_args, lookup, register_operation, signatures)
from reuse_scenarios import Caller, run_kind

REUSABLE = ("negation", "addition", "aggregate", "tile", "matvec", "matmul", "dot", "window")


def test_args_digest_canonical():
    assert args_digest({"b": 1, "a": 2.5}) == args_digest({"a": 2.5, "b": 1})
    assert args_digest({"a": 1}) != args_digest({"a": 2})
    assert args_digest(None) == args_digest({})
    assert canonical_args({"reps": (2, 3)}) == {"reps": [2, 3]}
    for bad in ({"x": {"nested": 1}}, {"x": float("nan")}, {"x": [[1]]}):
        with pytest.raises(ValidationError):
            args_digest(bad)


def test_signature_keys():
    s = signatures("neg", ["A"], [(3, 2)], {"k": 1})
    assert s[BASE].key == (("A",), args_digest({"k": 1}))
    assert s[DIM].key == (((3, 2),), args_digest({"k": 1}))
    assert s[GEN].key == (args_digest({"k": 1}),)
    other = signatures("neg", ["B"], [(3, 2)], {"k": 1})
    assert other[BASE].digest != s[BASE].digest and other[DIM].digest == s[DIM].digest
    assert signatures("neg", ["B"], [(9, 9)], {"k": 1})[GEN].digest == s[GEN].digest


def test_cold_start_creates_temporary_entries(catalog):
    r = Caller(catalog).call("negation", (6,), 1)
    assert r["source"] == "capture" and r["ok"]
    assert r["events"] == {BASE: "created", DIM: "created", GEN: "created"}
    assert r["status"] == {BASE: CONFIRMED, DIM: TEMPORARY, GEN: TEMPORARY}
    # forward tables are stored too
    rep = r["report"]
    assert catalog.get_table(("X0", "Z0", rep.op_id), FORWARD).direction == FORWARD


def test_capture_free_call_needs_confirmed_entry(catalog):
    c = Caller(catalog)
    c.call("negation", (6,), 1)
    r = c.call("negation", (6,), 2, capture=False)
    assert r["source"] == "error" and not r["invoked"]
    c.call("negation", (6,), 3)  # second capture at the same shape confirms dim
    r = c.call("negation", (6,), 4, capture=False)
    assert r["source"] == DIM and r["ok"] and not r["invoked"]


def test_gen_serves_new_extent(catalog):
    c = Caller(catalog)
    c.call("aggregate", (2, 3), 1)
    r = c.call("aggregate", (5, 3), 2)
    assert r["events"][GEN] == "confirmed"
    r = c.call("aggregate", (4, 3), 3, capture=False)
    assert r["source"] == GEN and r["ok"]


@pytest.mark.parametrize("kind", REUSABLE)
def test_data_independent_kinds_confirm_and_serve(catalog, kind):
    res = run_kind(catalog, kind)
    assert all(r["source"] == "capture" and r["ok"] for r in res[:3])
    assert res[1]["events"][DIM] == "confirmed"
    assert res[1]["events"][GEN] == "repeat"
    assert res[2]["events"][GEN] == "confirmed"
    assert res[3]["source"] == DIM and res[3]["ok"] and not res[3]["invoked"]
    assert res[4]["source"] == GEN and res[4]["ok"] and not res[4]["invoked"]


@pytest.mark.parametrize("kind", ["sort", "value_filter", "groupby", "join"])
def test_value_dependent_kinds_rejected(catalog, kind):
    res = run_kind(catalog, kind)
    assert res[1]["events"][DIM] == "rejected"
    assert res[3]["source"] == "error" and res[4]["source"] == "error"
    assert all(r["ok"] for r in res[:3])


def test_flip_dim_only(catalog):
    res = run_kind(catalog, "flip")
    assert res[1]["events"][DIM] == "confirmed"
    assert res[2]["events"][GEN] == "rejected"
    assert res[3]["source"] == DIM and res[3]["ok"]
    assert res[4]["source"] == "error"


def test_cross_mispredicts_at_m1(catalog):
    res = run_kind(catalog, "cross", m=1)
    assert res[2]["events"][GEN] == "confirmed"  # (4,2) and (5,2) share a pattern
    assert res[4]["source"] == GEN
    assert res[4]["ok"] is False  # wrong lineage served at (6,3): detected against ground truth


def test_cross_avoided_at_m2(tmp_path):
    cat = Catalog.open(tmp_path / "c")
    c = Caller(cat, m=2)
    c.call("cross", (4, 2), 1)
    r = c.call("cross", (5, 2), 2)
    assert r["events"][GEN] == "matched" and r["status"][GEN] == TEMPORARY
    r = c.call("cross", (6, 3), 3)
    assert r["events"][GEN] == "rejected" and r["ok"]
    r = c.call("cross", (7, 3), 4, capture=False)
    assert r["source"] == "error"


def test_rejected_never_served_again(catalog):
    c = Caller(catalog)
    c.call("sort", (12,), 1)
    c.call("sort", (12,), 2)
    for seed in range(3, 6):
        c.call("sort", (12,), seed)
    reg = Registry(catalog)
    st = {e.level: e.status for _, e in reg.entries() if e.level != BASE}
    assert st == {DIM: REJECTED, GEN: REJECTED}
    assert c.call("sort", (12,), 9, capture=False)["source"] == "error"


def test_confirmed_entry_rejected_on_later_mismatch(catalog):
    c = Caller(catalog)
    c.call("negation", (5,), 1)
    c.call("negation", (5,), 2)
    # same name and args, different lineage: a capture always re-verifies
    catalog.add_array("P", (5,))
    catalog.add_array("Q", (5,))
    rel = synth.generate(synth.OpGenerator("flip", [(5,)], in_ids=["P"], out_id="Q"))[0]
    rep = register_operation(catalog, "negation", ["P"], ["Q"], {}, captured=[rel], reuse=False)
    assert rep.levels[DIM]["event"] == "rejected"


def test_lookup_order_and_three_level_equality(catalog):
    c = Caller(catalog)
    c.call("window", (6, 5), 1, in_ids=["A"])
    c.call("window", (6, 5), 2, in_ids=["A2"])
    c.call("window", (8, 5), 3, in_ids=["A3"])
    shapes = [(6, 5)]
    assert lookup(catalog, "window", ["A"], shapes, {"radius": 1}).level == BASE
    assert lookup(catalog, "window", ["Other"], shapes, {"radius": 1}).level == DIM
    assert lookup(catalog, "window", ["Other"], [(9, 5)], {"radius": 1}).level == GEN
    assert lookup(catalog, "window", ["A"], shapes, {"radius": 2}) is None
    metas_in = [catalog.array("A")]
    metas_out = [catalog.array("Z0")]
    reg = Registry(catalog)
    sigs = signatures("window", ["A"], shapes, {"radius": 1})
    preds = [reuse.predict(catalog, reg.get(sigs[lv]), metas_in, metas_out) for lv in (BASE, DIM, GEN)]
    sets = [{k: decompress(t).row_set() for k, t in p.items()} for p in preds]
    assert sets[0] == sets[1] == sets[2]


def test_reuse_flag_off_always_captures(catalog):
    c = Caller(catalog)
    c.call("negation", (5,), 1)
    c.call("negation", (5,), 2)
    catalog.add_array("U", (5,))
    catalog.add_array("V", (5,))
    rel = synth.generate(synth.OpGenerator("negation", [(5,)], in_ids=["U"], out_id="V"))[0]
    rep = register_operation(catalog, "negation", ["U"], ["V"], {}, captured=[rel], reuse=False)
    assert rep.source == "capture"
    rep = register_operation(catalog, "negation", ["U"], ["V"], {}, captured=None)
    assert rep.source == BASE


def test_registration_errors(catalog):
    catalog.add_array("A", (3,))
    catalog.add_array("B", (3,))
    with pytest.raises(ReuseError):
        register_operation(catalog, "neg", ["A"], ["B"], {})
    wrong = synth.generate(synth.OpGenerator("negation", [(4,)], in_ids=["A"], out_id="B"))[0]
    with pytest.raises(ValidationError):
        register_operation(catalog, "neg", ["A"], ["B"], {}, captured=[wrong])
    with pytest.raises(ValidationError):
        register_operation(catalog, "neg", ["A"], ["B"], {}, captured=[], m=0)
    assert catalog.edges() == [] and not catalog._m["ops"]


def test_registry_survives_restart(catalog):
    c = Caller(catalog)
    c.call("negation", (5,), 1)
    c.call("negation", (5,), 2)
    cat2 = Catalog.open(catalog.root)
    assert lookup(cat2, "negation", ["elsewhere"], [(5,)], {}).level == DIM
    key, e = Registry(cat2).find(Registry(cat2).entries()[0][0][:10])
    assert e.signature.digest == key


def test_equal_extents_are_ambiguous(catalog):
    # trained on a square matrix the template cannot tell both extents apart
    c = Caller(catalog)
    r = c.call("matvec", (6, 6), 1)
    assert r["report"].ambiguities
    r = c.call("matvec", (7, 4), 2)
    assert r["events"][GEN] == "rejected" and r["ok"]
