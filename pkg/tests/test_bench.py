import pytest

from lineagestore import bench
from lineagestore.errors import ValidationError

FAST = {"n_queries": 3, "selectivity": [0.01, 0.05]}


def test_zero_length_pipeline():
    for pipe in ({"kind": "ops", "ops": []}, {"kind": "structured", "n_ops": 0}, {"kind": "random", "n_ops": 0}):
        with pytest.raises(ValidationError):
            bench.run({"pipeline": pipe})


def test_bad_specs():
    with pytest.raises(ValidationError):
        bench.run({"query": {}})
    with pytest.raises(ValidationError):
        bench.run({"pipeline": {"kind": "structured"}, "extra": 1})
    with pytest.raises(ValidationError):
        bench.run({"pipeline": {"kind": "structured"}, "systems": ["fast"]})
    with pytest.raises(ValidationError):
        bench.run({"pipeline": {"kind": "random", "pool": ["zzz"]}})


def test_random_data_independent_pipeline_reports_five_hops():
    pool = ["negation", "addition", "window", "aggregate", "flip", "tile"]
    rep = bench.run({"pipeline": {"kind": "random", "n_ops": 5, "shape": [30, 30], "pool": pool, "seed": 2},
                     "query": FAST})
    assert len(rep["pipeline"]) == 5 and set(rep["pipeline"]) <= set(pool)
    assert [len(v) for v in rep["hop_rows"].values()] == [5, 5]
    assert rep["mismatches"] == 0
    for s in ("insitu", "nomerge", "brute"):
        assert rep["systems"][s]["n"] == 3
    assert "speedup_vs_brute" in rep["systems"]["insitu"]
    text = bench.format_table(rep)
    assert "insitu" in text and "rows per hop" in text


def test_negation_pipeline_insitu_beats_brute_force():
    rep = bench.run({"pipeline": {"kind": "ops", "ops": ["negation"] * 3, "shape": [316, 316]},
                     "query": {"n_queries": 5, "selectivity": 0.01}, "systems": ["insitu", "brute"]})
    assert rep["start_cells"] == 316 * 316
    assert rep["systems"]["insitu"]["median_ms"] < rep["systems"]["brute"]["median_ms"]


def test_backward_direction_and_timeout():
    rep = bench.run({"pipeline": {"kind": "structured", "n_ops": 3, "shape": [20, 20]},
                     "query": dict(FAST, direction="backward")})
    assert rep["direction"] == "backward" and rep["path"][0] == "X3"
    assert rep["mismatches"] == 0
    with pytest.raises(bench.BenchTimeout):
        bench.run({"pipeline": {"kind": "structured", "n_ops": 3, "shape": [20, 20]}, "query": FAST,
                   "timeout_s": 1e-9})
