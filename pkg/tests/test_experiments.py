import numpy as np

from quacc.experiments import (
    GraphBenchConfig,
    RejectionConfig,
    default_workers,
    replicate_streams,
    rejection_rates,
    run_graph_bench,
    run_rejection_grid,
    summarize_graph,
)


def test_streams_reproducible():
    g1, s1 = replicate_streams(3, 7)
    g2, s2 = replicate_streams(3, 7)
    assert s1 == s2 and g1.normal() == g2.normal()
    assert replicate_streams(3, 8)[1] != s1


def test_env_workers(monkeypatch):
    monkeypatch.setenv("QUACC_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("QUACC_THREADS", "x")
    assert default_workers() >= 1


def test_rejection_worker_invariance():
    cfg = RejectionConfig("S2", 200, (1.0,), (0.5, 0.9), 3, seed=4, workers=1)
    a = run_rejection_grid(cfg)
    b = run_rejection_grid(RejectionConfig("S2", 200, (1.0,), (0.5, 0.9), 3, seed=4, workers=2))
    assert a == b
    assert len(a) == 6 and [r.rep for r in a] == [0, 0, 1, 1, 2, 2]
    curves = rejection_rates(a, "tau")
    assert list(curves) == ["S2 theta=1"] and [t for t, _ in curves["S2 theta=1"]] == [0.5, 0.9]


def test_rejection_records_failures():
    # n = 30 puts tau = 0.1 below the sample-size floor
    recs = run_rejection_grid(RejectionConfig("S1", 30, (1.0,), (0.1,), 2, workers=1))
    assert all(r.error and np.isnan(r.p_value) for r in recs)


def test_graph_bench_pcorr_strong_signal():
    cfg = GraphBenchConfig(n=3000, backends=("pcorr",), replicates=2, mean_effects=True, seed=1, workers=1)
    recs = run_graph_bench(cfg)
    assert [r.rep for r in recs] == [0, 1]
    rows = summarize_graph(recs, 3000)
    assert len(rows) == 1 and rows[0].backend == "pcorr" and rows[0].replicates == 2
    assert rows[0].recall[0] > 0.5
