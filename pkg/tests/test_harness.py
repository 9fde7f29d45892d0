import json
import math
from dataclasses import replace

import numpy as np
import pytest

from renyidistill.design import validate_partitioning, variance_fractions
from renyidistill.filters import FilterSpec
from renyidistill.harness import (
    CSV_COLUMNS,
    PowerResult,
    Scenario,
    ScenarioError,
    active_indices,
    emit_results,
    generate_scenario,
    parse_config,
    run_power,
)
from renyidistill.rtest import NullTableError

ALL = ("RD", "RDA", "RDLK", "RDLKC0", "MINP", "CAUCHY", "ANOVA", "ORACLE")


def test_orthogonal_example():
    s = Scenario(p=1000, group_size=10, actives=4, effects=(1.0,))
    d, rho, beta, y = generate_scenario(s, 0)
    assert (d.n, d.p, d.nnz) == (10_000, 1000, 10_000)
    assert len(rho) == 1 and rho.layers[0].size == 1000
    assert np.allclose(d.data, 1 / math.sqrt(10))
    assert np.count_nonzero(beta) == 4 and np.all(beta[beta != 0] == 1.0)
    assert y.shape == (10_000,)


def test_overlap_example():
    s = Scenario(p=100, overlap=0.5)
    d, rho, _, _ = generate_scenario(s, 0)
    assert d.n == 50 * 15
    x = d.to_scipy().toarray() != 0
    share = x.T.astype(int) @ x.astype(int)
    np.fill_diagonal(share, 0)
    assert np.all(share.sum(axis=1) == 5)
    assert np.all((share > 0).sum(axis=1) == 1)
    assert len(rho) == 2
    assert validate_partitioning(d, rho).ok
    for layer in rho:
        assert np.allclose(variance_fractions(d, layer)[0], 1.0)


def test_overlap_auto_partition_single_layer():
    s = Scenario(p=100, overlap=0.5, partition="auto", q1=0.7)
    d, rho, _, _ = generate_scenario(s, 0)
    assert len(rho) == 1 and rho.layers[0].size == 100


def test_null_effect_gives_zero_beta():
    _, _, beta, _ = generate_scenario(Scenario(p=50, effects=(0.0,)), 1)
    assert not beta.any()


@pytest.mark.parametrize("overlap,g,p", [(0.25, 10, 100), (0.5, 10, 101), (1.0, 10, 100)])
def test_infeasible_overlap_geometry(overlap, g, p):
    with pytest.raises(ScenarioError):
        Scenario(p=p, group_size=g, overlap=overlap)


def test_active_placements():
    s = Scenario(p=100, overlap=0.5, actives=4)
    assert np.all(active_indices(s) % 2 == 0)
    assert np.all(active_indices(replace(s, placement="layer2")) % 2 == 1)
    assert list(active_indices(replace(s, placement="spread")) % 2) == [0, 1, 0, 1]
    assert len(set(active_indices(s) // 2)) == 4


def test_default_settings():
    s = Scenario(actives=16)
    assert s.test_k == 80
    f = s.rd_filter()
    assert (f.variant, f.k, f.c1, f.c2) == ("k4", 80, 0.05, 0.05)
    assert s.low_k == 8


@pytest.mark.slow
def test_null_calibration_all_methods(table_dir):
    s = Scenario(p=200, table_dir=table_dir, actives=4, effects=(0.0,), thresholds=(0.01,), replicates=2000,
                 methods=ALL, seed=11)
    res = run_power(s)
    sd = math.sqrt(0.01 * 0.99 / s.replicates)
    for m in ALL:
        assert abs(res.power(m, 0.01, 0.0) - 0.01) <= 3 * sd, m


def test_null_calibration_overlap_rd(table_dir):
    s = Scenario(p=200, table_dir=table_dir, overlap=0.5, actives=4, effects=(0.0,), thresholds=(0.01,),
                 replicates=1500, methods=("RD", "RDA"), seed=5)
    res = run_power(s)
    sd = math.sqrt(0.01 * 0.99 / s.replicates)
    for m in ("RD", "RDA"):
        assert abs(res.power(m, 0.01, 0.0) - 0.01) <= 3 * sd, m


@pytest.fixture
def small(table_dir):
    def make(**kw):
        base = dict(p=200, actives=4, effects=(0.0, 3.0, 5.0), thresholds=(0.01, 1e-4),
                    replicates=60, methods=ALL, seed=3, table_dir=table_dir)
        base.update(kw)
        return Scenario(**base)
    return make



def test_deterministic_and_byte_identical(tmp_path, small):
    s = small()
    a = emit_results(run_power(s), tmp_path / "a")
    b = emit_results(run_power(s), tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".json").read_bytes() == b.with_suffix(".json").read_bytes()


def test_worker_count_does_not_change_results(small):
    s = small(replicates=40)
    one = run_power(s)
    three = run_power(replace(s, workers=3))
    for m in ALL:
        assert np.array_equal(one.pvalues[m], three.pvalues[m])


def test_csv_layout(tmp_path, small):
    s = small(replicates=20)
    path = emit_results(run_power(s), tmp_path, timing=True)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + len(ALL) * 2 * 3
    row = lines[1].split(",")
    assert row[0] == "RD" and float(row[5]) > 0
    meta = json.loads(path.with_suffix(".json").read_text())
    assert meta["scenario"]["p"] == 200 and meta["replicate_seed_entropy"] == 3
    assert "phase_seconds" in meta


def test_seconds_blank_without_timing(tmp_path, small):
    path = emit_results(run_power(small(replicates=5)), tmp_path / "r.csv")
    assert path.name == "r.csv"
    assert all(line.endswith(",") for line in path.read_text().splitlines()[1:])


def test_empty_result_header_only(tmp_path):
    path = emit_results(PowerResult(Scenario(p=10)), tmp_path)
    assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"


def test_power_result_invariants(small):
    res = run_power(small())
    for r in res.rows:
        assert 0.0 <= r["power"] <= 1.0
        assert r["se"] == pytest.approx(math.sqrt(r["power"] * (1 - r["power"]) / 60))


def test_two_seeds_consistent(small):
    a = run_power(small(replicates=300, seed=1, methods=("RD", "MINP", "ORACLE")))
    b = run_power(small(replicates=300, seed=2, methods=("RD", "MINP", "ORACLE")))
    for m in ("RD", "MINP", "ORACLE"):
        for t in (0.01, 1e-4):
            pa, pb = a.power(m, t), b.power(m, t)
            sd = np.sqrt(a.se(m, t) ** 2 + b.se(m, t) ** 2)
            assert np.all(np.abs(pa - pb) <= 3 * np.maximum(sd, 1 / 300)), (m, t)


def test_power_monotone_in_effect_and_oracle_beats_anova(small):
    s = small(replicates=200, effects=(0.0, 1.0, 2.0, 3.0, 4.0, 5.0))
    res = run_power(s)
    for m in ALL:
        for t in s.thresholds:
            pw, se = res.power(m, t), res.se(m, t)
            assert np.all(np.diff(pw) >= -2 * np.hypot(se[1:], se[:-1]) - 1e-12), (m, t)
    for t in s.thresholds:
        slack = 2 * np.hypot(res.se("ORACLE", t), res.se("ANOVA", t))
        assert np.all(res.power("ORACLE", t) >= res.power("ANOVA", t) - slack)


def test_rdlk_at_least_rdlkc0():
    s = Scenario(p=1000, actives=16, effects=(3.0, 3.5, 4.0), thresholds=(1e-4,),
                 replicates=200, methods=("RDLK", "RDLKC0"), seed=4)
    res = run_power(s)
    slack = 2 * np.hypot(res.se("RDLK", 1e-4), res.se("RDLKC0", 1e-4))
    assert np.all(res.power("RDLK", 1e-4) >= res.power("RDLKC0", 1e-4) - slack)


def test_missing_table_names_k():
    s = Scenario(p=200, actives=4, k_test=200, methods=("RD",), table_method="partial_sums",
                 replicates=2)
    with pytest.raises(NullTableError, match="k=256|256"):
        run_power(s)


def test_residualize_option_runs(small):
    res = run_power(small(replicates=20, residualize=True, methods=("RD", "MINP")))
    assert res.pvalues["RD"].shape == (3, 20)


def test_parse_config():
    text = """
    # desk-scale Figure 1 setting
    p = 1000
    groupSize = 10
    actives = 16
    effects = 1, 2.5, 4
    thresholds = [1e-2, 1e-4]
    kTest = 80
    filter = {k4, 80, 0.05, 0.05}
    methods = rd, minp, oracle
    residualize = yes
    replicates = 50
    """
    s = parse_config(text, seed=9)
    assert (s.p, s.group_size, s.actives, s.k_test, s.replicates, s.seed) == (1000, 10, 16, 80, 50, 9)
    assert s.effects == (1.0, 2.5, 4.0) and s.thresholds == (0.01, 1e-4)
    assert s.methods == ("RD", "MINP", "ORACLE") and s.residualize
    assert s.filter == FilterSpec("k4", 80, 0.05, 0.05)


@pytest.mark.parametrize("text,msg", [("p 10", "line 1"), ("bogus = 1", "unknown key"),
                                      ("residualize = maybe", "boolean"),
                                      ("method = XYZ", "unknown method")])
def test_parse_config_errors(text, msg):
    with pytest.raises(ScenarioError, match=msg):
        parse_config(text)
