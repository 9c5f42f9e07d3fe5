import io

import numpy as np
import pytest

from casesens.errors import ParameterError
from casesens.power import (
    FavorableModel,
    PowerSpec,
    narrow_fraction,
    pmf_m,
    power_broad,
    power_narrow,
)
from casesens.simulation import (
    SimConfig,
    SimResult,
    draw_sets,
    generate_study,
    power_sweep,
    simulate_power,
    synthetic_study,
    table2_configs,
    write_power_table,
)
from casesens.study import summarize

BASE = FavorableModel(1 / 3, 0.30, 0.10, 0.30, 0.15, 6)


def within_3se(counts, n, probs):
    phat = counts / n
    se = np.sqrt(probs * (1 - probs) / n)
    return np.all(np.abs(phat - probs) <= 3 * se + 1e-12)


def test_generate_study_shape():
    s = generate_study(BASE, 50, np.random.default_rng(0))
    assert s.I == 50 and np.all(s.sizes == 6)
    assert np.all(s.exposed_counts >= s.case_exposed)


def test_independence_limit():
    m = FavorableModel(0.3, 0.2, 0.2, 0.5, 0.5)
    _, y, _ = draw_sets(m, 100_000, np.random.default_rng(1))
    assert abs(y.mean() - 0.3) <= 3 * np.sqrt(0.3 * 0.7 / 100_000)


def test_narrow_share_matches_q():
    _, _, nar = draw_sets(BASE, 100_000, np.random.default_rng(2))
    q = narrow_fraction(BASE)
    assert abs(nar.mean() - q) <= 3 * np.sqrt(q * (1 - q) / 100_000)


def test_pmf_matches_million_draws():
    m, y, nar = draw_sets(BASE, 1_000_000, np.random.default_rng(3))
    counts = np.bincount(m, minlength=7)
    assert within_3se(counts, m.size, pmf_m(BASE, "broad"))
    mn = m[nar == 1]
    assert within_3se(np.bincount(mn, minlength=7), mn.size, pmf_m(BASE, "narrow"))


def test_determinism_and_threads():
    cfg = SimConfig(BASE, 40, reps=200, seed=7, gamma=1.5, theta=1.2)
    a = simulate_power(cfg)
    assert a == simulate_power(cfg)
    assert a == simulate_power(cfg, workers=4)
    assert a != simulate_power(SimConfig(BASE, 40, reps=200, seed=8, gamma=1.5, theta=1.2))


def test_stderr_formula():
    r = SimResult(0.8, 0.5, 0.6, 3.0, 100)
    assert r.se_broad == pytest.approx(np.sqrt(0.8 * 0.2 / 100))
    assert r.to_dict()["mc_stderr_narrow"] == pytest.approx(0.05)


def test_config_validation():
    with pytest.raises(ParameterError):
        SimConfig(BASE, 10, reps=0)
    with pytest.raises(ParameterError):
        SimConfig(BASE, 10, seed=-1)
    with pytest.raises(ParameterError):
        SimConfig(FavorableModel(0.3, 0.3, 0.1), 10)
    with pytest.raises(ParameterError):
        SimConfig(BASE, 10, gamma=0.5)


def test_zero_narrow_reps_are_non_rejections():
    m = FavorableModel(1 / 3, 0.3, 0.1, 0.06, 0.05)
    r = simulate_power(SimConfig(m, 5, reps=400, seed=1))
    assert r.zero_narrow_reps > 0
    assert r.power_narrow <= 1 - r.zero_narrow_reps / r.reps


def test_combined_dominates_components_at_half_alpha():
    kw = dict(model=BASE, I=60, reps=600, seed=5, gamma=1.5, theta=1.3)
    comb = simulate_power(SimConfig(alpha=0.05, **kw))
    half = simulate_power(SimConfig(alpha=0.025, **kw))
    # same seeds, same studies: the combined rule rejects whenever either does
    assert comb.power_combined >= max(half.power_broad, half.power_narrow)


@pytest.mark.parametrize("gamma,theta,I", [(1.0, 1.0, 18), (1.5, 1.0, 120), (2.0, 1.5, 400)])
def test_simulated_agrees_with_formula(gamma, theta, I):
    r = simulate_power(SimConfig(BASE, I, reps=1500, seed=11, gamma=gamma, theta=theta))
    fb = power_broad(PowerSpec(BASE, I, gamma, theta))
    fn = power_narrow(PowerSpec(BASE, I, gamma, theta))
    assert abs(r.power_broad - fb) <= 3 * np.sqrt(fb * (1 - fb) / r.reps) + 0.02
    assert abs(r.power_narrow - fn) <= 3 * np.sqrt(fn * (1 - fn) / r.reps) + 0.02


def test_beyond_design_sensitivity_power_vanishes():
    m = FavorableModel(1 / 3, 0.03, 0.01, 0.30, 0.15)
    r = simulate_power(SimConfig(m, 3785, reps=100, seed=1, gamma=3.5, theta=2.0))
    assert r.power_broad == r.power_narrow == r.power_combined == 0.0


def test_sweep_rows_and_determinism():
    cfg = SimConfig(BASE, 30, reps=100, seed=2)
    t = power_sweep([cfg])
    r = simulate_power(cfg)
    assert len(t) == 1
    assert t.loc[0, "power_broad"] == r.power_broad and t.loc[0, "power_combined"] == r.power_combined
    t2 = power_sweep([cfg, cfg])
    assert t2.iloc[0].equals(t2.iloc[1])
    with pytest.raises(ParameterError):
        power_sweep([])


def test_sweep_gamma_monotone_within_noise():
    cfgs = [SimConfig(BASE, 600, reps=400, seed=3, gamma=g) for g in (1, 2, 3, 4, 5)]
    pw = power_sweep(cfgs)["power_broad"].to_numpy()
    se = np.sqrt(0.25 / 400)
    assert np.all(np.diff(pw) <= 3 * se)
    assert pw[0] > 0.99 and pw[-1] < 0.05


def test_power_table_csv():
    t = power_sweep(table2_configs(reps=20)[:2])
    buf = io.StringIO()
    write_power_table(t, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("gamma,theta,I,b_C,b_T,eta_C,eta_T,E_narrow,ds_broad,ds_narrow,"
                               "power_broad,power_narrow,power_combined")
    row = lines[1].split(",")
    assert row[:8] == ["1", "1", "18", "0.01", "0.03", "0.80", "0.85", "15"]
    assert row[8:10] == ["3.1", "3.3"]
    assert len(table2_configs()) == 54


def test_synthetic_study_marginals():
    s = synthetic_study(seed=4)
    summ = summarize(s)
    assert summ.I == 809 and summ.narrow_sets == 620
    assert summ.Y_b == round(0.676 * 809)
    assert summ.odds_ratio == pytest.approx(3.35, abs=0.05)
