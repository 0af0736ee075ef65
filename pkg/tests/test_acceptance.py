"""Acceptance suite: each test prints one PASS/FAIL line with the measured figure.

Run alone with ``pytest tests/test_acceptance.py -s``; the lines also appear
without ``-s`` because they are written with capture disabled. The recovery
study runs 200 full estimations and dominates the run time.
"""

from datetime import date

import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from sofrcurve import cli, term_structure as ts
from sofrcurve.estimation import (
    discretize_P,
    gaussian_measurement,
    initial_filter_state,
    run_filter,
)
from sofrcurve.futures import FuturesContract, price_1m, price_3m
from sofrcurve.models import ModelParams, ModelSpec, Variant, loading_A, log_zcb, zcb_price
from sofrcurve.montecarlo import (
    McConfig,
    SimStudyConfig,
    approximation_error_report,
    mc_option_price,
    shadow_accuracy_report,
    sim_study,
    study_contracts,
)

from conftest import FIXTURE, NEAR_BOUND
from test_estimation import _exact_kf, _sim_panel
from test_models import _int_var_oracle

MC_FINE = dict(n_paths=100_000, dt=1.0 / 3600.0)


@pytest.fixture
def report(capsys):
    def emit(name: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return emit


def test_one_month_approximation_error(afns3, cal, report):
    rep = approximation_error_report(afns3, afns3.thetaP, date(2021, 1, 4), cal)
    rows = [r for r in rep.rows if r.kind.value == "1M"]
    worst = max(abs(r.error) for r in rows) * 1e4
    report("1m approximation error", len(rows) == 13 and worst < 1.0,
           f"{len(rows)} contracts, max |error| {worst:.4f} bp (limit 1 bp)")


def test_three_month_approximation_error(afns3, cal, report):
    rep = approximation_error_report(afns3, afns3.thetaP, date(2021, 1, 4), cal)
    rows = [r for r in rep.rows if r.kind.value == "3M"]
    worst = max(abs(r.error) for r in rows)
    report("3m approximation error", len(rows) == 39 and worst < 1e-7,
           f"{len(rows)} contracts, max |error| {worst:.3e} (limit 1e-7)")


def test_shadow_pricer_accuracy(shadow, report):
    states = {"away": shadow.thetaP.copy(), "near_bound": NEAR_BOUND}
    rows = shadow_accuracy_report(shadow, states, study_contracts(), McConfig(**MC_FINE))
    worst = max(abs(r.error) for r in rows) * 1e4
    se = max(r.std_error for r in rows) * 1e4
    report("shadow pricer accuracy", len(rows) == 24 and worst <= 0.25,
           f"{len(rows)} contract/state pairs, max |error| {worst:.4f} bp, max MC s.e. {se:.4f} bp "
           "(limit 0.25 bp)")


def test_parameter_recovery(afns3, report):
    rep = sim_study(afns3, SimStudyConfig(n_replications=200, n_obs=500, seed=0))
    lam = rep.param("lambda")
    checks = [rep.n_ok >= 190,
              abs(lam.mean - afns3.lam) <= 0.003,
              0.002 <= lam.sd <= 0.010]
    lines = [f"{rep.n_ok} of 200 converged",
             f"lambda mean {lam.mean:.5f} sd {lam.sd:.5f}"]
    for i in range(3):
        s = rep.param(f"sigma{i + 1}")
        checks.append(abs(s.mean - s.truth) <= s.sd)
        lines.append(f"sigma{i + 1} mean {s.mean:.6f} truth {s.truth:.6f} sd {s.sd:.6f}")
    for factor, limit in (("level", 0.5), ("slope", 0.4), ("curve", 1.0)):
        st = rep.state(factor)
        checks.append(st.rmse_bp <= limit)
        lines.append(f"{factor} state rmse {st.rmse_bp:.3f} bp (limit {limit})")
    report("parameter recovery", all(checks), "; ".join(lines))


def test_convexity_identities(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        p = ModelParams.afns3(rng.uniform(0.1, 3.0), rng.uniform(0.002, 0.03, 3),
                              rng.uniform(0.01, 3.0, 3), rng.uniform(-0.02, 0.04, 3))
        x = p.thetaP + rng.normal(0, 0.005, 3)
        S = rng.uniform(0.0, 3.0)
        c1 = FuturesContract.stylized("1M", S, int(rng.integers(28, 32)))
        c3 = FuturesContract.stylized("3M", S, int(rng.integers(89, 93)))
        fwd1 = (log_zcb(p, x, c1.start) - log_zcb(p, x, c1.end)) / c1.length
        fwd3 = (zcb_price(p, x, c3.start) / zcb_price(p, x, c3.end) - 1.0) / c3.length
        worst = max(worst, abs(ts.convexity_1m_closed(p, c1) - (price_1m(p, x, c1) - fwd1)),
                    abs(ts.convexity_3m_closed(p, x, c3) - (price_3m(p, x, c3) - fwd3)))
    flat = ModelParams.afns3(1.0, (0.0, 0.0, 0.0), (0.1, 0.2, 0.3), (0.02, 0.0, 0.0))
    zero = [ts.convexity_1m_closed(flat, FuturesContract.stylized("1M", 0.5, 30)),
            ts.convexity_3m_closed(flat, np.array([0.02, 0.0, 0.0]),
                                   FuturesContract.stylized("3M", 0.5, 91))]
    report("convexity identities", worst < 1e-10 and zero == [0.0, 0.0],
           f"max |closed form - (futures - forward)| {worst:.2e} over 100 draws (limit 1e-10); "
           f"zero-volatility adjustments {zero}")


def test_gaussian_moment_oracles(afns3, report):
    worst_A = max(abs(loading_A(afns3, tau) / (0.5 * _int_var_oracle(afns3, tau)) - 1.0)
                  for tau in (0.01, 0.25, 1.0, 5.0, 10.0))
    worst_Q = 0.0
    for dt in (1 / 250, 1 / 12, 1.0):
        _, _, Q = discretize_P(afns3, dt)
        K, S = afns3.kP, afns3.sigma
        want = quad_vec(lambda s: expm(-K * s) @ S @ S.T @ expm(-K * s).T, 0.0, dt,
                        epsabs=0, epsrel=1e-14)[0]
        nz = want != 0.0
        if np.any(Q[~nz] != 0.0):
            worst_Q = np.inf
        worst_Q = max(worst_Q, np.max(np.abs(Q[nz] - want[nz]) / np.abs(want[nz])))
    _, panel = _sim_panel(afns3, n_obs=100, seed=1, tau_3m=())
    h = (5e-5) ** 2 / 12
    run = run_filter(afns3, panel, h)
    F, C, Q = discretize_P(afns3, panel.dt)
    co = gaussian_measurement(afns3, panel).subset(panel.row_slice(0))
    start = initial_filter_state(afns3)
    x, P, ll = _exact_kf(F, C, Q, co.b, co.a, h, start.mean, start.cov,
                         panel.rate.reshape(panel.n_rows, -1))
    ekf = max(abs(run.loglik / ll - 1.0), np.max(np.abs(run.final.mean - x)),
              np.max(np.abs(run.final.cov - P)))
    report("Gaussian moment oracles", worst_A < 1e-10 and worst_Q < 1e-12 and ekf < 1e-14,
           f"loading_A rel {worst_A:.1e} (1e-10), discretize_P rel {worst_Q:.1e} (1e-12), "
           f"EKF vs exact KF {ekf:.1e} (1e-14)")


def test_option_ordering(afns3, report):
    from dataclasses import replace

    s = replace(afns3, spec=ModelSpec(Variant.SHADOW_AFNS3))
    x = np.array(cli.OPTION_NEAR_BOUND)
    contract = FuturesContract.stylized("3M", 0.5, 90, "option-underlying")
    res = mc_option_price(afns3, s, x, contract, 0.5, McConfig(**MC_FINE))
    report("option ordering", res.ratio < 0.25,
           f"shadow {res.shadow.price:.5f} vs Gaussian {res.gaussian.price:.5f} index points, "
           f"ratio {res.ratio:.4f} (limit 0.25)")


def test_determinism(tmp_path, monkeypatch, capsys, report):
    runs = {
        "sim-study": ["sim-study", "--reps", "2", "--seed", "7", "--n-obs", "60"],
        "validate shadow": ["validate", "shadow", "--paths", "4000", "--dt", str(1 / 360),
                            "--block-size", "1000"],
        "validate option": ["validate", "option", "--paths", "2000", "--dt", str(1 / 360),
                            "--block-size", "500"],
        "convexity shadow": ["convexity", "--variant", "SHADOW_AFNS3", "--grid", "study",
                             "--paths", "2000", "--dt", str(1 / 360), "--block-size", "500"],
    }
    same = {}
    for name, argv in runs.items():
        outs = []
        for i, threads in enumerate(("1", "1", "2")):
            monkeypatch.setenv("CURVE_THREADS", threads)
            path = tmp_path / f"{name.replace(' ', '_')}_{i}"
            cli.main(argv + ["--out", str(path)])
            capsys.readouterr()
            outs.append(path.read_bytes())
        same[name] = len(outs[0]) > 0 and outs[0] == outs[1] == outs[2]
    report("determinism", all(same.values()),
           ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items())
           + " (serial twice and two workers)")
