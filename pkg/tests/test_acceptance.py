"""Acceptance suite: one verdict line per criterion, echoed after the run."""

import collections
import json
import os
import time

import numpy as np
import pytest

from mfe_predict.envelope.dynamics import GenericTransport
from mfe_predict.envelope.sweep import GridSpec
from mfe_predict.gsa import FactorSpace, analyze, evaluation_count, ishigami, plan_samples
from mfe_predict.linalg import fd_jacobian, lsq_solve
from mfe_predict.mlp import MlpParams, TrainConfig, marquardt_jacobian, mse, param_count, residuals, train
from mfe_predict.nlsq import LmConfig, lm_solve, trr_solve
from mfe_predict.pipeline import DEFAULT_SYNTHETIC_PROBES, ExperimentConfig, mid_range, run_experiment, synthesize_probes
from mfe_predict.poly import PolynomialRegressor, PolynomialSpec, degree_diagnostic, design_matrix, enumerate_terms
from mfe_predict.records import ingest_csv, inputs_array, targets_array
from mfe_predict.tanh_models import TanhModelSpec, fit_tanh_family, initial_vectors, residual_model, tanh_model_eval

from test_gsa import ADDITIVE_S, ISHIGAMI_SPACE, UNIT3, additive, ishigami_by_quadrature
from test_mlp import random_params, teacher_data
from test_nlsq import f7_benchmark
from test_poly import random_inputs

REFERENCE_DB_ENV = "MFE_PREDICT_REFERENCE_DB"


def test_01_term_counts(criterion):
    want = {"Poly2222": 15, "Poly3333": 35, "Poly3344": 68, "Poly4444": 70, "Poly3666": 195}
    got = {k: enumerate_terms(k).shape[0] for k in want}
    criterion(1, got == want, f"term counts {got}")


def test_02_dof(criterion):
    x = random_inputs(np.random.default_rng(0), 991)
    y = np.cos(x[:, 0] / 2e4) + x[:, 3] / 30 + 0.1 * x[:, 1]
    got = {k: PolynomialRegressor(PolynomialSpec.from_name(k).per_var_max).fit(x, y).stats_["dof"]
           for k in ("Poly2222", "Poly3333", "Poly3344")}
    criterion(2, list(got.values()) == [976, 956, 923], f"dof at m=991 {got}")


def test_03_network_params(criterion):
    got = (param_count(10, 4, 1), param_count(22, 4, 2))
    criterion(3, got == (61, 156), f"parameter counts {got}")


def test_04_qr_vs_normal_equations(criterion):
    worst = 0.0
    for seed in range(100):
        g = np.random.default_rng(seed)
        m = int(g.integers(10, 200))
        n = int(g.integers(1, min(m, 40)))
        a, y = g.standard_normal((m, n)), g.standard_normal(m)
        ref = np.linalg.solve(a.T @ a, a.T @ y)
        worst = max(worst, np.linalg.norm(lsq_solve(a, y) - ref) / np.linalg.norm(ref))
    criterion(4, worst <= 1e-8, f"max relative difference over 100 systems {worst:.2e}")


def test_05_recovery(criterion):
    g = np.random.default_rng(5)
    x = random_inputs(g, 400)
    terms = enumerate_terms("Poly3344")
    w = 1.0 / x.std(axis=0)
    y = design_matrix(x * w, terms) @ g.uniform(-1, 1, terms.shape[0])
    poly = PolynomialRegressor((3, 3, 4, 4)).fit(x, y)
    poly_res = float(np.max(np.abs(poly.predict(x) - y)) / np.max(np.abs(y)))

    z = g.uniform(-1.5, 1.5, (300, 4))
    spec = TanhModelSpec(1)
    yt = tanh_model_eval(spec, np.array([0.2, 0.8, 0.5, -0.3, 0.7, 0.2, -0.4]), z)
    f7 = fit_tanh_family(z, yt, spec, restarts=15, seed=0, cfg=LmConfig(grad_tol=1e-14, step_tol=1e-15))

    _, zn, tn = teacher_data(0, 200)
    net = train(zn, tn, 3, TrainConfig(restarts=15, max_epochs=500))
    net_mse = mse(net.params, zn, tn)
    ok = poly_res < 1e-8 and f7.train_sse < 1e-10 and net_mse < 1e-10
    criterion(5, ok, f"poly relative residual {poly_res:.1e}, f7 SSE {f7.train_sse:.1e}, MLP MSE {net_mse:.1e}")


def test_06_marquardt_jacobian(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for k in range(50):
        s1 = 22 if k == 0 else int(rng.integers(1, 23))
        s2 = int(rng.integers(1, 3))
        p = random_params(rng, s1, s2=s2, scale=0.7)
        z = rng.uniform(-1, 1, (int(rng.integers(1, 8)), 4))
        t = rng.standard_normal((len(z), s2))
        ja = marquardt_jacobian(p, z)
        jn = fd_jacobian(lambda eta: residuals(MlpParams.unflatten(eta, s1, 4, s2), z, t), p.flatten())
        worst = max(worst, np.max(np.abs(ja - jn)) / max(1.0, np.max(np.abs(ja))))
    criterion(6, worst <= 1e-5, f"max relative error over 50 draws {worst:.2e}")


def test_07_lm_vs_trr(criterion):
    spec, z, y = f7_benchmark(0)
    model = residual_model(spec, z, y)
    eta0 = initial_vectors(1, 0, 7)[0]
    _, tl = lm_solve(model, eta0)
    _, tt = trr_solve(model, eta0)
    rel = abs(tl.final_objective - tt.final_objective) / tt.final_objective
    ok = rel <= 1e-3 and tl.n_iter < tt.n_iter
    criterion(7, ok, f"objective gap {rel:.1e}, iterations LM {tl.n_iter} vs TRR {tt.n_iter}")


def test_08_sobol_oracles(criterion):
    errs = np.array([np.abs(analyze(UNIT3, additive, 10_000, seed=s, n_boot=0).s_first - ADDITIVE_S)
                     for s in range(20)])
    band_rate = float(np.mean(np.all(errs <= 0.02, axis=1)))
    first, total = ishigami_by_quadrature()
    res = analyze(ISHIGAMI_SPACE, ishigami, 100_000, seed=0, n_boot=300)
    covered = bool(np.all((res.ci_first[:, 0] <= first) & (first <= res.ci_first[:, 1]))
                   and np.all((res.ci_total[:, 0] <= total) & (total <= res.ci_total[:, 1])))
    criterion(8, band_rate >= 0.9 and covered,
              f"additive within 0.02 on {band_rate:.0%} of 20 seeds (seed 0 max error {errs[0].max():.4f}); "
              f"Ishigami inside 95% CI: {covered}")


def test_09_plan_counts(criterion):
    got = (evaluation_count(3, 500_000), evaluation_count(3, 4_000_000))
    small = plan_samples(UNIT3, 1000).stacked().shape[0]
    criterion(9, got == (2_500_000, 20_000_000) and small == 5000, f"evaluation counts {got}, N=1000 plan {small}")


def test_10_throughput(criterion):
    g = np.random.default_rng(10)
    x = random_inputs(g, 991)
    model = PolynomialRegressor((3, 3, 4, 4)).fit(x, np.sin(x[:, 0] / 1e4) + x[:, 3] / 30)
    space = FactorSpace.from_bounds({"h": (0, 30000), "gamma": (-5, 5), "ul": (-30, 30)})
    n = 40_000

    def f(zz):
        return model.predict(np.column_stack([zz[:, 0], zz[:, 1], np.full(len(zz), -30.0), zz[:, 2]]))

    t0 = time.perf_counter()
    analyze(space, f, n, seed=0, n_boot=0)
    rate = evaluation_count(3, n) / (time.perf_counter() - t0) * 60
    criterion(10, rate >= 100_000, f"{rate:,.0f} Poly3344 evaluations per minute")


def test_11_envelope_properties(criterion, surrogate, mini_database):
    envs = mini_database.envelopes
    alts = sorted({job.h for job in envs})
    by_case = collections.defaultdict(dict)
    by_slice = collections.defaultdict(dict)
    for job, mfe in envs.items():
        by_case[(job.gamma, job.failure)][job.h] = mfe.n_trim
        by_slice[(job.h, job.gamma)][job.failure] = mfe.n_trim
    alt_bad = sum(any(b > a for a, b in zip(seq, seq[1:]))
                  for seq in ([d.get(h, 0) for h in alts] for d in by_case.values()))
    box_bad = sum(n1 > n2 for d in by_slice.values() for c1, n1 in d.items() for c2, n2 in d.items()
                  if c2.contains(c1))
    worst, points = 0.0, 0
    for job, mfe in envs.items():
        if mfe.n_trim:
            worst = max(worst, float(np.max(np.abs(surrogate.derivatives(mfe.states, mfe.controls, job.h)))))
            points += mfe.n_trim
    ok = alt_bad == 0 and box_bad == 0 and worst <= 1e-6 and len(envs) == 1232
    criterion(11, ok, f"altitude violations {alt_bad}, box violations {box_bad}, "
                      f"max |f(x,u)| {worst:.2e} over {points} accepted points")


@pytest.mark.filterwarnings("ignore::mfe_predict.tanh_models.AllRunsStalled")
def test_12_end_to_end_trends(criterion, surrogate, mini_csv, tmp_path):
    cfg = ExperimentConfig(output_dir=str(tmp_path), database=str(mini_csv), mlp_models=[10], restarts=15)
    report = run_experiment(cfg)
    mse_of = {m["name"]: m["test_mse"] for m in report.models}
    poly_order = mse_of["Poly2222"] > mse_of["Poly3333"] > mse_of["Poly3344"]
    best_poly = min(v for k, v in mse_of.items() if k.startswith("Poly"))
    mlp_ok = mse_of["MLP10"] <= 2 * best_poly

    records = ingest_csv(mini_csv)
    x, y = inputs_array(records), targets_array(records, "n_trim")
    folds = json.loads((tmp_path / "folds.json").read_text())
    tr, te = np.array(folds["train"]), np.array(folds["test"])
    probes = [records[i] for i in mid_range(x, te, 2)]
    probes += synthesize_probes(surrogate, DEFAULT_SYNTHETIC_PROBES, GridSpec(v_step=5.0, psidot_step=1.0))
    xp, yp = inputs_array(probes), targets_array(probes, "n_trim")
    rows = {r.name: r for r in degree_diagnostic(x[tr], y[tr], x[te], y[te], xp, yp, ["Poly3344", "Poly4444"])}
    diag_ok = rows["Poly4444"].flagged and not rows["Poly3344"].flagged
    criterion(12, poly_order and mlp_ok and diag_ok,
              f"test MSE Poly2222 {mse_of['Poly2222']:.3e} > Poly3333 {mse_of['Poly3333']:.3e} > "
              f"Poly3344 {mse_of['Poly3344']:.3e}; MLP10 {mse_of['MLP10']:.3e}; "
              f"Poly4444 flagged ({rows['Poly4444'].reason.split(':')[0]}), "
              f"Poly3344 probe max error {rows['Poly3344'].probe_max_error_pct:.2f}%")


def test_13_reference_database(criterion, tmp_path):
    path = os.environ.get(REFERENCE_DB_ENV)
    if not path:
        criterion(13, None, f"set {REFERENCE_DB_ENV} to a reference envelope database CSV to run this check")
    cfg = ExperimentConfig(
        output_dir=str(tmp_path), database=path, poly_models=["Poly3344"],
        gsa=[{"model": "Poly3344", "factors": {"h": [0, 30000], "gamma": [-5, 5], "ul": [-30, 30]},
              "fixed": {"ll": -30}, "n": 100_000, "n_boot": 200}],
    )
    report = run_experiment(cfg)
    (row,) = report.models
    r2 = float(np.atleast_1d(row["r2_adjusted"])[0])
    ratio = row["test_mse"] / 9.5569e-5
    s = dict(zip(report.gsa[0]["factors"], report.gsa[0]["indices"]["first"]))
    ok = r2 >= 0.99 and 1 / 3 <= ratio <= 3 and s["ul"] > s["h"] > s["gamma"]
    criterion(13, ok, f"adjusted R2 {r2:.4f}, test MSE ratio {ratio:.2f}, "
                      f"S_UL {s['ul']:.3f} S_h {s['h']:.3f} S_gamma {s['gamma']:.3f}")
