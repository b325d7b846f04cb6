"""Acceptance criteria 1 to 8, each at its stated tolerance.

Every test records a PASS/FAIL line through the ``verdict`` fixture; the
lines are repeated in the terminal summary.
"""

import json
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest

import oracles
from conftest import validation_codes
from blockwatch import cli, fusion, olae, pipeline, simgen, stats
from blockwatch.olae import TrainConfig, init_model
from blockwatch.stats import CusumConfig, CusumState

N_TRIALS = 20
ONSET = 600
T_STREAM = 2400


def fdd_or_inf(entry):
    return np.inf if entry.FDD is None else entry.FDD


@pytest.mark.criterion(1)
def test_gradient_correctness(verdict):
    t0 = time.perf_counter()
    X = np.random.default_rng(42).normal(size=(4, 3, 2))
    err = {}
    for lam in (0.0, 1.0):
        mdl = init_model(2, 4, 2, 3, seed=5)
        err[lam] = oracles.finite_difference_error(mdl, X, TrainConfig(ortho_weight=lam))
    secs = time.perf_counter() - t0
    verdict({"lambda0 < 1e-4": err[0.0] < 1e-4, "lambda1 < 1e-4": err[1.0] < 1e-4,
             "runtime < 10s": secs < 10},
            f"max rel err {err[0.0]:.2e} / {err[1.0]:.2e}, {secs:.1f}s")


@pytest.mark.slow
@pytest.mark.criterion(2)
def test_orthogonality_effect(verdict, ortho_benchmark, ortho_baseline):
    secs = ortho_benchmark.train_seconds + ortho_baseline.train_seconds

    def mean_gram_offdiag(bench):
        return float(np.mean([olae.mean_offdiag(olae.redundancy_report(c)[0])
                              for c in validation_codes(bench)]))

    ours, theirs = mean_gram_offdiag(ortho_benchmark), mean_gram_offdiag(ortho_baseline)
    verdict({"olae < 0.15": ours < 0.15, "olae < baseline": ours < theirs,
             "runtime < 5min": secs < 300},
            f"mean off-diagonal gram olae {ours:.4f}, baseline {theirs:.4f}, {secs:.0f}s")


@pytest.mark.criterion(3)
def test_cusum_fixed_point_and_oracle(verdict):
    cfg = CusumConfig(d=10, k=0.1)
    st_ = CusumState.zeros(1, cfg.d)
    E = cfg.expected
    stayed = True
    for _ in range(10000):
        st_, W = stats.cusum_update(st_, E[0], E[1], cfg, stream=0)
        stayed &= W == 0.0
    rng = np.random.default_rng(42)
    grid = stats.fit_quantile_grid(rng.standard_normal((500, 3)), cfg.d)
    X = rng.standard_normal((10, 3)) * 1.5 + 0.5
    worst = 0.0
    for form in ("qiu_hawkins", "paper"):
        c = replace(cfg, form=form)
        got, _ = stats.run_cusum(grid, X, c)
        ref = oracles.cusum_run(stats.cell_index(grid, X).tolist(), c.d, c.k, c.top_r(3), form)
        worst = max(worst, float(np.max(np.abs(got - np.asarray(ref)))))
    verdict({"fixed point exact": bool(stayed), "oracle within 1e-12": worst <= 1e-12},
            f"10000 steps at W=0: {bool(stayed)}, oracle max diff {worst:.1e}")


@pytest.mark.criterion(4)
def test_distribution_shift_detection(verdict):
    t0 = time.perf_counter()
    cfg = CusumConfig(d=10, k=0.1)
    calib = np.random.default_rng(0).standard_normal((5000, 5))
    grid = stats.fit_quantile_grid(calib, cfg.d)
    h = stats.calibrate_threshold(calib, grid, cfg, 0.0027, 200, T_STREAM, seed=0,
                                  block_len=1, cross_fit=True)
    cfg = cfg.with_h(h)

    held_out = np.random.default_rng(1).standard_normal((T_STREAM, 50, 5))
    w_ic, _ = stats.run_cusum(grid, held_out, cfg)
    far = float((w_ic > h).mean())

    t_switch, n_trials = 300, 100
    X = np.random.default_rng(2).standard_normal((t_switch + 200, n_trials, 5))
    X[t_switch:] *= np.sqrt(2)
    W, _ = stats.run_cusum(grid, X, cfg)
    t = np.arange(X.shape[0])
    delays = [pipeline.evaluate(t, W[:, j], t_switch, 3, h).FDD for j in range(n_trials)]
    rate = np.mean([d is not None and d <= 200 for d in delays])
    secs = time.perf_counter() - t0
    verdict({"detected >= 95%": rate >= 0.95, "FAR <= 0.005": far <= 0.005,
             "runtime < 2min": secs < 120},
            f"h {h:.2f}, detected {rate:.2f} (median delay "
            f"{np.median([d for d in delays if d is not None]):.0f}), FAR {far:.4f}, "
            f"{secs:.1f}s")


@pytest.mark.criterion(5)
def test_fusion_identities(verdict):
    rng = np.random.default_rng(42)
    n, alpha = 10_000, 0.01
    tol = 4 * np.finfo(float).eps * alpha

    lim = rng.uniform(0.1, 50, (n, 2))
    B_at, _, _ = fusion.wbf(lim, lim, alpha)
    blim = rng.uniform(1e-3, 0.5, (n, 4))
    P_at, _, _ = fusion.wbf(blim, blim, alpha)
    at_limit = max(np.abs(B_at - alpha).max(), np.abs(P_at - alpha).max())

    v = rng.exponential(lim)
    B, w, _ = fusion.wbf(v, lim, alpha)
    Bb = rng.uniform(0, 1, (n, 4))
    P, wb, _ = fusion.wbf(Bb, blim, alpha)
    simplex = all(np.all(x >= 0) and np.abs(x.sum(-1) - 1).max() < 1e-12 for x in (w, wb))

    # raise one coordinate, hold the rest
    up = v.copy()
    j = rng.integers(0, 2, n)
    up[np.arange(n), j] *= rng.uniform(1.01, 3, n)
    B_up, _, _ = fusion.wbf(up, lim, alpha)
    drop_b = np.mean(B_up < B - 1e-15)
    upb = Bb.copy()
    jb = rng.integers(0, 4, n)
    upb[np.arange(n), jb] = np.minimum(1.0, upb[np.arange(n), jb] * rng.uniform(1.01, 3, n))
    P_up, _, _ = fusion.wbf(upb, blim, alpha)
    drop_p = np.mean(P_up < P - 1e-15)

    verdict({"at-limit identity": at_limit <= tol, "weight simplex": bool(simplex),
             "monotone B": drop_b == 0, "monotone PFI": drop_p == 0},
            f"at-limit max err {at_limit:.1e}, monotonicity violated on "
            f"{drop_b:.2%} (B) / {drop_p:.2%} (PFI) of grid points")


@pytest.fixture(scope="module")
def fault_trials(benchmark):
    """kind -> list of {mode: EvalEntry}; faults rotate across the four blocks."""
    spec, plant = benchmark.spec, benchmark.plant
    blocks = [b.variables for b in plant.blocks]
    extra = {"random_variation": "no_cusum", "slow_drift": "no_bf"}
    out = {}
    t0 = time.perf_counter()
    for kind in simgen.FAULT_KINDS:
        rows = []
        for i in range(N_TRIALS):
            base = simgen.generate(spec, T_STREAM, seed=5000 + i)
            y = simgen.inject_fault(base, simgen.FaultSpec(kind, blocks[i % 4], 3.0, ONSET,
                                                           seed=i), benchmark.ref_sd)
            modes = ["full"] + ([extra[kind]] if kind in extra else [])
            rows.append({m: pipeline.evaluate_result(pipeline.monitor(plant, y, m), ONSET)
                         for m in modes})
        out[kind] = rows
    far = [pipeline.evaluate_result(
        pipeline.monitor(plant, simgen.generate(spec, T_STREAM, seed=9000 + j)), None).FAR
        for j in range(N_TRIALS)]
    return out, float(np.mean(far)), time.perf_counter() - t0


@pytest.mark.slow
@pytest.mark.criterion(6)
def test_end_to_end_benchmark(verdict, benchmark, fault_trials):
    trials, far, secs = fault_trials
    secs += benchmark.train_seconds
    checks, parts = {}, []
    for kind, rows in trials.items():
        ok = np.mean([r["full"].FDD is not None and r["full"].FDD <= 100
                      and r["full"].FDR >= 0.8 for r in rows])
        checks[f"{kind} >= 90%"] = ok >= 0.9
        parts.append(f"{kind} {ok:.2f}")
    checks["FAR <= 0.05"] = far <= 0.05
    checks["runtime < 15min"] = secs < 900
    verdict(checks, f"{', '.join(parts)}; FAR {far:.4f}; {secs:.0f}s")


@pytest.mark.slow
@pytest.mark.criterion(7)
def test_ablation_ordering(verdict, fault_trials):
    trials, _, _ = fault_trials
    rv = trials["random_variation"]
    fdr_full = np.mean([r["full"].FDR for r in rv])
    fdr_flat = np.mean([r["no_cusum"].FDR for r in rv])
    drift = trials["slow_drift"]
    paired = np.mean([fdd_or_inf(r["full"]) <= fdd_or_inf(r["no_bf"]) for r in drift])
    verdict({"FDR full > no_cusum": fdr_full > fdr_flat, "FDD paired >= 80%": paired >= 0.8},
            f"random variation FDR {fdr_full:.3f} vs {fdr_flat:.3f}; drift FDD(full) <= "
            f"FDD(no_bf) in {paired:.0%}")


@pytest.mark.criterion(8)
def test_cli_determinism(verdict, tmp_path):
    run_cfg = {"olae": {"window_len": 10, "hidden_dim": 8, "latent_dim": 3, "epochs": 3,
                        "learning_rate": 3e-3},
               "stats": {"d": 5, "calib_reps": 20, "calib_horizon": 600},
               "simulate": {"T": 3000}}
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(run_cfg))

    def chain(root):
        g = ["--config", str(cfg), "--seed", "11"]
        data, plant = root / "data", root / "plant"
        codes = [cli.run(g + ["--out", str(data), "simulate", "--faults", "all"]),
                 cli.run(g + ["--out", str(plant), "train", "--data",
                              str(data / "in_control.csv")])]
        for csv_path in sorted(data.glob("*.csv")):
            codes.append(cli.run(g + ["--out", str(root / "records"), "monitor",
                                      "--artifacts", str(plant / "artifacts"),
                                      "--data", str(csv_path)]))
        codes.append(cli.run(g + ["--out", str(root / "report"), "evaluate", "--records",
                                  *map(str, sorted((root / "records").glob("*.csv")))]))
        return codes

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        codes = chain(tmp_path / "a") + chain(tmp_path / "b")
    a = {p.relative_to(tmp_path / "a"): p.read_bytes()
         for p in sorted((tmp_path / "a").rglob("*")) if p.is_file()}
    b = {p.relative_to(tmp_path / "b"): p.read_bytes()
         for p in sorted((tmp_path / "b").rglob("*")) if p.is_file()}
    differ = [str(k) for k in a if a[k] != b.get(k)]
    verdict({"exit codes 0": set(codes) == {0}, "same file set": set(a) == set(b),
             "byte-identical": not differ},
            f"{len(a)} files compared" + (f", differing: {differ}" if differ else ""))

