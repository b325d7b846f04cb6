"""Offline learning, online monitoring and evaluation across blocks.

Offline: standardize, split 70/30 in time, train one autoencoder per block,
then fit T², KDE limit, quantile grid and CUSUM threshold on validation
codes, and finally derive each block's fused-statistic limit from a replay of
the validation period.

Online: every sample from ``L - 1`` on yields one record.  The trailing
window of each block is encoded, scored by T² and the CUSUM, fused into a
block statistic B and then into the plant-wide index PFI.  Whole streams are
processed in array form; the CUSUM recursion carries its state across calls.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import jsonio, olae, stats
from .core import (BlockPartition, Standardizer, StreamMatrix, apply_standardizer,
                   chronological_split, fit_standardizer, make_windows,
                   sliding_windows)
from .errors import ConfigError, DataError, SchemaError
from .fusion import fit_block_limit, wbf
from .olae import OlaeModel, TrainConfig, TrainHistory
from .stats import BlockStats, CusumConfig, CusumState, T2Model

log = logging.getLogger(__name__)

MODES = ("full", "no_bf", "no_cusum")
ARTIFACTS_VERSION = "artifacts_v1"


@dataclass(frozen=True)
class PipelineConfig:
    window_len: int = 20
    hidden_dim: int = 16
    latent_dim: int = 5
    train: TrainConfig = field(default_factory=TrainConfig)
    cusum: CusumConfig = field(default_factory=CusumConfig)
    confidence: float = 0.99
    target_far: float = 0.0027
    calib_reps: int = 200
    calib_horizon: int = 2400
    calib_block_len: int = 50
    alpha: float = 0.01
    sustain_m: int = 3
    threshold: float | None = None
    train_fraction: float = 0.7
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.window_len < 1:
            raise ConfigError("window_len must be >= 1")
        if self.latent_dim > self.hidden_dim:
            raise ConfigError("latent_dim must not exceed hidden_dim")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.sustain_m < 1:
            raise ConfigError("sustain_m must be >= 1")

    @property
    def alarm_threshold(self) -> float:
        return self.alpha if self.threshold is None else self.threshold


@dataclass(frozen=True)
class BlockArtifacts:
    block_id: str
    variables: tuple
    model: OlaeModel
    stats: BlockStats
    B_lim: dict                      # mode -> limit
    history: TrainHistory | None = None

    def __post_init__(self):
        if self.model.input_dim != len(self.variables):
            raise SchemaError(f"block {self.block_id}: model expects "
                              f"{self.model.input_dim} inputs, block has "
                              f"{len(self.variables)}")
        lims = [self.stats.t2.limit, self.stats.cusum.h, *self.B_lim.values()]
        if not all(v is not None and v > 0 for v in lims):
            raise ValueError(f"block {self.block_id}: non-positive limit")

    @property
    def t2(self) -> T2Model:
        return self.stats.t2

    @property
    def h(self) -> float:
        return self.stats.cusum.h


@dataclass(frozen=True)
class PlantArtifacts:
    standardizer: Standardizer
    blocks: tuple
    config: PipelineConfig
    meta: dict = field(default_factory=dict)

    @property
    def variable_names(self) -> tuple:
        return self.standardizer.variable_names

    def partition(self) -> BlockPartition:
        return BlockPartition(tuple((b.block_id, b.variables) for b in self.blocks))


@dataclass
class MonitorResult:
    """One row per monitored sample, column arrays over time."""

    t: np.ndarray                # sample index
    T2: np.ndarray               # (n, N)
    W: np.ndarray | None         # (n, N); None without CUSUM
    B: np.ndarray                # (n, N)
    metric_weights: np.ndarray   # (n, N, metrics)
    block_weights: np.ndarray    # (n, N)
    PFI: np.ndarray              # (n,)
    alarm: np.ndarray            # (n,) bool
    sustained: np.ndarray        # (n,) bool
    T2_lim: np.ndarray           # (N,)
    W_lim: np.ndarray | None     # (N,)
    B_lim: np.ndarray            # (N,)
    PFI_lim: float
    mode: str
    block_ids: tuple
    states: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.t.shape[0]

    def records(self) -> list["MonitorRecord"]:
        out = []
        for i in range(len(self)):
            out.append(MonitorRecord(
                int(self.t[i]), self.T2[i].copy(),
                None if self.W is None else self.W[i].copy(),
                self.B[i].copy(), self.metric_weights[i].copy(),
                self.block_weights[i].copy(), float(self.PFI[i]),
                bool(self.alarm[i]), bool(self.sustained[i])))
        return out


@dataclass(frozen=True)
class MonitorRecord:
    t: int
    T2: np.ndarray
    W: np.ndarray | None
    B: np.ndarray
    metric_weights: np.ndarray
    block_weights: np.ndarray
    PFI: float
    alarm: bool
    sustained_alarm: bool


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _block_seed(seed: int, index: int) -> int:
    return int(seed) * 1000 + index


def block_limits_from_replay(t2_vals, w_vals, t2_lim, h, alpha, confidence):
    """B_lim for every mode from in-control metric series."""
    out = {}
    for mode in MODES:
        if mode == "no_cusum":
            B, _, _ = wbf(t2_vals[:, None], np.array([t2_lim]), alpha, True)
        else:
            B, _, _ = wbf(np.stack([t2_vals, w_vals], axis=-1),
                          np.array([t2_lim, h]), alpha, mode == "full")
        out[mode] = fit_block_limit(B, confidence)
    return out


def _crossfit_replay(codes: np.ndarray, cfg: CusumConfig) -> np.ndarray:
    """Global CUSUM over the codes, each half scored on the other's grid."""
    half = codes.shape[0] // 2
    a, b = codes[:half], codes[half:]
    wa, _ = stats.run_cusum(stats.fit_quantile_grid(b, cfg.d), a, cfg)
    wb, _ = stats.run_cusum(stats.fit_quantile_grid(a, cfg.d), b, cfg)
    return np.concatenate([wa, wb])


def learn_block(block_id: str, variables, train_vals: np.ndarray,
                val_vals: np.ndarray, config: PipelineConfig, index: int = 0
                ) -> BlockArtifacts:
    L = config.window_len
    p = len(variables)
    tcfg = replace(config.train, seed=_block_seed(config.train.seed, index))
    try:
        train_ds = make_windows(train_vals, L)
    except DataError as exc:
        raise DataError(f"training stage, block {block_id}: {exc}") from None
    model = olae.init_model(p, config.hidden_dim, config.latent_dim, L, tcfg.seed)
    model, hist = olae.train(model, train_ds, tcfg)

    if val_vals.shape[0] < L:
        raise DataError(f"validation stage, block {block_id}: "
                        f"{val_vals.shape[0]} rows < window {L}")
    codes = olae.encode_batch(model, sliding_windows(val_vals, L))
    try:
        t2m = stats.fit_t2(codes)
        t2_vals = stats.t2_score(t2m, codes)
        t2m = t2m.with_limit(stats.kde_limit(t2_vals, config.confidence))
        ccfg = config.cusum
        grid = stats.fit_quantile_grid(codes, ccfg.d)
        h = stats.calibrate_threshold(
            codes, grid, ccfg, config.target_far, config.calib_reps,
            config.calib_horizon, _block_seed(config.seed, index),
            config.calib_block_len, cross_fit=True)
    except DataError as exc:
        raise DataError(f"calibration stage, block {block_id}: {exc}") from None
    ccfg = ccfg.with_h(h)
    w_vals = _crossfit_replay(codes, ccfg)
    try:
        B_lim = block_limits_from_replay(t2_vals, w_vals, t2m.limit, h,
                                         config.alpha, config.confidence)
    except DataError as exc:
        raise DataError(f"fusion-limit stage, block {block_id}: {exc}") from None
    bstats = BlockStats(t2m, grid, ccfg, {
        "target_far": config.target_far, "n_reps": config.calib_reps,
        "horizon": config.calib_horizon, "block_len": config.calib_block_len,
        "n_codes": int(codes.shape[0]), "collapsed_cells": int(grid.collapsed.sum())})
    return BlockArtifacts(block_id, tuple(variables), model, bstats, B_lim, hist)


def offline_learn(in_control: StreamMatrix, partition: BlockPartition,
                  config: PipelineConfig = PipelineConfig()) -> PlantArtifacts:
    if max(partition.covered) >= in_control.n_variables:
        raise SchemaError("partition refers to variables outside the stream")
    train, val = chronological_split(in_control, config.train_fraction)
    if train.n_samples < config.window_len:
        raise DataError(f"split stage: {train.n_samples} training rows < window "
                        f"{config.window_len}")
    std = fit_standardizer(train)
    z_train = apply_standardizer(std, train).values
    z_val = apply_standardizer(std, val).values

    def job(item):
        i, (bid, idx) = item
        cols = list(idx)
        return learn_block(bid, idx, z_train[:, cols], z_val[:, cols], config, i)

    blocks = _map(job, list(enumerate(partition.blocks)), config.jobs)
    meta = {"n_train": train.n_samples, "n_validation": val.n_samples,
            "baseline": config.train.ortho_weight == 0.0,
            "time_unit": "samples"}
    return PlantArtifacts(std, tuple(blocks), config, meta)


def _check_stream(art: PlantArtifacts, stream: StreamMatrix):
    names = tuple(stream.variable_names)
    if names != tuple(art.variable_names):
        missing = [n for n in art.variable_names if n not in names]
        extra = [n for n in names if n not in art.variable_names]
        raise SchemaError(f"stream columns do not match the trained schema; "
                          f"missing {missing}, unexpected {extra}")


def score_block(block: BlockArtifacts, z_block: np.ndarray, use_cusum: bool,
                state: CusumState | None = None):
    """(T², W or None, final CUSUM state) for every trailing window."""
    codes = olae.encode_batch(block.model, sliding_windows(z_block, block.model.window_len))
    t2 = stats.t2_score(block.t2, codes)
    if not use_cusum:
        return t2, None, state
    w, st = stats.run_cusum(block.stats.grid, codes, block.stats.cusum, state)
    return t2, w, st


def sustained_flags(alarm: np.ndarray, m: int) -> np.ndarray:
    """True where the last ``m`` raw alarms (inclusive) are all set."""
    a = np.asarray(alarm, dtype=bool)
    if m <= 1:
        return a.copy()
    run = np.zeros(a.shape[0], dtype=np.int64)
    c = 0
    for i, v in enumerate(a):
        c = c + 1 if v else 0
        run[i] = c
    return run >= m


def monitor(art: PlantArtifacts, stream: StreamMatrix, mode: str = "full",
            states: list | None = None) -> MonitorResult:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    _check_stream(art, stream)
    cfg = art.config
    L = cfg.window_len
    N = len(art.blocks)
    ids = tuple(b.block_id for b in art.blocks)
    n = max(stream.n_samples - L + 1, 0)
    use_cusum = mode != "no_cusum"
    adaptive = mode != "no_bf"
    if n == 0:
        warnings.warn(f"stream of {stream.n_samples} samples is shorter than the "
                      f"window {L}; no records", RuntimeWarning, stacklevel=2)
    z = apply_standardizer(art.standardizer, stream).values
    states = states if states is not None else [None] * N

    def job(i):
        b = art.blocks[i]
        if n == 0:
            return np.empty(0), (np.empty(0) if use_cusum else None), states[i]
        return score_block(b, z[:, list(b.variables)], use_cusum, states[i])

    scored = _map(job, list(range(N)), cfg.jobs)
    T2 = np.stack([s[0] for s in scored], axis=-1).reshape(n, N)
    T2_lim = np.array([b.t2.limit for b in art.blocks])
    if use_cusum:
        W = np.stack([s[1] for s in scored], axis=-1).reshape(n, N)
        W_lim = np.array([b.h for b in art.blocks])
        vals = np.stack([T2, W], axis=-1)
        lims = np.stack([T2_lim, W_lim], axis=-1)
    else:
        W = W_lim = None
        vals, lims = T2[..., None], T2_lim[:, None]
    B, mw, _ = wbf(vals, lims, cfg.alpha, adaptive)
    B = np.asarray(B).reshape(n, N)
    B_lim = np.array([b.B_lim[mode] for b in art.blocks])
    PFI, bw, _ = wbf(B, B_lim, cfg.alpha, adaptive)
    PFI = np.asarray(PFI).reshape(n)
    alarm = PFI > cfg.alarm_threshold
    return MonitorResult(
        t=np.arange(L - 1, L - 1 + n), T2=T2, W=W, B=B,
        metric_weights=np.asarray(mw).reshape(vals.shape), block_weights=np.asarray(bw).reshape(n, N),
        PFI=PFI, alarm=alarm, sustained=sustained_flags(alarm, cfg.sustain_m),
        T2_lim=T2_lim, W_lim=W_lim, B_lim=B_lim, PFI_lim=cfg.alarm_threshold,
        mode=mode, block_ids=ids, states=[s[2] for s in scored])


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalEntry:
    case: str
    onset: int | None
    FDD: int | None              # sustained convention; None = not detected
    FDD_step: int | None         # first single post-onset alarm
    FDR: float | None
    FAR: float | None
    sustained: bool

    def __post_init__(self):
        for name in ("FDR", "FAR"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.FDD is not None and self.FDD < 0:
            raise ValueError("FDD must be >= 0")

    def to_dict(self) -> dict:
        return {"case": self.case, "onset": self.onset, "FDD": self.FDD,
                "FDD_step": self.FDD_step, "FDR": self.FDR, "FAR": self.FAR,
                "sustained": self.sustained}


@dataclass(frozen=True)
class EvalReport:
    entries: tuple
    meta: dict = field(default_factory=dict)

    @property
    def FAR(self) -> float | None:
        vals = [e.FAR for e in self.entries if e.FAR is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries], "FAR": self.FAR,
                "meta": self.meta}


NONE_DETECTED = "--"


def evaluate(t, pfi, fault_onset: int | None, sustain_m: int = 3,
             threshold: float = 0.01, case: str = "") -> EvalEntry:
    """Detection metrics from a PFI series indexed by sample ``t``.

    FDD counts samples from onset to the start of the first post-onset run of
    ``sustain_m`` alarms.  FDR and FAR are alarm fractions after and before
    onset.  ``fault_onset=None`` treats the whole series as in-control.
    """
    t = np.asarray(t, dtype=np.int64)
    alarm = np.asarray(pfi, dtype=np.float64) > threshold
    if fault_onset is None:
        far = float(alarm.mean()) if alarm.size else None
        return EvalEntry(case, None, None, None, None, far, False)
    if t.size == 0 or not t[0] <= fault_onset <= t[-1]:
        rng = (int(t[0]), int(t[-1])) if t.size else None
        raise DataError(f"onset {fault_onset} outside record range {rng}")
    pre = t < fault_onset
    post = ~pre
    far = float(alarm[pre].mean()) if pre.any() else None
    fdr = float(alarm[post].mean())
    a_post = alarm[post]
    t_post = t[post]
    step_hits = np.flatnonzero(a_post)
    fdd_step = int(t_post[step_hits[0]] - fault_onset) if step_hits.size else None
    done = np.flatnonzero(sustained_flags(a_post, sustain_m))
    fdd = int(t_post[done[0] - sustain_m + 1] - fault_onset) if done.size else None
    return EvalEntry(case, fault_onset, fdd, fdd_step, fdr, far, fdd is not None)


def evaluate_result(res: MonitorResult, fault_onset: int | None,
                    sustain_m: int = 3, case: str = "") -> EvalEntry:
    return evaluate(res.t, res.PFI, fault_onset, sustain_m, res.PFI_lim, case)


def ablate(mode: str, art: PlantArtifacts, streams: dict,
           onsets: dict | None = None) -> EvalReport:
    """Evaluate ``mode`` on named streams; ``onsets`` maps name -> onset."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    onsets = onsets or {}
    entries = []
    for name, s in streams.items():
        res = monitor(art, s, mode)
        entries.append(evaluate_result(res, onsets.get(name), art.config.sustain_m,
                                       name))
    return EvalReport(tuple(entries), {"mode": mode, "time_unit": "samples"})


# ---------------------------------------------------------------------------
# persistence


def _config_to_dict(c: PipelineConfig) -> dict:
    t, k = c.train, c.cusum
    return {
        "window_len": c.window_len, "hidden_dim": c.hidden_dim,
        "latent_dim": c.latent_dim,
        "train": {"epochs": t.epochs, "batch_size": t.batch_size,
                  "learning_rate": t.learning_rate, "ortho_weight": t.ortho_weight,
                  "seed": t.seed, "gradient_clip_norm": t.gradient_clip_norm,
                  "ortho_exclude_diagonal": t.ortho_exclude_diagonal,
                  "gram_normalization": t.gram_normalization},
        "cusum": {"d": k.d, "k": k.k, "r": k.r, "form": k.form},
        "confidence": c.confidence, "target_far": c.target_far,
        "calib_reps": c.calib_reps, "calib_horizon": c.calib_horizon,
        "calib_block_len": c.calib_block_len, "alpha": c.alpha,
        "sustain_m": c.sustain_m, "threshold": c.threshold,
        "train_fraction": c.train_fraction, "seed": c.seed,
    }


def _config_from_dict(d: dict) -> PipelineConfig:
    d = dict(d)
    t = TrainConfig(**d.pop("train"))
    k = CusumConfig(**d.pop("cusum"))
    return PipelineConfig(train=t, cusum=k, **d)


def save_artifacts(art: PlantArtifacts, out_dir: str | Path) -> list[Path]:
    """Write one JSON file per block plus a manifest; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for b in art.blocks:
        path = out / f"block_{b.block_id}.json"
        jsonio.dump({
            "version": ARTIFACTS_VERSION, "block_id": b.block_id,
            "variables": list(b.variables),
            "model": olae.model_to_dict(b.model),
            "stats": b.stats.to_dict(), "B_lim": b.B_lim,
        }, path)
        written.append(path)
    manifest = out / "manifest.json"
    jsonio.dump({
        "version": ARTIFACTS_VERSION,
        "standardizer": art.standardizer.to_dict(),
        "blocks": [b.block_id for b in art.blocks],
        "config": _config_to_dict(art.config), "meta": art.meta,
    }, manifest)
    written.append(manifest)
    return written


def load_artifacts(out_dir: str | Path, jobs: int | None = None) -> PlantArtifacts:
    out = Path(out_dir)
    mpath = out / "manifest.json"
    if not mpath.exists():
        raise DataError(f"no artifacts manifest in {out}")
    m = jsonio.load(mpath)
    if m.get("version") != ARTIFACTS_VERSION:
        raise SchemaError(f"unsupported artifacts version {m.get('version')!r}")
    cfg = _config_from_dict(m["config"])
    if jobs is not None:
        cfg = replace(cfg, jobs=jobs)
    blocks = []
    for bid in m["blocks"]:
        d = jsonio.load(out / f"block_{bid}.json")
        blocks.append(BlockArtifacts(
            d["block_id"], tuple(d["variables"]), olae.model_from_dict(d["model"]),
            BlockStats.from_dict(d["stats"]), dict(d["B_lim"])))
    return PlantArtifacts(Standardizer.from_dict(m["standardizer"]), tuple(blocks),
                          cfg, m.get("meta", {}))
