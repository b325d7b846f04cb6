"""Monitoring statistics on latent code streams.

Two statistics are computed per block:

* Hotelling's T^2 of the code vector against the in-control covariance,
  with a control limit read off a Gaussian kernel density estimate.
* A nonparametric multivariate CUSUM.  Each code stream is binned into ``d``
  in-control quantile cells; the cumulative cell indicators ``A+``/``A-`` are
  compared with their in-control expectations through an allowance/reset
  recursion, and the ``r`` largest per-stream statistics are summed.

The CUSUM arrays carry a trailing ``(streams, 2, d - 1)`` layout where the
sign axis is ``0 -> +`` and ``1 -> -``.  Any leading axes (independent
replicates) are broadcast, which is how threshold calibration runs many
bootstrap streams at once.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import jsonio
from .errors import DataError, SchemaError, StateError

STATS_VERSION = "stats_v1"
DIV_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Hotelling's T^2


@dataclass(frozen=True)
class T2Model:
    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    limit: float | None = None

    def with_limit(self, limit: float) -> "T2Model":
        return replace(self, limit=float(limit))


def fit_t2(codes: np.ndarray) -> T2Model:
    """Population covariance of the codes and a ridge-regularized inverse."""
    C = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    n, m = C.shape
    if n <= m:
        raise DataError(f"T2 fit needs more codes than dimensions ({n} <= {m})")
    mean = C.mean(axis=0)
    cov = np.cov(C, rowvar=False, bias=True).reshape(m, m)
    cov = 0.5 * (cov + cov.T)
    eps = 1e-8 * np.trace(cov) / m
    prec = np.linalg.inv(cov + eps * np.eye(m))
    prec = 0.5 * (prec + prec.T)
    return T2Model(mean, cov, prec)


def t2_score(model: T2Model, c: np.ndarray) -> np.ndarray | float:
    """Quadratic form of the centered code(s); accepts (m,) or (n, m)."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != model.precision.shape[0]:
        raise SchemaError(f"code length {c.shape[-1]} != {model.precision.shape[0]}")
    z = c - model.mean
    out = np.einsum("...i,ij,...j->...", z, model.precision, z)
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def kde_limit(scores: np.ndarray, confidence: float = 0.99,
              grid_points: int = 2048) -> float:
    """Control limit where a Gaussian-kernel CDF first reaches ``confidence``.

    Silverman bandwidth ``1.06 * std * n**(-1/5)``; the density is evaluated
    on ``grid_points`` points over ``[min - 3bw, max + 3bw]`` and integrated
    with the trapezoid rule.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    if s.size < 50:
        raise DataError(f"KDE limit needs at least 50 scores, got {s.size}")
    sd = s.std(ddof=1)
    if s.max() == s.min() or not sd > 0:
        warnings.warn("degenerate scores (zero variance); limit set to max",
                      RuntimeWarning, stacklevel=2)
        return float(s.max())
    bw = 1.06 * sd * s.size ** (-0.2)
    grid = np.linspace(s.min() - 3 * bw, s.max() + 3 * bw, grid_points)
    dens = np.zeros(grid_points)
    for start in range(0, s.size, 4096):
        u = (grid[:, None] - s[None, start:start + 4096]) / bw
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    dens /= s.size * bw * math.sqrt(2 * math.pi)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    j = int(np.searchsorted(cdf, confidence, side="left"))
    if j >= grid_points:
        return float(grid[-1])
    if j == 0:
        return float(grid[0])
    # linear interpolation inside the crossing interval
    frac = (confidence - cdf[j - 1]) / (cdf[j] - cdf[j - 1])
    return float(grid[j - 1] + frac * (grid[j] - grid[j - 1]))


def kde_cdf(scores: np.ndarray, x: float) -> float:
    """Closed-form CDF of the same Gaussian KDE at ``x`` (reference use)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    bw = 1.06 * s.std(ddof=1) * s.size ** (-0.2)
    return float(ndtr((x - s) / bw).mean())


# ---------------------------------------------------------------------------
# quantile grid and indicator vectors


@dataclass(frozen=True)
class QuantileGrid:
    cuts: np.ndarray          # (streams, d - 1)
    collapsed: np.ndarray     # (streams, d) True where a cell has zero width

    @property
    def d(self) -> int:
        return self.cuts.shape[1] + 1

    @property
    def n_streams(self) -> int:
        return self.cuts.shape[0]


def _midpoint_quantile(sorted_col: np.ndarray, l: int, d: int) -> float:
    # position (n-1) * l / d in exact integer arithmetic
    num = (sorted_col.size - 1) * l
    lo, hi = num // d, -(-num // d)
    return 0.5 * (sorted_col[lo] + sorted_col[hi])


def fit_quantile_grid(calib: np.ndarray, d: int = 5,
                      min_per_cell: int = 10) -> QuantileGrid:
    """Per-stream ``l/d`` quantile cuts with midpoint interpolation."""
    X = np.asarray(calib, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if d < 2:
        raise ValueError("d must be at least 2")
    if n < min_per_cell * d:
        raise DataError(f"quantile grid with d={d} needs >= {min_per_cell * d} "
                        f"points, got {n}")
    cuts = np.empty((k, d - 1))
    for j in range(k):
        col = np.sort(X[:, j])
        if col[0] == col[-1]:
            raise DataError(f"stream {j} is constant; quantile grid is degenerate")
        cuts[j] = [_midpoint_quantile(col, l, d) for l in range(1, d)]
    ext = np.concatenate([np.full((k, 1), -np.inf), cuts, np.full((k, 1), np.inf)], axis=1)
    collapsed = np.diff(ext, axis=1) <= 0
    if collapsed.any():
        warnings.warn(f"{int(collapsed.sum())} collapsed quantile cells",
                      RuntimeWarning, stacklevel=2)
    return QuantileGrid(cuts, collapsed)


def cell_index(grid: QuantileGrid, g: np.ndarray) -> np.ndarray:
    """0-based cell of each value; trailing axis indexes streams.

    Cells are right-closed, so a value equal to a cut goes to the lower cell.
    """
    g = np.asarray(g, dtype=np.float64)
    return np.sum(g[..., None] > grid.cuts, axis=-1)


def categorize(grid: QuantileGrid, g: float, stream: int) -> np.ndarray:
    j = int(np.searchsorted(grid.cuts[stream], g, side="left"))
    Y = np.zeros(grid.d, dtype=np.int64)
    Y[j] = 1
    return Y


def accumulate_a(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(A+, A-) from a one-hot cell indicator of length d."""
    Y = np.asarray(Y)
    if Y.ndim != 1 or Y.sum() != 1 or not np.all((Y == 0) | (Y == 1)):
        raise ValueError(f"indicator must be one-hot, got {Y.tolist()}")
    a_minus = np.cumsum(Y)[:-1].astype(np.float64)
    return 1.0 - a_minus, a_minus


def a_from_cells(cells: np.ndarray, d: int) -> np.ndarray:
    """Stacked (A+, A-) for integer cells: shape ``cells.shape + (2, d - 1)``."""
    l = np.arange(d - 1)
    a_minus = (cells[..., None] <= l).astype(np.float64)
    return np.stack([1.0 - a_minus, a_minus], axis=-2)


# ---------------------------------------------------------------------------
# CUSUM recursion


@dataclass(frozen=True)
class CusumConfig:
    d: int = 10
    k: float = 0.1
    h: float | None = None
    r: int | None = None
    form: str = "qiu_hawkins"  # or "paper"

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be at least 2")
        if self.k < 0:
            raise ValueError("allowance k must be >= 0")
        if self.h is not None and not self.h > 0:
            raise ValueError("threshold h must be positive")
        if self.form not in ("paper", "qiu_hawkins"):
            raise ValueError(f"unknown cusum form {self.form!r}")

    @property
    def expected(self) -> np.ndarray:
        """(2, d - 1): E(A+)_l = 1 - l/d, E(A-)_l = l/d."""
        l = np.arange(1, self.d) / self.d
        return np.stack([1.0 - l, l])

    def top_r(self, n_streams: int) -> int:
        r = self.r if self.r is not None else math.ceil(n_streams / 2)
        if not 1 <= r <= n_streams:
            raise ValueError(f"r={r} outside [1, {n_streams}]")
        return r

    def with_h(self, h: float) -> "CusumConfig":
        return replace(self, h=float(h))


@dataclass
class CusumState:
    """Recursion state; S arrays have shape (..., streams, 2, d - 1)."""

    S0: np.ndarray
    S1: np.ndarray
    C: np.ndarray = field(default=None)
    W_sign: np.ndarray = field(default=None)  # (..., streams, 2)

    @classmethod
    def zeros(cls, n_streams: int, d: int, lead: tuple = ()) -> "CusumState":
        shape = lead + (n_streams, 2, d - 1)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape[:-1]),
                   np.zeros(shape[:-1]))

    @property
    def W(self) -> np.ndarray:
        """Two-sided local statistic per stream."""
        return self.W_sign.max(axis=-1)

    def copy(self) -> "CusumState":
        return CusumState(self.S0.copy(), self.S1.copy(), self.C.copy(),
                          self.W_sign.copy())


def cusum_step(S0, S1, A, E, k: float, form: str = "qiu_hawkins"):
    """One recursion step on broadcastable arrays whose last axis is l.

    ``qiu_hawkins``: C = v' D^-1 v with v = S0 - S1 + A - E, D = diag(E + S1).
    ``paper``: C = v' D^-1 (S0 + S1 - E + A).  This variant has no in-control
    reset tendency (one sign side always grows) and is kept for comparison.

    Returns ``(C, S0_new, S1_new, W)``.
    """
    den = np.maximum(E + S1, DIV_FLOOR)
    v = A - E + S0 - S1
    if form == "paper":
        u = S0 + S1 - E + A
    else:
        u = v
    C = np.sum(v * u / den, axis=-1)
    grow = C > k
    shrink = np.where(grow, (C - k) / np.where(grow, C, 1.0), 0.0)[..., None]
    S0n = (S0 + A) * shrink
    S1n = (S1 + E) * shrink
    W = np.maximum(0.0, C - k)
    return C, S0n, S1n, W


def cusum_update(state: CusumState, a_plus, a_minus, cfg: CusumConfig,
                 stream: int | None = None):
    """Advance the state with new indicator vectors.

    With ``stream`` given, ``a_plus``/``a_minus`` are length ``d - 1`` vectors
    for that one stream and only it is advanced; otherwise they carry a
    leading streams axis matching the state.  Returns ``(state', W)``.
    """
    A = np.stack([np.asarray(a_plus, float), np.asarray(a_minus, float)], axis=-2)
    new = state.copy()
    sel = (Ellipsis,) if stream is None else (Ellipsis, stream, slice(None), slice(None))
    S0, S1 = state.S0[sel], state.S1[sel]
    if A.shape != S0.shape:
        raise StateError(f"indicator shape {A.shape} != state shape {S0.shape}")
    if np.any(S0 < 0) or np.any(S1 < 0):
        raise StateError("negative CUSUM accumulator")
    C, S0n, S1n, Ws = cusum_step(S0, S1, A, cfg.expected, cfg.k, cfg.form)
    new.S0[sel], new.S1[sel] = S0n, S1n
    csel = sel[:-1] if stream is not None else (Ellipsis,)
    new.C[csel], new.W_sign[csel] = C, Ws
    return new, Ws.max(axis=-1)


def global_cusum(W: np.ndarray, r: int) -> np.ndarray | float:
    """Sum of the ``r`` largest local statistics along the last axis."""
    W = np.asarray(W, dtype=np.float64)
    if not 1 <= r <= W.shape[-1]:
        raise ValueError(f"r={r} outside [1, {W.shape[-1]}]")
    top = np.sort(W, axis=-1)[..., W.shape[-1] - r:]
    out = top.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def run_cusum(grid: QuantileGrid, series: np.ndarray, cfg: CusumConfig,
              state: CusumState | None = None, keep_local: bool = False):
    """Run the CUSUM over a (T, ..., streams) series.

    Returns the global top-r statistic per step, shape (T, ...), the final
    state and, with ``keep_local``, the per-stream W history.
    """
    X = np.asarray(series, dtype=np.float64)
    n_streams = X.shape[-1]
    if n_streams != grid.n_streams:
        raise SchemaError(f"{n_streams} streams for a grid of {grid.n_streams}")
    r = cfg.top_r(n_streams)
    d = cfg.d
    if grid.d != d:
        raise SchemaError(f"grid has d={grid.d}, config d={d}")
    T = X.shape[0]
    lead = X.shape[1:-1]
    st = state.copy() if state is not None else CusumState.zeros(n_streams, d, lead)
    A_all = a_from_cells(cell_index(grid, X), d)
    E = cfg.expected
    S0, S1 = st.S0, st.S1
    out = np.empty((T,) + lead)
    local = np.empty(X.shape) if keep_local else None
    C = Ws = None
    for t in range(T):
        C, S0, S1, Ws = cusum_step(S0, S1, A_all[t], E, cfg.k, cfg.form)
        Wt = Ws.max(axis=-1)
        out[t] = global_cusum(Wt, r)
        if keep_local:
            local[t] = Wt
    if T:
        st = CusumState(S0, S1, C, Ws)
    return (out, st, local) if keep_local else (out, st)


# ---------------------------------------------------------------------------
# threshold calibration


def block_bootstrap_indices(n: int, horizon: int, n_reps: int, block_len: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Moving-block bootstrap row indices, shape (horizon, n_reps)."""
    block_len = max(1, min(block_len, n))
    n_blocks = -(-horizon // block_len)
    starts = rng.integers(0, n - block_len + 1, size=(n_reps, n_blocks))
    idx = (starts[:, :, None] + np.arange(block_len)).reshape(n_reps, -1)[:, :horizon]
    return idx.T


def calibrate_threshold(codes: np.ndarray, grid: QuantileGrid | None,
                        cfg: CusumConfig, target_far: float = 0.0027,
                        n_reps: int = 200, horizon: int = 2400, seed: int = 0,
                        block_len: int = 1, cross_fit: bool = True) -> float:
    """Monte Carlo threshold for the global CUSUM statistic.

    Runs the recursion on ``n_reps`` bootstrap resamples of the in-control
    codes, each ``horizon`` steps long, and returns the ``1 - target_far``
    empirical quantile of the per-step statistic.  ``block_len > 1``
    resamples contiguous blocks so serial dependence in the codes survives.

    With ``cross_fit`` the codes are split into two chronological halves;
    resamples of each half run against a grid fitted on the other, so the
    threshold also absorbs quantile-estimation error that fresh data will
    show.  Without it, resamples run against ``grid``.
    """
    X = np.asarray(codes, dtype=np.float64)
    if not 0.0 < target_far < 1.0:
        raise ValueError("target_far must lie in (0, 1)")
    half = X.shape[0] // 2 if cross_fit else X.shape[0]
    if half < max(2 * block_len, 10 * cfg.d):
        raise DataError(f"only {X.shape[0]} calibration codes for d={cfg.d}, "
                        f"block_len={block_len}")
    rng = np.random.default_rng(seed)
    if cross_fit:
        folds = [(X[:half], X[half:]), (X[half:], X[:half])]
        reps = [n_reps - n_reps // 2, n_reps // 2]
    else:
        if grid is None:
            raise ValueError("grid is required without cross_fit")
        folds, reps = [(None, X)], [n_reps]
    pooled = []
    for (fit_part, sample_part), nr in zip(folds, reps):
        if nr == 0:
            continue
        g = grid if fit_part is None else fit_quantile_grid(fit_part, cfg.d)
        idx = block_bootstrap_indices(sample_part.shape[0], horizon, nr,
                                      block_len, rng)
        stat, _ = run_cusum(g, sample_part[idx], cfg)
        pooled.append(stat.ravel())
    stat = np.concatenate(pooled)
    h = float(np.quantile(stat, 1.0 - target_far))
    if not h > 0:
        # atom at zero: fall back to the smallest positive value so h stays
        # a valid positive limit
        pos = stat[stat > 0]
        h = float(pos.min()) if pos.size else DIV_FLOOR
    return h


# ---------------------------------------------------------------------------
# persistence


@dataclass(frozen=True)
class BlockStats:
    """Fitted per-block detectors."""

    t2: T2Model
    grid: QuantileGrid
    cusum: CusumConfig
    calibration: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": STATS_VERSION,
            "t2": {"mean": self.t2.mean, "covariance": self.t2.covariance,
                   "precision": self.t2.precision, "limit": self.t2.limit},
            "grid": {"cuts": self.grid.cuts},
            "cusum": {"d": self.cusum.d, "k": self.cusum.k, "h": self.cusum.h,
                      "r": self.cusum.r, "form": self.cusum.form},
            "calibration": self.calibration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlockStats":
        if d.get("version") != STATS_VERSION:
            raise SchemaError(f"unsupported stats version {d.get('version')!r}")
        t = d["t2"]
        t2 = T2Model(np.asarray(t["mean"], float), np.asarray(t["covariance"], float),
                     np.asarray(t["precision"], float), t["limit"])
        cuts = np.asarray(d["grid"]["cuts"], float)
        ext = np.concatenate([np.full((cuts.shape[0], 1), -np.inf), cuts,
                              np.full((cuts.shape[0], 1), np.inf)], axis=1)
        grid = QuantileGrid(cuts, np.diff(ext, axis=1) <= 0)
        c = d["cusum"]
        cfg = CusumConfig(c["d"], c["k"], c["h"], c["r"], c["form"])
        return cls(t2, grid, cfg, d.get("calibration", {}))


def save_stats(stats: BlockStats, path: str | Path):
    jsonio.dump(stats.to_dict(), path)


def load_stats(path: str | Path) -> BlockStats:
    return BlockStats.from_dict(jsonio.load(path))
