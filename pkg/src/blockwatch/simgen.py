"""Synthetic block-structured process and fault injection, plus CSV I/O.

The surrogate plant is a linear-Gaussian state-space model per block with
tanh-squashed outputs and weak upstream-to-downstream coupling::

    x_b(t+1) = A_b x_b(t) + sum_c K[b, c] M_bc x_c(t) + w_b(t)
    y_b(t)   = tanh(C_b x_b(t)) + v_b(t)

Block outputs are scattered into the plant-wide column order given by each
block's variable indices, so the default benchmark has the same 31-column
layout and block assignment as the Tennessee Eastman monitoring set.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import jsonio
from .core import TEP_PARTITION, TEP_VARIABLES, BlockPartition, StreamMatrix
from .errors import ConfigError, DataError, SchemaError

FAULT_KINDS = ("step", "random_variation", "slow_drift", "sticking")


@dataclass(frozen=True)
class BlockDynamics:
    A: np.ndarray             # (n, n) state transition
    C: np.ndarray             # (p, n) output map
    variables: tuple          # plant column index of each output
    process_noise: float = 0.6
    measurement_noise: float = 0.2


@dataclass(frozen=True)
class ProcessSpec:
    blocks: tuple             # of BlockDynamics
    coupling: np.ndarray      # (N, N) scalar gains, zero diagonal
    links: tuple              # ((b, c), M_bc) for every nonzero coupling
    variable_names: tuple
    seed: int = 0

    def __post_init__(self):
        rho = spectral_radius(self.transition_matrix())
        if not rho < 0.95:
            raise ConfigError(f"unstable dynamics: spectral radius {rho:.4f} >= 0.95")
        cols = [i for b in self.blocks for i in b.variables]
        if sorted(cols) != list(range(len(self.variable_names))):
            raise ConfigError("block outputs must cover every variable exactly once")

    @property
    def n_variables(self) -> int:
        return len(self.variable_names)

    @property
    def state_dims(self) -> list[int]:
        return [b.A.shape[0] for b in self.blocks]

    def transition_matrix(self) -> np.ndarray:
        dims = self.state_dims
        off = np.concatenate([[0], np.cumsum(dims)])
        F = np.zeros((off[-1], off[-1]))
        for b, blk in enumerate(self.blocks):
            F[off[b]:off[b + 1], off[b]:off[b + 1]] = blk.A
        for (b, c), M in self.links:
            F[off[b]:off[b + 1], off[c]:off[c + 1]] += self.coupling[b, c] * M
        return F

    def partition(self) -> BlockPartition:
        return BlockPartition(tuple((str(i + 1), tuple(b.variables))
                                    for i, b in enumerate(self.blocks)))

    def digest(self) -> str:
        h = hashlib.sha256()
        for b in self.blocks:
            for a in (b.A, b.C, np.asarray(b.variables, float),
                      np.array([b.process_noise, b.measurement_noise])):
                h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.coupling, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]


def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def _stable_matrix(n: int, rng: np.random.Generator, lo=0.6, hi=0.9) -> np.ndarray:
    """Random real matrix with eigenvalue moduli in [lo, hi]."""
    blocks = []
    left = n
    while left > 0:
        if left >= 2 and rng.random() < 0.5:
            mod = rng.uniform(lo, hi)
            ang = rng.uniform(0.1, 0.6)
            blocks.append(mod * np.array([[math.cos(ang), -math.sin(ang)],
                                          [math.sin(ang), math.cos(ang)]]))
            left -= 2
        else:
            blocks.append(np.array([[rng.uniform(lo, hi)]]))
            left -= 1
    D = np.zeros((n, n))
    i = 0
    for blk in blocks:
        k = blk.shape[0]
        D[i:i + k, i:i + k] = blk
        i += k
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ D @ Q.T


def default_spec(seed: int = 0, coupling: float = 0.1,
                 partition: BlockPartition = TEP_PARTITION,
                 state_dims=None, process_noise: float = 0.6,
                 measurement_noise: float = 0.2,
                 variable_names=TEP_VARIABLES,
                 pole_range: tuple = (0.3, 0.7)) -> ProcessSpec:
    """4-block benchmark laid out like the TEP monitoring variables."""
    rng = np.random.default_rng(seed)
    if state_dims is None:
        # about one latent state per three variables, at least two
        state_dims = tuple(max(2, math.ceil(len(idx) / 3)) for _, idx in partition.blocks)
    if len(state_dims) != partition.N:
        raise ConfigError("one state dimension per block is required")
    blocks = []
    for (bid, idx), n in zip(partition.blocks, state_dims):
        A = _stable_matrix(n, rng, *pole_range)
        C = rng.standard_normal((len(idx), n))
        C /= np.linalg.norm(C, axis=1, keepdims=True)  # unit-gain outputs
        blocks.append(BlockDynamics(A, C, tuple(idx), process_noise, measurement_noise))
    N = partition.N
    K = np.zeros((N, N))
    links = []
    for b in range(1, N):
        K[b, b - 1] = coupling
        M = rng.standard_normal((state_dims[b], state_dims[b - 1]))
        links.append(((b, b - 1), M / max(np.linalg.norm(M, 2), 1e-12)))
    n_vars = max(max(i) for _, i in partition.blocks) + 1
    names = tuple(variable_names[:n_vars]) if len(variable_names) >= n_vars else \
        tuple(f"x{i:02d}" for i in range(n_vars))
    return ProcessSpec(tuple(blocks), K, tuple(links), names, seed)


def generate(spec: ProcessSpec, T: int, seed: int | None = None,
             burn_in: int = 500) -> StreamMatrix:
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    F = spec.transition_matrix()
    dims = spec.state_dims
    off = np.concatenate([[0], np.cumsum(dims)])
    q = np.concatenate([np.full(n, b.process_noise) for n, b in zip(dims, spec.blocks)])
    total = T + burn_in
    W = rng.standard_normal((total, off[-1])) * q
    X = np.empty((total, off[-1]))
    x = np.zeros(off[-1])
    for t in range(total):
        X[t] = x
        x = F @ x + W[t]
    X = X[burn_in:]
    Y = np.empty((T, spec.n_variables))
    for b, blk in enumerate(spec.blocks):
        out = np.tanh(X[:, off[b]:off[b + 1]] @ blk.C.T)
        out += blk.measurement_noise * rng.standard_normal(out.shape)
        Y[:, list(blk.variables)] = out
    return StreamMatrix(spec.variable_names, Y, 1.0,
                        {"seed": spec.seed if seed is None else seed,
                         "spec_hash": spec.digest()})


# ---------------------------------------------------------------------------
# faults


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    targets: tuple
    magnitude: float
    onset: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ConfigError(f"unknown fault kind {self.kind!r}")
        if self.magnitude < 0:
            raise ConfigError("fault magnitude must be >= 0")
        if self.onset < 0:
            raise ConfigError("fault onset must be >= 0")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = list(self.targets)
        return d


def inject_fault(stream: StreamMatrix, fault: FaultSpec,
                 in_control_stdevs) -> StreamMatrix:
    """Apply ``fault`` to the target columns from ``fault.onset`` on.

    Magnitudes are multiples of each target's in-control stdev.
    """
    T = stream.n_samples
    if fault.onset >= T:
        raise ConfigError(f"onset {fault.onset} is outside a stream of {T} samples")
    if any(not 0 <= j < stream.n_variables for j in fault.targets):
        raise ConfigError(f"fault targets {fault.targets} out of range")
    sd = np.broadcast_to(np.asarray(in_control_stdevs, dtype=np.float64),
                         (stream.n_variables,))
    Y = np.array(stream.values)
    if fault.magnitude == 0:
        return stream.with_values(Y)
    cols = list(fault.targets)
    on = fault.onset
    amp = fault.magnitude * sd[cols]
    if fault.kind == "step":
        Y[on:, cols] += amp
    elif fault.kind == "random_variation":
        rng = np.random.default_rng(fault.seed)
        Y[on:, cols] += rng.standard_normal((T - on, len(cols))) * amp
    elif fault.kind == "slow_drift":
        span = max(T - 1 - on, 1)
        ramp = np.arange(T - on) / span
        Y[on:, cols] += ramp[:, None] * amp
    elif fault.kind == "sticking":
        Y[on:, cols] = Y[on, cols]
    out = stream.with_values(Y)
    out.meta.update({"fault": fault.to_dict(), "onset": fault.onset})
    return out


# ---------------------------------------------------------------------------
# CSV


def sidecar_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def write_csv(stream: StreamMatrix, path: str | Path, meta: dict | None = None):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", *stream.variable_names])
        for t, row in enumerate(stream.values):
            w.writerow([t, *(format(float(v), ".17g") for v in row)])
    if meta is not None:
        jsonio.dump(meta, sidecar_path(path))


def load_csv(path: str | Path, expected_names=None,
             sample_period: float = 1.0) -> StreamMatrix:
    """Read a measurement CSV; a ``<name>.meta.json`` sidecar lands in ``meta``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such data file: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0].strip() != "sample_index":
            raise SchemaError(f"{path}: first column must be 'sample_index'")
        names = [h.strip() for h in header[1:]]
        if expected_names is not None and list(expected_names) != names:
            missing = [n for n in expected_names if n not in names]
            extra = [n for n in names if n not in expected_names]
            raise SchemaError(f"{path}: header mismatch; missing columns {missing}, "
                              f"unexpected columns {extra}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, "
                                f"got {len(rec)}")
            try:
                vals = [float(v) for v in rec[1:]]
                int(rec[0])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = jsonio.load(side)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return StreamMatrix(tuple(names), values, sample_period, meta)


def lag1_autocorrelation(values: np.ndarray) -> np.ndarray:
    X = np.asarray(values, dtype=np.float64)
    Z = X - X.mean(axis=0)
    return (Z[1:] * Z[:-1]).sum(axis=0) / (Z * Z).sum(axis=0)


def half_moment_z(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Standardized first/second-half differences of mean and stdev.

    Each difference is divided by its standard error under an AR(1)
    approximation, so |z| < 3 is a per-variable 3-sigma stationarity check.
    """
    X = np.asarray(values, dtype=np.float64)
    T = X.shape[0]
    h = T // 2
    a, b = X[:h], X[h:2 * h]
    sd = X.std(axis=0)
    rho = np.clip(lag1_autocorrelation(X), -0.99, 0.99)
    tau = (1 + rho) / (1 - rho)
    se_mean = sd * np.sqrt(2 * tau / h)
    # stdev of a sample stdev for Gaussian AR(1): sd * sqrt((1 + rho^2) / (1 - rho^2) / (2n))
    tau2 = (1 + rho ** 2) / (1 - rho ** 2)
    se_sd = sd * np.sqrt(2 * tau2 / (2 * h))
    z_mean = (a.mean(axis=0) - b.mean(axis=0)) / se_mean
    z_sd = (a.std(axis=0) - b.std(axis=0)) / se_sd
    return z_mean, z_sd
