"""Data model shared by every stage: measurement streams, block partitions,
standardization and sliding windows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, SchemaError

#: Columns whose fitted stdev falls below this are treated as constant.
CONSTANT_TOL = 1e-12


@dataclass(frozen=True)
class StreamMatrix:
    """Time-indexed matrix of process measurements.

    Rows are samples, columns are named variables.  ``meta`` carries optional
    provenance such as a fault onset read from a sidecar file.
    """

    variable_names: tuple[str, ...]
    values: np.ndarray
    sample_period: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.variable_names)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise SchemaError(f"values must be 2-D, got shape {values.shape}")
        if len(names) != values.shape[1]:
            raise SchemaError(
                f"{len(names)} variable names for {values.shape[1]} columns")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate variable names: {dup}")
        if not np.all(np.isfinite(values)):
            bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
            raise DataError(f"non-finite values in rows {bad[:10].tolist()}")
        if not self.sample_period > 0:
            raise SchemaError("sample_period must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "variable_names", names)
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_variables(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "StreamMatrix":
        return StreamMatrix(self.variable_names, values, self.sample_period,
                            dict(self.meta))

    def rows(self, start: int | None = None, stop: int | None = None) -> "StreamMatrix":
        return self.with_values(self.values[start:stop])


@dataclass(frozen=True)
class BlockPartition:
    """Ordered assignment of column indices to monitoring blocks."""

    blocks: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        blocks = tuple((str(bid), tuple(int(i) for i in idx))
                       for bid, idx in self.blocks)
        if not blocks:
            raise SchemaError("a partition needs at least one block")
        seen: set[int] = set()
        ids = [bid for bid, _ in blocks]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"duplicate block ids: {ids}")
        for bid, idx in blocks:
            if not idx:
                raise SchemaError(f"block {bid!r} is empty")
            if min(idx) < 0:
                raise SchemaError(f"block {bid!r} has a negative index")
            overlap = seen.intersection(idx)
            if overlap or len(set(idx)) != len(idx):
                raise SchemaError(
                    f"block {bid!r} repeats variables {sorted(overlap) or idx}")
            seen.update(idx)
        object.__setattr__(self, "blocks", blocks)

    @property
    def N(self) -> int:
        return len(self.blocks)

    @property
    def block_ids(self) -> list[str]:
        return [bid for bid, _ in self.blocks]

    @property
    def covered(self) -> list[int]:
        return [i for _, idx in self.blocks for i in idx]

    @classmethod
    def from_dict(cls, mapping: dict) -> "BlockPartition":
        return cls(tuple((k, tuple(v)) for k, v in mapping.items()))

    def to_dict(self) -> dict:
        return {bid: list(idx) for bid, idx in self.blocks}

    @classmethod
    def single(cls, n_variables: int, block_id: str = "1") -> "BlockPartition":
        return cls(((block_id, tuple(range(n_variables))),))


# Block assignment of the 31 monitored Tennessee Eastman variables.
TEP_PARTITION = BlockPartition((
    ("1", (0, 1, 2, 4, 5, 22, 23, 24)),
    ("2", (6, 7, 8, 20, 29)),
    ("3", (9, 10, 11, 12, 13, 19, 21, 26, 27, 30)),
    ("4", (3, 14, 15, 16, 17, 18, 25, 28)),
))

TEP_VARIABLES = (
    "FI-1001", "FI-1002", "FI-1003", "FI-1004", "FI-1005", "FI-1006",
    "PI-1001", "LI-1001", "TI-1001", "FI-1007", "TI-1002", "LI-1002",
    "PI-1002", "FI-1008", "LI-1003", "PI-1003", "FI-1009", "TI-1003",
    "FI-1010", "JI-1001", "TI-1004", "TI-1005", "FIC-1001", "FIC-1002",
    "FIC-1003", "FIC-1004", "FV-1001", "FIC-1005", "FIC-1006", "FIC-1007",
    "FIC-1008",
)


@dataclass(frozen=True)
class Standardizer:
    variable_names: tuple[str, ...]
    means: np.ndarray
    stdevs: np.ndarray
    constant: np.ndarray

    def to_dict(self) -> dict:
        return {"variable_names": list(self.variable_names),
                "means": self.means.tolist(),
                "stdevs": self.stdevs.tolist(),
                "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(tuple(d["variable_names"]),
                   np.asarray(d["means"], dtype=np.float64),
                   np.asarray(d["stdevs"], dtype=np.float64),
                   np.asarray(d["constant"], dtype=bool))


def fit_standardizer(data: StreamMatrix) -> Standardizer:
    """Per-column mean and population stdev.

    Constant columns keep a unit stdev and are flagged, so a stuck sensor
    still flows through monitoring instead of raising here.
    """
    if data.n_samples < 2:
        raise DataError("standardizer fit needs at least 2 rows")
    means = data.values.mean(axis=0)
    stdevs = data.values.std(axis=0)
    constant = stdevs < CONSTANT_TOL
    stdevs = np.where(constant, 1.0, stdevs)
    return Standardizer(data.variable_names, means, stdevs, constant)


def _check_schema(s: Standardizer, data: StreamMatrix):
    if tuple(data.variable_names) != tuple(s.variable_names):
        missing = sorted(set(s.variable_names) - set(data.variable_names))
        extra = sorted(set(data.variable_names) - set(s.variable_names))
        raise SchemaError(
            f"column mismatch: missing {missing}, unexpected {extra}"
            if missing or extra else "column order differs from the fitted data")


def apply_standardizer(s: Standardizer, data: StreamMatrix) -> StreamMatrix:
    _check_schema(s, data)
    return data.with_values((data.values - s.means) / s.stdevs)


def invert_standardizer(s: Standardizer, data: StreamMatrix) -> StreamMatrix:
    _check_schema(s, data)
    return data.with_values(data.values * s.stdevs + s.means)


def partition(data: StreamMatrix, p: BlockPartition) -> list[StreamMatrix]:
    """Split ``data`` column-wise into one stream per block, in listed order."""
    out = []
    for bid, idx in p.blocks:
        if max(idx) >= data.n_variables:
            raise SchemaError(
                f"block {bid!r} references column {max(idx)} but data has "
                f"{data.n_variables} columns")
        cols = list(idx)
        out.append(StreamMatrix(tuple(data.variable_names[i] for i in cols),
                                data.values[:, cols], data.sample_period,
                                dict(data.meta)))
    return out


@dataclass(frozen=True)
class WindowedDataset:
    """Autoencoding windows; each target is its own input window.

    ``windows`` is a strided read-only view of shape (n, L, p).
    """

    windows: np.ndarray
    window_len: int
    stride: int

    @property
    def targets(self) -> np.ndarray:
        return self.windows

    def __len__(self) -> int:
        return self.windows.shape[0]


def sliding_windows(values: np.ndarray, L: int, stride: int = 1) -> np.ndarray:
    """All length-``L`` windows of a (T, p) array as an (n, L, p) view."""
    view = np.lib.stride_tricks.sliding_window_view(values, L, axis=0)
    # sliding_window_view appends the window axis last: (T-L+1, p, L)
    return view.transpose(0, 2, 1)[::stride]


def make_windows(data: StreamMatrix | np.ndarray, L: int,
                 stride: int = 1) -> WindowedDataset:
    values = data.values if isinstance(data, StreamMatrix) else np.asarray(data)
    if L < 1 or stride < 1:
        raise ValueError("window length and stride must be positive")
    if values.shape[0] < L:
        raise DataError(
            f"stream of {values.shape[0]} samples is shorter than window {L}")
    return WindowedDataset(sliding_windows(values, L, stride), L, stride)


def chronological_split(data: StreamMatrix, fraction: float
                        ) -> tuple[StreamMatrix, StreamMatrix]:
    cut = int(round(fraction * data.n_samples))
    return data.rows(0, cut), data.rows(cut, None)


def concat_columns(parts: Sequence[StreamMatrix]) -> StreamMatrix:
    names = tuple(n for p in parts for n in p.variable_names)
    return StreamMatrix(names, np.hstack([p.values for p in parts]),
                        parts[0].sample_period)
