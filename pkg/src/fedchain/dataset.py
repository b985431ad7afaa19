"""CMAPSS ingestion, feature projection, RUL labelling and worker shards.

Rows are 26 whitespace-separated numbers: unit, cycle, three operating
settings and 21 sensors. Datasets keep rows sorted by (unit, cycle) as numpy
arrays; per-unit sequences are contiguous slices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

N_COLUMNS = 26
SUBSETS = ("FD001", "FD002", "FD003", "FD004")
DEFAULT_RUL_CAP = 125

# picked columns, as listed for the 16-feature model input
PICKED_COLUMNS = (3, 4, 6, 7, 8, 11, 12, 13, 15, 16, 17, 18, 19, 21, 24, 25)

# positions into the 26-value row under each reading of the column list
COLUMN_MAPS: dict[str, tuple[int, ...]] = {
    "one_based": tuple(c - 1 for c in PICKED_COLUMNS),
    "zero_based": PICKED_COLUMNS,
}
DEFAULT_COLUMN_MAP = "one_based"


class DataError(Exception):
    pass


class MalformedRow(DataError):
    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno


class RulCountMismatch(DataError):
    pass


class InvalidWorkerCount(DataError, ValueError):
    pass


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> NormStats:
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


@dataclass(frozen=True)
class Dataset:
    split: str
    units: np.ndarray       # (n,) int
    cycles: np.ndarray      # (n,) int
    raw: np.ndarray         # (n, 26) float, source rows
    features: np.ndarray    # (n, 16) float
    labels: np.ndarray | None = None
    final_rul: dict[int, int] = field(default_factory=dict)
    norm_stats: NormStats | None = None
    column_map: str = DEFAULT_COLUMN_MAP

    def __len__(self) -> int:
        return len(self.units)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def unit_ids(self) -> list[int]:
        return [int(u) for u in np.unique(self.units)]

    def unit_mask(self, units) -> np.ndarray:
        return np.isin(self.units, np.asarray(list(units)))

    def subset(self, units) -> Dataset:
        m = self.unit_mask(units)
        return replace(
            self,
            units=self.units[m], cycles=self.cycles[m], raw=self.raw[m], features=self.features[m],
            labels=None if self.labels is None else self.labels[m],
            final_rul={u: r for u, r in self.final_rul.items() if u in set(int(x) for x in units)},
        )

    def last_cycles(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for u, c in zip(self.units.tolist(), self.cycles.tolist()):
            out[u] = c
        return out


def parse_rows(path: str | Path) -> np.ndarray:
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != N_COLUMNS:
                raise MalformedRow(path, lineno, f"expected {N_COLUMNS} fields, found {len(fields)}")
            try:
                rows.append([float(x) for x in fields])
            except ValueError as exc:
                raise MalformedRow(path, lineno, f"non-numeric field ({exc})") from None
    if not rows:
        raise DataError(f"{path}: no rows")
    return np.asarray(rows, dtype=float)


def select_features(record, column_map: str = DEFAULT_COLUMN_MAP) -> np.ndarray:
    """Project a 26-value row (or an (n, 26) array of rows) onto the 16 picked columns."""
    idx = list(COLUMN_MAPS[column_map])
    arr = np.asarray(record, dtype=float)
    return arr[..., idx]


def _build(split: str, raw: np.ndarray, path, column_map: str) -> Dataset:
    for col, name in ((0, "unit"), (1, "cycle")):
        vals = raw[:, col]
        if np.any(vals != np.round(vals)) or np.any(vals < 1):
            raise DataError(f"{path}: {name} ids must be positive integers")
    order = np.lexsort((raw[:, 1], raw[:, 0]))
    raw = raw[order]
    units = raw[:, 0].astype(int)
    cycles = raw[:, 1].astype(int)
    starts = np.flatnonzero(np.r_[True, units[1:] != units[:-1]])
    for s, e in zip(starts, np.r_[starts[1:], len(units)]):
        expected = np.arange(1, e - s + 1)
        if not np.array_equal(cycles[s:e], expected):
            raise DataError(f"{path}: unit {units[s]} cycles are not 1..{e - s} without gaps")
    return Dataset(split, units, cycles, raw, select_features(raw, column_map), column_map=column_map)


def load_split(path, split: str, column_map: str = DEFAULT_COLUMN_MAP) -> Dataset:
    return _build(split, parse_rows(path), path, column_map)


def load_rul(path: str | Path) -> list[int]:
    out = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 1:
                raise MalformedRow(path, lineno, f"expected 1 field, found {len(fields)}")
            try:
                out.append(int(float(fields[0])))
            except ValueError:
                raise MalformedRow(path, lineno, "non-numeric RUL") from None
    return out


def load_cmapss(train_path, test_path, rul_path, column_map: str = DEFAULT_COLUMN_MAP) -> tuple[Dataset, Dataset]:
    train = load_split(train_path, "train", column_map)
    test = load_split(test_path, "test", column_map)
    ruls = load_rul(rul_path)
    test_units = test.unit_ids()
    if len(ruls) != len(test_units):
        raise RulCountMismatch(
            f"{rul_path}: {len(ruls)} RUL values for {len(test_units)} test units"
        )
    test = replace(test, final_rul=dict(zip(test_units, ruls)))
    return train, test


def subset_paths(data_dir, subset: str) -> tuple[Path, Path, Path]:
    if subset not in SUBSETS:
        raise DataError(f"unknown subset {subset!r}; expected one of {SUBSETS}")
    d = Path(data_dir)
    return d / f"train_{subset}.txt", d / f"test_{subset}.txt", d / f"RUL_{subset}.txt"


def load_subset(data_dir, subset: str = "FD001", column_map: str = DEFAULT_COLUMN_MAP):
    paths = subset_paths(data_dir, subset)
    for p in paths:
        if not p.exists():
            raise DataError(f"missing data file {p}")
    return load_cmapss(*paths, column_map=column_map)


def compute_rul_labels(ds: Dataset, cap: int = DEFAULT_RUL_CAP) -> Dataset:
    """Label each row ``min(last_cycle - cycle, cap)``.

    For the test split the last observed cycle is offset by the unit's final
    RUL from the ground-truth file, and the same cap applies.
    """
    if cap < 1:
        raise ValueError("cap must be positive")
    last = ds.last_cycles()
    end = np.array([last[u] + ds.final_rul.get(u, 0) for u in ds.units.tolist()])
    labels = np.minimum(end - ds.cycles, cap).astype(float)
    return replace(ds, labels=labels)


def fit_norm_stats(train: Dataset) -> NormStats:
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    # round-off on a constant column must not turn it into noise
    std[std <= 1e-9 * np.maximum(1.0, np.abs(mean))] = 0.0
    return NormStats(mean, std)


def normalize(ds: Dataset, stats: NormStats) -> Dataset:
    std = stats.std
    safe = np.where(std > 0, std, 1.0)
    z = np.where(std > 0, (ds.features - stats.mean) / safe, 0.0)
    return replace(ds, features=z, norm_stats=stats)


@dataclass(frozen=True)
class WorkerShard:
    worker_id: int
    units: tuple[int, ...]
    n_i: int


def partition_workers(ds: Dataset, k: int, seed: int, units=None) -> list[WorkerShard]:
    """Shuffle unit ids with ``seed`` and deal them round-robin to ``k`` workers."""
    pool = sorted(int(u) for u in (units if units is not None else ds.unit_ids()))
    if not 1 <= k <= len(pool):
        raise InvalidWorkerCount(f"K must be in [1, {len(pool)}], got {k}")
    order = np.random.default_rng(seed).permutation(len(pool))
    dealt: list[list[int]] = [[] for _ in range(k)]
    for pos, i in enumerate(order):
        dealt[pos % k].append(pool[i])
    counts = dict(zip(*np.unique(ds.units, return_counts=True)))
    return [
        WorkerShard(w + 1, tuple(sorted(us)), int(sum(counts[u] for u in us)))
        for w, us in enumerate(dealt)
    ]


def holdout_units(ds: Dataset, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Split unit ids into (validation, remaining); at least one unit each side."""
    if not 0 < fraction < 1:
        raise ValueError("validation fraction must be in (0, 1)")
    pool = ds.unit_ids()
    n_val = min(max(1, round(fraction * len(pool))), len(pool) - 1)
    perm = np.random.default_rng([seed, 0x7A11D]).permutation(len(pool))
    val = sorted(pool[i] for i in perm[:n_val])
    rest = sorted(pool[i] for i in perm[n_val:])
    return val, rest


def save_cache(path, train: Dataset, test: Dataset) -> None:
    """Write normalized features, labels and stats to an ``.npz`` cache."""
    stats = train.norm_stats
    np.savez(
        path,
        train_units=train.units, train_cycles=train.cycles, train_x=train.features, train_y=train.labels,
        test_units=test.units, test_cycles=test.cycles, test_x=test.features, test_y=test.labels,
        meta=np.array(json.dumps({
            "column_map": train.column_map,
            "stats": stats.to_dict() if stats else None,
            "final_rul": {str(k): v for k, v in test.final_rul.items()},
        })),
    )


def feature_moments(ds: Dataset) -> list[tuple[int, float, float]]:
    idx = COLUMN_MAPS[ds.column_map]
    return [
        (idx[j] + 1, float(ds.features[:, j].mean()), float(ds.features[:, j].std()))
        for j in range(ds.n_features)
    ]
