"""Seeded generator for CMAPSS-format files.

The NASA files cannot always be fetched (offline machines, CI). This writes
``train_FDxxx.txt``/``test_FDxxx.txt``/``RUL_FDxxx.txt`` with the same layout
and roughly the same statistics as FD001: one operating condition, one fault
mode, 100 training and 100 test units, lifetimes of 128-362 cycles and
ground-truth test RULs of 7-145 cycles.

Each unit accumulates damage ``D(t) = (exp(k t/T) - 1) / (exp(k) - 1)`` over
its life ``T``; informative sensors drift linearly in ``D`` (scaled by a
per-unit severity) on top of a per-unit offset and Gaussian measurement
noise. Sensors that are flat in the real FD001 are flat here too.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

# (baseline, end-of-life drift, noise std) for sensors 1..21
SENSORS = [
    (518.67, 0.0, 0.0),
    (642.0, 1.6, 0.45),
    (1585.0, 25.0, 5.5),
    (1398.0, 35.0, 7.5),
    (14.62, 0.0, 0.0),
    (21.61, 0.0, 0.0015),
    (554.0, -3.5, 0.7),
    (2388.05, 0.25, 0.06),
    (9045.0, 50.0, 15.0),
    (1.3, 0.0, 0.0),
    (47.3, 1.4, 0.22),
    (522.0, -3.2, 0.6),
    (2388.05, 0.25, 0.06),
    (8135.0, 30.0, 12.0),
    (8.41, 0.12, 0.03),
    (0.03, 0.0, 0.0),
    (392.0, 5.0, 1.3),
    (2388.0, 0.0, 0.0),
    (100.0, 0.0, 0.0),
    (38.9, -0.9, 0.17),
    (23.35, -0.55, 0.1),
]
SETTINGS = [(0.0, 0.0022), (0.0, 0.0003), (100.0, 0.0)]

NOISE_SCALE = 1.4
LIFE_MIN, LIFE_MAX = 128, 362
TEST_RUL_MIN, TEST_RUL_MAX = 7, 145


def _lifetimes(rng: np.random.Generator, n: int) -> np.ndarray:
    life = rng.normal(206.0, 46.0, size=n)
    return np.clip(np.round(life), LIFE_MIN, LIFE_MAX).astype(int)


def _unit_rows(rng: np.random.Generator, unit: int, life: int, observed: int) -> np.ndarray:
    base = np.array([s[0] for s in SENSORS])
    drift = np.array([s[1] for s in SENSORS])
    noise = np.array([s[2] for s in SENSORS])
    k = rng.uniform(3.0, 6.0)
    severity = rng.uniform(0.7, 1.3)
    offset = rng.normal(0.0, 0.6, size=len(SENSORS)) * noise
    t = np.arange(1, observed + 1)
    damage = np.expm1(k * t / life) / np.expm1(k)
    sensors = (
        base + offset + severity * np.outer(damage, drift)
        + NOISE_SCALE * rng.normal(size=(observed, len(SENSORS))) * noise
    )
    settings = np.column_stack([
        mu + rng.normal(size=observed) * sd for mu, sd in SETTINGS
    ])
    return np.column_stack([np.full(observed, unit), t, settings, sensors])


def _format(rows: np.ndarray) -> str:
    lines = []
    for r in rows:
        lines.append(
            f"{int(r[0])} {int(r[1])} " + " ".join(f"{v:.4f}" for v in r[2:])
        )
    return "\n".join(lines) + "\n"


def generate(seed: int = 0, n_train: int = 100, n_test: int = 100):
    """Return (train_rows, test_rows, test_final_rul) as arrays."""
    rng = np.random.default_rng([seed, 1001])
    train = [
        _unit_rows(rng, u, life, life)
        for u, life in enumerate(_lifetimes(rng, n_train), start=1)
    ]
    test, ruls = [], []
    for u, life in enumerate(_lifetimes(rng, n_test), start=1):
        hi = min(TEST_RUL_MAX, life - 31)
        rul = int(rng.integers(TEST_RUL_MIN, hi + 1))
        test.append(_unit_rows(rng, u, life, life - rul))
        ruls.append(rul)
    return np.vstack(train), np.vstack(test), np.array(ruls)


def write_subset(directory, subset: str = "FD001", seed: int = 0, n_train: int = 100, n_test: int = 100) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train, test, ruls = generate(seed, n_train, n_test)
    (directory / f"train_{subset}.txt").write_text(_format(train))
    (directory / f"test_{subset}.txt").write_text(_format(test))
    (directory / f"RUL_{subset}.txt").write_text("\n".join(str(r) for r in ruls) + "\n")
    return directory
