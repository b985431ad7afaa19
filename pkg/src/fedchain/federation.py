"""FedAvg aggregation and the monitor's verify-then-reward gate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import contract as sc
from .ledger import Chain, Transaction
from .model import DimensionMismatch, ModelWeights, predict, rmse, serialize_weights

WEIGHTINGS = ("sample_proportional", "paper_literal", "uniform")
VERIFY_MODES = ("candidate", "merged")


class FederationError(Exception):
    pass


class EmptyUpdates(FederationError, ValueError):
    pass


@dataclass(frozen=True)
class FederationConfig:
    k: int = 4
    weighting: str = "sample_proportional"
    rounds_max: int = 20
    convergence_tol: float = 0.01
    validation_fraction: float = 0.1
    reward_amount: int = 1
    # "merged" scores the candidate averaged 50/50 into the incumbent
    verify_mode: str = "candidate"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be at least 1")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.verify_mode not in VERIFY_MODES:
            raise ValueError(f"verify_mode must be one of {VERIFY_MODES}")
        if self.rounds_max < 0 or self.convergence_tol < 0:
            raise ValueError("rounds_max and convergence_tol must be non-negative")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")


@dataclass(frozen=True)
class WorkerUpdate:
    worker_id: int
    weights: ModelWeights
    n_i: int


def _as_updates(updates) -> list[WorkerUpdate]:
    out = []
    for u in updates:
        if isinstance(u, WorkerUpdate):
            out.append(u)
        else:
            weights, n = u
            out.append(WorkerUpdate(0, weights, n))
    return out


def coefficients(sizes: Sequence[int], weighting: str) -> list[float]:
    k = len(sizes)
    if weighting == "sample_proportional":
        total = sum(sizes)
        return [n / total for n in sizes]
    if weighting == "paper_literal":
        return [n / k for n in sizes]
    if weighting == "uniform":
        return [1.0 / k] * k
    raise ValueError(f"unknown weighting {weighting!r}")


def aggregate(updates, weighting: str = "sample_proportional") -> ModelWeights:
    """Coordinate-wise weighted mean of (w, bias) over worker updates.

    Accepts ``WorkerUpdate`` objects or ``(weights, n_i)`` pairs. Updates are
    summed in a canonical order (worker id, then size, then weight bytes), so
    the result does not depend on list order.
    """
    ups = _as_updates(updates)
    if not ups:
        raise EmptyUpdates("nothing to aggregate")
    d = ups[0].weights.d
    if any(u.weights.d != d for u in ups):
        raise DimensionMismatch("updates disagree on dimension")
    if any(u.n_i < 1 for u in ups):
        raise ValueError("every n_i must be at least 1")
    ups.sort(key=lambda u: (u.worker_id, u.n_i, serialize_weights(u.weights)))
    coef = coefficients([u.n_i for u in ups], weighting)
    w = np.zeros(d)
    b = 0.0
    for c, u in zip(coef, ups):
        w += c * u.weights.w
        b += c * u.weights.bias
    return ModelWeights(w, b)


@dataclass
class VerificationVerdict:
    worker_id: int
    accepted: bool
    rmse_before: float
    rmse_after: float
    reward_tx_id: bytes | None = None


def verify_update(
    candidate: ModelWeights,
    incumbent: ModelWeights,
    X_val,
    y_val,
    cap: float = 125,
    worker_id: int = 0,
    mode: str = "candidate",
) -> VerificationVerdict:
    """Accept iff the candidate strictly lowers validation RMSE."""
    if len(y_val) == 0:
        raise ValueError("validation set is empty")
    scored = candidate
    if mode == "merged":
        scored = aggregate([WorkerUpdate(0, incumbent, 1), WorkerUpdate(1, candidate, 1)], "uniform")
    before = rmse(predict(incumbent, X_val, cap), y_val)
    after = rmse(predict(scored, X_val, cap), y_val)
    return VerificationVerdict(worker_id, after < before, before, after)


def reward_accepted(
    verdict: VerificationVerdict, chain: Chain, recipient: bytes, amount: int = 1
) -> Transaction | None:
    """Submit a treasury mint to ``recipient`` for an accepted verdict."""
    if not verdict.accepted:
        return None
    treasury = chain.treasury
    tx = Transaction.token_transfer(treasury, chain.expected_nonce(treasury), recipient, amount, mint=True)
    chain.submit(tx)
    verdict.reward_tx_id = tx.tx_id
    return tx


def minted_total(state: sc.ContractState) -> int:
    return sum(e.get("amount") for e in state.event_log if e.name == "RewardMinted")
