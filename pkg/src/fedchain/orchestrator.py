"""End-to-end federated rounds on the simulated chain.

One round, in order:

1. every worker trains locally from the current global weights;
2. serializes them, stores the blob, RSA-encrypts the rendered hash link;
3. submits an ``UpdateModelHash`` transaction;
4. a miner mines the pending uploads;
5. the monitor reads each ciphertext back from the contract, decrypts it,
   fetches and deserializes the blob and scores it on its validation units;
6. accepted workers are sent a reward mint;
7. accepted updates are averaged (the incumbent is kept if none pass);
8. the global blob is stored and a ``PublishGlobalModel`` transaction submitted;
9. a block commits rewards and the publish;
10. every worker adopts the published global model, read back from the chain.

Everything runs on a single coordinator; the seed fixes the whole run.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import contract as sc
from . import crypto
from .blobstore import BlobStore, ContentHash
from .config import RunConfig, dump_config
from .dataset import (
    Dataset,
    WorkerShard,
    compute_rul_labels,
    fit_norm_stats,
    holdout_units,
    load_subset,
    normalize,
    partition_workers,
)
from .federation import (
    VerificationVerdict,
    WorkerUpdate,
    aggregate,
    reward_accepted,
    verify_update,
)
from .ledger import Chain, Transaction, miner_id
from .model import (
    ModelWeights,
    deserialize_weights,
    init_weights,
    predict,
    rmse,
    serialize_weights,
    train_local,
)

log = logging.getLogger(__name__)

CONVERGENCE_PATIENCE = 3
RUN_LOG_COLUMNS = ["round", "worker_id", "accepted", "rmse_before", "rmse_after", "global_rmse", "tokens_total"]


class RoundAborted(RuntimeError):
    def __init__(self, round_index: int, step: str, cause: Exception):
        super().__init__(f"round {round_index} aborted at step '{step}': {cause}")
        self.round_index = round_index
        self.step = step
        self.__cause__ = cause


class MissingArtifacts(FileNotFoundError):
    pass


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def worker_address(worker_id: int) -> bytes:
    return sc.address_from_label(f"worker-{worker_id}")


@dataclass
class WorkerEntry:
    worker_id: int
    address: bytes
    cid: str
    tx_id: bytes
    verdict: VerificationVerdict


@dataclass
class RoundRecord:
    round_index: int
    workers: list[WorkerEntry]
    global_cid: str
    global_val_rmse: float
    global_test_rmse: float
    heights: list[int]
    new_global: bool

    @property
    def accepted(self) -> int:
        return sum(e.verdict.accepted for e in self.workers)


@dataclass
class Worker:
    worker_id: int
    shard: WorkerShard
    X: np.ndarray
    y: np.ndarray
    current: ModelWeights | None = None

    @property
    def address(self) -> bytes:
        return worker_address(self.worker_id)


@dataclass
class Simulation:
    """All six components of the system, wired together in one process."""

    config: RunConfig
    train: Dataset
    test: Dataset
    keys: crypto.KeyPair
    chain: Chain
    store: BlobStore
    workers: list[Worker]
    val_X: np.ndarray
    val_y: np.ndarray
    global_weights: ModelWeights
    global_cid: str
    rounds: list[RoundRecord] = field(default_factory=list)
    initial_test_rmse: float = math.nan
    initial_val_rmse: float = math.nan
    _blocks_mined: int = 0
    _miner_rng: random.Random | None = None

    @classmethod
    def setup(cls, cfg: RunConfig, train: Dataset | None = None, test: Dataset | None = None) -> Simulation:
        if train is None or test is None:
            train, test = load_subset(cfg.data_dir, cfg.subset, cfg.column_map)
        train = compute_rul_labels(train, cfg.rul_cap)
        test = compute_rul_labels(test, cfg.rul_cap)
        stats = fit_norm_stats(train)
        train, test = normalize(train, stats), normalize(test, stats)

        val_units, worker_units = holdout_units(train, cfg.federation.validation_fraction, cfg.seed)
        shards = partition_workers(train, cfg.k, cfg.seed, units=worker_units)
        workers = []
        for shard in shards:
            m = train.unit_mask(shard.units)
            workers.append(Worker(shard.worker_id, shard, train.features[m], train.labels[m]))
        vm = train.unit_mask(val_units)

        if cfg.key_dir is not None:
            keys = crypto.load_keypair(cfg.key_dir)
        else:
            keys = crypto.generate_keypair(cfg.rsa_bits, seed=derive_seed(cfg.seed, 0xC0DE))

        chain = Chain(difficulty=cfg.difficulty, capacity=cfg.block_capacity)
        store = BlobStore()
        initial = init_weights(train.n_features, derive_seed(cfg.seed, 0), train.labels[vm])
        sim = cls(
            config=cfg, train=train, test=test, keys=keys, chain=chain, store=store,
            workers=workers, val_X=train.features[vm], val_y=train.labels[vm],
            global_weights=initial, global_cid=store.put(serialize_weights(initial)).render(),
            _miner_rng=random.Random(derive_seed(cfg.seed, 0x313E)),
        )
        for w in workers:
            w.current = initial
        sim.initial_test_rmse = sim.test_rmse(initial)
        sim.initial_val_rmse = sim.val_rmse(initial)
        return sim

    # -- helpers ----------------------------------------------------------------

    def val_rmse(self, weights: ModelWeights) -> float:
        return rmse(predict(weights, self.val_X, self.config.rul_cap), self.val_y)

    def test_rmse(self, weights: ModelWeights) -> float:
        return rmse(predict(weights, self.test.features, self.config.rul_cap), self.test.labels)

    def next_miner(self) -> bytes:
        n = self.config.n_miners
        if self.config.miner_schedule == "random":
            j = self._miner_rng.randrange(n)
        else:
            j = self._blocks_mined % n
        self._blocks_mined += 1
        return miner_id(j + 1)

    def mine_pending(self) -> list[int]:
        heights = []
        while self.chain.mempool:
            heights.append(self.chain.mine_block(self.next_miner()).height)
        return heights

    # -- one round --------------------------------------------------------------

    def run_round(self) -> RoundRecord:
        r = len(self.rounds) + 1
        cfg = self.config
        step = "train"
        try:
            uploads = {}
            heights: list[int] = []
            for w in self.workers:
                step = f"train worker {w.worker_id}"
                tcfg = dataclasses.replace(cfg.train, seed=derive_seed(cfg.seed, w.worker_id, r))
                local = train_local(w.current, w.X, w.y, tcfg)

                step = f"upload worker {w.worker_id}"
                cid = self.store.put(serialize_weights(local)).render()
                slot = self.chain.state.upload_counts.get(w.address, 0) + 1
                rng = random.Random(derive_seed(cfg.seed, w.worker_id, r, 0xE))
                ct = crypto.encrypt(cid.encode(), self.keys.public_key, rng)
                tx = Transaction.update_model_hash(w.address, self.chain.expected_nonce(w.address), ct.to_bytes())
                self.chain.submit(tx)
                uploads[w.worker_id] = (cid, tx, slot)
                if cfg.mine_per_upload:
                    heights += self.mine_pending()

            step = "mine uploads"
            heights += self.mine_pending()

            step = "verify"
            entries = []
            accepted: list[WorkerUpdate] = []
            for w in self.workers:
                cid, tx, slot = uploads[w.worker_id]
                candidate = self.read_update(w.address, slot)
                if candidate is None:
                    before = self.val_rmse(self.global_weights)
                    verdict = VerificationVerdict(w.worker_id, False, before, math.inf)
                else:
                    verdict = verify_update(
                        candidate, self.global_weights, self.val_X, self.val_y,
                        cfg.rul_cap, w.worker_id, cfg.federation.verify_mode,
                    )
                if verdict.accepted:
                    step = f"reward worker {w.worker_id}"
                    reward_accepted(verdict, self.chain, w.address, cfg.federation.reward_amount)
                    accepted.append(WorkerUpdate(w.worker_id, candidate, w.shard.n_i))
                entries.append(WorkerEntry(w.worker_id, w.address, cid, tx.tx_id, verdict))

            step = "aggregate"
            new_global = bool(accepted)
            if new_global:
                self.global_weights = aggregate(accepted, cfg.federation.weighting)
            step = "publish"
            self.global_cid = self.store.put(serialize_weights(self.global_weights)).render()
            monitor = self.chain.publisher
            self.chain.submit(Transaction.publish_global(monitor, self.chain.expected_nonce(monitor), self.global_cid))
            step = "mine rewards"
            heights += self.mine_pending()

            step = "distribute"
            published = self.chain.state.global_model_history[-1]
            adopted = deserialize_weights(self.store.get(published))
            for w in self.workers:
                w.current = adopted
        except Exception as exc:
            raise RoundAborted(r, step, exc) from exc

        rec = RoundRecord(
            r, entries, self.global_cid, self.val_rmse(adopted), self.test_rmse(adopted), heights, new_global,
        )
        self.rounds.append(rec)
        log.info(
            "round %d: %d/%d accepted, val %.3f, test %.3f",
            r, rec.accepted, len(entries), rec.global_val_rmse, rec.global_test_rmse,
        )
        return rec

    def read_update(self, address: bytes, index: int) -> ModelWeights | None:
        """Monitor side: upload ``index`` of ``address``, decrypted and fetched.

        ``None`` when the upload never landed (its transaction failed).
        """
        try:
            payload = bytes.fromhex(sc.get_model_hash(self.chain.state, address, index))
        except sc.NotFound:
            return None
        cid = crypto.decrypt(payload, self.keys.private_key).decode("ascii")
        return deserialize_weights(self.store.get(ContentHash.parse(cid)))

    # -- full run ---------------------------------------------------------------

    def run(self) -> dict:
        cfg = self.config
        tol = cfg.federation.convergence_tol
        calm = 0
        prev = self.initial_val_rmse
        for _ in range(cfg.federation.rounds_max):
            rec = self.run_round()
            if math.isinf(tol):
                break
            calm = calm + 1 if abs(rec.global_val_rmse - prev) < tol else 0
            prev = rec.global_val_rmse
            if calm >= CONVERGENCE_PATIENCE:
                break
        return self.summary()

    def summary(self) -> dict:
        state = self.chain.state
        preds = predict(self.global_weights, self.test.features, self.config.rul_cap)
        last = np.r_[self.test.units[1:] != self.test.units[:-1], True]
        return {
            "subset": self.config.subset,
            "seed": self.config.seed,
            "k": self.config.k,
            "rounds": len(self.rounds),
            "initial_test_rmse": self.initial_test_rmse,
            "round_test_rmse": [r.global_test_rmse for r in self.rounds],
            "final_test_rmse": self.test_rmse(self.global_weights),
            "final_last_cycle_rmse": rmse(preds[last], self.test.labels[last]),
            "accepted_updates": sum(r.accepted for r in self.rounds),
            "tokens_minted": state.total_minted,
            "balances": {
                str(w.worker_id): state.balance_of(w.address) for w in self.workers
            },
            "blocks": len(self.chain.blocks),
            "chain_valid": bool(self.chain.validate()),
            "global_cid": self.global_cid,
        }

    # -- outputs ----------------------------------------------------------------

    def write_outputs(self, out_dir: str | Path | None = None) -> Path:
        out = Path(out_dir or self.config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(dump_config(self.config))
        write_run_log(out / "run_log.csv", self.rounds, self.config.federation.reward_amount)
        self.chain.save(out / "chain.json")
        (out / "global_weights.fcw").write_bytes(serialize_weights(self.global_weights))
        self.store.dump(out / "blobs")
        write_predictions(out / "predictions", self.global_weights, self.test, self.config.rul_cap)
        crypto.save_keypair(self.keys, out / "keys")
        summary = self.summary()
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        (out / "summary.txt").write_text(format_summary(summary))
        return out


def write_run_log(path: Path, rounds: list[RoundRecord], reward_amount: int = 1) -> None:
    tokens = 0
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(RUN_LOG_COLUMNS)
        for rec in rounds:
            tokens += rec.accepted * reward_amount
            for e in rec.workers:
                v = e.verdict
                wr.writerow([
                    rec.round_index, e.worker_id, int(v.accepted), f"{v.rmse_before:.6f}",
                    f"{v.rmse_after:.6f}", f"{rec.global_test_rmse:.6f}", tokens,
                ])


def write_predictions(directory: Path, weights: ModelWeights, test: Dataset, cap: float) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    preds = predict(weights, test.features, cap)
    paths = []
    for u in test.unit_ids():
        m = test.units == u
        path = directory / f"unit_{u:03d}.csv"
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["unit", "cycle", "actual_rul", "predicted_rul"])
            for c, a, p in zip(test.cycles[m], test.labels[m], preds[m]):
                wr.writerow([u, int(c), f"{a:.6f}", repr(float(p))])
        paths.append(path)
    return paths


def format_summary(s: dict) -> str:
    lines = [
        f"subset {s['subset']}  K={s['k']}  seed={s['seed']}  rounds={s['rounds']}",
        f"initial test RMSE   {s['initial_test_rmse']:.3f}",
    ]
    for i, v in enumerate(s["round_test_rmse"], start=1):
        lines.append(f"round {i:>3} test RMSE {v:.3f}")
    lines += [
        f"final test RMSE     {s['final_test_rmse']:.3f}",
        f"last-cycle RMSE     {s['final_last_cycle_rmse']:.3f}",
        f"accepted updates    {s['accepted_updates']}",
        f"tokens minted       {s['tokens_minted']}",
        "balances            " + ", ".join(f"worker {k}: {v}" for k, v in sorted(s["balances"].items())),
        f"blocks              {s['blocks']}",
        f"chain valid         {s['chain_valid']}",
        f"global model        {s['global_cid']}",
    ]
    return "\n".join(lines) + "\n"


def run(cfg: RunConfig, write: bool = True) -> tuple[Simulation, dict]:
    sim = Simulation.setup(cfg)
    try:
        sim.run()
    finally:
        if write:
            sim.write_outputs()
    return sim, sim.summary()


def report(run_dir: str | Path) -> dict:
    """Rebuild the summary table from a run directory's artifacts.

    RMSE is recomputed from the prediction CSVs and balances from a replay of
    the exported chain.
    """
    run_dir = Path(run_dir)
    needed = ["chain.json", "run_log.csv", "summary.json", "predictions"]
    for name in needed:
        if not (run_dir / name).exists():
            raise MissingArtifacts(f"{run_dir / name} is missing")
    files = sorted((run_dir / "predictions").glob("unit_*.csv"))
    if not files:
        raise MissingArtifacts(f"{run_dir / 'predictions'} has no unit CSVs")
    actual, predicted, last_a, last_p = [], [], [], []
    for f in files:
        with f.open() as fh:
            rows = list(csv.DictReader(fh))
        actual += [float(r["actual_rul"]) for r in rows]
        predicted += [float(r["predicted_rul"]) for r in rows]
        last_a.append(float(rows[-1]["actual_rul"]))
        last_p.append(float(rows[-1]["predicted_rul"]))
    chain = Chain.load(run_dir / "chain.json")
    stored = json.loads((run_dir / "summary.json").read_text())
    return {
        "subset": stored["subset"],
        "units": len(files),
        "test_rmse": rmse(predicted, actual),
        "last_cycle_rmse": rmse(last_p, last_a),
        "balances": {
            sc.render_address(a): b for a, b in sorted(chain.state.balances.items())
        },
        "tokens_minted": chain.state.total_minted,
        "blocks": len(chain.blocks),
        "chain_valid": bool(chain.validate()),
    }
