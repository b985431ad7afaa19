"""Command-line entry point: ``fedchain <group> <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 run aborted.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import contract as sc
from . import crypto, dataset, synthetic
from .blobstore import BlobNotFound, BlobStore, ContentHash
from .config import ConfigError, RunConfig, load_config
from .ledger import Chain
from .model import ModelError, deserialize_weights, predict, rmse
from .orchestrator import MissingArtifacts, RoundAborted, format_summary, report, run

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ABORTED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_prepared(data_dir, subset, cap, column_map):
    train, test = dataset.load_subset(data_dir, subset, column_map)
    train = dataset.compute_rul_labels(train, cap)
    test = dataset.compute_rul_labels(test, cap)
    stats = dataset.fit_norm_stats(train)
    return dataset.normalize(train, stats), dataset.normalize(test, stats)


# -- data ---------------------------------------------------------------------

def cmd_data_ingest(args):
    train, test = _load_prepared(args.dir, args.subset, args.cap, args.column_map)
    out = Path(args.out or Path(args.dir) / f"{args.subset}_cache.npz")
    dataset.save_cache(out, train, test)
    print(f"{args.subset}: {len(train.unit_ids())} train units ({len(train)} rows), "
          f"{len(test.unit_ids())} test units ({len(test)} rows) -> {out}")


def cmd_data_stats(args):
    train, _ = dataset.load_subset(args.dir, args.subset, args.column_map)
    print(f"{'column':>6} {'mean':>14} {'std':>12}")
    for col, mean, std in dataset.feature_moments(train):
        print(f"{col:>6} {mean:>14.4f} {std:>12.4f}")


def cmd_data_synth(args):
    synthetic.write_subset(args.dir, args.subset, seed=args.seed, n_train=args.train_units, n_test=args.test_units)
    print(f"wrote synthetic {args.subset} files to {args.dir}")


# -- keys / blobs ---------------------------------------------------------------

def cmd_keys_generate(args):
    pair = crypto.generate_keypair(args.bits, seed=args.seed)
    pub, priv = crypto.save_keypair(pair, args.out, args.name)
    print(f"public key  {pub}\nprivate key {priv}")


def cmd_blob_put(args):
    store = BlobStore.load(args.store) if Path(args.store).exists() else BlobStore()
    h = store.put(Path(args.file).read_bytes())
    store.dump(args.store)
    print(h.render())


def cmd_blob_get(args):
    store = BlobStore.load(args.store)
    data = store.get(ContentHash.parse(args.cid))
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)


# -- run / report ---------------------------------------------------------------

def cmd_run(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    _, summary = run(cfg)
    print(format_summary(summary), end="")
    print(f"outputs in {cfg.output_dir}")


def cmd_report(args):
    rep = report(args.run_dir)
    print(f"subset {rep['subset']}: {rep['units']} test units")
    print(f"test RMSE        {rep['test_rmse']:.3f}")
    print(f"last-cycle RMSE  {rep['last_cycle_rmse']:.3f}")
    print(f"blocks {rep['blocks']}, chain valid {rep['chain_valid']}, tokens minted {rep['tokens_minted']}")
    for addr, bal in rep["balances"].items():
        print(f"  {addr}  {bal}")


# -- chain / contract -----------------------------------------------------------

def cmd_chain_inspect(args):
    chain = Chain.load(args.chain)
    blocks = chain.blocks if args.height is None else [chain.blocks[args.height]]
    for b in blocks:
        print(json.dumps(b.to_dict(), indent=2))


def cmd_chain_validate(args):
    chain = Chain.load(args.chain)
    rep = chain.validate()
    if rep:
        print(f"valid: {len(chain.blocks)} blocks")
        return EXIT_OK
    print(f"INVALID at height {rep.height}: {rep.reason}")
    return EXIT_DATA


def cmd_contract_balance(args):
    state = Chain.load(args.chain).state
    print(state.balance_of(sc.parse_address(args.address)))


def cmd_contract_uploads(args):
    state = Chain.load(args.chain).state
    for i, payload in enumerate(state.uploads_of(sc.parse_address(args.address)), start=1):
        print(f"{i} {payload}")


def cmd_contract_history(args):
    state = Chain.load(args.chain).state
    for i, cid in enumerate(state.global_model_history, start=1):
        print(f"{i} {cid}")


# -- model ------------------------------------------------------------------------

def cmd_model_eval(args):
    store = BlobStore.load(args.blobs)
    weights = deserialize_weights(store.get(ContentHash.parse(args.weights)))
    _, test = _load_prepared(args.dir, args.subset, args.cap, args.column_map)
    preds = predict(weights, test.features, args.cap)
    print(f"{args.subset} test RMSE {rmse(preds, test.labels):.4f}")
    if args.out:
        rows = np.column_stack([test.units, test.cycles, test.labels, preds])
        np.savetxt(args.out, rows, delimiter=",", header="unit,cycle,actual_rul,predicted_rul",
                   comments="", fmt=["%d", "%d", "%.6f", "%.6f"])
        print(f"predictions -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedchain", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    groups = p.add_subparsers(dest="group", required=True, parser_class=_Parser)

    def data_args(sp):
        sp.add_argument("--subset", default="FD001", choices=dataset.SUBSETS)
        sp.add_argument("--dir", required=True, help="directory holding the CMAPSS text files")
        sp.add_argument("--column-map", default=dataset.DEFAULT_COLUMN_MAP, choices=tuple(dataset.COLUMN_MAPS))
        sp.add_argument("--cap", type=int, default=dataset.DEFAULT_RUL_CAP)

    data = groups.add_parser("data").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    sp = data.add_parser("ingest")
    data_args(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_data_ingest)
    sp = data.add_parser("stats")
    data_args(sp)
    sp.set_defaults(func=cmd_data_stats)
    sp = data.add_parser("synth", help="write seeded CMAPSS-format files")
    sp.add_argument("--subset", default="FD001", choices=dataset.SUBSETS)
    sp.add_argument("--dir", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--train-units", type=int, default=100)
    sp.add_argument("--test-units", type=int, default=100)
    sp.set_defaults(func=cmd_data_synth)

    keys = groups.add_parser("keys").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    sp = keys.add_parser("generate")
    sp.add_argument("--bits", type=int, default=crypto.DEFAULT_BITS)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default="keys")
    sp.add_argument("--name", default="operator")
    sp.set_defaults(func=cmd_keys_generate)

    blob = groups.add_parser("blob").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    sp = blob.add_parser("put")
    sp.add_argument("file")
    sp.add_argument("--store", default="blobs")
    sp.set_defaults(func=cmd_blob_put)
    sp = blob.add_parser("get")
    sp.add_argument("cid")
    sp.add_argument("--store", default="blobs")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_blob_get)

    sp = groups.add_parser("run")
    sp.add_argument("--config")
    sp.add_argument("--output-dir")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    sp.set_defaults(func=cmd_run)

    sp = groups.add_parser("report")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_report)

    chain = groups.add_parser("chain").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    sp = chain.add_parser("inspect")
    sp.add_argument("--chain", default="chain.json")
    sp.add_argument("--height", type=int)
    sp.set_defaults(func=cmd_chain_inspect)
    sp = chain.add_parser("validate")
    sp.add_argument("--chain", default="chain.json")
    sp.set_defaults(func=cmd_chain_validate)

    contract = groups.add_parser("contract").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    for name, func in (("balance", cmd_contract_balance), ("uploads", cmd_contract_uploads)):
        sp = contract.add_parser(name)
        sp.add_argument("address")
        sp.add_argument("--chain", default="chain.json")
        sp.set_defaults(func=func)
    sp = contract.add_parser("history")
    sp.add_argument("--chain", default="chain.json")
    sp.set_defaults(func=cmd_contract_history)

    model = groups.add_parser("model").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    sp = model.add_parser("eval")
    sp.add_argument("--weights", required=True, help="content hash of an FCW1 weight blob")
    sp.add_argument("--blobs", default="blobs")
    data_args(sp)
    sp.add_argument("--out", help="per-row prediction CSV")
    sp.set_defaults(func=cmd_model_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args) or EXIT_OK
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RoundAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    except (dataset.DataError, MissingArtifacts, BlobNotFound, ModelError, crypto.CryptoError,
            FileNotFoundError, KeyError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
