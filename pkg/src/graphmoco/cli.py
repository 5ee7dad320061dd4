"""Command-line surface: synth, train, embed, search, eval.

Optional ``--config FILE`` (JSON, keys = long option names with underscores)
fills in any option not given explicitly on the command line.  The
``GRAPHMOCO_LOG`` environment variable selects the log level
(error/info/debug).  Exit codes: 0 success, 1 runtime failure (single-line
diagnostic on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

logger = logging.getLogger("graphmoco.cli")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = os.environ.get("GRAPHMOCO_LOG", "info").lower()
    logging.basicConfig(
        level=_LOG_LEVELS.get(level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphmoco",
        description="Binary-function embeddings from control-flow graphs: "
        "synthesize corpora, train, embed, search, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--functions", type=int, required=True)
    p.add_argument("--variants", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)

    p = sub.add_parser("train", help="momentum-contrast training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoints")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--queue", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--wd", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-preshuffle", action="store_true", default=None)
    p.add_argument("--loss", choices=("infonce", "triplet"), default=None)
    p.add_argument("--split", default=None, help="train,val,test ratios, e.g. 0.8,0.1,0.1")
    p.add_argument("--d", type=int, default=None, help="token embedding width")
    p.add_argument("--filters", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--mask-same-function", action="store_true", default=None)
    p.add_argument("--self-pairs", action="store_true", default=None)
    p.add_argument("--dedup", action="store_true", default=None)
    p.add_argument("--no-two-tuple", action="store_true", default=None)
    p.add_argument("--directed", action="store_true", default=None)
    p.add_argument("--no-figures", action="store_true", default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("embed", help="build an embedding index from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", default=None, help="cross-check vocab version against this file")
    p.add_argument("--config", default=None)

    p = sub.add_parser("search", help="rank indexed functions against a query")
    p.add_argument("--index", required=True)
    p.add_argument("--function-id", default=None)
    p.add_argument("--variant-key", default=None)
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--out", default=None, help="optional CSV output")
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="run a pair task or pool search evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument(
        "--task",
        required=True,
        choices=("arch", "opt", "comp", "xc", "xcxb", "xa", "xm", "search"),
    )
    p.add_argument("--pool", type=int, default=None)
    p.add_argument("--metrics", default=None, help="comma list of auc,mrr10,recall1,map")
    p.add_argument("--pairs", type=int, default=None, help="number of positive pairs/queries")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--queries", default=None, help="comma list of query function_ids (search task)")
    p.add_argument("--cap-nrel", action="store_true", default=None)
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--no-figures", action="store_true", default=None)
    p.add_argument("--config", default=None)

    return parser


def _merge(args: argparse.Namespace, defaults: dict) -> dict:
    """Explicit flags > config-file values > built-in defaults."""
    doc = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValueError("--config must contain a JSON object")
    resolved = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = doc.get(key, default)
        resolved[key] = value
    return resolved


def _cmd_synth(args: argparse.Namespace) -> int:
    from .corpus import save_corpus, synth_corpus

    opts = _merge(args, {"functions": None, "variants": None, "seed": 0, "out": None})
    corpus = synth_corpus(opts["functions"], opts["variants"], opts["seed"])
    save_corpus(corpus, opts["out"])
    print(
        f"wrote {len(corpus)} variants ({len(corpus.groups)} functions) to {opts['out']}"
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    from .config import TrainConfig
    from .corpus import dedup_identical_groups, load_corpus, split_corpus
    from .reporting import save_loss_curve, write_history_csv
    from .trainer import train

    opts = _merge(
        args,
        {
            "corpus": None,
            "out": None,
            "epochs": 100,
            "batch": 128,
            "queue": 5120,
            "tau": 0.07,
            "momentum": 0.999,
            "lr": 0.01,
            "wd": 1e-4,
            "seed": 0,
            "no_preshuffle": False,
            "loss": "infonce",
            "split": "1,0,0",
            "d": 64,
            "filters": 64,
            "layers": 3,
            "hidden": 256,
            "checkpoint_every": 1,
            "mask_same_function": False,
            "self_pairs": False,
            "dedup": False,
            "no_two_tuple": False,
            "directed": False,
            "no_figures": False,
        },
    )
    corpus = load_corpus(opts["corpus"])
    if opts["dedup"]:
        corpus = dedup_identical_groups(corpus)
    ratios = tuple(float(r) for r in str(opts["split"]).split(","))
    if len(ratios) != 3:
        raise ValueError("--split needs three comma-separated ratios")
    if ratios[1] > 0 or ratios[2] > 0:
        train_corpus, val_corpus, _test = split_corpus(corpus, ratios, opts["seed"])
    else:
        train_corpus, val_corpus = corpus, None
    config = TrainConfig(
        tau=opts["tau"],
        momentum=opts["momentum"],
        queue_size=opts["queue"],
        batch_size=opts["batch"],
        learning_rate=opts["lr"],
        weight_decay=opts["wd"],
        epochs=opts["epochs"],
        seed=opts["seed"],
        preshuffle=not opts["no_preshuffle"],
        loss=opts["loss"],
        mask_same_function=bool(opts["mask_same_function"]),
        allow_self_pairs=bool(opts["self_pairs"]),
        d=opts["d"],
        filters_per_size=opts["filters"],
        layers=opts["layers"],
        hidden_dim=opts["hidden"],
        two_tuple_enabled=not opts["no_two_tuple"],
        directed_aggregation=bool(opts["directed"]),
        dedup=bool(opts["dedup"]),
        checkpoint_every=opts["checkpoint_every"],
    )
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(train_corpus, config, val_corpus=val_corpus, out_dir=out_dir)
    write_history_csv(result.history, out_dir / "history.csv")
    if not opts["no_figures"] and result.history:
        save_loss_curve(result.history, out_dir / "loss_curve.png")
    final = out_dir / "checkpoint.ckpt"
    last = result.history[-1] if result.history else {"loss": float("nan")}
    print(f"checkpoint: {final} (final loss {last['loss']:.4f})")
    return 0


def _cmd_embed(args: argparse.Namespace) -> int:
    from .checkpoint import checkpoint_fingerprint, load_checkpoint
    from .corpus import load_corpus
    from .index import build_index, save_index
    from .normalizer import Vocab

    opts = _merge(args, {"checkpoint": None, "corpus": None, "out": None, "vocab": None})
    ckpt = load_checkpoint(opts["checkpoint"])
    fingerprint = checkpoint_fingerprint(opts["checkpoint"])
    corpus = load_corpus(opts["corpus"])
    expected = None
    if opts["vocab"]:
        expected = Vocab.load(opts["vocab"]).version
    index = build_index(ckpt, corpus, fingerprint, expected_vocab_version=expected)
    save_index(index, opts["out"])
    print(f"indexed {len(index)} variants to {opts['out']}")
    return 0


def _cmd_search(args: argparse.Namespace) -> int:
    import csv

    from .index import load_index, query_index

    opts = _merge(
        args,
        {"index": None, "function_id": None, "variant_key": None, "top": 10, "out": None},
    )
    index = load_index(opts["index"])
    if opts["variant_key"]:
        try:
            row = index.keys.index(opts["variant_key"])
        except ValueError:
            raise KeyError(f"variant key {opts['variant_key']!r} not in index") from None
    elif opts["function_id"]:
        matches = sorted(
            i for i, k in enumerate(index.keys) if k.split("|")[0] == opts["function_id"]
        )
        if not matches:
            raise KeyError(f"function_id {opts['function_id']!r} not in index")
        # deterministic choice: lexicographically first variant of the function
        row = min(matches, key=lambda i: index.keys[i])
    else:
        raise ValueError("search needs --function-id or --variant-key")
    results = query_index(index, index.vectors[row], opts["top"])
    print(f"{'rank':>4}  {'similarity':>10}  key")
    for rank, (key, sim) in enumerate(results, start=1):
        print(f"{rank:>4}  {sim:>10.6f}  {key}")
    if opts["out"]:
        with open(opts["out"], "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "similarity", "key"])
            for rank, (key, sim) in enumerate(results, start=1):
                writer.writerow([rank, f"{sim:.6f}", key])
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    from .checkpoint import load_checkpoint
    from .corpus import load_corpus
    from .evaluation import build_pair_task, build_search_task, run_search_eval
    from .reporting import render_eval_figures

    opts = _merge(
        args,
        {
            "checkpoint": None,
            "corpus": None,
            "task": None,
            "pool": 100,
            "metrics": "auc,mrr10,recall1,map",
            "pairs": 200,
            "seed": 0,
            "queries": None,
            "cap_nrel": False,
            "out": "report.json",
            "no_figures": False,
        },
    )
    ckpt = load_checkpoint(opts["checkpoint"])
    corpus = load_corpus(opts["corpus"])
    metrics = [m.strip() for m in opts["metrics"].split(",") if m.strip()]
    if opts["task"] == "search":
        queries = (
            [q.strip() for q in opts["queries"].split(",") if q.strip()]
            if opts["queries"]
            else None
        )
        task = build_search_task(
            corpus,
            pool_size=opts["pool"],
            seed=opts["seed"],
            n_queries=opts["pairs"],
            query_function_ids=queries,
        )
    else:
        task = build_pair_task(
            corpus, opts["task"], n_pairs=opts["pairs"], pool_size=opts["pool"], seed=opts["seed"]
        )
    outcome = run_search_eval(ckpt, corpus, task, metrics, cap_nrel=bool(opts["cap_nrel"]))
    out_path = Path(opts["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(outcome.report, indent=2, sort_keys=True), encoding="utf-8")
    if not opts["no_figures"]:
        render_eval_figures(outcome, out_path)
    summary = ", ".join(f"{k}={v:.4f}" for k, v in outcome.report["metrics"].items())
    print(f"{opts['task']}: {summary} -> {out_path}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "embed": _cmd_embed,
    "search": _cmd_search,
    "eval": _cmd_eval,
}


def cli_main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return _COMMANDS[args.command](args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        logger.debug("failure detail", exc_info=True)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
