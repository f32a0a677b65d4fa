"""``dsmt prepare|train|eval|geometry|attention --config FILE``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import logging
import struct
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ABLATIONS, Config, load_config
from .data import dataset_statistics, format_statistics, load_dataset
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .model import DsMtGCN
from .train import (
    METRIC_HEADER,
    compute_metrics,
    evaluate,
    format_history,
    format_subtasks,
    subtask_report,
    train,
)

log = logging.getLogger("dsmt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="dsmt", description="Direction-sensitive multi-task GCN for link prediction.")
    p.add_argument("command", choices=["prepare", "train", "eval", "geometry", "attention"])
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--ablation", choices=sorted(ABLATIONS))
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["seed"] = str(args.seed)
    return out


def _out_dir(cfg):
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _checkpoint_path(cfg):
    return Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out_dir) / "model.dsmt"


def _load_data(cfg):
    for key in ("train_path", "valid_path", "test_path"):
        if not getattr(cfg, key):
            raise ConfigError(f"config key {key} is required")
    return load_dataset(cfg.train_path, cfg.valid_path, cfg.test_path)


def write_graph_cache(path, vocab, graph):
    """Deterministic binary snapshot of the vocabulary and id-encoded splits."""
    parts = [b"DSMG", struct.pack("<III", 1, vocab.n_entities, vocab.n_relations)]
    for name in vocab.entities + vocab.relations:
        b = name.encode("utf-8")
        parts.append(struct.pack("<I", len(b)) + b)
    for arr in (graph.train, graph.valid, graph.test):
        parts.append(struct.pack("<Q", len(arr)))
        parts.append(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def _model_from_checkpoint(cfg):
    vocab, graph = _load_data(cfg)
    ckpt = load_checkpoint(_checkpoint_path(cfg), expected_digest=vocab.digest())
    saved = dict(ckpt.config)
    for key in ("train_path", "valid_path", "test_path", "out_dir", "checkpoint", "attention_queries", "seed"):
        saved[key] = getattr(cfg, key)
    model = DsMtGCN(Config.from_dict(saved), graph, params=ckpt.params)
    return vocab, graph, model, ckpt


def cmd_prepare(cfg, out):
    vocab, graph = _load_data(cfg)
    stats = format_statistics(dataset_statistics(graph))
    out.write(stats)
    write_graph_cache(_out_dir(cfg) / "graph.cache", vocab, graph)
    return stats


def cmd_train(cfg, out):
    vocab, graph = _load_data(cfg)
    out_dir = _out_dir(cfg)
    res = train(cfg, graph)
    ckpt = Checkpoint(cfg.to_dict(), vocab.digest(), res.best_params, res.best_valid_mrr, res.best_epoch)
    save_checkpoint(_checkpoint_path(cfg), ckpt)
    (out_dir / "history.tsv").write_text(format_history(res.history), encoding="utf-8")
    out.write(f"best_epoch\t{res.best_epoch}\nbest_valid_mrr\t{res.best_valid_mrr:.6f}\n")
    return res


def cmd_eval(cfg, out):
    _, graph, model, _ = _model_from_checkpoint(cfg)
    result = evaluate(model, "test", seed=cfg.seed)
    metrics = compute_metrics(result.ranks)
    report = f"{METRIC_HEADER}\n{metrics.row()}\n"
    table = format_subtasks(subtask_report(result))
    out_dir = _out_dir(cfg)
    (out_dir / "metrics.tsv").write_text(report, encoding="utf-8")
    (out_dir / "subtasks.tsv").write_text(table, encoding="utf-8")
    out.write(report + "\n" + table)
    return metrics


def cmd_geometry(cfg, out):
    vocab, _, model, _ = _model_from_checkpoint(cfg)
    dirs, _ = model.encode()
    res = analysis.write_geometry(
        _out_dir(cfg), {"E_f": dirs.forward.data, "E_b": dirs.backward.data}, vocab.entities
    )
    for name, g in res.items():
        out.write(f"{name}\tconicity\t{g.conicity:.6f}\n")
    return res


def cmd_attention(cfg, out):
    if not cfg.attention_queries:
        raise ConfigError("config key attention_queries is required for the attention command")
    vocab, _, model, _ = _model_from_checkpoint(cfg)
    queries = analysis.read_query_file(cfg.attention_queries)
    _, task = model.encode()
    rows = analysis.attention_rows(task, vocab, queries)
    text = analysis.format_attention(rows)
    (_out_dir(cfg) / "attention.tsv").write_text(text, encoding="utf-8")
    out.write(text)
    return rows


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "geometry": cmd_geometry,
    "attention": cmd_attention,
}


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args), args.ablation)
        _out_dir(cfg)
        (Path(cfg.out_dir) / "effective_config.txt").write_text(cfg.to_text(), encoding="utf-8")
        COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"dsmt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"dsmt: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, OSError) and exc.filename:
            msg = f"{exc.strerror}: {exc.filename}"
        print(f"dsmt: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
