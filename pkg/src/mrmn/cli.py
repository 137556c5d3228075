"""Command line entry point: ingest, train, evaluate, margin-grid, export-attention."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import models, training
from .baselines import configure_lrml
from .data import (
    DataError, Dataset, filter_by_activity, leave_one_out_split, parse_interactions, type_statistics,
)
from .evaluation import EvaluationError, evaluate
from .forward import attention_batch
from .params import MODEL_KINDS, CheckpointError, HyperParams, load_checkpoint, save_checkpoint

logger = logging.getLogger("mrmn")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    out: str = "."
    checkpoint: str | None = None
    model: str = "mrmn"
    seed: int = 0
    dim: int = 20
    slots: int = 10
    margins: dict[str, float] = field(default_factory=dict)
    lr: float = 0.05
    epochs: int = 30
    reg: float = 1e-4
    min_user: int = 0
    min_item: int = 0
    delimiter: str = ","
    k: int = 10
    negatives: int = 100
    eval_type: str | None = None
    primary_type: str | None = None
    collapse_types: bool = False
    neg_relation: str = "reuse"
    eval_every: int = 0
    samples: int = 10000
    grid: list[dict[str, float]] = field(default_factory=list)

    def hyperparams(self) -> HyperParams:
        try:
            return HyperParams(
                dim=self.dim, slots=self.slots, margins=dict(self.margins), learning_rate=self.lr,
                epochs=self.epochs, seed=self.seed, negatives_per_eval=self.negatives, k=self.k,
                model=self.model, neg_relation=self.neg_relation, reg=self.reg,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def parse_margins(text: str) -> dict[str, float]:
    """`purchase:0.2,click:0.05` -> {"purchase": 0.2, "click": 0.05}."""
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, value = part.rpartition(":")
        if not sep or not name:
            raise ConfigError(f"bad margin entry {part!r}, expected type:value")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"bad margin value in {part!r}") from None
    return out


def parse_grid(text: str) -> list[dict[str, float]]:
    return [parse_margins(chunk) for chunk in text.split(";") if chunk.strip()]


_CONVERTERS = {
    "margins": parse_margins,
    "grid": parse_grid,
    "collapse_types": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}


def _convert(name: str, value):
    if not isinstance(value, str):
        return value
    if name in _CONVERTERS:
        return _CONVERTERS[name](value)
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {value!r}") from None
    return value


def read_config_file(path) -> dict:
    """Flat `key = value` lines; `#` starts a comment line."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in known:
            raise ConfigError(f"{path}:{n}: unknown or malformed setting {line!r}")
        values[key] = value.strip()
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    merged = {}
    if args.config:
        merged.update(read_config_file(args.config))
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            merged[f.name] = value
    cfg = RunConfig(**{k: _convert(k, v) for k, v in merged.items()})
    if len(cfg.delimiter) != 1:
        raise ConfigError("delimiter must be a single character")
    return cfg


# -- shared helpers --------------------------------------------------------


def _load_log(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("--data is required")
    try:
        with open(cfg.data, encoding="utf-8") as fh:
            log = parse_interactions(fh, cfg.delimiter)
    except OSError as exc:
        raise ConfigError(f"cannot read {cfg.data}: {exc}") from exc
    except DataError as exc:
        raise DataError(f"{cfg.data}: {exc}") from exc
    if cfg.min_user or cfg.min_item:
        log = filter_by_activity(log, cfg.min_user, cfg.min_item)
    return log


def _primary(cfg: RunConfig, dataset: Dataset) -> str:
    primary = cfg.primary_type or dataset.types[0]
    if primary not in dataset.types:
        raise ConfigError(f"primary type {primary!r} not in dataset types {dataset.types}")
    return primary


def prepare_training_data(cfg: RunConfig, dataset: Dataset, hp: HyperParams) -> tuple[HyperParams, Dataset]:
    """Shape the dataset and margins for the chosen model kind.

    MRMN trains on every type. Baselines train on primary feedback only,
    unless --collapse-types relabels every type as primary.
    """
    primary = _primary(cfg, dataset)
    if cfg.model == "mrmn" and not cfg.collapse_types:
        try:
            hp.check_margins(dataset.types)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return hp, dataset
    if cfg.model != "mf-bpr" and primary not in hp.margins:
        raise ConfigError(f"no margin for primary type {primary!r}")
    source = dataset if cfg.collapse_types else dataset.restrict_types([primary])
    if cfg.model == "mf-bpr":
        return hp, source.relabel(primary)
    return configure_lrml(hp, source, primary)


def _write_lines(path: Path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_model(cfg, dataset, hp, on_epoch=None):
    hp, train_data = prepare_training_data(cfg, dataset, hp)
    model = models.build(hp, train_data, _primary(cfg, dataset))
    history = training.fit(model, train_data, hp.epochs, hp.seed, callback=on_epoch)
    return model, hp, history


# -- commands --------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> dict:
    log = _load_log(cfg)
    out = _outdir(cfg)
    dataset = leave_one_out_split(log)
    (out / "dataset.csv").write_text(log.dumps(cfg.delimiter), encoding="utf-8")
    stats = type_statistics(log)
    _write_lines(out / "stats.csv", ["type,users,items,interactions,density"] + [
        f"{r['type']},{r['users']},{r['items']},{r['interactions']},{r['density']:.6g}" for r in stats
    ])
    primary = _primary(cfg, dataset)
    print(f"{'Type':<16}{'#User':>8}{'#Item':>8}{'#Inter':>10}{'Density':>10}")
    for r in stats:
        name = r["type"] + ("*" if r["type"] == primary else "")
        print(f"{name:<16}{r['users']:>8}{r['items']:>8}{r['interactions']:>10}{r['density'] * 100:>9.2f}%")
    print(f"users={dataset.n_users} items={dataset.n_items} train={len(dataset.train)} "
          f"valid={len(dataset.valid)} test={len(dataset.test)}")
    return {"stats": stats, "users": dataset.n_users, "items": dataset.n_items}


def cmd_train(cfg: RunConfig) -> Path:
    dataset = leave_one_out_split(_load_log(cfg))
    hp = cfg.hyperparams()
    out = _outdir(cfg)
    primary = _primary(cfg, dataset)
    log_lines = [training.TRAIN_LOG_HEADER]
    curve = [f"epoch,hr@{cfg.k},ndcg@{cfg.k}"]
    holder = {}

    def on_epoch(summary):
        log_lines.append(summary.csv_row())
        logger.info("epoch %d loss %.6f active %.3f", summary.epoch, summary.mean_loss, summary.active_fraction)
        if cfg.eval_every and summary.epoch % cfg.eval_every == 0:
            rep = evaluate(holder["model"], dataset, cfg.k, cfg.negatives, cfg.seed, "valid", primary)
            curve.append(f"{summary.epoch},{rep.hr_at_k:.10g},{rep.ndcg_at_k:.10g}")

    hp, train_data = prepare_training_data(cfg, dataset, hp)
    model = models.build(hp, train_data, primary)
    holder["model"] = model
    training.fit(model, train_data, hp.epochs, hp.seed, callback=on_epoch)
    if not model.params.is_finite():
        raise RuntimeError("training produced non-finite parameters")

    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / "model.ckpt"
    save_checkpoint(model.params, hp, ckpt)
    _write_lines(out / "train_log.csv", log_lines)
    if cfg.eval_every:
        _write_lines(out / "valid_curve.csv", curve)
    print(f"wrote {ckpt}")
    return ckpt


def _load_model(cfg: RunConfig, dataset: Dataset):
    path = cfg.checkpoint or str(Path(cfg.out) / "model.ckpt")
    try:
        params, hp = load_checkpoint(path)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if params.users.shape[0] != dataset.n_users or params.items.shape[0] != dataset.n_items:
        raise DataError(
            f"checkpoint has {params.users.shape[0]} users x {params.items.shape[0]} items, "
            f"dataset has {dataset.n_users} x {dataset.n_items}"
        )
    return models.wrap(params, hp, _primary(cfg, dataset)), hp


def cmd_evaluate(cfg: RunConfig) -> dict:
    dataset = leave_one_out_split(_load_log(cfg))
    model, _ = _load_model(cfg, dataset)
    out = _outdir(cfg)
    if cfg.eval_type == "all":
        held_types = {rec.type for rec in dataset.test.values()}
        eval_types = [t for t in dataset.types if t in held_types]
    elif cfg.eval_type:
        eval_types = [t.strip() for t in cfg.eval_type.split(",")]
    else:
        eval_types = [_primary(cfg, dataset)]
    reports = {}
    for ftype in eval_types:
        if ftype not in dataset.types:
            raise ConfigError(f"unknown eval type {ftype!r}")
        rep = evaluate(model, dataset, cfg.k, cfg.negatives, cfg.seed, "test", ftype)
        rep.write(out / f"report_{ftype}.csv", out / f"summary_{ftype}.json", dataset.users.tokens)
        print(f"{ftype}: hr@{cfg.k}={rep.hr_at_k:.4f} ndcg@{cfg.k}={rep.ndcg_at_k:.4f} "
              f"users={len(rep.per_user)} skipped={len(rep.skipped)}")
        reports[ftype] = rep
    return reports


def cmd_margin_grid(cfg: RunConfig) -> list[dict]:
    if len(cfg.grid) < 2:
        raise ConfigError("margin-grid needs at least two margin settings (--grid a:1,b:2;a:2,b:1)")
    dataset = leave_one_out_split(_load_log(cfg))
    primary = _primary(cfg, dataset)
    out = _outdir(cfg)
    rows = []
    header = [*dataset.types, f"hr@{cfg.k}", f"ndcg@{cfg.k}"]
    lines = [",".join(header)]
    for margins in cfg.grid:
        hp = replace(cfg.hyperparams(), margins=margins)
        model, _, _ = _train_model(cfg, dataset, hp)
        rep = evaluate(model, dataset, cfg.k, cfg.negatives, cfg.seed, "test", primary)
        row = {"margins": margins, "hr": rep.hr_at_k, "ndcg": rep.ndcg_at_k}
        rows.append(row)
        cells = [f"{margins.get(t, float('nan')):g}" for t in dataset.types]
        lines.append(",".join([*cells, f"{rep.hr_at_k:.10g}", f"{rep.ndcg_at_k:.10g}"]))
        print(lines[-1])
    _write_lines(out / "margin_grid.csv", lines)
    return rows


def mean_attention(params, dataset: Dataset, samples: int, seed: int) -> dict[str, np.ndarray]:
    """Per type, the mean attention profile over a seeded sample of positive train pairs."""
    rng = np.random.default_rng((seed, 3))
    out = {}
    for ftype in params.keys:
        if ftype not in dataset.positives:
            continue
        pairs = [(u, i) for u, items in enumerate(dataset.positives[ftype]) for i in sorted(items)]
        if not pairs:
            logger.warning("no training pairs of type %s, skipped", ftype)
            continue
        if len(pairs) > samples:
            pairs = [pairs[n] for n in sorted(rng.choice(len(pairs), size=samples, replace=False))]
        total = np.zeros(params.slots)
        by_user: dict[int, list[int]] = {}
        for u, i in pairs:
            by_user.setdefault(u, []).append(i)
        for u, items in by_user.items():
            total += attention_batch(params.users[u], params.items[items], params.keys[ftype]).sum(axis=0)
        out[ftype] = total / len(pairs)
    return out


def cmd_export_attention(cfg: RunConfig) -> dict[str, np.ndarray]:
    dataset = leave_one_out_split(_load_log(cfg))
    model, hp = _load_model(cfg, dataset)
    if not getattr(model, "has_memory", False):
        raise ConfigError(f"model kind {hp.model!r} has no attention to export")
    data = dataset
    if len(model.params.keys) == 1 and model.params.types[0] not in dataset.types:
        raise ConfigError("checkpoint feedback type not present in dataset")
    if len(model.params.keys) == 1 and len(dataset.types) > 1:
        data = dataset.relabel(model.params.types[0])
    rows = mean_attention(model.params, data, cfg.samples, cfg.seed)
    out = _outdir(cfg)
    n = model.params.slots
    lines = [",".join(["type", *(f"slot_{s + 1}" for s in range(n))])]
    for ftype, w in rows.items():
        lines.append(",".join([ftype, *(f"{x:.10g}" for x in w)]))
    _write_lines(out / "attention.csv", lines)
    print(f"wrote {out / 'attention.csv'}")
    return rows


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "margin-grid": cmd_margin_grid,
    "export-attention": cmd_export_attention,
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="flat key=value file; flags override it")
    shared.add_argument("--data", help="interaction file (user,item,type,timestamp)")
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--checkpoint", help="checkpoint path (default OUT/model.ckpt)")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--model", choices=list(MODEL_KINDS))
    shared.add_argument("--eval-type", help="feedback type(s) to evaluate, comma separated, or 'all'")
    shared.add_argument("--primary-type", help="primary feedback type (default: first in file)")
    shared.add_argument("--collapse-types", action="store_const", const=True,
                        help="treat every feedback type as primary (ASP mode)")
    shared.add_argument("--neg-relation", choices=["reuse", "recompute"])
    shared.add_argument("--k", type=int)
    shared.add_argument("--negatives", type=int)
    shared.add_argument("--dim", type=int)
    shared.add_argument("--slots", type=int)
    shared.add_argument("--margins", help="per-type margins, e.g. purchase:0.2,click:0.05")
    shared.add_argument("--lr", type=float)
    shared.add_argument("--epochs", type=int)
    shared.add_argument("--reg", type=float, help="L2 coefficient for MF-BPR")
    shared.add_argument("--min-user", type=int)
    shared.add_argument("--min-item", type=int)
    shared.add_argument("--delimiter")
    shared.add_argument("--eval-every", type=int, help="evaluate on valid every E epochs")
    shared.add_argument("--samples", type=int, help="pairs per type for export-attention")
    shared.add_argument("--grid", help="margin settings separated by ';'")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mrmn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[shared])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, EvaluationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (training.TrainingError, RuntimeError, ValueError, KeyError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
