"""Command-line entry point: gen-data, train, eval, ablate, gradcheck.

Configuration is a JSON file with optional ``data``, ``split`` and ``train``
sections (plus top-level ``dataset`` and ``taxonomy`` paths). ``--set key=value``
overrides any field; keys are dotted (``train.lambda1``) or bare when the name
is unique across sections. Failures print one JSON line to stderr of the form
``{"error": <category>, "message": ...}`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import gradcheck
from .data import (
    DatasetError, LabeledDataset, SplitSpec, Splits, SynthConfig, generate_synthetic,
    make_splits, read_dataset, write_dataset,
)
from .encoding import EmbeddingFileError, ProjectionParams
from .evaluation import (
    METRIC_COLUMNS, evaluate, run_ablation, write_ablation, write_metrics_csv,
)
from .taxonomy import Taxonomy, TaxonomyError, default_taxonomy, load_taxonomy
from .trainpipe import TrainConfig, TrainingDiverged, train

log = logging.getLogger("hierrec")

SECTIONS = {"data": SynthConfig, "split": SplitSpec, "train": TrainConfig}
PATH_KEYS = ("dataset", "taxonomy")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
EXIT_CODES = {"usage": 2, "config": 3, "data": 4, "io": 5, "training": 6,
              "validation": 7, "gradcheck": 1}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


@dataclass(frozen=True)
class RunConfig:
    data: SynthConfig = field(default_factory=SynthConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str | None = None
    taxonomy: str | None = None

    def to_dict(self) -> dict:
        return {
            "data": asdict(self.data),
            "split": asdict(self.split),
            "train": asdict(self.train),
            "dataset": self.dataset,
            "taxonomy": self.taxonomy,
        }


# ---------------------------------------------------------------------------
# config loading


def _coerce(key: str, value, default):
    """Convert ``value`` (JSON value or override string) to the type of ``default``."""
    kind = type(default)
    if isinstance(value, str) and kind is not str:
        text = value.strip()
        if kind is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise CliError("config", f"{key}: expected a boolean, got {value!r}")
        try:
            return kind(text)
        except ValueError:
            raise CliError("config", f"{key}: expected {kind.__name__}, got {value!r}") from None
    if kind is bool:
        if not isinstance(value, bool):
            raise CliError("config", f"{key}: expected a boolean, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise CliError("config", f"{key}: expected int, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CliError("config", f"{key}: expected float, got {value!r}")
        return float(value)
    if kind is str and not isinstance(value, str):
        raise CliError("config", f"{key}: expected a string, got {value!r}")
    return value


def _resolve_key(key: str) -> tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise CliError("config", f"unknown section {section!r} in key {key!r}")
        if name not in {f.name for f in fields(SECTIONS[section])}:
            raise CliError("config", f"unknown key {key!r}")
        return section, name
    if key in PATH_KEYS:
        return "", key
    owners = [s for s, cls in SECTIONS.items() if key in {f.name for f in fields(cls)}]
    if not owners:
        raise CliError("config", f"unknown key {key!r}")
    if len(owners) > 1:
        raise CliError("config", f"ambiguous key {key!r}; use one of "
                       + ", ".join(f"{s}.{key}" for s in owners))
    return owners[0], key


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """Defaults, then the JSON file, then ``key=value`` overrides, then ``seed``."""
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise CliError("io", f"cannot read config {path}: {exc.strerror}") from None
        try:
            raw = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise CliError("config", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(raw, dict):
            raise CliError("config", f"{path}: top level must be an object")

    values = {s: asdict(cls()) for s, cls in SECTIONS.items()}
    paths = {k: None for k in PATH_KEYS}

    def assign(section: str, name: str, value, label: str):
        if not section:
            if value is not None and not isinstance(value, str):
                raise CliError("config", f"{label}: expected a path string")
            paths[name] = value
            return
        values[section][name] = _coerce(label, value, values[section][name])

    for top, body in raw.items():
        if top in PATH_KEYS:
            assign("", top, body, top)
        elif top in SECTIONS:
            if not isinstance(body, dict):
                raise CliError("config", f"section {top!r} must be an object")
            for name, value in body.items():
                assign(*_resolve_key(f"{top}.{name}"), value, f"{top}.{name}")
        else:
            raise CliError("config", f"unknown key {top!r}")

    for item in overrides:
        if "=" not in item:
            raise CliError("config", f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        section, name = _resolve_key(key.strip())
        assign(section, name, value, key.strip())

    if seed is not None:
        for s in SECTIONS:
            values[s]["seed"] = seed
    try:
        built = {s: cls(**values[s]) for s, cls in SECTIONS.items()}
    except (ValueError, TypeError) as exc:
        raise CliError("config", str(exc)) from None
    return RunConfig(**built, **paths)


# ---------------------------------------------------------------------------
# helpers


def _taxonomy(cfg: RunConfig) -> Taxonomy:
    return load_taxonomy(cfg.taxonomy) if cfg.taxonomy else default_taxonomy()


def _dataset(cfg: RunConfig, taxonomy: Taxonomy) -> LabeledDataset:
    if cfg.dataset:
        return read_dataset(cfg.dataset)
    if cfg.data.n_items != taxonomy.n_items:
        raise CliError("config", f"data.n_items={cfg.data.n_items} but the taxonomy has "
                       f"{taxonomy.n_items} items")
    return generate_synthetic(cfg.data, taxonomy)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _prepare_out(out) -> Path:
    if out is None:
        raise CliError("usage", "--out is required for this command")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("io", f"cannot create {out}: {exc.strerror}") from None
    return out


def _metric_rows(final: dict) -> list[dict]:
    return [{"split": name, **final[name]} for name in ("val", "test") if name in final]


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig, args) -> int:
    out = _prepare_out(args.out)
    taxonomy = _taxonomy(cfg)
    ds = _dataset(cfg, taxonomy)
    write_dataset(ds, out)
    _write_json(out / "config.json", cfg.to_dict())
    log.info("wrote %d samples to %s", ds.n, out)
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    out = _prepare_out(args.out)
    _write_json(out / "config.json", cfg.to_dict())
    taxonomy = _taxonomy(cfg)
    ds = _dataset(cfg, taxonomy)
    splits = make_splits(ds, cfg.split)
    report = train(ds, splits, taxonomy, cfg.train)
    _write_json(out / "report.json", report.to_json())
    _write_json(out / "splits.json", splits.to_dict())
    report.params.save(out / "params")
    write_metrics_csv(out / "metrics.csv", _metric_rows(report.final), ["split"] + METRIC_COLUMNS)
    for name, m in report.final.items():
        print(f"{name}: " + " ".join(f"{k}={m[k]:.4f}" for k in METRIC_COLUMNS[:-1]))
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _prepare_out(args.out)
    _write_json(out / "config.json", cfg.to_dict())
    taxonomy = _taxonomy(cfg)
    ds = _dataset(cfg, taxonomy)
    if args.params:
        params = ProjectionParams.load(args.params)
    else:
        params = ProjectionParams.identity(ds.embeddings.dim)
    splits = make_splits(ds, cfg.split)
    idx = np.arange(ds.n) if args.split == "all" else getattr(splits, args.split)
    report = evaluate(params, ds, idx, taxonomy, cfg.train)
    row = {"split": args.split, **report.summary()}
    write_metrics_csv(out / "metrics.csv", [row], ["split"] + METRIC_COLUMNS)
    _write_json(out / "metrics.json", {"split": args.split, **report.to_json()})
    print(" ".join(f"{k}={row[k]:.4f}" for k in METRIC_COLUMNS[:-1]))
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    out = _prepare_out(args.out)
    _write_json(out / "config.json", cfg.to_dict())
    taxonomy = _taxonomy(cfg)
    ds = _dataset(cfg, taxonomy)
    splits: Splits = make_splits(ds, cfg.split)
    rows = run_ablation(ds, splits, taxonomy, cfg.train)
    write_ablation(rows, out)
    for r in rows:
        print(f"{r['variant']:>14s}  c1_top1={r['c1_top1']:.4f}  c2_coherent={r['c2_top1_coherent']:.4f}")
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    results = gradcheck.run(cfg.train.seed, args.h)
    width = max(len(n) for n, _ in results)
    for name, err in results:
        flag = "ok" if err <= gradcheck.TOLERANCE else "FAIL"
        print(f"{name:<{width}s}  {err:.3e}  {flag}")
    if args.out is not None:
        out = _prepare_out(args.out)
        _write_json(out / "config.json", cfg.to_dict())
        _write_json(out / "gradcheck.json", {"h": args.h, "tolerance": gradcheck.TOLERANCE,
                                              "max_relative_error": dict(results)})
    bad = [n for n, e in results if e > gradcheck.TOLERANCE]
    if bad:
        raise CliError("gradcheck", f"{len(bad)} case(s) above {gradcheck.TOLERANCE:g}: {', '.join(bad)}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hierrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (all files go here)")
        p.add_argument("--seed", type=int, help="sets data, split and train seeds")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field; repeatable")
        if name == "eval":
            p.add_argument("--params", help="directory written by train (default: identity)")
            p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
        if name == "gradcheck":
            p.add_argument("--h", type=float, default=1e-6, help="finite-difference step")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("HIER_LOG_LEVEL", "error").lower()
    if level not in LOG_LEVELS:
        raise CliError("config", f"HIER_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, args.set, args.seed)
        return COMMANDS[args.command](cfg, args)
    except CliError as exc:
        category, message = exc.category, str(exc)
    except (TaxonomyError, DatasetError, EmbeddingFileError) as exc:
        category, message = "data", str(exc)
    except TrainingDiverged as exc:
        category, message = "training", str(exc)
    except FileNotFoundError as exc:
        category, message = "io", f"{exc.strerror}: {exc.filename}"
    except OSError as exc:
        category, message = "io", str(exc)
    except ValueError as exc:
        category, message = "validation", str(exc)
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
