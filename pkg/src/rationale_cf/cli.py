"""Command line entry points.

Every command takes ``--out DIR`` and writes ``DIR/<command>.cfg``, a frozen
copy of the resolved run configuration. Errors are reported as a single JSON
line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .attention import export_rationales
from .config import ABLATIONS, TrainConfig, format_config, parse_config_file
from .estimator import RationaleRecommender
from .evaluation import DEFAULT_KS, evaluate_scores, popularity_scores
from .exceptions import ConfigError, EmptyDatasetError, NonFiniteError, ParseError, RationaleCFError
from .experiments import robustness_sweep, write_curve
from .graph import DEFAULT_RATIOS, DatasetSplit, ingest, perturb_noise, perturb_sparsify, split, write_tsv
from .trainer import Trainer

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_DATASET = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4

CHECKPOINT_NAME = "checkpoint.zip"
METRICS_NAME = "metrics.csv"

TRAIN_HELP = {
    "dim": "embedding width d",
    "heads": "attention heads (must divide dim)",
    "anchor_count": "number of anchor nodes for topology encoding",
    "cutoff": "hop cutoff q for anchor correlation",
    "topo_layers": "topology encoding layers",
    "gcn_layers": "propagation layers in the rationale branch",
    "ae_layers": "propagation layers in the autoencoder branch",
    "cir_layers": "propagation layers for the independence loss",
    "rho_r": "rationale keep rate",
    "rho_m": "masking keep rate",
    "rho_c": "complement keep rate (below rho_m)",
    "eps": "smoothing constant in reciprocal mask weights",
    "tau": "independence loss temperature",
    "lambda1": "weight of the rationale ranking loss",
    "lambda2": "weight of the independence loss",
    "lambda3": "weight decay",
    "lr": "Adam learning rate",
    "batch_size": "training edges per step",
    "max_epochs": "epoch budget",
    "patience": "early stopping patience in epochs",
    "seed": "master seed for every random stream",
    "ablation": "model variant",
    "rec_mode": "recommendation loss: full, sampled or auto",
    "rec_negatives": "negatives per positive in sampled mode",
    "clip_norm": "global gradient norm clip",
    "eval_k": "cutoff for validation recall",
    "resample_anchors": "draw fresh anchors every epoch",
}

# command-specific options: name -> (type, default, help)
COMMAND_OPTIONS = {
    "ingest": {},
    "split": {
        "ratios": (str, ",".join(map(str, DEFAULT_RATIOS)), "train,validation,test fractions"),
        "noise": (float, 0.0, "fraction of fake training edges to inject"),
        "sparsify": (float, 0.0, "fraction of training edges to drop"),
    },
    "train": {
        "resume": (bool, False, "continue from the checkpoint in --out if present"),
        "ks": (str, ",".join(map(str, DEFAULT_KS)), "cutoffs for the final test report"),
    },
    "eval": {
        "checkpoint": (str, None, "checkpoint archive (default: OUT/checkpoint.zip)"),
        "ks": (str, ",".join(map(str, DEFAULT_KS)), "comma-separated cutoffs"),
        "baseline": (str, "model", "model or popularity"),
    },
    "sweep": {
        "perturb": (str, "noise", "noise or sparsity"),
        "levels": (str, "0,0.1,0.2", "comma-separated perturbation levels"),
        "seeds": (str, None, "comma-separated seeds (default: --seed)"),
    },
    "export-rationales": {
        "checkpoint": (str, None, "checkpoint archive (default: OUT/checkpoint.zip)"),
        "top": (int, None, "keep only the highest scoring edges (default: all)"),
    },
}
USES_TRAIN_CONFIG = {"train", "eval", "sweep", "export-rationales"}
NEEDS_INPUT = {"ingest", "split"}


class CLIError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _parse_bool(value: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    defaults = TrainConfig()
    parser = _Parser(prog="rationale-cf", description="Rationale-aware graph collaborative filtering.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command, options in COMMAND_OPTIONS.items():
        p = sub.add_parser(command, argument_default=argparse.SUPPRESS)
        if command in NEEDS_INPUT:
            p.add_argument("input", help="interaction TSV: user_id<TAB>item_id[<TAB>rating]")
        else:
            p.add_argument("--data", help="split directory, or a raw TSV that is split with --seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--config", dest="config_file", help="key = value file; flags override it")
        for name, (typ, default, text) in options.items():
            if typ is bool:
                p.add_argument(_flag(name), dest=name, action="store_const", const=True, help=text)
            else:
                p.add_argument(_flag(name), dest=name, type=typ, help=text if default is None else f"{text} (default: {default})")
        if command in USES_TRAIN_CONFIG or command == "split":
            group = p.add_argument_group("model and training")
            for f in dataclasses.fields(TrainConfig):
                if command == "split" and f.name != "seed":
                    continue
                default = getattr(defaults, f.name)
                if f.name == "ablation":
                    group.add_argument("--ablate", dest="ablation", choices=ABLATIONS, metavar="VARIANT",
                                       help="--ablate " + "|".join(ABLATIONS) + f" (default: {default})")
                    continue
                typ = _parse_bool if isinstance(default, bool) else type(default)
                group.add_argument(_flag(f.name), dest=f.name, type=typ,
                                   help=f"{TRAIN_HELP.get(f.name, f.name)} (default: {default})")
    return parser


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Resolved settings of one command invocation."""
    command: str
    train: TrainConfig
    data: str | None
    out: str
    options: dict

    def manifest(self) -> str:
        head = {"command": self.command, "data": self.data, "out": self.out, **self.options}
        body = {k: v for k, v in head.items() if v is not None}
        text = "# resolved run configuration\n" + format_config(body)
        if self.command in USES_TRAIN_CONFIG or self.command == "split":
            text += format_config(self.train.to_dict())
        return text


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional config file and explicit flags (in that order)."""
    command = args.command
    given = {k: v for k, v in vars(args).items() if k not in ("command", "config_file", "input")}
    options_spec = COMMAND_OPTIONS[command]
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    file_values: dict[str, str] = {}
    if getattr(args, "config_file", None):
        path = Path(args.config_file)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        file_values = parse_config_file(path)
        if file_values.pop("command", command) != command:
            raise ConfigError(f"config file was written for a different command than {command!r}")
        allowed = train_keys | set(options_spec) | {"data", "out"}
        unknown = sorted(set(file_values) - allowed)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = {**file_values, **given}
    if command in NEEDS_INPUT:
        merged["data"] = args.input
    if "out" not in merged:
        raise ConfigError("--out is required")
    if command not in NEEDS_INPUT and "data" not in merged:
        raise ConfigError("--data is required")
    train = TrainConfig.from_mapping({k: v for k, v in merged.items() if k in train_keys})
    options = {}
    for name, (typ, default, _) in options_spec.items():
        value = merged.get(name, default)
        if isinstance(value, str) and typ is not str:
            value = _parse_bool(value) if typ is bool else _coerce(typ, name, value)
        options[name] = value
    return RunConfig(command, train, str(merged["data"]), str(merged["out"]), options)


def _coerce(typ, name, value):
    try:
        return typ(value)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def _floats(text: str, name: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad list for {name}: {text!r}") from None


def _ints(text: str, name: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad list for {name}: {text!r}") from None


def load_data(path: str, seed: int) -> DatasetSplit:
    p = Path(path)
    if p.is_dir():
        if not (p / "split.json").is_file():
            raise FileNotFoundError(f"no split.json in {p}")
        return DatasetSplit.load(p)
    if not p.is_file():
        raise FileNotFoundError(f"dataset not found: {p}")
    return split(ingest(p), seed=seed)


def _prepare_out(run: RunConfig) -> Path:
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{run.command}.cfg").write_text(run.manifest(), encoding="utf-8")
    return out


def _echo(text: str) -> None:
    print(text, file=sys.stderr)


# commands


def cmd_ingest(run: RunConfig) -> dict:
    graph = ingest(run.data)
    out = _prepare_out(run)
    write_tsv(graph, out / "interactions.tsv")
    summary = {"n_users": graph.n_users, "n_items": graph.n_items, "n_edges": graph.n_edges,
               "duplicates_dropped": graph.duplicates_dropped}
    (out / "ingest.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_split(run: RunConfig) -> dict:
    ratios = _floats(run.options["ratios"], "ratios")
    if len(ratios) != 3:
        raise ConfigError("ratios needs three comma-separated values")
    seed = run.train.seed
    data = split(ingest(run.data), ratios, seed=seed)
    if run.options["noise"] > 0:
        data = perturb_noise(data, run.options["noise"], seed=seed)
    if run.options["sparsify"] > 0:
        data = perturb_sparsify(data, run.options["sparsify"], seed=seed)
    out = _prepare_out(run)
    data.save(out)
    return data.counts()


def cmd_train(run: RunConfig) -> dict:
    data = load_data(run.data, run.train.seed)
    out = _prepare_out(run)
    ckpt = out / CHECKPOINT_NAME
    if run.options["resume"] and ckpt.is_file():
        trainer = Trainer.load(ckpt, data)
        if trainer.config != run.train:
            raise ConfigError("checkpoint was written with a different configuration")
    else:
        trainer = Trainer(run.train, data)

    def progress(res, score):
        val = "n/a" if score is None else f"{score:.4f}"
        _echo(f"epoch {res.epoch} total={res.losses.total:.6g} val_recall={val} ({res.seconds:.1f}s)")

    try:
        trainer.fit(metrics_path=out / METRICS_NAME, checkpoint_path=ckpt, progress=progress)
    except NonFiniteError as exc:
        raise CLIError(EXIT_NUMERIC, "NonFiniteError", str(exc), checkpoint=str(ckpt)) from exc
    est = RationaleRecommender.from_trainer(trainer)
    report = est.evaluate(data.test, _ints(run.options["ks"], "ks")) if data.test.n_edges else None
    if report is not None:
        report.write(out / "eval.json")
    return {"epochs": trainer.epoch, "best_epoch": trainer.best_epoch, "checkpoint": str(ckpt),
            "test_recall": None if report is None else {str(k): v for k, v in report.recall.items()}}


def _load_trained(run: RunConfig, data: DatasetSplit) -> RationaleRecommender:
    ckpt = Path(run.options["checkpoint"] or Path(run.out) / CHECKPOINT_NAME)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    return RationaleRecommender.from_trainer(Trainer.load(ckpt, data))


def cmd_eval(run: RunConfig) -> dict:
    data = load_data(run.data, run.train.seed)
    ks = _ints(run.options["ks"], "ks")
    baseline = run.options["baseline"]
    if baseline == "popularity":
        report = evaluate_scores(popularity_scores(data.train), data.train, data.test, ks)
    elif baseline == "model":
        report = _load_trained(run, data).evaluate(data.test, ks)
    else:
        raise ConfigError(f"unknown baseline {baseline!r}")
    out = _prepare_out(run)
    report.write(out / "eval.json")
    return json.loads(report.to_json())


def cmd_sweep(run: RunConfig) -> dict:
    data = load_data(run.data, run.train.seed)
    levels = _floats(run.options["levels"], "levels")
    seeds = _ints(run.options["seeds"], "seeds") if run.options["seeds"] else [run.train.seed]
    out = _prepare_out(run)
    points = robustness_sweep(run.train, data, run.options["perturb"], levels, seeds,
                              progress=lambda lv, s, r: _echo(f"level {lv} seed {s} done"))
    write_curve(points, out / "curve.csv")
    return {"levels": levels, "recall@20": [p.recall for p in points]}


def cmd_export_rationales(run: RunConfig) -> dict:
    data = load_data(run.data, run.train.seed)
    est = _load_trained(run, data)
    out = _prepare_out(run)
    g = data.train
    scores = est.rationale_scores()
    n = export_rationales(scores, out / "rationales.csv", g.user_ids or None, g.item_ids or None,
                          top=run.options["top"], ratings=g.ratings)
    return {"rows": n, "path": str(out / "rationales.csv")}


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "export-rationales": cmd_export_rationales,
}


def _fail(code: int, kind: str, message: str, **extra) -> int:
    payload = {"error": kind, "exit_code": code, "message": " ".join(str(message).split()), **extra}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        run = resolve(args)
        if args.command in USES_TRAIN_CONFIG:
            _echo("# resolved configuration (defaults unless overridden)")
            for k, v in run.train.to_dict().items():
                _echo(f"#   {k} = {v}")
        result = COMMANDS[args.command](run)
    except CLIError as exc:
        return _fail(exc.code, exc.kind, str(exc), **exc.extra)
    except (FileNotFoundError, EmptyDatasetError, ParseError) as exc:
        return _fail(EXIT_DATASET, type(exc).__name__, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "ConfigError", str(exc))
    except NonFiniteError as exc:
        return _fail(EXIT_NUMERIC, "NonFiniteError", str(exc))
    except RationaleCFError as exc:
        return _fail(EXIT_FAILURE, type(exc).__name__, str(exc))
    print(json.dumps(result, default=_jsonable))
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


if __name__ == "__main__":
    sys.exit(main())
