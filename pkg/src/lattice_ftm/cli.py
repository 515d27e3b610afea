"""Command-line entry point: ``lattice-ftm <command> [options]``.

Exit codes: 0 success, 1 runtime or data failure, 2 usage error.

Every command also takes ``--config FILE``: a JSON object whose keys are the
command's long option names with dashes replaced by underscores (for example
``{"model": "masked-sagnn", "depth": 2}``). Unknown keys are rejected and
explicit flags win over file values.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from .evaluation import MetricError, asr_output_baseline, evaluate, score_lattices
from .lattice import (
    FEATURE_DIM,
    Label,
    Lattice,
    LatticeError,
    arc_neighbors,
    build_line_graph,
    parse_corpus,
    serialize_corpus,
)
from .models import (
    CheckpointError,
    ModelConfig,
    Variant,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .synthgen import TRIGGER_PHRASE, SynthSpec, gen_corpus
from .training import Hyperparams, TrainingDivergedError, train
from .verification import DEFAULT_DEPTHS, GRADCHECK_TOLERANCE, check_variant

MODEL_CHOICES = ["gcn", "resgcn", "sagnn", "masked-sagnn", "masked_sagnn"]
RUNTIME_ERRORS = (LatticeError, MetricError, CheckpointError, TrainingDivergedError, OSError)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=MODEL_CHOICES, help="architecture (default gcn)")
    p.add_argument("--depth", type=int, help="GC layers, residual blocks or SA layers")
    p.add_argument("--heads", type=int, help="attention heads (default 4)")
    p.add_argument("--hidden", type=int, help="hidden width (default 64)")
    p.add_argument("--attention-scaling", action="store_true", default=None,
                   help="divide attention logits by sqrt(head_dim)")
    p.add_argument("--seed", type=int, help="initialization seed (default 0)")


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    defaults = SynthSpec()
    for name in SynthSpec.field_names():
        if name in ("num_true", "num_false", "seed"):
            continue
        value = getattr(defaults, name)
        p.add_argument("--" + name.replace("_", "-"), type=type(value),
                       help=f"default {value}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lattice-ftm",
                                     description="False-trigger mitigation on ASR lattices with GNNs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic labelled corpus")
    p.add_argument("--true", dest="num_true", type=int, help="true-trigger lattices (default 100)")
    p.add_argument("--false", dest="num_false", type=int, help="false-trigger lattices (default 100)")
    p.add_argument("--seed", type=int, help="generator seed (default 0)")
    p.add_argument("--prefix", help="utterance id prefix (default utt)")
    p.add_argument("--out", help="corpus file to write (required)")
    _add_synth_flags(p)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--train", dest="train_corpus", help="training corpus")
    p.add_argument("--val", dest="val_corpus", help="validation corpus")
    p.add_argument("--out-dir", help="directory for checkpoint.json and history.csv")
    _add_model_flags(p)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="learning rate (default 1e-3)")
    p.add_argument("--epochs", type=int, help="maximum epochs (default 50)")
    p.add_argument("--patience", type=int, help="early-stop patience on validation AUC (default 5)")
    p.add_argument("--shuffle-seed", type=int)
    p.add_argument("--dry-run", action="store_true", default=None,
                   help="print the parameter count and exit")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the ASR-output baseline")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus", help="labelled corpus")
    p.add_argument("--out-dir", help="directory for report.txt, roc.csv, scores.csv")
    p.add_argument("--baseline", choices=["asr-output"], help="evaluate the 1-best baseline instead")
    p.add_argument("--trigger-phrase", help=f"default {' '.join(TRIGGER_PHRASE)!r}")
    p.add_argument("--am-weight", type=float, help="default 1.0")
    p.add_argument("--lm-weight", type=float, help="default 1.0")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("predict", help="score lattices and apply a threshold")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--threshold", type=float, help="accept iff score < threshold (default 0.5)")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every model variant")
    p.add_argument("--model", choices=MODEL_CHOICES, help="check one variant only")
    p.add_argument("--depth", type=int, help="override the per-variant depth")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float, help="central-difference step (default 1e-5)")
    p.add_argument("--corrupt-gradient", action="store_true", default=None, help=argparse.SUPPRESS)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("export-dot", help="DOT text of a lattice or its arc-adjacency graph")
    p.add_argument("--corpus")
    p.add_argument("--utt-id", help="utterance to export")
    p.add_argument("--line-graph", action="store_true", default=None)
    p.set_defaults(handler=cmd_export_dot)

    for action in sub.choices.values():
        action.add_argument("--config", help="JSON file with option values")
    return parser


_JSON_TYPES = {int: "integer", float: "number", str: "string"}


def config_schema(sub: argparse.ArgumentParser) -> dict:
    """JSON schema accepted by ``--config`` for one command."""
    props = {}
    for action in sub._actions:
        if action.dest in ("help", "config", "handler") or not action.option_strings:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            schema = {"type": "boolean"}
        else:
            schema = {"type": _JSON_TYPES.get(action.type or str, "string")}
            if action.choices:
                schema["enum"] = list(action.choices)
        props[action.dest] = schema
    return {"type": "object", "properties": props, "additionalProperties": False}


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    return parser._subparsers._group_actions[0].choices[command]


def resolve_args(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config:
        sub = _subparser(parser, args.command)
        try:
            values = json.loads(Path(args.config).read_text(encoding="utf-8"))
            jsonschema.validate(values, config_schema(sub))
        except (OSError, json.JSONDecodeError) as err:
            sub.error(f"cannot read config {args.config}: {err}")
        except jsonschema.ValidationError as err:
            sub.error(f"invalid config {args.config}: {err.message}")
        for key, value in values.items():
            if getattr(args, key) is None:
                setattr(args, key, value)
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError("missing required option(s): " +
                         ", ".join("--" + n.replace("_", "-") for n in missing))


def _pick(value, default):
    return default if value is None else value


def _effective(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())
            if k not in ("handler", "config", "verbose", "command") and v is not None}


def _echo_config(out_dir: Path, args) -> None:
    doc = {"command": args.command, "options": _effective(args)}
    (out_dir / "effective_config.json").write_text(json.dumps(doc, indent=2) + "\n",
                                                    encoding="utf-8")


def _read_corpus(path) -> list[Lattice]:
    lattices = parse_corpus(Path(path).read_text(encoding="utf-8"))
    if not lattices:
        raise LatticeError(f"{path}: no lattices")
    return lattices


def _load_model(path):
    config, params = load_checkpoint(path)
    if config.input_dim != FEATURE_DIM:
        raise CheckpointError(f"checkpoint expects {config.input_dim} arc features, "
                              f"corpus provides {FEATURE_DIM}")
    return config, params


def _model_config(args) -> ModelConfig:
    return ModelConfig(Variant.parse(_pick(args.model, "gcn")),
                       depth=_pick(args.depth, 2),
                       hidden_dim=_pick(args.hidden, 64),
                       num_heads=_pick(args.heads, 4),
                       attention_scaling=bool(args.attention_scaling),
                       seed=_pick(args.seed, 0))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    _require(args, "out")
    values = {name: getattr(args, name) for name in SynthSpec.field_names()
              if getattr(args, name, None) is not None}
    try:
        spec = SynthSpec(**values)
    except ValueError as err:
        raise UsageError(str(err)) from None
    corpus = gen_corpus(spec, _pick(args.prefix, "utt"))
    Path(args.out).write_text(serialize_corpus(corpus), encoding="utf-8")
    n_true = sum(lat.label is Label.TRUE_TRIGGER for lat in corpus)
    print(f"lattices={len(corpus)} true={n_true} false={len(corpus) - n_true} out={args.out}")
    return 0


def cmd_train(args) -> int:
    try:
        config = _model_config(args)
        hp = Hyperparams(batch_size=_pick(args.batch_size, 32),
                         learning_rate=_pick(args.lr, 1e-3),
                         epochs=_pick(args.epochs, 50),
                         early_stop_patience=_pick(args.patience, 5),
                         shuffle_seed=_pick(args.shuffle_seed, 0))
    except ValueError as err:
        raise UsageError(str(err)) from None
    if args.dry_run:
        print(f"params={param_count(config)}")
        return 0
    _require(args, "train_corpus", "val_corpus", "out_dir")
    train_set = [build_line_graph(lat) for lat in _read_corpus(args.train_corpus)]
    val_set = [build_line_graph(lat) for lat in _read_corpus(args.val_corpus)]
    for name, data in (("training", train_set), ("validation", val_set)):
        if any(s.label is Label.UNLABELED for s in data):
            raise LatticeError(f"{name} corpus contains unlabeled lattices")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(out_dir, args)
    params, history = train(config, train_set, val_set, hp)
    save_checkpoint(out_dir / "checkpoint.json", config, params)
    (out_dir / "history.csv").write_text(history.to_csv(), encoding="utf-8")
    best = history.best
    if best is None:
        print("best_epoch=0 val_auc=nan")
    else:
        print(f"best_epoch={best.epoch} val_auc={best.val_auc:.6f}")
    return 0


def cmd_eval(args) -> int:
    _require(args, "corpus")
    lattices = _read_corpus(args.corpus)
    if args.baseline == "asr-output":
        phrase = _pick(args.trigger_phrase, " ".join(TRIGGER_PHRASE)).split()
        tpr, far = asr_output_baseline(lattices, phrase, _pick(args.am_weight, 1.0),
                                       _pick(args.lm_weight, 1.0))
        print(f"baseline=asr-output tpr={tpr:.6f} far={far:.6f}")
        if args.out_dir:
            out_dir = Path(args.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            _echo_config(out_dir, args)
            (out_dir / "report.txt").write_text(f"baseline: asr-output\ntpr: {tpr!r}\nfar: {far!r}\n",
                                                encoding="utf-8")
        return 0
    _require(args, "checkpoint")
    config, params = _load_model(args.checkpoint)
    report = evaluate(config, params, lattices)
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _echo_config(out_dir, args)
        (out_dir / "report.txt").write_text(report.summary_text(), encoding="utf-8")
        (out_dir / "roc.csv").write_text(report.roc_csv(), encoding="utf-8")
        (out_dir / "scores.csv").write_text(report.scores_csv(), encoding="utf-8")
    print(report.summary())
    return 0


def cmd_predict(args) -> int:
    _require(args, "checkpoint", "corpus")
    threshold = _pick(args.threshold, 0.5)
    config, params = _load_model(args.checkpoint)
    lattices = _read_corpus(args.corpus)
    scores = score_lattices(config, params, lattices)
    for lat, score in zip(lattices, scores):
        decision = "accept" if score < threshold else "reject"
        print(f"{lat.utterance_id}\t{score:.9g}\t{decision}")
    return 0


def _corrupt(grads: list[np.ndarray]) -> None:
    # off by 1% on the first entry with a clearly nonzero gradient
    for g in grads:
        flat = g.reshape(-1)
        big = np.flatnonzero(np.abs(flat) > 1e-6)
        if big.size:
            flat[big[0]] *= 1.01
            return


def cmd_gradcheck(args) -> int:
    variants = [Variant.parse(args.model)] if args.model else list(Variant)
    worst = None
    for v in variants:
        report = check_variant(v, args.depth, _pick(args.seed, 1), _pick(args.eps, 1e-5),
                               _corrupt if args.corrupt_gradient else None)
        depth = _pick(args.depth, DEFAULT_DEPTHS[v])
        ok = report.max_error < GRADCHECK_TOLERANCE
        print(f"{v.value} depth={depth} entries={report.entries} "
              f"max_rel_error={report.max_error:.3e} "
              f"worst={report.worst_parameter}{list(report.worst_index)} "
              f"{'PASS' if ok else 'FAIL'}")
        if worst is None or report.max_error > worst[1].max_error:
            worst = (v, report)
    v, report = worst
    if report.max_error >= GRADCHECK_TOLERANCE:
        print(f"gradcheck failed: worst parameter {v.value}:{report.worst_parameter}"
              f"{list(report.worst_index)} analytic={report.analytic:.6e} "
              f"numeric={report.numeric:.6e}", file=sys.stderr)
        return 1
    return 0


def lattice_to_dot(lattice: Lattice) -> str:
    lines = [f'digraph "{lattice.utterance_id}" {{', "  rankdir=LR;"]
    used = sorted({s for a in lattice.arcs for s in (a.start, a.end)})
    for s in used:
        lines.append(f'  s{s} [label="{s}"];')
    for a in lattice.arcs:
        lines.append(f'  s{a.start} -> s{a.end} [label="{a.word}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def line_graph_to_dot(lattice: Lattice) -> str:
    sample = build_line_graph(lattice)
    lines = [f'digraph "{lattice.utterance_id}_arcs" {{']
    for i, arc in enumerate(lattice.arcs):
        lines.append(f'  a{i} [label="{arc.word} ({arc.start}->{arc.end})"];')
    for i, nb in enumerate(arc_neighbors(lattice)):
        for j in sorted({i, *nb}):
            w = Fraction(sample.adjacency[i, j]).limit_denominator(lattice.num_arcs)
            lines.append(f'  a{i} -> a{j} [label="{w}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_export_dot(args) -> int:
    _require(args, "corpus", "utt_id")
    matches = [lat for lat in _read_corpus(args.corpus) if lat.utterance_id == args.utt_id]
    if not matches:
        raise LatticeError(f"no lattice with utterance id {args.utt_id!r}")
    lattice = matches[0]
    sys.stdout.write(line_graph_to_dot(lattice) if args.line_graph else lattice_to_dot(lattice))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = resolve_args(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except UsageError as err:
        _subparser(parser, args.command).print_usage(sys.stderr)
        print(f"lattice-ftm {args.command}: error: {err}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as err:
        print(f"lattice-ftm {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
