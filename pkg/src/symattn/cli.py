"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 64 usage
error.  Errors go to stderr as ``error_code:<name> <message>``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import data as D
from . import harness as H
from . import metrics
from .gradcheck import check_model
from .model import TAU_MODES
from .numkern import DimensionError, DomainError, InvalidInputError, StateError
from .optim import TrainingError, load_checkpoint

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class CliError(Exception):
    def __init__(self, code: str, message: str, exit_code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt():
    return argparse.ArgumentDefaultsHelpFormatter


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="symattn", description=__doc__.splitlines()[0], formatter_class=_fmt())
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a planted synthetic corpus", formatter_class=_fmt())
    s.add_argument("--seed", type=int, required=True, help="generator seed")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--train", type=int, default=48, help="training participants")
    s.add_argument("--dev", type=int, default=16, help="development participants")
    s.add_argument("--test", type=int, default=16, help="test participants")
    s.add_argument("--dim", type=int, default=64, help="embedding dimension d_k")
    s.add_argument("--dispersion", choices=D.DISPERSIONS, default="uniform",
                   help="how relevant segments are spread per symptom")

    t = sub.add_parser("train", help="train and write checkpoint, log and metrics",
                       formatter_class=_fmt())
    t.add_argument("--config", required=True, help="experiment JSON")
    t.add_argument("--seed", type=int, default=None, help="overrides config seed")
    t.add_argument("--tau-mode", choices=TAU_MODES, default=None, help="overrides config")
    t.add_argument("--out", default=None, help="overrides config out_dir")

    e = sub.add_parser("eval", help="print metrics for a checkpoint", formatter_class=_fmt())
    e.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    e.add_argument("--manifest", required=True, help="corpus manifest (JSON lines)")
    e.add_argument("--split", choices=("dev", "test"), default="test", help="split to score")
    e.add_argument("--json", action="store_true", help="print the report as JSON")

    a = sub.add_parser("attend", help="export attention maps", formatter_class=_fmt())
    a.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    a.add_argument("--manifest", required=True, help="corpus manifest (JSON lines)")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--split", choices=("train", "dev", "test"), default="test",
                   help="split to export")
    a.add_argument("--relevance", default=None, help="ground-truth relevance JSON (synthetic)")

    b = sub.add_parser("ablate", help="run the tau ablation", formatter_class=_fmt())
    b.add_argument("--config", required=True, help="experiment JSON")
    b.add_argument("--out", required=True, help="output directory")

    g = sub.add_parser("gradcheck", help="finite-difference check of model gradients",
                       formatter_class=_fmt())
    g.add_argument("--dim", type=int, default=6, help="embedding dimension")
    g.add_argument("--segments", type=int, default=4, help="segments in the test input")
    g.add_argument("--hidden", type=int, default=3, help="head hidden width")
    g.add_argument("--tau-mode", choices=TAU_MODES, default="per_symptom", help="temperature mode")
    g.add_argument("--seed", type=int, default=0, help="seed for the random problem")
    return p


def _load_spec(path, **overrides) -> H.ExperimentSpec:
    path = Path(path)
    if not path.exists():
        raise CliError("config_not_found", f"no config file at {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError("bad_config", f"{path}: {exc}") from exc
    for key, value in overrides.items():
        if value is not None:
            if key == "tau_mode":
                raw.setdefault("model", {})["tau_mode"] = value
            else:
                raw[key] = value
    # relative corpus paths resolve against the config file
    src = raw.get("source", {})
    for key in ("manifest", "queries", "relevance"):
        if key in src and not Path(src[key]).is_absolute():
            src[key] = str(path.parent / src[key])
    return H.ExperimentSpec.from_dict(raw)


def _checkpoint(path):
    if not Path(path).exists():
        raise CliError("checkpoint_not_found", f"no checkpoint at {path}")
    try:
        return load_checkpoint(path)
    except ValueError as exc:
        raise CliError("bad_checkpoint", str(exc)) from exc


def _manifest(path) -> D.Corpus:
    if not Path(path).exists():
        raise CliError("manifest_not_found", f"no manifest at {path}")
    return D.load_corpus(path)


def cmd_synth(args) -> int:
    syn = D.generate_synthetic(args.seed, args.train, args.dev, args.test, args.dim,
                               dispersion=args.dispersion)
    manifest = D.write_synthetic(args.out, syn)
    print(f"wrote {len(syn.corpus.records)} participants to {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    spec = _load_spec(args.config, seed=args.seed, tau_mode=args.tau_mode, out_dir=args.out)
    if not spec.out_dir:
        raise CliError("missing_out_dir", "no output directory (set out_dir or --out)")
    start = time.perf_counter()
    res = H.run_training(spec)
    print(res.test_report.table())
    print(f"best epoch {res.best_epoch}, dev RMSE {res.dev_rmse:.4f}, "
          f"{time.perf_counter() - start:.1f}s", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    params, _ = _checkpoint(args.checkpoint)
    corpus = _manifest(args.manifest)
    if params.config.embed_dim != corpus.d_k:
        raise CliError("dimension_mismatch",
                       f"checkpoint dim {params.config.embed_dim} vs corpus dim {corpus.d_k}")
    records = corpus.split(args.split)
    if not records:
        raise CliError("empty_split", f"split {args.split!r} has no participants")
    rep = metrics.evaluate(params, records)
    print(H.dumps(rep.to_dict()) if args.json else rep.table())
    return EXIT_OK


def cmd_attend(args) -> int:
    _checkpoint(args.checkpoint)
    corpus = _manifest(args.manifest)
    relevance = json.loads(Path(args.relevance).read_text()) if args.relevance else None
    summary = H.attention_report_from_checkpoint(args.checkpoint, corpus, args.out, relevance,
                                                 args.split)
    print(H.dumps(summary))
    return EXIT_OK


def cmd_ablate(args) -> int:
    spec = _load_spec(args.config, out_dir=args.out)
    rows = H.run_tau_ablation(spec)
    print(H.ablation_table(rows))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    start = time.perf_counter()
    res = check_model(args.dim, args.segments, args.hidden, args.tau_mode, args.seed)
    for name, err in res.per_param.items():
        print(f"{name:<12}{err:.3e}")
    print(f"max_rel_err {res.max_rel_err:.3e}")
    print(f"max_abs_err {res.max_abs_err:.3e}")
    print(f"max_rel_err_significant {res.max_rel_err_significant:.3e}  (|grad| >= 1e-6)")
    print(f"checked {res.n_checked} parameters")
    print(f"{time.perf_counter() - start:.2f}s", file=sys.stderr)
    return EXIT_OK if res.max_rel_err < 1e-5 else EXIT_NUMERIC


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "attend": cmd_attend,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def _fail(code: str, message: str, exit_code: int) -> int:
    print(f"error_code:{code} {message}", file=sys.stderr)
    return exit_code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        return _fail(exc.code, str(exc), exc.exit_code)
    except (TrainingError, FloatingPointError) as exc:
        return _fail("numerical_failure", str(exc), EXIT_NUMERIC)
    except (D.FormatError, D.LengthError) as exc:
        return _fail("bad_file_format", str(exc), EXIT_VALIDATION)
    except (D.ValidationError, InvalidInputError, DimensionError, DomainError,
            StateError) as exc:
        return _fail("validation", str(exc), EXIT_VALIDATION)
    except FileNotFoundError as exc:
        return _fail("file_not_found", str(exc), EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
