"""Command line entry point: ``attenfair <subcommand> ...``.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from fractions import Fraction
from typing import List, Optional, Sequence

from . import bias_model, fairness
from ._io import atomic_write
from .checks import DEFAULT_TOL, run_gradcheck

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class DomainError(Exception):
    """Failure caused by the inputs' content rather than the invocation."""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _color(text: str, code: str) -> str:
    if os.environ.get("NO_COLOR") or not sys.stderr.isatty():
        return text
    return f"\033[{code}m{text}\033[0m"


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc.strerror}") from None


def _read_json(path: str):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: invalid JSON: {exc}") from None


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        try:
            atomic_write(out, text)
        except OSError as exc:
            raise DomainError(f"cannot write {out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text)


# -- eval ------------------------------------------------------------------


def cmd_eval(args) -> int:
    try:
        records = fairness.read_predictions_csv(_read_text(args.pred))
    except fairness.CsvSchemaError as exc:
        raise UsageError(f"{args.pred}: {exc}") from None
    if not records:
        raise DomainError(f"{args.pred}: no records")
    report = fairness.evaluate(fairness.tally(records, args.classes))
    for k, a, rate in report.skipped_classes:
        print(f"skipped: class {k} group {a} {rate} undefined (zero denominator)", file=sys.stderr)
    if args.markdown:
        text = fairness.markdown_table([(os.path.basename(args.pred), report.to_dict(), None)])
    else:
        text = report.to_json() + "\n"
    _emit(text, args.out)
    return EXIT_OK


# -- fate ------------------------------------------------------------------


def _parse_sweep(spec: str) -> List[float]:
    try:
        a, b, step = (Fraction(p) for p in spec.split(":"))
    except ValueError:
        raise UsageError(f"--sweep expects A:B:STEP, got {spec!r}") from None
    if step <= 0 or b < a:
        raise UsageError("--sweep needs STEP > 0 and A <= B")
    n = int((b - a) / step)
    return [float(a + i * step) for i in range(n + 1)]


def cmd_fate(args) -> int:
    base = _read_json(args.base)
    mitig = _read_json(args.mitig)
    for name, rep in (("base", base), ("mitig", mitig)):
        missing = [k for k in (args.acc, args.metric) if not isinstance(rep, dict) or rep.get(k) is None]
        if missing:
            raise DomainError(f"--{name} report lacks {missing}")
    try:
        if args.sweep is None:
            value = fairness.fate_from_reports(base, mitig, args.metric, args.lam, args.acc)
            text = json.dumps({"lambda": args.lam, "metric": args.metric, "fate": value}, sort_keys=True) + "\n"
        else:
            lambdas = _parse_sweep(args.sweep)
            rows = [(lam, fairness.fate_from_reports(base, mitig, args.metric, lam, args.acc)) for lam in lambdas]
            if args.json:
                text = json.dumps([{"lambda": l, "fate": f} for l, f in rows], sort_keys=True) + "\n"
            else:
                text = "lambda,fate\n" + "".join(f"{l!r},{f!r}\n" for l, f in rows)
    except fairness.FairnessError as exc:
        raise DomainError(str(exc)) from None
    _emit(text, args.out)
    return EXIT_OK


# -- bias ------------------------------------------------------------------


def _quad(doc, key):
    try:
        return bias_model.ConfusionQuad.from_dict(doc[key])
    except (KeyError, TypeError):
        raise DomainError(f"input lacks a {key!r} quad with tp/fp/tn/fn") from None


def cmd_bias(args) -> int:
    doc = _read_json(args.input)
    if not isinstance(doc, dict):
        raise DomainError("input must be a JSON object")
    if args.action == "synth":
        base = _quad(doc, "base")
        if "params" not in doc:
            raise DomainError("input lacks 'params'")
        params = bias_model.BiasParams.from_dict(doc["params"])
        quad_a, quad_ap = bias_model.synthesize(base, params)
        gaps = bias_model.closed_form_gaps(base, params)
        out = {"A": quad_a.to_dict(), "A_prime": quad_ap.to_dict(), "params": params.to_dict()}
    else:
        quad_a, quad_ap = _quad(doc, "A"), _quad(doc, "A_prime")
        params = bias_model.estimate(quad_a, quad_ap)
        gaps = bias_model.metric_gaps(quad_a, quad_ap)
        out = {"params": params.to_dict(), "A": quad_a.to_dict(), "A_prime": quad_ap.to_dict()}
    out["gaps"] = {k: float(v) for k, v in zip(fairness.FC_METRICS, gaps)}
    out["gaps_exact"] = {k: str(v) for k, v in zip(fairness.FC_METRICS, gaps)}
    _emit(json.dumps(out, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


# -- experiment ------------------------------------------------------------


def cmd_experiment(args) -> int:
    from .synthlab.experiment import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.from_json(_read_text(args.config))
    if args.seeds:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seeds": args.seeds})
    try:
        os.makedirs(args.out, exist_ok=True)
        if not os.access(args.out, os.W_OK):
            raise PermissionError(13, "Permission denied")
    except OSError as exc:
        raise DomainError(f"cannot write to {args.out}: {exc.strerror}") from None
    result = run_experiment(cfg)
    try:
        written = result.write(args.out)
    except OSError as exc:
        raise DomainError(f"cannot write to {args.out}: {exc.strerror}") from None
    sys.stdout.write(result.to_markdown())
    logging.getLogger(__name__).info("wrote %d files to %s", len(written), args.out)
    return EXIT_OK


# -- gradcheck -------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    if args.step <= 0:
        raise UsageError("--step must be positive")
    worst = run_gradcheck(seed=args.seed, step=args.step, trials=args.trials)
    failed = False
    width = max(len(k) for k in worst)
    for name, err in worst.items():
        ok = err < args.tol
        failed |= not ok
        tag = _color("ok", "32") if ok else _color("FAIL", "31")
        print(f"{name:<{width}}  {err:.3e}  {tag}")
    return EXIT_DOMAIN if failed else EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="attenfair", description="Group fairness metrics, shortcut-bias algebra and attention experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress (with timestamps) to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("eval", help="fairness report from a prediction CSV")
    e.add_argument("--pred", required=True, metavar="FILE.csv", help="CSV with sample_id,y_true,y_pred,sensitive")
    e.add_argument("--classes", required=True, type=int, metavar="K", help="number of classes")
    fmt = e.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true", help="JSON output (default)")
    fmt.add_argument("--markdown", action="store_true", help="Markdown table output")
    e.add_argument("--out", metavar="FILE", help="write to FILE instead of stdout")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fate", help="FATE of a mitigated report against a baseline report")
    f.add_argument("--base", required=True, metavar="FILE.json", help="baseline report (as written by eval)")
    f.add_argument("--mitig", required=True, metavar="FILE.json", help="mitigated report")
    lam = f.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float, default=1.0, help="fairness weight (default 1.0)")
    lam.add_argument("--sweep", metavar="A:B:STEP", help="evaluate every lambda in [A, B] with step STEP")
    f.add_argument("--metric", choices=fairness.FC_METRICS, default="eodd", help="fairness metric (default eodd)")
    f.add_argument("--acc", choices=fairness.ACC_AGGREGATIONS, default="macro_f1",
                   help="accuracy figure (default macro_f1)")
    f.add_argument("--json", action="store_true", help="sweep as JSON instead of CSV")
    f.add_argument("--out", metavar="FILE", help="write to FILE instead of stdout")
    f.set_defaults(func=cmd_fate)

    b = sub.add_parser("bias", help="shortcut-bias confusion algebra")
    b.add_argument("action", choices=("synth", "analyze"),
                   help="synth: {base, params} -> quads; analyze: {A, A_prime} -> params")
    b.add_argument("--input", "-i", required=True, metavar="FILE.json", help="input JSON document")
    b.add_argument("--out", metavar="FILE", help="write to FILE instead of stdout")
    b.set_defaults(func=cmd_bias)

    x = sub.add_parser("experiment", help="synthetic shortcut experiments")
    xs = x.add_subparsers(dest="action", required=True, parser_class=_Parser)
    run = xs.add_parser("run", help="train all modes on all seeds and write reports")
    run.add_argument("--config", required=True, metavar="FILE.json", help="experiment config")
    run.add_argument("--out", required=True, metavar="DIR", help="output directory (created if missing)")
    run.add_argument("--seeds", type=int, nargs="+", metavar="S", help="override the config's seeds")
    run.set_defaults(func=cmd_experiment)

    def add_gradcheck_flags(g):
        g.add_argument("--seed", type=int, default=0, help="seed for the random inputs (default 0)")
        g.add_argument("--step", type=float, default=1e-5,
                       help="central-difference step (default 1e-5; larger steps are diagnostic only)")
        g.add_argument("--tol", type=float, default=DEFAULT_TOL, help=f"failure threshold (default {DEFAULT_TOL:g})")
        g.add_argument("--trials", type=int, default=3, help="random draws per loss (default 3)")
        g.set_defaults(func=cmd_gradcheck)

    add_gradcheck_flags(sub.add_parser("gradcheck", help="finite-difference checks of losses and attention"))
    s = sub.add_parser("snnl", help="soft nearest neighbor loss tools")
    ss = s.add_subparsers(dest="action", required=True, parser_class=_Parser)
    add_gradcheck_flags(ss.add_parser("grad-check", help="same as the gradcheck subcommand"))
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(_color("error", "31") + f": {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
