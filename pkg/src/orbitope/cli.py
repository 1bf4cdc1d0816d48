"""``orbitope`` command line: experiment sweeps and single-pair estimation."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import METHODS, ExperimentSpec, emit_csv, format_summary, run
from .estimation import CorrespondenceSet, estimate, estimate_robust
from .pointcloud import PointCloudParseError, load_cloud

SWEEP_DELTAS = (0.0, 0.01, 0.02, 0.04, 0.06, 0.08, 0.1)
SWEEP_SAMPLES = (23, 50, 100, 200, 400, 944)


class CliError(Exception):
    def __init__(self, kind: str, message: str, **extra):
        super().__init__(message)
        self.kind = kind
        self.extra = extra


class _Parser(argparse.ArgumentParser):
    """Usage errors become one-line JSON like every other failure."""

    def error(self, message):
        raise CliError("usage", message)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}") from None


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _methods(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _default_seed() -> int:
    raw = os.environ.get("ORBITOPE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError("invalid-seed", f"ORBITOPE_SEED must be an integer, got {raw!r}") from None


def _add_common(p, deltas, samples, methods, trials=20):
    p.add_argument("--delta", type=_floats, default=deltas, help="noise standard deviations, comma separated")
    p.add_argument("--n", type=_ints, default=samples, help="sample counts, comma separated")
    p.add_argument("--trials", type=int, default=trials)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1, help="l1 weight for the robust method")
    p.add_argument("--seed", type=int, default=None, help="base seed (falls back to $ORBITOPE_SEED, then 0)")
    p.add_argument("--methods", type=_methods, default=methods, help=f"subset of {','.join(METHODS)}")
    p.add_argument("--input", default="synthetic", help="model PLY/CSV file, or 'synthetic'")
    p.add_argument("--out", default="-", help="CSV output path ('-' for stdout)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--lm-init", choices=("identity", "truth"), default="identity")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="orbitope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    base = ("orbitope", "horn", "pca", "lm")

    p = sub.add_parser("sweep-noise", help="error versus noise level")
    _add_common(p, SWEEP_DELTAS, (23, 944), base)
    p.set_defaults(mode="noise_sweep")

    p = sub.add_parser("sweep-samples", help="error versus number of points")
    _add_common(p, (0.01,), SWEEP_SAMPLES, base)
    p.set_defaults(mode="sample_sweep")

    p = sub.add_parser("robust-demo", help="ear outliers shifted by (2,2,2)")
    _add_common(p, (0.01,), (944,), ("robust", "orbitope", "pca"), trials=1)
    p.set_defaults(mode="robust_demo")

    p = sub.add_parser("estimate", help="estimate the pose between two corresponding clouds")
    p.add_argument("--model", required=True, help="model points (PLY or CSV)")
    p.add_argument("--observations", required=True, help="observed points, same order as the model")
    p.add_argument("--robust", action="store_true")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--out", default="-", help="JSON output path ('-' for stdout)")
    return parser


def _write(text: str, path: str):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="ascii", newline="") as fh:
            fh.write(text)


def _cmd_sweep(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    if args.jobs < 1:
        raise CliError("invalid-spec", "--jobs must be at least 1")
    try:
        spec = ExperimentSpec(
            mode=args.mode,
            deltas=args.delta,
            sample_counts=args.n,
            trials=args.trials,
            lam=args.lam,
            seed=seed,
            methods=args.methods,
            input=args.input,
            lm_init=args.lm_init,
        )
    except ValueError as exc:
        raise CliError("invalid-spec", str(exc)) from None
    rows, summary = run(spec, jobs=args.jobs)
    if args.out == "-":
        emit_csv(rows, sys.stdout)
    else:
        emit_csv(rows, args.out)
    print(format_summary(summary), file=sys.stderr)
    return 0


def _cmd_estimate(args) -> int:
    model = load_cloud(args.model)
    obs = load_cloud(args.observations)
    if len(model) != len(obs):
        raise CliError("mismatched-clouds", f"model has {len(model)} points, observations {len(obs)}")
    corr = CorrespondenceSet(model.points, obs.points)
    rep = estimate_robust(corr, lam=args.lam) if args.robust else estimate(corr)
    out = {
        "rotation": rep.rigid_pose.R.tolist(),
        "translation": rep.rigid_pose.t.tolist(),
        "exact": rep.exact,
        "residual": rep.residual,
        "converged": rep.converged,
        "flags": sorted(rep.rigid_pose.flags),
        "relaxation": rep.relaxation,
    }
    if args.robust:
        out["outliers"] = rep.outliers
    _write(json.dumps(out) + "\n", args.out)
    return 0


def _error_line(kind: str, message: str, **extra) -> str:
    return json.dumps({"error": kind, "message": message, **extra})


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "estimate":
            return _cmd_estimate(args)
        return _cmd_sweep(args)
    except CliError as exc:
        msg = _error_line(exc.kind, str(exc), **exc.extra)
    except PointCloudParseError as exc:
        msg = _error_line("parse-error", exc.reason, offset=exc.offset)
    except (OSError, ValueError) as exc:
        msg = _error_line(type(exc).__name__, str(exc))
    print(msg, file=sys.stderr)
    return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
