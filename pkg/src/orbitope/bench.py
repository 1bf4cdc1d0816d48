"""Benchmark harness: synthetic pose trials, error tables and timing."""

from __future__ import annotations

import csv
import io
import struct
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .baselines import horn_svd, levenberg_marquardt, pca_align
from .estimation import CorrespondenceSet, ProjectionSpec, estimate, estimate_robust, residual
from .geometry import RigidPose, random_rotation
from .pointcloud import CorruptionSpec, PointCloud, corrupt, load_cloud, normalize_model, synthetic_bunny

METHODS = ("orbitope", "horn", "pca", "lm", "robust")
MODES = ("noise_sweep", "sample_sweep", "robust_demo", "single")
CSV_HEADER = ("method", "delta", "n", "trial", "error", "wall_time_s", "exact")

EAR_PREDICATE = (1, 0.6)
EAR_SHIFT = (2.0, 2.0, 2.0)


@dataclass(frozen=True)
class ExperimentSpec:
    mode: str = "single"
    deltas: tuple = (0.01,)
    sample_counts: tuple = (944,)
    trials: int = 20
    lam: float = 0.1
    seed: int = 0
    methods: tuple = ("orbitope", "horn", "pca", "lm")
    input: str = "synthetic"
    lm_init: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        object.__setattr__(self, "sample_counts", tuple(int(n) for n in self.sample_counts))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.deltas or any(not d >= 0 for d in self.deltas):
            raise ValueError("deltas must be non-negative")
        if not self.sample_counts or any(n < 3 for n in self.sample_counts):
            raise ValueError("sample counts must be at least 3")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if self.lm_init not in ("identity", "truth"):
            raise ValueError("lm_init must be 'identity' or 'truth'")


@dataclass(frozen=True)
class ResultRow:
    method: str
    delta: float
    n_samples: int
    trial: int
    error: float
    wall_time: float
    exact: bool
    # weighted residual against the (noisy) observations; not part of the CSV
    residual: float = field(default=float("nan"), compare=False)


@dataclass(frozen=True)
class CellSummary:
    method: str
    delta: float
    n_samples: int
    trials: int
    mean_error: float
    min_error: float
    max_error: float
    mean_time: float
    exact_rate: float


class Instance(NamedTuple):
    corr: CorrespondenceSet
    truth: RigidPose
    outliers: list


def trial_seed(seed: int, delta: float, n: int, trial: int) -> int:
    """Per-trial seed; independent of execution order."""
    hi, lo = struct.unpack("<II", struct.pack("<d", float(delta)))
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, hi, lo, int(n), int(trial)])
    return int(ss.generate_state(2, np.uint64)[0])


def load_model(source: str = "synthetic") -> PointCloud:
    cloud = synthetic_bunny() if source == "synthetic" else load_cloud(source)
    return normalize_model(cloud)


def make_instance(model: PointCloud, spec: ExperimentSpec, delta: float, n: int, trial: int) -> Instance:
    rng = np.random.default_rng(trial_seed(spec.seed, delta, n, trial))
    dim = model.n
    truth = RigidPose(random_rotation(rng, dim), rng.uniform(-1.0, 1.0, dim))
    if n > len(model):
        raise ValueError(f"requested {n} samples but the model has {len(model)} points")
    robust = spec.mode == "robust_demo"
    cspec = CorruptionSpec(
        delta=delta,
        outlier_predicate=EAR_PREDICATE if robust else None,
        outlier_translation=EAR_SHIFT[:dim] if robust else None,
        subsample_n=n if n < len(model) else None,
        seed=int(rng.integers(2**63)),
    )
    # noise and outliers are drawn in the model frame, then carried by the true pose
    obs, outliers = corrupt(model, cspec)
    m = model.points[obs.labels]
    return Instance(CorrespondenceSet(m, truth.apply(obs.points)), truth, outliers)


def pose_error(truth, pose, model_points) -> float:
    """Sum of squared distances between truly and estimated transformed model points."""
    d = truth.apply(model_points) - pose.apply(model_points)
    return float(np.sum(d * d))


def time_method(fn, *args, repeats: int = 1, **kwargs):
    """Run ``fn`` ``repeats`` times; returns the last result and the median wall time."""
    times = []
    result = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        result = fn(*args, **kwargs)
        times.append(time.perf_counter() - t0)
    return result, float(np.median(times))


def run_method(method: str, inst: Instance, spec: ExperimentSpec):
    """Returns (rigid pose, exact flag, seconds)."""
    corr = inst.corr
    if method == "orbitope":
        rep, dt = time_method(estimate, corr)
        return rep.rigid_pose, rep.exact, dt
    if method == "robust":
        rep, dt = time_method(estimate_robust, corr, None, spec.lam)
        return rep.rigid_pose, rep.exact, dt
    if method == "horn":
        pose, dt = time_method(horn_svd, corr)
    elif method == "pca":
        pose, dt = time_method(pca_align, corr)
    elif method == "lm":
        init = inst.truth if spec.lm_init == "truth" else None
        pose, dt = time_method(levenberg_marquardt, corr, None, init)
    else:
        raise ValueError(f"unknown method {method!r}")
    return pose, True, dt


def _cells(spec: ExperimentSpec):
    return [(d, n, k) for d in spec.deltas for n in spec.sample_counts for k in range(spec.trials)]


def _run_cell(args):
    model, spec, delta, n, trial = args
    inst = make_instance(model, spec, delta, n, trial)
    ident = ProjectionSpec.identity(model.n)
    out = []
    for method in spec.methods:
        pose, exact, dt = run_method(method, inst, spec)
        out.append(
            ResultRow(
                method=method,
                delta=delta,
                n_samples=n,
                trial=trial,
                error=pose_error(inst.truth, pose, inst.corr.model),
                wall_time=dt,
                exact=bool(exact),
                residual=residual(inst.corr, ident, pose),
            )
        )
    return out


def sort_rows(rows):
    return sorted(rows, key=lambda r: (r.method, r.delta, r.n_samples, r.trial))


def run(spec: ExperimentSpec, model: PointCloud | None = None, jobs: int = 1):
    """Run every (delta, N, trial) cell; returns (sorted rows, summaries)."""
    model = model if model is not None else load_model(spec.input)
    tasks = [(model, spec, d, n, k) for d, n, k in _cells(spec)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_cell, tasks))
    else:
        chunks = [_run_cell(t) for t in tasks]
    rows = sort_rows(r for chunk in chunks for r in chunk)
    return rows, summarize(rows)


def summarize(rows) -> list[CellSummary]:
    groups = defaultdict(list)
    for r in rows:
        groups[(r.method, r.delta, r.n_samples)].append(r)
    out = []
    for (method, delta, n), rs in sorted(groups.items()):
        err = np.array([r.error for r in rs])
        out.append(
            CellSummary(
                method=method,
                delta=delta,
                n_samples=n,
                trials=len(rs),
                mean_error=float(err.mean()),
                min_error=float(err.min()),
                max_error=float(err.max()),
                mean_time=float(np.mean([r.wall_time for r in rs])),
                exact_rate=float(np.mean([r.exact for r in rs])),
            )
        )
    return out


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in sort_rows(rows):
        writer.writerow(
            [r.method, repr(r.delta), r.n_samples, r.trial, repr(r.error), repr(r.wall_time),
             "true" if r.exact else "false"]
        )
    return buf.getvalue()


def emit_csv(rows, path) -> None:
    """Write rows with header ``method,delta,n,trial,error,wall_time_s,exact``."""
    text = rows_to_csv(rows)
    if hasattr(path, "write"):
        path.write(text)
        return
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(text)


def read_csv(path) -> list[ResultRow]:
    with open(path, encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        return [
            ResultRow(m, float(d), int(n), int(k), float(e), float(w), x == "true")
            for m, d, n, k, e, w, x in reader
        ]


def format_summary(summary) -> str:
    lines = [f"{'method':<9} {'delta':>7} {'n':>5} {'mean_err':>12} {'min_err':>12} {'max_err':>12} {'ms':>8} exact"]
    for s in summary:
        lines.append(
            f"{s.method:<9} {s.delta:>7.3f} {s.n_samples:>5d} {s.mean_error:>12.5g} "
            f"{s.min_error:>12.5g} {s.max_error:>12.5g} {1e3 * s.mean_time:>8.2f} {s.exact_rate:.2f}"
        )
    return "\n".join(lines)
