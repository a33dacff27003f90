"""Seeded simulation sweeps over queries-per-task, with per-algorithm error aggregation."""

from __future__ import annotations

import csv
import io
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from ._validation import ValidationError, check_count
from .allocation import build_configuration_graph, sample_truth
from .inference import ALGORITHMS
from .theory import TheoryParams, sigma_inf_sq
from .workers import SpammerHammer, WorkerModel, crowd_stats, sample_responses, sample_workers

__all__ = [
    "ExperimentConfig",
    "SweepRow",
    "SweepResult",
    "DecayFit",
    "run_trial",
    "sweep",
    "exponential_decay_check",
    "CSV_HEADER",
]

CSV_HEADER = ("l", "r", "m", "algorithm", "mean_error", "std_error", "trials")
R_POLICIES = ("equal", "fixed", "ratio")


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: a grid of ``l`` values, each paired with an ``r`` by ``r_policy``.

    ``r_policy`` is ``"equal"`` (r = l), ``"fixed"`` (r = ``r_value``) or
    ``"ratio"`` (r = round(``r_value`` * l)). ``k_max=None`` picks the
    iteration count from the crowd moments.
    """

    m: int
    l_values: tuple
    r_policy: str = "equal"
    r_value: Optional[float] = None
    model: WorkerModel = SpammerHammer(0.3)
    truth_mode: str = "uniform"
    algorithms: tuple = ("iterative", "majority", "oracle")
    k_max: Optional[int] = 20
    trials: int = 50
    base_seed: int = 0
    output: Optional[str] = None
    n_jobs: int = 1

    def __post_init__(self):
        check_count(self.m, "m")
        ls = tuple(check_count(v, "l") for v in np.atleast_1d(self.l_values).tolist())
        if not ls:
            raise ValidationError("the l sweep list is empty")
        object.__setattr__(self, "l_values", ls)
        if self.r_policy not in R_POLICIES:
            raise ValidationError(f"r policy must be one of {R_POLICIES}, got {self.r_policy!r}")
        if self.r_policy != "equal" and (self.r_value is None or not self.r_value > 0):
            raise ValidationError(f"r policy {self.r_policy!r} needs a positive r value")
        if self.r_policy == "fixed":
            check_count(self.r_value, "r")
        algs = tuple(self.algorithms)
        if not algs:
            raise ValidationError("no algorithms requested")
        for a in algs:
            if a not in ALGORITHMS:
                raise ValidationError(f"unknown algorithm {a!r}; choose from {sorted(ALGORITHMS)}")
        object.__setattr__(self, "algorithms", algs)
        if self.k_max is not None:
            check_count(self.k_max, "k_max")
        check_count(self.trials, "trials")
        check_count(self.base_seed, "base_seed", minimum=0)
        if self.truth_mode not in ("uniform", "ones"):
            raise ValidationError(f"truth mode must be 'uniform' or 'ones', got {self.truth_mode!r}")
        if self.n_jobs == 0:
            raise ValidationError("n_jobs must be non-zero")

    def r_for(self, l):
        if self.r_policy == "equal":
            return l
        if self.r_policy == "fixed":
            return int(self.r_value)
        return max(1, int(round(self.r_value * l)))

    def cells(self):
        return [(l, self.r_for(l)) for l in self.l_values]


@dataclass(frozen=True)
class SweepRow:
    l: int
    r: int
    m: int
    algorithm: str
    mean_error: float
    std_error: float
    trials: int


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: list
    failures: list = field(default_factory=list)
    trial_errors: dict = field(default_factory=dict, repr=False)

    def get(self, l, algorithm) -> SweepRow:
        for row in self.rows:
            if row.l == l and row.algorithm == algorithm:
                return row
        raise KeyError((l, algorithm))

    def series(self, algorithm):
        """``(l, mean_error, std_error)`` arrays for one algorithm, in sweep order."""
        rows = [row for row in self.rows if row.algorithm == algorithm]
        return (
            np.array([row.l for row in rows]),
            np.array([row.mean_error for row in rows]),
            np.array([row.std_error for row in rows]),
        )

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow([row.l, row.r, row.m, row.algorithm, repr(row.mean_error), repr(row.std_error), row.trials])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _seed_words(name):
    return zlib.crc32(name.encode("utf-8"))


def run_trial(config: ExperimentConfig, l, r, cell_index, trial_index) -> dict:
    """Error fraction of every requested algorithm on one shared simulated instance.

    The instance is drawn from ``[base_seed, cell_index, trial_index]``; each
    algorithm gets its own stream keyed by its name, so adding or removing an
    algorithm never perturbs the others.
    """
    key = [config.base_seed, cell_index, trial_index]
    rng = np.random.default_rng(key + [0])
    graph = build_configuration_graph(config.m, l, r, rng=rng)
    truth = sample_truth(config.m, rng, mode=config.truth_mode)
    workers = sample_workers(config.model, graph.n, rng)
    responses = sample_responses(graph, truth, workers, rng)
    stats_ = crowd_stats(config.model)
    out = {}
    for name in config.algorithms:
        alg_rng = np.random.default_rng(key + [1, _seed_words(name)])
        if name == "iterative":
            res = ALGORITHMS[name](graph, responses, k_max=config.k_max, rng=alg_rng, q=stats_.q, mu=stats_.mu)
        elif name == "oracle":
            res = ALGORITHMS[name](graph, responses, workers, rng=alg_rng)
        else:
            res = ALGORITHMS[name](graph, responses, rng=alg_rng)
        out[name] = res.error_rate(truth)
    return out


def _run_cell(config, cell_index, l, r):
    try:
        errors = np.array(
            [[run_trial(config, l, r, cell_index, t)[a] for a in config.algorithms] for t in range(config.trials)]
        )
        return errors, None
    except (ValidationError, ValueError, ArithmeticError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _aggregate(errors):
    trials = errors.shape[0]
    mean = errors.mean(axis=0)
    if trials > 1:
        se = errors.std(axis=0, ddof=1) / math.sqrt(trials)
    else:
        se = np.full(errors.shape[1], math.nan)
    return mean, se


def sweep(config: ExperimentConfig, write=True) -> SweepResult:
    """Run every cell of the grid and aggregate per algorithm.

    A cell that raises (for instance because ``m l`` is not divisible by ``r``)
    is recorded in ``failures`` and skipped. The CSV is written to
    ``config.output`` when set and ``write`` is true.
    """
    cells = config.cells()
    if config.n_jobs == 1:
        outcomes = [_run_cell(config, i, l, r) for i, (l, r) in enumerate(cells)]
    else:
        outcomes = Parallel(n_jobs=config.n_jobs)(delayed(_run_cell)(config, i, l, r) for i, (l, r) in enumerate(cells))
    rows, failures, raw = [], [], {}
    for (l, r), (errors, message) in zip(cells, outcomes):
        if errors is None:
            failures.append({"l": l, "r": r, "error": message})
            continue
        raw[(l, r)] = errors
        mean, se = _aggregate(errors)
        for j, name in enumerate(config.algorithms):
            rows.append(SweepRow(l, r, config.m, name, float(mean[j]), float(se[j]), config.trials))
    result = SweepResult(config, rows, failures, raw)
    if write and config.output:
        result.to_csv(config.output)
    return result


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    slope_stderr: float
    l_used: tuple
    excluded_zero: tuple
    excluded_below_threshold: tuple
    theory_slope: tuple
    theory_envelope: tuple


def exponential_decay_check(result: SweepResult, q, algorithm="iterative", l_min=None, l_values=None) -> DecayFit:
    """Least-squares slope of ``log(error)`` against ``l``.

    Only cells above the phase transition (``q^2 (l-1)(r-1) > 1``) with
    non-zero error enter the fit; zero-error cells are listed in
    ``excluded_zero``. For each used cell the fit also reports
    ``-q / (2 sigma_inf^2)`` and the weaker ``-q / (4 sigma_inf^2)``.
    """
    ls, means = [], []
    zero, below = [], []
    for row in result.rows:
        if row.algorithm != algorithm:
            continue
        if l_min is not None and row.l < l_min:
            continue
        if l_values is not None and row.l not in l_values:
            continue
        if q * q * (row.l - 1) * (row.r - 1) <= 1:
            below.append(row.l)
            continue
        if row.mean_error <= 0:
            zero.append(row.l)
            continue
        ls.append(row.l)
        means.append(row.mean_error)
    if len(ls) < 4:
        raise ValidationError(f"need at least 4 usable cells above the threshold with non-zero error, got {len(ls)}")
    fit = stats.linregress(np.array(ls, dtype=float), np.log(means))
    mu = crowd_stats(result.config.model).mu if result.config is not None else q
    th, env = [], []
    for l in ls:
        s_inf = sigma_inf_sq(TheoryParams(l, result.config.r_for(l), q, min(mu, math.sqrt(q))))
        th.append(-q / (2 * s_inf))
        env.append(-q / (4 * s_inf))
    return DecayFit(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        slope_stderr=float(fit.stderr),
        l_used=tuple(ls),
        excluded_zero=tuple(zero),
        excluded_below_threshold=tuple(below),
        theory_slope=tuple(th),
        theory_envelope=tuple(env),
    )
