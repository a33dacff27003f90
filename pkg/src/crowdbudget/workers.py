"""Worker reliability priors, population sampling and response generation.

A crowd is described by a distribution over the per-worker probability ``p``
of answering a binary task correctly. Two summary moments of that
distribution drive everything else in the package::

    mu = E[2p - 1]          (bias toward the truth, must be > 0)
    q  = E[(2p - 1)^2]      (collective quality)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np

from ._validation import ValidationError, as_generator, check_probability

if TYPE_CHECKING:  # pragma: no cover
    from .allocation import AssignmentGraph, GroundTruth
    from .inference import ResponseMatrix

__all__ = [
    "SpammerHammer",
    "BetaPrior",
    "FixedP",
    "Haldane",
    "FiniteMixture",
    "WorkerModel",
    "CrowdStats",
    "WorkerSample",
    "crowd_stats",
    "sample_workers",
    "sample_responses",
    "estimate_q_from_data",
]


@dataclass(frozen=True)
class CrowdStats:
    mu: float
    q: float


@dataclass(frozen=True)
class SpammerHammer:
    """Hammers (p=1) with probability ``q_sh``, spammers (p=1/2) otherwise."""

    q_sh: float

    def __post_init__(self):
        check_probability(self.q_sh, "q_sh")

    def stats(self) -> CrowdStats:
        return CrowdStats(mu=float(self.q_sh), q=float(self.q_sh))

    def sample(self, n, rng):
        hammer = rng.random(n) < self.q_sh
        return np.where(hammer, 1.0, 0.5)


@dataclass(frozen=True)
class BetaPrior:
    """``p ~ Beta(alpha, beta)``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValidationError(
                f"beta prior needs alpha > 0 and beta > 0, got ({self.alpha}, {self.beta})"
            )

    def stats(self) -> CrowdStats:
        a, b = float(self.alpha), float(self.beta)
        mu = (a - b) / (a + b)
        q = 1.0 - 4.0 * a * b / ((a + b) * (a + b + 1.0))
        return CrowdStats(mu=mu, q=q)

    def sample(self, n, rng):
        return rng.beta(self.alpha, self.beta, size=n)


@dataclass(frozen=True)
class FixedP:
    """Every worker has the same reliability ``p``."""

    p: float

    def __post_init__(self):
        check_probability(self.p, "p")

    def stats(self) -> CrowdStats:
        s = 2.0 * self.p - 1.0
        return CrowdStats(mu=s, q=s * s)

    def sample(self, n, rng):
        return np.full(n, float(self.p))


@dataclass(frozen=True)
class Haldane:
    """Workers always lie (p=0) or always tell the truth (p=1), each w.p. 1/2."""

    def stats(self) -> CrowdStats:
        return CrowdStats(mu=0.0, q=1.0)

    def sample(self, n, rng):
        return np.where(rng.random(n) < 0.5, 0.0, 1.0)


@dataclass(frozen=True)
class FiniteMixture:
    """Discrete prior over reliabilities: ``points`` is a sequence of (p, weight)."""

    points: tuple

    def __post_init__(self):
        pts = tuple((float(p), float(w)) for p, w in self.points)
        if not pts:
            raise ValidationError("finite mixture needs at least one support point")
        for p, w in pts:
            check_probability(p, "mixture support point")
            if w < 0:
                raise ValidationError(f"mixture weight must be non-negative, got {w}")
        total = math.fsum(w for _, w in pts)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"mixture weights must sum to 1, got {total!r}")
        object.__setattr__(self, "points", pts)

    @property
    def support(self):
        return np.array([p for p, _ in self.points])

    @property
    def weights(self):
        return np.array([w for _, w in self.points])

    def stats(self) -> CrowdStats:
        s = 2.0 * self.support - 1.0
        w = self.weights
        return CrowdStats(mu=float(np.dot(w, s)), q=float(np.dot(w, s * s)))

    def sample(self, n, rng):
        w = self.weights
        idx = rng.choice(len(w), size=n, p=w / w.sum())
        return self.support[idx]


WorkerModel = Union[SpammerHammer, BetaPrior, FixedP, Haldane, FiniteMixture]


@dataclass(frozen=True)
class WorkerSample:
    """Realized reliabilities, one per worker."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1:
            raise ValidationError("worker reliabilities must be a 1-d vector")
        if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
            raise ValidationError("worker reliabilities must lie in [0, 1]")
        object.__setattr__(self, "p", p)

    def __len__(self):
        return self.p.shape[0]


def crowd_stats(model: WorkerModel) -> CrowdStats:
    """Exact ``(mu, q)`` of a reliability prior."""
    return model.stats()


def sample_workers(model: WorkerModel, n: int, rng=None) -> WorkerSample:
    """Draw ``n`` i.i.d. reliabilities from ``model``."""
    if n < 1:
        raise ValidationError(f"need at least one worker, got n={n}")
    rng = as_generator(rng)
    return WorkerSample(model.sample(int(n), rng))


def sample_responses(
    graph: "AssignmentGraph",
    truth: Union["GroundTruth", Sequence[int], np.ndarray],
    workers: Union[WorkerSample, np.ndarray],
    rng=None,
) -> "ResponseMatrix":
    """One +/-1 answer per edge: ``A_ij = t_i`` with probability ``p_j``, else ``-t_i``.

    The returned responses follow the graph's edge order.
    """
    from .allocation import GroundTruth
    from .inference import ResponseMatrix

    t = truth.t if isinstance(truth, GroundTruth) else np.asarray(truth)
    p = workers.p if isinstance(workers, WorkerSample) else np.asarray(workers, dtype=float)
    if t.shape != (graph.m,):
        raise ValidationError(f"truth has length {t.shape[0] if t.ndim else 0}, graph has m={graph.m}")
    if p.shape != (graph.n,):
        raise ValidationError(f"worker sample has length {p.shape[0] if p.ndim else 0}, graph has n={graph.n}")
    rng = as_generator(rng)
    correct = rng.random(graph.num_edges) < p[graph.workers]
    answers = np.where(correct, t[graph.tasks], -t[graph.tasks]).astype(np.int8)
    return ResponseMatrix(graph.m, graph.n, graph.tasks.copy(), graph.workers.copy(), answers)


def estimate_q_from_data(responses: "ResponseMatrix", graph: "AssignmentGraph" = None, **em_params) -> float:
    """Plug-in estimate of ``q`` from the EM worker reliabilities.

    ``q_hat = mean_j (2 p_hat_j - 1)^2``, clamped to [0, 1]. This is a heuristic:
    its bias is not analysed, and a worker seen on a single task carries no
    information about its own reliability, so degree >= 2 is required.
    """
    from .inference import em_infer

    deg = np.bincount(responses.worker, minlength=responses.n)
    if np.any(deg < 2):
        bad = int(np.flatnonzero(deg < 2)[0])
        raise ValidationError(
            f"worker {bad} has degree {int(deg[bad])}; reliability is unidentifiable below degree 2"
        )
    result = em_infer(graph, responses, **em_params)
    s = 2.0 * result.worker_scores - 1.0
    return float(np.clip(np.mean(s * s), 0.0, 1.0))
