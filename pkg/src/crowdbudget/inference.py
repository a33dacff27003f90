"""Label aggregation from sparse +/-1 worker answers.

Every algorithm works on the edge list of a response matrix: three parallel
arrays ``(task, worker, answer)``. Sums over neighbourhoods are computed with
``np.bincount`` in edge order, which keeps results bit-for-bit reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import ValidationError, as_generator, check_count

__all__ = [
    "ResponseMatrix",
    "InferenceResult",
    "task_message_update",
    "worker_message_update",
    "default_k_max",
    "iterative_infer",
    "majority_vote",
    "em_infer",
    "spectral_infer",
    "oracle_ml",
    "ALGORITHMS",
    "IterativeMessagePassing",
    "MajorityVote",
    "OneCoinEM",
    "SpectralPowerIteration",
    "OracleML",
]

# clamp for log-odds of perfectly (un)reliable workers
DELTA = 1e-6

_RESCALE_ABOVE = 2.0 ** 500


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Sparse m x n matrix of +/-1 answers; a missing entry means "not asked"."""

    m: int
    n: int
    task: np.ndarray
    worker: np.ndarray
    answer: np.ndarray

    def __post_init__(self):
        task = np.ascontiguousarray(self.task, dtype=np.int64)
        worker = np.ascontiguousarray(self.worker, dtype=np.int64)
        answer = np.asarray(self.answer)
        if not (task.ndim == worker.ndim == answer.ndim == 1) or not (task.shape == worker.shape == answer.shape):
            raise ValidationError("task, worker and answer arrays must be 1-d with equal length")
        bad = np.flatnonzero((answer != 1) & (answer != -1))
        if bad.size:
            raise ValidationError(f"answer at entry {int(bad[0])} is {answer[bad[0]]!r}; answers must be +1 or -1")
        if task.size:
            if task.min() < 0 or task.max() >= self.m:
                raise ValidationError("task index out of range")
            if worker.min() < 0 or worker.max() >= self.n:
                raise ValidationError("worker index out of range")
        keys = task * self.n + worker
        if np.unique(keys).size != keys.size:
            raise ValidationError("duplicate (task, worker) pair in responses")
        for arr in (task, worker):
            arr.setflags(write=False)
        answer = answer.astype(np.int8)
        answer.setflags(write=False)
        object.__setattr__(self, "task", task)
        object.__setattr__(self, "worker", worker)
        object.__setattr__(self, "answer", answer)

    @property
    def num_entries(self):
        return int(self.task.shape[0])

    def to_sparse(self):
        return sp.csr_matrix((self.answer.astype(float), (self.task, self.worker)), shape=(self.m, self.n))

    def toarray(self):
        A = np.zeros((self.m, self.n), dtype=np.int8)
        A[self.task, self.worker] = self.answer
        return A

    @classmethod
    def from_matrix(cls, X):
        """Build from a dense array (0 = missing) or any scipy sparse matrix."""
        if isinstance(X, cls):
            return X
        X = check_array(X, accept_sparse="coo", dtype=None, ensure_all_finite=True)
        if sp.issparse(X):
            X = X.tocoo()
            X.sum_duplicates()
            keep = X.data != 0
            return cls(X.shape[0], X.shape[1], X.row[keep], X.col[keep], X.data[keep])
        rows, cols = np.nonzero(X)
        return cls(X.shape[0], X.shape[1], rows, cols, X[rows, cols])

    def flipped(self):
        return ResponseMatrix(self.m, self.n, self.task, self.worker, -self.answer)

    def check_support(self, graph):
        """Raise unless the answers sit exactly on the edges of ``graph``."""
        if (graph.m, graph.n) != (self.m, self.n):
            raise ValidationError(f"responses are {self.m}x{self.n} but graph is {graph.m}x{graph.n}")
        if np.array_equal(graph.tasks, self.task) and np.array_equal(graph.workers, self.worker):
            return
        a = np.sort(graph.tasks * graph.n + graph.workers)
        b = np.sort(self.task * self.n + self.worker)
        if not np.array_equal(a, b):
            raise ValidationError("responses are not supported exactly on the graph's edges")


@dataclass(frozen=True, eq=False)
class InferenceResult:
    estimates: np.ndarray
    decision_values: np.ndarray
    worker_scores: Optional[np.ndarray] = None
    iterations_run: int = 0

    def error_rate(self, truth):
        t = getattr(truth, "t", truth)
        return float(np.mean(self.estimates != np.asarray(t)))


def _edges(graph, responses):
    if graph is not None:
        responses.check_support(graph)
    return responses.task, responses.worker, responses.answer.astype(float), responses.m, responses.n


def _sign_with_ties(values, rng):
    """Sign of each value; exact zeros are settled by a fair coin."""
    est = np.sign(values).astype(np.int8)
    ties = np.flatnonzero(est == 0)
    if ties.size:
        est[ties] = np.where(rng.random(ties.size) < 0.5, 1, -1)
    return est


def task_message_update(task, A, y, m):
    """x_{i->j} = sum over j' in di minus j of A_ij' y_{j'->i}, for every edge."""
    weighted = A * y
    return np.bincount(task, weights=weighted, minlength=m)[task] - weighted


def worker_message_update(worker, A, x, n):
    """y_{j->i} = sum over i' in dj minus i of A_i'j x_{i'->j}, for every edge."""
    weighted = A * x
    return np.bincount(worker, weights=weighted, minlength=n)[worker] - weighted


def default_k_max(l, r, q=None, mu=None):
    """Iteration count used when none is given.

    With known crowd moments above the phase transition this is the
    logarithmic iteration count after which the error bound stops improving;
    otherwise a single iteration, which is the better choice below threshold.
    """
    if q is None or mu is None or mu <= 0:
        return 1
    growth = (l - 1) * (r - 1) * q * q
    if growth <= 1:
        return 1
    return 1 + max(0, math.ceil(math.log(q / mu ** 2) / math.log(growth)))


def iterative_infer(graph, responses, k_max=None, rng=None, init="gaussian", y0=None, q=None, mu=None):
    """Message-passing estimate after ``k_max`` rounds.

    Worker messages start i.i.d. N(1, 1) (``init="ones"`` starts them at 1, or
    pass explicit per-edge values as ``y0``). Each round updates every task
    message from the previous worker messages, then every worker message from
    the new task messages. Task ``i`` is decided by the sign of
    ``sum_j A_ij y_{j->i}`` using the worker messages from round ``k_max - 1``.

    Messages are multiplied by an exact power of two whenever they exceed
    2**500; signs and ratios are unaffected.
    """
    task, worker, A, m, n = _edges(graph, responses)
    rng = as_generator(rng)
    if k_max is None:
        l = A.size / m if m else 0
        r = A.size / n if n else 0
        k_max = default_k_max(l, r, q=q, mu=mu)
    k_max = check_count(k_max, "k_max")
    if y0 is not None:
        y = np.array(y0, dtype=float)
        if y.shape != A.shape:
            raise ValidationError(f"y0 must have one value per edge ({A.size}), got shape {y.shape}")
    elif init == "gaussian":
        y = rng.normal(1.0, 1.0, size=A.size)
    elif init == "ones":
        y = np.ones(A.size)
    else:
        raise ValidationError(f"unknown initialisation {init!r}")

    decision = None
    x = None
    for k in range(1, k_max + 1):
        x = task_message_update(task, A, y, m)
        if k == k_max:
            decision = np.bincount(task, weights=A * y, minlength=m)
        y = worker_message_update(worker, A, x, n)
        peak = np.max(np.abs(y)) if y.size else 0.0
        if peak > _RESCALE_ABOVE:
            y = np.ldexp(y, -math.frexp(peak)[1])
    scores = np.bincount(worker, weights=A * x, minlength=n)
    return InferenceResult(_sign_with_ties(decision, rng), decision, scores, k_max)


def majority_vote(graph, responses, rng=None):
    task, _, A, m, _ = _edges(graph, responses)
    rng = as_generator(rng)
    decision = np.bincount(task, weights=A, minlength=m)
    return InferenceResult(_sign_with_ties(decision, rng), decision, None, 1)


def em_infer(graph, responses, max_iter=100, tol=1e-6, init_p=0.7, clamp=DELTA, rng=None):
    """One-coin Dawid-Skene EM with a uniform label prior.

    E-step: task log-odds ``L_i = sum_j A_ij log(p_j / (1 - p_j))``.
    M-step: ``p_j`` = average over the worker's tasks of P(t_i = A_ij).
    Stops after ``max_iter`` rounds or when no ``p_j`` moves more than ``tol``.
    ``worker_scores`` holds the final reliabilities.
    """
    task, worker, A, m, n = _edges(graph, responses)
    rng = as_generator(rng)
    max_iter = check_count(max_iter, "max_iter")
    deg = np.bincount(worker, minlength=n).astype(float)
    if np.any(deg == 0):
        raise ValidationError("every worker needs at least one answer")
    p = np.full(n, float(init_p))
    logodds = None
    it = 0
    for it in range(1, max_iter + 1):
        w = np.log(p) - np.log1p(-p)
        logodds = np.bincount(task, weights=A * w[worker], minlength=m)
        agree = expit(A * logodds[task])
        p_new = np.clip(np.bincount(worker, weights=agree, minlength=n) / deg, clamp, 1.0 - clamp)
        delta = np.max(np.abs(p_new - p))
        p = p_new
        if delta < tol:
            break
    w = np.log(p) - np.log1p(-p)
    logodds = np.bincount(task, weights=A * w[worker], minlength=m)
    return InferenceResult(_sign_with_ties(logodds, rng), logodds, p, it)


def spectral_infer(graph, responses, power_iters=30, rng=None, max_restarts=5):
    """Top left singular vector of the response matrix by power iteration.

    Alternates ``u = A v`` and ``v = A^T u`` with L2 normalisation after each
    half-step. The global sign is fixed so that ``u`` correlates non-negatively
    with the majority vote, which is where the positive-bias assumption enters.
    """
    task, worker, A, m, n = _edges(graph, responses)
    rng = as_generator(rng)
    power_iters = check_count(power_iters, "power_iters")
    for _ in range(max_restarts + 1):
        v = rng.normal(1.0, 1.0, size=n)
        u = None
        ok = True
        for _ in range(power_iters):
            u = np.bincount(task, weights=A * v[worker], minlength=m)
            nu = np.linalg.norm(u)
            if nu == 0:
                ok = False
                break
            u /= nu
            v = np.bincount(worker, weights=A * u[task], minlength=n)
            nv = np.linalg.norm(v)
            if nv == 0:
                ok = False
                break
            v /= nv
        if ok:
            break
    else:
        raise RuntimeError("power iteration kept collapsing to the zero vector")
    majority = np.bincount(task, weights=A, minlength=m)
    if np.dot(u, majority) < 0:
        u = -u
        v = -v
    return InferenceResult(_sign_with_ties(u, rng), u, v, power_iters)


def oracle_ml(graph, responses, workers, rng=None, clamp=DELTA):
    """Maximum-likelihood labels given the true reliabilities.

    Weighted vote with weights ``log(p_j / (1 - p_j))``; a worker with p = 1/2
    gets weight exactly 0, and p in {0, 1} is clamped to ``[clamp, 1 - clamp]``.
    """
    task, worker, A, m, n = _edges(graph, responses)
    rng = as_generator(rng)
    p = np.asarray(getattr(workers, "p", workers), dtype=float)
    if p.shape != (n,):
        raise ValidationError(f"need one reliability per worker ({n}), got shape {p.shape}")
    p = np.clip(p, clamp, 1.0 - clamp)
    w = np.log(p) - np.log1p(-p)
    w[p == 0.5] = 0.0
    decision = np.bincount(task, weights=A * w[worker], minlength=m)
    return InferenceResult(_sign_with_ties(decision, rng), decision, w, 1)


ALGORITHMS = {
    "iterative": iterative_infer,
    "majority": majority_vote,
    "em": em_infer,
    "spectral": spectral_infer,
    "oracle": oracle_ml,
}


# ---------------------------------------------------------------------------
# estimator interface


class _ResponseAggregator(BaseEstimator):
    """Transductive aggregator: ``fit`` takes the response matrix and labels its rows."""

    def _run(self, responses, rng, **fit_params):  # pragma: no cover - abstract
        raise NotImplementedError

    def fit(self, X, y=None, **fit_params):
        """Infer task labels from ``X``.

        Parameters
        ----------
        X : ResponseMatrix, sparse matrix or array of shape (n_tasks, n_workers)
            Worker answers in {+1, -1}; zeros (or absent sparse entries) are
            unasked pairs.
        y : ignored

        Returns
        -------
        self
        """
        responses = ResponseMatrix.from_matrix(X)
        result = self._run(responses, as_generator(self.random_state), **fit_params)
        self.result_ = result
        self.labels_ = result.estimates
        self.decision_values_ = result.decision_values
        self.worker_scores_ = result.worker_scores
        self.n_iter_ = result.iterations_run
        self.n_tasks_, self.n_workers_ = responses.m, responses.n
        return self

    def fit_predict(self, X, y=None, **fit_params):
        return self.fit(X, **fit_params).labels_

    def score(self, X, y, **fit_params):
        """Fraction of tasks labelled correctly against the truth ``y``."""
        labels = self.fit_predict(X, **fit_params)
        return float(np.mean(labels == np.asarray(y)))

    def decision_function(self, X=None):
        check_is_fitted(self, "decision_values_")
        return self.decision_values_


class IterativeMessagePassing(_ResponseAggregator):
    """Iterative worker-reliability message passing.

    Parameters
    ----------
    k_max : int or None
        Rounds of message passing. ``None`` picks the default from ``q`` and
        ``mu`` (one round when they are unknown).
    init : {"gaussian", "ones"}
        Worker-message initialisation.
    q, mu : float or None
        Crowd moments, only used for the default iteration count.
    random_state : int, Generator or None
    """

    def __init__(self, k_max=None, init="gaussian", q=None, mu=None, random_state=None):
        self.k_max = k_max
        self.init = init
        self.q = q
        self.mu = mu
        self.random_state = random_state

    def _run(self, responses, rng, y0=None):
        return iterative_infer(None, responses, k_max=self.k_max, rng=rng, init=self.init, y0=y0, q=self.q, mu=self.mu)


class MajorityVote(_ResponseAggregator):
    def __init__(self, random_state=None):
        self.random_state = random_state

    def _run(self, responses, rng):
        return majority_vote(None, responses, rng=rng)


class OneCoinEM(_ResponseAggregator):
    """Symmetric-noise Dawid-Skene EM; ``worker_scores_`` are the estimated reliabilities."""

    def __init__(self, max_iter=100, tol=1e-6, init_p=0.7, clamp=DELTA, random_state=None):
        self.max_iter = max_iter
        self.tol = tol
        self.init_p = init_p
        self.clamp = clamp
        self.random_state = random_state

    def _run(self, responses, rng):
        return em_infer(None, responses, self.max_iter, self.tol, self.init_p, self.clamp, rng=rng)


class SpectralPowerIteration(_ResponseAggregator):
    def __init__(self, power_iters=30, random_state=None):
        self.power_iters = power_iters
        self.random_state = random_state

    def _run(self, responses, rng):
        return spectral_infer(None, responses, self.power_iters, rng=rng)


class OracleML(_ResponseAggregator):
    """Log-odds weighted vote; pass the true reliabilities as ``fit(X, worker_reliability=p)``."""

    def __init__(self, clamp=DELTA, random_state=None):
        self.clamp = clamp
        self.random_state = random_state

    def _run(self, responses, rng, worker_reliability=None):
        if worker_reliability is None:
            raise ValidationError("the oracle estimator needs the true worker reliabilities")
        return oracle_ml(None, responses, worker_reliability, rng=rng, clamp=self.clamp)
