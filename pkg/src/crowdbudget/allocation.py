"""Task allocation: random (l, r)-regular bipartite graphs and adaptive schemes."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ._validation import ValidationError, as_generator, check_count, check_probability
from .workers import SpammerHammer, WorkerModel, crowd_stats, sample_responses, sample_workers

__all__ = [
    "AssignmentGraph",
    "GroundTruth",
    "AdaptiveRunResult",
    "IncrementalDesignResult",
    "TreeProbabilityEstimate",
    "SimulatedCrowd",
    "sample_truth",
    "configuration_pairing",
    "repair_multi_edges",
    "build_configuration_graph",
    "adaptive_spammer_hammer",
    "incremental_q_design",
    "empirical_tree_probability",
]


@dataclass(frozen=True, eq=False)
class AssignmentGraph:
    """Bipartite task/worker assignment with exact degrees ``l`` (tasks) and ``r`` (workers).

    Edges are stored as two parallel index arrays. A graph straight out of the
    configuration model may contain parallel edges; :func:`build_configuration_graph`
    always returns a simple one.
    """

    m: int
    n: int
    l: int
    r: int
    tasks: np.ndarray
    workers: np.ndarray
    seed: Optional[int] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        tasks = np.ascontiguousarray(self.tasks, dtype=np.int64)
        workers = np.ascontiguousarray(self.workers, dtype=np.int64)
        if tasks.shape != workers.shape or tasks.ndim != 1:
            raise ValidationError("task and worker index arrays must be 1-d and of equal length")
        if self.m * self.l != tasks.shape[0] or self.n * self.r != tasks.shape[0]:
            raise ValidationError(
                f"edge count {tasks.shape[0]} inconsistent with m*l={self.m * self.l}, n*r={self.n * self.r}"
            )
        if tasks.size and (tasks.min() < 0 or tasks.max() >= self.m):
            raise ValidationError("task index out of range")
        if workers.size and (workers.min() < 0 or workers.max() >= self.n):
            raise ValidationError("worker index out of range")
        if np.any(np.bincount(tasks, minlength=self.m) != self.l):
            raise ValidationError(f"every task must have degree exactly l={self.l}")
        if np.any(np.bincount(workers, minlength=self.n) != self.r):
            raise ValidationError(f"every worker must have degree exactly r={self.r}")
        tasks.setflags(write=False)
        workers.setflags(write=False)
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "workers", workers)

    @property
    def num_edges(self) -> int:
        return int(self.tasks.shape[0])

    @property
    def edges(self):
        return list(zip(self.tasks.tolist(), self.workers.tolist()))

    @property
    def is_simple(self) -> bool:
        if "simple" not in self._cache:
            keys = self.tasks * self.n + self.workers
            self._cache["simple"] = np.unique(keys).size == keys.size
        return self._cache["simple"]

    def _adjacency(self, side):
        key = f"adj_{side}"
        if key not in self._cache:
            idx = self.tasks if side == "task" else self.workers
            size = self.m if side == "task" else self.n
            order = np.argsort(idx, kind="stable")
            bounds = np.searchsorted(idx[order], np.arange(size + 1))
            self._cache[key] = (order, bounds)
        return self._cache[key]

    @property
    def task_adj(self):
        """Per task, the worker indices it is assigned to."""
        order, bounds = self._adjacency("task")
        w = self.workers[order]
        return [w[bounds[i]:bounds[i + 1]] for i in range(self.m)]

    @property
    def worker_adj(self):
        """Per worker, the task indices in its batch."""
        order, bounds = self._adjacency("worker")
        t = self.tasks[order]
        return [t[bounds[j]:bounds[j + 1]] for j in range(self.n)]

    def edge_lists(self):
        """Incident edge ids per task and per worker, as plain Python lists."""
        out = []
        for side, size in (("task", self.m), ("worker", self.n)):
            order, bounds = self._adjacency(side)
            o = order.tolist()
            b = bounds.tolist()
            out.append([o[b[i]:b[i + 1]] for i in range(size)])
        return out[0], out[1]


@dataclass(frozen=True)
class GroundTruth:
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t)
        if t.ndim != 1 or not np.all(np.isin(t, (-1, 1))):
            raise ValidationError("ground truth entries must be +1 or -1")
        object.__setattr__(self, "t", t.astype(np.int8))

    def __len__(self):
        return self.t.shape[0]


def sample_truth(m, rng=None, mode="uniform") -> GroundTruth:
    """Uniform labels in {+1, -1}^m, or all ones with ``mode="ones"``."""
    m = check_count(m, "m")
    if mode == "ones":
        return GroundTruth(np.ones(m, dtype=np.int8))
    if mode != "uniform":
        raise ValidationError(f"unknown truth mode {mode!r}")
    rng = as_generator(rng)
    return GroundTruth(np.where(rng.random(m) < 0.5, 1, -1).astype(np.int8))


def _check_degrees(m, l, r):
    m = check_count(m, "m")
    l = check_count(l, "l")
    r = check_count(r, "r")
    if (m * l) % r:
        raise ValidationError(f"m*l = {m * l} is not divisible by r = {r}; no ({l},{r})-regular graph exists")
    return m, l, r, m * l // r


def configuration_pairing(m, l, r, rng=None, seed=None) -> AssignmentGraph:
    """Pair task and worker half-edges through a uniform random permutation.

    The result is a multigraph in general; this is exactly the random graph
    the local-tree analysis talks about.
    """
    m, l, r, n = _check_degrees(m, l, r)
    rng = as_generator(rng)
    tasks = np.repeat(np.arange(m), l)
    workers = rng.permutation(np.repeat(np.arange(n), r))
    return AssignmentGraph(m, n, l, r, tasks, workers, seed=seed)


def repair_multi_edges(tasks, workers, n, rng=None, max_attempts=None):
    """Remove parallel edges with degree-preserving double-edge swaps.

    Returns a new worker array, or ``None`` when ``max_attempts`` proposals
    were spent without reaching a simple graph (the caller then resamples).
    An already simple pairing is returned unchanged.
    """
    rng = as_generator(rng)
    tasks = np.asarray(tasks, dtype=np.int64)
    workers = np.array(workers, dtype=np.int64)
    keys = (tasks * n + workers).tolist()
    counts = Counter(keys)
    dup = [e for e, k in enumerate(keys) if counts[k] > 1]
    if not dup:
        return workers
    # keep one copy of each pair in place; every further copy has to move
    seen = set()
    todo = []
    for e in dup:
        if keys[e] in seen:
            todo.append(e)
        else:
            seen.add(keys[e])
    n_edges = len(keys)
    if max_attempts is None:
        max_attempts = 100 * n_edges + 1000
    t = tasks.tolist()
    w = workers.tolist()
    attempts = 0
    while todo:
        e = todo[-1]
        if counts[t[e] * n + w[e]] == 1:
            todo.pop()
            continue
        if attempts >= max_attempts:
            return None
        attempts += 1
        f = int(rng.integers(n_edges))
        i, j, i2, j2 = t[e], w[e], t[f], w[f]
        if i == i2 or j == j2:
            continue
        k_new1, k_new2 = i * n + j2, i2 * n + j
        if counts.get(k_new1, 0) or counts.get(k_new2, 0):
            continue
        counts[i * n + j] -= 1
        counts[i2 * n + j2] -= 1
        counts[k_new1] = 1
        counts[k_new2] = 1
        w[e], w[f] = j2, j
        todo.pop()
    return np.array(w, dtype=np.int64)


def build_configuration_graph(m, l, r, rng=None, seed=None, resample_attempts=10, max_rounds=20) -> AssignmentGraph:
    """Random simple (l, r)-regular bipartite graph on ``m`` tasks and ``n = m*l/r`` workers.

    Up to ``resample_attempts`` raw pairings are drawn and the first simple
    one is kept (exactly uniform over simple graphs). If none is simple, the
    last pairing is repaired by double-edge swaps.
    """
    m, l, r, n = _check_degrees(m, l, r)
    if l > n or r > m:
        raise ValidationError(
            f"no simple ({l},{r})-regular graph with m={m}, n={n}: need l <= n and r <= m"
        )
    if rng is None and seed is not None:
        rng = seed
    rng = as_generator(rng)
    for _ in range(max_rounds):
        for _ in range(max(1, resample_attempts)):
            g = configuration_pairing(m, l, r, rng, seed=seed)
            if g.is_simple:
                return g
        fixed = repair_multi_edges(g.tasks, g.workers, n, rng)
        if fixed is not None:
            return AssignmentGraph(m, n, l, r, g.tasks, fixed, seed=seed)
    raise RuntimeError(f"could not build a simple ({l},{r})-regular graph on m={m} tasks")


# ---------------------------------------------------------------------------
# adaptive allocation for the spammer-hammer crowd


@dataclass(frozen=True)
class AdaptiveRunResult:
    estimates: np.ndarray
    queries_used: int
    groups_completed: int
    workers_used: int = 0

    def error_rate(self, truth) -> float:
        t = truth.t if isinstance(truth, GroundTruth) else np.asarray(truth)
        return float(np.mean(self.estimates != t))


def adaptive_spammer_hammer(m, budget_l, q, truth=None, rng=None, model: Optional[WorkerModel] = None, pad=False):
    """Group-and-agree adaptive scheme for a crowd with perfect workers.

    Tasks are split into consecutive groups of ``ceil(sqrt(m))``. Each group is
    handed to fresh workers until two of them return identical answer vectors,
    which become the group's estimate. At most ``m * budget_l`` answers are
    bought; groups left unfinished are decided by fair coins.

    ``m`` must be a perfect square unless ``pad=True``, in which case the last
    group is filled up by cycling over its own tasks.
    """
    m = check_count(m, "m")
    budget_l = check_count(budget_l, "budget_l")
    q = check_probability(q, "q")
    if not budget_l * q > 2:
        raise ValidationError(f"budget l={budget_l} must exceed 2/q = {2 / q if q else math.inf:.4g}")
    g = math.isqrt(m)
    if g * g != m:
        if not pad:
            raise ValidationError(f"m={m} is not a perfect square (pass pad=True to pad the last group)")
        g += 1
    rng = as_generator(rng)
    if truth is None:
        truth = sample_truth(m, rng)
    t = truth.t if isinstance(truth, GroundTruth) else np.asarray(truth, dtype=np.int8)
    if t.shape != (m,):
        raise ValidationError(f"truth has length {t.shape[0]}, expected m={m}")
    if model is None:
        model = SpammerHammer(q)

    n_groups = -(-m // g)
    groups = []
    for a in range(n_groups):
        idx = np.arange(a * g, min((a + 1) * g, m))
        if idx.size < g:
            idx = np.resize(idx, g)
        groups.append(idx)

    budget = m * budget_l
    max_workers = budget // g
    p = model.sample(max_workers, rng) if max_workers else np.empty(0)
    estimates = np.zeros(m, dtype=np.int8)
    used = 0
    completed = 0
    for idx in groups:
        seen = set()
        tg = t[idx]
        done = False
        while used < max_workers:
            correct = rng.random(g) < p[used]
            used += 1
            ans = np.where(correct, tg, -tg).astype(np.int8)
            key = ans.tobytes()
            if key in seen:
                estimates[idx] = ans
                completed += 1
                done = True
                break
            seen.add(key)
        if not done:
            break
    remaining = np.concatenate(groups[completed:]) if completed < n_groups else np.empty(0, dtype=np.int64)
    if remaining.size:
        remaining = np.unique(remaining)
        estimates[remaining] = np.where(rng.random(remaining.size) < 0.5, 1, -1)
    return AdaptiveRunResult(estimates, used * g, completed, used)


# ---------------------------------------------------------------------------
# incremental design when q is unknown


class SimulatedCrowd:
    """Answers assignment graphs with fresh workers from ``model`` on fixed ``truth``."""

    def __init__(self, model: WorkerModel, truth: GroundTruth):
        self.model = model
        self.truth = truth

    def __call__(self, graph, rng):
        workers = sample_workers(self.model, graph.n, rng)
        return sample_responses(graph, self.truth, workers, rng)


@dataclass(frozen=True)
class IncrementalDesignResult:
    estimates: Optional[np.ndarray]
    total_cost: int
    step: int
    succeeded: bool
    agreement: tuple = ()
    degrees: tuple = ()


def incremental_q_design(
    target_eps,
    crowd: Union[SimulatedCrowd, Callable],
    m,
    rng=None,
    max_steps=20,
    budget_constant=1.0,
    k_max=None,
) -> IncrementalDesignResult:
    """Doubling search over the unknown crowd quality.

    Step ``a`` assumes ``q = 2**-a``, builds two independent
    (l_a, l_a)-regular replicas with ``l_a = ceil(budget_constant / q_a * log(2/eps))``
    and runs the iterative algorithm on both. The search stops at the first
    step where the replicas agree on at least ``m(1 - 2 eps)`` tasks. Cost
    counts every answer bought by both replicas over all steps.
    """
    from .inference import default_k_max, iterative_infer

    if not 0 < target_eps < 0.5:
        raise ValidationError(f"target error must lie in (0, 1/2), got {target_eps}")
    m = check_count(m, "m")
    max_steps = check_count(max_steps, "max_steps")
    rng = as_generator(rng)
    cost = 0
    agreement = []
    degrees = []
    last = None
    for a in range(1, max_steps + 1):
        q_a = 2.0 ** -a
        l_a = max(2, math.ceil(budget_constant / q_a * math.log(2.0 / target_eps)))
        if l_a > m:
            return IncrementalDesignResult(last, cost, a - 1, False, tuple(agreement), tuple(degrees))
        k = k_max if k_max is not None else default_k_max(l_a, l_a, q=q_a, mu=q_a)
        est = []
        for _ in range(2):
            graph = build_configuration_graph(m, l_a, l_a, rng)
            responses = crowd(graph, rng)
            cost += graph.num_edges
            est.append(iterative_infer(graph, responses, k_max=k, rng=rng).estimates)
        agree = int(np.sum(est[0] == est[1]))
        agreement.append(agree)
        degrees.append(l_a)
        last = est[0]
        if agree >= m * (1 - 2 * target_eps):
            return IncrementalDesignResult(est[0], cost, a, True, tuple(agreement), tuple(degrees))
    return IncrementalDesignResult(last, cost, max_steps, False, tuple(agreement), tuple(degrees))


# ---------------------------------------------------------------------------
# local tree structure


@dataclass(frozen=True)
class TreeProbabilityEstimate:
    tree_fraction: float
    roots: int
    non_tree: int

    @property
    def non_tree_fraction(self):
        return 1.0 - self.tree_fraction

    @property
    def std_error(self):
        f = self.tree_fraction
        return math.sqrt(f * (1 - f) / self.roots) if self.roots else math.nan


def _ball_is_tree(root, radius, task_edges, worker_edges, tasks, workers, m):
    # nodes: tasks are 0..m-1, workers are m+j
    parent_edge = {root: -1}
    frontier = [root]
    for _ in range(radius):
        nxt = []
        for u in frontier:
            pe = parent_edge[u]
            if u < m:
                for e in task_edges[u]:
                    if e == pe:
                        continue
                    v = m + workers[e]
                    if v in parent_edge:
                        return False
                    parent_edge[v] = e
                    nxt.append(v)
            else:
                for e in worker_edges[u - m]:
                    if e == pe:
                        continue
                    v = tasks[e]
                    if v in parent_edge:
                        return False
                    parent_edge[v] = e
                    nxt.append(v)
        frontier = nxt
    return True


def neighborhood_is_tree(graph: AssignmentGraph, root, k):
    """Whether the radius ``2k - 1`` ball around task ``root`` (with all its edges) is a tree."""
    task_edges, worker_edges = graph.edge_lists()
    return _ball_is_tree(root, 2 * k - 1, task_edges, worker_edges, graph.tasks.tolist(), graph.workers.tolist(), graph.m)


def empirical_tree_probability(m, l, r, k, trials=1, rng=None, roots=None, simple=False) -> TreeProbabilityEstimate:
    """Monte Carlo fraction of task roots whose radius-(2k-1) neighbourhood is a tree.

    Each trial draws a fresh graph (raw configuration-model multigraph by
    default; repaired simple graph with ``simple=True``) and inspects ``roots``
    uniformly chosen tasks, or every task when ``roots`` is None.
    """
    k = check_count(k, "k")
    trials = check_count(trials, "trials")
    rng = as_generator(rng)
    total = 0
    bad = 0
    for _ in range(trials):
        g = build_configuration_graph(m, l, r, rng) if simple else configuration_pairing(m, l, r, rng)
        task_edges, worker_edges = g.edge_lists()
        tasks, workers = g.tasks.tolist(), g.workers.tolist()
        if roots is None:
            chosen = range(g.m)
        else:
            chosen = rng.integers(g.m, size=roots).tolist()
        for i in chosen:
            total += 1
            if not _ball_is_tree(i, 2 * k - 1, task_edges, worker_edges, tasks, workers, g.m):
                bad += 1
    return TreeProbabilityEstimate(1.0 - bad / total, total, bad)
