"""Closed-form error bounds, budgets and density-evolution recursions.

Notation follows the rest of the package: ``l`` queries per task, ``r`` tasks
per worker, ``lhat = l - 1``, ``rhat = r - 1``, crowd moments ``mu`` and
``q``. The quantity ``q^2 * lhat * rhat`` decides everything: above 1 the
iterative estimator keeps improving with more rounds, below 1 it does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import ValidationError, as_generator, check_count, check_probability
from .workers import WorkerModel, crowd_stats

__all__ = [
    "TheoryParams",
    "Bound",
    "TheoryReport",
    "sigma_k_sq",
    "sigma_tilde_k_sq",
    "sigma_inf_sq",
    "theorem1_bound",
    "k0_m0",
    "sufficient_budget",
    "lower_bounds",
    "majority_upper_bound",
    "adaptive_counterexample_bound",
    "local_tree_bound",
    "de_moments",
    "de_monte_carlo",
    "theory_report",
]

ADAPTIVE_CONSTANT = 0.27  # from the two-point prior with a = 0.8, valid for q <= 0.64
MAX_TREE_LEAVES = 10 ** 8


@dataclass(frozen=True)
class TheoryParams:
    l: int
    r: int
    q: float
    mu: float
    m: Optional[int] = None

    def __post_init__(self):
        check_count(self.l, "l")
        check_count(self.r, "r")
        check_probability(self.q, "q")
        if self.mu ** 2 > self.q * (1 + 1e-12):
            raise ValidationError(f"mu^2 = {self.mu ** 2:.6g} cannot exceed q = {self.q:.6g}")
        if self.m is not None:
            check_count(self.m, "m")

    @classmethod
    def from_model(cls, l, r, model: WorkerModel, m=None):
        s = crowd_stats(model)
        return cls(l, r, s.q, s.mu, m)

    @property
    def lhat(self):
        return self.l - 1

    @property
    def rhat(self):
        return self.r - 1

    @property
    def growth(self):
        """``q^2 lhat rhat``; the phase transition sits at 1."""
        return self.q ** 2 * self.lhat * self.rhat

    @property
    def phase_margin(self):
        return self.growth - 1.0


@dataclass(frozen=True)
class Bound:
    """A bound value together with the conditions it was derived under."""

    value: float
    valid: bool = True
    note: str = ""

    @property
    def vacuous(self):
        return self.value >= 1.0


def _need_mu(params):
    if not params.mu > 0:
        raise ValidationError(f"mu must be positive, got {params.mu}")


def sigma_k_sq(params: TheoryParams, k: int) -> float:
    """Sub-Gaussian variance proxy of the decision variable after ``k`` rounds."""
    k = check_count(k, "k")
    _need_mu(params)
    g = params.growth
    if g == 1.0:
        raise ValidationError("q^2 lhat rhat = 1: the closed form is singular at the phase transition")
    if params.rhat == 0 or params.q == 0:
        raise ValidationError("need r > 1 and q > 0")
    q, mu = params.q, params.mu
    first = 2.0 * q / (mu ** 2 * g ** (k - 1))
    geom = (1.0 - g ** -(k - 1)) / (1.0 - 1.0 / g)
    return first + (3.0 + 1.0 / (q * params.rhat)) * geom


def sigma_tilde_k_sq(params: TheoryParams, k: int) -> float:
    """Sub-Gaussian parameter of the task-to-worker message itself (not the decision)."""
    k = check_count(k, "k")
    g = params.growth
    if g == 1.0:
        raise ValidationError("q^2 lhat rhat = 1: the closed form is singular at the phase transition")
    lh, rh, q, mu = params.lhat, params.rhat, params.q, params.mu
    geom = (1.0 - g ** -(k - 1)) / (1.0 - 1.0 / g)
    return 2.0 * lh * (lh * rh) ** (k - 1) + mu ** 2 * lh ** 3 * rh * (3 * q * rh + 1) * (q * lh * rh) ** (2 * k - 4) * geom


def sigma_inf_sq(params: TheoryParams) -> float:
    g = params.growth
    if not g > 1.0:
        raise ValidationError(f"q^2 lhat rhat = {g:.6g} <= 1: below the phase transition there is no finite limit")
    return (3.0 + 1.0 / (params.q * params.rhat)) * g / (g - 1.0)


@dataclass(frozen=True)
class Theorem1Bound:
    total: float
    de_term: float
    tree_term: float
    hypotheses_hold: bool

    @property
    def vacuous(self):
        return self.total >= 1.0


def theorem1_bound(params: TheoryParams, k: int) -> Theorem1Bound:
    """``exp(-l q / (2 sigma_k^2)) + 3 l r (lhat rhat)^(2k-2) / m``, with both terms kept apart."""
    if params.m is None:
        raise ValidationError("the bound needs the number of tasks m")
    k = check_count(k, "k")
    hyp = params.mu > 0 and params.growth > 1 and params.l > 1 and params.r > 1
    de = math.exp(-params.l * params.q / (2.0 * sigma_k_sq(params, k)))
    tree = local_tree_bound(params.l, params.r, params.m, k)
    return Theorem1Bound(de + tree, de, tree, hyp)


def k0_m0(params: TheoryParams):
    """Rounds and task count after which the error is at most ``2 exp(-l q / (4 sigma_inf^2))``.

    Returns ``(k0, m0)`` with ``k0`` rounded up to an integer and ``m0``
    evaluated at ``k = k0``.
    """
    _need_mu(params)
    g = params.growth
    if not g > 1:
        raise ValidationError(f"q^2 lhat rhat = {g:.6g} <= 1")
    raw = 1.0 + math.log(params.q / params.mu ** 2) / math.log(g)
    k0 = max(1, math.ceil(raw - 1e-12))
    s_inf = sigma_inf_sq(params)
    m0 = 3.0 * params.l * params.r * math.exp(params.l * params.q / (4.0 * s_inf)) * float(params.lhat * params.rhat) ** (2 * (k0 - 1))
    return k0, m0


@dataclass(frozen=True)
class BudgetFigures:
    large_r: float
    any_r: float
    large_r_applies: bool

    @property
    def recommended(self):
        return self.large_r if self.large_r_applies else self.any_r

    @property
    def queries(self):
        """Recommended budget rounded up to a whole number of queries per task."""
        return math.ceil(self.recommended - 1e-9)


def sufficient_budget(q, eps, r) -> BudgetFigures:
    """Queries per task that guarantee error at most ``eps`` (for large enough m).

    ``(32/q) log(2/eps)`` when ``r >= 1 + 1/q``; ``(24 + 8/(rhat q)) (1/q) log(2/eps)``
    for any ``r``.
    """
    if not 0 < eps <= 0.5:
        raise ValidationError(f"eps must lie in (0, 1/2], got {eps}")
    if not q > 0:
        raise ValidationError("q must be positive")
    r = check_count(r, "r")
    log_term = math.log(2.0 / eps)
    large = 32.0 / q * log_term
    anyr = (24.0 + 8.0 / ((r - 1) * q)) / q * log_term if r > 1 else math.inf
    return BudgetFigures(large, anyr, r >= 1 + 1.0 / q)


def lower_bounds(q, l, eps=None) -> dict:
    """Algorithm-independent limits for a crowd of quality ``q`` with ``l`` queries per task.

    ``majority`` uses the unspecified constant set to 1, so only its exponent
    shape is meaningful. With ``l = 0`` every error bound is exactly 1/2.
    """
    check_probability(q, "q")
    if l < 0:
        raise ValidationError("l must be non-negative")
    out = {}
    if l == 0:
        for key in ("oracle_exact", "oracle_nonadaptive", "majority", "adaptive_minimax"):
            out[key] = Bound(0.5, True, "no queries")
    else:
        out["oracle_exact"] = Bound(0.5 * (1 - q) ** l, True, "oracle error under spammer-hammer")
        out["oracle_nonadaptive"] = Bound(0.5 * math.exp(-(q + q * q) * l), q <= 2 / 3, "valid for q <= 2/3")
        out["majority"] = Bound(math.exp(-(l * q * q + 1)), q < 1, "constant not pinned; set to 1")
        out["adaptive_minimax"] = Bound(0.5 * math.exp(-q * l / ADAPTIVE_CONSTANT), q <= 0.64, "valid for q <= 0.64")
    if eps is not None:
        if not 0 < eps < 0.5:
            raise ValidationError(f"eps must lie in (0, 1/2), got {eps}")
        lg = math.log(1.0 / (2.0 * eps))
        out["necessary_budget_nonadaptive"] = Bound(lg / (2.0 * q) if q else math.inf, q <= 2 / 3, "valid for q <= 2/3")
        out["necessary_budget_adaptive"] = Bound(ADAPTIVE_CONSTANT / q * lg if q else math.inf, q <= 0.64, "valid for q <= 0.64")
    return out


def majority_upper_bound(mu, l) -> float:
    """Error of one round of message passing is at most ``exp(-l mu^2 / 4)``."""
    if mu < 0:
        raise ValidationError("mu must be non-negative")
    return math.exp(-l * mu * mu / 4.0)


def adaptive_counterexample_bound(m, l, q) -> float:
    """Error bound of the group-and-agree adaptive scheme on a spammer-hammer crowd."""
    if not l * q > 2:
        raise ValidationError(f"needs l > 2/q, got l={l}, q={q}")
    s = math.sqrt(m)
    return m * l * l * 2.0 ** (-s) + math.exp(-(2.0 / l) * (l * q - 2) ** 2 * s)


def local_tree_bound(l, r, m, k) -> float:
    """Probability that a task's radius-(2k-1) neighbourhood is not a tree is at most this."""
    return float((l - 1) * (r - 1)) ** (2 * k - 2) * 3.0 * l * r / m


# ---------------------------------------------------------------------------
# density evolution


@dataclass(frozen=True)
class DEMoments:
    mean: float
    var: float
    decision_mean: float
    decision_var: float

    @property
    def chebyshev(self):
        """``Var / E^2`` of the decision variable, an upper bound on its error."""
        return self.decision_var / self.decision_mean ** 2 if self.decision_mean else math.inf


def de_moments(params: TheoryParams, k: int, init_mean=1.0, init_var=1.0) -> DEMoments:
    """Exact mean and variance of the density-evolution messages after ``k`` rounds.

    ``m1 = mu lhat E[y0]``, ``v1 = lhat (E[y0^2] - mu^2 E[y0]^2)``, then
    ``m' = lhat rhat q m`` and ``v' = lhat rhat v + lhat rhat m^2 (1 - q)(1 + rhat q)``.
    The decision variable sums ``l`` instead of ``lhat`` incoming messages.
    """
    k = check_count(k, "k")
    if params.l == 1:
        raise ValidationError("l = 1 leaves no incoming messages (lhat = 0)")
    lh, rh, q, mu = params.lhat, params.rhat, params.q, params.mu
    mean = mu * lh * init_mean
    var = lh * (init_var + init_mean ** 2 - (mu * init_mean) ** 2)
    for _ in range(k - 1):
        mean, var = lh * rh * q * mean, lh * rh * var + lh * rh * mean ** 2 * (1 - q) * (1 + rh * q)
    scale = params.l / lh
    return DEMoments(mean, var, scale * mean, scale * var)


@dataclass(frozen=True)
class DESummary:
    """Empirical summary of the decision variable on the infinite tree."""

    mean: float
    var: float
    p_nonpositive: float
    samples: int
    se_mean: float
    se_var: float
    se_p: float
    values: Optional[np.ndarray] = field(default=None, repr=False)


def _sample_task_messages(count, children, k, l, r, model, rng):
    """Messages sent up by ``count`` task nodes, each with ``children`` worker children, at round ``k``."""
    nw = count * children
    p = model.sample(nw, rng) if nw else np.empty(0)
    if k == 1:
        y = rng.normal(1.0, 1.0, size=nw)
    else:
        rh = r - 1
        x = _sample_task_messages(nw * rh, l - 1, k - 1, l, r, model, rng)
        z = np.where(rng.random(nw * rh) < np.repeat(p, rh), 1.0, -1.0)
        y = (z * x).reshape(nw, rh).sum(axis=1)
    z_up = np.where(rng.random(nw) < p, 1.0, -1.0)
    return (z_up * y).reshape(count, children).sum(axis=1)


def de_monte_carlo(l, r, model: WorkerModel, k, samples=10 ** 5, rng=None, chunk_leaves=2 * 10 ** 6, keep_values=False) -> DESummary:
    """Sample the decision variable after ``k`` rounds on a fresh (l, r)-regular tree.

    Each sample builds its own depth ``2k - 1`` tree with i.i.d. worker
    reliabilities, i.i.d. answers and N(1, 1) leaf messages, so no graph and no
    cycle ever enters.
    """
    l = check_count(l, "l")
    r = check_count(r, "r")
    k = check_count(k, "k")
    samples = check_count(samples, "samples", minimum=1000)
    leaves = l * ((l - 1) * (r - 1)) ** (k - 1)
    if leaves > MAX_TREE_LEAVES:
        raise ValidationError(f"a depth-{2 * k - 1} tree has {leaves} leaves per sample (limit {MAX_TREE_LEAVES})")
    rng = as_generator(rng)
    per_chunk = max(1, chunk_leaves // max(leaves, 1))
    parts = []
    done = 0
    while done < samples:
        c = min(per_chunk, samples - done)
        parts.append(_sample_task_messages(c, l, k, l, r, model, rng))
        done += c
    x = np.concatenate(parts)
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    c4 = float(np.mean((x - mean) ** 4))
    p = float(np.mean(x <= 0))
    n = x.size
    return DESummary(
        mean=mean,
        var=var,
        p_nonpositive=p,
        samples=n,
        se_mean=math.sqrt(var / n),
        se_var=math.sqrt(max(c4 - var * var, 0.0) / n),
        se_p=math.sqrt(p * (1 - p) / n),
        values=x if keep_values else None,
    )


# ---------------------------------------------------------------------------
# report


@dataclass
class TheoryReport:
    params: TheoryParams
    k: int
    phase_margin: float
    sigma_k_sq: Optional[float] = None
    sigma_inf_sq: Optional[float] = None
    theorem1: Optional[Theorem1Bound] = None
    k0: Optional[int] = None
    m0: Optional[float] = None
    de: Optional[DEMoments] = None
    majority_upper: Optional[float] = None
    budget: Optional[BudgetFigures] = None
    lower: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def rows(self):
        """Flat ``(key, value, flag)`` rows, in display order."""
        p = self.params
        out = [
            ("l", p.l, ""), ("r", p.r, ""), ("q", p.q, ""), ("mu", p.mu, ""),
            ("m", p.m, ""), ("k", self.k, ""),
            ("phase_margin", self.phase_margin, "above" if self.phase_margin > 0 else "below"),
            ("sigma_k_sq", self.sigma_k_sq, ""),
            ("sigma_inf_sq", self.sigma_inf_sq, ""),
        ]
        if self.theorem1 is not None:
            t = self.theorem1
            out += [
                ("theorem1_bound", t.total, "vacuous" if t.vacuous else ""),
                ("theorem1_de_term", t.de_term, ""),
                ("theorem1_tree_term", t.tree_term, "vacuous" if t.tree_term >= 1 else ""),
            ]
        out += [("k0", self.k0, ""), ("m0", self.m0, "beyond desk scale" if self.m0 and self.m0 > 1e7 else "")]
        if self.de is not None:
            out += [
                ("de_decision_mean", self.de.decision_mean, ""),
                ("de_decision_var", self.de.decision_var, ""),
                ("chebyshev_bound", self.de.chebyshev, "vacuous" if self.de.chebyshev >= 1 else ""),
            ]
        out.append(("majority_upper_bound", self.majority_upper, ""))
        if self.budget is not None:
            out += [
                ("budget_large_r", self.budget.large_r, "" if self.budget.large_r_applies else "needs r >= 1 + 1/q"),
                ("budget_any_r", self.budget.any_r, ""),
                ("budget_queries_per_task", self.budget.queries, ""),
            ]
        for key, b in self.lower.items():
            flags = [] if b.valid else ["outside validity range"]
            if key == "majority":
                flags.append("constant unspecified")
            out.append((f"lower_{key}", b.value, "; ".join(flags)))
        return out

    def format(self):
        rows = self.rows()
        width = max(len(k) for k, _, _ in rows)
        lines = []
        for key, value, flag in rows:
            if value is None:
                text = "n/a"
            elif isinstance(value, float):
                text = f"{value:.6g}"
            else:
                text = str(value)
            lines.append(f"{key:<{width}}  {text}" + (f"  [{flag}]" if flag else ""))
        lines += [f"# {n}" for n in self.notes]
        return "\n".join(lines)


def theory_report(params: TheoryParams, k=None, eps=None) -> TheoryReport:
    """Evaluate every applicable formula at one parameter point."""
    rep = TheoryReport(params=params, k=0, phase_margin=params.phase_margin)
    above = params.growth > 1 and params.mu > 0
    if above:
        rep.k0, m0 = k0_m0(params)
        rep.m0 = m0
        rep.sigma_inf_sq = sigma_inf_sq(params)
    else:
        rep.notes.append("below the phase transition: sigma_inf_sq, k0 and m0 are undefined")
    rep.k = k if k is not None else (rep.k0 or 1)
    if params.mu > 0 and params.growth != 1 and params.r > 1 and params.q > 0:
        rep.sigma_k_sq = sigma_k_sq(params, rep.k)
        if params.m is not None:
            rep.theorem1 = theorem1_bound(params, rep.k)
    if params.l > 1:
        rep.de = de_moments(params, rep.k)
    rep.majority_upper = majority_upper_bound(max(params.mu, 0.0), params.l)
    if eps is not None and params.q > 0:
        rep.budget = sufficient_budget(params.q, eps, params.r)
    rep.lower = lower_bounds(params.q, params.l, eps if eps is not None and eps < 0.5 else None)
    return rep
