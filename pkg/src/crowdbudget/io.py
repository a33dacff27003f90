"""CSV and config-file formats used by the command line.

Edge file::

    # m=4 n=4 l=2 r=2 seed=1
    task_id,worker_id
    0,2
    ...

Responses carry ``task_id,worker_id,answer``, truth ``task_id,t``,
reliabilities ``worker_id,p`` and results ``task_id,estimate,decision_value``.
All indices are 0-based. Parse errors name the file line.
"""

from __future__ import annotations

import configparser
import csv
import math
import re

import numpy as np

from ._validation import ValidationError
from .allocation import AssignmentGraph, GroundTruth
from .inference import ResponseMatrix
from .montecarlo import ExperimentConfig
from .workers import BetaPrior, FiniteMixture, FixedP, Haldane, SpammerHammer, WorkerSample

GRAPH_HEADER = ["task_id", "worker_id"]
RESPONSE_HEADER = ["task_id", "worker_id", "answer"]
TRUTH_HEADER = ["task_id", "t"]
RELIABILITY_HEADER = ["worker_id", "p"]
RESULT_HEADER = ["task_id", "estimate", "decision_value"]


class FormatError(ValidationError):
    """A file could not be parsed; the message names the file and line."""


def _fmt(x):
    return repr(float(x))


def _meta_line(**fields):
    return "# " + " ".join(f"{k}={'none' if v is None else v}" for k, v in fields.items()) + "\n"


def _write(path, header, rows, meta=None):
    """Write to a path, or to an already open text stream."""
    if hasattr(path, "write"):
        _write_stream(path, header, rows, meta)
        return
    with open(path, "w", newline="") as fh:
        _write_stream(fh, header, rows, meta)


def _write_stream(fh, header, rows, meta):
    if meta:
        fh.write(meta)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def _read(path, header, n_meta_allowed=True):
    """Return ``(meta dict, [(line_no, fields)])``."""
    try:
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from None
    meta = {}
    idx = 0
    if idx < len(lines) and lines[idx].startswith("#"):
        if not n_meta_allowed:
            raise FormatError(f"{path}:1: unexpected metadata line")
        for tok in lines[idx][1:].split():
            if "=" not in tok:
                raise FormatError(f"{path}:1: malformed metadata token {tok!r}")
            k, v = tok.split("=", 1)
            meta[k] = v
        idx += 1
    if idx >= len(lines):
        raise FormatError(f"{path}: missing header line {','.join(header)!r}")
    got = [c.strip() for c in lines[idx].split(",")]
    if got != header:
        raise FormatError(f"{path}:{idx + 1}: expected header {','.join(header)!r}, got {lines[idx]!r}")
    rows = []
    for no, fields in enumerate(csv.reader(lines[idx + 1:]), start=idx + 2):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(header):
            raise FormatError(f"{path}:{no}: expected {len(header)} fields, got {len(fields)}")
        rows.append((no, [f.strip() for f in fields]))
    return meta, rows


def _int(path, no, value, name):
    try:
        return int(value)
    except ValueError:
        raise FormatError(f"{path}:{no}: {name} {value!r} is not an integer") from None


def _float(path, no, value, name):
    try:
        x = float(value)
    except ValueError:
        raise FormatError(f"{path}:{no}: {name} {value!r} is not a number") from None
    if not math.isfinite(x):
        raise FormatError(f"{path}:{no}: {name} must be finite")
    return x


def _meta_int(path, meta, key, required=True):
    if key not in meta or meta[key] == "none":
        if required:
            raise FormatError(f"{path}:1: metadata is missing {key}=")
        return None
    try:
        return int(meta[key])
    except ValueError:
        raise FormatError(f"{path}:1: metadata {key}={meta[key]!r} is not an integer") from None


# ---------------------------------------------------------------------------
# graphs and responses


def write_graph(graph: AssignmentGraph, path):
    meta = _meta_line(m=graph.m, n=graph.n, l=graph.l, r=graph.r, seed=graph.seed)
    _write(path, GRAPH_HEADER, zip(graph.tasks.tolist(), graph.workers.tolist()), meta)


def read_graph(path) -> AssignmentGraph:
    meta, rows = _read(path, GRAPH_HEADER)
    m, n, l, r = (_meta_int(path, meta, k) for k in ("m", "n", "l", "r"))
    seed = _meta_int(path, meta, "seed", required=False)
    tasks, workers = [], []
    for no, (t, w) in rows:
        t, w = _int(path, no, t, "task_id"), _int(path, no, w, "worker_id")
        if not 0 <= t < m:
            raise FormatError(f"{path}:{no}: task_id {t} outside [0, {m})")
        if not 0 <= w < n:
            raise FormatError(f"{path}:{no}: worker_id {w} outside [0, {n})")
        tasks.append(t)
        workers.append(w)
    try:
        return AssignmentGraph(m, n, l, r, np.array(tasks, dtype=np.int64), np.array(workers, dtype=np.int64), seed)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_responses(responses: ResponseMatrix, path):
    rows = zip(responses.task.tolist(), responses.worker.tolist(), responses.answer.tolist())
    _write(path, RESPONSE_HEADER, rows, _meta_line(m=responses.m, n=responses.n))


def read_responses(path, graph: AssignmentGraph = None) -> ResponseMatrix:
    """Parse a response file; with ``graph`` every entry must sit on one of its edges."""
    meta, rows = _read(path, RESPONSE_HEADER)
    if graph is not None:
        m, n = graph.m, graph.n
        edges = set(zip(graph.tasks.tolist(), graph.workers.tolist()))
    else:
        m, n = _meta_int(path, meta, "m"), _meta_int(path, meta, "n")
        edges = None
    tasks, workers, answers, seen = [], [], [], set()
    for no, (t, w, a) in rows:
        t, w = _int(path, no, t, "task_id"), _int(path, no, w, "worker_id")
        a = _int(path, no, a, "answer")
        if a not in (1, -1):
            raise FormatError(f"{path}:{no}: answer {a} must be +1 or -1")
        if not (0 <= t < m and 0 <= w < n):
            raise FormatError(f"{path}:{no}: pair ({t}, {w}) outside a {m}x{n} matrix")
        if edges is not None and (t, w) not in edges:
            raise FormatError(f"{path}:{no}: pair ({t}, {w}) is not an edge of the assignment graph")
        if (t, w) in seen:
            raise FormatError(f"{path}:{no}: duplicate pair ({t}, {w})")
        seen.add((t, w))
        tasks.append(t)
        workers.append(w)
        answers.append(a)
    res = ResponseMatrix(m, n, np.array(tasks, dtype=np.int64), np.array(workers, dtype=np.int64), np.array(answers, dtype=np.int8))
    if graph is not None and res.num_entries != graph.num_edges:
        raise FormatError(f"{path}: {res.num_entries} responses for {graph.num_edges} edges; every edge needs an answer")
    return res


# ---------------------------------------------------------------------------
# per-task and per-worker vectors


def write_truth(truth: GroundTruth, path):
    _write(path, TRUTH_HEADER, enumerate(truth.t.tolist()))


def read_truth(path, m=None) -> GroundTruth:
    _, rows = _read(path, TRUTH_HEADER, n_meta_allowed=False)
    values = {}
    for no, (i, t) in rows:
        i, t = _int(path, no, i, "task_id"), _int(path, no, t, "t")
        if t not in (1, -1):
            raise FormatError(f"{path}:{no}: t = {t} must be +1 or -1")
        if i in values:
            raise FormatError(f"{path}:{no}: duplicate task_id {i}")
        values[i] = t
    size = m if m is not None else len(values)
    if sorted(values) != list(range(size)):
        raise FormatError(f"{path}: task ids must cover 0..{size - 1} exactly")
    return GroundTruth(np.array([values[i] for i in range(size)], dtype=np.int8))


def write_reliabilities(workers: WorkerSample, path):
    _write(path, RELIABILITY_HEADER, ((j, _fmt(p)) for j, p in enumerate(workers.p.tolist())))


def read_reliabilities(path, n=None) -> WorkerSample:
    _, rows = _read(path, RELIABILITY_HEADER, n_meta_allowed=False)
    values = {}
    for no, (j, p) in rows:
        j, p = _int(path, no, j, "worker_id"), _float(path, no, p, "p")
        if not 0 <= p <= 1:
            raise FormatError(f"{path}:{no}: p = {p} outside [0, 1]")
        if j in values:
            raise FormatError(f"{path}:{no}: duplicate worker_id {j}")
        values[j] = p
    size = n if n is not None else len(values)
    if sorted(values) != list(range(size)):
        raise FormatError(f"{path}: worker ids must cover 0..{size - 1} exactly")
    return WorkerSample(np.array([values[j] for j in range(size)]))


def write_results(result, path):
    rows = ((i, int(e), _fmt(d)) for i, (e, d) in enumerate(zip(result.estimates.tolist(), result.decision_values.tolist())))
    _write(path, RESULT_HEADER, rows)


def read_results(path):
    """Return ``(estimates, decision_values)`` arrays."""
    _, rows = _read(path, RESULT_HEADER, n_meta_allowed=False)
    est = np.array([_int(path, no, e, "estimate") for no, (_, e, _) in rows], dtype=np.int8)
    dec = np.array([_float(path, no, d, "decision_value") for no, (_, _, d) in rows])
    return est, dec


# ---------------------------------------------------------------------------
# worker models and experiment configs

_MODEL_KEYS = {
    "spammer_hammer": ("q",),
    "beta": ("alpha", "beta"),
    "fixed": ("p",),
    "haldane": (),
    "mixture": ("points",),
}


def model_to_dict(model) -> dict:
    if isinstance(model, SpammerHammer):
        return {"model": "spammer_hammer", "q": _fmt(model.q_sh)}
    if isinstance(model, BetaPrior):
        return {"model": "beta", "alpha": _fmt(model.alpha), "beta": _fmt(model.beta)}
    if isinstance(model, FixedP):
        return {"model": "fixed", "p": _fmt(model.p)}
    if isinstance(model, Haldane):
        return {"model": "haldane"}
    if isinstance(model, FiniteMixture):
        return {"model": "mixture", "points": ", ".join(f"{_fmt(p)}:{_fmt(w)}" for p, w in model.points)}
    raise ValidationError(f"cannot serialize worker model {model!r}")


def model_from_dict(d: dict):
    """Inverse of :func:`model_to_dict`; raises ``KeyError``/``ValueError`` naming the bad key."""
    kind = d.get("model")
    if kind not in _MODEL_KEYS:
        raise ValueError(f"model: unknown worker model {kind!r}; choose from {sorted(_MODEL_KEYS)}")
    extra = set(d) - {"model", *_MODEL_KEYS[kind]}
    if extra:
        raise ValueError(f"{sorted(extra)[0]}: not a parameter of the {kind} model")
    for key in _MODEL_KEYS[kind]:
        if key not in d:
            raise ValueError(f"{key}: required by the {kind} model")

    def num(key):
        try:
            return float(d[key])
        except ValueError:
            raise ValueError(f"{key}: {d[key]!r} is not a number") from None

    if kind == "spammer_hammer":
        return SpammerHammer(num("q"))
    if kind == "beta":
        return BetaPrior(num("alpha"), num("beta"))
    if kind == "fixed":
        return FixedP(num("p"))
    if kind == "haldane":
        return Haldane()
    points = []
    for tok in d["points"].split(","):
        try:
            p, w = tok.split(":")
            points.append((float(p), float(w)))
        except ValueError:
            raise ValueError(f"points: {tok.strip()!r} is not of the form p:weight") from None
    return FiniteMixture(tuple(points))


_EXPERIMENT_KEYS = {"m", "l", "r", "algorithms", "k_max", "trials", "seed", "truth", "output", "n_jobs"}


def _key_lines(text):
    """Map ``(section, key)`` to its 1-based line number."""
    where, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        hit = re.match(r"\[(.+)\]$", s)
        if hit:
            section = hit.group(1).strip()
            continue
        kv = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", s)
        if kv and section is not None:
            where[(section, kv.group(1).strip().lower())] = no
    return where


def _parse_r(value):
    v = value.strip().lower()
    if v in ("equal", "l"):
        return "equal", None
    if v.startswith("ratio:"):
        return "ratio", float(v.split(":", 1)[1])
    return "fixed", int(v)


def load_config(path) -> ExperimentConfig:
    """Read an INI-style experiment file with ``[experiment]`` and ``[workers]`` sections.

    ``[experiment]`` keys: ``m``, ``l`` (comma list), ``r`` (``equal``, an
    integer, or ``ratio:<x>``), ``algorithms``, ``k_max`` (integer or ``auto``),
    ``trials``, ``seed``, ``truth``, ``output``, ``n_jobs``. ``[workers]``
    holds ``model`` plus that model's parameters.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise FormatError(f"{path}: {' '.join(str(exc).split())}") from None
    lines = _key_lines(text)

    def fail(section, key, msg):
        no = lines.get((section, key))
        loc = f"{path}:{no}" if no else str(path)
        raise FormatError(f"{loc}: [{section}] {key}: {msg}")

    for section in ("experiment", "workers"):
        if not parser.has_section(section):
            raise FormatError(f"{path}: missing [{section}] section")
    unknown = [s for s in parser.sections() if s not in ("experiment", "workers")]
    if unknown:
        raise FormatError(f"{path}: unknown section [{unknown[0]}]")
    exp = parser["experiment"]
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            fail("experiment", key, "unknown key")
    for key in ("m", "l"):
        if key not in exp:
            raise FormatError(f"{path}: [experiment] {key}: required key missing")

    kwargs = {}
    try:
        kwargs["m"] = int(exp["m"])
    except ValueError:
        fail("experiment", "m", f"{exp['m']!r} is not an integer")
    try:
        kwargs["l_values"] = tuple(int(v) for v in exp["l"].replace(" ", "").split(",") if v)
    except ValueError:
        fail("experiment", "l", f"{exp['l']!r} is not a comma-separated list of integers")
    if "r" in exp:
        try:
            kwargs["r_policy"], kwargs["r_value"] = _parse_r(exp["r"])
        except ValueError:
            fail("experiment", "r", f"{exp['r']!r} is not 'equal', an integer or 'ratio:<x>'")
    if "algorithms" in exp:
        kwargs["algorithms"] = tuple(a.strip() for a in exp["algorithms"].split(",") if a.strip())
    if "k_max" in exp:
        v = exp["k_max"].strip().lower()
        try:
            kwargs["k_max"] = None if v == "auto" else int(v)
        except ValueError:
            fail("experiment", "k_max", f"{exp['k_max']!r} is not an integer or 'auto'")
    for key, name in (("trials", "trials"), ("seed", "base_seed"), ("n_jobs", "n_jobs")):
        if key in exp:
            try:
                kwargs[name] = int(exp[key])
            except ValueError:
                fail("experiment", key, f"{exp[key]!r} is not an integer")
    if "truth" in exp:
        kwargs["truth_mode"] = exp["truth"].strip()
    if "output" in exp:
        kwargs["output"] = exp["output"].strip()

    wk = dict(parser["workers"])
    try:
        kwargs["model"] = model_from_dict(wk)
    except ValidationError as exc:
        fail("workers", "model", str(exc))
    except ValueError as exc:
        key, _, msg = str(exc).partition(": ")
        fail("workers", key, msg)

    try:
        return ExperimentConfig(**kwargs)
    except ValidationError as exc:
        raise FormatError(f"{path}: [experiment] {exc}") from None


def dump_config(config: ExperimentConfig) -> str:
    """Serialize a config to the text accepted by :func:`load_config`."""
    r = {"equal": "equal", "fixed": str(int(config.r_value or 0)), "ratio": f"ratio:{config.r_value!r}"}[config.r_policy]
    lines = [
        "[experiment]",
        f"m = {config.m}",
        f"l = {', '.join(map(str, config.l_values))}",
        f"r = {r}",
        f"algorithms = {', '.join(config.algorithms)}",
        f"k_max = {'auto' if config.k_max is None else config.k_max}",
        f"trials = {config.trials}",
        f"seed = {config.base_seed}",
        f"truth = {config.truth_mode}",
        f"n_jobs = {config.n_jobs}",
    ]
    if config.output:
        lines.append(f"output = {config.output}")
    lines += ["", "[workers]"] + [f"{k} = {v}" for k, v in model_to_dict(config.model).items()]
    return "\n".join(lines) + "\n"
