"""Shared numerical and serialization helpers.

The softmax and inverse-CDF sampling routines here are the single source of
truth for every execution path (engine, pure kernel, compiled kernel): all
paths must produce bit-identical floats, so they share the same scalar
operation order.
"""

import hashlib
import json
import math

import numpy as np

from .errors import ConfigError, NumericalError


def stable_softmax(values, beta):
    """Softmax of beta*values with max subtraction.

    Scalar left-to-right loop on purpose: the compiled kernel mirrors this
    operation order exactly, which keeps the two paths bit-identical.
    """
    n = len(values)
    m = float(values[0])
    for i in range(1, n):
        v = float(values[i])
        if v > m:
            m = v
    out = np.empty(n, dtype=np.float64)
    total = 0.0
    for i in range(n):
        e = math.exp(beta * (float(values[i]) - m))
        out[i] = e
        total += e
    for i in range(n):
        out[i] = out[i] / total
    return out


def index_from_uniform(u, probs):
    """Map one uniform draw to an index by scanning the CDF left to right.

    Uses strictly one uniform per sample, including for degenerate rows,
    so replay streams stay aligned no matter the distribution.
    """
    last = len(probs) - 1
    acc = 0.0
    for i in range(last):
        acc += float(probs[i])
        if u < acc:
            return i
    return last


def greedy_argmax(values):
    """Index of the maximum; ties break toward the lowest index."""
    return int(np.argmax(values))


def tv_distance(p, q):
    """Total variation distance between two distributions."""
    return 0.5 * float(np.sum(np.abs(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64))))


def check_distribution(vec, tol=1e-12, name="distribution"):
    """Validate nonnegativity and unit sum within tol."""
    arr = np.asarray(vec, dtype=np.float64)
    if np.any(arr < 0.0):
        raise NumericalError(f"{name} has negative entries")
    s = float(arr.sum())
    if abs(s - 1.0) > tol:
        raise NumericalError(f"{name} sums to {s!r}, not 1 within {tol!r}")
    return arr


def spawn_generators(seed, n_agents):
    """Derive the run's random streams from one root seed.

    Stream 0 drives the environment, streams 1..N the agents in order.
    """
    seqs = np.random.SeedSequence(seed).spawn(n_agents + 1)
    gens = [np.random.Generator(np.random.PCG64(s)) for s in seqs]
    return gens[0], gens[1:]


def to_jsonable(obj):
    """Recursively convert numpy containers/scalars to plain Python."""
    if isinstance(obj, np.ndarray):
        return [to_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(x) for x in obj]
    return obj


def canonical_json(obj):
    """Deterministic JSON: sorted keys, no whitespace, repr floats."""
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(mapping):
    """sha256 over the canonical JSON form of a config mapping."""
    return hashlib.sha256(canonical_json(mapping).encode("utf-8")).hexdigest()


def set_config_value(cfg: dict, name: str, value):
    """Set cfg[name] in place, descending dotted paths through dicts/lists.

    Copies each container along the path before writing, so siblings that
    came from a shared base config are never mutated.
    """
    parts = name.split(".")
    node = cfg
    try:
        for part in parts[:-1]:
            key = int(part) if isinstance(node, list) else part
            child = node[key]
            child = list(child) if isinstance(child, (list, tuple)) else dict(child)
            node[key] = child
            node = child
        leaf = parts[-1]
        node[int(leaf) if isinstance(node, list) else leaf] = value
    except (KeyError, IndexError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot set config path {name!r}: {exc}") from exc


def require(condition, message):
    if not condition:
        raise ConfigError(message)
