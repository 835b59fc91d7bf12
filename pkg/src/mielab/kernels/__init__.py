"""Backend selection and the high-level entry for the matrix-game loop.

The compiled extension is used when importable; set MIELAB_PURE=1 to force
the pure-Python twin. Both produce bit-identical results.
"""

import os

import numpy as np

from ..errors import ConfigError
from ..util import spawn_generators

if os.environ.get("MIELAB_PURE"):
    from . import matrix_py as _impl
else:
    try:
        from . import _matrix_cy as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import matrix_py as _impl


def backend() -> str:
    """Which implementation is active: 'compiled' or 'pure'."""
    return _impl.BACKEND


def run_matrix_rounds(scenario, seed: int, horizon: int, impl=None) -> dict:
    """Simulate `horizon` rounds of a MatrixGameScenario.

    Pre-draws the per-agent uniform streams with the engine's seeding
    discipline, then hands the loop to the selected backend. Returns final
    Q-values, beliefs, policy rows, and the full action sequences.
    """
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    params = scenario.kernel_params()
    n_a = params["pay0"].shape[0]
    _, (g0, g1) = spawn_generators(seed, 2)
    u0 = g0.random(horizon)
    u1 = g1.random(horizon)
    specs = scenario.agent_specs()
    q = [np.array(sp.state.theta.values[:n_a] if sp.state.theta.values.size else np.zeros(n_a)) for sp in specs]
    b = [np.array(sp.state.belief.probs) for sp in specs]
    rows = [np.array(sp.state.policy.table[0]) for sp in specs]
    a0 = np.zeros(horizon, dtype=np.int64)
    a1 = np.zeros(horizon, dtype=np.int64)
    run = (_impl if impl is None else impl).run_rounds
    run(
        np.ascontiguousarray(params["pay0"]),
        np.ascontiguousarray(params["pay1"].T),
        0 if params["learner"] == "q" else 1,
        params["alpha"],
        params["beta"],
        params["gamma"],
        params["prior_count"],
        q[0],
        q[1],
        b[0],
        b[1],
        rows[0],
        rows[1],
        u0,
        u1,
        a0,
        a1,
    )
    return {
        "actions": (a0, a1),
        "q": (q[0], q[1]),
        "beliefs": (b[0], b[1]),
        "rows": (rows[0], rows[1]),
    }
