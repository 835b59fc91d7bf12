"""Rollout engine: deterministic runs, JSONL logs, perturbations, replay.

Randomness discipline: one root seed spawns stream 0 for the environment
and streams 1..N for the agents, so adding instrumentation never shifts
draws. Per tick the draw order is: exogenous scenario draw (env stream),
one action draw per agent in agent order, one successor draw (env stream).
"""

import io
import json
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .agents import (
    BeliefState,
    LearningSignal,
    MultilevelAgentState,
    NeuralParams,
    Observation,
    OperatorSchedule,
    Policy,
    joint_step_Phi,
)
from .errors import ConfigError, DataError
from .games import TabularMarkovGame, sample_initial_state, validate_game
from .util import canonical_json, config_hash, spawn_generators, to_jsonable

LOG_FORMAT_VERSION = 1

PERTURBATION_TARGETS = (
    "reward_contingency",
    "policy",
    "belief",
    "neural_params",
    "observation_mask",
    "decoder_mapping",
)


@dataclass(frozen=True)
class RunConfig:
    seed: int
    horizon: int
    snapshot_cadence: int = 10

    def __post_init__(self):
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be >= 1")
        if int(self.snapshot_cadence) < 1:
            raise ConfigError("snapshot_cadence must be >= 1")
        object.__setattr__(self, "seed", seed)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "snapshot_cadence", int(self.snapshot_cadence))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "horizon": self.horizon,
            "snapshot_cadence": self.snapshot_cadence,
        }


@dataclass(frozen=True)
class PerturbationSpec:
    """State surgery between ticks.

    Applied atomically before tick `time`. Numeric payloads blend as
    old + magnitude * (payload - old), so magnitude 1 replaces and 0 is a
    no-op. freeze additionally sets the targeted operator's period to 0
    from the perturbation tick on.
    """

    time: int
    target: str
    agent: Optional[int] = None
    payload: object = None
    magnitude: float = 1.0
    freeze: bool = False

    def __post_init__(self):
        if int(self.time) < 0:
            raise ConfigError("perturbation time must be >= 0")
        if self.target not in PERTURBATION_TARGETS:
            raise ConfigError(f"unknown perturbation target {self.target!r}")
        object.__setattr__(self, "time", int(self.time))
        object.__setattr__(self, "magnitude", float(self.magnitude))

    @classmethod
    def from_config(cls, cfg: dict) -> "PerturbationSpec":
        return cls(
            time=cfg["time"],
            target=cfg["target"],
            agent=cfg.get("agent"),
            payload=cfg.get("payload"),
            magnitude=cfg.get("magnitude", 1.0),
            freeze=cfg.get("freeze", False),
        )

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "target": self.target,
            "agent": self.agent,
            "payload": to_jsonable(self.payload),
            "magnitude": self.magnitude,
            "freeze": self.freeze,
        }


# ---------------------------------------------------------------------------
# log serialization


def serialize_belief(b: BeliefState) -> dict:
    out = {"kind": b.kind, "depth": b.depth}
    if b.kind == "categorical":
        out["probs"] = to_jsonable(b.probs)
    else:
        out["mean"] = to_jsonable(b.mean)
        out["cov"] = to_jsonable(b.cov)
    if b.nested is not None:
        out["nested"] = serialize_belief(b.nested)
    return out


def deserialize_belief(d: dict) -> BeliefState:
    nested = deserialize_belief(d["nested"]) if d.get("nested") else None
    if d["kind"] == "categorical":
        return BeliefState(
            kind="categorical", probs=np.array(d["probs"]), depth=d["depth"], nested=nested
        )
    return BeliefState(
        kind="gaussian",
        mean=np.array(d["mean"]),
        cov=np.array(d["cov"]),
        depth=d["depth"],
        nested=nested,
    )


def serialize_agent_state(st: MultilevelAgentState) -> dict:
    return {
        "theta": {
            "values": to_jsonable(st.theta.values),
            "alpha": st.theta.alpha,
            "shape": None if st.theta.shape is None else list(st.theta.shape),
        },
        "belief": serialize_belief(st.belief),
        "policy": {
            "kind": st.policy.kind,
            "table": to_jsonable(st.policy.table),
            "beta": st.policy.beta,
            "belief_bins": st.policy.belief_bins,
        },
    }


def deserialize_agent_state(d: dict) -> MultilevelAgentState:
    th = d["theta"]
    po = d["policy"]
    return MultilevelAgentState(
        theta=NeuralParams(
            values=np.array(th["values"], dtype=np.float64).reshape(-1),
            alpha=th["alpha"],
            shape=None if th["shape"] is None else tuple(th["shape"]),
        ),
        belief=deserialize_belief(d["belief"]),
        policy=Policy(
            kind=po["kind"],
            table=np.array(po["table"]),
            beta=po["beta"],
            belief_bins=po["belief_bins"],
        ),
    )


def serialize_observation(o: Observation) -> dict:
    signal = o.signal
    if isinstance(signal, LearningSignal):
        signal = {"delta": signal.delta, "index": signal.index}
    elif isinstance(signal, (list, tuple)) and signal and isinstance(signal[0], LearningSignal):
        signal = [{"delta": s.delta, "index": s.index} for s in signal]
    return {
        "state": o.state,
        "next_state": o.next_state,
        "own_action": o.own_action,
        "opp_actions": None if o.opp_actions is None else list(o.opp_actions),
        "reward": o.reward,
        "signal": to_jsonable(signal),
    }


class InteractionLog:
    """Header plus tick/snapshot/final records, all JSON-able dicts."""

    def __init__(self, header: dict, records: list):
        self.header = header
        self.records = records

    @property
    def seed(self) -> int:
        return self.header["seed"]

    @property
    def config_hash(self) -> str:
        return self.header["config_hash"]

    @property
    def n_agents(self) -> int:
        return self.header["n_agents"]

    def ticks(self):
        return [r for r in self.records if r["kind"] == "tick"]

    def snapshots(self):
        return [r for r in self.records if r["kind"] == "snapshot"]

    def final(self):
        for r in reversed(self.records):
            if r["kind"] == "final":
                return r
        raise DataError("log has no final record")

    def final_states(self):
        return [deserialize_agent_state(a) for a in self.final()["agents"]]

    def snapshot_states(self, t: int):
        for r in self.records:
            if r["kind"] == "snapshot" and r["t"] == t:
                return [deserialize_agent_state(a) for a in r["agents"]]
        if self.final()["t"] == t:
            return self.final_states()
        raise DataError(f"no snapshot at tick {t}")

    def __eq__(self, other):
        return (
            isinstance(other, InteractionLog)
            and self.header == other.header
            and self.records == other.records
        )

    def to_jsonl(self) -> str:
        buf = io.StringIO()
        buf.write(canonical_json(self.header))
        buf.write("\n")
        for rec in self.records:
            buf.write(canonical_json(rec))
            buf.write("\n")
        return buf.getvalue()

    @classmethod
    def from_jsonl(cls, text: str) -> "InteractionLog":
        lines = [ln for ln in text.split("\n") if ln]
        if not lines:
            raise DataError("empty log")
        rows = []
        for k, ln in enumerate(lines):
            try:
                rows.append(json.loads(ln))
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed log line {k}: {exc}") from exc
        if rows[0].get("kind") != "header":
            raise DataError("first log line must be the header record")
        for row in rows[1:]:
            if row.get("kind") not in ("tick", "snapshot", "final"):
                raise DataError(f"unknown record kind {row.get('kind')!r}")
        return cls(rows[0], rows[1:])

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "InteractionLog":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())


def make_header(scenario, config: RunConfig, perturbation: Optional[PerturbationSpec]) -> dict:
    pert = None if perturbation is None else perturbation.to_dict()
    payload = {
        "scenario": scenario.config(),
        "run": config.to_dict(),
        "perturbation": pert,
    }
    return {
        "kind": "header",
        "version": LOG_FORMAT_VERSION,
        "config_hash": config_hash(payload),
        "seed": config.seed,
        "n_agents": scenario.game.n_agents,
        "scenario": payload["scenario"],
        "run": payload["run"],
        "perturbation": pert,
    }


# ---------------------------------------------------------------------------
# perturbation machinery


def _blend(old: np.ndarray, target, magnitude: float) -> np.ndarray:
    tgt = np.asarray(target, dtype=np.float64).reshape(old.shape)
    return old + magnitude * (tgt - old)


def _freeze(schedule_name: str, spec):
    return replace(spec, **{schedule_name: OperatorSchedule(period=0)})


def apply_perturbation(game, specs, states, masked, p: PerturbationSpec, scenario):
    """Returns updated (game, specs, states, masked). Pure: inputs unchanged."""
    specs = list(specs)
    states = list(states)
    masked = set(masked)
    n = len(states)
    target = p.target
    agent = p.agent
    if target == "decoder_mapping":
        decoder = getattr(scenario, "decoder_agent", None)
        if decoder is None:
            raise ConfigError(f"decoder_mapping target not valid for scenario {scenario.kind!r}")
        target, agent = "neural_params", decoder if agent is None else agent
    idxs = list(range(n)) if agent is None else [int(agent)]
    for i in idxs:
        if not 0 <= i < n:
            raise ConfigError(f"perturbation agent {i} outside [0, {n})")

    if target == "reward_contingency":
        payload = p.payload if isinstance(p.payload, dict) else {"set": p.payload}
        rewards = np.array(game.rewards)
        if "add" in payload:
            rewards = rewards + p.magnitude * np.asarray(payload["add"], dtype=np.float64)
        elif "set" in payload:
            rewards = _blend(rewards, payload["set"], p.magnitude)
        else:
            raise ConfigError("reward_contingency payload needs 'add' or 'set'")
        game = TabularMarkovGame(
            transition=game.transition,
            rewards=rewards,
            discount=game.discount,
            initial_dist=game.initial_dist,
            state_labels=game.state_labels,
            action_labels=game.action_labels,
        )
    elif target == "observation_mask":
        masked.update(idxs)
    elif target == "neural_params":
        payload = p.payload if isinstance(p.payload, dict) else {"values": p.payload}
        for i in idxs:
            st = states[i]
            theta = replace(st.theta, values=_blend(st.theta.values, payload["values"], p.magnitude))
            states[i] = replace(st, theta=theta)
            if p.freeze:
                specs[i] = _freeze("neural_schedule", specs[i])
    elif target == "belief":
        for i in idxs:
            st = states[i]
            b = st.belief
            if not isinstance(p.payload, dict):
                raise ConfigError("belief payload must name 'probs' or 'mean'")
            if "probs" in p.payload:
                b = replace(b, probs=_blend(b.probs, p.payload["probs"], p.magnitude))
            elif "mean" in p.payload:
                b = replace(b, mean=_blend(b.mean, p.payload["mean"], p.magnitude))
            else:
                raise ConfigError("belief payload must name 'probs' or 'mean'")
            states[i] = replace(st, belief=b)
            if p.freeze:
                specs[i] = _freeze("cognitive_schedule", specs[i])
    elif target == "policy":
        payload = p.payload if isinstance(p.payload, dict) else {"table": p.payload}
        for i in idxs:
            st = states[i]
            policy = replace(st.policy, table=_blend(st.policy.table, payload["table"], p.magnitude))
            states[i] = replace(st, policy=policy)
            if p.freeze:
                specs[i] = _freeze("behavioral_schedule", specs[i])
    else:
        raise ConfigError(f"unhandled perturbation target {target!r}")
    return game, specs, states, masked


def _mask_observation(o: Observation) -> Observation:
    # rewards stay visible: masking blinds the cognitive channel only
    return replace(o, opp_actions=None, signal=None)


# ---------------------------------------------------------------------------
# rollout / replay


def rollout(scenario, config: RunConfig, perturbation: Optional[PerturbationSpec] = None) -> InteractionLog:
    game = scenario.game
    problems = validate_game(game)
    if problems:
        raise ConfigError("scenario game invalid: " + "; ".join(problems))
    if perturbation is not None and perturbation.time >= config.horizon:
        raise ConfigError("perturbation time must lie before the horizon")
    specs = scenario.agent_specs()
    states = [sp.state for sp in specs]
    n = len(specs)
    if n != game.n_agents:
        raise ConfigError("scenario agent count does not match the game")
    env_rng, agent_rngs = spawn_generators(config.seed, n)
    header = make_header(scenario, config, perturbation)
    records = []
    masked: set = set()
    s = sample_initial_state(game, env_rng)
    for t in range(config.horizon):
        if perturbation is not None and t == perturbation.time:
            game, specs, states, masked = apply_perturbation(
                game, specs, states, masked, perturbation, scenario
            )
        if t % config.snapshot_cadence == 0:
            records.append(
                {"kind": "snapshot", "t": t, "agents": [serialize_agent_state(x) for x in states]}
            )
        exo = scenario.exogenous(t, env_rng)

        def observe(t_, s_, actions, rewards, s_next, sts):
            obs = scenario.observe(t_, s_, actions, rewards, s_next, sts, exo)
            if masked:
                obs = [_mask_observation(o) if i in masked else o for i, o in enumerate(obs)]
            return obs

        def reward_hook(t_, s_, actions, rewards, s_next, sts):
            out = scenario.reward_hook(t_, s_, actions, rewards, s_next, sts, exo)
            return rewards if out is None else out

        s_next, states, rec = joint_step_Phi(
            game, specs, states, s, t, env_rng, agent_rngs, observe, reward_hook
        )
        records.append(
            {
                "kind": "tick",
                "t": t,
                "s": rec["s"],
                "actions": list(rec["actions"]),
                "rewards": to_jsonable(rec["rewards"]),
                "obs": [serialize_observation(o) for o in rec["obs"]],
            }
        )
        s = s_next
    records.append(
        {
            "kind": "final",
            "t": config.horizon,
            "s": s,
            "agents": [serialize_agent_state(x) for x in states],
        }
    )
    return InteractionLog(header, records)


def rollout_with_perturbation(scenario, config: RunConfig, perturbation: PerturbationSpec) -> InteractionLog:
    return rollout(scenario, config, perturbation=perturbation)


@dataclass(frozen=True)
class ReplayResult:
    ok: bool
    first_divergence: Optional[int] = None
    detail: str = ""


def replay(log: InteractionLog, scenario=None) -> ReplayResult:
    """Re-simulate from the log's own header and compare record by record."""
    header = log.header
    payload = {
        "scenario": header["scenario"],
        "run": header["run"],
        "perturbation": header["perturbation"],
    }
    if config_hash(payload) != header["config_hash"]:
        raise DataError("config hash mismatch: log header was modified")
    if scenario is None:
        from .scenarios import make_scenario

        scenario = make_scenario(header["scenario"])
    config = RunConfig(**header["run"])
    pert = None
    if header["perturbation"] is not None:
        pert = PerturbationSpec.from_config(header["perturbation"])
    fresh = rollout(scenario, config, pert)
    for got, want in zip(log.records, fresh.records):
        if got != want:
            return ReplayResult(False, got.get("t"), f"record differs at t={got.get('t')}")
    if len(log.records) != len(fresh.records):
        return ReplayResult(False, None, "log length differs from re-simulation")
    return ReplayResult(True)


# ---------------------------------------------------------------------------
# CSV export


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export_series_csv(log: InteractionLog, scenario, path):
    """Scalar time series per tick; first line carries hash and seed."""
    cols = scenario.series_columns(log.n_agents)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config_hash={log.config_hash} seed={log.seed}\n")
        fh.write(",".join(cols) + "\n")
        for rec in log.ticks():
            row = scenario.series_row(rec)
            fh.write(",".join(_cell(v) for v in row) + "\n")
