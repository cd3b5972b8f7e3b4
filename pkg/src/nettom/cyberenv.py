"""A two-player cyber-defence game on a fixed network topology.

One attacker (red) starts with a foothold on the entry node and tries to
compromise one of three per-episode high-value leaf nodes within the step
cap; one defender (blue) cleans, hardens, and isolates nodes to stop it.
The game is zero-sum and fully deterministic given the episode seed: all
stochasticity flows through the seeded generator created in ``reset``.

Rules fixed by the environment (constants live in :class:`EnvConfig`):

* Node vulnerabilities are drawn uniformly per episode and set the success
  probability of ordinary attacks against that node.
* An attack needs a live launch point: a compromised, non-isolated node
  adjacent to the target, or the entry node itself (red can always try to
  re-enter through a non-isolated entry). Isolated nodes can neither
  launch nor receive attacks, which is what makes the isolation strategy a
  guaranteed (if costly) defence.
* Zero-day attacks always succeed against an attackable target while the
  budget lasts; the budget refills by one every few steps.
* Successful ordinary attacks are hidden from blue half the time, and
  zero-days always; a scan reveals every hidden compromise.
* Blue moves first within a step, so cleaning a node protects it from the
  attack red launches the same step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph_core import (
    CostMatrix,
    HvnPlacement,
    Network,
    all_pairs_shortest_paths,
    entry_candidates,
    place_high_value_nodes,
)
from .seeding import derive_seed, rng_for

BLUE_DO_NOTHING = "do_nothing"
BLUE_SCAN = "scan"
BLUE_MAKE_SAFE = "make_safe_node"
BLUE_REDUCE_VULN = "reduce_node_vulnerability"
BLUE_RESTORE = "restore"
BLUE_ISOLATE = "isolate"
BLUE_RECONNECT = "reconnect"
BLUE_ACTION_KINDS = (
    BLUE_DO_NOTHING, BLUE_SCAN, BLUE_MAKE_SAFE, BLUE_REDUCE_VULN,
    BLUE_RESTORE, BLUE_ISOLATE, BLUE_RECONNECT,
)
_BLUE_TARGETED = frozenset(
    (BLUE_MAKE_SAFE, BLUE_REDUCE_VULN, BLUE_RESTORE, BLUE_ISOLATE, BLUE_RECONNECT)
)

RED_DO_NOTHING = "do_nothing"
RED_BASIC_ATTACK = "basic_attack"
RED_RANDOM_MOVE = "random_move"
RED_ZERO_DAY = "zero_day_attack"
RED_SPREAD = "spread"
RED_INTRUDE = "intrude"
RED_ACTION_KINDS = (
    RED_DO_NOTHING, RED_BASIC_ATTACK, RED_RANDOM_MOVE,
    RED_ZERO_DAY, RED_SPREAD, RED_INTRUDE,
)
_RED_TARGETED = frozenset((RED_BASIC_ATTACK, RED_RANDOM_MOVE, RED_ZERO_DAY))

OBSERVER_BLUE = "blue"
OBSERVER_FULL = "full"
OBSERVER_RED = "red"

RED_WIN = "red_win"
BLUE_WIN = "blue_win"

TRAJECTORY_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BlueAction:
    kind: str
    target: int | None = None


@dataclass(frozen=True)
class RedAction:
    kind: str
    target: int | None = None


@dataclass(frozen=True)
class EnvConfig:
    """Game constants. Defaults are the values used by every shipped test."""

    vuln_low: float = 0.2
    vuln_high: float = 0.8
    hidden_prob: float = 0.5
    zero_day_start: int = 1
    zero_day_every: int = 4
    reduce_vuln_factor: float = 0.8
    vuln_floor: float = 0.05
    cost_compromised: float = 1.0
    cost_isolated: float = 0.5
    red_win_penalty: float = 100.0
    max_steps: int = 500
    entry_count: int = 1


@dataclass
class EpisodeState:
    """Mutable per-episode state; written only by its owning environment."""

    vulnerability: np.ndarray
    initial_vulnerability: np.ndarray
    compromised: np.ndarray
    hidden: np.ndarray
    isolated: np.ndarray
    zero_day_budget: int
    step: int
    placement: HvnPlacement
    entries: tuple[int, ...]
    rng: np.random.Generator
    red_locus: int
    done: bool = False
    outcome: str | None = None


@dataclass
class StateObservation:
    """Per-node features plus an adjacency snapshot for one observer.

    Fields absent from an observer's view are None: blue never sees hidden
    compromises, high-value labels, or red's zero-day budget; red sees its
    own compromises (hidden included) folded into ``compromised_visible``.
    """

    vulnerability: np.ndarray
    compromised_visible: np.ndarray
    compromised_hidden: np.ndarray | None
    isolated: np.ndarray
    is_entry: np.ndarray
    is_hvn: np.ndarray | None
    active_adjacency: np.ndarray
    zero_day_budget: int | None


@dataclass(frozen=True)
class EpisodeContext:
    """What a policy learns at episode start: topology, distances, and the
    episode's high-value placement (blue defends those assets; attacking
    agents with insider knowledge read them too)."""

    net: Network
    cm: CostMatrix
    hvns: tuple[int, int, int]
    entries: tuple[int, ...]


@dataclass(frozen=True)
class StepResult:
    blue_reward: float
    red_reward: float
    done: bool
    red_hits: tuple[int, ...]


def active_adjacency(base_adjacency: np.ndarray, isolated: np.ndarray) -> np.ndarray:
    """Edges currently alive: base topology minus rows/cols of isolated nodes."""
    alive = ~isolated
    return base_adjacency & alive[:, None] & alive[None, :]


def attackable_nodes(active_adj: np.ndarray, compromised: np.ndarray,
                     isolated: np.ndarray, entries) -> np.ndarray:
    """Boolean mask of nodes red can currently attack.

    A node is attackable when it is not isolated, not yet compromised, and
    either adjacent (through live edges) to a live compromised node or is a
    non-isolated entry node (red's permanent way back in).
    """
    live = compromised & ~isolated
    reachable = (active_adj & live[None, :]).any(axis=1)
    mask = ~isolated & ~compromised & reachable
    for e in entries:
        if not isolated[e] and not compromised[e]:
            mask[e] = True
    return mask


class CyberEnv:
    """Owns one episode of the game; see the module docstring for rules."""

    def __init__(self, net: Network, cm: CostMatrix | None = None,
                 config: EnvConfig | None = None):
        self.net = net
        self.cm = cm if cm is not None else all_pairs_shortest_paths(net)
        self.config = config if config is not None else EnvConfig()
        self.state: EpisodeState | None = None
        self._adj_cache: np.ndarray | None = None

    def reset(self, seed: int) -> EpisodeState:
        net, cfg = self.net, self.config
        n = net.node_count
        rng = np.random.default_rng(seed)
        vuln = rng.uniform(cfg.vuln_low, cfg.vuln_high, size=n)
        entries = entry_candidates(net, cfg.entry_count)
        placement = place_high_value_nodes(net, derive_seed(seed, "hvn"),
                                           exclude=entries)
        compromised = np.zeros(n, dtype=bool)
        for e in entries:
            compromised[e] = True
        self.state = EpisodeState(
            vulnerability=vuln,
            initial_vulnerability=vuln.copy(),
            compromised=compromised,
            hidden=np.zeros(n, dtype=bool),
            isolated=np.zeros(n, dtype=bool),
            zero_day_budget=cfg.zero_day_start,
            step=0,
            placement=placement,
            entries=entries,
            rng=rng,
            red_locus=entries[0],
        )
        self._adj_cache = None
        return self.state

    # -- views ----------------------------------------------------------

    def active_adjacency(self) -> np.ndarray:
        # Isolation changes rarely, so the live-edge matrix is cached and
        # write-locked; isolate/reconnect invalidate it.
        if self._adj_cache is None:
            s = self._require_state()
            adj = active_adjacency(self.net.adjacency, s.isolated)
            adj.setflags(write=False)
            self._adj_cache = adj
        return self._adj_cache

    def observe(self, observer: str) -> StateObservation:
        s = self._require_state()
        n = self.net.node_count
        is_entry = np.zeros(n, dtype=bool)
        for e in s.entries:
            is_entry[e] = True
        is_hvn = np.zeros(n, dtype=bool)
        for h in s.placement.hvns:
            is_hvn[h] = True
        adj = self.active_adjacency()
        if observer == OBSERVER_FULL:
            return StateObservation(
                vulnerability=s.vulnerability.copy(),
                compromised_visible=s.compromised & ~s.hidden,
                compromised_hidden=s.compromised & s.hidden,
                isolated=s.isolated.copy(),
                is_entry=is_entry,
                is_hvn=is_hvn,
                active_adjacency=adj,
                zero_day_budget=s.zero_day_budget,
            )
        if observer == OBSERVER_BLUE:
            return StateObservation(
                vulnerability=s.vulnerability.copy(),
                compromised_visible=s.compromised & ~s.hidden,
                compromised_hidden=None,
                isolated=s.isolated.copy(),
                is_entry=is_entry,
                is_hvn=None,
                active_adjacency=adj,
                zero_day_budget=None,
            )
        if observer == OBSERVER_RED:
            return StateObservation(
                vulnerability=s.vulnerability.copy(),
                compromised_visible=s.compromised.copy(),
                compromised_hidden=None,
                isolated=s.isolated.copy(),
                is_entry=is_entry,
                is_hvn=is_hvn,
                active_adjacency=adj,
                zero_day_budget=s.zero_day_budget,
            )
        raise ValueError(f"unknown observer {observer!r}")

    # -- dynamics --------------------------------------------------------

    def apply_blue(self, action: BlueAction) -> EpisodeState:
        s = self._require_state()
        kind, v = action.kind, action.target
        if kind not in BLUE_ACTION_KINDS:
            raise ValueError(f"unknown blue action {kind!r}")
        if kind in _BLUE_TARGETED:
            if v is None or not (0 <= v < self.net.node_count):
                raise ValueError(f"blue action {kind} needs a valid node, got {v!r}")
        if kind == BLUE_SCAN:
            s.hidden[:] = False
        elif kind == BLUE_MAKE_SAFE:
            s.compromised[v] = False
            s.hidden[v] = False
        elif kind == BLUE_REDUCE_VULN:
            s.vulnerability[v] = max(
                self.config.vuln_floor,
                s.vulnerability[v] * self.config.reduce_vuln_factor,
            )
        elif kind == BLUE_RESTORE:
            s.compromised[v] = False
            s.hidden[v] = False
            s.vulnerability[v] = s.initial_vulnerability[v]
        elif kind == BLUE_ISOLATE:
            s.isolated[v] = True
            self._adj_cache = None
        elif kind == BLUE_RECONNECT:
            # Reconnecting a connected node is a no-op by the rules.
            s.isolated[v] = False
            self._adj_cache = None
        return s

    def apply_red(self, action: RedAction, rng: np.random.Generator | None = None
                  ) -> tuple[int, ...]:
        """Apply a red action; returns the nodes newly compromised by it."""
        s = self._require_state()
        rng = rng if rng is not None else s.rng
        kind, v = action.kind, action.target
        if kind not in RED_ACTION_KINDS:
            raise ValueError(f"unknown red action {kind!r}")
        if kind in _RED_TARGETED:
            if v is None or not (0 <= v < self.net.node_count):
                raise ValueError(f"red action {kind} needs a valid node, got {v!r}")
        if kind == RED_DO_NOTHING:
            return ()
        adj = self.active_adjacency()
        attackable = attackable_nodes(adj, s.compromised, s.isolated, s.entries)
        hits: list[int] = []
        if kind == RED_RANDOM_MOVE:
            # Bookkeeping only: relocates the action locus, never the state.
            if adj[s.red_locus, v]:
                s.red_locus = v
        elif kind == RED_BASIC_ATTACK:
            if attackable[v]:
                self._roll_attack(v, rng, hits)
        elif kind == RED_ZERO_DAY:
            if s.zero_day_budget > 0 and attackable[v]:
                s.zero_day_budget -= 1
                s.compromised[v] = True
                s.hidden[v] = True
                hits.append(v)
        elif kind == RED_SPREAD:
            for t in np.flatnonzero(attackable):
                self._roll_attack(int(t), rng, hits)
        elif kind == RED_INTRUDE:
            live = s.compromised & ~s.isolated
            if live.any():
                targets = np.flatnonzero(~s.isolated & ~s.compromised)
            else:
                targets = np.flatnonzero(attackable)
            for t in targets:
                self._roll_attack(int(t), rng, hits)
        return tuple(hits)

    def _roll_attack(self, v: int, rng: np.random.Generator, hits: list[int]) -> None:
        s = self.state
        if rng.random() < s.vulnerability[v]:
            s.compromised[v] = True
            s.hidden[v] = rng.random() < self.config.hidden_prob
            hits.append(v)

    def step(self, blue_action: BlueAction, red_action: RedAction) -> StepResult:
        s = self._require_state()
        if s.done:
            raise RuntimeError("step() called on a finished episode")
        cfg = self.config
        self.apply_blue(blue_action)
        hits = self.apply_red(red_action)
        s.step += 1
        if s.step % cfg.zero_day_every == 0:
            s.zero_day_budget += 1

        reward = -(
            cfg.cost_compromised * float(s.compromised.sum())
            + cfg.cost_isolated * float(s.isolated.sum())
        )
        captured = [h for h in s.placement.hvns if s.compromised[h]]
        if captured:
            s.done = True
            s.outcome = RED_WIN
            target = min(captured)
            s.placement = s.placement.with_target(s.placement.hvns.index(target))
            reward -= cfg.red_win_penalty
        elif s.step >= cfg.max_steps:
            s.done = True
            s.outcome = BLUE_WIN
        return StepResult(
            blue_reward=reward, red_reward=-reward, done=s.done, red_hits=hits
        )

    def _require_state(self) -> EpisodeState:
        if self.state is None:
            raise RuntimeError("call reset() before interacting with the env")
        return self.state


# ---------------------------------------------------------------------------
# Rollouts and trajectory files
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryStep:
    t: int
    obs: StateObservation
    blue_action: BlueAction | None
    red_action: RedAction | None
    red_hits: tuple[int, ...]


@dataclass
class EpisodeTrajectory:
    """Full-observability record of one episode.

    ``steps`` holds final_step + 1 entries: one per acted step plus a
    terminal entry carrying the final state with no actions.
    """

    episode_id: str
    network: str
    seed: int
    blue_id: str
    red_id: str
    outcome: str
    target_node: int | None
    final_step: int
    hvns: tuple[int, int, int]
    entries: tuple[int, ...]
    total_blue_reward: float
    steps: list[TrajectoryStep] = field(default_factory=list)

    @property
    def red_won(self) -> bool:
        return self.outcome == RED_WIN


def rollout(net: Network, blue_policy, red_policy, seed: int,
            cm: CostMatrix | None = None, config: EnvConfig | None = None,
            episode_id: str | None = None) -> EpisodeTrajectory:
    """Play one full episode and record full-observability observations,
    both actions, and the nodes red newly compromised at every step."""
    env = CyberEnv(net, cm=cm, config=config)
    state = env.reset(seed)
    ctx = EpisodeContext(net=net, cm=env.cm, hvns=state.placement.hvns,
                         entries=state.entries)
    blue_rng = rng_for(seed, "blue")
    red_rng = rng_for(seed, "red")
    blue_policy.begin_episode(ctx, blue_rng)
    red_policy.begin_episode(ctx, red_rng)

    steps: list[TrajectoryStep] = []
    total_reward = 0.0
    while not state.done:
        t = state.step
        obs_full = env.observe(OBSERVER_FULL)
        blue_action = blue_policy.act(env.observe(OBSERVER_BLUE), blue_rng)
        red_action = red_policy.act(env.observe(OBSERVER_RED), red_rng)
        try:
            result = env.step(blue_action, red_action)
        except ValueError as exc:
            raise RuntimeError(
                f"invalid action at step {t} "
                f"(blue={blue_policy.policy_id}, red={red_policy.policy_id}): {exc}"
            ) from exc
        total_reward += result.blue_reward
        steps.append(TrajectoryStep(
            t=t, obs=obs_full, blue_action=blue_action,
            red_action=red_action, red_hits=result.red_hits,
        ))
    steps.append(TrajectoryStep(
        t=state.step, obs=env.observe(OBSERVER_FULL),
        blue_action=None, red_action=None, red_hits=(),
    ))

    target = state.placement.target_node if state.outcome == RED_WIN else None
    return EpisodeTrajectory(
        episode_id=episode_id or f"{net.name}-{seed}",
        network=net.name,
        seed=seed,
        blue_id=blue_policy.policy_id,
        red_id=red_policy.policy_id,
        outcome=state.outcome,
        target_node=target,
        final_step=state.step,
        hvns=state.placement.hvns,
        entries=state.entries,
        total_blue_reward=total_reward,
        steps=steps,
    )


def _obs_to_json(obs: StateObservation) -> dict:
    adj = obs.active_adjacency
    edges = [[int(i), int(j)] for i, j in zip(*np.nonzero(np.triu(adj)))]
    return {
        "vulnerability": [float(x) for x in obs.vulnerability],
        "compromised": [int(x) for x in obs.compromised_visible],
        "hidden": [int(x) for x in obs.compromised_hidden],
        "isolated": [int(x) for x in obs.isolated],
        "is_entry": [int(x) for x in obs.is_entry],
        "is_hvn": [int(x) for x in obs.is_hvn],
        "edges": edges,
    }


def _obs_from_json(obj: dict) -> StateObservation:
    n = len(obj["vulnerability"])
    adj = np.zeros((n, n), dtype=bool)
    for i, j in obj["edges"]:
        adj[i, j] = adj[j, i] = True
    return StateObservation(
        vulnerability=np.asarray(obj["vulnerability"], dtype=float),
        compromised_visible=np.asarray(obj["compromised"], dtype=bool),
        compromised_hidden=np.asarray(obj["hidden"], dtype=bool),
        isolated=np.asarray(obj["isolated"], dtype=bool),
        is_entry=np.asarray(obj["is_entry"], dtype=bool),
        is_hvn=np.asarray(obj["is_hvn"], dtype=bool),
        active_adjacency=adj,
        zero_day_budget=None,
    )


def _action_to_json(action, hits: tuple[int, ...] | None = None) -> dict | None:
    if action is None:
        return None
    out = {"kind": action.kind, "target": action.target}
    if hits is not None:
        out["hits"] = list(hits)
    return out


def trajectory_to_jsonl(traj: EpisodeTrajectory) -> str:
    header = {
        "schema_version": TRAJECTORY_SCHEMA_VERSION,
        "episode_id": traj.episode_id,
        "network": traj.network,
        "seed": traj.seed,
        "agents": {"blue": traj.blue_id, "red": traj.red_id},
        "outcome": {"winner": traj.outcome, "target": traj.target_node},
        "final_step": traj.final_step,
        "hvns": list(traj.hvns),
        "entries": list(traj.entries),
        "total_blue_reward": traj.total_blue_reward,
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for step in traj.steps:
        rec = {
            "t": step.t,
            "obs": _obs_to_json(step.obs),
            "blue_action": _action_to_json(step.blue_action),
            "red_action": _action_to_json(step.red_action, step.red_hits)
            if step.red_action is not None else None,
        }
        lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def write_trajectory(traj: EpisodeTrajectory, path: str | Path) -> None:
    Path(path).write_text(trajectory_to_jsonl(traj), encoding="utf-8")


def read_trajectory(path: str | Path) -> EpisodeTrajectory:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema_version") != TRAJECTORY_SCHEMA_VERSION:
            raise ValueError(
                f"unsupported trajectory schema {header.get('schema_version')!r}"
            )
        steps = []
        for line in fh:
            rec = json.loads(line)
            blue = rec["blue_action"]
            red = rec["red_action"]
            steps.append(TrajectoryStep(
                t=rec["t"],
                obs=_obs_from_json(rec["obs"]),
                blue_action=BlueAction(blue["kind"], blue["target"]) if blue else None,
                red_action=RedAction(red["kind"], red["target"]) if red else None,
                red_hits=tuple(red["hits"]) if red else (),
            ))
    return EpisodeTrajectory(
        episode_id=header["episode_id"],
        network=header["network"],
        seed=header["seed"],
        blue_id=header["agents"]["blue"],
        red_id=header["agents"]["red"],
        outcome=header["outcome"]["winner"],
        target_node=header["outcome"]["target"],
        final_step=header["final_step"],
        hvns=tuple(header["hvns"]),
        entries=tuple(header["entries"]),
        total_blue_reward=header["total_blue_reward"],
        steps=steps,
    )
