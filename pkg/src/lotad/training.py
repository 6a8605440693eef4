"""Synchronized multi-RM rollouts, the task-conditioned tabular learner and
the outer loop that couples decomposition selection to policy learning."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernel
from .decomp import (
    Decomposition,
    GenerationConstraints,
    _valid_decompositions,
    enumerate_candidates,
    monolithic,
)
from .envs import N_ACTIONS, CompiledEnv, GridSpec, compile_env
from .rm import RewardMachine, RmConfiguration
from .rng import SplitMix64
from .selection import SelectorState, SelectorTrace

log = logging.getLogger(__name__)

MODES = ("lotad", "atad_fixed", "monolithic")


# object-level synchronization (reference semantics; the kernels inline the same rule)

@dataclass
class TeamTaskState:
    overall: RmConfiguration
    subs: list[RmConfiguration]
    les: list[frozenset[str]]
    done_overall: bool = False
    done_sub: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.done_sub:
            self.done_sub = [c.in_goal for c in self.subs]
        self.done_overall = self.done_overall or self.overall.in_goal

    @classmethod
    def start(cls, rm: RewardMachine, d: Decomposition) -> "TeamTaskState":
        subs = [RmConfiguration(s.machine) for s in d.executable()]
        return cls(RmConfiguration(rm), subs, list(d.les))


def sync_step(tts: TeamTaskState, events: Iterable[str]) -> tuple[TeamTaskState, list[int], int]:
    """Feed one step's events (canonical order) to the overall and sub-task machines.

    An event owned by several agents moves their machines only if every owner
    has a transition on it from its current state. Events no agent owns only
    drive accident-avoidance transitions.
    """
    rewards = [0] * len(tts.subs)
    overall_r = 0
    for e in sorted(events):
        if e in tts.overall.machine.alphabet:
            overall_r |= tts.overall.advance(e)
        owners = [i for i, s in enumerate(tts.les) if e in s]
        if owners:
            if all(tts.subs[i].machine.defined(tts.subs[i].current, e) for i in owners):
                for i in owners:
                    rewards[i] |= tts.subs[i].advance(e)
        else:
            for i, c in enumerate(tts.subs):
                if e in c.machine.alphabet and c.machine.defined(c.current, e):
                    rewards[i] |= c.advance(e)
    tts.done_overall = tts.done_overall or tts.overall.in_goal
    tts.done_sub = [d or c.in_goal for d, c in zip(tts.done_sub, tts.subs)]
    return tts, rewards, overall_r


# compiled task tables

@dataclass
class CompiledTask:
    n_events: int
    n_overall: int
    otrans: np.ndarray
    ogoal: np.ndarray
    osink: np.ndarray
    oinit: int
    strans: np.ndarray
    sgoal: np.ndarray
    ssink: np.ndarray
    sinit: np.ndarray       # [D, n] global sub-state of each initial state
    in_les: np.ndarray      # [D, n, n_events]
    event_names: tuple[str, ...]
    overall_names: tuple[str, ...]
    sub_names: tuple[tuple[int, int, str], ...]   # global id -> (decomposition, agent, state)

    @property
    def n_sub_states(self) -> int:
        return len(self.sub_names)

    def n_contexts(self, cond_overall: bool) -> int:
        return self.n_sub_states * (self.n_overall if cond_overall else 1)

    def overall_index(self, name: str) -> int:
        return self.overall_names.index(name)

    def sub_index(self, d: int, agent: int, name: str) -> int:
        return self.sub_names.index((d, agent, name))


def compile_task(rm: RewardMachine, candidates: Sequence[Decomposition]) -> CompiledTask:
    events = rm.sorted_alphabet()
    eidx = {e: i for i, e in enumerate(events)}
    n_e = len(events)
    onames = rm.sorted_states()
    oidx = {u: i for i, u in enumerate(onames)}
    otrans = np.full((len(onames), n_e), -1, dtype=np.int64)
    for (u, e), v in rm.transitions.items():
        otrans[oidx[u], eidx[e]] = oidx[v]
    ogoal = np.array([u in rm.goals for u in onames], dtype=np.int64)
    osink = np.array([u in rm.sinks for u in onames], dtype=np.int64)

    n = candidates[0].n_agents
    sub_names: list[tuple[int, int, str]] = []
    rows, goal, sink = [], [], []
    sinit = np.zeros((len(candidates), n), dtype=np.int64)
    in_les = np.zeros((len(candidates), n, n_e), dtype=np.int64)
    for j, d in enumerate(candidates):
        if d.n_agents != n:
            raise ValueError("all candidates must have the same number of agents")
        for i, sub in enumerate(d.executable()):
            m = sub.machine
            base = len(sub_names)
            local = {u: base + k for k, u in enumerate(m.sorted_states())}
            sub_names.extend((j, i, u) for u in m.sorted_states())
            for u in m.sorted_states():
                row = np.full(n_e, -1, dtype=np.int64)
                for e, v in m.successors(u).items():
                    row[eidx[e]] = local[v]
                rows.append(row)
                goal.append(u in m.goals)
                sink.append(u in m.sinks)
            sinit[j, i] = local[m.initial]
            for e in d.les[i]:
                in_les[j, i, eidx[e]] = 1
    return CompiledTask(
        n_events=n_e, n_overall=len(onames), otrans=otrans, ogoal=ogoal, osink=osink,
        oinit=oidx[rm.initial], strans=np.array(rows, dtype=np.int64).reshape(-1, n_e),
        sgoal=np.array(goal, dtype=np.int64), ssink=np.array(sink, dtype=np.int64),
        sinit=sinit, in_les=in_les, event_names=tuple(events),
        overall_names=tuple(onames), sub_names=tuple(sub_names),
    )


# policy

@dataclass
class TaskConditionedPolicy:
    """One action-value table shared by all agents.

    Rows are keyed by (own cell, decomposition, sub-task state, overall state);
    a sub-task state is qualified by its decomposition and agent slot, and the
    overall state is dropped from the key when ``cond_overall`` is off.
    """

    task: CompiledTask
    n_cells: int
    cond_overall: bool = True
    epsilon: float = 0.1
    learning_rate: float = 0.1
    gamma: float = 0.95
    q: np.ndarray | None = None

    def __post_init__(self):
        if self.q is None:
            self.q = np.zeros((self.task.n_contexts(self.cond_overall), self.n_cells, N_ACTIONS))

    def context(self, sub_global: int, overall: int) -> int:
        return sub_global * self.task.n_overall + overall if self.cond_overall else sub_global

    def key(self, cell: int, d: int, agent: int, sub_state: str, overall_state: str) -> tuple[int, int]:
        g = self.task.sub_index(d, agent, sub_state)
        return self.context(g, self.task.overall_index(overall_state)), cell

    def row(self, key: tuple[int, int]) -> np.ndarray:
        return self.q[key[0], key[1]]


def act(policy: TaskConditionedPolicy, key: tuple[int, int], rng: SplitMix64) -> int:
    """Epsilon-greedy with uniform tie-breaking (same draws as the kernels)."""
    if rng.random() < policy.epsilon:
        return rng.randbelow(N_ACTIONS)
    row = policy.row(key)
    best = row.max()
    ties = [a for a in range(N_ACTIONS) if row[a] == best]
    k = rng.randbelow(len(ties)) if len(ties) > 1 else 0
    return ties[k]


def q_update(policy: TaskConditionedPolicy, key: tuple[int, int], action: int, reward: float,
             next_key: tuple[int, int], terminal: bool) -> None:
    q = policy.q
    target = reward if terminal else reward + policy.gamma * q[next_key[0], next_key[1]].max()
    old = q[key[0], key[1], action]
    new = old + policy.learning_rate * (target - old)
    if not math.isfinite(new):
        raise FloatingPointError("non-finite action value")
    q[key[0], key[1], action] = new


# episodes

@dataclass(frozen=True)
class RewardShaping:
    sub_goal_reward: float = 1.0
    overall_bonus: float = 0.1
    gamma: float = 0.95
    bonus_to_sink: bool = True
    # A sub-task with an empty event set starts in its goal and never enters it.
    # Under goal-entry scoring it earns nothing; with this flag it earns gamma**0.
    credit_empty_subtasks: bool = False

    def subtask_reward(self, t: int) -> float:
        if t > 0:
            return self.gamma ** t
        if t == 0 and self.credit_empty_subtasks:
            return 1.0
        return 0.0

    def __post_init__(self):
        if self.overall_bonus < 0:
            raise ValueError("overall bonus must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


@dataclass(frozen=True)
class EpisodeResult:
    sub_rewards: tuple[float, ...]       # gamma ** t_i at sub-goal entry, else 0
    sub_completed: tuple[int, ...]       # undiscounted indicator, same crediting rule
    sub_steps: tuple[int, ...]           # -1 when never completed, 0 when it started complete
    sub_sink: tuple[int, ...]
    overall_completed: bool
    completion_step: int                 # -1 when not completed
    steps: int

    def overall_reward(self, gamma: float) -> float:
        return gamma ** self.completion_step if self.overall_completed else 0.0


class Episodes:
    """Compiled env + task + policy, ready to run episodes on any backend."""

    def __init__(self, spec: GridSpec, rm: RewardMachine, candidates: Sequence[Decomposition],
                 policy_kwargs: dict | None = None, backend: str | None = None):
        self.spec = spec
        self.rm = rm
        self.candidates = list(candidates)
        self.task = compile_task(rm, self.candidates)
        self.env: CompiledEnv = compile_env(spec, rm.alphabet)
        self.policy = TaskConditionedPolicy(self.task, self.env.n_cells, **(policy_kwargs or {}))
        self.backend = kernel.get_backend(backend)
        self.runner = self.backend.Runner(self.env, self.task)

    def run(self, d: int, shaping: RewardShaping, max_steps: int, rng: SplitMix64,
            learn: bool = True, epsilon: float | None = None, shuffle_events: bool = False,
            trace: list | None = None) -> EpisodeResult:
        p = self.policy
        steps, ostep, sub_steps, sub_sink, _, _, rng.state = self.runner.run_episode(
            d, p.q, p.epsilon if epsilon is None else epsilon, p.learning_rate,
            shaping.gamma, shaping.overall_bonus, max_steps, p.cond_overall, learn,
            shuffle_events, shaping.bonus_to_sink, rng.state, trace)
        sub_steps = tuple(int(t) for t in sub_steps)
        return EpisodeResult(
            sub_rewards=tuple(shaping.subtask_reward(t) for t in sub_steps),
            sub_completed=tuple(int(shaping.subtask_reward(t) > 0) for t in sub_steps),
            sub_steps=sub_steps,
            sub_sink=tuple(int(x) for x in sub_sink),
            overall_completed=ostep >= 0,
            completion_step=int(ostep),
            steps=int(steps),
        )


def run_episode(episodes: Episodes, d: int, shaping: RewardShaping, max_steps: int,
                rng: SplitMix64, learn: bool = True) -> EpisodeResult:
    return episodes.run(d, shaping, max_steps, rng, learn=learn)


# training loop

@dataclass
class TrainConfig:
    spec: GridSpec
    rm: RewardMachine
    constraints: GenerationConstraints
    mode: str = "lotad"
    episodes: int = 1000
    max_steps: int | None = None
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float | None = None
    overall_bonus: float = 0.1
    condition_on_overall: bool = True
    epsilon: float = 0.1
    learning_rate: float = 0.1
    selector_reward: str = "discounted"   # or "indicator"
    bonus_to_sink: bool = True
    credit_empty_subtasks: bool = False
    shuffle_events: bool = False
    seed: int = 0
    backend: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.selector_reward not in ("discounted", "indicator"):
            raise ValueError("selector_reward must be 'discounted' or 'indicator'")
        if self.max_steps is None:
            self.max_steps = self.spec.max_steps
        if self.gamma is None:
            self.gamma = self.spec.gamma


def build_candidates(cfg: TrainConfig, rng: SplitMix64 | None = None) -> list[Decomposition]:
    n = cfg.spec.n_agents
    if cfg.mode == "monolithic":
        return [monolithic(cfg.rm, n)]
    if cfg.mode == "lotad":
        return enumerate_candidates(cfg.rm, n, cfg.constraints)
    # atad_fixed: one top-scoring decomposition, ties broken by the seed
    ranked = _valid_decompositions(cfg.rm, cfg.constraints)
    if not ranked:
        from .decomp import NoValidDecomposition
        raise NoValidDecomposition("no valid decomposition")
    tied = [d for d in ranked if d.score == ranked[0].score]
    pick = tied[(rng or SplitMix64(cfg.seed)).randbelow(len(tied))]
    pick.id = 0
    return [pick]


@dataclass
class EpisodeRow:
    episode: int
    selected: int
    sub_rewards: tuple[float, ...]
    overall_completed: bool
    completion_step: int
    overall_reward: float
    best_so_far: float
    visits: tuple[int, ...]
    scores: tuple[float, ...]


@dataclass
class TrainingLog:
    candidates: list[Decomposition]
    rows: list[EpisodeRow]
    selector: SelectorState
    policy: TaskConditionedPolicy
    wall_ms: list[float]
    backend: str = ""

    @property
    def best_decomposition(self) -> Decomposition:
        return self.candidates[self.selector.best()]

    def completion(self) -> np.ndarray:
        return np.array([r.overall_completed for r in self.rows], dtype=float)

    def best_curve(self) -> np.ndarray:
        return np.array([r.best_so_far for r in self.rows], dtype=float)

    def completion_rate(self, last: int = 1000) -> float:
        c = self.completion()
        return float(c[-last:].mean()) if len(c) else 0.0

    def episodes_to_rate(self, rate: float = 0.9, window: int = 100) -> int | None:
        """First episode at which the trailing completion rate reaches ``rate``."""
        c = self.completion()
        if len(c) < window:
            return None
        roll = np.convolve(c, np.ones(window) / window, mode="valid")
        hit = np.nonzero(roll >= rate - 1e-12)[0]
        return int(hit[0] + window) if len(hit) else None

    def csv_text(self) -> str:
        n = len(self.rows[0].sub_rewards) if self.rows else len(self.candidates[0].les)
        k = len(self.candidates)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "selected_decomposition"]
                   + [f"sub_reward_{i + 1}" for i in range(n)]
                   + ["overall_completed", "completion_step", "overall_reward", "best_so_far"]
                   + [f"visits_{j}" for j in range(k)] + [f"score_{j}" for j in range(k)])
        for r in self.rows:
            w.writerow([r.episode, r.selected] + [f"{x:.6f}" for x in r.sub_rewards]
                       + [int(r.overall_completed), r.completion_step,
                          f"{r.overall_reward:.6f}", f"{r.best_so_far:.6f}"]
                       + list(r.visits) + [f"{s:.6f}" for s in r.scores])
        return buf.getvalue()


def train(cfg: TrainConfig, candidates: Sequence[Decomposition] | None = None,
          progress_every: int = 0, selector_trace=None) -> TrainingLog:
    """Run ``cfg.episodes`` episodes; ``selector_trace`` is an optional text handle
    receiving one CSV row per selection (state as seen when choosing)."""
    rng = SplitMix64(cfg.seed)
    if candidates is None:
        candidates = build_candidates(cfg, rng.spawn())
    else:
        rng.spawn()
    shaping = RewardShaping(1.0, cfg.overall_bonus, cfg.gamma, cfg.bonus_to_sink,
                            cfg.credit_empty_subtasks)
    eps = Episodes(cfg.spec, cfg.rm, candidates,
                   dict(cond_overall=cfg.condition_on_overall, epsilon=cfg.epsilon,
                        learning_rate=cfg.learning_rate, gamma=cfg.gamma),
                   backend=cfg.backend)
    n = cfg.spec.n_agents
    sel = SelectorState(len(candidates), n, cfg.alpha, cfg.beta)
    tracer = SelectorTrace(selector_trace, sel) if selector_trace is not None else None
    ep_rng = rng.spawn()
    rows: list[EpisodeRow] = []
    wall: list[float] = []
    best = 0.0
    for ep in range(cfg.episodes):
        t0 = time.perf_counter()
        j = sel.select()
        if tracer is not None:
            tracer.write(ep, j)
        res = eps.run(j, shaping, cfg.max_steps, ep_rng, shuffle_events=cfg.shuffle_events)
        if all(t >= 0 for t in res.sub_steps) and not res.overall_completed:
            raise AssertionError(
                f"episode {ep}: every sub-task completed but the overall task did not "
                f"(decomposition {candidates[j].key()})"
            )
        if cfg.selector_reward == "discounted":
            fed = list(res.sub_rewards)
        else:
            fed = [float(x) for x in res.sub_completed]
        sel.record(j, fed)
        ro = res.overall_reward(cfg.gamma)
        best = max(best, ro)
        rows.append(EpisodeRow(ep, j, res.sub_rewards, res.overall_completed,
                               res.completion_step, ro, best, tuple(sel.visits),
                               tuple(sel.score(x) for x in range(sel.n_arms))))
        wall.append((time.perf_counter() - t0) * 1000.0)
        if progress_every and (ep + 1) % progress_every == 0:
            c = [r.overall_completed for r in rows[-progress_every:]]
            log.info("episode %d: completion %.3f, visits %s", ep + 1,
                     sum(c) / len(c), sel.visits)
    return TrainingLog(list(candidates), rows, sel, eps.policy, wall,
                       backend="python" if eps.backend is kernel.python_backend else "compiled")


def save_policy(path, log_: TrainingLog) -> None:
    """Action-value table plus what is needed to rebuild the candidate set."""
    keys = np.array(["|".join(" ".join(s) for s in d.key()) for d in log_.candidates])
    np.savez(path, q=log_.policy.q, cond_overall=log_.policy.cond_overall, candidates=keys,
             best=log_.selector.best())


def load_policy(path) -> tuple[np.ndarray, bool, list[list[frozenset[str]]], int]:
    with np.load(path, allow_pickle=False) as z:
        q = z["q"].copy()
        cond = bool(z["cond_overall"])
        cands = [[frozenset(part.split()) for part in str(k).split("|")] for k in z["candidates"]]
        best = int(z["best"])
    return q, cond, cands, best
