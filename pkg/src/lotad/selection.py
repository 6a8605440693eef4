"""Per-sub-task value estimates and UCB selection over candidate decompositions."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence


@dataclass(frozen=True)
class ValueEstimate:
    """Exponentially weighted moving sum of a sub-task's episode rewards."""

    value: float = 0.0
    episodes_seen: int = 0

    def normalized(self, alpha: float) -> float:
        """The sum divided by its total weight, which keeps it in [0, 1]."""
        n = self.episodes_seen
        if n == 0:
            return 0.0
        if alpha == 1.0:
            return self.value / n
        return self.value * (1.0 - alpha) / (1.0 - alpha**n)


def update_value(v: ValueEstimate, r: float, alpha: float) -> ValueEstimate:
    return ValueEstimate(alpha * v.value + r, v.episodes_seen + 1)


def closed_form_value(rewards: Sequence[float], alpha: float) -> float:
    """sum_h alpha**(H-h) * r_h, evaluated directly."""
    H = len(rewards) - 1
    return math.fsum(alpha ** (H - h) * r for h, r in enumerate(rewards))


@dataclass
class SelectorState:
    n_arms: int
    n_agents: int
    alpha: float = 1.0
    beta: float = 0.5
    values: list[list[ValueEstimate]] = field(default_factory=list)
    visits: list[int] = field(default_factory=list)
    total_episodes: int = 0

    def __post_init__(self):
        if self.n_arms < 1:
            raise ValueError("need at least one decomposition")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if not self.values:
            self.values = [[ValueEstimate() for _ in range(self.n_agents)]
                           for _ in range(self.n_arms)]
        if not self.visits:
            self.visits = [0] * self.n_arms

    def score(self, j: int) -> float:
        if self.visits[j] == 0:
            return 0.0
        vals = self.values[j]
        return math.fsum(v.normalized(self.alpha) for v in vals) / len(vals)

    def bonus(self, j: int) -> float:
        n = self.visits[j]
        if n == 0 or self.total_episodes == 0:
            return math.inf
        return self.beta * math.sqrt(math.log(self.total_episodes) / n)

    def select(self) -> int:
        for j, n in enumerate(self.visits):
            if n == 0:
                return j
        best, best_val = 0, -math.inf
        for j in range(self.n_arms):
            u = self.score(j) + self.bonus(j)
            if u > best_val:
                best, best_val = j, u
        return best

    def record(self, j: int, rewards: Sequence[float]) -> None:
        if len(rewards) != self.n_agents:
            raise ValueError(f"expected {self.n_agents} sub-task rewards, got {len(rewards)}")
        for r in rewards:
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"sub-task reward {r} outside [0, 1]")
        self.values[j] = [update_value(v, r, self.alpha) for v, r in zip(self.values[j], rewards)]
        self.visits[j] += 1
        self.total_episodes += 1

    def best(self) -> int:
        """Highest current score, ignoring exploration."""
        return max(range(self.n_arms), key=lambda j: (self.score(j), -j))

    def trace_row(self, episode: int, selected: int) -> list:
        return ([episode, selected]
                + list(self.visits)
                + [f"{self.score(j):.6f}" for j in range(self.n_arms)]
                + [f"{self.bonus(j):.6f}" for j in range(self.n_arms)])

    def trace_header(self) -> list[str]:
        return (["episode", "selected_id"]
                + [f"n_{j}" for j in range(self.n_arms)]
                + [f"score_{j}" for j in range(self.n_arms)]
                + [f"bonus_{j}" for j in range(self.n_arms)])


def decomposition_score(state: SelectorState, j: int) -> float:
    return state.score(j)


def select(state: SelectorState) -> int:
    return state.select()


def record_episode(state: SelectorState, j: int, rewards: Sequence[float]) -> SelectorState:
    state.record(j, rewards)
    return state


class SelectorTrace:
    """Streams one CSV row per selection: episode, choice, counts, scores, bonuses."""

    def __init__(self, fh, state: SelectorState):
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(state.trace_header())
        self.state = state

    def write(self, episode: int, selected: int) -> None:
        self.writer.writerow(self.state.trace_row(episode, selected))
