"""Task-completion reward machines: representation, run semantics and text format.

A reward machine here is a deterministic, partial transition system over named
events. Transitions that are not drawn are implicit self-loops, and the only
output is the goal-entry indicator.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

_TOKEN = re.compile(r"^[A-Za-z0-9_*\-]+$")
_EVENT = re.compile(r"^[A-Za-z0-9_]+$")


class RMError(ValueError):
    """Raised for malformed machines or unknown states/events."""


class RMParseError(RMError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class RewardMachine:
    states: frozenset[str]
    initial: str
    alphabet: frozenset[str]
    transitions: Mapping[tuple[str, str], str]
    goals: frozenset[str]
    sinks: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "states", frozenset(self.states))
        object.__setattr__(self, "alphabet", frozenset(self.alphabet))
        object.__setattr__(self, "goals", frozenset(self.goals))
        object.__setattr__(self, "sinks", frozenset(self.sinks))
        object.__setattr__(self, "transitions", dict(self.transitions))
        self._validate()

    def _validate(self) -> None:
        if self.initial not in self.states:
            raise RMError(f"initial state {self.initial!r} not in states")
        if not self.goals <= self.states:
            raise RMError(f"goals {sorted(self.goals - self.states)} not in states")
        if not self.sinks <= self.states:
            raise RMError(f"sinks {sorted(self.sinks - self.states)} not in states")
        if self.goals & self.sinks:
            raise RMError(f"states {sorted(self.goals & self.sinks)} are both goal and sink")
        for e in self.alphabet:
            if not _EVENT.match(e):
                raise RMError(f"bad event name {e!r}")
        for (u, e), v in self.transitions.items():
            if u not in self.states or v not in self.states:
                raise RMError(f"unknown symbol: transition {u} --{e}--> {v} leaves the state set")
            if e not in self.alphabet:
                raise RMError(f"unknown symbol: transition event {e!r} not in alphabet")
            if u in self.goals:
                raise RMError(f"goal has outgoing transition: {u} --{e}--> {v}")

    # run semantics

    def step(self, u: str, e: str) -> str:
        if u not in self.states:
            raise RMError(f"unknown symbol: state {u!r}")
        if e not in self.alphabet:
            raise RMError(f"unknown symbol: event {e!r}")
        return self.transitions.get((u, e), u)

    def defined(self, u: str, e: str) -> bool:
        """True when (u, e) has a drawn transition (not an implicit self-loop)."""
        return (u, e) in self.transitions

    def score(self, u: str, u_next: str) -> int:
        if u not in self.states or u_next not in self.states:
            raise RMError(f"unknown symbol: state {u!r} or {u_next!r}")
        return int(u not in self.goals and u_next in self.goals)

    def step_event_set(self, u: str, events: Iterable[str]) -> str:
        for e in sorted(events):
            u = self.step(u, e)
        return u

    def run(self, trace: Iterable[Iterable[str]], start: str | None = None) -> str:
        u = self.initial if start is None else start
        for es in trace:
            u = self.step_event_set(u, es)
        return u

    def accepts(self, trace: Iterable[Iterable[str]]) -> bool:
        return self.run(trace) in self.goals

    # structure helpers

    def successors(self, u: str) -> dict[str, str]:
        return {e: v for (s, e), v in self.transitions.items() if s == u}

    def reachable(self) -> set[str]:
        seen = {self.initial}
        frontier = [self.initial]
        out: dict[str, list[str]] = {}
        for (u, _), v in self.transitions.items():
            out.setdefault(u, []).append(v)
        while frontier:
            u = frontier.pop()
            for v in out.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    frontier.append(v)
        return seen

    def sorted_states(self) -> list[str]:
        """States in a stable order: initial first, then by name."""
        return [self.initial] + sorted(self.states - {self.initial})

    def sorted_alphabet(self) -> list[str]:
        return sorted(self.alphabet)


@dataclass
class RmConfiguration:
    """A machine together with its current state."""

    machine: RewardMachine
    current: str = ""

    def __post_init__(self):
        if not self.current:
            self.current = self.machine.initial
        if self.current not in self.machine.states:
            raise RMError(f"unknown symbol: state {self.current!r}")

    @property
    def in_goal(self) -> bool:
        return self.current in self.machine.goals

    @property
    def in_sink(self) -> bool:
        return self.current in self.machine.sinks

    def advance(self, e: str) -> int:
        prev = self.current
        self.current = self.machine.step(prev, e)
        return self.machine.score(prev, self.current)


def step(rm: RewardMachine, u: str, e: str) -> str:
    return rm.step(u, e)


def score(rm: RewardMachine, u: str, u_next: str) -> int:
    return rm.score(u, u_next)


def step_event_set(rm: RewardMachine, u: str, es: Iterable[str]) -> str:
    return rm.step_event_set(u, es)


def accepts(rm: RewardMachine, trace: Sequence[Iterable[str]]) -> bool:
    return rm.accepts(trace)


# text format

def serialize_rm(rm: RewardMachine) -> str:
    lines = [
        "states: " + " ".join(rm.sorted_states()),
        f"initial: {rm.initial}",
        "goals: " + " ".join(sorted(rm.goals)),
    ]
    if rm.sinks:
        lines.append("sinks: " + " ".join(sorted(rm.sinks)))
    lines.append("alphabet: " + " ".join(rm.sorted_alphabet()))
    for (u, e), v in sorted(rm.transitions.items()):
        lines.append(f"trans: {u} {e} {v}")
    return "\n".join(lines) + "\n"


def parse_rm(text: str) -> RewardMachine:
    """Parse the line-based RM format.

    Sections may appear in any order; ``#`` starts a comment. Errors carry the
    offending line number.
    """
    states: list[str] | None = None
    initial: str | None = None
    goals: list[str] = []
    sinks: list[str] = []
    alphabet: list[str] | None = None
    trans: list[tuple[int, str, str, str]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise RMParseError(f"malformed line {raw!r}", lineno)
        key, _, rest = line.partition(":")
        key = key.strip().lower()
        toks = rest.split()
        for t in toks:
            if not _TOKEN.match(t):
                raise RMParseError(f"bad token {t!r}", lineno)
        if key == "states":
            states = toks
        elif key == "initial":
            if len(toks) != 1:
                raise RMParseError("initial takes exactly one state", lineno)
            initial = toks[0]
        elif key == "goals":
            goals = toks
        elif key == "sinks":
            sinks = toks
        elif key == "alphabet":
            alphabet = toks
        elif key == "trans":
            if len(toks) != 3:
                raise RMParseError("trans takes '<from> <event> <to>'", lineno)
            trans.append((lineno, *toks))
        else:
            raise RMParseError(f"unknown section {key!r}", lineno)

    if states is None or initial is None or alphabet is None:
        raise RMParseError("missing one of the required sections: states, initial, alphabet")
    state_set = set(states)
    alpha_set = set(alphabet)
    goal_set = set(goals)
    table: dict[tuple[str, str], str] = {}
    for lineno, u, e, v in trans:
        if u not in state_set or v not in state_set:
            raise RMParseError(f"unknown symbol: state in transition {u} {e} {v}", lineno)
        if e not in alpha_set:
            raise RMParseError(f"unknown symbol: event {e!r}", lineno)
        if u in goal_set:
            raise RMParseError(f"goal has outgoing transition: {u} --{e}--> {v}", lineno)
        if (u, e) in table and table[(u, e)] != v:
            raise RMParseError(f"nondeterministic transition on ({u}, {e})", lineno)
        table[(u, e)] = v
    try:
        return RewardMachine(state_set, initial, alpha_set, table, goal_set, set(sinks))
    except RMError as exc:
        raise RMParseError(str(exc)) from exc


def load_rm(path) -> RewardMachine:
    with open(path, encoding="utf-8") as fh:
        return parse_rm(fh.read())
