"""Decomposition of a reward machine into per-agent sub-task machines.

Covers projection onto local event sets, accident-avoidance augmentation,
synchronized parallel composition, bisimilarity, validity and top-k
candidate generation.
"""
from __future__ import annotations

import itertools
import logging
import statistics
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .rm import RewardMachine, RMParseError, parse_rm, serialize_rm

log = logging.getLogger(__name__)

DEFAULT_ASSIGNMENT_CAP = 10**6


class ProjectionError(ValueError):
    """The local event set cannot produce an executable sub-task machine."""


class NoValidDecomposition(RuntimeError):
    pass


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class LocalEventSet:
    agent: int
    events: frozenset[str]


@dataclass(frozen=True)
class SubTaskRm:
    machine: RewardMachine
    origin_classes: dict[str, frozenset[str]]
    parent_alphabet: frozenset[str] = frozenset()


@dataclass
class Decomposition:
    id: int
    les: tuple[frozenset[str], ...]
    subtasks: list[SubTaskRm]
    score: float = 0.0

    @property
    def n_agents(self) -> int:
        return len(self.les)

    def key(self) -> tuple[tuple[str, ...], ...]:
        """Canonical encoding used for tie-breaking."""
        return tuple(tuple(sorted(s)) for s in self.les)

    def executable(self) -> list[SubTaskRm]:
        """Sub-task machines with accident-avoidance sinks, as agents run them."""
        les = [LocalEventSet(i, s) for i, s in enumerate(self.les)]
        return [make_accident_avoidance(sub, les) for sub in self.subtasks]


@dataclass
class GenerationConstraints:
    n_agents: int
    forbidden: list[frozenset[str]] = field(default_factory=list)
    required: list[frozenset[str]] = field(default_factory=list)
    k: int = 10
    w_size: float = 2.0
    w_balance: float = 0.5

    def __post_init__(self):
        if not self.forbidden:
            self.forbidden = [frozenset()] * self.n_agents
        if not self.required:
            self.required = [frozenset()] * self.n_agents
        self.forbidden = [frozenset(s) for s in self.forbidden]
        self.required = [frozenset(s) for s in self.required]
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.k < 1:
            problems.append(f"k must be >= 1 (got {self.k})")
        if len(self.forbidden) != self.n_agents or len(self.required) != self.n_agents:
            problems.append("forbidden/required must list one set per agent")
        for i, (f, r) in enumerate(zip(self.forbidden, self.required)):
            if f & r:
                problems.append(
                    f"agent {i + 1}: events {sorted(f & r)} are both required and forbidden"
                )
        if problems:
            raise ConstraintError("; ".join(problems))


# projection

class _UnionFind:
    def __init__(self, items: Iterable[str]):
        self.parent = {x: x for x in items}

    def find(self, x: str) -> str:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the lexicographically smaller root so classes are stable
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def _class_order(rm: RewardMachine, members: dict[str, set[str]]) -> list[str]:
    """Order class roots by BFS from the initial state's class, then by name."""
    root_of = {u: r for r, ms in members.items() for u in ms}
    adj: dict[str, list[str]] = {}
    for (u, e), v in sorted(rm.transitions.items()):
        adj.setdefault(root_of[u], []).append(root_of[v])
    order = [root_of[rm.initial]]
    seen = set(order)
    queue = deque(order)
    while queue:
        r = queue.popleft()
        for s in adj.get(r, ()):
            if s not in seen:
                seen.add(s)
                order.append(s)
                queue.append(s)
    order.extend(sorted(set(members) - seen))
    return order


def project(rm: RewardMachine, les: LocalEventSet | Iterable[str]) -> SubTaskRm:
    """Quotient ``rm`` by the transitions whose events lie outside the local event set."""
    events = frozenset(les.events if isinstance(les, LocalEventSet) else les)
    if not events <= rm.alphabet:
        raise ProjectionError(f"events {sorted(events - rm.alphabet)} not in the machine alphabet")

    uf = _UnionFind(rm.states)
    for (u, e), v in rm.transitions.items():
        if e not in events:
            uf.union(u, v)
    members: dict[str, set[str]] = {}
    for u in rm.states:
        members.setdefault(uf.find(u), set()).add(u)

    order = _class_order(rm, members)
    name = {r: f"q{i}" for i, r in enumerate(order)}
    cls = {u: name[uf.find(u)] for u in rm.states}

    trans: dict[tuple[str, str], str] = {}
    for (u, e), v in sorted(rm.transitions.items()):
        if e not in events or u == v:
            continue
        key = (cls[u], e)
        if key in trans and trans[key] != cls[v]:
            raise ProjectionError(
                f"LES induces nondeterministic projection: class {cls[u]} on {e} "
                f"reaches both {trans[key]} and {cls[v]}"
            )
        trans[key] = cls[v]

    origin = {name[r]: frozenset(ms) for r, ms in members.items()}
    goals = {c for c, ms in origin.items() if ms & rm.goals}
    sinks = {c for c, ms in origin.items() if ms <= rm.sinks}
    for (c, e), d in trans.items():
        if c in goals:
            raise ProjectionError(
                f"LES induces a goal class with an outgoing transition: {c} --{e}--> {d}"
            )
    machine = RewardMachine(set(origin), cls[rm.initial], events, trans, goals, sinks)
    return SubTaskRm(machine, origin, rm.alphabet)


def make_accident_avoidance(sub: SubTaskRm, all_les: Sequence[LocalEventSet]) -> SubTaskRm:
    """Send events that no agent owns into a fresh sink (which carries no reward)."""
    covered = set().union(*(l.events for l in all_les)) if all_les else set()
    uncovered = sorted(set(sub.parent_alphabet) - covered)
    if not uncovered:
        return sub
    m = sub.machine
    sink = "sink"
    while sink in m.states:
        sink += "_"
    trans = dict(m.transitions)
    for u in m.states:
        if u in m.goals or u in m.sinks:
            continue
        for e in uncovered:
            trans.setdefault((u, e), sink)
    machine = RewardMachine(
        m.states | {sink}, m.initial, m.alphabet | set(uncovered), trans, m.goals, m.sinks | {sink}
    )
    origin = dict(sub.origin_classes)
    origin[sink] = frozenset()
    return SubTaskRm(machine, origin, sub.parent_alphabet)


# composition and equivalence

def parallel_compose(subs: Sequence[SubTaskRm | RewardMachine]) -> RewardMachine:
    """Synchronized product over the reachable state tuples.

    An event moves every machine that has it in its alphabet, provided each of
    them has a drawn transition on it; otherwise nothing moves.
    """
    machines = [s.machine if isinstance(s, SubTaskRm) else s for s in subs]
    if not machines:
        raise ValueError("parallel_compose needs at least one machine")
    alphabet = sorted(set().union(*(m.alphabet for m in machines)))
    sharers = {e: [i for i, m in enumerate(machines) if e in m.alphabet] for e in alphabet}

    start = tuple(m.initial for m in machines)
    names = {start: "p0"}
    queue = deque([start])
    trans: dict[tuple[str, str], str] = {}
    while queue:
        tup = queue.popleft()
        for e in alphabet:
            idx = sharers[e]
            if not all(machines[i].defined(tup[i], e) for i in idx):
                continue
            nxt = list(tup)
            for i in idx:
                nxt[i] = machines[i].transitions[(tup[i], e)]
            nxt = tuple(nxt)
            if nxt not in names:
                names[nxt] = f"p{len(names)}"
                queue.append(nxt)
            trans[(names[tup], e)] = names[nxt]
    goals = {
        n for tup, n in names.items() if all(u in m.goals for u, m in zip(tup, machines))
    }
    return RewardMachine(set(names.values()), "p0", set(alphabet), trans, goals)


def bisimilar(a: RewardMachine, b: RewardMachine) -> bool:
    """Bisimilarity of the self-loop-completed, goal-labelled systems.

    Both systems are deterministic and complete after completion, so a
    synchronized search over reachable state pairs suffices.
    """
    alphabet = sorted(a.alphabet | b.alphabet)
    start = (a.initial, b.initial)
    seen = {start}
    queue = deque([start])
    while queue:
        u, v = queue.popleft()
        if (u in a.goals) != (v in b.goals):
            return False
        for e in alphabet:
            nxt = (a.transitions.get((u, e), u), b.transitions.get((v, e), v))
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return True


def decompose(rm: RewardMachine, les: Sequence[Iterable[str]], id: int = 0) -> Decomposition:
    """Project ``rm`` onto each agent's events. Raises ProjectionError."""
    sets = tuple(frozenset(s) for s in les)
    subs = [project(rm, LocalEventSet(i, s)) for i, s in enumerate(sets)]
    return Decomposition(id, sets, subs)


def is_valid(rm: RewardMachine, d: Decomposition) -> bool:
    return bisimilar(parallel_compose(d.subtasks), rm)


def score_decomposition(d: Decomposition | Sequence[Iterable[str]],
                        w_size: float = 2.0, w_balance: float = 0.5) -> float:
    les = d.les if isinstance(d, Decomposition) else d
    sizes = [len(frozenset(s)) for s in les]
    return w_size * -statistics.fmean(sizes) + w_balance * -statistics.pstdev(sizes)


# candidate generation

def _event_options(event: str, c: GenerationConstraints) -> list[tuple[int, ...]]:
    must = {i for i in range(c.n_agents) if event in c.required[i]}
    banned = {i for i in range(c.n_agents) if event in c.forbidden[i]}
    allowed = [i for i in range(c.n_agents) if i not in banned]
    opts = []
    for r in range(1, len(allowed) + 1):
        for combo in itertools.combinations(allowed, r):
            if must <= set(combo):
                opts.append(combo)
    return opts


def _valid_decompositions(rm: RewardMachine, c: GenerationConstraints,
                          cap: int = DEFAULT_ASSIGNMENT_CAP) -> list[Decomposition]:
    unknown = set().union(*c.forbidden, *c.required) - rm.alphabet
    if unknown:
        log.info("constraint events outside the machine alphabet are ignored: %s", sorted(unknown))
    events = rm.sorted_alphabet()
    options = [_event_options(e, c) for e in events]
    total = 1
    for o in options:
        total *= len(o)
    if total == 0:
        raise NoValidDecomposition("no valid decomposition: an event has no admissible agent")
    if total > cap:
        raise NoValidDecomposition(
            f"assignment space of {total} exceeds the cap of {cap}; tighten the constraints"
        )

    proj_cache: dict[frozenset[str], SubTaskRm | None] = {}

    def sub_for(s: frozenset[str]) -> SubTaskRm | None:
        if s not in proj_cache:
            try:
                proj_cache[s] = project(rm, s)
            except ProjectionError:
                proj_cache[s] = None
        return proj_cache[s]

    found = []
    for choice in itertools.product(*options):
        les = [set() for _ in range(c.n_agents)]
        for e, agents in zip(events, choice):
            for i in agents:
                les[i].add(e)
        sets = tuple(frozenset(s) for s in les)
        subs = [sub_for(s) for s in sets]
        if any(s is None for s in subs):
            continue
        d = Decomposition(-1, sets, subs)
        if is_valid(rm, d):
            d.score = score_decomposition(d, c.w_size, c.w_balance)
            found.append(d)
    found.sort(key=lambda d: (-d.score, d.key()))
    return found


def enumerate_candidates(rm: RewardMachine, n: int | None = None,
                         constraints: GenerationConstraints | None = None,
                         cap: int = DEFAULT_ASSIGNMENT_CAP) -> list[Decomposition]:
    """The top-k valid decompositions ordered by score (ties by LES encoding)."""
    if constraints is None:
        constraints = GenerationConstraints(n_agents=n or 1)
    if n is not None and n != constraints.n_agents:
        raise ConstraintError(f"n={n} disagrees with constraints for {constraints.n_agents} agents")
    found = _valid_decompositions(rm, constraints, cap)
    if not found:
        raise NoValidDecomposition("no valid decomposition")
    top = found[: constraints.k]
    if len(top) < constraints.k:
        log.warning("only %d valid decompositions exist (k=%d)", len(top), constraints.k)
    for j, d in enumerate(top):
        d.id = j
    return top


def monolithic(rm: RewardMachine, n: int) -> Decomposition:
    """Every agent is given the whole task."""
    d = decompose(rm, [rm.alphabet] * n)
    d.score = score_decomposition(d)
    return d


# file formats

def parse_constraints(text: str, n_agents: int, **kwargs) -> GenerationConstraints:
    """Lines ``forbidden <agent>: e ...`` / ``required <agent>: e ...``; agent ``*`` means all.

    Agents are numbered from 1.
    """
    forbidden = [set() for _ in range(n_agents)]
    required = [set() for _ in range(n_agents)]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, rest = line.partition(":")
        parts = head.split()
        if not sep or len(parts) != 2 or parts[0] not in ("forbidden", "required"):
            raise ConstraintError(f"line {lineno}: expected 'forbidden|required <agent>: events'")
        kind, who = parts
        if who == "*":
            agents = range(n_agents)
        else:
            try:
                a = int(who) - 1
            except ValueError:
                raise ConstraintError(f"line {lineno}: bad agent {who!r}") from None
            if not 0 <= a < n_agents:
                raise ConstraintError(f"line {lineno}: agent {who} out of range 1..{n_agents}")
            agents = [a]
        target = forbidden if kind == "forbidden" else required
        for a in agents:
            target[a].update(rest.split())
    return GenerationConstraints(n_agents, forbidden, required, **kwargs)


def serialize_candidates(cands: Sequence[Decomposition]) -> str:
    out = []
    for d in cands:
        out.append(f"candidate: {d.id}")
        out.append(f"score: {d.score!r}")
        for i, s in enumerate(d.les):
            out.append(f"les {i + 1}: " + " ".join(sorted(s)))
        for i, sub in enumerate(d.subtasks):
            out.append(f"rm {i + 1}:")
            out.extend("  " + ln for ln in serialize_rm(sub.machine).splitlines())
        out.append("end")
        out.append("")
    return "\n".join(out)


def parse_candidates(text: str) -> list[tuple[int, float, list[frozenset[str]], list[RewardMachine]]]:
    """Inverse of serialize_candidates: (id, score, les, sub-machines) per block."""
    blocks = []
    cur = None
    rm_lines: list[str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if rm_lines is not None and raw.startswith("  "):
            rm_lines.append(raw.strip())
            continue
        if rm_lines is not None:
            cur["rms"].append(parse_rm("\n".join(rm_lines)))
            rm_lines = None
        line = raw.strip()
        if not line:
            continue
        key, _, rest = line.partition(":")
        if key == "candidate":
            cur = {"id": int(rest), "score": 0.0, "les": [], "rms": []}
        elif cur is None:
            raise RMParseError("content before the first 'candidate:' line", lineno)
        elif key == "score":
            cur["score"] = float(rest)
        elif key.startswith("les "):
            cur["les"].append(frozenset(rest.split()))
        elif key.startswith("rm "):
            rm_lines = []
        elif key == "end":
            blocks.append((cur["id"], cur["score"], cur["les"], cur["rms"]))
            cur = None
        else:
            raise RMParseError(f"unexpected line {raw!r}", lineno)
    if rm_lines is not None and cur is not None:
        cur["rms"].append(parse_rm("\n".join(rm_lines)))
    return blocks
