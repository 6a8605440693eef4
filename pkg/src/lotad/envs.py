"""Grid Markov games with a labelling function.

Layouts, labelling rules and dynamics parameters come from map files, so the
three shipped games (Repairs, Four-Buttons, Cooperative Buttons) differ only in
data. Map file layout::

    name: four_buttons
    slip_prob: 0.05
    hazard_capacity: 1
    max_steps: 100
    gamma: 0.97
    glyph: Y button:yellow            # letter -> feature (add 'hazard' to mark the cell)
    glyph: R button:red presses=2     # button needing two simultaneous occupants
    event: Y_B at-any button:yellow   # also: at <agent>, not-at <agent>, count <m>, pressed <color>
    grid:
    1...Y
    ..#..

``#`` is a wall, ``.`` floor, ``~`` hazard floor and digits are agent starts.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .rng import SplitMix64

Cell = tuple[int, int]


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    NOOP = 4


N_ACTIONS = len(Action)
_DELTAS = {Action.UP: (-1, 0), Action.DOWN: (1, 0), Action.LEFT: (0, -1),
           Action.RIGHT: (0, 1), Action.NOOP: (0, 0)}

# labelling rule kinds, shared with the kernels
AT_ANY, AT, NOT_AT, COUNT, PRESSED = range(5)
_RULE_KINDS = {"at-any": AT_ANY, "at": AT, "not-at": NOT_AT, "count": COUNT, "pressed": PRESSED}


class MapError(ValueError):
    pass


@dataclass(frozen=True)
class EventRule:
    name: str
    kind: int
    agent: int = -1       # 0-based; -1 when the rule is not agent-specific
    feature: str = ""     # feature key, or the button colour for PRESSED
    count: int = 1


@dataclass(frozen=True)
class GridSpec:
    name: str
    width: int
    height: int
    walls: frozenset[Cell]
    starts: tuple[Cell, ...]
    features: dict[str, frozenset[Cell]] = field(default_factory=dict)
    hazard: frozenset[Cell] = frozenset()
    capacity: int = 1
    button_presses: dict[str, int] = field(default_factory=dict)
    slip_prob: float = 0.05
    max_steps: int = 100
    gamma: float = 0.95
    events: tuple[EventRule, ...] = ()

    def __post_init__(self):
        self.validate()

    @property
    def n_agents(self) -> int:
        return len(self.starts)

    @property
    def buttons(self) -> dict[str, Cell]:
        return {k.split(":", 1)[1]: min(v) for k, v in self.features.items()
                if k.startswith("button:")}

    @property
    def regions(self) -> dict[str, frozenset[Cell]]:
        return {k.split(":", 1)[1]: v for k, v in self.features.items()
                if k.startswith("region:")}

    @property
    def stations(self) -> dict[str, Cell]:
        return {k.split(":", 1)[1]: min(v) for k, v in self.features.items()
                if k.startswith("station:")}

    @property
    def goal_cell(self) -> Cell | None:
        cells = self.features.get("goal")
        return min(cells) if cells else None

    @property
    def event_names(self) -> list[str]:
        return sorted({r.name for r in self.events})

    def inside(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def validate(self) -> None:
        problems = []
        if self.capacity < 1:
            problems.append(f"hazard capacity must be >= 1 (got {self.capacity})")
        if not 0.0 <= self.slip_prob <= 1.0:
            problems.append(f"slip_prob must lie in [0, 1] (got {self.slip_prob})")
        if not self.starts:
            problems.append("no agent start cells")
        region_cells = set().union(*self.regions.values()) if self.regions else set()
        for i, c in enumerate(self.starts):
            if not self.inside(c) or c in self.walls:
                problems.append(f"agent {i + 1} starts at {c}, outside the grid or inside a wall")
            if c in region_cells:
                problems.append(f"agent {i + 1} starts inside a gated region at {c}")
        hazard_starts = sum(c in self.hazard for c in self.starts)
        if hazard_starts > self.capacity:
            problems.append("more agents start in the hazard than it can hold")
        for key, cells in self.features.items():
            for c in cells:
                if not self.inside(c) or c in self.walls:
                    problems.append(f"feature {key} at {c} is outside the grid or inside a wall")
        for colour in self.regions:
            if colour not in self.buttons:
                problems.append(f"region {colour} has no button")
        for r in self.events:
            if r.kind == PRESSED:
                if r.feature not in self.buttons:
                    problems.append(f"event {r.name}: no button {r.feature!r}")
            elif r.feature not in self.features:
                problems.append(f"event {r.name}: unknown feature {r.feature!r}")
            if r.kind in (AT, NOT_AT) and not 0 <= r.agent < len(self.starts):
                problems.append(f"event {r.name}: agent {r.agent + 1} out of range")
        if problems:
            raise MapError("; ".join(problems))

    @cached_property
    def compiled(self) -> "CompiledEnv":
        return compile_env(self)


@dataclass(frozen=True)
class JointState:
    positions: tuple[Cell, ...]
    pressed: frozenset[str] = frozenset()
    step_count: int = 0


# map files

def parse_map(text: str) -> GridSpec:
    header: dict[str, str] = {}
    glyphs: dict[str, tuple[str, bool, int]] = {}
    rules: list[tuple[int, list[str]]] = []
    grid: list[str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if grid is not None:
            row = raw.rstrip()
            if row:
                grid.append(row)
            continue
        line = raw.split("#", 1)[0].strip() if not raw.strip().startswith("grid") else raw.strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise MapError(f"line {lineno}: expected 'key: value'")
        key, rest = key.strip(), rest.strip()
        if key == "grid":
            grid = []
        elif key == "glyph":
            toks = rest.split()
            if len(toks) < 2 or len(toks[0]) != 1:
                raise MapError(f"line {lineno}: glyph needs '<char> <feature> [hazard] [presses=N]'")
            presses = 1
            for t in toks[2:]:
                if t.startswith("presses="):
                    presses = int(t.split("=", 1)[1])
                elif t != "hazard":
                    raise MapError(f"line {lineno}: unknown glyph flag {t!r}")
            glyphs[toks[0]] = (toks[1], "hazard" in toks[2:], presses)
        elif key == "event":
            rules.append((lineno, rest.split()))
        else:
            header[key] = rest
    if not grid:
        raise MapError("map has no grid")
    height, width = len(grid), max(len(r) for r in grid)

    walls, hazard = set(), set()
    starts: dict[int, Cell] = {}
    features: dict[str, set[Cell]] = {}
    presses: dict[str, int] = {}
    for r, row in enumerate(grid):
        for c, ch in enumerate(row.ljust(width, "#")):
            if ch == "#":
                walls.add((r, c))
            elif ch == "~":
                hazard.add((r, c))
            elif ch.isdigit():
                starts[int(ch)] = (r, c)
            elif ch in glyphs:
                feat, on_hazard, n = glyphs[ch]
                features.setdefault(feat, set()).add((r, c))
                if on_hazard:
                    hazard.add((r, c))
                if feat.startswith("button:"):
                    presses[feat.split(":", 1)[1]] = n
            elif ch != ".":
                raise MapError(f"grid row {r}: unknown glyph {ch!r}")
    if sorted(starts) != list(range(1, len(starts) + 1)):
        raise MapError(f"agent starts must be numbered 1..n, got {sorted(starts)}")

    events = []
    for lineno, toks in rules:
        if len(toks) < 3 or toks[1] not in _RULE_KINDS:
            raise MapError(f"line {lineno}: bad event rule {' '.join(toks)!r}")
        name, kind = toks[0], _RULE_KINDS[toks[1]]
        try:
            if kind in (AT, NOT_AT):
                events.append(EventRule(name, kind, int(toks[2]) - 1, toks[3]))
            elif kind == COUNT:
                events.append(EventRule(name, kind, -1, toks[3], int(toks[2])))
            else:
                events.append(EventRule(name, kind, -1, toks[2]))
        except (IndexError, ValueError):
            raise MapError(f"line {lineno}: bad event rule {' '.join(toks)!r}") from None

    try:
        return GridSpec(
            name=header.get("name", "grid"),
            width=width,
            height=height,
            walls=frozenset(walls),
            starts=tuple(starts[i] for i in sorted(starts)),
            features={k: frozenset(v) for k, v in features.items()},
            hazard=frozenset(hazard),
            capacity=int(header.get("hazard_capacity", 1)),
            button_presses=presses,
            slip_prob=float(header.get("slip_prob", 0.05)),
            max_steps=int(header.get("max_steps", 100)),
            gamma=float(header.get("gamma", 0.95)),
            events=tuple(events),
        )
    except (TypeError, ValueError) as exc:
        raise MapError(str(exc)) from exc


def load_map(path) -> GridSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_map(fh.read())


BUILTIN = ("four_buttons", "coop_buttons", "repairs")


def builtin_path(name: str, kind: str) -> str:
    """Path of a shipped data file; ``kind`` is 'map', 'rm' or 'constraints'."""
    sub = "maps" if kind == "map" else "rms"
    return str(resources.files("lotad") / "data" / sub / f"{name}.{kind}")


def builtin_map(name: str) -> GridSpec:
    return load_map(builtin_path(name, "map"))


# integer form used by the kernels

@dataclass(frozen=True)
class CompiledEnv:
    n_agents: int
    width: int
    n_cells: int
    move: np.ndarray          # int64[n_cells, 5]; blocked moves map to the same cell
    region: np.ndarray        # int64[n_cells]; gating button index or -1
    hazard: np.ndarray        # int64[n_cells]; 1 inside the hazard
    capacity: int
    button_at: np.ndarray     # int64[n_cells]; button index or -1
    button_need: np.ndarray   # int64[n_buttons]
    starts: np.ndarray        # int64[n_agents]
    slip_prob: float
    feat_mask: np.ndarray     # int64[n_features, n_cells]
    rule_kind: np.ndarray
    rule_agent: np.ndarray
    rule_arg: np.ndarray      # feature index, or button index for PRESSED
    rule_count: np.ndarray
    rule_event: np.ndarray
    event_names: tuple[str, ...]
    button_colours: tuple[str, ...]

    def cell(self, idx: int) -> Cell:
        return divmod(int(idx), self.width)

    def index(self, cell: Cell) -> int:
        return cell[0] * self.width + cell[1]


def compile_env(spec: GridSpec, alphabet: Iterable[str] | None = None) -> CompiledEnv:
    """Flatten a GridSpec; labelling rules for events outside ``alphabet`` are dropped."""
    W, H = spec.width, spec.height
    n_cells = W * H
    move = np.zeros((n_cells, N_ACTIONS), dtype=np.int64)
    for r in range(H):
        for c in range(W):
            for a, (dr, dc) in _DELTAS.items():
                t = (r + dr, c + dc)
                ok = spec.inside(t) and t not in spec.walls
                move[r * W + c, a] = t[0] * W + t[1] if ok else r * W + c
    colours = tuple(sorted(spec.buttons))
    bidx = {col: i for i, col in enumerate(colours)}
    region = np.full(n_cells, -1, dtype=np.int64)
    for col, cells in spec.regions.items():
        for (r, c) in cells:
            region[r * W + c] = bidx[col]
    hazard = np.zeros(n_cells, dtype=np.int64)
    for (r, c) in spec.hazard:
        hazard[r * W + c] = 1
    button_at = np.full(n_cells, -1, dtype=np.int64)
    for col, (r, c) in spec.buttons.items():
        button_at[r * W + c] = bidx[col]
    need = np.array([spec.button_presses.get(col, 1) for col in colours], dtype=np.int64)

    feats = sorted(spec.features)
    fidx = {f: i for i, f in enumerate(feats)}
    feat_mask = np.zeros((max(len(feats), 1), n_cells), dtype=np.int64)
    for f, cells in spec.features.items():
        for (r, c) in cells:
            feat_mask[fidx[f], r * W + c] = 1

    names = spec.event_names if alphabet is None else sorted(set(alphabet))
    eidx = {e: i for i, e in enumerate(names)}
    rules = [r for r in spec.events if r.name in eidx]
    arg = [bidx[r.feature] if r.kind == PRESSED else fidx[r.feature] for r in rules]

    def arr(xs):
        return np.array(list(xs), dtype=np.int64)

    return CompiledEnv(
        n_agents=spec.n_agents, width=W, n_cells=n_cells, move=move, region=region,
        hazard=hazard, capacity=spec.capacity, button_at=button_at, button_need=need,
        starts=arr(r * W + c for (r, c) in spec.starts), slip_prob=spec.slip_prob,
        feat_mask=feat_mask,
        rule_kind=arr(r.kind for r in rules), rule_agent=arr(r.agent for r in rules),
        rule_arg=arr(arg), rule_count=arr(r.count for r in rules),
        rule_event=arr(eidx[r.name] for r in rules),
        event_names=tuple(names), button_colours=colours,
    )


# object-level operations (thin wrappers over the active kernel backend)

def _pressed_mask(env: CompiledEnv, pressed: Iterable[str]) -> int:
    mask = 0
    for col in pressed:
        mask |= 1 << env.button_colours.index(col)
    return mask


def reset(spec: GridSpec, rng: SplitMix64 | None = None) -> JointState:
    return JointState(tuple(spec.starts), frozenset(), 0)


def step(spec: GridSpec, s: JointState, actions: Sequence[int], rng: SplitMix64,
         realized: list | None = None) -> JointState:
    """One joint transition. ``realized`` (if given) receives the post-slip actions."""
    from .kernel import backend

    if len(actions) != spec.n_agents:
        raise ValueError(f"expected {spec.n_agents} actions, got {len(actions)}")
    env = spec.compiled
    pos = np.array([env.index(p) for p in s.positions], dtype=np.int64)
    acts = np.array([int(a) for a in actions], dtype=np.int64)
    out = np.zeros(spec.n_agents, dtype=np.int64)
    mask, rng.state = backend.env_step(env, pos, _pressed_mask(env, s.pressed), acts, out,
                                       rng.state)
    if realized is not None:
        realized[:] = [int(a) for a in out]
    pressed = frozenset(c for i, c in enumerate(env.button_colours) if mask >> i & 1)
    return JointState(tuple(env.cell(p) for p in pos), pressed, s.step_count + 1)


def label(spec: GridSpec, s_prev: JointState | None, s: JointState) -> set[str]:
    """Events true in ``s``; ``s_prev`` is accepted for interface symmetry only."""
    from .kernel import backend

    env = spec.compiled
    pos = np.array([env.index(p) for p in s.positions], dtype=np.int64)
    ids = backend.env_label(env, pos, _pressed_mask(env, s.pressed))
    return {env.event_names[i] for i in ids}


def observe(spec: GridSpec, s: JointState, i: int) -> Cell:
    if not 0 <= i < spec.n_agents:
        raise IndexError(f"agent {i} out of range")
    return s.positions[i]
