"""Experiment configuration, multi-seed runs, k-sweeps, decomposition
validation reports and frozen-policy evaluation."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .decomp import (
    ConstraintError,
    GenerationConstraints,
    decompose,
    enumerate_candidates,
    is_valid,
    parse_constraints,
    serialize_candidates,
)
from .envs import BUILTIN, GridSpec, MapError, builtin_path, load_map
from .oracle import goal_reachable, trace_equivalent
from .rm import RewardMachine, load_rm
from .rng import SplitMix64
from .training import (
    MODES,
    Episodes,
    RewardShaping,
    TrainConfig,
    load_policy,
    save_policy,
    train,
)

log = logging.getLogger(__name__)

ENV_PREFIX = "LOTAD_CFG_"


class ConfigError(ValueError):
    """Invalid experiment configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# configuration

@dataclass
class ExperimentConfig:
    env: str = "four_buttons"
    map: str = ""
    rm: str = ""
    constraints: str = ""
    mode: str = "lotad"
    k: int = 10
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float | None = None          # None: the map's default
    slip_prob: float | None = None      # None: the map's default
    overall_bonus: float = 0.1
    condition_on_overall: bool = True
    episodes: int = 1000
    max_steps: int | None = None        # None: the map's default
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output: str = "runs/out"
    epsilon: float = 0.1
    learning_rate: float = 0.1
    selector_reward: str = "discounted"
    bonus_to_sink: bool = True
    credit_empty_subtasks: bool = False
    shuffle_events: bool = False
    timing: bool = False
    workers: int = 1
    backend: str = ""

    def __post_init__(self):
        for name, default in (("map", "map"), ("rm", "rm"), ("constraints", "constraints")):
            if not getattr(self, name) and self.env in BUILTIN:
                setattr(self, name, builtin_path(self.env, default))

    # parsing

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base_dir: str | Path | None = None
                     ) -> "ExperimentConfig":
        errors = []
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in types:
                errors.append(f"unknown key {key!r}")
                continue
            try:
                kwargs[key] = _coerce(types[key], raw)
            except ValueError as exc:
                errors.append(f"{key}: {exc}")
        if errors:
            raise ConfigError(errors)
        if base_dir is not None:
            for key in ("map", "rm", "constraints", "output"):
                if kwargs.get(key) and not os.path.isabs(kwargs[key]):
                    kwargs[key] = str(Path(base_dir) / kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path, environ: Mapping[str, str] | None = None,
                  overrides: Mapping[str, str] | None = None) -> "ExperimentConfig":
        values = read_config_file(path)
        values.update(env_overrides(os.environ if environ is None else environ))
        values.update(overrides or {})
        return cls.from_mapping(values, base_dir=Path(path).parent)

    def to_text(self) -> str:
        lines = []
        for name in self.field_names():
            v = getattr(self, name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif v is None:
                v = ""
            lines.append(f"{name} = {v}")
        return "\n".join(lines) + "\n"

    # validation and loading

    def validate(self) -> None:
        errors = []
        if self.mode not in MODES:
            errors.append(f"mode must be one of {', '.join(MODES)} (got {self.mode!r})")
        if self.k < 1:
            errors.append(f"k must be >= 1 (got {self.k})")
        if not 0.0 < self.alpha <= 1.0:
            errors.append(f"alpha must lie in (0, 1] (got {self.alpha})")
        if self.beta < 0:
            errors.append(f"beta must be >= 0 (got {self.beta})")
        if self.gamma is not None and not 0.0 < self.gamma < 1.0:
            errors.append(f"gamma must lie in (0, 1) (got {self.gamma})")
        if self.slip_prob is not None and not 0.0 <= self.slip_prob <= 1.0:
            errors.append(f"slip_prob must lie in [0, 1] (got {self.slip_prob})")
        if self.overall_bonus < 0:
            errors.append(f"overall_bonus must be >= 0 (got {self.overall_bonus})")
        if self.episodes < 0:
            errors.append(f"episodes must be >= 0 (got {self.episodes})")
        if self.max_steps is not None and self.max_steps < 0:
            errors.append(f"max_steps must be >= 0 (got {self.max_steps})")
        if not self.seeds:
            errors.append("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            errors.append("seeds must be distinct")
        if not 0.0 <= self.epsilon <= 1.0:
            errors.append(f"epsilon must lie in [0, 1] (got {self.epsilon})")
        if not 0.0 < self.learning_rate <= 1.0:
            errors.append(f"learning_rate must lie in (0, 1] (got {self.learning_rate})")
        if self.selector_reward not in ("discounted", "indicator"):
            errors.append("selector_reward must be 'discounted' or 'indicator'")
        if self.workers < 1:
            errors.append(f"workers must be >= 1 (got {self.workers})")
        if self.backend not in ("", "python", "compiled"):
            errors.append("backend must be empty, 'python' or 'compiled'")
        for name in ("map", "rm", "constraints"):
            path = getattr(self, name)
            if not path:
                errors.append(f"{name}: no file given and env {self.env!r} is not built in")
            elif not os.path.isfile(path):
                errors.append(f"{name}: file not found: {path}")
        if errors:
            raise ConfigError(errors)

    def load(self) -> tuple[GridSpec, RewardMachine, GenerationConstraints]:
        """Validate, then parse the referenced files (errors become ConfigError)."""
        self.validate()
        try:
            spec = load_map(self.map)
            overrides = {}
            if self.slip_prob is not None:
                overrides["slip_prob"] = self.slip_prob
            if self.max_steps is not None:
                overrides["max_steps"] = self.max_steps
            if self.gamma is not None:
                overrides["gamma"] = self.gamma
            if overrides:
                spec = dataclasses.replace(spec, **overrides)
            rm = load_rm(self.rm)
            with open(self.constraints, encoding="utf-8") as fh:
                cons = parse_constraints(fh.read(), spec.n_agents, k=self.k)
        except (MapError, ConstraintError, ValueError) as exc:
            raise ConfigError([str(exc)]) from exc
        missing = set(rm.alphabet) - set(spec.event_names)
        if missing:
            log.warning("events never emitted by the environment: %s", ", ".join(sorted(missing)))
        return spec, rm, cons

    def train_config(self, seed: int, loaded=None) -> TrainConfig:
        spec, rm, cons = loaded or self.load()
        return TrainConfig(
            spec=spec, rm=rm, constraints=cons, mode=self.mode, episodes=self.episodes,
            max_steps=self.max_steps, alpha=self.alpha, beta=self.beta, gamma=self.gamma,
            overall_bonus=self.overall_bonus, condition_on_overall=self.condition_on_overall,
            epsilon=self.epsilon, learning_rate=self.learning_rate,
            selector_reward=self.selector_reward, bonus_to_sink=self.bonus_to_sink,
            credit_empty_subtasks=self.credit_empty_subtasks,
            shuffle_events=self.shuffle_events, seed=seed, backend=self.backend or None,
        )


def _coerce(tp, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    tp = str(tp)
    if "None" in tp and raw in ("", "none", "default"):
        return None
    if tp.startswith("list"):
        try:
            return [int(x) for x in raw.replace(",", " ").split()]
        except ValueError:
            raise ValueError(f"expected a list of integers, got {raw!r}") from None
    if tp.startswith("bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if tp.startswith("int"):
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"expected an integer, got {raw!r}") from None
    if tp.startswith("float"):
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"expected a number, got {raw!r}") from None
    return raw


def read_config_file(path: str | Path, _depth: int = 0) -> dict[str, str]:
    """Flat ``key = value`` (or ``key: value``) lines; ``include: other.cfg``
    pulls in another file, whose keys the including file may override."""
    if _depth > 8:
        raise ConfigError([f"include nesting too deep at {path}"])
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
    values: dict[str, str] = {}
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        seps = [i for i in (line.find("="), line.find(":")) if i >= 0]
        if not seps:
            errors.append(f"{path}:{lineno}: expected 'key = value'")
            continue
        i = min(seps)
        key, value = line[:i].strip(), line[i + 1:].strip()
        if key == "include":
            inc = Path(value) if os.path.isabs(value) else path.parent / value
            values.update(read_config_file(inc, _depth + 1))
        else:
            values[key] = value
    if errors:
        raise ConfigError(errors)
    return values


def env_overrides(environ: Mapping[str, str]) -> dict[str, str]:
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX):
            out[k[len(ENV_PREFIX):].lower()] = v
    return out


# runs

@dataclass
class SeedResult:
    seed: int
    best_curve: np.ndarray
    completion: np.ndarray
    best_id: int
    best_les: list[list[str]]
    tail_completion: float
    episodes_to_90: int | None
    n_candidates: int
    candidate_keys: list[tuple[tuple[str, ...], ...]]


@dataclass
class RunSummary:
    config: ExperimentConfig
    results: list[SeedResult]

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.results]

    def curves(self) -> np.ndarray:
        return np.array([r.best_curve for r in self.results], dtype=float).reshape(
            len(self.results), -1)

    def mean_curve(self) -> np.ndarray:
        c = self.curves()
        return c.mean(axis=0) if c.size else np.zeros(0)

    def std_curve(self) -> np.ndarray:
        c = self.curves()
        return c.std(axis=0) if c.size else np.zeros(0)

    def tail_completion(self) -> float:
        return statistics.fmean(r.tail_completion for r in self.results)

    def table(self) -> str:
        lines = [f"mode={self.config.mode} k={self.config.k} episodes={self.config.episodes}"]
        for r in self.results:
            final = r.best_curve[-1] if len(r.best_curve) else 0.0
            les = " | ".join(" ".join(s) or "-" for s in r.best_les)
            lines.append(f"seed {r.seed}: best-so-far {final:.4f}, tail completion "
                         f"{r.tail_completion:.3f}, to 0.9: {r.episodes_to_90}, "
                         f"decomposition {r.best_id} [{les}]")
        lines.append(f"mean tail completion {self.tail_completion():.3f}")
        return "\n".join(lines) + "\n"


def _run_seed(config: ExperimentConfig, seed: int, out_dir: str | None) -> SeedResult:
    loaded = config.load()
    cfg = config.train_config(seed, loaded)
    trace = io.StringIO()
    tlog = train(cfg, selector_trace=trace)
    if out_dir:
        out = Path(out_dir)
        (out / f"seed_{seed}.csv").write_text(tlog.csv_text(), encoding="utf-8")
        (out / f"seed_{seed}_selector.csv").write_text(trace.getvalue(), encoding="utf-8")
        (out / f"seed_{seed}_candidates.txt").write_text(serialize_candidates(tlog.candidates),
                                                         encoding="utf-8")
        save_policy(out / f"seed_{seed}_policy.npz", tlog)
        if config.timing:
            (out / f"seed_{seed}_timing.csv").write_text(
                "episode,wall_ms\n" + "".join(f"{i},{w:.3f}\n" for i, w in enumerate(tlog.wall_ms)),
                encoding="utf-8")
    best = tlog.selector.best()
    return SeedResult(
        seed=seed, best_curve=tlog.best_curve(), completion=tlog.completion(), best_id=best,
        best_les=[sorted(s) for s in tlog.candidates[best].les],
        tail_completion=tlog.completion_rate(1000), episodes_to_90=tlog.episodes_to_rate(0.9),
        n_candidates=len(tlog.candidates), candidate_keys=[d.key() for d in tlog.candidates],
    )


def run(config: ExperimentConfig, write: bool = True) -> RunSummary:
    """Train once per seed, then write per-seed logs, the aggregate curve and a chart."""
    spec, rm, cons = config.load()
    out = Path(config.output)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    out_dir = str(out) if write else None
    if config.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_seed, config, s, out_dir) for s in config.seeds]
            results = [f.result() for f in futures]
    else:
        results = [_run_seed(config, s, out_dir) for s in config.seeds]
    summary = RunSummary(config, results)
    if write:
        (out / "aggregate.csv").write_text(aggregate_csv(summary), encoding="utf-8")
        (out / "summary.txt").write_text(summary.table(), encoding="utf-8")
        mean, std = summary.mean_curve(), summary.std_curve()
        x = np.arange(1, len(mean) + 1)
        (out / "curve.svg").write_text(svg_line_chart(
            {config.mode: (x, mean)}, bands={config.mode: (x, mean - std, mean + std)},
            title=f"{config.env}: best discounted reward so far",
            xlabel="episode", ylabel="reward"), encoding="utf-8")
    return summary


def aggregate_csv(summary: RunSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "best_mean", "best_stdev", "completion_mean", "completion_stdev"])
    curves = summary.curves()
    comp = np.array([r.completion for r in summary.results], dtype=float).reshape(curves.shape)
    for i in range(curves.shape[1]):
        w.writerow([i, f"{curves[:, i].mean():.6f}", f"{curves[:, i].std():.6f}",
                    f"{comp[:, i].mean():.6f}", f"{comp[:, i].std():.6f}"])
    return buf.getvalue()


def sweep_k(config: ExperimentConfig, k_values: Sequence[int], write: bool = True
            ) -> list[RunSummary]:
    """One run per k with shared seeds, plus a comparison table."""
    bad = [k for k in k_values if k < 1]
    if bad:
        raise ConfigError([f"k must be >= 1 (got {k})" for k in bad])
    summaries = []
    for k in k_values:
        sub = dataclasses.replace(config, k=k, output=str(Path(config.output) / f"k_{k}"))
        summaries.append(run(sub, write=write))
    if write:
        out = Path(config.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep_k.csv").write_text(sweep_table(summaries), encoding="utf-8")
        series = {}
        for s in summaries:
            m = s.mean_curve()
            series[f"k={s.config.k}"] = (np.arange(1, len(m) + 1), m)
        (out / "sweep_k.svg").write_text(svg_line_chart(
            series, title=f"{config.env}: candidate-set size", xlabel="episode",
            ylabel="best discounted reward so far"), encoding="utf-8")
    return summaries


def sweep_table(summaries: Sequence[RunSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "n_candidates", "final_best_mean", "tail_completion_mean"])
    for s in summaries:
        m = s.mean_curve()
        w.writerow([s.config.k, s.results[0].n_candidates if s.results else 0,
                    f"{m[-1] if len(m) else 0.0:.6f}", f"{s.tail_completion():.6f}"])
    return buf.getvalue()


# validation report

@dataclass
class CandidateReport:
    id: int
    les: list[list[str]]
    score: float
    valid: bool
    brute_force: bool | None    # None when the alphabet is too large to enumerate


def validate_decompositions(rm: RewardMachine, constraints: GenerationConstraints,
                            out: TextIO | None = None, brute_force_limit: int = 6
                            ) -> list[CandidateReport]:
    def say(line: str) -> None:
        if out is not None:
            out.write(line + "\n")

    if not goal_reachable(rm):
        log.warning("task unsatisfiable by any trace")
        say("warning: task unsatisfiable by any trace")
    cands = enumerate_candidates(rm, constraints.n_agents, constraints)
    check = len(rm.alphabet) <= brute_force_limit
    reports = []
    for d in cands:
        valid = is_valid(rm, d)
        bf = None
        if check:
            bf, _ = trace_equivalent(rm, [s.machine for s in d.subtasks], list(d.les))
        reports.append(CandidateReport(d.id, [sorted(s) for s in d.les], d.score, valid, bf))
        say(f"candidate {d.id}: score {d.score:.4f}")
        for i, s in enumerate(d.les):
            say(f"  agent {i + 1}: {' '.join(sorted(s)) or '(empty)'}")
        say(f"  valid: {'yes' if valid else 'no'}")
        if bf is not None:
            say(f"  brute-force trace equivalence: {'yes' if bf else 'no'}")
    say(f"{len(cands)} candidate(s)")
    return reports


# frozen-policy evaluation and replay

def _restore(config: ExperimentConfig, policy_path) -> tuple[Episodes, int]:
    spec, rm, _ = config.load()
    q, cond, keys, best = load_policy(policy_path)
    cands = [decompose(rm, les, id=j) for j, les in enumerate(keys)]
    eps = Episodes(spec, rm, cands, dict(cond_overall=cond, epsilon=0.0,
                                         learning_rate=config.learning_rate,
                                         gamma=config.gamma or spec.gamma),
                   backend=config.backend or None)
    if eps.policy.q.shape != q.shape:
        raise ConfigError([f"policy table shape {q.shape} does not match the task "
                           f"({eps.policy.q.shape})"])
    eps.policy.q[...] = q
    return eps, best


@dataclass
class EvalResult:
    decomposition: int
    episodes: int
    completion_rate: float
    mean_reward: float
    mean_steps: float


def evaluate(config: ExperimentConfig, policy_path, episodes: int = 100, seed: int = 0,
             decomposition: int | None = None) -> EvalResult:
    """Greedy (epsilon = 0) rollouts of a saved policy; no learning."""
    eps, best = _restore(config, policy_path)
    j = best if decomposition is None else decomposition
    spec = eps.spec
    shaping = RewardShaping(1.0, config.overall_bonus, config.gamma or spec.gamma)
    rng = SplitMix64(seed)
    done, rew, steps = 0, 0.0, 0
    for _ in range(episodes):
        r = eps.run(j, shaping, spec.max_steps, rng, learn=False, epsilon=0.0)
        done += r.overall_completed
        rew += r.overall_reward(shaping.gamma)
        steps += r.steps
    n = max(episodes, 1)
    return EvalResult(j, episodes, done / n, rew / n, steps / n)


def replay(config: ExperimentConfig, policy_path, seed: int = 0,
           decomposition: int | None = None, epsilon: float = 0.0) -> list[str]:
    """Event and RM-state trace of one episode under a saved policy."""
    eps, best = _restore(config, policy_path)
    j = best if decomposition is None else decomposition
    spec, task, env = eps.spec, eps.task, eps.env
    shaping = RewardShaping(1.0, config.overall_bonus, config.gamma or spec.gamma)
    trace: list = []
    res = eps.run(j, shaping, spec.max_steps, SplitMix64(seed), learn=False,
                  epsilon=epsilon, trace=trace)
    les = " | ".join(" ".join(sorted(s)) or "-" for s in eps.candidates[j].les)
    lines = [f"decomposition {j}: {les}"]
    for step, realized, pos, events, o, g in trace:
        acts = " ".join(a_name(a) for a in realized)
        cells = " ".join(f"({r},{c})" for r, c in (env.cell(p) for p in pos))
        evs = ",".join(task.event_names[e] for e in events) or "-"
        subs = " ".join(task.sub_names[x][2] for x in g)
        lines.append(f"{step:4d}  {acts:<24} {cells:<28} events={evs:<20} "
                     f"overall={task.overall_names[o]} subs={subs}")
    status = f"completed at step {res.completion_step}" if res.overall_completed else "not completed"
    lines.append(f"episode {status} after {res.steps} steps")
    return lines


def a_name(a: int) -> str:
    return ("up", "down", "left", "right", "noop")[int(a)]


# minimal SVG emitter

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def svg_line_chart(series: Mapping[str, tuple[Iterable[float], Iterable[float]]],
                   title: str = "", xlabel: str = "", ylabel: str = "",
                   bands: Mapping[str, tuple] | None = None,
                   width: int = 640, height: int = 400, max_points: int = 1000) -> str:
    """Polylines with axes, tick labels and a legend. ``bands`` maps a series
    name to (x, low, high) drawn as a translucent envelope."""
    left, right, top, bottom = 60, 20, 30, 45
    pw, ph = width - left - right, height - top - bottom
    data = {k: (np.asarray(list(x), float), np.asarray(list(y), float)) for k, (x, y) in series.items()}
    xs = np.concatenate([x for x, _ in data.values()] or [np.zeros(0)])
    ys = np.concatenate([y for _, y in data.values()] or [np.zeros(0)])
    if bands:
        ys = np.concatenate([ys] + [np.asarray(list(b[1]), float) for b in bands.values()]
                            + [np.asarray(list(b[2]), float) for b in bands.values()])
    x0, x1 = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    y0, y1 = (min(0.0, float(ys.min())), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    def thin(x, y):
        if len(x) > max_points:
            idx = np.unique(np.linspace(0, len(x) - 1, max_points).astype(int))
            return x[idx], y[idx]
        return x, y

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
                   f'{_escape(title)}</text>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    for t in np.linspace(x0, x1, 5):
        out.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(t):.1f}" y="{top + ph + 16}" text-anchor="middle">{_fmt(t)}</text>')
    for t in np.linspace(y0, y1, 5):
        out.append(f'<line x1="{left - 4}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{_escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2:.1f})">{_escape(ylabel)}</text>')
    for i, (name, (x, y)) in enumerate(data.items()):
        colour = _PALETTE[i % len(_PALETTE)]
        if bands and name in bands:
            bx, lo, hi = (np.asarray(list(v), float) for v in bands[name])
            bx, lo = thin(bx, lo)
            _, hi = thin(np.asarray(list(bands[name][0]), float), hi)
            pts = [f"{px(a):.1f},{py(b):.1f}" for a, b in zip(bx, hi)]
            pts += [f"{px(a):.1f},{py(b):.1f}" for a, b in zip(bx[::-1], lo[::-1])]
            if pts:
                out.append(f'<polygon points="{" ".join(pts)}" fill="{colour}" fill-opacity="0.2" stroke="none"/>')
        tx, ty = thin(x, y)
        if len(tx):
            pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(tx, ty))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        ly = top + 12 + 14 * i
        out.append(f'<line x1="{left + pw - 110}" y1="{ly}" x2="{left + pw - 90}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 85}" y="{ly + 4}">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
