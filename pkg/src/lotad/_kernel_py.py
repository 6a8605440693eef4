"""Pure-Python episode kernel. Mirrors ``_kernel.pyx`` draw for draw.

Every random draw, comparison and floating-point operation happens in the same
order as in the compiled version, so both produce identical episodes.
"""
from __future__ import annotations

import math

from .rng import next_u64

_INV53 = 1.0 / (1 << 53)
N_ACTIONS = 5
AT_ANY, AT, NOT_AT, COUNT, PRESSED = range(5)


def _uniform(state):
    state, z = next_u64(state)
    return state, (z >> 11) * _INV53


def _below(state, n):
    state, u = _uniform(state)
    return state, int(u * n)


def _step_env(env, pos, pressed, actions, realized, state):
    move, region, hazard = env.move, env.region, env.hazard
    n = env.n_agents
    slip = env.slip_prob
    for i in range(n):
        a = int(actions[i])
        if slip > 0.0:
            state, u = _uniform(state)
            if u < slip:
                state, a = _below(state, N_ACTIONS)
        realized[i] = a
    for i in range(n):
        cur = int(pos[i])
        tgt = int(move[cur, realized[i]])
        if tgt != cur:
            g = int(region[tgt])
            if g >= 0 and not (pressed >> g) & 1:
                tgt = cur
        if tgt != cur and hazard[tgt] and not hazard[cur]:
            occupied = 0
            for j in range(n):
                if j != i and hazard[pos[j]]:
                    occupied += 1
            if occupied >= env.capacity:
                tgt = cur
        pos[i] = tgt
    button_at, need = env.button_at, env.button_need
    for b in range(len(need)):
        count = 0
        for i in range(n):
            if button_at[pos[i]] == b:
                count += 1
        if count >= need[b]:
            pressed |= 1 << b
    return pressed, state


def _label(env, pos, pressed, active):
    mask = env.feat_mask
    n = env.n_agents
    for r in range(len(env.rule_kind)):
        kind = env.rule_kind[r]
        f = env.rule_arg[r]
        if kind == AT_ANY:
            hit = False
            for i in range(n):
                if mask[f, pos[i]]:
                    hit = True
                    break
        elif kind == AT:
            hit = bool(mask[f, pos[env.rule_agent[r]]])
        elif kind == NOT_AT:
            hit = not mask[f, pos[env.rule_agent[r]]]
        elif kind == COUNT:
            count = 0
            for i in range(n):
                if mask[f, pos[i]]:
                    count += 1
            hit = count >= env.rule_count[r]
        else:
            hit = bool((pressed >> f) & 1)
        if hit:
            active[env.rule_event[r]] = 1


def env_step(env, pos, pressed, actions, realized, state):
    return _step_env(env, pos, pressed, actions, realized, state)


def env_label(env, pos, pressed):
    active = [0] * len(env.event_names)
    _label(env, pos, pressed, active)
    return [e for e, on in enumerate(active) if on]


class Runner:
    """Runs training or evaluation episodes of one compiled task."""

    def __init__(self, env, task):
        self.env = env
        self.task = task

    def run_episode(self, d, q, epsilon, lr, gamma, bonus, max_steps, cond_overall,
                    learn, shuffle_events, bonus_to_sink, state, trace=None):
        env, task = self.env, self.task
        n = env.n_agents
        n_e = task.n_events
        n_u = task.n_overall
        otrans, ogoal, osink = task.otrans, task.ogoal, task.osink
        strans, sgoal, ssink = task.strans, task.sgoal, task.ssink
        in_les = task.in_les

        pos = [int(c) for c in env.starts]
        pressed = 0
        o = int(task.oinit)
        g = [int(task.sinit[d, i]) for i in range(n)]
        sub_step = [0 if sgoal[g[i]] else -1 for i in range(n)]
        overall_step = 0 if ogoal[o] else -1
        actions = [0] * n
        realized = [0] * n
        prev_pos = [0] * n
        prev_ctx = [0] * n
        sig = [0] * n
        active = [0] * n_e
        events = [0] * n_e
        steps = 0
        terminal = False

        while steps < max_steps and not terminal:
            for i in range(n):
                ctx = g[i] * n_u + o if cond_overall else g[i]
                prev_ctx[i] = ctx
                prev_pos[i] = pos[i]
                state, u = _uniform(state)
                if u < epsilon:
                    state, actions[i] = _below(state, N_ACTIONS)
                else:
                    row = q[ctx, pos[i]]
                    best = row[0]
                    ties = 1
                    for a in range(1, N_ACTIONS):
                        if row[a] > best:
                            best = row[a]
                            ties = 1
                        elif row[a] == best:
                            ties += 1
                    k = 0
                    if ties > 1:
                        state, k = _below(state, ties)
                    for a in range(N_ACTIONS):
                        if row[a] == best:
                            if k == 0:
                                actions[i] = a
                                break
                            k -= 1

            pressed, state = _step_env(env, pos, pressed, actions, realized, state)
            steps += 1

            for e in range(n_e):
                active[e] = 0
            _label(env, pos, pressed, active)
            n_act = 0
            for e in range(n_e):
                if active[e]:
                    events[n_act] = e
                    n_act += 1
            if shuffle_events:
                for x in range(n_act - 1, 0, -1):
                    state, y = _below(state, x + 1)
                    events[x], events[y] = events[y], events[x]

            sig_o = 0
            for i in range(n):
                sig[i] = 0
            for x in range(n_act):
                e = events[x]
                nu = otrans[o, e]
                if nu >= 0:
                    if not ogoal[o] and ogoal[nu]:
                        sig_o = 1
                    o = int(nu)
                sharers = 0
                ready = True
                for i in range(n):
                    if in_les[d, i, e]:
                        sharers += 1
                        if strans[g[i], e] < 0:
                            ready = False
                for i in range(n):
                    if sharers > 0 and not (ready and in_les[d, i, e]):
                        continue
                    nxt = strans[g[i], e]
                    if nxt >= 0:
                        if not sgoal[g[i]] and sgoal[nxt]:
                            sig[i] = 1
                        g[i] = int(nxt)

            for i in range(n):
                if sig[i] and sub_step[i] < 0:
                    sub_step[i] = steps
            if sig_o and overall_step < 0:
                overall_step = steps

            resolved = True
            for i in range(n):
                if not (sgoal[g[i]] or ssink[g[i]]):
                    resolved = False
            terminal = bool(ogoal[o] or osink[o] or resolved)

            if trace is not None:
                trace.append((steps, tuple(realized), tuple(pos),
                              tuple(events[x] for x in range(n_act)), o, tuple(g)))

            if learn:
                for i in range(n):
                    r = 0.0
                    if sig[i]:
                        r += 1.0
                    if sig_o and (bonus_to_sink or not ssink[g[i]]):
                        r += bonus
                    ctx = g[i] * n_u + o if cond_overall else g[i]
                    target = r
                    if not terminal:
                        row = q[ctx, pos[i]]
                        best = row[0]
                        for a in range(1, N_ACTIONS):
                            if row[a] > best:
                                best = row[a]
                        target = r + gamma * best
                    old = q[prev_ctx[i], prev_pos[i], actions[i]]
                    new = old + lr * (target - old)
                    if not math.isfinite(new):
                        raise FloatingPointError("non-finite action value")
                    q[prev_ctx[i], prev_pos[i], actions[i]] = new

        sub_sink = [int(ssink[g[i]]) for i in range(n)]
        return steps, overall_step, sub_step, sub_sink, o, list(g), state
