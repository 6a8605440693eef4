# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled episode kernel: environment step, labelling, synchronized RM
stepping and the tabular update. Must stay draw-for-draw identical to
``_kernel_py.py``.
"""
from libc.stdint cimport int64_t, uint64_t
from libc.math cimport isfinite

import numpy as np

cdef enum:
    N_ACTIONS = 5
    AT_ANY = 0
    AT = 1
    NOT_AT = 2
    COUNT = 3

cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _next(uint64_t* s) noexcept nogil:
    s[0] += <uint64_t>0x9E3779B97F4A7C15
    cdef uint64_t z = s[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* s) noexcept nogil:
    return (_next(s) >> 11) * INV53


cdef inline int64_t _below(uint64_t* s, int64_t n) noexcept nogil:
    return <int64_t>(_uniform(s) * n)


cdef class _Env:
    cdef int64_t n, capacity, n_rules, n_buttons
    cdef double slip
    cdef const int64_t[:, ::1] move
    cdef const int64_t[::1] region
    cdef const int64_t[::1] hazard
    cdef const int64_t[::1] button_at
    cdef const int64_t[::1] button_need
    cdef const int64_t[:, ::1] feat_mask
    cdef const int64_t[::1] rule_kind
    cdef const int64_t[::1] rule_agent
    cdef const int64_t[::1] rule_arg
    cdef const int64_t[::1] rule_count
    cdef const int64_t[::1] rule_event

    def __init__(self, env):
        self.n = env.n_agents
        self.capacity = env.capacity
        self.slip = env.slip_prob
        self.move = np.ascontiguousarray(env.move, dtype=np.int64)
        self.region = np.ascontiguousarray(env.region, dtype=np.int64)
        self.hazard = np.ascontiguousarray(env.hazard, dtype=np.int64)
        self.button_at = np.ascontiguousarray(env.button_at, dtype=np.int64)
        self.button_need = np.ascontiguousarray(env.button_need, dtype=np.int64)
        self.n_buttons = len(env.button_need)
        self.feat_mask = np.ascontiguousarray(env.feat_mask, dtype=np.int64)
        self.rule_kind = np.ascontiguousarray(env.rule_kind, dtype=np.int64)
        self.rule_agent = np.ascontiguousarray(env.rule_agent, dtype=np.int64)
        self.rule_arg = np.ascontiguousarray(env.rule_arg, dtype=np.int64)
        self.rule_count = np.ascontiguousarray(env.rule_count, dtype=np.int64)
        self.rule_event = np.ascontiguousarray(env.rule_event, dtype=np.int64)
        self.n_rules = len(env.rule_kind)

    cdef int64_t step(self, int64_t* pos, int64_t pressed, int64_t* actions,
                      int64_t* realized, uint64_t* s) noexcept nogil:
        cdef int64_t i, j, a, cur, tgt, g, occupied, b, count
        for i in range(self.n):
            a = actions[i]
            if self.slip > 0.0:
                if _uniform(s) < self.slip:
                    a = _below(s, N_ACTIONS)
            realized[i] = a
        for i in range(self.n):
            cur = pos[i]
            tgt = self.move[cur, realized[i]]
            if tgt != cur:
                g = self.region[tgt]
                if g >= 0 and not ((pressed >> g) & 1):
                    tgt = cur
            if tgt != cur and self.hazard[tgt] and not self.hazard[cur]:
                occupied = 0
                for j in range(self.n):
                    if j != i and self.hazard[pos[j]]:
                        occupied += 1
                if occupied >= self.capacity:
                    tgt = cur
            pos[i] = tgt
        for b in range(self.n_buttons):
            count = 0
            for i in range(self.n):
                if self.button_at[pos[i]] == b:
                    count += 1
            if count >= self.button_need[b]:
                pressed |= (<int64_t>1) << b
        return pressed

    cdef void label(self, int64_t* pos, int64_t pressed, int64_t* active) noexcept nogil:
        cdef int64_t r, i, f, kind, count
        cdef bint hit
        for r in range(self.n_rules):
            kind = self.rule_kind[r]
            f = self.rule_arg[r]
            if kind == AT_ANY:
                hit = False
                for i in range(self.n):
                    if self.feat_mask[f, pos[i]]:
                        hit = True
                        break
            elif kind == AT:
                hit = self.feat_mask[f, pos[self.rule_agent[r]]] != 0
            elif kind == NOT_AT:
                hit = self.feat_mask[f, pos[self.rule_agent[r]]] == 0
            elif kind == COUNT:
                count = 0
                for i in range(self.n):
                    if self.feat_mask[f, pos[i]]:
                        count += 1
                hit = count >= self.rule_count[r]
            else:
                hit = ((pressed >> f) & 1) != 0
            if hit:
                active[self.rule_event[r]] = 1


def env_step(env, int64_t[::1] pos, int64_t pressed, int64_t[::1] actions,
             int64_t[::1] realized, state):
    cdef _Env e = _Env(env)
    cdef uint64_t s = <uint64_t>state
    pressed = e.step(&pos[0], pressed, &actions[0], &realized[0], &s)
    return pressed, int(s)


def env_label(env, int64_t[::1] pos, int64_t pressed):
    cdef _Env e = _Env(env)
    n_e = len(env.event_names)
    cdef int64_t[::1] active = np.zeros(max(n_e, 1), dtype=np.int64)
    e.label(&pos[0], pressed, &active[0])
    return [i for i in range(n_e) if active[i]]


cdef class Runner:
    """Runs training or evaluation episodes of one compiled task."""
    cdef _Env env
    cdef object task
    cdef int64_t n, n_e, n_u
    cdef const int64_t[:, ::1] otrans
    cdef const int64_t[::1] ogoal
    cdef const int64_t[::1] osink
    cdef const int64_t[:, ::1] strans
    cdef const int64_t[::1] sgoal
    cdef const int64_t[::1] ssink
    cdef const int64_t[:, ::1] sinit
    cdef const int64_t[:, :, ::1] in_les
    cdef const int64_t[::1] starts
    cdef int64_t oinit

    def __init__(self, env, task):
        self.env = _Env(env)
        self.task = task
        self.n = env.n_agents
        self.n_e = task.n_events
        self.n_u = task.n_overall
        self.otrans = np.ascontiguousarray(task.otrans, dtype=np.int64)
        self.ogoal = np.ascontiguousarray(task.ogoal, dtype=np.int64)
        self.osink = np.ascontiguousarray(task.osink, dtype=np.int64)
        self.strans = np.ascontiguousarray(task.strans, dtype=np.int64)
        self.sgoal = np.ascontiguousarray(task.sgoal, dtype=np.int64)
        self.ssink = np.ascontiguousarray(task.ssink, dtype=np.int64)
        self.sinit = np.ascontiguousarray(task.sinit, dtype=np.int64)
        self.in_les = np.ascontiguousarray(task.in_les, dtype=np.int64)
        self.starts = np.ascontiguousarray(env.starts, dtype=np.int64)
        self.oinit = task.oinit

    def run_episode(self, int64_t d, double[:, :, ::1] q, double epsilon, double lr,
                    double gamma, double bonus, int64_t max_steps, bint cond_overall,
                    bint learn, bint shuffle_events, bint bonus_to_sink, state,
                    trace=None):
        cdef int64_t n = self.n, n_e = self.n_e, n_u = self.n_u
        cdef uint64_t s = <uint64_t>state
        cdef int64_t[::1] pos = np.array(self.starts, dtype=np.int64)
        cdef int64_t[::1] g = np.zeros(n, dtype=np.int64)
        cdef int64_t[::1] sub_step = np.zeros(n, dtype=np.int64)
        cdef int64_t[::1] actions = np.zeros(n, dtype=np.int64)
        cdef int64_t[::1] realized = np.zeros(n, dtype=np.int64)
        cdef int64_t[::1] prev_pos = np.zeros(n, dtype=np.int64)
        cdef int64_t[::1] prev_ctx = np.zeros(n, dtype=np.int64)
        cdef int64_t[::1] sig = np.zeros(n, dtype=np.int64)
        cdef int64_t[::1] active = np.zeros(max(n_e, 1), dtype=np.int64)
        cdef int64_t[::1] events = np.zeros(max(n_e, 1), dtype=np.int64)
        cdef int64_t pressed = 0, o = self.oinit, overall_step, steps = 0
        cdef int64_t i, a, e, x, y, k, ties, ctx, nu, nxt, sharers, n_act, sig_o, tmp
        cdef bint terminal = False, ready, resolved, tracing = trace is not None
        cdef double u, best, r, target, old, new

        for i in range(n):
            g[i] = self.sinit[d, i]
            sub_step[i] = 0 if self.sgoal[g[i]] else -1
        overall_step = 0 if self.ogoal[o] else -1

        while steps < max_steps and not terminal:
            for i in range(n):
                ctx = g[i] * n_u + o if cond_overall else g[i]
                prev_ctx[i] = ctx
                prev_pos[i] = pos[i]
                u = _uniform(&s)
                if u < epsilon:
                    actions[i] = _below(&s, N_ACTIONS)
                else:
                    best = q[ctx, pos[i], 0]
                    ties = 1
                    for a in range(1, N_ACTIONS):
                        if q[ctx, pos[i], a] > best:
                            best = q[ctx, pos[i], a]
                            ties = 1
                        elif q[ctx, pos[i], a] == best:
                            ties += 1
                    k = 0
                    if ties > 1:
                        k = _below(&s, ties)
                    for a in range(N_ACTIONS):
                        if q[ctx, pos[i], a] == best:
                            if k == 0:
                                actions[i] = a
                                break
                            k -= 1

            pressed = self.env.step(&pos[0], pressed, &actions[0], &realized[0], &s)
            steps += 1

            for e in range(n_e):
                active[e] = 0
            self.env.label(&pos[0], pressed, &active[0])
            n_act = 0
            for e in range(n_e):
                if active[e]:
                    events[n_act] = e
                    n_act += 1
            if shuffle_events:
                for x in range(n_act - 1, 0, -1):
                    y = _below(&s, x + 1)
                    tmp = events[x]
                    events[x] = events[y]
                    events[y] = tmp

            sig_o = 0
            for i in range(n):
                sig[i] = 0
            for x in range(n_act):
                e = events[x]
                nu = self.otrans[o, e]
                if nu >= 0:
                    if not self.ogoal[o] and self.ogoal[nu]:
                        sig_o = 1
                    o = nu
                sharers = 0
                ready = True
                for i in range(n):
                    if self.in_les[d, i, e]:
                        sharers += 1
                        if self.strans[g[i], e] < 0:
                            ready = False
                for i in range(n):
                    if sharers > 0 and not (ready and self.in_les[d, i, e]):
                        continue
                    nxt = self.strans[g[i], e]
                    if nxt >= 0:
                        if not self.sgoal[g[i]] and self.sgoal[nxt]:
                            sig[i] = 1
                        g[i] = nxt

            for i in range(n):
                if sig[i] and sub_step[i] < 0:
                    sub_step[i] = steps
            if sig_o and overall_step < 0:
                overall_step = steps

            resolved = True
            for i in range(n):
                if not (self.sgoal[g[i]] or self.ssink[g[i]]):
                    resolved = False
            terminal = self.ogoal[o] or self.osink[o] or resolved

            if tracing:
                trace.append((steps, tuple([realized[i] for i in range(n)]),
                              tuple([pos[i] for i in range(n)]),
                              tuple([events[x] for x in range(n_act)]), o,
                              tuple([g[i] for i in range(n)])))

            if learn:
                for i in range(n):
                    r = 0.0
                    if sig[i]:
                        r += 1.0
                    if sig_o and (bonus_to_sink or not self.ssink[g[i]]):
                        r += bonus
                    ctx = g[i] * n_u + o if cond_overall else g[i]
                    target = r
                    if not terminal:
                        best = q[ctx, pos[i], 0]
                        for a in range(1, N_ACTIONS):
                            if q[ctx, pos[i], a] > best:
                                best = q[ctx, pos[i], a]
                        target = r + gamma * best
                    old = q[prev_ctx[i], prev_pos[i], actions[i]]
                    new = old + lr * (target - old)
                    if not isfinite(new):
                        raise FloatingPointError("non-finite action value")
                    q[prev_ctx[i], prev_pos[i], actions[i]] = new

        return (steps, overall_step, [sub_step[i] for i in range(n)],
                [self.ssink[g[i]] for i in range(n)], o, [g[i] for i in range(n)], int(s))
