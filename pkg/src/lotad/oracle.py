"""Brute-force trace equivalence between an RM and a decomposition.

Walks every event string up to a length bound, stepping the original machine
and the synchronized sub-task machines side by side, and compares acceptance
after every prefix. Configurations already reached at a smaller depth are not
expanded again: everything reachable from them within the remaining budget was
already covered, so the check is exact for the bound.
"""
from __future__ import annotations

from collections import deque
from typing import Sequence

from .rm import RewardMachine


def _sync(subs: Sequence[RewardMachine], les: Sequence[frozenset[str]],
          states: tuple[str, ...], e: str) -> tuple[str, ...]:
    owners = [i for i, s in enumerate(les) if e in s]
    if not owners or not all(subs[i].defined(states[i], e) for i in owners):
        return states
    nxt = list(states)
    for i in owners:
        nxt[i] = subs[i].step(states[i], e)
    return tuple(nxt)


def trace_equivalent(rm: RewardMachine, subs: Sequence[RewardMachine],
                     les: Sequence[frozenset[str]], max_len: int | None = None
                     ) -> tuple[bool, tuple[str, ...] | None]:
    """(agrees, counterexample) over all single-event strings up to ``max_len``.

    ``max_len`` defaults to twice the number of states of ``rm``.
    """
    if max_len is None:
        max_len = 2 * len(rm.states)
    alphabet = rm.sorted_alphabet()
    start = (rm.initial, tuple(s.initial for s in subs))
    seen = {start}
    queue = deque([(start, ())])
    while queue:
        (u, states), word = queue.popleft()
        if (u in rm.goals) != all(q in s.goals for q, s in zip(states, subs)):
            return False, word
        if len(word) == max_len:
            continue
        for e in alphabet:
            nxt = (rm.step(u, e), _sync(subs, les, states, e))
            if nxt not in seen:
                seen.add(nxt)
                queue.append((nxt, word + (e,)))
    return True, None


def goal_reachable(rm: RewardMachine) -> bool:
    return bool(rm.reachable() & rm.goals)
