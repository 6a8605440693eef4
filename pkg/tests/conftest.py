import pytest

from lotad.rm import RewardMachine


def machine(trans, goals, initial="u-1", alphabet=None, sinks=()):
    """Build a machine from (u, e, v) triples; states and alphabet are inferred."""
    states = {initial} | set(goals) | set(sinks)
    events = set(alphabet or ())
    table = {}
    for u, e, v in trans:
        states |= {u, v}
        events.add(e)
        table[(u, e)] = v
    return RewardMachine(states, initial, events, table, set(goals), set(sinks))


@pytest.fixture
def chain():
    # u-1 --a--> u0 --b--> u*
    return machine([("u-1", "a", "u0"), ("u0", "b", "u*")], {"u*"})


@pytest.fixture
def diamond():
    # a and b in either order
    return machine(
        [("u-1", "a", "ua"), ("u-1", "b", "ub"), ("ua", "b", "u*"), ("ub", "a", "u*")], {"u*"}
    )
