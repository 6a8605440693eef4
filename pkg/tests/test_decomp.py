import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import machine
from lotad.decomp import (
    ConstraintError,
    Decomposition,
    GenerationConstraints,
    LocalEventSet,
    NoValidDecomposition,
    ProjectionError,
    bisimilar,
    decompose,
    enumerate_candidates,
    is_valid,
    make_accident_avoidance,
    monolithic,
    parallel_compose,
    parse_candidates,
    parse_constraints,
    project,
    score_decomposition,
    serialize_candidates,
)
from lotad.envs import builtin_path
from lotad.rm import load_rm


@pytest.fixture(scope="module")
def four_buttons():
    return load_rm(builtin_path("four_buttons", "rm"))


@pytest.fixture(scope="module")
def repairs():
    return load_rm(builtin_path("repairs", "rm"))


def words(alphabet, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(sorted(alphabet), repeat=n)


# projection

def test_project_full_set_is_isomorphic(chain):
    sub = project(chain, chain.alphabet)
    assert len(sub.machine.states) == 3
    assert bisimilar(sub.machine, chain)


def test_project_empty_set_collapses_to_goal(chain):
    sub = project(chain, set())
    m = sub.machine
    assert len(m.states) == 1
    assert m.initial in m.goals
    assert sub.origin_classes[m.initial] == chain.states


def test_project_four_buttons_yellow_green(four_buttons):
    # Blue and red become invisible, so only "both yellow and green" remains.
    sub = project(four_buttons, {"Y_B", "G_B"}).machine
    assert len(sub.states) == 4
    for w in words({"Y_B", "G_B"}, 8):
        expected = "Y_B" in w and "G_B" in w
        assert sub.accepts([{e} for e in w]) == expected, w


def test_project_origin_classes_partition(four_buttons):
    sub = project(four_buttons, {"Y_B", "G_B"})
    classes = list(sub.origin_classes.values())
    assert frozenset().union(*classes) == four_buttons.states
    assert sum(len(c) for c in classes) == len(four_buttons.states)


def test_project_nondeterminism_raises():
    # Merging u-1 and u1 through b leaves two targets for a.
    rm = machine([("u-1", "a", "u0"), ("u-1", "b", "u1"), ("u1", "a", "u2"),
                  ("u0", "c", "u*"), ("u2", "c", "u*")], {"u*"})
    with pytest.raises(ProjectionError, match="nondeterministic"):
        project(rm, {"a", "c"})


def test_project_goal_class_with_exit_raises():
    # b is hidden, so u0 merges with the goal while a still leaves u0.
    rm = machine([("u-1", "a", "u0"), ("u0", "b", "u*"), ("u0", "a", "u1")], {"u*"})
    with pytest.raises(ProjectionError, match="goal class"):
        project(rm, {"a"})


def test_project_unknown_event_raises(chain):
    with pytest.raises(ProjectionError):
        project(chain, {"zzz"})


def test_project_accepts_local_event_set(chain):
    a = project(chain, LocalEventSet(0, frozenset({"a"}))).machine
    b = project(chain, {"a"}).machine
    assert a == b


# accident avoidance

def test_accident_avoidance_noop_when_covered(chain):
    sub = project(chain, {"a"})
    les = [LocalEventSet(0, frozenset({"a"})), LocalEventSet(1, frozenset({"b"}))]
    assert make_accident_avoidance(sub, les) is sub


def test_accident_avoidance_adds_sink_edges():
    rm = machine([("u-1", "a", "u0"), ("u0", "b", "u*"), ("u-1", "x", "u2")], {"u*"},
                 alphabet={"a", "b", "x"})
    sub = project(rm, {"a", "b"})
    out = make_accident_avoidance(sub, [LocalEventSet(0, frozenset({"a", "b"}))]).machine
    (sink,) = out.sinks
    assert sink not in sub.machine.states
    for u in out.states - out.goals - out.sinks:
        assert out.transitions[(u, "x")] == sink
    for g in out.goals:
        assert (g, "x") not in out.transitions
    assert not any(u == sink for (u, _) in out.transitions)


# composition

def test_compose_unary(chain):
    assert bisimilar(parallel_compose([chain]), chain)


def test_compose_disjoint_chains_grid():
    m1 = machine([("a0", "a", "a*")], {"a*"}, initial="a0")
    m2 = machine([("b0", "b", "b*")], {"b*"}, initial="b0")
    p = parallel_compose([m1, m2])
    assert len(p.states) == 4
    assert len(p.goals) == 1
    assert p.accepts([{"a"}, {"b"}]) and p.accepts([{"b"}, {"a"}])
    assert not p.accepts([{"a"}])


def test_compose_shared_event_waits_for_all_sharers():
    m1 = machine([("q0", "a", "q1"), ("q1", "s", "q*")], {"q*"}, initial="q0")
    m2 = machine([("r0", "s", "r*")], {"r*"}, initial="r0")
    p = parallel_compose([m1, m2])
    assert p.step(p.initial, "s") == p.initial
    assert p.accepts([{"a"}, {"s"}])


def test_compose_requires_machines():
    with pytest.raises(ValueError):
        parallel_compose([])


# bisimilarity

def test_bisimilar_reflexive(diamond):
    assert bisimilar(diamond, diamond)


def test_bisimilar_ignores_unreachable_states(chain):
    extra = machine([("u-1", "a", "u0"), ("u0", "b", "u*"), ("zz", "a", "u*")], {"u*"})
    assert bisimilar(chain, extra)


def test_bisimilar_detects_different_goal_event():
    ga = machine([("u-1", "a", "u*")], {"u*"}, alphabet={"a", "b"})
    gb = machine([("u-1", "b", "u*")], {"u*"}, alphabet={"a", "b"})
    assert not bisimilar(ga, gb)


# validity and score

def test_full_les_is_valid(four_buttons):
    assert is_valid(four_buttons, decompose(four_buttons, [four_buttons.alphabet]))


def test_all_empty_is_invalid(four_buttons):
    assert not is_valid(four_buttons, decompose(four_buttons, [set(), set()]))


def test_four_buttons_split_valid(four_buttons):
    d = decompose(four_buttons, [{"Y_B", "R_B"}, {"G_B", "B_B"}])
    assert is_valid(four_buttons, d)


def test_score_values():
    assert score_decomposition([{"a", "b"}, {"c", "d"}]) == -4.0
    assert score_decomposition([{"a", "b"}, {"c", "d"}]) > score_decomposition(
        [{"a", "b", "c"}, {"d"}]
    )


# enumeration

def test_enumerate_single_event_two_agents():
    rm = machine([("u-1", "a", "u*")], {"u*"})
    cands = enumerate_candidates(rm, n=2)
    assert [d.les for d in cands] == [
        (frozenset(), frozenset({"a"})),
        (frozenset({"a"}), frozenset()),
        (frozenset({"a"}), frozenset({"a"})),
    ]
    assert [d.id for d in cands] == [0, 1, 2]
    assert cands[0].score == pytest.approx(-1.25)
    assert cands[2].score == pytest.approx(-2.0)


def test_enumerate_k1_is_argmax(four_buttons):
    top = enumerate_candidates(four_buttons, constraints=GenerationConstraints(2, k=1))
    everything = enumerate_candidates(four_buttons, constraints=GenerationConstraints(2, k=10**6))
    assert len(top) == 1
    assert top[0].les == everything[0].les
    assert top[0].score == max(d.score for d in everything)


@pytest.mark.parametrize("k", [1, 3, 10, 50])
def test_enumerate_sorted_and_bounded(four_buttons, k):
    cands = enumerate_candidates(four_buttons, constraints=GenerationConstraints(2, k=k))
    assert len(cands) <= k
    scores = [d.score for d in cands]
    assert scores == sorted(scores, reverse=True)
    for d in cands:
        assert is_valid(four_buttons, d)


def test_repairs_signal_in_every_les(repairs):
    cons = parse_constraints(open(builtin_path("repairs", "constraints")).read(), 3)
    cands = enumerate_candidates(repairs, constraints=cons)
    assert cands
    for d in cands:
        assert all("Signal" in s for s in d.les)


def test_required_forbidden_overlap_raises():
    with pytest.raises(ConstraintError, match="required and forbidden"):
        GenerationConstraints(2, forbidden=[{"a"}, set()], required=[{"a"}, set()])


def test_parse_constraints_all_agents():
    c = parse_constraints("required *: s\nforbidden 2: a b  # comment\n", 2)
    assert c.required == [frozenset({"s"}), frozenset({"s"})]
    assert c.forbidden == [frozenset(), frozenset({"a", "b"})]


@pytest.mark.parametrize("text", ["forbidden 3: a", "wanted 1: a", "required x: a", "required 1 a"])
def test_parse_constraints_errors(text):
    with pytest.raises(ConstraintError):
        parse_constraints(text, 2)


def test_no_admissible_agent_raises(chain):
    c = GenerationConstraints(1, forbidden=[{"a"}])
    with pytest.raises(NoValidDecomposition):
        enumerate_candidates(chain, constraints=c)


def test_assignment_cap(four_buttons):
    with pytest.raises(NoValidDecomposition, match="cap"):
        enumerate_candidates(four_buttons, n=2, cap=10)


def test_candidates_round_trip(four_buttons):
    cands = enumerate_candidates(four_buttons, n=2)
    back = parse_candidates(serialize_candidates(cands))
    assert len(back) == len(cands)
    for d, (i, s, les, rms) in zip(cands, back):
        assert i == d.id and s == d.score
        assert tuple(les) == d.les
        assert rms == [sub.machine for sub in d.subtasks]


def test_monolithic(four_buttons):
    d = monolithic(four_buttons, 3)
    assert d.les == (four_buttons.alphabet,) * 3
    assert is_valid(four_buttons, d)
    assert isinstance(d, Decomposition)


# properties

event_sets = st.sets(st.sampled_from(["Y_B", "G_B", "B_B", "R_B"]))


@settings(max_examples=40, deadline=None)
@given(event_sets)
def test_projection_idempotent(four_buttons, events):
    try:
        once = project(four_buttons, events).machine
    except ProjectionError:
        return
    twice = project(once, events).machine
    assert bisimilar(once, twice)


@settings(max_examples=40, deadline=None)
@given(event_sets, event_sets)
def test_accident_avoidance_preserves_covered_runs(four_buttons, s1, s2):
    try:
        d = decompose(four_buttons, [s1, s2])
    except ProjectionError:
        return
    covered = s1 | s2
    for sub, exe in zip(d.subtasks, d.executable()):
        for w in words(sub.machine.alphabet, 4):
            assert set(w) <= covered
            assert sub.machine.run([{e} for e in w]) == exe.machine.run([{e} for e in w])
