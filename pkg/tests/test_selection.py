import io
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lotad.selection import (
    SelectorState,
    SelectorTrace,
    ValueEstimate,
    closed_form_value,
    decomposition_score,
    record_episode,
    select,
    update_value,
)


def fold(rewards, alpha):
    v = ValueEstimate()
    for r in rewards:
        v = update_value(v, r, alpha)
    return v


def test_value_recursion_example():
    assert fold([1, 0, 1], 0.5).value == pytest.approx(1.25)
    assert closed_form_value([1, 0, 1], 0.5) == pytest.approx(1.25)


def test_alpha_one_is_plain_sum():
    assert fold([0.2, 0.5, 1.0, 0.0], 1.0).value == pytest.approx(1.7)


def test_no_episodes():
    assert ValueEstimate().value == 0.0
    assert ValueEstimate().normalized(0.7) == 0.0


@given(st.lists(st.floats(0, 1), max_size=30), st.floats(0.05, 1.0))
def test_recursion_matches_closed_form(rewards, alpha):
    v = fold(rewards, alpha)
    if rewards:
        assert v.value == pytest.approx(closed_form_value(rewards, alpha), abs=1e-9)
    assert 0.0 <= v.normalized(alpha) <= 1.0 + 1e-12


def arm_with(state, j, rewards):
    for r in rewards:
        state.record(j, r if isinstance(r, (list, tuple)) else [r])


def test_score_examples():
    s = SelectorState(1, 1)
    assert decomposition_score(s, 0) == 0.0
    arm_with(s, 0, [1, 1, 1, 0])
    assert decomposition_score(s, 0) == pytest.approx(0.75)

    s = SelectorState(1, 2)
    s.values[0] = [ValueEstimate(0.4, 1), ValueEstimate(0.8, 1)]
    s.visits[0] = 1
    assert decomposition_score(s, 0) == pytest.approx(0.6)


def test_select_unvisited_first():
    s = SelectorState(3, 1)
    assert select(s) == 0
    s.record(0, [1.0])
    assert select(s) == 1


def ucb(mean, n, total, beta=0.5):
    return mean + beta * math.sqrt(math.log(total) / n)


def test_select_prefers_high_score_at_equal_counts():
    s = SelectorState(2, 1)
    arm_with(s, 0, [1] * 45 + [0] * 5)
    arm_with(s, 1, [1] * 5 + [0] * 45)
    assert s.total_episodes == 100
    assert ucb(0.9, 50, 100) > ucb(0.1, 50, 100)
    assert select(s) == 0


def test_select_prefers_rare_arm_at_equal_scores():
    s = SelectorState(2, 1)
    arm_with(s, 0, [1, 0] * 45)
    arm_with(s, 1, [1, 0] * 5)
    assert ucb(0.5, 10, 100) > ucb(0.5, 90, 100)
    assert select(s) == 1


def test_record_isolation_and_counts():
    s = SelectorState(3, 2)
    record_episode(s, 2, [1.0, 1.0])
    record_episode(s, 2, [1.0, 1.0])
    assert s.visits == [0, 0, 2]
    assert s.total_episodes == 2
    assert s.values[2][0].value == 2.0
    assert s.score(2) == 1.0


@pytest.mark.parametrize("r", [1.5, -0.1])
def test_reward_out_of_range(r):
    with pytest.raises(ValueError):
        SelectorState(1, 1).record(0, [r])


def test_wrong_reward_count():
    with pytest.raises(ValueError):
        SelectorState(1, 2).record(0, [1.0])


@pytest.mark.parametrize("kw", [{"n_arms": 0}, {"alpha": 0.0}, {"alpha": 1.5}, {"beta": -1}])
def test_bad_parameters(kw):
    args = {"n_arms": 2, "n_agents": 1} | kw
    with pytest.raises(ValueError):
        SelectorState(**args)


def test_every_arm_keeps_being_tried():
    s = SelectorState(3, 1)
    for _ in range(3000):
        j = s.select()
        s.record(j, [0.6 if j == 0 else 0.4])
    assert all(n > 0 for n in s.visits)
    assert s.visits[0] > s.visits[1] and s.visits[0] > s.visits[2]
    # the log-bonus keeps the losing arms growing, just slowly
    assert min(s.visits[1:]) >= 10


def test_best_breaks_ties_by_index():
    s = SelectorState(3, 1)
    assert s.best() == 0


def test_trace_csv():
    s = SelectorState(2, 1)
    fh = io.StringIO()
    tr = SelectorTrace(fh, s)
    for ep in range(3):
        j = s.select()
        tr.write(ep, j)
        s.record(j, [0.5])
    lines = fh.getvalue().splitlines()
    assert lines[0] == "episode,selected_id,n_0,n_1,score_0,score_1,bonus_0,bonus_1"
    assert len(lines) == 4
    assert lines[1].startswith("0,0,0,0,")
    assert "inf" in lines[1]
