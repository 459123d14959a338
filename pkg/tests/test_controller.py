from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mocks import FunctionBackend, RandomBackend
from slotuner.backend import BackendError
from slotuner.controller import decide_move, run_tuning
from slotuner.knobs import live_k0, live_space, neighbors
from slotuner.scoring import ScoreWeights

FREE = ScoreWeights(w_conc=0, w_max=0, w_spec=0)


def test_decide_move_examples():
    assert decide_move(1.0, 1.0, 1.03, 1.2, 0.02)
    assert not decide_move(1.0, 1.0, 1.01, 1.2, 0.02)
    assert decide_move(1.0, 1.3, 1.001, 1.2, 0.02)


def test_decide_move_never_onto_equal_or_worse():
    assert not decide_move(1.0, 5.0, 1.0, 1.2, 0.0)
    assert not decide_move(1.0, None, 0.5, 1.2, 0.0)
    assert not decide_move(-math.inf, None, -math.inf, 1.2, 0.0)


def test_missing_p99_counts_as_violation():
    assert decide_move(-math.inf, None, 0.001, 1.2, 100.0)


def test_concave_surface_reaches_optimum():
    backend = FunctionBackend(lambda k: (100.0 - (k["conc"] - 10) ** 2, 0.5))
    traj = run_tuning(backend, live_space(), live_k0().replace(conc=2), 8, 1.2, 0.02, FREE)
    assert traj.best["conc"] == 10
    visited = [s.current.knobs["conc"] for s in traj.steps]
    assert visited[:5] == [2, 4, 6, 8, 10]
    assert traj.steps[-1].moved_to is None


def test_infinite_delta_never_moves_without_violation():
    backend = FunctionBackend(lambda k: (float(k["conc"]), 0.5))
    traj = run_tuning(backend, live_space(), live_k0(), 5, 1.2, math.inf, FREE)
    assert traj.moves == 0
    assert {s.current.knobs for s in traj.steps} == {live_k0()}


def test_violation_escape_moves_below_delta():
    # current violates; conc 6 neighbor is marginally better, far below delta
    def fn(k):
        if k == live_k0():
            return 10.0, 1.5
        if k == live_k0().replace(conc=6):
            return 11.5 + 1e-6, 1.5
        return 0.0, 3.0

    backend = FunctionBackend(fn)
    traj = run_tuning(backend, live_space(), live_k0(), 1, 1.2, 1.0, FREE)
    assert traj.steps[0].moved_to == live_k0().replace(conc=6)


def test_ties_go_to_first_neighbor():
    backend = FunctionBackend(lambda k: (5.0 if k == live_k0() else 6.0, 0.5))
    traj = run_tuning(backend, live_space(), live_k0(), 1, 1.2, 0.02, FREE)
    assert traj.steps[0].moved_to == neighbors(live_space(), live_k0())[0]


def test_segment_accounting_and_step_structure():
    backend = FunctionBackend(lambda k: (float(k["conc"] + k["max_seqs"]), 0.5))
    sp = live_space()
    traj = run_tuning(backend, sp, live_k0(), 8, 1.2, 0.02)
    assert len(traj.steps) == 8
    assert traj.segments == len(backend.calls) <= 8 * 8 + 1
    for s in traj.steps:
        assert [e.knobs for e in s.neighbor_results] == neighbors(sp, s.current.knobs)
        if s.moved_to is not None:
            assert s.moved_to in [e.knobs for e in s.neighbor_results]
            star = next(e for e in s.neighbor_results if e.knobs == s.moved_to)
            assert star.score > s.current.score
    # the final re-measure targets the best point and uses step budget + 1
    assert backend.calls[-1] == (traj.best, 9)


def test_failed_segments_score_minus_inf_and_run_continues():
    def fn(k):
        if k["conc"] == 6:
            raise BackendError("boom")
        return float(k["conc"]), 0.5

    traj = run_tuning(FunctionBackend(fn), live_space(), live_k0(), 2, 1.2, 0.02, FREE)
    failed = [e for s in traj.steps for e in s.neighbor_results if e.failed]
    assert failed and all(e.score == -math.inf for e in failed)
    assert traj.best["conc"] != 6


def test_fail_fast_on_first_segment():
    class Down(FunctionBackend):
        def measure(self, knobs, *, step=None):
            raise BackendError("server never came up")

    with pytest.raises(BackendError):
        run_tuning(Down(lambda k: (0, 0)), live_space(), live_k0(), 2, 1.2, 0.02, fail_fast=True)
    traj = run_tuning(Down(lambda k: (0, 0)), live_space(), live_k0(), 2, 1.2, 0.02)
    assert traj.best_score == -math.inf


def test_strict_mode_keeps_best_from_current_points_only():
    # a neighbor is great but never moved to (current is fine and delta is huge)
    def fn(k):
        return (50.0, 0.5) if k["conc"] == 10 else (10.0, 0.5)

    sp = live_space()
    loose = run_tuning(FunctionBackend(fn), sp, live_k0(), 2, 1.2, math.inf, FREE)
    strict = run_tuning(FunctionBackend(fn), sp, live_k0(), 2, 1.2, math.inf, FREE, strict_alg1=True)
    assert loose.best["conc"] == 10
    assert strict.best == live_k0()


def test_invalid_arguments():
    backend = FunctionBackend(lambda k: (1.0, 0.5))
    with pytest.raises(ValueError):
        run_tuning(backend, live_space(), live_k0(), 0, 1.2, 0.02)
    with pytest.raises(ValueError):
        run_tuning(backend, live_space(), live_k0().replace(conc=40), 1, 1.2, 0.02)


def test_deterministic_backend_reproducible():
    fn = lambda k: (float(k["conc"] * 3 - k["max_seqs"]), 0.4 + 0.1 * k["spec_tokens"])  # noqa: E731
    a = run_tuning(FunctionBackend(fn), live_space(), live_k0(), 6, 1.2, 0.02)
    b = run_tuning(FunctionBackend(fn), live_space(), live_k0(), 6, 1.2, 0.02)
    assert [s.current.knobs for s in a.steps] == [s.current.knobs for s in b.steps]
    assert a.best == b.best and a.best_score == b.best_score


@given(st.integers(0, 10_000), st.booleans())
def test_best_so_far_invariants_on_random_backend(seed, strict):
    backend = RandomBackend(seed)
    traj = run_tuning(backend, live_space(), live_k0(), 4, 1.2, 0.02, strict_alg1=strict)
    bests = [s.best_score for s in traj.steps]
    assert all(a <= b for a, b in zip(bests, bests[1:]))
    seen = [s.current.score for s in traj.steps]
    if not strict:
        seen += [e.score for s in traj.steps for e in s.neighbor_results]
    assert traj.best_score == max(seen)
    assert traj.segments == backend.calls
    for s in traj.steps:
        if s.moved_to is not None:
            star = max(e.score for e in s.neighbor_results)
            assert star > s.current.score
