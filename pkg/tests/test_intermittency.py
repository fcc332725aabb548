import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitpim.accumulator import NvMode
from bitpim.engine import NetworkProgram
from bitpim.exceptions import IntegrityError, ParameterError
from bitpim.intermittency import (
    ExecutionJournal,
    PowerTrace,
    compare_outputs,
    progress_stats,
    run_with_trace,
)

BIG = 10 ** 9


@pytest.fixture(scope="module")
def program(tiny_network):
    return NetworkProgram(tiny_network)


def _conv1_frame(program):
    return program.stages[0].job.frame_cycles(0)


def test_always_on(program, tiny_input, tiny_reference):
    res = run_with_trace(program, tiny_input, PowerTrace.always_on())
    assert res.complete
    assert res.stats["restores"] == 0 and res.stats["wasted_cycle_fraction"] == 0.0
    assert np.array_equal(res.output, tiny_reference)


def test_failure_right_after_checkpoint_replays_nothing(program, tiny_input, tiny_reference):
    cyc = program.params.checkpoint_cycles
    trace = PowerTrace(((2 * _conv1_frame(program) + cyc, 5), (BIG, 5)))
    res = run_with_trace(program, tiny_input, trace, checkpoint_interval=2)
    restores = [e for e in res.journal.events if e["kind"] == "restore"]
    assert len(restores) == 1 and restores[0]["detail"]["replay"] == 0
    assert res.stats["replayed_frames"] == 0
    assert np.array_equal(res.output, tiny_reference)


def test_torn_checkpoint_falls_back(program, tiny_input, tiny_reference):
    cyc = program.params.checkpoint_cycles
    trace = PowerTrace(((2 * _conv1_frame(program) + cyc - 1, 5), (BIG, 5)))
    res = run_with_trace(program, tiny_input, trace, checkpoint_interval=2)
    kinds = [e["kind"] for e in res.journal.events]
    first_loss = kinds.index("power_loss")
    assert "checkpoint" not in kinds[:first_loss]
    restore = res.journal.events[first_loss + 1]
    assert restore["detail"]["frame"] == 0 and restore["detail"]["replay"] == 2
    assert np.array_equal(res.output, tiny_reference)


def test_exhausted_trace_is_incomplete(program, tiny_input):
    res = run_with_trace(program, tiny_input, PowerTrace.periodic(100, 10, 3))
    assert not res.complete and res.output is None
    assert res.journal.events[-1]["kind"] == "power_loss"
    assert compare_outputs(res, np.zeros(5))["complete"] is False
    progress_stats(res.journal)


@settings(max_examples=15)
@given(st.integers(0, 10 ** 6), st.sampled_from([1, 3, 20]))
def test_invariance_and_replay_bound(program, tiny_input, tiny_reference, seed, k):
    trace = PowerTrace.exponential(seed, mean_on=20_000, mean_off=10, n_intervals=500)
    res = run_with_trace(program, tiny_input, trace, checkpoint_interval=k)
    assert res.complete
    assert np.array_equal(res.output, tiny_reference)
    assert all(e["detail"]["replay"] <= k for e in res.journal.events if e["kind"] == "restore")
    st_ = progress_stats(res.journal)
    assert 0.0 <= st_["wasted_cycle_fraction"] <= 1.0
    # each restore follows one fully used on-interval
    ons = np.cumsum([on for on, _ in trace.intervals])
    r = st_["restores"]
    assert (ons[r - 1] if r else 0) < res.powered_cycles <= ons[r] + program.params.restore_cycles


def test_wasted_fraction_grows_with_k(program, tiny_input):
    means = []
    for k in (1, 5, 20, 50):
        fr = [run_with_trace(program, tiny_input, PowerTrace.exponential(s, mean_on=20_000, mean_off=10), k)
              .stats["wasted_cycle_fraction"] for s in range(6)]
        means.append(np.mean(fr))
    assert means == sorted(means)
    assert means[0] < means[-1]


def test_one_ff_difference_reported(program, tiny_input, tiny_reference):
    diffs = []
    for seed in range(10):
        res = run_with_trace(program, tiny_input, PowerTrace.exponential(seed, mean_on=20_000, mean_off=10), 5,
                             NvMode.ONE_FF)
        cmp = compare_outputs(res, tiny_reference)
        assert cmp["identical"] == (cmp["max_abs_diff"] == 0.0)
        diffs.append(cmp["max_abs_diff"])
    assert max(diffs) > 0


def test_deterministic_journal(program, tiny_input):
    a = run_with_trace(program, tiny_input, PowerTrace.exponential(3, mean_on=20_000, mean_off=10))
    b = run_with_trace(program, tiny_input, PowerTrace.exponential(3, mean_on=20_000, mean_off=10))
    assert a.journal.to_jsonl() == b.journal.to_jsonl()


def test_journal_jsonl(tmp_path, program, tiny_input):
    res = run_with_trace(program, tiny_input, PowerTrace.exponential(1, mean_on=20_000, mean_off=10))
    path = tmp_path / "j.jsonl"
    text = res.journal.to_jsonl(path)
    for line in text.splitlines():
        assert set(json.loads(line)) == {"cycle", "kind", "detail"}
    again = ExecutionJournal.from_jsonl(path.read_text())
    assert progress_stats(again) == progress_stats(res.journal)


def test_trace_csv_roundtrip(tmp_path):
    t = PowerTrace.exponential(4, mean_on=100, mean_off=7, n_intervals=20)
    path = tmp_path / "t.csv"
    t.to_csv(path)
    assert PowerTrace.from_csv(path).intervals == t.intervals
    assert PowerTrace.exponential(4, 100, 7, 20) == t


def test_trace_validation():
    with pytest.raises(ParameterError):
        PowerTrace(((0, 5),))
    with pytest.raises(ParameterError):
        PowerTrace(((5, -1),))
    with pytest.raises(ParameterError):
        PowerTrace.exponential(0, mean_on=0)


def _journal(*events):
    j = ExecutionJournal()
    for cycle, kind in events:
        j.record(cycle, kind)
    return j


def test_progress_stats_empty_and_zero_restores():
    assert progress_stats(ExecutionJournal())["wasted_cycle_fraction"] == 0.0
    st_ = progress_stats(_journal((5, "frame_complete"), (9, "checkpoint"), (12, "frame_complete")))
    assert st_["completed_frames"] == 2 and st_["restores"] == 0 and st_["wasted_cycle_fraction"] == 0.0


@pytest.mark.parametrize("events", [
    [(5, "restore")],
    [(5, "power_loss"), (6, "frame_complete")],
    [(5, "frame_complete"), (4, "frame_complete")],
    [(1, "replay_end")],
    [(1, "replay_start"), (2, "replay_start")],
])
def test_progress_stats_rejects_bad_grammar(events):
    with pytest.raises(IntegrityError):
        progress_stats(_journal(*events))


def test_unknown_kind_rejected():
    with pytest.raises(IntegrityError):
        ExecutionJournal().record(1, "reboot")
    with pytest.raises(IntegrityError):
        progress_stats(ExecutionJournal([{"cycle": 1, "kind": "reboot", "detail": {}}]))
    with pytest.raises(IntegrityError):
        ExecutionJournal.from_jsonl("{not json}")
