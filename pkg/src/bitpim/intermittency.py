"""Power-failure injection for frame-level execution.

A :class:`PowerTrace` is a list of (on, off) intervals in cycles.
:func:`run_with_trace` drives a :class:`~bitpim.engine.NetworkProgram`
frame by frame.  Its clock is the cost model's per-frame cycle count, and it
only advances while power is on.  When an on-interval runs out, the volatile
accumulator state is dropped.  At the next power-on the last committed
checkpoint is restored and the frames since then are replayed.

Time base conventions:

* a failure that lands inside a frame loses that frame entirely (loss is
  rounded down to the last completed frame boundary);
* a checkpoint takes ``checkpoint_cycles``; if power fails inside it, the
  shadow slot was written but never committed, so it counts as no checkpoint;
* restore is atomic and takes ``restore_cycles`` at power-on;
* a finished layer's output feature map lives in the (non-volatile) array,
  and the next layer starts from a committed all-zero checkpoint.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .accumulator import NvMode
from .engine import NetworkProgram, Network, run_network
from .exceptions import IntegrityError, ParameterError

EVENT_KINDS = ("frame_complete", "checkpoint", "power_loss", "restore", "replay_start", "replay_end")


@dataclass(frozen=True)
class PowerTrace:
    intervals: tuple  # ((on, off), ...)
    kind: str = "explicit"
    seed: int | None = None

    def __post_init__(self):
        ivs = tuple((float(on) if math.isinf(on) else int(on), int(off)) for on, off in self.intervals)
        for i, (on, off) in enumerate(ivs):
            if not on > 0 or not off > 0:
                raise ParameterError(f"trace interval {i}: durations must be > 0, got ({on}, {off})")
        object.__setattr__(self, "intervals", ivs)

    def __len__(self):
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    @classmethod
    def periodic(cls, on: int, off: int, n_intervals: int = 1000) -> "PowerTrace":
        return cls(((on, off),) * int(n_intervals), kind="periodic")

    @classmethod
    def exponential(cls, seed: int, mean_on: float = 1e6, mean_off: float = 1e3, n_intervals: int = 1000) -> "PowerTrace":
        """Exponentially distributed on/off durations, rounded and floored at one cycle."""
        if mean_on <= 0 or mean_off <= 0:
            raise ParameterError("mean durations must be positive")
        rng = np.random.default_rng(seed)
        on = np.maximum(1, np.rint(rng.exponential(mean_on, n_intervals))).astype(np.int64)
        off = np.maximum(1, np.rint(rng.exponential(mean_off, n_intervals))).astype(np.int64)
        return cls(tuple(zip(on.tolist(), off.tolist())), kind="exponential", seed=seed)

    @classmethod
    def always_on(cls) -> "PowerTrace":
        return cls(((math.inf, 1),), kind="always_on")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["on", "off"])
        for on, off in self.intervals:
            w.writerow([on, off])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "PowerTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows and rows[0] and not rows[0][0].strip().lstrip("-").replace(".", "").isdigit() and rows[0][0].strip() != "inf":
            rows = rows[1:]
        intervals = []
        for lineno, row in enumerate(rows, 1):
            if not row:
                continue
            if len(row) != 2:
                raise ParameterError(f"{path}: row {lineno} needs two columns (on,off)")
            try:
                on = float(row[0])
                intervals.append((on if math.isinf(on) else int(on), int(row[1])))
            except ValueError:
                raise ParameterError(f"{path}: row {lineno} is not numeric") from None
        return cls(tuple(intervals), kind="explicit")


@dataclass
class ExecutionJournal:
    events: list = field(default_factory=list)

    def record(self, cycle: int, kind: str, **detail) -> None:
        if kind not in EVENT_KINDS:
            raise IntegrityError(f"unknown event kind {kind!r}")
        self.events.append({"cycle": int(cycle), "kind": kind, "detail": detail})

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e["kind"] == kind)

    def to_jsonl(self, path=None) -> str:
        text = "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_jsonl(cls, text: str) -> "ExecutionJournal":
        events = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                e = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IntegrityError(f"journal line {lineno}: {exc}") from None
            if not isinstance(e, dict) or set(e) != {"cycle", "kind", "detail"}:
                raise IntegrityError(f"journal line {lineno}: expected keys cycle, kind, detail")
            events.append(e)
        return cls(events)


@dataclass
class IntermittentResult:
    output: np.ndarray | None
    journal: ExecutionJournal
    complete: bool
    powered_cycles: int = 0
    frames_executed: int = 0

    @property
    def stats(self) -> dict:
        return progress_stats(self.journal)


class _PowerClock:
    """Walks the trace; ``spend`` fails once the current on-interval is used up."""

    def __init__(self, trace: PowerTrace):
        self.intervals = list(trace)
        self.index = 0
        self.left = self.intervals[0][0] if self.intervals else 0
        self.cycle = 0

    def fits(self, cycles: int) -> bool:
        return cycles <= self.left

    def spend(self, cycles: int) -> None:
        self.cycle += cycles
        self.left -= cycles

    def drain(self) -> None:
        """Power fails: the rest of the on-interval is burned without progress."""
        self.cycle += max(self.left, 0)
        self.left = 0

    def power_on(self) -> bool:
        self.index += 1
        if self.index >= len(self.intervals):
            return False
        self.left = self.intervals[self.index][0]
        return True


def run_with_trace(program, x, trace: PowerTrace, checkpoint_interval: int = 20,
                   nv_mode: NvMode = NvMode.TWO_FF) -> IntermittentResult:
    """Run ``x`` through ``program`` under ``trace``; see the module docstring for the time base."""
    if isinstance(program, Network):
        program = NetworkProgram(program)
    if checkpoint_interval < 1:
        raise ParameterError("checkpoint interval must be >= 1")
    nv_mode = NvMode(nv_mode)
    params = program.params
    clock = _PowerClock(trace)
    journal = ExecutionJournal()
    act = x
    executed = 0
    if not clock.intervals:
        return IntermittentResult(None, journal, False)

    for li, stage in enumerate(program.stages):
        job = stage.job
        if job.n_frames == 0:  # pooling runs in the EPU, outside the frame loop
            act = stage.finish(act, None)
            continue
        stage.prepare(act)
        acc = job.new_accumulator(checkpoint_interval, nv_mode)
        acc.tag = 0
        acc.checkpoint()  # layer entry: committed zero state
        durable = clock.cycle
        cursor = 0
        high_water = 0  # frames of this layer completed at least once
        replay_end_at = None
        torn = False
        while cursor < job.n_frames:
            cost = job.frame_cycles(cursor)
            if torn or not clock.fits(cost):
                torn = False
                clock.drain()
                journal.record(clock.cycle, "power_loss", layer=li, frame=cursor,
                               lost_cycles=clock.cycle - durable)
                acc.power_loss()
                replay_end_at = None
                if not clock.power_on():
                    return IntermittentResult(None, journal, False, clock.cycle, executed)
                acc.restore()
                cursor = acc.tag
                replay = high_water - cursor
                journal.record(clock.cycle, "restore", layer=li, frame=cursor, replay=replay)
                clock.spend(params.restore_cycles)
                durable = clock.cycle
                if replay > 0:
                    journal.record(clock.cycle, "replay_start", layer=li, frame=cursor, frames=replay)
                    replay_end_at = high_water
                continue

            job.run_frame(cursor, acc)
            clock.spend(cost)
            executed += 1
            cursor += 1
            replaying = replay_end_at is not None
            journal.record(clock.cycle, "frame_complete", layer=li, frame=cursor - 1, replay=replaying)
            high_water = max(high_water, cursor)
            if replaying and cursor >= replay_end_at:
                journal.record(clock.cycle, "replay_end", layer=li, frame=cursor)
                replay_end_at = None

            if acc.frame_complete() and cursor < job.n_frames:
                acc.tag = cursor
                acc.begin_checkpoint()
                if not clock.fits(params.checkpoint_cycles):
                    torn = True  # power fails between shadow write and flag flip
                    continue
                clock.spend(params.checkpoint_cycles)
                acc.commit_checkpoint()
                durable = clock.cycle
                journal.record(clock.cycle, "checkpoint", layer=li, frame=cursor)
        act = stage.finish(act, acc)
        durable = clock.cycle

    out = np.asarray(act, dtype=np.float64).reshape(-1)
    return IntermittentResult(out, journal, True, clock.cycle, executed)


def compare_outputs(result: IntermittentResult, reference) -> dict:
    """Difference between an intermittent run and the uninterrupted reference."""
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    if result.output is None:
        return {"complete": False, "identical": False, "max_abs_diff": math.nan, "mismatched": ref.size}
    diff = np.abs(result.output - ref)
    return {
        "complete": True,
        "identical": bool(np.array_equal(result.output, ref)),
        "max_abs_diff": float(diff.max(initial=0.0)),
        "mismatched": int(np.count_nonzero(result.output != ref)),
    }


def reference_output(program, x) -> np.ndarray:
    return run_network(program, x).scores


def progress_stats(journal: ExecutionJournal) -> dict:
    """Completed frames, restores, replay totals and the wasted-cycle fraction.

    Checks the event grammar: cycle stamps never decrease, every power loss
    is followed directly by a restore (or ends the journal), and replay
    markers pair up.
    """
    completed = replayed = restores = losses = lost = 0
    last = -1
    awaiting_restore = False
    in_replay = False
    for i, e in enumerate(journal.events):
        try:
            cycle, kind, detail = int(e["cycle"]), e["kind"], e["detail"]
        except (KeyError, TypeError, ValueError):
            raise IntegrityError(f"event {i} is malformed") from None
        if kind not in EVENT_KINDS:
            raise IntegrityError(f"event {i}: unknown kind {kind!r}")
        if cycle < last:
            raise IntegrityError(f"event {i}: cycle {cycle} precedes {last}")
        last = cycle
        if awaiting_restore and kind != "restore":
            raise IntegrityError(f"event {i}: {kind} after power_loss without restore")
        if kind == "power_loss":
            losses += 1
            lost += int(detail.get("lost_cycles", 0))
            awaiting_restore = True
            in_replay = False
        elif kind == "restore":
            if not awaiting_restore:
                raise IntegrityError(f"event {i}: restore without power_loss")
            awaiting_restore = False
            restores += 1
        elif kind == "replay_start":
            if in_replay:
                raise IntegrityError(f"event {i}: nested replay_start")
            in_replay = True
        elif kind == "replay_end":
            if not in_replay:
                raise IntegrityError(f"event {i}: replay_end without replay_start")
            in_replay = False
        elif kind == "frame_complete":
            if detail.get("replay"):
                replayed += 1
            else:
                completed += 1
    powered = max(last, 0)
    wasted = lost / powered if powered else 0.0
    if not 0.0 <= wasted <= 1.0:
        raise IntegrityError(f"lost cycles {lost} exceed powered cycles {powered}")
    return {
        "completed_frames": completed,
        "replayed_frames": replayed,
        "restores": restores,
        "power_losses": losses,
        "lost_cycles": lost,
        "powered_cycles": powered,
        "wasted_cycle_fraction": wasted,
    }
