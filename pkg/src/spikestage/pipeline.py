"""The on-device loop: detect, capture, classify, emit.

A four-state machine consumes one ADC sample per tick:

    INIT        threshold updating enabled; leaves for RUNNING once the
                detector's convergence flag latches
    RUNNING     threshold frozen; a detection moves to DETECTED
    DETECTED    appends the smoothed sample (divided by 4, clamped to int8)
                to the capture buffer; after the 40th sample, CLASSIFYING
    CLASSIFYING runs the quantized classifier once, emits at most one event,
                occupies classify_ticks ticks, then returns to RUNNING

New detections are ignored outside RUNNING, so honored detections are at
least 40 + classify_ticks ticks apart and each one captures exactly 40
samples.  Event timestamps are the detection ticks, strictly increasing.
False-positive classifications produce no event unless configured to.

Two implementations: the Pipeline class steps tick by tick and is the
behavioural reference; run_pipeline computes the identical result from
whole-stream array passes and is what the CLI uses.  The pipeline is
single-threaded by construction; instances must not be shared.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from . import detector as det
from .errors import FormatError, ValidationError
from .nn import (
    ACT_QMAX,
    ACT_QMIN,
    WAVEFORM_SAMPLES,
    QuantizedMlpModel,
    SpikeClass,
    infer_quantized_batch,
)


class FsmState(Enum):
    INIT = "init"
    RUNNING = "running"
    DETECTED = "detected"
    CLASSIFYING = "classifying"


class PipelineEvent(NamedTuple):
    timestamp: int  # detection tick
    klass: SpikeClass


@dataclass(frozen=True)
class PipelineOptions:
    classify_ticks: int = 1  # ticks the classifier occupies per invocation
    store_false_positives: bool = False  # emit F classifications as events

    def __post_init__(self):
        if self.classify_ticks < 1:
            raise ValidationError("classify_ticks must be at least 1")


@dataclass
class RunStats:
    """Tick and event accounting for one run."""

    total_ticks: int = 0
    init_ticks: int = 0
    running_ticks: int = 0
    detected_ticks: int = 0
    classifying_ticks: int = 0
    detections: int = 0
    classify_invocations: int = 0
    class_counts: dict = field(
        default_factory=lambda: {k.name: 0 for k in SpikeClass}
    )
    events_emitted: int = 0
    converged_tick: int | None = None
    threshold: float = 0.0

    def to_dict(self) -> dict:
        return {
            "total_ticks": self.total_ticks,
            "init_ticks": self.init_ticks,
            "running_ticks": self.running_ticks,
            "detected_ticks": self.detected_ticks,
            "classifying_ticks": self.classifying_ticks,
            "detections": self.detections,
            "classify_invocations": self.classify_invocations,
            "class_counts": dict(self.class_counts),
            "events_emitted": self.events_emitted,
            "converged_tick": self.converged_tick,
            "threshold": self.threshold,
        }


def quantize_capture(y: float) -> int:
    """Smoothed sample -> stored int8 count: divide by 4, floor, clamp.

    The divide-by-4 drops the two least significant bits of a 10-bit ADC
    value, which is a floor toward minus infinity in two's complement.
    """
    q = math.floor(y * 0.25)
    if q < ACT_QMIN:
        return ACT_QMIN
    if q > ACT_QMAX:
        return ACT_QMAX
    return q


def quantize_capture_array(y: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(y, dtype=np.float64) * 0.25), ACT_QMIN, ACT_QMAX).astype(
        np.int8
    )


class Pipeline:
    """Tick-by-tick reference implementation."""

    def __init__(
        self,
        model: QuantizedMlpModel,
        det_cfg: det.DetectorConfig | None = None,
        options: PipelineOptions | None = None,
    ):
        if model.topology[0] != WAVEFORM_SAMPLES:
            raise ValidationError(
                f"pipeline model must take {WAVEFORM_SAMPLES} inputs, got {model.topology[0]}"
            )
        self.model = model
        self.det_cfg = det_cfg or det.DetectorConfig()
        self.options = options or PipelineOptions()
        self.detector = det.DetectorState()
        self.fsm = FsmState.INIT
        self.stats = RunStats()
        self._buffer: list[int] = []
        self._detection_tick = 0
        self._countdown = 0
        self._last_event_ts: int | None = None

    def request_reconvergence(self) -> None:
        """Host command: drop back to INIT and let the threshold re-settle.

        Any capture or classification in flight is abandoned.
        """
        det.request_reconvergence(self.detector)
        self._buffer = []
        self.fsm = FsmState.INIT

    def step(self, x: float) -> PipelineEvent | None:
        """Process one raw sample; returns the event emitted on this tick."""
        tick = self.detector.ticks
        state = self.fsm
        detected = det.detector_step(
            self.detector, self.det_cfg, x, update_threshold_enabled=state is FsmState.INIT
        )
        stats = self.stats
        stats.total_ticks += 1
        event = None
        if state is FsmState.INIT:
            stats.init_ticks += 1
            if self.detector.converged:
                stats.converged_tick = tick
                stats.threshold = self.detector.threshold
                self.fsm = FsmState.RUNNING
        elif state is FsmState.RUNNING:
            stats.running_ticks += 1
            if detected:
                stats.detections += 1
                self._detection_tick = tick
                self._buffer = []
                self.fsm = FsmState.DETECTED
        elif state is FsmState.DETECTED:
            stats.detected_ticks += 1
            self._buffer.append(quantize_capture(self.detector.y_signal))
            if len(self._buffer) == WAVEFORM_SAMPLES:
                self._countdown = self.options.classify_ticks
                self.fsm = FsmState.CLASSIFYING
        else:  # CLASSIFYING
            stats.classifying_ticks += 1
            if self._countdown == self.options.classify_ticks:
                event = self._classify()
            self._countdown -= 1
            if self._countdown == 0:
                self.fsm = FsmState.RUNNING
        return event

    def _classify(self) -> PipelineEvent | None:
        waveform = np.array(self._buffer, dtype=np.int8)
        logits = infer_quantized_batch(self.model, waveform[None, :])[0]
        klass = SpikeClass(int(np.argmax(logits)))
        stats = self.stats
        stats.classify_invocations += 1
        stats.class_counts[klass.name] += 1
        if klass is SpikeClass.F and not self.options.store_false_positives:
            return None
        ts = self._detection_tick
        assert self._last_event_ts is None or ts > self._last_event_ts
        self._last_event_ts = ts
        stats.events_emitted += 1
        return PipelineEvent(ts, klass)

    def run(self, samples) -> list[PipelineEvent]:
        """Convenience loop over a whole array of samples."""
        events = []
        for x in np.asarray(samples, dtype=np.float64):
            event = self.step(x)
            if event is not None:
                events.append(event)
        return events


def _honored_detections(
    candidates: np.ndarray, first_allowed: int, busy_ticks: int
) -> np.ndarray:
    """Greedy scan: keep every candidate tick not masked by a busy period."""
    honored = []
    i = 0
    next_free = first_allowed
    while i < len(candidates):
        t = int(candidates[i])
        if t >= next_free:
            honored.append(t)
            next_free = t + busy_ticks
            i = int(np.searchsorted(candidates, next_free, side="left"))
        else:
            i += 1
    return np.array(honored, dtype=np.int64)


def capture_detections(
    samples,
    det_cfg: det.DetectorConfig | None = None,
    options: PipelineOptions | None = None,
):
    """Detection ticks and their 40-sample capture buffers, deployment-timed.

    Returns (ticks, waveforms, trace): one int8 waveform row per honored
    detection with a complete capture.  Uses the same spacing as the state
    machine so training data matches what the classifier sees in the field.
    """
    det_cfg = det_cfg or det.DetectorConfig()
    options = options or PipelineOptions()
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    trace = det.detector_trace(samples, det_cfg)
    if trace.converged_tick is None:
        return np.empty(0, dtype=np.int64), np.empty((0, WAVEFORM_SAMPLES), dtype=np.int8), trace
    candidates = det.detection_candidates(trace)
    busy = WAVEFORM_SAMPLES + options.classify_ticks + 1
    honored = _honored_detections(candidates, trace.converged_tick + 1, busy)
    complete = honored[honored + WAVEFORM_SAMPLES <= n - 1]
    if len(complete) == 0:
        return np.empty(0, dtype=np.int64), np.empty((0, WAVEFORM_SAMPLES), dtype=np.int8), trace
    idx = complete[:, None] + np.arange(1, WAVEFORM_SAMPLES + 1)
    waveforms = quantize_capture_array(trace.y[idx])
    return complete, waveforms, trace


def run_pipeline(
    samples,
    model: QuantizedMlpModel,
    det_cfg: det.DetectorConfig | None = None,
    options: PipelineOptions | None = None,
) -> tuple[list[PipelineEvent], RunStats]:
    """Whole-stream equivalent of stepping a Pipeline over samples.

    Produces the same events and the same stats as the tick-by-tick
    reference, from vectorized passes.
    """
    if model.topology[0] != WAVEFORM_SAMPLES:
        raise ValidationError(
            f"pipeline model must take {WAVEFORM_SAMPLES} inputs, got {model.topology[0]}"
        )
    det_cfg = det_cfg or det.DetectorConfig()
    options = options or PipelineOptions()
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    ct = options.classify_ticks

    stats = RunStats(total_ticks=n)
    trace = det.detector_trace(samples, det_cfg)
    if trace.converged_tick is None:
        stats.init_ticks = n
        return [], stats
    T = trace.converged_tick
    stats.converged_tick = T
    stats.threshold = trace.threshold
    stats.init_ticks = T + 1

    candidates = det.detection_candidates(trace)
    honored = _honored_detections(candidates, T + 1, WAVEFORM_SAMPLES + ct + 1)
    stats.detections = len(honored)

    capture_ticks = np.clip(n - 1 - honored, 0, WAVEFORM_SAMPLES)
    stats.detected_ticks = int(capture_ticks.sum())
    complete = honored[honored + WAVEFORM_SAMPLES <= n - 1]
    stats.classifying_ticks = int(
        np.clip(n - 1 - (complete + WAVEFORM_SAMPLES), 0, ct).sum()
    )
    classified = complete[complete + WAVEFORM_SAMPLES + 1 <= n - 1]
    stats.classify_invocations = len(classified)
    stats.running_ticks = (
        n - stats.init_ticks - stats.detected_ticks - stats.classifying_ticks
    )

    events: list[PipelineEvent] = []
    if len(classified):
        idx = classified[:, None] + np.arange(1, WAVEFORM_SAMPLES + 1)
        waveforms = quantize_capture_array(trace.y[idx])
        logits = infer_quantized_batch(model, waveforms)
        klasses = np.argmax(logits, axis=1)
        for t, k in zip(classified, klasses):
            klass = SpikeClass(int(k))
            stats.class_counts[klass.name] += 1
            if klass is SpikeClass.F and not options.store_false_positives:
                continue
            events.append(PipelineEvent(int(t), klass))
    stats.events_emitted = len(events)
    return events, stats


def write_events_csv(path, events) -> None:
    """Debug form of the event stream: timestamp,class per row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "class"])
        for event in events:
            writer.writerow([event.timestamp, event.klass.name])


def read_events_csv(path) -> list[PipelineEvent]:
    events: list[PipelineEvent] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["timestamp", "class"]:
            raise FormatError(f"{path}: expected header timestamp,class")
        for row in reader:
            if len(row) != 2 or row[1] not in SpikeClass.__members__:
                raise FormatError(f"{path}: malformed row {row!r}")
            events.append(PipelineEvent(int(row[0]), SpikeClass[row[1]]))
    return events
