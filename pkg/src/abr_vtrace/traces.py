"""Network bandwidth traces: loading, writing, synthesis and lossy replay.

A trace file holds one ``<timestamp_seconds> <bandwidth_mbps>`` pair per
line.  Bandwidth between two samples is held constant (zero-order hold).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

TRACE_SUFFIX = ".trace"

MIN_SYNTHETIC_BANDWIDTH = 0.1
# Per-second pull toward the mean in the synthetic walk.
REVERSION_RATE = 0.1


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkTrace:
    id: str
    timestamps: tuple[float, ...]
    bandwidths: tuple[float, ...]

    def __post_init__(self):
        ts = tuple(float(t) for t in self.timestamps)
        bw = tuple(float(b) for b in self.bandwidths)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "bandwidths", bw)
        if len(ts) != len(bw):
            raise TraceError(f"{self.id}: {len(ts)} timestamps but {len(bw)} bandwidths")
        if len(ts) < 2:
            raise TraceError(f"{self.id}: a trace needs at least 2 samples")
        if not all(math.isfinite(t) for t in ts) or ts[0] < 0:
            raise TraceError(f"{self.id}: timestamps must be finite and start at >= 0")
        for i in range(1, len(ts)):
            if ts[i] <= ts[i - 1]:
                raise TraceError(f"{self.id}: non-monotonic timestamps at sample {i}")
        for i, b in enumerate(bw):
            if not (math.isfinite(b) and b > 0):
                raise TraceError(f"{self.id}: non-positive bandwidth {b!r} at sample {i}")

    @property
    def start(self) -> float:
        return self.timestamps[0]

    @property
    def end(self) -> float:
        return self.timestamps[-1]

    @property
    def duration(self) -> float:
        return self.end - self.start

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class LossModel:
    loss_probability: float = 0.0

    def __post_init__(self):
        p = self.loss_probability
        if not (math.isfinite(p) and 0.0 <= p < 1.0):
            raise ValueError(f"loss_probability must lie in [0, 1), got {p!r}")

    @property
    def keep_fraction(self) -> float:
        return 1.0 - self.loss_probability


@dataclass(frozen=True)
class SyntheticTraceSpec:
    num_traces: int = 20
    duration: float = 400.0
    mean_bandwidth: float = 2.5
    volatility: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.num_traces < 0:
            raise ValueError("num_traces must be non-negative")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.mean_bandwidth > 0:
            raise ValueError("mean_bandwidth must be positive")
        if not self.volatility >= 0:
            raise ValueError("volatility must be non-negative")


def parse_trace(text: str, trace_id: str = "trace") -> NetworkTrace:
    timestamps, bandwidths = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 2:
            raise TraceError(f"{trace_id}:{lineno}: expected '<seconds> <mbps>', got {line!r}")
        try:
            t, b = float(fields[0]), float(fields[1])
        except ValueError:
            raise TraceError(f"{trace_id}:{lineno}: malformed line {line!r}") from None
        if timestamps and t <= timestamps[-1]:
            raise TraceError(f"{trace_id}:{lineno}: non-monotonic timestamps")
        if not (math.isfinite(b) and b > 0):
            raise TraceError(f"{trace_id}:{lineno}: non-positive bandwidth {fields[1]}")
        timestamps.append(t)
        bandwidths.append(b)
    return NetworkTrace(trace_id, tuple(timestamps), tuple(bandwidths))


def load_trace(path) -> NetworkTrace:
    path = Path(path)
    return parse_trace(path.read_text(), trace_id=path.stem)


def format_trace(trace: NetworkTrace) -> str:
    # repr() gives the shortest string that round-trips exactly.
    return "".join(f"{t!r} {b!r}\n" for t, b in zip(trace.timestamps, trace.bandwidths))


def write_trace(trace: NetworkTrace, path) -> Path:
    path = Path(path)
    path.write_text(format_trace(trace))
    return path


def load_trace_dir(directory) -> list[NetworkTrace]:
    directory = Path(directory)
    if not directory.is_dir():
        raise TraceError(f"{directory}: not a directory")
    paths = sorted(directory.glob(f"*{TRACE_SUFFIX}"), key=lambda p: p.name)
    if not paths:
        raise TraceError(f"{directory}: no *{TRACE_SUFFIX} files")
    return [load_trace(p) for p in paths]


def write_trace_dir(traces: Iterable[NetworkTrace], directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [write_trace(t, directory / f"{t.id}{TRACE_SUFFIX}") for t in traces]


def generate_synthetic(spec: SyntheticTraceSpec, prefix: str = "synth") -> list[NetworkTrace]:
    """Mean-reverting random walks sampled once per second.

    The per-step noise is scaled so the stationary standard deviation is
    roughly ``volatility * mean_bandwidth``.  Values are clamped to
    ``[0.1, 10 * mean_bandwidth]``.
    """
    rng = np.random.default_rng(spec.seed)
    n = int(math.floor(spec.duration)) + 1
    mean = spec.mean_bandwidth
    lo, hi = min(MIN_SYNTHETIC_BANDWIDTH, mean), 10.0 * mean
    step_std = spec.volatility * mean * math.sqrt(REVERSION_RATE * (2.0 - REVERSION_RATE))
    timestamps = tuple(float(i) for i in range(n))
    traces = []
    for k in range(spec.num_traces):
        noise = rng.standard_normal(n)
        bw = np.empty(n)
        level = mean
        for i in range(n):
            bw[i] = level
            level = level + REVERSION_RATE * (mean - level) + step_std * noise[i]
            level = min(max(level, lo), hi)
        traces.append(NetworkTrace(f"{prefix}_{spec.seed}_{k:04d}", timestamps, tuple(bw.tolist())))
    return traces


def sample_index(trace: NetworkTrace, t: float) -> int:
    """Index of the sample interval active at time ``t`` (zero-order hold)."""
    if not (trace.start <= t <= trace.end):
        raise TraceError(f"{trace.id}: t={t} outside [{trace.start}, {trace.end}]")
    return max(int(np.searchsorted(trace.timestamps, t, side="right")) - 1, 0)


def effective_throughput(trace: NetworkTrace, t: float, loss: LossModel) -> float:
    return trace.bandwidths[sample_index(trace, t)] * loss.keep_fraction

