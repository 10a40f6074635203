"""Chunk-level virtual video player driven by a bandwidth trace.

Each ``step`` downloads one chunk at the requested bitrate level, drains
the playback buffer for the download duration, and reports the stall
(rebuffer) time.  All randomness comes from the seed passed to ``reset``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .traces import LossModel, NetworkTrace, TraceError

DEFAULT_BITRATES_KBPS = (300, 750, 1200, 1850, 2850, 4300)
DEFAULT_CHUNK_DURATION = 4.0
DEFAULT_NUM_CHUNKS = 48
DEFAULT_BUFFER_CAPACITY = 60.0
CHUNK_SIZE_JITTER = 0.10
HISTORY_LEN = 8

# Feature scaling used when a state is flattened for the networks.
BUFFER_SCALE = 10.0
THROUGHPUT_SCALE = 4.0
DOWNLOAD_TIME_SCALE = 10.0
CHUNK_SIZE_SCALE = 10.0


@dataclass(frozen=True)
class VideoSpec:
    bitrate_levels: tuple[float, ...]
    chunk_duration: float
    num_chunks: int
    chunk_sizes: np.ndarray  # megabits, shape (levels, num_chunks)
    buffer_capacity: float

    def __post_init__(self):
        levels = tuple(float(b) for b in self.bitrate_levels)
        object.__setattr__(self, "bitrate_levels", levels)
        sizes = np.array(self.chunk_sizes, dtype=float)
        sizes.setflags(write=False)
        object.__setattr__(self, "chunk_sizes", sizes)
        if len(levels) < 1 or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("bitrate_levels must be strictly increasing")
        if levels[0] <= 0:
            raise ValueError("bitrates must be positive")
        if not self.chunk_duration > 0 or self.num_chunks < 1:
            raise ValueError("chunk_duration and num_chunks must be positive")
        if sizes.shape != (len(levels), self.num_chunks):
            raise ValueError(f"chunk_sizes shape {sizes.shape} != {(len(levels), self.num_chunks)}")
        if not np.all(sizes > 0) or not np.all(np.isfinite(sizes)):
            raise ValueError("chunk sizes must be positive and finite")
        if not self.buffer_capacity >= self.chunk_duration:
            raise ValueError("buffer_capacity must hold at least one chunk")

    @property
    def num_levels(self) -> int:
        return len(self.bitrate_levels)

    @property
    def state_dim(self) -> int:
        return 2 + 2 * HISTORY_LEN + self.num_levels + 1

    def nominal_size(self, level: int) -> float:
        """Megabits of an average chunk at ``level``."""
        return self.bitrate_levels[level] / 1000.0 * self.chunk_duration


def make_video(
    bitrate_levels: Sequence[float] = DEFAULT_BITRATES_KBPS,
    chunk_duration: float = DEFAULT_CHUNK_DURATION,
    num_chunks: int = DEFAULT_NUM_CHUNKS,
    buffer_capacity: float = DEFAULT_BUFFER_CAPACITY,
    jitter: float = CHUNK_SIZE_JITTER,
    seed: int = 0,
) -> VideoSpec:
    """Build a video whose chunk sizes vary by up to ``jitter`` around nominal.

    One multiplier is drawn per chunk index and shared by all levels, as an
    encoder would produce for scene complexity.
    """
    rng = np.random.default_rng(seed)
    factors = 1.0 + rng.uniform(-jitter, jitter, size=num_chunks)
    nominal = np.asarray(bitrate_levels, dtype=float)[:, None] / 1000.0 * chunk_duration
    return VideoSpec(tuple(bitrate_levels), chunk_duration, num_chunks, nominal * factors, buffer_capacity)


@dataclass(frozen=True)
class StreamState:
    last_level: int
    buffer: float
    throughput_history: tuple[float, ...]  # Mbps, newest first
    download_time_history: tuple[float, ...]  # seconds, newest first
    next_chunk_sizes: tuple[float, ...]  # megabits per level
    remaining_fraction: float
    chunk_index: int = 0
    num_levels: int = field(default=len(DEFAULT_BITRATES_KBPS))

    def to_vector(self) -> np.ndarray:
        top = max(self.num_levels - 1, 1)
        return np.concatenate(
            (
                [self.last_level / top, self.buffer / BUFFER_SCALE],
                np.asarray(self.throughput_history) / THROUGHPUT_SCALE,
                np.asarray(self.download_time_history) / DOWNLOAD_TIME_SCALE,
                np.asarray(self.next_chunk_sizes) / CHUNK_SIZE_SCALE,
                [self.remaining_fraction],
            )
        )


@dataclass(frozen=True)
class StepOutcome:
    next_state: StreamState
    level: int
    download_time: float
    rebuffer_time: float
    chosen_bitrate: float
    done: bool
    idle_time: float = 0.0


def advance_buffer(buffer: float, download_time: float, chunk_duration: float,
                   capacity: float) -> tuple[float, float, float]:
    """Return ``(rebuffer, new_buffer, idle)`` after one chunk download."""
    rebuffer = max(download_time - buffer, 0.0)
    new_buffer = max(buffer - download_time, 0.0) + chunk_duration
    idle = max(new_buffer - capacity, 0.0)
    return rebuffer, new_buffer - idle, idle


class _Channel:
    """Cyclic zero-order-hold replay of a trace, consecutive equal samples merged."""

    def __init__(self, trace: NetworkTrace):
        ts = np.asarray(trace.timestamps) - trace.start
        bw = np.asarray(trace.bandwidths)
        # The final sample only marks the end of the cycle.
        starts, rates = [0.0], [bw[0]]
        for t, b in zip(ts[1:-1], bw[1:-1]):
            if b != rates[-1]:
                starts.append(float(t))
                rates.append(float(b))
        self.period = float(ts[-1])
        self.starts = np.asarray(starts)
        self.ends = np.append(self.starts[1:], self.period)
        self.rates = np.asarray(rates)

    def transfer(self, pos: float, megabits: float, keep: float) -> tuple[float, float]:
        """Time to push ``megabits`` starting at cycle position ``pos``; returns (elapsed, new pos)."""
        if len(self.rates) == 1:
            dt = megabits / (self.rates[0] * keep)
            return dt, math.fmod(pos + dt, self.period)
        idx = int(np.searchsorted(self.starts, pos, side="right")) - 1
        elapsed, remaining = 0.0, megabits
        while True:
            rate = self.rates[idx] * keep
            span = self.ends[idx] - pos
            if rate * span >= remaining:
                dt = remaining / rate
                return elapsed + dt, pos + dt
            remaining -= rate * span
            elapsed += span
            idx += 1
            if idx == len(self.rates):
                idx = 0
            pos = self.starts[idx]

    def advance(self, pos: float, dt: float) -> float:
        return math.fmod(pos + dt, self.period)


class StreamEnv:
    """Single-owner environment; create one per actor."""

    def __init__(self, video: VideoSpec, loss: LossModel | None = None):
        self.video = video
        self.loss = loss or LossModel()
        self._channel: _Channel | None = None
        self._state: StreamState | None = None
        self._pos = 0.0

    @property
    def state(self) -> StreamState:
        if self._state is None:
            raise RuntimeError("reset() must be called first")
        return self._state

    def reset(self, trace: NetworkTrace, seed: int = 0, start_offset: float | None = None) -> StreamState:
        if trace.duration < self.video.chunk_duration:
            raise TraceError(
                f"{trace.id}: trace too short ({trace.duration} s < chunk duration "
                f"{self.video.chunk_duration} s)"
            )
        self._channel = _Channel(trace)
        if start_offset is None:
            self._pos = float(np.random.default_rng(seed).uniform(0.0, self._channel.period))
        else:
            self._pos = math.fmod(float(start_offset), self._channel.period)
        L = self.video.num_levels
        self._state = StreamState(
            last_level=0,
            buffer=0.0,
            throughput_history=(0.0,) * HISTORY_LEN,
            download_time_history=(0.0,) * HISTORY_LEN,
            next_chunk_sizes=tuple(self.video.chunk_sizes[:, 0].tolist()),
            remaining_fraction=1.0,
            chunk_index=0,
            num_levels=L,
        )
        return self._state

    def step(self, action: int) -> StepOutcome:
        state = self.state
        video = self.video
        if state.chunk_index >= video.num_chunks:
            raise RuntimeError("episode already finished")
        if not (0 <= action < video.num_levels):
            raise ValueError(f"action {action} outside [0, {video.num_levels})")
        action = int(action)
        size = float(video.chunk_sizes[action, state.chunk_index])
        keep = self.loss.keep_fraction
        transfer_time, self._pos = self._channel.transfer(self._pos, size, keep)
        download_time = transfer_time / keep
        self._pos = self._channel.advance(self._pos, download_time - transfer_time)

        rebuffer, buffer, idle = advance_buffer(
            state.buffer, download_time, video.chunk_duration, video.buffer_capacity
        )
        if idle > 0:
            self._pos = self._channel.advance(self._pos, idle)

        index = state.chunk_index + 1
        done = index == video.num_chunks
        if done:
            next_sizes = (0.0,) * video.num_levels
        else:
            next_sizes = tuple(video.chunk_sizes[:, index].tolist())
        self._state = StreamState(
            last_level=action,
            buffer=buffer,
            throughput_history=(size / download_time,) + state.throughput_history[:-1],
            download_time_history=(download_time,) + state.download_time_history[:-1],
            next_chunk_sizes=next_sizes,
            remaining_fraction=(video.num_chunks - index) / video.num_chunks,
            chunk_index=index,
            num_levels=video.num_levels,
        )
        return StepOutcome(
            next_state=self._state,
            level=action,
            download_time=download_time,
            rebuffer_time=rebuffer,
            chosen_bitrate=video.bitrate_levels[action],
            done=done,
            idle_time=idle,
        )


def rollout(env: StreamEnv, trace: NetworkTrace, choose, seed: int = 0,
            start_offset: float | None = None) -> list[StepOutcome]:
    """Play a whole video, calling ``choose(state)`` for each chunk."""
    state = env.reset(trace, seed=seed, start_offset=start_offset)
    outcomes = []
    while True:
        out = env.step(choose(state))
        outcomes.append(out)
        if out.done:
            return outcomes
        state = out.next_state
