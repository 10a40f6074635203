"""Fixed-rule bitrate selectors: buffer-based, rate-based, BOLA and RobustMPC.

Selectors are pure functions of the observation.  RobustMPC additionally
takes its own past prediction errors explicitly; ``RobustMPC`` below keeps
that history across chunks of one session.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import StreamState, VideoSpec, make_video
from .qoe import QoEConfig, quality

NAMES = ("bb", "rb", "bola", "mpc")


@dataclass(frozen=True)
class BaselineConfig:
    bb_reservoir: float = 5.0
    bb_cushion: float = 10.0
    rb_window: int = 5
    bola_utility_weight: float = 1.0
    bola_startup: float = 1.0
    mpc_horizon: int = 5
    mpc_error_window: int = 5

    def __post_init__(self):
        for name in ("bb_reservoir", "bb_cushion", "rb_window", "bola_utility_weight",
                     "bola_startup", "mpc_horizon", "mpc_error_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def bb_select(state: StreamState, cfg: BaselineConfig = BaselineConfig()) -> int:
    top = state.num_levels - 1
    if state.buffer <= cfg.bb_reservoir:
        return 0
    if state.buffer >= cfg.bb_reservoir + cfg.bb_cushion:
        return top
    frac = (state.buffer - cfg.bb_reservoir) / cfg.bb_cushion
    return min(int(math.floor(frac * top)), top)


def harmonic_mean_throughput(history: Sequence[float], window: int) -> float:
    """Harmonic mean of the newest ``window`` non-zero samples; 0 if none."""
    samples = [x for x in history if x > 0][:window]
    if not samples:
        return 0.0
    return len(samples) / sum(1.0 / x for x in samples)


def highest_level_below(rate_mbps: float, bitrates_kbps: Sequence[float]) -> int:
    level = 0
    for i, b in enumerate(bitrates_kbps):
        if b / 1000.0 <= rate_mbps:
            level = i
    return level


def rb_select(state: StreamState, cfg: BaselineConfig = BaselineConfig(),
              video: VideoSpec | None = None) -> int:
    predicted = harmonic_mean_throughput(state.throughput_history, cfg.rb_window)
    if predicted <= 0:
        return 0
    ladder = (video or _default_video()).bitrate_levels
    return highest_level_below(predicted, ladder)


def bola_constants(cfg: BaselineConfig, video: VideoSpec) -> tuple[float, float]:
    """Return ``(V, gp)`` for the BOLA score ``(V * (u_m + gp) - Q) / S_m``.

    With ``u_m = ln(S_m / S_0)`` and ``r_m = S_m / S_0``:

    * At ``Q = 0`` level 0 wins iff ``gp / S_0 >= (u_m + gp) / S_m`` for every
      m, i.e. ``gp >= ln(r_m) / (r_m - 1)``.  That bound is largest at m = 1,
      so ``gp = max(bola_utility_weight, ln(r_1) / (r_1 - 1))``.
    * At ``Q = Q_max`` (buffer capacity in chunks) every numerator is
      ``<= 0`` as long as ``V * (u_top + gp) <= Q_max``; the largest chunk then
      has the least negative score.  ``V = (Q_max - bola_startup) / (u_top + gp)``
      satisfies this and leaves the top level reachable slightly earlier.
    """
    sizes = [video.nominal_size(m) for m in range(video.num_levels)]
    q_max = video.buffer_capacity / video.chunk_duration
    if len(sizes) == 1:
        return 1.0, cfg.bola_utility_weight
    r1 = sizes[1] / sizes[0]
    gp = max(cfg.bola_utility_weight, math.log(r1) / (r1 - 1.0))
    u_top = math.log(sizes[-1] / sizes[0])
    v = max(q_max - cfg.bola_startup, 1e-9) / (u_top + gp)
    return v, gp


def bola_select(state: StreamState, cfg: BaselineConfig = BaselineConfig(),
                video: VideoSpec | None = None) -> int:
    video = video or _default_video()
    v, gp = bola_constants(cfg, video)
    q = state.buffer / video.chunk_duration
    s0 = video.nominal_size(0)
    best, best_score = 0, -math.inf
    for m in range(video.num_levels):
        s = video.nominal_size(m)
        score = (v * (math.log(s / s0) + gp) - q) / s
        if score > best_score:
            best, best_score = m, score
    return best


def robust_estimate(state: StreamState, cfg: BaselineConfig, error_history: Sequence[float]) -> float:
    base = harmonic_mean_throughput(state.throughput_history, cfg.rb_window)
    recent = list(error_history)[-cfg.mpc_error_window:]
    max_err = max(recent) if recent else 0.0
    return base / (1.0 + max_err)


def _plan_inputs(state: StreamState, cfg: BaselineConfig, video: VideoSpec):
    start = state.chunk_index
    horizon = min(cfg.mpc_horizon, video.num_chunks - start)
    sizes = video.chunk_sizes[:, start:start + horizon]
    prev = state.last_level if start > 0 else None
    return horizon, sizes, prev


def mpc_select(state: StreamState, cfg: BaselineConfig, video: VideoSpec, qoe_cfg: QoEConfig,
               error_history: Sequence[float] = ()) -> int:
    """First level of the best plan over every level sequence in the horizon.

    Downloads are simulated at the error-discounted harmonic-mean estimate.
    Plans are scored with the QoE terms; ties go to the plan that comes first
    in lexicographic order, hence to the lower first level.
    """
    horizon, sizes, prev = _plan_inputs(state, cfg, video)
    if horizon <= 0:
        return 0
    estimate = robust_estimate(state, cfg, error_history)
    if estimate <= 0:
        return 0
    L = video.num_levels
    q = np.array([quality(m, qoe_cfg) for m in range(L)])
    plans = np.array(list(itertools.product(range(L), repeat=horizon)), dtype=np.int64)
    buffer = np.full(len(plans), state.buffer)
    score = np.zeros(len(plans))
    last_q = None if prev is None else np.full(len(plans), q[prev])
    for k in range(horizon):
        lv = plans[:, k]
        dl = sizes[lv, k] / estimate
        rebuf = np.maximum(dl - buffer, 0.0)
        buffer = np.minimum(np.maximum(buffer - dl, 0.0) + video.chunk_duration, video.buffer_capacity)
        score += q[lv] - qoe_cfg.rebuffer_penalty * rebuf
        if last_q is not None:
            score -= np.abs(q[lv] - last_q)
        last_q = q[lv]
    return int(plans[int(np.argmax(score)), 0])


class Selector:
    """Per-session wrapper giving every baseline a ``reset``/``__call__`` interface."""

    name = ""

    def reset(self) -> None:
        pass

    def __call__(self, state: StreamState) -> int:
        raise NotImplementedError


class _Stateless(Selector):
    def __init__(self, name, fn):
        self.name = name
        self._fn = fn

    def __call__(self, state):
        return self._fn(state)


class RobustMPC(Selector):
    name = "mpc"

    def __init__(self, cfg: BaselineConfig, video: VideoSpec, qoe_cfg: QoEConfig):
        self.cfg = cfg
        self.video = video
        self.qoe_cfg = qoe_cfg
        self.errors: list[float] = []
        self._predicted: float | None = None

    def reset(self):
        self.errors = []
        self._predicted = None

    def __call__(self, state: StreamState) -> int:
        observed = state.throughput_history[0]
        if self._predicted is not None and observed > 0:
            self.errors.append(abs(self._predicted - observed) / observed)
        self._predicted = harmonic_mean_throughput(state.throughput_history, self.cfg.rb_window) or None
        return mpc_select(state, self.cfg, self.video, self.qoe_cfg, self.errors)


def make_baseline(name: str, cfg: BaselineConfig, video: VideoSpec, qoe_cfg: QoEConfig) -> Selector:
    if name == "bb":
        return _Stateless("bb", lambda s: bb_select(s, cfg))
    if name == "rb":
        return _Stateless("rb", lambda s: rb_select(s, cfg, video))
    if name == "bola":
        return _Stateless("bola", lambda s: bola_select(s, cfg, video))
    if name == "mpc":
        return RobustMPC(cfg, video, qoe_cfg)
    raise ValueError(f"unknown baseline {name!r}; expected one of {NAMES}")


_DEFAULT_VIDEO: VideoSpec | None = None


def _default_video() -> VideoSpec:
    global _DEFAULT_VIDEO
    if _DEFAULT_VIDEO is None:
        _DEFAULT_VIDEO = make_video()
    return _DEFAULT_VIDEO
