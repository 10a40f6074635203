"""QoE metrics: per-chunk quality minus rebuffer and smoothness penalties.

Three variants share one formula and differ only in the quality map and the
rebuffer penalty per second:

* ``linear``: quality is the bitrate in Mbps, penalty 4.3
* ``log``: quality is ``ln(bitrate / lowest bitrate)``, penalty 2.66
* ``hd``: quality comes from a lookup table, penalty 8
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .env import DEFAULT_BITRATES_KBPS

VARIANTS = ("linear", "log", "hd")
DEFAULT_REBUFFER_PENALTY = {"linear": 4.3, "log": 2.66, "hd": 8.0}
DEFAULT_HD_TABLE = (1.0, 2.0, 3.0, 12.0, 15.0, 20.0)

_ALIASES = {"lin": "linear", "linear": "linear", "log": "log", "hd": "hd"}


@dataclass(frozen=True)
class QoEConfig:
    variant: str = "linear"
    rebuffer_penalty: float | None = None
    hd_quality_table: tuple[float, ...] = DEFAULT_HD_TABLE
    bitrates_kbps: tuple[float, ...] = DEFAULT_BITRATES_KBPS
    b_min: float | None = None

    def __post_init__(self):
        variant = _ALIASES.get(str(self.variant).lower())
        if variant is None:
            raise ValueError(f"unknown QoE variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "variant", variant)
        if self.rebuffer_penalty is None:
            object.__setattr__(self, "rebuffer_penalty", DEFAULT_REBUFFER_PENALTY[variant])
        object.__setattr__(self, "bitrates_kbps", tuple(float(b) for b in self.bitrates_kbps))
        object.__setattr__(self, "hd_quality_table", tuple(float(q) for q in self.hd_quality_table))
        if self.b_min is None:
            object.__setattr__(self, "b_min", self.bitrates_kbps[0])
        if self.rebuffer_penalty < 0:
            raise ValueError("rebuffer_penalty must be non-negative")
        if not self.b_min > 0:
            raise ValueError("b_min must be positive")
        table = self.hd_quality_table
        if any(b <= a for a, b in zip(table, table[1:])):
            raise ValueError("hd_quality_table must be strictly increasing")
        if variant == "hd" and len(table) != len(self.bitrates_kbps):
            raise ValueError("hd_quality_table needs one entry per bitrate level")


@dataclass(frozen=True)
class QoEBreakdown:
    total: float
    quality_sum: float
    rebuffer_penalty_sum: float
    smoothness_penalty_sum: float
    chunks: int = 0


def quality(level: int, config: QoEConfig) -> float:
    if not 0 <= level < len(config.bitrates_kbps):
        raise ValueError(f"level {level} outside ladder of {len(config.bitrates_kbps)}")
    if config.variant == "linear":
        return config.bitrates_kbps[level] / 1000.0
    if config.variant == "log":
        return math.log(config.bitrates_kbps[level] / config.b_min)
    return config.hd_quality_table[level]


def step_terms(prev_level: int | None, level: int, rebuffer: float,
               config: QoEConfig) -> tuple[float, float, float]:
    """(quality, rebuffer penalty, smoothness penalty) for one chunk."""
    if rebuffer < 0:
        raise ValueError(f"negative rebuffer time {rebuffer}")
    q = quality(level, config)
    smooth = 0.0 if prev_level is None else abs(q - quality(prev_level, config))
    return q, config.rebuffer_penalty * rebuffer, smooth


def step_reward(prev_level: int | None, level: int, rebuffer: float, config: QoEConfig) -> float:
    """One summand of the QoE sum; pass ``prev_level=None`` for the first chunk."""
    q, rebuf, smooth = step_terms(prev_level, level, rebuffer, config)
    return q - rebuf - smooth


def episode_qoe(outcomes: Sequence, config: QoEConfig, prev_level: int | None = None) -> QoEBreakdown:
    """Aggregate QoE over consecutive chunk outcomes.

    ``prev_level`` carries the level of the chunk preceding ``outcomes`` when
    scoring a slice of a longer session.
    """
    if not outcomes:
        raise ValueError("episode_qoe needs at least one outcome")
    q_sum = r_sum = s_sum = 0.0
    for out in outcomes:
        q, r, s = step_terms(prev_level, out.level, out.rebuffer_time, config)
        q_sum += q
        r_sum += r
        s_sum += s
        prev_level = out.level
    return QoEBreakdown(q_sum - r_sum - s_sum, q_sum, r_sum, s_sum, len(outcomes))
