"""Actor-critic learning core with V-trace off-policy correction.

Two learner modes share all plumbing:

``alisa``
    Truncated importance weights ``rho_t = min(rho_bar, pi/mu)`` and
    ``c_t = min(c_bar, rho_t)`` correct for the lag between the actor's
    behaviour policy ``mu`` and the learner's current policy ``pi``.  The
    critic regresses onto the V-trace targets and the actor follows
    ``rho_t * (r_t + gamma * v_{t+1} - V(s_t))``.

``vanilla``
    Plain advantage actor-critic: one-step TD advantages
    ``r_t + gamma * V(s_{t+1}) - V(s_t)`` with no importance weighting, the
    critic regressing onto the one-step TD target.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn

MODES = ("alisa", "vanilla")
DEFAULT_BETA_SCHEDULE = (1.0, 0.75, 0.5, 0.25, 0.1)


@dataclass
class Hyperparams:
    gamma: float = 0.99
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    beta_schedule: tuple[float, ...] = DEFAULT_BETA_SCHEDULE
    rho_bar: float = 1.0
    c_bar: float = 1.0
    epochs: int = 100_000
    actors: int = 1
    sync_interval: int = 1
    hidden: tuple[int, ...] = (128,)
    optimizer: str = "sgd"
    # Replace every importance weight by 1 (the plain n-step return path).
    unit_weights: bool = False

    def __post_init__(self):
        self.beta_schedule = tuple(float(b) for b in self.beta_schedule)
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not self.beta_schedule or any(b < 0 for b in self.beta_schedule):
            raise ValueError("beta_schedule needs at least one non-negative weight")
        if self.rho_bar <= 0 or self.c_bar <= 0:
            raise ValueError("importance weight caps must be positive")
        if self.epochs < 0 or self.actors < 1 or self.sync_interval < 1:
            raise ValueError("epochs >= 0, actors >= 1 and sync_interval >= 1 required")

    def beta_at(self, epoch: int) -> float:
        return beta_at(self.beta_schedule, epoch, self.epochs)


def beta_at(schedule: Sequence[float], epoch: int, epochs: int) -> float:
    """Entropy weight in effect at ``epoch``.

    The run is cut into ``len(schedule)`` equal blocks; block ``k`` uses
    ``schedule[k]``.  Epochs past the end keep the last weight.
    """
    k = len(schedule)
    if epochs <= 0:
        return schedule[-1]
    return schedule[min(epoch * k // epochs, k - 1)]


def parse_beta_schedule(text: str) -> tuple[float, ...]:
    """Parse ``"1, 0.75, 0.5, 0.25, 0.1"``, ``"0.1x5"`` or a single number."""
    text = text.strip()
    m = re.fullmatch(r"\(?\s*([0-9.eE+-]+)\s*\)?\s*(?:\(\s*)?[x×*]\s*(\d+)\s*\)?", text)
    if m:
        return (float(m.group(1)),) * int(m.group(2))
    values = tuple(float(v) for v in re.split(r"[,\s]+", text) if v)
    if not values:
        raise ValueError(f"empty entropy schedule {text!r}")
    return values


@dataclass
class Episode:
    states: np.ndarray  # (n, state_dim) flattened observations
    actions: np.ndarray  # (n,) level indices
    behaviour_probs: np.ndarray  # (n, levels) full behaviour distribution per step
    rewards: np.ndarray  # (n,)
    bootstrap_state: np.ndarray  # (state_dim,)
    terminal: bool = True
    policy_version: int = 0
    actor_id: int = 0
    trace_id: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.behaviour_probs = np.asarray(self.behaviour_probs, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.bootstrap_state = np.asarray(self.bootstrap_state, dtype=float)
        n = len(self.actions)
        if n < 1:
            raise ValueError("an episode needs at least one step")
        if len(self.states) != n or len(self.behaviour_probs) != n or len(self.rewards) != n:
            raise ValueError("states, actions, behaviour_probs and rewards must have equal length")
        sums = self.behaviour_probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError("behaviour probabilities must sum to 1")

    def __len__(self) -> int:
        return len(self.actions)

    def taken_behaviour_probs(self) -> np.ndarray:
        return self.behaviour_probs[np.arange(len(self)), self.actions]


@dataclass
class VTraceResult:
    targets: np.ndarray
    rhos: np.ndarray
    cs: np.ndarray
    deltas: np.ndarray
    pg_advantages: np.ndarray
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bootstrap_value: float = 0.0


def vtrace_from_values(target_probs, behaviour_probs, rewards, values, bootstrap_value: float,
                       gamma: float, rho_bar: float = 1.0, c_bar: float = 1.0,
                       unit_weights: bool = False) -> VTraceResult:
    """V-trace targets for one episode from per-step action probabilities and values.

    ``target_probs`` and ``behaviour_probs`` are the probabilities both
    policies assign to the actions actually taken.  Targets are filled from
    the back with ``v_j = V_j + delta_j + gamma * c_j * (v_{j+1} - V_{j+1})``
    and ``v_n = bootstrap_value``.
    """
    pi = np.asarray(target_probs, dtype=float)
    mu = np.asarray(behaviour_probs, dtype=float)
    r = np.asarray(rewards, dtype=float)
    V = np.asarray(values, dtype=float)
    n = len(r)
    if not (len(pi) == len(mu) == len(V) == n):
        raise ValueError("probability, reward and value sequences must have equal length")
    if np.any(mu <= 0):
        raise ValueError("behaviour policy gave zero probability to a taken action")
    if unit_weights:
        rhos = np.ones(n)
        cs = np.ones(n)
    else:
        rhos = np.minimum(rho_bar, pi / mu)
        cs = np.minimum(c_bar, rhos)
    V_next = np.append(V[1:], bootstrap_value)
    deltas = rhos * (r + gamma * V_next - V)

    v = V + deltas
    for i in range(n - 2, -1, -1):
        v[i] += gamma * cs[i] * (v[i + 1] - V[i + 1])

    v_next = np.append(v[1:], bootstrap_value)
    pg = rhos * (r + gamma * v_next - V)
    result = VTraceResult(v, rhos, cs, deltas, pg, V.copy(), float(bootstrap_value))
    for name in ("targets", "deltas", "pg_advantages"):
        if not np.all(np.isfinite(getattr(result, name))):
            raise FloatingPointError(f"non-finite V-trace {name}")
    return result


def policy_rows(theta: nn.ParamSet, states: np.ndarray) -> np.ndarray:
    """Per-state policy evaluation, bit-identical to what an actor computes online."""
    return np.stack([nn.policy_forward(theta, s) for s in states])


def bootstrap_value(episode: Episode, w: nn.ParamSet) -> float:
    return 0.0 if episode.terminal else nn.critic_forward(w, episode.bootstrap_state)


def compute_vtrace(episode: Episode, theta: nn.ParamSet, w: nn.ParamSet, hp: Hyperparams) -> VTraceResult:
    idx = np.arange(len(episode))
    target = policy_rows(theta, episode.states)[idx, episode.actions]
    values = nn.critic_forward(w, episode.states)
    return vtrace_from_values(
        target, episode.taken_behaviour_probs(), episode.rewards, values,
        bootstrap_value(episode, w), hp.gamma, hp.rho_bar, hp.c_bar, hp.unit_weights,
    )


def vanilla_advantages(episode: Episode, w: nn.ParamSet, gamma: float) -> np.ndarray:
    values = nn.critic_forward(w, episode.states)
    V_next = np.append(values[1:], bootstrap_value(episode, w))
    return episode.rewards + gamma * V_next - values


def td_targets(episode: Episode, w: nn.ParamSet, gamma: float) -> np.ndarray:
    values = nn.critic_forward(w, episode.states)
    return episode.rewards + gamma * np.append(values[1:], bootstrap_value(episode, w))


def entropy(probs) -> float:
    p = np.asarray(probs, dtype=float)
    if abs(p.sum() - 1.0) > 1e-6 or np.any(p < 0):
        raise ValueError("entropy needs a probability vector summing to 1")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum()) + 0.0


def actor_objective(episode: Episode, advantages, theta: nn.ParamSet, beta: float) -> float:
    """sum_t [log pi(a_t|s_t) * A_t + beta * H(pi(.|s_t))]."""
    logits, _ = nn.forward(theta, episode.states)
    logp = nn.log_softmax(logits)
    p = np.exp(logp)
    idx = np.arange(len(episode))
    ent = -(p * logp).sum(axis=1)
    return float((logp[idx, episode.actions] * np.asarray(advantages)).sum() + beta * ent.sum())


def actor_gradients(episode: Episode, advantages, theta: nn.ParamSet, beta: float) -> nn.Gradients:
    """Gradient of ``actor_objective`` with the advantages held constant.

    ``advantages`` may be a ``VTraceResult`` (its policy-gradient advantages
    are used) or a plain array.
    """
    if isinstance(advantages, VTraceResult):
        advantages = advantages.pg_advantages
    adv = np.asarray(advantages, dtype=float)
    if adv.shape != (len(episode),):
        raise ValueError(f"expected {len(episode)} advantages, got shape {adv.shape}")
    logits, cache = nn.forward(theta, episode.states)
    logp = nn.log_softmax(logits)
    p = np.exp(logp)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(episode)), episode.actions] = 1.0
    upstream = adv[:, None] * (onehot - p)
    if beta:
        ent = -(p * logp).sum(axis=1, keepdims=True)
        upstream -= beta * p * (logp + ent)
    grads = nn.backward(theta, cache, upstream)
    if not grads.is_finite():
        raise FloatingPointError("non-finite actor gradient")
    return grads


def critic_loss(episode: Episode, targets, w: nn.ParamSet) -> float:
    values = nn.critic_forward(w, episode.states)
    return float(0.5 * ((np.asarray(targets) - values) ** 2).sum())


def critic_gradients(episode: Episode, targets, w: nn.ParamSet) -> nn.Gradients:
    """Gradient of ``0.5 * sum_t (v_t - V_w(s_t))^2`` with ``v_t`` held constant."""
    if isinstance(targets, VTraceResult):
        targets = targets.targets
    out, cache = nn.forward(w, episode.states)
    residual = out[:, 0] - np.asarray(targets, dtype=float)
    grads = nn.backward(w, cache, residual[:, None])
    if not grads.is_finite():
        raise FloatingPointError("non-finite critic gradient")
    return grads


def select_action(theta: nn.ParamSet, state, mode: str = "sample",
                  rng: np.random.Generator | int | None = None) -> tuple[int, np.ndarray]:
    """Pick a level; returns ``(action, probabilities)``.

    ``greedy`` takes the argmax (lowest index wins ties); ``sample`` draws
    from the policy with ``rng``.
    """
    x = state.to_vector() if hasattr(state, "to_vector") else state
    probs = nn.policy_forward(theta, x)
    return pick(probs, mode, rng), probs


def pick(probs: np.ndarray, mode: str = "sample", rng: np.random.Generator | int | None = None) -> int:
    if mode == "greedy":
        return int(np.argmax(probs))
    if mode != "sample":
        raise ValueError(f"unknown selection mode {mode!r}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    cdf = np.cumsum(probs)
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(a, len(probs) - 1)


@dataclass
class UpdateStats:
    mode: str
    beta: float
    advantages: np.ndarray
    targets: np.ndarray
    rhos: np.ndarray | None
    policy_lag: int


class Learner:
    """Central learner holding the target policy and the critic.

    Only ``update`` mutates parameters; ``snapshot`` hands out copies.
    """

    def __init__(self, theta: nn.ParamSet, w: nn.ParamSet, hp: Hyperparams, mode: str = "alisa"):
        if mode not in MODES:
            raise ValueError(f"unknown learner mode {mode!r}; expected one of {MODES}")
        self.theta = theta
        self.w = w
        self.hp = hp
        self.mode = mode
        self.version = 0
        self._actor_opt = nn.make_optimizer(hp.optimizer)
        self._critic_opt = nn.make_optimizer(hp.optimizer)

    @classmethod
    def fresh(cls, state_dim: int, num_levels: int, hp: Hyperparams, seed: int = 0,
              mode: str = "alisa") -> "Learner":
        ss = np.random.SeedSequence([seed, 0x5EED])
        a_rng, c_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        theta = nn.init_params([state_dim, *hp.hidden, num_levels], a_rng)
        w = nn.init_params([state_dim, *hp.hidden, 1], c_rng)
        return cls(theta, w, hp, mode)

    def snapshot(self) -> tuple[int, nn.ParamSet]:
        return self.version, self.theta.copy()

    def update(self, episode: Episode, epoch: int) -> UpdateStats:
        hp = self.hp
        beta = hp.beta_at(epoch)
        if self.mode == "alisa":
            vt = compute_vtrace(episode, self.theta, self.w, hp)
            advantages, targets, rhos = vt.pg_advantages, vt.targets, vt.rhos
        else:
            advantages = vanilla_advantages(episode, self.w, hp.gamma)
            targets = td_targets(episode, self.w, hp.gamma)
            rhos = None
        g_actor = actor_gradients(episode, advantages, self.theta, beta)
        g_critic = critic_gradients(episode, targets, self.w)
        theta = self._actor_opt.step(self.theta, g_actor, hp.actor_lr)
        w = self._critic_opt.step(self.w, g_critic, -hp.critic_lr)
        if not (theta.is_finite() and w.is_finite()):
            raise FloatingPointError(f"parameters became non-finite at epoch {epoch}")
        self.theta, self.w = theta, w
        lag = self.version - episode.policy_version
        self.version += 1
        return UpdateStats(self.mode, beta, advantages, targets, rhos, lag)


def nstep_returns(rewards, bootstrap: float, gamma: float) -> np.ndarray:
    """Discounted reward-to-go with a bootstrap value after the last step."""
    out = np.empty(len(rewards))
    acc = bootstrap
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out

