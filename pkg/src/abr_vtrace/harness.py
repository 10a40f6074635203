"""Training and evaluation orchestration.

Training follows the actor/learner split: actors roll out whole videos with
a (possibly stale) snapshot of the policy and hand the episode to a single
learner, which updates the target policy and critic.  Actors refresh their
snapshot every ``sync_interval`` of their own episodes, so with more than one
actor, or ``sync_interval > 1``, most episodes arrive off-policy.

In the default single-threaded schedule the actors run in lock-step rounds:
at the start of a round every actor that is due refreshes its snapshot, all
actors then produce one episode each, and the learner consumes them in actor
order.  This reproduces the lag pattern of asynchronous actors while staying
a pure function of the seed.  ``threads=True`` runs real actor threads that
feed the learner through a queue in arrival order.
"""

from __future__ import annotations

import logging
import queue
import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .agent import Episode, Hyperparams, Learner, pick
from .baselines import BaselineConfig, Selector, make_baseline
from .env import StepOutcome, StreamEnv, VideoSpec, make_video, rollout
from .qoe import QoEBreakdown, QoEConfig, episode_qoe, step_reward
from .traces import LossModel, NetworkTrace, SyntheticTraceSpec, generate_synthetic

log = logging.getLogger(__name__)

RL_ALGOS = {"alisa": "alisa", "a3c": "vanilla"}


@dataclass
class TrainConfig:
    hp: Hyperparams
    train_traces: Sequence[NetworkTrace]
    val_traces: Sequence[NetworkTrace]
    qoe_cfg: QoEConfig = field(default_factory=QoEConfig)
    video: VideoSpec = field(default_factory=make_video)
    loss: LossModel = field(default_factory=LossModel)
    seed: int = 0
    val_interval: int = 100
    checkpoint_dir: Path | None = None
    threads: bool = False

    def __post_init__(self):
        if not self.train_traces:
            raise ValueError("at least one training trace is required")
        if self.val_interval <= 0:
            raise ValueError("val_interval must be positive")
        overlap = {t.id for t in self.train_traces} & {t.id for t in self.val_traces}
        if overlap:
            raise ValueError(f"train and validation traces overlap: {sorted(overlap)[:3]}")
        if tuple(self.qoe_cfg.bitrates_kbps) != tuple(self.video.bitrate_levels):
            raise ValueError("QoE bitrate ladder does not match the video ladder")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    episode_reward: float
    max_reward: float
    beta: float
    actor_id: int
    policy_version: int
    policy_lag: int


@dataclass(frozen=True)
class ValidationRecord:
    epoch: int
    mean_qoe: float
    best_qoe: float


@dataclass
class TrainReport:
    mode: str
    epochs: list[EpochRecord] = field(default_factory=list)
    validations: list[ValidationRecord] = field(default_factory=list)
    best_checkpoint: str = "init"
    best_epoch: int = 0
    best_val_qoe: float = float("-inf")
    # Wall-clock seconds per epoch; kept out of the serialised report so that
    # reports of identical runs compare equal byte for byte.
    wall_times: list[float] = field(default_factory=list, repr=False)
    best_theta: nn.ParamSet | None = field(default=None, repr=False)
    best_w: nn.ParamSet | None = field(default=None, repr=False)
    final_theta: nn.ParamSet | None = field(default=None, repr=False)
    final_w: nn.ParamSet | None = field(default=None, repr=False)

    def epoch_reached(self, qoe: float) -> int | None:
        """First validation epoch whose best-so-far QoE is at least ``qoe``."""
        for v in self.validations:
            if v.best_qoe >= qoe:
                return v.epoch
        return None

    def to_csv(self) -> str:
        lines = ["kind,epoch,value,max_so_far,beta,actor,policy_version,policy_lag"]
        for r in self.epochs:
            lines.append(f"train,{r.epoch},{r.episode_reward!r},{r.max_reward!r},{r.beta!r},"
                         f"{r.actor_id},{r.policy_version},{r.policy_lag}")
        for v in self.validations:
            lines.append(f"val,{v.epoch},{v.mean_qoe!r},{v.best_qoe!r},,,,")
        lines.append(f"best,{self.best_epoch},{self.best_val_qoe!r},,,,,{self.best_checkpoint}")
        return "\n".join(lines) + "\n"


class GreedyPolicy(Selector):
    name = "rl"

    def __init__(self, theta: nn.ParamSet, name: str = "rl"):
        self.theta = theta
        self.name = name

    def __call__(self, state) -> int:
        return int(np.argmax(nn.policy_forward(self.theta, state.to_vector())))


class Actor:
    """Owns one environment, one RNG stream and one policy snapshot."""

    def __init__(self, actor_id: int, traces: Sequence[NetworkTrace], video: VideoSpec,
                 loss: LossModel, qoe_cfg: QoEConfig, rng: np.random.Generator):
        self.id = actor_id
        self.traces = list(traces)
        self.env = StreamEnv(video, loss)
        self.qoe_cfg = qoe_cfg
        self.rng = rng
        self.theta: nn.ParamSet | None = None
        self.version = -1
        self.episodes = 0

    def sync(self, version: int, theta: nn.ParamSet) -> None:
        self.version, self.theta = version, theta

    def run_episode(self) -> Episode:
        trace = self.traces[int(self.rng.integers(len(self.traces)))]
        state = self.env.reset(trace, seed=int(self.rng.integers(2**31)))
        states, actions, probs, rewards = [], [], [], []
        prev = None
        while True:
            x = state.to_vector()
            p = nn.policy_forward(self.theta, x)
            a = pick(p, "sample", self.rng)
            out = self.env.step(a)
            states.append(x)
            actions.append(a)
            probs.append(p)
            rewards.append(step_reward(prev, a, out.rebuffer_time, self.qoe_cfg))
            prev = a
            state = out.next_state
            if out.done:
                break
        self.episodes += 1
        return Episode(np.array(states), np.array(actions), np.array(probs), np.array(rewards),
                       state.to_vector(), terminal=True, policy_version=self.version,
                       actor_id=self.id, trace_id=trace.id)


def _make_actors(cfg: TrainConfig) -> list[Actor]:
    seqs = np.random.SeedSequence([cfg.seed, 0xAC7]).spawn(cfg.hp.actors)
    return [Actor(k, cfg.train_traces, cfg.video, cfg.loss, cfg.qoe_cfg, np.random.default_rng(s))
            for k, s in enumerate(seqs)]


def _lockstep_episodes(learner: Learner, actors: list[Actor], total: int):
    produced = 0
    while produced < total:
        for actor in actors:
            if actor.episodes % learner.hp.sync_interval == 0:
                actor.sync(*learner.snapshot())
        batch = []
        for actor in actors:
            if produced + len(batch) >= total:
                break
            batch.append(actor.run_episode())
        for ep in batch:
            yield ep
        produced += len(batch)


def _threaded_episodes(learner: Learner, actors: list[Actor], total: int):
    lock = threading.Lock()
    latest = [learner.snapshot()]
    stop = threading.Event()
    q: queue.Queue = queue.Queue(maxsize=len(actors))
    errors: list[BaseException] = []

    def work(actor: Actor):
        try:
            while not stop.is_set():
                if actor.episodes % learner.hp.sync_interval == 0:
                    with lock:
                        actor.sync(*latest[0])
                ep = actor.run_episode()
                while not stop.is_set():
                    try:
                        q.put(ep, timeout=0.05)
                        break
                    except queue.Full:
                        continue
        except BaseException as exc:  # surfaced in the learner thread
            errors.append(exc)
            stop.set()

    threads = [threading.Thread(target=work, args=(a,), daemon=True) for a in actors]
    for t in threads:
        t.start()
    try:
        for _ in range(total):
            while True:
                if errors:
                    raise errors[0]
                try:
                    ep = q.get(timeout=0.05)
                    break
                except queue.Empty:
                    continue
            yield ep
            with lock:
                latest[0] = learner.snapshot()
    finally:
        stop.set()
        for t in threads:
            t.join()


def validation_qoe(theta: nn.ParamSet, traces: Sequence[NetworkTrace], video: VideoSpec,
                   qoe_cfg: QoEConfig, loss: LossModel) -> float:
    result = evaluate(GreedyPolicy(theta), traces, qoe_cfg, loss, video)
    return result.mean


def train(cfg: TrainConfig, mode: str = "alisa", on_epoch: Callable | None = None) -> TrainReport:
    hp = cfg.hp
    learner = Learner.fresh(cfg.video.state_dim, cfg.video.num_levels, hp, seed=cfg.seed, mode=mode)
    report = TrainReport(mode=mode)
    report.best_theta, report.best_w = learner.theta.copy(), learner.w.copy()
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    meta = {"mode": mode, "qoe": cfg.qoe_cfg.variant, "seed": str(cfg.seed)}
    if ckpt_dir:
        nn.save_checkpoint(ckpt_dir / "init.ckpt", {"actor": learner.theta, "critic": learner.w}, meta)

    actors = _make_actors(cfg)
    source = _threaded_episodes if cfg.threads else _lockstep_episodes
    max_reward = float("-inf")
    tick = time.perf_counter()
    for epoch, episode in enumerate(source(learner, actors, hp.epochs)):
        try:
            stats = learner.update(episode, epoch)
        except FloatingPointError as exc:
            raise FloatingPointError(f"epoch {epoch}: {exc}") from exc
        reward = float(episode.rewards.sum())
        max_reward = max(max_reward, reward)
        report.epochs.append(EpochRecord(epoch, reward, max_reward, stats.beta, episode.actor_id,
                                         episode.policy_version, stats.policy_lag))
        done = epoch + 1
        if done % cfg.val_interval == 0 or done == hp.epochs:
            if cfg.val_traces:
                score = validation_qoe(learner.theta, cfg.val_traces, cfg.video, cfg.qoe_cfg, cfg.loss)
            else:
                score = reward
            if score > report.best_val_qoe:
                report.best_val_qoe = score
                report.best_epoch = done
                report.best_checkpoint = f"epoch-{done}"
                report.best_theta, report.best_w = learner.theta.copy(), learner.w.copy()
                if ckpt_dir:
                    nn.save_checkpoint(ckpt_dir / "best.ckpt",
                                       {"actor": learner.theta, "critic": learner.w},
                                       {**meta, "epoch": str(done)})
            report.validations.append(ValidationRecord(done, score, report.best_val_qoe))
            log.info("%s epoch %d: val QoE %.3f (best %.3f @ %d)", mode, done, score,
                     report.best_val_qoe, report.best_epoch)
        now = time.perf_counter()
        report.wall_times.append(now - tick)
        tick = now
        if on_epoch is not None:
            on_epoch(epoch, learner, stats)
    report.final_theta, report.final_w = learner.theta, learner.w
    if ckpt_dir:
        nn.save_checkpoint(ckpt_dir / "final.ckpt", {"actor": learner.theta, "critic": learner.w}, meta)
        (ckpt_dir / "train_report.csv").write_text(report.to_csv())
    return report


@dataclass
class EvalResult:
    algorithm: str
    trace_ids: list[str]
    breakdowns: list[QoEBreakdown]
    outcomes: list[list[StepOutcome]] = field(default_factory=list, repr=False)

    @property
    def totals(self) -> list[float]:
        return [b.total for b in self.breakdowns]

    @property
    def mean(self) -> float:
        return summarize(self.totals)[0]

    @property
    def median(self) -> float:
        return summarize(self.totals)[1]


def summarize(totals: Sequence[float]) -> tuple[float, float]:
    if not totals:
        raise ValueError("cannot summarise an empty result set")
    return statistics.fmean(totals), statistics.median(totals)


def resolve_policy(policy, video: VideoSpec, qoe_cfg: QoEConfig,
                   baseline_cfg: BaselineConfig | None = None) -> Selector:
    """Accept a selector, a baseline name, actor parameters or a checkpoint path."""
    if isinstance(policy, Selector):
        return policy
    if isinstance(policy, nn.ParamSet):
        return GreedyPolicy(policy)
    if isinstance(policy, str) and not Path(policy).suffix:
        return make_baseline(policy, baseline_cfg or BaselineConfig(), video, qoe_cfg)
    nets, meta = nn.load_checkpoint(policy)
    if "actor" not in nets:
        raise ValueError(f"{policy}: checkpoint has no actor network")
    return GreedyPolicy(nets["actor"], meta.get("mode", "rl"))


def evaluate(policy, traces: Sequence[NetworkTrace], qoe_cfg: QoEConfig,
             loss: LossModel | None = None, video: VideoSpec | None = None,
             baseline_cfg: BaselineConfig | None = None, keep_outcomes: bool = False) -> EvalResult:
    """Play every trace from its start with a deterministic policy."""
    video = video or make_video()
    selector = resolve_policy(policy, video, qoe_cfg, baseline_cfg)
    env = StreamEnv(video, loss or LossModel())
    ids, breakdowns, kept = [], [], []
    for trace in traces:
        selector.reset()
        outcomes = rollout(env, trace, selector, start_offset=0.0)
        ids.append(trace.id)
        breakdowns.append(episode_qoe(outcomes, qoe_cfg))
        if keep_outcomes:
            kept.append(outcomes)
    return EvalResult(selector.name, ids, breakdowns, kept)


@dataclass(frozen=True)
class Profile:
    """Desk-scale trace sets and training length."""

    train: int = 20
    val: int = 5
    test: int = 10
    duration: float = 400.0
    mean_bandwidth: float = 2.5
    volatility: float = 0.4
    epochs: int = 5000
    actors: int = 2
    sync_interval: int = 4

    def hyperparams(self, **overrides) -> Hyperparams:
        base = dict(epochs=self.epochs, actors=self.actors, sync_interval=self.sync_interval)
        base.update(overrides)
        return Hyperparams(**base)

    def trace_sets(self, seed: int = 0) -> tuple[list[NetworkTrace], list[NetworkTrace], list[NetworkTrace]]:
        def make(kind: str, n: int, offset: int):
            spec = SyntheticTraceSpec(n, self.duration, self.mean_bandwidth, self.volatility,
                                      seed=seed * 1000 + offset)
            return generate_synthetic(spec, prefix=kind)
        return make("train", self.train, 1), make("val", self.val, 2), make("test", self.test, 3)
