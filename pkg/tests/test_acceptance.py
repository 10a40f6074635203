"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is printed in the
terminal summary.  Criteria 7 and 8 train on the default desk profile and
take several minutes; they share one set of training runs.

Run just this suite with ``pytest tests/test_acceptance.py -v``.
"""

import math
import re
import time

import numpy as np
import pytest

from abr_vtrace import nn
from abr_vtrace.agent import (
    Episode,
    Hyperparams,
    actor_gradients,
    actor_objective,
    beta_at,
    critic_gradients,
    critic_loss,
    entropy,
    vtrace_from_values,
)
from abr_vtrace.baselines import BaselineConfig, bb_select, bola_select, mpc_select, rb_select
from abr_vtrace.env import HISTORY_LEN, StreamState, make_video
from abr_vtrace.harness import Profile, TrainConfig, evaluate, train
from abr_vtrace.qoe import QoEConfig, episode_qoe, quality, step_reward
from abr_vtrace.traces import LossModel
from oracles import (
    discounted_return,
    fd_gradient,
    harmonic_mean,
    mpc_enumerate,
    near_relu_kink,
    rel_error,
    vtrace_direct,
)

SEEDS = range(5)
PROFILE = Profile()
LOSS_GRID = (0.0, 0.001, 0.005, 0.01, 0.02)


@pytest.fixture(autouse=True)
def _missing_verdict(request, criteria):
    yield
    m = re.match(r"test_criterion_(\d+)", request.node.name)
    if m and int(m.group(1)) not in criteria:
        criteria[int(m.group(1))] = f"criterion {int(m.group(1))}: FAIL (raised before a verdict)"


def finish(criteria, n, checks):
    """``checks`` is a list of ``(ok, detail)``; all must hold."""
    ok = all(c for c, _ in checks)
    detail = "; ".join(d for _, d in checks)
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    criteria[n] = line
    print(line)
    assert ok, line


# 1 ---------------------------------------------------------------------------

def test_criterion_01_vtrace_recursion_matches_direct_sum(criteria):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 101))
        pi, mu = rng.uniform(0.01, 1.0, n), rng.uniform(0.01, 1.0, n)
        r, V = rng.normal(size=n) * 5, rng.normal(size=n) * 10
        boot = float(rng.normal() * 10)
        gamma = float(rng.uniform(0.5, 1.0))
        rho_bar, c_bar = float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0))
        got = vtrace_from_values(pi, mu, r, V, boot, gamma, rho_bar, c_bar).targets
        want = vtrace_direct(pi, mu, r, V, boot, gamma, rho_bar, c_bar)
        worst = max(worst, rel_error(got, want, floor=1e-12))
    elapsed = time.perf_counter() - start
    finish(criteria, 1, [(worst < 1e-9, f"max rel err {worst:.2e} < 1e-9"),
                         (elapsed < 10, f"{elapsed:.1f}s < 10s")])


# 2 ---------------------------------------------------------------------------

def test_criterion_02_on_policy_reduction(criteria):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 101))
        p = rng.uniform(0.01, 1.0, n)
        r, V = rng.uniform(-4.3, 4.3, n), rng.uniform(-1, 1, n)
        boot = float(rng.uniform(-1, 1))
        res = vtrace_from_values(p, p, r, V, boot, 0.99, 1.0, 1.0)
        worst = max(worst, float(np.max(np.abs(res.targets - discounted_return(r, boot, 0.99)))))

    tr, va, _ = PROFILE.trace_sets(0)
    trajectories = {}
    for unit in (False, True):
        hp = Hyperparams(epochs=100, actors=1, sync_interval=1, unit_weights=unit)
        seen = []
        train(TrainConfig(hp, tr, va, val_interval=50, seed=0), "alisa",
              on_epoch=lambda e, learner, s, seen=seen: seen.append((learner.theta.flat(), learner.w.flat())))
        trajectories[unit] = seen
    same = len(trajectories[True]) == 100 and all(
        np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        for a, b in zip(trajectories[False], trajectories[True]))
    finish(criteria, 2, [(worst < 1e-12, f"max abs err vs n-step return {worst:.1e} < 1e-12"),
                         (same, "100-epoch trajectories bitwise identical" if same else "trajectories differ")])


# 3 ---------------------------------------------------------------------------

def _random_episode(rng, state_dim, levels):
    n = int(rng.integers(1, 11))
    logits = rng.normal(size=(n, levels))
    mu = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    return Episode(rng.normal(size=(n, state_dim)), rng.integers(0, levels, n), mu,
                   rng.normal(size=n) * 3, rng.normal(size=state_dim))


def test_criterion_03_gradients_match_finite_differences(criteria):
    rng = np.random.default_rng(33)
    start = time.perf_counter()
    worst_actor = worst_critic = 0.0
    instances = 120
    for _ in range(instances):
        dim, hidden, levels = int(rng.integers(3, 26)), int(rng.integers(2, 17)), int(rng.integers(2, 7))
        ep = _random_episode(rng, dim, levels)
        theta = nn.init_params([dim, hidden, levels], rng)
        while near_relu_kink(theta, ep.states):
            theta = nn.init_params([dim, hidden, levels], rng)
        w = nn.init_params([dim, hidden, 1], rng)
        while near_relu_kink(w, ep.states):
            w = nn.init_params([dim, hidden, 1], rng)
        adv = rng.normal(size=len(ep)) * 2
        beta = float(rng.uniform(0, 2))
        g = actor_gradients(ep, adv, theta, beta).flat()
        worst_actor = max(worst_actor, rel_error(g, fd_gradient(lambda p: actor_objective(ep, adv, p, beta), theta)))
        targets = rng.normal(size=len(ep)) * 5
        g = critic_gradients(ep, targets, w).flat()
        worst_critic = max(worst_critic, rel_error(g, fd_gradient(lambda p: critic_loss(ep, targets, p), w)))
    elapsed = time.perf_counter() - start
    finish(criteria, 3, [(worst_actor < 1e-4, f"actor max rel err {worst_actor:.1e} over {instances} instances"),
                         (worst_critic < 1e-4, f"critic max rel err {worst_critic:.1e} over {instances} instances"),
                         (elapsed < 60, f"{elapsed:.1f}s < 60s")])


# 4 ---------------------------------------------------------------------------

class _Out:
    def __init__(self, level, rebuffer_time=0.0):
        self.level, self.rebuffer_time = level, rebuffer_time


def test_criterion_04_qoe_fixtures(criteria):
    lin, log, hd = QoEConfig("linear"), QoEConfig("log"), QoEConfig("hd")
    checks = [
        (step_reward(5, 5, 0.0, lin) == 4.3, "4300 after 4300, no stall = 4.3"),
        (step_reward(0, 5, 1.0, lin) == 4.3 - 4.3 * 1.0 - abs(4.3 - 0.3) == -4.0, "worked example = -4.0"),
        (step_reward(2, 2, 0.5, log) == math.log(1200 / 300) - 1.33, "log, 0.5 s stall = q - 1.33"),
        (step_reward(None, 5, 0.0, lin) == 4.3, "first chunk has no smoothness term"),
        ((lin.rebuffer_penalty, log.rebuffer_penalty, hd.rebuffer_penalty) == (4.3, 2.66, 8.0),
         "stall penalties 4.3/2.66/8"),
    ]
    # hd qualities are integers and stalls are dyadic, so every sum is exact
    outs = [_Out(0), _Out(5, 0.5), _Out(3, 0.25), _Out(3)]
    b = episode_qoe(outs, hd)
    expect = (1 + 20 + 12 + 12) - 8 * (0.5 + 0.25) - (19 + 8 + 0)
    checks.append((b.total == expect == 12.0, f"hd episode total {b.total} == 12"))
    checks.append((episode_qoe([_Out(4), _Out(4)], lin).total == 2 * quality(4, lin), "two equal chunks = 2q"))
    finish(criteria, 4, checks)


# 5 ---------------------------------------------------------------------------

def test_criterion_05_entropy_and_schedule(criteria):
    sched = (2.0, 1.0, 0.5, 0.25, 0.1)
    full_scale = [beta_at(sched, e, 100_000) for e in (0, 19_999, 20_000, 39_999, 40_000, 99_999)]
    desk = [beta_at(sched, e, 5000) for e in (0, 999, 1000, 1999, 2000, 4999)]
    checks = [
        (abs(entropy(np.full(6, 1 / 6)) - math.log(6)) < 1e-12, "uniform-6 entropy = ln 6"),
        (entropy(np.eye(6)[2]) == 0.0, "one-hot entropy = 0"),
        (full_scale == [2.0, 2.0, 1.0, 1.0, 0.5, 0.1], "beta 2 for the first 20000 of 100000 epochs"),
        (desk == [2.0, 2.0, 1.0, 1.0, 0.5, 0.1], "same blocks scaled to 5000 epochs"),
    ]
    finish(criteria, 5, checks)


# 6 ---------------------------------------------------------------------------

def test_criterion_06_determinism(criteria, tmp_path):
    tr, va, _ = PROFILE.trace_sets(0)
    for name in ("a", "b"):
        hp = Hyperparams(epochs=300, actors=1, sync_interval=1)
        train(TrainConfig(hp, tr, va, val_interval=50, seed=5, checkpoint_dir=tmp_path / name), "alisa")
    files = ("init.ckpt", "best.ckpt", "final.ckpt", "train_report.csv")
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    finish(criteria, 6, [(all(same), "checkpoints and report byte-identical across two runs")])


# 7 and 8 share training runs ---------------------------------------------------

@pytest.fixture(scope="module")
def profile_runs():
    tr, va, te = PROFILE.trace_sets(0)
    runs = {}
    for seed in SEEDS:
        for mode in ("alisa", "vanilla"):
            start = time.perf_counter()
            report = train(TrainConfig(PROFILE.hyperparams(), tr, va, val_interval=100, seed=seed), mode)
            runs[(mode, seed)] = (report, time.perf_counter() - start)
    return runs, te


def test_criterion_07_learning_efficacy(criteria, profile_runs):
    runs, te = profile_runs
    q = QoEConfig("linear")
    start = time.perf_counter()
    report, train_time = runs[("alisa", 0)]
    rl = evaluate(report.best_theta, te, q).mean
    base = {name: evaluate(name, te, q).mean for name in ("bb", "rb", "bola", "mpc")}
    elapsed = train_time + time.perf_counter() - start
    best_name = max(base, key=base.get)
    floor = base[best_name] - 0.05 * abs(base[best_name])
    finish(criteria, 7, [
        (rl >= floor, f"ALISA {rl:.2f} >= {best_name} {base[best_name]:.2f} - 5% = {floor:.2f}"),
        (rl > base["bb"], f"ALISA {rl:.2f} > BB {base['bb']:.2f}"),
        (elapsed < 900, f"{elapsed:.0f}s < 900s"),
    ])


def test_criterion_08_off_policy_benefit(criteria, profile_runs):
    runs, te = profile_runs
    q = QoEConfig("linear")
    wins, rows, held = 0, [], {"alisa": [], "vanilla": []}
    for seed in SEEDS:
        a, _ = runs[("alisa", seed)]
        v, _ = runs[("vanilla", seed)]
        target = v.best_val_qoe
        ea, ev = a.epoch_reached(target), v.epoch_reached(target)
        wins += ea is not None and ea < ev
        rows.append(f"s{seed}:{ea if ea is not None else 'never'}/{ev}")
        for mode, rep in (("alisa", a), ("vanilla", v)):
            held[mode].append(evaluate(rep.best_theta, te, q).mean)
    ma, mv = float(np.mean(held["alisa"])), float(np.mean(held["vanilla"]))
    finish(criteria, 8, [
        (wins >= 3, f"ALISA first to vanilla's best in {wins}/5 seeds [alisa/vanilla epochs {' '.join(rows)}]"),
        (ma >= mv, f"held-out QoE ALISA {ma:.2f} vs vanilla {mv:.2f}"),
    ])


# 9 ---------------------------------------------------------------------------

def _constant_policy(level):
    w = nn.zero_params([make_video().state_dim, 4, 6])
    w.layers[-1][1][level] = 1.0
    return w


def test_criterion_09_loss_monotonicity(criteria, profile_runs):
    runs, te = profile_runs
    q = QoEConfig("linear")
    policies = {"bb": "bb", "rb": "rb", "bola": "bola", "mpc": "mpc",
                "alisa": runs[("alisa", 0)][0].best_theta}
    policies.update({f"level{k}": _constant_policy(k) for k in range(6)})
    checks = []
    for name, pol in policies.items():
        means = [evaluate(pol, te, q, LossModel(p)).mean for p in LOSS_GRID]
        ok = all(b <= a for a, b in zip(means, means[1:]))
        shown = "/".join(f"{m:.2f}" for m in means)
        checks.append((ok, f"{name} {'ok' if ok else 'rises'} [{shown}]"))
    finish(criteria, 9, checks)


# 10 --------------------------------------------------------------------------

def _state(video, buffer, throughput=(), last_level=0, chunk_index=1):
    hist = tuple(throughput) + (0.0,) * (HISTORY_LEN - len(throughput))
    return StreamState(last_level, buffer, hist, (1.0,) * HISTORY_LEN,
                       tuple(video.chunk_sizes[:, min(chunk_index, video.num_chunks - 1)]),
                       1.0 - chunk_index / video.num_chunks, chunk_index)


def test_criterion_10_baseline_properties(criteria):
    video, cfg, lin = make_video(), BaselineConfig(), QoEConfig("linear")
    sweep = [bb_select(_state(video, b), cfg) for b in np.linspace(0, video.buffer_capacity, 1201)]
    bb_ok = all(b >= a for a, b in zip(sweep, sweep[1:]))

    rb_cases = [([2.0, 2.0, 2.0], 3), ([1.0, 4.0], 2), ([0.5, 1.0, 4.0, 4.0], 1), ([10.0], 5)]
    rb_ok = True
    for hist, level in rb_cases:
        hm = harmonic_mean(hist)
        expect = max([0] + [k for k, b in enumerate(video.bitrate_levels) if b / 1000 <= hm])
        rb_ok &= expect == level == rb_select(_state(video, 10.0, hist), cfg, video)

    rng = np.random.default_rng(10)
    mismatches = 0
    for i in range(100):
        h = 1 + i % 3
        c = BaselineConfig(mpc_horizon=h)
        st = _state(video, float(rng.uniform(0, 30)), list(rng.uniform(0.2, 6.0, int(rng.integers(1, 8)))),
                    int(rng.integers(0, 6)), int(rng.integers(0, video.num_chunks)))
        errors = list(rng.uniform(0, 0.5, int(rng.integers(0, 6))))
        start = st.chunk_index
        hz = min(h, video.num_chunks - start)
        sizes = [[float(video.chunk_sizes[m, start + k]) for k in range(hz)] for m in range(6)]
        est = harmonic_mean([x for x in st.throughput_history if x > 0][:c.rb_window])
        est /= 1 + (max(errors[-c.mpc_error_window:]) if errors else 0.0)
        want = mpc_enumerate(st.buffer, st.last_level, start == 0, sizes, est, video.chunk_duration,
                             video.buffer_capacity, [quality(m, lin) for m in range(6)], lin.rebuffer_penalty)
        mismatches += mpc_select(st, c, video, lin, errors) != want

    bola_empty = bola_select(_state(video, 0.0), cfg, video)
    bola_full = bola_select(_state(video, video.buffer_capacity), cfg, video)
    finish(criteria, 10, [
        (bb_ok, "BB monotone over 0..capacity"),
        (rb_ok, "RB matches hand harmonic means"),
        (mismatches == 0, f"MPC vs enumerator: {mismatches}/100 mismatches"),
        (bola_empty == 0 and bola_full == 5, f"BOLA empty->{bola_empty}, full->{bola_full}"),
    ])


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
