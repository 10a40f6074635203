"""Independent reference computations used by the tests.

Nothing here imports the code under test beyond plain data containers.
"""

import itertools
import math

import numpy as np


def vtrace_direct(pi, mu, rewards, values, bootstrap, gamma, rho_bar=1.0, c_bar=1.0):
    """n-step V-trace target evaluated as the explicit double sum.

    v_j = V(s_j) + sum_{t=j}^{n-1} gamma^(t-j) (prod_{i=j}^{t-1} c_i) delta_t
    """
    n = len(rewards)
    V = list(values) + [bootstrap]
    ratio = [p / m for p, m in zip(pi, mu)]
    rho = [min(rho_bar, x) for x in ratio]
    c = [min(c_bar, x) for x in rho]
    delta = [rho[t] * (rewards[t] + gamma * V[t + 1] - V[t]) for t in range(n)]
    out = []
    for j in range(n):
        acc, prod, disc = V[j], 1.0, 1.0
        for t in range(j, n):
            acc += disc * prod * delta[t]
            prod *= c[t]  # running product c_j ... c_t for the next term
            disc *= gamma
        out.append(acc)
    return np.array(out)


def discounted_return(rewards, bootstrap, gamma):
    n = len(rewards)
    return np.array([
        sum(gamma ** (t - j) * rewards[t] for t in range(j, n)) + gamma ** (n - j) * bootstrap
        for j in range(n)
    ])


def fd_gradient(f, params, h=1e-5):
    x = params.flat()
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        up = f(params.with_flat(x))
        x[i] = old - h
        down = f(params.with_flat(x))
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(analytic, numeric, floor=1e-6):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def mpc_enumerate(buffer, last_level, first_chunk, sizes, estimate, chunk_duration, capacity,
                  qualities, penalty):
    """Score every level plan with scalar loops; return the winning first level.

    ``sizes[level][k]`` is the size of the k-th chunk in the horizon.  Ties
    keep the earliest plan in lexicographic order.
    """
    levels = range(len(qualities))
    horizon = len(sizes[0])
    best_plan, best_score = None, -math.inf
    for plan in itertools.product(levels, repeat=horizon):
        buf, score = buffer, 0.0
        prev = None if first_chunk else last_level
        for k, lv in enumerate(plan):
            dl = sizes[lv][k] / estimate
            rebuf = max(dl - buf, 0.0)
            buf = min(max(buf - dl, 0.0) + chunk_duration, capacity)
            score += qualities[lv] - penalty * rebuf
            if prev is not None:
                score -= abs(qualities[lv] - qualities[prev])
            prev = lv
        if score > best_score:
            best_plan, best_score = plan, score
    return best_plan[0]


def harmonic_mean(xs):
    return len(xs) / sum(1.0 / x for x in xs)


def near_relu_kink(params, x, margin=1e-3):
    """True if any hidden pre-activation lies within ``margin`` of zero.

    Central differences straddling a kink are meaningless, so gradient checks
    redraw such instances.
    """
    h = np.atleast_2d(x)
    for W, b in params.layers[:-1]:
        z = h @ W + b
        if np.any(np.abs(z) < margin):
            return True
        h = np.maximum(z, 0.0)
    return False
