"""Independent reference computations used by the test suite."""

import numpy as np
from scipy.stats import norm


def tabular_dp_value(dynamics, reward_fn, actions, sigma, horizon, low, high, n_mesh, start):
    """Exhaustive DP on a state mesh with exact Gaussian cell probabilities.

    Each mesh node owns the cell between midpoints to its neighbours; the outer
    cells extend to infinity so every row of the transition matrix sums to one.
    Returns the value at the mesh node nearest ``start``.
    """
    low = np.asarray(low, float)
    high = np.asarray(high, float)
    d = low.shape[0]
    axes = [np.linspace(lo, hi, n_mesh) for lo, hi in zip(low, high)]
    edges = [np.concatenate([[-np.inf], 0.5 * (ax[1:] + ax[:-1]), [np.inf]]) for ax in axes]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    n = nodes.shape[0]
    m = len(actions)
    trans = np.empty((m, n, n))
    rewards = np.empty((m, n))
    for j, a in enumerate(actions):
        a_rep = np.tile(np.asarray(a, float), (n, 1))
        mu = dynamics(nodes, a_rep)
        rewards[j] = reward_fn(nodes, a_rep)
        probs = None
        for k in range(d):
            cdf = norm.cdf((edges[k][None, :] - mu[:, k:k + 1]) / sigma)
            pk = np.diff(cdf, axis=1)
            probs = pk if probs is None else (probs[:, :, None] * pk[:, None, :]).reshape(n, -1)
        trans[j] = probs
    v = np.zeros(n)
    for _ in range(horizon):
        v = np.max(rewards + trans @ v, axis=0)
    start_idx = int(np.argmin(np.sum((nodes - np.asarray(start, float)) ** 2, axis=1)))
    return float(v[start_idx])


def greedy_cover_size_1d(W, B, eps, n_grid=20001):
    """Greedy eps-cover, in sup norm over |phi| <= B, of {theta * phi : |theta| <= W}.

    ``||f_t - f_u||_inf = B |t - u|``, so a ball of radius eps covers a theta
    interval of half-width eps / B. Walk a fine theta grid left to right and
    open a new ball at the first uncovered point.
    """
    thetas = np.linspace(-W, W, n_grid)
    count = 0
    covered_to = -np.inf
    for t in thetas:
        if t > covered_to:
            count += 1
            covered_to = t + 2 * eps / B
    return count


def regret_improved_reference(d_phi, W, B, K, H, sigma, C, d, delta):
    """Improved regret bound composed in a different order from the package code."""
    T = K * H
    a = sigma**2 * T**-0.5
    log_n = d_phi * np.log((a + 2 * B * W) / a)
    beta = (8 * sigma**2 * log_n + 8 * sigma**2 * np.log(1 / delta) + 24 * H * a * C
            + 2 * H * a * np.sqrt(8 * d * sigma**2) * np.sqrt(np.log(4 * K * K * H / delta)))
    dim_e = 1 + 3 * d_phi * np.e / (np.e - 1) * np.log(3 + 12 * (W * B / a) ** 2)
    lead = H * np.sqrt(T) * np.sqrt(8 * beta / sigma**2 + 1) * np.sqrt(dim_e) * np.sqrt(1 + np.log(T))
    return lead + H / 2 + H * H * dim_e
