"""Backward dynamic programming on spectral features.

For a dynamics model ``f`` with Gaussian noise ``sigma``, the Bellman backup

    Q_h(s, a) = r(s, a) + E_{s' ~ N(f(s, a), sigma^2 I)} [V_{h+1}(s')]

is linear in the random Fourier features of ``f(s, a)``. The conditional
expectation is fitted per step by ridge regression: anchor points ``x_j``
stand in for model outputs, their targets are Monte Carlo averages of
``V_{h+1}(x_j + eps)``, and the fitted weights give
``Q_h(s, a) = r(s, a) + phi(f(s, a)) . w_h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .spectral_features import RffMap, sample_rff


@dataclass(frozen=True)
class PlannerConfig:
    n_anchors: int = 2048
    n_mc: int = 1
    ridge: Optional[float] = None
    clip_values: bool = True
    mesh_per_dim: int = 8
    n_features: int = 1024
    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.n_anchors < 1:
            raise ValueError("n_anchors must be >= 1")
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be nonnegative")

    def ridge_value(self) -> float:
        return 1e-6 * self.n_anchors if self.ridge is None else self.ridge

    def make_rff(self, state_dim: int, sigma: float, seed) -> RffMap:
        """Value-feature map; bandwidth defaults to the noise level."""
        return sample_rff(state_dim, self.n_features, self.bandwidth or sigma, seed)


def value_features(rff: RffMap, x) -> np.ndarray:
    """``[phi(x), 1/sqrt(D)]``: spectral features plus an intercept column.

    Evaluated in float32, which is ample for value regression and several
    times faster than float64 cosines.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != rff.input_dim:
        raise ValueError(f"expected points of dimension {rff.input_dim}, got {x.shape[1]}")
    out = np.empty((x.shape[0], rff.n_features + 1), dtype=np.float32)
    proj = x.astype(np.float32) @ rff.frequencies.T.astype(np.float32)
    proj += rff.phases.astype(np.float32)
    np.cos(proj, out=out[:, :-1])
    out[:, :-1] *= np.float32(np.sqrt(2.0 / rff.n_features))
    out[:, -1] = np.float32(1.0 / np.sqrt(rff.n_features))
    return out


class _RidgeSolver:
    """Cholesky-factored ridge system for a fixed design; the intercept is not penalized."""

    def __init__(self, design: np.ndarray, ridge: float):
        self.design = design
        design = design.astype(float)
        gram = design.T @ design
        penalty = np.full(gram.shape[0], ridge)
        penalty[-1] = 0.0
        gram[np.diag_indices_from(gram)] += penalty
        # tiny jitter keeps the factorization defined when ridge = 0 and the design is rank deficient
        gram[np.diag_indices_from(gram)] += 1e-12 * max(1.0, np.trace(gram) / gram.shape[0])
        self.factor = linalg.cho_factor(gram, lower=True)

    def solve(self, targets: np.ndarray) -> np.ndarray:
        rhs = self.design.T.astype(float) @ targets
        return linalg.cho_solve(self.factor, rhs)


def mc_targets(v_next, anchors: np.ndarray, sigma: float, n_mc: int, rng) -> np.ndarray:
    """``(1/n_mc) sum_m V(x_j + eps_m)``, ``eps_m ~ N(0, sigma^2 I)``."""
    n, d = anchors.shape
    eps = sigma * rng.standard_normal((n_mc, n, d))
    pts = (anchors[None, :, :] + eps).reshape(n_mc * n, d)
    return np.asarray(v_next(pts), dtype=float).reshape(n_mc, n).mean(axis=0)


def regress_value_weights(rff: RffMap, anchors, v_next: Callable, sigma: float, n_mc: int,
                          ridge: float, seed) -> np.ndarray:
    """Fit ``w`` so that ``value_features(x) @ w ~= E[V(x + eps)]`` at the anchors."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if anchors.shape[0] < 1:
        raise ValueError("need at least one anchor")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = np.random.default_rng(seed)
    y = mc_targets(v_next, anchors, sigma, n_mc, rng)
    return _RidgeSolver(value_features(rff, anchors), ridge).solve(y)


@dataclass
class Policy:
    """Greedy non-stationary policy induced by per-step value weights.

    ``weights[h]`` has length ``D + 1`` (features then intercept).
    """

    weights: np.ndarray
    actions: np.ndarray
    model: object
    rff: RffMap
    reward_fn: Callable
    clip_values: bool = True

    @property
    def horizon(self) -> int:
        return self.weights.shape[0]

    def _check_step(self, h: int) -> None:
        if not 0 <= h < self.horizon:
            raise ValueError(f"step {h} outside [0, {self.horizon})")

    def q_values(self, states, h: int) -> np.ndarray:
        """``Q_h`` for every grid action; shape ``(n, n_actions)``."""
        self._check_step(h)
        s = np.atleast_2d(np.asarray(states, dtype=float))
        n, m = s.shape[0], self.actions.shape[0]
        s_rep = np.repeat(s, m, axis=0)
        a_rep = np.tile(self.actions, (n, 1))
        r = np.asarray(self.reward_fn(s_rep, a_rep), dtype=float)
        w = self.weights[h]
        if np.any(w):
            cont = value_features(self.rff, self.model.predict(s_rep, a_rep)) @ w
        else:
            cont = 0.0
        return (r + cont).reshape(n, m)

    def action_indices(self, states, h: int) -> np.ndarray:
        # np.argmax returns the first maximizer: ties go to the lowest grid index
        return np.argmax(self.q_values(states, h), axis=1)

    def values(self, states, h: int) -> np.ndarray:
        """``V_h(s) = max_a Q_h(s, a)``, clipped to ``[0, H - h]`` when enabled."""
        v = self.q_values(states, h).max(axis=1)
        if self.clip_values:
            v = np.clip(v, 0.0, self.horizon - h)
        return v

    def greedy_action(self, state, h: int) -> np.ndarray:
        return self.actions[self.action_indices(np.asarray(state)[None, :], h)[0]]

    def __call__(self, state, h: int) -> np.ndarray:
        return self.greedy_action(state, h)

    def start_value(self, state) -> float:
        return float(self.values(np.asarray(state)[None, :], 0)[0])

    def weight_norms(self) -> list:
        return [float(np.linalg.norm(w)) for w in self.weights]


def greedy_action(policy: Policy, state, h: int) -> np.ndarray:
    return policy.greedy_action(state, h)


def make_anchors(model, grid: np.ndarray, config: PlannerConfig, state_low, state_high, rng) -> np.ndarray:
    """Uniform draws from the state box plus model outputs on a coarse state mesh."""
    low = np.asarray(state_low, dtype=float)
    high = np.asarray(state_high, dtype=float)
    d = low.shape[0]
    parts = []
    if config.mesh_per_dim > 0:
        axes = [np.linspace(lo, hi, config.mesh_per_dim) for lo, hi in zip(low, high)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        m = grid.shape[0]
        means = model.predict(np.repeat(mesh, m, axis=0), np.tile(grid, (mesh.shape[0], 1)))
        limit = config.n_anchors // 2
        if means.shape[0] > limit:
            means = means[rng.choice(means.shape[0], size=limit, replace=False)]
        parts.append(means)
    n_uniform = config.n_anchors - sum(p.shape[0] for p in parts)
    parts.insert(0, rng.uniform(low, high, size=(max(n_uniform, 0), d)))
    return np.vstack(parts)


def plan_dp(model, rff: RffMap, reward_fn: Callable, horizon: int, grid, config: PlannerConfig, seed, *,
            sigma: float, state_low, state_high) -> Policy:
    """Finite-horizon backward induction ``h = H-1, ..., 0`` with ``V_H = 0``."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[0] < 1:
        raise ValueError("action grid is empty")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if rff.input_dim != np.asarray(state_low).shape[0] or model.state_dim != rff.input_dim:
        raise ValueError("model, value features and state box must share the state dimension")
    rng = np.random.default_rng(seed)
    weights = np.zeros((horizon, rff.n_features + 1))
    policy = Policy(weights, grid, model, rff, reward_fn, config.clip_values)
    if horizon == 1:
        return policy
    anchors = make_anchors(model, grid, config, state_low, state_high, rng)
    solver = _RidgeSolver(value_features(rff, anchors), config.ridge_value())
    for h in range(horizon - 2, -1, -1):
        y = mc_targets(lambda pts: policy.values(pts, h + 1), anchors, sigma, config.n_mc, rng)
        weights[h] = solver.solve(y)
    return policy
