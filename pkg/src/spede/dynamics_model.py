"""Linear dynamics class ``f(s, a) = theta^T psi(s, a)``: fitting, posterior
sampling and the empirical-norm confidence set."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg

from .spectral_features import RffMap, apply_rff


@dataclass(frozen=True)
class KnownFeatureMap:
    """``psi(s, a)``: random Fourier features of the scaled concatenation ``[s, a]``.

    Features are normalized so ``||psi||_2 <= sqrt(2)``.
    """

    rff: RffMap
    state_dim: int
    action_dim: int
    input_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.rff.input_dim != self.state_dim + self.action_dim:
            raise ValueError("feature map input_dim must equal state_dim + action_dim")
        if self.input_scale is not None:
            scale = np.array(self.input_scale, dtype=float)
            if scale.shape != (self.rff.input_dim,) or np.any(scale <= 0):
                raise ValueError("input_scale must be positive with one entry per input")
            scale.setflags(write=False)
            object.__setattr__(self, "input_scale", scale)

    @property
    def dim(self) -> int:
        return self.rff.n_features

    @property
    def feature_bound(self) -> float:
        return math.sqrt(2.0)

    def __call__(self, states, actions) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, dtype=float))
        a = np.atleast_2d(np.asarray(actions, dtype=float))
        if s.shape[1] != self.state_dim or a.shape[1] != self.action_dim:
            raise ValueError(f"expected state dim {self.state_dim} and action dim {self.action_dim}")
        if a.shape[0] == 1 and s.shape[0] > 1:
            a = np.broadcast_to(a, (s.shape[0], self.action_dim))
        x = np.concatenate([s, a], axis=1)
        if self.input_scale is not None:
            x = x / self.input_scale
        return apply_rff(self.rff, x)

    def to_record(self) -> dict:
        return {
            "rff": self.rff.to_record(),
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "input_scale": None if self.input_scale is None else self.input_scale.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "KnownFeatureMap":
        scale = rec.get("input_scale")
        return cls(RffMap.from_record(rec["rff"]), rec["state_dim"], rec["action_dim"],
                   None if scale is None else np.asarray(scale))


def spectral_norm(theta: np.ndarray, rtol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on ``theta^T theta``."""
    theta = np.asarray(theta, dtype=float)
    if not np.any(theta):
        return 0.0
    gram = theta.T @ theta
    # a start vector orthogonal to the top eigenvector stalls; perturb deterministically
    v = np.ones(gram.shape[0]) + np.linspace(0.0, 1e-3, gram.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = gram @ v
        lam = float(v @ w)
        if lam <= 0.0:
            return 0.0
        if np.linalg.norm(w - lam * v) <= rtol * lam:
            break
        v = w / np.linalg.norm(w)
    return math.sqrt(lam)


def project_theta(theta: np.ndarray, bound: float) -> np.ndarray:
    """Uniformly rescale ``theta`` so its spectral norm is at most ``bound``."""
    norm = spectral_norm(theta)
    if norm > bound:
        return theta * (bound / norm)
    return theta


@dataclass(frozen=True)
class LinearDynamicsModel:
    theta: np.ndarray
    feature_map: KnownFeatureMap
    param_bound: float
    output_bound: float

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.feature_map.dim, self.feature_map.state_dim):
            raise ValueError(f"theta must have shape {(self.feature_map.dim, self.feature_map.state_dim)}, "
                             f"got {theta.shape}")
        # tolerance covers power-iteration error in project_theta
        if spectral_norm(theta) > self.param_bound * (1 + 1e-6):
            raise ValueError("theta violates the parameter bound; project it first")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def state_dim(self) -> int:
        return self.feature_map.state_dim

    def predict(self, states, actions) -> np.ndarray:
        """Batch prediction ``clip_C(theta^T psi(s, a))``; returns shape ``(n, d)``."""
        out = self.feature_map(states, actions) @ self.theta
        return clip_norm(out, self.output_bound)

    def to_record(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "feature_map": self.feature_map.to_record(),
            "param_bound": self.param_bound,
            "output_bound": self.output_bound,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LinearDynamicsModel":
        return cls(np.asarray(rec["theta"]), KnownFeatureMap.from_record(rec["feature_map"]),
                   rec["param_bound"], rec["output_bound"])

    def dumps(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "LinearDynamicsModel":
        return cls.from_record(json.loads(text))


def clip_norm(x: np.ndarray, bound: float) -> np.ndarray:
    """Project each row of ``x`` onto the Euclidean ball of radius ``bound``."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(norms > bound, bound / np.where(norms > 0, norms, 1.0), 1.0)
    return x * scale


def predict(model, state, action) -> np.ndarray:
    """Single-point prediction."""
    return model.predict(np.asarray(state)[None, :], np.asarray(action)[None, :])[0]


@dataclass
class History:
    """Append-only transition log grouped by episode."""

    episodes: List = field(default_factory=list)
    _states: list = field(default_factory=list, repr=False)
    _actions: list = field(default_factory=list, repr=False)
    _next: list = field(default_factory=list, repr=False)

    def append(self, trajectory) -> None:
        self.episodes.append(trajectory)
        for t in trajectory.transitions:
            self._states.append(np.asarray(t.state, dtype=float))
            self._actions.append(np.asarray(t.action, dtype=float))
            self._next.append(np.asarray(t.next_state, dtype=float))

    def __len__(self) -> int:
        return len(self._states)

    def arrays(self, limit: Optional[int] = None):
        """``(states, actions, next_states)`` stacked, optionally the first ``limit`` rows."""
        if len(self) == 0:
            raise ValueError("history is empty")
        n = len(self) if limit is None else limit
        return np.stack(self._states[:n]), np.stack(self._actions[:n]), np.stack(self._next[:n])

    def prefix(self, n_episodes: int) -> "History":
        out = History()
        for traj in self.episodes[:n_episodes]:
            out.append(traj)
        return out


def _solve_ridge(gram: np.ndarray, rhs: np.ndarray, ridge: float) -> np.ndarray:
    a = gram + ridge * np.eye(gram.shape[0])
    try:
        if ridge > 0:
            return linalg.solve(a, rhs, assume_a="pos")
        return linalg.solve(a, rhs)
    except (linalg.LinAlgError, ValueError) as exc:
        raise ValueError("normal equations are singular; use ridge > 0 or more data") from exc


def _check_singular(gram: np.ndarray, ridge: float) -> None:
    if ridge > 0:
        return
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise ValueError("normal equations are singular; use ridge > 0 or more data")


def fit_least_squares(history: History, fm: KnownFeatureMap, ridge: float, *,
                      param_bound: float, output_bound: float) -> LinearDynamicsModel:
    """Ridge least squares on ``(psi(s, a), s')`` followed by projection onto ``||theta|| <= W``."""
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    s, a, s_next = history.arrays()
    psi = fm(s, a)
    gram = psi.T @ psi
    _check_singular(gram, ridge)
    theta = _solve_ridge(gram, psi.T @ s_next, ridge)
    return LinearDynamicsModel(project_theta(theta, param_bound), fm, param_bound, output_bound)


def posterior_sample(history: History, fm: KnownFeatureMap, ridge: float, noise_scale: float,
                     seed, *, sigma: float, prior_scale: float, param_bound: float,
                     output_bound: float) -> LinearDynamicsModel:
    """Randomized least squares draw.

    Targets are perturbed by ``noise_scale * N(0, sigma^2 I)`` and the ridge
    penalty is anchored at ``noise_scale * N(0, prior_scale^2)``. With
    ``ridge = sigma^2 / prior_scale^2`` and ``noise_scale = 1`` this is an exact
    draw from the Gaussian posterior of Bayesian linear regression.
    """
    rng = np.random.default_rng(seed)
    d_psi, d = fm.dim, fm.state_dim
    anchor = noise_scale * prior_scale * rng.standard_normal((d_psi, d))
    if len(history) == 0:
        return LinearDynamicsModel(project_theta(anchor, param_bound), fm, param_bound, output_bound)
    s, a, s_next = history.arrays()
    psi = fm(s, a)
    targets = s_next + noise_scale * sigma * rng.standard_normal(s_next.shape)
    gram = psi.T @ psi
    _check_singular(gram, ridge)
    theta = _solve_ridge(gram, psi.T @ targets + ridge * anchor, ridge)
    return LinearDynamicsModel(project_theta(theta, param_bound), fm, param_bound, output_bound)


def empirical_two_norm(model_a, model_b, history: History) -> float:
    """Root sum over logged pairs of ``||f_a(s, a) - f_b(s, a)||^2``."""
    if len(history) == 0:
        return 0.0
    s, a, _ = history.arrays()
    diff = model_a.predict(s, a) - model_b.predict(s, a)
    return float(np.sqrt(np.sum(diff * diff)))


def beta_radius(covering_log: float, delta: float, alpha: float, K: int, H: int,
                sigma: float, C: float, d: int) -> float:
    """Squared confidence radius for the least-squares confidence set.

    ``8 sigma^2 log(N / delta) + 2 H alpha (12 C + sqrt(8 d sigma^2 log(4 K^2 H / delta)))``
    with ``covering_log = log N``.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if K < 1 or H < 1 or alpha < 0 or sigma < 0 or C < 0:
        raise ValueError("invalid confidence-radius parameters")
    first = 8.0 * sigma**2 * (covering_log - math.log(delta))
    second = 2.0 * H * alpha * (12.0 * C + math.sqrt(8.0 * d * sigma**2 * math.log(4.0 * K**2 * H / delta)))
    return first + second


@dataclass(frozen=True)
class ConfidenceSet:
    center: LinearDynamicsModel
    radius: float
    history_len: int


def in_confidence_set(candidate, cset: ConfidenceSet, history: History) -> bool:
    return empirical_two_norm(candidate, cset.center, history) ** 2 <= cset.radius


def model_width(fm: KnownFeatureMap, history: History, beta: float, query_state, query_action,
                ridge: float) -> float:
    """``sqrt(2 beta) * ||psi(s, a)||_{V^{-1}}`` with ``V = sum psi psi^T + ridge I``."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    q = fm(np.asarray(query_state)[None, :], np.asarray(query_action)[None, :])[0]
    gram = ridge * np.eye(fm.dim)
    if len(history) > 0:
        s, a, _ = history.arrays()
        psi = fm(s, a)
        gram = gram + psi.T @ psi
    _check_singular(gram, ridge)
    quad = float(q @ _solve_ridge(gram, q, 0.0))
    return math.sqrt(2.0 * beta) * math.sqrt(max(quad, 0.0))
