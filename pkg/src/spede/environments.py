"""Episodic environments with additive Gaussian noise, ``s' = f*(s, a) + eps``.

Built-ins:

* ``synthetic-linear``: ``f*(s, a) = theta*^T psi(s, a)`` with ``psi`` a fixed
  random Fourier map on ``(s, a)``. Realizable by construction.
* ``pendulum``: torque-limited swing-up, state ``(angle, angular velocity)``.
* ``mountain-car``: continuous mountain car, state ``(position, velocity)``.

Rewards are rescaled into ``[0, 1]`` and the noiseless dynamics are clipped to
a box so ``||f*(s, a)|| <= C`` holds everywhere.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .dynamics_model import KnownFeatureMap, LinearDynamicsModel, project_theta, spectral_norm
from .spectral_features import sample_rff

ACTION_TOL = 1e-9


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment.

    ``dynamics`` and ``reward_fn`` are vectorized: they take ``(n, d)`` states
    and ``(n, d_a)`` actions. ``actions`` is the finite grid used for planning;
    when ``action_low``/``action_high`` are given any action inside the box is
    admissible, otherwise only grid actions are.
    """

    name: str
    state_dim: int
    actions: np.ndarray
    horizon: int
    noise_std: float
    reward_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    output_bound: float
    state_low: np.ndarray
    state_high: np.ndarray
    initial_state: Optional[np.ndarray] = None
    initial_sampler: Optional[Callable[[np.random.Generator], np.ndarray]] = None
    action_low: Optional[np.ndarray] = None
    action_high: Optional[np.ndarray] = None
    postprocess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    true_model: Optional[LinearDynamicsModel] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        acts = np.atleast_2d(np.asarray(self.actions, dtype=float))
        if acts.shape[0] < 1:
            raise ValueError("action grid must be nonempty")
        object.__setattr__(self, "actions", acts)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        if not self.output_bound > 0:
            raise ValueError("output_bound must be positive")
        if (self.initial_state is None) == (self.initial_sampler is None):
            raise ValueError("give exactly one of initial_state and initial_sampler")
        for name in ("state_low", "state_high"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def realizable(self) -> bool:
        return self.true_model is not None

    def check_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape[0] != self.action_dim:
            raise ValueError(f"action must have dimension {self.action_dim}")
        if self.action_low is not None:
            if np.all(a >= self.action_low - ACTION_TOL) and np.all(a <= self.action_high + ACTION_TOL):
                return a
        elif np.any(np.all(np.abs(self.actions - a) <= ACTION_TOL, axis=1)):
            return a
        raise ValueError(f"action {a.tolist()} is outside the action set of {self.name}")


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    step_index: int


@dataclass
class Trajectory:
    transitions: List[Transition]
    episode_index: int = 0

    @property
    def total_return(self) -> float:
        return float(sum(t.reward for t in self.transitions))

    def __len__(self) -> int:
        return len(self.transitions)


def env_reset(spec: EnvSpec, seed=None) -> np.ndarray:
    if spec.initial_state is not None:
        return np.array(spec.initial_state, dtype=float)
    return np.asarray(spec.initial_sampler(np.random.default_rng(seed)), dtype=float)


def true_dynamics_eval(spec: EnvSpec, state, action) -> np.ndarray:
    """Noiseless ``f*(s, a)``. Diagnostic and oracle use only."""
    return spec.dynamics(np.asarray(state, dtype=float)[None, :], np.asarray(action, dtype=float)[None, :])[0]


def _add_noise(spec: EnvSpec, mean: np.ndarray, noise: np.ndarray) -> np.ndarray:
    nxt = mean + spec.noise_std * noise
    if spec.postprocess is not None:
        nxt = spec.postprocess(nxt)
    return nxt


def env_step(spec: EnvSpec, state, action, noise_seed=None, step_index: int = 0) -> Transition:
    if not 0 <= step_index < spec.horizon:
        raise ValueError(f"step_index must lie in [0, {spec.horizon})")
    s = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("state must be finite")
    a = spec.check_action(action)
    mean = true_dynamics_eval(spec, s, a)
    noise = np.random.default_rng(noise_seed).standard_normal(spec.state_dim)
    nxt = _add_noise(spec, mean, noise)
    reward = float(spec.reward_fn(s[None, :], a[None, :])[0])
    return Transition(s, a, nxt, reward, step_index)


def run_episode(spec: EnvSpec, policy, start_state, noise_seed, episode_index: int = 0,
                dynamics=None) -> Trajectory:
    """Roll out ``policy(state, h) -> action`` for one episode.

    All step noise comes from a single stream seeded by ``noise_seed``.
    """
    noise = np.random.default_rng(noise_seed).standard_normal((spec.horizon, spec.state_dim))
    dyn = spec.dynamics if dynamics is None else dynamics
    s = np.asarray(start_state, dtype=float)
    out = []
    for h in range(spec.horizon):
        a = spec.check_action(policy(s, h))
        mean = dyn(s[None, :], a[None, :])[0]
        nxt = _add_noise(spec, mean, noise[h])
        r = float(spec.reward_fn(s[None, :], a[None, :])[0])
        out.append(Transition(s, a, nxt, r, h))
        s = nxt
    return Trajectory(out, episode_index)


def rollout_batch(spec: EnvSpec, action_index_fn, start_states, noise: np.ndarray, dynamics=None):
    """Vectorized rollouts over grid actions.

    ``action_index_fn(states, h)`` returns grid indices for a batch of states.
    ``noise`` is standard normal with shape ``(n, H, d)``; passing the same
    array to two policies gives common random numbers. Returns
    ``(returns, states, action_indices)`` where ``states`` has shape
    ``(n, H + 1, d)``.
    """
    dyn = spec.dynamics if dynamics is None else dynamics
    n = noise.shape[0]
    s = np.broadcast_to(np.asarray(start_states, dtype=float), (n, spec.state_dim)).copy()
    states = np.empty((n, spec.horizon + 1, spec.state_dim))
    idx_all = np.empty((n, spec.horizon), dtype=int)
    states[:, 0] = s
    returns = np.zeros(n)
    for h in range(spec.horizon):
        idx = np.asarray(action_index_fn(s, h), dtype=int)
        a = spec.actions[idx]
        returns += spec.reward_fn(s, a)
        s = _add_noise(spec, dyn(s, a), noise[:, h])
        states[:, h + 1] = s
        idx_all[:, h] = idx
    return returns, states, idx_all


def trajectories_to_csv(trajectories: Sequence[Trajectory], path) -> None:
    trajs = list(trajectories)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        if not trajs:
            writer.writerow(["episode", "step"])
            return
        t0 = trajs[0].transitions[0]
        d, da = len(t0.state), len(t0.action)
        writer.writerow(["episode", "step"] + [f"s{i}" for i in range(d)] + [f"a{i}" for i in range(da)]
                        + ["reward"] + [f"next_s{i}" for i in range(d)])
        for traj in trajs:
            for t in traj.transitions:
                writer.writerow([traj.episode_index, t.step_index] + [repr(float(v)) for v in t.state]
                                + [repr(float(v)) for v in t.action] + [repr(float(t.reward))]
                                + [repr(float(v)) for v in t.next_state])


# ---------------------------------------------------------------------------
# built-in environments


SYNTHETIC_ACTIONS = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def make_synthetic_linear(noise_std: float = 0.1, horizon: int = 10, n_features: int = 32,
                          feature_bandwidth: float = 1.5, goal=(0.3, 0.3), reward_width: float = 0.2,
                          contraction: float = 0.5, action_gain: float = 0.15, seed: int = 2024,
                          param_bound_factor: float = 2.0) -> EnvSpec:
    """Realizable two-dimensional environment.

    ``theta*`` is the ridge fit of ``contraction * s + action_gain * a`` onto the
    feature map over a state-action sample; the environment then uses
    ``theta*^T psi`` exactly, so the true dynamics lie inside the model class.
    """
    d = 2
    fm = KnownFeatureMap(sample_rff(d + 2, n_features, feature_bandwidth, seed), d, 2)
    rng = np.random.default_rng(seed + 1)
    s_fit = rng.uniform(-1.0, 1.0, size=(4000, d))
    a_fit = SYNTHETIC_ACTIONS[rng.integers(0, len(SYNTHETIC_ACTIONS), size=4000)]
    target = contraction * s_fit + action_gain * a_fit
    psi = fm(s_fit, a_fit)
    theta = np.linalg.solve(psi.T @ psi + 1e-3 * np.eye(n_features), psi.T @ target)
    W = float(param_bound_factor * spectral_norm(theta))
    C = fm.feature_bound * W
    true_model = LinearDynamicsModel(project_theta(theta, W), fm, W, C)
    goal = np.asarray(goal, dtype=float)

    def reward_fn(s, a):
        return np.exp(-np.sum((s - goal) ** 2, axis=-1) / (2.0 * reward_width**2))

    return EnvSpec(
        name="synthetic-linear", state_dim=d, actions=SYNTHETIC_ACTIONS, horizon=horizon,
        noise_std=noise_std, reward_fn=reward_fn, dynamics=true_model.predict, output_bound=C,
        state_low=np.full(d, -1.0), state_high=np.full(d, 1.0), initial_state=np.zeros(d),
        true_model=true_model,
        params=dict(noise_std=noise_std, horizon=horizon, n_features=n_features,
                    feature_bandwidth=feature_bandwidth, goal=goal.tolist(), reward_width=reward_width,
                    contraction=contraction, action_gain=action_gain, seed=seed,
                    param_bound_factor=param_bound_factor),
    )


def wrap_angle(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def make_pendulum(noise_std: float = 0.05, horizon: int = 50, n_actions: int = 9, max_torque: float = 2.0,
                  max_speed: float = 8.0, dt: float = 0.05, gravity: float = 10.0, mass: float = 1.0,
                  length: float = 1.0) -> EnvSpec:
    """Swing-up with angle 0 upright; reward ``(1 + cos(angle)) / 2``."""
    C = math.hypot(math.pi, max_speed)

    def dynamics(s, a):
        th, thdot = s[:, 0], s[:, 1]
        u = np.clip(a[:, 0], -max_torque, max_torque)
        new_thdot = thdot + (3 * gravity / (2 * length) * np.sin(th) + 3.0 / (mass * length**2) * u) * dt
        new_thdot = np.clip(new_thdot, -max_speed, max_speed)
        new_th = wrap_angle(th + new_thdot * dt)
        return np.stack([new_th, new_thdot], axis=1)

    def reward_fn(s, a):
        return 0.5 * (1.0 + np.cos(s[:, 0]))

    def postprocess(s):
        s = s.copy()
        s[..., 0] = wrap_angle(s[..., 0])
        return s

    def sampler(rng):
        return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])

    return EnvSpec(
        name="pendulum", state_dim=2, actions=np.linspace(-max_torque, max_torque, n_actions)[:, None],
        horizon=horizon, noise_std=noise_std, reward_fn=reward_fn, dynamics=dynamics, output_bound=C,
        state_low=np.array([-np.pi, -max_speed]), state_high=np.array([np.pi, max_speed]),
        initial_sampler=sampler, action_low=np.array([-max_torque]), action_high=np.array([max_torque]),
        postprocess=postprocess,
        params=dict(noise_std=noise_std, horizon=horizon, n_actions=n_actions, max_torque=max_torque,
                    max_speed=max_speed, dt=dt, gravity=gravity, mass=mass, length=length),
    )


def make_mountain_car(noise_std: float = 0.002, horizon: int = 100, n_actions: int = 5, power: float = 0.0015,
                      goal_position: float = 0.45) -> EnvSpec:
    """Continuous mountain car; reward rises with position and is 1 past the goal."""
    min_pos, max_pos, max_speed = -1.2, 0.6, 0.07
    C = math.hypot(min_pos, max_speed)

    def dynamics(s, a):
        pos, vel = s[:, 0], s[:, 1]
        force = np.clip(a[:, 0], -1.0, 1.0)
        vel = np.clip(vel + force * power - 0.0025 * np.cos(3 * pos), -max_speed, max_speed)
        pos = np.clip(pos + vel, min_pos, max_pos)
        vel = np.where((pos <= min_pos) & (vel < 0), 0.0, vel)
        return np.stack([pos, vel], axis=1)

    def reward_fn(s, a):
        progress = np.clip((s[:, 0] - min_pos) / (goal_position - min_pos), 0.0, 1.0)
        return progress**2

    def sampler(rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    return EnvSpec(
        name="mountain-car", state_dim=2, actions=np.linspace(-1.0, 1.0, n_actions)[:, None],
        horizon=horizon, noise_std=noise_std, reward_fn=reward_fn, dynamics=dynamics, output_bound=C,
        state_low=np.array([min_pos, -max_speed]), state_high=np.array([max_pos, max_speed]),
        initial_sampler=sampler, action_low=np.array([-1.0]), action_high=np.array([1.0]),
        params=dict(noise_std=noise_std, horizon=horizon, n_actions=n_actions, power=power,
                    goal_position=goal_position),
    )


ENVIRONMENTS = {
    "synthetic-linear": make_synthetic_linear,
    "pendulum": make_pendulum,
    "mountain-car": make_mountain_car,
}


def make_env(name: str, **params) -> EnvSpec:
    try:
        factory = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return factory(**params)

