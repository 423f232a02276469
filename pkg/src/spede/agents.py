"""Episodic learning loops and the regret ledger.

Seeding scheme: every random stream is ``SeedSequence(master_seed,
spawn_key=(component, *indices))`` with the component ids in ``STREAMS``.
Planner anchors and Monte Carlo evaluation noise are fixed per run and shared
by the agent and the oracle, so the two are compared with common random
numbers and planner approximation error largely cancels.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .dynamics_model import (
    ConfidenceSet,
    History,
    KnownFeatureMap,
    beta_radius,
    fit_least_squares,
    in_confidence_set,
    posterior_sample,
)
from .environments import EnvSpec, env_reset, rollout_batch, run_episode, trajectories_to_csv
from .planner import PlannerConfig, Policy, plan_dp
from .spectral_features import sample_rff

logger = logging.getLogger(__name__)

STREAMS = {
    "env_noise": 1,
    "start_state": 2,
    "posterior": 3,
    "candidates": 4,
    "planner": 5,
    "planner_rff": 6,
    "evaluation": 7,
    "feature_map": 8,
}

AGENT_KINDS = ("ts", "ucb", "oracle", "ce")


def derive_seed(master: int, stream: str, *indices: int) -> int:
    key = (STREAMS[stream],) + tuple(int(i) for i in indices)
    return int(np.random.SeedSequence(int(master), spawn_key=key).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ModelConfig:
    """Function class and posterior settings.

    ``n_features``/``bandwidth`` only matter for environments without a known
    realizable feature map. ``ridge=None`` means ``sigma^2 / prior_scale^2``.
    """

    n_features: int = 64
    bandwidth: float = 1.0
    param_bound: Optional[float] = None
    ridge: Optional[float] = None
    prior_scale: float = 1.0
    noise_scale: float = 1.0

    def ridge_value(self, sigma: float) -> float:
        return sigma**2 / self.prior_scale**2 if self.ridge is None else self.ridge


@dataclass(frozen=True)
class RunConfig:
    env: EnvSpec
    episodes: int
    agent: str = "ts"
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    n_candidates: int = 8
    delta: float = 0.125
    alpha: float = 0.01
    n_eval: int = 2000
    clip_regret: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.agent not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.agent!r}; choose from {AGENT_KINDS}")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.n_eval < 1:
            raise ValueError("n_eval must be >= 1")


@dataclass
class LedgerRow:
    episode: int
    v_star: float
    v_pi: float
    se: float
    inst_regret: float
    cum_regret: float
    achieved_return: float


@dataclass
class RegretLedger:
    rows: List[LedgerRow] = field(default_factory=list)
    clip_regret: bool = False

    def add(self, episode: int, v_star: float, v_pi: float, se: float, achieved: float) -> LedgerRow:
        inst = v_star - v_pi
        counted = max(inst, 0.0) if self.clip_regret else inst
        cum = (self.rows[-1].cum_regret if self.rows else 0.0) + counted
        row = LedgerRow(episode, v_star, v_pi, se, inst, cum, achieved)
        self.rows.append(row)
        return row

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def inst_regret(self) -> np.ndarray:
        return np.array([r.inst_regret for r in self.rows])

    @property
    def cum_regret(self) -> np.ndarray:
        return np.array([r.cum_regret for r in self.rows])

    COLUMNS = ("k", "v_star", "v_pi", "se", "inst_regret", "cum_regret", "return")

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for r in self.rows:
                writer.writerow([r.episode] + [repr(float(v)) for v in
                                               (r.v_star, r.v_pi, r.se, r.inst_regret, r.cum_regret,
                                                r.achieved_return)])

    def violations(self) -> List[str]:
        out = []
        for r in self.rows:
            vals = (r.v_star, r.v_pi, r.se, r.inst_regret, r.cum_regret, r.achieved_return)
            if not all(math.isfinite(v) for v in vals):
                out.append(f"episode {r.episode}: non-finite ledger entry")
            elif r.inst_regret + 3 * r.se < 0:
                out.append(f"episode {r.episode}: regret {r.inst_regret:.4f} below -3 SE ({r.se:.4f})")
        return out


@dataclass
class RunResult:
    ledger: RegretLedger
    history: History
    manifest: dict


class TrueModel:
    """Adapter exposing an environment's ``f*`` through the model ``predict`` interface."""

    def __init__(self, env: EnvSpec):
        self.env = env
        self.state_dim = env.state_dim

    def predict(self, states, actions):
        return self.env.dynamics(np.atleast_2d(states), np.atleast_2d(actions))


def policy_value_mc(env: EnvSpec, policy: Policy, start_state, n_eval: int, seed, dynamics=None):
    """Mean and standard error of the return over ``n_eval`` noisy rollouts.

    The rollout noise depends only on ``(seed, n_eval, env)``, so two policies
    evaluated with the same seed share their noise.
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    noise = np.random.default_rng(seed).standard_normal((n_eval, env.horizon, env.state_dim))
    returns, _, _ = rollout_batch(env, policy.action_indices, start_state, noise, dynamics=dynamics)
    se = float(returns.std(ddof=1) / math.sqrt(n_eval)) if n_eval > 1 else 0.0
    return float(returns.mean()), se


def plan_for_env(env: EnvSpec, model, rff, config: PlannerConfig, seed) -> Policy:
    return plan_dp(model, rff, env.reward_fn, env.horizon, env.actions, config, seed,
                   sigma=env.noise_std, state_low=env.state_low, state_high=env.state_high)


def oracle_policy(env: EnvSpec, config: PlannerConfig, seed: int = 0, rff=None) -> Policy:
    if rff is None:
        rff = config.make_rff(env.state_dim, env.noise_std, derive_seed(seed, "planner_rff"))
    return plan_for_env(env, TrueModel(env), rff, config, derive_seed(seed, "planner"))


def oracle_value(env: EnvSpec, config: PlannerConfig, start_state, n_eval: int = 2000, seed: int = 0) -> float:
    """Planner on the true dynamics, evaluated by Monte Carlo on the true environment."""
    policy = oracle_policy(env, config, seed)
    return policy_value_mc(env, policy, start_state, n_eval, derive_seed(seed, "evaluation"))[0]


def agent_feature_map(env: EnvSpec, model_cfg: ModelConfig, seed: int):
    """Known feature map and bounds ``(psi, W, C)`` for the model class."""
    if env.true_model is not None:
        tm = env.true_model
        W = tm.param_bound if model_cfg.param_bound is None else model_cfg.param_bound
        return tm.feature_map, W, tm.feature_map.feature_bound * W
    d, da = env.state_dim, env.action_dim
    half = np.concatenate([(env.state_high - env.state_low) / 2.0, np.ones(da)])
    if env.action_low is not None:
        half[d:] = np.maximum(np.abs(env.action_low), np.abs(env.action_high))
    fm = KnownFeatureMap(sample_rff(d + da, model_cfg.n_features, model_cfg.bandwidth,
                                    derive_seed(seed, "feature_map")), d, da, input_scale=half)
    W = 100.0 if model_cfg.param_bound is None else model_cfg.param_bound
    return fm, W, env.output_bound


def covering_log_linear(d_phi: int, W: float, B: float, alpha: float) -> float:
    return d_phi * math.log1p(2.0 * B * W / alpha)


def _posterior_spread(fm, history: History, ridge: float, sigma: float, noise_scale: float) -> float:
    """Trace of the randomized-least-squares covariance, ``d sigma^2 tr(V^-1)`` scaled."""
    gram = ridge * np.eye(fm.dim)
    if len(history):
        s, a, _ = history.arrays()
        psi = fm(s, a)
        gram += psi.T @ psi
    if ridge == 0 and len(history) == 0:
        return float("inf")
    return float(noise_scale**2 * fm.state_dim * sigma**2 * np.trace(np.linalg.pinv(gram)))


def _width_sq(fm, history: History, traj, ridge: float, beta: float) -> float:
    """Sum of squared widths ``2 beta ||psi||^2_{V^-1}`` over a new episode."""
    gram = max(ridge, 1e-12) * np.eye(fm.dim)
    if len(history):
        s, a, _ = history.arrays()
        psi = fm(s, a)
        gram += psi.T @ psi
    q = fm(np.stack([t.state for t in traj.transitions]), np.stack([t.action for t in traj.transitions]))
    quad = np.einsum("ij,ij->i", q, np.linalg.solve(gram, q.T).T)
    return float(2.0 * beta * np.sum(np.maximum(quad, 0.0)))


def _run(config: RunConfig) -> RunResult:
    env = config.env
    master = config.seed
    t0 = time.perf_counter()
    fm, W, C = agent_feature_map(env, config.model, master)
    sigma = env.noise_std
    ridge = config.model.ridge_value(sigma)
    noise_scale = 0.0 if config.agent == "ce" else config.model.noise_scale
    rff = config.planner.make_rff(env.state_dim, sigma, derive_seed(master, "planner_rff"))
    planner_seed = derive_seed(master, "planner")
    eval_seed = derive_seed(master, "evaluation")
    oracle = plan_for_env(env, TrueModel(env), rff, config.planner, planner_seed)
    oracle_cache: Dict[bytes, float] = {}
    covering_log = covering_log_linear(fm.dim, W, fm.feature_bound, config.alpha)

    history = History()
    ledger = RegretLedger(clip_regret=config.clip_regret)
    diagnostics = []
    plan_time = eval_time = 0.0
    for k in range(1, config.episodes + 1):
        start = env_reset(env, derive_seed(master, "start_state", k))
        beta = beta_radius(covering_log, config.delta, config.alpha, k, env.horizon, sigma, C, env.state_dim)
        tp = time.perf_counter()
        extra = {}
        if config.agent == "oracle":
            policy = oracle
        elif config.agent in ("ts", "ce"):
            model = posterior_sample(history, fm, ridge, noise_scale, derive_seed(master, "posterior", k),
                                     sigma=sigma, prior_scale=config.model.prior_scale, param_bound=W,
                                     output_bound=C)
            policy = plan_for_env(env, model, rff, config.planner, planner_seed)
        else:
            policy, extra = _ucb_select(env, config, history, fm, W, C, ridge, rff, planner_seed, beta, start, k)
        plan_time += time.perf_counter() - tp

        traj = run_episode(env, policy, start, derive_seed(master, "env_noise", k), episode_index=k)
        te = time.perf_counter()
        key = start.tobytes()
        if key not in oracle_cache:
            oracle_cache[key] = policy_value_mc(env, oracle, start, config.n_eval, eval_seed)[0]
        v_star = oracle_cache[key]
        v_pi, se = policy_value_mc(env, policy, start, config.n_eval, eval_seed)
        eval_time += time.perf_counter() - te
        ledger.add(k, v_star, v_pi, se, traj.total_return)

        diag = {
            "episode": k,
            "beta": beta,
            "posterior_spread": _posterior_spread(fm, history, ridge, sigma, noise_scale),
            "width_sq_sum": _width_sq(fm, history, traj, ridge, beta),
            "planned_start_value": policy.start_value(start),
            "weight_norms": policy.weight_norms(),
        }
        diag.update(extra)
        diagnostics.append(diag)
        history.append(traj)
        if k % 25 == 0:
            logger.info("episode %d cum_regret %.4f", k, ledger.rows[-1].cum_regret)

    manifest = {
        "agent": config.agent,
        "episodes": config.episodes,
        "master_seed": master,
        "seed_scheme": "SeedSequence(master_seed, spawn_key=(stream_id, *indices)); streams "
                       + ", ".join(f"{k}={v}" for k, v in STREAMS.items()),
        "component_seeds": {"planner": planner_seed, "planner_rff": rff.seed, "evaluation": eval_seed},
        "model": {"d_psi": fm.dim, "param_bound": W, "output_bound": C, "ridge": ridge,
                  "noise_scale": noise_scale, "prior_scale": config.model.prior_scale,
                  "covering_log": covering_log},
        "timings": {"total_s": time.perf_counter() - t0, "planning_s": plan_time, "evaluation_s": eval_time},
        "diagnostics": diagnostics,
        "invariant_violations": ledger.violations() + _history_violations(history, env, config.episodes),
        "final_cum_regret": ledger.rows[-1].cum_regret,
    }
    return RunResult(ledger, history, manifest)


def _history_violations(history: History, env: EnvSpec, episodes: int) -> List[str]:
    out = []
    if len(history) != episodes * env.horizon:
        out.append(f"history has {len(history)} transitions, expected {episodes * env.horizon}")
    for traj in history.episodes:
        for t in traj.transitions:
            if not 0.0 <= t.reward <= 1.0:
                out.append(f"episode {traj.episode_index}: reward {t.reward} outside [0, 1]")
    return out


def _ucb_select(env, config, history, fm, W, C, ridge, rff, planner_seed, beta, start, k):
    """Optimistic choice among posterior candidates inside the confidence set.

    The least-squares center is always a candidate, so the feasible set is
    never empty.
    """
    # ridge keeps the center defined before any data arrives
    center = fit_least_squares(history, fm, max(ridge, 1e-8), param_bound=W, output_bound=C) \
        if len(history) else posterior_sample(history, fm, ridge, 0.0, 0, sigma=env.noise_std,
                                              prior_scale=config.model.prior_scale, param_bound=W,
                                              output_bound=C)
    cset = ConfidenceSet(center, beta, len(history))
    models = [center]
    n_inside = 0
    for i in range(config.n_candidates):
        cand = posterior_sample(history, fm, ridge, config.model.noise_scale,
                                derive_seed(config.seed, "candidates", k, i), sigma=env.noise_std,
                                prior_scale=config.model.prior_scale, param_bound=W, output_bound=C)
        if in_confidence_set(cand, cset, history):
            models.append(cand)
            n_inside += 1
    policies = [plan_for_env(env, m, rff, config.planner, planner_seed) for m in models]
    values = [p.start_value(start) for p in policies]
    best = int(np.argmax(values))
    return policies[best], {"candidates_inside": n_inside, "center_value": values[0],
                            "selected_value": values[best], "selected_index": best}


def run_ts(config: RunConfig) -> RunResult:
    if config.agent not in ("ts", "ce"):
        config = replace(config, agent="ts")
    return _run(config)


def run_ucb_approx(config: RunConfig) -> RunResult:
    if config.agent != "ucb":
        config = replace(config, agent="ucb")
    return _run(config)


def run_agent(config: RunConfig) -> RunResult:
    return _run(config)


def history_to_csv(history: History, path) -> None:
    trajectories_to_csv(history.episodes, path)
