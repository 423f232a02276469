import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spede.dynamics_model import (
    ConfidenceSet,
    History,
    KnownFeatureMap,
    LinearDynamicsModel,
    beta_radius,
    clip_norm,
    empirical_two_norm,
    fit_least_squares,
    in_confidence_set,
    model_width,
    posterior_sample,
    predict,
    project_theta,
    spectral_norm,
)
from spede.environments import Trajectory, Transition, make_synthetic_linear, run_episode
from spede.spectral_features import sample_rff


@pytest.fixture(scope="module")
def env():
    return make_synthetic_linear()


def random_history(env, n_episodes, seed):
    rng = np.random.default_rng(seed)
    hist = History()
    for k in range(n_episodes):
        acts = env.actions[rng.integers(len(env.actions), size=env.horizon)]
        hist.append(run_episode(env, lambda s, h, acts=acts: acts[h], np.zeros(2),
                                np.random.SeedSequence(seed, spawn_key=(k,)), episode_index=k))
    return hist


def model_for(env, theta):
    tm = env.true_model
    return LinearDynamicsModel(project_theta(theta, tm.param_bound), tm.feature_map, tm.param_bound,
                               tm.output_bound)


def test_spectral_norm_matches_svd():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.normal(size=(rng.integers(1, 40), rng.integers(1, 5)))
        assert spectral_norm(m) == pytest.approx(np.linalg.norm(m, 2), rel=1e-7)
    assert spectral_norm(np.zeros((3, 2))) == 0.0


def test_projection_contract():
    m = np.random.default_rng(1).normal(size=(10, 2)) * 5
    p = project_theta(m, 1.5)
    assert spectral_norm(p) <= 1.5 * (1 + 1e-8)
    np.testing.assert_array_equal(project_theta(p, 100.0), p)


def test_model_rejects_bad_theta(env):
    fm = env.true_model.feature_map
    with pytest.raises(ValueError):
        LinearDynamicsModel(np.zeros((3, 2)), fm, 1.0, 1.0)
    with pytest.raises(ValueError):
        LinearDynamicsModel(np.full((fm.dim, 2), 10.0), fm, 1.0, 1.0)


def test_fit_interpolates_noiseless():
    # informative design: inputs spread over several bandwidths keep the Gram matrix well conditioned
    fm = KnownFeatureMap(sample_rff(4, 16, 1.0, 0), 2, 2)
    rng = np.random.default_rng(0)
    theta = rng.normal(size=(16, 2))
    hist = History()
    for k in range(20):
        s = rng.uniform(-3, 3, (10, 2))
        a = rng.uniform(-3, 3, (10, 2))
        nxt = fm(s, a) @ theta
        hist.append(Trajectory([Transition(s[h], a[h], nxt[h], 0.0, h) for h in range(10)], k))
    fit = fit_least_squares(hist, fm, 1e-10, param_bound=100.0, output_bound=1e3)
    assert np.linalg.norm(fit.theta - theta, 2) <= 1e-6


def test_fit_consistency(env):
    fm, tm = env.true_model.feature_map, env.true_model
    small, large = [], []
    for seed in range(20):
        hist = random_history(env, 400, seed)
        for n_ep, out in ((25, small), (400, large)):
            fit = fit_least_squares(hist.prefix(n_ep), fm, 1e-6, param_bound=tm.param_bound,
                                    output_bound=tm.output_bound)
            out.append(np.linalg.norm(fit.theta - tm.theta, 2))
    assert np.median(large) <= np.median(small)


def test_fit_errors(env):
    fm = env.true_model.feature_map
    with pytest.raises(ValueError):
        fit_least_squares(History(), fm, 1.0, param_bound=1.0, output_bound=1.0)
    with pytest.raises(ValueError, match="singular"):
        fit_least_squares(random_history(env, 1, 0), fm, 0.0, param_bound=100.0, output_bound=100.0)
    with pytest.raises(ValueError):
        fit_least_squares(random_history(env, 1, 0), fm, -1.0, param_bound=100.0, output_bound=100.0)


def test_least_squares_optimality(env):
    tm = env.true_model
    hist = random_history(env, 20, 3)
    ridge = 0.5
    fit = fit_least_squares(hist, tm.feature_map, ridge, param_bound=1e6, output_bound=1e6)
    s, a, s2 = hist.arrays()
    psi = tm.feature_map(s, a)

    def objective(th):
        return np.sum((psi @ th - s2) ** 2) + ridge * np.sum(th**2)

    base = objective(fit.theta)
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = rng.normal(size=fit.theta.shape)
        assert objective(fit.theta + 1e-3 * d / np.linalg.norm(d)) >= base


def test_predict_examples(env):
    fm = env.true_model.feature_map
    zero = LinearDynamicsModel(np.zeros((fm.dim, 2)), fm, 1.0, 1.0)
    np.testing.assert_array_equal(predict(zero, np.zeros(2), env.actions[1]), np.zeros(2))
    big = LinearDynamicsModel(env.true_model.theta, fm, env.true_model.param_bound, 0.01)
    out = predict(big, np.array([0.9, 0.9]), env.actions[1])
    assert np.linalg.norm(out) == pytest.approx(0.01, rel=1e-12)
    rng = np.random.default_rng(0)
    s = rng.uniform(-1, 1, (100, 2))
    a = env.actions[rng.integers(5, size=100)]
    x = np.concatenate([s, a], axis=1)
    ref = np.sqrt(2.0 / fm.dim) * np.cos(x @ fm.rff.frequencies.T + fm.rff.phases) @ env.true_model.theta
    np.testing.assert_allclose(env.true_model.predict(s, a), ref, rtol=0, atol=1e-12)


def test_clip_norm():
    x = np.array([[3.0, 4.0], [0.0, 0.0], [0.3, 0.4]])
    out = clip_norm(x, 1.0)
    np.testing.assert_allclose(out[0], [0.6, 0.8])
    np.testing.assert_array_equal(out[1:], x[1:])


def test_empirical_two_norm(env):
    hist = random_history(env, 3, 0)
    tm = env.true_model
    assert empirical_two_norm(tm, tm, hist) == 0.0
    one = History()
    one.append(Trajectory([hist.episodes[0].transitions[0]], 0))
    other = model_for(env, tm.theta * 0.9)
    s, a, _ = one.arrays()
    v = tm.predict(s, a) - other.predict(s, a)
    assert empirical_two_norm(tm, other, one) == pytest.approx(np.linalg.norm(v), rel=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = [model_for(env, tm.theta + rng.normal(size=tm.theta.shape)) for _ in range(3)]
        ab = empirical_two_norm(m[0], m[1], hist)
        bc = empirical_two_norm(m[1], m[2], hist)
        ac = empirical_two_norm(m[0], m[2], hist)
        assert ac <= ab + bc + 1e-9


def test_beta_radius_examples():
    assert beta_radius(5.0, 0.1, 0.0, 10, 5, 0.3, 2.0, 2) == pytest.approx(8 * 0.09 * (5 + math.log(10)))
    assert beta_radius(5.0, 0.1, 0.02, 10, 5, 0.0, 2.0, 2) == pytest.approx(2 * 5 * 0.02 * 24)
    # independent evaluation, second term composed separately
    first = 8 * 0.01 * (10 - math.log(0.25))
    inner = 8 * 2 * 0.01 * math.log(4 * 100**2 * 10 / 0.25)
    second = 2 * 10 * 0.01 * (12 * 1 + inner**0.5)
    assert beta_radius(10, 0.25, 0.01, 100, 10, 0.1, 1.0, 2) == pytest.approx(first + second, rel=1e-12)
    for bad in (0.0, 1.0, -0.5):
        with pytest.raises(ValueError):
            beta_radius(1.0, bad, 0.1, 1, 1, 1.0, 1.0, 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10**6), st.floats(1e-4, 1.0), st.floats(0.01, 2.0))
def test_beta_monotone_in_k(K, alpha, sigma):
    assert beta_radius(3.0, 0.1, alpha, K + 1, 10, sigma, 5.0, 2) >= beta_radius(3.0, 0.1, alpha, K, 10, sigma, 5.0, 2)


def test_confidence_membership(env):
    hist = random_history(env, 2, 0)
    tm = env.true_model
    assert in_confidence_set(tm, ConfidenceSet(tm, 0.0, len(hist)), hist)
    other = model_for(env, tm.theta * 0.5)
    assert not in_confidence_set(other, ConfidenceSet(tm, 0.0, len(hist)), hist)
    d = empirical_two_norm(tm, other, hist)
    assert in_confidence_set(other, ConfidenceSet(tm, d**2 * (1 + 1e-9), len(hist)), hist)


def test_posterior_degenerates_to_least_squares(env):
    tm = env.true_model
    hist = random_history(env, 5, 1)
    kw = dict(param_bound=tm.param_bound, output_bound=tm.output_bound)
    ls = fit_least_squares(hist, tm.feature_map, 0.3, **kw)
    ps = posterior_sample(hist, tm.feature_map, 0.3, 0.0, seed=4, sigma=0.1, prior_scale=1.0, **kw)
    np.testing.assert_array_equal(ps.theta, ls.theta)


def test_posterior_prior_draw_and_determinism(env):
    tm = env.true_model
    kw = dict(sigma=0.1, prior_scale=1.0, param_bound=2.0, output_bound=tm.output_bound)
    p = posterior_sample(History(), tm.feature_map, 1.0, 1.0, seed=0, **kw)
    assert spectral_norm(p.theta) <= 2.0 * (1 + 1e-8)
    hist = random_history(env, 2, 0)
    a = posterior_sample(hist, tm.feature_map, 1.0, 1.0, seed=5, **kw)
    b = posterior_sample(hist, tm.feature_map, 1.0, 1.0, seed=5, **kw)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_posterior_spread_shrinks(env):
    tm = env.true_model
    kw = dict(sigma=0.1, prior_scale=1.0, param_bound=tm.param_bound, output_bound=tm.output_bound)
    ridge = 0.01
    ratios = []
    for h in range(5):
        full = random_history(env, 200, 100 + h)
        spreads = []
        for n_ep in (5, 200):
            part = full.prefix(n_ep)
            draws = np.array([posterior_sample(part, tm.feature_map, ridge, 1.0, seed=s, **kw).theta.ravel()
                              for s in range(50)])
            spreads.append(np.trace(np.cov(draws.T)))
        ratios.append(spreads[1] / spreads[0])
    assert np.median(ratios) <= 1.0


def test_model_width(env):
    fm = env.true_model.feature_map
    s, a = np.array([0.1, 0.2]), env.actions[1]
    psi = fm(s[None], a[None])[0]
    assert model_width(fm, History(), 2.0, s, a, 1.0) == pytest.approx(2.0 * np.linalg.norm(psi), rel=1e-12)
    assert model_width(fm, History(), 0.0, s, a, 1.0) == 0.0
    q2 = psi @ psi
    for n in (1, 4, 16):
        hist = History()
        hist.append(Trajectory([Transition(s, a, np.zeros(2), 0.0, 0)] * n, 0))
        expected = np.sqrt(2.0) * np.sqrt(q2 / (1 + n * q2))
        assert model_width(fm, hist, 1.0, s, a, 1.0) == pytest.approx(expected, rel=1e-9)
    with pytest.raises(ValueError):
        model_width(fm, History(), 1.0, s, a, 0.0)
    with pytest.raises(ValueError):
        model_width(fm, History(), -1.0, s, a, 1.0)


def test_history_growth_and_arrays(env):
    hist = random_history(env, 4, 0)
    assert len(hist) == 4 * env.horizon
    s, a, s2 = hist.arrays(limit=3)
    assert s.shape == (3, 2)
    assert len(hist.prefix(2)) == 2 * env.horizon
    with pytest.raises(ValueError):
        History().arrays()


def test_model_serialization(env):
    tm = env.true_model
    back = LinearDynamicsModel.loads(tm.dumps())
    np.testing.assert_array_equal(back.theta, tm.theta)
    s = np.array([[0.2, 0.3]])
    np.testing.assert_array_equal(back.predict(s, env.actions[:1]), tm.predict(s, env.actions[:1]))
    fm = KnownFeatureMap(sample_rff(3, 8, 1.0, 0), 2, 1, input_scale=np.array([1.0, 2.0, 3.0]))
    fm2 = KnownFeatureMap.from_record(fm.to_record())
    np.testing.assert_array_equal(fm(np.zeros((1, 2)), np.ones((1, 1))), fm2(np.zeros((1, 2)), np.ones((1, 1))))
