"""Policy loops: trace equivalence, update rules, invariants, baselines."""

import math

import numpy as np
import pytest

from gmocp.adapt import AlphaState
from gmocp.graph import GraphParams
from gmocp.policies import (
    ACIPolicy,
    COMAPolicy,
    GMOCPPolicy,
    MOCPPolicy,
    PolicyConfig,
    make_policy,
    vote_set,
)
from gmocp.rng import stream_rng
from gmocp.scoring import (
    CalibrationStore,
    ScoreParams,
    all_label_scores,
    build_prediction_set,
    nonconformity_score,
    optimal_alpha_bar,
    quantile_threshold,
)
from gmocp.adapt import sfogd_update
from gmocp.streams import ModelProfile, StreamConfig, generate_stream

from reference_gmocp import reference_trace


def small_stream(n_models=3, horizon=50, n_labels=6, seed=0, schedule="gradual",
                 batch_size=10):
    qualities = ["high", "medium", "low"] * 3
    cfg = StreamConfig(
        model_profiles=tuple(ModelProfile(q) for q in qualities[:n_models]),
        n_labels=n_labels,
        horizon=horizon,
        batch_size=batch_size,
        schedule=schedule,
    )
    return list(generate_stream(cfg, master_seed=seed))


def policy_config(n_models, n_labels, graph=None, **kw):
    return PolicyConfig(
        n_models=n_models,
        score=ScoreParams(xi=0.1, k_reg=1, n_labels=n_labels),
        graph=graph,
        **kw,
    )


# ------------------------------------------------- trace vs reference loop

@pytest.mark.parametrize("beta", [0.0, 0.05])
def test_gmocp_trace_matches_reference(beta):
    steps = small_stream()
    graph = GraphParams.uniform(2, 2, 0.3)
    cfg = policy_config(3, 6, graph=graph, beta=beta)
    policy = GMOCPPolicy(cfg, master_seed=7)

    ref = reference_trace(
        [( [list(map(float, p)) for p in s.probs], s.true_label) for s in steps],
        n_models=3, xi=0.1, k_reg=1, n_labels=6,
        eta_e=[0.3, 0.3], n_selective=2, max_links=2,
        beta=beta, master_seed=7,
    )

    for step, expect in zip(steps, ref):
        pred, rec = policy.step(step.probs, step.true_label)
        assert rec.node == expect["node"]
        assert rec.subset == expect["subset"]
        assert rec.chosen_model == expect["chosen"]
        assert rec.set_size == expect["set_size"]
        assert pred.labels == expect["labels"]
        assert rec.err == expect["err"]
        got_w = [s.weight for s in policy.models]
        got_a = [s.alpha.alpha for s in policy.models]
        assert got_w == pytest.approx(expect["weights"], rel=1e-9)
        assert got_a == pytest.approx(expect["alphas"], rel=1e-9)


def test_gmocp_reduces_to_single_model_loop():
    """J=1, N=1, M=1 equals a hand-rolled adaptive single-model loop."""
    steps = small_stream(n_models=1, horizon=200, schedule="stationary")
    cfg = policy_config(1, 6, graph=GraphParams.uniform(1, 1, 0.5))
    policy = GMOCPPolicy(cfg, master_seed=3)

    rng_u = stream_rng(3, "gmocp/tiebreak")
    rng_other = [stream_rng(3, "gmocp/graph"), stream_rng(3, "gmocp/node"),
                 stream_rng(3, "gmocp/model")]
    params = cfg.score
    store = CalibrationStore()
    state = AlphaState(alpha=0.1, eta=0.05)
    errs = []
    for s in steps:
        u = float(rng_u.random())
        for r in rng_other:
            r.random()  # graph/node/model draws are consumed but forced
        thr = quantile_threshold(store, state.alpha)
        pred = build_prediction_set(s.probs[0], thr, u, params)
        err = int(s.true_label not in pred)
        score = nonconformity_score(s.probs[0], s.true_label, u, params)
        ab = optimal_alpha_bar(store, score)
        state = sfogd_update(state, ab, 0.1)
        store.insert(score)

        _, rec = policy.step(s.probs, s.true_label)
        assert (rec.set_size, rec.err, rec.chosen_model) == (pred.size, err, 0)
        errs.append(err)
    assert policy.models[0].alpha.alpha == pytest.approx(state.alpha, rel=1e-12)
    # easy stationary stream: the error rate settles near the target and the
    # adaptive level stays inside the guaranteed range
    assert np.mean(errs) <= 0.15
    assert -0.05 - 1e-9 <= policy.models[0].alpha.alpha <= 1.05 + 1e-9


# --------------------------------------------------------- update algebra

def test_zero_losses_leave_weights_unchanged():
    """alpha_bar engineered to equal alpha for every model: weights stay 1."""
    # alpha_init matches the float value of 1 - 9/10 so the residual is exactly 0
    cfg = policy_config(2, 20, graph=GraphParams.uniform(1, 2, 1.0),
                        alpha_init=1.0 - 9 / 10)
    policy = GMOCPPolicy(cfg, 11)
    for st in policy.models:
        # 9 stored scores all below the incoming one: alpha_bar = 1 - 9/10 = alpha
        st.calibration = CalibrationStore([-1.0] * 9)
    probs = np.full((2, 20), 0.05)
    _, rec = policy.step(probs, 0)
    assert all(loss == 0.0 for loss in rec.losses.values())
    assert all(st.weight == 1.0 for st in policy.models)


def test_egmocp_weight_ratio_len_penalty():
    """Equal losses, set sizes 1 vs 20: ratio exp(eps * beta * 19) ~ 1.608."""
    n_labels = 20
    cfg = PolicyConfig(
        n_models=2,
        score=ScoreParams(xi=0.1, k_reg=20, n_labels=n_labels),
        graph=GraphParams.uniform(1, 8, 1.0),
        beta=0.05,
        epsilon=0.5,
    )
    policy = GMOCPPolicy(cfg, master_seed=0)
    # both models: alpha_bar = 1 and identical pinball losses; model 0 yields a
    # singleton set, model 1 includes all 20 labels at its threshold
    policy.models[0].calibration = CalibrationStore([0.6] * 19)
    policy.models[1].calibration = CalibrationStore([0.06] * 19)
    probs = np.array([[1.0] + [0.0] * 19, [0.05] * 20])

    pred, rec = policy.step(probs, 0)
    assert rec.subset == (0, 1)  # seed chosen so both models are in play
    assert rec.set_size == (1 if rec.chosen_model == 0 else 20)
    w = policy.weights
    expected = math.exp(cfg.epsilon * cfg.beta * (20 - 1))
    assert w[0] / w[1] == pytest.approx(expected, rel=1e-9)
    assert w[0] / w[1] == pytest.approx(1.608, abs=1e-3)


def test_gmocp_equals_egmocp_at_beta_zero():
    steps = small_stream(horizon=40)
    graph = GraphParams.uniform(2, 2, 0.3)
    base = policy_config(3, 6, graph=graph)
    forced = policy_config(3, 6, graph=graph, beta=0.5)
    p1 = GMOCPPolicy(base, 5)
    p2 = make_policy("gmocp", forced, 5)  # beta forced back to 0
    assert p2.cfg.beta == 0.0
    for s in steps:
        _, r1 = p1.step(s.probs, s.true_label)
        _, r2 = p2.step(s.probs, s.true_label)
        assert (r1.subset, r1.chosen_model, r1.set_size, r1.err) == (
            r2.subset, r2.chosen_model, r2.set_size, r2.err
        )
    assert [a.weight for a in p1.models] == [b.weight for b in p2.models]


def test_egmocp_strong_weak_weight_separation():
    """Strong model's normalized weight exceeds 0.9 by T=2000 in >= 9/10 seeds."""
    cfg = PolicyConfig(
        n_models=2,
        score=ScoreParams(xi=0.1, k_reg=1, n_labels=20),
        graph=GraphParams.uniform(1, 3, 0.2),
        beta=0.05,
    )
    stream_cfg = StreamConfig(
        model_profiles=(ModelProfile("high"), ModelProfile("low")),
        horizon=2000,
    )
    wins = 0
    for seed in range(10):
        policy = make_policy("egmocp", cfg, seed)
        for s in generate_stream(stream_cfg, master_seed=seed):
            policy.step(s.probs, s.true_label)
        w = policy.weights
        if w[0] / w.sum() > 0.9:
            wins += 1
    assert wins >= 9


# ---------------------------------------------------------------- invariants

def test_gmocp_subset_invariants_and_determinism():
    steps = small_stream(horizon=100)
    graph = GraphParams.uniform(2, 2, 0.3)
    cfg = policy_config(3, 6, graph=graph, beta=0.05)

    def run():
        policy = make_policy("egmocp", cfg, 13)
        out = []
        for s in steps:
            _, rec = policy.step(s.probs, s.true_label)
            assert rec.chosen_model in rec.subset
            assert 1 <= len(rec.subset) <= 2
            out.append((rec.t, rec.node, rec.subset, rec.chosen_model,
                        rec.set_size, rec.err, rec.chosen_loss,
                        tuple(sorted(rec.losses.items()))))
        return out

    assert run() == run()


def test_weight_rescale_on_underflow():
    cfg = policy_config(2, 4, graph=GraphParams.uniform(1, 2, 1.0))
    policy = GMOCPPolicy(cfg, 17)
    policy.models[0].weight = 1e-310
    policy.models[1].weight = 1e-320
    policy._rescale_weights()
    assert policy.models[0].weight == 1.0
    assert policy.models[1].weight == pytest.approx(1e-10, rel=1e-6)


def test_shared_u_flag():
    steps = small_stream(horizon=5)
    cfg = policy_config(3, 6, graph=GraphParams.uniform(1, 2, 0.5), shared_u=True)
    policy = GMOCPPolicy(cfg, 19)
    u = policy._draw_u()
    assert len(set(u.tolist())) == 1


# -------------------------------------------------------------------- MOCP

def test_mocp_single_model_matches_hand_loop():
    steps = small_stream(n_models=1, horizon=120)
    cfg = policy_config(1, 6)
    policy = MOCPPolicy(cfg, 23)

    rng_u = stream_rng(23, "mocp/tiebreak")
    rng_model = stream_rng(23, "mocp/model")
    store = CalibrationStore()
    state = AlphaState(alpha=0.1, eta=0.05)
    for s in steps:
        u = float(rng_u.random())
        rng_model.random()  # selection draw consumed even with one model
        thr = quantile_threshold(store, state.alpha)
        pred = build_prediction_set(s.probs[0], thr, u, cfg.score)
        score = nonconformity_score(s.probs[0], s.true_label, u, cfg.score)
        ab = optimal_alpha_bar(store, score)
        state = sfogd_update(state, ab, 0.1)
        store.insert(score)

        _, rec = policy.step(s.probs, s.true_label)
        assert rec.chosen_model == 0
        assert rec.set_size == pred.size
        assert rec.err == int(s.true_label not in pred)
    assert policy.models[0].alpha.alpha == pytest.approx(state.alpha, rel=1e-12)


def test_mocp_symmetry_equal_losses():
    """Two clones of the same model keep exactly equal weights forever."""
    steps = small_stream(n_models=1, horizon=60)
    cfg = policy_config(2, 6, shared_u=True)
    policy = MOCPPolicy(cfg, 29)
    for s in steps:
        probs = (s.probs[0], s.probs[0])
        policy.step(probs, s.true_label)
        assert policy.models[0].weight == policy.models[1].weight
        assert policy.models[0].alpha.alpha == policy.models[1].alpha.alpha


# -------------------------------------------------------------------- COMA

def test_vote_two_of_three_passes_low_threshold():
    membership = np.array([[True], [True], [False]])
    got = vote_set(membership, np.array([1 / 3, 1 / 3, 1 / 3]), 0.2)
    assert got == frozenset({0})


def test_vote_unanimity_still_fails_at_u_one():
    # threshold 1 with a strict inequality excludes even a full vote
    membership = np.array([[True], [True]])
    got = vote_set(membership, np.array([0.5, 0.5]), 1.0)
    assert got == frozenset()


def test_vote_exact_half_excluded():
    membership = np.array([[True], [False]])
    got = vote_set(membership, np.array([0.5, 0.5]), 0.0)
    assert got == frozenset()


def test_coma_smoke_run():
    steps = small_stream(horizon=300)
    cfg = policy_config(3, 6, coma_gamma=0.01)
    policy = COMAPolicy(cfg, 31)
    errs = []
    for s in steps:
        pred, rec = policy.step(s.probs, s.true_label)
        assert 0 <= rec.set_size <= 6
        assert rec.chosen_model == -1
        errs.append(rec.err)
    assert -0.05 - 1e-9 <= policy.alpha.alpha <= 1.05 + 1e-9
    assert np.mean(errs) < 0.5


# --------------------------------------------------------------------- ACI

def test_aci_update_directions():
    cfg = policy_config(1, 6, aci_lr=0.05)
    policy = ACIPolicy(cfg, 37)
    probs = (np.array([0.5, 0.2, 0.1, 0.1, 0.05, 0.05]),)
    policy.step(probs, 0)  # empty store: +inf threshold, covered
    assert policy.alpha == pytest.approx(0.1 + 0.05 * 0.1)

    policy2 = ACIPolicy(cfg, 37)
    policy2.calibration = CalibrationStore([-1.0] * 10)  # force a miss
    policy2.step(probs, 0)
    assert policy2.alpha == pytest.approx(0.1 - 0.05 * 0.9)


def test_aci_long_run_error_rate():
    cfg = policy_config(1, 20, aci_lr=0.05)
    stream_cfg = StreamConfig(
        model_profiles=(ModelProfile("medium"),),
        horizon=5000,
        schedule="stationary",
    )
    policy = ACIPolicy(cfg, 41)
    errs = [policy.step(s.probs, s.true_label)[1].err
            for s in generate_stream(stream_cfg, master_seed=41)]
    assert np.mean(errs) == pytest.approx(0.1, abs=0.015)


def test_aci_requires_single_model():
    with pytest.raises(ValueError):
        ACIPolicy(policy_config(2, 6), 0)


# ---------------------------------------------------------------- factory

def test_make_policy_validation():
    cfg = policy_config(2, 6, graph=GraphParams.uniform(1, 2, 0.5))
    with pytest.raises(ValueError):
        make_policy("egmocp", cfg, 0)  # beta must be positive
    with pytest.raises(ValueError):
        make_policy("nope", cfg, 0)
    with pytest.raises(ValueError):
        GMOCPPolicy(policy_config(2, 6), 0)  # graph required
    assert isinstance(make_policy("mocp", cfg, 0), MOCPPolicy)
    assert isinstance(make_policy("coma", cfg, 0), COMAPolicy)


def test_policy_config_validation():
    with pytest.raises(ValueError):
        policy_config(0, 6)
    with pytest.raises(ValueError):
        policy_config(2, 6, target_alpha=1.5)
    with pytest.raises(ValueError):
        policy_config(2, 6, epsilon=0.0)
    with pytest.raises(ValueError):
        policy_config(2, 6, beta=1.5)
