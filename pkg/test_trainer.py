#!/usr/bin/env python3
"""
Tests for the Reinforce trainer and its exact-expectation oracles
"""

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from agents import GradientRecord, init_agents, receiver_forward, sender_forward
from errors import GuardExceededError, ParameterError
from feature_store import FeatureStore, ManifestRecord
from game_sampler import GameInstance, GameMode, SplitSpec, sample_noise_game, sample_same_image_game
from numerics import RngStream, l2_normalize, sample_categorical
from trainer import (
    SUCCESS_THRESHOLD,
    AdamState,
    BaselineState,
    Optimizer,
    TrainConfig,
    TrajectoryRecord,
    evaluate,
    expected_reward_exact,
    expected_reward_grad_exact,
    play_game,
    reinforce_gradients,
    reinforce_update,
    run_seed_sweep,
    train,
)

D, H, V = 8, 4, 5


@pytest.fixture
def agents():
    return init_agents(D, H, V, RngStream.named(0, "init"), init_scale=1.0)


@pytest.fixture
def game():
    return sample_noise_game(D, RngStream.named(0, "noise"))


def record_for(game, s_out, r_out):
    x_t, x_d = game.sender_inputs(None)
    x_l, x_r = game.receiver_inputs(None)
    return TrajectoryRecord(
        instance=game,
        symbol=s_out.symbol,
        choice=r_out.choice,
        reward=int(r_out.choice == game.target_position),
        sender_log_prob=s_out.log_prob,
        receiver_log_prob=r_out.log_prob,
        sender_out=s_out,
        receiver_out=r_out,
        x_target=x_t,
        x_distractor=x_d,
        x_left=x_l,
        x_right=x_r,
    )


def all_outcomes(sender, receiver, game):
    """Every (symbol, choice) trajectory of one game with its probability"""
    x_t, x_d = game.sender_inputs(None)
    x_l, x_r = game.receiver_inputs(None)
    outcomes = []
    for s in range(sender.V):
        s_out = sender_forward(sender, x_t, x_d, symbol=s)
        for c in (0, 1):
            r_out = receiver_forward(receiver, x_l, x_r, s, choice=c)
            outcomes.append((s_out.probs[s] * r_out.probs[c], record_for(game, s_out, r_out)))
    return outcomes


def flat(g_sender, g_receiver):
    return np.concatenate([g_sender.flatten(), g_receiver.flatten()])


def test_baseline_moving_average():
    b = BaselineState(value=0.0, decay=0.9)
    b = b.updated(1.0)
    assert b.value == pytest.approx(0.1)
    assert b.updated(1.0).value == pytest.approx(0.19)


def test_play_game_rewards_the_target_position(agents):
    sender, _ = agents
    # a Receiver that always picks the left image
    z = l2_normalize(np.ones(D))
    receiver = replace(agents[1], U_img=np.outer(np.ones(H), z) * 50.0, E_sym=np.ones((H, V)))
    left = l2_normalize(np.arange(1.0, D + 1))
    right = -left
    for position, expected in ((0, 1), (1, 0)):
        game = GameInstance(
            sender_target=position,
            sender_distractor=1 - position,
            receiver_left=0,
            receiver_right=1,
            target_position=position,
            mode=GameMode.NOISE,
            noise_payload=(left, right),
        )
        # the target sits at `position`; the Receiver always answers 0
        record = play_game(sender, receiver, game, RngStream(0))
        assert record.choice == 0
        assert record.reward == expected


def test_untrained_agents_play_at_chance(small_store, small_split):
    sender, receiver = init_agents(small_store.d, 50, 100, RngStream.named(0, "init"))
    rng = RngStream.named(0, "sampling")
    games = [sample_same_image_game(small_store, small_split, rng) for _ in range(2000)]
    mean = evaluate(sender, receiver, games, RngStream.named(0, "eval"), repeats=5, store=small_store)
    assert 0.45 <= mean <= 0.55
    with pytest.raises(ParameterError):
        evaluate(sender, receiver, [], rng)


def test_zero_advantage_leaves_parameters_unchanged(agents, game):
    sender, receiver = agents
    rng = RngStream(1)
    batch = [play_game(sender, receiver, game, rng) for _ in range(16)]
    batch = [b for b in batch if b.reward == batch[0].reward]
    result = reinforce_update(sender, receiver, batch, BaselineState(value=float(batch[0].reward)), lr=1.0)
    for name in sender.TENSOR_NAMES:
        assert np.array_equal(getattr(result.sender, name), getattr(sender, name))
    for name in receiver.TENSOR_NAMES:
        assert np.array_equal(getattr(result.receiver, name), getattr(receiver, name))


def test_single_rewarded_trajectory_steps_along_log_prob_gradient(agents, game):
    sender, receiver = agents
    outcomes = all_outcomes(sender, receiver, game)
    record = next(r for _, r in outcomes if r.reward == 1)
    result = reinforce_update(sender, receiver, [record], BaselineState(value=0.0), lr=0.5)
    g_s, g_r = reinforce_gradients(sender, receiver, [record], 0.0)
    assert_allclose(result.sender.W_vocab - sender.W_vocab, 0.5 * g_s.tensors["W_vocab"], atol=1e-15)
    assert_allclose(result.receiver.E_sym - receiver.E_sym, 0.5 * g_r.tensors["E_sym"], atol=1e-15)
    assert result.baseline.value == pytest.approx(0.01)


def test_first_adam_step_moves_each_parameter_by_the_learning_rate(agents, game):
    sender, receiver = agents
    record = next(r for _, r in all_outcomes(sender, receiver, game) if r.reward == 1)
    g_s, g_r = reinforce_gradients(sender, receiver, [record], 0.0)
    result = reinforce_update(sender, receiver, [record], BaselineState(value=0.0), lr=0.01, adam=AdamState())
    assert result.adam.step == 1
    moved_any = False
    for params, new, grad in ((sender, result.sender, g_s), (receiver, result.receiver, g_r)):
        for name in params.TENSOR_NAMES:
            g = grad.tensors[name]
            moved = getattr(new, name) - getattr(params, name)
            assert np.all(np.abs(moved) <= 0.01 + 1e-12)
            big = np.abs(g) > 1e-3
            moved_any |= bool(big.any())
            assert_allclose(moved[big], 0.01 * np.sign(g[big]), rtol=1e-4)
    assert moved_any


def test_adam_keeps_unit_steps_under_a_constant_gradient(agents, game):
    sender, receiver = agents
    record = next(r for _, r in all_outcomes(sender, receiver, game) if r.reward == 1)
    g_s, g_r = reinforce_gradients(sender, receiver, [record], 0.0)
    g = flat(g_s, g_r)
    big = np.abs(g) > 1e-3
    state = AdamState()
    for step in (1, 2, 3):
        d_s, d_r, state = state.directions(g_s, g_r)
        assert state.step == step
        assert_allclose(flat(d_s, d_r)[big], np.sign(g[big]), rtol=1e-4)
    expected_keys = [f"sender.{n}" for n in sender.TENSOR_NAMES] + [f"receiver.{n}" for n in receiver.TENSOR_NAMES]
    assert sorted(state.m) == sorted(expected_keys)
    assert sorted(state.v) == sorted(expected_keys)


def test_expected_reward_matches_enumeration(agents, game):
    sender, receiver = agents
    manual = sum(p * r.reward for p, r in all_outcomes(sender, receiver, game))
    assert expected_reward_exact(sender, receiver, game) == pytest.approx(manual, abs=1e-14)


def test_uniform_policies_give_one_half(game):
    sender, receiver = init_agents(D, H, V, RngStream(0), init_scale=0.0)
    assert expected_reward_exact(sender, receiver, game) == pytest.approx(0.5, abs=1e-15)


def test_expected_reward_matches_simulation(agents, game):
    sender, receiver = agents
    rng = RngStream.named(0, "sampling")
    mean = evaluate(sender, receiver, [game], rng, repeats=100_000)
    assert mean == pytest.approx(expected_reward_exact(sender, receiver, game), abs=0.005)


@pytest.mark.parametrize("baseline", [0.0, 0.37, 1.0])
def test_reinforce_expectation_equals_exact_gradient(agents, game, baseline):
    """Probability-weighted sum of every possible single-game estimate"""
    sender, receiver = agents
    total_s = GradientRecord.zeros_like(sender)
    total_r = GradientRecord.zeros_like(receiver)
    for prob, record in all_outcomes(sender, receiver, game):
        g_s, g_r = reinforce_gradients(sender, receiver, [record], baseline)
        total_s = total_s + g_s.scaled(prob)
        total_r = total_r + g_r.scaled(prob)
    exact = flat(*expected_reward_grad_exact(sender, receiver, game))
    assert_allclose(flat(total_s, total_r), exact, rtol=1e-10, atol=1e-13)


def test_sampled_reinforce_gradient_is_unbiased(agents, game):
    """200,000 sampled single-game estimates at fixed parameters (b = 0)"""
    sender, receiver = agents
    x_t, x_d = game.sender_inputs(None)
    x_l, x_r = game.receiver_inputs(None)
    s_probs = sender_forward(sender, x_t, x_d, symbol=0).probs
    table = {
        (s, c): record_for(
            game,
            sender_forward(sender, x_t, x_d, symbol=s),
            receiver_forward(receiver, x_l, x_r, s, choice=c),
        )
        for s in range(V)
        for c in (0, 1)
    }
    rng = RngStream.named(0, "sampling")
    batch = []
    for _ in range(200_000):
        s = sample_categorical(s_probs, rng)
        c = sample_categorical(table[(s, 0)].receiver_out.probs, rng)
        batch.append(table[(s, c)])

    estimate = flat(*reinforce_gradients(sender, receiver, batch, 0.0))
    exact = flat(*expected_reward_grad_exact(sender, receiver, game))
    cosine = estimate @ exact / (np.linalg.norm(estimate) * np.linalg.norm(exact))
    assert cosine >= 0.99
    assert np.linalg.norm(estimate) == pytest.approx(np.linalg.norm(exact), rel=0.05)


def test_exact_gradient_matches_finite_differences(agents, game):
    sender, receiver = agents
    sender = replace(sender, b_vocab=np.linspace(-0.3, 0.4, V))
    g_s, g_r = expected_reward_grad_exact(sender, receiver, game)
    coords = [("s", n, idx) for n in sender.TENSOR_NAMES for idx in np.ndindex(getattr(sender, n).shape)]
    coords += [("r", n, idx) for n in receiver.TENSOR_NAMES for idx in np.ndindex(getattr(receiver, n).shape)]
    rng = np.random.default_rng(0)
    eps = 1e-6
    for k in rng.choice(len(coords), size=50, replace=False):
        owner, name, idx = coords[k]
        params = sender if owner == "s" else receiver
        plus, minus = getattr(params, name).copy(), getattr(params, name).copy()
        plus[idx] += eps
        minus[idx] -= eps
        if owner == "s":
            f_plus = expected_reward_exact(replace(sender, **{name: plus}), receiver, game)
            f_minus = expected_reward_exact(replace(sender, **{name: minus}), receiver, game)
            analytic = g_s.tensors[name][idx]
        else:
            f_plus = expected_reward_exact(sender, replace(receiver, **{name: plus}), game)
            f_minus = expected_reward_exact(sender, replace(receiver, **{name: minus}), game)
            analytic = g_r.tensors[name][idx]
        numeric = (f_plus - f_minus) / (2 * eps)
        assert abs(numeric - analytic) <= 1e-5 * max(abs(analytic), 1e-4), (owner, name, idx)


def test_exact_gradient_vanishes_at_symmetric_point(agents):
    sender, receiver = agents
    z = l2_normalize(np.linspace(-1.0, 1.0, D))
    game = GameInstance(0, 1, 0, 1, 0, GameMode.NOISE, noise_payload=(z, z))
    assert expected_reward_exact(sender, receiver, game) == pytest.approx(0.5)
    assert_allclose(flat(*expected_reward_grad_exact(sender, receiver, game)), 0.0, atol=1e-15)


def test_exact_enumeration_guard(game):
    sender, receiver = init_agents(D, 2, 1001, RngStream(0))
    with pytest.raises(GuardExceededError):
        expected_reward_exact(sender, receiver, game)
    with pytest.raises(GuardExceededError):
        expected_reward_grad_exact(sender, receiver, game)


def test_exact_gradient_ascent_is_monotone(agents, game):
    sender, receiver = agents
    previous = expected_reward_exact(sender, receiver, game)
    for _ in range(20):
        g_s, g_r = expected_reward_grad_exact(sender, receiver, game)
        sender, receiver = sender.stepped(g_s, 0.05), receiver.stepped(g_r, 0.05)
        current = expected_reward_exact(sender, receiver, game)
        assert current > previous
        previous = current


def toy_store():
    """Two concepts of one image each, d=4"""
    return FeatureStore.from_raw(np.eye(4)[:2], [ManifestRecord("a", 0, 0), ManifestRecord("b", 1, 0)])


def toy_games():
    return [
        GameInstance(t, 1 - t, *((t, 1 - t) if pos == 0 else (1 - t, t)), pos, GameMode.SAME_IMAGE)
        for t in (0, 1)
        for pos in (0, 1)
    ]


@pytest.mark.slow
def test_toy_game_is_learned():
    store = toy_store()
    split = SplitSpec.all_train(store)
    sender, receiver = init_agents(4, 8, 2, RngStream.named(0, "init"))
    baseline = BaselineState()
    rng = RngStream.named(0, "sampling")
    for _ in range(2000):
        batch = [play_game(sender, receiver, sample_same_image_game(store, split, rng), rng, store) for _ in range(32)]
        update = reinforce_update(sender, receiver, batch, baseline, lr=1.0)
        sender, receiver, baseline = update.sender, update.receiver, update.baseline
    final = np.mean([expected_reward_exact(sender, receiver, g, store) for g in toy_games()])
    assert final > 0.95


def small_config(**overrides):
    base = TrainConfig(
        d=8,
        V=10,
        h=6,
        batch_size=8,
        total_batches=25,
        validation_every=10,
        validation_pairs=32,
        test_games=16,
    )
    return replace(base, **overrides)


def test_train_curve_and_success_flag(small_store, small_split):
    result = train(small_config(), small_store, small_split)
    assert [r.batch for r in result.curve] == [0, 10, 20, 25]
    assert all(0.0 <= r.mvr <= 1.0 for r in result.curve)
    assert all(r.rsa_sr is not None for r in result.curve)
    assert result.final_mvr == result.curve[-1].mvr
    assert result.success == (result.final_mvr >= SUCCESS_THRESHOLD)
    assert result.batches_trained == 25
    assert result.test_reward is not None and 0.0 <= result.test_reward <= 1.0


def test_zero_batches_gives_chance_level_failure(small_store, small_split):
    result = train(small_config(total_batches=0, validation_pairs=256), small_store, small_split)
    assert [r.batch for r in result.curve] == [0]
    assert not result.success
    assert 0.35 <= result.final_mvr <= 0.65


def test_training_is_deterministic(small_store, small_split):
    a = train(small_config(seed=3), small_store, small_split)
    b = train(small_config(seed=3), small_store, small_split)
    c = train(small_config(seed=4), small_store, small_split)
    assert np.array_equal(a.sender.W_img, b.sender.W_img)
    assert np.array_equal(a.receiver.E_sym, b.receiver.E_sym)
    assert a.curve == b.curve
    assert not np.array_equal(a.sender.W_img, c.sender.W_img)


def test_training_without_rsa(small_store, small_split):
    result = train(small_config(rsa_during_training=False, total_batches=10), small_store, small_split)
    assert all(r.rsa_sr is None for r in result.curve)


def test_adam_learns_where_plain_ascent_stays_at_chance(small_store, small_split):
    """h=50, V=100 on unit-norm inputs: raw gradients are tiny at initialization"""
    config = small_config(
        V=100,
        h=50,
        batch_size=32,
        total_batches=1000,
        validation_every=500,
        validation_pairs=256,
        rsa_during_training=False,
        test_games=0,
        learning_rate=0.003,
    )
    assert config.optimizer is Optimizer.ADAM
    adam_runs = run_seed_sweep(config, small_store, 3, small_split)
    assert max(r.final_mvr for r in adam_runs) >= SUCCESS_THRESHOLD

    plain = train(replace(config, optimizer=Optimizer.SGD, learning_rate=0.01), small_store, small_split)
    assert plain.final_mvr < 0.6
    assert not plain.success


def test_config_validation():
    bad_values = (
        dict(V=0),
        dict(learning_rate=0.0),
        dict(baseline_decay=1.0),
        dict(mode=GameMode.NOISE),
        dict(optimizer="adam"),
    )
    for bad in bad_values:
        with pytest.raises(ParameterError):
            small_config(**bad).validate()


def test_seed_sweep_is_ordered_and_matches_single_runs(small_store, small_split):
    config = small_config(total_batches=10)
    seen = []
    results = run_seed_sweep(config, small_store, 3, small_split, threads=2, on_result=lambda r: seen.append(r.seed))
    assert seen == [0, 1, 2]
    assert [r.seed for r in results] == [0, 1, 2]
    single = train(replace(config, seed=1), small_store, small_split)
    assert np.array_equal(results[1].sender.W_vocab, single.sender.W_vocab)
    with pytest.raises(ParameterError):
        run_seed_sweep(config, small_store, 0, small_split)
