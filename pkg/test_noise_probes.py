#!/usr/bin/env python3
"""
Tests for the cross-condition reward table and the swap test
"""

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from agents import init_agents
from errors import DimensionMismatchError, ParameterError
from game_sampler import GameMode
from noise_probes import cross_eval, draw_noise_pairs, swap_test
from numerics import RngStream

D, H, V = 8, 4, 6


@pytest.fixture
def agents():
    return init_agents(D, H, V, RngStream.named(0, "init"))


def test_noise_pairs_are_unit_vectors():
    z1, z2 = draw_noise_pairs(D, 50, RngStream(0))
    assert z1.shape == z2.shape == (50, D)
    assert_allclose(np.linalg.norm(z1, axis=1), 1.0)
    assert_allclose(np.linalg.norm(z2, axis=1), 1.0)


def test_content_blind_sender_never_changes_symbol(agents):
    sender, _ = agents
    constant = replace(sender, W_vocab=np.zeros_like(sender.W_vocab), b_vocab=np.arange(V, dtype=np.float64))
    result = swap_test(constant, D, n_pairs=200, runs=3, rng=RngStream(1), checkpoint_id="abc")
    assert result.fraction_changed == 0.0
    assert result.per_run == (0.0, 0.0, 0.0)
    assert (result.checkpoint_id, result.kind) == ("abc", "swap_test")


def test_antisymmetric_sender_always_changes_symbol(agents):
    sender, _ = agents
    A = RngStream(2).standard_normal((V, H))
    flipping = replace(sender, W_vocab=np.hstack([A, -A]))
    result = swap_test(flipping, D, n_pairs=200, runs=2, rng=RngStream(3))
    assert result.fraction_changed == 1.0


def test_swap_test_is_seeded(agents):
    sender, _ = agents
    a = swap_test(sender, D, n_pairs=100, runs=2, rng=RngStream.named(4, "noise"))
    b = swap_test(sender, D, n_pairs=100, runs=2, rng=RngStream.named(4, "noise"))
    assert a == b
    assert 0.0 <= a.fraction_changed <= 1.0


def test_swap_test_rejects_bad_arguments(agents):
    sender, _ = agents
    with pytest.raises(DimensionMismatchError):
        swap_test(sender, D + 1)
    with pytest.raises(ParameterError):
        swap_test(sender, D, n_pairs=0)


def test_cross_eval_without_store_fills_only_noise(agents):
    table = cross_eval(
        {GameMode.SAME_IMAGE: agents}, None, None, D, RngStream(5), runs=2, n_batches=3, batch_size=4
    )
    noise = table.cell(GameMode.SAME_IMAGE, GameMode.NOISE)
    assert noise is not None and 0.0 <= noise <= 100.0
    assert table.cell(GameMode.SAME_IMAGE, GameMode.SAME_IMAGE) is None
    assert table.cell(GameMode.SAME_IMAGE, GameMode.DIFFERENT_IMAGE) is None
    assert all(v is None for v in table.cells["diff"].values())
    assert table.kind == "cross_eval"


def test_cross_eval_with_store(agents, small_store, small_split):
    checkpoints = {GameMode.SAME_IMAGE: agents, GameMode.DIFFERENT_IMAGE: agents}
    a = cross_eval(checkpoints, small_store, small_split, D, RngStream(6), runs=1, n_batches=2, batch_size=8)
    b = cross_eval(checkpoints, small_store, small_split, D, RngStream(6), runs=1, n_batches=2, batch_size=8)
    assert a == b
    for row in a.cells.values():
        assert all(v is not None and 0.0 <= v <= 100.0 for v in row.values())
    # 16 games per cell, so every percentage is a multiple of 6.25
    assert a.cell(GameMode.DIFFERENT_IMAGE, GameMode.SAME_IMAGE) % 6.25 == 0


def test_cross_eval_dimension_mismatch(agents, small_store, small_split):
    wide = init_agents(D + 2, H, V, RngStream(0))
    with pytest.raises(DimensionMismatchError):
        cross_eval({GameMode.SAME_IMAGE: wide}, small_store, small_split, D, RngStream(0), 1, 1, 1)
