#!/usr/bin/env python3
"""
Tests for LGCK checkpoints
"""

import json
import struct
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from agents import Activation, init_agents
from checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from errors import FormatError
from numerics import RngStream


@pytest.fixture
def agents():
    sender, receiver = init_agents(8, 5, 7, RngStream.named(2, "init"))
    # non-zero bias so every tensor is exercised
    return replace(sender, b_vocab=np.arange(7, dtype=np.float64) / 10, tau=0.5), receiver


def test_round_trip_is_bit_exact(tmp_path, agents):
    sender, receiver = agents
    path = tmp_path / "seed_2" / "checkpoint.lgck"
    save_checkpoint(path, sender, receiver, seed=2, game_mode="diff", batches_trained=300)
    s2, r2, meta = load_checkpoint(path)
    for name in sender.TENSOR_NAMES:
        assert np.array_equal(getattr(s2, name), getattr(sender, name))
    for name in receiver.TENSOR_NAMES:
        assert np.array_equal(getattr(r2, name), getattr(receiver, name))
    assert s2.tau == 0.5
    assert (meta.d, meta.h, meta.V, meta.seed, meta.game_mode, meta.batches_trained) == (8, 5, 7, 2, "diff", 300)


def test_activation_is_recorded(tmp_path, agents):
    sender, receiver = agents
    path = tmp_path / "linear.lgck"
    save_checkpoint(path, replace(sender, activation=Activation.IDENTITY), receiver, 0, "same", 0)
    s2, _, meta = load_checkpoint(path)
    assert s2.activation is Activation.IDENTITY
    assert meta.activation == "identity"


def test_layout_and_hash_are_stable(tmp_path, agents):
    sender, receiver = agents
    a, b = tmp_path / "a.lgck", tmp_path / "b.lgck"
    for path in (a, b):
        save_checkpoint(path, sender, receiver, 1, "same", 10)
    assert a.read_bytes() == b.read_bytes()
    assert checkpoint_hash(a) == checkpoint_hash(b)
    assert len(checkpoint_hash(a)) == 64

    payload = a.read_bytes()
    magic, version, meta_len = struct.unpack_from("<4sII", payload, 0)
    assert (magic, version) == (b"LGCK", 1)
    meta = json.loads(payload[12:12 + meta_len])
    assert meta["V"] == 7 and meta["game_mode"] == "same"
    tensor_bytes = 8 * (5 * 8 + 7 * 10 + 7 + 5 * 8 + 5 * 7)
    assert len(payload) == 12 + meta_len + tensor_bytes


def test_corrupt_files_raise_format_error(tmp_path, agents):
    sender, receiver = agents
    path = tmp_path / "c.lgck"
    save_checkpoint(path, sender, receiver, 0, "same", 0)
    payload = path.read_bytes()

    path.write_bytes(payload[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(path)

    path.write_bytes(b"NOPE" + payload[4:])
    with pytest.raises(FormatError):
        load_checkpoint(path)

    path.write_bytes(payload[:6])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def _rewrite_meta(path, **overrides):
    payload = path.read_bytes()
    _, version, meta_len = struct.unpack_from("<4sII", payload, 0)
    meta = json.loads(payload[12:12 + meta_len])
    meta.update(overrides)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    path.write_bytes(struct.pack("<4sII", b"LGCK", version, len(meta_bytes)) + meta_bytes + payload[12 + meta_len:])


@pytest.mark.parametrize(
    "overrides",
    [{"h": "5"}, {"d": 8.0}, {"V": True}, {"h": 0}, {"d": None}, {"tau": "0.5"}, {"activation": "relu"}],
)
def test_malformed_metadata_raises_format_error(tmp_path, agents, overrides):
    sender, receiver = agents
    path = tmp_path / "m.lgck"
    save_checkpoint(path, sender, receiver, 0, "same", 0)
    _rewrite_meta(path, **overrides)
    with pytest.raises(FormatError):
        load_checkpoint(path)
