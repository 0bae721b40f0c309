#!/usr/bin/env python3
"""
LGCK checkpoints: magic, version, JSON metadata, then the five agent
tensors (W_img, W_vocab, b_vocab, U_img, E_sym) as little-endian float64.
"""

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from agents import Activation, ReceiverParams, SenderParams
from errors import FormatError

logger = logging.getLogger(__name__)

LGCK_MAGIC = b"LGCK"
LGCK_VERSION = 1
_PREFIX = struct.Struct("<4sII")


@dataclass(frozen=True)
class CheckpointMeta:
    d: int
    h: int
    V: int
    tau: float
    seed: int
    game_mode: str
    batches_trained: int
    activation: str = Activation.SIGMOID.value


def save_checkpoint(
    path: Union[str, Path],
    sender: SenderParams,
    receiver: ReceiverParams,
    seed: int,
    game_mode: str,
    batches_trained: int,
) -> CheckpointMeta:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = CheckpointMeta(
        d=sender.d,
        h=sender.h,
        V=sender.V,
        tau=float(sender.tau),
        seed=int(seed),
        game_mode=game_mode,
        batches_trained=int(batches_trained),
        activation=sender.activation.value,
    )
    meta_bytes = json.dumps(asdict(meta), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(LGCK_MAGIC, LGCK_VERSION, len(meta_bytes)))
        f.write(meta_bytes)
        for tensor in (sender.W_img, sender.W_vocab, sender.b_vocab, receiver.U_img, receiver.E_sym):
            f.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes(order="C"))
    logger.info(f"Checkpoint written: {path} ({batches_trained} batches, seed {seed})")
    return meta


def _check_meta(path: Path, meta: CheckpointMeta):
    for name in ("d", "h", "V"):
        value = getattr(meta, name)
        # bool is an int subclass
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise FormatError(f"{path}: metadata {name}={value!r} is not a positive integer")
    if not isinstance(meta.tau, (int, float)) or isinstance(meta.tau, bool):
        raise FormatError(f"{path}: metadata tau={meta.tau!r} is not a number")
    if meta.activation not in {a.value for a in Activation}:
        raise FormatError(f"{path}: unknown activation {meta.activation!r}")


def load_checkpoint(path: Union[str, Path]) -> Tuple[SenderParams, ReceiverParams, CheckpointMeta]:
    path = Path(path)
    payload = path.read_bytes()
    if len(payload) < _PREFIX.size:
        raise FormatError(f"{path} is too short for an LGCK header")
    magic, version, meta_len = _PREFIX.unpack_from(payload, 0)
    if magic != LGCK_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != LGCK_VERSION:
        raise FormatError(f"{path}: unsupported LGCK version {version}")
    offset = _PREFIX.size
    try:
        raw_meta = json.loads(payload[offset:offset + meta_len].decode("utf-8"))
        meta = CheckpointMeta(**{k: raw_meta[k] for k in CheckpointMeta.__dataclass_fields__ if k in raw_meta})
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as e:
        raise FormatError(f"{path}: unreadable metadata: {e}") from e
    offset += meta_len
    _check_meta(path, meta)

    shapes = [
        (meta.h, meta.d),
        (meta.V, 2 * meta.h),
        (meta.V,),
        (meta.h, meta.d),
        (meta.h, meta.V),
    ]
    expected = offset + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(payload) != expected:
        raise FormatError(f"{path}: {len(payload)} bytes, metadata implies {expected}")
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape))
        t = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64)
        tensors.append(t.reshape(shape))
        offset += 8 * count

    W_img, W_vocab, b_vocab, U_img, E_sym = tensors
    sender = SenderParams(
        W_img=W_img,
        W_vocab=W_vocab,
        b_vocab=b_vocab,
        tau=meta.tau,
        activation=Activation(meta.activation),
    )
    receiver = ReceiverParams(U_img=U_img, E_sym=E_sym)
    sender.validate()
    receiver.validate()
    return sender, receiver, meta


def checkpoint_hash(path: Union[str, Path]) -> str:
    """sha256 of the checkpoint bytes, for report provenance"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
