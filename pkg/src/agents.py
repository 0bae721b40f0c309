#!/usr/bin/env python3
"""
Sender and Receiver feed-forward policies.

Sender:   u = act(W_img x) for target and distractor,
          logits = W_vocab [u_t ; u_d] + b_vocab, probs = softmax(logits / tau)
Receiver: v = U_img x for each presented image, e = E_sym[:, symbol],
          probs = softmax([v_left . e, v_right . e])

Gradients are derived by hand. The backprop helpers take batches
(leading axis B) and sum over them; single-game callers pass one row.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import ClassVar, Dict, Optional, Tuple

import numpy as np
from scipy.special import xlogy

from errors import DimensionMismatchError, ParameterError
from numerics import RngStream, sample_categorical, sigmoid, softmax

logger = logging.getLogger(__name__)

CACHE_TOLERANCE = 1e-9


class Activation(Enum):
    SIGMOID = "sigmoid"
    # linear Sender, used by analysis harnesses
    IDENTITY = "identity"


@dataclass(frozen=True)
class SenderParams:
    W_img: np.ndarray    # h x d
    W_vocab: np.ndarray  # V x 2h
    b_vocab: np.ndarray  # V
    tau: float = 1.0
    activation: Activation = Activation.SIGMOID

    TENSOR_NAMES: ClassVar[Tuple[str, ...]] = ("W_img", "W_vocab", "b_vocab")

    @property
    def d(self) -> int:
        return self.W_img.shape[1]

    @property
    def h(self) -> int:
        return self.W_img.shape[0]

    @property
    def V(self) -> int:
        return self.W_vocab.shape[0]

    def tensors(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.TENSOR_NAMES}

    def validate(self):
        h, d, V = self.h, self.d, self.V
        if self.W_vocab.shape != (V, 2 * h) or self.b_vocab.shape != (V,):
            raise DimensionMismatchError(
                f"sender shapes W_img {self.W_img.shape}, W_vocab {self.W_vocab.shape}, "
                f"b_vocab {self.b_vocab.shape} are inconsistent"
            )
        if not self.tau > 0:
            raise ParameterError(f"temperature must be positive, got {self.tau}")
        for name, t in self.tensors().items():
            if not np.all(np.isfinite(t)):
                raise ParameterError(f"sender tensor {name} has non-finite entries")

    def stepped(self, grad: "GradientRecord", step: float) -> "SenderParams":
        """New parameters p + step * grad"""
        return replace(self, **{k: v + step * grad.tensors[k] for k, v in self.tensors().items()})


@dataclass(frozen=True)
class ReceiverParams:
    U_img: np.ndarray  # h x d
    E_sym: np.ndarray  # h x V

    TENSOR_NAMES: ClassVar[Tuple[str, ...]] = ("U_img", "E_sym")

    @property
    def d(self) -> int:
        return self.U_img.shape[1]

    @property
    def h(self) -> int:
        return self.U_img.shape[0]

    @property
    def V(self) -> int:
        return self.E_sym.shape[1]

    def tensors(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.TENSOR_NAMES}

    def validate(self):
        if self.E_sym.shape[0] != self.h:
            raise DimensionMismatchError(
                f"receiver shapes U_img {self.U_img.shape}, E_sym {self.E_sym.shape} are inconsistent"
            )
        for name, t in self.tensors().items():
            if not np.all(np.isfinite(t)):
                raise ParameterError(f"receiver tensor {name} has non-finite entries")

    def stepped(self, grad: "GradientRecord", step: float) -> "ReceiverParams":
        return replace(self, **{k: v + step * grad.tensors[k] for k, v in self.tensors().items()})


@dataclass
class GradientRecord:
    """Per-tensor gradients, shape-congruent with the owning parameters"""

    owner: str
    tensors: Dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params) -> "GradientRecord":
        owner = "sender" if isinstance(params, SenderParams) else "receiver"
        return cls(owner, {k: np.zeros_like(v) for k, v in params.tensors().items()})

    def scaled(self, c: float) -> "GradientRecord":
        return GradientRecord(self.owner, {k: c * v for k, v in self.tensors.items()})

    def __add__(self, other: "GradientRecord") -> "GradientRecord":
        if other.owner != self.owner:
            raise ParameterError(f"cannot add {self.owner} and {other.owner} gradients")
        return GradientRecord(self.owner, {k: v + other.tensors[k] for k, v in self.tensors.items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])


@dataclass(frozen=True)
class SenderOutput:
    probs: np.ndarray
    symbol: int
    log_prob: float
    u_target: np.ndarray
    u_distractor: np.ndarray
    logits: np.ndarray

    def with_symbol(self, symbol: int) -> "SenderOutput":
        return replace(self, symbol=int(symbol), log_prob=float(np.log(self.probs[symbol])))


@dataclass(frozen=True)
class ReceiverOutput:
    probs: np.ndarray
    choice: int
    log_prob: float
    v_left: np.ndarray
    v_right: np.ndarray
    e_symbol: np.ndarray
    symbol: int

    def with_choice(self, choice: int) -> "ReceiverOutput":
        return replace(self, choice=int(choice), log_prob=float(np.log(self.probs[choice])))


def _glorot(rng: RngStream, rows: int, cols: int, scale: Optional[float]) -> np.ndarray:
    a = scale if scale is not None else np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


def init_agents(
    d: int,
    h: int,
    V: int,
    rng: RngStream,
    tau: float = 1.0,
    init_scale: Optional[float] = None,
) -> Tuple[SenderParams, ReceiverParams]:
    """Glorot-uniform init; the two image projections start identical"""
    if d < 1 or h < 1 or V < 1:
        raise ParameterError(f"dimensions must be positive, got d={d}, h={h}, V={V}")
    W_img = _glorot(rng, h, d, init_scale)
    W_vocab = _glorot(rng, V, 2 * h, init_scale)
    E_sym = _glorot(rng, h, V, init_scale)
    sender = SenderParams(W_img=W_img, W_vocab=W_vocab, b_vocab=np.zeros(V), tau=tau)
    receiver = ReceiverParams(U_img=W_img.copy(), E_sym=E_sym)
    sender.validate()
    receiver.validate()
    logger.debug(f"Initialized agents d={d}, h={h}, V={V}, tau={tau}")
    return sender, receiver


def _check_input(x: np.ndarray, d: int, what: str):
    if x.shape[-1] != d:
        raise DimensionMismatchError(f"{what} has dimension {x.shape[-1]}, agents expect {d}")


def _activate(p: SenderParams, pre: np.ndarray) -> np.ndarray:
    return sigmoid(pre) if p.activation is Activation.SIGMOID else pre


def _activation_slope(p: SenderParams, u: np.ndarray) -> np.ndarray:
    return u * (1.0 - u) if p.activation is Activation.SIGMOID else np.ones_like(u)


def sender_embed(p: SenderParams, x: np.ndarray) -> np.ndarray:
    """The Sender's image representation act(W_img x); accepts one vector or an N x d matrix"""
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, p.d, "image")
    return _activate(p, x @ p.W_img.T)


def receiver_embed(p: ReceiverParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, p.d, "image")
    return x @ p.U_img.T


def sender_logits(p: SenderParams, u_target: np.ndarray, u_distractor: np.ndarray) -> np.ndarray:
    z = np.concatenate([u_target, u_distractor], axis=-1)
    return z @ p.W_vocab.T + p.b_vocab


def sender_forward(
    p: SenderParams,
    x_target: np.ndarray,
    x_distractor: np.ndarray,
    rng: Optional[RngStream] = None,
    symbol: Optional[int] = None,
) -> SenderOutput:
    """Forward pass; samples the symbol from rng unless one is forced"""
    u_t = sender_embed(p, x_target)
    u_d = sender_embed(p, x_distractor)
    logits = sender_logits(p, u_t, u_d)
    probs = softmax(logits, p.tau)
    if symbol is None:
        if rng is None:
            raise ParameterError("sender_forward needs an rng or a forced symbol")
        symbol = sample_categorical(probs, rng)
    return SenderOutput(
        probs=probs,
        symbol=int(symbol),
        log_prob=float(np.log(probs[symbol])),
        u_target=u_t,
        u_distractor=u_d,
        logits=logits,
    )


def receiver_forward(
    p: ReceiverParams,
    x_left: np.ndarray,
    x_right: np.ndarray,
    symbol: int,
    rng: Optional[RngStream] = None,
    choice: Optional[int] = None,
) -> ReceiverOutput:
    if not 0 <= symbol < p.V:
        raise ParameterError(f"symbol {symbol} outside vocabulary [0, {p.V})")
    v_l = receiver_embed(p, x_left)
    v_r = receiver_embed(p, x_right)
    e = p.E_sym[:, symbol]
    probs = softmax(np.array([v_l @ e, v_r @ e]))
    if choice is None:
        if rng is None:
            raise ParameterError("receiver_forward needs an rng or a forced choice")
        choice = sample_categorical(probs, rng)
    return ReceiverOutput(
        probs=probs,
        choice=int(choice),
        log_prob=float(np.log(probs[choice])),
        v_left=v_l,
        v_right=v_r,
        e_symbol=e.copy(),
        symbol=int(symbol),
    )


def sender_backprop(
    p: SenderParams,
    x_target: np.ndarray,
    x_distractor: np.ndarray,
    u_target: np.ndarray,
    u_distractor: np.ndarray,
    g_logits: np.ndarray,
) -> GradientRecord:
    """Pull logit gradients back to the Sender's tensors, summed over the batch"""
    X_t = np.atleast_2d(x_target)
    X_d = np.atleast_2d(x_distractor)
    U_t = np.atleast_2d(u_target)
    U_d = np.atleast_2d(u_distractor)
    g = np.atleast_2d(g_logits)
    h = p.h

    Z = np.concatenate([U_t, U_d], axis=1)
    dZ = g @ p.W_vocab
    dpre_t = dZ[:, :h] * _activation_slope(p, U_t)
    dpre_d = dZ[:, h:] * _activation_slope(p, U_d)
    return GradientRecord(
        "sender",
        {
            "W_img": dpre_t.T @ X_t + dpre_d.T @ X_d,
            "W_vocab": g.T @ Z,
            "b_vocab": g.sum(axis=0),
        },
    )


def receiver_backprop(
    p: ReceiverParams,
    x_left: np.ndarray,
    x_right: np.ndarray,
    v_left: np.ndarray,
    v_right: np.ndarray,
    symbols: np.ndarray,
    g_scores: np.ndarray,
) -> GradientRecord:
    """Pull score gradients (B x 2) back to the Receiver's tensors, summed over the batch"""
    X_l = np.atleast_2d(x_left)
    X_r = np.atleast_2d(x_right)
    V_l = np.atleast_2d(v_left)
    V_r = np.atleast_2d(v_right)
    symbols = np.atleast_1d(np.asarray(symbols, dtype=np.int64))
    g = np.atleast_2d(g_scores)

    E = p.E_sym[:, symbols].T  # B x h
    g_e = g[:, :1] * V_l + g[:, 1:] * V_r
    gE_T = np.zeros((p.V, p.h))
    np.add.at(gE_T, symbols, g_e)
    g_U = (g[:, :1] * E).T @ X_l + (g[:, 1:] * E).T @ X_r
    return GradientRecord("receiver", {"U_img": g_U, "E_sym": gE_T.T.copy()})


def sender_logp_logit_grad(p: SenderParams, probs: np.ndarray, symbols) -> np.ndarray:
    """d log probs[symbol] / d logits = (onehot(symbol) - probs) / tau, row per game"""
    P = np.atleast_2d(probs)
    onehot = np.zeros_like(P)
    onehot[np.arange(P.shape[0]), np.atleast_1d(symbols)] = 1.0
    return (onehot - P) / p.tau


def sender_entropy_logit_grad(p: SenderParams, probs: np.ndarray) -> np.ndarray:
    """d H(probs) / d logits = -probs (log probs + H) / tau"""
    P = np.atleast_2d(probs)
    plogp = xlogy(P, P)
    H = -plogp.sum(axis=1, keepdims=True)
    return -(plogp + P * H) / p.tau


def receiver_logp_score_grad(probs: np.ndarray, choices) -> np.ndarray:
    P = np.atleast_2d(probs)
    onehot = np.zeros_like(P)
    onehot[np.arange(P.shape[0]), np.atleast_1d(choices)] = 1.0
    return onehot - P


def sender_grad_logp(
    p: SenderParams, out: SenderOutput, x_target: np.ndarray, x_distractor: np.ndarray
) -> GradientRecord:
    """Exact gradient of log probs[out.symbol] w.r.t. every Sender tensor"""
    u_t = sender_embed(p, x_target)
    u_d = sender_embed(p, x_distractor)
    if not (
        np.allclose(u_t, out.u_target, atol=CACHE_TOLERANCE)
        and np.allclose(u_d, out.u_distractor, atol=CACHE_TOLERANCE)
    ):
        raise ParameterError("sender output cache does not match the given inputs")
    g = sender_logp_logit_grad(p, out.probs, out.symbol)
    return sender_backprop(p, x_target, x_distractor, out.u_target, out.u_distractor, g)


def receiver_grad_logp(
    p: ReceiverParams,
    out: ReceiverOutput,
    x_left: np.ndarray,
    x_right: np.ndarray,
    symbol: int,
) -> GradientRecord:
    """Exact gradient of log probs[out.choice] w.r.t. every Receiver tensor"""
    if symbol != out.symbol:
        raise ParameterError(f"receiver output was computed for symbol {out.symbol}, not {symbol}")
    v_l = receiver_embed(p, x_left)
    v_r = receiver_embed(p, x_right)
    if not (
        np.allclose(v_l, out.v_left, atol=CACHE_TOLERANCE)
        and np.allclose(v_r, out.v_right, atol=CACHE_TOLERANCE)
    ):
        raise ParameterError("receiver output cache does not match the given inputs")
    g = receiver_logp_score_grad(out.probs, out.choice)
    return receiver_backprop(p, x_left, x_right, out.v_left, out.v_right, symbol, g)


def sender_argmax_symbols(p: SenderParams, X_target: np.ndarray, X_distractor: np.ndarray) -> np.ndarray:
    """Most probable symbol per row pair (batched, no sampling)"""
    logits = sender_logits(p, sender_embed(p, X_target), sender_embed(p, X_distractor))
    return np.argmax(np.atleast_2d(logits), axis=1)
