#!/usr/bin/env python3
"""
Trainer
Plays referential games and updates both agents with Reinforce
(moving-average reward baseline, batch-mean gradients, Adam or plain
gradient ascent). Also holds the exact-expectation oracles used to
check the estimator.
"""

import logging
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from agents import (
    GradientRecord,
    ReceiverOutput,
    ReceiverParams,
    SenderOutput,
    SenderParams,
    init_agents,
    receiver_backprop,
    receiver_embed,
    receiver_forward,
    receiver_logp_score_grad,
    sender_backprop,
    sender_entropy_logit_grad,
    sender_forward,
    sender_logp_logit_grad,
)
from errors import GuardExceededError, ParameterError
from feature_store import FeatureStore
from game_sampler import (
    DEFAULT_VALIDATION_PAIRS,
    GameInstance,
    GameMode,
    SplitPart,
    SplitSpec,
    build_validation_set,
    make_split,
    sample_game,
)
from numerics import RngStream, softmax
from similarity_analysis import alignment_report, select_probe_rows

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLD = 0.80
EXACT_ENUMERATION_LIMIT = 1000
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class Optimizer(Enum):
    ADAM = "adam"
    SGD = "sgd"


@dataclass(frozen=True)
class TrainConfig:
    d: int = 64
    V: int = 100
    h: int = 50
    batch_size: int = 32
    total_batches: int = 50_000
    learning_rate: float = 0.001
    optimizer: Optimizer = Optimizer.ADAM
    baseline_decay: float = 0.99
    entropy_coef: float = 0.0
    validation_every: int = 100
    validation_pairs: int = DEFAULT_VALIDATION_PAIRS
    test_games: int = 1024
    mode: GameMode = GameMode.SAME_IMAGE
    seed: int = 0
    tau: float = 1.0
    rsa_during_training: bool = True

    def validate(self):
        for name in ("d", "V", "h", "batch_size", "validation_every", "validation_pairs"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.total_batches < 0 or self.test_games < 0:
            raise ParameterError("total_batches and test_games must be >= 0")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")
        if not 0 < self.baseline_decay < 1:
            raise ParameterError("baseline_decay must lie in (0, 1)")
        if self.entropy_coef < 0:
            raise ParameterError("entropy_coef must be >= 0")
        if not self.tau > 0:
            raise ParameterError("tau must be > 0")
        if not isinstance(self.optimizer, Optimizer):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.mode not in (GameMode.SAME_IMAGE, GameMode.DIFFERENT_IMAGE):
            raise ParameterError(f"agents train on same-image or different-image games, not {self.mode.value}")


@dataclass(frozen=True)
class TrajectoryRecord:
    instance: GameInstance
    symbol: int
    choice: int
    reward: int
    sender_log_prob: float
    receiver_log_prob: float
    sender_out: SenderOutput = field(repr=False)
    receiver_out: ReceiverOutput = field(repr=False)
    x_target: np.ndarray = field(repr=False)
    x_distractor: np.ndarray = field(repr=False)
    x_left: np.ndarray = field(repr=False)
    x_right: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class BaselineState:
    value: float = 0.0
    decay: float = 0.99

    def updated(self, mean_reward: float) -> "BaselineState":
        return replace(self, value=self.decay * self.value + (1.0 - self.decay) * mean_reward)


@dataclass(frozen=True)
class AdamState:
    """Adam moment estimates for both agents, keyed "<owner>.<tensor>"

    Each gradient tensor is divided by the root of its running second
    moment, so every parameter moves at roughly the learning rate no
    matter how small its raw gradient is.
    """

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    v: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def directions(
        self, g_sender: GradientRecord, g_receiver: GradientRecord
    ) -> Tuple[GradientRecord, GradientRecord, "AdamState"]:
        """Bias-corrected ascent directions, plus the advanced state"""
        beta1, beta2 = ADAM_BETAS
        step = self.step + 1
        m, v, steps = {}, {}, []
        for grad in (g_sender, g_receiver):
            direction = {}
            for name, g in grad.tensors.items():
                key = f"{grad.owner}.{name}"
                m[key] = beta1 * self.m.get(key, 0.0) + (1.0 - beta1) * g
                v[key] = beta2 * self.v.get(key, 0.0) + (1.0 - beta2) * g * g
                m_hat = m[key] / (1.0 - beta1 ** step)
                v_hat = v[key] / (1.0 - beta2 ** step)
                direction[name] = m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            steps.append(GradientRecord(grad.owner, direction))
        return steps[0], steps[1], AdamState(step=step, m=m, v=v)


@dataclass(frozen=True)
class UpdateResult:
    sender: SenderParams
    receiver: ReceiverParams
    baseline: BaselineState
    mean_reward: float
    adam: Optional[AdamState] = None


@dataclass(frozen=True)
class ValidationRecord:
    batch: int
    mvr: float
    rsa_sr: Optional[float] = None
    rsa_si: Optional[float] = None
    rsa_ri: Optional[float] = None


@dataclass
class TrainRunResult:
    sender: SenderParams
    receiver: ReceiverParams
    curve: List[ValidationRecord]
    success: bool
    seed: int
    final_mvr: float
    batches_trained: int
    test_reward: Optional[float] = None

    @property
    def final_alignment(self) -> Tuple[Optional[float], Optional[float], Optional[float]]:
        last = self.curve[-1]
        return last.rsa_sr, last.rsa_si, last.rsa_ri


def play_game(
    sender: SenderParams,
    receiver: ReceiverParams,
    instance: GameInstance,
    rng: RngStream,
    store: Optional[FeatureStore] = None,
) -> TrajectoryRecord:
    """One round: Sender sees (target, distractor), Receiver its permuted pair plus the symbol"""
    x_t, x_d = instance.sender_inputs(store)
    x_l, x_r = instance.receiver_inputs(store)
    s_out = sender_forward(sender, x_t, x_d, rng)
    r_out = receiver_forward(receiver, x_l, x_r, s_out.symbol, rng)
    reward = int(r_out.choice == instance.target_position)
    return TrajectoryRecord(
        instance=instance,
        symbol=s_out.symbol,
        choice=r_out.choice,
        reward=reward,
        sender_log_prob=s_out.log_prob,
        receiver_log_prob=r_out.log_prob,
        sender_out=s_out,
        receiver_out=r_out,
        x_target=x_t,
        x_distractor=x_d,
        x_left=x_l,
        x_right=x_r,
    )


def reinforce_gradients(
    sender: SenderParams,
    receiver: ReceiverParams,
    batch: List[TrajectoryRecord],
    baseline_value: float,
    entropy_coef: float = 0.0,
) -> Tuple[GradientRecord, GradientRecord]:
    """Batch mean of (reward - b) * grad log p for both agents (plus the entropy term)"""
    if not batch:
        raise ParameterError("reinforce needs a non-empty batch")
    n = len(batch)
    advantage = np.array([t.reward - baseline_value for t in batch], dtype=np.float64)[:, None]

    s_probs = np.stack([t.sender_out.probs for t in batch])
    g_logits = advantage * sender_logp_logit_grad(sender, s_probs, [t.symbol for t in batch])
    if entropy_coef:
        g_logits = g_logits + entropy_coef * sender_entropy_logit_grad(sender, s_probs)
    g_sender = sender_backprop(
        sender,
        np.stack([t.x_target for t in batch]),
        np.stack([t.x_distractor for t in batch]),
        np.stack([t.sender_out.u_target for t in batch]),
        np.stack([t.sender_out.u_distractor for t in batch]),
        g_logits / n,
    )

    r_probs = np.stack([t.receiver_out.probs for t in batch])
    g_scores = advantage * receiver_logp_score_grad(r_probs, [t.choice for t in batch])
    g_receiver = receiver_backprop(
        receiver,
        np.stack([t.x_left for t in batch]),
        np.stack([t.x_right for t in batch]),
        np.stack([t.receiver_out.v_left for t in batch]),
        np.stack([t.receiver_out.v_right for t in batch]),
        np.array([t.symbol for t in batch]),
        g_scores / n,
    )
    return g_sender, g_receiver


def reinforce_update(
    sender: SenderParams,
    receiver: ReceiverParams,
    batch: List[TrajectoryRecord],
    baseline: BaselineState,
    lr: float,
    entropy_coef: float = 0.0,
    adam: Optional[AdamState] = None,
) -> UpdateResult:
    """Ascent step on both agents, then the baseline moves toward the batch reward.

    Without an AdamState the step is plain gradient ascent, p + lr * g.
    """
    g_sender, g_receiver = reinforce_gradients(sender, receiver, batch, baseline.value, entropy_coef)
    if adam is not None:
        g_sender, g_receiver, adam = adam.directions(g_sender, g_receiver)
    mean_reward = float(np.mean([t.reward for t in batch]))
    return UpdateResult(
        sender=sender.stepped(g_sender, lr),
        receiver=receiver.stepped(g_receiver, lr),
        baseline=baseline.updated(mean_reward),
        mean_reward=mean_reward,
        adam=adam,
    )


def _exact_terms(sender, receiver, instance, store):
    if sender.V > EXACT_ENUMERATION_LIMIT:
        raise GuardExceededError(
            f"exact enumeration is limited to V <= {EXACT_ENUMERATION_LIMIT}, got V={sender.V}"
        )
    x_t, x_d = instance.sender_inputs(store)
    x_l, x_r = instance.receiver_inputs(store)
    s_out = sender_forward(sender, x_t, x_d, symbol=0)
    v_l = receiver_embed(receiver, x_l)
    v_r = receiver_embed(receiver, x_r)
    scores = np.stack([v_l @ receiver.E_sym, v_r @ receiver.E_sym], axis=1)  # V x 2
    r_probs = softmax(scores)
    q = r_probs[:, instance.target_position]
    return s_out, (x_t, x_d, x_l, x_r, v_l, v_r), r_probs, q


def expected_reward_exact(
    sender: SenderParams,
    receiver: ReceiverParams,
    instance: GameInstance,
    store: Optional[FeatureStore] = None,
) -> float:
    """sum_s p_S(s) * p_R(target position | s), by full enumeration"""
    s_out, _, _, q = _exact_terms(sender, receiver, instance, store)
    return float(s_out.probs @ q)


def expected_reward_grad_exact(
    sender: SenderParams,
    receiver: ReceiverParams,
    instance: GameInstance,
    store: Optional[FeatureStore] = None,
) -> Tuple[GradientRecord, GradientRecord]:
    """Analytic gradient of expected_reward_exact for both agents"""
    s_out, inputs, r_probs, q = _exact_terms(sender, receiver, instance, store)
    x_t, x_d, x_l, x_r, v_l, v_r = inputs
    p = s_out.probs
    V = sender.V

    g_logits = (p * q - p * (p @ q)) / sender.tau
    g_sender = sender_backprop(sender, x_t, x_d, s_out.u_target, s_out.u_distractor, g_logits)

    onehot = np.zeros(2)
    onehot[instance.target_position] = 1.0
    g_scores = (p * q)[:, None] * (onehot[None, :] - r_probs)
    g_receiver = receiver_backprop(
        receiver,
        np.tile(x_l, (V, 1)),
        np.tile(x_r, (V, 1)),
        np.tile(v_l, (V, 1)),
        np.tile(v_r, (V, 1)),
        np.arange(V),
        g_scores,
    )
    return g_sender, g_receiver


def evaluate(
    sender: SenderParams,
    receiver: ReceiverParams,
    instances: List[GameInstance],
    rng: RngStream,
    repeats: int = 1,
    store: Optional[FeatureStore] = None,
) -> float:
    """Grand mean reward over repeats x instances, with action sampling"""
    if not instances:
        raise ParameterError("evaluate needs at least one instance")
    total = 0
    for _ in range(repeats):
        for instance in instances:
            total += play_game(sender, receiver, instance, rng, store).reward
    return total / (repeats * len(instances))


def evaluate_sampled(
    sender: SenderParams,
    receiver: ReceiverParams,
    sampler: Callable[[RngStream], GameInstance],
    rng: RngStream,
    runs: int,
    n_batches: int,
    batch_size: int,
    store: Optional[FeatureStore] = None,
    progress: bool = False,
) -> List[float]:
    """Mean reward per run on freshly sampled games (runs x n_batches x batch_size)"""
    per_run = []
    for run in tqdm(range(runs), desc="eval runs", disable=not progress, leave=False):
        total = 0
        for _ in range(n_batches * batch_size):
            total += play_game(sender, receiver, sampler(rng), rng, store).reward
        per_run.append(total / (n_batches * batch_size))
        logger.debug(f"evaluation run {run}: mean reward {per_run[-1]:.4f}")
    return per_run


def _validation_record(batch, sender, receiver, validation, eval_rng, store, probe_rows, config):
    mvr = evaluate(sender, receiver, validation, eval_rng, 1, store)
    if config.rsa_during_training and probe_rows is not None and len(probe_rows) >= 3:
        report = alignment_report(store.features, sender, receiver, probe_rows)
        return ValidationRecord(batch, mvr, report.rho_sr, report.rho_si, report.rho_ri)
    return ValidationRecord(batch, mvr)


def train(
    config: TrainConfig,
    store: FeatureStore,
    split: Optional[SplitSpec] = None,
    probe_rows: Optional[np.ndarray] = None,
    progress: bool = False,
) -> TrainRunResult:
    """Full training run; (config, seed, store, split) determine every parameter"""
    config.validate()
    if store.d != config.d:
        raise ParameterError(f"store has d={store.d} but config.d={config.d}")
    if split is None:
        split = make_split(store, RngStream.named(0, "data"))
    if probe_rows is None and config.rsa_during_training:
        probe_rows = select_probe_rows(split, RngStream.named(0, "probe"))

    init_rng = RngStream.named(config.seed, "init")
    play_rng = RngStream.named(config.seed, "sampling")
    eval_rng = RngStream.named(config.seed, "eval")

    sender, receiver = init_agents(config.d, config.h, config.V, init_rng, tau=config.tau)
    validation = build_validation_set(store, split, config.mode, config.validation_pairs, eval_rng)
    baseline = BaselineState(decay=config.baseline_decay)
    adam = AdamState() if config.optimizer is Optimizer.ADAM else None

    logger.info(
        f"Training seed {config.seed}: mode={config.mode.value}, V={config.V}, h={config.h}, "
        f"{config.optimizer.value} lr={config.learning_rate}, "
        f"{config.total_batches} batches of {config.batch_size}"
    )
    curve = [_validation_record(0, sender, receiver, validation, eval_rng, store, probe_rows, config)]
    bar = tqdm(
        range(1, config.total_batches + 1),
        desc=f"seed {config.seed}",
        disable=not (progress and sys.stderr.isatty()),
    )
    for batch_index in bar:
        batch = [
            play_game(sender, receiver, sample_game(config.mode, store, split, play_rng), play_rng, store)
            for _ in range(config.batch_size)
        ]
        update = reinforce_update(
            sender, receiver, batch, baseline, config.learning_rate, config.entropy_coef, adam
        )
        sender, receiver, baseline, adam = update.sender, update.receiver, update.baseline, update.adam
        logger.debug(f"batch {batch_index}: reward {update.mean_reward:.3f}, baseline {baseline.value:.3f}")

        if batch_index % config.validation_every == 0 or batch_index == config.total_batches:
            record = _validation_record(
                batch_index, sender, receiver, validation, eval_rng, store, probe_rows, config
            )
            curve.append(record)
            bar.set_postfix(mvr=f"{record.mvr:.3f}")
            logger.info(f"seed {config.seed} batch {batch_index}: MVR {record.mvr:.4f}, rho_sr {record.rsa_sr}")

    final_mvr = curve[-1].mvr
    test_reward = None
    if config.test_games and len(split.concepts(SplitPart.TEST)) >= 2:
        test_reward = evaluate_sampled(
            sender,
            receiver,
            lambda r: sample_game(config.mode, store, split, r, SplitPart.TEST),
            eval_rng,
            runs=1,
            n_batches=1,
            batch_size=config.test_games,
            store=store,
        )[0]

    success = final_mvr >= SUCCESS_THRESHOLD
    logger.info(f"Seed {config.seed} finished: final MVR {final_mvr:.4f}, success={success}")
    return TrainRunResult(
        sender=sender,
        receiver=receiver,
        curve=curve,
        success=success,
        seed=config.seed,
        final_mvr=final_mvr,
        batches_trained=config.total_batches,
        test_reward=test_reward,
    )


def run_seed_sweep(
    config: TrainConfig,
    store: FeatureStore,
    n_seeds: int,
    split: Optional[SplitSpec] = None,
    probe_rows: Optional[np.ndarray] = None,
    threads: int = 1,
    on_result: Optional[Callable[[TrainRunResult], None]] = None,
) -> List[TrainRunResult]:
    """Independent runs for seeds 0..n-1.

    on_result is called in seed order, one call at a time, as soon as every
    lower seed has finished.
    """
    if n_seeds < 1:
        raise ParameterError("a sweep needs at least one seed")
    if split is None:
        split = make_split(store, RngStream.named(0, "data"))
    if probe_rows is None and config.rsa_during_training:
        probe_rows = select_probe_rows(split, RngStream.named(0, "probe"))

    configs = [replace(config, seed=k) for k in range(n_seeds)]
    lock = threading.Lock()
    results = []

    def deliver(result: TrainRunResult):
        results.append(result)
        if on_result is not None:
            with lock:
                on_result(result)

    if threads <= 1:
        for cfg in configs:
            deliver(train(cfg, store, split, probe_rows, progress=True))
    else:
        logger.info(f"Running {n_seeds} seeds on {threads} worker threads")
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(train, cfg, store, split, probe_rows) for cfg in configs]
            for future in futures:
                deliver(future.result())

    successes = sum(r.success for r in results)
    logger.info(f"Sweep finished: {successes}/{n_seeds} successful seeds")
    return results
