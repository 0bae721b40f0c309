#!/usr/bin/env python3
"""
Noise Probes
Checks whether trained agents rely on conceptual content: rewards on
same-image / different-image / pure-noise test games, and whether the
Sender's preferred symbol flips when target and distractor swap.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from agents import ReceiverParams, SenderParams, sender_argmax_symbols
from errors import DatasetError, DimensionMismatchError, ParameterError
from feature_store import FeatureStore
from game_sampler import GameMode, SplitPart, SplitSpec, sample_game, sample_noise_game
from numerics import RngStream, l2_normalize_rows
from trainer import evaluate_sampled

logger = logging.getLogger(__name__)

TRAIN_MODES = (GameMode.SAME_IMAGE, GameMode.DIFFERENT_IMAGE)
TEST_MODES = (GameMode.SAME_IMAGE, GameMode.DIFFERENT_IMAGE, GameMode.NOISE)

AgentPair = Tuple[SenderParams, ReceiverParams]


@dataclass(frozen=True)
class SwapTestResult:
    n_pairs: int
    runs: int
    fraction_changed: float
    per_run: Tuple[float, ...] = ()
    checkpoint_id: str = ""
    kind: str = field(default="swap_test", init=False)


@dataclass(frozen=True)
class CrossEvalTable:
    """Mean percent reward, rows = training condition, columns = test condition"""

    cells: Dict[str, Dict[str, Optional[float]]]
    runs: int
    n_batches: int
    batch_size: int
    checkpoint_ids: Dict[str, str] = field(default_factory=dict)
    kind: str = field(default="cross_eval", init=False)

    def cell(self, train_mode: GameMode, test_mode: GameMode) -> Optional[float]:
        return self.cells[train_mode.value][test_mode.value]


def draw_noise_pairs(d: int, n: int, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
    """n pairs of unit-normalized standard-Normal vectors"""
    z = rng.standard_normal((n, 2, d))
    return l2_normalize_rows(z[:, 0, :]), l2_normalize_rows(z[:, 1, :])


def swap_test(
    sender: SenderParams,
    d: int,
    n_pairs: int = 1000,
    runs: int = 10,
    rng: RngStream = None,
    checkpoint_id: str = "",
) -> SwapTestResult:
    """Fraction of noise pairs whose argmax symbol changes when the target is swapped"""
    if n_pairs < 1 or runs < 1:
        raise ParameterError("swap test needs n_pairs >= 1 and runs >= 1")
    if d != sender.d:
        raise DimensionMismatchError(f"noise dimension {d} does not match the Sender's input {sender.d}")
    rng = rng or RngStream.named(0, "noise")
    per_run = []
    for _ in range(runs):
        z1, z2 = draw_noise_pairs(d, n_pairs, rng)
        first = sender_argmax_symbols(sender, z1, z2)
        swapped = sender_argmax_symbols(sender, z2, z1)
        per_run.append(float(np.mean(first != swapped)))
    fraction = float(np.mean(per_run))
    logger.info(f"Swap test: {fraction:.4f} of {n_pairs} pairs x {runs} runs change symbol")
    return SwapTestResult(
        n_pairs=n_pairs,
        runs=runs,
        fraction_changed=fraction,
        per_run=tuple(per_run),
        checkpoint_id=checkpoint_id,
    )


def cross_eval(
    checkpoints: Mapping[GameMode, Optional[AgentPair]],
    store: Optional[FeatureStore],
    split: Optional[SplitSpec],
    d: int,
    rng: RngStream,
    runs: int = 10,
    n_batches: int = 1000,
    batch_size: int = 32,
    progress: bool = False,
) -> CrossEvalTable:
    """Percent reward of each training condition's agents on each test condition.

    A missing checkpoint, or a missing store for image-based columns, leaves
    the cell empty (None). Image games use the held-out test rows.
    """
    cells: Dict[str, Dict[str, Optional[float]]] = {}
    for train_mode in TRAIN_MODES:
        row = {m.value: None for m in TEST_MODES}
        agents = checkpoints.get(train_mode)
        cells[train_mode.value] = row
        if agents is None:
            logger.warning(f"No checkpoint for {train_mode.value}-image training; row left empty")
            continue
        sender, receiver = agents
        if sender.d != d:
            raise DimensionMismatchError(f"{train_mode.value} checkpoint has d={sender.d}, probe d={d}")
        for test_mode in TEST_MODES:
            if test_mode is GameMode.NOISE:
                sampler = lambda r: sample_noise_game(d, r)
            else:
                if store is None or split is None:
                    continue
                if store.d != d:
                    raise DimensionMismatchError(f"store has d={store.d}, probe d={d}")
                part = SplitPart.TEST if len(split.concepts(SplitPart.TEST)) >= 2 else SplitPart.TRAIN
                sampler = lambda r, m=test_mode, p=part: sample_game(m, store, split, r, p)
            try:
                per_run = evaluate_sampled(
                    sender, receiver, sampler, rng, runs, n_batches, batch_size, store, progress
                )
            except DatasetError as e:
                logger.warning(f"Cannot test {train_mode.value} agents on {test_mode.value} games: {e}")
                continue
            row[test_mode.value] = 100.0 * float(np.mean(per_run))
            logger.info(
                f"train={train_mode.value} test={test_mode.value}: {row[test_mode.value]:.2f}% mean reward"
            )
    return CrossEvalTable(cells=cells, runs=runs, n_batches=n_batches, batch_size=batch_size)
