#!/usr/bin/env python3
"""
Game Sampler
Dataset splits and referential-game instances for the same-image,
different-image and noise conditions.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import DatasetError, ParameterError
from feature_store import FeatureStore
from numerics import RngStream, l2_normalize

logger = logging.getLogger(__name__)

DEFAULT_VALIDATION_PAIRS = 1024


class GameMode(Enum):
    SAME_IMAGE = "same"
    DIFFERENT_IMAGE = "diff"
    NOISE = "noise"


class SplitPart(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class GameInstance:
    """One round of the game.

    For store-backed modes the four indices are store rows. In noise mode
    they index into noise_payload (0 or 1).
    """

    sender_target: int
    sender_distractor: int
    receiver_left: int
    receiver_right: int
    target_position: int
    mode: GameMode
    noise_payload: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def _vector(self, store: Optional[FeatureStore], index: int) -> np.ndarray:
        if self.mode is GameMode.NOISE:
            return self.noise_payload[index]
        if store is None:
            raise DatasetError(f"{self.mode.value}-image instance needs a feature store")
        return store.features[index]

    def sender_inputs(self, store: Optional[FeatureStore]) -> Tuple[np.ndarray, np.ndarray]:
        """(target, distractor): the Sender always sees the target first"""
        return self._vector(store, self.sender_target), self._vector(store, self.sender_distractor)

    def receiver_inputs(self, store: Optional[FeatureStore]) -> Tuple[np.ndarray, np.ndarray]:
        return self._vector(store, self.receiver_left), self._vector(store, self.receiver_right)

    @property
    def receiver_rows(self) -> Tuple[int, int]:
        return self.receiver_left, self.receiver_right


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train / validation / test row collections of one store"""

    train_rows: np.ndarray
    validation_rows: np.ndarray
    test_rows: np.ndarray
    concept_index: Dict[SplitPart, Dict[int, np.ndarray]] = field(default_factory=dict, repr=False)

    @classmethod
    def from_rows(cls, store: FeatureStore, train, validation=(), test=()) -> "SplitSpec":
        parts = {
            SplitPart.TRAIN: np.asarray(sorted(train), dtype=np.int64),
            SplitPart.VALIDATION: np.asarray(sorted(validation), dtype=np.int64),
            SplitPart.TEST: np.asarray(sorted(test), dtype=np.int64),
        }
        seen = np.concatenate(list(parts.values()))
        if np.unique(seen).size != seen.size:
            raise DatasetError("split parts overlap")
        if seen.size and (seen.min() < 0 or seen.max() >= store.n):
            raise DatasetError("split row index out of range")

        concepts = store.concept_ids()
        index = {}
        for part, rows in parts.items():
            by_concept: Dict[int, List[int]] = {}
            for row in rows.tolist():
                by_concept.setdefault(int(concepts[row]), []).append(row)
            index[part] = {c: np.asarray(r, dtype=np.int64) for c, r in sorted(by_concept.items())}
        return cls(
            train_rows=parts[SplitPart.TRAIN],
            validation_rows=parts[SplitPart.VALIDATION],
            test_rows=parts[SplitPart.TEST],
            concept_index=index,
        )

    @classmethod
    def all_train(cls, store: FeatureStore) -> "SplitSpec":
        return cls.from_rows(store, train=range(store.n))

    def rows(self, part: SplitPart) -> np.ndarray:
        return {
            SplitPart.TRAIN: self.train_rows,
            SplitPart.VALIDATION: self.validation_rows,
            SplitPart.TEST: self.test_rows,
        }[part]

    def concepts(self, part: SplitPart) -> Dict[int, np.ndarray]:
        return self.concept_index[part]


def make_split(
    store: FeatureStore,
    rng: RngStream,
    test_per_concept: int = 10,
    validation_per_concept: int = 10,
) -> SplitSpec:
    """Hold out test and validation rows per concept.

    At least two rows of every concept stay in training, so small concepts
    give up fewer (or no) held-out rows. A held-out part never receives a
    single image of a concept.
    """
    if test_per_concept < 0 or validation_per_concept < 0:
        raise ParameterError("held-out counts must be non-negative")
    concepts = store.concept_ids()
    train, validation, test = [], [], []
    for concept in np.unique(concepts):
        rows = np.flatnonzero(concepts == concept)
        rows = rows[rng.choice(rows.size, rows.size, replace=False)]
        spare = max(0, rows.size - 2)
        n_test = min(test_per_concept, spare)
        n_val = min(validation_per_concept, spare - n_test)
        # a lone held-out image cannot serve the different-image game
        n_test = 0 if n_test == 1 else n_test
        n_val = 0 if n_val == 1 else n_val
        test.extend(rows[:n_test].tolist())
        validation.extend(rows[n_test:n_test + n_val].tolist())
        train.extend(rows[n_test + n_val:].tolist())
    split = SplitSpec.from_rows(store, train, validation, test)
    logger.info(
        f"Split store: {split.train_rows.size} train, {split.validation_rows.size} validation, "
        f"{split.test_rows.size} test rows"
    )
    return split


def _pick_concept_pair(concept_ids: List[int], rng: RngStream) -> Tuple[int, int]:
    """Uniform ordered pair of distinct concepts: (target concept, distractor concept)"""
    n = len(concept_ids)
    a = int(rng.integers(n))
    b = int(rng.integers(n - 1))
    if b >= a:
        b += 1
    return concept_ids[a], concept_ids[b]


def _receiver_order(target: int, distractor: int, rng: RngStream) -> Tuple[int, int, int]:
    position = int(rng.integers(2))
    if position == 0:
        return target, distractor, 0
    return distractor, target, 1


def sample_same_image_game(
    store: FeatureStore, split: SplitSpec, rng: RngStream, part: SplitPart = SplitPart.TRAIN
) -> GameInstance:
    by_concept = split.concepts(part)
    concept_ids = list(by_concept)
    if len(concept_ids) < 2:
        raise DatasetError(f"{part.value} split has {len(concept_ids)} concept(s); need at least 2")
    c_target, c_distractor = _pick_concept_pair(concept_ids, rng)
    rows_t = by_concept[c_target]
    rows_d = by_concept[c_distractor]
    target = int(rows_t[rng.integers(rows_t.size)])
    distractor = int(rows_d[rng.integers(rows_d.size)])
    left, right, position = _receiver_order(target, distractor, rng)
    return GameInstance(
        sender_target=target,
        sender_distractor=distractor,
        receiver_left=left,
        receiver_right=right,
        target_position=position,
        mode=GameMode.SAME_IMAGE,
    )


def _two_distinct(rows: np.ndarray, rng: RngStream) -> Tuple[int, int]:
    i = int(rng.integers(rows.size))
    j = int(rng.integers(rows.size - 1))
    if j >= i:
        j += 1
    return int(rows[i]), int(rows[j])


def sample_different_image_game(
    store: FeatureStore, split: SplitSpec, rng: RngStream, part: SplitPart = SplitPart.TRAIN
) -> GameInstance:
    by_concept = split.concepts(part)
    concept_ids = list(by_concept)
    if len(concept_ids) < 2:
        raise DatasetError(f"{part.value} split has {len(concept_ids)} concept(s); need at least 2")
    for concept, rows in by_concept.items():
        if rows.size < 2:
            raise DatasetError(
                f"concept {concept} has a single image in the {part.value} split; "
                "the different-image game needs two"
            )
    c_target, c_distractor = _pick_concept_pair(concept_ids, rng)
    sender_t, receiver_t = _two_distinct(by_concept[c_target], rng)
    sender_d, receiver_d = _two_distinct(by_concept[c_distractor], rng)
    left, right, position = _receiver_order(receiver_t, receiver_d, rng)
    return GameInstance(
        sender_target=sender_t,
        sender_distractor=sender_d,
        receiver_left=left,
        receiver_right=right,
        target_position=position,
        mode=GameMode.DIFFERENT_IMAGE,
    )


def draw_noise_vector(d: int, rng: RngStream) -> np.ndarray:
    """Unit-normalized standard-Normal pseudo-image"""
    return l2_normalize(rng.standard_normal(d))


def sample_noise_game(d: int, rng: RngStream) -> GameInstance:
    if d < 2:
        raise ParameterError(f"noise games need d >= 2, got {d}")
    payload = (draw_noise_vector(d, rng), draw_noise_vector(d, rng))
    target = int(rng.integers(2))
    left, right, position = _receiver_order(target, 1 - target, rng)
    return GameInstance(
        sender_target=target,
        sender_distractor=1 - target,
        receiver_left=left,
        receiver_right=right,
        target_position=position,
        mode=GameMode.NOISE,
        noise_payload=payload,
    )


def sample_game(
    mode: GameMode,
    store: Optional[FeatureStore],
    split: Optional[SplitSpec],
    rng: RngStream,
    part: SplitPart = SplitPart.TRAIN,
) -> GameInstance:
    if mode is GameMode.SAME_IMAGE:
        return sample_same_image_game(store, split, rng, part)
    if mode is GameMode.DIFFERENT_IMAGE:
        return sample_different_image_game(store, split, rng, part)
    if store is None:
        raise DatasetError("noise games need the dimensionality d; pass d via sample_noise_game")
    return sample_noise_game(store.d, rng)


def build_validation_set(
    store: FeatureStore,
    split: SplitSpec,
    mode: GameMode,
    n: int,
    rng: RngStream,
    part: SplitPart = SplitPart.VALIDATION,
) -> List[GameInstance]:
    """Fixed validation games, drawn once per run and reused at every evaluation.

    Falls back to training rows when the split holds no validation rows
    (tiny stores whose concepts keep every image for training).
    """
    if n < 1:
        raise ParameterError("validation set size must be >= 1")
    if mode is GameMode.NOISE:
        raise ParameterError("validation sets are built for same-image or different-image games")
    if part is SplitPart.VALIDATION and len(split.concepts(part)) < 2:
        logger.warning("No usable validation rows; validation games use training rows")
        part = SplitPart.TRAIN
    return [sample_game(mode, store, split, rng, part) for _ in range(n)]
