#!/usr/bin/env python3
"""
Similarity Analysis
Compares the similarity structure of input, Sender and Receiver spaces:
RSA scores, z-normalized within-group similarity, and the image pairs
whose similarity shifted most between spaces.
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from agents import ReceiverParams, SenderParams, receiver_embed, sender_embed
from errors import DegenerateVectorError, GroupingError, ParameterError
from feature_store import ManifestRecord
from game_sampler import SplitPart, SplitSpec
from numerics import RngStream, pairwise_cosines, spearman

logger = logging.getLogger(__name__)

DEFAULT_PROBE_SIZE = 500


class Space(Enum):
    INPUT = "input"
    SENDER = "sender"
    RECEIVER = "receiver"


class Grouping(Enum):
    CONCEPT = "concept"
    CLASS = "class"


@dataclass(frozen=True)
class RSAResult:
    rho: float
    n_items: int
    n_pairs: int


@dataclass(frozen=True)
class AlignmentReport:
    rho_sr: float
    rho_si: float
    rho_ri: float
    n_items: int
    n_pairs: int
    probe_id: str = ""
    checkpoint_id: str = ""
    symbols_used: Optional[int] = None
    kind: str = field(default="alignment", init=False)


@dataclass(frozen=True)
class SubgroupSimilarityReport:
    space: str
    grouping: str
    mean_z_within: float
    n_within_pairs: int
    n_pairs: int
    kind: str = field(default="subgroup_similarity", init=False)


@dataclass(frozen=True)
class ShiftPair:
    image_id_a: str
    image_id_b: str
    sim_input: float
    sim_sender: float
    sim_receiver: Optional[float]
    delta: float


@dataclass(frozen=True)
class ShiftReport:
    drifted_apart: List[ShiftPair]
    drifted_together: List[ShiftPair]


def select_probe_rows(
    split: SplitSpec, rng: RngStream, probe_size: int = DEFAULT_PROBE_SIZE
) -> np.ndarray:
    """Held-out test rows, capped at probe_size by a seeded draw (training rows if no test split)"""
    rows = split.rows(SplitPart.TEST)
    if rows.size == 0:
        rows = split.rows(SplitPart.TRAIN)
    if rows.size > probe_size:
        rows = np.sort(rows[rng.choice(rows.size, probe_size, replace=False)])
    return rows


def _similarities(reps, label: str) -> np.ndarray:
    try:
        return pairwise_cosines(reps)
    except DegenerateVectorError as e:
        raise DegenerateVectorError(f"{label} representation of item {e.item} has zero norm", item=e.item) from e


def rsa_score(reps1: Sequence, reps2: Sequence) -> RSAResult:
    """Spearman correlation between the two spaces' pairwise cosine vectors"""
    m1 = np.asarray(reps1, dtype=np.float64)
    m2 = np.asarray(reps2, dtype=np.float64)
    if m1.ndim != 2 or m2.ndim != 2 or m1.shape[0] != m2.shape[0]:
        raise ParameterError(f"rsa_score needs index-aligned collections, got {m1.shape} and {m2.shape}")
    n = m1.shape[0]
    if n < 3:
        raise ParameterError(f"rsa_score needs at least 3 items, got {n}")
    s1 = _similarities(m1, "first")
    s2 = _similarities(m2, "second")
    return RSAResult(rho=spearman(s1, s2), n_items=n, n_pairs=s1.size)


def embed_all(features: np.ndarray, sender: SenderParams, receiver: ReceiverParams, rows=None):
    """(input, sender, receiver) representations of the selected rows"""
    x = features if rows is None else features[np.asarray(rows)]
    return x, sender_embed(sender, x), receiver_embed(receiver, x)


def count_argmax_symbols(sender: SenderParams, sender_reps: np.ndarray) -> int:
    """Distinct argmax symbols over every ordered pair (i, j), i != j, i the target"""
    h = sender.h
    as_target = sender_reps @ sender.W_vocab[:, :h].T + sender.b_vocab
    as_distractor = sender_reps @ sender.W_vocab[:, h:].T
    used = set()
    for i in range(sender_reps.shape[0]):
        logits = as_target[i] + np.delete(as_distractor, i, axis=0)
        used.update(np.argmax(logits, axis=1).tolist())
    return len(used)


def alignment_report(
    input_reps: np.ndarray,
    sender: SenderParams,
    receiver: ReceiverParams,
    probe_rows: Sequence[int],
    probe_id: str = "",
    checkpoint_id: str = "",
    count_symbols: bool = False,
) -> AlignmentReport:
    probe_rows = np.asarray(probe_rows, dtype=np.int64)
    if probe_rows.size == 0:
        raise ParameterError("alignment_report needs a non-empty probe set")
    x, s, r = embed_all(input_reps, sender, receiver, probe_rows)
    sr = rsa_score(s, r)
    si = rsa_score(s, x)
    ri = rsa_score(r, x)

    symbols_used = None
    if count_symbols:
        symbols_used = count_argmax_symbols(sender, s)

    return AlignmentReport(
        rho_sr=sr.rho,
        rho_si=si.rho,
        rho_ri=ri.rho,
        n_items=sr.n_items,
        n_pairs=sr.n_pairs,
        probe_id=probe_id,
        checkpoint_id=checkpoint_id,
        symbols_used=symbols_used,
    )


def group_labels(manifest: Sequence[ManifestRecord], grouping: Grouping) -> np.ndarray:
    if grouping is Grouping.CONCEPT:
        return np.array([r.concept_id for r in manifest], dtype=np.int64)
    labels = [r.class_id for r in manifest]
    missing = [i for i, c in enumerate(labels) if c is None]
    if missing:
        raise GroupingError(f"item {missing[0]} has no class id")
    return np.array(labels, dtype=np.int64)


def mean_z_within(similarities: np.ndarray, within: np.ndarray) -> float:
    """Mean z-score of the selected pairs, z taken over the whole pair population"""
    sims = np.asarray(similarities, dtype=np.float64)
    std = sims.std()
    if std == 0:
        raise GroupingError("all pairwise similarities are equal; z-scores are undefined")
    z = (sims - sims.mean()) / std
    return float(z[np.asarray(within, dtype=bool)].mean())


def z_subgroup_similarity(
    reps: np.ndarray,
    manifest: Sequence[ManifestRecord],
    grouping: Grouping,
    space: Union[Space, str] = Space.INPUT,
) -> SubgroupSimilarityReport:
    """Mean z-normalized cosine over pairs that share a concept (or class)"""
    space = Space(space)
    reps = np.asarray(reps, dtype=np.float64)
    if len(manifest) != reps.shape[0]:
        raise GroupingError(f"{len(manifest)} labels for {reps.shape[0]} items")
    labels = group_labels(manifest, grouping)
    i, j = np.triu_indices(labels.size, k=1)
    within = labels[i] == labels[j]
    if within.all():
        raise GroupingError(f"every item shares one {grouping.value}; nothing to contrast")
    if not within.any():
        raise GroupingError(f"every {grouping.value} is a singleton; no within-group pairs")
    sims = _similarities(reps, space.value)
    return SubgroupSimilarityReport(
        space=space.value,
        grouping=grouping.value,
        mean_z_within=mean_z_within(sims, within),
        n_within_pairs=int(within.sum()),
        n_pairs=int(within.size),
    )


def top_shift_pairs(
    input_reps: np.ndarray,
    agent_reps: np.ndarray,
    manifest: Sequence[ManifestRecord],
    k: int,
    receiver_reps: Optional[np.ndarray] = None,
) -> ShiftReport:
    """Pairs ranked by delta = sim_input - sim_agent, both ends of the ranking.

    A k larger than the pair count just returns every pair.
    """
    if k < 1:
        raise ParameterError("k must be >= 1")
    s_in = _similarities(input_reps, "input")
    s_ag = _similarities(agent_reps, "agent")
    s_rc = _similarities(receiver_reps, "receiver") if receiver_reps is not None else None
    if s_in.size != s_ag.size or len(manifest) != np.asarray(input_reps).shape[0]:
        raise ParameterError("input, agent and manifest collections are not aligned")
    i, j = np.triu_indices(len(manifest), k=1)
    delta = s_in - s_ag
    # stable sort keeps canonical pair order among ties
    apart = np.argsort(-delta, kind="stable")[:k]
    together = np.argsort(delta, kind="stable")[:k]

    def build(indices):
        return [
            ShiftPair(
                image_id_a=manifest[i[p]].image_id,
                image_id_b=manifest[j[p]].image_id,
                sim_input=float(s_in[p]),
                sim_sender=float(s_ag[p]),
                sim_receiver=None if s_rc is None else float(s_rc[p]),
                delta=float(delta[p]),
            )
            for p in indices
        ]

    return ShiftReport(drifted_apart=build(apart), drifted_together=build(together))


def write_shift_pairs(report: ShiftReport, path: Union[str, Path]) -> Path:
    rows = [dict(direction="apart", **asdict(p)) for p in report.drifted_apart]
    rows += [dict(direction="together", **asdict(p)) for p in report.drifted_together]
    frame = pd.DataFrame(
        rows,
        columns=["direction", "image_id_a", "image_id_b", "sim_input", "sim_sender", "sim_receiver", "delta"],
    )
    frame.to_csv(path, index=False, float_format="%.10g")
    return Path(path)


def write_pair_dump(
    path: Union[str, Path],
    manifest: Sequence[ManifestRecord],
    input_reps: np.ndarray,
    sender_reps: np.ndarray,
    receiver_reps: np.ndarray,
) -> Path:
    """Every unordered pair with its similarity in the three spaces"""
    i, j = np.triu_indices(len(manifest), k=1)
    ids = np.array([r.image_id for r in manifest], dtype=object)
    frame = pd.DataFrame(
        {
            "image_id_a": ids[i],
            "image_id_b": ids[j],
            "sim_input": _similarities(input_reps, "input"),
            "sim_sender": _similarities(sender_reps, "sender"),
            "sim_receiver": _similarities(receiver_reps, "receiver"),
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote {len(frame)} pair similarities to {path}")
    return Path(path)
