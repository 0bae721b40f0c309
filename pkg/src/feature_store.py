#!/usr/bin/env python3
"""
Feature Store
Image feature vectors plus a manifest of image / concept / class ids.

Ingests precomputed features (LFS1 binary or CSV) or generates a
hierarchical Gaussian stand-in for ConvNet features. Rows are always
L2-normalized in memory.
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from errors import DegenerateVectorError, FormatError, ParameterError
from numerics import RngStream, l2_normalize_rows

logger = logging.getLogger(__name__)

LFS1_MAGIC = b"LFS1"
LFS1_VERSION = 1
_HEADER = struct.Struct("<4sIII")
NORM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    concept_id: int
    class_id: Optional[int] = None


@dataclass(frozen=True)
class FeatureStore:
    """N x d unit-row feature matrix with a row-aligned manifest"""

    features: np.ndarray
    manifest: List[ManifestRecord]

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ParameterError(f"features must be N x d, got shape {self.features.shape}")
        if len(self.manifest) != self.features.shape[0]:
            raise FormatError(
                f"manifest has {len(self.manifest)} records for {self.features.shape[0]} rows"
            )
        norms = np.linalg.norm(self.features, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)
        if bad.size:
            raise FormatError(f"row {int(bad[0])} is not unit-norm", row=int(bad[0]))
        self.features.setflags(write=False)

    @classmethod
    def from_raw(cls, features: np.ndarray, manifest: List[ManifestRecord]) -> "FeatureStore":
        """Normalize rows, then build; zero rows become a FormatError with the row index"""
        try:
            unit = l2_normalize_rows(np.asarray(features, dtype=np.float64))
        except DegenerateVectorError as e:
            raise FormatError(f"zero-norm feature row {e.item}", row=e.item) from e
        return cls(features=unit, manifest=list(manifest))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def concept_ids(self) -> np.ndarray:
        return np.array([r.concept_id for r in self.manifest], dtype=np.int64)

    def class_ids(self) -> List[Optional[int]]:
        return [r.class_id for r in self.manifest]

    def summary(self) -> Dict[str, int]:
        classes = {r.class_id for r in self.manifest if r.class_id is not None}
        return {
            "n": self.n,
            "d": self.d,
            "concepts": len(set(self.concept_ids().tolist())),
            "classes": len(classes),
        }


@dataclass(frozen=True)
class SyntheticConfig:
    """Hierarchical Gaussian generator settings (desk-scale defaults)"""

    n_classes: int = 5
    concepts_per_class: int = 10
    images_per_concept: int = 100
    d: int = 64
    class_spread: float = 1.0
    concept_spread: float = 0.5
    image_spread: float = 0.3
    clamp_nonnegative: bool = False

    def validate(self):
        for name in ("n_classes", "concepts_per_class", "images_per_concept", "d"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        for name in ("class_spread", "concept_spread", "image_spread"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0")


def manifest_path_for(path: Union[str, Path]) -> Path:
    """Sidecar manifest next to an LFS1 file: store.lfs -> store.manifest.json"""
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _read_manifest(path: Path) -> List[ManifestRecord]:
    if not path.exists():
        raise FormatError(f"manifest not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest {path} is not valid JSON: {e}") from e
    if not isinstance(data, list):
        raise FormatError(f"manifest {path} must be a JSON array")
    records = []
    for row, item in enumerate(data):
        try:
            class_id = item.get("class_id")
            records.append(
                ManifestRecord(
                    image_id=str(item["image_id"]),
                    concept_id=int(item["concept_id"]),
                    class_id=None if class_id is None else int(class_id),
                )
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise FormatError(f"bad manifest record at row {row}: {e}", row=row) from e
    return records


def load_feature_store(path: Union[str, Path]) -> FeatureStore:
    """Read an LFS1 file and its sidecar manifest"""
    path = Path(path)
    payload = path.read_bytes()
    if len(payload) < _HEADER.size:
        raise FormatError(f"{path} is too short for an LFS1 header")
    magic, version, n, d = _HEADER.unpack_from(payload, 0)
    if magic != LFS1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != LFS1_VERSION:
        raise FormatError(f"{path}: unsupported LFS1 version {version}")
    expected = _HEADER.size + 4 * n * d
    if len(payload) != expected:
        rows_present = (len(payload) - _HEADER.size) // (4 * d) if d else 0
        raise FormatError(
            f"{path}: header declares {n} rows of {d} floats but file holds {rows_present}",
            row=rows_present,
        )
    raw = np.frombuffer(payload, dtype="<f4", count=n * d, offset=_HEADER.size)
    features = raw.astype(np.float64).reshape(n, d)

    manifest = _read_manifest(manifest_path_for(path))
    if len(manifest) != n:
        raise FormatError(f"manifest has {len(manifest)} records but {path} has {n} rows")

    store = FeatureStore.from_raw(features, manifest)
    logger.info(f"Loaded feature store {path}: N={store.n}, d={store.d}")
    return store


def save_feature_store(store: FeatureStore, path: Union[str, Path]) -> Path:
    """Write LFS1 (32-bit floats) plus the manifest JSON; returns the manifest path"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(LFS1_MAGIC, LFS1_VERSION, store.n, store.d))
        f.write(store.features.astype("<f4").tobytes(order="C"))

    manifest_path = manifest_path_for(path)
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump([asdict(r) for r in store.manifest], f, indent=2)
    logger.info(f"Saved feature store to {path} ({store.n} rows)")
    return manifest_path


def load_feature_csv(path: Union[str, Path]) -> FeatureStore:
    """CSV ingestion: image_id, concept_id, class_id, then d feature columns"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, header=None, dtype={0: str}, keep_default_na=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"{path}: cannot parse CSV: {e}") from e
    if frame.shape[1] < 4:
        raise FormatError(f"{path}: need image_id, concept_id, class_id and at least one feature")
    # tolerate a header row
    if not _is_number(frame.iloc[0, 1]):
        frame = frame.iloc[1:].reset_index(drop=True)

    manifest = []
    for row, (image_id, concept_id, class_id) in enumerate(frame.iloc[:, :3].itertuples(index=False)):
        try:
            manifest.append(
                ManifestRecord(
                    image_id=str(image_id),
                    concept_id=int(float(concept_id)),
                    class_id=None if pd.isna(class_id) or class_id == "" else int(float(class_id)),
                )
            )
        except (TypeError, ValueError) as e:
            raise FormatError(f"{path}: bad id columns at row {row}: {e}", row=row) from e
    try:
        features = frame.iloc[:, 3:].astype(np.float64).to_numpy()
    except ValueError as e:
        raise FormatError(f"{path}: non-numeric feature value: {e}") from e
    if not np.all(np.isfinite(features)):
        row = int(np.flatnonzero(~np.all(np.isfinite(features), axis=1))[0])
        raise FormatError(f"{path}: non-finite feature at row {row}", row=row)

    store = FeatureStore.from_raw(features, manifest)
    logger.info(f"Imported {store.n} rows from CSV {path}")
    return store


def _is_number(value) -> bool:
    try:
        float(value)
        return True
    except (TypeError, ValueError):
        return False


def generate_synthetic_features(cfg: SyntheticConfig, rng: RngStream) -> FeatureStore:
    """Hierarchical Gaussian features.

    class mean ~ class_spread * N(0, I); concept mean = class mean +
    concept_spread * N(0, I); image = concept mean + image_spread * N(0, I).
    """
    cfg.validate()
    rows = []
    manifest = []
    for class_id in range(cfg.n_classes):
        class_mean = cfg.class_spread * rng.standard_normal(cfg.d)
        for k in range(cfg.concepts_per_class):
            concept_id = class_id * cfg.concepts_per_class + k
            concept_mean = class_mean + cfg.concept_spread * rng.standard_normal(cfg.d)
            images = concept_mean + cfg.image_spread * rng.standard_normal(
                (cfg.images_per_concept, cfg.d)
            )
            rows.append(images)
            for i in range(cfg.images_per_concept):
                manifest.append(
                    ManifestRecord(
                        image_id=f"c{concept_id:04d}_i{i:04d}",
                        concept_id=concept_id,
                        class_id=class_id,
                    )
                )
    features = np.vstack(rows)
    if cfg.clamp_nonnegative:
        features = np.maximum(features, 0.0)

    store = FeatureStore.from_raw(features, manifest)
    logger.info(
        f"Generated synthetic store: {cfg.n_classes} classes x {cfg.concepts_per_class} concepts "
        f"x {cfg.images_per_concept} images, d={cfg.d}"
    )
    return store
