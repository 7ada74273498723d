"""Records plus their preprocessed frames, and loading from the on-disk layout."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pain_scales import load_annotations
from .preprocess import (DEFAULT_CLIP_LIMIT, DEFAULT_FRONTAL_THRESHOLD, DEFAULT_TILES,
                         FrameCache, is_frontal, load_image, load_landmark_table,
                         load_landmarks, preprocess_frame)

log = logging.getLogger(__name__)

ANNOTATIONS_FILE = "annotations.csv"
LANDMARKS_FILE = "landmarks.csv"


@dataclass
class PainDataset:
    records: list
    frames: np.ndarray  # (N, 96, 96) float32

    def __post_init__(self):
        if len(self.records) != len(self.frames):
            raise ValueError(f"{len(self.records)} records but {len(self.frames)} frames")

    def __len__(self):
        return len(self.records)

    def subjects(self) -> list:
        return sorted({r.subject_id for r in self.records})

    def subset(self, subject_ids) -> "PainDataset":
        keep = set(subject_ids)
        idx = [i for i, r in enumerate(self.records) if r.subject_id in keep]
        return PainDataset([self.records[i] for i in idx], self.frames[idx])


def _annotations_path(data):
    data = Path(data)
    return data / ANNOTATIONS_FILE if data.is_dir() else data


def _frame_landmarks(root, image_path, table):
    if table is not None:
        return table.get(image_path)
    sidecar = (root / image_path).with_suffix(".csv")
    return load_landmarks(sidecar) if sidecar.exists() else None


def load_dataset(data, use_clahe: bool = True, clip_limit: float = DEFAULT_CLIP_LIMIT,
                 tiles: int = DEFAULT_TILES, frontal_threshold: float = DEFAULT_FRONTAL_THRESHOLD,
                 cache_dir=None) -> PainDataset:
    """Load ``annotations.csv`` and its images; image paths are relative to the CSV.

    Landmarks come from ``landmarks.csv`` next to the CSV (keyed by
    image_path) or from a per-frame ``<image stem>.csv`` sidecar; frames
    without landmarks must already be 96x96. Frames whose frontal_score is
    below ``frontal_threshold`` are dropped.
    """
    csv_path = _annotations_path(data)
    root = csv_path.parent
    records = load_annotations(csv_path)
    table_path = root / LANDMARKS_FILE
    table = load_landmark_table(table_path) if table_path.exists() else None
    cache = FrameCache(cache_dir) if cache_dir else None
    kept, frames = [], []
    dropped = 0
    for rec in records:
        if not is_frontal(rec.frontal_score, frontal_threshold):
            dropped += 1
            continue
        if not rec.image_path:
            raise ValueError(f"record {rec.key} has no image_path")
        image = load_image(root / rec.image_path)
        landmarks = _frame_landmarks(root, rec.image_path, table)
        frames.append(preprocess_frame(image, landmarks, use_clahe=use_clahe,
                                       clip_limit=clip_limit, tiles=tiles, cache=cache))
        kept.append(rec)
    if dropped:
        log.info("dropped %d non-frontal frames", dropped)
    arr = np.stack(frames).astype(np.float32) if frames else np.zeros((0, 96, 96), np.float32)
    return PainDataset(kept, arr)
