"""Reference/target pair construction and test-time reference selection.

Frames are identified by their position in the record list.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .pain_scales import AnnotationRecord, HeadTable

GATE_SAMPLE = "sample"
GATE_HEAD = "head"


class SubjectMismatchError(ValueError):
    pass


@dataclass
class PairingReport:
    pairs: list
    skipped: list = field(default_factory=list)  # frame ids of single-frame subjects

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)


@dataclass
class ReferenceSelection:
    ids: list
    shortfall: int = 0

    @property
    def short(self) -> bool:
        return self.shortfall > 0


def make_target_delta(ref: AnnotationRecord, tgt: AnnotationRecord, heads: HeadTable,
                      gate: str = GATE_SAMPLE, allow_cross_subject: bool = False):
    """Delta (target minus reference) and loss mask over all heads.

    Only the target's dataset heads are active. With the default
    sample-level gate, a negative PSPI delta masks every head of the pair;
    ``gate="head"`` instead masks only the heads whose own delta is negative.
    """
    if ref.subject_id != tgt.subject_id and not allow_cross_subject:
        raise SubjectMismatchError(
            f"reference subject {ref.subject_id!r} != target subject {tgt.subject_id!r}")
    n = len(heads)
    delta = np.zeros(n)
    mask = np.zeros(n)
    pspi_ok = (tgt.pspi - ref.pspi) >= 0
    if gate == GATE_SAMPLE and not pspi_ok:
        return delta, mask
    for h in heads:
        if h.dataset_id != tgt.dataset_id:
            continue
        t = tgt.target_value(h.target_name)
        r = ref.target_value(h.target_name)
        if t is None or r is None:
            continue
        delta[h.index] = t - r
        if gate == GATE_HEAD:
            mask[h.index] = 1.0 if delta[h.index] >= 0 else 0.0
        elif gate == GATE_SAMPLE:
            mask[h.index] = 1.0
        else:
            raise ValueError(f"unknown gate {gate!r}")
    return delta, mask


def group_by_subject(records) -> dict:
    groups = defaultdict(list)
    for i, rec in enumerate(records):
        groups[rec.subject_id].append(i)
    return dict(groups)


def sample_training_pairs(records, epoch_seed: int) -> PairingReport:
    """Pair every frame (as target) with a uniformly drawn other frame of its subject."""
    rng = np.random.default_rng([int(epoch_seed), 11])
    pairs, skipped = [], []
    for _, ids in sorted(group_by_subject(records).items()):
        if len(ids) < 2:
            skipped.extend(ids)
            continue
        ids = np.asarray(ids)
        for pos, tgt in enumerate(ids):
            # uniform over the subject's other frames
            k = int(rng.integers(len(ids) - 1))
            ref = ids[k if k < pos else k + 1]
            pairs.append((int(ref), int(tgt)))
    return PairingReport(pairs, skipped)


def sample_random_person_pairs(records, epoch_seed: int) -> PairingReport:
    """Ablation pairing: the reference is drawn uniformly from all frames of all subjects."""
    rng = np.random.default_rng([int(epoch_seed), 13])
    n = len(records)
    pairs = []
    for tgt in range(n):
        k = int(rng.integers(n - 1)) if n > 1 else 0
        ref = k if k < tgt or n == 1 else k + 1
        pairs.append((ref, tgt))
    return PairingReport(pairs)


def select_reference_frames(records, subject_id: str, n: int = 5,
                            seed: int = 0) -> ReferenceSelection:
    """Pick ``n`` distinct zero-PSPI frames of one subject."""
    zero = [i for i, r in enumerate(records) if r.subject_id == subject_id and r.pspi == 0]
    if len(zero) <= n:
        return ReferenceSelection(zero, shortfall=max(0, n - len(zero)))
    rng = np.random.default_rng([int(seed), 17])
    picked = rng.choice(len(zero), size=n, replace=False)
    return ReferenceSelection([zero[i] for i in sorted(picked)])
