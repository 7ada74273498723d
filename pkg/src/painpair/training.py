"""Training loop and pairwise inference."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .contrastive import (ELASTIC_ALPHA, ELASTIC_SIGMA, ContrastiveStats, contrastive_loss,
                          make_ood, total_loss)
from .dataset import PainDataset
from .model import PairwiseNet, masked_mse_loss
from .pain_scales import HeadTable, build_head_table
from .pairing import (GATE_SAMPLE, make_target_delta, sample_random_person_pairs,
                      sample_training_pairs, select_reference_frames)

log = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class Augmentation:
    random_crop_pad: int = 8
    horizontal_flip_p: float = 0.5


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 70
    batch_size: int = 32
    dropout_p: float = 0.25
    contrastive_c: float = 0.05
    contrastive_enabled: bool = False
    multitask_enabled: bool = True
    pairing: str = "same"
    gate: str = GATE_SAMPLE
    batchnorm: str = "batch"
    seed: int = 0
    augmentation: Augmentation = field(default_factory=Augmentation)
    elastic_alpha: float = ELASTIC_ALPHA
    elastic_sigma: float = ELASTIC_SIGMA

    def __post_init__(self):
        if isinstance(self.augmentation, dict):
            self.augmentation = Augmentation(**self.augmentation)
        for name in ("learning_rate", "epochs", "batch_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or self.contrastive_c < 0:
            raise ValueError("weight_decay and contrastive_c must be >= 0")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.pairing not in ("same", "random"):
            raise ValueError(f"pairing must be 'same' or 'random', got {self.pairing!r}")
        if not 0 <= self.augmentation.horizontal_flip_p <= 1:
            raise ValueError("horizontal_flip_p must be in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def uses_contrastive(self) -> bool:
        return self.contrastive_enabled and self.contrastive_c > 0


def _stream(seed, *keys) -> np.random.Generator:
    return np.random.default_rng([int(seed), *keys])


def _sub_seed(seed, *keys) -> int:
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1)[0])


def augment_pairs(refs: np.ndarray, tgts: np.ndarray, aug: Augmentation, rng):
    """Pad-then-random-crop and horizontal flip, identical for both frames of a pair."""
    n, h, w = refs.shape
    pad = aug.random_crop_pad
    out_r = np.empty_like(refs)
    out_t = np.empty_like(tgts)
    if pad:
        pr = np.pad(refs, ((0, 0), (pad, pad), (pad, pad)))
        pt = np.pad(tgts, ((0, 0), (pad, pad), (pad, pad)))
    for i in range(n):
        if pad:
            oy, ox = rng.integers(0, 2 * pad + 1, size=2)
            r = pr[i, oy:oy + h, ox:ox + w]
            t = pt[i, oy:oy + h, ox:ox + w]
        else:
            r, t = refs[i], tgts[i]
        if rng.random() < aug.horizontal_flip_p:
            r, t = r[:, ::-1], t[:, ::-1]
        out_r[i] = r
        out_t[i] = t
    return out_r, out_t


def pair_targets(records, pairs, heads: HeadTable, gate: str, multitask: bool,
                 allow_cross_subject: bool = False):
    deltas = np.zeros((len(pairs), len(heads)))
    masks = np.zeros((len(pairs), len(heads)))
    for k, (r, t) in enumerate(pairs):
        deltas[k], masks[k] = make_target_delta(records[r], records[t], heads, gate=gate,
                                                allow_cross_subject=allow_cross_subject)
    if not multitask:
        masks *= pspi_only_mask(heads)
    return deltas, masks


def pspi_only_mask(heads: HeadTable) -> np.ndarray:
    return np.array([1.0 if h.target_name == "pspi" else 0.0 for h in heads])


def build_model(config: TrainConfig, heads: HeadTable, dtype=torch.float32) -> PairwiseNet:
    return PairwiseNet(n_heads=len(heads), dropout_p=config.dropout_p,
                       batchnorm=config.batchnorm, seed=_sub_seed(config.seed, 1), dtype=dtype)


def train(config: TrainConfig, dataset: PainDataset, heads: HeadTable | None = None,
          progress=None):
    """Train from scratch; returns (model, history) with one history dict per epoch.

    All randomness derives from ``config.seed``.
    """
    heads = heads or build_head_table()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    records, frames = dataset.records, dataset.frames
    torch.manual_seed(_sub_seed(config.seed, 0))
    model = build_model(config, heads)
    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate,
                            weight_decay=config.weight_decay)
    stats = ContrastiveStats()
    cross = config.pairing == "random"
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        pair_seed = _sub_seed(config.seed, 2, epoch)
        if cross:
            pairs = sample_random_person_pairs(records, pair_seed).pairs
        else:
            pairs = sample_training_pairs(records, pair_seed).pairs
        rng = _stream(config.seed, 3, epoch)
        order = rng.permutation(len(pairs))
        sums = {"loss": 0.0, "regression": 0.0, "contrastive": 0.0}
        n_batches = 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [pairs[k] for k in order[start:start + config.batch_size]]
            deltas, masks = pair_targets(records, batch, heads, config.gate,
                                         config.multitask_enabled, allow_cross_subject=cross)
            ref_ids = [r for r, _ in batch]
            tgt_ids = [t for _, t in batch]
            refs, tgts = augment_pairs(frames[ref_ids], frames[tgt_ids], config.augmentation, rng)
            batch_seed = _sub_seed(config.seed, 4, epoch, b)
            outputs, feats = model(torch.from_numpy(refs), torch.from_numpy(tgts),
                                   train=True, seed=batch_seed)
            reg, n_active = masked_mse_loss(outputs, torch.from_numpy(deltas).to(outputs.dtype),
                                            torch.from_numpy(masks).to(outputs.dtype))
            con = torch.zeros((), dtype=outputs.dtype)
            if config.uses_contrastive:
                ood = [make_ood(r, t, _stream(batch_seed, 5, i), config.elastic_alpha,
                                config.elastic_sigma) for i, (r, t) in enumerate(zip(refs, tgts))]
                ood_r = torch.from_numpy(np.stack([o[0] for o in ood])).to(outputs.dtype)
                ood_t = torch.from_numpy(np.stack([o[1] for o in ood])).to(outputs.dtype)
                _, ood_feats = model(ood_r, ood_t, train=True, seed=_sub_seed(batch_seed, 6),
                                     update_stats=False)
                con = contrastive_loss(feats, ood_feats, model.w_fc, stats)
                loss = total_loss(reg, con, config.contrastive_c)
            else:
                loss = reg
                if n_active == 0:
                    continue
            if not torch.isfinite(loss):
                raise NonFiniteLossError(epoch, b, loss.item())
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["loss"] += loss.item()
            sums["regression"] += reg.item()
            sums["contrastive"] += con.item()
            n_batches += 1
        entry = {k: v / max(1, n_batches) for k, v in sums.items()}
        entry.update(epoch=epoch, n_pairs=len(pairs), n_batches=n_batches,
                     seconds=time.perf_counter() - t0)
        history.append(entry)
        log.info("epoch %d loss %.4f reg %.4f con %.4f (%.1fs)", epoch, entry["loss"],
                 entry["regression"], entry["contrastive"], entry["seconds"])
        if progress is not None:
            progress(entry)
    model.eval()
    history_meta = {"contrastive_anomalies": stats.anomalies}
    return model, {"epochs": history, **history_meta}


# -- inference --------------------------------------------------------------------

@torch.no_grad()
def pair_outputs(model: PairwiseNet, refs, tgts, batch_size: int = 256):
    """Eval-mode outputs and features for aligned arrays of reference/target frames."""
    model.eval()
    refs = np.asarray(refs)
    tgts = np.asarray(tgts)
    outs, feats = [], []
    for s in range(0, len(refs), batch_size):
        o, f = model(torch.as_tensor(refs[s:s + batch_size]),
                     torch.as_tensor(tgts[s:s + batch_size]))
        outs.append(o.double().numpy())
        feats.append(f.double().numpy())
    return np.concatenate(outs), np.concatenate(feats)


def predict_pspi(model: PairwiseNet, refs, tgt, head: int) -> float:
    """Mean over zero-PSPI references of the predicted delta at ``head``.

    The references' own PSPI is 0, so the delta is the prediction; no clamping.
    """
    refs = np.asarray(refs)
    if refs.ndim == 2:
        refs = refs[None]
    if len(refs) == 0:
        raise ValueError("at least one reference frame is required")
    tgts = np.repeat(np.asarray(tgt)[None], len(refs), axis=0)
    out, _ = pair_outputs(model, refs, tgts)
    return float(out[:, head].mean())


def reference_map(dataset: PainDataset, n_refs: int = 5, seed: int = 0) -> dict:
    """subject_id -> ReferenceSelection; subjects without zero-PSPI frames are left out."""
    refs = {}
    for sid in dataset.subjects():
        sel = select_reference_frames(dataset.records, sid, n_refs, seed)
        if sel.short:
            log.warning("subject %s has only %d zero-PSPI frames", sid, len(sel.ids))
        if sel.ids:
            refs[sid] = sel
    return refs


def predict_dataset(model: PairwiseNet, dataset: PainDataset, n_refs: int = 5, seed: int = 0,
                    refs: dict | None = None):
    """All 39 outputs per frame, each averaged over that subject's references.

    Returns (indices, outputs [len(indices), 39]); frames of subjects with no
    zero-PSPI frame are skipped.
    """
    refs = refs if refs is not None else reference_map(dataset, n_refs, seed)
    indices, outputs = [], []
    by_subject = {}
    for i, r in enumerate(dataset.records):
        by_subject.setdefault(r.subject_id, []).append(i)
    for sid, ids in sorted(by_subject.items()):
        if sid not in refs:
            continue
        ref_ids = refs[sid].ids
        k = len(ref_ids)
        ref_frames = np.tile(dataset.frames[ref_ids], (len(ids), 1, 1))
        tgt_frames = np.repeat(dataset.frames[ids], k, axis=0)
        out, _ = pair_outputs(model, ref_frames, tgt_frames)
        outputs.append(out.reshape(len(ids), k, -1).mean(axis=1))
        indices.extend(ids)
    if not outputs:
        return np.zeros(0, dtype=int), np.zeros((0, model.w_fc.shape[1]))
    return np.asarray(indices), np.concatenate(outputs)
