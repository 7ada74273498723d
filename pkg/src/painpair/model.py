"""Pairwise delta-regression CNN, masked multi-task loss and checkpoint I/O."""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .preprocess import FRAME_SIZE

N_HEADS = 39
FEATURE_DIM = 200
CHANNELS = (8, 16, 32, 48)
CONV0_KERNEL = 5
BLOCK_KERNEL = 3
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    pass


class PairwiseNet(nn.Module):
    """Two frames in, 39 deltas out.

    conv0 runs on reference and target separately and the maps are
    subtracted (target minus reference); everything downstream sees only the
    difference, so identical frames always give the same output.
    """

    def __init__(self, n_heads: int = N_HEADS, feature_dim: int = FEATURE_DIM,
                 channels=CHANNELS, in_size: int = FRAME_SIZE, dropout_p: float = 0.25,
                 batchnorm: str = "batch", seed: int = 0, dtype=torch.float32):
        super().__init__()
        if batchnorm not in ("batch", "affine"):
            raise ValueError(f"batchnorm must be 'batch' or 'affine', got {batchnorm!r}")
        self.arch = dict(n_heads=n_heads, feature_dim=feature_dim, channels=list(channels),
                         in_size=in_size, dropout_p=dropout_p, batchnorm=batchnorm)
        self.in_size = in_size
        self.dropout_p = dropout_p
        self.batchnorm = batchnorm
        g = torch.Generator().manual_seed(int(seed))

        def uniform(shape, fan_in, gain=math.sqrt(6.0)):
            bound = gain / math.sqrt(fan_in)
            return nn.Parameter((torch.rand(shape, generator=g, dtype=torch.float64) * 2 - 1)
                                .mul_(bound).to(dtype))

        c = list(channels)
        self.conv0 = uniform((c[0], 1, CONV0_KERNEL, CONV0_KERNEL), CONV0_KERNEL ** 2)
        self.block_w = nn.ParameterList()
        self.bn_scale = nn.ParameterList()
        self.bn_shift = nn.ParameterList()
        for i in range(1, len(c)):
            self.block_w.append(uniform((c[i], c[i - 1], BLOCK_KERNEL, BLOCK_KERNEL),
                                        c[i - 1] * BLOCK_KERNEL ** 2))
            self.bn_scale.append(nn.Parameter(torch.ones(c[i], dtype=dtype)))
            self.bn_shift.append(nn.Parameter(torch.zeros(c[i], dtype=dtype)))
            self.register_buffer(f"running_mean{i}", torch.zeros(c[i], dtype=dtype))
            self.register_buffer(f"running_var{i}", torch.ones(c[i], dtype=dtype))
        n_blocks = len(c) - 1
        side = in_size // (2 ** n_blocks)
        flat = c[-1] * side * side
        self.fc1_w = uniform((feature_dim, flat), flat)
        self.fc1_b = nn.Parameter(torch.zeros(feature_dim, dtype=dtype))
        # columns of w_fc are the per-head weight vectors
        self.w_fc = uniform((feature_dim, n_heads), feature_dim, gain=1.0)
        self.b_fc = nn.Parameter(torch.zeros(n_heads, dtype=dtype))

    @property
    def dtype(self):
        return self.conv0.dtype

    def _as_batch(self, x):
        x = torch.as_tensor(x, dtype=self.dtype)
        if x.dim() == 2:
            x = x[None, None]
        elif x.dim() == 3:
            x = x[:, None]
        if x.dim() != 4 or x.shape[1] != 1 or x.shape[-2:] != (self.in_size, self.in_size):
            raise ShapeError(f"expected frames of size {self.in_size}x{self.in_size}, "
                             f"got shape {tuple(x.shape)}")
        return x

    def _dropout(self, x, gen):
        if gen is None or self.dropout_p == 0:
            return x
        keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= self.dropout_p
        return x * keep / (1.0 - self.dropout_p)

    def _norm(self, x, i, train, update_stats):
        scale, shift = self.bn_scale[i - 1], self.bn_shift[i - 1]
        if self.batchnorm == "affine":
            return x * scale[None, :, None, None] + shift[None, :, None, None]
        rm = getattr(self, f"running_mean{i}")
        rv = getattr(self, f"running_var{i}")
        if train and not update_stats:
            rm = rv = None
        return F.batch_norm(x, rm, rv, scale, shift, training=train,
                            momentum=BN_MOMENTUM, eps=BN_EPS)

    def difference_map(self, ref, tgt):
        pad = CONV0_KERNEL // 2
        return F.conv2d(tgt, self.conv0, padding=pad) - F.conv2d(ref, self.conv0, padding=pad)

    def forward(self, ref, tgt, train: bool = False, seed: int | None = None,
                update_stats: bool = True):
        ref = self._as_batch(ref)
        tgt = self._as_batch(tgt)
        if ref.shape != tgt.shape:
            raise ShapeError(f"reference {tuple(ref.shape)} and target {tuple(tgt.shape)} differ")
        gen = torch.Generator().manual_seed(int(seed or 0)) if train else None
        x = self.difference_map(ref, tgt)
        for i, w in enumerate(self.block_w, start=1):
            x = F.conv2d(x, w, padding=BLOCK_KERNEL // 2)
            x = self._norm(x, i, train, update_stats)
            x = F.max_pool2d(F.relu(x), 2)
            x = self._dropout(x, gen)
        features = F.relu(x.flatten(1) @ self.fc1_w.T + self.fc1_b)
        outputs = features @ self.w_fc + self.b_fc
        return outputs, features


def forward(params: PairwiseNet, ref, tgt, train_mode: bool = False, seed: int = 0):
    """Functional entry point: (outputs [B, 39], features [B, 200])."""
    return params(ref, tgt, train=train_mode, seed=seed)


def masked_mse_loss(outputs, deltas, masks):
    """Sum of mask * (output - delta)^2 over batch and heads, over max(1, sum(mask)).

    Returns (loss, n_active); n_active == 0 flags an all-masked batch (loss 0).
    """
    outputs = torch.as_tensor(outputs)
    deltas = torch.as_tensor(deltas, dtype=outputs.dtype)
    masks = torch.as_tensor(masks, dtype=outputs.dtype)
    if outputs.shape != deltas.shape or outputs.shape != masks.shape:
        raise ShapeError(f"shape mismatch: outputs {tuple(outputs.shape)}, "
                         f"deltas {tuple(deltas.shape)}, masks {tuple(masks.shape)}")
    n_active = float(masks.sum())
    loss = (masks * (outputs - deltas) ** 2).sum() / max(1.0, n_active)
    return loss, n_active


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_MAGIC = b"PAINPAIR"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: PairwiseNet, config: dict, seed: int, extra: dict | None = None):
    """Binary container: magic, u32 version, u64 header length, JSON header, f64 blobs."""
    state = model.state_dict()
    entries, blobs, offset = [], [], 0
    for name, tensor in state.items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "arch": model.arch,
        "config": config,
        "extra": extra or {},
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def read_checkpoint(path):
    """Return (header dict, {name: float64 ndarray})."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + head_len])
    base = 20 + head_len
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arr = np.frombuffer(raw[start:start + 8 * count], dtype="<f8")
        tensors[e["name"]] = arr.reshape(e["shape"]).copy()
    return header, tensors


def load_checkpoint(path, dtype=torch.float32):
    """Return (model in eval mode, header)."""
    header, tensors = read_checkpoint(path)
    arch = dict(header["arch"])
    model = PairwiseNet(n_heads=arch["n_heads"], feature_dim=arch["feature_dim"],
                        channels=arch["channels"], in_size=arch["in_size"],
                        dropout_p=arch["dropout_p"], batchnorm=arch["batchnorm"], dtype=dtype)
    model.load_state_dict({k: torch.from_numpy(v).to(dtype) for k, v in tensors.items()})
    model.eval()
    return model, header
