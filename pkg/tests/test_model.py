import struct

import numpy as np
import pytest
import torch

from grad_cases import cases, tiny_net
from oracles import gradient_errors
from painpair.dataset import PainDataset
from painpair.model import (CheckpointError, PairwiseNet, ShapeError, forward, load_checkpoint,
                            masked_mse_loss, read_checkpoint, save_checkpoint)
from painpair.pain_scales import build_head_table
from painpair.pairing import sample_training_pairs
from painpair.synth import gen_dataset
from painpair.training import (TrainConfig, pair_targets, predict_pspi, pspi_only_mask, train)

HEADS = build_head_table()


@pytest.fixture(scope="module")
def net():
    return PairwiseNet(seed=3)


def test_output_sizes(net):
    x = torch.rand(2, 96, 96)
    out, feats = forward(net, x, x.flip(-1))
    assert out.shape == (2, 39)
    assert feats.shape == (2, 200)


def test_wrong_frame_size(net):
    with pytest.raises(ShapeError):
        net(torch.zeros(1, 64, 64), torch.zeros(1, 64, 64))


def test_identical_frames_give_constant_output(net):
    g = torch.Generator().manual_seed(0)
    base, _ = net(torch.zeros(1, 96, 96), torch.zeros(1, 96, 96))
    for _ in range(10):
        x = torch.rand(1, 96, 96, generator=g)
        out, _ = net(x, x)
        assert torch.equal(out, base)


def test_eval_ignores_seed(net):
    x, y = torch.rand(2, 96, 96), torch.rand(2, 96, 96)
    a, _ = forward(net, x, y, train_mode=False, seed=1)
    b, _ = forward(net, x, y, train_mode=False, seed=2)
    assert torch.equal(a, b)


def test_dropout_is_seeded():
    net = tiny_net("affine")
    net.dropout_p = 0.5
    x, y = torch.rand(4, 16, 16, dtype=torch.float64), torch.rand(4, 16, 16, dtype=torch.float64)
    a, _ = net(x, y, train=True, seed=5)
    b, _ = net(x, y, train=True, seed=5)
    c, _ = net(x, y, train=True, seed=6)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_masked_mse_basics():
    assert masked_mse_loss(torch.ones(2, 3), torch.ones(2, 3), torch.ones(2, 3))[0] == 0
    loss, n = masked_mse_loss(torch.tensor([[2.0]]), torch.tensor([[0.0]]), torch.tensor([[1.0]]))
    assert (float(loss), n) == (4.0, 1.0)
    loss, n = masked_mse_loss(torch.ones(2, 2), torch.zeros(2, 2), torch.zeros(2, 2))
    assert (float(loss), n) == (0.0, 0.0)


def test_masked_mse_matches_loop():
    rng = np.random.default_rng(0)
    o, d = rng.normal(size=(7, 39)), rng.normal(size=(7, 39))
    m = (rng.random((7, 39)) < 0.3).astype(float)
    total = count = 0.0
    for i in range(7):
        for j in range(39):
            total += m[i, j] * (o[i, j] - d[i, j]) ** 2
            count += m[i, j]
    loss, _ = masked_mse_loss(torch.tensor(o), torch.tensor(d), torch.tensor(m))
    assert abs(float(loss) - total / count) < 1e-12


@pytest.mark.parametrize("name,fn,tensors", cases(0), ids=lambda c: c if isinstance(c, str) else "")
def test_gradient(name, fn, tensors):
    assert max(gradient_errors(fn, tensors)) < 1e-4


def test_adam_zero_gradient_step_is_noop():
    net = tiny_net()
    before = [p.detach().clone() for p in net.parameters()]
    opt = torch.optim.AdamW(net.parameters(), lr=1e-3, weight_decay=0.0)
    for p in net.parameters():
        p.grad = torch.zeros_like(p)
    opt.step()
    assert all(torch.equal(a, b) for a, b in zip(before, net.parameters()))


def test_multitask_off_equals_pspi_only_masks(synthetic_set):
    records, _ = synthetic_set
    pairs = sample_training_pairs(records, 0).pairs[:20]
    d_on, m_on = pair_targets(records, pairs, HEADS, "sample", multitask=True)
    d_off, m_off = pair_targets(records, pairs, HEADS, "sample", multitask=False)
    out = torch.randn(len(pairs), 39, dtype=torch.float64)
    expected, _ = masked_mse_loss(out, torch.tensor(d_on), torch.tensor(m_on * pspi_only_mask(HEADS)))
    got, _ = masked_mse_loss(out, torch.tensor(d_off), torch.tensor(m_off))
    assert float(got) == float(expected)


def test_checkpoint_round_trip(tmp_path, net):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, net, {"epochs": 1}, seed=9, extra={"note": "x"})
    loaded, header = load_checkpoint(path)
    assert header["seed"] == 9 and header["config"] == {"epochs": 1}
    x, y = torch.rand(2, 96, 96), torch.rand(2, 96, 96)
    net.eval()
    assert torch.equal(net(x, y)[0], loaded(x, y)[0])


def test_checkpoint_rejects_unknown_version(tmp_path, net):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, net, {}, seed=0)
    raw = bytearray(path.read_bytes())
    raw[8:12] = struct.pack("<I", 2)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version 2"):
        read_checkpoint(path)
    (tmp_path / "junk").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "junk")
    with pytest.raises(FileNotFoundError, match="missing.ckpt"):
        read_checkpoint(tmp_path / "missing.ckpt")


@pytest.fixture(scope="module")
def tiny_data():
    records, frames = gen_dataset(2, 8, seed=4, bias_mode=True)
    return PainDataset(records, frames)


def params(model):
    return [p.detach().clone() for p in model.state_dict().values()]


def test_train_smoke_and_determinism(tiny_data):
    cfg = TrainConfig(epochs=2, batch_size=4, seed=1)
    m1, h1 = train(cfg, tiny_data)
    m2, _ = train(cfg, tiny_data)
    assert len(h1["epochs"]) == 2
    assert all(np.isfinite(e["loss"]) for e in h1["epochs"])
    assert all(torch.equal(a, b) for a, b in zip(params(m1), params(m2)))


def test_contrastive_off_matches_zero_coefficient(tiny_data):
    off, _ = train(TrainConfig(epochs=1, batch_size=4, contrastive_enabled=False), tiny_data)
    zero, _ = train(TrainConfig(epochs=1, batch_size=4, contrastive_enabled=True,
                                contrastive_c=0.0), tiny_data)
    assert all(torch.equal(a, b) for a, b in zip(params(off), params(zero)))


def test_contrastive_training_runs(tiny_data):
    _, hist = train(TrainConfig(epochs=1, batch_size=4, contrastive_enabled=True), tiny_data)
    assert np.isfinite(hist["epochs"][0]["contrastive"])


def test_predict_pspi_averages_references():
    net = PairwiseNet(seed=2, dtype=torch.float64)
    rng = np.random.default_rng(0)
    refs = rng.random((5, 96, 96))
    tgt = rng.random((96, 96))
    singles = [predict_pspi(net, r, tgt, 0) for r in refs]
    assert abs(predict_pspi(net, refs, tgt, 0) - np.mean(singles)) < 1e-12
    const, _ = net(torch.zeros(1, 96, 96, dtype=torch.float64),
                   torch.zeros(1, 96, 96, dtype=torch.float64))
    assert predict_pspi(net, [tgt], tgt, 3) == float(const[0, 3])
