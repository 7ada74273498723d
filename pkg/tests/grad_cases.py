"""Finite-difference cases for every differentiable operation of the model.

Each case is (name, fn, tensors): fn() returns a scalar built from the
operation, and gradients are checked w.r.t. every tensor listed.
"""
import torch
import torch.nn.functional as F

from painpair.contrastive import contrastive_loss
from painpair.model import PairwiseNet, masked_mse_loss

D = torch.float64


def _leaf(gen, *shape, scale=1.0, away_from_zero=0.0):
    x = torch.randn(*shape, generator=gen, dtype=D) * scale
    if away_from_zero:
        x = x + torch.sign(x) * away_from_zero
    return x.requires_grad_()


def tiny_net(batchnorm="affine", seed=0):
    return PairwiseNet(n_heads=4, feature_dim=6, channels=(2, 3, 4, 5), in_size=16,
                       dropout_p=0.0, batchnorm=batchnorm, seed=seed, dtype=D)


def cases(seed=0):
    g = torch.Generator().manual_seed(seed)
    net = tiny_net(seed=seed)
    bnet = tiny_net("batch", seed=seed)
    out = []

    ref, tgt = _leaf(g, 2, 1, 16, 16), _leaf(g, 2, 1, 16, 16)
    proj = torch.randn(2, 2, 16, 16, generator=g, dtype=D)
    out.append(("conv0 difference map",
                lambda proj=proj: (net.difference_map(ref, tgt) * proj).sum(), [net.conv0, ref, tgt]))

    x = _leaf(g, 2, 2, 8, 8)
    w = net.block_w[0]
    proj = torch.randn(2, 3, 8, 8, generator=g, dtype=D)
    out.append(("block conv", lambda proj=proj: (F.conv2d(x, w, padding=1) * proj).sum(), [x, w]))

    xb = _leaf(g, 3, 3, 4, 4)
    with torch.no_grad():
        net.bn_scale[0].normal_(generator=g)
        net.bn_shift[0].normal_(generator=g)
        bnet.bn_scale[0].copy_(net.bn_scale[0])
        bnet.bn_shift[0].copy_(net.bn_shift[0])
    proj = torch.randn(3, 3, 4, 4, generator=g, dtype=D)
    out.append(("affine batchnorm",
                lambda proj=proj: (net._norm(xb, 1, True, False) * proj).sum(),
                [xb, net.bn_scale[0], net.bn_shift[0]]))
    out.append(("batch-statistics batchnorm",
                lambda proj=proj: (bnet._norm(xb, 1, True, False) * proj).sum(),
                [xb, bnet.bn_scale[0], bnet.bn_shift[0]]))

    xr = _leaf(g, 4, 5, away_from_zero=0.05)
    proj = torch.randn(4, 5, generator=g, dtype=D)
    out.append(("relu", lambda proj=proj: (F.relu(xr) * proj).sum(), [xr]))

    xm = _leaf(g, 2, 3, 6, 6)
    proj = torch.randn(2, 3, 3, 3, generator=g, dtype=D)
    out.append(("maxpool", lambda proj=proj: (F.max_pool2d(xm, 2) * proj).sum(), [xm]))

    xf = _leaf(g, 3, 20)
    proj = torch.randn(3, 4, generator=g, dtype=D)
    out.append(("fully connected",
                lambda proj=proj: ((F.relu(xf @ net.fc1_w.T + net.fc1_b) @ net.w_fc
                                  + net.b_fc) * proj).sum(),
                [xf, net.fc1_w, net.fc1_b, net.w_fc, net.b_fc]))

    o, d = _leaf(g, 5, 4), _leaf(g, 5, 4)
    m = (torch.rand(5, 4, generator=g) < 0.6).to(D)
    out.append(("masked mse", lambda: masked_mse_loss(o, d, m)[0], [o, d]))

    fi, fo, wc = _leaf(g, 3, 6), _leaf(g, 3, 6), _leaf(g, 6, 4)
    out.append(("contrastive loss", lambda: contrastive_loss(fi, fo, wc), [fi, fo, wc]))

    r2, t2 = torch.rand(3, 16, 16, generator=g, dtype=D), torch.rand(3, 16, 16, generator=g, dtype=D)
    deltas = torch.randn(3, 4, generator=g, dtype=D)
    masks = torch.ones(3, 4, dtype=D)
    for name, model in (("network (affine bn)", tiny_net(seed=seed + 1)),
                        ("network (batch bn)", tiny_net("batch", seed=seed + 1))):
        def full(model=model):
            outputs, feats = model(r2, t2, train=True, update_stats=False)
            return masked_mse_loss(outputs, deltas, masks)[0] + 0.05 * contrastive_loss(
                feats, feats.flip(0), model.w_fc)
        out.append((name, full, list(model.parameters())))
    return out
