"""No-reference scan quality: a regressor that predicts the standard deviation
of Gaussian range noise present in a normalized range image.

Every 7x5 patch (wrapping around in azimuth) is projected onto 50 learned
features; each feature map is reduced to its maximum and minimum, and a small
dense head maps those 100 numbers to the noise estimate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import nn
from .scan import RangeImage, to_vector

_FLOOR = float(np.finfo(np.float32).eps)


@dataclass
class LqiConfig:
    kernel: tuple = (7, 5)
    features: int = 50
    hidden: int = 64
    epochs: int = 9
    batch_size: int = 16
    lr: float = 1e-2
    lr_decay: float = 0.5
    decay_every: int = 3
    sigma_max: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.kernel = tuple(int(k) for k in self.kernel)
        if len(self.kernel) != 2 or min(self.kernel) < 1 or self.kernel[1] % 2 == 0:
            raise ValueError("kernel must be (rows, odd columns)")
        if self.sigma_max <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid quality-model settings")

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = list(self.kernel)
        return d


class LqiModel:
    def __init__(self, cfg: LqiConfig, height: int, width: int, feat=None, head=None):
        if cfg.kernel[0] > height:
            raise ValueError(f"kernel height {cfg.kernel[0]} exceeds grid height {height}")
        self.cfg, self.height, self.width = cfg, height, width
        rng = np.random.default_rng([cfg.seed, 0])
        kh, kw = cfg.kernel
        self.feat = feat or nn.Network("lqi_feat", [kh * kw, cfg.features], ["identity"], rng)
        self.head = head or nn.Network("lqi_head", [2 * cfg.features, cfg.hidden, 1], ["relu", "identity"], rng)

    def groups(self):
        return [self.feat.group, self.head.group]

    def patches(self, x):
        x = np.asarray(x, float).reshape(-1, self.height, self.width)
        pad = self.cfg.kernel[1] // 2
        if pad:
            x = np.concatenate([x[:, :, -pad:], x, x[:, :, :pad]], axis=2)
        win = sliding_window_view(x, self.cfg.kernel, axis=(1, 2))
        return win.reshape(len(x), -1, self.cfg.kernel[0] * self.cfg.kernel[1])

    def forward(self, x):
        p = self.patches(x)
        B, P, K = p.shape
        f, t_feat = self.feat.forward(p.reshape(B * P, K))
        f = f.reshape(B, P, -1)
        i_max = f.argmax(axis=1)
        i_min = f.argmin(axis=1)
        pooled = np.hstack([np.take_along_axis(f, i_max[:, None, :], 1)[:, 0],
                            np.take_along_axis(f, i_min[:, None, :], 1)[:, 0]])
        out, t_head = self.head.forward(pooled)
        return out[:, 0], (t_feat, t_head, i_max, i_min, f.shape)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        t_feat, t_head, i_max, i_min, shape = cache
        g = self.head.backward(t_head, np.asarray(grad_out, float)[:, None])
        F = shape[2]
        gf = np.zeros(shape)
        rows = np.arange(shape[0])[:, None]
        cols = np.arange(F)[None, :]
        gf[rows, i_max, cols] += g[:, :F]
        gf[rows, i_min, cols] += g[:, F:]
        self.feat.backward(t_feat, gf.reshape(-1, F))


def noisy_vectors(x, occupied, sigmas, rng):
    """Add N(0, sigma_k^2) to row k of normalized range vectors, clamp, keep occupancy."""
    x = np.asarray(x, float)
    noise = rng.normal(size=x.shape) * np.asarray(sigmas, float)[:, None]
    return np.where(occupied, np.clip(x + noise, _FLOOR, 1.0), 0.0)


def _vectors(scans):
    if len(scans) == 0:
        raise ValueError("quality model needs at least one scan")
    x = np.array([to_vector(s) for s in scans])
    occ = np.array([s.occupied.reshape(-1) for s in scans])
    return x, occ


def train_lqi(scans, cfg: LqiConfig = LqiConfig(), history=None) -> LqiModel:
    """Fit on clean range images with noise levels drawn uniformly in [0, sigma_max].

    Each scan in a minibatch gets its own noise level. The learning rate
    is multiplied by ``lr_decay`` after every ``decay_every`` epochs.
    """
    x, occ = _vectors(scans)
    spec = scans[0].spec
    model = LqiModel(cfg, *spec.shape)
    rng = np.random.default_rng([cfg.seed, 5])
    opt = nn.AdamState(lr=cfg.lr)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.decay_every)
        order = rng.permutation(len(x))
        total, steps = 0.0, 0
        for k in range(0, len(x), cfg.batch_size):
            idx = order[k:k + cfg.batch_size]
            sig = rng.uniform(0.0, cfg.sigma_max, size=len(idx))
            xb = noisy_vectors(x[idx], occ[idx], sig, rng)
            pred, cache = model.forward(xb)
            loss = nn.l1(pred, sig)
            if not np.isfinite(loss):
                raise nn.TrainingDiverged(f"lqi: loss became {loss} in epoch {epoch}")
            model.backward(cache, nn.l1_grad(pred, sig))
            nn.adam_step(opt, model.groups())
            total += loss
            steps += 1
        if history is not None:
            history.append({"phase": "lqi", "epoch": epoch, "loss": total / steps, "lr": opt.lr})
    return model


def lqi_score(model: LqiModel, scan) -> float:
    """Predicted noise standard deviation (normalized range units); lower is cleaner."""
    if isinstance(scan, RangeImage):
        if scan.shape != (model.height, model.width):
            raise ValueError(f"scan grid {scan.shape} does not match the model grid")
        scan = to_vector(scan)
    return float(model(np.asarray(scan, float)[None, :])[0])


def lqi_scores(model: LqiModel, scans, batch=64):
    x = np.array([to_vector(s) if isinstance(s, RangeImage) else s for s in scans], float)
    return np.concatenate([model(x[k:k + batch]) for k in range(0, len(x), batch)]) if len(x) else np.empty(0)


def lqi_to_bytes(model: LqiModel) -> bytes:
    meta = {"kind": "lqi", "config": model.cfg.to_dict(), "grid": [model.height, model.width]}
    return nn.checkpoint_bytes(model.groups(), None, meta)


def lqi_from_bytes(raw: bytes, source="<bytes>") -> LqiModel:
    groups, _, meta = nn.checkpoint_from_bytes(raw, source)
    if meta.get("kind") != "lqi":
        raise ValueError(f"{source}: not a quality-model checkpoint")
    cfg = LqiConfig(**meta["config"])
    kh, kw = cfg.kernel
    feat = nn.Network("lqi_feat", [kh * kw, cfg.features], ["identity"], group=groups["lqi_feat"])
    head = nn.Network("lqi_head", [2 * cfg.features, cfg.hidden, 1], ["relu", "identity"], group=groups["lqi_head"])
    return LqiModel(cfg, *meta["grid"], feat=feat, head=head)
