"""Dynamic-to-static reconstruction: autoencoder, pair discriminator,
adversarial mapping of dynamic latents, domain adaptation and inference.

Training runs in a fixed order of phases, each with its own optimizer:

``ae``   autoencoder G = (phi, theta) on every static and dynamic scan
``di``   discriminator gamma jointly with G under the dual loss
``adv``  G is duplicated into G1 and G2; only the dynamic encoder phi2 trains
``uda``  phi2 is adapted to unpaired target-domain dynamic scans
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from .nn import TrainingDiverged  # noqa: F401  re-exported
from .metrics import KernelSpec, median_bandwidth, mmd2, mmd2_grad
from .scan import blend, from_vector, to_vector

PHASES = ("init", "ae", "di", "adv", "uda")
PHASE_PREREQUISITES = {"ae": ("init",), "di": ("ae",), "adv": ("di",), "uda": ("adv", "uda")}
# adversarial and adaptation phases draw minibatches from the same stream
_STREAM = {"ae": 1, "di": 2, "adv": 3, "uda": 3, "target": 4, "lqi": 5, "split": 6}


class PhaseOrderError(ValueError):
    pass


@dataclass
class DslrConfig:
    height: int = 16
    width: int = 64
    bottleneck: int = 16
    enc_hidden: tuple = (256,)
    dec_hidden: tuple = (256,)
    disc_hidden: tuple = (64,)
    alpha: float = 10.0
    lam: float = 0.01
    target_weight: float = 1.0  # scales the target-as-static adversarial term in uda
    epochs_ae: int = 40
    epochs_di: int = 20
    epochs_adv: int = 150
    epochs_uda: int = 10
    batch_size: int = 8
    lr: float = 6e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self):
        self.enc_hidden = tuple(int(v) for v in self.enc_hidden)
        self.dec_hidden = tuple(int(v) for v in self.dec_hidden)
        self.disc_hidden = tuple(int(v) for v in self.disc_hidden)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.lam < 0 or self.target_weight < 0:
            raise ValueError("lam and target_weight must be non-negative")
        if not 0 < self.bottleneck < self.height * self.width:
            raise ValueError("bottleneck must lie in (0, H*W)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for f in ("epochs_ae", "epochs_di", "epochs_adv", "epochs_uda"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")

    @property
    def n_inputs(self):
        return self.height * self.width

    def to_dict(self):
        d = asdict(self)
        for k in ("enc_hidden", "dec_hidden", "disc_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model settings: {sorted(unknown)}")
        return cls(**d)


def _encoder(cfg, name, seed):
    sizes = [cfg.n_inputs, *cfg.enc_hidden, cfg.bottleneck]
    acts = ["leaky_relu"] * len(cfg.enc_hidden) + ["identity"]
    return nn.Network(name, sizes, acts, seed)


def _decoder(cfg, name, seed):
    sizes = [cfg.bottleneck, *cfg.dec_hidden, cfg.n_inputs]
    acts = ["relu"] * len(cfg.dec_hidden) + ["sigmoid"]
    return nn.Network(name, sizes, acts, seed)


def _discriminator(cfg, name, seed):
    sizes = [2 * cfg.bottleneck, *cfg.disc_hidden, 1]
    acts = ["leaky_relu"] * len(cfg.disc_hidden) + ["sigmoid"]
    return nn.Network(name, sizes, acts, seed)


@dataclass
class DslrState:
    cfg: DslrConfig
    enc1: nn.Network
    dec1: nn.Network
    disc: nn.Network
    enc2: nn.Network | None = None
    dec2: nn.Network | None = None
    phase: str = "init"
    history: list = field(default_factory=list)
    optimizer: nn.AdamState | None = None

    @classmethod
    def create(cls, cfg: DslrConfig):
        rng = np.random.default_rng([cfg.seed, 0])
        return cls(cfg, _encoder(cfg, "phi", rng), _decoder(cfg, "theta", rng), _discriminator(cfg, "gamma", rng))

    def networks(self):
        nets = [self.enc1, self.dec1, self.disc]
        if self.enc2 is not None:
            nets += [self.enc2, self.dec2]
        return nets

    def groups(self):
        return [n.group for n in self.networks()]

    def digests(self):
        return {g.name: g.digest() for g in self.groups()}

    def inference_pair(self):
        """(encoder, decoder) used for reconstruction in the current phase."""
        if self.enc2 is not None:
            return self.enc2, self.dec2
        return self.enc1, self.dec1

    def set_trainable(self, names):
        for g in self.groups():
            g.trainable = g.name in names
            g.zero_grad()


def _require(state, phase):
    if state.phase not in PHASE_PREREQUISITES[phase]:
        raise PhaseOrderError(f"phase {phase!r} needs a state after {'/'.join(PHASE_PREREQUISITES[phase])}, "
                              f"got {state.phase!r}")


def _check_finite(value, phase, epoch):
    if not np.isfinite(value):
        raise nn.TrainingDiverged(f"{phase}: loss became {value} in epoch {epoch}")


def _adam(cfg):
    return nn.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[k:k + batch_size] for k in range(0, n, batch_size)]


def _as_matrix(vectors, cfg, what):
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"{what}: need a non-empty (N, {cfg.n_inputs}) array")
    if x.shape[1] != cfg.n_inputs:
        raise ValueError(f"{what}: vectors of length {x.shape[1]}, grid expects {cfg.n_inputs}")
    return x


def _record(state, phase, epoch, terms, steps, frozen):
    row = {"phase": phase, "epoch": epoch}
    row.update({k: v / max(steps, 1) for k, v in terms.items()})
    row["frozen_digest"] = frozen
    state.history.append(row)
    return row


def _frozen_digest(state):
    h = hashlib.sha256()
    for g in state.groups():
        if not g.trainable:
            h.update(g.name.encode())
            h.update(g.digest().encode())
    return h.hexdigest()


# -- phase 1: autoencoder

def ae_loss_and_grad(state: DslrState, x):
    """MSE(D(E(x)), x); gradients are added to the trainable groups."""
    z, t_enc = state.enc1.forward(x)
    out, t_dec = state.dec1.forward(z)
    state.enc1.backward(t_enc, state.dec1.backward(t_dec, nn.mse_grad(out, x)))
    return nn.mse(out, x)


def train_autoencoder(state: DslrState, vectors, epochs=None, callback=None):
    """Self-reconstruction with a mean squared error on every training scan."""
    _require(state, "ae")
    cfg = state.cfg
    x = _as_matrix(vectors, cfg, "train_autoencoder")
    epochs = cfg.epochs_ae if epochs is None else epochs
    rng = np.random.default_rng([cfg.seed, _STREAM["ae"]])
    state.set_trainable({"phi", "theta"})
    opt = _adam(cfg)
    for epoch in range(epochs):
        total, steps = 0.0, 0
        for idx in _batches(len(x), cfg.batch_size, rng):
            loss = ae_loss_and_grad(state, x[idx])
            _check_finite(loss, "ae", epoch)
            nn.adam_step(opt, state.groups())
            total += loss
            steps += 1
        _record(state, "ae", epoch, {"loss": total, "mse": total}, steps, _frozen_digest(state))
        if callback:
            callback("ae", epoch, state)
    state.phase, state.optimizer = "ae", opt
    return state


# -- phase 2: pair discriminator with the dual loss

def di_loss_and_grad(state: DslrState, xa, xb, target):
    """Dual loss alpha * BCE(DI(r(xa), r(xb)), target) + reconstruction MSE.

    The reconstruction term covers both scans when the target is 1 and the
    second (dynamic) scan when it is 0, following the two updates of the
    discriminator procedure.
    """
    cfg = state.cfg
    enc, dec, disc = state.enc1, state.dec1, state.disc
    za, ta = enc.forward(xa)
    zb, tb = enc.forward(xb)
    p, td = disc.forward(np.hstack([za, zb]))
    y = np.full_like(p, float(target))
    bce = nn.bce(p, y)
    gz = disc.backward(td, cfg.alpha * nn.bce_grad(p, y))
    k = cfg.bottleneck
    ga, gb = gz[:, :k], gz[:, k:]
    recon = 0.0
    to_rebuild = [(xa, za, ta, ga), (xb, zb, tb, gb)] if target == 1 else [(xb, zb, tb, gb)]
    if target == 0:
        enc.backward(ta, ga)
    for x, z, tz, gz_part in to_rebuild:
        out, tdec = dec.forward(z)
        recon += nn.mse(out, x)
        enc.backward(tz, gz_part + dec.backward(tdec, nn.mse_grad(out, x)))
    return cfg.alpha * bce + recon, bce, recon


def train_discriminator(state: DslrState, static_vectors, dynamic_vectors, epochs=None, callback=None):
    """Train gamma to output 1 for (static, static) and 0 for (static, dynamic)
    latent pairs while fine-tuning G; row k of both arrays is one pair."""
    _require(state, "di")
    cfg = state.cfg
    s = _as_matrix(static_vectors, cfg, "train_discriminator")
    d = _as_matrix(dynamic_vectors, cfg, "train_discriminator")
    if len(s) != len(d):
        raise ValueError("static and dynamic arrays must be paired row by row")
    epochs = cfg.epochs_di if epochs is None else epochs
    rng = np.random.default_rng([cfg.seed, _STREAM["di"]])
    state.set_trainable({"phi", "theta", "gamma"})
    opt = _adam(cfg)
    for epoch in range(epochs):
        terms = {"loss": 0.0, "bce_ss": 0.0, "bce_sd": 0.0, "mse": 0.0}
        steps = 0
        for i in _batches(len(s), cfg.batch_size, rng):
            j = rng.integers(0, len(s), size=len(i))
            # DI is order-agnostic on (static, static): swap half the rows
            swap = rng.random(len(i)) < 0.5
            first = np.where(swap[:, None], s[j], s[i])
            second = np.where(swap[:, None], s[i], s[j])
            l1, b1, r1 = di_loss_and_grad(state, first, second, 1)
            nn.adam_step(opt, state.groups())
            l0, b0, r0 = di_loss_and_grad(state, s[i], d[j], 0)
            nn.adam_step(opt, state.groups())
            _check_finite(l1 + l0, "di", epoch)
            terms["loss"] += l1 + l0
            terms["bce_ss"] += b1
            terms["bce_sd"] += b0
            terms["mse"] += r1 + r0
            steps += 1
        _record(state, "di", epoch, terms, steps, _frozen_digest(state))
        if callback:
            callback("di", epoch, state)
    state.phase, state.optimizer = "di", opt
    return state


def discriminator_accuracy(state: DslrState, static_vectors, dynamic_vectors, seed=0):
    """Accuracy on balanced (static, static) -> 1 and (static, dynamic) -> 0 pairs.

    Each row k contributes one positive pair (s_k, s_j) and one negative pair
    (s_k, d_j) for a random partner j, using the G1 encoder.
    """
    s = np.asarray(static_vectors, float)
    d = np.asarray(dynamic_vectors, float)
    rng = np.random.default_rng(seed)
    j = rng.integers(0, len(s), size=len(s))
    zs = state.enc1(s)
    zd = state.enc1(d)
    pos = state.disc(np.hstack([zs, zs[j]]))[:, 0]
    neg = state.disc(np.hstack([zs, zd[j]]))[:, 0]
    return float((np.sum(pos > 0.5) + np.sum(neg <= 0.5)) / (2 * len(s)))


# -- phase 3: adversarial mapping of dynamic latents

def start_adversarial(state: DslrState):
    """Rename G to G1 and deep-copy it into G2."""
    if state.enc2 is None:
        state.enc1.group.name = "phi1"
        state.dec1.group.name = "theta1"
        state.enc2 = state.enc1.copy("phi2")
        state.dec2 = state.dec1.copy("theta2")
    return state


def adv_loss_and_grad(state: DslrState, s, d):
    """alpha * BCE(DI(r1(s), r2(d)), 1) + MSE(D2(r2(d)), s).

    The discriminator target is 1 although the pair is (static, dynamic).
    Returns (loss, bce, mse); gradients reach only trainable groups.
    """
    cfg = state.cfg
    z1 = state.enc1(s)
    z2, t2 = state.enc2.forward(d)
    p, td = state.disc.forward(np.hstack([z1, z2]))
    y = np.ones_like(p)
    bce = nn.bce(p, y)
    g_z2 = state.disc.backward(td, cfg.alpha * nn.bce_grad(p, y))[:, cfg.bottleneck:]
    out, tdec = state.dec2.forward(z2)
    mse = nn.mse(out, s)
    g_z2 = g_z2 + state.dec2.backward(tdec, nn.mse_grad(out, s))
    state.enc2.backward(t2, g_z2)
    return cfg.alpha * bce + mse, bce, mse


def train_adversarial(state: DslrState, static_vectors, dynamic_vectors, epochs=None, callback=None):
    """Only phi2 trains; phi1, theta1, theta2 and gamma stay bitwise fixed."""
    _require(state, "adv")
    cfg = state.cfg
    s = _as_matrix(static_vectors, cfg, "train_adversarial")
    d = _as_matrix(dynamic_vectors, cfg, "train_adversarial")
    if len(s) != len(d):
        raise ValueError("static and dynamic arrays must be paired row by row")
    epochs = cfg.epochs_adv if epochs is None else epochs
    start_adversarial(state)
    state.set_trainable({"phi2"})
    rng = np.random.default_rng([cfg.seed, _STREAM["adv"]])
    opt = _adam(cfg)
    for epoch in range(epochs):
        terms = {"loss": 0.0, "bce_adv": 0.0, "mse": 0.0}
        steps = 0
        for idx in _batches(len(s), cfg.batch_size, rng):
            loss, bce, mse = adv_loss_and_grad(state, s[idx], d[idx])
            _check_finite(loss, "adv", epoch)
            nn.adam_step(opt, state.groups())
            terms["loss"] += loss
            terms["bce_adv"] += bce
            terms["mse"] += mse
            steps += 1
        _record(state, "adv", epoch, terms, steps, _frozen_digest(state))
        if callback:
            callback("adv", epoch, state)
    state.phase, state.optimizer = "adv", opt
    return state


# -- phase 4: unsupervised domain adaptation

def uda_loss_and_grad(state: DslrState, s, d, k, sigma=None):
    """Adversarial loss on the source pair (s, d), plus lam * MMD^2 between
    r2(d) and r2(k), plus target_weight * alpha * BCE(DI(r1(s), r2(k)), 1).

    The MMD bandwidth defaults to the median heuristic on the current batch
    and is treated as a constant for differentiation.
    """
    cfg = state.cfg
    loss, bce, mse = adv_loss_and_grad(state, s, d)
    parts = {"bce_adv": bce, "mse": mse, "mmd2": 0.0, "bce_target": 0.0}
    if cfg.lam > 0:
        z_src, t_src = state.enc2.forward(d)
        z_tgt, t_tgt = state.enc2.forward(k)
        if sigma is None:
            sigma = median_bandwidth(z_src, z_tgt)
        m2 = mmd2(z_src, z_tgt, KernelSpec(sigma))
        g_src, g_tgt = mmd2_grad(z_src, z_tgt, sigma)
        state.enc2.backward(t_src, cfg.lam * g_src)
        state.enc2.backward(t_tgt, cfg.lam * g_tgt)
        loss += cfg.lam * m2
        parts["mmd2"] = m2
    if cfg.target_weight > 0:
        z1 = state.enc1(s)
        zt, tt = state.enc2.forward(k)
        p, td = state.disc.forward(np.hstack([z1, zt]))
        y = np.ones_like(p)
        b = nn.bce(p, y)
        g = state.disc.backward(td, cfg.target_weight * cfg.alpha * nn.bce_grad(p, y))
        state.enc2.backward(tt, g[:, cfg.bottleneck:])
        loss += cfg.target_weight * cfg.alpha * b
        parts["bce_target"] = b
    return loss, parts


def train_uda(state: DslrState, static_vectors, dynamic_vectors, target_vectors, epochs=None, callback=None):
    """Adversarial objective plus lam * MMD^2 between source-dynamic and
    target-dynamic latents, plus an adversarial term that pushes
    (static source, dynamic target) latent pairs toward DI = 1."""
    _require(state, "uda")
    cfg = state.cfg
    s = _as_matrix(static_vectors, cfg, "train_uda")
    d = _as_matrix(dynamic_vectors, cfg, "train_uda")
    k = _as_matrix(target_vectors, cfg, "train_uda target set")
    if len(s) != len(d):
        raise ValueError("static and dynamic arrays must be paired row by row")
    epochs = cfg.epochs_uda if epochs is None else epochs
    state.set_trainable({"phi2"})
    rng = np.random.default_rng([cfg.seed, _STREAM["uda"]])
    rng_t = np.random.default_rng([cfg.seed, _STREAM["target"]])
    opt = _adam(cfg)
    for epoch in range(epochs):
        terms = {"loss": 0.0, "bce_adv": 0.0, "mse": 0.0, "mmd2": 0.0, "bce_target": 0.0}
        steps = 0
        for idx in _batches(len(s), cfg.batch_size, rng):
            kt = k[rng_t.integers(0, len(k), size=len(idx))]
            loss, parts = uda_loss_and_grad(state, s[idx], d[idx], kt)
            for name, v in parts.items():
                terms[name] += v
            _check_finite(loss, "uda", epoch)
            nn.adam_step(opt, state.groups())
            terms["loss"] += loss
            steps += 1
        _record(state, "uda", epoch, terms, steps, _frozen_digest(state))
        if callback:
            callback("uda", epoch, state)
    state.phase, state.optimizer = "uda", opt
    return state


# -- inference

def latents(state: DslrState, vectors, branch=2):
    """Latent codes from the dynamic-branch encoder (branch 2) or G1 (branch 1)."""
    enc = state.enc1 if branch == 1 or state.enc2 is None else state.enc2
    return enc(np.asarray(vectors, float))


def reconstruct_vectors(state: DslrState, vectors):
    enc, dec = state.inference_pair()
    return np.clip(dec(enc(np.asarray(vectors, float))), 0.0, 1.0)


def reconstruct(scan, state: DslrState):
    """Static range image predicted from a dynamic one; occupancy follows the input."""
    if scan.shape != (state.cfg.height, state.cfg.width):
        raise ValueError(f"scan grid {scan.shape} does not match the model grid "
                         f"{(state.cfg.height, state.cfg.width)}")
    out = reconstruct_vectors(state, to_vector(scan)[None, :])[0]
    return from_vector(out, scan.spec, scan.occupied)


def dslr_seg(scan, mask, state: DslrState):
    """Reconstruction in cells marked dynamic, the input everywhere else."""
    mask = np.asarray(mask, bool)
    if mask.shape != scan.shape:
        raise ValueError(f"mask shape {mask.shape} does not match scan {scan.shape}")
    return blend(mask, reconstruct(scan, state), scan)


# -- persistence

def state_to_bytes(state: DslrState) -> bytes:
    meta = {
        "kind": "dslr",
        "phase": state.phase,
        "config": state.cfg.to_dict(),
        "architectures": {n.name: n.architecture() for n in state.networks()},
        "history": state.history,
    }
    return nn.checkpoint_bytes(state.groups(), state.optimizer, meta)


def state_from_bytes(raw: bytes, source="<bytes>") -> DslrState:
    groups, opt, meta = nn.checkpoint_from_bytes(raw, source)
    if meta.get("kind") != "dslr":
        raise ValueError(f"{source}: not a reconstruction-model checkpoint")
    cfg = DslrConfig.from_dict(meta["config"])
    nets = {name: nn.Network(name, a["sizes"], a["activations"], group=groups[name])
            for name, a in meta["architectures"].items()}
    if "phi2" in nets:
        st = DslrState(cfg, nets["phi1"], nets["theta1"], nets["gamma"], nets["phi2"], nets["theta2"])
    else:
        st = DslrState(cfg, nets["phi"], nets["theta"], nets["gamma"])
    st.phase = meta["phase"]
    st.history = meta["history"]
    st.optimizer = opt
    return st


def history_csv(history) -> str:
    keys = ["phase", "epoch", "loss"]
    extra = sorted({k for row in history for k in row} - set(keys) - {"frozen_digest"})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    tail = ["frozen_digest"] if any("frozen_digest" in row for row in history) else []
    w.writerow(keys + extra + tail)
    for row in history:
        vals = [row.get(k, "") for k in keys + extra + tail]
        w.writerow([repr(v) if isinstance(v, float) else v for v in vals])
    return buf.getvalue()


def config_json(cfg: DslrConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
