"""A small reverse-mode network core in float64 numpy.

Networks are stacks of dense layers. ``forward`` returns the output together
with a tape of cached activations; ``backward`` consumes that tape, adds
parameter gradients into the network's :class:`ParamGroup` when it is
trainable, and always returns the gradient with respect to the input so that
gradients can flow through frozen networks into trainable ones.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

BCE_EPS = 1e-7
LEAKY_SLOPE = 0.2


class TrainingDiverged(RuntimeError):
    """A loss became NaN or infinite."""


class ParamGroup:
    """Named tensors with gradient buffers and a trainable flag."""

    def __init__(self, name, values, trainable=True):
        self.name = name
        self.values = {k: np.asarray(v, dtype=np.float64) for k, v in values.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.values.items()}
        self.trainable = trainable

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self, name=None):
        return ParamGroup(name or self.name, {k: v.copy() for k, v in self.values.items()}, self.trainable)

    @property
    def n_params(self):
        return sum(v.size for v in self.values.values())

    def digest(self):
        h = hashlib.sha256()
        for k in sorted(self.values):
            v = np.ascontiguousarray(self.values[k])
            h.update(k.encode())
            h.update(str(v.shape).encode())
            h.update(v.tobytes())
        return h.hexdigest()

    def __repr__(self):
        return f"ParamGroup({self.name!r}, n_params={self.n_params}, trainable={self.trainable})"


def _act(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "sigmoid":
        return a * (1.0 - a)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Tape:
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)


class Network:
    """Dense layers ``sizes[k] -> sizes[k+1]``, each followed by ``activations[k]``."""

    def __init__(self, name, sizes, activations, seed=0, group=None):
        sizes = [int(s) for s in sizes]
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        self.sizes = sizes
        self.activations = list(activations)
        if group is None:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            values = {}
            for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                bound = 1.0 / np.sqrt(n_in)
                values[f"W{k}"] = rng.uniform(-bound, bound, size=(n_in, n_out))
                values[f"b{k}"] = rng.uniform(-bound, bound, size=n_out)
            group = ParamGroup(name, values)
        self.group = group
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if group.values[f"W{k}"].shape != (n_in, n_out) or group.values[f"b{k}"].shape != (n_out,):
                raise ValueError(f"parameter shapes of layer {k} do not match sizes")

    @property
    def name(self):
        return self.group.name

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def architecture(self):
        return {"sizes": self.sizes, "activations": self.activations}

    def copy(self, name):
        return Network(name, self.sizes, self.activations, group=self.group.copy(name))

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"{self.name}: input width {x.shape[1]} != {self.sizes[0]}")
        tape = Tape()
        a = x
        for k in range(self.n_layers):
            z = a @ self.group.values[f"W{k}"] + self.group.values[f"b{k}"]
            tape.inputs.append(a)
            tape.pre.append(z)
            a = _act(self.activations[k], z)
            tape.post.append(a)
        return a, tape

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape, grad_out):
        if tape is None or not tape.inputs:
            raise RuntimeError(f"{self.name}: backward called without a forward tape")
        g = np.asarray(grad_out, dtype=np.float64)
        for k in reversed(range(self.n_layers)):
            dz = g * _act_grad(self.activations[k], tape.pre[k], tape.post[k])
            if self.group.trainable:
                self.group.grads[f"W{k}"] += tape.inputs[k].T @ dz
                self.group.grads[f"b{k}"] += dz.sum(axis=0)
            g = dz @ self.group.values[f"W{k}"].T
        return g


# -- losses (means over every element) and their gradients

def mse(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def mse_grad(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch {a.shape} vs {b.shape}")
    return 2.0 * (a - b) / a.size


def bce(p, y):
    p = np.clip(np.asarray(p, float), BCE_EPS, 1.0 - BCE_EPS)
    y = np.broadcast_to(np.asarray(y, float), p.shape)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def bce_grad(p, y):
    p = np.asarray(p, float)
    y = np.broadcast_to(np.asarray(y, float), p.shape)
    inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return np.where(inside, (pc - y) / (pc * (1.0 - pc)), 0.0) / p.size


def l1(a, b):
    return float(np.mean(np.abs(np.asarray(a, float) - np.asarray(b, float))))


def l1_grad(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.sign(a - b) / a.size


# -- Adam with bias correction and decoupled weight decay

@dataclass
class AdamState:
    lr: float = 6e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, groups):
    """Update every trainable group from its gradients, then zero all gradients."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for group in groups:
        if group.trainable:
            for k, p in group.values.items():
                key = f"{group.name}/{k}"
                g = group.grads[k]
                m = state.m.setdefault(key, np.zeros_like(p))
                v = state.v.setdefault(key, np.zeros_like(p))
                m *= state.beta1
                m += (1.0 - state.beta1) * g
                v *= state.beta2
                v += (1.0 - state.beta2) * g * g
                update = (m / c1) / (np.sqrt(v / c2) + state.eps)
                if state.weight_decay:
                    update = update + state.weight_decay * p
                p -= state.lr * update
        group.zero_grad()


# -- finite-difference verification

def grad_check(loss_fn, groups, probe_count=10, h=3e-5, seed=0, floor=1e-6):
    """Largest relative error between backprop and central differences.

    ``loss_fn()`` must zero the gradients, run forward and backward, and
    return the scalar loss. ``probe_count`` entries of every tensor in every
    trainable group are probed. Errors are relative to
    ``max(|analytic|, |numeric|, floor)``.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError("h should lie in [1e-6, 1e-4]")
    rng = np.random.default_rng(seed)
    loss_fn()
    analytic = {(g.name, k): g.grads[k].copy() for g in groups if g.trainable for k in g.values}
    worst = 0.0
    for g in groups:
        if not g.trainable:
            continue
        for k, p in g.values.items():
            flat = p.reshape(-1)
            n = min(probe_count, flat.size)
            for idx in rng.choice(flat.size, size=n, replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                lp = loss_fn()
                flat[idx] = orig - h
                lm = loss_fn()
                flat[idx] = orig
                num = (lp - lm) / (2.0 * h)
                ana = analytic[(g.name, k)].reshape(-1)[idx]
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                worst = max(worst, err)
    loss_fn()
    return worst


# -- checkpoint files

CKPT_MAGIC = b"DSLRCKPT"
CKPT_VERSION = 1


def _put_str(buf, s):
    raw = s.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _get_str(view, off):
    (n,) = struct.unpack_from("<H", view, off)
    off += 2
    return bytes(view[off:off + n]).decode("utf-8"), off + n


def _put_array(buf, a):
    a = np.ascontiguousarray(a, dtype="<f8")
    buf.write(struct.pack("<I", a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(a.tobytes())


def _get_array(view, off):
    (ndim,) = struct.unpack_from("<I", view, off)
    off += 4
    shape = struct.unpack_from(f"<{ndim}I", view, off)
    off += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if off + 8 * count > len(view):
        raise struct.error("array runs past end of data")
    a = np.frombuffer(view, "<f8", count, off).reshape(shape).astype(np.float64)
    return a, off + 8 * count


def checkpoint_bytes(groups, adam: AdamState | None = None, meta=None) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_raw)))
    buf.write(meta_raw)
    buf.write(struct.pack("<I", len(groups)))
    for g in groups:
        _put_str(buf, g.name)
        buf.write(struct.pack("<BI", int(g.trainable), len(g.values)))
        for k in sorted(g.values):
            _put_str(buf, k)
            _put_array(buf, g.values[k])
    buf.write(struct.pack("<B", adam is not None))
    if adam is not None:
        buf.write(struct.pack("<5dQ", adam.lr, adam.beta1, adam.beta2, adam.eps, adam.weight_decay, adam.step))
        keys = sorted(adam.m)
        buf.write(struct.pack("<I", len(keys)))
        for key in keys:
            _put_str(buf, key)
            _put_array(buf, adam.m[key])
            _put_array(buf, adam.v[key])
    return buf.getvalue()


def checkpoint_from_bytes(raw: bytes, source="<bytes>"):
    """Return (dict of ParamGroup by name, AdamState or None, meta dict)."""
    try:
        return _parse_checkpoint(memoryview(raw), source)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{source}: truncated or corrupt checkpoint ({exc})") from None


def _parse_checkpoint(view, source):
    raw = view
    if bytes(view[:8]) != CKPT_MAGIC:
        raise ValueError(f"{source}: not a DSLRCKPT checkpoint")
    (version,) = struct.unpack_from("<I", view, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{source}: unsupported checkpoint version {version}")
    off = 12
    (n,) = struct.unpack_from("<I", view, off)
    off += 4
    meta = json.loads(bytes(view[off:off + n]).decode("utf-8"))
    off += n
    (n_groups,) = struct.unpack_from("<I", view, off)
    off += 4
    groups = {}
    for _ in range(n_groups):
        name, off = _get_str(view, off)
        trainable, n_t = struct.unpack_from("<BI", view, off)
        off += 5
        values = {}
        for _ in range(n_t):
            k, off = _get_str(view, off)
            values[k], off = _get_array(view, off)
        groups[name] = ParamGroup(name, values, bool(trainable))
    (has_adam,) = struct.unpack_from("<B", view, off)
    off += 1
    adam = None
    if has_adam:
        lr, b1, b2, eps, wd, step = struct.unpack_from("<5dQ", view, off)
        off += 48
        adam = AdamState(lr, b1, b2, eps, wd, step)
        (n_keys,) = struct.unpack_from("<I", view, off)
        off += 4
        for _ in range(n_keys):
            key, off = _get_str(view, off)
            adam.m[key], off = _get_array(view, off)
            adam.v[key], off = _get_array(view, off)
    if off != len(raw):
        raise ValueError(f"{source}: {len(raw) - off} trailing bytes")
    return groups, adam, meta
