"""Small fully-connected nets on numpy.

Forward/backward passes written out by hand (exact reverse-mode gradients,
64-bit floats throughout), a decoupled-weight-decay Adam optimizer, a step
learning-rate schedule, and a flat binary checkpoint format. Hidden layers
use the rectifier; the final layer is affine.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError, InvalidDimensions, NumericalError
from .seeding import rng_from

CHECKPOINT_MAGIC = b"UKMLP001"


@dataclass
class Mlp:
    dims: tuple[int, ...]
    weights: list  # per layer, (fan_in, fan_out) float64
    biases: list   # per layer, (fan_out,) float64

    def __post_init__(self):
        if len(self.dims) < 2:
            raise InvalidDimensions(f"need at least 2 dims, got {self.dims}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.dims[i], self.dims[i + 1])
            if w.shape != want or b.shape != (self.dims[i + 1],):
                raise InvalidDimensions(
                    f"layer {i}: weight {w.shape} bias {b.shape}, expected {want}")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 10
    max_epochs: int = 30
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidDimensions(f"lr must be positive, got {self.lr}")
        if not 0 < self.decay_factor <= 1:
            raise InvalidDimensions(
                f"decay factor must be in (0, 1], got {self.decay_factor}")


@dataclass
class AdamWState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], step=0)


def init_mlp(dims, seed=0):
    """Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    rng = rng_from(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return Mlp(dims=tuple(int(d) for d in dims), weights=weights, biases=biases)


def mlp_params(net):
    """Flat parameter list in checkpoint order: W0, b0, W1, b1, ..."""
    out = []
    for w, b in zip(net.weights, net.biases):
        out.append(w)
        out.append(b)
    return out


def _forward_cached(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.dims[0]:
        raise InvalidDimensions(
            f"input shape {x.shape} incompatible with input dim {net.dims[0]}")
    acts = [x]
    pre = []
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, pre


def mlp_forward(net, x):
    """Batch forward pass; x is (n, input_dim), result is (n, output_dim)."""
    acts, _ = _forward_cached(net, x)
    return acts[-1]


def mlp_backward(net, x, upstream):
    """Gradients of sum(upstream * forward(x)) w.r.t. parameters and input.

    Returns (grads, grad_x) with grads ordered like mlp_params. The rectifier
    uses a zero subgradient at exactly zero.
    """
    acts, pre = _forward_cached(net, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != acts[-1].shape:
        raise InvalidDimensions(
            f"upstream shape {upstream.shape}, expected {acts[-1].shape}")
    grads = [None] * (2 * len(net.weights))
    d = upstream
    for i in range(len(net.weights) - 1, -1, -1):
        if i != len(net.weights) - 1:
            d = d * (pre[i] > 0.0)
        grads[2 * i] = acts[i].T @ d
        grads[2 * i + 1] = d.sum(axis=0)
        d = d @ net.weights[i].T
    return grads, d


def adamw_step(state, params, grads, cfg, lr):
    """One decoupled-weight-decay Adam update, in place on the params.

    theta <- theta - lr*wd*theta - lr * m_hat / (sqrt(v_hat) + 1e-8),
    with bias-corrected first/second moments.
    """
    eps = 1e-8
    if state.step == 0 and not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient in optimizer step")
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p -= lr * cfg.weight_decay * p + update
    return state


def lr_at_epoch(cfg, epoch):
    """Step schedule: initial lr scaled by decay_factor every decay_every."""
    return cfg.lr * cfg.decay_factor ** (epoch // cfg.decay_every)


def minibatches(n, batch_size, rng):
    """Yield shuffled index batches covering range(n) once."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def save_mlp(path, net, cfg=None):
    """Write a checkpoint: magic, dim count, dims, then parameters row-major.

    A JSON sidecar (same path plus .json) records the training config when
    one is supplied.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        header = np.asarray([len(net.dims), *net.dims], dtype=np.int64)
        fh.write(header.tobytes())
        for p in mlp_params(net):
            fh.write(np.ascontiguousarray(p, dtype=np.float64).tobytes())
    if cfg is not None:
        sidecar = path.with_name(path.name + ".json")
        sidecar.write_text(json.dumps(asdict(cfg), sort_keys=True, indent=2)
                           + "\n")
    return path


def load_mlp(path):
    """Read a checkpoint written by save_mlp."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:8] != CHECKPOINT_MAGIC:
        raise DatasetError(f"bad checkpoint magic in {path}")
    off = 8
    (n_dims,) = np.frombuffer(blob, dtype=np.int64, count=1, offset=off)
    off += 8
    dims = np.frombuffer(blob, dtype=np.int64, count=int(n_dims), offset=off)
    off += 8 * int(n_dims)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        n = int(fan_in) * int(fan_out)
        if off + 8 * (n + int(fan_out)) > len(blob):
            raise DatasetError(f"truncated checkpoint {path}")
        w = np.frombuffer(blob, dtype=np.float64, count=n, offset=off)
        off += 8 * n
        b = np.frombuffer(blob, dtype=np.float64, count=int(fan_out), offset=off)
        off += 8 * int(fan_out)
        weights.append(w.reshape(int(fan_in), int(fan_out)).copy())
        biases.append(b.copy())
    if off != len(blob):
        raise DatasetError(f"trailing bytes in checkpoint {path}")
    return Mlp(dims=tuple(int(d) for d in dims), weights=weights, biases=biases)
