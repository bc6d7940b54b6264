"""Dense float64 tensors with a closed set of differentiable operations.

Every primitive below carries a hand-written backward rule.  Calling
``Tensor.backward`` replays the recorded rules in reverse topological order.
The rules are checked against central finite differences by :func:`gradcheck`.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """An operation was configured with invalid sizes or options."""


@contextlib.contextmanager
def no_grad():
    """Disable recording of backward rules inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@dataclass
class GradRecord:
    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "record")

    def __init__(self, data, requires_grad: bool = False, record: GradRecord | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.record = record

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node.record is not None:
                for inp in node.record.inputs:
                    if inp.requires_grad and id(inp) not in seen:
                        stack.append((inp, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.record is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            in_grads = node.record.backward(g)
            for inp, ig in zip(node.record.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = ig if key not in grads else grads[key] + ig


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    needs = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, record=GradRecord(op, tuple(inputs), backward))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make("div", out, (a, b), backward)


def safe_div(a, b) -> Tensor:
    """``a / b`` where ``b > 0``; zero (with zero gradient) where ``b == 0``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("safe_div", a, b)
    ok = b.data > 0
    den = np.where(ok, b.data, 1.0)
    out = np.where(ok, a.data / den, 0.0)

    def backward(g):
        ga = np.where(ok, g / den, 0.0)
        gb = np.where(ok, -g * out / den, 0.0)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("safe_div", out, (a, b), backward)


def tabs(x: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return _make("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def gelu(x: Tensor) -> Tensor:
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data ** 2) / math.sqrt(2.0 * math.pi)
    return _make("gelu", x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


def square(x: Tensor) -> Tensor:
    return _make("square", x.data ** 2, (x,), lambda g: (2.0 * g * x.data,))


# ---------------------------------------------------------------- shape

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _make("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=()) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", out, xs, backward)


# ---------------------------------------------------------------- reductions

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def _extreme(op: str, x: Tensor, axis: int, keepdims: bool, pick) -> Tensor:
    idx = pick(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), g, axis=axis)
        return (gx,)

    return _make(op, out, (x,), backward)


def amax(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximising element."""
    return _extreme("amax", x, axis, keepdims, np.argmax)


def amin(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    return _extreme("amin", x, axis, keepdims, np.argmin)


def norm(x: Tensor, axes: tuple) -> Tensor:
    """Euclidean (Frobenius) norm over ``axes``; subgradient 0 at the origin."""
    out = np.sqrt((x.data ** 2).sum(axis=axes))

    def backward(g):
        o = np.expand_dims(out, axes)
        safe = np.where(o > 0, o, 1.0)
        return (np.where(o > 0, np.expand_dims(g, axes) * x.data / safe, 0.0),)

    return _make("norm", out, (x,), backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents disagree for {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        if not b.requires_grad:
            gb = None
        elif b.ndim == 2 and a.ndim > 2:
            # shared weight: one GEMM over all leading axes instead of a batched sum
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _make("matmul", out, (a, b), backward)


def softmax_rows(x: Tensor, scale: float = 1.0) -> Tensor:
    """Row softmax of ``scale * x`` along the last axis."""
    if not scale > 0:
        raise ConfigurationError(f"softmax_rows: scale must be positive, got {scale}")
    y = x.data * scale
    y -= y.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = np.einsum("...i,...i->...", g, y)[..., None]
        gx = g - dot
        gx *= y
        if scale != 1.0:
            gx *= scale
        return (gx,)

    return _make("softmax_rows", y, (x,), backward)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalisation over the last axis (no affine part)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _make("layer_norm", y, (x,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-softmax ``logits``."""
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logz
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)
    n = labels.size
    out = -picked.sum() / n

    def backward(g):
        p = np.exp(logp)
        np.put_along_axis(p, labels[..., None],
                          np.take_along_axis(p, labels[..., None], axis=-1) - 1.0, axis=-1)
        return (g * p / n,)

    return _make("cross_entropy", np.asarray(out), (logits,), backward)


# ---------------------------------------------------------------- composites

def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0):
    w = rng.normal(0.0, gain / math.sqrt(fan_in), size=(fan_in, fan_out))
    return Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True)


def init_mlp(rng: np.random.Generator, widths: Sequence[int], prefix: str = "") -> dict:
    if len(widths) < 2:
        raise ConfigurationError(f"mlp needs at least input and output widths, got {list(widths)}")
    params = {}
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"{prefix}w{i}"], params[f"{prefix}b{i}"] = init_linear(rng, a, b)
    return params


def mlp(x: Tensor, params: dict, prefix: str = "") -> Tensor:
    """Affine layers with GELU between them; the last layer stays affine."""
    n = sum(1 for k in params if k.startswith(prefix + "w") and k[len(prefix) + 1:].isdigit())
    if n == 0:
        raise ConfigurationError("mlp: no layers in parameter bundle")
    for i in range(n):
        w = params[f"{prefix}w{i}"]
        if x.shape[-1] != w.shape[0]:
            raise ConfigurationError(
                f"mlp: layer {i} expects width {w.shape[0]}, got input width {x.shape[-1]}")
        x = affine(x, w, params[f"{prefix}b{i}"])
        if i < n - 1:
            x = gelu(x)
    return x


def init_attention(rng: np.random.Generator, c: int, prefix: str = "") -> dict:
    params = {}
    for name in ("q", "k", "v", "o"):
        params[f"{prefix}w{name}"], params[f"{prefix}b{name}"] = init_linear(rng, c, c)
    return params


def attention_core(q: Tensor, k: Tensor, v: Tensor, scale: float) -> Tensor:
    """softmax(q kᵀ · scale) v over the last two axes."""
    return matmul(softmax_rows(matmul(q, swap_last(k)), scale), v)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, params: dict,
                         prefix: str = "") -> Tensor:
    """Projected scaled dot-product attention with ``heads`` heads.

    ``q`` is (..., t, c); ``k`` and ``v`` are (..., s, c).
    """
    c = q.shape[-1]
    if heads <= 0 or c % heads:
        raise ConfigurationError(f"multi_head_attention: width {c} not divisible by {heads} heads")
    if k.shape[-1] != c or v.shape[-1] != c or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"multi_head_attention: q {q.shape}, k {k.shape}, v {v.shape}")
    d = c // heads

    def split(x):
        lead = x.shape[:-2]
        x = reshape(x, lead + (x.shape[-2], heads, d))
        nd = x.ndim
        return transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))

    qh = split(affine(q, params[prefix + "wq"], params[prefix + "bq"]))
    kh = split(affine(k, params[prefix + "wk"], params[prefix + "bk"]))
    vh = split(affine(v, params[prefix + "wv"], params[prefix + "bv"]))
    oh = attention_core(qh, kh, vh, 1.0 / math.sqrt(d))
    nd = oh.ndim
    o = transpose(oh, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    o = reshape(o, q.shape[:-1] + (c,))
    return affine(o, params[prefix + "wo"], params[prefix + "bo"])


def pos_enc_2d(h: int, w: int, c: int) -> np.ndarray:
    """Sinusoidal 2-D position code of shape (h, w, c).

    The first c/2 channels encode the row, the rest the column; within each
    half, sines and cosines alternate over a geometric frequency ladder.
    """
    if c % 2:
        raise ConfigurationError(f"pos_enc_2d: channel count must be even, got {c}")
    half = c // 2
    out = np.zeros((h, w, c))
    n_freq = (half + 1) // 2
    freqs = 1.0 / (10000.0 ** (np.arange(n_freq) * 2.0 / max(half, 1)))

    def encode(pos):
        ang = pos[:, None] * freqs[None, :]
        enc = np.zeros((len(pos), half))
        enc[:, 0::2] = np.sin(ang)[:, : len(range(0, half, 2))]
        enc[:, 1::2] = np.cos(ang)[:, : len(range(1, half, 2))]
        return enc

    out[:, :, :half] = encode(np.arange(h, dtype=np.float64))[:, None, :]
    out[:, :, half:] = encode(np.arange(w, dtype=np.float64))[None, :, :]
    return out


# ---------------------------------------------------------------- verification

@dataclass
class GradcheckReport:
    op: str
    errors: list = field(default_factory=list)        # max relative error per input
    worst: list = field(default_factory=list)         # (index, analytic, numeric) per input
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors)

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAILED"
        parts = [f"{self.op}: {status}"]
        for i, (e, w) in enumerate(zip(self.errors, self.worst)):
            parts.append(f"  input {i}: rel.err {e:.3e} worst at {w[0]} "
                         f"(analytic {w[1]:.6e}, numeric {w[2]:.6e})")
        return "\n".join(parts)


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], tolerance: float = 1e-5,
              step: float = 1e-5, seed: int = 0, name: str | None = None) -> GradcheckReport:
    """Compare the analytic gradient of ``fn`` with central finite differences.

    The output is reduced to a scalar with fixed random weights.  The relative
    error of an input is max|analytic - numeric| / max|numeric| over its entries.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    rng = np.random.default_rng(seed)
    with no_grad():
        probe = fn(*[Tensor(a) for a in arrays]).data
    weights = rng.normal(size=probe.shape)

    def scalar(arrs):
        with no_grad():
            return float((fn(*[Tensor(a) for a in arrs]).data * weights).sum())

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    out.backward(weights)
    report = GradcheckReport(op=name or getattr(fn, "__name__", "op"), tolerance=tolerance)
    for i, a in enumerate(arrays):
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
        numeric = np.zeros_like(a)
        flat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = scalar(arrays)
            flat[j] = orig - step
            fm = scalar(arrays)
            flat[j] = orig
            numeric.reshape(-1)[j] = (fp - fm) / (2 * step)
        diff = np.abs(analytic - numeric)
        scale = max(np.abs(numeric).max(initial=0.0), 1e-12)
        j = int(np.argmax(diff)) if diff.size else 0
        idx = np.unravel_index(j, a.shape) if a.shape else ()
        report.errors.append(float(diff.max(initial=0.0) / scale))
        report.worst.append((tuple(int(t) for t in idx),
                             float(analytic.reshape(-1)[j]) if a.size else 0.0,
                             float(numeric.reshape(-1)[j]) if a.size else 0.0))
    return report
