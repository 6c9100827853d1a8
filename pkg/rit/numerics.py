"""Dense tensor kernel – layers, reverse-mode gradients and the weight container.

Every feature and attention quantity of the network is a :class:`Tensor`
wrapping a row-major numpy array. Operations on tensors that require gradients
are recorded on the thread's active :class:`GradTape`; :func:`backward` replays
the tape in reverse to fill ``.grad`` on the parameters.
"""

from __future__ import annotations

import logging
import math
import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np
from scipy import special

from .errors import ContractError, DimensionError, NonFiniteError, WeightFileError

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Tape state
# ---------------------------------------------------------------------------
Backward = Callable[[np.ndarray], tuple]


@dataclass(eq=False)
class _Node:
    out: "Tensor"
    parents: tuple["Tensor", ...]
    backward: Backward


class GradTape:
    """Operations recorded in topological (creation) order.

    Used as a context manager it becomes the active tape of the current
    thread; independent tapes may live on independent threads.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._previous: GradTape | None = None

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node.out._node = None
            node.out._tape = None
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "GradTape":
        self._previous = _STATE.tape
        _STATE.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _STATE.tape = self._previous if self._previous is not None else GradTape()
        self._previous = None


class _State(threading.local):
    def __init__(self) -> None:
        self.tape = GradTape()
        self.grad_enabled = True
        self.checked = True


_STATE = _State()


def current_tape() -> GradTape:
    return _STATE.tape


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording (inference paths)."""
    previous = _STATE.grad_enabled
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = previous


def set_checked(flag: bool) -> None:
    """Toggle NaN/Inf rejection at tensor construction for this thread."""
    _STATE.checked = flag


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------
class Tensor:
    """N-dimensional real array with an optional gradient slot."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str = "") -> None:
        arr = np.asarray(data)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float64, copy=False)
        if _STATE.checked and arr.size and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite entries in tensor {name or arr.shape}")
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: _Node | None = None
        self._tape: GradTape | None = None

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Backward) -> Tensor:
    out = Tensor(data)
    if _STATE.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = _Node(out, parents, backward)
        out._node = node
        out._tape = _STATE.tape
        _STATE.tape.record(node)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# ---------------------------------------------------------------------------
# Elementwise and reduction ops
# ---------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent
    return _result(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp; the gradient is zero where the clamp is active."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def gelu(a) -> Tensor:
    """Exact GELU, x·Φ(x)."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + special.erf(a.data / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * a.data * a.data) / math.sqrt(2.0 * math.pi)
    return _result(a.data * cdf, (a,), lambda g: (g * (cdf + a.data * pdf),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax_axis(a, axis: int) -> Tensor:
    """Max-stabilised softmax along ``axis``."""
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ContractError(f"softmax axis {axis} invalid for rank {a.ndim}")
    out = special.softmax(a.data, axis=axis)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _result(out, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axis=axes, keepdims=keepdims) * (1.0 / max(count, 1))


def tmax(a, axis: int) -> Tensor:
    """Max over one axis; the gradient flows to the first maximiser."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx, np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _result(out, (a,), backward)


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """``a @ b`` with ``a`` of any rank ≥ 1 and ``b`` a matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got {a.shape}")
    return _result(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a, indices) -> Tensor:
    """Gather rows: ``out[...] = a[indices[...]]``."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ContractError(f"row index out of range for {a.shape[0]} rows")

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _result(a.data[idx], (a,), backward)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------
def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every recorded leaf.

    Each node of the loss's tape is visited once, newest first; the tape is
    cleared afterwards.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
        return

    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = adjoints.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg), parent.shape)
            if parent._node is not None:
                key = id(parent)
                adjoints[key] = adjoints[key] + pg if key in adjoints else pg
            elif parent.grad is None:
                parent.grad = np.array(pg, dtype=parent.data.dtype)
            else:
                parent.grad = parent.grad + pg
    tape.clear()


def _fd_coordinates(sizes: list[int], sample: int | None, rng: np.random.Generator | None) -> list[np.ndarray]:
    if sample is None or sample >= sum(sizes):
        return [np.arange(size) for size in sizes]
    rng = rng or np.random.default_rng(0)
    owner = np.repeat(np.arange(len(sizes)), sizes)
    offset = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    flat = np.sort(rng.choice(owner.size, size=sample, replace=False))
    return [flat[owner[flat] == t] - offset[t] for t in range(len(sizes))]


def fd_check(
    f: Callable[[], Tensor],
    params: list[Tensor],
    h: float = 1e-5,
    floor: float = 1e-3,
    analytic_hook: Callable[[np.ndarray], np.ndarray] | None = None,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be deterministic and read ``params`` afresh on every call.
    Gradients smaller than ``floor`` are compared on an absolute scale.
    With ``sample`` set, only that many coordinates drawn from ``rng`` across
    all of ``params`` are perturbed.
    """
    for p in params:
        if not (p.data.flags.c_contiguous and p.data.flags.writeable):
            p.data = np.array(p.data)
        p.grad = None
    with GradTape():
        backward(f())

    coords = _fd_coordinates([p.data.size for p in params], sample, rng)
    worst = 0.0
    for p, chosen in zip(params, coords):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if analytic_hook is not None:
            analytic = analytic_hook(analytic)
        flat = p.data.reshape(-1)
        flat_grad = np.asarray(analytic).reshape(-1)
        with no_grad():
            for i in chosen:
                orig = flat[i]
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * h)
                denom = max(abs(numeric), abs(flat_grad[i]), floor)
                worst = max(worst, abs(numeric - flat_grad[i]) / denom)
    return worst


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------
class Module:
    """Walks Tensor / Module / list-of-Module attributes in definition order.

    Parameter names are dotted attribute paths, list members use their index
    (``blocks.0.attn.wq.weight``).
    """

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            full = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_tensors(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{full}.{i}.")

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_tensors() if t.requires_grad]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_tensors())
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise WeightFileError(f"missing tensors: {', '.join(missing[:8])}")
        for name, tensor in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != tensor.shape:
                raise WeightFileError(f"{name}: shape {arr.shape} != {tensor.shape}")
            tensor.data = arr.astype(tensor.data.dtype, copy=True)


def init_uniform(rng: np.random.Generator, d_in: int, shape) -> np.ndarray:
    bound = math.sqrt(1.0 / max(d_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class LinearLayer(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True) -> None:
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Tensor(init_uniform(rng, d_in, (d_in, d_out)), requires_grad=True)
        self.bias = Tensor(init_uniform(rng, d_in, (d_out,)), requires_grad=True) if bias else None

    def __call__(self, x) -> Tensor:
        return linear_forward(x, self)


def linear_forward(x, layer: LinearLayer) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != layer.d_in:
        raise DimensionError(f"linear expects width {layer.d_in}, got {x.shape}")
    out = matmul(x, layer.weight)
    return out + layer.bias if layer.bias is not None else out


class NormLayer(Module):
    """Batch- or layer-normalisation over the trailing feature axis."""

    def __init__(self, dim: int, kind: str = "layer", eps: float = 1e-5, momentum: float = 0.1) -> None:
        if kind not in ("batch", "layer"):
            raise ContractError(f"unknown norm kind {kind!r}")
        if eps <= 0 or not 0 < momentum < 1:
            raise ContractError("norm needs eps > 0 and momentum in (0, 1)")
        self.kind = kind
        self.dim = dim
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        if kind == "batch":
            self.running_mean = Tensor(np.zeros(dim))
            self.running_var = Tensor(np.ones(dim))

    def __call__(self, x, training: bool = False) -> Tensor:
        return norm_forward(x, self, training)


def _standardise(x: Tensor, axis: int, eps: float) -> tuple[Tensor, Tensor, Tensor]:
    mu = tmean(x, axis=axis, keepdims=True)
    xc = x - mu
    var = tmean(xc * xc, axis=axis, keepdims=True)
    return xc * power(var + eps, -0.5), mu, var


def norm_forward(x, layer: NormLayer, training: bool = False) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != layer.dim:
        raise DimensionError(f"norm expects width {layer.dim}, got {x.shape}")
    if x.size == 0:
        return x * layer.gamma + layer.beta

    if layer.kind == "layer":
        xhat, _, _ = _standardise(x, -1, layer.eps)
    else:
        flat = reshape(x, (-1, layer.dim))
        n = flat.shape[0]
        if training:
            xhat, mu, var = _standardise(flat, 0, layer.eps)
            unbiased = var.data[0] * n / (n - 1) if n > 1 else var.data[0]
            m = layer.momentum
            layer.running_mean.data = (1 - m) * layer.running_mean.data + m * mu.data[0]
            layer.running_var.data = (1 - m) * layer.running_var.data + m * unbiased
        else:
            scale = 1.0 / np.sqrt(layer.running_var.data + layer.eps)
            xhat = (flat - layer.running_mean.data) * scale
        xhat = reshape(xhat, x.shape)
    return xhat * layer.gamma + layer.beta


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "gelu": gelu,
    "none": lambda t: t,
}


class MLPLayer(Module):
    def __init__(self, linear: LinearLayer, norm: NormLayer | None = None, activation: str = "none") -> None:
        if activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        self.linear = linear
        self.norm = norm
        self.activation = activation


class MLP(Module):
    def __init__(self, layers: list[MLPLayer]) -> None:
        self.layers = layers

    @classmethod
    def build(
        cls,
        dims: list[int],
        rng: np.random.Generator,
        norm: str | None = "batch",
        activation: str = "relu",
    ) -> "MLP":
        """Hidden layers get norm + activation, the last layer is plain linear."""
        layers = []
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            layers.append(
                MLPLayer(
                    LinearLayer(d_in, d_out, rng),
                    None if last or norm is None else NormLayer(d_out, norm),
                    "none" if last else activation,
                )
            )
        return cls(layers)

    def __call__(self, x, training: bool = False) -> Tensor:
        return mlp_forward(x, self.layers, training)


def mlp_forward(x, layers, training: bool = False) -> Tensor:
    """Sequential (linear, norm?, activation) stages; an empty list is the identity."""
    out = as_tensor(x)
    for item in layers:
        lin, norm, act = item if isinstance(item, tuple) else (item.linear, item.norm, item.activation)
        out = linear_forward(out, lin)
        if norm is not None:
            out = norm_forward(out, norm, training)
        out = ACTIVATIONS[act](out)
    return out


# ---------------------------------------------------------------------------
# Weight container  ("RITW", little-endian)
# ---------------------------------------------------------------------------
WEIGHT_MAGIC = b"RITW"
WEIGHT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def encode_weights(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [WEIGHT_MAGIC, struct.pack("<II", WEIGHT_VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value)
        code = _CODES.get(arr.dtype.newbyteorder("=")) if arr.dtype.kind == "f" else None
        if code is None:
            raise ContractError(f"{name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(chunks)


def decode_weights(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    pos = 0

    def read(fmt: str) -> tuple:
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise WeightFileError("weight container truncated")
        values = struct.unpack_from(fmt, view, pos)
        pos += size
        return values

    if bytes(view[:4]) != WEIGHT_MAGIC:
        raise WeightFileError("bad magic, not a RITW container")
    pos = 4
    version, count = read("<II")
    if version != WEIGHT_VERSION:
        raise WeightFileError(f"unsupported container version {version}")

    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = read("<H")
        if pos + name_len > len(view):
            raise WeightFileError("weight container truncated")
        name = bytes(view[pos : pos + name_len]).decode("utf-8")
        pos += name_len
        code, rank = read("<BB")
        if code not in _DTYPES:
            raise WeightFileError(f"{name}: unknown dtype code {code}")
        shape = read(f"<{rank}Q") if rank else ()
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(view):
            raise WeightFileError(f"{name}: data truncated")
        out[name] = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    return out


def save_weights(path: str | Path, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_weights(tensors))
    logger.info("Saved %d tensors → %s", len(tensors), path)
    return path


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise WeightFileError(f"{path}: {exc}") from exc
    return decode_weights(blob)
