"""A small reverse-mode autodiff engine on float64 numpy arrays.

Every tensor gets a monotonically increasing id when it is created. Parents are
always created before their children, so sorting the reachable nodes by id gives
a valid topological order for the backward sweep.
"""
from __future__ import annotations

import contextlib
import hashlib
import itertools
import json
import math
import struct
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_grad_enabled = True
_branches: list | None = None


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (evaluation and inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def branch_trace():
    """Collect the discrete choices (argmax, top-k) made by piecewise ops inside the block."""
    global _branches
    prev, _branches = _branches, []
    try:
        yield _branches
    finally:
        _branches = prev


def record_branch(choice: np.ndarray) -> None:
    if _branches is not None:
        _branches.append(np.array(choice, copy=True))


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; the same seed gives the same stream on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __matmul__(self, o): return matmul(self, o)
    def __neg__(self): return mul(self, -1.0)
    def __pow__(self, p): return power(self, p)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = fn
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into ``.grad`` of every reachable leaf with requires_grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes, seen, stack = [], set(), [loss]
    while stack:
        t = stack.pop()
        if t.id in seen:
            continue
        seen.add(t.id)
        nodes.append(t)
        stack.extend(p for p in t.parents if p.requires_grad)
    nodes.sort(key=lambda t: t.id, reverse=True)
    grads = {loss.id: np.ones_like(loss.data)}
    for t in nodes:
        g = grads.pop(t.id, None)
        if g is None:
            continue
        if t.backward_fn is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t.parents, t.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if p.id in grads:
                grads[p.id] = grads[p.id] + pg
            else:
                grads[p.id] = pg


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _bshape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "sub")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "mul")
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "div")
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def ln(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def log1p(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log1p(a.data), (a,), lambda g: (g / (1.0 + a.data),))


def expm1(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.expm1(a.data), (a,), lambda g: (g * np.exp(a.data),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    neg = alpha * np.expm1(np.minimum(a.data, 0.0))
    pos = a.data > 0
    return _node(np.where(pos, a.data, neg), (a,), lambda g: (g * np.where(pos, 1.0, neg + alpha),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def masked_fill(a, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant; no gradient flows there."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    return _node(np.where(mask, value, a.data), (a,), lambda g: (np.where(mask, 0.0, g),))


# linear algebra and shape

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible") from None

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return _node(out, (a, b), fn)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    axes = list(range(as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, tuple(shape))
    except ValueError:
        raise ShapeError(f"broadcast_to: {a.shape} does not broadcast to {tuple(shape)}") from None
    return _node(out.copy(), (a,), lambda g: (_unbroadcast(g, a.shape),))


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    """Slicing and integer-array indexing; repeated indices accumulate in backward."""
    a = as_tensor(a)
    out = a.data[idx]

    def fn(g):
        full = np.zeros_like(a.data)
        if _is_basic(idx):
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return _node(np.array(out), (a,), fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in ts]} differ off axis {axis}") from None
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(out, ts, lambda g: tuple(np.split(g, cuts, axis=axis)))


def gather(a, index: np.ndarray, axis: int) -> Tensor:
    """``take_along_axis``; indices are constants."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    try:
        out = np.take_along_axis(a.data, index, axis=axis)
    except (ValueError, IndexError) as exc:
        raise ShapeError(f"gather: index {index.shape} vs input {a.shape}: {exc}") from None

    def fn(g):
        full = np.zeros_like(a.data)
        grid = list(np.indices(index.shape, sparse=True))
        grid[axis % a.ndim] = index
        np.add.at(full, tuple(grid), g)
        return (full,)
    return _node(out, (a,), fn)


def index_put(base, index: np.ndarray, values, axis: int) -> Tensor:
    """Copy of ``base`` with the slots ``index`` along ``axis`` overwritten by ``values``.

    Indices along ``axis`` must be unique within each slice.
    """
    base, values = as_tensor(base), as_tensor(values)
    index = np.asarray(index, dtype=np.intp)
    out = base.data.copy()
    try:
        np.put_along_axis(out, index, values.data, axis=axis)
    except (ValueError, IndexError) as exc:
        raise ShapeError(f"index_put: base {base.shape}, index {index.shape}, values {values.shape}: {exc}") from None

    def fn(g):
        gb = g.copy()
        np.put_along_axis(gb, index, 0.0, axis=axis)
        return gb, np.take_along_axis(g, index, axis=axis)
    return _node(out, (base, values), fn)


# reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axis = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axis)


def _expand(g, shape, axes, keepdims):
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    return _node(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,),
                 lambda g: (_expand(g, a.shape, axes, keepdims).copy(),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = math.prod(a.shape[i] for i in axes)
    return _node(np.asarray(a.data.mean(axis=axes, keepdims=keepdims)), (a,),
                 lambda g: (_expand(g / n, a.shape, axes, keepdims).copy(),))


def max_(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    ax = axis % a.ndim
    arg = np.expand_dims(np.argmax(a.data, axis=ax), ax)
    record_branch(arg)
    out = np.take_along_axis(a.data, arg, axis=ax)

    def fn(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, arg, g if keepdims else np.expand_dims(g, ax), axis=ax)
        return (full,)
    return _node(out if keepdims else np.squeeze(out, ax), (a,), fn)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _node(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


# layers

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: features {d} vs gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def fn(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, d)
        return gx, (flat * xhat.reshape(-1, d)).sum(0), flat.sum(0)
    return _node(out, (x, gamma, beta), fn)


def dropout(x, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-p) so inference is the identity."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout p must be in [0, 1)")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


def pad_time(x, left: int, right: int, mode: str = "zeros") -> Tensor:
    """Pad axis -2 of a (..., L, C) tensor; ``circular`` wraps around, ``zeros`` fills with 0."""
    x = as_tensor(x)
    L = x.shape[-2]
    if mode == "circular":
        if left > L or right > L:
            raise ShapeError(f"circular padding of {left}/{right} exceeds length {L}")
        idx = np.r_[np.arange(L - left, L), np.arange(L), np.arange(right)]
        return getitem(x, (Ellipsis, idx, slice(None)))
    if mode != "zeros":
        raise ValueError(f"unknown padding mode {mode!r}")
    widths = [(0, 0)] * x.ndim
    widths[-2] = (left, right)
    return _node(np.pad(x.data, widths), (x,), lambda g: (g[..., left:left + L, :],))


def conv1d(x, w, stride: int = 1, padding: str = "same", bias=None) -> Tensor:
    """1-D convolution over time of ``x`` (..., L, C_in) with ``w`` (k, C_in, C_out).

    ``padding``: ``same`` (zeros, centered), ``circular`` (centered, wrap-around),
    ``causal`` (zeros on the left only, so output t sees inputs <= t) or ``valid``.
    Output t is ``sum_j xp[t*stride + j] @ w[j]`` over the padded input ``xp``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 3 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} vs kernel {w.shape}")
    k = w.shape[0]
    if padding in ("same", "circular"):
        x = pad_time(x, (k - 1) // 2, k // 2, "circular" if padding == "circular" else "zeros")
    elif padding == "causal":
        x = pad_time(x, k - 1, 0)
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    Lp = x.shape[-2]
    if Lp < k:
        raise ShapeError(f"conv1d: padded length {Lp} shorter than kernel {k}")
    L_out = (Lp - k) // stride + 1
    taps = [x.data[..., j:j + stride * (L_out - 1) + 1:stride, :] for j in range(k)]
    out = sum(t @ w.data[j] for j, t in enumerate(taps))

    def fn(g):
        gx = gw = None
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for j in range(k):
                gx[..., j:j + stride * (L_out - 1) + 1:stride, :] += g @ w.data[j].T
        if w.requires_grad:
            gf = g.reshape(-1, g.shape[-1])
            gw = np.stack([t.reshape(-1, t.shape[-1]).T @ gf for t in taps])
        return gx, gw
    y = _node(out, (x, w), fn)
    return y if bias is None else add(y, bias)


def embedding_lookup(table, ids: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by integer ``ids``; out-of-range ids are a contract error."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"embedding ids must lie in [0, {table.shape[0]}), got [{ids.min()}, {ids.max()}]")
    return getitem(table, ids.astype(np.intp))


# parameters and modules

class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Containers discover parameters and submodules from attributes, in assignment order."""
    training = True

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for key, val in vars(self).items():
            for name, p in _walk(val, prefix + key):
                out.append((name, p))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterable["Module"]:
        yield self
        for val in vars(self).values():
            items = val if isinstance(val, (list, tuple)) else [val]
            for v in items:
                if isinstance(v, Module):
                    yield from v.modules()

    def train(self, flag: bool = True) -> "Module":
        for m in self.modules():
            m.training = flag
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing, extra = set(params) - set(state), set(state) - set(params)
            raise ContractError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for n, p in params.items():
            if p.shape != state[n].shape:
                raise ShapeError(f"{n}: checkpoint shape {state[n].shape} vs model {p.shape}")
            p.data = np.array(state[n], dtype=np.float64)

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _walk(val, name):
    if isinstance(val, Parameter):
        yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, v in enumerate(val):
            yield from _walk(v, f"{name}.{i}")


# checkpoints

CHECKPOINT_MAGIC = b"LFTSPRM\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], extra: dict | None = None) -> Path:
    """Write ``<path>`` (binary records) and ``<path>.json`` (manifest).

    Each record is: u32 name length, utf-8 name, u32 ndim, ndim x u64 dims,
    then the float64 little-endian values in row-major order.
    """
    path = Path(path)
    blob = bytearray(CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION))
    records = []
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        blob += struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        records.append({"name": name, "shape": list(arr.shape), "offset": len(blob)})
        blob += arr.tobytes()
    path.write_bytes(bytes(blob))
    manifest = {"format": "lftsformer-params", "version": CHECKPOINT_VERSION, "records": records,
                "sha256": hashlib.sha256(blob).hexdigest(), "extra": extra or {}}
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    manifest = json.loads(Path(str(path) + ".json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION or not blob.startswith(CHECKPOINT_MAGIC):
        raise ContractError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ContractError(f"{path}: checksum does not match manifest")
    pos = len(CHECKPOINT_MAGIC) + 4
    out = {}
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        name = blob[pos + 4:pos + 4 + nlen].decode()
        pos += 4 + nlen
        (ndim,) = struct.unpack_from("<I", blob, pos)
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos + 4)
        pos += 4 + 8 * ndim
        count = math.prod(shape)
        out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    if [r["name"] for r in manifest["records"]] != list(out):
        raise ContractError(f"{path}: records do not match manifest")
    return out


# finite-difference checking

def _traced(fn):
    with no_grad(), branch_trace() as trace:
        value = fn().item()
    return value, trace


def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4, tol: float = 1e-4,
              max_entries: int | None = None, rng: np.random.Generator | None = None,
              kink_aware: bool = False, report: dict | None = None) -> float:
    """Largest ``|analytic - central FD| / max(1, |analytic|)`` over the checked entries.

    ``fn`` must rebuild the scalar loss from the current parameter values. With
    ``max_entries`` each parameter is checked on a random sample of entries.
    With ``kink_aware`` an entry whose stencil changes a discrete choice of a
    piecewise op (a max or a top-k selection), where central differences are
    not a valid reference, is re-checked with the step shrunk by 10x until the
    stencil is smooth (down to ``h * 1e-4``). ``report`` receives the counts.
    Raises AssertionError when the worst error reaches ``tol``.
    """
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    base = _traced(fn)[1] if kink_aware else None
    worst, where = 0.0, None
    checked = shrunk = 0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort((rng or make_rng(0)).choice(flat.size, max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            step = h
            while True:
                flat[i] = orig + step
                up, tr_up = _traced(fn)
                flat[i] = orig - step
                dn, tr_dn = _traced(fn)
                flat[i] = orig
                if not kink_aware or step <= h * 1e-4 or (_same_branches(base, tr_up)
                                                          and _same_branches(base, tr_dn)):
                    break
                step /= 10
            shrunk += step < h
            checked += 1
            a = ga.reshape(-1)[i]
            err = abs(a - (up - dn) / (2 * step)) / max(1.0, abs(a))
            if err > worst:
                worst, where = err, (p.name, int(i))
    if report is not None:
        report.update(checked=checked, shrunk=shrunk, worst=worst, where=where)
    if worst >= tol:
        raise AssertionError(f"gradcheck failed: error {worst:.3e} at {where}")
    return worst
