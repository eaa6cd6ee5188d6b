"""Minimal NCHW tensor engine with tape-based reverse-mode differentiation.

Only the operators the interpolation network needs are provided. Every op
validates shapes strictly; the sole broadcast is the per-channel bias add
inside :func:`conv2d`.
"""
from __future__ import annotations

import contextlib
import functools
import logging
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_state = {"grad_enabled": True, "debug_nans": False, "dtype": np.float32}


class OpError(ValueError):
    """Invalid arguments to a tensor operation."""

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference, benchmarking, optimizer updates)."""
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def set_debug_nans(enabled: bool) -> None:
    """Check every op output for NaN/Inf when enabled."""
    _state["debug_nans"] = bool(enabled)


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _state["dtype"] = dtype.type


def get_default_dtype():
    return _state["dtype"]


class Tensor:
    """Dense array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=_float_dtype(data), copy=True)
        if not np.all(np.isfinite(arr)):
            raise OpError("tensor", "non-finite values in external input")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, parents, backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        if _state["debug_nans"] and not np.all(np.isfinite(data)):
            raise OpError(op, "produced non-finite values")
        track = _state["grad_enabled"] and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, (), None, "detach")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tracked leaf."""
        if grad is None:
            if self.data.size != 1:
                raise OpError("backward", f"implicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _raise_item(shape):
    raise OpError("item", f"tensor of shape {shape} is not a scalar")


def _float_dtype(data):
    dt = getattr(data, "dtype", None)
    if dt is not None and np.dtype(dt) in (np.float32, np.float64):
        return dt
    return _state["dtype"]


def _topo_order(root: Tensor) -> list[Tensor]:
    # iterative DFS; parents visited in declaration order for reproducibility
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, i = stack.pop()
        if i == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        if i < len(node._parents):
            stack.append((node, i + 1))
            parent = node._parents[i]
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, 0))
        else:
            order.append(node)
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_rank4(op: str, *tensors: Tensor) -> None:
    for t in tensors:
        if t.data.ndim != 4:
            raise OpError(op, f"expected NCHW rank-4 tensor, got shape {t.shape}")


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise OpError(op, f"shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, factor: float, offset: float = 0.0) -> Tensor:
    """``factor * a + offset`` for Python scalars."""
    out = a.data * a.data.dtype.type(factor)
    if offset:
        out = out + a.data.dtype.type(offset)
    f = a.data.dtype.type(factor)
    return Tensor._from_op(out, (a,), lambda g: (g * f,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                           lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype)
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def sum_all(x: Tensor) -> Tensor:
    shape, dt = x.shape, x.dtype
    return Tensor._from_op(np.array(x.data.sum(dtype=dt)), (x,),
                           lambda g: (np.broadcast_to(g, shape).astype(dt),), "sum")


def mean_all(x: Tensor) -> Tensor:
    shape, dt, n = x.shape, x.dtype, x.data.size
    return Tensor._from_op(np.array(x.data.mean(dtype=dt)), (x,),
                           lambda g: (np.full(shape, g / n, dtype=dt),), "mean")


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error; subgradient 0 where prediction equals target."""
    target = as_tensor(target)
    _check_same("l1_loss", pred, target)
    diff = pred.data - target.data.astype(pred.dtype, copy=False)
    n = diff.size
    sign = np.sign(diff)
    return Tensor._from_op(np.array(np.abs(diff).mean(dtype=pred.dtype)), (pred, target),
                           lambda g: (sign * (g / n), -sign * (g / n)), "l1_loss")


# ------------------------------------------------------------------- spatial

def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis."""
    _check_rank4("concat", *tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0],) + t.shape[2:] != (ref[0],) + ref[2:]:
            raise OpError("concat", f"shape mismatch {ref} vs {t.shape}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]
    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors),
                           lambda g: tuple(np.split(g, splits, axis=1)), "concat")


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    _check_rank4("crop", x)
    H, W = x.shape[2:]
    if top < 0 or left < 0 or top + height > H or left + width > W:
        raise OpError("crop", f"window ({top},{left},{height},{width}) outside {x.shape}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, :, top:top + height, left:left + width] = g
        return (full,)

    return Tensor._from_op(x.data[:, :, top:top + height, left:left + width], (x,), backward, "crop")


def _fold_edge_grad(gp: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    """Adjoint of edge replication: sum padded borders back onto the edge cells."""
    Hp, Wp = gp.shape[-2:]
    rows = gp[..., top:Hp - bottom, :].copy()
    if top:
        rows[..., 0, :] += gp[..., :top, :].sum(axis=-2)
    if bottom:
        rows[..., -1, :] += gp[..., Hp - bottom:, :].sum(axis=-2)
    out = rows[..., left:Wp - right].copy()
    if left:
        out[..., 0] += rows[..., :left].sum(axis=-1)
    if right:
        out[..., -1] += rows[..., Wp - right:].sum(axis=-1)
    return out


def replication_pad(x: Tensor, left: int, right: int, top: int, bottom: int) -> Tensor:
    _check_rank4("replication_pad", x)
    if min(left, right, top, bottom) < 0:
        raise OpError("replication_pad", "negative padding")
    out = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)), mode="edge")
    return Tensor._from_op(out, (x,), lambda g: (_fold_edge_grad(g, top, bottom, left, right),),
                           "replication_pad")


def rot90(x: Tensor, quarter_turns: int) -> Tensor:
    """Counter-clockwise rotation in the (H, W) plane."""
    _check_rank4("rot90", x)
    if quarter_turns not in (0, 1, 2, 3):
        raise OpError("rot90", f"quarter_turns must be 0..3, got {quarter_turns}")
    k = int(quarter_turns)
    if k == 0:
        return x
    out = np.ascontiguousarray(np.rot90(x.data, k, axes=(2, 3)))
    return Tensor._from_op(out, (x,), lambda g: (np.ascontiguousarray(np.rot90(g, -k, axes=(2, 3))),),
                           "rot90")


def avg_pool2(x: Tensor) -> Tensor:
    _check_rank4("avg_pool2", x)
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise OpError("avg_pool2", f"spatial size must be even, got {x.shape}")
    out = x.data.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5), dtype=x.dtype)

    def backward(g):
        q = g * g.dtype.type(0.25)
        return (np.repeat(np.repeat(q, 2, axis=2), 2, axis=3),)

    return Tensor._from_op(out, (x,), backward, "avg_pool2")


@functools.lru_cache(maxsize=64)
def _upsample_matrix(n: int, dtype) -> np.ndarray:
    """(2n, n) linear interpolation matrix, half-pixel centers, edge-clamped."""
    m = np.zeros((2 * n, n), dtype=np.float64)
    for o in range(2 * n):
        src = max((o + 0.5) / 2 - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        t = src - i0
        m[o, i0] += 1 - t
        m[o, i1] += t
    m.setflags(write=False)
    return m.astype(dtype)


def upsample_bilinear2(x: Tensor) -> Tensor:
    _check_rank4("upsample_bilinear2", x)
    H, W = x.shape[2:]
    if H < 1 or W < 1:
        raise OpError("upsample_bilinear2", f"empty spatial size {x.shape}")
    uh = _upsample_matrix(H, x.dtype.type)
    uw = _upsample_matrix(W, x.dtype.type)
    out = np.matmul(np.matmul(uh, x.data), uw.T)
    return Tensor._from_op(out, (x,), lambda g: (np.matmul(np.matmul(uh.T, g), uw),),
                           "upsample_bilinear2")


def channel_softmax(x: Tensor) -> Tensor:
    _check_rank4("channel_softmax", x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return Tensor._from_op(s, (x,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),),
                           "channel_softmax")


def _im2col(xp: np.ndarray, k: int, H: int, W: int) -> np.ndarray:
    """(N,C,H+k-1,W+k-1) -> (N, C*k*k, H*W) with channel-major rows."""
    N, C = xp.shape[:2]
    cols = np.empty((N, C, k, k, H, W), dtype=xp.dtype)
    for a in range(k):
        for b in range(k):
            cols[:, :, a, b] = xp[:, :, a:a + H, b:b + W]
    return cols.reshape(N, C * k * k, H * W)


def _col2im(cols: np.ndarray, C: int, k: int, H: int, W: int) -> np.ndarray:
    N = cols.shape[0]
    cols = cols.reshape(N, C, k, k, H, W)
    xp = np.zeros((N, C, H + k - 1, W + k - 1), dtype=cols.dtype)
    for a in range(k):
        for b in range(k):
            xp[:, :, a:a + H, b:b + W] += cols[:, :, a, b]
    return xp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: int = 1,
           padding_mode: str = "zeros") -> Tensor:
    """Same-size k x k cross-correlation (k odd, ``padding = (k - 1) // 2``).

    ``padding_mode`` is ``"zeros"`` or ``"replicate"``; the latter keeps
    constant fields constant, which the network relies on.
    """
    _check_rank4("conv2d", x, weight)
    O, C, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0 or padding != (kh - 1) // 2:
        raise OpError("conv2d", f"need odd square kernel with same padding, got {weight.shape}, padding={padding}")
    if x.shape[1] != C:
        raise OpError("conv2d", f"input channels {x.shape} do not match weight {weight.shape}")
    if bias.shape != (O,):
        raise OpError("conv2d", f"bias shape {bias.shape} does not match weight {weight.shape}")
    if padding_mode not in ("zeros", "replicate"):
        raise OpError("conv2d", f"unknown padding_mode {padding_mode!r}")
    N, _, H, W = x.shape
    p, k = padding, kh
    mode = "constant" if padding_mode == "zeros" else "edge"
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode=mode) if p else x.data
    w2 = weight.data.reshape(O, C * k * k)
    out = np.matmul(w2, _im2col(xp, k, H, W))
    out += bias.data[None, :, None]
    out = out.reshape(N, O, H, W)
    need_x = x.requires_grad

    def backward(g):
        g2 = g.reshape(N, O, H * W)
        # columns are recomputed rather than kept alive across the whole tape
        cols = _im2col(xp, k, H, W)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(O, C, k, k)
        gb = g2.sum(axis=(0, 2))
        gx = None
        if need_x:
            gxp = _col2im(np.matmul(w2.T, g2), C, k, H, W)
            if not p:
                gx = gxp
            elif padding_mode == "zeros":
                gx = gxp[:, :, p:-p, p:-p]
            else:
                gx = _fold_edge_grad(gxp, p, p, p, p)
        return gx, gw, gb

    return Tensor._from_op(out, (x, weight, bias), backward, "conv2d")


# ------------------------------------------------------------- verification

def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-4,
               tol: float = 1e-4, max_entries: int | None = None, seed: int = 0) -> dict:
    """Compare analytic gradients of scalar ``f(*inputs)`` with central differences.

    Relative error per entry is ``|a - n| / max(|a|, |n|, 1e-3 * scale)``
    where ``scale`` is the largest gradient magnitude of that input (analytic
    over all entries, numeric over the checked ones), so entries many orders
    below the dominant scale are judged absolutely.
    ``max_entries`` samples that many coordinates per input (seeded).
    Returns ``{"errors": [...], "max_error": float, "passed": bool}``.
    """
    for t in inputs:
        if t.dtype != np.float64:
            logger.warning("grad_check on %s input; 64-bit is expected", t.dtype)
        t.grad = None
        t.requires_grad = True
    out = f(*inputs)
    if out.data.size != 1:
        raise OpError("grad_check", f"function output must be scalar, got shape {out.shape}")
    out.backward()
    rng = np.random.default_rng(seed)
    errors = []
    with no_grad():
        for t in inputs:
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
            numeric = np.empty(len(idx))
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f(*inputs).data)
                flat[i] = orig - h
                fm = float(f(*inputs).data)
                flat[i] = orig
                numeric[n] = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[idx]
            scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)))
            floor = max(1e-3 * scale, 1e-12)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
            errors.append(float((np.abs(a - numeric) / denom).max(initial=0.0)))
    worst = max(errors, default=0.0)
    return {"errors": errors, "max_error": worst, "passed": worst < tol}


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
