"""Dense tensor arithmetic with reverse-mode differentiation.

Every operation records its inputs and a vector-Jacobian closure on the
output node; ``backward`` replays the recorded graph once, in reverse
topological order, accumulating adjoints into parameter gradients.  The
graph is implicit in the node links, there is no separate tape object.

Conventions:

* float32 is the training precision, float64 the verification precision
  (finite-difference checks are only meaningful in float64).
* Operations never mix dtypes; python scalars are lifted to the tensor's
  dtype, tensor/tensor ops require equal dtypes.
* Any op that produces a NaN or Inf raises ``NumericError`` naming the op.
  Silent non-finite values are never propagated.  The check can be
  suspended (see ``finite_checks``) for callers that validate results
  themselves, e.g. per-candidate planner diagnostics.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, InvariantError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "ParamStore",
    "DiagGaussian",
    "no_grad",
    "finite_checks",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "bmm",
    "transpose",
    "transpose_last2",
    "conv2d",
    "pad2d",
    "upsample2x",
    "exp",
    "log",
    "tanh",
    "elu",
    "clamp",
    "reduce_sum",
    "mean",
    "logsumexp",
    "reshape",
    "concat",
    "take_rows",
    "narrow",
    "reparam_sample",
    "kl_diag_gaussian",
    "backward",
    "grad_check",
]

_grad_enabled = True
_checks_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; forward values only."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def finite_checks(enabled: bool):
    """Temporarily enable/disable the per-op NaN/Inf checks."""
    global _checks_enabled
    prev = _checks_enabled
    _checks_enabled = enabled
    try:
        yield
    finally:
        _checks_enabled = prev


def _all_finite(a: np.ndarray) -> bool:
    if a.size <= 4096:
        return bool(np.isfinite(a).all())
    # One-pass reduction; any NaN/Inf poisons the sum.  Values in this
    # package are far too small for a finite sum to overflow.
    return bool(np.isfinite(a.sum()))


def _check(a: np.ndarray, op: str) -> None:
    if _checks_enabled and not _all_finite(a):
        raise NumericError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A numpy array plus the links needed to replay adjoints.

    ``grad`` is an array only for parameters (allocated by ``ParamStore``);
    interior nodes keep their transient adjoints in ``backward``'s work
    dict and never touch ``grad``.
    """

    __slots__ = ("data", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, parents=(), vjp=None, op="leaf"):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = parents if _grad_enabled else ()
        self._vjp = vjp if _grad_enabled else None
        self._op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self._op!r}, shape={self.shape}, dtype={self.data.dtype})"

    # Operator sugar; everything funnels through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return mean(self, axis=axis)


def constant(value, dtype=np.float32) -> Tensor:
    """Wrap data as a leaf with no gradient."""
    return Tensor(np.asarray(value, dtype=dtype))


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    if isinstance(a, Tensor):
        b = _lift(b, a.dtype)
    else:
        a = _lift(a, b.dtype)
    if a.data.dtype != b.data.dtype:
        raise InvariantError(
            f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}; cast explicitly"
        )
    return a, b


def _make(data, parents, vjp, op) -> Tensor:
    _check(data, op)
    return Tensor(data, parents=parents, vjp=vjp, op=op)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum an adjoint down to the pre-broadcast shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    with np.errstate(all="ignore"):
        out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), vjp, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp, "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _make(out, (a,), vjp, "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), vjp, "tanh")


def elu(a: Tensor) -> Tensor:
    """Exponential linear unit with alpha=1; C1-smooth, safe for FD checks.

    Uses the branch-free identities elu(x) = max(x,0) + exp(min(x,0)) - 1
    and elu'(x) = exp(min(x,0)).
    """
    ex = np.exp(np.minimum(a.data, 0.0))
    out = np.maximum(a.data, 0.0) + ex
    out -= 1.0

    def vjp(g):
        return (g * ex,)

    return _make(out, (a,), vjp, "elu")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Hard clip; gradient passes only strictly inside (lo, hi)."""
    out = np.clip(a.data, lo, hi)

    def vjp(g):
        return (g * ((a.data > lo) & (a.data < hi)).astype(a.data.dtype),)

    return _make(out, (a,), vjp, "clamp")


# ---------------------------------------------------------------------------
# linear algebra


def _needs_adjoint(t: Tensor) -> bool:
    return t.grad is not None or t._vjp is not None


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return (
            g @ b.data.T if _needs_adjoint(a) else None,
            a.data.T @ g if _needs_adjoint(b) else None,
        )

    return _make(out, (a, b), vjp, "matmul")


def bmm(a, b) -> Tensor:
    """Batched matrix product over a leading axis: (T,m,k) @ (T,k,n)."""
    a, b = _pair(a, b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm needs (T,m,k) and (T,k,n) operands, got {a.shape} and {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return (
            g @ b.data.transpose(0, 2, 1) if _needs_adjoint(a) else None,
            a.data.transpose(0, 2, 1) @ g if _needs_adjoint(b) else None,
        )

    return _make(out, (a, b), vjp, "bmm")


def transpose_last2(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose_last2 needs >= 2 axes, got shape {a.shape}")
    out = np.ascontiguousarray(a.data.swapaxes(-1, -2))

    def vjp(g):
        return (g.swapaxes(-1, -2),)

    return _make(out, (a,), vjp, "transpose_last2")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d operand, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def _im2col(xd: np.ndarray, kh: int, kw: int, stride: int):
    """(B,C,H,W) -> patch matrix (B*Ho*Wo, C*kh*kw) plus output extents."""
    B, C, H, W = xd.shape
    Ho = (H - kh) // stride + 1
    Wo = (W - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                     # B,C,Ho,Wo,kh,kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    return cols, Ho, Wo


def _channel_major(a):
    """(B,C,H,W) -> contiguous (C,B,H,W); one copy, reused by every tap."""
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3))


def _tap_fwd(xd, kd):
    """Stride-1 convolution as kh*kw single large GEMMs.

    The input is transposed once to channel-major (C, B*H*W); each tap is
    then one (O,C) x (C, B*H*W) product whose output window accumulates
    into the result.  No im2col gather, no tiny batched GEMM calls.
    """
    B, C, H, W = xd.shape
    O, _, kh, kw = kd.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    xc = _channel_major(xd)
    xf = xc.reshape(C, B * H * W)
    ktaps = np.ascontiguousarray(kd.transpose(2, 3, 0, 1))  # taps must be BLAS-contiguous
    acc = np.zeros((O, B, Ho, Wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            tmp = (ktaps[i, j] @ xf).reshape(O, B, H, W)
            acc += tmp[:, :, i:i + Ho, j:j + Wo]
    return np.ascontiguousarray(acc.transpose(1, 0, 2, 3)), xc


def _tap_bwd_input(gd, kd, H, W):
    B, O, Ho, Wo = gd.shape
    _, C, kh, kw = kd.shape
    gf = _channel_major(gd).reshape(O, B * Ho * Wo)
    ktaps_t = np.ascontiguousarray(kd.transpose(2, 3, 1, 0))  # kh,kw,C,O
    gx = np.zeros((C, B, H, W), dtype=gd.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + Ho, j:j + Wo] += (ktaps_t[i, j] @ gf).reshape(C, B, Ho, Wo)
    return np.ascontiguousarray(gx.transpose(1, 0, 2, 3))


def _tap_bwd_kernels(xc, gd):
    """Kernel gradients per tap via a zero-embedded, channel-major output
    gradient; the input is contracted as one transposed view per GEMM."""
    B, O, Ho, Wo = gd.shape
    C, H, W = xc.shape[0], xc.shape[2], xc.shape[3]
    kh, kw = H - Ho + 1, W - Wo + 1
    gt = _channel_major(gd)                       # O,B,Ho,Wo
    x_flat_t = xc.reshape(C, B * H * W).T         # view; BLAS takes it transposed
    gz = np.zeros((O, B, H, W), dtype=gd.dtype)
    gk = np.empty((O, C, kh, kw), dtype=gd.dtype)
    for i in range(kh):
        for j in range(kw):
            gz[...] = 0.0
            gz[:, :, i:i + Ho, j:j + Wo] = gt
            gk[:, :, i, j] = gz.reshape(O, B * H * W) @ x_flat_t
    return gk


def conv2d(x, kernels, stride: int = 1, bias=None) -> Tensor:
    """Valid (no padding) cross-correlation, optional fused per-channel bias.

    ``x`` is (C,H,W) for a single image or (B,C,H,W) for a batch;
    ``kernels`` is (O,C,kh,kw), ``bias`` (O,).  Output spatial extent is
    floor((H-kh)/stride)+1 per side.
    """
    x, kernels = _pair(x, kernels)
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    single = x.ndim == 3
    if x.ndim not in (3, 4) or kernels.ndim != 4:
        raise ShapeError(f"conv2d needs (B,C,H,W)/(C,H,W) input and (O,C,kh,kw) kernels, got {x.shape} and {kernels.shape}")
    xd = x.data[None] if single else x.data
    B, C, H, W = xd.shape
    O, Ck, kh, kw = kernels.shape
    if Ck != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    if kh > H or kw > W:
        raise ShapeError(f"conv2d kernel {kernels.shape} larger than input {x.shape}")
    if bias is not None:
        bias = _lift(bias, x.data.dtype)
        if bias.shape != (O,):
            raise ShapeError(f"conv2d bias shape {bias.shape} != ({O},)")

    taps = stride == 1
    if taps:
        out4, xc = _tap_fwd(xd, kernels.data)
        cols = None
        Ho, Wo = out4.shape[2], out4.shape[3]
        if bias is not None:
            out4 += bias.data[None, :, None, None]
    else:
        cols, Ho, Wo = _im2col(xd, kh, kw, stride)
        kmat = kernels.data.reshape(O, C * kh * kw).T       # C*kh*kw, O
        flat = cols @ kmat
        if bias is not None:
            flat += bias.data
        # materialise contiguously so downstream elementwise ops stay fast
        out4 = np.ascontiguousarray(flat.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))
    out = out4[0] if single else out4

    def grad_strided_input(gmat):
        gcols = (gmat @ kernels.data.reshape(O, C * kh * kw)).reshape(B, Ho, Wo, C, kh, kw)
        gcols = np.ascontiguousarray(gcols.transpose(0, 3, 1, 2, 4, 5))  # B,C,Ho,Wo,kh,kw
        gx = np.zeros_like(xd)
        hspan = stride * (Ho - 1) + 1
        wspan = stride * (Wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + hspan:stride, j:j + wspan:stride] += gcols[:, :, :, :, i, j]
        return gx

    def vjp(g):
        gd = g[None] if single else g
        if taps:
            gk = _tap_bwd_kernels(xc, gd) if _needs_adjoint(kernels) else None
            gx = _tap_bwd_input(gd, kernels.data, H, W) if _needs_adjoint(x) else None
            gb = gd.sum(axis=(0, 2, 3)) if bias is not None and _needs_adjoint(bias) else None
        else:
            gmat = gd.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
            gk = (cols.T @ gmat).T.reshape(O, C, kh, kw) if _needs_adjoint(kernels) else None
            gx = grad_strided_input(gmat) if _needs_adjoint(x) else None
            gb = gmat.sum(axis=0) if bias is not None and _needs_adjoint(bias) else None
        if gx is not None and single:
            gx = gx[0]
        if bias is None:
            return gx, gk
        return gx, gk, gb

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return _make(out, parents, vjp, "conv2d")


def depth_to_space(x: Tensor, factor: int = 2) -> Tensor:
    """Rearrange (B, C*r*r, H, W) into (B, C, H*r, W*r) (sub-pixel upsampling)."""
    r = int(factor)
    if x.ndim != 4 or x.shape[1] % (r * r) != 0:
        raise ShapeError(f"depth_to_space needs (B, C*{r*r}, H, W), got {x.shape}")
    B, CRR, H, W = x.shape
    C = CRR // (r * r)
    out = (
        x.data.reshape(B, C, r, r, H, W)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(B, C, H * r, W * r)
    )

    def vjp(g):
        back = (
            g.reshape(B, C, H, r, W, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(B, CRR, H, W)
        )
        return (back,)

    return _make(out, (x,), vjp, "depth_to_space")


def pad2d(x: Tensor, padding: int) -> Tensor:
    """Zero padding on the last two axes."""
    p = int(padding)
    if p < 0:
        raise ShapeError(f"pad2d padding must be >= 0, got {padding}")
    width = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    out = np.pad(x.data, width)

    def vjp(g):
        sl = (slice(None),) * (x.ndim - 2) + (slice(p, g.shape[-2] - p), slice(p, g.shape[-1] - p))
        return (g[sl],)

    return _make(out, (x,), vjp, "pad2d")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour doubling of the last two axes."""
    out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)

    def vjp(g):
        s = g.shape
        blocks = g.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2))
        return (blocks.sum(axis=(-3, -1)),)

    return _make(out, (x,), vjp, "upsample2x")


# ---------------------------------------------------------------------------
# reductions and shape ops


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, x.shape),)

    return _make(out, (x,), vjp, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    if n == 0:
        raise ShapeError("mean over an empty axis")
    return mul(reduce_sum(x, axis=axis), float(1.0 / n))


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """Shift-stable log(sum(exp(x))) along one axis.

    Exact for constant vectors: the shifted exponent is exactly zero, so
    logsumexp([a, a]) == a + log(2) with no rounding from the exp.
    """
    if x.size == 0:
        raise ShapeError("logsumexp of an empty tensor")
    ax = axis % x.ndim
    if x.shape[ax] == 0:
        raise ShapeError(f"logsumexp over empty axis {axis} of shape {x.shape}")
    m = np.max(x.data, axis=ax, keepdims=True)
    shifted = np.exp(x.data - m)
    total = shifted.sum(axis=ax, keepdims=True)
    out_keep = m + np.log(total)
    out = np.squeeze(out_keep, axis=ax)

    def vjp(g):
        soft = shifted / total
        return (np.expand_dims(g, ax) * soft,)

    return _make(out, (x,), vjp, "logsumexp")


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), vjp, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of an empty sequence")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(ts), vjp, "concat")


def take_rows(x: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    out = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, (x,), vjp, "take_rows")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    ax = axis % x.ndim
    if start < 0 or start + length > x.shape[ax]:
        raise ShapeError(f"narrow [{start}:{start + length}] outside axis {axis} of shape {x.shape}")
    sl = (slice(None),) * ax + (slice(start, start + length),)
    out = x.data[sl].copy()

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return _make(out, (x,), vjp, "narrow")


# ---------------------------------------------------------------------------
# Gaussian helpers


@dataclass
class DiagGaussian:
    """Diagonal Gaussian as (mean, std) tensors of equal shape."""

    mean: Tensor
    std: Tensor

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ShapeError(f"mean shape {self.mean.shape} != std shape {self.std.shape}")


def reparam_sample(g: DiagGaussian, noise) -> Tensor:
    """mean + noise * std; gradients flow to mean (coeff 1) and std (coeff noise)."""
    noise_t = _lift(noise, g.mean.dtype)
    if noise_t.shape != g.mean.shape:
        raise ShapeError(f"noise shape {noise_t.shape} != mean shape {g.mean.shape}")
    if np.any(g.std.data < 0):
        raise InvariantError("reparam_sample requires elementwise std >= 0")
    return add(g.mean, mul(g.std, noise_t))


def kl_diag_gaussian(p: DiagGaussian, q: DiagGaussian) -> Tensor:
    """KL(p || q) for diagonal Gaussians, summed over all elements.

    Batched inputs sum the per-row divergences; callers that want a mean
    divide by the row count.  Always >= 0 up to float rounding, exactly 0
    for identical inputs.
    """
    if p.mean.shape != q.mean.shape:
        raise ShapeError(f"kl operands differ: {p.mean.shape} vs {q.mean.shape}")
    if np.any(p.std.data <= 0) or np.any(q.std.data <= 0):
        raise InvariantError("kl_diag_gaussian requires strictly positive stds")
    dm = sub(p.mean, q.mean)
    var_q2 = mul(mul(q.std, q.std), 2.0)
    quad = div(add(mul(p.std, p.std), mul(dm, dm)), var_q2)
    per_elem = add(sub(log(q.std), log(p.std)), sub(quad, 0.5))
    return reduce_sum(per_elem)


# ---------------------------------------------------------------------------
# parameters and backward


class ParamStore:
    """Ordered map of named parameters, each a leaf tensor with a gradient
    buffer of identical shape."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise InvariantError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype))
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad[...] = 0

    def num_elements(self) -> int:
        return sum(t.size for t in self._params.values())

    def astype(self, dtype) -> "ParamStore":
        """Copy with a different element precision (for 64-bit checking)."""
        out = ParamStore(dtype)
        for name, t in self._params.items():
            out.add(name, t.data)
        return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, store: ParamStore | None = None) -> None:
    """Accumulate d(loss)/d(param) into every reachable parameter gradient.

    The caller zeroes gradients first; repeated calls add up.  Each
    recorded op's adjoint rule runs exactly once.
    """
    if loss.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(order):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node.grad is not None:
            node.grad += g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            if _checks_enabled and not _all_finite(np.asarray(pg)):
                raise NumericError(f"non-finite gradient out of op '{node._op}'")
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + pg
            else:
                adjoints[key] = pg
    # Unused entries (params not reached) are simply absent; that is fine.


def grad_check(f: Callable[[ParamStore], Tensor], store: ParamStore, eps: float = 1e-5) -> float:
    """Max relative error between backward gradients and central differences.

    ``f`` must be a deterministic scalar function of the store's values.
    Only meaningful in float64; refuse anything else so a passing check
    cannot silently mean "float32 noise happened to stay small".
    """
    if store.dtype != np.float64:
        raise InvariantError("grad_check requires a float64 ParamStore")
    if eps <= 0:
        raise ContractError(f"grad_check eps must be > 0, got {eps}")
    store.zero_grads()
    loss = f(store)
    backward(loss, store)
    analytic = {name: t.grad.copy() for name, t in store.items()}

    worst = 0.0
    with no_grad():
        for name, t in store.items():
            flat = t.data.reshape(-1)
            g_flat = analytic[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(f(store).data)
                flat[i] = orig - eps
                f_minus = float(f(store).data)
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * eps)
                ad = float(g_flat[i])
                err = abs(ad - fd) / max(1e-8, abs(ad) + abs(fd))
                if err > worst:
                    worst = err
    return worst
