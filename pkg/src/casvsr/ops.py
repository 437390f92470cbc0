"""Image and network operations on the autodiff tensor.

Conventions, frozen for reproducibility:

* conv2d is cross-correlation (no kernel flip), the deep-learning convention.
* bilinear_warp displacement is (dx, dy) in pixels: channel 0 moves along
  width, channel 1 along height. Samples outside the frame clamp to the
  border. The flow itself is treated as a constant (no gradient).
* bicubic_resize uses the Catmull-Rom kernel (a = -0.5) with align-centers
  sampling, edge-clamped taps, weights computed in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, require_finite


# ---------------------------------------------------------------------------
# linear / conv
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w.T (+ b) over the last axis of x; w is [out, in]."""
    y = x @ w.transpose(1, 0)
    if b is not None:
        y = y + b
    return y


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-D convolution of one image [C,H,W] with weight [Co,Ci,k,k].

    Output extent is (H + 2*padding - k)//stride + 1 per spatial axis.
    """
    x = Tensor.astensor(x)
    weight = Tensor.astensor(weight)
    bias = Tensor.astensor(bias)
    if x.ndim != 3 or weight.ndim != 4:
        raise ValueError(f"conv2d expects x[C,H,W], weight[Co,Ci,k,k]; got {x.shape}, {weight.shape}")
    co, ci, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd extent, got {kh}x{kw}")
    if ci != x.shape[0]:
        raise ValueError(f"conv2d channel mismatch: weight expects {ci}, input has {x.shape[0]}")
    if bias.shape != (co,):
        raise ValueError(f"conv2d bias must be [{co}], got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d requires stride >= 1 and padding >= 0")
    require_finite("conv2d input", x.data)
    require_finite("conv2d weight", weight.data)

    k, s, p = kh, stride, padding
    _, h, w_in = x.shape
    h_out = (h + 2 * p - k) // s + 1
    w_out = (w_in + 2 * p - k) // s + 1
    if h_out < 1 or w_out < 1:
        raise ValueError("conv2d output would be empty")

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]  # [Ci,H',W',k,k]
    out = np.tensordot(weight.data, win, axes=([1, 2, 3], [0, 3, 4]))
    out = (out + bias.data[:, None, None]).astype(np.float32)

    def backward(g):
        weight._accumulate(np.tensordot(g, win, axes=([1, 2], [1, 2])))
        bias._accumulate(g.sum(axis=(1, 2)))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for ky in range(k):
                for kx in range(k):
                    patch = np.tensordot(weight.data[:, :, ky, kx], g, axes=([0], [0]))
                    dxp[:, ky : ky + s * h_out : s, kx : kx + s * w_out : s] += patch
            x._accumulate(dxp[:, p : p + h, p : p + w_in] if p else dxp)

    return Tensor._from_op(out, (x, weight, bias), backward)


def reflect_index(n: int, m: int) -> np.ndarray:
    """Source indices for reflect-padding a length-n axis out to length m."""
    idx = np.arange(m, dtype=np.int64)
    if n == 1:
        return np.zeros(m, dtype=np.int64)
    period = 2 * n - 2
    folded = idx % period
    return np.where(folded < n, folded, period - folded)


def reflect_pad2d(x: Tensor, pad: int) -> Tensor:
    """Reflect-pad the two trailing axes of [C,H,W] by ``pad`` on each side.

    Implemented as an index gather, so constancy is preserved exactly and
    gradients scatter back through the reflection.
    """
    x = Tensor.astensor(x)
    c, h, w = x.shape
    rows = np.abs(np.arange(-pad, h + pad))
    rows = np.where(rows >= h, 2 * (h - 1) - rows, rows) if h > 1 else np.zeros(h + 2 * pad, np.int64)
    cols = np.abs(np.arange(-pad, w + pad))
    cols = np.where(cols >= w, 2 * (w - 1) - cols, cols) if w > 1 else np.zeros(w + 2 * pad, np.int64)
    site = (rows[:, None] * w + cols[None, :]).reshape(-1)
    return x.reshape(c, h * w)[:, site].reshape(c, h + 2 * pad, w + 2 * pad)


# ---------------------------------------------------------------------------
# softmax / normalization
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    x = Tensor.astensor(x)
    require_finite("softmax input", x.data)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)

    def backward(g):
        # dx = y * (g - sum(g*y))
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return Tensor._from_op(y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize ``axis`` to zero mean / unit variance, then scale and shift."""
    x = Tensor.astensor(x)
    gamma = Tensor.astensor(gamma)
    beta = Tensor.astensor(beta)
    n = x.shape[axis]
    if n == 0:
        raise ValueError("layer_norm over a zero-length axis")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ValueError(f"layer_norm gamma/beta must be [{n}], got {gamma.shape}, {beta.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = n
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    xhat = xc / (var + np.float32(eps)).sqrt()
    return xhat * gamma.reshape(bshape) + beta.reshape(bshape)


# ---------------------------------------------------------------------------
# pixel shuffle
# ---------------------------------------------------------------------------


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """[C*r*r, H, W] -> [C, r*H, r*W]; out[c, h*r+i, w*r+j] = in[c*r*r+i*r+j, h, w]."""
    x = Tensor.astensor(x)
    ct, h, w = x.shape
    if r < 1 or ct % (r * r) != 0:
        raise ValueError(f"pixel_shuffle: {ct} channels not divisible by r**2 = {r * r}")
    c = ct // (r * r)
    return x.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_shuffle`."""
    x = Tensor.astensor(x)
    c, hr, wr = x.shape
    if r < 1 or hr % r != 0 or wr % r != 0:
        raise ValueError(f"pixel_unshuffle: extents {hr}x{wr} not divisible by r = {r}")
    h, w = hr // r, wr // r
    return x.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(c * r * r, h, w)


# ---------------------------------------------------------------------------
# warping / resampling
# ---------------------------------------------------------------------------


def bilinear_warp(x: Tensor, flow) -> Tensor:
    """Sample x[C,H,W] at (col + dx, row + dy) with border clamping.

    ``flow`` is [2,H,W]: flow[0] = dx, flow[1] = dy. Gradients flow to x
    only; the displacement field is a constant from autodiff's view.
    """
    x = Tensor.astensor(x)
    fl = flow.data if isinstance(flow, Tensor) else np.asarray(flow, dtype=np.float32)
    c, h, w = x.shape
    if fl.shape != (2, h, w):
        raise ValueError(f"flow must be [2,{h},{w}], got {fl.shape}")
    require_finite("warp flow", fl)

    gy, gx = np.meshgrid(np.arange(h, dtype=np.float32), np.arange(w, dtype=np.float32), indexing="ij")
    cx = np.clip(gx + fl[0], 0.0, w - 1.0)
    cy = np.clip(gy + fl[1], 0.0, h - 1.0)
    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (cx - x0).astype(np.float32)
    fy = (cy - y0).astype(np.float32)

    flat = x.data.reshape(c, h * w)
    i00 = (y0 * w + x0).ravel()
    i01 = (y0 * w + x1).ravel()
    i10 = (y1 * w + x0).ravel()
    i11 = (y1 * w + x1).ravel()
    w00 = ((1.0 - fy) * (1.0 - fx)).ravel().astype(np.float32)
    w01 = ((1.0 - fy) * fx).ravel().astype(np.float32)
    w10 = (fy * (1.0 - fx)).ravel().astype(np.float32)
    w11 = (fy * fx).ravel().astype(np.float32)

    out = (flat[:, i00] * w00 + flat[:, i01] * w01 + flat[:, i10] * w10 + flat[:, i11] * w11)
    out = out.reshape(c, h, w).astype(np.float32)

    def backward(g):
        gf = g.reshape(c, h * w)
        dflat = np.zeros_like(flat)
        np.add.at(dflat, (slice(None), i00), gf * w00)
        np.add.at(dflat, (slice(None), i01), gf * w01)
        np.add.at(dflat, (slice(None), i10), gf * w10)
        np.add.at(dflat, (slice(None), i11), gf * w11)
        x._accumulate(dflat.reshape(c, h, w))

    return Tensor._from_op(out, (x,), backward)


def _cubic_kernel(u: np.ndarray) -> np.ndarray:
    # Catmull-Rom, a = -0.5
    a = -0.5
    au = np.abs(u)
    w = np.zeros_like(au)
    near = au <= 1.0
    far = (au > 1.0) & (au < 2.0)
    w[near] = ((a + 2.0) * au[near] - (a + 3.0)) * au[near] ** 2 + 1.0
    w[far] = a * (au[far] ** 3 - 5.0 * au[far] ** 2 + 8.0 * au[far] - 4.0)
    return w


def _resize_matrix(n_in: int, n_out: int, scale: float) -> np.ndarray:
    """Dense [n_out, n_in] bicubic sampling matrix, align-centers convention."""
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) / scale - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for m in (-1, 0, 1, 2):
        idx = np.clip(base + m, 0, n_in - 1)
        wgt = _cubic_kernel(src - (base + m))
        np.add.at(mat, (dst.astype(np.int64), idx), wgt)
    return mat


def bicubic_resize_array(arr: np.ndarray, scale: float) -> np.ndarray:
    """Bicubic resize of [C,H,W] (or [H,W]) by ``scale``; float32 result."""
    if scale <= 0:
        raise ValueError("bicubic_resize scale must be positive")
    squeeze = arr.ndim == 2
    a = arr[None] if squeeze else arr
    _, h, w = a.shape
    h2 = int(round(h * scale))
    w2 = int(round(w * scale))
    if h2 < 1 or w2 < 1:
        raise ValueError(f"bicubic_resize to degenerate size {h2}x{w2}")
    mr = _resize_matrix(h, h2, scale)
    mc = _resize_matrix(w, w2, scale)
    out = np.einsum("oh,chw,pw->cop", mr, a.astype(np.float64), mc)
    out = out.astype(np.float32)
    return out[0] if squeeze else out


def bicubic_resize(x: Tensor, scale: float) -> Tensor:
    """Tensor wrapper over :func:`bicubic_resize_array` (no gradient path)."""
    x = Tensor.astensor(x)
    require_finite("bicubic_resize input", x.data)
    return Tensor(bicubic_resize_array(x.data, scale))


# ---------------------------------------------------------------------------
# losses / gradients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CharbonnierConfig:
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("Charbonnier epsilon must be positive")


def charbonnier_loss(sr: Tensor, hr: Tensor, cfg: CharbonnierConfig = CharbonnierConfig()) -> Tensor:
    """Global-form penalty sqrt(sum((hr - sr)**2) + eps**2); a scalar >= eps."""
    sr = Tensor.astensor(sr)
    hr = Tensor.astensor(hr)
    if sr.shape != hr.shape:
        raise ValueError(f"charbonnier_loss shape mismatch: {sr.shape} vs {hr.shape}")
    eps = np.float32(cfg.epsilon)
    d = hr - sr
    return ((d * d).sum() + eps * eps).sqrt()


def charbonnier_loss_mean(sr: Tensor, hr: Tensor, cfg: CharbonnierConfig = CharbonnierConfig()) -> Tensor:
    """Per-pixel mean sqrt(d**2 + eps**2); scale-free variant for training."""
    sr = Tensor.astensor(sr)
    hr = Tensor.astensor(hr)
    if sr.shape != hr.shape:
        raise ValueError(f"charbonnier_loss_mean shape mismatch: {sr.shape} vs {hr.shape}")
    eps = np.float32(cfg.epsilon)
    d = hr - sr
    return ((d * d + eps * eps).sqrt()).mean()


def grad(fn, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar-valued computation with respect to named tensors.

    Discrete selections inside the graph (patch-displacement search,
    scan-order construction) are gradient barriers: they contribute zero.
    """
    for p in params.values():
        p.zero_grad()
        p.requires_grad = True
    out = fn()
    if not isinstance(out, Tensor) or out.size != 1:
        raise ValueError("grad expects the computation to produce a scalar Tensor")
    require_finite("grad output", out.data)
    if out.requires_grad:
        out.backward()
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
