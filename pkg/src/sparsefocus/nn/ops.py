"""Differentiable operations for the two autofocus networks.

Convolution is implemented as cross-correlation (the deep-learning
convention) via an im2col lowering: patches are gathered with a small
kh*kw python loop over strided views, and the contraction itself is a
single BLAS matmul. The backward pass mirrors the same loop, scattering
gradients back with += on strided slices, which is safe because each
(i, j) offset touches every padded location at most once.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, EmptySelectionError
from .tensor import Tensor

BCE_EPS = 1e-7


def _as_pair(v) -> tuple:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int):
    """(N, C, Hp, Wp) -> (N, C*kh*kw, oh*ow) without copying per-window."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + oh * stride : stride,
                                  j : j + ow * stride : stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(gcols: np.ndarray, xp_shape: tuple, kh: int, kw: int,
            stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp_shape[:2]
    gxp = np.zeros(xp_shape, dtype=gcols.dtype)
    gcols = gcols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + oh * stride : stride,
                j : j + ow * stride : stride] += gcols[:, :, i, j]
    return gxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlate a batch (N, C, H, W) with kernels (F, C, kh, kw)."""
    n, c, h, w = x.data.shape
    f, ck, kh, kw = weight.data.shape
    if ck != c:
        raise ShapeError(
            f"conv2d channel axis mismatch: input has C={c}, kernel expects C={ck}"
        )
    if bias.data.shape != (f,):
        raise ShapeError(
            f"conv2d bias axis mismatch: kernel has F={f}, bias has shape {bias.data.shape}"
        )
    if h + 2 * padding < kh:
        raise ShapeError(
            f"conv2d height axis too small: H+2*pad={h + 2 * padding} < kh={kh}"
        )
    if w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d width axis too small: W+2*pad={w + 2 * padding} < kw={kw}"
        )

    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)          # (N, K, L)
    wmat = weight.data.reshape(f, c * kh * kw)           # (F, K)
    out = np.matmul(wmat, cols)                          # (N, F, L)
    out += bias.data.reshape(1, f, 1)
    out = out.reshape(n, f, oh, ow)

    xp_shape = xp.shape

    def vjp(g):
        gf = g.reshape(n, f, oh * ow)
        gw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0)
        gw = gw.reshape(weight.data.shape)
        gb = gf.sum(axis=(0, 2))
        gcols = np.matmul(wmat.T, gf)                    # (N, K, L)
        gxp = _col2im(gcols, xp_shape, kh, kw, stride, oh, ow)
        if padding:
            gx = gxp[:, :, padding:-padding, padding:-padding]
        else:
            gx = gxp
        return gx, gw, gb

    return Tensor(out, parents=(x, weight, bias), vjp=vjp)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Train mode normalizes by batch statistics and updates the running
    arrays in place; eval mode is a pure function of the running stats.
    Population (biased) variance is used throughout.
    """
    from ..errors import ConfigError

    if eps <= 0:
        raise ConfigError(f"batchnorm eps must be positive, got {eps}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"batchnorm channel axis mismatch: input has C={c}, "
            f"gamma {gamma.data.shape}, beta {beta.data.shape}"
        )

    xd = x.data
    if training:
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * var.astype(running_var.dtype)
    else:
        mean = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def vjp(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gscaled = g * gamma.data.reshape(1, c, 1, 1)
        if training:
            mean_g = gscaled.mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            mean_gx = (gscaled * xhat).mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            gx = inv_std.reshape(1, c, 1, 1) * (gscaled - mean_g - xhat * mean_gx)
        else:
            gx = gscaled * inv_std.reshape(1, c, 1, 1)
        return gx, gg, gb

    return Tensor(out, parents=(x, gamma, beta), vjp=vjp)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0), parents=(x,),
                  vjp=lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor(s, parents=(x,), vjp=lambda g: (g * s * (1.0 - s),))


def hardswish(x: Tensor) -> Tensor:
    # x * clip(x + 3, 0, 6) / 6
    xd = x.data
    inner = np.clip(xd + 3.0, 0.0, 6.0)
    out = xd * inner / 6.0

    def vjp(g):
        d = np.where(xd <= -3.0, 0.0, np.where(xd >= 3.0, 1.0, (2.0 * xd + 3.0) / 6.0))
        return (g * d.astype(xd.dtype),)

    return Tensor(out, parents=(x,), vjp=vjp)


ACTIVATIONS = {"relu": relu, "hardswish": hardswish, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation kind: {kind!r}") from None


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def pool2d(x: Tensor, kind: str, window, stride=None) -> Tensor:
    """Max or average pooling with window (wh, ww) and stride (sh, sw)."""
    wh, ww = _as_pair(window)
    sh, sw = _as_pair(stride if stride is not None else window)
    n, c, h, w = x.data.shape
    if wh > h or ww > w:
        raise ShapeError(
            f"pool2d window {wh}x{ww} exceeds spatial extent {h}x{w}"
        )
    oh = (h - wh) // sh + 1
    ow = (w - ww) // sw + 1
    stack = np.empty((wh * ww, n, c, oh, ow), dtype=x.data.dtype)
    for i in range(wh):
        for j in range(ww):
            stack[i * ww + j] = x.data[:, :, i : i + oh * sh : sh,
                                       j : j + ow * sw : sw]
    if kind == "max":
        arg = stack.argmax(axis=0)
        out = np.take_along_axis(stack, arg[None], axis=0)[0]

        def vjp(g):
            gx = np.zeros_like(x.data)
            for k in range(wh * ww):
                i, j = divmod(k, ww)
                sel = (arg == k) * g
                gx[:, :, i : i + oh * sh : sh, j : j + ow * sw : sw] += sel
            return (gx,)

    elif kind == "avg":
        out = stack.mean(axis=0)
        inv = 1.0 / (wh * ww)

        def vjp(g):
            gx = np.zeros_like(x.data)
            gi = g * inv
            for i in range(wh):
                for j in range(ww):
                    gx[:, :, i : i + oh * sh : sh, j : j + ow * sw : sw] += gi
            return (gx,)

    else:
        raise ValueError(f"unknown pool kind: {kind!r}")
    return Tensor(out, parents=(x,), vjp=vjp)


def global_maxpool2d(x: Tensor) -> Tensor:
    """Max over the full spatial extent -> (N, C)."""
    n, c, h, w = x.data.shape
    flat = x.data.reshape(n, c, h * w)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

    def vjp(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[:, :, None], g[:, :, None], axis=2)
        return (gflat.reshape(x.data.shape),)

    return Tensor(out, parents=(x,), vjp=vjp)


def avgpool_to_grid(x: Tensor, grid: int) -> Tensor:
    """Adaptive average pooling onto a grid x grid output.

    Output cell (i, j) averages input rows [floor(i*H/G), ceil((i+1)*H/G))
    and the analogous columns. When H == G this is the identity.
    """
    n, c, h, w = x.data.shape
    if h == grid and w == grid:
        return Tensor(x.data, parents=(x,), vjp=lambda g: (g,))
    rb = [(int(np.floor(i * h / grid)), int(np.ceil((i + 1) * h / grid)))
          for i in range(grid)]
    cb = [(int(np.floor(j * w / grid)), int(np.ceil((j + 1) * w / grid)))
          for j in range(grid)]
    out = np.empty((n, c, grid, grid), dtype=x.data.dtype)
    for i, (r0, r1) in enumerate(rb):
        for j, (c0, c1) in enumerate(cb):
            out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def vjp(g):
        gx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rb):
            for j, (c0, c1) in enumerate(cb):
                area = (r1 - r0) * (c1 - c0)
                gx[:, :, r0:r1, c0:c1] += g[:, :, i : i + 1, j : j + 1] / area
        return (gx,)

    return Tensor(out, parents=(x,), vjp=vjp)


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map (N, D) @ (O, D).T + (O,)."""
    if x.data.ndim != 2:
        raise ShapeError(f"linear expects a 2-D input, got shape {x.data.shape}")
    n, d = x.data.shape
    o, dw = weight.data.shape
    if d != dw:
        raise ShapeError(
            f"linear inner axis mismatch: input D={d}, weight expects D={dw}"
        )
    out = x.data @ weight.data.T + bias.data

    def vjp(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return Tensor(out, parents=(x, weight, bias), vjp=vjp)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss_bce(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to
    [BCE_EPS, 1 - BCE_EPS]; the raw formula is undefined at 0 and 1."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"loss_bce shape mismatch: pred {pred.data.shape} vs target {target.data.shape}"
        )
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    unclamped = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)
    t = target.data
    n = p.size
    val = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean()

    def vjp(g):
        gp = g * (-(t / p) + (1.0 - t) / (1.0 - p)) / n
        return (gp * unclamped, None)

    return Tensor(np.asarray(val, dtype=p.dtype), parents=(pred, target), vjp=vjp)


def loss_l2(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over the contributing patches."""
    if pred.data.size == 0:
        raise EmptySelectionError("loss_l2 requires at least one element")
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"loss_l2 shape mismatch: pred {pred.data.shape} vs target {target.data.shape}"
        )
    diff = pred.data - target.data
    m = diff.size
    val = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)

    def vjp(g):
        return (g * 2.0 * diff / m, None)

    return Tensor(val, parents=(pred, target), vjp=vjp)
