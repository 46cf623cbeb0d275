"""Differentiable operations: convolutions, dense layers, activations, losses.

Spatial ops accept a single sample (C, H, W) or an explicit leading batch
dimension (N, C, H, W); dense accepts (F,) or (B, F). Nothing broadcasts
implicitly -- every shape disagreement raises :class:`ShapeError` naming the
offending dimension.

Convolutions run as im2col + one GEMM per direction. ``transposed_conv2d`` is
the exact linear adjoint of ``conv2d`` for matching hyperparameters:
``<conv2d(x, k), y> == <x, transposed_conv2d(y, k)>``.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .engine import ShapeError, Tensor, active_tape

__all__ = [
    "conv2d",
    "transposed_conv2d",
    "dense",
    "relu",
    "concat_channels",
    "reshape",
    "transpose",
    "add",
    "scale",
    "mse_loss",
    "softmax_cross_entropy",
    "smooth_l1_loss",
    "conv2d_output_size",
    "transposed_conv2d_output_size",
]


def _record(out: Tensor, inputs, backward) -> Tensor:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, backward)
    return out


def conv2d_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def transposed_conv2d_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """(N, C, H, W) -> columns (C*kh*kw, N*Ho*Wo), plus output spatial dims."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (x.shape[2] - kh) // stride + 1
    wo = (x.shape[3] - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3))
    return cols.reshape(c * kh * kw, n * ho * wo), ho, wo


def _col2im(cols: np.ndarray, n: int, c: int, h: int, w: int,
            kh: int, kw: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back to (N, C, H, W)."""
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _as_batched(x: Tensor, op: str):
    if x.data.ndim == 3:
        return x.data[None], True
    if x.data.ndim == 4:
        return x.data, False
    raise ShapeError(f"{op} expects a (C,H,W) or (N,C,H,W) input, got rank {x.data.ndim}")


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor],
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N?,C,H,W) with an (O,C,Kh,Kw) kernel."""
    xd, squeeze = _as_batched(x, "conv2d")
    kd = kernel.data
    if kd.ndim != 4:
        raise ShapeError(f"conv2d kernel must be rank 4 (O,C,Kh,Kw), got rank {kd.ndim}")
    n, c, h, w = xd.shape
    o, kc, kh, kw = kd.shape
    if kc != c:
        raise ShapeError(f"conv2d kernel input-channel dim {kc} != input channel dim {c}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d kernel spatial dims ({kh}x{kw}) exceed padded input ({h + 2 * padding}x{w + 2 * padding})"
        )
    if bias is not None and bias.data.shape != (o,):
        raise ShapeError(f"conv2d bias shape {bias.data.shape} != ({o},)")

    cols, ho, wo = _im2col(xd, kh, kw, stride, padding)
    km = kd.reshape(o, -1)
    out2d = km @ cols
    if bias is not None:
        out2d += bias.data[:, None]
    out_data = np.ascontiguousarray(
        out2d.reshape(o, n, ho * wo).transpose(1, 0, 2)
    ).reshape(n, o, ho, wo)
    if squeeze:
        out_data = out_data[0]

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))

    def backward(g: np.ndarray):
        gb = g[None] if squeeze else g
        g2d = np.ascontiguousarray(gb.transpose(1, 0, 2, 3)).reshape(o, -1)
        gx = gk = gbias = None
        if x.requires_grad:
            dcols = km.T @ g2d
            gx = _col2im(dcols, n, c, h, w, kh, kw, stride, padding, ho, wo)
            if squeeze:
                gx = gx[0]
        if kernel.requires_grad:
            gk = (g2d @ cols.T).reshape(kd.shape)
        if bias is not None and bias.requires_grad:
            gbias = g2d.sum(axis=1)
        return (gx, gk) if bias is None else (gx, gk, gbias)

    return _record(out, inputs, backward)


def transposed_conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor],
                      stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of (N?,C,H,W) with a (C,O,Kh,Kw) kernel."""
    xd, squeeze = _as_batched(x, "transposed_conv2d")
    kd = kernel.data
    if kd.ndim != 4:
        raise ShapeError(f"transposed_conv2d kernel must be rank 4 (C,O,Kh,Kw), got rank {kd.ndim}")
    n, c, h, w = xd.shape
    kc, o, kh, kw = kd.shape
    if kc != c:
        raise ShapeError(f"transposed_conv2d kernel input-channel dim {kc} != input channel dim {c}")
    ho = transposed_conv2d_output_size(h, kh, stride, padding)
    wo = transposed_conv2d_output_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"transposed_conv2d output spatial dims ({ho}x{wo}) are non-positive")
    if bias is not None and bias.data.shape != (o,):
        raise ShapeError(f"transposed_conv2d bias shape {bias.data.shape} != ({o},)")

    # Forward is the adjoint of conv2d(out->in): scatter kernel-weighted inputs.
    x2d = np.ascontiguousarray(xd.transpose(1, 0, 2, 3)).reshape(c, -1)
    km = kd.reshape(c, -1)  # (C, O*kh*kw)
    cols = km.T @ x2d       # (O*kh*kw, N*h*w)
    out_data = _col2im(cols, n, o, ho, wo, kh, kw, stride, padding, h, w)
    if bias is not None:
        out_data += bias.data[None, :, None, None]
    if squeeze:
        out_data = out_data[0]

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))

    def backward(g: np.ndarray):
        gb = g[None] if squeeze else g
        gcols, gho, gwo = _im2col(gb, kh, kw, stride, padding)
        assert (gho, gwo) == (h, w)
        gx = gk = gbias = None
        if x.requires_grad:
            gx2d = km @ gcols
            gx = np.ascontiguousarray(
                gx2d.reshape(c, n, h * w).transpose(1, 0, 2)
            ).reshape(n, c, h, w)
            if squeeze:
                gx = gx[0]
        if kernel.requires_grad:
            gk = (x2d @ gcols.T).reshape(kd.shape)
        if bias is not None and bias.requires_grad:
            gbias = gb.sum(axis=(0, 2, 3))
        return (gx, gk) if bias is None else (gx, gk, gbias)

    return _record(out, inputs, backward)


def dense(x: Tensor, weights: Tensor, bias: Optional[Tensor]) -> Tensor:
    """Affine map of (F,) or (B,F) input by (M,F) weights plus (M,) bias."""
    xd = x.data
    wd = weights.data
    if wd.ndim != 2:
        raise ShapeError(f"dense weights must be rank 2 (M,N), got rank {wd.ndim}")
    single = xd.ndim == 1
    if single:
        xd = xd[None]
    if xd.ndim != 2:
        raise ShapeError(f"dense input must be rank 1 or 2, got rank {x.data.ndim}")
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"dense input feature dim {xd.shape[1]} != weights input dim {wd.shape[1]}")
    if bias is not None and bias.data.shape != (wd.shape[0],):
        raise ShapeError(f"dense bias shape {bias.data.shape} != ({wd.shape[0]},)")

    out_data = xd @ wd.T
    if bias is not None:
        out_data = out_data + bias.data[None, :]
    if single:
        out_data = out_data[0]

    inputs = (x, weights) if bias is None else (x, weights, bias)
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))

    def backward(g: np.ndarray):
        gb = g[None] if single else g
        gx = gb @ wd if x.requires_grad else None
        if gx is not None and single:
            gx = gx[0]
        gw = gb.T @ xd if weights.requires_grad else None
        gbias = gb.sum(axis=0) if bias is not None and bias.requires_grad else None
        return (gx, gw) if bias is None else (gx, gw, gbias)

    return _record(out, inputs, backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at 0 is 0."""
    out = Tensor(np.maximum(x.data, 0), requires_grad=x.requires_grad)

    def backward(g: np.ndarray):
        return (g * (x.data > 0),)

    return _record(out, (x,), backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Stack feature maps along the channel axis; spatial dims must agree."""
    if not xs:
        raise ShapeError("concat_channels needs at least one input")
    ranks = {t.data.ndim for t in xs}
    if ranks not in ({3}, {4}):
        raise ShapeError(f"concat_channels inputs must share rank 3 or 4, got ranks {sorted(ranks)}")
    axis = 0 if xs[0].data.ndim == 3 else 1
    spatial = xs[0].data.shape[axis + 1:]
    for i, t in enumerate(xs):
        if t.data.shape[axis + 1:] != spatial:
            raise ShapeError(
                f"concat_channels input {i} spatial dims {t.data.shape[axis + 1:]} != {spatial}"
            )
    out = Tensor(np.concatenate([t.data for t in xs], axis=axis),
                 requires_grad=any(t.requires_grad for t in xs))
    sizes = [t.data.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _record(out, tuple(xs), backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)

    def backward(g: np.ndarray):
        return (g.reshape(x.data.shape),)

    return _record(out, (x,), backward)


def transpose(x: Tensor, axes: tuple) -> Tensor:
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)), requires_grad=x.requires_grad)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def backward(g: np.ndarray):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _record(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g: np.ndarray):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    return _record(out, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    out = Tensor(x.data * factor, requires_grad=x.requires_grad)

    def backward(g: np.ndarray):
        return (g * factor,)

    return _record(out, (x,), backward)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = Tensor(np.asarray((diff * diff).sum() / n, dtype=pred.data.dtype),
                 requires_grad=pred.requires_grad or target.requires_grad)

    def backward(g: np.ndarray):
        base = (2.0 / n) * diff * g
        return (base if pred.requires_grad else None,
                -base if target.requires_grad else None)

    return _record(out, (pred, target), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray,
                          weights: Optional[np.ndarray] = None) -> Tensor:
    """Weighted mean negative log-softmax of the true class per row.

    ``labels`` are integer class indices in [0, C); ``weights`` are per-row
    floats (defaults to all ones). Rows are averaged by total weight.
    """
    ld = logits.data
    if ld.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (A,C) logits, got rank {ld.ndim}")
    a, c = ld.shape
    labels = np.asarray(labels)
    if labels.shape != (a,):
        raise ShapeError(f"labels shape {labels.shape} != ({a},)")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ValueError(f"label {bad} out of range [0, {c})")
    if weights is None:
        weights = np.ones(a, dtype=ld.dtype)
    weights = np.asarray(weights, dtype=ld.dtype)
    if weights.shape != (a,):
        raise ShapeError(f"weights shape {weights.shape} != ({a},)")

    shifted = ld - ld.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    log_z = np.log(exp.sum(axis=1))
    nll = log_z - shifted[np.arange(a), labels]
    total_w = weights.sum()
    value = (weights * nll).sum() / total_w if total_w > 0 else np.asarray(0.0, dtype=ld.dtype)
    out = Tensor(np.asarray(value, dtype=ld.dtype), requires_grad=logits.requires_grad)

    def backward(g: np.ndarray):
        if total_w <= 0:
            return (np.zeros_like(ld),)
        probs = exp / exp.sum(axis=1, keepdims=True)
        probs[np.arange(a), labels] -= 1.0
        return (probs * (weights / total_w)[:, None] * g,)

    return _record(out, (logits,), backward)


def smooth_l1_loss(pred: Tensor, target: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Huber loss with transition at 1.0, mean-reduced over unmasked entries."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"smooth_l1_loss shapes differ: {pred.data.shape} vs {target.data.shape}")
    if mask is None:
        mask = np.ones_like(pred.data)
    mask = np.asarray(mask, dtype=pred.data.dtype)
    if mask.shape != pred.data.shape:
        raise ShapeError(f"mask shape {mask.shape} != {pred.data.shape}")

    diff = pred.data - target.data
    absd = np.abs(diff)
    per = np.where(absd < 1.0, 0.5 * diff * diff, absd - 0.5)
    count = float(np.count_nonzero(mask))
    value = (per * mask).sum() / count if count > 0 else np.asarray(0.0, dtype=pred.data.dtype)
    out = Tensor(np.asarray(value, dtype=pred.data.dtype), requires_grad=pred.requires_grad)

    def backward(g: np.ndarray):
        if count == 0:
            return (np.zeros_like(diff), None)
        local = np.where(absd < 1.0, diff, np.sign(diff))
        return (local * mask / count * g, None)

    return _record(out, (pred, target), backward)
