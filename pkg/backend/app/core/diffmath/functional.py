"""
Neural-network ops on DTensors: normalizations, encodings, sampling, convolution.
"""

import math

import numpy as np

from app.core.errors import ShapeError
from app.core.diffmath.tensor import DTensor, apply_op, as_tensor, reshape


def softmax(x: DTensor, axis: int = -1) -> DTensor:
    shifted = x.values - np.max(x.values, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)
    return apply_op("softmax", out, (x,),
                    lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),))


def log_softmax(x: DTensor, axis: int = -1) -> DTensor:
    shifted = x.values - np.max(x.values, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return apply_op("log_softmax", out, (x,),
                    lambda g: (g - probs * np.sum(g, axis=axis, keepdims=True),))


def normalize(x: DTensor, eps: float = 1e-5) -> DTensor:
    """Per-vector standardization over the last axis (layer norm before the affine)"""
    mu = np.mean(x.values, axis=-1, keepdims=True)
    centered = x.values - mu
    inv = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
    out = centered * inv

    def backward(g):
        mean_g = np.mean(g, axis=-1, keepdims=True)
        mean_gy = np.mean(g * out, axis=-1, keepdims=True)
        return (inv * (g - mean_g - out * mean_gy),)

    return apply_op("layer_norm", out, (x,), backward)


def layer_norm(x: DTensor, gamma: DTensor, beta: DTensor, eps: float = 1e-5) -> DTensor:
    return normalize(x, eps) * gamma + beta


def sinusoidal_encoding(coords: DTensor, dim: int, temperature: float = 10000.0,
                        scale: float = 2.0 * math.pi) -> DTensor:
    """Sine/cosine embedding of normalized (x, y) coordinates.

    coords [..., 2] -> [..., dim]; the first dim/2 features encode y and the
    rest encode x, interleaving sin and cos per frequency.
    """
    if coords.shape[-1] != 2 or dim % 4 != 0:
        raise ShapeError("sinusoidal_encoding", [coords.shape], f"dim={dim} must be a multiple of 4")
    num = dim // 2
    exponents = 2.0 * (np.arange(num) // 2) / num
    freqs = (scale / np.power(temperature, exponents)).astype(coords.dtype)
    even = (np.arange(num) % 2 == 0)
    yx = coords.values[..., ::-1]
    angles = yx[..., None] * freqs
    out = np.where(even, np.sin(angles), np.cos(angles)).reshape(coords.shape[:-1] + (dim,))
    deriv = np.where(even, np.cos(angles), -np.sin(angles)) * freqs

    def backward(g):
        grad_yx = np.sum(g.reshape(deriv.shape) * deriv, axis=-1)
        return (grad_yx[..., ::-1],)

    return apply_op("sinusoidal_encoding", out.astype(coords.dtype), (coords,), backward)


_CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))


def bilinear_sample(feature_map: DTensor, locations: DTensor) -> DTensor:
    """Bilinear read of a feature map at normalized (x, y) locations.

    Two layouts:
      * feature_map [H, W, C], locations [..., 2] -> [..., C]
      * feature_map [H, W, G, C], locations [S, G, 2] -> [S, G, C]; group g of
        every sample reads only channel group g (one group per attention head)

    Pixel (r, c) has its center at ((c + 0.5) / W, (r + 0.5) / H). Reads
    outside the map contribute zeros. Differentiable in features and locations.
    """
    locations = as_tensor(locations, dtype=feature_map.dtype)
    if feature_map.ndim == 3:
        lead = locations.shape[:-1]
        h, w, c = feature_map.shape
        grouped = bilinear_sample(reshape(feature_map, (h, w, 1, c)),
                                  reshape(locations, (-1, 1, 2)))
        return reshape(grouped, lead + (c,))

    if feature_map.ndim != 4 or locations.ndim != 3 or locations.shape[-1] != 2 \
            or locations.shape[1] != feature_map.shape[2]:
        raise ShapeError("bilinear_sample", [feature_map.shape, locations.shape])

    fmap = feature_map.values
    height, width, groups, _ = fmap.shape
    x = locations.values[..., 0] * width - 0.5
    y = locations.values[..., 1] * height - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    group_index = np.broadcast_to(np.arange(groups), x.shape)

    corners = []
    out = np.zeros(x.shape + (fmap.shape[-1],), dtype=fmap.dtype)
    for dy, dx in _CORNERS:
        rows = y0 + dy
        cols = x0 + dx
        valid = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
        rows_c = np.clip(rows, 0, height - 1)
        cols_c = np.clip(cols, 0, width - 1)
        wx = fx if dx else 1.0 - fx
        wy = fy if dy else 1.0 - fy
        values = fmap[rows_c, cols_c, group_index] * valid[..., None]
        out += (wx * wy)[..., None] * values
        # d(weight)/dx and d(weight)/dy for this corner
        dwx = (wy if dx else -wy)
        dwy = (wx if dy else -wx)
        corners.append((rows_c, cols_c, valid, wx * wy, dwx, dwy, values))

    def backward(g):
        grad_map = np.zeros_like(fmap)
        grad_loc = np.zeros(locations.shape, dtype=locations.dtype)
        for rows_c, cols_c, valid, weight, dwx, dwy, values in corners:
            np.add.at(grad_map, (rows_c, cols_c, group_index), (weight * valid)[..., None] * g)
            proj = np.sum(g * values, axis=-1)
            grad_loc[..., 0] += proj * dwx * width
            grad_loc[..., 1] += proj * dwy * height
        return grad_map, grad_loc

    return apply_op("bilinear_sample", out, (feature_map, locations), backward)


def conv2d(x: DTensor, weight: DTensor, bias: DTensor, stride: int = 1, padding: int = 0) -> DTensor:
    """2D convolution of a channels-last image.

    x [H, W, Cin], weight [k, k, Cin, Cout], bias [Cout] -> [Ho, Wo, Cout]
    """
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[2] != x.shape[2] or weight.shape[0] != weight.shape[1]:
        raise ShapeError("conv2d", [x.shape, weight.shape])
    k = weight.shape[0]
    height, width, cin = x.shape
    cout = weight.shape[3]
    padded = np.pad(x.values, ((padding, padding), (padding, padding), (0, 0)))
    out_h = (height + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1
    if out_h <= 0 or out_w <= 0:
        raise ShapeError("conv2d", [x.shape, weight.shape], "kernel larger than padded input")

    cols = np.empty((out_h, out_w, k, k, cin), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj, :] = padded[di:di + stride * out_h:stride, dj:dj + stride * out_w:stride, :]
    flat_cols = cols.reshape(out_h * out_w, k * k * cin)
    flat_w = weight.values.reshape(k * k * cin, cout)
    out = (flat_cols @ flat_w + bias.values).reshape(out_h, out_w, cout)

    def backward(g):
        flat_g = g.reshape(out_h * out_w, cout)
        grad_w = (flat_cols.T @ flat_g).reshape(weight.shape)
        grad_b = flat_g.sum(axis=0)
        grad_cols = (flat_g @ flat_w.T).reshape(out_h, out_w, k, k, cin)
        grad_padded = np.zeros_like(padded)
        for di in range(k):
            for dj in range(k):
                grad_padded[di:di + stride * out_h:stride, dj:dj + stride * out_w:stride, :] += grad_cols[:, :, di, dj, :]
        grad_x = grad_padded[padding:padding + height, padding:padding + width, :]
        return grad_x, grad_w, grad_b

    return apply_op("conv2d", out, (x, weight, bias), backward)
