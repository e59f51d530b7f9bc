"""Hot per-pixel kernels: bilinear resampling and supersampled shape rasterization.

Each kernel has a numba implementation and a numpy implementation with the same
signature.  The public names dispatch on :data:`flashsplit._accel.USE_NUMBA`.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

PAD_CLAMP = 0
PAD_CIRCULAR = 1
PAD_ZERO = 2

SHAPE_CIRCLE = 0
SHAPE_RECT = 1
SHAPE_TRIANGLE = 2

# inside-image tolerance for the validity mask, in pixels
_MASK_EPS = 1e-9


# --------------------------------------------------------------------------
# bilinear sampling
# --------------------------------------------------------------------------

@njit(cache=True)
def _bilinear_sample_nb(img, src_x, src_y, pad):
    H, W, C = img.shape
    out = np.empty((H, W, C), dtype=np.float64)
    mask = np.empty((H, W), dtype=np.bool_)
    for i in range(H):
        for j in range(W):
            x = src_x[i, j]
            y = src_y[i, j]
            if pad == 1:
                mask[i, j] = True
            else:
                mask[i, j] = (x >= -_MASK_EPS) and (x <= W - 1 + _MASK_EPS) and \
                    (y >= -_MASK_EPS) and (y <= H - 1 + _MASK_EPS)
            x0f = np.floor(x)
            y0f = np.floor(y)
            fx = x - x0f
            fy = y - y0f
            x0 = int(x0f)
            y0 = int(y0f)
            x1 = x0 + 1
            y1 = y0 + 1
            w00 = (1.0 - fx) * (1.0 - fy)
            w01 = fx * (1.0 - fy)
            w10 = (1.0 - fx) * fy
            w11 = fx * fy
            if pad == 1:
                x0 = x0 % W
                x1 = x1 % W
                y0 = y0 % H
                y1 = y1 % H
                for c in range(C):
                    out[i, j, c] = (w00 * img[y0, x0, c] + w01 * img[y0, x1, c]) + \
                        (w10 * img[y1, x0, c] + w11 * img[y1, x1, c])
            elif pad == 0:
                x0 = min(max(x0, 0), W - 1)
                x1 = min(max(x1, 0), W - 1)
                y0 = min(max(y0, 0), H - 1)
                y1 = min(max(y1, 0), H - 1)
                for c in range(C):
                    out[i, j, c] = (w00 * img[y0, x0, c] + w01 * img[y0, x1, c]) + \
                        (w10 * img[y1, x0, c] + w11 * img[y1, x1, c])
            else:
                for c in range(C):
                    acc00 = img[y0, x0, c] if (0 <= x0 < W and 0 <= y0 < H) else 0.0
                    acc01 = img[y0, x1, c] if (0 <= x1 < W and 0 <= y0 < H) else 0.0
                    acc10 = img[y1, x0, c] if (0 <= x0 < W and 0 <= y1 < H) else 0.0
                    acc11 = img[y1, x1, c] if (0 <= x1 < W and 0 <= y1 < H) else 0.0
                    out[i, j, c] = (w00 * acc00 + w01 * acc01) + (w10 * acc10 + w11 * acc11)
    return out, mask


def _bilinear_sample_np(img, src_x, src_y, pad):
    H, W, C = img.shape
    if pad == PAD_CIRCULAR:
        mask = np.ones((H, W), dtype=bool)
    else:
        mask = ((src_x >= -_MASK_EPS) & (src_x <= W - 1 + _MASK_EPS)
                & (src_y >= -_MASK_EPS) & (src_y <= H - 1 + _MASK_EPS))
    x0f = np.floor(src_x)
    y0f = np.floor(src_y)
    fx = (src_x - x0f)[..., None]
    fy = (src_y - y0f)[..., None]
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy
    if pad == PAD_CIRCULAR:
        x0, x1, y0, y1 = x0 % W, x1 % W, y0 % H, y1 % H
        g = lambda yy, xx: img[yy, xx]
    elif pad == PAD_CLAMP:
        x0, x1 = np.clip(x0, 0, W - 1), np.clip(x1, 0, W - 1)
        y0, y1 = np.clip(y0, 0, H - 1), np.clip(y1, 0, H - 1)
        g = lambda yy, xx: img[yy, xx]
    else:
        def g(yy, xx):
            ok = (xx >= 0) & (xx < W) & (yy >= 0) & (yy < H)
            v = img[np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)]
            return np.where(ok[..., None], v, 0.0)
    out = (w00 * g(y0, x0) + w01 * g(y0, x1)) + (w10 * g(y1, x0) + w11 * g(y1, x1))
    return out, mask


def bilinear_sample(img, src_x, src_y, pad=PAD_CLAMP):
    """Sample ``img`` (H, W, C) at per-pixel source coordinates.

    Returns the resampled float64 image and a boolean validity mask that is
    true where the source coordinate lies inside the image (always true for
    circular padding).
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    src_x = np.ascontiguousarray(src_x, dtype=np.float64)
    src_y = np.ascontiguousarray(src_y, dtype=np.float64)
    if USE_NUMBA:
        return _bilinear_sample_nb(img, src_x, src_y, int(pad))
    return _bilinear_sample_np(img, src_x, src_y, int(pad))


# --------------------------------------------------------------------------
# shape rasterization
# --------------------------------------------------------------------------
# shape rows: [kind, p0, p1, p2, p3, p4, p5, r, g, b, depth]
#   circle:   p0=cx p1=cy p2=radius
#   rect:     p0=cx p1=cy p2=half_w p3=half_h p4=angle
#             (the wrapper rewrites p4, p5 to cos(angle), sin(angle))
#   triangle: p0..p5 = x1 y1 x2 y2 x3 y3

@njit(cache=True, inline="always")
def _inside(shapes, k, x, y):
    kind = int(shapes[k, 0])
    if kind == 0:
        dx = x - shapes[k, 1]
        dy = y - shapes[k, 2]
        return dx * dx + dy * dy <= shapes[k, 3] * shapes[k, 3]
    elif kind == 1:
        dx = x - shapes[k, 1]
        dy = y - shapes[k, 2]
        u = shapes[k, 5] * dx + shapes[k, 6] * dy
        v = -shapes[k, 6] * dx + shapes[k, 5] * dy
        return abs(u) <= shapes[k, 3] and abs(v) <= shapes[k, 4]
    else:
        x1, y1, x2, y2, x3, y3 = shapes[k, 1], shapes[k, 2], shapes[k, 3], shapes[k, 4], shapes[k, 5], shapes[k, 6]
        d1 = (x - x2) * (y1 - y2) - (x1 - x2) * (y - y2)
        d2 = (x - x3) * (y2 - y3) - (x2 - x3) * (y - y3)
        d3 = (x - x1) * (y3 - y1) - (x3 - x1) * (y - y1)
        neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
        pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
        return not (neg and pos)


@njit(cache=True)
def _rasterize_nb(background, bg_depth, shapes, ss):
    H, W, C = background.shape
    out = np.zeros((H, W, C), dtype=np.float64)
    depth = bg_depth.copy()
    K = shapes.shape[0]
    inv = 1.0 / (ss * ss)
    for i in range(H):
        for j in range(W):
            for si in range(ss):
                for sj in range(ss):
                    y = i + (si + 0.5) / ss - 0.5
                    x = j + (sj + 0.5) / ss - 0.5
                    top = -1
                    for k in range(K - 1, -1, -1):
                        if _inside(shapes, k, x, y):
                            top = k
                            break
                    for c in range(C):
                        if top >= 0:
                            out[i, j, c] += shapes[top, 7 + c] * inv
                        else:
                            out[i, j, c] += background[i, j, c] * inv
            for k in range(K - 1, -1, -1):
                if _inside(shapes, k, float(j), float(i)):
                    depth[i, j] = shapes[k, 10]
                    break
    return out, depth


def _inside_np(shape, x, y):
    kind = int(shape[0])
    if kind == SHAPE_CIRCLE:
        dx = x - shape[1]
        dy = y - shape[2]
        return dx * dx + dy * dy <= shape[3] * shape[3]
    if kind == SHAPE_RECT:
        ca, sa = shape[5], shape[6]
        dx = x - shape[1]
        dy = y - shape[2]
        u = ca * dx + sa * dy
        v = -sa * dx + ca * dy
        return (np.abs(u) <= shape[3]) & (np.abs(v) <= shape[4])
    x1, y1, x2, y2, x3, y3 = shape[1:7]
    d1 = (x - x2) * (y1 - y2) - (x1 - x2) * (y - y2)
    d2 = (x - x3) * (y2 - y3) - (x2 - x3) * (y - y3)
    d3 = (x - x1) * (y3 - y1) - (x3 - x1) * (y - y1)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def _rasterize_np(background, bg_depth, shapes, ss):
    H, W, C = background.shape
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    ys = (np.arange(H)[:, None] + offs[None, :]).reshape(-1)
    xs = (np.arange(W)[:, None] + offs[None, :]).reshape(-1)
    Y, X = np.meshgrid(ys, xs, indexing="ij")
    top = np.full(Y.shape, -1, dtype=np.int64)
    for k in range(shapes.shape[0]):
        top[_inside_np(shapes[k], X, Y)] = k
    bg_up = np.repeat(np.repeat(background, ss, axis=0), ss, axis=1)
    colors = shapes[:, 7:7 + C] if shapes.shape[0] else np.zeros((0, C))
    sub = np.where((top >= 0)[..., None], colors[np.maximum(top, 0)] if len(colors) else 0.0, bg_up)
    out = sub.reshape(H, ss, W, ss, C).mean(axis=(1, 3))
    depth = bg_depth.copy()
    Yc, Xc = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    for k in range(shapes.shape[0]):
        depth[_inside_np(shapes[k], Xc, Yc)] = shapes[k, 10]
    return out, depth


def rasterize_shapes(background, bg_depth, shapes, supersample=4):
    """Paint anti-aliased shapes over ``background`` (painter's order).

    Returns the composited (H, W, C) image and the depth map, where a pixel
    takes the depth of the last shape covering its center.
    """
    background = np.ascontiguousarray(background, dtype=np.float64)
    bg_depth = np.ascontiguousarray(bg_depth, dtype=np.float64)
    shapes = np.array(shapes, dtype=np.float64).reshape(-1, 11)
    rect = shapes[:, 0] == SHAPE_RECT
    ang = shapes[rect, 5].copy()
    shapes[rect, 5] = np.cos(ang)
    shapes[rect, 6] = np.sin(ang)
    if USE_NUMBA:
        return _rasterize_nb(background, bg_depth, shapes, int(supersample))
    return _rasterize_np(background, bg_depth, shapes, int(supersample))
