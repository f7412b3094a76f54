"""Dense optical flow by coarse-to-fine block matching.

Each pyramid level searches a small integer neighbourhood around the
upsampled coarser estimate, scoring candidates by windowed SSD. The finest
integer field is refined to subpixel precision by one windowed
least-squares (Lucas-Kanade) step on the residual after the integer warp,
which is exactly zero wherever the integer match is exact.
"""

import numpy as np
from scipy import ndimage

# per-pixel SSD penalty per pixel of displacement; breaks ties on flat regions
# in favour of zero motion
_TIE_PENALTY = 1e-3


def _downsample(img):
    blurred = ndimage.correlate1d(img, [0.25, 0.5, 0.25], axis=0, mode="nearest")
    blurred = ndimage.correlate1d(blurred, [0.25, 0.5, 0.25], axis=1, mode="nearest")
    return blurred[::2, ::2]


def _pyramid(img, min_size, max_levels):
    levels = [img]
    while (
        len(levels) < max_levels
        and min(levels[-1].shape) // 2 >= min_size
    ):
        levels.append(_downsample(levels[-1]))
    return levels


class _Shifter:
    """Integer translations of an image with replicated edges, as slices of
    one padded copy."""

    def __init__(self, img, margin):
        self.m = int(margin)
        self.h, self.w = img.shape
        self.padded = np.pad(img, self.m, mode="edge")

    def __call__(self, u, v):
        """img sampled at (x + u, y + v)."""
        y0, x0 = self.m + int(v), self.m + int(u)
        return self.padded[y0 : y0 + self.h, x0 : x0 + self.w]


def _unique_pairs(u, v):
    """Distinct (u, v) integer pairs and the index of each input in that list."""
    u0, v0 = u.min(), v.min()
    span = int(v.max() - v0) + 1
    keys = (u - u0) * span + (v - v0)
    present = np.zeros(int(keys.max()) + 1, dtype=bool)
    present[keys] = True
    slot = np.cumsum(present) - 1
    uniq = np.flatnonzero(present)
    return np.stack([uniq // span + u0, uniq % span + v0], axis=1), slot[keys]


def _match_costs(im1, im2, fx, fy, dx, dy, win):
    """Windowed SSD for candidate flows (fx + dx[m], fy + dy[m]): (m, H, W).

    The whole window of a pixel is compared at that pixel's candidate
    displacement, so each distinct displacement gets its own SSD map.
    """
    cx = fx[None] + dx[:, None, None]
    cy = fy[None] + dy[:, None, None]
    pairs, inv = _unique_pairs(cx.ravel(), cy.ravel())
    shift = _Shifter(im2, np.abs(pairs).max())
    maps = np.empty((len(pairs),) + im1.shape)
    for k, (u, v) in enumerate(pairs):
        diff = im1 - shift(u, v)
        maps[k] = diff * diff
    maps = ndimage.uniform_filter(maps, size=(1, win, win), mode="nearest")
    npix = im1.size
    cost = maps.ravel()[inv.reshape(len(dx), npix) * npix + np.arange(npix)].reshape(cx.shape)
    return cost + _TIE_PENALTY * (np.abs(cx) + np.abs(cy)), cx, cy


def _search(im1, im2, fx, fy, radius, win):
    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    cost, cx, cy = _match_costs(im1, im2, fx, fy, dx.ravel(), dy.ravel(), win)
    # argmin keeps the first minimum; the penalty already favours small motion
    best = np.argmin(cost, axis=0)[None]
    take = lambda a: np.take_along_axis(a, best, axis=0)[0]
    return take(cx), take(cy), take(cost)


def _lk_step(im1, im2, fx, fy, win, eps=1e-6):
    """Least-squares subpixel correction around the integer field (fx, fy).

    The structure tensor comes from the gradients of ``im1``; the mismatch
    term is formed once per distinct integer displacement over the whole
    image and read out at the pixels carrying that displacement.
    """
    box = lambda a: ndimage.uniform_filter(a, size=win, mode="nearest")
    gx = ndimage.correlate1d(im1, [-0.5, 0.0, 0.5], axis=1, mode="nearest")
    gy = ndimage.correlate1d(im1, [-0.5, 0.0, 0.5], axis=0, mode="nearest")
    a, b, c = box(gx * gx), box(gx * gy), box(gy * gy)
    det = a * c - b * b
    ok = det > eps * np.maximum((a + c) ** 2, 1e-12)
    pairs, inv = _unique_pairs(fx.ravel(), fy.ravel())
    shift = _Shifter(im2, np.abs(pairs).max())
    p = np.empty((len(pairs),) + im1.shape)
    q = np.empty_like(p)
    for k, (u, v) in enumerate(pairs):
        it = shift(u, v) - im1
        p[k] = gx * it
        q[k] = gy * it
    p = ndimage.uniform_filter(p, size=(1, win, win), mode="nearest")
    q = ndimage.uniform_filter(q, size=(1, win, win), mode="nearest")
    flat = inv * im1.size + np.arange(im1.size)
    p = p.ravel()[flat].reshape(im1.shape)
    q = q.ravel()[flat].reshape(im1.shape)
    safe = np.where(ok, det, 1.0)
    du = np.where(ok, (-c * p + b * q) / safe, 0.0)
    dv = np.where(ok, (b * p - a * q) / safe, 0.0)
    return np.clip(du, -0.5, 0.5), np.clip(dv, -0.5, 0.5)


def block_flow(frame1, frame2, win=7, coarse_radius=3, min_size=12, max_levels=3):
    """Flow from ``frame1`` to ``frame2`` as an (H, W, 2) float32 array (dx, dy)."""
    im1 = np.asarray(frame1, dtype=np.float64)
    im2 = np.asarray(frame2, dtype=np.float64)
    pyr1 = _pyramid(im1, min_size, max_levels)
    pyr2 = _pyramid(im2, min_size, max_levels)

    fx = np.zeros(pyr1[-1].shape, dtype=np.int64)
    fy = np.zeros_like(fx)
    for level in range(len(pyr1) - 1, -1, -1):
        a, b = pyr1[level], pyr2[level]
        if fx.shape != a.shape:
            # upsample the coarser integer field to this level
            fx = 2 * np.repeat(np.repeat(fx, 2, axis=0), 2, axis=1)[: a.shape[0], : a.shape[1]]
            fy = 2 * np.repeat(np.repeat(fy, 2, axis=0), 2, axis=1)[: a.shape[0], : a.shape[1]]
            pad_y = a.shape[0] - fx.shape[0]
            pad_x = a.shape[1] - fx.shape[1]
            if pad_y or pad_x:
                fx = np.pad(fx, ((0, pad_y), (0, pad_x)), mode="edge")
                fy = np.pad(fy, ((0, pad_y), (0, pad_x)), mode="edge")
        radius = coarse_radius if level == len(pyr1) - 1 else 1
        fx, fy, _ = _search(a, b, fx, fy, radius, win)
        if level:
            # drop isolated outliers before they seed the finer search
            fx = ndimage.median_filter(fx, size=3, mode="nearest")
            fy = ndimage.median_filter(fy, size=3, mode="nearest")

    du, dv = _lk_step(im1, im2, fx, fy, win)
    u = fx + du
    v = fy + dv
    return np.stack([u, v], axis=-1).astype(np.float32)
