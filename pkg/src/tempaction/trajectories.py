"""Simplified dense trajectories: seeding, tracking and tube descriptors."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .flow import block_flow

CHANNELS = ("traj", "hog", "hof", "mbh")


@dataclass(frozen=True)
class TrackParams:
    sample_step: int = 5
    track_length: int = 15
    # minimum path length (px) of a kept trajectory
    prune_threshold: float = 1.0
    # a single step longer than this fraction of the path length is drift
    drift_ratio: float = 0.7
    # seed only where min-eigenvalue >= quality * frame maximum
    min_quality: float = 0.001
    patch_size: int = 16
    n_xy_cells: int = 2
    n_t_cells: int = 3
    n_bins: int = 8
    # flow magnitude at or below which a pixel votes for the HOF zero bin
    min_flow: float = 0.3

    def channel_dims(self):
        cells = self.n_xy_cells * self.n_xy_cells * self.n_t_cells
        return {
            "traj": 2 * self.track_length,
            "hog": cells * self.n_bins,
            "hof": cells * (self.n_bins + 1),
            "mbh": 2 * cells * self.n_bins,
        }


@dataclass
class TrackedTrajectory:
    start_frame: int
    points: np.ndarray  # (L+1, 2) float (x, y)

    @property
    def length(self):
        return len(self.points) - 1

    @property
    def displacements(self):
        return np.diff(self.points, axis=0)

    @property
    def path_length(self):
        return float(np.linalg.norm(self.displacements, axis=1).sum())


@dataclass
class RawDescriptorBundle:
    traj: np.ndarray
    hog: np.ndarray
    hof: np.ndarray
    mbh: np.ndarray
    location: tuple  # (x_norm, y_norm, t_norm, frame_index)


def clip_flows(clip):
    """Forward flow for every consecutive frame pair: (T-1, H, W, 2)."""
    frames = clip.frames.astype(np.float64)
    if len(frames) < 2:
        return np.zeros((0,) + frames.shape[1:] + (2,), dtype=np.float32)
    return np.stack([block_flow(frames[t], frames[t + 1]) for t in range(len(frames) - 1)])


def min_eigenvalue(frame, block=3):
    """Smaller eigenvalue of the windowed structure tensor at every pixel."""
    img = np.asarray(frame, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    a = ndimage.uniform_filter(gx * gx, block, mode="nearest")
    b = ndimage.uniform_filter(gx * gy, block, mode="nearest")
    c = ndimage.uniform_filter(gy * gy, block, mode="nearest")
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)


def _seed_points(frame, live_points, params):
    h, w = frame.shape
    step = params.sample_step
    ny, nx = h // step, w // step
    if nx == 0 or ny == 0:
        return np.zeros((0, 2))
    covered = np.zeros((ny, nx), dtype=bool)
    if len(live_points):
        cx = np.floor(live_points[:, 0] / step).astype(int)
        cy = np.floor(live_points[:, 1] / step).astype(int)
        ok = (cx >= 0) & (cx < nx) & (cy >= 0) & (cy < ny)
        covered[cy[ok], cx[ok]] = True
    eig = min_eigenvalue(frame)
    gy, gx = np.mgrid[0:ny, 0:nx]
    px = gx * step + step // 2
    py = gy * step + step // 2
    q = eig[py, px]
    thresh = params.min_quality * eig.max()
    keep = (~covered) & (q > 0) & (q >= thresh)
    return np.stack([px[keep], py[keep]], axis=1).astype(np.float64)


def _median_flow_at(flow, pts):
    """3x3 median of the flow field around each (rounded) point."""
    h, w = flow.shape[:2]
    ix = np.rint(pts[:, 0]).astype(int)
    iy = np.rint(pts[:, 1]).astype(int)
    off = np.arange(-1, 2)
    ys = np.clip(iy[:, None, None] + off[None, :, None], 0, h - 1)
    xs = np.clip(ix[:, None, None] + off[None, None, :], 0, w - 1)
    vals = flow[ys, xs].reshape(len(pts), 9, 2)
    return np.median(vals, axis=1)


def _prune(points, params):
    steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = steps.sum()
    if total < params.prune_threshold:
        return False
    return steps.max() <= params.drift_ratio * total


def track_points(clip, params=TrackParams(), flows=None):
    """Seed, track and prune. Returns (trajectories, flows)."""
    L = params.track_length
    n = len(clip)
    if n < L + 1:
        return [], flows
    if flows is None:
        flows = clip_flows(clip)
    h, w = clip.height, clip.width
    frames = clip.frames

    pts = np.zeros((0, 2))
    starts = np.zeros(0, dtype=int)
    hist = np.zeros((0, L + 1, 2))
    done = []
    for t in range(n):
        if t + L <= n - 1:
            new = _seed_points(frames[t], pts, params)
            if len(new):
                pts = np.concatenate([pts, new])
                starts = np.concatenate([starts, np.full(len(new), t)])
                nh = np.zeros((len(new), L + 1, 2))
                nh[:, 0] = new
                hist = np.concatenate([hist, nh])
        if t == n - 1 or not len(pts):
            continue
        pts = pts + _median_flow_at(flows[t], pts)
        age = t + 1 - starts
        hist[np.arange(len(pts)), age] = pts
        inside = (pts[:, 0] >= 0) & (pts[:, 0] <= w - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1)
        finished = inside & (age == L)
        for i in np.flatnonzero(finished):
            if _prune(hist[i], params):
                done.append(TrackedTrajectory(int(starts[i]), hist[i].copy()))
        alive = inside & ~finished
        pts, starts, hist = pts[alive], starts[alive], hist[alive]
    done.sort(key=lambda tr: tr.start_frame)
    return done, flows


def extract_trajectories(clip, params=TrackParams()):
    return track_points(clip, params)[0]


# -- descriptors --------------------------------------------------------------


def root_sift(v, axis=-1):
    """L1-normalize a non-negative histogram, then take square roots."""
    v = np.asarray(v, dtype=np.float64)
    s = v.sum(axis=axis, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(s > 0, v / np.where(s > 0, s, 1.0), 0.0)
    return np.sqrt(out)


def _orientation_bins(dx, dy, n_bins):
    """Nearest of ``n_bins`` full-circle orientation bins (bin 0 = +x)."""
    ang = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    return np.floor(ang / (2 * np.pi / n_bins) + 0.5).astype(np.int64) % n_bins


def _gradient(img):
    gx = ndimage.correlate1d(img, [-0.5, 0.0, 0.5], axis=1, mode="nearest")
    gy = ndimage.correlate1d(img, [-0.5, 0.0, 0.5], axis=0, mode="nearest")
    return gx, gy


def _frame_votes(frame, flow, params):
    """Per-pixel (bin, weight) maps; bins index the stacked HOG|HOF|MBHx|MBHy layout."""
    nb = params.n_bins
    gx, gy = _gradient(frame.astype(np.float64))
    u = flow[..., 0].astype(np.float64)
    v = flow[..., 1].astype(np.float64)
    mag = np.hypot(u, v)
    moving = mag > params.min_flow
    ux, uy = _gradient(u)
    vx, vy = _gradient(v)
    bins = np.stack([
        _orientation_bins(gx, gy, nb),
        np.where(moving, _orientation_bins(u, v, nb), nb) + nb,
        _orientation_bins(ux, uy, nb) + 2 * nb + 1,
        _orientation_bins(vx, vy, nb) + 3 * nb + 1,
    ])
    weights = np.stack([
        np.hypot(gx, gy),
        np.where(moving, mag, 1.0),
        np.hypot(ux, uy),
        np.hypot(vx, vy),
    ])
    return bins, weights


def _patch_origins(points, shape, ps):
    h, w = shape
    x0 = np.clip(np.rint(points[:, 0]).astype(np.int64) - ps // 2, 0, w - ps)
    y0 = np.clip(np.rint(points[:, 1]).astype(np.int64) - ps // 2, 0, h - ps)
    return y0, x0


def _patch_histograms(bins, weights, points, params, n_hist):
    """Histogram of every spatial cell of the patch around each point: (m, cells, n_hist)."""
    _, h, w = bins.shape
    ps = min(params.patch_size, h, w)
    nc = params.n_xy_cells
    y0, x0 = _patch_origins(points, (h, w), ps)
    edges = np.rint(np.linspace(0, ps, nc + 1)).astype(np.int64)
    cell_1d = np.searchsorted(edges, np.arange(ps), side="right") - 1
    cell = cell_1d[:, None] * nc + cell_1d[None, :]
    off = np.arange(ps)
    ys = y0[:, None, None] + off[None, :, None]
    xs = x0[:, None, None] + off[None, None, :]
    m = len(points)
    pb = bins[:, ys, xs]  # (4, m, ps, ps)
    pw = weights[:, ys, xs]
    slot = (np.arange(m)[:, None, None] * (nc * nc) + cell[None]) * n_hist
    idx = slot[None] + pb
    out = np.bincount(idx.ravel(), weights=pw.ravel(), minlength=m * nc * nc * n_hist)
    return out.reshape(m, nc * nc, n_hist)


def trajectory_shape(points):
    d = np.diff(np.asarray(points, dtype=np.float64), axis=-2)
    total = np.linalg.norm(d, axis=-1).sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise RuntimeError("zero-displacement trajectory reached the descriptor stage")
    return (d / total[..., None]).reshape(d.shape[:-2] + (-1,))


def describe_trajectories(trajs, clip, flows=None, params=TrackParams()):
    """Raw descriptors for many trajectories at once.

    Returns a dict of (n, d) float64 channel matrices plus ``location``,
    an (n, 4) array of (x_norm, y_norm, t_norm, frame_index).
    """
    dims = params.channel_dims()
    n = len(trajs)
    out = {c: np.zeros((n, dims[c])) for c in CHANNELS}
    out["location"] = np.zeros((n, 4))
    if n == 0:
        return out
    L = trajs[0].length
    if flows is None:
        flows = clip_flows(clip)
    T, h, w = clip.frames.shape
    pts = np.stack([tr.points for tr in trajs])
    starts = np.array([tr.start_frame for tr in trajs])
    if pts.min() < 0 or np.any(pts[..., 0] > w - 1) or np.any(pts[..., 1] > h - 1):
        raise ValueError("trajectory points fall outside the clip")

    out["traj"] = trajectory_shape(pts)

    nb = params.n_bins
    ncell = params.n_xy_cells ** 2
    nt = params.n_t_cells
    nh = nb + (nb + 1) + 2 * nb
    acc = np.zeros((n, nt, ncell, nh))
    frame_of = starts[:, None] + np.arange(L)[None, :]
    tcell = np.arange(L) * nt // L
    for f in np.unique(frame_of):
        ti, li = np.nonzero(frame_of == f)
        bins, weights = _frame_votes(clip.frames[f], flows[f], params)
        np.add.at(acc, (ti, tcell[li]), _patch_histograms(bins, weights, pts[ti, li], params, nh))
    hog = acc[..., :nb]
    hof = acc[..., nb : 2 * nb + 1]
    mbh = acc[..., 2 * nb + 1 :]
    out["hog"] = root_sift(hog.reshape(n, -1))
    out["hof"] = root_sift(hof.reshape(n, -1))
    # x and y motion-boundary parts concatenated, then normalized as one channel
    mbh = np.concatenate([mbh[..., :nb].reshape(n, -1), mbh[..., nb:].reshape(n, -1)], axis=1)
    out["mbh"] = root_sift(mbh)

    mean_pt = pts.mean(axis=1)
    frame_index = starts + L // 2
    out["location"] = np.stack(
        [mean_pt[:, 0] / w, mean_pt[:, 1] / h, frame_index / T, frame_index], axis=1
    )
    return out


def compute_descriptors(traj, clip, params=TrackParams(), flows=None):
    d = describe_trajectories([traj], clip, flows, params)
    loc = d["location"][0]
    return RawDescriptorBundle(
        d["traj"][0], d["hog"][0], d["hof"][0], d["mbh"][0],
        (float(loc[0]), float(loc[1]), float(loc[2]), int(loc[3])),
    )
