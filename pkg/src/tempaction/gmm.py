"""Diagonal-covariance Gaussian mixtures fitted by EM."""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .binfmt import Reader, pack_name

GMM_MAGIC = b"TGMM"
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmChannel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d)
    variance_floor: float = 0.0
    log_likelihood: list = field(default_factory=list)

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    def log_joint(self, x):
        """log w_k + log N(x | mu_k, diag var_k) for every row and component."""
        x = np.asarray(x, dtype=np.float64)
        inv = 1.0 / self.variances
        maha = (
            (x * x) @ inv.T
            - 2.0 * x @ (self.means * inv).T
            + np.sum(self.means * self.means * inv, axis=1)
        )
        const = np.log(self.weights) - 0.5 * (
            np.sum(np.log(self.variances), axis=1) + self.dim * LOG_2PI
        )
        return const - 0.5 * maha

    def posteriors(self, x):
        lj = self.log_joint(x)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def score(self, x):
        """Mean per-sample log-likelihood."""
        return float(np.mean(logsumexp(self.log_joint(x), axis=1)))


@dataclass
class GmmCodebook:
    channels: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.channels[name]

    def to_bytes(self):
        out = [GMM_MAGIC, struct.pack("<I", len(self.channels))]
        for name, g in self.channels.items():
            out.append(pack_name(name))
            out.append(struct.pack("<II", g.n_components, g.dim))
            out.append(g.weights.astype("<f4").tobytes())
            out.append(g.means.astype("<f4").tobytes())
            out.append(g.variances.astype("<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data, source=""):
        r = Reader(data, source)
        r.magic(GMM_MAGIC)
        (n,) = r.unpack("<I")
        channels = {}
        for _ in range(n):
            name = r.name()
            k, d = r.unpack("<II")
            w = r.array("<f4", k).astype(np.float64)
            means = r.array("<f4", k * d).astype(np.float64).reshape(k, d)
            var = r.array("<f4", k * d).astype(np.float64).reshape(k, d)
            channels[name] = GmmChannel(w / w.sum(), means, var)
        r.expect_end()
        return cls(channels)


def kmeans_pp(x, k, rng):
    """k-means++ seeding: indices of the chosen rows are drawn D^2-weighted."""
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[i] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def _sq_dists(x, centers):
    return (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * x @ centers.T
        + np.sum(centers * centers, axis=1)[None, :]
    )


def kmeans(x, k, rng, n_iter=10):
    centers = kmeans_pp(x, k, rng)
    for _ in range(n_iter):
        assign = np.argmin(_sq_dists(x, centers), axis=1)
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    assign = np.argmin(_sq_dists(x, centers), axis=1)
    return centers, assign


def _m_step(x, resp, floor):
    n = len(x)
    nk = resp.sum(axis=0)
    nk_safe = np.maximum(nk, 1e-300)
    means = (resp.T @ x) / nk_safe[:, None]
    var = np.empty_like(means)
    for j in range(len(nk)):
        diff = x - means[j]
        var[j] = resp[:, j] @ (diff * diff) / nk_safe[j]
    weights = np.maximum(nk / n, 1e-300)
    return weights / weights.sum(), means, np.maximum(var, floor)


def fit_gmm(samples, n_components, seed=0, tol=1e-5, max_iter=200, kmeans_iter=10):
    """EM fit of a diagonal GMM, seeded by k-means++ and a few Lloyd steps.

    Stops when the mean per-sample log-likelihood gains less than ``tol``.
    The likelihood after every E-step is kept in ``log_likelihood``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("expected a non-empty (n, d) sample matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in GMM samples")
    k = int(n_components)
    if k < 1:
        raise ValueError("need at least one component")
    if k > len(x):
        raise ValueError(f"cannot fit {k} components to {len(x)} samples")
    rng = np.random.default_rng(seed)
    floor = max(1e-4 * float(np.mean(x.var(axis=0))), 1e-12)

    if k == 1:
        weights, means, var = _m_step(x, np.ones((len(x), 1)), floor)
    else:
        means, assign = kmeans(x, k, rng, kmeans_iter)
        counts = np.bincount(assign, minlength=k)
        weights = np.maximum(counts, 1) / np.maximum(counts, 1).sum()
        var = np.tile(x.var(axis=0), (k, 1))
        for j in np.flatnonzero(counts >= 2):
            var[j] = x[assign == j].var(axis=0)
        var = np.maximum(var, floor)
    model = GmmChannel(weights, means, var, floor)

    prev = -np.inf
    for it in range(max_iter + 1):
        lj = model.log_joint(x)
        norm = logsumexp(lj, axis=1, keepdims=True)
        ll = float(np.mean(norm))
        model.log_likelihood.append(ll)
        if ll - prev < tol or it == max_iter:
            break
        prev = ll
        resp = np.exp(lj - norm)
        model.weights, model.means, model.variances = _m_step(x, resp, floor)
    return model
