"""Point-level noise filtering from per-cube signal fingerprints.

The surveillance volume is cut into cubes. Per cube we standardise the
signal vectors of collected noise frames, screen for multivariate
normality, and fit a Gaussian by maximum likelihood where the screen
passes. At run time a point is discarded when its cube is modeled and
its Mahalanobis distance to the cube model falls below a shared
percentile threshold; everything else passes through untouched.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import lognorm

from .core import CubeGrid, Frame, SIGNAL_DIM

DEFAULT_PERCENTILE = 80.0
DEFAULT_ALPHA = 0.05
DEFAULT_MIN_SAMPLES = 50
DEFAULT_EPS = 1e-6

# Cap on samples fed to the normality screen per cube; evenly strided,
# so refits stay deterministic.
HZ_MAX_SAMPLES = 600


@dataclass
class HzResult:
    """Outcome of the multivariate normality screen."""

    statistic: float
    p_value: float
    testable: bool
    is_gaussian: bool


def hz_test(samples: np.ndarray, alpha: float = DEFAULT_ALPHA,
            eps: float = DEFAULT_EPS) -> HzResult:
    """Henze-Zirkler test against a log-normal null approximation.

    Needs at least p + 2 samples in p dimensions; below that the result
    is flagged untestable and never counts as Gaussian. A singular
    sample covariance is regularised with eps * I before inversion.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise ValueError("samples must be a 2-d array")
    n, p = x.shape
    if n < p + 2:
        return HzResult(float("nan"), float("nan"), testable=False, is_gaussian=False)

    centered = x - x.mean(axis=0)
    s = centered.T @ centered / n
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(s + eps * np.eye(p))

    # Whiten, then express the squared Mahalanobis distances through the
    # Gram matrix so the double sum stays a couple of matmuls.
    y = solve_triangular(chol, centered.T, lower=True).T
    d_center = np.einsum("ij,ij->i", y, y)
    gram = y @ y.T
    d_pair = d_center[:, None] + d_center[None, :] - 2.0 * gram
    np.maximum(d_pair, 0.0, out=d_pair)

    b = ((2 * p + 1) * n / 4.0) ** (1.0 / (p + 4)) / np.sqrt(2.0)
    b2 = b * b
    term1 = np.exp(-0.5 * b2 * d_pair).sum() / (n * n)
    term2 = np.exp(-0.5 * b2 * d_center / (1.0 + b2)).sum() / n
    hz = n * (term1 - 2.0 * (1.0 + b2) ** (-p / 2.0) * term2
              + (1.0 + 2.0 * b2) ** (-p / 2.0))

    # Moments of the statistic under the null, then a log-normal tail.
    a = 1.0 + 2.0 * b2
    wb = (1.0 + b2) * (1.0 + 3.0 * b2)
    mu = 1.0 - a ** (-p / 2.0) * (1.0 + p * b2 / a
                                  + p * (p + 2) * b2 * b2 / (2.0 * a * a))
    b4 = b2 * b2
    b8 = b4 * b4
    si2 = (2.0 * (1.0 + 4.0 * b2) ** (-p / 2.0)
           + 2.0 * a ** (-p) * (1.0 + 2.0 * p * b4 / (a * a)
                                + 3.0 * p * (p + 2) * b8 / (4.0 * a ** 4))
           - 4.0 * wb ** (-p / 2.0) * (1.0 + 3.0 * p * b4 / (2.0 * wb)
                                       + p * (p + 2) * b8 / (2.0 * wb * wb)))
    pmu = np.log(np.sqrt(mu ** 4 / (si2 + mu * mu)))
    psi = np.sqrt(np.log1p(si2 / (mu * mu)))
    p_value = float(lognorm.sf(hz, psi, scale=np.exp(pmu)))

    return HzResult(float(hz), p_value, testable=True,
                    is_gaussian=p_value > alpha)


@dataclass
class CubeParams:
    """Fitted statistics for one cube.

    feat_mean / feat_std standardise raw signal vectors; mean / cov are
    the Gaussian fitted to the standardised vectors, present only when
    the cube is modeled.
    """

    count: int
    feat_mean: np.ndarray
    feat_std: np.ndarray
    modeled: bool
    testable: bool
    hz_stat: float | None = None
    hz_p: float | None = None
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None

    def to_dict(self) -> dict:
        d = {
            "count": self.count,
            "feat_mean": self.feat_mean.tolist(),
            "feat_std": self.feat_std.tolist(),
            "modeled": self.modeled,
            "testable": self.testable,
            "hz_stat": self.hz_stat,
            "hz_p": self.hz_p,
        }
        d["mean"] = None if self.mean is None else self.mean.tolist()
        d["cov"] = None if self.cov is None else self.cov.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CubeParams":
        return cls(
            count=int(d["count"]),
            feat_mean=np.asarray(d["feat_mean"], dtype=float),
            feat_std=np.asarray(d["feat_std"], dtype=float),
            modeled=bool(d["modeled"]),
            testable=bool(d["testable"]),
            hz_stat=d["hz_stat"],
            hz_p=d["hz_p"],
            mean=None if d["mean"] is None else np.asarray(d["mean"], dtype=float),
            cov=None if d["cov"] is None else np.asarray(d["cov"], dtype=float),
        )


def standardize(signals: np.ndarray, params: CubeParams) -> np.ndarray:
    return (signals - params.feat_mean) / params.feat_std


def mahalanobis(signal: np.ndarray, params: CubeParams,
                eps: float = DEFAULT_EPS) -> float | None:
    """Distance of one signal vector to a cube model; None if unmodeled."""
    if not params.modeled:
        return None
    z = standardize(np.asarray(signal, dtype=float), params)
    dev = z - params.mean
    chol = np.linalg.cholesky(params.cov + eps * np.eye(len(dev)))
    w = solve_triangular(chol, dev, lower=True)
    return float(np.sqrt(w @ w))


def _batch_distances(z: np.ndarray, mean: np.ndarray, cov: np.ndarray,
                     eps: float) -> np.ndarray:
    dev = z - mean
    chol = np.linalg.cholesky(cov + eps * np.eye(cov.shape[0]))
    w = solve_triangular(chol, dev.T, lower=True)
    return np.sqrt(np.einsum("ij,ij->j", w, w))


@dataclass
class NoiseFingerprintModel:
    """Per-cube noise fingerprints plus the shared removal threshold."""

    grid: CubeGrid
    percentile: float
    alpha: float
    min_samples: int
    eps: float
    tau_sim: float
    fitted_at: int
    cubes: dict[tuple[int, int, int], CubeParams] = field(default_factory=dict)

    # dense lookup tables built lazily for the vectorised filter path
    _cache: dict | None = field(default=None, repr=False, compare=False)

    @property
    def n_modeled(self) -> int:
        return sum(1 for c in self.cubes.values() if c.modeled)

    def _ensure_cache(self) -> dict:
        if self._cache is not None:
            return self._cache
        shape = self.grid.shape
        slot_of = np.full(int(np.prod(shape)), -1, dtype=np.int64)
        modeled = sorted(k for k, c in self.cubes.items() if c.modeled)
        m = len(modeled)
        fm = np.zeros((m, SIGNAL_DIM))
        fs = np.ones((m, SIGNAL_DIM))
        mu = np.zeros((m, SIGNAL_DIM))
        linv = np.zeros((m, SIGNAL_DIM, SIGNAL_DIM))
        eye = np.eye(SIGNAL_DIM)
        for slot, key in enumerate(modeled):
            c = self.cubes[key]
            flat = np.ravel_multi_index(key, shape)
            slot_of[flat] = slot
            fm[slot] = c.feat_mean
            fs[slot] = c.feat_std
            mu[slot] = c.mean
            chol = np.linalg.cholesky(c.cov + self.eps * eye)
            linv[slot] = solve_triangular(chol, eye, lower=True)
        self._cache = {"slot_of": slot_of, "fm": fm, "fs": fs,
                       "mu": mu, "linv": linv}
        return self._cache

    def save(self, path: str) -> None:
        doc = {
            "format": "nfp1",
            "grid": self.grid.to_dict(),
            "percentile": self.percentile,
            "alpha": self.alpha,
            "min_samples": self.min_samples,
            "eps": self.eps,
            "tau_sim": self.tau_sim,
            "fitted_at": self.fitted_at,
            "cubes": {",".join(str(i) for i in k): c.to_dict()
                      for k, c in sorted(self.cubes.items())},
        }
        with open(path, "w") as fp:
            json.dump(doc, fp, indent=1)
            fp.write("\n")

    @classmethod
    def load(cls, path: str) -> "NoiseFingerprintModel":
        with open(path) as fp:
            doc = json.load(fp)
        if doc.get("format") != "nfp1":
            raise ValueError(f"not a fingerprint model file: {path}")
        cubes = {}
        for key, cd in doc["cubes"].items():
            idx = tuple(int(v) for v in key.split(","))
            cubes[idx] = CubeParams.from_dict(cd)
        return cls(
            grid=CubeGrid.from_dict(doc["grid"]),
            percentile=float(doc["percentile"]),
            alpha=float(doc["alpha"]),
            min_samples=int(doc["min_samples"]),
            eps=float(doc["eps"]),
            tau_sim=float(doc["tau_sim"]),
            fitted_at=int(doc["fitted_at"]),
            cubes=cubes,
        )


@dataclass
class FilterResult:
    """Per-frame outcome of the point filter."""

    kept: Frame
    kept_mask: np.ndarray       # bool per input point
    distances: np.ndarray       # nan where no cube model applied

    @property
    def n_removed(self) -> int:
        return int((~self.kept_mask).sum())


def fit_model(frames: Iterable[Frame], grid: CubeGrid,
              percentile: float = DEFAULT_PERCENTILE,
              alpha: float = DEFAULT_ALPHA,
              min_samples: int = DEFAULT_MIN_SAMPLES,
              eps: float = DEFAULT_EPS) -> NoiseFingerprintModel:
    """Fit cube fingerprints on noise-only frames.

    The removal threshold tau_sim is the requested percentile of the
    Mahalanobis distances pooled across every point of every modeled
    cube. Raises if no cube passes the normality screen.
    """
    shape = grid.shape
    flat_buckets: dict[int, list[np.ndarray]] = {}
    last_index = -1
    for frame in frames:
        last_index = max(last_index, frame.index)
        if frame.n_points == 0:
            continue
        ids, ok = grid.cube_indices(frame.positions())
        if not ok.any():
            continue
        sigs = frame.signals()[ok]
        keys = ids[ok]
        flat = np.ravel_multi_index(keys.T, shape)
        order = np.argsort(flat, kind="stable")
        flat = flat[order]
        sigs = sigs[order]
        bounds = np.flatnonzero(np.diff(flat)) + 1
        for chunk, fkey in zip(np.split(sigs, bounds),
                               flat[np.concatenate(([0], bounds))]):
            flat_buckets.setdefault(int(fkey), []).append(chunk)

    if not flat_buckets:
        raise ValueError("no in-volume points to fit on")
    buckets = {tuple(int(v) for v in np.unravel_index(fkey, shape)): chunks
               for fkey, chunks in flat_buckets.items()}

    cubes: dict[tuple[int, int, int], CubeParams] = {}
    pooled: list[np.ndarray] = []
    for key in sorted(buckets):
        x = np.vstack(buckets[key])
        n = x.shape[0]
        feat_mean = x.mean(axis=0)
        raw_std = x.std(axis=0)
        feat_std = np.where(raw_std == 0.0, 1.0, raw_std)
        if n < min_samples:
            cubes[key] = CubeParams(n, feat_mean, feat_std,
                                    modeled=False, testable=False)
            continue
        if not raw_std.any():
            # Constant returns. The normality screen would reject them,
            # but a perfectly repeating fingerprint is the easiest noise
            # there is: model the cube as an eps-ball around the point.
            # Its zero distances are left out of the tau pool so they
            # cannot drag the percentile down.
            cubes[key] = CubeParams(n, feat_mean, feat_std, modeled=True,
                                    testable=False,
                                    mean=np.zeros(SIGNAL_DIM),
                                    cov=np.zeros((SIGNAL_DIM, SIGNAL_DIM)))
            continue
        z = (x - feat_mean) / feat_std
        z_hz = z
        if n > HZ_MAX_SAMPLES:
            pick = np.unique(np.round(
                np.linspace(0, n - 1, HZ_MAX_SAMPLES)).astype(int))
            z_hz = z[pick]
        hz = hz_test(z_hz, alpha=alpha, eps=eps)
        if not (hz.testable and hz.is_gaussian):
            cubes[key] = CubeParams(n, feat_mean, feat_std,
                                    modeled=False, testable=hz.testable,
                                    hz_stat=hz.statistic if hz.testable else None,
                                    hz_p=hz.p_value if hz.testable else None)
            continue
        mean = z.mean(axis=0)
        dev = z - mean
        cov = dev.T @ dev / n
        cubes[key] = CubeParams(n, feat_mean, feat_std, modeled=True,
                                testable=True, hz_stat=hz.statistic,
                                hz_p=hz.p_value, mean=mean, cov=cov)
        pooled.append(_batch_distances(z, mean, cov, eps))

    if not pooled:
        raise ValueError("model degenerate: no cube passed the normality screen")

    tau_sim = float(np.percentile(np.concatenate(pooled), percentile))
    return NoiseFingerprintModel(grid=grid, percentile=percentile, alpha=alpha,
                                 min_samples=min_samples, eps=eps,
                                 tau_sim=tau_sim, fitted_at=last_index,
                                 cubes=cubes)


def filter_frame(model: NoiseFingerprintModel, frame: Frame) -> FilterResult:
    """Drop points that look like their cube's noise fingerprint.

    Points in unmodeled cubes or outside the grid always pass.
    """
    n = frame.n_points
    kept_mask = np.ones(n, dtype=bool)
    distances = np.full(n, np.nan)
    if n == 0:
        return FilterResult(frame, kept_mask, distances)

    cache = model._ensure_cache()
    ids, ok = model.grid.cube_indices(frame.positions())
    slots = np.full(n, -1, dtype=np.int64)
    if ok.any():
        flat = np.ravel_multi_index(ids[ok].T, model.grid.shape)
        slots[ok] = cache["slot_of"][flat]
    hit = slots >= 0
    if hit.any():
        s = slots[hit]
        sig = frame.signals()[hit]
        z = (sig - cache["fm"][s]) / cache["fs"][s]
        dev = z - cache["mu"][s]
        w = np.einsum("nij,nj->ni", cache["linv"][s], dev)
        d = np.sqrt(np.einsum("ni,ni->n", w, w))
        distances[hit] = d
        removed = np.zeros(n, dtype=bool)
        removed[hit] = d < model.tau_sim
        kept_mask = ~removed

    kept = Frame(frame.index, frame.timestamp, frame.points[kept_mask])
    return FilterResult(kept, kept_mask, distances)


@dataclass
class UpdatePolicy:
    """When and how to refresh the fingerprint model.

    interval_frames defaults to two days of 0.64 s frames. Points within
    exclusion_radius_m of a confirmed track are left out of the refit.
    """

    interval_frames: int = 270_000
    window_frames: int = 700
    exclusion_radius_m: float = 10.0

    def due(self, frames_since_fit: int) -> bool:
        return frames_since_fit >= self.interval_frames


def update_model(model: NoiseFingerprintModel, frames: Sequence[Frame],
                 track_positions: Mapping[int, np.ndarray] | None,
                 policy: UpdatePolicy) -> NoiseFingerprintModel:
    """Refit on a recent window, excluding points near confirmed tracks.

    track_positions maps frame index to an (m, 3) array of confirmed
    track positions for that frame.
    """
    window = list(frames)[-policy.window_frames:]
    cleaned = []
    r2 = policy.exclusion_radius_m ** 2
    for frame in window:
        excl = None if track_positions is None else track_positions.get(frame.index)
        if excl is None or len(excl) == 0 or frame.n_points == 0:
            cleaned.append(frame)
            continue
        pos = frame.positions()
        excl = np.asarray(excl, dtype=float).reshape(-1, 3)
        diff = pos[:, None, :] - excl[None, :, :]
        near = (np.einsum("nmk,nmk->nm", diff, diff) < r2).any(axis=1)
        cleaned.append(Frame(frame.index, frame.timestamp, frame.points[~near]))
    return fit_model(cleaned, model.grid, percentile=model.percentile,
                     alpha=model.alpha, min_samples=model.min_samples,
                     eps=model.eps)
