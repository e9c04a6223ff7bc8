"""Multi-target tracking with an interacting-multiple-model UKF.

The engine is generic over state dimension and motion models and runs
batched: all per-track linear algebra is vectorised over a leading
track axis, which keeps unfiltered ablation runs (thousands of live
candidates) tractable.

The flight state is [x, y, z, phi, theta, v, omega]: heading and
elevation angles, speed along that direction, and horizontal turn
rate. Two models share the state: constant velocity, which ignores the
turn rate, and constant turn rate with constant vertical rate.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assign import gated_assignment
from .core import FRAME_DT, TrackedUav

TWO_PI = 2.0 * np.pi

# state vector layout
S_X, S_Y, S_Z, S_PHI, S_THETA, S_V, S_OMEGA = range(7)
STATE_DIM = 7
SMALL_RATE = 1e-4


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), TWO_PI)


def cv_propagate(state: np.ndarray, dt: float) -> np.ndarray:
    """Straight flight along the current heading; turn rate ignored."""
    out = np.array(state, dtype=float, copy=True)
    phi = state[..., S_PHI]
    theta = state[..., S_THETA]
    v = state[..., S_V]
    vh = v * np.cos(theta)
    out[..., S_X] = state[..., S_X] + vh * np.cos(phi) * dt
    out[..., S_Y] = state[..., S_Y] + vh * np.sin(phi) * dt
    out[..., S_Z] = state[..., S_Z] + v * np.sin(theta) * dt
    return out


def ctrv_propagate(state: np.ndarray, dt: float) -> np.ndarray:
    """Horizontal turn at constant rate, constant vertical rate.

    Horizontal speed v*cos(theta) is preserved through the turn; the
    straight-line limit is used below a small turn rate.
    """
    out = np.array(state, dtype=float, copy=True)
    phi = state[..., S_PHI]
    theta = state[..., S_THETA]
    v = state[..., S_V]
    om = state[..., S_OMEGA]
    vh = v * np.cos(theta)
    phi1 = phi + om * dt

    small = np.abs(om) < SMALL_RATE
    om_safe = np.where(small, 1.0, om)
    dx_turn = vh / om_safe * (np.sin(phi1) - np.sin(phi))
    dy_turn = -vh / om_safe * (np.cos(phi1) - np.cos(phi))
    dx = np.where(small, vh * np.cos(phi) * dt, dx_turn)
    dy = np.where(small, vh * np.sin(phi) * dt, dy_turn)

    out[..., S_X] = state[..., S_X] + dx
    out[..., S_Y] = state[..., S_Y] + dy
    out[..., S_Z] = state[..., S_Z] + v * np.sin(theta) * dt
    out[..., S_PHI] = wrap_angle(phi1)
    return out


def state_velocity(state: np.ndarray) -> np.ndarray:
    """Cartesian velocity (..., 3) of a flight state."""
    phi = state[..., S_PHI]
    theta = state[..., S_THETA]
    v = state[..., S_V]
    vh = v * np.cos(theta)
    return np.stack([vh * np.cos(phi), vh * np.sin(phi),
                     v * np.sin(theta)], axis=-1)


@dataclass
class ModelSpec:
    """One motion hypothesis: a batched propagator plus process noise."""

    propagate: Callable[[np.ndarray, float], np.ndarray]
    q_diag: np.ndarray  # per-second process noise variance, (state_dim,)


def make_psd(p: np.ndarray, floor: float = 1e-9) -> np.ndarray:
    """Clamp eigenvalues so the (batched) matrix is safely PSD.

    The scaled unscented transform has a negative centre weight, so a
    transformed covariance can pick up small negative eigenvalues.
    """
    p = 0.5 * (p + np.swapaxes(p, -1, -2))
    w, v = np.linalg.eigh(p)
    if (w > floor).all():
        return p
    w = np.maximum(w, floor)
    return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)


def _safe_cholesky(p: np.ndarray) -> np.ndarray:
    p = 0.5 * (p + np.swapaxes(p, -1, -2))
    try:
        return np.linalg.cholesky(p)
    except np.linalg.LinAlgError:
        pass
    # trace-scaled ridge first: far cheaper than the eigendecomposition
    # and small enough to leave the filter state effectively unchanged
    eye = np.eye(p.shape[-1])
    tr = np.trace(p, axis1=-2, axis2=-1) / p.shape[-1]
    scale = np.maximum(tr, 1e-12)[..., None, None]
    for jitter in (1e-9, 1e-6, 1e-4, 1e-2):
        try:
            return np.linalg.cholesky(p + jitter * scale * eye)
        except np.linalg.LinAlgError:
            continue
    fixed = make_psd(p)
    for jitter in (0.0, 1e-9, 1e-6):
        try:
            return np.linalg.cholesky(fixed + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    return np.linalg.cholesky(fixed + 1e-3 * eye)


class ImmEngine:
    """Batched IMM-UKF over an arbitrary state space.

    Arrays are shaped (tracks, models, ...) and every method is pure:
    callers keep ownership of the state arrays.
    """

    def __init__(self, models: list[ModelSpec], transition: np.ndarray,
                 r_cov: np.ndarray, state_dim: int = STATE_DIM,
                 angle_dims: tuple[int, ...] = (S_PHI,),
                 meas_dim: int = 3,
                 alpha: float = 0.5, beta: float = 2.0, kappa: float = 0.0):
        self.models = models
        self.transition = np.asarray(transition, dtype=float)
        self.r_cov = np.asarray(r_cov, dtype=float)
        self.n = state_dim
        self.angle_dims = tuple(angle_dims)
        self.meas_dim = meas_dim

        n = state_dim
        lam = alpha * alpha * (n + kappa) - n
        self.scale = n + lam
        self.wm = np.full(2 * n + 1, 1.0 / (2.0 * self.scale))
        self.wc = self.wm.copy()
        self.wm[0] = lam / self.scale
        self.wc[0] = lam / self.scale + (1.0 - alpha * alpha + beta)

    # -- sigma-point machinery -----------------------------------------

    def _sigma_points(self, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
        # mean (B, n), cov (B, n, n) -> (B, 2n+1, n)
        b, n = mean.shape
        root = _safe_cholesky(self.scale * cov)
        offsets = np.swapaxes(root, -1, -2)  # rows are scaled columns of L
        sig = np.empty((b, 2 * n + 1, n))
        sig[:, 0] = mean
        sig[:, 1:n + 1] = mean[:, None, :] + offsets
        sig[:, n + 1:] = mean[:, None, :] - offsets
        return sig

    def _ut_mean(self, sigmas: np.ndarray, dims: slice | None = None,
                 angle_dims: tuple[int, ...] = ()) -> np.ndarray:
        pts = sigmas if dims is None else sigmas[..., dims]
        mean = np.einsum("s,bsn->bn", self.wm, pts)
        for d in angle_dims:
            sa = np.einsum("s,bs->b", self.wm, np.sin(pts[..., d]))
            ca = np.einsum("s,bs->b", self.wm, np.cos(pts[..., d]))
            mean[:, d] = np.arctan2(sa, ca)
        return mean

    def _residual(self, pts: np.ndarray, mean: np.ndarray,
                  angle_dims: tuple[int, ...]) -> np.ndarray:
        dev = pts - mean[:, None, :]
        for d in angle_dims:
            dev[..., d] = wrap_angle(dev[..., d])
        return dev

    def unscented_transform(self, mean: np.ndarray, cov: np.ndarray,
                            fn: Callable[[np.ndarray], np.ndarray],
                            noise: np.ndarray | None = None,
                            angle_dims: tuple[int, ...] | None = None):
        """Push (mean, cov) batches through fn; returns transformed pair."""
        if angle_dims is None:
            angle_dims = self.angle_dims
        sig = self._sigma_points(mean, cov)
        out = fn(sig)
        m = self._ut_mean(out, angle_dims=angle_dims)
        dev = self._residual(out, m, angle_dims)
        # dev^T diag(wc) dev as a matmul; measurably faster than einsum
        c = np.matmul(np.swapaxes(dev, -1, -2) * self.wc, dev)
        if noise is not None:
            c = c + noise
        return m, c

    # -- IMM steps ------------------------------------------------------

    def _mix(self, means, covs, mu):
        # mu (T, M); transition row i -> column j
        c_pred = mu @ self.transition                    # (T, M)
        w = (mu[:, :, None] * self.transition[None, :, :])
        w = w / np.maximum(c_pred[:, None, :], 1e-300)   # (T, Mi, Mj)

        # weighted means per target model, circular on angle dims
        mixed_mean = np.einsum("tij,tin->tjn", w, means)
        for d in self.angle_dims:
            sa = np.einsum("tij,ti->tj", w, np.sin(means[..., d]))
            ca = np.einsum("tij,ti->tj", w, np.cos(means[..., d]))
            mixed_mean[..., d] = np.arctan2(sa, ca)

        dev = means[:, :, None, :] - mixed_mean[:, None, :, :]  # (T,Mi,Mj,n)
        for d in self.angle_dims:
            dev[..., d] = wrap_angle(dev[..., d])
        mixed_cov = (np.einsum("tij,tikl->tjkl", w, covs)
                     + np.einsum("tij,tijk,tijl->tjkl", w, dev, dev))
        return mixed_mean, mixed_cov, c_pred

    def predict(self, means, covs, mu, dt: float):
        """IMM mixing plus per-model UKF prediction."""
        t, m, n = means.shape
        if t == 0:
            return means, covs, mu
        mixed_mean, mixed_cov, c_pred = self._mix(means, covs, mu)
        out_mean = np.empty_like(mixed_mean)
        out_cov = np.empty_like(mixed_cov)
        for j, spec in enumerate(self.models):
            q = np.diag(spec.q_diag) * dt
            out_mean[:, j], out_cov[:, j] = self.unscented_transform(
                mixed_mean[:, j], mixed_cov[:, j],
                lambda s: spec.propagate(s, dt), noise=q)
        return out_mean, out_cov, c_pred

    def measure(self, means, covs):
        """Predicted measurement mean per model and combined position."""
        return means[..., :self.meas_dim]

    def update(self, means, covs, mu_pred, z):
        """Per-model measurement update plus model-probability update.

        means/covs are the predicted arrays, mu_pred the mixing-stage
        model probabilities, z an (T, meas_dim) batch. The measurement
        is a linear slice of the state, for which the unscented moments
        are the exact Kalman ones, so the update uses them directly;
        the covariance uses the Joseph form to stay PSD.
        """
        t, m, n = means.shape
        if t == 0:
            return means, covs, mu_pred
        md = self.meas_dim
        up_mean = np.empty_like(means)
        up_cov = np.empty_like(covs)
        loglik = np.empty((t, m))
        eye = np.eye(n)
        for j in range(m):
            p = 0.5 * (covs[:, j] + np.swapaxes(covs[:, j], -1, -2))
            s_cov = p[:, :md, :md] + self.r_cov
            s_inv = np.linalg.inv(s_cov)
            k = p[:, :, :md] @ s_inv
            innov = z - means[:, j, :md]
            up_mean[:, j] = means[:, j] + np.einsum("bij,bj->bi", k, innov)
            imkh = np.broadcast_to(eye, (t, n, n)).copy()
            imkh[:, :, :md] -= k
            up_cov[:, j] = (imkh @ p @ np.swapaxes(imkh, -1, -2)
                            + k @ self.r_cov @ np.swapaxes(k, -1, -2))
            sign, logdet = np.linalg.slogdet(s_cov)
            maha = np.einsum("bi,bij,bj->b", innov, s_inv, innov)
            loglik[:, j] = -0.5 * (maha + logdet + md * np.log(TWO_PI))
        for d in self.angle_dims:
            up_mean[..., d] = wrap_angle(up_mean[..., d])

        shifted = np.exp(loglik - loglik.max(axis=1, keepdims=True))
        mu_new = mu_pred * shifted
        norm = mu_new.sum(axis=1, keepdims=True)
        bad = norm[:, 0] <= 0.0
        mu_new = np.where(bad[:, None], mu_pred, mu_new / np.maximum(norm, 1e-300))
        return up_mean, up_cov, mu_new

    def combine(self, means, covs, mu):
        """Collapse the model bank into one mean and covariance per track."""
        mean = np.einsum("tm,tmn->tn", mu, means)
        for d in self.angle_dims:
            sa = np.einsum("tm,tm->t", mu, np.sin(means[..., d]))
            ca = np.einsum("tm,tm->t", mu, np.cos(means[..., d]))
            mean[:, d] = np.arctan2(sa, ca)
        dev = means - mean[:, None, :]
        for d in self.angle_dims:
            dev[..., d] = wrap_angle(dev[..., d])
        cov = (np.einsum("tm,tmij->tij", mu, covs)
               + np.einsum("tm,tmi,tmj->tij", mu, dev, dev))
        return mean, cov


# -- track management ---------------------------------------------------

CANDIDATE = "candidate"
CONFIRMED = "confirmed"
VERIFIED = "verified"


@dataclass
class TrackerConfig:
    dt: float = FRAME_DT
    gate_m: float = 15.0
    confirm_hits: int = 6
    max_misses: int = 3
    sigma_meas_m: float = 1.5
    transition: tuple = ((0.95, 0.05), (0.05, 0.95))
    ut_alpha: float = 0.5
    ut_beta: float = 2.0
    ut_kappa: float = 0.0
    init_pos_sigma: float = 10.0
    init_angle_sigma: float = 0.5
    init_speed_sigma: float = 10.0
    init_rate_sigma: float = 0.1
    # per-second process noise, [pos, pos, pos, phi, theta, v, omega];
    # generous heading noise so sharp path corners do not shed the track
    q_cv: tuple = (0.25, 0.25, 0.25, 0.2, 0.01, 2.0, 0.0004)
    q_ctrv: tuple = (0.25, 0.25, 0.25, 0.25, 0.01, 2.0, 0.02)
    history_len: int = 6


@dataclass
class Track:
    """Bookkeeping for one tracked object; filter state lives in arrays."""

    track_id: int
    status: str = CANDIDATE
    consecutive_hits: int = 1
    misses: int = 0
    total_hits: int = 1
    born_at: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=6))
    consec_true: int = 0
    consec_false: int = 0


@dataclass
class TrackRecord:
    """Per-frame report line for a live track."""

    frame: int
    track_id: int
    status: str
    position: np.ndarray
    velocity: np.ndarray
    model_probs: np.ndarray
    obj: np.ndarray | None     # the matched observation, if any


class Tracker:
    """Lifecycle manager around the IMM engine.

    Candidates confirm after confirm_hits consecutive matched frames
    and die after max_misses consecutive missed frames. Confirmation is
    one way: a later miss run kills the track but never demotes it.
    """

    def __init__(self, config: TrackerConfig | None = None):
        self.config = cfg = config or TrackerConfig()
        r = np.eye(3) * cfg.sigma_meas_m ** 2
        models = [ModelSpec(cv_propagate, np.asarray(cfg.q_cv, dtype=float)),
                  ModelSpec(ctrv_propagate, np.asarray(cfg.q_ctrv, dtype=float))]
        self.engine = ImmEngine(models, np.asarray(cfg.transition), r,
                                alpha=cfg.ut_alpha, beta=cfg.ut_beta,
                                kappa=cfg.ut_kappa)
        self.tracks: list[Track] = []
        self.means = np.zeros((0, 2, STATE_DIM))
        self.covs = np.zeros((0, 2, STATE_DIM, STATE_DIM))
        self.mu = np.zeros((0, 2))
        self._next_id = 0

    def _init_cov(self) -> np.ndarray:
        cfg = self.config
        return np.diag([cfg.init_pos_sigma ** 2] * 3
                       + [cfg.init_angle_sigma ** 2] * 2
                       + [cfg.init_speed_sigma ** 2, cfg.init_rate_sigma ** 2])

    def _spawn_state(self, centroid: np.ndarray):
        x, y, z = centroid
        rho = np.hypot(x, y)
        phi = np.arctan2(y, x)
        theta = np.arctan2(z, rho) if rho > 0 else 0.0
        mean = np.array([x, y, z, phi, theta, 0.0, 0.0])
        return mean, self._init_cov()

    def step(self, frame_index: int, objects) -> list[TrackRecord]:
        """Advance one frame against this frame's kept objects.

        objects iterable must expose centroid and obj_vector(); returns
        a record per surviving track.
        """
        cfg = self.config
        n_trk = len(self.tracks)
        obj_list = list(objects)
        obj_vecs = [o.obj_vector() for o in obj_list]

        means_p, covs_p, mu_p = self.engine.predict(
            self.means, self.covs, self.mu, cfg.dt)
        combined_mean, _ = (self.engine.combine(means_p, covs_p, mu_p)
                            if n_trk else (np.zeros((0, STATE_DIM)), None))

        matches = {}
        if n_trk and obj_list:
            obj_pos = np.stack([o.centroid for o in obj_list])
            for ti, oj, _ in gated_assignment(
                    combined_mean[:, :3], obj_pos, cfg.gate_m):
                matches[ti] = oj

        if matches:
            idx = np.fromiter(matches.keys(), dtype=int)
            z = np.stack([obj_list[matches[i]].centroid for i in idx])
            up_mean, up_cov, up_mu = self.engine.update(
                means_p[idx], covs_p[idx], mu_p[idx], z)
            means_p[idx], covs_p[idx], mu_p[idx] = up_mean, up_cov, up_mu

        keep = np.ones(n_trk, dtype=bool)
        match_of = {}
        for ti, track in enumerate(self.tracks):
            if ti in matches:
                match_of[id(track)] = matches[ti]
                track.consecutive_hits += 1
                track.total_hits += 1
                track.misses = 0
                track.history.append(obj_vecs[matches[ti]])
                if (track.status == CANDIDATE
                        and track.consecutive_hits >= cfg.confirm_hits):
                    track.status = CONFIRMED
            else:
                track.misses += 1
                track.consecutive_hits = 0
                if track.misses >= cfg.max_misses:
                    keep[ti] = False

        survivors = [t for t, k in zip(self.tracks, keep) if k]
        means_p, covs_p, mu_p = means_p[keep], covs_p[keep], mu_p[keep]
        matched_objs = set(matches.values())

        spawn_ids = [oj for oj in range(len(obj_list))
                     if oj not in matched_objs]
        for oj in spawn_ids:
            track = Track(track_id=self._next_id, born_at=frame_index,
                          history=deque(maxlen=cfg.history_len))
            track.history.append(obj_vecs[oj])
            self._next_id += 1
            survivors.append(track)

        if spawn_ids:
            cent = np.stack([obj_list[oj].centroid for oj in spawn_ids])
            n_new = len(spawn_ids)
            sm = np.zeros((n_new, STATE_DIM))
            sm[:, :3] = cent
            rho = np.hypot(cent[:, 0], cent[:, 1])
            sm[:, 3] = np.arctan2(cent[:, 1], cent[:, 0])
            sm[:, 4] = np.where(rho > 0, np.arctan2(cent[:, 2], rho), 0.0)
            means_p = np.concatenate([means_p, sm[:, None, :].repeat(2, axis=1)])
            covs_p = np.concatenate(
                [covs_p, np.tile(self._init_cov(), (n_new, 2, 1, 1))])
            mu_p = np.concatenate([mu_p, np.full((n_new, 2), 0.5)])

        self.tracks = survivors
        self.means, self.covs, self.mu = means_p, covs_p, mu_p

        records = []
        if self.tracks:
            mean, _ = self.engine.combine(self.means, self.covs, self.mu)
            vel = state_velocity(mean)
            # mean/vel are fresh arrays and probs is a snapshot, so the
            # records can hold row views instead of per-row copies
            pos = mean[:, :3]
            probs = self.mu.copy()
            for i, track in enumerate(self.tracks):
                if track.born_at == frame_index:
                    obj = track.history[-1]
                else:
                    oj = match_of.get(id(track))
                    obj = obj_vecs[oj] if oj is not None else None
                records.append(TrackRecord(
                    frame=frame_index, track_id=track.track_id,
                    status=track.status, position=pos[i],
                    velocity=vel[i], model_probs=probs[i], obj=obj))
        return records

    def drop(self, track_id: int) -> None:
        """Remove a track (classifier rejection)."""
        keep = np.array([t.track_id != track_id for t in self.tracks])
        self.tracks = [t for t in self.tracks if t.track_id != track_id]
        self.means = self.means[keep]
        self.covs = self.covs[keep]
        self.mu = self.mu[keep]

    def emitted(self, records: list[TrackRecord],
                require_verified: bool) -> list[TrackedUav]:
        """Externally reported tracks for a frame."""
        wanted = (VERIFIED,) if require_verified else (CONFIRMED, VERIFIED)
        out = []
        for r in records:
            if r.status in wanted:
                out.append(TrackedUav(r.track_id, *r.position, *r.velocity))
        return out
