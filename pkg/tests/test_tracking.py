"""Motion models, the IMM-UKF engine, and track management."""
import numpy as np
import pytest
from scipy.integrate import quad

from skysift.tracking import (CANDIDATE, CONFIRMED, ImmEngine, ModelSpec,
                              STATE_DIM, Tracker, TrackerConfig, cv_propagate,
                              ctrv_propagate, make_psd, state_velocity,
                              wrap_angle)


class Obs:
    """Minimal stand-in for a kept object."""

    def __init__(self, pos):
        self.centroid = np.asarray(pos, dtype=float)

    def obj_vector(self):
        return np.concatenate([self.centroid, np.zeros(6)])


def _state(x=0.0, y=0.0, z=0.0, phi=0.0, theta=0.0, v=0.0, om=0.0):
    return np.array([x, y, z, phi, theta, v, om], dtype=float)


class TestAngles:
    def test_wrap_range(self):
        assert wrap_angle(np.pi) == pytest.approx(np.pi)
        assert wrap_angle(-np.pi) == pytest.approx(np.pi)
        assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
        assert wrap_angle(-3 * np.pi / 2) == pytest.approx(np.pi / 2)

    def test_wrap_vectorised(self):
        a = np.array([0.0, 2 * np.pi, 7 * np.pi, -6 * np.pi])
        w = wrap_angle(a)
        assert np.allclose(w, [0.0, 0.0, np.pi, 0.0])
        assert np.all(w <= np.pi)
        assert np.all(w > -np.pi)


class TestPropagation:
    def test_cv_zero_speed_fixed_point(self):
        s = _state(10.0, -5.0, 30.0, 1.2, 0.3, 0.0, 0.0)
        assert np.allclose(cv_propagate(s, 0.64), s)

    def test_cv_hand_case(self):
        s = _state(v=10.0)
        out = cv_propagate(s, 0.64)
        assert out[0] == pytest.approx(6.4)
        assert out[1] == pytest.approx(0.0)
        assert out[2] == pytest.approx(0.0)

    def test_cv_climb(self):
        s = _state(theta=np.pi / 2, v=5.0)
        out = cv_propagate(s, 2.0)
        assert out[2] == pytest.approx(10.0)
        assert out[0] == pytest.approx(0.0, abs=1e-9)

    def test_ctrv_matches_quadrature(self):
        # oracle: numerically integrate the turning velocity field
        for phi, theta, v, om, dt in [(0.3, 0.1, 9.0, 0.5, 0.64),
                                      (-1.2, 0.0, 14.0, -1.1, 2.0),
                                      (2.9, -0.2, 6.0, 0.2, 5.0)]:
            s = _state(1.0, -2.0, 30.0, phi, theta, v, om)
            out = ctrv_propagate(s, dt)
            vh = v * np.cos(theta)
            dx = quad(lambda u: vh * np.cos(phi + om * u), 0, dt)[0]
            dy = quad(lambda u: vh * np.sin(phi + om * u), 0, dt)[0]
            assert out[0] == pytest.approx(1.0 + dx, abs=1e-9)
            assert out[1] == pytest.approx(-2.0 + dy, abs=1e-9)
            assert out[2] == pytest.approx(30.0 + v * np.sin(theta) * dt,
                                           abs=1e-12)
            assert out[3] == pytest.approx(wrap_angle(phi + om * dt))

    def test_ctrv_full_circle(self):
        s = _state(5.0, 7.0, 50.0, 0.8, 0.0, 10.0, np.pi / 2)
        out = ctrv_propagate(s, 4.0)
        assert np.allclose(out[:3], s[:3], atol=1e-9)
        assert out[3] == pytest.approx(wrap_angle(0.8))

    def test_ctrv_zero_rate_limit(self):
        s = _state(0.0, 0.0, 10.0, 0.7, 0.1, 12.0, 1e-9)
        a = ctrv_propagate(s, 0.64)
        b = cv_propagate(_state(0.0, 0.0, 10.0, 0.7, 0.1, 12.0, 0.0), 0.64)
        assert np.allclose(a[:3], b[:3], atol=1e-6)

    def test_state_velocity_matches_finite_difference(self):
        s = _state(3.0, 4.0, 5.0, 0.7, -0.3, 11.0, 0.0)
        h = 1e-7
        fd = (cv_propagate(s, h)[:3] - s[:3]) / h
        assert np.allclose(state_velocity(s), fd, atol=1e-5)

    def test_propagate_batched(self):
        rng = np.random.default_rng(41)
        batch = rng.normal(size=(6, 7))
        for prop in (cv_propagate, ctrv_propagate):
            out = prop(batch, 0.64)
            for k in range(6):
                assert np.allclose(out[k], prop(batch[k], 0.64), atol=1e-12)


class TestMakePsd:
    def test_repairs_negative_eigenvalues(self):
        rng = np.random.default_rng(42)
        a = rng.normal(size=(7, 7))
        sym = 0.5 * (a + a.T)
        fixed = make_psd(sym)
        assert np.allclose(fixed, fixed.T)
        assert np.linalg.eigvalsh(fixed).min() >= 1e-9 * (1 - 1e-6)

    def test_keeps_good_matrices(self):
        rng = np.random.default_rng(43)
        a = rng.normal(size=(7, 7))
        p = a @ a.T + np.eye(7)
        assert np.allclose(make_psd(p), p, atol=1e-10)


def _plain_engine(state_dim, meas_dim=3):
    spec = ModelSpec(propagate=lambda s, dt: s, q_diag=np.zeros(state_dim))
    return ImmEngine([spec], np.array([[1.0]]), np.eye(meas_dim),
                     state_dim=state_dim, angle_dims=(), meas_dim=meas_dim)


class TestUnscented:
    def test_identity_function(self):
        eng = _plain_engine(7)
        rng = np.random.default_rng(44)
        a = rng.normal(size=(7, 7))
        cov = (a @ a.T + np.eye(7))[None]
        mean = rng.normal(size=(1, 7))
        m, c = eng.unscented_transform(mean, cov, lambda s: s)
        assert np.allclose(m, mean, atol=1e-9)
        assert np.allclose(c, cov, atol=1e-9)

    def test_linear_map_is_exact(self):
        eng = _plain_engine(7)
        rng = np.random.default_rng(45)
        amat = rng.normal(size=(7, 7))
        a = rng.normal(size=(7, 7))
        cov = (a @ a.T + np.eye(7))[None]
        mean = rng.normal(size=(1, 7))
        m, c = eng.unscented_transform(mean, cov, lambda s: s @ amat.T)
        assert np.allclose(m[0], amat @ mean[0], atol=1e-7)
        assert np.allclose(c[0], amat @ cov[0] @ amat.T, atol=1e-7)

    def test_square_captures_second_moment(self):
        eng = _plain_engine(1, meas_dim=1)
        mean = np.zeros((1, 1))
        cov = np.ones((1, 1, 1))
        m, _ = eng.unscented_transform(mean, cov, lambda s: s ** 2)
        assert m[0, 0] == pytest.approx(1.0, abs=1e-12)


def _lin_prop(s, dt):
    out = np.array(s, dtype=float, copy=True)
    out[..., :3] = out[..., :3] + out[..., 3:] * dt
    return out


class TestLinearEquivalence:
    def test_engine_matches_reference_kalman(self):
        # on a purely linear model the sigma-point engine must reduce
        # to a plain Kalman filter; reference written longhand below
        dt = 0.64
        q_diag = np.array([0.3, 0.3, 0.3, 0.05, 0.05, 0.05])
        r = 2.25 * np.eye(3)
        spec = ModelSpec(propagate=_lin_prop, q_diag=q_diag)
        eng = ImmEngine([spec], np.array([[1.0]]), r, state_dim=6,
                        angle_dims=(), meas_dim=3)

        rng = np.random.default_rng(46)
        truth_v = np.array([8.0, -3.0, 1.0])
        x0 = np.array([100.0, 200.0, 80.0, 0.0, 0.0, 0.0])
        p0 = np.diag([25.0, 25.0, 25.0, 16.0, 16.0, 16.0])

        means = x0[None, None].copy()
        covs = p0[None, None].copy()
        mu = np.ones((1, 1))

        f = np.eye(6)
        f[:3, 3:] = dt * np.eye(3)
        h = np.zeros((3, 6))
        h[:, :3] = np.eye(3)
        q = np.diag(q_diag) * dt
        ref_x = x0.copy()
        ref_p = p0.copy()

        worst = 0.0
        for k in range(100):
            pos = np.array([100.0, 200.0, 80.0]) + truth_v * dt * (k + 1)
            z = pos + rng.normal(0.0, 1.5, size=3)

            means, covs, mu_pred = eng.predict(means, covs, mu, dt)
            means, covs, mu = eng.update(means, covs, mu_pred, z[None])
            est, _ = eng.combine(means, covs, mu)

            ref_x = f @ ref_x
            ref_p = f @ ref_p @ f.T + q
            s_cov = h @ ref_p @ h.T + r
            gain = ref_p @ h.T @ np.linalg.inv(s_cov)
            ref_x = ref_x + gain @ (z - h @ ref_x)
            ref_p = (np.eye(6) - gain @ h) @ ref_p

            worst = max(worst, np.abs(est[0, :3] - ref_x[:3]).max())
        assert worst < 1e-3
        assert np.allclose(est[0, :3], ref_x[:3], atol=1e-9)


class TestTracker:
    def _run_line(self, n, speed=8.0, start=(100.0, 50.0, 60.0)):
        trk = Tracker(TrackerConfig())
        recs = []
        for i in range(n):
            pos = np.array(start) + [speed * 0.64 * i, 0.0, 0.0]
            recs.append(trk.step(i, [Obs(pos)]))
        return trk, recs

    def test_newborn_record(self):
        trk, recs = self._run_line(1)
        assert len(recs[0]) == 1
        r = recs[0][0]
        assert r.status == CANDIDATE
        assert np.allclose(r.position, [100.0, 50.0, 60.0])
        assert np.allclose(r.velocity, 0.0)

    def test_confirmation_after_six_hits(self):
        trk, recs = self._run_line(8)
        statuses = [r[0].status for r in recs]
        assert statuses[:5] == [CANDIDATE] * 5
        assert statuses[5:] == [CONFIRMED] * 3

    def test_noiseless_track_converges(self):
        trk, recs = self._run_line(60)
        last = recs[-1][0]
        true_pos = np.array([100.0, 50.0, 60.0]) + [8.0 * 0.64 * 59, 0.0, 0.0]
        assert np.linalg.norm(last.position - true_pos) < 0.5
        # the loose heading process noise trades speed accuracy for
        # maneuver response; direction matters more than magnitude here
        assert np.allclose(last.velocity, [8.0, 0.0, 0.0], atol=1.5)
        assert abs(last.velocity[1]) < 0.1 and abs(last.velocity[2]) < 0.1
        # straight flight: the constant-velocity model should dominate
        assert last.model_probs[0] > 0.5

    def test_track_dies_after_three_misses(self):
        trk, recs = self._run_line(10)
        tid = recs[-1][0].track_id
        alive = []
        for i in range(10, 14):
            alive.append(trk.step(i, []))
        assert len(alive[0]) == 1 and alive[0][0].obj is None
        assert len(alive[1]) == 1
        assert alive[2] == []
        assert trk.tracks == []
        assert alive[1][0].status == CONFIRMED  # no demotion on misses

    def test_miss_then_recovery(self):
        trk, recs = self._run_line(10)
        tid = recs[-1][0].track_id
        trk.step(10, [])
        pos = np.array([100.0, 50.0, 60.0]) + [8.0 * 0.64 * 11, 0.0, 0.0]
        rec = trk.step(11, [Obs(pos)])
        assert rec[0].track_id == tid
        assert rec[0].obj is not None

    def test_batched_matches_isolated(self):
        a0 = np.array([100.0, 0.0, 50.0])
        b0 = np.array([600.0, 400.0, 120.0])
        va = np.array([8.0, 0.0, 0.0])
        vb = np.array([-5.0, 3.0, 0.5])

        joint = Tracker(TrackerConfig())
        alone_a = Tracker(TrackerConfig())
        alone_b = Tracker(TrackerConfig())
        for i in range(30):
            pa = a0 + va * 0.64 * i
            pb = b0 + vb * 0.64 * i
            rj = joint.step(i, [Obs(pa), Obs(pb)])
            ra = alone_a.step(i, [Obs(pa)])
            rb = alone_b.step(i, [Obs(pb)])
        by_pos = sorted(rj, key=lambda r: r.position[0])
        solo = sorted([ra[0], rb[0]], key=lambda r: r.position[0])
        for jrec, srec in zip(by_pos, solo):
            assert np.allclose(jrec.position, srec.position, atol=1e-9)
            assert np.allclose(jrec.velocity, srec.velocity, atol=1e-9)

    def test_drop_removes_track(self):
        a0 = np.array([100.0, 0.0, 50.0])
        b0 = np.array([600.0, 400.0, 120.0])
        trk = Tracker(TrackerConfig())
        ctrl = Tracker(TrackerConfig())
        for i in range(10):
            objs = [Obs(a0 + [8.0 * 0.64 * i, 0, 0]),
                    Obs(b0 + [0, 6.0 * 0.64 * i, 0])]
            trk.step(i, objs)
            ctrl.step(i, objs)
        ids = sorted(t.track_id for t in trk.tracks)
        trk.drop(ids[0])
        assert [t.track_id for t in trk.tracks] == [ids[1]]
        for i in range(10, 14):
            objs = [Obs(a0 + [8.0 * 0.64 * i, 0, 0]),
                    Obs(b0 + [0, 6.0 * 0.64 * i, 0])]
            got = trk.step(i, objs)
            ref = ctrl.step(i, objs)
        by_id = {r.track_id: r for r in got}
        # the dropped id never comes back; its object respawns fresh
        assert ids[0] not in by_id
        assert any(r.track_id > ids[1] for r in got)
        ref_b = next(r for r in ref if r.track_id == ids[1])
        assert np.allclose(by_id[ids[1]].position, ref_b.position, atol=1e-9)
        assert np.allclose(by_id[ids[1]].velocity, ref_b.velocity, atol=1e-9)

    def test_emitted_requires_confirmation(self):
        trk, recs = self._run_line(8)
        assert trk.emitted(recs[2], require_verified=False) == []
        out = trk.emitted(recs[-1], require_verified=False)
        assert len(out) == 1
        assert trk.emitted(recs[-1], require_verified=True) == []
        uav = out[0]
        assert np.allclose(uav.position(), recs[-1][0].position)
        assert np.allclose(uav.velocity(), recs[-1][0].velocity)
