"""Per-cube noise fingerprints and the statistical point gate."""
import numpy as np
import pytest

from skysift.core import CubeGrid, Frame, SIGNAL_DIM
from skysift.fingerprint import (CubeParams, NoiseFingerprintModel,
                                 UpdatePolicy, filter_frame, fit_model,
                                 hz_test, mahalanobis, update_model)


def oracle_distance(sig, feat_mean, feat_std, mean, cov, eps=1e-6):
    """Straight quadratic form via an explicit matrix inverse."""
    z = (np.asarray(sig) - feat_mean) / feat_std
    d = z - mean
    q = d @ np.linalg.inv(cov + eps * np.eye(len(d))) @ d
    return float(np.sqrt(q))


def _noise_frame(rng, idx, n, lo, hi, mean, sd):
    pts = np.zeros((n, 9))
    pts[:, :3] = rng.uniform(lo, hi, size=(n, 3))
    pts[:, 3] = rng.uniform(-1.0, 1.0, size=n)
    pts[:, 4:] = rng.normal(mean, sd, size=(n, 5))
    return Frame(idx, idx * 0.64, pts)


def _second_cube_frame(rng, idx, n, mean, sd):
    # x in the second cube of an (80, 40, 40) style grid
    pts = np.zeros((n, 9))
    pts[:, 0] = rng.uniform(41.0, 79.0, size=n)
    pts[:, 1:3] = rng.uniform(1.0, 39.0, size=(n, 2))
    pts[:, 4:] = rng.normal(mean, sd, size=(n, 5))
    return Frame(idx, idx * 0.64, pts)


SIG_MEAN = np.array([12.0, 6.0, -88.0, -59.0, -68.0])


def _small_fit(rng, n_frames=40, n_pts=60, sd=1.0):
    # alpha far below the default so a single-cube fixture cannot be
    # thrown out by an unlucky normality draw
    g = CubeGrid(edge_m=40.0, origin=(0.0, 0.0, 0.0), extent=(40.0, 40.0, 40.0))
    frames = [_noise_frame(rng, i, n_pts, 1.0, 39.0, SIG_MEAN, sd)
              for i in range(n_frames)]
    return g, frames, fit_model(frames, g, alpha=0.001)


class TestHenzeZirkler:
    def test_tiny_sample_untestable(self):
        r = hz_test(np.zeros((6, 5)))
        assert not r.testable
        assert np.isnan(r.p_value)

    def test_null_acceptance_rate(self):
        # 200 gaussian draws at alpha 0.05 should pass about 95% of the time
        rng = np.random.default_rng(81)
        hits = sum(hz_test(rng.normal(size=(500, 5))).is_gaussian
                   for _ in range(200))
        assert 0.91 <= hits / 200 <= 0.99

    def test_uniform_rejected(self):
        rng = np.random.default_rng(82)
        rejected = sum(
            not hz_test(rng.uniform(-1, 1, size=(500, 5))).is_gaussian
            for _ in range(100))
        assert rejected >= 99

    def test_correlated_gaussian_accepted(self):
        rng = np.random.default_rng(83)
        a = rng.normal(size=(5, 5))
        cov = a @ a.T + np.eye(5)
        x = rng.multivariate_normal(np.zeros(5), cov, size=800)
        assert hz_test(x).is_gaussian


class TestMahalanobis:
    def _params(self, mean, cov):
        return CubeParams(count=100, feat_mean=np.zeros(SIGNAL_DIM),
                          feat_std=np.ones(SIGNAL_DIM), modeled=True,
                          testable=True, mean=np.asarray(mean, float),
                          cov=np.asarray(cov, float))

    def test_zero_at_center(self):
        p = self._params(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), np.eye(5))
        assert mahalanobis(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), p) == \
            pytest.approx(0.0, abs=1e-6)

    def test_identity_cov_unit_offset(self):
        p = self._params(np.zeros(5), np.eye(5))
        d = mahalanobis(np.array([1.0, 0.0, 0.0, 0.0, 0.0]), p)
        assert d == pytest.approx(1.0, rel=1e-4)

    def test_diagonal_cov_hand_case(self):
        # d^2 = 2^2/2 + 1^2/0.5 = 4
        p = self._params(np.zeros(5), np.diag([2.0, 0.5, 1.0, 1.0, 1.0]))
        d = mahalanobis(np.array([2.0, 1.0, 0.0, 0.0, 0.0]), p)
        assert d == pytest.approx(2.0, rel=1e-4)

    def test_unmodeled_is_none(self):
        p = CubeParams(count=10, feat_mean=np.zeros(5), feat_std=np.ones(5),
                       modeled=False, testable=False)
        assert mahalanobis(np.zeros(5), p) is None

    def test_against_inverse_oracle(self):
        rng = np.random.default_rng(84)
        worst = 0.0
        for _ in range(300):
            a = rng.normal(size=(5, 5))
            cov = a @ a.T + 0.1 * np.eye(5)
            mean = rng.normal(size=5)
            sig = rng.normal(size=5) * 3
            p = self._params(mean, cov)
            d = mahalanobis(sig, p)
            ref = oracle_distance(sig, np.zeros(5), np.ones(5), mean, cov)
            worst = max(worst, abs(d - ref) / ref)
        assert worst < 1e-9


class TestFit:
    def test_empty_input_raises(self):
        g = CubeGrid(edge_m=40.0, extent=(40.0, 40.0, 40.0))
        with pytest.raises(ValueError, match="no in-volume points"):
            fit_model([Frame(0, 0.0, np.zeros((0,)))], g)

    def test_no_gaussian_cube_raises(self):
        rng = np.random.default_rng(85)
        g = CubeGrid(edge_m=40.0, extent=(40.0, 40.0, 40.0))
        frames = []
        for i in range(10):
            pts = np.zeros((60, 9))
            pts[:, :3] = rng.uniform(1, 39, size=(60, 3))
            pts[:, 4:] = rng.uniform(-1, 1, size=(60, 5))  # flat, not normal
            frames.append(Frame(i, i * 0.64, pts))
        with pytest.raises(ValueError, match="model degenerate"):
            fit_model(frames, g)

    def test_small_cube_not_modeled(self):
        rng = np.random.default_rng(86)
        g = CubeGrid(edge_m=40.0, extent=(80.0, 40.0, 40.0))
        frames = []
        for i in range(40):
            dense = _noise_frame(rng, i, 60, 1.0, 39.0, SIG_MEAN, 1.0)
            thin = _second_cube_frame(rng, i, 1, SIG_MEAN, 1.0)
            frames.append(Frame(i, i * 0.64,
                                np.vstack([dense.points, thin.points])))
        m = fit_model(frames, g, alpha=0.001, min_samples=50)
        assert m.cubes[(0, 0, 0)].modeled
        assert not m.cubes[(1, 0, 0)].modeled
        assert m.cubes[(1, 0, 0)].count == 40
        # below-minimum cubes never gate points
        probe = _second_cube_frame(rng, 99, 50, SIG_MEAN, 1.0)
        assert filter_frame(m, probe).kept_mask.all()

    def test_fitted_moments_close_to_truth(self):
        rng = np.random.default_rng(87)
        g, frames, model = _small_fit(rng, n_frames=60, n_pts=80)
        cp = model.cubes[(0, 0, 0)]
        n = cp.count
        assert n == 60 * 80
        # monte carlo: sample mean within 3 standard errors per axis
        se = 1.0 / np.sqrt(n)
        assert np.all(np.abs(cp.feat_mean - SIG_MEAN) < 3 * se)
        assert np.allclose(cp.feat_std, 1.0, atol=0.05)

    def test_identical_points_cube_still_modeled(self):
        # constant returns would fail any normality test, yet they are
        # the most predictable clutter possible; the cube gets an
        # eps-ball model and its points score distance zero
        rng = np.random.default_rng(88)
        g = CubeGrid(edge_m=40.0, extent=(80.0, 40.0, 40.0))
        const = np.array([5.0, 5.0, 5.0, 0.0, 10.0, 5.0, -90.0, -60.0, -70.0])
        frames = []
        for i in range(30):
            live = _second_cube_frame(rng, i, 60, SIG_MEAN, 1.0)
            pts = np.vstack([np.tile(const, (4, 1)), live.points])
            frames.append(Frame(i, i * 0.64, pts))
        m = fit_model(frames, g, alpha=0.001)
        dead = m.cubes[(0, 0, 0)]
        assert dead.modeled
        assert np.all(dead.feat_std > 0)
        assert np.allclose(dead.cov, 0.0)
        res = filter_frame(m, frames[0])
        assert res.distances[0] == pytest.approx(0.0, abs=1e-9)
        assert not res.kept_mask[:4].any()

    def test_tau_is_pooled_percentile(self):
        rng = np.random.default_rng(89)
        g, frames, model = _small_fit(rng)
        cp = model.cubes[(0, 0, 0)]
        sigs = np.vstack([f.signals() for f in frames])
        dists = [oracle_distance(s, cp.feat_mean, cp.feat_std, cp.mean, cp.cov)
                 for s in sigs]
        assert model.tau_sim == pytest.approx(np.percentile(dists, 80.0),
                                              rel=1e-9)

    def test_requested_percentile_respected(self):
        rng = np.random.default_rng(90)
        g = CubeGrid(edge_m=40.0, extent=(40.0, 40.0, 40.0))
        frames = [_noise_frame(rng, i, 60, 1.0, 39.0, SIG_MEAN, 1.0)
                  for i in range(40)]
        lo = fit_model(frames, g, percentile=50.0)
        hi = fit_model(frames, g, percentile=95.0)
        assert lo.tau_sim < hi.tau_sim


class TestFilter:
    def test_removal_fraction_near_percentile(self):
        rng = np.random.default_rng(91)
        g, frames, model = _small_fit(rng, n_frames=60, n_pts=80)
        fresh = [_noise_frame(rng, 100 + i, 200, 1.0, 39.0, SIG_MEAN, 1.0)
                 for i in range(60)]
        removed = total = 0
        for f in fresh:
            r = filter_frame(model, f)
            removed += r.n_removed
            total += f.n_points
        assert total >= 10_000
        assert removed / total == pytest.approx(0.80, abs=0.03)

    def test_offset_points_survive(self):
        rng = np.random.default_rng(92)
        g, frames, model = _small_fit(rng, n_frames=60, n_pts=80)
        cp = model.cubes[(0, 0, 0)]
        f = _noise_frame(rng, 200, 500, 1.0, 39.0, SIG_MEAN, 1.0)
        f.points[:, 4:] += 4.0 * cp.feat_std
        r = filter_frame(model, f)
        assert r.kept_mask.mean() >= 0.98

    def test_filter_matches_scalar_oracle(self):
        rng = np.random.default_rng(93)
        g = CubeGrid(edge_m=40.0, extent=(120.0, 40.0, 40.0))
        frames = []
        for i in range(40):
            a = _noise_frame(rng, i, 60, 1.0, 39.0, SIG_MEAN, 1.0)
            b = _noise_frame(rng, i, 60, 41.0, 79.0, SIG_MEAN + 2, 1.5)
            frames.append(Frame(i, i * 0.64, np.vstack([a.points, b.points])))
        model = fit_model(frames, g, alpha=0.001)
        probe = np.zeros((300, 9))
        probe[:, :3] = rng.uniform(1.0, 119.0, size=(300, 3))
        probe[:, 4:] = rng.normal(SIG_MEAN + 1, 2.0, size=(300, 5))
        probe[::7, 0] = 200.0  # out of volume
        frame = Frame(99, 0.0, probe)
        res = filter_frame(model, frame)
        for k in range(300):
            key = g.cube_index(*probe[k, :3])
            if key is None or key not in model.cubes \
                    or not model.cubes[key].modeled:
                assert res.kept_mask[k]
                assert np.isnan(res.distances[k])
                continue
            d = mahalanobis(probe[k, 4:], model.cubes[key])
            assert res.distances[k] == pytest.approx(d, rel=1e-9)
            assert res.kept_mask[k] == (d >= model.tau_sim)
        assert res.n_removed == int((~res.kept_mask).sum())
        assert np.array_equal(res.kept.points, probe[res.kept_mask])

    def test_empty_frame(self):
        rng = np.random.default_rng(94)
        g, frames, model = _small_fit(rng)
        r = filter_frame(model, Frame(7, 0.0, np.zeros((0,))))
        assert r.kept.n_points == 0
        assert r.n_removed == 0


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(95)
        g, frames, model = _small_fit(rng)
        path = tmp_path / "m.json"
        model.save(str(path))
        back = NoiseFingerprintModel.load(str(path))
        assert back.tau_sim == model.tau_sim
        assert back.percentile == model.percentile
        assert set(back.cubes) == set(model.cubes)
        probe = _noise_frame(rng, 5, 300, 1.0, 39.0, SIG_MEAN, 1.2)
        a = filter_frame(model, probe)
        b = filter_frame(back, probe)
        assert np.array_equal(a.kept_mask, b.kept_mask)
        assert np.allclose(a.distances, b.distances, equal_nan=True)

    def test_load_rejects_other_files(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError, match="not a fingerprint model"):
            NoiseFingerprintModel.load(str(path))


class TestUpdate:
    def test_policy_due(self):
        pol = UpdatePolicy(interval_frames=100)
        assert not pol.due(99)
        assert pol.due(100)

    def test_update_without_tracks_equals_refit(self):
        rng = np.random.default_rng(96)
        g, frames, model = _small_fit(rng)
        pol = UpdatePolicy(window_frames=20)
        upd = update_model(model, frames, None, pol)
        ref = fit_model(frames[-20:], g, alpha=model.alpha)
        assert upd.tau_sim == ref.tau_sim
        assert upd.cubes[(0, 0, 0)].count == ref.cubes[(0, 0, 0)].count

    def test_update_excludes_points_near_tracks(self):
        rng = np.random.default_rng(97)
        g, frames, model = _small_fit(rng, n_frames=30)
        track_pos = {f.index: np.array([[20.0, 20.0, 20.0]]) for f in frames}
        pol = UpdatePolicy(window_frames=30, exclusion_radius_m=10.0)
        upd = update_model(model, frames, track_pos, pol)
        expect = 0
        for f in frames:
            d = np.linalg.norm(f.positions() - [20.0, 20.0, 20.0], axis=1)
            expect += int((d >= 10.0).sum())
        assert upd.cubes[(0, 0, 0)].count == expect
        assert expect < model.cubes[(0, 0, 0)].count

    def test_recovers_from_signal_drift(self):
        # shift the cube mean by 3 dB mid-run: the stale model stops
        # recognising its own clutter until a refit brings it back
        rng = np.random.default_rng(98)
        g, frames, model = _small_fit(rng, n_frames=60, n_pts=80)
        drifted = [_noise_frame(rng, 100 + i, 80, 1.0, 39.0,
                                SIG_MEAN + 3.0, 1.0) for i in range(60)]
        stale = kept_total = 0
        for f in drifted[:30]:
            r = filter_frame(model, f)
            stale += r.n_removed
            kept_total += f.n_points
        assert stale / kept_total < 0.60
        fresh = update_model(model, drifted[:30], None,
                             UpdatePolicy(window_frames=30))
        removed = total = 0
        for f in drifted[30:]:
            r = filter_frame(fresh, f)
            removed += r.n_removed
            total += f.n_points
        assert removed / total == pytest.approx(0.80, abs=0.05)
