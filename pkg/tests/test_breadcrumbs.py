# -*- coding: utf-8 -*-
import numpy as np
import pytest

from navfilter.breadcrumbs import (Breadcrumb, BreadcrumbDb, CrumbModality, LandingRecord,
                                   PathSample, choose_breadcrumb, curvature_rotation, delta_p,
                                   load_breadcrumb, load_db, naive_swap, remap_database, save_db,
                                   select_reference, should_save_breadcrumb, swap_parameters,
                                   target_relative_variance)
from navfilter.config import BreadcrumbSettings
from navfilter.ekf import Measurement, MeasurementKind, SlotRecord, update
from navfilter.errors import BreadcrumbError
from navfilter.frames import dcm_to_rotvec, r3
from navfilter.state import STATE_DIM, STATE_INDEX as IDX


def _crumb(crumb_id, r=(0.0, 0.0, -100.0), P_pos=np.eye(3), modality=CrumbModality.ONLINE,
           heading=0.0, t=0.0, flight_id=1):
    return Breadcrumb(id=crumb_id, flight_id=flight_id, r_tof=np.array(r, dtype=float),
                      attitude=[1.0, 0.0, 0.0, 0.0], height_agl=100.0, P_pos=np.array(P_pos),
                      modality=modality, heading_at_capture=heading, t=t)


def _apply_swap(a, params):
    """單軸 2×2 的標準 Kalman 更新"""
    P = np.diag([a, params.b])
    h = np.array([params.h1, params.h2])
    k = P @ h
    return P - np.outer(k, k) / (h @ k + params.R_eff)


class Test_swap_parameters:
    def test_worked_example(self):
        params = swap_parameters(4.0, 1.0, 2.0, a_f=3.96)
        assert params.b == pytest.approx(1.0 + 1.48 ** 2 / 0.04)
        P = _apply_swap(4.0, params)
        np.testing.assert_allclose(P, [[3.96, 1.48], [1.48, 1.0]], atol=1e-9)

    def test_random_triples(self):
        """1000 組 (a, b_f, c)：虛擬量測更新後等於目標矩陣"""
        rng = np.random.default_rng(31)
        for _ in range(1000):
            a = 10 ** rng.uniform(-2, 4)
            b_f = 10 ** rng.uniform(-2, 4)
            a_f = 0.99 * a
            low, high = (np.sqrt(a_f) - np.sqrt(b_f)) ** 2, (np.sqrt(a_f) + np.sqrt(b_f)) ** 2
            c = low + (high - low) * rng.uniform(0.001, 0.999)
            params = swap_parameters(a, b_f, c)
            assert params.R_eff >= 0.0
            cross = 0.5 * (a_f + b_f - c)
            target = np.array([[a_f, cross], [cross, b_f]])
            P = _apply_swap(a, params)
            np.testing.assert_allclose(P, target, rtol=1e-9, atol=1e-9 * max(a, b_f))

    def test_uncorrelated_target(self):
        """c = a_f + b_f：交叉項為 0，槽變異數就是 b_f"""
        params = swap_parameters(4.0, 1.0, 0.99 * 4.0 + 1.0)
        assert params.b == pytest.approx(1.0)
        np.testing.assert_allclose(_apply_swap(4.0, params), np.diag([3.96, 1.0]), atol=1e-9)

    @pytest.mark.parametrize("a, b_f", [(0.0, 1.0), (1.0, -0.5)])
    def test_invalid_variances(self, a, b_f):
        with pytest.raises(BreadcrumbError):
            swap_parameters(a, b_f, 1.0)

    def test_infeasible_target(self):
        """c 超出半正定範圍時 R_eff < 0"""
        with pytest.raises(BreadcrumbError, match="R_eff"):
            swap_parameters(4.0, 1.0, 20.0)

    def test_target_clamped(self):
        assert target_relative_variance(4.0, 1.0, 100.0) < 9.0
        assert target_relative_variance(4.0, 1.0, 0.0, floor=0.01) == pytest.approx(1.01)


class Test_load_breadcrumb:
    @pytest.mark.parametrize("modality, slot", [
        (CrumbModality.ONLINE, 'obc'),
        (CrumbModality.HISTORIC, 'hbc'),
    ])
    def test_target_structure(self, diagonal_covariance, modality, slot):
        crumb = _crumb(0, P_pos=np.diag([4.0, 4.0, 1.0]), modality=modality)
        P = load_breadcrumb(diagonal_covariance, crumb, slot)
        s = IDX['r_' + slot]
        a = np.diag(diagonal_covariance[IDX.r, IDX.r])
        np.testing.assert_allclose(np.diag(P[IDX.r, IDX.r]), 0.99 * a, rtol=1e-9)
        np.testing.assert_allclose(np.diag(P[s, s]), [4.0, 4.0, 1.0], rtol=1e-9)
        relative = np.diag(P[IDX.r, IDX.r] + P[s, s] - 2.0 * P[IDX.r, s])
        if modality is CrumbModality.ONLINE:
            expected = [max(abs(x - y), (np.sqrt(0.99 * x) - np.sqrt(y)) ** 2 + 0.01)
                        for x, y in zip(a, [4.0, 4.0, 1.0])]
        else:
            expected = a + np.array([4.0, 4.0, 1.0])
            expected = np.minimum(expected, (np.sqrt(0.99 * a) + np.sqrt([4.0, 4.0, 1.0])) ** 2)
        np.testing.assert_allclose(relative, expected, rtol=1e-6)
        assert np.min(np.linalg.eigvalsh(P)) > -1e-9

    def test_bad_slot(self, diagonal_covariance):
        with pytest.raises(ValueError):
            load_breadcrumb(diagonal_covariance, _crumb(0), 'tr1')

    def test_axis_order_irrelevant(self, diagonal_covariance):
        """N、E 交換後載入，結果也只是對應交換（各軸看到的是載入前的 a）"""
        P = diagonal_covariance.copy()
        r = IDX.indices('r')
        P[r[0], r[0]], P[r[1], r[1]] = 9.0, 4.0
        P[r[0], r[1]] = P[r[1], r[0]] = 4.5
        perm = np.arange(STATE_DIM)
        for block in ('r', 'r_obc'):
            idx = IDX.indices(block)
            perm[idx[0]], perm[idx[1]] = idx[1], idx[0]
        crumb = _crumb(0, P_pos=np.diag([2.0, 6.0, 1.0]))
        swapped = _crumb(0, P_pos=np.diag([6.0, 2.0, 1.0]))
        direct = load_breadcrumb(P, crumb, 'obc')
        mirrored = load_breadcrumb(P[np.ix_(perm, perm)], swapped, 'obc')
        np.testing.assert_allclose(mirrored, direct[np.ix_(perm, perm)], rtol=1e-9, atol=1e-9)

    def test_many_loads_keep_correlated_states(self, diagonal_covariance):
        """百次換入後，與位置相關的速度變異數只按 a_f 比例縮小"""
        fraction = BreadcrumbSettings().a_f_fraction
        P = diagonal_covariance.copy()
        r, v = IDX.indices('r'), IDX.indices('v')
        for i, j in zip(r, v):
            P[i, j] = P[j, i] = 0.9 * np.sqrt(P[i, i] * P[j, j])
        v0 = np.diag(P)[v]
        for k in range(100):
            P = load_breadcrumb(P, _crumb(k, P_pos=P[IDX.r, IDX.r].copy()), 'obc', fraction)
        assert np.all(np.diag(P)[v] >= 0.99 * fraction ** 100 * v0)
        assert np.min(np.linalg.eigvalsh(P)) > -1e-6

    def test_naive_swap_zero_cross(self, covariance):
        P = naive_swap(covariance, _crumb(0, P_pos=np.diag([2.0, 2.0, 2.0])), 'obc')
        assert not np.any(P[IDX.r, IDX.r_obc])
        np.testing.assert_array_equal(P[IDX.r_obc, IDX.r_obc], np.diag([2.0, 2.0, 2.0]))


class Test_covariance_collapse:
    """同一位置反覆換入麵包屑再量測相對位移：不應產生新資訊"""

    @staticmethod
    def _relative_update(P):
        H = np.zeros((3, STATE_DIM))
        H[:, IDX.r] = np.eye(3)
        H[:, IDX.r_obc] = -np.eye(3)
        m = Measurement(MeasurementKind.BREADCRUMB_ONLINE, np.zeros(3), H, np.eye(3))
        return update(P, np.zeros(STATE_DIM), m, gate_sigma=None).P

    def _run(self, swap):
        P = np.diag(np.full(STATE_DIM, 1e-4))
        P[IDX.r, IDX.r] = 100.0 * np.eye(3)
        sigma0 = np.sqrt(P[0, 0])
        for k in range(5):
            crumb = _crumb(k, P_pos=P[IDX.r, IDX.r].copy())
            P = swap(P, crumb)
            P = self._relative_update(P)
        return np.sqrt(P[0, 0]) / sigma0

    def test_naive_collapses(self):
        assert self._run(lambda P, c: naive_swap(P, c, 'obc')) < 0.5

    def test_swap_holds(self):
        assert self._run(lambda P, c: load_breadcrumb(P, c, 'obc')) >= 0.99 ** 5


class Test_database:
    def test_save_load(self, tmp_path):
        P = np.eye(STATE_DIM)
        db = BreadcrumbDb([_crumb(0), _crumb(1, r=(10.0, 0.0, -100.0), heading=0.3, t=12.0)],
                          LandingRecord(np.zeros(3), P, 100.0, crumb_id=1))
        path = str(tmp_path / "db.jsonl")
        save_db(db, path)
        loaded = load_db(path)
        assert [c.id for c in loaded] == [0, 1]
        assert loaded.crumbs[1].heading_at_capture == pytest.approx(0.3)
        np.testing.assert_array_equal(loaded.crumbs[1].r_tof, [10.0, 0.0, -100.0])
        assert loaded.landing.crumb_id == 1
        np.testing.assert_array_equal(loaded.landing.P, P)

    def test_attitude_covariance_optional(self, tmp_path):
        crumb = _crumb(0)
        crumb.P_att = np.diag([1e-6, 1e-6, 4e-6])
        path = str(tmp_path / "db.jsonl")
        save_db(BreadcrumbDb([crumb, _crumb(1)]), path)
        loaded = load_db(path)
        np.testing.assert_array_equal(loaded.crumbs[0].P_att, crumb.P_att)
        assert loaded.crumbs[1].P_att is None
        assert 'P_att' not in _crumb(1).to_record()

    def test_bad_header(self, tmp_path):
        path = tmp_path / "db.jsonl"
        path.write_text('{"format": "other", "version": 1}\n', encoding='utf-8')
        with pytest.raises(BreadcrumbError, match=":1:"):
            load_db(str(path))

    def test_duplicate_ids(self):
        db = BreadcrumbDb([_crumb(0)])
        with pytest.raises(ValueError):
            db.add(_crumb(0))
        assert db.next_id == 1

    def test_asymmetric_covariance(self):
        with pytest.raises(ValueError):
            _crumb(0, P_pos=[[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


class Test_should_save:
    @pytest.fixture
    def thresholds(self, config):
        return config.breadcrumbs

    def test_first_crumb(self, thresholds):
        assert should_save_breadcrumb(np.zeros(3), 100.0, None, thresholds)

    def test_invalid_agl(self, thresholds):
        assert not should_save_breadcrumb(np.zeros(3), 0.0, None, thresholds)

    @pytest.mark.parametrize("offset, expected", [
        ([5.0, 0.0, 0.0], False),
        ([12.0, 0.0, 0.0], True),
        ([0.0, 0.0, 25.0], True),
    ])
    def test_separation(self, thresholds, offset, expected):
        last = _crumb(0, r=(0.0, 0.0, -100.0))
        position = last.r_tof + np.array(offset)
        assert should_save_breadcrumb(position, 100.0, last, thresholds) is expected


class Test_remap:
    @pytest.fixture
    def db(self):
        P = np.zeros((STATE_DIM, STATE_DIM))
        P[IDX.r, IDX.r] = 4.0 * np.eye(3)
        P[IDX.r_obc, IDX.r_obc] = np.eye(3)
        P[IDX.r, IDX.r_obc] = P[IDX.r_obc, IDX.r] = 1.5 * np.eye(3)
        crumbs = [_crumb(0, r=(100.0, 0.0, -50.0), P_pos=3.0 * np.eye(3)),
                  _crumb(1, r=(500.0, 0.0, -50.0), P_pos=np.eye(3), heading=np.pi),
                  _crumb(2, r=(800.0, 300.0, -50.0), P_pos=np.eye(3))]
        return BreadcrumbDb(crumbs, LandingRecord(np.array([500.0, 0.0, 0.0]), P, 300.0, crumb_id=1))

    def test_relative_to_landing(self, db):
        out = remap_database(db)
        np.testing.assert_allclose(out.crumbs[1].r_tof, [0.0, 0.0, -50.0])
        np.testing.assert_allclose(out.crumbs[1].P_pos, 2.0 * np.eye(3))
        np.testing.assert_allclose(out.crumbs[0].P_pos, 2.0 * np.eye(3) + delta_p(3 * np.eye(3), np.eye(3)))
        assert all(c.modality is CrumbModality.HISTORIC for c in out)
        assert out.landing is None

    def test_terminal_and_path_filter(self, db, config):
        path = [PathSample(np.array([n, 0.0, -50.0]), np.pi) for n in np.arange(-500.0, 1.0, 25.0)]
        out = remap_database(db, next_path=path, landing_site=np.array([-400.0, 0.0, 0.0]),
                             settings=config.breadcrumbs)
        by_id = {c.id: c for c in out}
        assert by_id[0].modality is CrumbModality.TERMINAL
        assert by_id[1].modality is CrumbModality.HISTORIC
        assert 2 not in by_id

    def test_heading_filter(self, db, config):
        path = [PathSample(np.array([n, 0.0, -50.0]), 0.0) for n in np.arange(-500.0, 1.0, 25.0)]
        out = remap_database(db, next_path=path, settings=config.breadcrumbs)
        assert [c.id for c in out] == [0]

    def test_frame_rotation(self, db):
        rot = r3(0.2)
        out = remap_database(db, frame_rot=rot)
        np.testing.assert_allclose(out.crumbs[0].r_tof, rot @ np.array([-400.0, 0.0, -50.0]))
        assert out.crumbs[0].heading_at_capture == pytest.approx(0.2)

    def test_attitude_covariance_rotates(self, db):
        db.crumbs[0].P_att = np.diag([1e-6, 4e-6, 9e-6])
        rot = r3(np.pi / 2)
        out = remap_database(db, frame_rot=rot)
        np.testing.assert_allclose(out.crumbs[0].P_att, np.diag([4e-6, 1e-6, 9e-6]), atol=1e-18)
        assert out.crumbs[1].P_att is None

    def test_missing_landing(self):
        with pytest.raises(BreadcrumbError):
            remap_database(BreadcrumbDb([_crumb(0)]))

    def test_curvature_rotation(self):
        rot = curvature_rotation(np.array([5000.0, 0.0, 0.0]), 2574700.0, np.deg2rad(7.0))
        angle = np.degrees(np.linalg.norm(dcm_to_rotvec(rot)))
        assert angle == pytest.approx(np.degrees(5000.0 / 2574700.0), rel=1e-6)
        assert 0.1 < angle < 0.12


class Test_select_reference:
    def test_oldest_overlapping_slot(self, config):
        slots = {'tr1': SlotRecord(valid=True), 'tr2': SlotRecord(valid=True)}
        positions = {'tr1': np.array([-6.0, 0.0, -100.0]), 'tr2': np.array([-12.0, 0.0, -100.0])}
        choice = select_reference(np.array([0.0, 0.0, -100.0]), 100.0, slots, positions, config.ets)
        assert choice.velocimetry_slot == 'tr2'
        assert choice.push_reference

    def test_out_of_reach(self, config):
        slots = {'tr1': SlotRecord(valid=True), 'tr2': SlotRecord(valid=True)}
        positions = {'tr1': np.array([-4.0, 0.0, -100.0]), 'tr2': np.array([-40.0, 0.0, -100.0])}
        choice = select_reference(np.array([0.0, 0.0, -100.0]), 100.0, slots, positions, config.ets)
        assert choice.velocimetry_slot == 'tr1'
        assert not choice.push_reference

    def test_empty_fifo(self, config):
        choice = select_reference(np.zeros(3), 100.0, {}, {}, config.ets)
        assert choice.outage
        assert choice.push_reference

    def test_historic_preferred(self, config):
        db = BreadcrumbDb([
            _crumb(0, r=(5.0, 0.0, -100.0), t=0.0),
            _crumb(1, r=(8.0, 0.0, -100.0), modality=CrumbModality.HISTORIC, heading=0.2),
        ])
        crumb = choose_breadcrumb(np.array([0.0, 0.0, -100.0]), 0.0, 100.0, 120.0, db,
                                  config.ets, config.breadcrumbs)
        assert crumb.id == 1

    def test_heading_mismatch_and_young_online(self, config):
        db = BreadcrumbDb([
            _crumb(0, r=(5.0, 0.0, -100.0), t=100.0),
            _crumb(1, r=(8.0, 0.0, -100.0), modality=CrumbModality.HISTORIC, heading=np.pi),
        ])
        crumb = choose_breadcrumb(np.array([0.0, 0.0, -100.0]), 0.0, 100.0, 120.0, db,
                                  config.ets, config.breadcrumbs)
        assert crumb is None
