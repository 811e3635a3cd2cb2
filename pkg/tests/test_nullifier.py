import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvcluster.gaussian import (
    DriveSpec,
    DriveTone,
    ModeLayout,
    SqueezeProfile,
    bessel_j,
    eom_symplectic,
    eom_symplectic_single,
    shot_normalized,
    theory_covariance,
    vacuum_covariance,
)
from cvcluster.nullifier import (
    NullifierMatrix,
    direct_expansion_variance,
    epr_nullifier_matrix,
    error_matrix,
    nullifier_report,
    nullifier_variance,
    nullifier_variances,
    transform_nullifiers,
)

M_DOUBLE = 60 * math.pi / 520


def layout(m=20, guard=0):
    return ModeLayout(m, 100e3, 90e3, 100e3, guard)


def random_covariance(rng, dim):
    a = rng.standard_normal((dim, dim))
    return a @ a.T / dim + 0.5 * np.eye(dim)


class TestEPR:
    def test_single_mode_rows(self):
        N = epr_nullifier_matrix(ModeLayout(1, 1e5, 9e4, 1e5))
        np.testing.assert_array_equal(N.rows, [[1, -1, 0, 0], [0, 0, 1, 1]])

    def test_tms_3db(self):
        lay = ModeLayout(1, 1e5, 9e4, 1e5)
        sigma = theory_covariance(lay, SqueezeProfile(np.array([math.log(2) / 4])))
        v = nullifier_variances(epr_nullifier_matrix(lay), sigma)
        np.testing.assert_allclose(v, [0.5, 0.5], rtol=1e-12)

    def test_vacuum_is_shot_level(self):
        lay = layout(4)
        v = nullifier_variances(epr_nullifier_matrix(lay), vacuum_covariance(lay))
        np.testing.assert_allclose(v, 1.0)

    def test_row_access(self):
        N = epr_nullifier_matrix(layout(3))
        assert N.row("P", 1)[2 * 3 + 1] == 1.0
        with pytest.raises(ValueError):
            N.row("Q", 0)

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            NullifierMatrix(np.zeros((2, 3)), layout(3))


class TestTransform:
    def test_identity(self):
        N = epr_nullifier_matrix(layout(5))
        np.testing.assert_array_equal(transform_nullifiers(N, np.eye(20)).rows, N.rows)

    def test_row_structure_single_tone(self):
        n = 36
        lay = layout(n)
        S = eom_symplectic_single(lay, DriveTone(100e3, M_DOUBLE), model="truncated")
        row = transform_nullifiers(epr_nullifier_matrix(lay), S).row("X", 18)
        nz = {int(j) for j in np.flatnonzero(np.abs(row) > 1e-12)}
        assert nz == {18, n + 18, 3 * n + 17, 3 * n + 19}
        assert row[18] == 1.0
        assert round(row[n + 18], 3) == -0.967
        assert round(row[3 * n + 17], 3) == 0.178
        assert round(row[3 * n + 19], 3) == 0.178

    def test_outer_product_bessel_pattern(self):
        n = 36
        lay = layout(n)
        m = M_DOUBLE
        S = eom_symplectic_single(lay, DriveTone(100e3, m), model="truncated")
        row = transform_nullifiers(epr_nullifier_matrix(lay), S).row("X", 18)
        outer = np.outer(row, row)
        j0, j1 = bessel_j(0, m), bessel_j(1, m)
        xc, pc_lo, pc_hi = n + 18, 3 * n + 17, 3 * n + 19
        assert outer[xc, xc] == pytest.approx(j0**2)
        assert outer[xc, pc_lo] == pytest.approx(-j0 * j1)
        assert outer[pc_lo, pc_hi] == pytest.approx(j1**2)

    def test_solve_matches_transpose_for_exact_model(self):
        lay = layout(15)
        S = eom_symplectic(lay, DriveSpec((DriveTone(100e3, 0.18), DriveTone(300e3, 0.18))))
        N = epr_nullifier_matrix(lay)
        np.testing.assert_allclose(
            transform_nullifiers(N, S, "solve").rows, transform_nullifiers(N, S).rows, atol=1e-12
        )

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            transform_nullifiers(epr_nullifier_matrix(layout(3)), np.eye(8))


class TestVariance:
    def test_single_row(self):
        lay = layout(3)
        assert nullifier_variance(epr_nullifier_matrix(lay), 4, vacuum_covariance(lay)) == pytest.approx(1.0)

    @pytest.mark.parametrize("r", [0.05, 0.2, 0.5])
    def test_chain_recovers_epr(self, r):
        lay = layout(40)
        prof = SqueezeProfile(np.full(40, r))
        drive = DriveSpec((DriveTone(100e3, 0.18),))
        sigma = theory_covariance(lay, prof, drive)
        N = transform_nullifiers(epr_nullifier_matrix(lay), eom_symplectic(lay, drive))
        v = nullifier_variances(N, sigma)
        np.testing.assert_allclose(v, math.exp(-4 * r), atol=1e-3)
        epr_on = nullifier_variances(epr_nullifier_matrix(lay), sigma)
        assert np.all(epr_on[5:35] > v[5:35])

    def test_direct_expansion_m0(self):
        rng = np.random.default_rng(3)
        lay = layout(6)
        sigma = random_covariance(rng, lay.dim)
        i, n = 2, 6
        expect = sigma[i, i] - 2 * sigma[i, n + i] + sigma[n + i, n + i]
        got = direct_expansion_variance(sigma, lay, i, DriveTone(100e3, 0.0), "X")
        assert got == pytest.approx(expect, rel=1e-12)

    @given(st.integers(0, 10_000), st.sampled_from(["X", "P"]), st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_direct_expansion_matches_matrix(self, seed, quad, k):
        rng = np.random.default_rng(seed)
        lay = layout(12)
        sigma = random_covariance(rng, lay.dim)
        tone = DriveTone(k * 100e3, 0.18)
        N = transform_nullifiers(epr_nullifier_matrix(lay), eom_symplectic_single(lay, tone, model="truncated"))
        for i in range(k, 12 - k):
            direct = direct_expansion_variance(sigma, lay, i, tone, quad)
            row = i if quad == "X" else 12 + i
            assert direct == pytest.approx(nullifier_variance(N, row, sigma), abs=1e-10)

    def test_direct_expansion_sign_terms(self):
        # Only XpXc and XpPc(i+1) populated: the X expansion has -2 J0 and +2 J1 cross terms.
        lay = layout(6)
        n, i, m = 6, 2, 0.18
        sigma = np.zeros((24, 24))
        sigma[i, n + i] = sigma[n + i, i] = 1.0
        x = direct_expansion_variance(sigma, lay, i, DriveTone(100e3, m), "X")
        assert x == pytest.approx(-2 * bessel_j(0, m))
        sigma = np.zeros((24, 24))
        sigma[i, 3 * n + i + 1] = sigma[3 * n + i + 1, i] = 1.0
        x = direct_expansion_variance(sigma, lay, i, DriveTone(100e3, m), "X")
        assert x == pytest.approx(2 * bessel_j(1, m))

    def test_direct_expansion_edge(self):
        with pytest.raises(ValueError):
            direct_expansion_variance(np.eye(24), layout(6), 0, DriveTone(100e3, 0.1), "X")


class TestReport:
    def test_shot_is_zero_db(self):
        lay = layout(5, guard=1)
        sigma = vacuum_covariance(lay)
        rep = nullifier_report(sigma, sigma, epr_nullifier_matrix(lay))
        np.testing.assert_allclose(rep.null_x_db, 0.0, atol=1e-12)
        assert list(rep.mode_numbers) == [1, 2, 3, 4, 5]

    def test_flat_3db_eom_off(self):
        lay = layout(8)
        sigma = theory_covariance(lay, SqueezeProfile(np.full(8, math.log(2) / 4)))
        rep = nullifier_report(sigma, vacuum_covariance(lay), epr_nullifier_matrix(lay))
        np.testing.assert_allclose(rep.epr_x_db, -10 * math.log10(2), atol=1e-10)
        np.testing.assert_allclose(rep.epr_p_db, -10 * math.log10(2), atol=1e-10)

    def test_edge_flags_and_csv(self, tmp_path):
        lay = layout(6, guard=2)
        drive = DriveSpec((DriveTone(100e3, 0.18),))
        N = transform_nullifiers(epr_nullifier_matrix(lay), eom_symplectic(lay, drive, model="truncated"))
        sigma = vacuum_covariance(lay)
        rep = nullifier_report(sigma, sigma, N, lay)
        assert rep.edge_flags.tolist() == [True, False, False, False, False, True]
        text = rep.to_csv(tmp_path / "n.csv")
        lines = text.strip().splitlines()
        assert lines[0] == "mode,mode_center_hz,epr_x_db,epr_p_db,null_x_db,null_p_db,method"
        assert len(lines) == 7

    def test_shape_mismatch(self):
        lay = layout(3)
        with pytest.raises(ValueError):
            nullifier_report(np.eye(4), np.eye(4), epr_nullifier_matrix(lay))


class TestErrorMatrix:
    def test_vacuum(self):
        em = error_matrix(0.5 * np.eye(8), np.zeros((4, 4)))
        np.testing.assert_allclose(em.U, np.eye(4))
        np.testing.assert_allclose(em.error_vector, 1.0)

    def test_asymmetric_v_rejected(self):
        V = np.zeros((4, 4))
        V[0, 1] = 1.0
        with pytest.raises(ValueError):
            error_matrix(0.5 * np.eye(8), V)

    def test_oracle_against_explicit_combination(self):
        rng = np.random.default_rng(9)
        sigma = random_covariance(rng, 6)
        a = rng.standard_normal((3, 3))
        V = a + a.T
        # Variance of each row of [-V | I] applied to (X, P).
        rows = np.hstack([-V, np.eye(3)])
        expect = 2 * np.einsum("ij,jk,ik->i", rows, sigma, rows)
        np.testing.assert_allclose(error_matrix(sigma, V).error_vector, expect, rtol=1e-12)


def test_shot_normalized_doubles():
    np.testing.assert_array_equal(shot_normalized(0.5 * np.eye(4)), np.eye(4))
