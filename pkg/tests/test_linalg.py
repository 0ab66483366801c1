import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import jacobi_singular_values, tail_ratio_reference
from srr import (
    DomainError,
    InputError,
    check_matrix,
    frobenius,
    spectral_profile,
    spectral_profile_top,
    svd_randomized,
    svd_truncated,
    tail_energy_ratio,
)
from srr.linalg import MAX_DIM


class TestCheckMatrix:
    def test_accepts_nested_lists(self):
        arr = check_matrix([[1.0, 2.0], [3.0, 4.0]])
        assert arr.dtype == np.float64
        assert arr.flags["C_CONTIGUOUS"]

    def test_rejects_1d(self):
        with pytest.raises(InputError):
            check_matrix(np.ones(4))

    def test_rejects_empty_axis(self):
        with pytest.raises(InputError):
            check_matrix(np.ones((0, 3)))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        a = np.ones((2, 2))
        a[1, 0] = bad
        with pytest.raises(InputError):
            check_matrix(a)

    def test_rejects_oversize(self):
        # claims a huge shape without allocating the payload
        big = np.broadcast_to(np.zeros(1), (MAX_DIM + 1, 1))
        with pytest.raises(DomainError):
            check_matrix(big)


class TestSvdTruncated:
    def test_full_rank_reconstructs(self, rng):
        a = rng.standard_normal((12, 9))
        f = svd_truncated(a, 9)
        np.testing.assert_allclose(f.product(), a, atol=1e-12)

    def test_rank_zero_factors(self):
        f = svd_truncated(np.ones((4, 3)), 0)
        assert f.u.shape == (4, 0)
        assert f.singular_values.shape == (0,)
        assert f.v.shape == (3, 0)
        assert np.array_equal(f.product(), np.zeros((4, 3)))

    def test_orthonormal_factors(self, rng):
        a = rng.standard_normal((10, 8))
        f = svd_truncated(a, 5)
        np.testing.assert_allclose(f.u.T @ f.u, np.eye(5), atol=1e-12)
        np.testing.assert_allclose(f.v.T @ f.v, np.eye(5), atol=1e-12)
        assert np.all(np.diff(f.singular_values) <= 0)
        assert np.all(f.singular_values >= 0)

    def test_matches_jacobi_oracle(self, rng):
        a = rng.standard_normal((9, 7)) * 3.0
        f = svd_truncated(a, 7)
        expected = jacobi_singular_values(a)
        np.testing.assert_allclose(f.singular_values, expected, rtol=1e-10,
                                   atol=1e-12 * expected[0])

    def test_known_diagonal(self):
        a = np.diag([5.0, 3.0, 1.0])
        f = svd_truncated(a, 2)
        np.testing.assert_allclose(f.singular_values, [5.0, 3.0], atol=1e-14)

    @pytest.mark.parametrize("p", [-1, 10, 2.5, None, True])
    def test_rank_domain(self, p):
        with pytest.raises(DomainError):
            svd_truncated(np.ones((4, 4)), p)

    def test_deterministic(self, rng):
        a = rng.standard_normal((8, 8))
        f1 = svd_truncated(a, 4)
        f2 = svd_truncated(a, 4)
        assert np.array_equal(f1.u, f2.u)
        assert np.array_equal(f1.singular_values, f2.singular_values)
        assert np.array_equal(f1.v, f2.v)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 6), st.integers(0, 2**32 - 1))
    def test_best_rank_property(self, p, seed):
        # Eckart-Young on a small instance: no random rank-p candidate with a
        # least-squares-optimal scale may beat the truncated SVD residual.
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((8, 6))
        best = frobenius(a - svd_truncated(a, p).product())
        for _ in range(8):
            if p == 0:
                cand = np.zeros((8, 6))
            else:
                cand = rng.standard_normal((8, p)) @ rng.standard_normal((p, 6))
                denom = np.sum(cand * cand)
                if denom > 0:
                    cand = cand * (np.sum(a * cand) / denom)
            assert best <= frobenius(a - cand) + 1e-12


class TestSvdRandomized:
    def test_close_to_exact_on_decaying_spectrum(self, rng):
        q = np.linalg.qr(rng.standard_normal((60, 40)))[0]
        v = np.linalg.qr(rng.standard_normal((40, 40)))[0]
        a = (q * 0.8 ** np.arange(40)) @ v.T
        exact = svd_truncated(a, 8).singular_values
        approx = svd_randomized(a, 8, seed=3).singular_values
        np.testing.assert_allclose(approx, exact, rtol=1e-2)

    def test_seed_determinism(self, rng):
        a = rng.standard_normal((30, 20))
        f1 = svd_randomized(a, 4, seed=9)
        f2 = svd_randomized(a, 4, seed=9)
        assert np.array_equal(f1.u, f2.u)
        assert np.array_equal(f1.singular_values, f2.singular_values)
        assert np.array_equal(f1.v, f2.v)

    def test_default_oversample_is_twice_rank(self, rng):
        a = rng.standard_normal((12, 12))
        # p + 2p = 15 > 12 must be rejected, p + 2p = 12 accepted
        with pytest.raises(DomainError):
            svd_randomized(a, 5)
        svd_randomized(a, 4)

    def test_explicit_oversample_bounds(self, rng):
        a = rng.standard_normal((10, 10))
        svd_randomized(a, 8, oversample=2)
        with pytest.raises(DomainError):
            svd_randomized(a, 8, oversample=3)
        with pytest.raises(DomainError):
            svd_randomized(a, 8, oversample=-1)

    def test_param_domains(self, rng):
        a = rng.standard_normal((10, 10))
        with pytest.raises(DomainError):
            svd_randomized(a, 0)
        with pytest.raises(DomainError):
            svd_randomized(a, 2, n_iter=-1)


class TestSpectralProfile:
    def test_total_energy_equals_squared_entries(self, rng):
        a = rng.standard_normal((7, 11))
        prof = spectral_profile(a)
        assert prof.total_energy == pytest.approx(np.sum(a * a), rel=1e-12)
        # Parseval: spectrum energy equals entry energy
        assert np.sum(prof.singular_values**2) == pytest.approx(
            prof.total_energy, rel=1e-12
        )

    def test_matches_jacobi_oracle(self, rng):
        a = rng.standard_normal((6, 9))
        prof = spectral_profile(a)
        expected = jacobi_singular_values(a)
        np.testing.assert_allclose(prof.singular_values, expected, rtol=1e-10,
                                   atol=1e-12 * expected[0])

    def test_zero_matrix(self):
        prof = spectral_profile(np.zeros((3, 3)))
        assert prof.total_energy == 0.0

    def test_top_profile_keeps_exact_total(self, rng):
        q = np.linalg.qr(rng.standard_normal((40, 30)))[0]
        v = np.linalg.qr(rng.standard_normal((30, 30)))[0]
        a = (q * 0.7 ** np.arange(30)) @ v.T
        prof = spectral_profile_top(a, 5, seed=1)
        assert prof.depth == 5
        assert prof.total_energy == pytest.approx(np.sum(a * a), rel=1e-12)
        full = spectral_profile(a)
        np.testing.assert_allclose(prof.singular_values,
                                   full.singular_values[:5], rtol=1e-2)

    def test_top_profile_depth_domain(self, rng):
        a = rng.standard_normal((6, 6))
        with pytest.raises(DomainError):
            spectral_profile_top(a, 0)
        with pytest.raises(DomainError):
            spectral_profile_top(a, 7)


class TestTailEnergyRatio:
    def test_hand_example(self):
        # singular values 4, 3: energy 25, best rank-1 leaves 9/25
        prof = spectral_profile(np.diag([3.0, 4.0]))
        assert tail_energy_ratio(prof, 0) == 1.0
        assert tail_energy_ratio(prof, 1) == pytest.approx(9.0 / 25.0, rel=1e-12)
        assert tail_energy_ratio(prof, 2) == pytest.approx(0.0, abs=1e-12)

    def test_zero_matrix_convention(self):
        prof = spectral_profile(np.zeros((4, 5)))
        assert tail_energy_ratio(prof, 0) == 0.0
        assert tail_energy_ratio(prof, 2) == 0.0

    def test_matches_reference(self, rng):
        a = rng.standard_normal((8, 5))
        prof = spectral_profile(a)
        for p in range(6):
            assert tail_energy_ratio(prof, p) == pytest.approx(
                tail_ratio_reference(a, p), rel=1e-9, abs=1e-12
            )

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((7, 6)) * 10 ** rng.uniform(-3, 3)
        prof = spectral_profile(a)
        ratios = [tail_energy_ratio(prof, p) for p in range(7)]
        assert all(0.0 <= r <= 1.0 for r in ratios)
        assert all(a >= b for a, b in zip(ratios, ratios[1:]))

    def test_rank_domain(self):
        prof = spectral_profile(np.eye(3))
        with pytest.raises(DomainError):
            tail_energy_ratio(prof, -1)
        with pytest.raises(DomainError):
            tail_energy_ratio(prof, 4)


def test_frobenius_matches_manual(rng):
    a = rng.standard_normal((5, 7))
    assert frobenius(a) == pytest.approx(np.sqrt(np.sum(a * a)), rel=1e-14)
