"""Compiled kernels against dense references and their fallback twins."""

import itertools
import math

import numpy as np

from gibbstail import _kernels
from gibbstail._kernels import (
    N_DRAWS,
    CHAIN_DONE,
    CHAIN_CAPACITY_FULL,
    banded_count_complex,
    banded_count_real,
    bordered_count,
    chain_pairwise,
    py_impl,
    q2_sum_nd,
    q2_sum_nd_numpy,
    q_sums_1d,
    q_sums_1d_numpy,
    sturm_count,
    turan_scan,
    turan_scan_numpy,
)


def dense_count_below(mat, shift):
    return int((np.linalg.eigvalsh(mat) < shift).sum())


def safe_shifts(evals, rng, n_shifts):
    """Shifts strictly between eigenvalues plus one outside each end."""
    ev = np.sort(evals)
    picks = [ev[0] - 0.7, ev[-1] + 0.7]
    gaps = np.flatnonzero(np.diff(ev) > 1e-8)
    for g in rng.choice(gaps, size=min(n_shifts, gaps.size), replace=False):
        picks.append(0.5 * (ev[g] + ev[g + 1]))
    return picks


class TestSturm:
    def test_matches_dense_on_random_tridiagonals(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            n = int(rng.integers(2, 40))
            diag = rng.standard_normal(n)
            off = rng.standard_normal(n - 1)
            mat = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
            ev = np.linalg.eigvalsh(mat)
            for shift in safe_shifts(ev, rng, 4):
                assert sturm_count(diag, off, shift) == int((ev < shift).sum())

    def test_zero_pivot_sentinel(self):
        diag = np.array([2.0, 5.0, 1.0])
        off = np.array([1.0, 1.0])
        assert sturm_count(diag, off, 2.0) == -1

    def test_nan_input_sentinel(self):
        diag = np.array([np.nan, 1.0])
        off = np.array([0.5])
        assert sturm_count(diag, off, 0.0) == -1

    def test_single_entry(self):
        assert sturm_count(np.array([3.0]), np.zeros(0), 4.0) == 1
        assert sturm_count(np.array([3.0]), np.zeros(0), 2.0) == 0


class TestBordered:
    def build(self, diag, off, corner):
        m = diag.size
        mat = np.zeros((m, m), dtype=complex)
        mat[np.arange(m), np.arange(m)] = diag
        for j in range(m - 1):
            mat[j, j + 1] = off[j]
            mat[j + 1, j] = np.conj(off[j])
        mat[m - 1, 0] += corner
        mat[0, m - 1] += np.conj(corner)
        return mat

    def test_matches_dense_with_complex_corner(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            m = int(rng.integers(3, 30))
            diag = rng.standard_normal(m)
            off = rng.standard_normal(m - 1) + 1j * rng.standard_normal(m - 1)
            corner = complex(rng.standard_normal(), rng.standard_normal())
            mat = self.build(diag, off, corner)
            ev = np.linalg.eigvalsh(mat)
            for shift in safe_shifts(ev, rng, 3):
                got = bordered_count(diag, off, corner, shift)
                assert got == int((ev < shift).sum())

    def test_real_corner_and_large_m(self):
        rng = np.random.default_rng(8)
        m = 400
        diag = rng.standard_normal(m) * 2.0
        off = (rng.standard_normal(m - 1) + 0j) * 0.7
        corner = -0.9 + 0j
        mat = self.build(diag, off, corner)
        ev = np.linalg.eigvalsh(mat)
        for shift in (-2.5, -0.3, 0.1, 1.8):
            got = bordered_count(diag, off, corner, shift)
            assert got == int((ev < shift).sum())

    def test_minimum_size_three(self):
        diag = np.array([1.0, 2.0, 3.0])
        off = np.array([0.4 + 0.1j, -0.2 + 0.3j])
        corner = 0.5 - 0.25j
        mat = self.build(diag, off, corner)
        ev = np.linalg.eigvalsh(mat)
        for shift in (0.0, 1.5, 2.5, 4.0):
            assert bordered_count(diag, off, corner, shift) == int(
                (ev < shift).sum()
            )

    def test_zero_pivot_sentinel(self):
        diag = np.array([1.0, 2.0, 3.0, 4.0])
        off = np.zeros(3, dtype=complex)
        corner = 0j
        assert bordered_count(diag, off, corner, 1.0) == -1


def band_storage(mat, width):
    n = mat.shape[0]
    band = np.zeros((n, width + 1), dtype=mat.dtype)
    for j in range(width + 1):
        band[: n - j, j] = np.diagonal(mat, j)
    return band


class TestBanded:
    def random_band(self, rng, n, width, complex_entries):
        if complex_entries:
            mat = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            mat = 0.5 * (mat + mat.conj().T)
        else:
            mat = rng.standard_normal((n, n))
            mat = 0.5 * (mat + mat.T)
        for i in range(n):
            for j in range(n):
                if abs(i - j) > width:
                    mat[i, j] = 0.0
        return mat

    def test_real_matches_dense(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            n = int(rng.integers(3, 36))
            width = int(rng.integers(1, min(n, 6)))
            mat = self.random_band(rng, n, width, complex_entries=False)
            ev = np.linalg.eigvalsh(mat)
            for shift in safe_shifts(ev, rng, 3):
                band = band_storage(mat, width)
                band[:, 0] -= shift
                assert banded_count_real(band) == int((ev < shift).sum())

    def test_complex_matches_dense(self):
        rng = np.random.default_rng(22)
        for _ in range(30):
            n = int(rng.integers(3, 30))
            width = int(rng.integers(1, min(n, 5)))
            mat = self.random_band(rng, n, width, complex_entries=True)
            ev = np.linalg.eigvalsh(mat)
            for shift in safe_shifts(ev, rng, 3):
                band = band_storage(mat, width)
                band[:, 0] -= shift
                assert banded_count_complex(band) == int((ev < shift).sum())

    def test_zero_pivot_sentinel(self):
        mat = np.array([[1.0, 0.3], [0.3, 2.0]])
        band = band_storage(mat, 1)
        band[:, 0] -= 1.0
        assert banded_count_real(band) == -1


def brute_ordered_sums(pair, site, kmax):
    n = site.size
    out = []
    for k in range(1, kmax + 1):
        total = 0.0
        for tup in itertools.product(range(n), repeat=k):
            energy = sum(site[i] for i in tup)
            for a in range(k):
                for b in range(a + 1, k):
                    energy += pair[tup[a], tup[b]]
            if energy != math.inf:
                total += math.exp(-energy)
        out.append(total)
    return out


class TestOrderedSums:
    def cases(self):
        rng = np.random.default_rng(5)
        smooth = rng.uniform(0.0, 1.5, (6, 6))
        smooth = 0.5 * (smooth + smooth.T)
        site = rng.uniform(0.0, 0.8, 6)
        yield smooth, site
        hard = smooth.copy()
        hard[1, 3] = hard[3, 1] = np.inf
        hard[np.arange(6), np.arange(6)] = np.inf
        yield hard, site
        yield np.zeros((4, 4)), np.zeros(4)

    def test_matches_brute_force(self):
        for pair, site in self.cases():
            expect = brute_ordered_sums(pair, site, 4)
            got = q_sums_1d(pair, site, 4)
            for a, b in zip(got, expect):
                assert abs(a - b) <= 1e-12 * max(1.0, abs(b))

    def test_twins_agree(self):
        for pair, site in self.cases():
            a = q_sums_1d(pair, site, 4)
            b = q_sums_1d_numpy(pair, site, 4)
            for x, y in zip(a, b):
                assert abs(x - y) <= 1e-10 * max(1.0, abs(y))

    def test_kmax_truncation(self):
        rng = np.random.default_rng(6)
        pair = np.zeros((5, 5))
        site = rng.uniform(0, 1, 5)
        s = q_sums_1d(pair, site, 2)
        assert s[2] == 0.0 and s[3] == 0.0
        assert abs(s[1] - math.fsum(
            math.exp(-site[i] - site[j]) for i in range(5) for j in range(5)
        )) < 1e-12


class TestPairSumNd:
    def test_twins_agree_flat_and_periodic(self):
        rng = np.random.default_rng(9)
        coords = rng.uniform(-1.0, 1.0, (40, 2))
        site = rng.uniform(0.0, 0.5, 40)
        radii_sq = np.array([0.25, 1.0])
        values = np.array([np.inf, 0.8])
        for periodic in (False, True):
            a = q2_sum_nd(coords, site, radii_sq, values, periodic, 2.0)
            b = q2_sum_nd_numpy(coords, site, radii_sq, values, periodic, 2.0)
            assert abs(a - b) <= 1e-10 * max(1.0, abs(b))

    def test_matches_direct_double_sum(self):
        rng = np.random.default_rng(10)
        coords = rng.uniform(0.0, 1.0, (25, 3))
        site = rng.uniform(0.0, 0.3, 25)
        radii_sq = np.array([0.09])
        values = np.array([1.3])
        total = 0.0
        for i in range(25):
            for j in range(25):
                d2 = float(((coords[i] - coords[j]) ** 2).sum())
                phi = 1.3 if d2 <= 0.09 else 0.0
                total += math.exp(-site[i] - site[j] - phi)
        got = q2_sum_nd(coords, site, radii_sq, values, False, 0.0)
        assert abs(got - total) <= 1e-10 * total


class TestChainKernelTwins:
    def run_one(self, fn, draws, capacity, sweeps, burnin, rec_n):
        pts = np.zeros((capacity, 1))
        fixed = np.empty((0, 1))
        state = np.zeros(4, dtype=np.int64)
        rec = np.zeros(rec_n, dtype=np.int64)
        radii_sq = np.array([0.25])
        values = np.array([1.0])
        status, used = fn(
            pts, fixed, state, draws,
            radii_sq, values, 0.0,
            np.array([-1.0]), np.array([1.0]), 2.0, False,
            0.35, 0.35, 0.25,
            2, sweeps, burnin,
            math.log(2.0), 0.0,
            np.array([-1.0]), np.array([1.0]), rec,
        )
        return status, used, pts, state, rec

    def test_compiled_and_interpreted_paths_identical(self):
        rng = np.random.default_rng(33)
        draws = rng.random((4000, N_DRAWS))
        a = self.run_one(chain_pairwise, draws.copy(), 64, 40, 10, 30)
        b = self.run_one(py_impl(chain_pairwise), draws.copy(), 64, 40, 10, 30)
        assert a[0] == b[0] == CHAIN_DONE
        assert a[1] == b[1]
        assert np.array_equal(a[3], b[3])
        k = int(a[3][0])
        assert np.array_equal(a[2][:k], b[2][:k])
        assert np.array_equal(a[4], b[4])

    def test_capacity_full_does_not_consume_the_row(self):
        rng = np.random.default_rng(34)
        draws = rng.random((4000, N_DRAWS))
        status, used, pts, state, _ = self.run_one(
            chain_pairwise, draws.copy(), 1, 200, 0, 0
        )
        assert status == CHAIN_CAPACITY_FULL
        assert int(state[0]) == 1
        # replaying from the unconsumed row with more capacity must land on
        # exactly the same trajectory as a run that never hit the ceiling
        big = self.run_one(chain_pairwise, draws.copy(), 512, 200, 0, 0)
        pts2 = np.zeros((512, 1))
        pts2[:1] = pts[:1]
        fixed = np.empty((0, 1))
        rec = np.zeros(0, dtype=np.int64)
        status2, used2 = chain_pairwise(
            pts2, fixed, state, draws[used:],
            np.array([0.25]), np.array([1.0]), 0.0,
            np.array([-1.0]), np.array([1.0]), 2.0, False,
            0.35, 0.35, 0.25,
            2, 200, 0,
            math.log(2.0), 0.0,
            np.array([-1.0]), np.array([1.0]), rec,
        )
        assert status2 == CHAIN_DONE
        assert used + used2 == big[1]
        assert np.array_equal(state, big[3])
        k = int(state[0])
        assert np.array_equal(pts2[:k], big[2][:k])

    def test_recording_happens_after_burnin_only(self):
        rng = np.random.default_rng(35)
        draws = rng.random((8000, N_DRAWS))
        _, _, _, state, rec = self.run_one(
            chain_pairwise, draws, 128, 50, 20, 30
        )
        assert int(state[1]) == 50
        assert int(state[3]) == 30


class TestTuranScan:
    def test_no_counterexamples_small(self):
        for n in range(1, 6):
            assert turan_scan(n) == -1
            assert turan_scan_numpy(n) == -1

    def test_bound_on_random_graphs_via_independent_alpha(self):
        rng = np.random.default_rng(11)
        n = 6
        pairs = list(itertools.combinations(range(n), 2))
        for _ in range(50):
            g = int(rng.integers(0, 1 << len(pairs)))
            edges = [(a, b) for idx, (a, b) in enumerate(pairs)
                     if (g >> idx) & 1]
            alpha = 0
            for s in range(1 << n):
                members = [v for v in range(n) if (s >> v) & 1]
                if all((a not in members or b not in members)
                       for a, b in edges):
                    alpha = max(alpha, len(members))
            assert 2 * alpha * len(edges) >= n * (n - alpha)


class TestEnvFlag:
    def test_fallback_flag_is_reflected(self):
        import os

        want = os.environ.get("GIBBSTAIL_NO_NUMBA", "") == "1"
        assert _kernels.USE_NUMBA == (not want and _kernels.HAVE_NUMBA)
