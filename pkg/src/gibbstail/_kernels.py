"""Hot numerical kernels, jitted with numba when available.

Each kernel is plain scalar-loop Python, so the jitted path and the
interpreted fallback execute the same statements in the same order and
produce bitwise-identical results. Kernels that are hopeless to run
interpreted at full problem size (the cluster-integral sums, the pair sum
over flattened grids, the exhaustive graph scan) have a vectorized
``*_numpy`` twin used when numba is off; those agree with the loop versions
to rounding, not bitwise, and tests pin that down.

Set ``GIBBSTAIL_NO_NUMBA=1`` to force the fallback path everywhere.

The Metropolis chain kernel consumes pre-drawn uniforms in fixed rows of
``N_DRAWS`` per elementary move, no matter which move type runs or whether
the proposal is rejected early. That fixed layout is what makes streams
reproducible across kernel re-entry, capacity growth, and the two execution
paths.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("GIBBSTAIL_NO_NUMBA", "0") != "1"


def maybe_jit(fn):
    if USE_NUMBA:
        return njit(cache=True)(fn)
    return fn


def py_impl(fn):
    """The interpreted version of a maybe_jit kernel (itself when not jitted)."""
    return getattr(fn, "py_func", fn)


# Draw-row layout per elementary move:
#   [move_selector, index_or_coord1, coord2, coord3, spare_angle, accept]
N_DRAWS = 6

CHAIN_DONE = 0
CHAIN_NEED_DRAWS = 1
CHAIN_CAPACITY_FULL = 2


@maybe_jit
def _phi_of_d2(d2, radii_sq, values):
    """Step-potential value for a squared distance (first breakpoint wins)."""
    for j in range(radii_sq.size):
        if d2 <= radii_sq[j]:
            return values[j]
    return 0.0


@maybe_jit
def _local_u(pts, k, skip, fixed, x, dim, radii_sq, values, log_z, side, periodic):
    """Insertion cost of x against pts[:k] (minus index skip) plus fixed points."""
    u = -log_z
    for i in range(k):
        if i == skip:
            continue
        d2 = 0.0
        for c in range(dim):
            diff = pts[i, c] - x[c]
            if periodic:
                diff -= side * math.floor(diff / side + 0.5)
            d2 += diff * diff
        u += _phi_of_d2(d2, radii_sq, values)
        if u == np.inf:
            return u
    for i in range(fixed.shape[0]):
        d2 = 0.0
        for c in range(dim):
            diff = fixed[i, c] - x[c]
            if periodic:
                diff -= side * math.floor(diff / side + 0.5)
            d2 += diff * diff
        u += _phi_of_d2(d2, radii_sq, values)
        if u == np.inf:
            return u
    return u


@maybe_jit
def chain_pairwise(
    pts,
    fixed,
    state,
    draws,
    radii_sq,
    values,
    log_z,
    lo,
    hi,
    side,
    periodic,
    p_birth,
    p_death,
    step,
    sweep_moves,
    sweeps_target,
    burnin,
    log_vol,
    log_pd_pb,
    rec_lo,
    rec_hi,
    rec_counts,
):
    """Birth/death/translate Metropolis chain over a pairwise step potential.

    ``pts`` is a (capacity, dim) buffer holding the current configuration in
    its first ``state[0]`` rows; ``fixed`` holds immovable exterior boundary
    points entering every local energy. ``state`` is the int64 resume vector
    [count, sweeps_done, moves_left_in_sweep, record_ptr], updated in place.
    A sweep is a block of ``sweep_moves`` elementary moves; the block length
    must not depend on the evolving state, because the recorded snapshots are
    taken at sweep boundaries and sampling at state-dependent times biases
    the empirical law toward states with short blocks. ``draws`` are uniforms
    in rows of N_DRAWS. After each completed sweep past ``burnin``, the point
    count inside (rec_lo, rec_hi] is appended to ``rec_counts`` when that
    array is nonempty.

    Returns (status, rows_consumed): status CHAIN_DONE when ``sweeps_target``
    sweeps finished, CHAIN_NEED_DRAWS when the draw buffer ran dry, or
    CHAIN_CAPACITY_FULL when a birth found no free row (the triggering row is
    NOT consumed, so the move replays after the caller grows ``pts``).
    """
    dim = pts.shape[1]
    cap = pts.shape[0]
    k = state[0]
    sweeps_done = state[1]
    left = state[2]
    rec_ptr = state[3]
    nrows = draws.shape[0]
    ptr = 0
    xb = np.empty(3)
    yb = np.empty(3)
    status = CHAIN_DONE
    while sweeps_done < sweeps_target:
        if left == 0:
            left = sweep_moves
        if ptr >= nrows:
            status = CHAIN_NEED_DRAWS
            break
        row = draws[ptr]
        if row[0] < p_birth:
            if k >= cap:
                status = CHAIN_CAPACITY_FULL
                break
            ptr += 1
            for c in range(dim):
                xb[c] = hi[c] - row[1 + c] * side
            u_new = _local_u(
                pts, k, -1, fixed, xb, dim, radii_sq, values, log_z, side, periodic
            )
            log_r = -u_new + log_vol - math.log(k + 1.0) + log_pd_pb
            if log_r >= 0.0 or row[5] < math.exp(log_r):
                for c in range(dim):
                    pts[k, c] = xb[c]
                k += 1
        elif row[0] < p_birth + p_death:
            ptr += 1
            if k > 0:
                i = int(row[1] * k)
                for c in range(dim):
                    yb[c] = pts[i, c]
                u_old = _local_u(
                    pts, k, i, fixed, yb, dim, radii_sq, values, log_z, side, periodic
                )
                log_r = u_old + math.log(float(k)) - log_vol - log_pd_pb
                if log_r >= 0.0 or row[5] < math.exp(log_r):
                    for c in range(dim):
                        pts[i, c] = pts[k - 1, c]
                    k -= 1
        else:
            ptr += 1
            if k > 0:
                i = int(row[1] * k)
                if dim == 1:
                    xb[0] = pts[i, 0] + step * (2.0 * row[2] - 1.0)
                elif dim == 2:
                    r = step * math.sqrt(row[2])
                    ang = 2.0 * math.pi * row[3]
                    xb[0] = pts[i, 0] + r * math.cos(ang)
                    xb[1] = pts[i, 1] + r * math.sin(ang)
                else:
                    r = step * row[2] ** (1.0 / 3.0)
                    ct = 2.0 * row[3] - 1.0
                    st = math.sqrt(max(0.0, 1.0 - ct * ct))
                    ang = 2.0 * math.pi * row[4]
                    xb[0] = pts[i, 0] + r * st * math.cos(ang)
                    xb[1] = pts[i, 1] + r * st * math.sin(ang)
                    xb[2] = pts[i, 2] + r * ct
                inside = True
                if periodic:
                    for c in range(dim):
                        xb[c] = hi[c] - ((hi[c] - xb[c]) % side)
                else:
                    for c in range(dim):
                        if xb[c] <= lo[c] or xb[c] > hi[c]:
                            inside = False
                if inside:
                    u_new = _local_u(
                        pts, k, i, fixed, xb, dim, radii_sq, values, log_z, side,
                        periodic,
                    )
                    if u_new < np.inf:
                        for c in range(dim):
                            yb[c] = pts[i, c]
                        u_old = _local_u(
                            pts, k, i, fixed, yb, dim, radii_sq, values, log_z,
                            side, periodic,
                        )
                        log_r = u_old - u_new
                        if log_r >= 0.0 or row[5] < math.exp(log_r):
                            for c in range(dim):
                                pts[i, c] = xb[c]
        left -= 1
        if left == 0:
            sweeps_done += 1
            if sweeps_done > burnin and rec_counts.size > 0:
                cnt = 0
                for t in range(k):
                    ok = True
                    for c in range(dim):
                        if pts[t, c] <= rec_lo[c] or pts[t, c] > rec_hi[c]:
                            ok = False
                            break
                    if ok:
                        cnt += 1
                rec_counts[rec_ptr] = cnt
                rec_ptr += 1
    state[0] = k
    state[1] = sweeps_done
    state[2] = left
    state[3] = rec_ptr
    return status, ptr


# ---------------------------------------------------------------------------
# inertia counting
# ---------------------------------------------------------------------------


@maybe_jit
def sturm_count(diag, off, shift):
    """Eigenvalues of a real symmetric tridiagonal matrix strictly below shift.

    Returns -1 on an exactly zero (or non-finite) pivot; the caller decides
    how to perturb and retry.
    """
    n = diag.size
    count = 0
    prev = 0.0
    for i in range(n):
        if i == 0:
            d = diag[0] - shift
        else:
            d = diag[i] - shift - off[i - 1] * off[i - 1] / prev
        if d == 0.0 or d != d:
            return -1
        if d < 0.0:
            count += 1
        prev = d
    return count


@maybe_jit
def bordered_count(diag, off, corner, shift):
    """Inertia count for a Hermitian tridiagonal matrix plus corner coupling.

    ``diag`` is real, ``off[j] = H[j, j+1]`` complex, ``corner = H[M-1, 0]``.
    Symmetric elimination tracks the single fill entry that the corner smears
    along the last row, so the whole count is O(M). Requires M >= 3; returns
    -1 on a zero pivot.
    """
    m = diag.size
    count = 0
    d = diag[0] - shift
    f = corner
    dl = diag[m - 1] - shift
    for j in range(m - 2):
        if d == 0.0 or d != d:
            return -1
        if d < 0.0:
            count += 1
        f2 = f.real * f.real + f.imag * f.imag
        dl -= f2 / d
        if j == m - 3:
            fnext = np.conj(off[m - 2]) - f * off[j] / d
        else:
            fnext = -f * off[j] / d
        o2 = off[j].real * off[j].real + off[j].imag * off[j].imag
        d = diag[j + 1] - shift - o2 / d
        f = fnext
    if d == 0.0 or d != d:
        return -1
    if d < 0.0:
        count += 1
    f2 = f.real * f.real + f.imag * f.imag
    dl -= f2 / d
    if dl == 0.0 or dl != dl:
        return -1
    if dl < 0.0:
        count += 1
    return count


@maybe_jit
def banded_count_real(band):
    """Inertia count for a real symmetric band matrix, upper storage.

    ``band[i, j] = H[i, i+j]`` with the shift already folded into column 0.
    Destroys ``band``. Returns -1 on a zero pivot.
    """
    n = band.shape[0]
    width = band.shape[1] - 1
    count = 0
    for i in range(n):
        d = band[i, 0]
        if d == 0.0 or d != d:
            return -1
        if d < 0.0:
            count += 1
        jmax = min(width, n - 1 - i)
        for j in range(1, jmax + 1):
            hij = band[i, j]
            if hij != 0.0:
                m = hij / d
                for l in range(j, jmax + 1):
                    band[i + j, l - j] -= m * band[i, l]
    return count


@maybe_jit
def banded_count_complex(band):
    """Hermitian variant of banded_count_real (pivots taken from .real)."""
    n = band.shape[0]
    width = band.shape[1] - 1
    count = 0
    for i in range(n):
        d = band[i, 0].real
        if d == 0.0 or d != d:
            return -1
        if d < 0.0:
            count += 1
        jmax = min(width, n - 1 - i)
        for j in range(1, jmax + 1):
            hij = band[i, j]
            if hij.real != 0.0 or hij.imag != 0.0:
                m = np.conj(hij) / d
                for l in range(j, jmax + 1):
                    band[i + j, l - j] -= m * band[i, l]
    return count


# ---------------------------------------------------------------------------
# cluster integrals for the count-law quadrature oracle
# ---------------------------------------------------------------------------


@maybe_jit
def q_sums_1d(P, B, kmax):
    """Ordered k-tuple Boltzmann sums over quadrature nodes, k = 1..4.

    ``P[i, j]`` is the pair potential between nodes i and j, ``B[i]`` the
    cross energy of node i against the fixed boundary. Returns the four
    ordered sums S_k = sum over all index tuples of exp(-energy), computed by
    iterating nondecreasing tuples with multinomial weights.
    """
    n = B.size
    s1 = 0.0
    s2 = 0.0
    s3 = 0.0
    s4 = 0.0
    for i in range(n):
        e1 = B[i]
        s1 += math.exp(-e1)
        if kmax < 2:
            continue
        for j in range(i, n):
            e2 = e1 + B[j] + P[i, j]
            if e2 == np.inf:
                continue
            s2 += (2.0 if j > i else 1.0) * math.exp(-e2)
            if kmax < 3:
                continue
            for l in range(j, n):
                e3 = e2 + B[l] + P[i, l] + P[j, l]
                if e3 == np.inf:
                    continue
                if i == j and j == l:
                    w3 = 1.0
                elif i == j or j == l:
                    w3 = 3.0
                else:
                    w3 = 6.0
                s3 += w3 * math.exp(-e3)
                if kmax < 4:
                    continue
                for t in range(l, n):
                    e4 = e3 + B[t] + P[i, t] + P[j, t] + P[l, t]
                    if e4 == np.inf:
                        continue
                    r = 1
                    den = 1.0
                    if j == i:
                        r += 1
                        den *= r
                    else:
                        r = 1
                    if l == j:
                        r += 1
                        den *= r
                    else:
                        r = 1
                    if t == l:
                        r += 1
                        den *= r
                    else:
                        r = 1
                    s4 += (24.0 / den) * math.exp(-e4)
    return s1, s2, s3, s4


def q_sums_1d_numpy(P, B, kmax):
    """Vectorized twin of q_sums_1d (same values up to summation order)."""
    with np.errstate(over="ignore"):
        weights = np.exp(-np.asarray(B, dtype=float))
        gmat = np.exp(-np.asarray(P, dtype=float))
    n = weights.size
    s1 = float(weights.sum())
    s2 = s3 = s4 = 0.0
    if kmax >= 2:
        s2 = float(weights @ gmat @ weights)
    if kmax >= 3:
        for i in range(n):
            v = gmat[i] * weights
            s3 += weights[i] * float(v @ gmat @ v)
    if kmax >= 4:
        for i in range(n):
            gi = gmat[i]
            for j in range(i, n):
                w = weights[i] * weights[j] * gmat[i, j]
                if w == 0.0:
                    continue
                v = gi * gmat[j] * weights
                contrib = w * float(v @ gmat @ v)
                s4 += contrib if j == i else 2.0 * contrib
    return s1, s2, s3, s4


@maybe_jit
def q2_sum_nd(coords, B, radii_sq, values, periodic, side):
    """Ordered pair Boltzmann sum over flattened grid nodes in any dimension."""
    m = coords.shape[0]
    dim = coords.shape[1]
    s2 = 0.0
    for i in range(m):
        bi = B[i]
        for j in range(i, m):
            d2 = 0.0
            for c in range(dim):
                diff = coords[i, c] - coords[j, c]
                if periodic:
                    diff -= side * math.floor(diff / side + 0.5)
                d2 += diff * diff
            e = bi + B[j] + _phi_of_d2(d2, radii_sq, values)
            if e == np.inf:
                continue
            s2 += (2.0 if j > i else 1.0) * math.exp(-e)
    return s2


def q2_sum_nd_numpy(coords, B, radii_sq, values, periodic, side):
    """Vectorized twin of q2_sum_nd (full ordered double sum, chunked)."""
    coords = np.asarray(coords, dtype=float)
    bvec = np.asarray(B, dtype=float)
    m = coords.shape[0]
    padded = np.append(values, 0.0)
    total = 0.0
    chunk = max(1, 20_000_000 // max(m, 1))
    for s in range(0, m, chunk):
        blk = coords[s : s + chunk]
        diff = blk[:, None, :] - coords[None, :, :]
        if periodic:
            diff -= side * np.floor(diff / side + 0.5)
        d2 = (diff * diff).sum(axis=2)
        idx = np.searchsorted(radii_sq, d2.ravel(), side="left")
        phi = padded[np.minimum(idx, len(values))].reshape(d2.shape)
        energy = bvec[s : s + chunk, None] + bvec[None, :] + phi
        with np.errstate(over="ignore"):
            total += float(np.exp(-energy).sum())
    return total


# ---------------------------------------------------------------------------
# exhaustive graph scan
# ---------------------------------------------------------------------------


@maybe_jit
def turan_scan(n):
    """Scan all graphs on n <= 7 vertices for a violation of the edge bound
    2*alpha*edges >= n*(n - alpha), alpha the independence number.

    Returns the edge bitmask of the first counterexample, or -1 when none
    exists.
    """
    n_pairs = n * (n - 1) // 2
    n_sub = 1 << n
    pairmask = np.zeros(n_sub, dtype=np.int64)
    size = np.zeros(n_sub, dtype=np.int64)
    for s in range(n_sub):
        pm = 0
        sz = 0
        idx = 0
        for i in range(n):
            if (s >> i) & 1:
                sz += 1
            for j in range(i + 1, n):
                if ((s >> i) & 1) == 1 and ((s >> j) & 1) == 1:
                    pm |= 1 << idx
                idx += 1
        pairmask[s] = pm
        size[s] = sz
    order = np.argsort(-size)
    for g in range(1 << n_pairs):
        alpha = 0
        for t in range(n_sub):
            s = order[t]
            if (g & pairmask[s]) == 0:
                alpha = size[s]
                break
        edges = 0
        gg = g
        while gg:
            gg &= gg - 1
            edges += 1
        if 2 * alpha * edges < n * (n - alpha):
            return g
    return -1


def turan_scan_numpy(n):
    """Vectorized twin of turan_scan for the no-numba path."""
    n_pairs = n * (n - 1) // 2
    pairmask = np.zeros(1 << n, dtype=np.int64)
    size = np.zeros(1 << n, dtype=np.int64)
    for s in range(1 << n):
        pm = 0
        idx = 0
        for i in range(n):
            for j in range(i + 1, n):
                if (s >> i) & 1 and (s >> j) & 1:
                    pm |= 1 << idx
                idx += 1
        pairmask[s] = pm
        size[s] = bin(s).count("1")
    graphs = np.arange(1 << n_pairs, dtype=np.int64)
    alpha = np.zeros(graphs.size, dtype=np.int64)
    for s in range(1 << n):
        indep = (graphs & pairmask[s]) == 0
        alpha = np.maximum(alpha, np.where(indep, size[s], 0))
    table = np.array([bin(i).count("1") for i in range(1 << 11)], dtype=np.int64)
    edges = table[graphs & 2047] + table[(graphs >> 11) & 2047]
    bad = 2 * alpha * edges < n * (n - alpha)
    if bad.any():
        return int(graphs[bad][0])
    return -1
