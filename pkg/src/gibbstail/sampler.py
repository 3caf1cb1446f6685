"""Samplers for Poisson and Gibbs point processes, with exact count-law
oracles and statistical diagnostics.

Gibbs laws are reached by a birth/death/translate Metropolis chain whose
acceptance ratios use local insertion energies, so the conditional law given
an exterior boundary and the torus law both come from the same kernel. The
chain consumes pre-drawn uniforms in fixed-size rows (one row per elementary
move, rejected or not), which makes every stream bitwise reproducible for a
given seed, independent of buffer capacity growth and of whether the jitted
or interpreted kernel runs.

Small volumes admit a brute-force check: the count law under the conditional
Gibbs measure has an explicit finite-dimensional integral for each k, which
``dlr_count_pmf_oracle`` evaluates by midpoint tensor quadrature. Everything
statistical in the test suite is anchored to that oracle or to closed-form
Poisson laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.stats

from . import _kernels
from ._kernels import (
    CHAIN_CAPACITY_FULL,
    CHAIN_DONE,
    CHAIN_NEED_DRAWS,
    N_DRAWS,
    USE_NUMBA,
)
from .errors import (
    BoxTooSmall,
    ConfigError,
    DimensionTooLarge,
    NonErgodicSettings,
)
from .pointproc import (
    AreaModel,
    Box,
    Configuration,
    InteractionModel,
    PairwiseModel,
    PoissonModel,
    _points_of,
    _union_volume,
    ball_volume,
)

__all__ = [
    "RngState",
    "ChainSettings",
    "CountPmf",
    "GibbsChain",
    "sample_poisson",
    "sample_gibbs_conditional",
    "sample_gibbs_periodic",
    "run_count_chain",
    "dlr_count_pmf_oracle",
    "periodic_count_pmf_oracle",
    "empirical_count_pmf",
    "tv_distance",
    "check_domination",
    "boundary_influence_probe",
    "birth_log_ratio",
    "death_log_ratio",
    "translate_log_ratio",
    "configuration_to_csv",
    "configuration_from_csv",
]


class RngState:
    """Seeded PCG64 generator with deterministic child-stream spawning."""

    def __init__(self, seed: int, _ss: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._ss = _ss if _ss is not None else np.random.SeedSequence(self.seed)
        self.gen = np.random.Generator(np.random.PCG64(self._ss))

    def spawn(self, n: int) -> list["RngState"]:
        return [RngState(self.seed, _ss=child) for child in self._ss.spawn(n)]

    def __repr__(self):
        return f"RngState(seed={self.seed})"


@dataclass(frozen=True)
class ChainSettings:
    """Metropolis chain length and move mix.

    A sweep is a fixed block of elementary moves, sized once per chain as
    max(1, round(exp(-b) * volume)), the mean count of the dominating Poisson
    process. The block length must not track the evolving point count:
    states are recorded at sweep boundaries, and boundaries whose spacing
    depends on the state oversample configurations with short blocks. When
    ``burnin`` is None it defaults to 20% of ``sweeps``; when ``step`` is
    None the translate radius defaults to half the interaction range (a
    tenth of the box side for non-interacting models).
    """

    sweeps: int
    burnin: int | None = None
    p_birth: float = 0.35
    p_death: float = 0.35
    p_translate: float = 0.30
    step: float | None = None

    def __post_init__(self):
        if self.sweeps < 0:
            raise ConfigError("sweeps must be nonnegative")
        probs = (self.p_birth, self.p_death, self.p_translate)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ConfigError("move probabilities must be nonnegative and sum to 1")
        if self.burnin is not None and not 0 <= self.burnin <= self.sweeps:
            raise ConfigError("burnin must lie in [0, sweeps]")
        if self.step is not None and self.step <= 0:
            raise ConfigError("translate step must be positive")

    @property
    def resolved_burnin(self) -> int:
        return self.burnin if self.burnin is not None else int(0.2 * self.sweeps)

    def resolved_step(self, interaction_range: float, side: float) -> float:
        if self.step is not None:
            return self.step
        return 0.5 * interaction_range if interaction_range > 0 else side / 10.0


@dataclass(frozen=True)
class CountPmf:
    """Point-count law: explicit probabilities p_0..p_kmax plus a tail mass."""

    probs: np.ndarray
    tail: float

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a nonempty 1-d array")
        if np.any(probs < 0) or self.tail < -1e-15:
            raise ValueError("probabilities must be nonnegative")
        if abs(probs.sum() + self.tail - 1.0) > 1e-9:
            raise ValueError("probabilities plus tail must sum to 1")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "tail", float(self.tail))

    @property
    def kmax(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        """Mean over the explicit range (a lower bound when tail > 0)."""
        return float(np.arange(self.probs.size) @ self.probs)

    def collapsed(self, kmax: int) -> "CountPmf":
        """Fold everything above kmax into the tail bucket."""
        if kmax >= self.kmax:
            return self
        probs = self.probs[: kmax + 1]
        return CountPmf(probs, self.tail + float(self.probs[kmax + 1 :].sum()))


def empirical_count_pmf(counts: np.ndarray, kmax: int) -> CountPmf:
    counts = np.asarray(counts, dtype=np.int64)
    total = counts.size
    freq = np.bincount(np.minimum(counts, kmax + 1), minlength=kmax + 2)
    return CountPmf(freq[: kmax + 1] / total, freq[kmax + 1] / total)


def tv_distance(a: CountPmf, b: CountPmf) -> float:
    k = min(a.kmax, b.kmax)
    a, b = a.collapsed(k), b.collapsed(k)
    return 0.5 * (float(np.abs(a.probs - b.probs).sum()) + abs(a.tail - b.tail))


# ---------------------------------------------------------------------------
# shared move math (python reference, also used by the area-model chain)
# ---------------------------------------------------------------------------


def _general_local_u(x, env, model, box: Box, periodic: bool) -> float:
    """Insertion cost of x against env, flat or torus metric."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    env = np.asarray(env, dtype=float).reshape(-1, box.dim)
    if isinstance(model, PoissonModel):
        return -math.log(model.mu)
    if isinstance(model, PairwiseModel):
        u = -math.log(model.z)
        if env.shape[0]:
            diff = env - x
            if periodic:
                diff = box.min_image(diff)
            d = np.sqrt((diff * diff).sum(axis=1))
            u += float(np.sum(model.phi.radial(d)))
        return u
    radius = 0.5 * model.R
    torus = box.side if periodic else None
    if env.shape[0] == 0:
        if box.dim == 1 and torus is not None:
            return model.scale * min(2.0 * radius, torus)
        return model.scale * ball_volume(box.dim, radius)
    both = _union_volume(np.vstack([env, x]), radius, torus)
    old = _union_volume(env, radius, torus)
    return model.scale * (both - old)


def _clip_boundary(gamma, region: Box, interaction_range: float) -> np.ndarray:
    """Exterior boundary points within interaction range of the region."""
    env = _points_of(gamma) if gamma is not None else np.empty((0, region.dim))
    env = env.reshape(-1, region.dim) if env.size else env.reshape(0, region.dim)
    if env.shape[0] == 0:
        return env
    env = env[~region.contains(env)]
    if env.shape[0] == 0:
        return env
    excess = np.maximum(region.lo - env, 0.0)
    excess = np.maximum(excess, env - region.hi)
    keep = (excess * excess).sum(axis=1) <= interaction_range**2
    return np.ascontiguousarray(env[keep])


def _log_prob_ratio(num: float, den: float) -> float:
    if num == 0.0 and den == 0.0:
        raise NonErgodicSettings("birth and death probabilities are both zero")
    lo_num = -math.inf if num == 0.0 else math.log(num)
    lo_den = -math.inf if den == 0.0 else math.log(den)
    return lo_num - lo_den


def birth_log_ratio(model, box, gamma, current, x, settings, periodic=False):
    """Log Metropolis ratio for inserting x into the current configuration."""
    cur = np.asarray(current, dtype=float).reshape(-1, box.dim)
    fixed = _clip_boundary(gamma, box, model.interaction_range)
    env = np.vstack([cur, fixed]) if fixed.size else cur
    u = _general_local_u(x, env, model, box, periodic)
    k = cur.shape[0]
    return (
        -u
        + math.log(box.volume)
        - math.log(k + 1.0)
        + _log_prob_ratio(settings.p_death, settings.p_birth)
    )


def death_log_ratio(model, box, gamma, current, index, settings, periodic=False):
    """Log Metropolis ratio for deleting current[index]."""
    cur = np.asarray(current, dtype=float).reshape(-1, box.dim)
    k = cur.shape[0]
    rest = np.delete(cur, index, axis=0)
    fixed = _clip_boundary(gamma, box, model.interaction_range)
    env = np.vstack([rest, fixed]) if fixed.size else rest
    u = _general_local_u(cur[index], env, model, box, periodic)
    return (
        u
        + math.log(float(k))
        - math.log(box.volume)
        + _log_prob_ratio(settings.p_birth, settings.p_death)
    )


def translate_log_ratio(model, box, gamma, current, index, new_pos, settings,
                        periodic=False):
    """Log Metropolis ratio for moving current[index] to new_pos.

    Returns -inf when the destination is outside a non-periodic box or has
    infinite insertion energy.
    """
    cur = np.asarray(current, dtype=float).reshape(-1, box.dim)
    new_pos = np.asarray(new_pos, dtype=float).reshape(-1)
    if not periodic and not box.contains(new_pos.reshape(1, -1))[0]:
        return -math.inf
    rest = np.delete(cur, index, axis=0)
    fixed = _clip_boundary(gamma, box, model.interaction_range)
    env = np.vstack([rest, fixed]) if fixed.size else rest
    u_new = _general_local_u(new_pos, env, model, box, periodic)
    if u_new == math.inf:
        return -math.inf
    u_old = _general_local_u(cur[index], env, model, box, periodic)
    return u_old - u_new


# ---------------------------------------------------------------------------
# the chain
# ---------------------------------------------------------------------------


class GibbsChain:
    """Resumable Metropolis chain targeting a conditional or torus Gibbs law.

    The chain starts empty. ``run_sweeps(n)`` advances n sweeps;
    ``run_sweeps(n, count_region=...)`` additionally records the point count
    inside the given sub-box after each of those sweeps. Pairwise models run
    in the compiled kernel; area-interaction models run an interpreted loop
    with identical move logic; a Poisson model degenerates to exact
    resampling each sweep.
    """

    def __init__(self, model: InteractionModel, box: Box, gamma, settings:
                 ChainSettings, rng: RngState, periodic: bool = False):
        if settings.p_birth == 0.0 and settings.p_death == 0.0:
            raise NonErgodicSettings(
                "count cannot change: birth and death probabilities are both zero"
            )
        R = model.interaction_range
        if periodic:
            if not box.periodic:
                raise ConfigError("periodic sampling requires a periodic box")
            if box.side <= 2.0 * R:
                raise BoxTooSmall(
                    f"torus side {box.side} must exceed twice the range {R}"
                )
            if gamma is not None and _points_of(gamma).size:
                raise ConfigError("the torus law takes no boundary configuration")
        self.model = model
        self.box = box
        self.settings = settings
        self.rng = rng
        self.periodic = periodic
        self.fixed = (
            np.empty((0, box.dim))
            if periodic
            else _clip_boundary(gamma, box, R)
        )
        self._sweeps_done = 0
        self._step = settings.resolved_step(R, box.side)
        lam = math.exp(-model.stability_floor(box.dim)) * box.volume
        self._sweep_moves = max(1, int(round(min(lam, 1_000_000.0))))
        if isinstance(model, PairwiseModel):
            self._mode = "kernel"
            radii = np.asarray(model.phi.radii, dtype=float)
            self._radii_sq = radii * radii
            self._values = np.asarray(model.phi.values, dtype=float)
            self._log_z = math.log(model.z)
            self._pts = np.zeros((64, box.dim))
            self._state = np.zeros(4, dtype=np.int64)
            self._log_pd_pb = _log_prob_ratio(settings.p_death, settings.p_birth)
        elif isinstance(model, AreaModel):
            self._mode = "area"
            self._cur: list[np.ndarray] = []
            self._log_pd_pb = _log_prob_ratio(settings.p_death, settings.p_birth)
        else:
            self._mode = "poisson"
            self._cur_cfg = Configuration.empty(box)

    @property
    def configuration(self) -> Configuration:
        if self._mode == "kernel":
            k = int(self._state[0])
            return Configuration(self._pts[:k].copy(), self.box)
        if self._mode == "area":
            pts = np.array(self._cur).reshape(-1, self.box.dim)
            return Configuration(pts, self.box)
        return self._cur_cfg

    def run_sweeps(self, n: int, count_region: Box | None = None) -> np.ndarray:
        """Advance n sweeps; return per-sweep counts when a region is given."""
        record = count_region is not None
        rec_box = count_region if record else self.box
        if self._mode == "kernel":
            counts = self._run_kernel(n, record, rec_box)
        elif self._mode == "area":
            counts = self._run_area(n, record, rec_box)
        else:
            counts = self._run_poisson(n, record, rec_box)
        self._sweeps_done += n
        return counts if record else np.empty(0, dtype=np.int64)

    def _run_kernel(self, n, record, rec_box):
        rec_counts = np.zeros(n if record else 0, dtype=np.int64)
        target = self._state[1] + n
        burn = self._state[1] if record else target
        self._state[3] = 0
        lo, hi = self.box.lo, self.box.hi
        log_vol = math.log(self.box.volume)
        draws = self.rng.gen.random((8192, N_DRAWS))
        while True:
            status, used = _kernels.chain_pairwise(
                self._pts, self.fixed, self._state, draws,
                self._radii_sq, self._values, self._log_z,
                lo, hi, self.box.side, self.periodic,
                self.settings.p_birth, self.settings.p_death, self._step,
                self._sweep_moves, target, burn, log_vol, self._log_pd_pb,
                rec_box.lo, rec_box.hi, rec_counts,
            )
            if status == CHAIN_DONE:
                break
            if status == CHAIN_CAPACITY_FULL:
                bigger = np.zeros((2 * self._pts.shape[0], self.box.dim))
                bigger[: self._pts.shape[0]] = self._pts
                self._pts = bigger
                draws = draws[used:]
                continue
            if status == CHAIN_NEED_DRAWS:
                draws = self.rng.gen.random((8192, N_DRAWS))
        return rec_counts

    def _run_area(self, n, record, rec_box):
        gen = self.rng.gen
        model, box = self.model, self.box
        settings = self.settings
        lo, hi = box.lo, box.hi
        log_vol = math.log(box.volume)
        counts = np.zeros(n if record else 0, dtype=np.int64)
        for s in range(n):
            for _ in range(self._sweep_moves):
                row = gen.random(N_DRAWS)
                k = len(self._cur)
                cur_arr = (
                    np.array(self._cur)
                    if k
                    else np.empty((0, box.dim))
                )
                env = (
                    np.vstack([cur_arr, self.fixed])
                    if self.fixed.size
                    else cur_arr
                )
                if row[0] < settings.p_birth:
                    x = hi - row[1 : 1 + box.dim] * box.side
                    u_new = _general_local_u(x, env, model, box, self.periodic)
                    log_r = (
                        -u_new + log_vol - math.log(k + 1.0) + self._log_pd_pb
                    )
                    if log_r >= 0.0 or row[5] < math.exp(log_r):
                        self._cur.append(np.asarray(x, dtype=float))
                elif row[0] < settings.p_birth + settings.p_death:
                    if k > 0:
                        i = int(row[1] * k)
                        rest = np.delete(cur_arr, i, axis=0)
                        env_i = (
                            np.vstack([rest, self.fixed])
                            if self.fixed.size
                            else rest
                        )
                        u_old = _general_local_u(
                            cur_arr[i], env_i, model, box, self.periodic
                        )
                        log_r = (
                            u_old + math.log(float(k)) - log_vol - self._log_pd_pb
                        )
                        if log_r >= 0.0 or row[5] < math.exp(log_r):
                            self._cur.pop(i)
                else:
                    if k > 0:
                        i = int(row[1] * k)
                        y = self._propose_shift(cur_arr[i], row)
                        if self.periodic:
                            y = hi - np.mod(hi - y, box.side)
                            inside = True
                        else:
                            inside = bool(box.contains(y.reshape(1, -1))[0])
                        if inside:
                            rest = np.delete(cur_arr, i, axis=0)
                            env_i = (
                                np.vstack([rest, self.fixed])
                                if self.fixed.size
                                else rest
                            )
                            u_new = _general_local_u(
                                y, env_i, model, box, self.periodic
                            )
                            if u_new < math.inf:
                                u_old = _general_local_u(
                                    cur_arr[i], env_i, model, box, self.periodic
                                )
                                log_r = u_old - u_new
                                if log_r >= 0.0 or row[5] < math.exp(log_r):
                                    self._cur[i] = y
            if record:
                counts[s] = self._count_in(rec_box)
        return counts

    def _propose_shift(self, x, row):
        dim = self.box.dim
        step = self._step
        if dim == 1:
            return x + np.array([step * (2.0 * row[2] - 1.0)])
        if dim == 2:
            r = step * math.sqrt(row[2])
            ang = 2.0 * math.pi * row[3]
            return x + np.array([r * math.cos(ang), r * math.sin(ang)])
        r = step * row[2] ** (1.0 / 3.0)
        ct = 2.0 * row[3] - 1.0
        st = math.sqrt(max(0.0, 1.0 - ct * ct))
        ang = 2.0 * math.pi * row[4]
        return x + np.array(
            [r * st * math.cos(ang), r * st * math.sin(ang), r * ct]
        )

    def _count_in(self, rec_box: Box) -> int:
        if self._mode == "area":
            if not self._cur:
                return 0
            pts = np.array(self._cur)
        else:
            pts = self._cur_cfg.points
        if pts.size == 0:
            return 0
        return int(rec_box.contains(pts).sum())

    def _run_poisson(self, n, record, rec_box):
        counts = np.zeros(n if record else 0, dtype=np.int64)
        for s in range(n):
            self._cur_cfg = sample_poisson(self.box, self.model.mu, self.rng)
            if record:
                counts[s] = self._count_in(rec_box)
        return counts


# ---------------------------------------------------------------------------
# sampling entry points
# ---------------------------------------------------------------------------


def sample_poisson(box: Box, mu: float, rng: RngState) -> Configuration:
    """Poisson process on the box: Poisson(mu*volume) many uniform points."""
    if mu < 0:
        raise ConfigError("intensity must be nonnegative")
    if mu == 0:
        return Configuration.empty(box)
    k = int(rng.gen.poisson(mu * box.volume))
    pts = box.hi - rng.gen.random((k, box.dim)) * box.side
    return Configuration(pts, box)


def sample_gibbs_conditional(model, region: Box, gamma, settings: ChainSettings,
                             rng: RngState) -> Configuration:
    """Chain state after ``settings.sweeps`` sweeps targeting the conditional
    Gibbs law on the region with exterior boundary gamma."""
    chain = GibbsChain(model, region, gamma, settings, rng, periodic=False)
    chain.run_sweeps(settings.sweeps)
    return chain.configuration


def sample_gibbs_periodic(model, box: Box, settings: ChainSettings,
                          rng: RngState) -> Configuration:
    """Chain state after ``settings.sweeps`` sweeps targeting the torus law."""
    chain = GibbsChain(model, box, None, settings, rng, periodic=True)
    chain.run_sweeps(settings.sweeps)
    return chain.configuration


def run_count_chain(model, box: Box, gamma, settings: ChainSettings,
                    rng: RngState, periodic: bool = False,
                    count_region: Box | None = None) -> np.ndarray:
    """Burn in, then record the count in ``count_region`` (default: the whole
    box) after each retained sweep. Returns sweeps - burnin counts."""
    chain = GibbsChain(model, box, gamma, settings, rng, periodic=periodic)
    burn = settings.resolved_burnin
    chain.run_sweeps(burn)
    return chain.run_sweeps(
        settings.sweeps - burn, count_region=count_region or box
    )


# ---------------------------------------------------------------------------
# quadrature oracles for the count law
# ---------------------------------------------------------------------------


def _axis_midpoints(box: Box, nodes: int) -> list[np.ndarray]:
    h = box.side / nodes
    return [box.lo[c] + (np.arange(nodes) + 0.5) * h for c in range(box.dim)]


def _poisson_pmf(lam: float, kmax: int) -> CountPmf:
    ks = np.arange(kmax + 1)
    probs = scipy.stats.poisson.pmf(ks, lam)
    return CountPmf(probs, max(0.0, 1.0 - probs.sum()))


def _poisson_tail_unnormalized(lam: float, kmax: int) -> float:
    """sum_{k > kmax} lam^k / k!, the domination bound on the raw integrals."""
    if lam > 300.0:
        return math.inf
    term = lam ** (kmax + 1) / math.factorial(kmax + 1)
    total = 0.0
    k = kmax + 1
    while term > 1e-18 * (total + 1.0) and k < 10_000:
        total += term
        k += 1
        term *= lam / k
    return total


def _tail_estimate(q: list[float], lam: float, kmax: int) -> float:
    """Unnormalized mass above kmax: geometric extrapolation capped by the
    Poisson domination bound; zero when the last integral already vanished."""
    bound = _poisson_tail_unnormalized(lam, kmax)
    if q[kmax] == 0.0:
        return 0.0
    if kmax >= 1 and q[kmax - 1] > 0.0:
        rho = q[kmax] / q[kmax - 1]
        if rho < 1.0:
            return min(q[kmax] * rho / (1.0 - rho), bound)
    return bound


def _tri_cdf(t: np.ndarray) -> np.ndarray:
    """CDF of the difference of two independent uniforms on [-1/2, 1/2]."""
    t = np.clip(t, -1.0, 1.0)
    return np.where(t <= 0.0, 0.5 * (1.0 + t) ** 2, 1.0 - 0.5 * (1.0 - t) ** 2)


def _box_cdf(t: np.ndarray) -> np.ndarray:
    """CDF of a single uniform on [-1/2, 1/2]."""
    return np.clip(t + 0.5, 0.0, 1.0)


def _avg_boltzmann(phi, diff: np.ndarray, h: float, cdf) -> np.ndarray:
    """Average of exp(-phi(|u|)) over cell jitter, u = diff + h*J.

    ``cdf`` is the law of the jitter J scaled to unit cell width: _box_cdf
    when one endpoint sweeps a width-h cell (site-boundary factors),
    _tri_cdf when both do (pair factors). Since phi is a step function the
    average is a finite sum of level Boltzmann weights times the exact
    probability that |u| lands in each annulus, so cell-averaged factors
    cost one CDF evaluation per level.
    """
    radii = np.asarray(phi.radii, dtype=float)
    values = np.asarray(phi.values, dtype=float)
    total = np.zeros(diff.shape, dtype=float)
    f_prev = np.zeros(diff.shape, dtype=float)
    for r, v in zip(radii, values):
        f = cdf((r - diff) / h) - cdf((-r - diff) / h)
        total += math.exp(-v) * (f - f_prev)
        f_prev = f
    total += 1.0 - f_prev
    return total


def _pairwise_q_integrals(model: PairwiseModel, box: Box, gamma, kmax: int,
                          nodes: int, torus: bool) -> list[float]:
    """Raw ordered Boltzmann integrals q_0..q_kmax on a midpoint grid.

    In d=1 every pair and site-boundary Boltzmann factor is averaged exactly
    over the quadrature cells (step-level probabilities under the cell
    jitter), so the discontinuities of the step potential cost O(h^2) rather
    than O(h). Higher dimensions use plain midpoint values.
    """
    d = box.dim
    phi = model.phi
    cell = (box.side / nodes) ** d
    axes = _axis_midpoints(box, nodes)
    if d == 1:
        t = axes[0]
        h = box.side / nodes
        diff = t[:, None] - t[None, :]
        if torus:
            diff = diff - box.side * np.floor(diff / box.side + 0.5)
        with np.errstate(divide="ignore"):
            P = -np.log(_avg_boltzmann(phi, diff, h, _tri_cdf))
        env = _clip_boundary(gamma, box, phi.support_radius)
        if env.shape[0]:
            gfac = _avg_boltzmann(
                phi, t[:, None] - env[None, :, 0], h, _box_cdf
            )
            with np.errstate(divide="ignore"):
                B = (-np.log(gfac)).sum(axis=1)
        else:
            B = np.zeros(t.size)
        fn = _kernels.q_sums_1d if USE_NUMBA else _kernels.q_sums_1d_numpy
        sums = fn(P, B, kmax)
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        coords = np.ascontiguousarray(
            np.stack([m.ravel() for m in mesh], axis=1)
        )
        env = _clip_boundary(gamma, box, phi.support_radius)
        if env.shape[0]:
            dmat = np.linalg.norm(coords[:, None, :] - env[None, :, :], axis=2)
            B = phi.radial(dmat).sum(axis=1)
        else:
            B = np.zeros(coords.shape[0])
        s1 = float(np.exp(-B).sum())
        sums = [s1, 0.0, 0.0, 0.0]
        if kmax >= 2:
            radii = np.asarray(phi.radii, dtype=float)
            fn = _kernels.q2_sum_nd if USE_NUMBA else _kernels.q2_sum_nd_numpy
            sums[1] = fn(
                coords, B, radii * radii, np.asarray(phi.values, dtype=float),
                torus, box.side,
            )
    q = [1.0]
    for k in range(1, kmax + 1):
        q.append(model.z**k * cell**k * sums[k - 1] / math.factorial(k))
    return q


def _area_q_integrals(model: AreaModel, box: Box, gamma, kmax: int,
                      nodes: int, torus: bool) -> list[float]:
    if box.dim != 1:
        raise ConfigError(
            "the area-interaction count oracle is implemented in d=1 only"
        )
    from itertools import combinations_with_replacement

    t = _axis_midpoints(box, nodes)[0]
    h = box.side / nodes
    radius = 0.5 * model.R
    side = box.side if torus else None
    env = _clip_boundary(gamma, box, model.R)
    base = _union_volume(env, radius, side) if env.size else 0.0
    q = [1.0]
    for k in range(1, kmax + 1):
        total = 0.0
        for tup in combinations_with_replacement(range(t.size), k):
            pts = t[list(tup)].reshape(-1, 1)
            allpts = np.vstack([pts, env]) if env.size else pts
            energy = model.scale * (_union_volume(allpts, radius, side) - base)
            weight = math.factorial(k)
            run = 1
            for a, b in zip(tup[1:], tup[:-1]):
                if a == b:
                    run += 1
                    weight //= run
                else:
                    run = 1
            total += weight * math.exp(-energy)
        q.append(h**k * total / math.factorial(k))
    return q


def _normalize_counts(q: list[float], lam: float, kmax: int) -> CountPmf:
    tail_raw = _tail_estimate(q, lam, kmax)
    if math.isinf(tail_raw):
        raise ConfigError(
            "count oracle tail bound unusable: dominating intensity too large"
        )
    z_sum = sum(q) + tail_raw
    probs = np.array(q) / z_sum
    return CountPmf(probs, tail_raw / z_sum)


def dlr_count_pmf_oracle(model, region: Box, gamma=None, kmax: int = 4,
                         nodes: int = 200) -> CountPmf:
    """Count law of the conditional Gibbs measure, by brute-force quadrature.

    The k-point integrals are evaluated on a tensor midpoint grid (``nodes``
    per axis), so the cost grows like nodes^(dim*k); the preconditions
    dim*kmax <= 4 and kmax <= 5 keep that finite. Mass above kmax is the
    geometric extrapolation of the last two integrals, capped by the exact
    Poisson domination bound.
    """
    d = region.dim
    if d * kmax > 4 or kmax > 5:
        raise DimensionTooLarge(
            f"quadrature needs dim*kmax <= 4 and kmax <= 5, got {d}*{kmax}"
        )
    if isinstance(model, PoissonModel):
        return _poisson_pmf(model.mu * region.volume, kmax)
    if isinstance(model, AreaModel):
        q = _area_q_integrals(model, region, gamma, kmax, nodes, torus=False)
    else:
        q = _pairwise_q_integrals(model, region, gamma, kmax, nodes, torus=False)
    lam = math.exp(-model.stability_floor(d)) * region.volume
    return _normalize_counts(q, lam, kmax)


def periodic_count_pmf_oracle(model, box: Box, kmax: int = 4,
                              nodes: int = 200) -> CountPmf:
    """Count law of the torus Gibbs measure (minimal-image metric)."""
    d = box.dim
    if d * kmax > 4 or kmax > 5:
        raise DimensionTooLarge(
            f"quadrature needs dim*kmax <= 4 and kmax <= 5, got {d}*{kmax}"
        )
    if not box.periodic:
        raise ConfigError("periodic count oracle requires a periodic box")
    R = model.interaction_range
    if box.side <= 2.0 * R:
        raise BoxTooSmall(f"torus side {box.side} must exceed twice the range {R}")
    if isinstance(model, PoissonModel):
        return _poisson_pmf(model.mu * box.volume, kmax)
    if isinstance(model, AreaModel):
        q = _area_q_integrals(model, box, None, kmax, nodes, torus=True)
    else:
        q = _pairwise_q_integrals(model, box, None, kmax, nodes, torus=True)
    lam = math.exp(-model.stability_floor(d)) * box.volume
    return _normalize_counts(q, lam, kmax)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def _batch_se(values: np.ndarray, batches: int = 50) -> float:
    """Batch-means standard error of the mean for a correlated sequence."""
    n = values.size
    nb = min(batches, max(2, n // 10))
    bs = n // nb
    means = values[: nb * bs].reshape(nb, bs).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(nb))


def check_domination(model, region: Box, gamma, samples: int, rng: RngState,
                     settings: ChainSettings | None = None) -> dict:
    """Compare the sampled Gibbs mean count against the dominating Poisson law.

    The Gibbs count in any region is stochastically below a Poisson law with
    intensity e^(-b); a sampled mean above that (or any ordered survival
    probability P(count >= k) above its Poisson value) by more than 3 batch
    standard errors is flagged. Returns a JSON-ready report.
    """
    if samples < 1000:
        raise ConfigError("domination check needs at least 10^3 samples")
    if settings is None:
        sweeps = int(math.ceil(samples / 0.8))
        settings = ChainSettings(sweeps=sweeps)
    counts = run_count_chain(model, region, gamma, settings, rng)[:samples]
    lam = math.exp(-model.stability_floor(region.dim)) * region.volume
    gibbs_mean = float(counts.mean())
    se = _batch_se(counts.astype(float))
    z = (gibbs_mean - lam) / se if se > 0 else 0.0
    events = []
    for k in range(1, 5):
        ind = (counts >= k).astype(float)
        g = float(ind.mean())
        p = float(scipy.stats.poisson.sf(k - 1, lam))
        se_k = _batch_se(ind)
        zk = (g - p) / se_k if se_k > 0 else 0.0
        events.append(
            {
                "k": k,
                "gibbs": g,
                "poisson": p,
                "z_score": zk,
                "violated": bool(g - p > 3 * se_k),
            }
        )
    return {
        "gibbs_mean": gibbs_mean,
        "poisson_mean": lam,
        "std_error": se,
        "z_score": z,
        "violated": bool(gibbs_mean - lam > 3 * se),
        "increasing_events": events,
        "samples": int(samples),
        "seed": rng.seed,
    }


def boundary_influence_probe(model, sizes, gamma_dense, samples: int,
                             rng: RngState, dim: int = 1,
                             settings: ChainSettings | None = None,
                             bootstrap: int = 200) -> list[dict]:
    """How far a dense exterior boundary influences interior counts.

    For each box side n, estimates the total-variation distance between the
    count laws of the central half-box under empty and dense boundaries, from
    ``samples`` retained sweeps each, with an iid bootstrap over retained
    sweeps for error bars (optimistic under autocorrelation; the probe is
    qualitative by design). ``gamma_dense(n, rng)`` must return boundary
    points in the shell around the side-n box.
    """
    R = model.interaction_range
    results = []
    for n in sizes:
        if n <= 2.0 * R:
            raise BoxTooSmall(f"box side {n} must exceed twice the range {R}")
        region = Box(dim, float(n))
        half = Box(dim, float(n) / 2.0)
        if settings is None:
            run_settings = ChainSettings(sweeps=int(math.ceil(samples / 0.8)))
        else:
            run_settings = settings
        c_empty = run_count_chain(
            model, region, None, run_settings, rng, count_region=half
        )[:samples]
        dense = gamma_dense(float(n), rng)
        c_dense = run_count_chain(
            model, region, dense, run_settings, rng, count_region=half
        )[:samples]
        kmax = int(max(c_empty.max(initial=0), c_dense.max(initial=0)))
        tv = tv_distance(
            empirical_count_pmf(c_empty, kmax), empirical_count_pmf(c_dense, kmax)
        )
        boots = np.empty(bootstrap)
        for b in range(bootstrap):
            r0 = rng.gen.integers(0, samples, samples)
            r1 = rng.gen.integers(0, samples, samples)
            boots[b] = tv_distance(
                empirical_count_pmf(c_empty[r0], kmax),
                empirical_count_pmf(c_dense[r1], kmax),
            )
        results.append(
            {
                "n": float(n),
                "tv": float(tv),
                "tv_err": float(boots.std(ddof=1)),
                "samples": int(samples),
                "seed": rng.seed,
            }
        )
    return results


# ---------------------------------------------------------------------------
# CSV plumbing
# ---------------------------------------------------------------------------


def configuration_to_csv(config: Configuration, path) -> None:
    """One point per row, columns x1..xd, full float round-trip precision."""
    header = ",".join(f"x{c + 1}" for c in range(config.box.dim))
    np.savetxt(
        path, config.points, fmt="%.17g", delimiter=",", header=header,
        comments="",
    )


def configuration_from_csv(path, box: Box) -> Configuration:
    with open(path) as fh:
        body = fh.read().splitlines()[1:]
    if not body:
        return Configuration.empty(box)
    pts = np.array([[float(v) for v in line.split(",")] for line in body])
    return Configuration(pts.reshape(-1, box.dim), box)
