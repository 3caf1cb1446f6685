"""Ground-energy curves of -Delta + g*V and their inverses.

The central objects are the map g -> lambda_min(-Delta + g V) on a box
large enough that the wall no longer matters, its positive branch
E_minus(g) = -lambda_min (strictly increasing past the binding onset),
and the inverse g(E) obtained by monotone bisection.  Weighted
combinations of shifted copies of the same site potential reuse the whole
machinery through an explicitly assembled combination field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import (
    BelowOnset,
    ConfigError,
    HypothesisUnmet,
    NoConvergence,
    NotInDq,
)
from .hamiltonian import build_hamiltonian, count_below, smallest_eigenpair
from .pointproc import Box, Configuration
from .potential import GridSpec, SingleSitePotential, assemble_field, \
    default_cutoff

_SIZE_REL = 1e-3
_MAX_NODES = 200_000
_EIG_TOL = 1e-9


# ---------------------------------------------------------------------------
# combinations of shifted copies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WellCombination:
    """Convex weights and distinct shifts for sum_j c_j V(x - x_j)."""

    weights: tuple
    shifts: tuple

    def __post_init__(self):
        weights = tuple(float(c) for c in self.weights)
        shifts = tuple(tuple(float(v) for v in s) for s in self.shifts)
        if not weights:
            raise ConfigError("a combination needs at least one term")
        if len(weights) != len(shifts):
            raise ConfigError("one shift per weight required")
        if any(c <= 0 for c in weights):
            raise ConfigError("combination weights must be positive")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ConfigError("combination weights must sum to one")
        dims = {len(s) for s in shifts}
        if len(dims) != 1:
            raise ConfigError("shifts disagree on dimension")
        if len(set(shifts)) != len(shifts):
            raise ConfigError("combination shifts must be pairwise distinct")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "shifts", shifts)

    @property
    def q(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return len(self.shifts[0])


def _centered_combination(dim: int) -> WellCombination:
    return WellCombination((1.0,), ((0.0,) * dim,))


def _resolve_dim(V: SingleSitePotential, comb, grid) -> int:
    if grid is not None:
        return grid.dim
    if comb is not None:
        return comb.dim
    if V.dim is not None:
        return V.dim
    raise ConfigError("cannot infer the dimension; pass a grid or shifts")


def _combination_field(V: SingleSitePotential, comb: WellCombination,
                       grid: GridSpec) -> np.ndarray:
    """Weighted sum of shifted copies of the site field.

    A single unit-weight term returns the plain site field unchanged, so
    the trivial combination follows bit for bit the same arithmetic as a
    direct assembly.
    """
    total = None
    for c_j, x_j in zip(comb.weights, comb.shifts):
        cfg = Configuration(np.array([x_j], dtype=float), grid.box)
        part = assemble_field(V, cfg, grid)
        if c_j != 1.0:
            part = c_j * part
        total = part if total is None else total + part
    return total


def _build(grid: GridSpec, base_field: np.ndarray, g: float):
    scaled = base_field if g == 1.0 else g * base_field
    return build_hamiltonian(grid, scaled.reshape(grid.shape))


def _ground_value(grid: GridSpec, base_field: np.ndarray, g: float) -> float:
    return smallest_eigenpair(_build(grid, base_field, g),
                              tol=_EIG_TOL).value


def _strict_count(H, shift: float) -> int:
    # count_below treats eigenvalues within 1e-12 * scale above the shift
    # as ties and counts them; at extreme couplings that window grows with
    # the matrix scale until free modes near zero fall into it.  Querying
    # one window lower keeps the predicate strict at every scale.
    return count_below(H, shift - 2e-12 * H.scale).count


def _binds(grid: GridSpec, base_field: np.ndarray, g: float) -> bool:
    """Any eigenvalue strictly below zero, decided by one inertia count."""
    return _strict_count(_build(grid, base_field, g), 0.0) >= 1


def _reaches(grid: GridSpec, base_field: np.ndarray, g: float,
             E: float) -> bool:
    """E_minus(g) >= E, decided by one inertia count at -E."""
    return _strict_count(_build(grid, base_field, g), -E) >= 1


# ---------------------------------------------------------------------------
# box sizing
# ---------------------------------------------------------------------------


def _site_extent(V: SingleSitePotential) -> float:
    reach = V.compact_reach()
    if not math.isfinite(reach):
        # smooth unbounded-support wells decay at unit rate
        reach = 20.0
    if V.tail is not None:
        reach = max(reach, default_cutoff(V))
    return reach


def _combination_extent(V, comb: WellCombination) -> float:
    site = _site_extent(V)
    return max(math.hypot(*s) + site for s in comb.shifts)


def _dirichlet_grid(dim: int, side: float, h: float) -> GridSpec:
    return GridSpec(Box(dim, side, center=(0.0,) * dim), h=h)


def _round_side(side: float, h: float) -> float:
    # an even number of cells keeps a node at the origin
    return 2.0 * h * math.ceil(side / (2.0 * h) - 1e-9)


def auto_grid(V: SingleSitePotential, g: float, h: float,
              comb: WellCombination | None = None, min_side: float = 0.0,
              rel: float = _SIZE_REL,
              max_nodes: int = _MAX_NODES) -> GridSpec:
    """Dirichlet grid large enough that doubling the box moves the ground
    energy by less than ``rel`` relative.

    Starts at ten well diameters and doubles.  Raises NotInDq when the
    ground energy never turns negative within the node budget (the
    potential does not bind at this coupling), NoConvergence when it binds
    but refuses to stabilize.
    """
    dim = _resolve_dim(V, comb, None)
    if comb is None:
        comb = _centered_combination(dim)
    if g < 0:
        raise ConfigError("the coupling must be nonnegative")
    extent = _combination_extent(V, comb)
    side = max(20.0 * extent, 20.0 * h, 1.0, min_side)
    side = _round_side(side, h)
    grid = _dirichlet_grid(dim, side, h)
    base = _combination_field(V, comb, grid)
    # the eigenpair is only solved once something is bound; unbound
    # operators have flat spectra where shift-invert earns nothing
    e_prev = _ground_value(grid, base, g) if _binds(grid, base, g) else None
    bound_seen = e_prev is not None
    while True:
        side *= 2.0
        if (side / h) ** dim > max_nodes:
            if bound_seen:
                raise NoConvergence(
                    f"box doubling did not stabilize the ground energy "
                    f"within {max_nodes} nodes (last {e_prev})"
                )
            raise NotInDq(
                f"no negative ground energy at coupling {g} up to box "
                f"side {side / 2.0}"
            )
        grid = _dirichlet_grid(dim, side, h)
        base = _combination_field(V, comb, grid)
        if not _binds(grid, base, g):
            e_prev = None
            continue
        bound_seen = True
        e_next = _ground_value(grid, base, g)
        if e_prev is not None and abs(e_next - e_prev) <= rel * abs(e_next):
            return grid
        e_prev = e_next


# ---------------------------------------------------------------------------
# ground energies
# ---------------------------------------------------------------------------


def combined_ground_energy(V: SingleSitePotential, comb: WellCombination,
                           g: float, grid: GridSpec) -> float:
    """Lowest eigenvalue of -Delta + g * sum_j c_j V(. - x_j) on the grid."""
    if g < 0:
        raise ConfigError("the coupling must be nonnegative")
    return _ground_value(grid, _combination_field(V, comb, grid), g)


def ground_energy(V: SingleSitePotential, g: float,
                  grid: GridSpec) -> float:
    """Lowest eigenvalue of -Delta + g V on the grid (V centered)."""
    return combined_ground_energy(
        V, _centered_combination(grid.dim), g, grid
    )


# ---------------------------------------------------------------------------
# the sampled curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GCurve:
    """Sampled pairs (g, E_minus(g)) on one fixed grid.

    E_minus = -lambda_min; it is negative below the binding onset (the
    Dirichlet kinetic floor) and strictly increasing throughout, positive
    past the recorded onset.  The onset is detected from the samples,
    never assumed.
    """

    g_values: np.ndarray
    e_minus: np.ndarray
    h: float
    box_side: float
    onset_index: int | None = dataclass_field(init=False, default=None)

    def __post_init__(self):
        gs = np.asarray(self.g_values, dtype=float)
        es = np.asarray(self.e_minus, dtype=float)
        if gs.ndim != 1 or gs.shape != es.shape or gs.size < 2:
            raise ConfigError("a curve needs matched 1d samples, two or more")
        if not np.all(np.diff(gs) > 0):
            raise ConfigError("curve couplings must increase strictly")
        if not np.all(np.diff(es) > 0):
            raise HypothesisUnmet(
                "gcurve-monotone",
                "E_minus(g) is not strictly increasing on the samples",
            )
        object.__setattr__(self, "g_values", gs)
        object.__setattr__(self, "e_minus", es)
        positive = np.nonzero(es > 0)[0]
        onset = int(positive[0]) if positive.size else None
        object.__setattr__(self, "onset_index", onset)

    def onset_g(self) -> float | None:
        """First sampled coupling with positive E_minus, if any."""
        if self.onset_index is None:
            return None
        return float(self.g_values[self.onset_index])

    def e_at(self, g: float) -> float:
        """Linear interpolation of E_minus within the sampled range."""
        gs = self.g_values
        if not gs[0] <= g <= gs[-1]:
            raise ConfigError(f"coupling {g} outside sampled range")
        return float(np.interp(g, gs, self.e_minus))

    def g_at(self, E: float) -> float:
        """Monotone inverse on the positive branch of the samples."""
        if self.onset_index is None:
            raise BelowOnset("the curve never crosses zero on its samples")
        es = self.e_minus[self.onset_index:]
        gs = self.g_values[self.onset_index:]
        if E <= 0 or E < es[0]:
            raise BelowOnset(
                f"energy {E} below the first positive sample {es[0]}"
            )
        if E > es[-1]:
            raise ConfigError(f"energy {E} above the sampled range")
        return float(np.interp(E, es, gs))


def sample_curve(V: SingleSitePotential, g_values, h: float,
                 comb: WellCombination | None = None,
                 grid: GridSpec | None = None) -> GCurve:
    """Solve the ground energy across couplings on one shared grid.

    Without an explicit grid the box is first auto-sized at the largest
    coupling (which must bind), then regrown for the shallowest sample
    that binds, where the state is widest; growing the box can let an
    even shallower sample bind, so the regrowth repeats until the
    shallowest binding sample stops changing.
    """
    gs = np.asarray(list(g_values), dtype=float)
    if gs.ndim != 1 or gs.size < 2 or not np.all(np.diff(gs) > 0):
        raise ConfigError("pass two or more strictly increasing couplings")
    if gs[0] < 0:
        raise ConfigError("couplings must be nonnegative")
    dim = _resolve_dim(V, comb, grid)
    if comb is None:
        comb = _centered_combination(dim)
    sized_here = grid is None
    if grid is None:
        grid = auto_grid(V, float(gs[-1]), h, comb=comb)
    base = _combination_field(V, comb, grid)
    energies = np.array([_ground_value(grid, base, g) for g in gs])
    if sized_here:
        certified = math.inf
        while True:
            binding = np.nonzero(energies < 0.0)[0]
            if binding.size == 0:
                break
            g_shallow = float(gs[binding[0]])
            if g_shallow >= certified:
                break
            grid = auto_grid(
                V, g_shallow, grid.h, comb=comb, min_side=grid.box.side
            )
            certified = g_shallow
            base = _combination_field(V, comb, grid)
            energies = np.array(
                [_ground_value(grid, base, g) for g in gs]
            )
    return GCurve(gs, -energies, h=grid.h, box_side=grid.box.side)


def curve_to_csv(curve: GCurve, path) -> None:
    """Write the sampled curve as g,E_minus,h,L rows, full precision."""
    lines = ["g,E_minus,h,L"]
    for g, e in zip(curve.g_values, curve.e_minus):
        lines.append(
            "%.17g,%.17g,%.17g,%.17g" % (g, e, curve.h, curve.box_side)
        )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------


def _invert(V, comb, E, tol, h, grid):
    """Bracket and bisect on the predicate E_minus(g) >= E (one inertia
    count per step), then certify the answer with true eigenvalue solves.

    Eigenpairs are only computed at couplings already known to bind, where
    shift-invert is fast; unbound flat spectra are never handed to it.
    """
    if E <= 0:
        raise BelowOnset("only positive energies sit above the onset")
    if tol <= 0:
        raise ConfigError("tolerance must be positive")
    pinned = grid is not None
    if grid is None:
        if h is None:
            h = min(0.05, 0.2 / math.sqrt(E))
        dim = _resolve_dim(V, comb, None)
        extent = _combination_extent(V, comb)
        side = _round_side(max(20.0 * extent, 20.0 * h, 1.0), h)
        grid = _dirichlet_grid(dim, side, h)
    base = _combination_field(V, comb, grid)

    def rebracket(g_hi_start):
        g_hi = g_hi_start
        for _ in range(60):
            if _reaches(grid, base, g_hi, E):
                break
            g_hi *= 2.0
        else:
            if not _binds(grid, base, g_hi):
                raise NotInDq(
                    f"no binding up to coupling {g_hi}: the combination "
                    f"never reaches a negative ground energy"
                )
            raise NoConvergence(
                f"E_minus stalled below the target {E} up to "
                f"coupling {g_hi}"
            )
        g_lo = g_hi
        while _reaches(grid, base, g_lo, E):
            g_lo /= 2.0
            if g_lo < 1e-12:
                raise NoConvergence("bracket collapse while descending")
        return g_lo, g_hi

    g_lo, g_hi = rebracket(1.0)
    for _ in range(3):
        if not pinned:
            # size the box at the first reaching coupling (bound for sure);
            # the solution is verified on its own below
            grid = auto_grid(
                V, g_hi, grid.h, comb=comb, min_side=grid.box.side
            )
            base = _combination_field(V, comb, grid)
            g_lo, g_hi = rebracket(g_lo)
        # adaptive predicate bisection: tighten the coupling bracket, probe
        # the endpoint energies, tighten further if neither qualifies
        width = 0.25 * tol
        answer = None
        for _ in range(12):
            steps = 0
            while g_hi - g_lo > width * g_hi and steps < 200:
                g_mid = 0.5 * (g_lo + g_hi)
                if _reaches(grid, base, g_mid, E):
                    g_hi = g_mid
                else:
                    g_lo = g_mid
                steps += 1
            e_hi_val = -_ground_value(grid, base, g_hi)
            if abs(e_hi_val - E) <= tol * E:
                answer = (g_hi, e_hi_val)
                break
            e_lo_val = -_ground_value(grid, base, g_lo)
            if abs(e_lo_val - E) <= tol * E:
                answer = (g_lo, e_lo_val)
                break
            if g_hi - g_lo <= 1e-14 * g_hi:
                raise NoConvergence(
                    f"bisection exhausted the grid resolution near {g_hi}"
                )
            width *= 0.25
        if answer is None:
            raise NoConvergence("bisection failed to meet the tolerance")
        g_ans, e_ans = answer
        if pinned:
            return g_ans
        # one confinement check at the solution itself; the sizing above
        # ran at a nearby coupling, not necessarily this one
        grown = _dirichlet_grid(grid.dim, grid.box.side * 2.0, grid.h)
        e_big = -_ground_value(
            grown, _combination_field(V, comb, grown), g_ans
        )
        if abs(e_big - e_ans) <= _SIZE_REL * abs(e_big):
            return g_ans
        grid = grown
        base = _combination_field(V, comb, grid)
    raise NoConvergence("the box kept drifting across refinement rounds")


def g_of_E(V: SingleSitePotential, E: float, tol: float = 1e-3,
           h: float | None = None, grid: GridSpec | None = None) -> float:
    """Coupling with |E_minus(g) - E| <= tol * E, by monotone bisection."""
    dim = _resolve_dim(V, None, grid)
    return _invert(V, _centered_combination(dim), E, tol, h, grid)


def combined_g_of_E(V: SingleSitePotential, comb: WellCombination,
                    E: float, tol: float = 1e-3, h: float | None = None,
                    grid: GridSpec | None = None) -> float:
    """Inverse of the combined ground energy, same contract as g_of_E."""
    return _invert(V, comb, E, tol, h, grid)


# ---------------------------------------------------------------------------
# ground-state decay diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecayReport:
    """Per-probe least-squares fits of log|v| against sqrt(g)."""

    probes: tuple
    g_values: np.ndarray
    log_amplitudes: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    r_squared: np.ndarray
    h: float
    box_side: float


def _nearest_node(grid: GridSpec, point) -> int:
    idx = []
    for c in range(grid.dim):
        nodes = grid.axis_nodes(c)
        idx.append(int(np.argmin(np.abs(nodes - point[c]))))
    return int(np.ravel_multi_index(tuple(idx), grid.shape))


def decay_profile(V: SingleSitePotential, g_values, probes, h: float,
                  grid: GridSpec | None = None) -> DecayReport:
    """Ground-state amplitude decay at fixed probes as g grows.

    Fits log|v(probe)| against sqrt(g) per probe and reports slope,
    intercept, and R^2.  Probes must sit strictly outside the compact
    support of the potential; the box is sized at the smallest coupling
    (the widest state) and keeps the probes away from the wall.
    """
    gs = np.asarray(list(g_values), dtype=float)
    if gs.size < 3 or not np.all(np.diff(gs) > 0) or gs[0] <= 0:
        raise ConfigError(
            "pass three or more strictly increasing positive couplings"
        )
    probe_list = []
    for p in probes:
        if np.isscalar(p):
            probe_list.append((float(p),))
        else:
            probe_list.append(tuple(float(v) for v in p))
    if not probe_list:
        raise ConfigError("pass at least one probe point")
    dim = len(probe_list[0])
    if any(len(p) != dim for p in probe_list):
        raise ConfigError("probes disagree on dimension")
    V.check_dimension(dim)
    support = V.compact_reach()
    if not math.isfinite(support):
        raise ConfigError(
            "decay probes need a compactly supported potential"
        )
    for p in probe_list:
        if math.hypot(*p) <= support + h:
            raise ConfigError(
                f"probe {p} sits inside or touching the well support"
            )
    if grid is None:
        far = max(math.hypot(*p) for p in probe_list)
        grid = auto_grid(
            V, float(gs[0]), h,
            min_side=2.0 * (far + max(1.0, 0.25 * far)),
        )
    base = _combination_field(V, _centered_combination(grid.dim), grid)
    nodes = [_nearest_node(grid, p) for p in probe_list]
    logs = np.empty((len(probe_list), gs.size))
    for col, g in enumerate(gs):
        H = build_hamiltonian(grid, (g * base).reshape(grid.shape))
        vec = np.abs(smallest_eigenpair(H, tol=_EIG_TOL).vector)
        for row, node in enumerate(nodes):
            logs[row, col] = math.log(max(float(vec[node]), 1e-300))
    x = np.sqrt(gs)
    slopes = np.empty(len(probe_list))
    intercepts = np.empty(len(probe_list))
    r2 = np.empty(len(probe_list))
    for row in range(len(probe_list)):
        coef = np.polyfit(x, logs[row], 1)
        fit = np.polyval(coef, x)
        ss_res = float(((logs[row] - fit) ** 2).sum())
        ss_tot = float(((logs[row] - logs[row].mean()) ** 2).sum())
        slopes[row] = coef[0]
        intercepts[row] = coef[1]
        r2[row] = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return DecayReport(
        probes=tuple(probe_list), g_values=gs, log_amplitudes=logs,
        slopes=slopes, intercepts=intercepts, r_squared=r2,
        h=grid.h, box_side=grid.box.side,
    )
