"""Level sets of the pair interaction, packing numbers, well relations,
and the predicted tail constants.

Everything here is combinatorial or closed-form: level-set membership of
radial step potentials, exact packing counts on intervals, certified
grid lower bounds in higher dimension, the three relations between wells
(contact, deep centers, deep supports), exact maximum-weight independent
sets over at most twenty wells, and the edge bound for graphs of bounded
independence number.  predicted_constants ties these together into the
slope each tail regime predicts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._kernels import USE_NUMBA, turan_scan, turan_scan_numpy
from .errors import (
    ConfigError,
    GridTooLarge,
    HypothesisUnmet,
    TooManyWells,
)
from .pointproc import (
    AreaModel,
    Box,
    PairwiseModel,
    PoissonModel,
    _RadialStep,
)
from .potential import SingleSitePotential

_MAX_CANDIDATES = 10_000
_MAX_WELLS = 20
_BOUNDARY_REL = 1e-9
_LEVEL_GRID_POINTS = 16


# ---------------------------------------------------------------------------
# level sets
# ---------------------------------------------------------------------------


def level_member(phi: _RadialStep, a: float, x) -> bool:
    """Whether x lies in the level set {phi >= a} with the origin adjoined."""
    if not a > 0:
        raise ConfigError("the level must be positive")
    xa = np.asarray(x, dtype=float)
    if np.all(xa == 0.0):
        return True
    return bool(phi.radial(float(np.linalg.norm(xa))) >= a)


def _phi_min_on(phi: _RadialStep, lo: float, hi: float) -> float:
    """Exact minimum of the radial step over the radius interval [lo, hi]."""
    radii = np.asarray(phi.radii, dtype=float)
    vals = np.asarray(phi.values, dtype=float)
    if radii.size == 0:
        return 0.0
    lowers = np.concatenate(([-1.0], radii[:-1]))
    hit = (lowers < hi) & (radii >= lo)
    m = float(vals[hit].min()) if hit.any() else math.inf
    if hi > radii[-1]:
        m = min(m, 0.0)
    return m


def _interval_deep(phi: _RadialStep, a: float, lo: float, hi: float) -> bool:
    """Whether every radius in [lo, hi] sits strictly inside {phi > a}.

    The test dilates the interval by a relative margin first; when the
    dilated interval fails but the shrunk one passes, the interval ends
    within that margin of a level boundary and the question is ill-posed,
    so HypothesisUnmet is raised instead of guessing a side.
    """
    pad = _BOUNDARY_REL * max(phi.support_radius, hi)
    if _phi_min_on(phi, max(0.0, lo - pad), hi + pad) > a:
        return True
    # shrink toward the midpoint so degenerate intervals stay put instead
    # of sliding past their own endpoint
    mid = 0.5 * (lo + hi)
    if _phi_min_on(phi, min(lo + pad, mid), max(hi - pad, mid)) > a:
        raise HypothesisUnmet(
            "level-boundary",
            f"radii [{lo}, {hi}] end on the level-{a} boundary of the "
            f"interaction; move the wells off the boundary",
        )
    return False


def interior_member(phi: _RadialStep, a: float, x) -> bool:
    """Whether x lies strictly inside {phi >= a} union the origin.

    Boundary points within a 1e-9 relative margin raise HypothesisUnmet.
    """
    if not a > 0:
        raise ConfigError("the level must be positive")
    xa = np.asarray(x, dtype=float)
    s = float(np.linalg.norm(xa))
    return _interval_deep(phi, a, s, s)


@dataclass(frozen=True)
class LevelSet:
    """The set where the pair interaction meets a level, origin adjoined."""

    phi: _RadialStep
    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError("the level must be positive")

    def member(self, x) -> bool:
        return level_member(self.phi, self.a, x)

    def interior(self, x) -> bool:
        return interior_member(self.phi, self.a, x)


def _ball_level_radius(phi: _RadialStep, a: float) -> float | None:
    """Radius R with {phi >= a} = [0, R], or None when the level set is
    not a single ball (a hole below the level splits it)."""
    radii = np.asarray(phi.radii, dtype=float)
    vals = np.asarray(phi.values, dtype=float)
    ge = vals >= a
    if not ge.any():
        return 0.0
    if not ge[0]:
        return None
    k = 0
    while k < ge.size and ge[k]:
        k += 1
    if ge[k:].any():
        return None
    return float(radii[k - 1])


# ---------------------------------------------------------------------------
# packing numbers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PackingBound:
    """Largest point count with pairwise differences outside the level set.

    ``exact`` marks the closed-form interval case; grid values are
    certified lower bounds only.
    """

    value: int
    exact: bool


def _max_clique(adj: list, n: int) -> tuple:
    """Exact maximum clique by branch and bound with a greedy coloring
    bound; adjacency as integer bitmasks."""
    best_size = 0
    best_set = 0

    def expand(r_mask, r_size, cand):
        nonlocal best_size, best_set
        if cand == 0:
            if r_size > best_size:
                best_size, best_set = r_size, r_mask
            return
        order = []
        bounds = []
        color = 0
        work = cand
        while work:
            color += 1
            avail = work
            while avail:
                v = (avail & -avail).bit_length() - 1
                order.append(v)
                bounds.append(color)
                avail &= ~adj[v]
                avail &= ~(1 << v)
                work &= ~(1 << v)
        for i in range(len(order) - 1, -1, -1):
            if r_size + bounds[i] <= best_size:
                return
            v = order[i]
            expand(r_mask | (1 << v), r_size + 1, cand & adj[v])
            cand &= ~(1 << v)

    expand(0, 0, (1 << n) - 1)
    return best_size, best_set


def _independent_count(points: np.ndarray, phi: _RadialStep,
                       a: float) -> int:
    """Exact maximum number of points with pairwise differences outside
    the level set, as a maximum clique of the compatibility graph."""
    n = points.shape[0]
    if n == 0:
        return 0
    full = (1 << n) - 1
    compat = [0] * n
    for i in range(n):
        dist = np.linalg.norm(points[i + 1:] - points[i], axis=1)
        ok = np.atleast_1d(phi.radial(dist) < a)
        for off in np.nonzero(ok)[0]:
            j = i + 1 + int(off)
            compat[i] |= 1 << j
            compat[j] |= 1 << i
    size, _ = _max_clique(compat, n)
    return size


def _grid_candidates(box: Box, delta: float, dilation: float) -> np.ndarray:
    span = box.side + 2.0 * dilation
    # linspace keeps the endpoints exact and halving delta nests the grids
    m = int(math.ceil(span / delta - 1e-9)) + 1
    axes = []
    for c in range(box.dim):
        lo = box.center[c] - 0.5 * box.side - dilation
        hi = box.center[c] + 0.5 * box.side + dilation
        axes.append(np.linspace(lo, hi, m))
    count = m ** box.dim
    if count > _MAX_CANDIDATES:
        raise GridTooLarge(
            f"{count} candidate points exceed the {_MAX_CANDIDATES} cap; "
            f"coarsen delta"
        )
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    if dilation > 0.0:
        centered = np.abs(pts - np.asarray(box.center)) - 0.5 * box.side
        outside = np.linalg.norm(np.maximum(centered, 0.0), axis=1)
        pts = pts[outside <= dilation * (1.0 + 1e-12)]
    return pts


def _interval_packing(length: float, ball_radius: float) -> int:
    ratio = length / ball_radius
    nearest = round(ratio)
    if nearest >= 1 and abs(ratio - nearest) <= 1e-12 * max(1.0, ratio):
        return int(nearest)
    return int(math.floor(ratio)) + 1


def packing_number(box: Box, phi: _RadialStep, a: float, delta: float,
                   dilation: float = 0.0) -> PackingBound:
    """Largest number of points in the box (Minkowski-grown by ``dilation``)
    whose pairwise differences all avoid the level set.

    One dimension with a ball-shaped level set has the closed form
    floor(length / R) + 1, one less at exact divisibility; anywhere else
    the count is the exact maximum independent set over a delta-grid of
    candidates, a certified lower bound for the continuum value.
    """
    if not a > 0:
        raise ConfigError("the level must be positive")
    if not delta > 0:
        raise ConfigError("the grid resolution must be positive")
    if dilation < 0:
        raise ConfigError("the dilation radius cannot be negative")
    ball = _ball_level_radius(phi, a)
    if ball is not None and ball == 0.0:
        raise ConfigError(
            "the level exceeds the interaction everywhere; the packing "
            "count is unbounded"
        )
    if box.dim == 1 and ball is not None:
        length = box.side + 2.0 * dilation
        return PackingBound(_interval_packing(length, ball), exact=True)
    pts = _grid_candidates(box, delta, dilation)
    return PackingBound(_independent_count(pts, phi, a), exact=False)


# ---------------------------------------------------------------------------
# well supports and relations
# ---------------------------------------------------------------------------


def _negative_support(V: SingleSitePotential) -> list:
    """Centers and radii of the attractive wells' supports."""
    return [(np.asarray(w.center, dtype=float),
             float(w.profile.support_radius)) for w in V.wells]


def t_a_is_one(V: SingleSitePotential, phi: _RadialStep, a: float) -> bool:
    """Whether every difference of two points in the attractive support
    lies strictly inside the level set.

    When true, no two points of the support are compatible, the packing
    count of the support region is one, and the level ratio supremum is
    exactly the interaction floor.
    """
    if not a > 0:
        raise ConfigError("the level must be positive")
    balls = _negative_support(V)
    for i in range(len(balls)):
        ci, ri = balls[i]
        for j in range(i, len(balls)):
            cj, rj = balls[j]
            gap = float(np.linalg.norm(ci - cj))
            hi = gap + ri + rj
            lo = max(0.0, gap - ri - rj)
            if not _interval_deep(phi, a, lo, hi):
                return False
    return True


@dataclass(frozen=True)
class IndexSets:
    """The three symmetric relations between wells at a given level.

    contact: center differences inside the interaction support.
    support_deep: every difference of the two supports strictly inside
    the level set (implies center_deep).
    center_deep: the center difference strictly inside the level set.
    """

    contact: frozenset
    support_deep: frozenset
    center_deep: frozenset


def _positive_support_radius(phi: _RadialStep) -> float:
    radii = np.asarray(phi.radii, dtype=float)
    vals = np.asarray(phi.values, dtype=float)
    pos = vals > 0
    return float(radii[pos].max()) if pos.any() else 0.0


def build_index_sets(centers, radii, phi: _RadialStep,
                     a: float) -> IndexSets:
    """The contact / deep-support / deep-center relations over the wells.

    Center pairs landing within 1e-9 relative of the support boundary
    raise HypothesisUnmet; the constants are only defined away from it.
    """
    if not a > 0:
        raise ConfigError("the level must be positive")
    cs = [np.asarray(c, dtype=float) for c in centers]
    rs = [float(r) for r in radii]
    if len(cs) != len(rs):
        raise ConfigError("one support radius per center required")
    if any(r < 0 for r in rs):
        raise ConfigError("support radii cannot be negative")
    reach = _positive_support_radius(phi)
    tie = _BOUNDARY_REL * max(reach, 1e-300)
    contact = set()
    support_deep = set()
    center_deep = set()
    for i in range(len(cs)):
        for j in range(i, len(cs)):
            gap = float(np.linalg.norm(cs[i] - cs[j]))
            if i != j and abs(gap - reach) <= tie:
                raise HypothesisUnmet(
                    "contact-boundary",
                    f"wells {i} and {j} sit on the interaction support "
                    f"boundary at distance {gap}",
                )
            if gap <= reach:
                contact.update([(i, j), (j, i)])
            if _interval_deep(phi, a, gap, gap):
                center_deep.update([(i, j), (j, i)])
            hi = gap + rs[i] + rs[j]
            lo = max(0.0, gap - rs[i] - rs[j])
            if _interval_deep(phi, a, lo, hi):
                support_deep.update([(i, j), (j, i)])
    return IndexSets(
        contact=frozenset(contact),
        support_deep=frozenset(support_deep),
        center_deep=frozenset(center_deep),
    )


# ---------------------------------------------------------------------------
# weighted independent sets over wells
# ---------------------------------------------------------------------------


def _offdiag_pairs(relation) -> frozenset:
    return frozenset(
        (min(i, j), max(i, j)) for i, j in relation if i != j
    )


@dataclass(frozen=True)
class WellGraph:
    """Wells with weights and a symmetric conflict relation (no loops)."""

    centers: tuple
    weights: tuple
    edges: frozenset

    def __post_init__(self):
        centers = tuple(tuple(float(v) for v in np.atleast_1d(c))
                        for c in self.centers)
        weights = tuple(float(b) for b in self.weights)
        q = len(weights)
        if q == 0:
            raise ConfigError("a well graph needs at least one well")
        if len(centers) != q:
            raise ConfigError("one center per weight required")
        if q > _MAX_WELLS:
            raise TooManyWells(
                f"{q} wells exceed the exact-solver cap of {_MAX_WELLS}"
            )
        if any(b <= 0 for b in weights):
            raise ConfigError("well weights must be positive")
        edges = _offdiag_pairs(self.edges)
        for i, j in edges:
            if not (0 <= i < q and 0 <= j < q):
                raise ConfigError(f"edge ({i}, {j}) indexes outside the wells")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "edges", edges)

    @property
    def q(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class MaxWeightResult:
    """Best admissible subset of wells and its squared-weight sum."""

    value: float
    witness: tuple


def max_indep_weight(graph: WellGraph,
                     relation=None) -> MaxWeightResult:
    """Exact maximum of sum b_i^2 over subsets with no conflicting pair.

    The relation defaults to the graph's own edges; any symmetric pair
    set over the same wells can be substituted.  Exhaustive search with
    a remaining-weight bound; the cap of twenty wells keeps it exact.
    """
    edges = graph.edges if relation is None else _offdiag_pairs(relation)
    q = graph.q
    w2 = [b * b for b in graph.weights]
    adj = [0] * q
    for i, j in edges:
        if not (0 <= i < q and 0 <= j < q):
            raise ConfigError(f"edge ({i}, {j}) indexes outside the wells")
        adj[i] |= 1 << j
        adj[j] |= 1 << i
    best_val = 0.0
    best_set = 0

    def remaining(mask):
        total = 0.0
        while mask:
            v = (mask & -mask).bit_length() - 1
            total += w2[v]
            mask &= mask - 1
        return total

    def rec(avail, val, chosen):
        nonlocal best_val, best_set
        if val + remaining(avail) <= best_val:
            return
        if avail == 0:
            if val > best_val:
                best_val, best_set = val, chosen
            return
        v = (avail & -avail).bit_length() - 1
        bit = 1 << v
        rec(avail & ~adj[v] & ~bit, val + w2[v], chosen | bit)
        rec(avail & ~bit, val, chosen)

    rec((1 << q) - 1, 0.0, 0)
    witness = tuple(i for i in range(q) if best_set >> i & 1)
    return MaxWeightResult(value=best_val, witness=witness)


# ---------------------------------------------------------------------------
# edge bound for bounded independence number
# ---------------------------------------------------------------------------


def turan_min_edges(k, X) -> Fraction:
    """Least edge count of a graph on floor(k) vertices whose independence
    number stays at most X: floor(k) * (floor(k) - X) / (2 X), never
    negative."""
    if not k >= 1:
        raise ConfigError("the vertex count must be at least one")
    if not (X >= 1 and float(X) == math.floor(X)):
        raise ConfigError("the independence bound must be an integer >= 1")
    kk = int(math.floor(k))
    xx = int(X)
    return max(Fraction(kk * (kk - xx), 2 * xx), Fraction(0))


def find_turan_counterexample(n: int) -> int | None:
    """Scan every graph on n <= 7 vertices against the edge bound at its
    exact independence number; the bitmask of the first violator, or None."""
    if not 1 <= n <= 7:
        raise ConfigError("the exhaustive scan covers 1 to 7 vertices")
    scan = turan_scan if USE_NUMBA else turan_scan_numpy
    result = int(scan(n))
    return None if result == -1 else result


# ---------------------------------------------------------------------------
# predicted tail constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantReport:
    """Predicted tail slope for one regime, with the hypothesis trail.

    regressor names the variable the log tail is linear in: g_log_g for
    the interaction-free regime, g_squared for a single small well,
    combined_g_squared for several wells sharing one coupling curve.
    """

    regime: str
    regressor: str
    slope: float
    a0: float | None = None
    level_sup: float | None = None
    indep_weight: float | None = None
    witness: tuple = ()
    checklist: tuple = ()
    notes: tuple = ()

    def __post_init__(self):
        if not (math.isfinite(self.slope) and self.slope < 0):
            raise ConfigError("the predicted slope must be finite negative")
        for name, value in (("a0", self.a0), ("level_sup", self.level_sup),
                            ("indep_weight", self.indep_weight)):
            if value is not None and not (math.isfinite(value)
                                          and value > 0):
                raise ConfigError(f"{name} must be positive finite when set")

    def to_json(self) -> str:
        doc = {
            "regime": self.regime,
            "regressor": self.regressor,
            "slope": self.slope,
            "a0": self.a0,
            "level_sup": self.level_sup,
            "indep_weight": self.indep_weight,
            "witness": list(self.witness),
            "checklist": {name: bool(ok) for name, ok in self.checklist},
            "notes": list(self.notes),
        }
        return json.dumps(doc, sort_keys=True)


def _uniform_core(phi: _RadialStep) -> tuple:
    """Positive floor of the interaction over its whole support, plus the
    support radius; raises when the interaction has holes or blows up."""
    vals = np.asarray(phi.values, dtype=float)
    if vals.size == 0 or not np.all(np.isfinite(vals)) or vals.min() <= 0:
        raise HypothesisUnmet(
            "uniform-core",
            "the pair interaction needs a finite positive floor on its "
            "whole support",
        )
    return float(vals.min()), float(phi.support_radius)


def _level_ratio_sup(V: SingleSitePotential, phi: _RadialStep,
                     a0: float) -> tuple:
    """sup over a geometric level grid of a / (packing count of the
    attractive support region).  Exact in one dimension; grid lower
    bounds on the packing otherwise make the ratio an estimate."""
    balls = _negative_support(V)
    dim = balls[0][0].size
    lo = np.asarray(balls[0][0], dtype=float).copy()
    hi = lo.copy()
    for c, r in balls:
        lo = np.minimum(lo, c - r)
        hi = np.maximum(hi, c + r)
    side = float((hi - lo).max())
    if side == 0.0:
        return a0, True
    region = Box(dim, side, center=tuple((lo + hi) / 2.0))
    best = 0.0
    exact = True
    for k in range(_LEVEL_GRID_POINTS):
        a = a0 * 0.5 ** k
        bound = packing_number(region, phi, a, delta=side / 20.0)
        exact = exact and bound.exact
        best = max(best, a / bound.value)
    return best, exact


def predicted_constants(model, V: SingleSitePotential) -> ConstantReport:
    """Predicted tail slope and its supporting constants for the model.

    Interaction-free models predict slope -1 against g log g.  A pairwise
    interaction with a uniform positive floor a0 predicts -level_sup/2
    against g^2 for a single well (-a0/2 when the well support is small),
    and -a0 / (2 * max admissible sum b_i^2) against the combined-well
    coupling squared for several wells.
    """
    if isinstance(model, PoissonModel):
        return ConstantReport(
            regime="dilute",
            regressor="g_log_g",
            slope=-1.0,
            checklist=(("interaction-free", True),),
            notes=("no interaction: the count tail is the dilute-gas "
                   "large deviation rate",),
        )
    if isinstance(model, AreaModel):
        raise HypothesisUnmet(
            "uniform-core",
            "the area interaction has no pairwise level floor; no slope "
            "prediction is available",
        )
    if not isinstance(model, PairwiseModel):
        raise ConfigError(f"unrecognized model {type(model).__name__}")
    phi = model.phi
    a0, _ = _uniform_core(phi)
    wells = V.wells
    if not wells:
        raise HypothesisUnmet(
            "wells-present",
            "the site potential has no attractive wells; the pairwise "
            "regimes need a negative part",
        )
    a_probe = a0 * (1.0 - 1e-6)
    if len(wells) == 1:
        small = t_a_is_one(V, phi, a_probe)
        if small:
            level_sup, exact = a0, True
        else:
            level_sup, exact = _level_ratio_sup(V, phi, a0)
        notes = ("well support differences stay inside the level set; "
                 "the level ratio supremum is the interaction floor",) \
            if small else \
            ("wide well support: the level ratio supremum runs over a "
             "16-point geometric level grid"
             + ("" if exact else
                " with grid packing lower bounds, so it may overestimate"),)
        b = wells[0].b
        return ConstantReport(
            regime="single-well",
            regressor="g_squared",
            slope=-0.5 * level_sup,
            a0=a0,
            level_sup=level_sup,
            indep_weight=b * b,
            witness=(0,),
            checklist=(("uniform-core", True), ("small-support", small)),
            notes=notes,
        )
    centers = tuple(w.center for w in wells)
    weights = tuple(w.b for w in wells)
    radii = tuple(w.profile.support_radius for w in wells)
    sets = build_index_sets(centers, radii, phi, a_probe)
    graph = WellGraph(centers, weights, sets.contact)
    ref = max_indep_weight(graph)
    support_ok = max_indep_weight(
        graph, relation=sets.support_deep).value == ref.value
    center_ok = max_indep_weight(
        graph, relation=sets.center_deep).value == ref.value
    if not (support_ok and center_ok):
        raise HypothesisUnmet(
            "relation-stability",
            "the maximum admissible weight under the near-floor level "
            "relations disagrees with the contact relation; the "
            "multi-well constant is not defined for this geometry",
        )
    return ConstantReport(
        regime="multi-well",
        regressor="combined_g_squared",
        slope=-a0 / (2.0 * ref.value),
        a0=a0,
        indep_weight=ref.value,
        witness=ref.witness,
        checklist=(
            ("uniform-core", True),
            ("support-relation-stable", support_ok),
            ("center-relation-stable", center_ok),
        ),
        notes=("slope from the largest squared-weight sum over well "
               "subsets with no contacting pair",),
    )
