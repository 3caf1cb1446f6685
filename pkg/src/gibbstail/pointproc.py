"""Boxes, configurations, pair potentials, interaction models, and energies.

Geometry follows the half-open convention: a box of side ``n`` centered at
``c`` contains exactly the points ``x`` with ``c_i - n/2 < x_i <= c_i + n/2``.
Periodic boxes measure distances coordinate-wise by minimal image, which
resolves every interacting pair through at most one image whenever the side
exceeds twice the interaction range (enforced by the periodic energy).

Energies use the grand-canonical convention for pairwise models: with pair
function ``phi >= 0`` and activity ``z``,

    U(omega) = sum over unordered pairs of phi(x - y) - #omega * log z,

so the empty configuration has energy 0 and inserting a point into an
environment gamma costs ``u(x; gamma) = sum_y phi(x - y) - log z >= -log z``.
Hard cores are represented by ordinary ``float('inf')`` values; Boltzmann
weights treat them as ``exp(-inf) == 0``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BoxTooSmall, PointOutsideBox

__all__ = [
    "Box",
    "Configuration",
    "StraussPotential",
    "TablePotential",
    "ZeroPotential",
    "PoissonModel",
    "PairwiseModel",
    "AreaModel",
    "ball_volume",
    "total_energy",
    "local_energy",
    "periodic_energy",
    "conditional_energy",
    "model_to_json",
    "model_from_json",
]

_UNIT_BALL = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}


def ball_volume(dim: int, radius: float) -> float:
    """Volume of a Euclidean ball in dimension 1, 2, or 3."""
    return _UNIT_BALL[dim] * radius**dim


@dataclass(frozen=True)
class Box:
    """Axis-aligned cube, half-open on the lower faces: (c - n/2, c + n/2]."""

    dim: int
    side: float
    center: tuple[float, ...] = ()
    periodic: bool = False

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2, or 3, got {self.dim}")
        if not self.side > 0:
            raise ValueError(f"box side must be positive, got {self.side}")
        center = self.center if self.center else (0.0,) * self.dim
        if len(center) != self.dim:
            raise ValueError("center length does not match dimension")
        object.__setattr__(self, "center", tuple(float(c) for c in center))

    @property
    def volume(self) -> float:
        return self.side**self.dim

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - 0.5 * self.side

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + 0.5 * self.side

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of rows lying in the half-open cube."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts > self.lo) & (pts <= self.hi), axis=1)

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Map points onto the torus representative cell (lo, hi]."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        hi = self.hi
        return hi - np.mod(hi - pts, self.side)

    def min_image(self, diff: np.ndarray) -> np.ndarray:
        """Coordinate-wise minimal-image representative of a difference vector."""
        return diff - self.side * np.round(diff / self.side)

    def scaled(self, side: float) -> "Box":
        """Concentric box with a different side length."""
        return Box(self.dim, side, self.center, self.periodic)

    def with_periodic(self, flag: bool) -> "Box":
        return Box(self.dim, self.side, self.center, flag)


@dataclass(frozen=True)
class Configuration:
    """A finite point set living inside a box."""

    points: np.ndarray
    box: Box

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, self.box.dim)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[1] != self.box.dim:
            raise ValueError(
                f"points must have shape (k, {self.box.dim}), got {pts.shape}"
            )
        if pts.shape[0] and not self.box.contains(pts).all():
            bad = pts[~self.box.contains(pts)][0]
            raise PointOutsideBox(f"point {bad} outside box (side {self.box.side})")
        if pts.shape[0] > 1:
            order = np.lexsort(pts.T[::-1])
            srt = pts[order]
            if np.any(np.all(srt[1:] == srt[:-1], axis=1)):
                raise ValueError("configuration contains coincident points")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_list(cls, coords: Sequence, box: Box) -> "Configuration":
        return cls(np.asarray(coords, dtype=float).reshape(-1, box.dim), box)

    @classmethod
    def empty(cls, box: Box) -> "Configuration":
        return cls(np.empty((0, box.dim)), box)


# ---------------------------------------------------------------------------
# pair potentials
# ---------------------------------------------------------------------------


class _RadialStep:
    """Nonnegative radial step function given by breakpoints.

    ``radial(s) = values[j]`` on the ring ``radii[j-1] < s <= radii[j]`` and 0
    beyond the last breakpoint, matching the closed-ball convention of the
    Strauss indicator.
    """

    radii: np.ndarray
    values: np.ndarray

    @property
    def support_radius(self) -> float:
        return float(self.radii[-1]) if self.radii.size else 0.0

    def radial(self, s):
        s = np.asarray(s, dtype=float)
        if self.radii.size == 0:
            return np.zeros_like(s)
        idx = np.searchsorted(self.radii, s, side="left")
        padded = np.append(self.values, 0.0)
        return padded[np.minimum(idx, len(self.values))]

    def __call__(self, x):
        """Value at a difference vector (radial evaluation of |x|)."""
        x = np.asarray(x, dtype=float)
        return self.radial(np.linalg.norm(np.atleast_2d(x), axis=1).squeeze())


@dataclass(frozen=True)
class StraussPotential(_RadialStep):
    """phi(x) = a0 on the closed ball |x| <= r, zero outside; a0 may be inf."""

    a0: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("Strauss range r must be positive")
        if not self.a0 >= 0:
            raise ValueError("Strauss amplitude a0 must be nonnegative")

    @property
    def radii(self) -> np.ndarray:
        return np.array([self.r])

    @property
    def values(self) -> np.ndarray:
        return np.array([self.a0])


@dataclass(frozen=True)
class TablePotential(_RadialStep):
    """Step potential from tabulated breakpoints; values may include inf."""

    breakpoints: tuple[float, ...]
    levels: tuple[float, ...]

    def __post_init__(self):
        radii = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.levels, dtype=float)
        if radii.size == 0 or radii.size != vals.size:
            raise ValueError("breakpoints and levels must be equal-length, nonempty")
        if np.any(np.diff(radii) <= 0) or radii[0] <= 0:
            raise ValueError("breakpoints must be positive and strictly increasing")
        if np.any(vals < 0):
            raise ValueError("pair potential must be nonnegative")
        object.__setattr__(self, "breakpoints", tuple(float(r) for r in radii))
        object.__setattr__(self, "levels", tuple(float(v) for v in vals))

    @property
    def radii(self) -> np.ndarray:
        return np.asarray(self.breakpoints)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.levels)


@dataclass(frozen=True)
class ZeroPotential(_RadialStep):
    """phi identically zero (free pairwise model)."""

    @property
    def radii(self) -> np.ndarray:
        return np.empty(0)

    @property
    def values(self) -> np.ndarray:
        return np.empty(0)


# ---------------------------------------------------------------------------
# interaction models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoissonModel:
    """No interaction: U(omega) = -#omega * log(mu)."""

    mu: float
    mu_d_bound: float | None = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("Poisson intensity must be positive")

    @property
    def interaction_range(self) -> float:
        return 0.0

    def stability_floor(self, dim: int) -> float:
        return -math.log(self.mu)


@dataclass(frozen=True)
class PairwiseModel:
    """Repulsive pairwise model with activity z: U = sum phi - #omega log z."""

    phi: _RadialStep
    z: float
    mu_d_bound: float | None = None

    def __post_init__(self):
        if not self.z > 0:
            raise ValueError("activity z must be positive")

    @property
    def interaction_range(self) -> float:
        return self.phi.support_radius

    def stability_floor(self, dim: int) -> float:
        # phi >= 0, so inserting a point can never gain more than the activity term.
        return -math.log(self.z)


@dataclass(frozen=True)
class AreaModel:
    """Area interaction: U(omega) = scale * |union of balls B(x, R/2)|."""

    R: float
    scale: float = 1.0
    mu_d_bound: float | None = None

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("area interaction radius R must be positive")
        if not self.scale > 0:
            raise ValueError("area interaction scale must be positive")

    @property
    def interaction_range(self) -> float:
        return self.R

    def stability_floor(self, dim: int) -> float:
        # Local energies lie in [0, scale*|B(0,R/2)|]; the declared floor is
        # the conservative symmetric bound.
        return -ball_volume(dim, 0.5 * self.R) * self.scale


InteractionModel = PoissonModel | PairwiseModel | AreaModel


def u3_check(model: InteractionModel, dim: int) -> bool | None:
    """Advisory percolation-threshold check R^d e^{-b} < mu_d_bound.

    Returns None when no bound was supplied. In d=1 the threshold is infinite,
    so any supplied bound of inf passes trivially.
    """
    if model.mu_d_bound is None:
        return None
    lhs = model.interaction_range**dim * math.exp(-model.stability_floor(dim))
    return lhs < model.mu_d_bound


def warn_if_u3_violated(model: InteractionModel, dim: int) -> None:
    ok = u3_check(model, dim)
    if ok is False:
        warnings.warn(
            "interaction model violates the advisory uniqueness bound "
            f"R^d e^(-b) < mu_d (d={dim}); results may sit in a non-unique phase",
            stacklevel=3,
        )


# ---------------------------------------------------------------------------
# union-of-balls volume (area interaction)
# ---------------------------------------------------------------------------


def _union_length_1d(centers: np.ndarray, radius: float) -> float:
    """Exact length of a union of intervals on the line."""
    if centers.size == 0:
        return 0.0
    starts = np.sort(centers.ravel()) - radius
    ends = starts + 2.0 * radius
    total = 0.0
    cur_s, cur_e = starts[0], ends[0]
    for s, e in zip(starts[1:], ends[1:]):
        if s > cur_e:
            total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    return total + (cur_e - cur_s)


def _union_length_circle(centers: np.ndarray, radius: float, side: float) -> float:
    """Exact length of a union of arcs on a circle of circumference ``side``."""
    if centers.size == 0:
        return 0.0
    if 2.0 * radius >= side:
        return side
    c = np.mod(centers.ravel(), side)
    pieces = []
    for x in c:
        s, e = x - radius, x + radius
        if s < 0:
            pieces.append((s + side, side))
            pieces.append((0.0, e))
        elif e > side:
            pieces.append((s, side))
            pieces.append((0.0, e - side))
        else:
            pieces.append((s, e))
    pieces.sort()
    total = 0.0
    cur_s, cur_e = pieces[0]
    for s, e in pieces[1:]:
        if s > cur_e:
            total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    total += cur_e - cur_s
    return min(total, side)


_AREA_GRID_CELL_CAP = 2_000_000


def _union_volume_grid(
    centers: np.ndarray, radius: float, lo: np.ndarray, hi: np.ndarray,
    side_for_wrap: float | None,
) -> float:
    """Midpoint cell count of a union of balls; O(h) accurate, d >= 2 only.

    The same grid must be reused when differencing two unions, so callers pass
    a shared bounding window (lo, hi).
    """
    dim = lo.size
    extent = hi - lo
    h = radius / 48.0
    cells = np.maximum((extent / h).astype(int), 1)
    while int(np.prod(cells)) > _AREA_GRID_CELL_CAP:
        h *= 1.5
        cells = np.maximum((extent / h).astype(int), 1)
    axes = [lo[i] + (np.arange(cells[i]) + 0.5) * (extent[i] / cells[i]) for i in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    covered = np.zeros(mesh[0].shape, dtype=bool)
    for p in centers:
        d2 = np.zeros(mesh[0].shape)
        for i in range(dim):
            diff = mesh[i] - p[i]
            if side_for_wrap is not None:
                diff = diff - side_for_wrap * np.round(diff / side_for_wrap)
            d2 += diff * diff
        covered |= d2 <= radius * radius
    cell_vol = float(np.prod(extent / cells))
    return float(covered.sum()) * cell_vol


def _union_volume(points: np.ndarray, radius: float, torus_side: float | None) -> float:
    pts = np.atleast_2d(points)
    if pts.shape[0] == 0:
        return 0.0
    dim = pts.shape[1]
    if dim == 1:
        if torus_side is None:
            return _union_length_1d(pts, radius)
        return _union_length_circle(pts, radius, torus_side)
    if torus_side is None:
        lo = pts.min(axis=0) - radius
        hi = pts.max(axis=0) + radius
        return _union_volume_grid(pts, radius, lo, hi, None)
    half = 0.5 * torus_side
    return _union_volume_grid(
        pts, radius, np.full(dim, -half), np.full(dim, half), torus_side
    )


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------


def _canonical(pts: np.ndarray) -> np.ndarray:
    """Sort rows lexicographically so summation order is permutation-free."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[0] < 2:
        return pts
    return pts[np.lexsort(pts.T[::-1])]

def _pair_distances(pts: np.ndarray, box: Box | None = None) -> np.ndarray:
    """Upper-triangle pair distances, minimal-image when a box is given."""
    k = pts.shape[0]
    if k < 2:
        return np.empty(0)
    i, j = np.triu_indices(k, 1)
    diff = pts[i] - pts[j]
    if box is not None:
        diff = box.min_image(diff)
    return np.sqrt((diff * diff).sum(axis=1))


def _phi_sum(phi: _RadialStep, dists: np.ndarray) -> float:
    if dists.size == 0:
        return 0.0
    vals = phi.radial(dists)
    # Dropping exact zeros keeps the summation tree identical for point sets
    # that differ only by non-interacting pairs, so locality holds exactly.
    vals = vals[vals != 0.0]
    if vals.size == 0:
        return 0.0
    return float(np.sum(vals))


def _points_of(obj) -> np.ndarray:
    if isinstance(obj, Configuration):
        return obj.points
    pts = np.asarray(obj, dtype=float)
    return np.atleast_2d(pts) if pts.size else pts.reshape(0, 1)


def total_energy(omega: Configuration, model: InteractionModel) -> float:
    """Full-space energy U(omega); the empty configuration has energy 0."""
    pts = _canonical(omega.points)
    k = pts.shape[0]
    if k == 0:
        return 0.0
    if isinstance(model, PoissonModel):
        return -k * math.log(model.mu)
    if isinstance(model, PairwiseModel):
        return _phi_sum(model.phi, _pair_distances(pts)) - k * math.log(model.z)
    return model.scale * _union_volume(pts, 0.5 * model.R, None)


def local_energy(x, gamma, model: InteractionModel) -> float:
    """Insertion cost u(x; gamma) of adding the point x to environment gamma.

    Always at least the model's stability floor b.
    """
    if isinstance(model, PoissonModel):
        return -math.log(model.mu)
    xp = np.asarray(x, dtype=float).reshape(1, -1)
    env = _points_of(gamma)
    if env.size:
        env = env.reshape(env.shape[0], xp.shape[1])
    else:
        env = env.reshape(0, xp.shape[1])
    if isinstance(model, PairwiseModel):
        if env.shape[0] == 0:
            return -math.log(model.z)
        dists = np.linalg.norm(env - xp, axis=1)
        return _phi_sum(model.phi, dists) - math.log(model.z)
    radius = 0.5 * model.R
    if env.shape[0] == 0:
        return model.scale * ball_volume(xp.shape[1], radius)
    if xp.shape[1] == 1:
        both = _union_length_1d(np.vstack([env, xp]), radius)
        old = _union_length_1d(env, radius)
        return model.scale * (both - old)
    allpts = np.vstack([env, xp])
    lo = allpts.min(axis=0) - radius
    hi = allpts.max(axis=0) + radius
    both = _union_volume_grid(allpts, radius, lo, hi, None)
    old = _union_volume_grid(env, radius, lo, hi, None)
    return model.scale * (both - old)


def periodic_energy(omega: Configuration, model: InteractionModel) -> float:
    """Torus energy with wrapped interactions; requires side > 2R."""
    box = omega.box
    if not box.periodic:
        raise ValueError("periodic energy requires a periodic box")
    R = model.interaction_range
    if isinstance(model, (PairwiseModel, AreaModel)) and box.side <= 2.0 * R:
        raise BoxTooSmall(
            f"torus side {box.side} must exceed twice the interaction range {R}"
        )
    pts = _canonical(omega.points)
    k = pts.shape[0]
    if k == 0:
        return 0.0
    if isinstance(model, PoissonModel):
        return -k * math.log(model.mu)
    if isinstance(model, PairwiseModel):
        dists = _pair_distances(pts, box)
        return _phi_sum(model.phi, dists) - k * math.log(model.z)
    return model.scale * _union_volume(pts, 0.5 * model.R, box.side)


def conditional_energy(
    omega: Configuration | np.ndarray,
    gamma: Configuration | np.ndarray,
    region: Box,
    model: InteractionModel,
) -> float:
    """Energy of omega inside the region given exterior boundary gamma.

    Only the part of gamma outside the region participates (interior boundary
    points are dropped, matching the restriction to the complement), and by
    locality only points within the interaction range of the region matter.
    """
    pts = _points_of(omega)
    pts = _canonical(pts.reshape(-1, region.dim)) if pts.size else pts.reshape(0, region.dim)
    k = pts.shape[0]
    if k and not region.contains(pts).all():
        raise PointOutsideBox("conditional energy requires omega inside the region")
    env = _points_of(gamma)
    env = env.reshape(-1, region.dim) if env.size else env.reshape(0, region.dim)
    if env.shape[0]:
        env = env[~region.contains(env)]
    if env.shape[0]:
        # Only the exterior environment within interaction range of the region
        # can contribute; clipping here makes that locality exact.
        excess = np.maximum(region.lo - env, 0.0)
        excess = np.maximum(excess, env - region.hi)
        env = env[(excess * excess).sum(axis=1) <= model.interaction_range**2]
    env = _canonical(env) if env.shape[0] else env
    if k == 0:
        return 0.0
    if isinstance(model, PoissonModel):
        return -k * math.log(model.mu)
    if isinstance(model, PairwiseModel):
        inner = _phi_sum(model.phi, _pair_distances(pts))
        cross = 0.0
        if env.shape[0]:
            d = np.linalg.norm(pts[:, None, :] - env[None, :, :], axis=2).ravel()
            cross = _phi_sum(model.phi, d)
        return inner + cross - k * math.log(model.z)
    radius = 0.5 * model.R
    if region.dim == 1:
        both = _union_length_1d(np.vstack([pts, env]) if env.size else pts, radius)
        old = _union_length_1d(env, radius)
        return model.scale * (both - old)
    allpts = np.vstack([pts, env]) if env.size else pts
    lo = allpts.min(axis=0) - radius
    hi = allpts.max(axis=0) + radius
    both = _union_volume_grid(allpts, radius, lo, hi, None)
    old = (
        _union_volume_grid(env, radius, lo, hi, None) if env.shape[0] else 0.0
    )
    return model.scale * (both - old)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def model_to_json(model: InteractionModel) -> dict:
    doc: dict
    if isinstance(model, PoissonModel):
        doc = {"kind": "poisson", "mu": model.mu}
    elif isinstance(model, AreaModel):
        doc = {"kind": "area", "R": model.R, "scale": model.scale}
    elif isinstance(model, PairwiseModel):
        phi = model.phi
        if isinstance(phi, StraussPotential):
            doc = {"kind": "strauss", "a0": phi.a0, "r": phi.r, "z": model.z}
        elif isinstance(phi, ZeroPotential):
            doc = {"kind": "zero", "z": model.z}
        else:
            doc = {
                "kind": "table",
                "radii": list(phi.radii),
                "values": list(phi.values),
                "z": model.z,
            }
    else:
        raise TypeError(f"unknown model type {type(model)!r}")
    if model.mu_d_bound is not None:
        doc["mu_d_bound"] = model.mu_d_bound
    return doc


def model_from_json(doc: dict | str) -> InteractionModel:
    if isinstance(doc, str):
        doc = json.loads(doc)
    kind = doc.get("kind")
    bound = doc.get("mu_d_bound")
    if kind == "poisson":
        return PoissonModel(mu=float(doc["mu"]), mu_d_bound=bound)
    if kind == "strauss":
        phi = StraussPotential(a0=float(doc["a0"]), r=float(doc["r"]))
        return PairwiseModel(phi=phi, z=float(doc["z"]), mu_d_bound=bound)
    if kind == "zero":
        return PairwiseModel(phi=ZeroPotential(), z=float(doc["z"]), mu_d_bound=bound)
    if kind == "table":
        phi = TablePotential(
            breakpoints=tuple(float(r) for r in doc["radii"]),
            levels=tuple(float(v) for v in doc["values"]),
        )
        return PairwiseModel(phi=phi, z=float(doc["z"]), mu_d_bound=bound)
    if kind == "area":
        return AreaModel(R=float(doc["R"]), scale=float(doc["scale"]), mu_d_bound=bound)
    raise ValueError(f"unknown interaction model kind {kind!r}")
