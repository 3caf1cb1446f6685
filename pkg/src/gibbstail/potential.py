"""Single-site potentials and their assembly into random fields on grids.

A single-site potential is an exponentially decaying tail plus a list of
weighted attractive wells at fixed offsets, with optional bounded extras.
``assemble_field`` sums translated copies over a point configuration onto a
grid, periodizing over lattice images when the grid is a torus. Singular
profiles are regularized by cell averaging so grid nodes never see an
infinite value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ConfigError, CutoffTooSmall, ShapeMismatch, SingularPoint
from .pointproc import Box, Configuration


# ---------------------------------------------------------------------------
# radial profiles
# ---------------------------------------------------------------------------


class RadialProfile:
    """Radially symmetric well shape. Values come from ``value(r)``.

    ``singular`` marks a non-integrable point at r=0 (handled by cell
    averaging on grids and by SingularPoint on exact pointwise hits).
    """

    singular = False
    is_delta = False

    def value(self, r):
        raise NotImplementedError

    @property
    def support_radius(self) -> float:
        raise NotImplementedError

    def check_dimension(self, dim: int) -> None:
        pass

    def cell_average(self, h: float, dim: int) -> float:
        """Average over the radius-h/2 ball around the singularity (exact
        interval average in d=1)."""
        raise NotImplementedError


@dataclass(frozen=True)
class SquareWell(RadialProfile):
    """Constant well: -depth on the closed ball of the given radius."""

    depth: float
    radius: float

    def __post_init__(self):
        if not self.depth > 0:
            raise ConfigError("well depth must be positive")
        if not self.radius > 0:
            raise ConfigError("well radius must be positive")

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.radius, -self.depth, 0.0)

    @property
    def support_radius(self) -> float:
        return self.radius


@dataclass(frozen=True)
class ScreenedCoulomb(RadialProfile):
    """-exp(-r)/r, three dimensions only."""

    singular = True

    def value(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -np.exp(-r) / r
        return np.where(r == 0.0, -np.inf, out)

    @property
    def support_radius(self) -> float:
        return math.inf

    def check_dimension(self, dim: int) -> None:
        if dim != 3:
            raise ConfigError("the screened Coulomb profile lives in d=3")

    def cell_average(self, h: float, dim: int) -> float:
        a = 0.5 * h
        return -3.0 * (1.0 - (1.0 + a) * math.exp(-a)) / a**3


@dataclass(frozen=True)
class PowerLaw(RadialProfile):
    """amplitude * r^(-nu) on the closed cutoff ball, amplitude < 0.

    The admissible exponent depends on the dimension it is used in
    (nu < min(2, d/2)), checked at use time via ``check_dimension``.
    """

    nu: float
    amplitude: float
    cutoff: float

    singular = True

    def __post_init__(self):
        if not 0 < self.nu < 2:
            raise ConfigError("power-law exponent must lie in (0, 2)")
        if not self.amplitude < 0:
            raise ConfigError("power-law amplitude must be negative")
        if not self.cutoff > 0:
            raise ConfigError("power-law cutoff must be positive")

    def value(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            raw = self.amplitude * r**-self.nu
        return np.where(r == 0.0, -np.inf, np.where(r <= self.cutoff, raw, 0.0))

    @property
    def support_radius(self) -> float:
        return self.cutoff

    def check_dimension(self, dim: int) -> None:
        limit = min(2.0, dim / 2.0)
        if not self.nu < limit:
            raise ConfigError(
                f"power-law exponent {self.nu} needs nu < {limit} in d={dim}"
            )

    def cell_average(self, h: float, dim: int) -> float:
        a = min(0.5 * h, self.cutoff)
        if dim == 1:
            avg = self.amplitude * a**-self.nu / (1.0 - self.nu)
        else:
            avg = self.amplitude * (dim / (dim - self.nu)) * a**-self.nu
        return float(avg)


@dataclass(frozen=True)
class DeltaWell(RadialProfile):
    """Point mass of weight -c at the origin, one dimension only.

    Pointwise it vanishes away from the center; on a grid it becomes the
    single node value -c/h, which preserves the integral -c at every h.
    """

    c: float

    singular = True
    is_delta = True

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError("delta weight must be positive")

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r == 0.0, -np.inf, 0.0)

    @property
    def support_radius(self) -> float:
        return 0.0

    def check_dimension(self, dim: int) -> None:
        if dim != 1:
            raise ConfigError("the delta well lives in d=1")


@dataclass(frozen=True)
class TableProfile(RadialProfile):
    """Step profile: values[j] on the first shell with r <= radii[j]."""

    radii: tuple
    values: tuple

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        values = tuple(float(v) for v in self.values)
        if len(radii) != len(values) or not radii:
            raise ConfigError("radii and values must have equal nonzero length")
        if any(r <= 0 for r in radii) or any(
            b <= a for a, b in zip(radii, radii[1:])
        ):
            raise ConfigError("radii must be positive and strictly increasing")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "values", values)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(np.asarray(self.radii), r, side="left")
        padded = np.append(np.asarray(self.values), 0.0)
        return padded[np.minimum(idx, len(self.values))]

    @property
    def support_radius(self) -> float:
        return self.radii[-1]


# ---------------------------------------------------------------------------
# the single-site potential
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpTail:
    """amplitude * exp(-rate * |x|), the long-range part."""

    amplitude: float
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError("tail decay rate must be positive")


@dataclass(frozen=True)
class Well:
    """One weighted well at a fixed offset from the site origin."""

    center: tuple
    b: float
    profile: RadialProfile

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        if not center:
            raise ConfigError("well center needs at least one coordinate")
        if not self.b > 0:
            raise ConfigError("well weight must be positive")
        object.__setattr__(self, "center", center)

    @property
    def dim(self) -> int:
        return len(self.center)


@dataclass(frozen=True)
class SingleSitePotential:
    """Tail + weighted wells + optional bounded extras, all site-centered.

    ``v4`` is a bounded sign-indefinite extra, ``v5`` a nonnegative bounded
    extra; both sit at the site origin. ``p`` is the declared integrability
    exponent; ``p_is_admissible(d)`` reports the advisory threshold (2 for
    d <= 3, d/2 above) without enforcing it.
    """

    wells: tuple = ()
    tail: ExpTail | None = None
    v4: RadialProfile | None = None
    v5: RadialProfile | None = None
    p: float = 2.5

    def __post_init__(self):
        wells = tuple(self.wells)
        if not wells and self.tail is None and self.v4 is None \
                and self.v5 is None:
            raise ConfigError("the potential has no parts at all")
        dims = {w.dim for w in wells}
        if len(dims) > 1:
            raise ConfigError("well centers disagree on dimension")
        if self.p <= 0:
            raise ConfigError("integrability exponent must be positive")
        for extra in (self.v4, self.v5):
            if extra is not None and (
                extra.singular or not math.isfinite(extra.support_radius)
            ):
                raise ConfigError("bounded extras must be bounded and compact")
        if self.v5 is not None:
            vals = getattr(self.v5, "values", None)
            if vals is None or min(vals) < 0:
                raise ConfigError("the nonnegative extra must be a "
                                  "nonnegative step table")
            self._check_disjoint_wells(wells)
        object.__setattr__(self, "wells", wells)

    @staticmethod
    def _check_disjoint_wells(wells):
        for i in range(len(wells)):
            for j in range(i + 1, len(wells)):
                ri = wells[i].profile.support_radius
                rj = wells[j].profile.support_radius
                gap = math.dist(wells[i].center, wells[j].center)
                if not gap > ri + rj:
                    raise ConfigError(
                        "declaring the nonnegative extra requires pairwise "
                        "disjoint well supports"
                    )

    @property
    def dim(self) -> int | None:
        return self.wells[0].dim if self.wells else None

    @staticmethod
    def p_floor(dim: int) -> float:
        return 2.0 if dim <= 3 else dim / 2.0

    def p_is_admissible(self, dim: int) -> bool:
        return self.p > self.p_floor(dim)

    def check_dimension(self, dim: int) -> None:
        if self.dim is not None and self.dim != dim:
            raise ConfigError(
                f"potential is {self.dim}-dimensional, asked for d={dim}"
            )
        for w in self.wells:
            w.profile.check_dimension(dim)
        for extra in (self.v4, self.v5):
            if extra is not None:
                extra.check_dimension(dim)

    def compact_reach(self) -> float:
        """Distance from the site origin beyond which every compactly
        supported part vanishes."""
        reach = 0.0
        for w in self.wells:
            if math.isfinite(w.profile.support_radius):
                reach = max(
                    reach,
                    math.hypot(*w.center) + w.profile.support_radius,
                )
            else:
                reach = math.inf
        for extra in (self.v4, self.v5):
            if extra is not None:
                reach = max(reach, extra.support_radius)
        return reach


def evaluate_single_site(V: SingleSitePotential, x) -> float:
    """Pointwise value of the site potential at offset x from its origin."""
    x = np.asarray(x, dtype=float).reshape(-1)
    V.check_dimension(x.size)
    total = 0.0
    for w in V.wells:
        r = float(np.linalg.norm(x - np.asarray(w.center)))
        if r == 0.0 and (w.profile.singular or w.profile.is_delta):
            raise SingularPoint(
                "evaluation point hits a singular well center exactly"
            )
        total += w.b * float(w.profile.value(r))
    r0 = float(np.sqrt((x * x).sum()))
    for extra in (V.v4, V.v5):
        if extra is not None:
            total += float(extra.value(r0))
    if V.tail is not None:
        total += V.tail.amplitude * math.exp(-V.tail.rate * r0)
    return total


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid over a box, Dirichlet or Bloch boundary.

    Dirichlet grids hold the side/h - 1 interior nodes per axis; Bloch grids
    hold side/h nodes per axis with the last node on the upper face (the
    lower face is its wrap image). ``theta`` are the Bloch phases per axis,
    each in [0, 2*pi/side).
    """

    box: Box
    h: float
    boundary: str = "dirichlet"
    theta: tuple = ()

    def __post_init__(self):
        if self.h <= 0:
            raise ConfigError("grid spacing must be positive")
        ratio = self.box.side / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError("box side must be an integer multiple of h")
        if self.boundary not in ("dirichlet", "bloch"):
            raise ConfigError("boundary must be 'dirichlet' or 'bloch'")
        theta = tuple(float(t) for t in self.theta)
        if self.boundary == "bloch":
            if not self.box.periodic:
                raise ConfigError("Bloch boundaries need a periodic box")
            if len(theta) != self.box.dim:
                raise ConfigError("one Bloch phase per axis required")
            cap = 2.0 * math.pi / self.box.side
            if any(t < 0 or t >= cap + 1e-12 for t in theta):
                raise ConfigError(
                    f"Bloch phases must lie in [0, {cap:.6g})"
                )
        elif theta:
            raise ConfigError("Dirichlet grids take no Bloch phases")
        if self.nodes_per_axis < 1:
            raise ConfigError("grid has no nodes; shrink h")
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def nodes_per_axis(self) -> int:
        cells = int(round(self.box.side / self.h))
        return cells - 1 if self.boundary == "dirichlet" else cells

    @property
    def shape(self) -> tuple:
        return (self.nodes_per_axis,) * self.dim

    @property
    def n_total(self) -> int:
        return self.nodes_per_axis ** self.dim

    def axis_nodes(self, c: int = 0) -> np.ndarray:
        m = self.nodes_per_axis
        return self.box.lo[c] + (np.arange(m) + 1) * self.h

    def node_coords(self) -> np.ndarray:
        """All node coordinates, row-major, shape (n_total, dim)."""
        axes = [self.axis_nodes(c) for c in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------------------
# field assembly
# ---------------------------------------------------------------------------


def default_cutoff(V: SingleSitePotential) -> float:
    """10 tail decay lengths; relative truncation below 5e-5."""
    if V.tail is None:
        return V.compact_reach()
    return 10.0 / V.tail.rate


def tail_truncation_bound(V: SingleSitePotential, cutoff: float) -> float:
    """Per-source bound on the dropped tail mass beyond the cutoff."""
    if V.tail is None:
        return 0.0
    return abs(V.tail.amplitude) * math.exp(-V.tail.rate * cutoff)


def _add_site(out, coords, V, x, h, dim, cutoff):
    diff = coords - x
    r = np.sqrt((diff * diff).sum(axis=1)) if dim > 1 else np.abs(diff[:, 0])
    for w in V.wells:
        center = x + np.asarray(w.center)
        if w.profile.is_delta:
            dist = np.abs(coords[:, 0] - center[0])
            nearest = int(np.argmin(dist))
            # point mass lands in the cell of the nearest node; a center
            # beyond every cell (outside the grid) contributes nothing
            if dist[nearest] <= 0.5 * h * (1.0 + 1e-12):
                out[nearest] += w.b * (-w.profile.c / h)
            continue
        dw = coords - center
        rw = np.sqrt((dw * dw).sum(axis=1)) if dim > 1 else np.abs(dw[:, 0])
        vals = w.profile.value(rw)
        if w.profile.singular:
            vals = np.where(
                rw <= 0.5 * h, w.profile.cell_average(h, dim), vals
            )
        out += w.b * vals
    for extra in (V.v4, V.v5):
        if extra is not None:
            out += extra.value(r)
    if V.tail is not None:
        out += np.where(
            r <= cutoff,
            V.tail.amplitude * np.exp(-V.tail.rate * r),
            0.0,
        )


def assemble_field(V: SingleSitePotential, omega: Configuration,
                   grid: GridSpec, cutoff_radius: float | None = None
                   ) -> np.ndarray:
    """Sum of site potentials over all points (and their lattice images on a
    Bloch grid), evaluated on the grid nodes.

    Compactly supported parts are always summed in full; only the
    exponential tail is truncated at the cutoff, with per-source error at
    most |amplitude| * exp(-rate * cutoff). The cutoff must cover at least
    five tail decay lengths.
    """
    V.check_dimension(grid.dim)
    if omega.points.shape[1] != grid.dim:
        raise ShapeMismatch("configuration and grid dimensions differ")
    if cutoff_radius is None:
        cutoff_radius = default_cutoff(V)
    if V.tail is not None and cutoff_radius < 5.0 / V.tail.rate:
        raise CutoffTooSmall(
            f"cutoff {cutoff_radius} is below five tail decay lengths "
            f"({5.0 / V.tail.rate})"
        )
    reach = max(cutoff_radius, V.compact_reach())
    if grid.boundary == "bloch" and not math.isfinite(reach):
        raise ConfigError("periodic assembly needs a finite reach")
    coords = grid.node_coords()
    out = np.zeros(grid.n_total)
    if grid.boundary == "bloch" and omega.box != grid.box:
        raise ConfigError("periodic assembly needs the points on the "
                          "grid's own torus")
    # each point accumulates into its own buffer so that summing fields of
    # disjoint configurations reproduces the joint field bit for bit
    for x in omega.points:
        site = np.zeros(grid.n_total)
        if grid.boundary == "bloch":
            ranges = []
            for c in range(grid.dim):
                lo = math.floor(
                    (grid.box.lo[c] - reach - x[c]) / grid.box.side
                )
                hi = math.ceil(
                    (grid.box.hi[c] + reach - x[c]) / grid.box.side
                )
                ranges.append(range(lo, hi + 1))
            for m in product(*ranges):
                image = x + np.asarray(m, dtype=float) * grid.box.side
                _add_site(site, coords, V, image, grid.h, grid.dim,
                          cutoff_radius)
        else:
            _add_site(site, coords, V, x, grid.h, grid.dim, cutoff_radius)
        out += site
    return out.reshape(grid.shape)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_PROFILE_KINDS = {
    "square": SquareWell,
    "screened": ScreenedCoulomb,
    "power": PowerLaw,
    "delta": DeltaWell,
    "table": TableProfile,
}


def profile_to_json(profile: RadialProfile) -> dict:
    if isinstance(profile, SquareWell):
        return {"kind": "square", "depth": profile.depth,
                "radius": profile.radius}
    if isinstance(profile, ScreenedCoulomb):
        return {"kind": "screened"}
    if isinstance(profile, PowerLaw):
        return {"kind": "power", "nu": profile.nu,
                "amplitude": profile.amplitude, "cutoff": profile.cutoff}
    if isinstance(profile, DeltaWell):
        return {"kind": "delta", "c": profile.c}
    if isinstance(profile, TableProfile):
        return {"kind": "table", "radii": list(profile.radii),
                "values": list(profile.values)}
    raise ConfigError(f"unknown profile type {type(profile).__name__}")


def profile_from_json(data: dict) -> RadialProfile:
    kind = data.get("kind")
    if kind not in _PROFILE_KINDS:
        raise ConfigError(f"unknown profile kind {kind!r}")
    args = {k: v for k, v in data.items() if k != "kind"}
    if kind == "table":
        return TableProfile(tuple(args["radii"]), tuple(args["values"]))
    return _PROFILE_KINDS[kind](**args)


def potential_to_json(V: SingleSitePotential) -> dict:
    out: dict = {
        "wells": [
            {"center": list(w.center), "b": w.b,
             "profile": profile_to_json(w.profile)}
            for w in V.wells
        ],
        "p": V.p,
    }
    if V.tail is not None:
        out["tail"] = {"amplitude": V.tail.amplitude, "rate": V.tail.rate}
    if V.v4 is not None:
        out["v4"] = profile_to_json(V.v4)
    if V.v5 is not None:
        out["v5"] = profile_to_json(V.v5)
    return out


def potential_from_json(data: dict) -> SingleSitePotential:
    wells = tuple(
        Well(tuple(w["center"]), w["b"], profile_from_json(w["profile"]))
        for w in data.get("wells", [])
    )
    tail = None
    if "tail" in data:
        tail = ExpTail(data["tail"]["amplitude"], data["tail"]["rate"])
    v4 = profile_from_json(data["v4"]) if "v4" in data else None
    v5 = profile_from_json(data["v5"]) if "v5" in data else None
    return SingleSitePotential(
        wells=wells, tail=tail, v4=v4, v5=v5, p=data.get("p", 2.5)
    )


def save_field(field_array: np.ndarray, grid: GridSpec, path_prefix) -> None:
    """Row-major 64-bit floats next to a JSON header with grid metadata."""
    arr = np.ascontiguousarray(field_array, dtype=np.float64)
    if arr.shape != grid.shape:
        raise ShapeMismatch("field shape does not match the grid")
    with open(f"{path_prefix}.f64", "wb") as fh:
        fh.write(arr.tobytes())
    header = {
        "dim": grid.dim,
        "shape": list(grid.shape),
        "h": grid.h,
        "side": grid.box.side,
        "center": list(grid.box.center),
        "periodic": grid.box.periodic,
        "boundary": grid.boundary,
        "theta": list(grid.theta),
    }
    with open(f"{path_prefix}.json", "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_field(path_prefix) -> tuple[np.ndarray, GridSpec]:
    with open(f"{path_prefix}.json") as fh:
        header = json.load(fh)
    box = Box(header["dim"], header["side"], tuple(header["center"]),
              periodic=header["periodic"])
    grid = GridSpec(box, header["h"], header["boundary"],
                    tuple(header["theta"]))
    raw = np.fromfile(f"{path_prefix}.f64", dtype=np.float64)
    return raw.reshape(grid.shape), grid
