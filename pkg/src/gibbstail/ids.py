"""Monte Carlo estimation of the integrated density of states.

Dirichlet estimates count eigenvalues of the boxed operator per unit
volume over independent configurations; periodic estimates average Bloch
counts over random phases as well. ``sandwich_check`` compares the two
at shifted energies, ``fit_tail`` regresses the deep-tail decay of the
estimates against coupling-based regressors, and ``run_tail_experiment``
runs the whole pipeline from a config and writes CSV/JSON artifacts.

Realizations are independent work units (draw points, assemble the
field, count); they can run on worker processes. Reduction always
collects per-realization rows in realization order, so results are
byte-identical for any worker count.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import metadata

import numpy as np

from .combinat import ConstantReport, predicted_constants
from .errors import BoxTooSmall, ConfigError, EmptyWindow
from .gfunc import g_of_E
from .hamiltonian import build_hamiltonian, count_below
from .pointproc import Box, Configuration, PoissonModel
from .potential import (
    GridSpec,
    SingleSitePotential,
    Well,
    assemble_field,
    default_cutoff,
)
from .sampler import ChainSettings, GibbsChain, RngState, sample_poisson

_DEFAULT_CHAIN = ChainSettings(sweeps=50)
_REGRESSORS = ("g_log_g", "g_squared", "combined_g_squared")
_MIN_WINDOW = 4
_CONFIDENCE = 0.05


def _package_version() -> str:
    try:
        return metadata.version("gibbstail")
    except metadata.PackageNotFoundError:
        return "unknown"


def _resolved_dim(V: SingleSitePotential | None, dim: int | None) -> int:
    if dim is not None:
        return int(dim)
    if V is not None and V.dim is not None:
        return V.dim
    return 1


def _draw_configuration(model, box: Box, settings: ChainSettings,
                        rng: RngState, periodic: bool) -> Configuration:
    """One configuration from the model's law on the box.

    Poisson draws are exact; Gibbs models run a fresh chain for
    ``settings.sweeps`` sweeps and return the final state.
    """
    if model is None:
        return Configuration.empty(box)
    if isinstance(model, PoissonModel):
        return sample_poisson(box, model.mu, rng)
    chain = GibbsChain(model, box, None, settings, rng, periodic=periodic)
    chain.run_sweeps(settings.sweeps)
    return chain.configuration


def _field_for(V, omega: Configuration, grid: GridSpec) -> np.ndarray:
    if V is None:
        return np.zeros(grid.shape)
    return assemble_field(V, omega, grid)


def _dirichlet_realization(job) -> np.ndarray:
    model, V, grid, sample_box, energies, settings, child = job
    omega = _draw_configuration(model, sample_box, settings, child,
                                periodic=False)
    H = build_hamiltonian(grid, _field_for(V, omega, grid))
    return np.array([count_below(H, E).count for E in energies],
                    dtype=float)


def _periodic_realization(job) -> np.ndarray:
    model, V, box, h, energies, theta_samples, fixed_theta, settings, \
        child = job
    omega = _draw_configuration(model, box, settings, child, periodic=True)
    zero = (0.0,) * box.dim
    field = _field_for(V, omega, GridSpec(box, h, "bloch", zero))
    cap = 2.0 * math.pi / box.side
    total = np.zeros(len(energies))
    for _ in range(theta_samples):
        theta = fixed_theta if fixed_theta is not None else tuple(
            child.gen.uniform(0.0, cap, size=box.dim)
        )
        H = build_hamiltonian(GridSpec(box, h, "bloch", theta), field)
        total += [count_below(H, E).count for E in energies]
    return total / theta_samples


def _map_jobs(fn, jobs, workers: int) -> list:
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


@dataclass(frozen=True)
class IdsEstimate:
    """Eigenvalues at or below an energy, per unit volume.

    ``zero_upper`` is set only when every realization counted zero: the
    one-sided 95% Clopper-Pearson bound on the per-box hit probability,
    1 - 0.05**(1/realizations), normalized by the box volume.
    """

    energy: float
    n_hat: float
    stderr: float
    realizations: int
    h: float
    side: float
    boundary: str
    seed: int
    theta_samples: int | None = None
    zero_upper: float | None = None

    def __post_init__(self):
        if self.boundary not in ("dirichlet", "periodic"):
            raise ConfigError("boundary must be 'dirichlet' or 'periodic'")
        if self.n_hat < 0 or self.stderr < 0:
            raise ConfigError("estimate and standard error must be "
                              "nonnegative")
        if self.realizations < 1:
            raise ConfigError("at least one realization required")


def _summarize(values: np.ndarray, energies, volume: float, h: float,
               side: float, boundary: str, seed: int,
               theta_samples: int | None) -> list[IdsEstimate]:
    reals = values.shape[0]
    out = []
    for i, E in enumerate(energies):
        col = values[:, i]
        mean = float(col.mean())
        se = float(col.std(ddof=1) / math.sqrt(reals)) if reals > 1 else 0.0
        upper = None
        if mean == 0.0:
            upper = (1.0 - _CONFIDENCE ** (1.0 / reals)) / volume
        out.append(IdsEstimate(
            energy=float(E), n_hat=mean, stderr=se, realizations=reals,
            h=h, side=side, boundary=boundary, seed=seed,
            theta_samples=theta_samples, zero_upper=upper,
        ))
    return out


def estimate_ids_dirichlet(model, V, energies, side: float, h: float,
                           realizations: int, rng: RngState,
                           chain: ChainSettings | None = None,
                           dim: int | None = None,
                           workers: int = 1) -> list[IdsEstimate]:
    """Mean eigenvalue count per unit volume on the Dirichlet box.

    Points are sampled on the box enlarged by the potential's reach, so
    sources just outside the window still contribute their field inside.
    ``model`` may be None (no points) and ``V`` may be None (zero field).
    """
    energies = tuple(float(E) for E in energies)
    if not energies:
        raise ConfigError("at least one energy required")
    if realizations < 10:
        raise ConfigError("Dirichlet estimates need at least 10 "
                          "realizations")
    d = _resolved_dim(V, dim)
    grid = GridSpec(Box(d, side), h)
    reach = 0.0 if V is None else max(default_cutoff(V), V.compact_reach())
    sample_box = Box(d, side + 2.0 * reach) if reach > 0 else grid.box
    settings = chain if chain is not None else _DEFAULT_CHAIN
    jobs = [(model, V, grid, sample_box, energies, settings, child)
            for child in rng.spawn(realizations)]
    rows = _map_jobs(_dirichlet_realization, jobs, workers)
    values = np.vstack(rows) / grid.box.volume
    return _summarize(values, energies, grid.box.volume, h, side,
                      "dirichlet", rng.seed, None)


def estimate_ids_periodic(model, V, energies, n: float, h: float,
                          theta_samples: int, realizations: int,
                          rng: RngState,
                          chain: ChainSettings | None = None,
                          dim: int | None = None,
                          fixed_theta: tuple | None = None,
                          workers: int = 1) -> list[IdsEstimate]:
    """Bloch-averaged eigenvalue count per unit volume on the torus.

    Each realization draws one configuration from the torus law and
    ``theta_samples`` uniform phases from [0, 2*pi/n)^d; the per-energy
    value is the phase-averaged count over n^d. Standard errors are
    taken across realizations, so phase noise enters them through the
    per-realization averages. ``fixed_theta`` pins every phase to one
    vector instead (useful against closed-form spectra).
    """
    energies = tuple(float(E) for E in energies)
    if not energies:
        raise ConfigError("at least one energy required")
    if theta_samples < 1:
        raise ConfigError("at least one Bloch phase sample required")
    if realizations < 1:
        raise ConfigError("at least one realization required")
    d = _resolved_dim(V, dim)
    reach = model.interaction_range if model is not None else 0.0
    if n <= 2.0 * reach:
        raise BoxTooSmall(
            f"torus side {n} must exceed twice the range {reach}"
        )
    box = Box(d, n, periodic=True)
    GridSpec(box, h, "bloch", (0.0,) * d)
    if fixed_theta is not None:
        fixed_theta = tuple(float(t) for t in fixed_theta)
        if len(fixed_theta) != d:
            raise ConfigError("one pinned phase per axis required")
    settings = chain if chain is not None else _DEFAULT_CHAIN
    jobs = [(model, V, box, h, energies, theta_samples, fixed_theta,
             settings, child) for child in rng.spawn(realizations)]
    rows = _map_jobs(_periodic_realization, jobs, workers)
    values = np.vstack(rows) / box.volume
    return _summarize(values, energies, box.volume, h, n, "periodic",
                      rng.seed, theta_samples)


# ---------------------------------------------------------------------------
# periodic/Dirichlet sandwich
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SandwichRow:
    """One depth's comparison: periodic counts at -E-1 and -E+1 around
    the Dirichlet count at -E, with combined 3-sigma margins."""

    depth: float
    lower: float
    mid: float
    upper: float
    sigma_lower: float
    sigma_upper: float
    lower_margin: float
    upper_margin: float

    @property
    def ok(self) -> bool:
        return self.lower_margin >= 0.0 and self.upper_margin >= 0.0


@dataclass(frozen=True)
class SandwichReport:
    rows: tuple
    n: float
    h: float
    realizations: int
    seed: int
    note: str = ("the exponentially small boundary term is folded into "
                 "the 3-sigma margins")

    @property
    def violations(self) -> int:
        return sum(1 for row in self.rows if not row.ok)

    def to_json(self) -> str:
        doc = {
            "n": self.n,
            "h": self.h,
            "realizations": self.realizations,
            "seed": self.seed,
            "violations": self.violations,
            "note": self.note,
            "rows": [
                {
                    "depth": r.depth,
                    "lower": r.lower,
                    "mid": r.mid,
                    "upper": r.upper,
                    "sigma_lower": r.sigma_lower,
                    "sigma_upper": r.sigma_upper,
                    "lower_margin": r.lower_margin,
                    "upper_margin": r.upper_margin,
                    "ok": r.ok,
                }
                for r in self.rows
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2)


def sandwich_check(model, V, depths, n: float, h: float,
                   realizations: int, rng: RngState,
                   theta_samples: int = 8,
                   chain: ChainSettings | None = None,
                   dim: int | None = None,
                   workers: int = 1) -> SandwichReport:
    """Check the periodic counts at -E-1 and -E+1 bracket the Dirichlet
    count at -E within combined 3-sigma margins, per depth.

    Violations are reported, not raised. The Dirichlet and periodic
    estimators run on independent child streams of ``rng``.
    """
    depths = tuple(float(E) for E in depths)
    if not depths:
        raise ConfigError("at least one depth required")
    dir_rng, per_rng = rng.spawn(2)
    dir_est = estimate_ids_dirichlet(
        model, V, [-E for E in depths], n, h, realizations, dir_rng,
        chain=chain, dim=dim, workers=workers,
    )
    per_energies = [-E - 1.0 for E in depths] + [-E + 1.0 for E in depths]
    per_est = estimate_ids_periodic(
        model, V, per_energies, n, h, theta_samples, realizations,
        per_rng, chain=chain, dim=dim, workers=workers,
    )
    k = len(depths)
    rows = []
    for i, E in enumerate(depths):
        lo, hi, mid = per_est[i], per_est[k + i], dir_est[i]
        sig_lo = math.hypot(lo.stderr, mid.stderr)
        sig_hi = math.hypot(hi.stderr, mid.stderr)
        rows.append(SandwichRow(
            depth=E,
            lower=lo.n_hat, mid=mid.n_hat, upper=hi.n_hat,
            sigma_lower=sig_lo, sigma_upper=sig_hi,
            lower_margin=mid.n_hat - (lo.n_hat - 3.0 * sig_lo),
            upper_margin=(hi.n_hat + 3.0 * sig_hi) - mid.n_hat,
        ))
    return SandwichReport(rows=tuple(rows), n=n, h=h,
                          realizations=realizations, seed=rng.seed)


# ---------------------------------------------------------------------------
# tail regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailFit:
    """Least-squares fit of log N_hat(-E) against a coupling regressor."""

    regressor: str
    window: tuple
    slope: float
    intercept: float
    r_squared: float
    censored: int
    predicted: float | None = None
    ratio: float | None = None

    def __post_init__(self):
        if self.regressor not in _REGRESSORS:
            raise ConfigError(f"unknown regressor {self.regressor!r}")
        if len(self.window) < _MIN_WINDOW:
            raise ConfigError(
                f"fit window needs at least {_MIN_WINDOW} points"
            )
        if not 0.0 <= self.r_squared <= 1.0:
            raise ConfigError("R^2 must lie in [0, 1]")
        if self.censored < 0:
            raise ConfigError("censored count cannot be negative")


def _regressor_x(gs: np.ndarray, kind: str) -> np.ndarray:
    if kind == "g_log_g":
        return gs * np.log(gs)
    return gs * gs


def _fit_points(points, gcurve, kind):
    if kind not in _REGRESSORS:
        raise ConfigError(f"unknown regressor {kind!r}")
    kept, censored = [], 0
    for E, n_hat in points:
        E, n_hat = float(E), float(n_hat)
        if n_hat < 0:
            raise ConfigError("estimates must be nonnegative")
        if n_hat == 0.0:
            censored += 1
        else:
            kept.append((E, n_hat))
    if len(kept) < _MIN_WINDOW:
        raise EmptyWindow(
            f"{len(kept)} positive points after censoring {censored} "
            f"zeros; the fit window needs {_MIN_WINDOW}"
        )
    depths = np.array([E for E, _ in kept])
    y = np.log(np.array([n for _, n in kept]))
    gs = np.array([gcurve.g_at(E) for E in depths])
    x = _regressor_x(gs, kind)
    if float(np.ptp(x)) == 0.0:
        raise ConfigError("regressor values are constant over the window")
    return depths, x, y, censored


def fit_tail(points, gcurve, kind: str,
             predicted: float | None = None) -> TailFit:
    """OLS of log N_hat(-E) on the regressor built from g(E).

    ``points`` are (depth, estimate) pairs with positive depths; zero
    estimates are censored out and counted. ``gcurve`` is anything with
    a ``g_at(E)`` method. ``predicted`` is the slope a ConstantReport
    expects; when given, the fit records the ratio fitted/predicted.
    """
    depths, x, y, censored = _fit_points(points, gcurve, kind)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-24 else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    ratio = None
    if predicted is not None and predicted != 0.0:
        ratio = float(slope) / float(predicted)
    return TailFit(
        regressor=kind, window=tuple(float(E) for E in depths),
        slope=float(slope), intercept=float(intercept), r_squared=r2,
        censored=censored, predicted=predicted, ratio=ratio,
    )


def fixed_slope_residual(points, gcurve, kind: str, slope: float) -> float:
    """Residual sum of squares with the slope pinned and only the
    intercept fitted; used to compare candidate predicted constants."""
    _, x, y, _ = _fit_points(points, gcurve, kind)
    intercept = float(np.mean(y - slope * x))
    resid = y - (slope * x + intercept)
    return float(resid @ resid)


@dataclass(frozen=True)
class CouplingTable:
    """Precomputed depth -> coupling pairs with interpolating lookup."""

    depths: tuple
    couplings: tuple

    def __post_init__(self):
        depths = tuple(float(E) for E in self.depths)
        gs = tuple(float(g) for g in self.couplings)
        if len(depths) != len(gs) or not depths:
            raise ConfigError("one coupling per depth required")
        if any(np.diff(depths) <= 0) or any(np.diff(gs) <= 0):
            raise ConfigError("depths and couplings must both increase")
        object.__setattr__(self, "depths", depths)
        object.__setattr__(self, "couplings", gs)

    def g_at(self, E: float) -> float:
        E = float(E)
        if not self.depths[0] <= E <= self.depths[-1]:
            raise ConfigError(f"depth {E} outside the tabulated range")
        return float(np.interp(E, self.depths, self.couplings))


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def ids_to_csv(estimates, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("E,N_hat,stderr,realizations\n")
        for est in estimates:
            fh.write(f"{_fmt(est.energy)},{_fmt(est.n_hat)},"
                     f"{_fmt(est.stderr)},{est.realizations}\n")


def fit_to_csv(fit: TailFit, path) -> None:
    predicted = "" if fit.predicted is None else _fmt(fit.predicted)
    ratio = "" if fit.ratio is None else _fmt(fit.ratio)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("regressor,slope,predicted,ratio,R2\n")
        fh.write(f"{fit.regressor},{_fmt(fit.slope)},{predicted},"
                 f"{ratio},{_fmt(fit.r_squared)}\n")


def couplings_to_csv(table: CouplingTable, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("E,g\n")
        for E, g in zip(table.depths, table.couplings):
            fh.write(f"{_fmt(E)},{_fmt(g)}\n")


# ---------------------------------------------------------------------------
# end-to-end tail experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailConfig:
    """Inputs for one tail experiment; the CLI builds this from JSON."""

    model: object
    potential: SingleSitePotential
    depths: tuple
    side: float
    h: float
    realizations: int
    seed: int
    out_dir: str | None = None
    coupling_h: float | None = None
    coupling_tol: float = 1e-3
    chain: ChainSettings | None = None
    dim: int | None = None
    workers: int = 1

    def __post_init__(self):
        depths = tuple(float(E) for E in self.depths)
        if not depths or any(E <= 0 for E in depths):
            raise ConfigError("depths must be positive")
        if any(np.diff(depths) <= 0):
            raise ConfigError("depths must increase strictly")
        object.__setattr__(self, "depths", depths)


@dataclass(frozen=True)
class TailBundle:
    estimates: tuple
    fit: TailFit
    report: ConstantReport
    table: CouplingTable
    files: tuple


def _reference_potential(V: SingleSitePotential,
                         report: ConstantReport) -> SingleSitePotential:
    """Unit-weight single well carrying the witness wells' profile.

    In the combined regime the coupling tracks the total weight stacked
    on one profile copy, so the inverse is taken at weight one; the well
    weights enter through the independence weight instead.
    """
    w0 = V.wells[report.witness[0]]
    return SingleSitePotential(
        wells=(Well(center=(0.0,) * len(w0.center), b=1.0,
                    profile=w0.profile),),
        p=V.p,
    )


def run_tail_experiment(config: TailConfig) -> TailBundle:
    """Estimate the tail, fit it against the predicted regressor, and
    write ids.csv, fit.csv, couplings.csv, constants.json, manifest.json.

    Artifacts are written as they become available; any failure writes
    an aborted manifest listing the files produced so far, then
    propagates.
    """
    out = config.out_dir
    files: list[str] = []

    def _write_manifest(status: str, error: Exception | None = None):
        if out is None:
            return
        doc = {
            "status": status,
            "seed": config.seed,
            "grids": {
                "h": config.h,
                "side": config.side,
                "coupling_h": config.coupling_h or config.h,
            },
            "version": _package_version(),
            "files": sorted(files),
        }
        if error is not None:
            doc["error"] = {
                "kind": type(error).__name__,
                "message": str(error),
            }
        path = os.path.join(out, "manifest.json")
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    def _emit(name: str, writer) -> None:
        if out is None:
            return
        path = os.path.join(out, name)
        writer(path)
        files.append(name)

    if out is not None:
        os.makedirs(out, exist_ok=True)
    try:
        report = predicted_constants(config.model, config.potential)
        _emit("constants.json", lambda p: _write_text(p, report.to_json()))
        ch = config.coupling_h if config.coupling_h is not None \
            else config.h
        V_ref = (_reference_potential(config.potential, report)
                 if report.regime == "multi-well" else config.potential)
        gs = [g_of_E(V_ref, E, tol=config.coupling_tol, h=ch)
              for E in config.depths]
        table = CouplingTable(config.depths, gs)
        _emit("couplings.csv", lambda p: couplings_to_csv(table, p))
        rng = RngState(config.seed)
        estimates = estimate_ids_dirichlet(
            config.model, config.potential,
            [-E for E in config.depths], config.side, config.h,
            config.realizations, rng, chain=config.chain,
            dim=config.dim, workers=config.workers,
        )
        _emit("ids.csv", lambda p: ids_to_csv(estimates, p))
        points = [(E, est.n_hat)
                  for E, est in zip(config.depths, estimates)]
        fit = fit_tail(points, table, report.regressor,
                       predicted=report.slope)
        _emit("fit.csv", lambda p: fit_to_csv(fit, p))
    except Exception as exc:
        _write_manifest("aborted", exc)
        raise
    _write_manifest("ok")
    if out is not None:
        files.append("manifest.json")
    return TailBundle(
        estimates=tuple(estimates), fit=fit, report=report, table=table,
        files=tuple(sorted(files)),
    )


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text + "\n")


def realization_field(model, V, side: float, h: float, rng: RngState,
                      chain: ChainSettings | None = None,
                      dim: int | None = None,
                      boundary: str = "dirichlet"):
    """Field of the first realization a fresh estimator rng would draw.

    Returns (field array, grid); used for optional field dumps.
    """
    d = _resolved_dim(V, dim)
    settings = chain if chain is not None else _DEFAULT_CHAIN
    child = rng.spawn(1)[0]
    if boundary == "dirichlet":
        grid = GridSpec(Box(d, side), h)
        reach = 0.0 if V is None else max(default_cutoff(V),
                                          V.compact_reach())
        sample_box = Box(d, side + 2.0 * reach) if reach > 0 else grid.box
        omega = _draw_configuration(model, sample_box, settings, child,
                                    periodic=False)
        return _field_for(V, omega, grid), grid
    if boundary != "periodic":
        raise ConfigError("boundary must be 'dirichlet' or 'periodic'")
    reach = model.interaction_range if model is not None else 0.0
    if side <= 2.0 * reach:
        raise BoxTooSmall(
            f"torus side {side} must exceed twice the range {reach}"
        )
    box = Box(d, side, periodic=True)
    grid = GridSpec(box, h, "bloch", (0.0,) * d)
    omega = _draw_configuration(model, box, settings, child, periodic=True)
    return _field_for(V, omega, grid), grid
