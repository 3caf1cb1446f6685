"""Command line front end: one JSON config in, deterministic artifacts out.

Every subcommand reads a single JSON experiment config (``--config``),
validates it strictly (unknown fields rejected, seed mandatory), runs the
matching pipeline, and writes its artifacts plus a ``manifest.json`` that
embeds the effective config. A manifest re-ingests as a config, so any
finished run can be reproduced byte-for-byte from its own output directory.

Exit codes: 0 success, 2 configuration problems, 3 numerical failures,
4 unmet structural hypotheses. Failures print a one-line JSON error record
to stderr; schema errors name the offending field by dotted path.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from .combinat import predicted_constants
from .errors import (
    BelowOnset,
    ConfigError,
    EmptyWindow,
    FactorizationBreakdown,
    GibbstailError,
    HypothesisUnmet,
    NoConvergence,
    NotInDq,
    SingularPoint,
)
from .gfunc import g_of_E
from .ids import (
    CouplingTable,
    TailConfig,
    _DEFAULT_CHAIN,
    _draw_configuration,
    _fmt,
    _package_version,
    _write_text,
    couplings_to_csv,
    estimate_ids_dirichlet,
    estimate_ids_periodic,
    ids_to_csv,
    realization_field,
    run_tail_experiment,
    sandwich_check,
)
from .pointproc import Box, model_from_json, model_to_json
from .potential import potential_from_json, potential_to_json, save_field
from .sampler import ChainSettings, RngState

_NUMERICAL_ERRORS = (NoConvergence, FactorizationBreakdown, SingularPoint,
                     BelowOnset, NotInDq, EmptyWindow)

# fields that identify the experiment; destination and parallelism are
# execution details and stay out of the hash
_HASH_EXCLUDED = ("out", "workers")

_CHAIN_FIELDS = tuple(f.name for f in dataclasses.fields(ChainSettings))


class SchemaError(ConfigError):
    """Config rejected before any compute; ``field`` is the dotted path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


# ---------------------------------------------------------------------------
# schema primitives
# ---------------------------------------------------------------------------


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check_keys(doc, path: str, allowed) -> None:
    if not isinstance(doc, dict):
        raise SchemaError(path or "config", "expected an object")
    for key in doc:
        if key not in allowed:
            raise SchemaError(_join(path, key), "unknown field")


def _get_number(doc, path, key, required=False, default=None,
                positive=False):
    if key not in doc or doc[key] is None:
        if required:
            raise SchemaError(_join(path, key), "required field missing")
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(_join(path, key), "expected a number")
    value = float(value)
    if positive and not value > 0:
        raise SchemaError(_join(path, key), "must be positive")
    return value


def _get_int(doc, path, key, required=False, default=None, minimum=None):
    if key not in doc or doc[key] is None:
        if required:
            raise SchemaError(_join(path, key), "required field missing")
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(_join(path, key), "expected an integer")
    if minimum is not None and value < minimum:
        raise SchemaError(_join(path, key), f"must be at least {minimum}")
    return value


def _get_bool(doc, path, key, default=False):
    if key not in doc or doc[key] is None:
        return default
    value = doc[key]
    if not isinstance(value, bool):
        raise SchemaError(_join(path, key), "expected true or false")
    return value


def _get_str(doc, path, key, required=False, default=None, choices=None):
    if key not in doc or doc[key] is None:
        if required:
            raise SchemaError(_join(path, key), "required field missing")
        return default
    value = doc[key]
    if not isinstance(value, str):
        raise SchemaError(_join(path, key), "expected a string")
    if choices is not None and value not in choices:
        raise SchemaError(
            _join(path, key), f"must be one of {', '.join(choices)}"
        )
    return value


def _parse_model(doc, path, required=False):
    if doc is None:
        if required:
            raise SchemaError(path, "required field missing")
        return None
    if not isinstance(doc, dict):
        raise SchemaError(path, "expected an object or null")
    try:
        return model_from_json(doc)
    except (KeyError, ValueError, TypeError, ConfigError) as exc:
        raise SchemaError(path, str(exc) or repr(exc)) from exc


def _parse_potential(doc, path, required=False):
    if doc is None:
        if required:
            raise SchemaError(path, "required field missing")
        return None
    if not isinstance(doc, dict):
        raise SchemaError(path, "expected an object or null")
    try:
        return potential_from_json(doc)
    except (KeyError, ValueError, TypeError, ConfigError) as exc:
        raise SchemaError(path, str(exc) or repr(exc)) from exc


def _parse_chain(doc, path):
    if doc is None:
        return None
    _check_keys(doc, path, _CHAIN_FIELDS)
    try:
        return ChainSettings(**doc)
    except (TypeError, ConfigError) as exc:
        raise SchemaError(path, str(exc)) from exc


def _chain_doc(chain):
    return None if chain is None else dataclasses.asdict(chain)


def _parse_schedule(value, path, positive=False):
    """Explicit list of numbers, or {kind, start, stop, count}."""
    if isinstance(value, list):
        if not value:
            raise SchemaError(path, "schedule must not be empty")
        out = []
        for i, v in enumerate(value):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError(f"{path}[{i}]", "expected a number")
            out.append(float(v))
    elif isinstance(value, dict):
        _check_keys(value, path, ("kind", "start", "stop", "count"))
        kind = _get_str(value, path, "kind", required=True,
                        choices=("geometric", "linear"))
        start = _get_number(value, path, "start", required=True)
        stop = _get_number(value, path, "stop", required=True)
        count = _get_int(value, path, "count", required=True, minimum=2)
        if kind == "geometric":
            if start == 0.0 or stop == 0.0 or (start < 0) != (stop < 0):
                raise SchemaError(
                    path, "geometric range needs nonzero same-sign endpoints"
                )
            out = [float(v) for v in np.geomspace(start, stop, count)]
        else:
            out = [float(v) for v in np.linspace(start, stop, count)]
    elif value is None:
        raise SchemaError(path, "required field missing")
    else:
        raise SchemaError(path, "expected a list of numbers or a range object")
    if positive and any(v <= 0 for v in out):
        raise SchemaError(path, "every value must be positive")
    return out


def _require_increasing(values, path):
    if any(b <= a for a, b in zip(values, values[1:])):
        raise SchemaError(path, "values must increase strictly")


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def _config_hash(effective: dict) -> str:
    doc = {k: v for k, v in effective.items() if k not in _HASH_EXCLUDED}
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("ascii")).hexdigest()


def _write_manifest(out, command, effective, status, files, error=None):
    doc = {
        "command": command,
        "config": effective,
        "config_hash": _config_hash(effective),
        "seed": effective["seed"],
        "version": _package_version(),
        "status": status,
        "files": sorted(files),
    }
    if error is not None:
        doc["error"] = {"kind": type(error).__name__, "message": str(error)}
    _write_text(os.path.join(out, "manifest.json"),
                json.dumps(doc, sort_keys=True, indent=2))


def _run_emitting(command, effective, out, body):
    """Run ``body(emit)``; write the manifest in both outcomes."""
    os.makedirs(out, exist_ok=True)
    files: list[str] = []

    def emit(name, writer):
        writer(os.path.join(out, name))
        files.append(name)

    try:
        body(emit)
    except Exception as exc:
        _write_manifest(out, command, effective, "aborted", files, exc)
        raise
    _write_manifest(out, command, effective, "ok", files)


def _dump_field(emit, model, V, side, h, seed, chain, dim, boundary):
    field, grid = realization_field(model, V, side, h, RngState(seed),
                                    chain=chain, dim=dim, boundary=boundary)

    def writer(path):
        save_field(field, grid, path[: -len(".f64")])

    emit("field.f64", writer)
    emit("field.json", lambda path: None)


# ---------------------------------------------------------------------------
# config loading and overrides
# ---------------------------------------------------------------------------


def _load_config(path, command):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("", "top-level config must be an object")
    if "config" in doc and "config_hash" in doc:
        recorded = doc.get("command")
        if recorded is not None and recorded != command:
            raise SchemaError(
                "command",
                f"manifest records a {recorded!r} run, not {command!r}",
            )
        doc = doc["config"]
        if not isinstance(doc, dict):
            raise SchemaError("config", "expected an object")
    return doc


def _apply_overrides(raw, args):
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    if getattr(args, "workers", None) is not None:
        raw["workers"] = args.workers


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_sample(raw, args):
    _check_keys(raw, "", ("model", "box", "realizations", "seed", "chain",
                          "out"))
    model = _parse_model(raw.get("model"), "model", required=True)
    box_doc = raw.get("box")
    if box_doc is None:
        raise SchemaError("box", "required field missing")
    _check_keys(box_doc, "box", ("side", "dim", "periodic"))
    side = _get_number(box_doc, "box", "side", required=True, positive=True)
    dim = _get_int(box_doc, "box", "dim", default=1, minimum=1)
    periodic = _get_bool(box_doc, "box", "periodic")
    realizations = _get_int(raw, "", "realizations", required=True,
                            minimum=1)
    seed = _get_int(raw, "", "seed", required=True, minimum=0)
    chain = _parse_chain(raw.get("chain"), "chain")
    out = _get_str(raw, "", "out", required=True)
    effective = {
        "model": model_to_json(model),
        "box": {"side": side, "dim": dim, "periodic": periodic},
        "realizations": realizations,
        "seed": seed,
        "chain": _chain_doc(chain),
        "out": out,
    }

    box = Box(dim, side, periodic=periodic)
    settings = chain if chain is not None else _DEFAULT_CHAIN
    width = max(4, len(str(realizations - 1)))

    def body(emit):
        for i, child in enumerate(RngState(seed).spawn(realizations)):
            omega = _draw_configuration(model, box, settings, child,
                                        periodic)
            points = np.asarray(omega.points, dtype=float)
            emit(f"sample_{i:0{width}d}.csv",
                 lambda path, pts=points: _write_points_csv(path, pts, dim))

    _run_emitting("sample", effective, out, body)


def _write_points_csv(path, points, dim):
    lines = [",".join(f"x{j}" for j in range(dim))]
    for row in points:
        lines.append(",".join(_fmt(c) for c in row))
    _write_text(path, "\n".join(lines))


def _cmd_ids(raw, args):
    _check_keys(raw, "", ("model", "potential", "boundary", "grids",
                          "energies", "realizations", "theta_samples",
                          "dim", "seed", "chain", "workers", "out"))
    model = _parse_model(raw.get("model"), "model")
    V = _parse_potential(raw.get("potential"), "potential")
    boundary = _get_str(raw, "", "boundary", default="dirichlet",
                        choices=("dirichlet", "periodic"))
    grids = raw.get("grids")
    if grids is None:
        raise SchemaError("grids", "required field missing")
    _check_keys(grids, "grids", ("h", "L", "n"))
    h = _get_number(grids, "grids", "h", required=True, positive=True)
    if boundary == "dirichlet":
        if "n" in grids:
            raise SchemaError("grids.n",
                              "not valid with the dirichlet boundary")
        side = _get_number(grids, "grids", "L", required=True, positive=True)
        grids_doc = {"h": h, "L": side}
    else:
        if "L" in grids:
            raise SchemaError("grids.L",
                              "not valid with the periodic boundary")
        side = _get_number(grids, "grids", "n", required=True, positive=True)
        grids_doc = {"h": h, "n": side}
    energies = _parse_schedule(raw.get("energies"), "energies")
    realizations = _get_int(raw, "", "realizations", required=True,
                            minimum=1)
    if boundary == "dirichlet" and "theta_samples" in raw:
        raise SchemaError("theta_samples",
                          "only valid with the periodic boundary")
    theta_samples = _get_int(raw, "", "theta_samples", default=8, minimum=1)
    dim = _get_int(raw, "", "dim", minimum=1)
    seed = _get_int(raw, "", "seed", required=True, minimum=0)
    chain = _parse_chain(raw.get("chain"), "chain")
    workers = _get_int(raw, "", "workers", default=1, minimum=1)
    out = _get_str(raw, "", "out", required=True)
    effective = {
        "model": None if model is None else model_to_json(model),
        "potential": None if V is None else potential_to_json(V),
        "boundary": boundary,
        "grids": grids_doc,
        "energies": energies,
        "realizations": realizations,
        "dim": dim,
        "seed": seed,
        "chain": _chain_doc(chain),
        "workers": workers,
        "out": out,
    }
    if boundary == "periodic":
        effective["theta_samples"] = theta_samples

    def body(emit):
        rng = RngState(seed)
        if boundary == "dirichlet":
            estimates = estimate_ids_dirichlet(
                model, V, energies, side, h, realizations, rng,
                chain=chain, dim=dim, workers=workers,
            )
        else:
            estimates = estimate_ids_periodic(
                model, V, energies, side, h, theta_samples, realizations,
                rng, chain=chain, dim=dim, workers=workers,
            )
        emit("ids.csv", lambda path: ids_to_csv(estimates, path))
        if args.dump_fields:
            _dump_field(emit, model, V, side, h, seed, chain, dim,
                        boundary)

    _run_emitting("ids", effective, out, body)


def _cmd_gfunc(raw, args):
    _check_keys(raw, "", ("potential", "depths", "h", "tol", "seed", "out"))
    V = _parse_potential(raw.get("potential"), "potential", required=True)
    depths = _parse_schedule(raw.get("depths"), "depths", positive=True)
    _require_increasing(depths, "depths")
    h = _get_number(raw, "", "h", required=True, positive=True)
    tol = _get_number(raw, "", "tol", default=1e-3, positive=True)
    seed = _get_int(raw, "", "seed", required=True, minimum=0)
    out = _get_str(raw, "", "out", required=True)
    effective = {
        "potential": potential_to_json(V),
        "depths": depths,
        "h": h,
        "tol": tol,
        "seed": seed,
        "out": out,
    }

    def body(emit):
        gs = [g_of_E(V, E, tol=tol, h=h) for E in depths]
        table = CouplingTable(tuple(depths), tuple(gs))
        emit("couplings.csv", lambda path: couplings_to_csv(table, path))

    _run_emitting("gfunc", effective, out, body)


def _cmd_constants(raw, args):
    _check_keys(raw, "", ("model", "potential", "seed", "out"))
    model = _parse_model(raw.get("model"), "model", required=True)
    V = _parse_potential(raw.get("potential"), "potential", required=True)
    seed = _get_int(raw, "", "seed", required=True, minimum=0)
    out = _get_str(raw, "", "out", required=True)
    effective = {
        "model": model_to_json(model),
        "potential": potential_to_json(V),
        "seed": seed,
        "out": out,
    }

    def body(emit):
        report = predicted_constants(model, V)
        emit("constants.json",
             lambda path: _write_text(path, report.to_json()))

    _run_emitting("constants", effective, out, body)


def _cmd_tail(raw, args):
    _check_keys(raw, "", ("model", "potential", "depths", "side", "h",
                          "realizations", "coupling_h", "coupling_tol",
                          "dim", "seed", "chain", "workers", "out"))
    model = _parse_model(raw.get("model"), "model")
    V = _parse_potential(raw.get("potential"), "potential", required=True)
    depths = _parse_schedule(raw.get("depths"), "depths", positive=True)
    _require_increasing(depths, "depths")
    side = _get_number(raw, "", "side", required=True, positive=True)
    h = _get_number(raw, "", "h", required=True, positive=True)
    realizations = _get_int(raw, "", "realizations", required=True,
                            minimum=1)
    coupling_h = _get_number(raw, "", "coupling_h", positive=True)
    coupling_tol = _get_number(raw, "", "coupling_tol", default=1e-3,
                               positive=True)
    dim = _get_int(raw, "", "dim", minimum=1)
    seed = _get_int(raw, "", "seed", required=True, minimum=0)
    chain = _parse_chain(raw.get("chain"), "chain")
    workers = _get_int(raw, "", "workers", default=1, minimum=1)
    out = _get_str(raw, "", "out", required=True)
    effective = {
        "model": None if model is None else model_to_json(model),
        "potential": potential_to_json(V),
        "depths": depths,
        "side": side,
        "h": h,
        "realizations": realizations,
        "coupling_h": coupling_h,
        "coupling_tol": coupling_tol,
        "dim": dim,
        "seed": seed,
        "chain": _chain_doc(chain),
        "workers": workers,
        "out": out,
    }

    config = TailConfig(
        model=model, potential=V, depths=tuple(depths), side=side, h=h,
        realizations=realizations, seed=seed, out_dir=out,
        coupling_h=coupling_h, coupling_tol=coupling_tol, chain=chain,
        dim=dim, workers=workers,
    )
    os.makedirs(out, exist_ok=True)
    extra: list[str] = []
    try:
        run_tail_experiment(config)
        if args.dump_fields:
            def emit(name, writer):
                writer(os.path.join(out, name))
                extra.append(name)

            _dump_field(emit, model, V, side, h, seed, chain, dim,
                        "dirichlet")
    finally:
        _augment_tail_manifest(out, effective, extra)


def _augment_tail_manifest(out, effective, extra_files):
    """Fold the CLI fields into the manifest the tail pipeline wrote."""
    path = os.path.join(out, "manifest.json")
    with open(path, encoding="ascii") as fh:
        doc = json.load(fh)
    doc["command"] = "tail"
    doc["config"] = effective
    doc["config_hash"] = _config_hash(effective)
    doc["files"] = sorted(set(doc.get("files", [])) | set(extra_files))
    _write_text(path, json.dumps(doc, sort_keys=True, indent=2))


def _cmd_compare(raw, args):
    _check_keys(raw, "", ("model", "potential", "depths", "n", "h",
                          "realizations", "theta_samples", "dim", "seed",
                          "chain", "workers", "out"))
    model = _parse_model(raw.get("model"), "model")
    V = _parse_potential(raw.get("potential"), "potential")
    depths = _parse_schedule(raw.get("depths"), "depths", positive=True)
    n = _get_number(raw, "", "n", required=True, positive=True)
    h = _get_number(raw, "", "h", required=True, positive=True)
    realizations = _get_int(raw, "", "realizations", required=True,
                            minimum=1)
    theta_samples = _get_int(raw, "", "theta_samples", default=8, minimum=1)
    dim = _get_int(raw, "", "dim", minimum=1)
    seed = _get_int(raw, "", "seed", required=True, minimum=0)
    chain = _parse_chain(raw.get("chain"), "chain")
    workers = _get_int(raw, "", "workers", default=1, minimum=1)
    out = _get_str(raw, "", "out", required=True)
    effective = {
        "model": None if model is None else model_to_json(model),
        "potential": None if V is None else potential_to_json(V),
        "depths": depths,
        "n": n,
        "h": h,
        "realizations": realizations,
        "theta_samples": theta_samples,
        "dim": dim,
        "seed": seed,
        "chain": _chain_doc(chain),
        "workers": workers,
        "out": out,
    }

    def body(emit):
        report = sandwich_check(
            model, V, depths, n, h, realizations, RngState(seed),
            theta_samples=theta_samples, chain=chain, dim=dim,
            workers=workers,
        )
        emit("sandwich.json",
             lambda path: _write_text(path, report.to_json()))

    _run_emitting("compare", effective, out, body)


_HANDLERS = {
    "sample": _cmd_sample,
    "ids": _cmd_ids,
    "gfunc": _cmd_gfunc,
    "constants": _cmd_constants,
    "tail": _cmd_tail,
    "compare": _cmd_compare,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gibbstail",
        description="Gibbs point process sampling and integrated density "
                    "of states estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "sample": "draw configurations from a point process model",
        "ids": "estimate the integrated density of states",
        "gfunc": "tabulate the coupling curve g(E)",
        "constants": "predict the tail slope from the model geometry",
        "tail": "run the full tail experiment (constants, couplings, "
                "counts, fit)",
        "compare": "check the periodic/Dirichlet sandwich",
    }
    for name, helptext in descriptions.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True,
                       help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed")
        p.add_argument("--out", default=None,
                       help="override the config's output directory")
        if name in ("ids", "tail", "compare"):
            p.add_argument("--workers", type=int, default=None,
                           help="override the config's worker count")
        if name in ("ids", "tail"):
            p.add_argument("--dump-fields", action="store_true",
                           dest="dump_fields",
                           help="also write the first realization's "
                                "assembled field")
    return parser


def _error_record(exc) -> dict:
    record = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, SchemaError):
        record["field"] = exc.field
    if isinstance(exc, HypothesisUnmet):
        record["check"] = exc.check
    return record


def _exit_code(exc) -> int:
    if isinstance(exc, HypothesisUnmet):
        return 4
    if isinstance(exc, _NUMERICAL_ERRORS):
        return 3
    return 2


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        raw = _load_config(args.config, args.command)
        _apply_overrides(raw, args)
        _HANDLERS[args.command](raw, args)
    except (GibbstailError, OSError) as exc:
        print(json.dumps(_error_record(exc), sort_keys=True),
              file=sys.stderr)
        return _exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
