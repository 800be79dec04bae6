"""Command-line entry point: configs, presets, runs, sweeps, reports.

Scenario files are TOML with a strict schema (unknown keys are errors).
Every run writes its outputs plus one manifest that references each
emitted file exactly once and echoes the fully resolved configuration,
so a rerun from the manifest reproduces the bytes.

Exit codes: 0 success, 2 configuration/validation, 3 numerical failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # stdlib from 3.11 on
    import tomli as tomllib

from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import __version__, equilibria, model_core, ode_sim, pde_sim, \
    stability
from .errors import (
    DietSwitchError,
    ParseError,
    ValidationError,
)

OUT_ENV_VAR = "DIETSWITCH_OUT"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICS = 3
EXIT_IO = 4

MODES = ("ode_meso", "ode_macro", "ode_micro", "pde_meso", "pde_macro")

PRESET_NAMES = (
    "paper-coexistence",
    "paper-extinction",
    "paper-nonunique",
    "paper-pde-coexistence",
    "paper-pde-extinction",
    "micro-validation",
)

# schema: nested key -> set of allowed child keys (strict parsing)
_TOP_KEYS = {"name", "mode", "t_end", "seed", "model", "grid", "init",
             "controls", "outputs"}
_MODEL_KEYS = {"params", "phi", "psi", "micro"}
_PARAMS_KEYS = {"a", "b", "eta_a", "eta_b", "eta_v",
                "d_a", "d_b", "d_v", "epsilon"}
_MICRO_KEYS = {"r1", "r2", "A1", "A2", "p1", "p2", "pV", "k1", "k2", "kV",
               "delta", "epsilon", "D1", "D2", "DV", "Phi", "Psi"}
_RATE_KEYS = {
    "affine": {"form", "slope", "intercept"},
    "step": {"form", "low", "high", "threshold"},
    "table": {"form", "breakpoints", "values"},
    "scaled": {"form", "omega1", "omega2", "base"},
}
_GRID_KEYS = {"n_cells", "length"}
_INIT_KEYS = {"values", "profiles", "path"}
_CONTROLS_KEYS = {"rtol", "atol", "cfl", "tol_closure", "dt_max", "dt_init"}
_OUTPUTS_KEYS = {"dir", "snapshot_times", "formats"}

_MODE_COLUMNS = {
    "ode_meso": ("u_a", "u_b", "v"),
    "ode_macro": ("u", "v"),
    "ode_micro": ("s1", "s2", "U1", "U2", "V"),
    "pde_meso": ("u_a", "u_b", "v"),
    "pde_macro": ("u", "v"),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully resolved scenario; equality compares the normalized content."""

    name: str
    mode: str
    t_end: float
    seed: int
    model: dict
    grid: dict | None
    init: dict
    controls: dict
    outputs: dict

    def as_dict(self):
        d = {"name": self.name, "mode": self.mode, "t_end": self.t_end,
             "seed": self.seed, "model": self.model, "init": self.init,
             "controls": self.controls, "outputs": self.outputs}
        if self.grid is not None:
            d["grid"] = self.grid
        return d


# ---------------------------------------------------------------------------
# parsing and validation
# ---------------------------------------------------------------------------

def _check_keys(table, allowed, ctx, path, errors):
    for key in table:
        if key not in allowed:
            errors.append(f"unknown key {ctx}.{key}" if ctx else
                          f"unknown key {key}")


def _norm_float(val, ctx, errors):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        errors.append(f"{ctx} must be a number, got {val!r}")
        return 0.0
    return float(val)


def _norm_rate(spec, ctx, errors):
    if not isinstance(spec, dict):
        errors.append(f"{ctx} must be a table with a 'form' key")
        return None
    form = spec.get("form")
    if form not in _RATE_KEYS:
        errors.append(f"{ctx}.form must be one of {sorted(_RATE_KEYS)}, "
                      f"got {form!r}")
        return None
    _check_keys(spec, _RATE_KEYS[form], ctx, None, errors)
    out = {"form": form}
    if form == "affine":
        out["slope"] = _norm_float(spec.get("slope", 0.0), f"{ctx}.slope",
                                   errors)
        if "intercept" not in spec:
            errors.append(f"{ctx}.intercept is required")
            out["intercept"] = 0.0
        else:
            out["intercept"] = _norm_float(spec["intercept"],
                                           f"{ctx}.intercept", errors)
    elif form == "step":
        for k in ("low", "high", "threshold"):
            if k not in spec:
                errors.append(f"{ctx}.{k} is required")
                out[k] = 0.0
            else:
                out[k] = _norm_float(spec[k], f"{ctx}.{k}", errors)
    elif form == "table":
        for k in ("breakpoints", "values"):
            if k not in spec or not isinstance(spec[k], list):
                errors.append(f"{ctx}.{k} must be an array")
                out[k] = []
            else:
                out[k] = [_norm_float(x, f"{ctx}.{k}[]", errors)
                          for x in spec[k]]
    else:  # scaled
        for k in ("omega1", "omega2"):
            if k not in spec:
                errors.append(f"{ctx}.{k} is required")
                out[k] = 0.0
            else:
                out[k] = _norm_float(spec[k], f"{ctx}.{k}", errors)
        out["base"] = _norm_rate(spec.get("base"), f"{ctx}.base", errors)
    return out


def build_rate(spec):
    """Rate object from a normalized rate table."""
    form = spec["form"]
    if form == "affine":
        return model_core.AffineRate(spec["slope"], spec["intercept"])
    if form == "step":
        return model_core.StepRate(spec["low"], spec["high"],
                                   spec["threshold"],
                                   allow_h1_violation=True)
    if form == "table":
        return model_core.TableRate(spec["breakpoints"], spec["values"])
    return model_core.ScaledRate(spec["omega1"], spec["omega2"],
                                 build_rate(spec["base"]))


def _parse_raw(raw, path, default_name):
    errors = []
    _check_keys(raw, _TOP_KEYS, "", path, errors)

    mode = raw.get("mode")
    if mode not in MODES:
        errors.append(f"mode must be one of {MODES}, got {mode!r}")
        mode = "ode_meso"
    name = raw.get("name", default_name)
    if not isinstance(name, str) or not name:
        errors.append(f"name must be a nonempty string, got {name!r}")
        name = default_name

    t_end = raw.get("t_end")
    if t_end is None:
        errors.append("t_end is required")
        t_end = 1.0
    else:
        t_end = _norm_float(t_end, "t_end", errors)
        if t_end <= 0:
            errors.append(f"t_end must be positive, got {t_end}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        errors.append(f"seed must be an integer, got {seed!r}")
        seed = 0

    model_raw = raw.get("model")
    model = {}
    if not isinstance(model_raw, dict):
        errors.append("a [model] table is required")
    else:
        _check_keys(model_raw, _MODEL_KEYS, "model", path, errors)
        if mode == "ode_micro":
            micro = model_raw.get("micro")
            if not isinstance(micro, dict):
                errors.append("[model.micro] is required for ode_micro mode")
            else:
                _check_keys(micro, _MICRO_KEYS, "model.micro", path, errors)
                m = {}
                for k in sorted(_MICRO_KEYS - {"Phi", "Psi", "D1", "D2",
                                               "DV"}):
                    if k not in micro:
                        errors.append(f"model.micro.{k} is required")
                    else:
                        m[k] = _norm_float(micro[k], f"model.micro.{k}",
                                           errors)
                for k in ("D1", "D2", "DV"):
                    m[k] = _norm_float(micro.get(k, 0.0), f"model.micro.{k}",
                                       errors)
                for k in ("Phi", "Psi"):
                    if k not in micro:
                        errors.append(f"model.micro.{k} is required")
                    else:
                        m[k] = _norm_rate(micro[k], f"model.micro.{k}",
                                          errors)
                model["micro"] = m
        else:
            params = model_raw.get("params")
            if not isinstance(params, dict):
                errors.append("[model.params] is required")
            else:
                _check_keys(params, _PARAMS_KEYS, "model.params", path,
                            errors)
                pr = {}
                for k in ("a", "b", "eta_a", "eta_b", "eta_v"):
                    if k not in params:
                        errors.append(f"model.params.{k} is required")
                    else:
                        pr[k] = _norm_float(params[k], f"model.params.{k}",
                                            errors)
                for k in ("d_a", "d_b", "d_v"):
                    pr[k] = _norm_float(params.get(k, 0.0),
                                        f"model.params.{k}", errors)
                if "epsilon" in params:
                    pr["epsilon"] = _norm_float(params["epsilon"],
                                                "model.params.epsilon",
                                                errors)
                model["params"] = pr
            for k in ("phi", "psi"):
                if k not in model_raw:
                    errors.append(f"[model.{k}] is required")
                else:
                    model[k] = _norm_rate(model_raw[k], f"model.{k}", errors)

    grid = None
    if mode.startswith("pde"):
        grid_raw = raw.get("grid")
        if not isinstance(grid_raw, dict):
            errors.append("a [grid] table is required for PDE modes")
        else:
            _check_keys(grid_raw, _GRID_KEYS, "grid", path, errors)
            n_cells = grid_raw.get("n_cells")
            if isinstance(n_cells, bool) or not isinstance(n_cells, int):
                errors.append(f"grid.n_cells must be an integer, "
                              f"got {n_cells!r}")
                n_cells = 8
            grid = {"n_cells": n_cells,
                    "length": _norm_float(grid_raw.get("length", 1.0),
                                          "grid.length", errors)}
    elif "grid" in raw:
        errors.append("a [grid] table is only valid in PDE modes")

    init_raw = raw.get("init")
    init = {}
    if not isinstance(init_raw, dict):
        errors.append("an [init] table is required")
    else:
        _check_keys(init_raw, _INIT_KEYS, "init", path, errors)
        given = [k for k in ("values", "profiles", "path") if k in init_raw]
        if len(given) != 1:
            errors.append("init must give exactly one of values, profiles, "
                          "path")
        elif given[0] == "values":
            vals = init_raw["values"]
            if not isinstance(vals, list):
                errors.append("init.values must be an array")
            else:
                init["values"] = [_norm_float(x, "init.values[]", errors)
                                  for x in vals]
        elif given[0] == "profiles":
            prof = init_raw["profiles"]
            if not isinstance(prof, dict):
                errors.append("init.profiles must be a table")
            else:
                cols = _MODE_COLUMNS[mode]
                _check_keys(prof, set(cols), "init.profiles", path, errors)
                out = {}
                for k in cols:
                    if k not in prof:
                        errors.append(f"init.profiles.{k} is required")
                    elif isinstance(prof[k], str):
                        out[k] = prof[k]
                    elif isinstance(prof[k], list):
                        out[k] = [_norm_float(x, f"init.profiles.{k}[]",
                                              errors) for x in prof[k]]
                    else:
                        errors.append(f"init.profiles.{k} must be a profile "
                                      f"name or an array")
                init["profiles"] = out
        else:
            ipath = init_raw["path"]
            if not isinstance(ipath, str):
                errors.append("init.path must be a string")
            else:
                resolved = os.path.join(os.path.dirname(path or ""), ipath) \
                    if path else ipath
                if not os.path.exists(resolved):
                    errors.append(f"init.path does not exist: {resolved}")
                init["path"] = resolved

    controls_raw = raw.get("controls", {})
    controls = {}
    if not isinstance(controls_raw, dict):
        errors.append("[controls] must be a table")
    else:
        _check_keys(controls_raw, _CONTROLS_KEYS, "controls", path, errors)
        for k in sorted(controls_raw):
            if k in _CONTROLS_KEYS:
                controls[k] = _norm_float(controls_raw[k], f"controls.{k}",
                                          errors)

    outputs_raw = raw.get("outputs", {})
    outputs = {}
    if not isinstance(outputs_raw, dict):
        errors.append("[outputs] must be a table")
    else:
        _check_keys(outputs_raw, _OUTPUTS_KEYS, "outputs", path, errors)
        if "dir" in outputs_raw:
            if not isinstance(outputs_raw["dir"], str):
                errors.append("outputs.dir must be a string")
            else:
                outputs["dir"] = outputs_raw["dir"]
        if "snapshot_times" in outputs_raw:
            st = outputs_raw["snapshot_times"]
            if not isinstance(st, list):
                errors.append("outputs.snapshot_times must be an array")
            else:
                outputs["snapshot_times"] = [
                    _norm_float(x, "outputs.snapshot_times[]", errors)
                    for x in st]
        fmts = outputs_raw.get("formats", ["csv", "json"])
        if (not isinstance(fmts, list)
                or not all(f in ("csv", "json") for f in fmts)):
            errors.append("outputs.formats entries must be 'csv' or 'json'")
            fmts = ["csv", "json"]
        outputs["formats"] = sorted(set(fmts))
    if "formats" not in outputs:
        outputs["formats"] = ["csv", "json"]

    if errors:
        raise ValidationError("; ".join(errors))

    cfg = ScenarioConfig(name=name, mode=mode, t_end=t_end, seed=seed,
                         model=model, grid=grid, init=init,
                         controls=controls, outputs=outputs)
    _validate_semantics(cfg)
    return cfg


def _validate_semantics(cfg):
    """Build the model objects once so bad numbers fail at parse time."""
    errors = []
    try:
        build_model(cfg)
    except (ValidationError, DietSwitchError) as exc:
        errors.append(str(exc))
    ncomp = len(_MODE_COLUMNS[cfg.mode])
    if "values" in cfg.init:
        want = ncomp if cfg.mode.startswith("ode") else None
        if want is not None and len(cfg.init["values"]) != want:
            errors.append(f"init.values must have {want} entries for "
                          f"{cfg.mode}, got {len(cfg.init['values'])}")
        if cfg.mode.startswith("pde"):
            errors.append("PDE modes need init.profiles or init.path")
    if "profiles" in cfg.init and cfg.mode.startswith("ode"):
        errors.append("ODE modes need init.values")
    if cfg.mode.startswith("pde"):
        for fname, spec in cfg.init.get("profiles", {}).items():
            if isinstance(spec, str) and spec not in pde_sim.PROFILES:
                errors.append(f"unknown profile {spec!r} for "
                              f"init.profiles.{fname}")
            if isinstance(spec, list) and cfg.grid and \
                    len(spec) != cfg.grid["n_cells"]:
                errors.append(f"init.profiles.{fname} has {len(spec)} "
                              f"entries, grid has {cfg.grid['n_cells']}")
    if errors:
        raise ValidationError("; ".join(errors))


def parse_config(path):
    """Strictly parse a scenario TOML file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(str(exc), path=str(path)) from exc
    default_name = os.path.splitext(os.path.basename(path))[0]
    return _parse_raw(raw, str(path), default_name)


def load_preset(name):
    if name not in PRESET_NAMES:
        raise ValidationError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    ref = resources.files("dietswitch").joinpath("presets", name + ".toml")
    raw = tomllib.loads(ref.read_text(encoding="utf-8"))
    return _parse_raw(raw, None, name)


def apply_overrides(cfg, overrides):
    """Re-parse with dotted key=value overrides applied to the raw tree."""
    if not overrides:
        return cfg
    raw = cfg.as_dict()
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not key=value")
        dotted, _, text = item.partition("=")
        keys = dotted.strip().split(".")
        try:
            value = tomllib.loads(f"v = {text}")["v"]
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(
                f"override value {text!r} for {dotted} is not a TOML "
                f"literal: {exc}") from exc
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValidationError(
                    f"override path {dotted} crosses a non-table value")
        node[keys[-1]] = value
    return _parse_raw(raw, None, cfg.name)


# ---------------------------------------------------------------------------
# canonical emission (round-trip contract)
# ---------------------------------------------------------------------------

def _toml_scalar(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if v != v or v in (float("inf"), float("-inf")):
            raise ValidationError(f"non-finite float {v} cannot be emitted")
        out = repr(v)
        return out if ("." in out or "e" in out or "E" in out) else out + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise ValidationError(f"cannot emit {type(v).__name__} as TOML")


def _emit_table(lines, prefix, table):
    scalars = [(k, v) for k, v in table.items() if not isinstance(v, dict)]
    subtables = [(k, v) for k, v in table.items() if isinstance(v, dict)]
    if prefix and (scalars or not subtables):
        lines.append(f"[{prefix}]")
    for k, v in sorted(scalars):
        lines.append(f"{k} = {_toml_scalar(v)}")
    if scalars:
        lines.append("")
    for k, v in sorted(subtables):
        _emit_table(lines, f"{prefix}.{k}" if prefix else k, v)


def emit_config(cfg):
    """Canonical TOML text; parse_config of it reproduces cfg."""
    d = cfg.as_dict()
    lines = []
    for k in ("name", "mode", "t_end", "seed"):
        lines.append(f"{k} = {_toml_scalar(d[k])}")
    lines.append("")
    for k in ("model", "grid", "init", "controls", "outputs"):
        if k in d and d[k]:
            _emit_table(lines, k, d[k])
    text = "\n".join(lines)
    return text if text.endswith("\n") else text + "\n"


# ---------------------------------------------------------------------------
# model/state construction
# ---------------------------------------------------------------------------

def build_model(cfg):
    """(params-or-micro, phi, psi) objects for the scenario."""
    if cfg.mode == "ode_micro":
        m = dict(cfg.model["micro"])
        phi = build_rate(m.pop("Phi"))
        psi = build_rate(m.pop("Psi"))
        micro = model_core.MicroParams(Phi=phi, Psi=psi, **m)
        return micro, phi, psi
    params = model_core.ModelParams(**cfg.model["params"])
    return (params, build_rate(cfg.model["phi"]),
            build_rate(cfg.model["psi"]))


def _grid_of(cfg):
    return pde_sim.Grid1D(n_cells=cfg.grid["n_cells"],
                          length=cfg.grid["length"])


def _init_fields(cfg, grid):
    cols = _MODE_COLUMNS[cfg.mode]
    if "profiles" in cfg.init:
        x = grid.cell_centers()
        out = {}
        for k in cols:
            spec = cfg.init["profiles"][k]
            out[k] = (pde_sim.evaluate_profile(spec, x)
                      if isinstance(spec, str)
                      else np.asarray(spec, dtype=float))
        return out
    # CSV path: header x,<field names>; one row per cell
    data = np.genfromtxt(cfg.init["path"], delimiter=",", names=True)
    out = {}
    for k in cols:
        if k not in (data.dtype.names or ()):
            raise ValidationError(
                f"init file lacks column {k!r}: {cfg.init['path']}")
        arr = np.atleast_1d(np.asarray(data[k], dtype=float))
        if arr.size != grid.n_cells:
            raise ValidationError(
                f"init file column {k!r} has {arr.size} rows, grid "
                f"has {grid.n_cells}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(
                f"init file column {k!r} has non-finite entries: "
                f"{cfg.init['path']}")
        out[k] = arr
    return out


def _controls_of(cfg):
    if not cfg.controls:
        return None
    return ode_sim.Controls(**cfg.controls)


# ---------------------------------------------------------------------------
# scenario execution
# ---------------------------------------------------------------------------

def _ode_diag_rows(cfg, model, phi, psi, traj):
    """Cheap per-step series for the ODE modes."""
    rows = []
    if cfg.mode == "ode_meso":
        for t, (ua, ub, v) in zip(traj.times, traj.states):
            q = model_core.eval_Q(model, phi, psi, ua, ub, v)
            rows.append((t, abs(q), ua + ub, v))
        return ("t", "q_abs", "mass_u", "mass_v"), rows
    if cfg.mode == "ode_macro":
        for t, (u, v) in zip(traj.times, traj.states):
            rows.append((t, u, v))
        return ("t", "mass_u", "mass_v"), rows
    for t, (s1, s2, U1, U2, V) in zip(traj.times, traj.states):
        m1, m2 = model_core.micro_slow_manifold(model, U1, U2, V)
        rows.append((t, abs(s1 - m1), abs(s2 - m2)))
    return ("t", "s1_manifold_gap", "s2_manifold_gap"), rows


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def _pde_diag_rows(traj):
    header = ("t", "entropy", "grad_ua_sq", "grad_ub_sq", "q_l2_sq",
              "mass_u", "mass_v", "v_sup", "positivity_violation")
    rows = [(r.t, r.entropy, r.grad_ua_sq, r.grad_ub_sq, r.q_l2_sq,
             r.mass_u, r.mass_v, r.v_sup, r.positivity_violation)
            for r in traj.diagnostics]
    return header, rows


def run_scenario(cfg, out_dir):
    """Integrate per cfg.mode; emit files; return the manifest dict."""
    model, phi, psi = build_model(cfg)
    controls = _controls_of(cfg)
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    summary = {}
    csv_on = "csv" in cfg.outputs["formats"]

    if cfg.mode.startswith("ode"):
        if cfg.mode == "ode_meso":
            traj = ode_sim.integrate_meso_ode(model, phi, psi,
                                              cfg.init["values"], cfg.t_end,
                                              controls=controls)
        elif cfg.mode == "ode_macro":
            traj = ode_sim.integrate_macro_ode(model, phi, psi,
                                               cfg.init["values"], cfg.t_end,
                                               controls=controls)
        else:
            traj = ode_sim.integrate_micro_ode(model, cfg.init["values"],
                                               cfg.t_end, controls=controls)
        if csv_on:
            tpath = os.path.join(out_dir, "trajectory.csv")
            traj.to_csv(tpath)
            files["trajectory"] = "trajectory.csv"
            header, rows = _ode_diag_rows(cfg, model, phi, psi, traj)
            dpath = os.path.join(out_dir, "diagnostics.csv")
            _write_csv(dpath, header, rows)
            files["diagnostics"] = "diagnostics.csv"
        summary["final_state"] = {c: float(x) for c, x
                                  in zip(traj.columns, traj.states[-1])}
        summary["stats"] = {k: (float(v) if isinstance(v, float) else v)
                            for k, v in traj.stats.items()}
        summary["scheme"] = traj.scheme
    else:
        grid = _grid_of(cfg)
        fields = _init_fields(cfg, grid)
        snaps = cfg.outputs.get("snapshot_times")
        if cfg.mode == "pde_meso":
            init = model_core.MesoState(fields["u_a"], fields["u_b"],
                                        fields["v"])
            traj = pde_sim.integrate_meso_pde(model, phi, psi, init,
                                              cfg.t_end, controls=controls,
                                              snapshot_times=snaps,
                                              grid=grid)
        else:
            init = model_core.MacroState(fields["u"], fields["v"])
            traj = pde_sim.integrate_macro_pde(model, phi, psi, init,
                                               cfg.t_end, controls=controls,
                                               snapshot_times=snaps,
                                               grid=grid)
        if csv_on:
            tpath = os.path.join(out_dir, "trajectory.csv")
            traj.to_csv(tpath, manifest=False)
            files["trajectory"] = "trajectory.csv"
            header, rows = _pde_diag_rows(traj)
            dpath = os.path.join(out_dir, "diagnostics.csv")
            _write_csv(dpath, header, rows)
            files["diagnostics"] = "diagnostics.csv"
        fin = traj.final
        summary["final_state_means"] = {
            c: float(np.mean(np.asarray(getattr(fin, c))))
            for c in traj.columns}
        summary["times"] = [float(t) for t in traj.times]
        summary["stats"] = {k: (float(v) if isinstance(v, (int, float))
                                else v) for k, v in traj.stats.items()}
        summary["scheme"] = traj.scheme
        summary["grid"] = cfg.grid

    manifest = {
        "name": cfg.name,
        "mode": cfg.mode,
        "version": __version__,
        "config": cfg.as_dict(),
        "files": files,
        "summary": summary,
    }
    _write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def _write_manifest(path, manifest):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _sweep_worker(args):
    cfg_dict, param, value, out_dir, what, n_max, eps_list = args
    try:
        cfg = _parse_raw(cfg_dict, None, cfg_dict.get("name", "scenario"))
        cfg = apply_overrides(cfg, [f"{param}={value!r}"])
        if what == "run":
            manifest = run_scenario(cfg, out_dir)
            summ = manifest["summary"]
            row = {"value": value, "status": "ok"}
            final = summ.get("final_state") or summ.get("final_state_means")
            for k, v in final.items():
                row[f"final_{k}"] = v
            stats = summ.get("stats", {})
            for k in ("q_l2_sq_steps", "steps", "steps_accepted"):
                if k in stats:
                    row[k] = stats[k]
            return row
        report = report_stability(cfg, out_dir, n_max=n_max,
                                  eps_list=eps_list)
        row = {"value": value, "status": "ok",
               "alpha": report["alpha"],
               "n_equilibria": len(report["reports"])}
        for entry in report["reports"]:
            if entry["equilibrium"]["kind"] == "coexistence":
                dets = [_det2(m["N_n"]) for m in entry["modes"]]
                trs = [m["N_n"][0][0] + m["N_n"][1][1]
                       for m in entry["modes"]]
                row["coexistence_verdict"] = entry["overall_verdict"]
                row["min_det_N_n"] = min(dets)
                row["max_tr_N_n"] = max(trs)
        return row
    except DietSwitchError as exc:
        return {"value": value, "status": "failed",
                "error": f"{type(exc).__name__}: {exc}"}


def _det2(m):
    return m[0][0] * m[1][1] - m[0][1] * m[1][0]


def run_sweep(cfg, param, values, out_dir, what="run", jobs=1,
              n_max=64, eps_list=None):
    """One scenario per value; aggregate one summary row per value.

    Failed values are reported in the manifest without aborting the rest.
    """
    if not values:
        raise ValidationError("sweep needs a nonempty value list")
    os.makedirs(out_dir, exist_ok=True)
    tasks = []
    for v in values:
        sub = os.path.join(out_dir, f"{param.split('.')[-1]}={v!r}")
        tasks.append((cfg.as_dict(), param, v, sub, what, n_max, eps_list))
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_worker, tasks))
    else:
        rows = [_sweep_worker(t) for t in tasks]

    keys = ["value", "status"]
    for row in rows:
        for k in row:
            if k not in keys and k != "error":
                keys.append(k)
    spath = os.path.join(out_dir, "summary.csv")
    with open(spath, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            cells = []
            for k in keys:
                val = row.get(k, "")
                if isinstance(val, (int, float)) and not isinstance(val,
                                                                    bool):
                    cells.append(repr(val))
                else:
                    cells.append(str(val))
            fh.write(",".join(cells) + "\n")

    failed = [row for row in rows if row["status"] != "ok"]
    manifest = {
        "name": cfg.name,
        "mode": cfg.mode,
        "version": __version__,
        "sweep": {"parameter": param, "values": list(values), "what": what},
        "config": cfg.as_dict(),
        "files": {"summary": "summary.csv"},
        "subruns": [f"{param.split('.')[-1]}={v!r}" for v in values],
        "failures": [{"value": row["value"], "error": row["error"]}
                     for row in failed],
    }
    _write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest, rows


# ---------------------------------------------------------------------------
# stability / equilibria reports
# ---------------------------------------------------------------------------

_MICRO_ANALYSIS_MSG = (
    "steady-state analysis needs rates defined at the capacity point; "
    "resource-explicit coefficients map onto capacity-bounded rates, so "
    "provide mesoscopic params/phi/psi instead")


def report_stability(cfg, out_dir, n_max=64, eps_list=None):
    """Stability report JSON for every homogeneous steady state."""
    if cfg.mode == "ode_micro":
        raise ValidationError(_MICRO_ANALYSIS_MSG)
    model, phi, psi = build_model(cfg)
    reports = stability.stability_report(model, phi, psi, n_max=n_max,
                                         eps_list=eps_list)
    alpha = equilibria.compute_alpha(model, phi, psi)
    asym = None
    if eps_list and len(eps_list) >= 3:
        coex = [r for r in reports
                if r.equilibrium.kind == equilibria.KIND_COEXISTENCE]
        if coex:
            lam1 = stability.neumann_laplacian_eigenvalues(1.0, 1)[1]
            asym = stability.spectral_asymptotics_check(
                model, phi, psi, coex[0].equilibrium, lam1, eps_list)
    doc = {
        "name": cfg.name,
        "version": __version__,
        "alpha": alpha,
        "n_max": n_max,
        "eps_list": list(eps_list) if eps_list else [],
        "reports": [r.to_json_dict() for r in reports],
        "asymptotics": asym,
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "stability.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    manifest = {
        "name": cfg.name, "mode": cfg.mode, "version": __version__,
        "config": cfg.as_dict(), "files": {"stability": "stability.json"},
    }
    _write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return doc


def report_equilibria(cfg, out_dir):
    if cfg.mode == "ode_micro":
        raise ValidationError(_MICRO_ANALYSIS_MSG)
    model, phi, psi = build_model(cfg)
    eq_set = equilibria.enumerate_equilibria(model, phi, psi)
    uniq = equilibria.check_uniqueness_conditions(model, phi, psi)
    doc = {
        "name": cfg.name,
        "version": __version__,
        "alpha": eq_set.alpha,
        "equilibria": [
            {"kind": eq.kind, "u_bar": eq.u_bar, "v_bar": eq.v_bar,
             "lam": eq.lam, "sigma": eq.sigma, "delta": eq.delta,
             "on_discontinuity": eq.on_discontinuity,
             "residual": equilibria.steady_state_residual(model, phi, psi,
                                                          eq)}
            for eq in eq_set.items],
        "uniqueness": dataclasses.asdict(uniq),
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "equilibria.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    manifest = {
        "name": cfg.name, "mode": cfg.mode, "version": __version__,
        "config": cfg.as_dict(), "files": {"equilibria": "equilibria.json"},
    }
    _write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return doc


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _add_common(sub):
    src = sub.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="scenario TOML file")
    src.add_argument("--preset", help="named built-in scenario",
                     choices=PRESET_NAMES)
    sub.add_argument("--out", help=f"output directory (default "
                                   f"${OUT_ENV_VAR} or ./out)")
    sub.add_argument("--override", action="append", default=[],
                     metavar="KEY=VALUE",
                     help="dotted config override, repeatable")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="dietswitch",
        description="Simulation and analysis toolkit for a two-species "
                    "competition model with diet switching.")
    ap.add_argument("--version", action="version", version=__version__)
    subs = ap.add_subparsers(dest="verb", required=True)

    run = subs.add_parser("run", help="integrate one scenario")
    _add_common(run)

    sweep = subs.add_parser("sweep", help="run a scenario per value")
    _add_common(sweep)
    sweep.add_argument("--param", required=True,
                       help="dotted config path, e.g. model.params.epsilon")
    sweep.add_argument("--values", required=True,
                       help="comma-separated TOML numbers")
    sweep.add_argument("--what", choices=("run", "stability"), default="run")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--n-max", type=int, default=64)
    sweep.add_argument("--eps", default="",
                       help="comma-separated eps for mesoscopic spectra")

    stab = subs.add_parser("stability", help="stability report JSON")
    _add_common(stab)
    stab.add_argument("--n-max", type=int, default=64)
    stab.add_argument("--eps", default="",
                      help="comma-separated eps for mesoscopic spectra")

    eq = subs.add_parser("equilibria", help="steady-state report JSON")
    _add_common(eq)

    val = subs.add_parser("validate",
                          help="parse a config and echo its canonical form")
    _add_common(val)
    return ap


def _load_config(args):
    cfg = (load_preset(args.preset) if args.preset
           else parse_config(args.config))
    return apply_overrides(cfg, args.override)


def _out_dir(args, cfg, suffix=""):
    base = args.out or os.environ.get(OUT_ENV_VAR) or "out"
    leaf = cfg.name + (f"-{suffix}" if suffix else "")
    return os.path.join(base, leaf)


def _parse_values(text):
    vals = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            vals.append(tomllib.loads(f"v = {part}")["v"])
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(
                f"sweep value {part!r} is not a TOML number") from exc
    return vals


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.verb == "validate":
            sys.stdout.write(emit_config(cfg))
            return EXIT_OK
        if args.verb == "run":
            manifest = run_scenario(cfg, _out_dir(args, cfg))
            sys.stdout.write(f"ok: {cfg.name} ({cfg.mode}) -> "
                             f"{_out_dir(args, cfg)}\n")
            return EXIT_OK
        if args.verb == "sweep":
            eps = _parse_values(args.eps) if args.eps else None
            manifest, rows = run_sweep(
                cfg, args.param, _parse_values(args.values),
                _out_dir(args, cfg, "sweep"), what=args.what,
                jobs=args.jobs, n_max=args.n_max, eps_list=eps)
            n_fail = len(manifest["failures"])
            sys.stdout.write(
                f"sweep {args.param}: {len(rows) - n_fail}/{len(rows)} "
                f"values ok -> {_out_dir(args, cfg, 'sweep')}\n")
            return EXIT_NUMERICS if n_fail else EXIT_OK
        if args.verb == "stability":
            eps = _parse_values(args.eps) if args.eps else None
            report_stability(cfg, _out_dir(args, cfg, "stability"),
                             n_max=args.n_max, eps_list=eps)
            sys.stdout.write(f"ok: stability report -> "
                             f"{_out_dir(args, cfg, 'stability')}\n")
            return EXIT_OK
        report_equilibria(cfg, _out_dir(args, cfg, "equilibria"))
        sys.stdout.write(f"ok: equilibria report -> "
                         f"{_out_dir(args, cfg, 'equilibria')}\n")
        return EXIT_OK
    except (ParseError, ValidationError) as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_VALIDATION
    except OSError as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return EXIT_IO
    except DietSwitchError as exc:
        sys.stderr.write(f"numerical failure: {type(exc).__name__}: {exc}\n")
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
