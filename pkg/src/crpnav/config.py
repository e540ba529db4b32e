"""Scenario configuration files (YAML with ``include`` support)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from crpnav import design
from crpnav import dispersion as dp
from crpnav import dynamics as dyn
from crpnav import knowledge as kn
from crpnav import measurements as ms


class ConfigError(Exception):
    pass


SECTIONS = {"include", "option", "layout", "layout_file", "system", "helio", "spacecraft", "budget",
            "navcam", "isl", "knowledge", "dispersion", "seed", "samples", "workers"}


@dataclass(eq=False)
class Scenario:
    option: str = "B"
    layout: dict | None = None
    system: dyn.SystemModel = field(default_factory=dyn.SystemModel)
    spacecraft: dyn.SpacecraftModel = field(default_factory=dyn.SpacecraftModel)
    budget: kn.UncertaintyBudget = field(default_factory=kn.UncertaintyBudget)
    navcam: ms.NavCamModel = field(default_factory=ms.NavCamModel)
    isl: ms.IslModel = field(default_factory=ms.IslModel)
    P_K0: np.ndarray = field(default_factory=kn.default_pk0)
    P_D0: np.ndarray | None = None
    estimate_biases: bool = False
    cadence: float = dyn.HOUR
    schedule: str = "default"
    dispersion: dp.DispersionConfig = field(default_factory=dp.DispersionConfig)
    raw: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.dispersion.seed

    def plan_layout(self):
        if self.layout is not None:
            return self.layout
        return design.reference_layout(self.option)


def merge(base, over):
    """Recursive dict merge; values in ``over`` win."""
    out = dict(base)
    for k, v in over.items():
        out[k] = merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def read_tree(path, _seen=()):
    """Load a YAML file after merging the files it includes."""
    path = Path(path).resolve()
    if path in _seen:
        raise ConfigError(f"include cycle through {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    inc = data.pop("include", [])
    inc = [inc] if isinstance(inc, str) else inc
    tree = {}
    for item in inc:
        tree = merge(tree, read_tree(path.parent / item, _seen + (path,)))
    if "layout_file" in data:
        lf = path.parent / data.pop("layout_file")
        try:
            data["layout"] = yaml.safe_load(lf.read_text())
        except FileNotFoundError as err:
            raise ConfigError(f"layout file not found: {lf}") from err
    return merge(tree, data)


def _build(cls, values, where, rename=None):
    values = dict(values or {})
    for old, (new, conv) in (rename or {}).items():
        if old in values:
            values[new] = conv(values.pop(old))
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from err


def _number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def scenario_from_dict(tree):
    unknown = set(tree) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    option = str(tree.get("option", "B")).upper()
    layout = tree.get("layout")
    if option == "CUSTOM" and layout is None:
        raise ConfigError("option custom needs a layout or layout_file")
    if option not in ("A", "B", "CUSTOM"):
        raise ConfigError(f"option must be A, B or custom, got {option!r}")

    helio = _build(dyn.HelioElements, tree.get("helio"), "helio")
    sys_vals = dict(tree.get("system") or {})
    for key in ("mass1", "mass2"):
        if key in sys_vals:
            sys_vals["mu" + key[-1]] = dyn.G * _number(sys_vals.pop(key), f"system.{key}")
    if "pole_direction" in sys_vals:
        sys_vals["pole_direction"] = tuple(sys_vals["pole_direction"])
    system = _build(dyn.SystemModel, {**sys_vals, "helio": helio}, "system")
    spacecraft = _build(dyn.SpacecraftModel, tree.get("spacecraft"), "spacecraft")
    deg = ("thrust_dir_knowledge", "thrust_dir_dispersion")
    budget = _build(kn.UncertaintyBudget, tree.get("budget"), "budget",
                    {f"{k}_deg": (k, math.radians) for k in deg})
    navcam = _build(ms.NavCamModel, tree.get("navcam"), "navcam",
                    {"bias_angle_arcsec": ("bias_angle", lambda v: v * ms.ARCSEC)})
    isl_vals = dict(tree.get("isl") or {})
    hera = isl_vals.pop("hera_position", None)
    if hera is not None:
        isl_vals["hera"] = ms.HeraReference(tuple(float(x) for x in hera))
    isl = _build(ms.IslModel, isl_vals, "isl")

    kv = dict(tree.get("knowledge") or {})
    P_K0 = kn.default_pk0(_number(kv.pop("sigma_pos", 100.0), "knowledge.sigma_pos"),
                          _number(kv.pop("sigma_vel", 1e-3), "knowledge.sigma_vel"))
    estimate_biases = bool(kv.pop("estimate_biases", False))
    cadence = _number(kv.pop("cadence", dyn.HOUR), "knowledge.cadence")
    schedule = str(kv.pop("schedule", "default"))
    if schedule not in ("default", "empty"):
        raise ConfigError(f"knowledge.schedule must be default or empty, got {schedule!r}")
    if kv:
        raise ConfigError(f"knowledge: unknown keys {sorted(kv)}")

    dv = dict(tree.get("dispersion") or {})
    guidance = _build(dp.GuidanceConfig, dv.pop("guidance", None), "dispersion.guidance")
    P_D0 = None
    if "sigma_pos" in dv or "sigma_vel" in dv:
        P_D0 = kn.default_pk0(_number(dv.pop("sigma_pos", 100.0), "dispersion.sigma_pos"),
                              _number(dv.pop("sigma_vel", 1e-3), "dispersion.sigma_vel"))
    if "samples" in tree:
        dv["n_samples"] = tree["samples"]
    if "seed" in tree:
        dv["seed"] = tree["seed"]
    disp = _build(dp.DispersionConfig, {**dv, "guidance": guidance}, "dispersion")
    return Scenario(option if option != "CUSTOM" else "custom", layout, system, spacecraft, budget,
                    navcam, isl, P_K0, P_D0, estimate_biases, cadence, schedule, disp, tree)


def load_scenario(path=None, **overrides):
    """Scenario from a config file (or defaults) with command-line overrides."""
    tree = read_tree(path) if path is not None else {}
    for key, value in overrides.items():
        if value is not None:
            tree[key] = value
    return scenario_from_dict(tree)


def with_samples(scn, n=None, seed=None):
    kw = {}
    if n is not None:
        kw["n_samples"] = int(n)
    if seed is not None:
        kw["seed"] = int(seed)
    return replace(scn, dispersion=replace(scn.dispersion, **kw)) if kw else scn
