"""Scenario configs, the embedded gallery, batch runs, sweeps and CSV output.

A scenario is a JSON document::

    {"name": "free",
     "clock": {"d": 64, "dt": 0.5},
     "rest": {"dim": 4, "spectrum": "snap_to_lattice"},
     "coupling": {"tag": "none"},
     "seed_state": {"kind": "random", "rng_seed": 0},
     "grid": null,
     "tolerances": {"kernel_eps": 1e-9, "rank_tol": 1e-9, "condition_tol": 1e-6},
     "two_clock": null}

``parse_scenario`` validates it and fills defaults; ``run_scenario`` executes
conditions, dynamics, the optional two-clock run and the equivalence pipeline.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence, TextIO

import numpy as np

from . import __version__
from .clock import FiniteClock, idealness_report, make_clock
from .dynamics import (
    StationaryState,
    extract_trajectory,
    find_nonunitary_witness,
    kernel_restriction_check,
    norm_drift,
    physical_kernel,
    prepare_stationary,
    product_seed,
    propagator_match,
    reduced_trajectory,
    unitarity_diagnostics,
)
from .equivalence import (
    build_equivalent_constraint,
    extract_propagator_family,
    generator_from_propagator,
    verify_equivalence,
)
from .errors import ChronosError, ConfigError, EmptyKernel, NonUnitaryWitness, ScenarioFailure
from .observables import (
    haar_state,
    linear_time_error,
    rate_drift,
    rate_series,
    run_two_clock,
    variance_series,
    wavepacket_state,
)
from .universe import (
    ConditionReport,
    UniverseModel,
    Verdict,
    build_additive,
    build_custom,
    build_mass_energy,
    build_product,
    check_conditions,
    lattice_energy,
    rate_operator,
)

log = logging.getLogger(__name__)

__all__ = [
    "COUPLING_TAGS",
    "CSV_COLUMNS",
    "PRESETS",
    "ClockSpec",
    "RestSpec",
    "CouplingSpec",
    "SeedSpec",
    "Tolerances",
    "TwoClockSpec",
    "ScenarioConfig",
    "RunReport",
    "parse_scenario",
    "load_scenario",
    "preset",
    "preset_text",
    "build_model",
    "run_scenario",
    "sweep_dimension",
    "emit_csv",
    "emit_sweep_csv",
    "report_json",
]

COUPLING_TAGS = ("none", "time_dependent", "dilation", "product", "klein_gordon",
                 "mass_energy", "pathological_product", "custom")
CSV_COLUMNS = ("t", "norm", "norm_drift", "gram_drift", "schrodinger_residual",
               "rate", "rate_drift", "variance", "variance_law_error")

# Lattice indices used by "snap_to_lattice": small, distinct, of both signs.
_SNAP_INDICES = (1, 3, -2, 2, -1, 4, -3, 5, -4, 6, -5, 7)
_DEFAULT_OPERATOR = (1.0, -0.5, 0.3, 0.7, -0.8, 0.2, 0.9, -0.3, 0.4, -0.6, 0.1, 0.5)


@dataclass(frozen=True)
class ClockSpec:
    d: int
    dt: float


@dataclass(frozen=True)
class RestSpec:
    dim: int
    spectrum: Any  # list of floats or "snap_to_lattice"


@dataclass(frozen=True)
class CouplingSpec:
    tag: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SeedSpec:
    kind: str  # "product" or "random"
    time_index: int = 0
    rest_vector: tuple | None = None
    rng_seed: int = 0
    weighting: str = "projector"


@dataclass(frozen=True)
class Tolerances:
    kernel_eps: float = 1e-9
    rank_tol: float = 1e-9
    condition_tol: float = 1e-6


@dataclass(frozen=True)
class TwoClockSpec:
    """External-time run of the clock+rest system.

    ``rest_state`` is ``"haar"`` (Haar-random state of the whole system),
    ``{"levels": [i, j]}`` (equal superposition of two H_R eigenstates under a
    Gaussian clock packet) or an explicit rest vector (under the packet).
    """

    rest_state: Any = "haar"
    center_fraction: float = 0.25
    width_fraction: float = 1.0 / 32.0
    rng_seed: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    clock: ClockSpec
    rest: RestSpec
    coupling: CouplingSpec
    seed_state: SeedSpec
    grid: tuple | None
    tolerances: Tolerances
    two_clock: TwoClockSpec | None = None
    base_dir: str | None = None

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "clock": asdict(self.clock),
            "rest": {"dim": self.rest.dim, "spectrum": self.rest.spectrum},
            "coupling": {"tag": self.coupling.tag, **self.coupling.params},
            "seed_state": _seed_to_dict(self.seed_state),
            "grid": list(self.grid) if self.grid is not None else None,
            "tolerances": asdict(self.tolerances),
            "two_clock": asdict(self.two_clock) if self.two_clock is not None else None,
        }
        return out

    def canonical_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def with_overrides(self, *, d: int | None = None, dt: float | None = None,
                       kernel_eps: float | None = None, condition_tol: float | None = None,
                       seed: int | None = None, rest_dim: int | None = None) -> ScenarioConfig:
        clock = ClockSpec(d if d is not None else self.clock.d,
                          dt if dt is not None else self.clock.dt)
        tol = Tolerances(
            kernel_eps if kernel_eps is not None else self.tolerances.kernel_eps,
            kernel_eps if kernel_eps is not None else self.tolerances.rank_tol,
            condition_tol if condition_tol is not None else self.tolerances.condition_tol)
        seed_state = self.seed_state
        two = self.two_clock
        if seed is not None:
            seed_state = SeedSpec(seed_state.kind, seed_state.time_index, seed_state.rest_vector,
                                  int(seed), seed_state.weighting)
            if two is not None:
                two = TwoClockSpec(two.rest_state, two.center_fraction, two.width_fraction, int(seed))
        rest = self.rest
        if rest_dim is not None:
            spectrum = rest.spectrum
            if spectrum != "snap_to_lattice":
                spectrum = list(spectrum)[:rest_dim]
                if len(spectrum) < rest_dim:
                    raise ConfigError("rest.spectrum", "override dim exceeds the listed spectrum")
            rest = RestSpec(rest_dim, spectrum)
            if two is not None and isinstance(two.rest_state, dict) and \
                    max(two.rest_state["levels"]) >= rest_dim:
                raise ConfigError("two_clock.rest_state.levels", f"must be < rest.dim={rest_dim}")
        return ScenarioConfig(self.name, clock, rest, self.coupling, seed_state, self.grid, tol,
                              two, self.base_dir)


def _seed_to_dict(s: SeedSpec) -> dict:
    out = {"kind": s.kind, "rng_seed": s.rng_seed, "weighting": s.weighting}
    if s.kind == "product":
        out["time_index"] = s.time_index
        out["rest_vector"] = list(s.rest_vector) if s.rest_vector is not None else None
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


# --------------------------------------------------------------------------- parsing

def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]


def _as_int(v, path: str, minimum: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (isinstance(v, float) and not v.is_integer()):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    v = int(v)
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {v}")
    return v


def _as_float(v, path: str, positive: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and v <= 0:
        raise ConfigError(path, f"must be > 0, got {v}")
    return v


def _as_float_list(v, path: str, length: int | None = None) -> list[float]:
    if not isinstance(v, (list, tuple)):
        raise ConfigError(path, f"expected a list of numbers, got {type(v).__name__}")
    out = [_as_float(x, f"{path}[{i}]") for i, x in enumerate(v)]
    if length is not None and len(out) != length:
        raise ConfigError(path, f"expected {length} values, got {len(out)}")
    return out


def _check_keys(obj: dict, allowed: Iterable[str], path: str) -> None:
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}" if path else extra[0], "unknown field")


def _parse_coupling(raw, rest_dim: int) -> CouplingSpec:
    if isinstance(raw, str):
        raw = {"tag": raw}
    if not isinstance(raw, dict):
        raise ConfigError("coupling", "expected an object with a 'tag'")
    tag = _require(raw, "tag", "coupling")
    if tag not in COUPLING_TAGS:
        raise ConfigError("coupling.tag", f"unknown coupling tag {tag!r}")
    p = {k: v for k, v in raw.items() if k != "tag"}
    out: dict[str, Any] = {}
    if tag in ("none", "klein_gordon"):
        _check_keys(p, (), "coupling")
    elif tag == "time_dependent":
        _check_keys(p, ("profile", "amplitude", "operator"), "coupling")
        profile = p.get("profile", "sin")
        if isinstance(profile, str):
            if profile not in ("sin", "cos"):
                raise ConfigError("coupling.profile", f"unknown profile {profile!r}")
        else:
            profile = _as_float_list(profile, "coupling.profile")
        out["profile"] = profile
        out["amplitude"] = _as_float(p.get("amplitude", 0.3), "coupling.amplitude")
        op = p.get("operator")
        out["operator"] = (_as_float_list(op, "coupling.operator", rest_dim) if op is not None
                           else list(_default_operator(rest_dim)))
    elif tag == "dilation":
        _check_keys(p, ("g", "tune_kernel", "tuned_index"), "coupling")
        out["g"] = _as_float(_require(p, "g", "coupling"), "coupling.g")
        tune = p.get("tune_kernel", False)
        if not isinstance(tune, bool):
            raise ConfigError("coupling.tune_kernel", "expected true or false")
        out["tune_kernel"] = tune
        idx = _as_int(p.get("tuned_index", rest_dim // 2), "coupling.tuned_index", 0)
        if idx >= rest_dim:
            raise ConfigError("coupling.tuned_index", f"must be < rest.dim={rest_dim}")
        out["tuned_index"] = idx
        if tune and out["g"] == 0:
            raise ConfigError("coupling.g", "kernel tuning needs g != 0")
    elif tag == "product":
        _check_keys(p, ("factors",), "coupling")
        factors = _require(p, "factors", "coupling")
        if not isinstance(factors, list) or not factors:
            raise ConfigError("coupling.factors", "expected a non-empty list of factors")
        parsed = []
        for i, fac in enumerate(factors):
            fpath = f"coupling.factors[{i}]"
            if not isinstance(fac, list) or not fac:
                raise ConfigError(fpath, "expected a non-empty list of [coef, power_HC, power_HR] terms")
            terms = []
            for j, term in enumerate(fac):
                tpath = f"{fpath}[{j}]"
                if not isinstance(term, list) or len(term) != 3:
                    raise ConfigError(tpath, "expected [coef, power_HC, power_HR]")
                terms.append([_as_float(term[0], tpath + "[0]"), _as_int(term[1], tpath + "[1]", 0),
                              _as_int(term[2], tpath + "[2]", 0)])
            parsed.append(terms)
        out["factors"] = parsed
    elif tag == "mass_energy":
        _check_keys(p, ("cm_dim", "m", "lambda_profile", "cm_spacing"), "coupling")
        cm = _as_int(_require(p, "cm_dim", "coupling"), "coupling.cm_dim", 2)
        out["cm_dim"] = cm
        out["m"] = _as_float(_require(p, "m", "coupling"), "coupling.m", positive=True)
        out["lambda_profile"] = _as_float_list(_require(p, "lambda_profile", "coupling"),
                                               "coupling.lambda_profile", cm)
        out["cm_spacing"] = _as_float(p.get("cm_spacing", 1.0), "coupling.cm_spacing", positive=True)
    elif tag == "pathological_product":
        _check_keys(p, ("zero_index",), "coupling")
        idx = _as_int(p.get("zero_index", 0), "coupling.zero_index", 0)
        if idx >= rest_dim:
            raise ConfigError("coupling.zero_index", f"must be < rest.dim={rest_dim}")
        out["zero_index"] = idx
    elif tag == "custom":
        _check_keys(p, ("matrix_file",), "coupling")
        mf = _require(p, "matrix_file", "coupling")
        if not isinstance(mf, str) or not mf:
            raise ConfigError("coupling.matrix_file", "expected a file path")
        out["matrix_file"] = mf
    return CouplingSpec(tag, out)


def _default_operator(m: int) -> tuple[float, ...]:
    base = _DEFAULT_OPERATOR
    return tuple(base[i % len(base)] for i in range(m))


def _parse_seed(raw, rest_dim: int, d: int) -> SeedSpec:
    if raw is None:
        return SeedSpec("random")
    if not isinstance(raw, dict):
        raise ConfigError("seed_state", "expected an object")
    _check_keys(raw, ("kind", "time_index", "rest_vector", "rng_seed", "weighting"), "seed_state")
    kind = raw.get("kind", "random")
    if kind not in ("random", "product"):
        raise ConfigError("seed_state.kind", f"expected 'random' or 'product', got {kind!r}")
    rng_seed = _as_int(raw.get("rng_seed", 0), "seed_state.rng_seed", 0)
    weighting = raw.get("weighting", "projector")
    if weighting not in ("projector", "group_average"):
        raise ConfigError("seed_state.weighting", f"unknown weighting {weighting!r}")
    k = 0
    vec = None
    if kind == "product":
        k = _as_int(raw.get("time_index", 0), "seed_state.time_index", 0)
        if k >= d:
            raise ConfigError("seed_state.time_index", f"must be < clock.d={d}")
        rv = raw.get("rest_vector")
        if rv is not None:
            vec = tuple(_as_float_list(rv, "seed_state.rest_vector", rest_dim))
            if not any(vec):
                raise ConfigError("seed_state.rest_vector", "must be nonzero")
    return SeedSpec(kind, k, vec, rng_seed, weighting)


def _parse_two_clock(raw, rest_dim: int) -> TwoClockSpec | None:
    if raw is None or raw is False:
        return None
    if raw is True:
        return TwoClockSpec()
    if not isinstance(raw, dict):
        raise ConfigError("two_clock", "expected an object, true, or null")
    _check_keys(raw, ("rest_state", "center_fraction", "width_fraction", "rng_seed"), "two_clock")
    rs = raw.get("rest_state", "haar")
    if isinstance(rs, str):
        if rs != "haar":
            raise ConfigError("two_clock.rest_state", f"unknown rest state {rs!r}")
    elif isinstance(rs, dict):
        _check_keys(rs, ("levels",), "two_clock.rest_state")
        lv = _require(rs, "levels", "two_clock.rest_state")
        if not isinstance(lv, list) or len(lv) != 2:
            raise ConfigError("two_clock.rest_state.levels", "expected two level indices")
        lv = [_as_int(x, f"two_clock.rest_state.levels[{i}]", 0) for i, x in enumerate(lv)]
        if max(lv) >= rest_dim or lv[0] == lv[1]:
            raise ConfigError("two_clock.rest_state.levels", "need two distinct indices < rest.dim")
        rs = {"levels": lv}
    else:
        rs = _as_float_list(rs, "two_clock.rest_state", rest_dim)
    cf = _as_float(raw.get("center_fraction", 0.25), "two_clock.center_fraction")
    wf = _as_float(raw.get("width_fraction", 1.0 / 32.0), "two_clock.width_fraction", positive=True)
    if not 0.0 <= cf < 1.0:
        raise ConfigError("two_clock.center_fraction", "must lie in [0, 1)")
    seed = _as_int(raw.get("rng_seed", 0), "two_clock.rng_seed", 0)
    return TwoClockSpec(rs, cf, wf, seed)


def parse_scenario(text: str | dict, base_dir: str | os.PathLike | None = None) -> ScenarioConfig:
    """Validate a scenario document (JSON text or an already-decoded dict)."""
    if isinstance(text, dict):
        doc = copy.deepcopy(text)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"malformed JSON: {exc.msg} at line {exc.lineno}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "top level must be an object")
    _check_keys(doc, ("name", "clock", "rest", "coupling", "seed_state", "grid", "tolerances",
                      "two_clock"), "")
    name = _require(doc, "name", "")
    if not isinstance(name, str) or not name:
        raise ConfigError("name", "expected a non-empty string")

    clock_raw = _require(doc, "clock", "")
    if not isinstance(clock_raw, dict):
        raise ConfigError("clock", "expected an object")
    _check_keys(clock_raw, ("d", "dt"), "clock")
    d = _as_int(_require(clock_raw, "d", "clock"), "clock.d", 2)
    dt = _as_float(_require(clock_raw, "dt", "clock"), "clock.dt", positive=True)

    rest_raw = doc.get("rest", {"dim": 1, "spectrum": "snap_to_lattice"})
    if not isinstance(rest_raw, dict):
        raise ConfigError("rest", "expected an object")
    _check_keys(rest_raw, ("dim", "spectrum"), "rest")
    dim = _as_int(_require(rest_raw, "dim", "rest"), "rest.dim", 1)
    spectrum = rest_raw.get("spectrum", "snap_to_lattice")
    if isinstance(spectrum, str):
        if spectrum != "snap_to_lattice":
            raise ConfigError("rest.spectrum", f"expected a list or 'snap_to_lattice', got {spectrum!r}")
    else:
        spectrum = _as_float_list(spectrum, "rest.spectrum", dim)

    coupling = _parse_coupling(doc.get("coupling", {"tag": "none"}), dim)
    if coupling.tag == "time_dependent" and not isinstance(coupling.params["profile"], str):
        if len(coupling.params["profile"]) != d:
            raise ConfigError("coupling.profile", f"expected {d} values (one per clock reading)")
    seed = _parse_seed(doc.get("seed_state"), dim, d)

    grid = doc.get("grid")
    if grid is not None:
        if not isinstance(grid, list) or not grid:
            raise ConfigError("grid", "expected a non-empty list of clock indices or null")
        grid = tuple(_as_int(g, f"grid[{i}]", 0) for i, g in enumerate(grid))
        if max(grid) >= d:
            raise ConfigError("grid", f"indices must be < clock.d={d}")

    tol_raw = doc.get("tolerances", {})
    if not isinstance(tol_raw, dict):
        raise ConfigError("tolerances", "expected an object")
    _check_keys(tol_raw, ("kernel_eps", "rank_tol", "condition_tol"), "tolerances")
    tol = Tolerances(*(_as_float(tol_raw.get(k, dflt), f"tolerances.{k}", positive=True)
                       for k, dflt in (("kernel_eps", 1e-9), ("rank_tol", 1e-9),
                                       ("condition_tol", 1e-6))))
    two = _parse_two_clock(doc.get("two_clock"), dim)
    return ScenarioConfig(name=name, clock=ClockSpec(d, dt), rest=RestSpec(dim, spectrum),
                          coupling=coupling, seed_state=seed, grid=grid, tolerances=tol,
                          two_clock=two, base_dir=str(base_dir) if base_dir is not None else None)


def load_scenario(path: str | os.PathLike) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {p}: {exc.strerror}") from exc
    return parse_scenario(text, base_dir=p.parent)


# --------------------------------------------------------------------------- gallery

def _doc(name, d, dt, dim, coupling, spectrum="snap_to_lattice", seed=None, two_clock=None):
    return {
        "name": name,
        "clock": {"d": d, "dt": dt},
        "rest": {"dim": dim, "spectrum": spectrum},
        "coupling": coupling,
        "seed_state": seed or {"kind": "random", "rng_seed": 0},
        "grid": None,
        "tolerances": {"kernel_eps": 1e-9, "rank_tol": 1e-9, "condition_tol": 1e-6},
        "two_clock": two_clock,
    }


PRESETS: dict[str, dict] = {
    "free": _doc("free", 64, 0.5, 4, {"tag": "none"},
                 two_clock={"rest_state": {"levels": [0, 1]}}),
    "time_dependent": _doc("time_dependent", 64, 0.5, 4,
                           {"tag": "time_dependent", "profile": "sin", "amplitude": 0.3}),
    "dilation": _doc("dilation", 64, 0.5, 4, {"tag": "dilation", "g": 0.1},
                     two_clock={"rest_state": {"levels": [0, 1]}}),
    "dilation_kernel_tuned": _doc("dilation_kernel_tuned", 64, 0.5, 4,
                                  {"tag": "dilation", "g": 0.1, "tune_kernel": True}),
    "product_unitary": _doc("product_unitary", 64, 0.5, 4, {
        "tag": "product",
        "factors": [[[1.0, 2, 0], [1.0, 0, 2], [1.0, 0, 0]], [[1.0, 1, 0], [1.0, 0, 1]]]}),
    "klein_gordon": _doc("klein_gordon", 64, 0.5, 4, {"tag": "klein_gordon"}),
    "mass_energy": _doc("mass_energy", 32, 0.5, 2, {
        "tag": "mass_energy", "cm_dim": 4, "m": 1.0, "lambda_profile": [0.0, 0.1, 0.2, 0.1]},
        spectrum=[-1.0, 1.0], two_clock={"rest_state": "haar", "rng_seed": 0}),
    "pathological": _doc("pathological", 64, 0.5, 4, {"tag": "pathological_product"}),
}


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return json.dumps(PRESETS[name], indent=2) + "\n"


def preset(name: str) -> ScenarioConfig:
    return parse_scenario(preset_text(name))


# --------------------------------------------------------------------------- models

def _rest_spectrum(cfg: ScenarioConfig, clock: FiniteClock) -> np.ndarray:
    """H_R eigenvalues; snapped spectra give every H_R level a history state."""
    m = cfg.rest.dim
    if cfg.rest.spectrum != "snap_to_lattice":
        return np.asarray(cfg.rest.spectrum, dtype=float)
    ns = [_SNAP_INDICES[i % len(_SNAP_INDICES)] + (i // len(_SNAP_INDICES)) * 8 for i in range(m)]
    omega = np.array([lattice_energy(clock, n) for n in ns])
    c = cfg.coupling
    if c.tag == "dilation":
        g = c.params["g"]
        E = -omega / (1.0 + g * omega)
        if c.params["tune_kernel"]:
            E[c.params["tuned_index"]] = -1.0 / g
        return E
    if c.tag == "time_dependent":
        f = _profile(cfg, clock)
        return -omega - float(np.mean(f)) * np.asarray(c.params["operator"])
    return -omega


def _profile(cfg: ScenarioConfig, clock: FiniteClock) -> np.ndarray:
    p = cfg.coupling.params
    prof = p["profile"]
    phase = 2 * np.pi * clock.times / clock.period
    if prof == "sin":
        base = np.sin(phase)
    elif prof == "cos":
        base = np.cos(phase)
    else:
        base = np.asarray(prof, dtype=float)
    return p["amplitude"] * base


def _poly_factor(terms, HC: np.ndarray, HR: np.ndarray) -> np.ndarray:
    out = np.zeros((HC.shape[0] * HR.shape[0],) * 2, dtype=np.complex128)
    for coef, pc, pr in terms:
        out += coef * np.kron(np.linalg.matrix_power(HC, pc), np.linalg.matrix_power(HR, pr))
    return out


def build_model(cfg: ScenarioConfig) -> UniverseModel:
    clock = make_clock(cfg.clock.d, cfg.clock.dt)
    c = cfg.coupling
    if c.tag == "custom":
        path = Path(c.params["matrix_file"])
        if not path.is_absolute() and cfg.base_dir is not None:
            path = Path(cfg.base_dir) / path
        try:
            H = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise ConfigError("coupling.matrix_file", f"cannot load {path}: {exc}") from exc
        n = cfg.clock.d * cfg.rest.dim
        if H.shape != (n, n):
            raise ConfigError("coupling.matrix_file",
                              f"matrix has shape {H.shape}, expected {(n, n)} from clock.d * rest.dim")
        return build_custom(clock, (clock.d, cfg.rest.dim), H, source=str(path))
    E = _rest_spectrum(cfg, clock)
    HR = np.diag(E).astype(np.complex128)
    m = HR.shape[0]
    if c.tag == "none":
        return build_additive(clock, HR)
    if c.tag == "time_dependent":
        O = np.diag(c.params["operator"]).astype(np.complex128)
        return build_additive(clock, HR, np.kron(np.diag(_profile(cfg, clock)), O))
    if c.tag == "dilation":
        return build_additive(clock, HR, c.params["g"] * np.kron(clock.H_C, HR))
    if c.tag == "product":
        factors = [_poly_factor(t, clock.H_C, HR) for t in c.params["factors"]]
        return build_product(clock, factors)
    A = np.kron(clock.H_C, np.eye(m))
    B = np.kron(np.eye(clock.d), HR)
    if c.tag == "klein_gordon":
        return build_product(clock, [A + B, A - B])
    if c.tag == "pathological_product":
        C2 = HR - E[c.params["zero_index"]] * np.eye(m)
        return build_product(clock, [np.kron(np.eye(clock.d), C2), A + B])
    if c.tag == "mass_energy":
        return build_mass_energy(clock, c.params["cm_dim"], c.params["m"],
                                 c.params["lambda_profile"], HR, cm_spacing=c.params["cm_spacing"])
    raise ConfigError("coupling.tag", f"unknown coupling tag {c.tag!r}")  # pragma: no cover


# --------------------------------------------------------------------------- running

@dataclass
class RunReport:
    name: str
    condition_report: ConditionReport
    interior_residual: float
    trajectory_summary: dict | None
    observables_summary: dict | None
    equivalence_summary: dict | None
    provenance: dict
    notes: list[str]
    rows: dict[str, np.ndarray]
    grid: tuple | None = None

    def to_dict(self) -> dict:
        cr = self.condition_report
        return _jsonable({
            "name": self.name,
            "condition_report": {
                "verdict": cr.verdict.value, "c1_residual": cr.c1_residual,
                "c2_residual": cr.c2_residual, "pathology_dim": cr.pathology_dim,
                "threshold": cr.threshold, "rate_method": cr.rate_method},
            "interior_residual": self.interior_residual,
            "trajectory_summary": self.trajectory_summary,
            "observables_summary": self.observables_summary,
            "equivalence_summary": self.equivalence_summary,
            "provenance": self.provenance,
            "notes": self.notes,
        })


def _seed_vector(cfg: ScenarioConfig, u: UniverseModel, rng_seed: int) -> np.ndarray:
    s = cfg.seed_state
    if s.kind == "product":
        v = np.ones(u.rest_dim) if s.rest_vector is None else np.asarray(s.rest_vector, dtype=float)
        return product_seed(u, s.time_index, v / np.linalg.norm(v))
    return haar_state(u.dim, np.random.default_rng(rng_seed))


def _stage(cfg: ScenarioConfig, stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, EmptyKernel, NonUnitaryWitness):
        raise
    except (ChronosError, np.linalg.LinAlgError) as exc:
        raise ScenarioFailure(cfg.name, stage, exc) from exc


def _rel_drift_series(norms: np.ndarray) -> np.ndarray:
    return np.abs(norms - norms[0]) / norms[0] if norms[0] > 0 else np.zeros_like(norms)


def _two_clock_state(cfg: ScenarioConfig, u: UniverseModel) -> np.ndarray:
    tc = cfg.two_clock
    clock = u.clock
    rs = tc.rest_state
    if rs == "haar":
        return haar_state(u.dim, np.random.default_rng(tc.rng_seed))
    if isinstance(rs, dict):
        # Equal superposition of two H_R eigenstates; H_R is diagonal for built-in couplings.
        v = np.zeros(u.rest_dim, dtype=np.complex128)
        v[rs["levels"]] = 1.0 / np.sqrt(2.0)
    else:
        v = np.asarray(rs, dtype=np.complex128)
    return wavepacket_state(u, tc.center_fraction * clock.period, tc.width_fraction * clock.period, v)


def run_scenario(cfg: ScenarioConfig) -> RunReport:
    """Conditions, dynamics, optional two-clock run and the equivalence pipeline."""
    u = _stage(cfg, "build", build_model, cfg)
    clock = u.clock
    d = clock.d
    tol = cfg.tolerances
    ir = idealness_report(clock).interior_residual
    floor = max(1e-6, 10.0 * ir)
    notes: list[str] = []
    rate = _stage(cfg, "rate", rate_operator, u, eps=tol.rank_tol)
    cond = _stage(cfg, "conditions", check_conditions, u, tol=tol.condition_tol,
                  eps=tol.kernel_eps, rate=rate)
    nan = np.full(d, np.nan)
    rows = {k: nan.copy() for k in CSV_COLUMNS}
    rows["t"] = clock.times.copy()
    seeds = {"seed_state": cfg.seed_state.rng_seed}

    traj_summary = None
    eq_summary = None
    if cond.verdict is Verdict.PATHOLOGICAL:
        notes.append(f"dynamics skipped: alpha and H_U share a {cond.pathology_dim}-dimensional "
                     "0-eigenspace, so relative states do not define a dynamics")
    else:
        try:
            s = _stage(cfg, "prepare", prepare_stationary, u, _seed_vector(cfg, u, cfg.seed_state.rng_seed),
                       eps=tol.kernel_eps, weighting=cfg.seed_state.weighting)
        except EmptyKernel as exc:
            notes.append(f"dynamics skipped: {exc}")
            s = None
        if s is not None:
            traj_summary, t_rows = _dynamics_stage(cfg, u, s, cond, rate, floor, seeds)
            rows.update(t_rows)
            eq_summary = _equivalence_stage(cfg, u, ir, notes)

    obs_summary = None
    if cfg.two_clock is not None:
        seeds["two_clock"] = cfg.two_clock.rng_seed
        obs_summary, o_rows = _two_clock_stage(cfg, u, tol, ir)
        rows.update(o_rows)

    provenance = {"config_sha256": cfg.config_hash(), "library_version": __version__,
                  "rng_seeds": seeds}
    return RunReport(name=cfg.name, condition_report=cond, interior_residual=ir,
                     trajectory_summary=traj_summary, observables_summary=obs_summary,
                     equivalence_summary=eq_summary, provenance=provenance, notes=notes, rows=rows,
                     grid=cfg.grid)


def _dynamics_stage(cfg, u: UniverseModel, s: StationaryState, cond: ConditionReport, rate,
                    floor: float, seeds: dict):
    tol = cfg.tolerances
    traj = _stage(cfg, "trajectory", extract_trajectory, u, s)
    _, basis = physical_kernel(u, tol.kernel_eps)
    # Second kernel state for the overlap drift: an independent random projection.
    other_seed = cfg.seed_state.rng_seed + 1
    seeds["gram_partner"] = other_seed
    partner = prepare_stationary(u, haar_state(u.dim, np.random.default_rng(other_seed)),
                                 eps=tol.kernel_eps, weighting=cfg.seed_state.weighting)
    traj_b = extract_trajectory(u, partner, with_residuals=False)
    nd, gd = unitarity_diagnostics(traj, traj_b)
    reduced = reduced_trajectory(traj, u.clock)
    nd_reduced = norm_drift(np.linalg.norm(reduced, axis=1))
    summary = {
        "kernel_dim": basis.dim,
        "constraint_residual": s.constraint_residual,
        "norm_drift": norm_drift(traj.norms),
        "pair_norm_drift": nd,
        "gram_drift": gd,
        "reduced_norm_drift": nd_reduced,
        "max_residual": float(np.max(traj.residuals)),
    }
    if cond.holds:
        pm = _stage(cfg, "propagator", propagator_match, u, s, rate=rate)
        summary["propagator_sharp_error"] = pm.sharp_error
        summary["propagator_windowed_error"] = pm.windowed_error
        summary["unitary_within_floor"] = bool(summary["pair_norm_drift"] <= floor)
        if rate.kernel_dim > 0:
            summary["kernel_restriction"] = kernel_restriction_check(u, s, rate)
    else:
        w = _stage(cfg, "witness", find_nonunitary_witness, u, tol.kernel_eps)
        summary["witness_norm_drift"] = w.norm_drift
        summary["witness_label"] = w.label
        summary["non_unitary_witness"] = bool(w.norm_drift > 1e-3)
    overlaps = np.einsum("kn,kn->k", traj.rel_states.conj(), traj_b.rel_states)
    scale = traj.norms[0] * traj_b.norms[0]
    rows = {
        "norm": traj.norms,
        "norm_drift": _rel_drift_series(traj.norms),
        "gram_drift": np.abs(overlaps - overlaps[0]) / scale if scale > 0 else np.zeros(len(traj)),
        "schrodinger_residual": traj.residuals,
    }
    return summary, rows


def _equivalence_stage(cfg, u: UniverseModel, ir: float, notes: list[str]) -> dict | None:
    tol = cfg.tolerances
    try:
        fam = extract_propagator_family(u, tol.kernel_eps)
    except NonUnitaryWitness as exc:
        notes.append(f"equivalence aborted: {exc}")
        return {"aborted": "NonUnitaryWitness", "defect": exc.defect}
    gen = generator_from_propagator(fam, u.clock)
    ec = build_equivalent_constraint(u.clock, gen.X, fam.allowed_projector, fam.U)
    rep = _stage(cfg, "equivalence", verify_equivalence, u, ec, tol.kernel_eps, tol.condition_tol)
    return {
        "fit_residual": fam.fit_residual,
        "isometry_defect": fam.isometry_defect,
        "generator_defect": gen.defect,
        "containment_residual": rep.containment_residual,
        "equality_angle": rep.equality_angle,
        "kernel_dims": rep.kernel_dims,
        "c_prime_verdict": rep.conditions.verdict.value,
        "round_trip_ok": bool(rep.conditions.holds and rep.equality_angle <= 1e-6 + 10.0 * ir),
    }


def _two_clock_stage(cfg, u: UniverseModel, tol: Tolerances, ir: float):
    clock = u.clock
    psi0 = _two_clock_state(cfg, u)
    run = _stage(cfg, "two_clock", run_two_clock, u, psi0, clock.times)
    rs = rate_series(run)
    vs = variance_series(run)
    rate_tol = 10.0 * ir
    summary = {
        "rate_drift": rate_drift(run),
        "rate_tolerance": rate_tol,
        "rate_constant": bool(rate_drift(run) <= rate_tol),
        "rate_form_discrepancy": rs.max_discrepancy,
        "linear_time_error": linear_time_error(run),
        "sigma2_alpha": vs.sigma2_alpha,
        "variance_law_error": vs.max_scaled_error(run.t_grid),
        "window_points": int(vs.window.size),
    }
    rows = {
        "rate": rs.values,
        "rate_drift": np.abs(rs.values - rs.values[0]),
        "variance": vs.variance,
        "variance_law_error": vs.law_error,
    }
    return summary, rows


# --------------------------------------------------------------------------- sweeps

def sweep_dimension(cfg: ScenarioConfig, d_list: Sequence[int], keep_period: bool = True
                    ) -> list[dict]:
    """One summary row per clock dimension.

    With ``keep_period`` the grid spacing becomes period/d, so snapped
    spectra stay the same physical energies as d grows.
    """
    ds = [int(x) for x in d_list]
    if not ds:
        raise ConfigError("dims", "need at least one dimension")
    if any(b <= a for a, b in zip(ds, ds[1:])):
        raise ConfigError("dims", "dimensions must be strictly ascending")
    period = cfg.clock.d * cfg.clock.dt
    table = []
    for d in ds:
        dt = period / d if keep_period else cfg.clock.dt
        rep = run_scenario(cfg.with_overrides(d=d, dt=dt))
        ts = rep.trajectory_summary or {}
        os_ = rep.observables_summary or {}
        table.append({
            "d": d,
            "dt": dt,
            "interior_residual": rep.interior_residual,
            "verdict": rep.condition_report.verdict.value,
            "norm_drift": ts.get("norm_drift"),
            "max_residual": ts.get("max_residual"),
            "rate_drift": os_.get("rate_drift"),
            "variance_law_error": os_.get("variance_law_error"),
        })
    return table


# --------------------------------------------------------------------------- output

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    x = float(x)
    if not math.isfinite(x):
        return ""
    return "%.17g" % x


def emit_csv(report: RunReport, stream: TextIO, grid: Sequence[int] | None = None) -> None:
    """Per-clock-reading rows with the fixed column set; blanks mark n/a."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    n = len(report.rows["t"])
    grid = grid if grid is not None else report.grid
    for k in (range(n) if grid is None else grid):
        w.writerow([_fmt(report.rows[c][k]) for c in CSV_COLUMNS])


def emit_sweep_csv(table: list[dict], stream: TextIO) -> None:
    cols = ("d", "dt", "interior_residual", "verdict", "norm_drift", "max_residual",
            "rate_drift", "variance_law_error")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(cols)
    for row in table:
        w.writerow([_fmt(row[c]) if c != "d" else str(row[c]) for c in cols])


def report_json(report: RunReport) -> str:
    def default(o):
        return _fmt(o)
    return json.dumps(_normalize_floats(report.to_dict()), indent=2, sort_keys=True, default=default) + "\n"


def _normalize_floats(x):
    if isinstance(x, dict):
        return {k: _normalize_floats(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_normalize_floats(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def csv_text(report: RunReport, grid: Sequence[int] | None = None) -> str:
    buf = io.StringIO()
    emit_csv(report, buf, grid)
    return buf.getvalue()
