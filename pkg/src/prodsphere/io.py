"""Run configuration, field CSV files and report JSON.

A run configuration is a JSON object::

    {"dims": {"m": 2, "n": 1},
     "cap": {"theta_max": 1.0471975511965976},
     "K": {"kind": "constant", "params": {"value": 0.5}},
     "boundary": {"kind": "abf_auto", "params": {}},
     "grid": {"backend": "radial", "nr": 129, "nphi": 128},
     "solver": {"dt0": 0.1, ...},
     "outputs": {"field_csv": "u.csv", "report_json": "report.json"}}

K kinds: ``constant`` {value}, ``scaled_subsolution`` {c}, ``radial_bump`` {c1, c2},
``table`` {path}.  Boundary kinds: ``abf_auto`` {E?, scaleF?}, ``abf_params``
{E, scaleF, A}, ``constant`` {value, E?, scaleF?}.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .discretization import DiscreteField
from .fields import ConstantK, RadialBumpK, TableK
from .solver import ContinuityConfig


class ConfigError(ValueError):
    pass


K_KINDS = {"constant": {"value"}, "scaled_subsolution": {"c"}, "radial_bump": {"c1", "c2"},
           "table": {"path"}}
BOUNDARY_KINDS = {"abf_auto": set(), "abf_params": {"E", "scaleF", "A"}, "constant": {"value"}}
BOUNDARY_OPTIONAL = {"abf_auto": {"E", "scaleF"}, "abf_params": set(), "constant": {"E", "scaleF"}}
DEFAULT_GRID = {"radial": {"nr": 129}, "polar2d": {"nr": 65, "nphi": 128}}


def _finite(x, where):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(f"{where} must be a finite number, got {x!r}")
    return x


def _section(d, name):
    sec = d.get(name)
    if not isinstance(sec, dict):
        raise ConfigError(f"config section '{name}' missing or not an object")
    return sec


@dataclass
class RunConfig:
    m: int
    n: int
    theta_max: float
    K: dict
    boundary: dict
    grid: dict
    solver: ContinuityConfig = field(default_factory=ContinuityConfig)
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"dims", "cap", "K", "boundary", "grid", "solver", "outputs"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        dims, cap = _section(d, "dims"), _section(d, "cap")
        m, n = dims.get("m"), dims.get("n")
        if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in (m, n)):
            raise ConfigError("dims.m and dims.n must be positive integers")
        theta_max = _finite(cap.get("theta_max"), "cap.theta_max")
        if not 0 < theta_max < math.pi / 2:
            raise ConfigError("cap.theta_max must lie in (0, pi/2)")

        K = copy.deepcopy(_section(d, "K"))
        kind = K.get("kind")
        if kind not in K_KINDS:
            raise ConfigError(f"K.kind must be one of {sorted(K_KINDS)}")
        params = K.setdefault("params", {})
        missing = K_KINDS[kind] - set(params)
        if missing or set(params) - K_KINDS[kind]:
            raise ConfigError(f"K kind '{kind}' takes params {sorted(K_KINDS[kind])}")
        for key, val in params.items():
            if key != "path":
                _finite(val, f"K.params.{key}")
        if kind == "table" and not isinstance(params["path"], str):
            raise ConfigError("K.params.path must be a string")

        B = copy.deepcopy(d.get("boundary", {"kind": "abf_auto", "params": {}}))
        kind = B.get("kind")
        if kind not in BOUNDARY_KINDS:
            raise ConfigError(f"boundary.kind must be one of {sorted(BOUNDARY_KINDS)}")
        params = B.setdefault("params", {})
        allowed = BOUNDARY_KINDS[kind] | BOUNDARY_OPTIONAL[kind]
        if BOUNDARY_KINDS[kind] - set(params) or set(params) - allowed:
            raise ConfigError(f"boundary kind '{kind}' takes params {sorted(allowed)}")
        for key, val in params.items():
            _finite(val, f"boundary.params.{key}")

        G = copy.deepcopy(d.get("grid", {"backend": "radial"}))
        backend = G.get("backend", "radial")
        if backend not in DEFAULT_GRID:
            raise ConfigError("grid.backend must be 'radial' or 'polar2d'")
        if set(G) - {"backend", "nr", "nphi"}:
            raise ConfigError("grid takes backend, nr, nphi")
        G = {"backend": backend, **DEFAULT_GRID[backend],
             **{k: v for k, v in G.items() if k != "backend"}}
        for key in ("nr", "nphi"):
            if key in G and not (isinstance(G[key], int) and not isinstance(G[key], bool)):
                raise ConfigError(f"grid.{key} must be an integer")
        if backend == "radial":
            G.pop("nphi", None)
        try:
            solver = ContinuityConfig.from_dict(d.get("solver", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"solver: {exc}") from None
        outputs = dict(d.get("outputs", {}))
        if set(outputs) - {"field_csv", "report_json"}:
            raise ConfigError("outputs takes field_csv and report_json")
        return cls(m, n, float(theta_max), K, B, G, solver, outputs)

    def to_dict(self) -> dict:
        return {"dims": {"m": self.m, "n": self.n}, "cap": {"theta_max": self.theta_max},
                "K": copy.deepcopy(self.K), "boundary": copy.deepcopy(self.boundary),
                "grid": dict(self.grid), "solver": self.solver.to_dict(),
                "outputs": dict(self.outputs)}

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()


def parse_config(text: str) -> RunConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return RunConfig.from_dict(d)


def serialize_config(config: RunConfig) -> str:
    return dumps(config.to_dict())


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    cfg = parse_config(text)
    if cfg.K["kind"] == "table":
        p = Path(cfg.K["params"]["path"])
        if not p.is_absolute():
            cfg.K["params"]["path"] = str((Path(path).parent / p).resolve())
    return cfg


def curvature_data(K: dict):
    kind, p = K["kind"], K["params"]
    try:
        if kind == "constant":
            return ConstantK(p["value"])
        if kind == "radial_bump":
            return RadialBumpK(p["c1"], p["c2"])
        if kind == "table":
            return read_K_table(p["path"])
    except (ValueError, OSError) as exc:
        raise ConfigError(f"K: {exc}") from None
    raise ConfigError(f"K kind '{kind}' has no standalone curvature data")


# --- JSON -----------------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def serialize_report(report, config: RunConfig | None = None, extra: dict | None = None,
                     status: str | None = None) -> str:
    """Report JSON: version, status, config echo, path trace and flagged diagnostics."""
    doc = {"version": __version__, "status": status or getattr(report, "status", "converged")}
    if config is not None:
        doc["config"] = config.to_dict()
    if report is not None:
        doc["path"] = [p.to_dict() for p in report.path]
        doc["diagnostics"] = report.diagnostics
        doc["final_residual"] = report.final_residual
        if report.certificate is not None:
            doc["certificate"] = report.certificate.to_dict()
    if extra:
        doc.update(extra)
    return dumps(doc)


# --- CSV ------------------------------------------------------------------------------------

def field_columns(grid) -> list:
    if grid.backend == "radial":
        return ["theta", "u", "du_dtheta", "min_eig_M"]
    return ["theta", "phi", "u", "du_dtheta", "du_dphi", "min_eig_M"]


def write_field_csv(path, u: DiscreteField, dims) -> None:
    grid = u.grid
    summ = grid.mu_summary(u.values, dims)
    cols = {"theta": grid.theta, "phi": grid.phi, "u": u.values,
            "du_dtheta": summ["du_dtheta"], "du_dphi": summ.get("du_dphi"),
            "min_eig_M": summ["min_eig"]}
    names = field_columns(grid)
    data = np.column_stack([cols[c] for c in names])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")


def read_field_csv(path, grid) -> DiscreteField:
    names = field_columns(grid)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header != names:
        raise ValueError(f"expected columns {names}, found {header}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if not (np.array_equal(data[:, 0], grid.theta)
            and (grid.backend == "radial" or np.array_equal(data[:, 1], grid.phi))):
        raise ValueError("field file nodes do not match the grid")
    return DiscreteField(grid, data[:, names.index("u")])


def write_K_table(path, theta, K, phi=None) -> None:
    if phi is None:
        data, names = np.column_stack([theta, K]), ["theta", "K"]
    else:
        data, names = np.column_stack([theta, phi, K]), ["theta", "phi", "K"]
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")


def read_K_table(path) -> TableK:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if header == ["theta", "K"]:
        return TableK(data[:, 0], data[:, 1], path=str(path))
    if header == ["theta", "phi", "K"]:
        return TableK(data[:, 0], data[:, 2], phi=data[:, 1], path=str(path))
    raise ValueError(f"K table header must be theta,K or theta,phi,K (got {','.join(header)})")
