"""Scenario configs and rate files (JSON).

Complex matrices are accepted either as real numbers or as ``[re, im]`` pairs
per entry.  Validation errors carry the dotted path of the offending field.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import DensityMatrix
from .scattering import ENERGY_TOL, AmplitudeTable, ChannelSet, SWaveKMatrixModel
from .thermal import EnergyShifts, GasParameters, QuadratureConfig, RateTensor, chi_mask

DEFAULT_UNITS = "hbar = 1; energies, masses and lengths in consistent natural units"


class ConfigError(ValueError):
    """Invalid scenario or rates file; ``path`` names the offending field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"malformed JSON in {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("", f"{path}: top level must be an object")
    return obj


# -- field readers -----------------------------------------------------------


def _get(obj: dict, key: str, path: str, default=...):
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    if key not in obj:
        if default is ...:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
        return default
    return obj[key]


def _number(x, path: str, positive=False, integer=False, nonneg=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(x).__name__}")
    if integer and not float(x).is_integer():
        raise ConfigError(path, "expected an integer")
    if not np.isfinite(x):
        raise ConfigError(path, "must be finite")
    if positive and not x > 0:
        raise ConfigError(path, "must be positive")
    if nonneg and x < 0:
        raise ConfigError(path, "must be nonnegative")
    return int(x) if integer else float(x)


def _entry(x, path: str) -> complex:
    if isinstance(x, list):
        if len(x) != 2:
            raise ConfigError(path, "complex entries are [re, im] pairs")
        return complex(_number(x[0], path + "[0]"), _number(x[1], path + "[1]"))
    return complex(_number(x, path))


def complex_array(x, path: str, shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) == 1:
        if not isinstance(x, list) or len(x) != shape[0]:
            raise ConfigError(path, f"expected a list of length {shape[0]}")
        return np.array([_entry(v, f"{path}[{i}]") for i, v in enumerate(x)])
    if not isinstance(x, list) or len(x) != shape[0]:
        raise ConfigError(path, f"expected {shape[0]} rows")
    return np.stack([complex_array(r, f"{path}[{i}]", shape[1:]) for i, r in enumerate(x)])


def encode_complex(z) -> list:
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0:
        return [float(z.real), float(z.imag)]
    return [encode_complex(v) for v in z]


# -- scenario ----------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    channels: ChannelSet
    units: str
    gas: GasParameters
    model: object
    quadrature: QuadratureConfig
    t_max: float = 0.0
    n_steps: int = 0
    rho0: DensityMatrix | None = None
    psi0: np.ndarray | None = None
    method: str = "expm"
    n_traj: int = 1
    seed: int = 0
    rates_path: str | None = None
    outputs: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def t_grid(self) -> np.ndarray:
        if self.n_steps == 0 or self.t_max == 0.0:
            return np.array([0.0])
        return np.linspace(0.0, self.t_max, self.n_steps + 1)

    @property
    def initial_density(self) -> DensityMatrix:
        if self.rho0 is not None:
            return self.rho0
        if self.psi0 is not None:
            return DensityMatrix.from_pure(self.channels, self.psi0)
        return DensityMatrix.basis(self.channels, 0)


def _parse_channels(obj) -> tuple[ChannelSet, str]:
    c = _get(obj, "channels", "")
    energies = _get(c, "energies", "channels")
    if not isinstance(energies, list) or not energies:
        raise ConfigError("channels.energies", "expected a nonempty list")
    e = [_number(v, f"channels.energies[{i}]") for i, v in enumerate(energies)]
    labels = _get(c, "labels", "channels", None)
    if labels is None:
        labels = [str(i) for i in range(len(e))]
    if not isinstance(labels, list) or len(labels) != len(e):
        raise ConfigError("channels.labels", "need one label per energy")
    if len(set(map(str, labels))) != len(labels):
        raise ConfigError("channels.labels", "labels must be unique")
    tol = _number(_get(c, "energy_tolerance", "channels", ENERGY_TOL),
                  "channels.energy_tolerance", positive=True)
    units = _get(c, "units", "channels", DEFAULT_UNITS)
    if not isinstance(units, str):
        raise ConfigError("channels.units", "expected a string")
    return ChannelSet(tuple(map(str, labels)), np.array(e), tol), units


def _parse_gas(obj) -> GasParameters:
    g = _get(obj, "gas", "")
    vals = {}
    for key, alias in (("n_gas", "n_gas"), ("mass", "m"), ("beta", "beta")):
        if key in g:
            raw = g[key]
        else:
            raw = _get(g, alias, "gas")
        vals[key] = _number(raw, f"gas.{key}", positive=True)
    return GasParameters(**vals)


def _parse_model(obj, channels: ChannelSet, gas: GasParameters, base: Path):
    s = _get(obj, "scattering", "")
    if not isinstance(s, dict):
        raise ConfigError("scattering", "expected an object")
    if ("k_matrix" in s) == ("table" in s):
        raise ConfigError("scattering", "give exactly one of k_matrix or table")
    n = channels.n
    if "k_matrix" in s:
        a = complex_array(_get(s["k_matrix"], "a", "scattering.k_matrix"),
                          "scattering.k_matrix.a", (n, n))
        if np.any(a.imag != 0):
            raise ConfigError("scattering.k_matrix.a", "reactance lengths must be real")
        a = a.real
        if np.max(np.abs(a - a.T), initial=0.0) > 1e-14:
            raise ConfigError("scattering.k_matrix.a", "must be symmetric")
        return SWaveKMatrixModel(channels, a, gas.mass)
    p = _get(s["table"], "path", "scattering.table")
    if not isinstance(p, str):
        raise ConfigError("scattering.table.path", "expected a string")
    path = (base / p) if not os.path.isabs(p) else Path(p)
    try:
        table = AmplitudeTable.load(path, mass=gas.mass)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError("scattering.table.path", f"cannot load table: {exc}") from None
    if table.channels.labels != channels.labels or not np.allclose(
        table.channels.energies, channels.energies, rtol=0, atol=channels.energy_tolerance
    ):
        raise ConfigError("scattering.table.path", "table channels do not match the config")
    return table


def _parse_quadrature(obj) -> QuadratureConfig:
    q = _get(obj, "quadrature", "", {})
    if not isinstance(q, dict):
        raise ConfigError("quadrature", "expected an object")
    known = {"v_nodes": True, "cos_nodes": True, "v_max_factor": False, "rtol": False,
             "energy_tolerance": False}
    kw = {}
    for key, val in q.items():
        if key not in known:
            raise ConfigError(f"quadrature.{key}", "unknown field")
        kw[key] = _number(val, f"quadrature.{key}", positive=True, integer=known[key])
    try:
        return QuadratureConfig(**kw)
    except ValueError as exc:
        raise ConfigError("quadrature", str(exc)) from None


def parse_config(obj: dict, base: Path | str = ".") -> ScenarioConfig:
    base = Path(base)
    channels, units = _parse_channels(obj)
    gas = _parse_gas(obj)
    model = _parse_model(obj, channels, gas, base)
    quad = _parse_quadrature(obj)
    if "energy_tolerance" not in obj.get("quadrature", {}):
        quad = QuadratureConfig(quad.v_nodes, quad.cos_nodes, quad.v_max_factor, quad.rtol,
                                channels.energy_tolerance)
    n = channels.n

    ev = _get(obj, "evolve", "", {})
    t_max = _number(_get(ev, "t_max", "evolve", 0.0), "evolve.t_max", nonneg=True)
    n_steps = _number(_get(ev, "n_steps", "evolve", 0), "evolve.n_steps", integer=True, nonneg=True)
    method = _get(ev, "method", "evolve", "expm")
    if method not in ("expm", "adaptive"):
        raise ConfigError("evolve.method", "must be 'expm' or 'adaptive'")
    rho0 = psi0 = None
    if "rho0" in ev and "psi0" in ev:
        raise ConfigError("evolve", "give at most one of rho0 and psi0")
    if "rho0" in ev:
        r = complex_array(ev["rho0"], "evolve.rho0", (n, n))
        try:
            rho0 = DensityMatrix(channels, r)
        except ValueError as exc:
            raise ConfigError("evolve.rho0", str(exc)) from None
    if "psi0" in ev:
        psi0 = complex_array(ev["psi0"], "evolve.psi0", (n,))
        nrm = np.linalg.norm(psi0)
        if abs(nrm - 1.0) > 1e-10:
            raise ConfigError("evolve.psi0", f"must be normalized (norm {nrm:.6g})")

    tr = _get(obj, "trajectories", "", {})
    n_traj = _number(_get(tr, "n_traj", "trajectories", 1), "trajectories.n_traj",
                     integer=True, positive=True)
    seed = _number(_get(tr, "seed", "trajectories", 0), "trajectories.seed",
                   integer=True, nonneg=True)
    if seed >= 1 << 64:
        raise ConfigError("trajectories.seed", "must fit in 64 bits")

    rates_path = _get(obj, "rates", "", None)
    if rates_path is not None:
        if not isinstance(rates_path, str):
            raise ConfigError("rates", "expected a path string")
        if not os.path.isabs(rates_path):
            rates_path = str(base / rates_path)
    outputs = _get(obj, "output", "", {})
    if not isinstance(outputs, dict) or not all(isinstance(v, str) for v in outputs.values()):
        raise ConfigError("output", "expected an object of file names")

    return ScenarioConfig(channels, units, gas, model, quad, t_max, n_steps, rho0, psi0,
                          method, n_traj, seed, rates_path, dict(outputs), obj)


def load_config(path) -> ScenarioConfig:
    return parse_config(load_json(path), Path(path).resolve().parent)


# -- rates files ---------------------------------------------------------------


def rates_to_json(rates: RateTensor, shifts: EnergyShifts, units: str = DEFAULT_UNITS,
                  config: dict | None = None) -> dict:
    ch = rates.channels
    lab = ch.labels
    n = ch.n
    entries = []
    for a in range(n):
        for b in range(n):
            for a0 in range(n):
                for b0 in range(n):
                    if rates.chi_mask[a, b, a0, b0]:
                        z = rates.m[a, b, a0, b0]
                        entries.append({"a": lab[a], "b": lab[b], "a0": lab[a0], "b0": lab[b0],
                                        "re": float(z.real), "im": float(z.imag)})
    return {
        "units": units,
        "channels": {"labels": list(lab), "energies": [float(e) for e in ch.energies],
                     "energy_tolerance": ch.energy_tolerance},
        "M": entries,
        "epsilon": [float(e) for e in shifts.epsilon],
        "diagnostics": {
            "psd_min_eig": rates.psd_min_eig(),
            "hermiticity_residual": rates.hermiticity_residual(),
            "quadrature_residuals": {"rates": rates.quadrature_residual,
                                     "shifts": shifts.quadrature_residual},
        },
        "config": config if config is not None else {},
    }


def rates_from_json(obj: dict) -> tuple[RateTensor, EnergyShifts]:
    """Rebuild the tensors; invariants are not checked here (see ``RateTensor.check``)."""
    c = _get(obj, "channels", "")
    labels = _get(c, "labels", "channels")
    energies = _get(c, "energies", "channels")
    if not isinstance(labels, list) or not isinstance(energies, list) or len(labels) != len(energies):
        raise ConfigError("channels", "need matching labels and energies lists")
    tol = _number(_get(c, "energy_tolerance", "channels", ENERGY_TOL), "channels.energy_tolerance",
                  positive=True)
    ch = ChannelSet(tuple(map(str, labels)),
                    np.array([_number(e, f"channels.energies[{i}]") for i, e in enumerate(energies)]),
                    tol)
    n = ch.n
    m = np.zeros((n,) * 4, dtype=complex)
    ents = _get(obj, "M", "")
    if not isinstance(ents, list):
        raise ConfigError("M", "expected a list of entries")
    for i, e in enumerate(ents):
        p = f"M[{i}]"
        try:
            idx = tuple(ch.index(str(_get(e, k, p))) for k in ("a", "b", "a0", "b0"))
        except KeyError as exc:
            raise ConfigError(p, str(exc)) from None
        m[idx] = complex(_number(_get(e, "re", p), p + ".re"), _number(_get(e, "im", p), p + ".im"))
    eps = _get(obj, "epsilon", "", None)
    if eps is None:
        shifts = EnergyShifts.zeros(ch)
    else:
        if not isinstance(eps, list) or len(eps) != n:
            raise ConfigError("epsilon", f"expected {n} numbers")
        shifts = EnergyShifts(ch, np.array([_number(v, f"epsilon[{i}]") for i, v in enumerate(eps)]))
    return RateTensor(ch, m, chi_mask(ch, tol)), shifts


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def load_rates(path) -> tuple[RateTensor, EnergyShifts]:
    return rates_from_json(load_json(path))
