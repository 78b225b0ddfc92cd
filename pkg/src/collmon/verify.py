"""Invariant suites behind ``collmon verify``.

Every check reports a named scalar and the threshold it must stay below.  The
built-in models are seeded, so a run is reproducible.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import DensityMatrix, assemble, propagate
from .jumps import EnsembleConfig, ensemble_average, lindblad_operators
from .monitoring import (
    CollisionModel,
    build_generator,
    finite_dt_superoperator,
    random_collision_model,
    random_unitary,
    t_unitarity_residual,
    traced_quotient,
)
from .operators import CompositeSpace, choi_negativity, trace_preservation_residual
from .scattering import optical_theorem_residual, random_k_model
from .thermal import GasParameters, RateTensor, energy_shifts, rate_tensor, rate_tensor_m3_oracle

SEED = 20240611


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""
    sense: str = "<"

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{tag}  {self.name:<28s} {self.value:.3e} {self.sense} {self.threshold:.1e}{extra}"


def _check(name, value, threshold, detail="") -> Check:
    value = float(value)
    return Check(name, value, threshold, bool(value < threshold), detail)


def check_unitarity(rng, n=100) -> list[Check]:
    worst = max(t_unitarity_residual(random_unitary(rng, int(rng.integers(2, 17)))) for _ in range(n))
    return [_check("t_unitarity_residual", worst, 1e-12, f"{n} random unitaries")]


def check_monitoring(rng, n=20) -> list[Check]:
    """Finite-dt CPTP on scalar-rate models; generator on system-blind models."""
    choi = tr = 0.0
    for _ in range(n):
        ds, de = (int(x) for x in rng.integers(1, 5, size=2))
        m = random_collision_model(rng, ds, de, "scalar")
        sup = finite_dt_superoperator(m, 0.5 / m.gamma_norm)
        choi = max(choi, choi_negativity(sup))
        tr = max(tr, trace_preservation_residual(sup))
    gen_err = cptp = 0.0
    for _ in range(n):
        ds, de = (int(x) for x in rng.integers(1, 5, size=2))
        m = random_collision_model(rng, ds, de, "system_blind")
        gen_err = max(gen_err, generator_quotient_error(m))
        cptp = max(cptp, build_generator(m).semigroup_cptp_residual)
    return [
        _check("monitoring_choi_negativity", choi, 1e-9, "scalar rate operators"),
        _check("monitoring_trace_error", tr, 1e-12, "scalar rate operators"),
        _check("generator_quotient_error", gen_err, 1e-6, "system-blind rate operators"),
        _check("semigroup_cptp_residual", cptp, 1e-9, "system-blind rate operators"),
    ]


def generator_quotient_error(model: CollisionModel, h: float | None = None) -> float:
    """``max |L - Richardson(quotient)| / |gamma|_op`` with ``h = 1e-6 / |gamma|_op``."""
    norm = model.gamma_norm
    h = 1e-6 / norm if h is None else h
    q = (4.0 * traced_quotient(model, h / 2).matrix - traced_quotient(model, h).matrix) / 3.0
    return float(np.max(np.abs(q - build_generator(model).generator.matrix)) / norm)


def check_collision_fixture(space: CompositeSpace, s, gamma, rho_env, label: str) -> list[Check]:
    resid = t_unitarity_residual(s)
    out = [_check("t_unitarity_residual", resid, 1e-12, label)]
    if out[0].passed:
        m = CollisionModel(space, s, gamma, rho_env)
        out.append(_check("semigroup_cptp_residual", build_generator(m).semigroup_cptp_residual,
                          1e-9, label))
    return out


def check_optical(rng, n_models=5, n_energies=10) -> list[Check]:
    worst = 0.0
    for _ in range(n_models):
        m = random_k_model(rng, int(rng.integers(1, 5)))
        top = m.channels.energies.max()
        for e in rng.uniform(top + 1e-3, top + 5.0, size=n_energies):
            for a0 in range(m.channels.n):
                worst = max(worst, optical_theorem_residual(m, a0, e))
    return [_check("optical_theorem_residual", worst, 1e-10)]


def check_rates(rates: RateTensor, label: str) -> list[Check]:
    bad = rates.check()
    c = rates.coefficient_matrix()
    norm = float(np.linalg.norm(c, 2)) if c.size else 0.0
    return [
        Check("psd", rates.psd_min_eig(), -1e-10 * norm, "psd" not in bad,
              f"{label}; min eigenvalue of the coefficient matrix", ">="),
        _check("hermiticity", rates.hermiticity_residual(), 1e-10, label),
        Check("chi_mask", float(np.max(np.abs(rates.m[~rates.chi_mask]), initial=0.0)), 0.0,
              "chi_mask" not in bad, f"{label}; largest entry outside the selection rule", "<="),
    ]


def check_generator(model, gas, rng, label: str) -> list[Check]:
    rates = rate_tensor(model, gas)
    shifts = energy_shifts(model, gas)
    out = check_rates(rates, label)
    if not all(c.passed for c in out):
        return out
    gen = assemble(model.channels, shifts, rates)
    n = model.channels.n
    worst = 0.0
    for _ in range(20):
        x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        worst = max(worst, abs(np.trace(gen(x + x.conj().T))))
    out.append(_check("trace_annihilation", worst, 1e-12, label))
    norm = np.linalg.norm(gen.matrix, 2)
    if norm > 0:
        psi = rng.normal(size=n) + 1j * rng.normal(size=n)
        rho0 = DensityMatrix.from_pure(model.channels, psi)
        t = np.linspace(0.0, 10.0 / norm, 11)
        a = propagate(gen, rho0, t, "expm")
        b = propagate(gen, rho0, t, "adaptive")
        out.append(_check("integrator_agreement", np.max(np.abs(a.states - b.states)), 1e-8, label))
    return out


def check_oracle(rng, gas, n_samples=200_000) -> list[Check]:
    model = random_k_model(rng, 2, scale=0.5, energies=[0.0, 0.7])
    rates = rate_tensor(model, gas)
    est = rate_tensor_m3_oracle(model, gas, n_samples, seed=int(rng.integers(2**32)))
    z = sigma_ratio(rates.m - est.value, est.stderr)
    return [_check("oracle_agreement_sigma", z.max(), 3.0, f"{n_samples} samples")]


def check_unravelling(rng, gas, n_traj=2000) -> list[Check]:
    model = random_k_model(rng, 2, scale=0.5, energies=[0.0, 0.3])
    rates = rate_tensor(model, gas)
    shifts = energy_shifts(model, gas)
    gen = assemble(model.channels, shifts, rates)
    ops = lindblad_operators(rates, shifts)
    psi = np.array([0.6, 0.8j])
    t = np.linspace(0.0, 2.0 / max(np.abs(rates.m).max(), 1e-300), 6)
    exact = propagate(gen, DensityMatrix.from_pure(model.channels, psi), t)
    cfg = EnsembleConfig(n_traj, int(rng.integers(2**63)), t)
    ens = ensemble_average(ops, psi, cfg)
    d = ens.states - exact.states
    z = max(np.max(sigma_ratio(d.real, ens.stderr.real)), np.max(sigma_ratio(d.imag, ens.stderr.imag)))
    return [_check("unravelling_sigma", z, 3.0, f"{n_traj} trajectories")]


def sigma_ratio(dev, stderr, floor: float = 1e-12) -> np.ndarray:
    """``|dev| / stderr`` with ``stderr`` floored for entries that carry no noise."""
    return np.abs(dev) / np.maximum(stderr, floor)


def builtin_checks(seed: int = SEED, quick: bool = False) -> list[Check]:
    rng = np.random.default_rng(seed)
    gas = GasParameters(1.0, 1.0, 1.0)
    out = []
    out += check_unitarity(rng)
    out += check_monitoring(rng, 10 if quick else 20)
    out += check_optical(rng)
    for n in (2, 3):
        out += check_generator(random_k_model(rng, n, scale=0.5), gas, rng, f"random {n}-channel")
    out += check_oracle(rng, gas, 50_000 if quick else 200_000)
    out += check_unravelling(rng, gas, 2000)
    return out


def report(checks: list[Check]) -> dict:
    return {"passed": all(c.passed for c in checks), "checks": [asdict(c) for c in checks],
            "failed": [c.name for c in checks if not c.passed]}
