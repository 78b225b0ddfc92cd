"""Collision-monitoring construction on finite-dimensional models.

A :class:`CollisionModel` bundles the two-body S-matrix, the rate operator
``gamma`` and the single-particle environment state.  From it we build the
finite-``dt`` mixture of the collided and the not-collided branch and the
generator of the reduced system dynamics.

The rate operator is taken as raw data.  Any restriction to incoming wave
packets has to be encoded by the caller in ``gamma`` itself; nothing here
tries to infer it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .operators import (
    HERMITIAN_TOL,
    CompositeSpace,
    Superoperator,
    as_operator,
    choi_negativity,
    dagger,
    is_positive_semidefinite,
    partial_trace_env,
    positive_sqrt,
    tensor_product,
)

PROBE_TIMES = (1e-3, 1.0, 10.0)


def t_matrix(s) -> np.ndarray:
    """``T = -i (S - I)`` from ``S = I + i T``."""
    s = as_operator(s)
    return -1j * (s - np.eye(s.shape[0]))


def t_unitarity_residual(s) -> float:
    """``max |i (T - T^dag) + T^dag T|``; vanishes iff ``s`` is unitary."""
    t = t_matrix(s)
    r = 1j * (t - dagger(t)) + dagger(t) @ t
    return float(np.max(np.abs(r)))


@dataclass(frozen=True)
class CollisionModel:
    space: CompositeSpace
    s: np.ndarray
    gamma: np.ndarray
    rho_env: np.ndarray

    def __post_init__(self):
        d = self.space.dim
        s = as_operator(self.s, d)
        gamma = as_operator(self.gamma, d)
        rho_env = as_operator(self.rho_env, self.space.dim_env)
        resid = np.max(np.abs(dagger(s) @ s - np.eye(d)))
        if resid >= HERMITIAN_TOL:
            raise ValueError(f"S is not unitary (|S^dag S - I|_max = {resid:.3e})")
        if not is_positive_semidefinite(gamma):
            raise ValueError("gamma must be Hermitian positive semidefinite")
        if not is_positive_semidefinite(rho_env):
            raise ValueError("rho_env must be Hermitian positive semidefinite")
        if abs(np.trace(rho_env) - 1.0) >= 1e-12:
            raise ValueError("rho_env must have unit trace")
        for name, val in (("s", s), ("gamma", gamma), ("rho_env", rho_env)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_sqrt_gamma", positive_sqrt(gamma))

    @property
    def sqrt_gamma(self) -> np.ndarray:
        return self._sqrt_gamma

    @property
    def t(self) -> np.ndarray:
        return t_matrix(self.s)

    @property
    def gamma_norm(self) -> float:
        """Operator (spectral) norm of the rate operator."""
        return float(np.linalg.norm(self.gamma, 2))

    def product_state(self, rho) -> np.ndarray:
        return tensor_product(as_operator(rho, self.space.dim_sys), self.rho_env)


def _check_dt(model: CollisionModel, dt: float) -> None:
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    # 1e-12 slack so that dt = 1/|gamma| computed in floating point is admitted
    if dt * model.gamma_norm > 1.0 + 1e-12:
        raise ValueError(
            f"dt * |gamma|_op = {dt * model.gamma_norm:.6g} exceeds 1; "
            "the not-collided branch would lose positivity"
        )


def collision_probability(rho, model: CollisionModel, dt: float) -> float:
    """Probability ``dt tr(gamma (rho (x) rho_env))`` of a collision within ``dt``."""
    _check_dt(model, dt)
    p = dt * np.trace(model.gamma @ model.product_state(rho))
    return float(p.real)


def measurement_maps(rho_total, model: CollisionModel, dt: float):
    """Unnormalized collided / not-collided branches of the monitoring detector.

    Returns ``(dt G^1/2 rho G^1/2, rho - dt G^1/2 rho G^1/2)``.
    """
    _check_dt(model, dt)
    x = as_operator(rho_total, model.space.dim)
    w = model.sqrt_gamma
    hit = dt * (w @ x @ w)
    return hit, x - hit


def finite_dt_map(rho_total, model: CollisionModel, dt: float) -> np.ndarray:
    """Total state after ``dt``: collided branch scattered by ``S`` plus the rest."""
    hit, miss = measurement_maps(rho_total, model, dt)
    s = model.s
    return s @ hit @ dagger(s) + miss


def finite_dt_superoperator(model: CollisionModel, dt: float) -> Superoperator:
    """:func:`finite_dt_map` as a superoperator on the composite space."""
    _check_dt(model, dt)
    d = model.space.dim
    sw = model.s @ model.sqrt_gamma
    w = model.sqrt_gamma
    m = np.eye(d * d, dtype=complex) + dt * (np.kron(sw.conj(), sw) - np.kron(w.conj(), w))
    return Superoperator(m)


def traced_quotient(model: CollisionModel, dt: float) -> Superoperator:
    """System superoperator ``rho -> (Tr_env finite_dt_map(rho (x) rho_env) - rho) / dt``."""
    space = model.space

    def f(rho):
        out = partial_trace_env(finite_dt_map(model.product_state(rho), model, dt), space)
        return (out - rho) / dt

    return Superoperator.from_map(f, space.dim_sys)


def generator_action(rho, model: CollisionModel) -> np.ndarray:
    """Apply the four traced terms of the collisional generator to ``rho``.

    With ``X = rho (x) rho_env``, ``W = gamma^1/2`` and ``T = -i(S - I)``::

        i/2 Tr[T + T^dag, W X W] + Tr(T W X W T^dag)
            - 1/2 Tr(W T^dag T W X) - 1/2 Tr(X W T^dag T W)
    """
    space = model.space
    x = model.product_state(rho)
    w = model.sqrt_gamma
    t = model.t
    g = w @ x @ w
    h = t + dagger(t)
    k = w @ dagger(t) @ t @ w
    total = 0.5j * (h @ g - g @ h) + t @ g @ dagger(t) - 0.5 * (k @ x + x @ k)
    return partial_trace_env(total, space)


@dataclass(frozen=True)
class GeneratorReport:
    generator: Superoperator
    t_unitarity_residual: float
    semigroup_cptp_residual: float


def semigroup_cptp_residual(generator: Superoperator, times) -> float:
    """Worst Choi negativity of ``exp(t L)`` over ``times``."""
    worst = 0.0
    for t in times:
        worst = max(worst, choi_negativity(Superoperator(scipy.linalg.expm(t * generator.matrix))))
    return worst


def build_generator(model: CollisionModel) -> GeneratorReport:
    """Tabulate the collisional generator and attach consistency diagnostics.

    The free system Hamiltonian is not included.  The complete-positivity
    residual is evaluated at ``t in {1e-3, 1, 10} / |gamma|_op``.
    """
    resid = t_unitarity_residual(model.s)
    if resid >= HERMITIAN_TOL:
        raise ValueError(f"S is not unitary (T-unitarity residual {resid:.3e})")
    gen = Superoperator.from_map(lambda r: generator_action(r, model), model.space.dim_sys)
    norm = model.gamma_norm
    if norm == 0.0:
        cptp = 0.0
    else:
        cptp = semigroup_cptp_residual(gen, [t / norm for t in PROBE_TIMES])
    return GeneratorReport(gen, resid, cptp)


MODEL_FAMILIES = ("generic", "system_blind", "scalar")


def random_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a Ginibre matrix."""
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


def _random_psd(rng: np.random.Generator, d: int) -> np.ndarray:
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return z @ dagger(z) / d


def _random_state(rng: np.random.Generator, d: int) -> np.ndarray:
    g = _random_psd(rng, d)
    return g / np.trace(g).real


def random_collision_model(rng: np.random.Generator, dim_sys: int, dim_env: int,
                           family: str = "generic") -> CollisionModel:
    """Random model with Haar ``S`` and a random rate operator.

    ``family`` fixes the rate operator: ``"generic"`` draws a full PSD matrix,
    ``"system_blind"`` uses ``I_sys (x) gamma_env`` and ``"scalar"`` a
    multiple of the identity.
    """
    space = CompositeSpace(dim_sys, dim_env)
    d = space.dim
    if family == "generic":
        gamma = _random_psd(rng, d)
    elif family == "system_blind":
        gamma = np.kron(np.eye(dim_sys), _random_psd(rng, dim_env))
    elif family == "scalar":
        gamma = rng.uniform(0.1, 2.0) * np.eye(d)
    else:
        raise ValueError(f"unknown model family {family!r}")
    gamma = 0.5 * (gamma + dagger(gamma))
    return CollisionModel(space, random_unitary(rng, d), gamma, _random_state(rng, dim_env))
