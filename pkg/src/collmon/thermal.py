"""Thermal averages over an ideal Maxwell gas.

Rate coefficients, energy shifts and elastic dephasing rates are speed
integrals over the Maxwell speed density with hbar = 1.

Speed quadrature
----------------
Amplitudes have square-root cusps wherever a channel opens, and the outgoing
speed ``v_out`` vanishes like a square root at its own threshold.  The speed
axis ``[0, v_max]`` is therefore cut at every threshold below ``v_max`` and
each panel ``[a, b]`` is mapped through ``v = sqrt(a^2 + u^2)``, which turns
the cusp at its left end into a smooth function of ``u``.  Each panel gets
``v_nodes`` Gauss-Legendre nodes in ``u``.  Convergence is checked by
comparing against half the nodes.
"""

from __future__ import annotations

import functools
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .scattering import ENERGY_TOL, ChannelSet


class QuadratureError(RuntimeError):
    """Successive refinements of a thermal average disagree."""


@dataclass(frozen=True)
class GasParameters:
    n_gas: float
    mass: float
    beta: float

    def __post_init__(self):
        for name in ("n_gas", "mass", "beta"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a positive finite number, got {val!r}")

    @property
    def thermal_wavelength(self) -> float:
        return float(np.sqrt(2.0 * np.pi * self.beta / self.mass))

    @property
    def mean_speed(self) -> float:
        return float(np.sqrt(8.0 / (np.pi * self.beta * self.mass)))

    @property
    def modal_speed(self) -> float:
        return float(np.sqrt(2.0 / (self.beta * self.mass)))

    def scaled(self, factor: float) -> "GasParameters":
        return GasParameters(self.n_gas * factor, self.mass, self.beta)


@dataclass(frozen=True)
class QuadratureConfig:
    v_nodes: int = 128
    cos_nodes: int = 64
    v_max_factor: float = 8.0
    rtol: float = 1e-8
    energy_tolerance: float = ENERGY_TOL

    def __post_init__(self):
        if self.v_nodes < 4 or self.cos_nodes < 1:
            raise ValueError("quadrature node counts too small")
        if not self.v_max_factor > 0 or not self.rtol > 0:
            raise ValueError("v_max_factor and rtol must be positive")


def maxwell_speed_pdf(gas: GasParameters, v):
    """``4 pi v^2 (beta m / 2 pi)^{3/2} exp(-beta m v^2 / 2)``."""
    v = np.asarray(v, dtype=float)
    bm = gas.beta * gas.mass
    return 4.0 * np.pi * v**2 * (bm / (2.0 * np.pi)) ** 1.5 * np.exp(-0.5 * bm * v**2)


@functools.lru_cache(maxsize=None)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def speed_rule(gas: GasParameters, breakpoints, cfg: QuadratureConfig, n: int | None = None):
    """Nodes and weights on ``[0, v_max]`` cut at ``breakpoints`` (kinetic energies)."""
    n = cfg.v_nodes if n is None else n
    v_max = cfg.v_max_factor / np.sqrt(gas.beta * gas.mass)
    cuts = np.sqrt(2.0 * np.asarray(breakpoints, dtype=float) / gas.mass)
    edges = np.concatenate([[0.0], np.unique(cuts[(cuts > 0) & (cuts < v_max)]), [v_max]])
    x, w = _leggauss(n)
    vs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        span = np.sqrt(b * b - a * a)
        u = 0.5 * span * (1.0 + x)
        v = np.sqrt(a * a + u * u)
        vs.append(v)
        ws.append(0.5 * span * w * u / v)
    return np.concatenate(vs), np.concatenate(ws)


def chi(channels: ChannelSet, alpha, beta, alpha0, beta0, energy_tolerance: float = ENERGY_TOL) -> int:
    """1 if ``E_alpha - E_alpha0 == E_beta - E_beta0`` within tolerance, else 0."""
    e = channels.energies
    al, be, al0, be0 = (channels.index(c) for c in (alpha, beta, alpha0, beta0))
    return int(abs((e[al] - e[al0]) - (e[be] - e[be0])) <= energy_tolerance)


def chi_mask(channels: ChannelSet, energy_tolerance: float = ENERGY_TOL) -> np.ndarray:
    """Boolean ``mask[alpha, beta, alpha0, beta0]``."""
    e = channels.energies
    d = e[:, None] - e[None, :]  # [alpha, alpha0]
    diff = d[:, None, :, None] - d[None, :, None, :]
    return np.abs(diff) <= energy_tolerance


def _angular_products(model, al0: int, be0: int, e_kin: np.ndarray) -> np.ndarray:
    """``int dcos f_{alpha al0} f*_{beta be0}`` for all (alpha, beta): shape (N, n, n)."""
    if model.isotropic:
        fa = model.column(al0, e_kin)
        fb = model.column(be0, e_kin)
        return 2.0 * fa[:, :, None] * fb[:, None, :].conj()
    nodes, w = model.cos_rule()
    ee = np.broadcast_to(e_kin[:, None], (e_kin.size, nodes.size))
    cc = np.broadcast_to(nodes[None, :], ee.shape)
    fa = model.column(al0, ee, cc)
    fb = model.column(be0, ee, cc)
    return np.einsum("c,nca,ncb->nab", w, fa, fb.conj())


def _outgoing_speed(model, al0: int, v: np.ndarray) -> np.ndarray:
    """``v_out`` for every outgoing channel (zero where closed), shape (N, n)."""
    e = model.channels.energies
    sq = v[:, None] ** 2 - 2.0 * (e[None, :] - e[al0]) / model.mass
    return np.sqrt(np.where(sq > 0, sq, 0.0))


def _pair_block_nodes(model, gas, al0, be0, cfg, n):
    bp = np.union1d(model.breakpoints(al0), model.breakpoints(be0))
    v, w = speed_rule(gas, bp, cfg, n)
    e_kin = 0.5 * gas.mass * v * v
    ang = _angular_products(model, al0, be0, e_kin)
    vout = _outgoing_speed(model, al0, v)
    weight = w * maxwell_speed_pdf(gas, v) * gas.n_gas * 2.0 * np.pi
    return np.einsum("n,na,nab->ab", weight, vout, ang)


def _refined(compute, cfg: QuadratureConfig, what: str):
    """Evaluate ``compute(n)`` at ``v_nodes`` and half of it; raise on disagreement."""
    fine = np.asarray(compute(cfg.v_nodes))
    coarse = np.asarray(compute(cfg.v_nodes // 2))
    scale = max(float(np.max(np.abs(fine), initial=0.0)), 1e-300)
    floor = 1e-10 * scale
    resid = float(np.max(np.abs(fine - coarse) / np.maximum(np.abs(fine), floor), initial=0.0))
    if resid > cfg.rtol:
        raise QuadratureError(
            f"{what}: relative change {resid:.3e} under node refinement exceeds {cfg.rtol:.1e}"
        )
    return fine, resid


def _pair_block(model, gas, al0, be0, cfg):
    mask = chi_mask(model.channels, cfg.energy_tolerance)[:, :, al0, be0]
    if not mask.any():
        n = model.channels.n
        return np.zeros((n, n), dtype=complex), 0.0
    block, resid = _refined(
        lambda n: np.where(mask, _pair_block_nodes(model, gas, al0, be0, cfg, n), 0.0),
        cfg,
        f"rate block (alpha0={al0}, beta0={be0})",
    )
    if al0 == be0:
        # |f|^2 terms: drop rounding-level imaginary parts
        block[np.diag_indices_from(block)] = block.diagonal().real
    return block, resid


def rate_coefficient(model, gas: GasParameters, alpha, beta, alpha0, beta0,
                     cfg: QuadratureConfig = QuadratureConfig()) -> complex:
    """Thermally averaged rate coefficient ``M_{alpha beta}^{alpha0 beta0}``.

    ``chi * int dv nu(v) n_gas v_out 2 pi int dcos f_{alpha alpha0} f*_{beta beta0}``,
    with the integrand zero below the outgoing threshold.
    """
    ch = model.channels
    al, be, al0, be0 = (ch.index(c) for c in (alpha, beta, alpha0, beta0))
    if not chi(ch, al, be, al0, be0, cfg.energy_tolerance):
        return 0j
    block, _ = _pair_block(model, gas, al0, be0, cfg)
    return complex(block[al, be])


@dataclass(frozen=True)
class RateTensor:
    """Rate coefficients ``M[alpha, beta, alpha0, beta0]`` (units 1/time)."""

    channels: ChannelSet
    m: np.ndarray
    chi_mask: np.ndarray
    quadrature_residual: float = 0.0

    def __post_init__(self):
        n = self.channels.n
        m = np.asarray(self.m, dtype=complex)
        mask = np.asarray(self.chi_mask, dtype=bool)
        if m.shape != (n,) * 4 or mask.shape != (n,) * 4:
            raise ValueError(f"rate tensor must have shape {(n,) * 4}")
        m.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "chi_mask", mask)

    @property
    def n(self) -> int:
        return self.channels.n

    def coefficient_matrix(self) -> np.ndarray:
        """``C[(alpha, alpha0), (beta, beta0)] = M_{alpha beta}^{alpha0 beta0}``."""
        n = self.n
        return self.m.transpose(0, 2, 1, 3).reshape(n * n, n * n)

    def psd_min_eig(self) -> float:
        c = self.coefficient_matrix()
        return float(np.linalg.eigvalsh(0.5 * (c + c.conj().T))[0])

    def hermiticity_residual(self) -> float:
        pair = self.m.transpose(1, 0, 3, 2).conj()
        scale = max(float(np.max(np.abs(self.m), initial=0.0)), 1e-300)
        return float(np.max(np.abs(self.m - pair), initial=0.0)) / scale

    def check(self) -> list[str]:
        """Names of violated invariants (empty when all hold)."""
        bad = []
        if np.any(self.m[~self.chi_mask] != 0):
            bad.append("chi_mask")
        if self.hermiticity_residual() > 1e-10:
            bad.append("hermiticity")
        c = self.coefficient_matrix()
        norm = float(np.linalg.norm(c, 2)) if c.size else 0.0
        if self.psd_min_eig() < -1e-10 * max(norm, 1e-300):
            bad.append("psd")
        return bad

    def validate(self) -> "RateTensor":
        bad = self.check()
        if bad:
            raise ValueError(
                f"rate tensor violates invariants: {', '.join(bad)} "
                f"(psd_min_eig={self.psd_min_eig():.3e})"
            )
        return self

    def scaled(self, factor: float) -> "RateTensor":
        return RateTensor(self.channels, self.m * factor, self.chi_mask, self.quadrature_residual)


@dataclass(frozen=True)
class EnergyShifts:
    channels: ChannelSet
    epsilon: np.ndarray
    quadrature_residual: float = 0.0

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=float).reshape(-1)
        if eps.size != self.channels.n or not np.all(np.isfinite(eps)):
            raise ValueError("need one finite energy shift per channel")
        eps.setflags(write=False)
        object.__setattr__(self, "epsilon", eps)

    @classmethod
    def zeros(cls, channels: ChannelSet) -> "EnergyShifts":
        return cls(channels, np.zeros(channels.n))


def rate_tensor(model, gas: GasParameters, cfg: QuadratureConfig = QuadratureConfig(),
                threads: int = 1) -> RateTensor:
    """All ``n^4`` rate coefficients.

    Blocks with a common ``(alpha0, beta0)`` share one set of amplitude
    evaluations.  Blocks are independent, so ``threads > 1`` changes only the
    schedule, never the numbers.
    """
    ch = model.channels
    n = ch.n
    pairs = list(itertools.product(range(n), range(n)))
    work = lambda pair: _pair_block(model, gas, pair[0], pair[1], cfg)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(work, pairs))
    else:
        blocks = [work(p) for p in pairs]
    m = np.zeros((n,) * 4, dtype=complex)
    resid = 0.0
    for (al0, be0), (block, r) in zip(pairs, blocks):
        m[:, :, al0, be0] = block
        resid = max(resid, r)
    return RateTensor(ch, m, chi_mask(ch, cfg.energy_tolerance), resid)


def energy_shift(model, gas: GasParameters, alpha, cfg: QuadratureConfig = QuadratureConfig()) -> float:
    """``-2 pi (n_gas / m) int dv nu(v) Re f_{alpha alpha}(forward; m v^2 / 2)``."""
    al = model.channels.index(alpha)

    def compute(n):
        v, w = speed_rule(gas, model.breakpoints(al), cfg, n)
        e_kin = 0.5 * gas.mass * v * v
        cos = None if model.isotropic else np.ones_like(e_kin)
        f = model.column(al, e_kin, cos)[:, al]
        return np.sum(w * maxwell_speed_pdf(gas, v) * f.real)

    val, _ = _refined(compute, cfg, f"energy shift of channel {al}")
    return float(-2.0 * np.pi * gas.n_gas / gas.mass * val)


def energy_shifts(model, gas: GasParameters, cfg: QuadratureConfig = QuadratureConfig()) -> EnergyShifts:
    eps = [energy_shift(model, gas, al, cfg) for al in range(model.channels.n)]
    return EnergyShifts(model.channels, np.array(eps))


def elastic_dephasing_rate(model, gas: GasParameters, alpha, beta,
                           cfg: QuadratureConfig = QuadratureConfig()) -> float:
    """``pi int dv nu n_gas v int dcos |f_{alpha alpha} - f_{beta beta}|^2``."""
    ch = model.channels
    al, be = ch.index(alpha), ch.index(beta)
    if al == be:
        raise ValueError("dephasing rate needs two distinct channels")

    def compute(n):
        v, w = speed_rule(gas, np.union1d(model.breakpoints(al), model.breakpoints(be)), cfg, n)
        e_kin = 0.5 * gas.mass * v * v
        if model.isotropic:
            fa, fb = model.column(al, e_kin)[:, al], model.column(be, e_kin)[:, be]
            cw = np.array([2.0])
            fa, fb = fa[:, None], fb[:, None]
        else:
            nodes, cw = model.cos_rule()
            ee = np.broadcast_to(e_kin[:, None], (e_kin.size, nodes.size))
            cc = np.broadcast_to(nodes[None, :], ee.shape)
            fa, fb = model.column(al, ee, cc)[..., al], model.column(be, ee, cc)[..., be]
        ang = np.abs(fa - fb) ** 2 @ cw
        # |fa|^2 + |fb|^2 sets the scale below which refinement differences are rounding
        ref = (np.abs(fa) ** 2 + np.abs(fb) ** 2) @ cw
        wt = w * maxwell_speed_pdf(gas, v) * gas.n_gas * v
        return np.array([np.sum(wt * ang), np.sum(wt * ref)])

    val, _ = _refined(compute, cfg, f"dephasing rate ({al}, {be})")
    return float(np.pi * val[0])


def diagonal_rate_from_cross_sections(model, gas: GasParameters, alpha, alpha0,
                                      cfg: QuadratureConfig = QuadratureConfig()) -> float:
    """``n_gas int dv nu v_out sigma_{alpha alpha0}`` from :func:`pair_cross_section`."""
    from .scattering import pair_cross_section

    ch = model.channels
    al, al0 = ch.index(alpha), ch.index(alpha0)
    bp = model.breakpoints(al0)
    v, w = speed_rule(gas, bp, cfg)
    vout = _outgoing_speed(model, al0, v)[:, al]
    total = 0.0
    for vi, wi, vo in zip(v, w, vout):
        if vo <= 0:
            continue
        e_tot = ch.energies[al0] + 0.5 * gas.mass * vi * vi
        total += wi * maxwell_speed_pdf(gas, vi) * vo * pair_cross_section(model, al, al0, e_tot)
    return float(gas.n_gas * total)


# -- Monte Carlo momentum-space oracle ----------------------------------------


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: np.ndarray
    stderr: np.ndarray
    n_samples: int = 0


def _unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.normal(size=(n, 3))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@dataclass
class _Accumulator:
    total: np.ndarray
    total_sq: np.ndarray
    count: int = 0


def rate_tensor_m3_oracle(model, gas: GasParameters, n_samples: int = 10**6, seed: int = 0,
                          rotation: np.ndarray | None = None, chunk: int = 25_000,
                          energy_tolerance: float = ENERGY_TOL) -> MonteCarloEstimate:
    """Monte Carlo estimate of every ``M_{alpha beta}^{alpha0 beta0}`` from the
    three-dimensional momentum integral.

    Incoming momenta are drawn from the Maxwell-Boltzmann distribution and
    outgoing directions uniformly on the sphere.  The energy delta fixes the
    outgoing momentum, and its Jacobian ``m p_out`` turns the momentum
    integral into ``n_gas v_out 4 pi <f f*>``.  ``rotation`` rotates the
    frame in which outgoing directions are drawn.

    ``stderr`` is the complex standard error ``sqrt(var(Re)/N + var(Im)/N)``.
    """
    ch = model.channels
    n = ch.n
    e = ch.energies
    mask = chi_mask(ch, energy_tolerance)
    rng = np.random.default_rng(seed)
    shape = (n,) * 4
    acc = _Accumulator(np.zeros(shape, complex), np.zeros(shape), 0)
    sigma_p = np.sqrt(gas.mass / gas.beta)
    remaining = n_samples
    while remaining > 0:
        k = min(chunk, remaining)
        remaining -= k
        p0 = rng.normal(scale=sigma_p, size=(k, 3))
        nhat = _unit_vectors(rng, k)
        if rotation is not None:
            nhat = nhat @ np.asarray(rotation, dtype=float).T
        p0n = np.linalg.norm(p0, axis=1)
        cos = np.clip(np.einsum("ij,ij->i", nhat, p0) / p0n, -1.0, 1.0)
        v = p0n / gas.mass
        e_kin = 0.5 * gas.mass * v * v
        cols = np.stack(
            [model.column(a0, e_kin, None if model.isotropic else cos) for a0 in range(n)],
            axis=-1,
        )  # [k, alpha, alpha0]
        sq = v[:, None, None] ** 2 - 2.0 * (e[None, :, None] - e[None, None, :]) / gas.mass
        vout = np.sqrt(np.where(sq > 0, sq, 0.0))  # [k, alpha, alpha0]
        amp = cols * np.sqrt(vout)
        # X[k, al, be, al0, be0]; chi makes v_out equal for both factors
        x = 4.0 * np.pi * gas.n_gas * amp[:, :, None, :, None] * amp[:, None, :, None, :].conj()
        x = np.where(mask, x, 0.0)
        acc.total += x.sum(axis=0)
        acc.total_sq += (x.real**2 + x.imag**2).sum(axis=0)
        acc.count += k
    mean = acc.total / acc.count
    var = acc.total_sq / acc.count - np.abs(mean) ** 2
    stderr = np.sqrt(np.clip(var, 0.0, None) * acc.count / max(acc.count - 1, 1) / acc.count)
    return MonteCarloEstimate(mean, stderr, acc.count)


def rate_coefficient_m3_oracle(model, gas: GasParameters, alpha, beta, alpha0, beta0,
                               n_samples: int = 10**6, seed: int = 0,
                               rotation: np.ndarray | None = None):
    """Single entry of :func:`rate_tensor_m3_oracle` as ``(value, stderr)``."""
    ch = model.channels
    idx = tuple(ch.index(c) for c in (alpha, beta, alpha0, beta0))
    if not chi(ch, *idx):
        return 0j, 0.0
    est = rate_tensor_m3_oracle(model, gas, n_samples, seed, rotation)
    return complex(est.value[idx]), float(est.stderr[idx])
