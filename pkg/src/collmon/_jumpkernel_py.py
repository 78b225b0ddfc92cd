"""Pure-Python single-trajectory jump kernel (fallback for the compiled one)."""

from __future__ import annotations

import numpy as np

MAX_BISECT = 200


def run_trajectory(V, lam, Vinv, ops, psi0, times, bit_generator, out, norm_tol=1e-10):
    """Fill ``out[k]`` with the normalized state at ``times[k]``; return the jump count.

    Returns ``-1`` if a jump is triggered while every jump rate vanishes.
    """
    rng = np.random.Generator(bit_generator)
    nt = times.shape[0]
    nops = ops.shape[0]

    def evolve(c, tau):
        return V @ (np.exp(-1j * lam * tau) * c)

    def norm2(x):
        return float(np.vdot(x, x).real)

    phi = np.array(psi0, dtype=complex)
    c = Vinv @ phi
    t0 = float(times[0])
    t_lo = t0
    r = rng.random()
    jumps = 0
    k = 0
    while k < nt:
        psi = evolve(c, times[k] - t0)
        n_hi = norm2(psi)
        if n_hi > r:
            out[k] = psi / np.sqrt(n_hi)
            t_lo = float(times[k])
            k += 1
            continue
        t_hi = float(times[k])
        n_lo = norm2(evolve(c, t_lo - t0))
        it = 0
        while n_lo - n_hi > norm_tol and it < MAX_BISECT:
            t_mid = 0.5 * (t_lo + t_hi)
            if t_mid <= t_lo or t_mid >= t_hi:
                break
            n_mid = norm2(evolve(c, t_mid - t0))
            if n_mid > r:
                t_lo, n_lo = t_mid, n_mid
            else:
                t_hi, n_hi = t_mid, n_mid
            it += 1
        psi = evolve(c, t_hi - t0)
        lpsi = ops @ psi  # [q, i]
        w = np.einsum("qi,qi->q", lpsi.conj(), lpsi).real
        total = float(w.sum()) if nops else 0.0
        if not total > 0.0:
            return -1
        u = rng.random() * total
        q = nops - 1
        acc = 0.0
        for j in range(nops):
            acc += w[j]
            if u < acc:
                q = j
                break
        phi = lpsi[q] / np.sqrt(w[q])
        c = Vinv @ phi
        t0 = t_lo = t_hi
        jumps += 1
        r = rng.random()
    return jumps
