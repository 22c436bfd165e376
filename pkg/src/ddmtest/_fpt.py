"""First-passage simulation kernels with counter-based random streams.

Every simulated path owns a Philox4x32-10 stream keyed by
(master seed, domain, path index); step k of a path consumes exactly one
Philox block, which yields the Gaussian increment (via the inverse normal
CDF) and the auxiliary uniform for the within-step bridge crossing check.
Because draws are addressed by counters rather than consumed from shared
state, results are bit-identical no matter how paths are split across
threads, and perturbed-parameter runs reuse the same Brownian paths
(common random numbers) for free.

The batch kernel advances one Brownian path while tracking several
"variants" (drift, boundary-table) at once; each variant sees exactly the
draws it would see if simulated alone, so batched and standalone runs
agree bit for bit.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

# stream domains: keep data, model-moment, and oracle paths disjoint
DOMAIN_DATA = 1
DOMAIN_MODEL = 2
DOMAIN_ORACLE = 3

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True, inline="always")
def _philox4x32(c0, c1, c2, c3, k0, k1):
    """One Philox4x32-10 block; all arguments/outputs are 32-bit values in uint64."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> np.uint64(32)
        lo0 = p0 & _MASK32
        hi1 = p1 >> np.uint64(32)
        lo1 = p1 & _MASK32
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def _to_unit(hi, lo):
    """Map two 32-bit words to a double strictly inside (0, 1)."""
    w = (hi << np.uint64(32)) | lo
    return (float(w >> np.uint64(11)) + 0.5) * _INV53


@njit(cache=True, inline="always")
def _ndtri(u):
    """Inverse standard normal CDF (Wichura's AS 241, double precision)."""
    q = u - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    r = u if q < 0.0 else 1.0 - u
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    x = num / den
    return -x if q < 0.0 else x


# ln 2 / 2: slack so the rare-branch trigger covers the two-barrier sum test
_HALF_LN2 = 0.5 * math.log(2.0)


@njit(cache=True, parallel=True)
def _simulate_batch(seed, domain, path_start, n_paths, drifts, btab, dt, use_bridge,
                    out_time, out_side, out_censored):
    """Simulate ``n_paths`` Brownian paths against ``V`` (drift, boundary) variants.

    btab has shape (V, L+1): boundary values on the step grid 0, dt, ..., L*dt.
    Outputs are (V, n_paths).  side is +1 for an upper exit, -1 for lower.
    Censored paths get time L*dt and the sign of the terminal position.
    """
    V = btab.shape[0]
    L = btab.shape[1] - 1
    sqdt = math.sqrt(dt)
    k0 = seed & _MASK32
    k1 = (seed >> np.uint64(32)) & _MASK32
    c3 = np.uint64(domain) & _MASK32
    for j in prange(n_paths):
        path = np.uint64(path_start + j)
        c1 = path & _MASK32
        c2 = (path >> np.uint64(32)) & _MASK32
        alive = np.ones(V, np.uint8)
        n_alive = V
        b_prev = 0.0  # Brownian position at the start of the step
        for k in range(L):
            o0, o1, o2, o3 = _philox4x32(np.uint64(k), c1, c2, c3, k0, k1)
            z = _ndtri(_to_unit(o0, o1))
            u2 = _to_unit(o2, o3)
            b_next = b_prev + sqdt * z
            t1 = k * dt
            t2 = t1 + dt
            ck = -0.5 * dt * math.log(u2)
            for v in range(V):
                if alive[v] == 0:
                    continue
                d = drifts[v]
                bb1 = btab[v, k]
                bb2 = btab[v, k + 1]
                z1 = d * t1 + b_prev
                z2 = d * t2 + b_next
                if bb2 <= 0.0:
                    # boundary collapsed within the step: stop at the grid point
                    alive[v] = 0
                    n_alive -= 1
                    out_time[v, j] = t2
                    out_side[v, j] = 1 if (z2 > 0.0 or (z2 == 0.0 and u2 < 0.5)) else -1
                    continue
                if z2 >= bb2:
                    den = (z2 - z1) - (bb2 - bb1)
                    theta = (bb1 - z1) / den if den > 0.0 else 1.0
                    if theta > 1.0:
                        theta = 1.0
                    elif theta < 0.0:
                        theta = 0.0
                    alive[v] = 0
                    n_alive -= 1
                    out_time[v, j] = t1 + theta * dt
                    out_side[v, j] = 1
                    continue
                if z2 <= -bb2:
                    den = -(z2 - z1) - (bb2 - bb1)
                    theta = (bb1 + z1) / den if den > 0.0 else 1.0
                    if theta > 1.0:
                        theta = 1.0
                    elif theta < 0.0:
                        theta = 0.0
                    alive[v] = 0
                    n_alive -= 1
                    out_time[v, j] = t1 + theta * dt
                    out_side[v, j] = -1
                    continue
                if use_bridge:
                    # Brownian-bridge crossing of the (piecewise linear) level:
                    # exp(-2*du/dt) is the upper-barrier crossing probability;
                    # comparing du against ck = -dt*ln(u2)/2 is the same test
                    # without the exp.  The exp branch only runs when a
                    # crossing is actually possible for this u2.
                    du = (bb1 - z1) * (bb2 - z2)
                    dd = (bb1 + z1) * (bb2 + z2)
                    dmin = du if du < dd else dd
                    if dmin <= ck + _HALF_LN2 * dt:
                        pu = math.exp(-2.0 * du / dt)
                        pd = math.exp(-2.0 * dd / dt)
                        if u2 < pu:
                            alive[v] = 0
                            n_alive -= 1
                            out_time[v, j] = t1 + 0.5 * dt
                            out_side[v, j] = 1
                        elif u2 < pu + pd:
                            alive[v] = 0
                            n_alive -= 1
                            out_time[v, j] = t1 + 0.5 * dt
                            out_side[v, j] = -1
            if n_alive == 0:
                break
            b_prev = b_next
        if n_alive > 0:
            t_end = L * dt
            for v in range(V):
                if alive[v] == 1:
                    out_time[v, j] = t_end
                    zend = drifts[v] * t_end + b_prev
                    out_side[v, j] = 1 if zend >= 0.0 else -1
                    out_censored[v, j] = True


def simulate_batch(seed: int, domain: int, path_start: int, n_paths: int,
                   drifts: np.ndarray, btab: np.ndarray, dt: float,
                   use_bridge: bool = True):
    """Allocate outputs and run the batch kernel.  Returns (times, sides, censored)."""
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    if path_start < 0 or seed < 0:
        raise ValueError("seed and path_start must be nonnegative")
    drifts = np.ascontiguousarray(drifts, dtype=np.float64)
    btab = np.ascontiguousarray(btab, dtype=np.float64)
    if btab.ndim != 2 or btab.shape[0] != drifts.size or btab.shape[1] < 2:
        raise ValueError("btab must have shape (n_variants, n_steps + 1)")
    if btab.shape[1] - 1 >= 2**32:
        raise ValueError("too many time steps for the 32-bit step counter")
    V, n = drifts.size, int(n_paths)
    out_time = np.empty((V, n), dtype=np.float64)
    out_side = np.empty((V, n), dtype=np.int8)
    out_censored = np.zeros((V, n), dtype=np.bool_)
    _simulate_batch(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(domain),
                    np.uint64(path_start), n, drifts, btab, float(dt),
                    bool(use_bridge), out_time, out_side, out_censored)
    return out_time, out_side, out_censored


def philox4x32_block(seed: int, c0: int, c1: int, c2: int, c3: int) -> tuple:
    """One Philox4x32-10 block as plain ints (exposed for tests and seed derivation)."""
    m = 0xFFFFFFFF
    out = _philox4x32(np.uint64(c0 & m), np.uint64(c1 & m), np.uint64(c2 & m),
                      np.uint64(c3 & m), np.uint64(seed & m),
                      np.uint64((seed >> 32) & m))
    return tuple(int(x) for x in out)


def derive_seed(master_seed: int, *indices: int) -> int:
    """Deterministic 64-bit child seed from a master seed and up to three indices."""
    idx = list(indices) + [0, 0, 0]
    o0, o1, _, _ = philox4x32_block(master_seed, idx[0], idx[1], idx[2], 0x5EED5EED)
    return (o0 << 32) | o1


def ndtri(u: float) -> float:
    """Inverse standard normal CDF on (0, 1) (same code path the kernel uses)."""
    if not 0.0 < u < 1.0:
        raise ValueError("u must be strictly inside (0, 1)")
    return float(_ndtri(float(u)))
