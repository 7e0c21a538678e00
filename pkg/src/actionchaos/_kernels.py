"""Compiled inner loops: polynomial potentials and composed leapfrog steps.

Potentials are passed as an integer exponent table ``exps`` of shape (K, D)
and a coefficient vector ``coefs`` of shape (K,). All kernels release the GIL
so a thread pool can run independent orbits side by side.
"""
import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)

_CBRT2 = 2.0 ** (1.0 / 3.0)
_W1 = 1.0 / (2.0 - _CBRT2)
_W0 = -_CBRT2 / (2.0 - _CBRT2)
_FIFTH2 = 2.0 ** (1.0 / 5.0)
_Z1 = 1.0 / (2.0 - _FIFTH2)
_Z0 = -_FIFTH2 / (2.0 - _FIFTH2)


def scheme_weights(order):
    """Substep fractions of a leapfrog composition of the given order."""
    if order == 2:
        return np.array([1.0])
    if order == 4:
        return np.array([_W1, _W0, _W1])
    if order == 6:
        inner = np.array([_W1, _W0, _W1])
        return np.concatenate([_Z1 * inner, _Z0 * inner, _Z1 * inner])
    raise ValueError(f"unsupported integrator order {order}; use 2, 4 or 6")


@njit(**_JIT)
def _ipow(x, e):
    r = 1.0
    for _ in range(e):
        r *= x
    return r


@njit(**_JIT)
def potential_value(q, exps, coefs):
    v = 0.0
    for k in range(coefs.shape[0]):
        t = coefs[k]
        for d in range(q.shape[0]):
            e = exps[k, d]
            if e > 0:
                t *= _ipow(q[d], e)
        v += t
    return v


@njit(**_JIT)
def force(q, exps, coefs, out):
    """out = -grad V(q)."""
    dim = q.shape[0]
    for d in range(dim):
        out[d] = 0.0
    for k in range(coefs.shape[0]):
        for d in range(dim):
            e = exps[k, d]
            if e == 0:
                continue
            t = coefs[k] * e * _ipow(q[d], e - 1)
            for d2 in range(dim):
                if d2 != d and exps[k, d2] > 0:
                    t *= _ipow(q[d2], exps[k, d2])
            out[d] -= t


@njit(**_JIT)
def hessian(q, exps, coefs, out):
    dim = q.shape[0]
    for a in range(dim):
        for b in range(dim):
            out[a, b] = 0.0
    for k in range(coefs.shape[0]):
        for a in range(dim):
            ea = exps[k, a]
            if ea == 0:
                continue
            for b in range(a, dim):
                eb = exps[k, b]
                if a == b:
                    if ea < 2:
                        continue
                    t = coefs[k] * ea * (ea - 1) * _ipow(q[a], ea - 2)
                else:
                    if eb == 0:
                        continue
                    t = coefs[k] * ea * eb * _ipow(q[a], ea - 1) * _ipow(q[b], eb - 1)
                for c in range(dim):
                    if c != a and c != b and exps[k, c] > 0:
                        t *= _ipow(q[c], exps[k, c])
                out[a, b] += t
    for a in range(dim):
        for b in range(a):
            out[a, b] = out[b, a]


@njit(**_JIT)
def _finite(x):
    for i in range(x.shape[0]):
        if not math.isfinite(x[i]):
            return False
    return True


@njit(**_JIT)
def _step(q, p, f, mass, exps, coefs, h, weights):
    # kick-drift-kick substeps; f holds the force at q on entry and exit
    dim = q.shape[0]
    for w in weights:
        hw = h * w
        for d in range(dim):
            p[d] += 0.5 * hw * f[d]
            q[d] += hw * p[d] / mass
        force(q, exps, coefs, f)
        for d in range(dim):
            p[d] += 0.5 * hw * f[d]


@njit(**_JIT)
def _step_tangent(q, p, f, hs, dq, dp, mass, exps, coefs, h, weights):
    # dq, dp are (D, M) blocks of tangent vectors; hs holds the Hessian at q
    dim = q.shape[0]
    ncol = dq.shape[1]
    for w in weights:
        hw = h * w
        for d in range(dim):
            p[d] += 0.5 * hw * f[d]
        for j in range(ncol):
            for a in range(dim):
                acc = 0.0
                for b in range(dim):
                    acc += hs[a, b] * dq[b, j]
                dp[a, j] -= 0.5 * hw * acc
        for d in range(dim):
            q[d] += hw * p[d] / mass
        for j in range(ncol):
            for a in range(dim):
                dq[a, j] += hw * dp[a, j] / mass
        force(q, exps, coefs, f)
        hessian(q, exps, coefs, hs)
        for d in range(dim):
            p[d] += 0.5 * hw * f[d]
        for j in range(ncol):
            for a in range(dim):
                acc = 0.0
                for b in range(dim):
                    acc += hs[a, b] * dq[b, j]
                dp[a, j] -= 0.5 * hw * acc


@njit(**_JIT)
def propagate(q0, p0, mass, exps, coefs, dt, nsteps, weights, stride):
    """Fixed-step propagation recording every ``stride``-th state.

    Returns (qs, ps, n_valid) where n_valid counts the finite recorded rows.
    """
    dim = q0.shape[0]
    nrec = nsteps // stride + 1
    qs = np.empty((nrec, dim))
    ps = np.empty((nrec, dim))
    q = q0.copy()
    p = p0.copy()
    f = np.empty(dim)
    force(q, exps, coefs, f)
    qs[0] = q
    ps[0] = p
    r = 1
    for n in range(1, nsteps + 1):
        _step(q, p, f, mass, exps, coefs, dt, weights)
        if not (_finite(q) and _finite(p)):
            return qs, ps, r
        if n % stride == 0:
            qs[r] = q
            ps[r] = p
            r += 1
    return qs, ps, r


@njit(**_JIT)
def shoot(q0, v0, mass, exps, coefs, dt, nsteps, weights):
    """Final position and its Jacobian with respect to the initial velocity."""
    dim = q0.shape[0]
    q = q0.copy()
    p = mass * v0
    f = np.empty(dim)
    hs = np.empty((dim, dim))
    force(q, exps, coefs, f)
    hessian(q, exps, coefs, hs)
    dq = np.zeros((dim, dim))
    dp = np.zeros((dim, dim))
    for d in range(dim):
        dp[d, d] = mass
    for _ in range(nsteps):
        _step_tangent(q, p, f, hs, dq, dp, mass, exps, coefs, dt, weights)
        if not _finite(q):
            return q, dq, False
    return q, dq, _finite(q) and _finite(dq.ravel())


@njit(**_JIT)
def lyapunov_tangent(q0, p0, w0, mass, exps, coefs, dt, n_intervals,
                     steps_per_interval, weights):
    """Benettin loop on the tangent map; returns per-interval log growths."""
    dim = q0.shape[0]
    q = q0.copy()
    p = p0.copy()
    f = np.empty(dim)
    hs = np.empty((dim, dim))
    force(q, exps, coefs, f)
    hessian(q, exps, coefs, hs)
    dq = np.empty((dim, 1))
    dp = np.empty((dim, 1))
    norm = 0.0
    for d in range(dim):
        norm += w0[d] ** 2 + w0[dim + d] ** 2
    norm = math.sqrt(norm)
    for d in range(dim):
        dq[d, 0] = w0[d] / norm
        dp[d, 0] = w0[dim + d] / norm
    logs = np.empty(n_intervals)
    for i in range(n_intervals):
        for _ in range(steps_per_interval):
            _step_tangent(q, p, f, hs, dq, dp, mass, exps, coefs, dt, weights)
        norm = 0.0
        for d in range(dim):
            norm += dq[d, 0] ** 2 + dp[d, 0] ** 2
        norm = math.sqrt(norm)
        if not (_finite(q) and _finite(p) and math.isfinite(norm)) or norm == 0.0:
            return logs, q, p, i
        logs[i] = math.log(norm)
        for d in range(dim):
            dq[d, 0] /= norm
            dp[d, 0] /= norm
    return logs, q, p, n_intervals


@njit(**_JIT)
def lyapunov_shadow(q0, p0, w0, delta0, mass, exps, coefs, dt, n_intervals,
                    steps_per_interval, weights):
    """Two-trajectory divergence with renormalisation of the separation."""
    dim = q0.shape[0]
    q = q0.copy()
    p = p0.copy()
    norm = 0.0
    for d in range(2 * dim):
        norm += w0[d] ** 2
    norm = math.sqrt(norm)
    qs = q0.copy()
    ps = p0.copy()
    for d in range(dim):
        qs[d] += delta0 * w0[d] / norm
        ps[d] += delta0 * w0[dim + d] / norm
    f = np.empty(dim)
    fs = np.empty(dim)
    force(q, exps, coefs, f)
    force(qs, exps, coefs, fs)
    logs = np.empty(n_intervals)
    for i in range(n_intervals):
        for _ in range(steps_per_interval):
            _step(q, p, f, mass, exps, coefs, dt, weights)
            _step(qs, ps, fs, mass, exps, coefs, dt, weights)
        dist = 0.0
        for d in range(dim):
            dist += (qs[d] - q[d]) ** 2 + (ps[d] - p[d]) ** 2
        dist = math.sqrt(dist)
        if not (_finite(q) and _finite(p) and math.isfinite(dist)) or dist == 0.0:
            return logs, i
        logs[i] = math.log(dist / delta0)
        for d in range(dim):
            qs[d] = q[d] + (qs[d] - q[d]) * delta0 / dist
            ps[d] = p[d] + (ps[d] - p[d]) * delta0 / dist
        force(qs, exps, coefs, fs)
    return logs, n_intervals


@njit(**_JIT)
def section_crossings(q0, p0, mass, exps, coefs, dt, nsteps, weights, max_points,
                      escape_radius):
    """Upward crossings of y = 0 (so p_y > 0) as refined (x, p_x) pairs.

    Returns (points, count, steps_done, max_abs_energy_error).
    """
    q = q0.copy()
    p = p0.copy()
    f = np.empty(2)
    force(q, exps, coefs, f)
    e0 = 0.5 * (p[0] ** 2 + p[1] ** 2) / mass + potential_value(q, exps, coefs)
    emax = 0.0
    pts = np.empty((max_points, 2))
    count = 0
    qa = np.empty(2)
    pa = np.empty(2)
    fa = np.empty(2)
    for n in range(1, nsteps + 1):
        y_prev = q[1]
        qa[:] = q
        pa[:] = p
        _step(q, p, f, mass, exps, coefs, dt, weights)
        if not (_finite(q) and _finite(p)) or abs(q[0]) + abs(q[1]) > escape_radius:
            return pts, count, n - 1, emax
        e = 0.5 * (p[0] ** 2 + p[1] ** 2) / mass + potential_value(q, exps, coefs)
        if abs(e - e0) > emax:
            emax = abs(e - e0)
        if y_prev < 0.0 <= q[1] and count < max_points:
            # Newton on the substep length tau so that y(tau) = 0
            tau = dt * (-y_prev) / (q[1] - y_prev)
            qb = np.empty(2)
            pb = np.empty(2)
            for _ in range(8):
                qb[:] = qa
                pb[:] = pa
                force(qb, exps, coefs, fa)
                _step(qb, pb, fa, mass, exps, coefs, tau, weights)
                vy = pb[1] / mass
                if vy == 0.0:
                    break
                delta = qb[1] / vy
                tau -= delta
                if abs(delta) < 1e-15 * dt:
                    break
            qb[:] = qa
            pb[:] = pa
            force(qb, exps, coefs, fa)
            _step(qb, pb, fa, mass, exps, coefs, tau, weights)
            pts[count, 0] = qb[0]
            pts[count, 1] = pb[0]
            count += 1
    return pts, count, nsteps, emax


@njit(**_JIT)
def simpson_action(qs, vs, mass, exps, coefs, dt):
    """Composite Simpson integral of (m/2)|v|^2 - V(q) on uniform samples.

    Returns (S_h, S_2h); S_2h uses every other sample and is nan unless the
    interval count is divisible by 4.
    """
    n = qs.shape[0] - 1
    dim = qs.shape[1]
    lag = np.empty(n + 1)
    for i in range(n + 1):
        ke = 0.0
        for d in range(dim):
            ke += vs[i, d] * vs[i, d]
        lag[i] = 0.5 * mass * ke - potential_value(qs[i], exps, coefs)
    fine = lag[0] + lag[n]
    for i in range(1, n):
        fine += (4.0 if i % 2 else 2.0) * lag[i]
    fine *= dt / 3.0
    coarse = np.nan
    if n % 4 == 0:
        m = n // 2
        coarse = lag[0] + lag[n]
        for j in range(1, m):
            coarse += (4.0 if j % 2 else 2.0) * lag[2 * j]
        coarse *= 2.0 * dt / 3.0
    return fine, coarse
