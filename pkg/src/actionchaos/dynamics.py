"""Mechanical systems with polynomial potentials.

Trajectories between fixed endpoints are found by shooting on the initial
velocity. Propagation uses a fixed-step composed leapfrog, and the shooting
Jacobian comes from the tangent map of that same discrete scheme, so Newton
converges on the discrete flow itself.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate

from . import _kernels
from .errors import (
    BlowUpError,
    BVPFailure,
    CausticSingularityError,
    CausticWarning,
    InvalidTrajectoryError,
    ParityError,
    PotentialError,
    QuadratureWarning,
)


@dataclass(frozen=True)
class SystemParams:
    mass: float = 1.0
    hbar: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        if self.dim not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dim}")


class PolynomialPotential:
    """V(q) = sum of c * x**i (1-D) or c * x**i * y**j (2-D), even exponents only.

    >>> V = PolynomialPotential({(2,): 0.5, (4,): 0.1})
    >>> V(np.array([1.0]))
    0.6
    """

    def __init__(self, terms: Mapping[tuple, float]):
        if not terms:
            raise PotentialError("potential needs at least one term")
        clean = {}
        dims = set()
        for key, c in terms.items():
            key = (key,) if isinstance(key, (int, np.integer)) else tuple(int(e) for e in key)
            dims.add(len(key))
            if any(e < 0 for e in key):
                raise PotentialError(f"negative exponent in term {key}")
            if any(e % 2 for e in key):
                raise ParityError(f"odd exponent in term {key}; only parity-even terms allowed")
            c = float(c)
            if not math.isfinite(c):
                raise PotentialError(f"non-finite coefficient for term {key}")
            if c != 0.0:
                clean[key] = clean.get(key, 0.0) + c
        if len(dims) != 1:
            raise PotentialError(f"mixed term arities {sorted(dims)}")
        self.dim = dims.pop()
        if self.dim not in (1, 2):
            raise PotentialError(f"dimension must be 1 or 2, got {self.dim}")
        self.terms = dict(sorted(clean.items()))
        self._check_confining()
        keys = list(self.terms) or [(0,) * self.dim]
        self.exps = np.array(keys, dtype=np.int64).reshape(len(keys), self.dim)
        self.coefs = np.array([self.terms.get(k, 0.0) for k in keys], dtype=np.float64)

    def _check_confining(self):
        degrees = {k: sum(k) for k in self.terms}
        if not any(c > 0 and degrees[k] >= 2 for k, c in self.terms.items()):
            raise PotentialError("not confining: no positive term of degree >= 2")
        top = max(degrees.values())
        for k, c in self.terms.items():
            if degrees[k] == top and c < 0:
                raise PotentialError(f"not confining: leading term {k} has negative coefficient")
        if self.dim == 2:
            # along each axis the highest pure power must be positive
            for axis in range(2):
                pure = {k: c for k, c in self.terms.items() if k[1 - axis] == 0 and k[axis] > 0}
                if not pure or pure[max(pure, key=lambda k: k[axis])] <= 0:
                    raise PotentialError(f"not confining along axis {axis}")

    @classmethod
    def harmonic(cls, mass=1.0, omega=1.0, dim=1):
        v2 = 0.5 * mass * omega**2
        if dim == 1:
            return cls({(2,): v2})
        return cls({(2, 0): v2, (0, 2): v2})

    @classmethod
    def anharmonic(cls, mass=1.0, omega=1.0, quartic=0.0, dim=1, extra=None):
        """Harmonic well plus x**4 (1-D) or x**2 y**2 (2-D) coupling."""
        v2 = 0.5 * mass * omega**2
        if dim == 1:
            terms = {(2,): v2, (4,): quartic}
        else:
            terms = {(2, 0): v2, (0, 2): v2, (2, 2): quartic}
        for k, c in (extra or {}).items():
            k = (k,) if isinstance(k, (int, np.integer)) else tuple(k)
            terms[k] = terms.get(k, 0.0) + c
        return cls(terms)

    def coefficient(self, *exps):
        return self.terms.get(tuple(exps), 0.0)

    def scaled(self, s):
        return PolynomialPotential({k: s * c for k, c in self.terms.items()}) if s else _zero(self.dim)

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        if q.ndim <= 1 and q.size == self.dim:
            return _kernels.potential_value(q.reshape(self.dim), self.exps, self.coefs)
        q = q.reshape(-1, self.dim)
        return np.prod(q[:, None, :] ** self.exps[None, :, :], axis=2) @ self.coefs

    def gradient(self, q):
        out = np.empty(self.dim)
        _kernels.force(np.asarray(q, dtype=float).reshape(self.dim), self.exps, self.coefs, out)
        return -out

    def hessian(self, q):
        out = np.empty((self.dim, self.dim))
        _kernels.hessian(np.asarray(q, dtype=float).reshape(self.dim), self.exps, self.coefs, out)
        return out

    def __eq__(self, other):
        return isinstance(other, PolynomialPotential) and self.terms == other.terms

    def __hash__(self):
        return hash(tuple(self.terms.items()))

    def __repr__(self):
        return f"PolynomialPotential({self.terms!r})"


class _FreePotential(PolynomialPotential):
    """V = 0; bypasses the confinement check (used for homotopy start and tests)."""

    def __init__(self, dim):
        self.dim = dim
        self.terms = {}
        self.exps = np.zeros((1, dim), dtype=np.int64)
        self.coefs = np.zeros(1)


def _zero(dim):
    return _FreePotential(dim)


def free_potential(dim=1):
    return _FreePotential(dim)


@dataclass(frozen=True)
class Trajectory:
    T: float
    q_in: np.ndarray
    q_fi: np.ndarray
    times: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    sensitivity: float = 1.0
    caustic_warning: bool = False
    homotopy: bool = False

    def reversed(self):
        return Trajectory(self.T, self.q_fi, self.q_in, self.times, self.q[::-1].copy(),
                          -self.qdot[::-1], self.residual, self.iterations,
                          self.sensitivity, self.caustic_warning, self.homotopy)

    @property
    def initial_velocity(self):
        return self.qdot[0]


@dataclass(frozen=True)
class ActionValue:
    value: float
    error_estimate: float = 0.0

    def __float__(self):
        return self.value


def _as_point(x, dim):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape != (dim,):
        raise ValueError(f"point {x!r} does not match dimension {dim}")
    return arr


def evaluate_action(system: SystemParams, potential: PolynomialPotential, traj: Trajectory,
                    tol: float = 1e-8) -> ActionValue:
    """Composite Simpson quadrature of the Lagrangian over the stored samples.

    The error estimate is the Richardson difference against Simpson on every
    other sample. A warning is issued if it exceeds ``tol`` relative to the
    action scale.
    """
    q = np.ascontiguousarray(traj.q, dtype=float).reshape(len(traj.times), -1)
    qdot = np.ascontiguousarray(traj.qdot, dtype=float).reshape(q.shape)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
        raise InvalidTrajectoryError("trajectory contains non-finite samples")
    n = len(traj.times) - 1
    if n < 2 or n % 2:
        raise InvalidTrajectoryError("Simpson quadrature needs an even, positive interval count")
    dt = traj.T / n
    value, coarse = _kernels.simpson_action(q, qdot, system.mass, potential.exps,
                                            potential.coefs, dt)
    if math.isfinite(coarse):
        err = abs(value - coarse) / 15.0
    else:
        # Simpson-trapezoid gap: a pessimistic stand-in
        lag = 0.5 * system.mass * np.sum(qdot**2, axis=1) - potential(q)
        err = abs(value - float(integrate.trapezoid(lag, dx=dt)))
    if not math.isfinite(value):
        raise InvalidTrajectoryError("action integral is not finite")
    scale = max(abs(value), system.hbar)
    if err > tol * scale:
        warnings.warn(f"action quadrature error estimate {err:.2e} exceeds tolerance",
                      QuadratureWarning, stacklevel=2)
    return ActionValue(float(value), float(err))


@dataclass(frozen=True)
class ShootingConfig:
    steps: int = 512
    order: int = 4
    tol: float = 1e-11
    max_iter: int = 30
    homotopy_stages: int = 8
    restarts: int = 4
    caustic_threshold: float = 1e6


def _newton(q_in, q_fi, v, system, potential, dt, cfg, weights):
    """Newton on the initial velocity.

    Returns (v, residual, iterations, J, converged, samples). Each update is
    checked with a recording propagation, cheaper than another tangent solve;
    its samples are returned so the caller need not propagate again.
    """
    scale = 1.0 + max(np.max(np.abs(q_in)), np.max(np.abs(q_fi)))
    best_res, best_v, J = math.inf, v, None
    for it in range(1, cfg.max_iter + 1):
        qT, J, ok = _kernels.shoot(q_in, v, system.mass, potential.exps, potential.coefs,
                                   dt, cfg.steps, weights)
        if not ok:
            break
        mismatch = qT - q_fi
        res = float(np.max(np.abs(mismatch)))
        if res < best_res:
            best_res, best_v = res, v
        if res <= cfg.tol * scale:
            return v, res, it, J, True, None
        if it > 3 and res > 1e3 * best_res:
            break
        try:
            step = np.linalg.solve(J, mismatch)
        except np.linalg.LinAlgError:
            break
        # backtracking: accept the first trial step that lowers the mismatch
        alpha = 1.0
        for _ in range(12):
            trial = v - alpha * step
            qs, ps, nvalid = _kernels.propagate(q_in, system.mass * trial, system.mass,
                                                potential.exps, potential.coefs, dt, cfg.steps,
                                                weights, 1)
            if nvalid == cfg.steps + 1:
                trial_res = float(np.max(np.abs(qs[-1] - q_fi)))
                if trial_res < res:
                    break
            alpha *= 0.5
        else:
            break
        v = trial
        if trial_res <= cfg.tol * scale:
            return v, trial_res, it, J, True, (qs, ps)
    return best_v, best_res, cfg.max_iter, J, False, None


def _arclength(q_in, q_fi, v0, system, potential, dt, cfg, weights, max_steps=4000):
    """Pseudo-arclength continuation of F(v, s) = q_T(v; sV) - q_fi from s = 0.

    Natural continuation in s stalls where the solution branch folds back;
    following the curve by arclength passes the fold and stops at the first
    crossing of s = 1. Returns the velocity there, or None.
    """
    dim = len(q_in)
    exps, coefs, m = potential.exps, potential.coefs, system.mass
    vs = 1.0 + float(np.max(np.abs(v0)))

    def shoot(z):
        qT, J, ok = _kernels.shoot(q_in, z[:dim] * vs, m, exps, coefs * z[dim], dt, cfg.steps,
                                   weights)
        return qT - q_fi, J * vs, ok

    def jac(z, J):
        hs = 1e-6
        fp, _, okp = shoot(z + np.r_[np.zeros(dim), hs])
        fm, _, okm = shoot(z - np.r_[np.zeros(dim), hs])
        if not (okp and okm):
            return None
        return np.column_stack([J, (fp - fm) / (2 * hs)])

    def tangent(A, prev):
        t = np.linalg.svd(A)[2][-1]
        return -t if t @ prev < 0 else t

    z = np.r_[v0 / vs, 0.0]
    f, J, ok = shoot(z)
    A = jac(z, J)
    if A is None:
        return None
    t = tangent(A, np.r_[np.zeros(dim), 1.0])
    h, tol = 0.05, 1e-10 * (1.0 + float(np.max(np.abs(q_fi))))
    for _ in range(max_steps):
        zp = z + h * t
        zc, done = zp.copy(), False
        for _ in range(10):
            f, J, ok = shoot(zc)
            if not ok:
                break
            if np.max(np.abs(f)) <= tol:
                done = True
                break
            A = jac(zc, J)
            if A is None:
                break
            try:
                dz = np.linalg.solve(np.vstack([A, t]), -np.r_[f, t @ (zc - zp)])
            except np.linalg.LinAlgError:
                break
            zc = zc + dz
        if not done:
            h *= 0.5
            if h < 1e-7:
                return None
            continue
        if (z[dim] - 1.0) * (zc[dim] - 1.0) <= 0:
            w = (1.0 - z[dim]) / (zc[dim] - z[dim]) if zc[dim] != z[dim] else 1.0
            return (z[:dim] + w * (zc[:dim] - z[:dim])) * vs
        A = jac(zc, J)
        if A is None:
            return None
        t, z, h = tangent(A, t), zc, min(1.5 * h, 0.5)
        if abs(z[dim]) > 10 or np.max(np.abs(z[:dim])) > 100:
            return None
    return None


def solve_trajectory_bvp(system: SystemParams, potential: PolynomialPotential, q_in, q_fi,
                         T: float, config: ShootingConfig = ShootingConfig()) -> Trajectory:
    """Classical path from ``q_in`` to ``q_fi`` in time ``T``.

    Starts from the free-particle velocity; if Newton fails, the potential is
    switched on gradually (V -> s V, s from 0 to 1) and each stage is seeded
    with the previous solution.
    """
    if not T > 0:
        raise ValueError(f"travel time must be positive, got {T}")
    if config.steps % 2:
        raise ValueError("steps must be even for Simpson quadrature")
    dim = potential.dim
    q_in = _as_point(q_in, dim)
    q_fi = _as_point(q_fi, dim)
    dt = T / config.steps
    weights = _kernels.scheme_weights(config.order)
    v0 = (q_fi - q_in) / T

    v, res, iters, J, ok, samples = _newton(q_in, q_fi, v0, system, potential, dt, config,
                                            weights)
    homotopy = False
    best_res = res  # mismatch under the full potential
    if not ok:
        homotopy = True
        stages = config.homotopy_stages
        for _ in range(config.restarts):
            v, s, ok = v0, 0.0, True
            ds = 1.0 / stages
            while s < 1.0:
                s_next = min(1.0, s + ds)
                v_try, res, it, J, ok, samples = _newton(q_in, q_fi, v, system,
                                                         potential.scaled(s_next), dt, config,
                                                         weights)
                iters += it
                if s_next >= 1.0:
                    best_res = min(best_res, res)
                if ok:
                    v, s = v_try, s_next
                else:
                    ds /= 2
                    if ds < 1e-4:
                        break
            if ok and s >= 1.0:
                break
            stages *= 4
        if not ok:
            v_arc = _arclength(q_in, q_fi, v0, system, potential, dt, config, weights)
            if v_arc is not None:
                v, res, it, J, ok, samples = _newton(q_in, q_fi, v_arc, system, potential, dt,
                                                     config, weights)
                iters += it
                best_res = min(best_res, res)
        if not ok:
            raise BVPFailure(f"shooting failed from {q_in} to {q_fi} in T={T}", best_res)

    sigma_min = abs(float(J[0, 0])) if dim == 1 else float(np.linalg.svd(J, compute_uv=False).min())
    sensitivity = T / sigma_min if sigma_min > 0 else math.inf
    caustic = sensitivity > config.caustic_threshold

    if samples is None:
        samples = _kernels.propagate(q_in, system.mass * v, system.mass, potential.exps,
                                     potential.coefs, dt, config.steps, weights, 1)
        if samples[2] != config.steps + 1:
            raise BVPFailure("converged trajectory is not finite", res)
    qs, ps = samples[0], samples[1]
    times = np.linspace(0.0, T, config.steps + 1)
    return Trajectory(T, q_in, q_fi, times, qs, ps / system.mass, res, iters,
                      sensitivity, caustic, homotopy)


def harmonic_action_analytic(system: SystemParams, omega: float, x_a, x_b, T: float,
                             eps_sing: float = 1e-8) -> ActionValue:
    """Closed-form action of the harmonic oscillator between two points."""
    s = math.sin(omega * T)
    if abs(s) <= eps_sing:
        raise CausticSingularityError(f"omega*T = {omega * T} is within {eps_sing} of a multiple of pi")
    xa = np.atleast_1d(np.asarray(x_a, dtype=float))
    xb = np.atleast_1d(np.asarray(x_b, dtype=float))
    c = math.cos(omega * T)
    val = system.mass * omega / (2 * s) * ((xa @ xa + xb @ xb) * c - 2 * (xa @ xb))
    return ActionValue(float(val))


@dataclass(frozen=True)
class PhasePath:
    times: np.ndarray
    q: np.ndarray
    p: np.ndarray


def integrate_hamiltonian(system: SystemParams, potential: PolynomialPotential, q0, p0,
                          t_end: float, dt: float, order: int = 4, stride: int = 1) -> PhasePath:
    """Propagate (q, p) with a symplectic composition scheme of the given order.

    The step is shrunk, if needed, to the largest value <= ``dt`` that lands
    exactly on ``t_end``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    nsteps = max(1, math.ceil(t_end / dt * (1 - 1e-12)))
    dt = t_end / nsteps
    q0 = _as_point(q0, potential.dim)
    p0 = _as_point(p0, potential.dim)
    qs, ps, nvalid = _kernels.propagate(q0, p0, system.mass, potential.exps, potential.coefs,
                                        dt, nsteps, _kernels.scheme_weights(order), stride)
    times = np.arange(nsteps // stride + 1) * dt * stride
    if nvalid < len(times):
        raise BlowUpError("non-finite state during propagation", float(times[nvalid - 1]))
    return PhasePath(times, qs, ps)


def energy(system: SystemParams, potential: PolynomialPotential, q, p):
    """Total energy of one state, or of each row of a (n, D) state array."""
    q = np.asarray(q, dtype=float).reshape(-1, potential.dim)
    p = np.asarray(p, dtype=float).reshape(-1, potential.dim)
    e = 0.5 * np.sum(p**2, axis=1) / system.mass + potential(q)
    return float(e[0]) if len(e) == 1 else e


def format_terms(potential: PolynomialPotential) -> str:
    """Compact text form, e.g. ``2,0:0.5;0,2:0.5;2,2:10``."""
    return ";".join(",".join(map(str, k)) + ":" + format(c, ".17g")
                    for k, c in potential.terms.items())


def parse_terms(text: str) -> dict:
    terms = {}
    for item in filter(None, (t.strip() for t in text.split(";"))):
        try:
            key, coef = item.split(":")
            terms[tuple(int(e) for e in key.split(","))] = float(coef)
        except ValueError as exc:
            raise PotentialError(f"malformed potential term {item!r}") from exc
    return terms
