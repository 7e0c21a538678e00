"""Classical chaos diagnostics for 2-D polynomial potentials.

Orbits start on the section {y = 0, p_y > 0} of a fixed energy shell, with
(x, p_x) uniform over the allowed region (the Liouville measure induced on
the section). An orbit is called chaotic when its largest Lyapunov exponent
exceeds a threshold. By default the threshold is ten times the largest
exponent measured for the uncoupled harmonic part over the same time span,
but never below ``floor_factor * ln(1 + t) / t``: the isotropic oscillator's
tangent flow preserves the norm, so its measured exponent is pure roundoff,
while regular orbits of the coupled system shear and reach roughly ln(t)/t.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from . import _kernels
from .dynamics import PolynomialPotential, SystemParams
from .errors import BlowUpError, ConfigError, DomainError

DEFAULT_TANGENT = np.array([1.0, 1.0, 1.0, 1.0]) / 2.0


@dataclass(frozen=True)
class PhaseState:
    q: tuple
    p: tuple

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (*self.q, *self.p)):
            raise ValueError("phase state has non-finite components")

    @property
    def array(self):
        return np.array(self.q, dtype=float), np.array(self.p, dtype=float)


@dataclass(frozen=True)
class ChaosConfig:
    dt: float = 0.005
    order: int = 6
    t_total: float = 500.0
    renorm_interval: float = 1.0
    threshold: float | None = None
    baseline_orbits: int = 16
    baseline_factor: float = 10.0
    floor_factor: float = 2.0
    escape_radius: float = 1e3

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("must be positive", "chaos.dt")
        if self.threshold is not None and not self.threshold > 0:
            raise ConfigError("classification threshold must be positive", "chaos.threshold")
        if not self.renorm_interval > 0 or self.t_total < self.renorm_interval:
            raise ConfigError("need 0 < renorm_interval <= t_total", "chaos.renorm_interval")

    def steps_per_interval(self):
        n = int(round(self.renorm_interval / self.dt))
        if n < 1 or abs(n * self.dt - self.renorm_interval) > 1e-9 * self.renorm_interval:
            raise ConfigError("renorm_interval must be an integer multiple of dt", "chaos.dt")
        return n

    def n_intervals(self, t_total=None):
        t = self.t_total if t_total is None else t_total
        return max(1, int(round(t / self.renorm_interval)))


def _require_2d(potential):
    if potential.dim != 2:
        raise DomainError("chaos diagnostics need a 2-D potential")


def section_extent(system: SystemParams, potential: PolynomialPotential, E: float) -> float:
    """Largest |x| on the section y = 0 reachable at energy E."""
    _require_2d(potential)
    v_axis = lambda x: potential(np.array([x, 0.0]))
    if E <= v_axis(0.0):
        raise DomainError(f"energy {E} is not above the potential minimum on the section")
    hi = 1.0
    while v_axis(hi) < E:
        hi *= 2.0
        if hi > 1e8:
            raise DomainError("section is unbounded at this energy")
    return optimize.brentq(lambda x: v_axis(x) - E, 0.0, hi, xtol=1e-14)


def sample_section(system: SystemParams, potential: PolynomialPotential, E: float, n: int,
                   seed: int) -> list[PhaseState]:
    """Uniform (x, p_x) on the energy-allowed part of the section, p_y >= 0 from E."""
    x_max = section_extent(system, potential, E)
    p_max = math.sqrt(2.0 * system.mass * (E - potential(np.array([0.0, 0.0]))))
    rng = np.random.default_rng(seed)
    states = []
    while len(states) < n:
        x, px = rng.uniform(-1.0, 1.0, size=2) * (x_max, p_max)
        kin_y = E - 0.5 * px**2 / system.mass - potential(np.array([x, 0.0]))
        if kin_y > 0:
            states.append(PhaseState((float(x), 0.0),
                                     (float(px), math.sqrt(2.0 * system.mass * kin_y))))
    return states


@dataclass
class SectionResult:
    energy: float
    points: list
    initial_states: list
    escaped: list
    max_energy_error: float


def poincare_section(system: SystemParams, potential: PolynomialPotential, E: float,
                     n_orbits: int, t_max: float, seed: int,
                     config: ChaosConfig = ChaosConfig()) -> SectionResult:
    """Crossings of y = 0 with p_y > 0, as (x, p_x) arrays, one per orbit."""
    _require_2d(potential)
    states = sample_section(system, potential, E, n_orbits, seed)
    nsteps = int(round(t_max / config.dt))
    weights = _kernels.scheme_weights(config.order)
    max_points = nsteps // 4 + 16
    points, escaped, emax = [], [], 0.0
    for i, st in enumerate(states):
        q0, p0 = st.array
        pts, count, done, err = _kernels.section_crossings(
            q0, p0, system.mass, potential.exps, potential.coefs, config.dt, nsteps, weights,
            max_points, config.escape_radius)
        if done < nsteps:
            escaped.append(i)
            points.append(np.empty((0, 2)))
            continue
        points.append(pts[:count].copy())
        emax = max(emax, err / abs(E))
    return SectionResult(E, points, states, escaped, emax)


@dataclass
class LyapunovResult:
    exponent: float
    times: np.ndarray
    running: np.ndarray
    final_state: PhaseState | None = None


def _tangent(w0):
    w = DEFAULT_TANGENT if w0 is None else np.asarray(w0, dtype=float)
    if w.shape != (4,) or not np.any(w):
        raise ValueError("initial tangent vector must be a nonzero 4-vector")
    return w


def lyapunov_exponent(system: SystemParams, potential: PolynomialPotential, state0: PhaseState,
                      t_total: float | None = None, renorm_interval: float | None = None,
                      config: ChaosConfig = ChaosConfig(), tangent0=None) -> LyapunovResult:
    """Largest Lyapunov exponent by tangent-map propagation with renormalisation."""
    _require_2d(potential)
    if t_total is not None or renorm_interval is not None:
        config = ChaosConfig(**{**asdict(config),
                                **({"t_total": t_total} if t_total is not None else {}),
                                **({"renorm_interval": renorm_interval}
                                   if renorm_interval is not None else {})})
    spi = config.steps_per_interval()
    nint = config.n_intervals()
    q0, p0 = state0.array
    logs, q, p, done = _kernels.lyapunov_tangent(
        q0, p0, _tangent(tangent0), system.mass, potential.exps, potential.coefs, config.dt,
        nint, spi, _kernels.scheme_weights(config.order))
    if done < nint:
        raise BlowUpError("orbit left the finite domain", done * config.renorm_interval)
    times = np.arange(1, nint + 1) * config.renorm_interval
    running = np.cumsum(logs) / times
    return LyapunovResult(float(running[-1]), times, running,
                          PhaseState(tuple(map(float, q)), tuple(map(float, p))))


def lyapunov_divergence(system: SystemParams, potential: PolynomialPotential,
                        state0: PhaseState, t_total: float, delta0: float = 1e-8,
                        config: ChaosConfig = ChaosConfig(), direction=None) -> float:
    """Two-trajectory estimate of the largest exponent; an independent cross-check."""
    _require_2d(potential)
    spi = config.steps_per_interval()
    nint = config.n_intervals(t_total)
    q0, p0 = state0.array
    logs, done = _kernels.lyapunov_shadow(
        q0, p0, _tangent(direction), delta0, system.mass, potential.exps, potential.coefs,
        config.dt, nint, spi, _kernels.scheme_weights(config.order))
    if done < nint:
        raise BlowUpError("orbit left the finite domain", done * config.renorm_interval)
    return float(np.sum(logs) / (nint * config.renorm_interval))


def _orbit_exponents(system, potential, states, config, workers):
    spi = config.steps_per_interval()
    nint = config.n_intervals()
    weights = _kernels.scheme_weights(config.order)
    w0 = _tangent(None)

    def one(st):
        q0, p0 = st.array
        logs, _, _, done = _kernels.lyapunov_tangent(
            q0, p0, w0, system.mass, potential.exps, potential.coefs, config.dt, nint, spi,
            weights)
        if done < nint:
            return math.nan
        return float(np.sum(logs) / (nint * config.renorm_interval))

    if workers <= 1:
        return np.array([one(s) for s in states])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(one, states)))


def default_threshold(system: SystemParams, potential: PolynomialPotential, E: float,
                      config: ChaosConfig = ChaosConfig(), seed: int = 0,
                      workers: int = 1) -> float:
    base = integrable_baseline(system, potential, E, config, seed, workers)
    floor = config.floor_factor * math.log1p(config.t_total) / config.t_total
    return max(config.baseline_factor * base, floor)


def integrable_baseline(system: SystemParams, potential: PolynomialPotential, E: float,
                        config: ChaosConfig = ChaosConfig(), seed: int = 0,
                        workers: int = 1) -> float:
    """Largest finite-time exponent of the harmonic part alone (all couplings dropped)."""
    harmonic = PolynomialPotential({k: c for k, c in potential.terms.items()
                                    if k in ((2, 0), (0, 2), (0, 0))})
    states = sample_section(system, harmonic, E, config.baseline_orbits, seed)
    return float(np.max(_orbit_exponents(system, harmonic, states, config, workers)))


@dataclass
class FractionResult:
    energy: float
    fraction: float
    stderr: float
    n_chaotic: int
    n_total: int
    n_escaped: int
    threshold: float
    seed: int
    exponents: np.ndarray = field(repr=False)


def _stderr(frac, n):
    return math.sqrt(max(frac * (1.0 - frac), 0.0) / n) if n else math.nan


def chaotic_fraction(system: SystemParams, potential: PolynomialPotential, E: float,
                     n_samples: int, threshold: float, seed: int,
                     t_total: float | None = None, config: ChaosConfig = ChaosConfig(),
                     workers: int = 1) -> FractionResult:
    """Share of section-sampled orbits whose exponent exceeds ``threshold``."""
    _require_2d(potential)
    if not threshold > 0:
        raise ConfigError("classification threshold must be positive", "chaos.threshold")
    if t_total is not None:
        config = ChaosConfig(**{**asdict(config), "t_total": t_total})
    states = sample_section(system, potential, E, n_samples, seed)
    lam = _orbit_exponents(system, potential, states, config, workers)
    finite = np.isfinite(lam)
    n_total = int(finite.sum())
    n_chaotic = int(np.sum(lam[finite] > threshold))
    frac = n_chaotic / n_total if n_total else math.nan
    return FractionResult(E, frac, _stderr(frac, n_total), n_chaotic, n_total,
                          int((~finite).sum()), threshold, seed, lam)


@dataclass
class ChaosScanResult:
    energies: np.ndarray
    rows: list
    threshold: float
    seed: int
    config: ChaosConfig

    @property
    def fractions(self):
        return np.array([r.fraction for r in self.rows])

    @property
    def stderrs(self):
        return np.array([r.stderr for r in self.rows])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E", "fraction", "stderr", "n_chaotic", "n_total"])
        for r in self.rows:
            w.writerow([_fmt(r.energy), _fmt(r.fraction), _fmt(r.stderr), r.n_chaotic, r.n_total])
        return buf.getvalue()

    def exponents_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E", "orbit", "exponent", "chaotic"])
        for r in self.rows:
            for i, lam in enumerate(r.exponents):
                w.writerow([_fmt(r.energy), i, _fmt(lam), int(bool(lam > r.threshold))])
        return buf.getvalue()

    def config_echo(self):
        return {"seed": self.seed, "threshold": self.threshold,
                "energies": [float(e) for e in self.energies], **asdict(self.config)}


def _fmt(x):
    return format(float(x), ".17g")


def energy_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def chaos_scan(system: SystemParams, potential: PolynomialPotential, energies, n_samples: int,
               seed: int, config: ChaosConfig = ChaosConfig(), workers: int = 1,
               threshold: float | None = None) -> ChaosScanResult:
    """Chaotic fraction on an energy grid; one derived seed per energy index."""
    energies = np.asarray(list(energies), dtype=float)
    if energies.size == 0:
        raise ConfigError("energy grid is empty", "chaos.energies")
    threshold = threshold if threshold is not None else config.threshold
    if threshold is None:
        threshold = default_threshold(system, potential, float(energies.max()), config, seed,
                                      workers)
    rows = [chaotic_fraction(system, potential, E, n_samples, threshold,
                             energy_seed(seed, i), config=config, workers=workers)
            for i, E in enumerate(energies)]
    return ChaosScanResult(energies, rows, threshold, seed, config)


@dataclass
class PairedScan:
    classical: ChaosScanResult
    quantum: ChaosScanResult

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E", "fraction_classical", "stderr_classical", "n_chaotic_classical",
                    "n_total_classical", "fraction_quantum", "stderr_quantum",
                    "n_chaotic_quantum", "n_total_quantum"])
        for c, q in zip(self.classical.rows, self.quantum.rows):
            w.writerow([_fmt(c.energy), _fmt(c.fraction), _fmt(c.stderr), c.n_chaotic,
                        c.n_total, _fmt(q.fraction), _fmt(q.stderr), q.n_chaotic, q.n_total])
        return buf.getvalue()


def compare_potentials(system: SystemParams, classical: PolynomialPotential,
                       quantum: PolynomialPotential, energies, n_samples: int, seed: int,
                       config: ChaosConfig = ChaosConfig(), workers: int = 1,
                       quantum_system: SystemParams | None = None) -> PairedScan:
    """Scan both potentials with the same seeds and the same classification threshold.

    The quantum-action parameters are inputs; nothing here derives them.
    """
    _require_2d(classical)
    _require_2d(quantum)
    energies = list(energies)
    if not energies:
        raise ConfigError("energy grid is empty", "chaos.energies")
    threshold = config.threshold
    if threshold is None:
        threshold = default_threshold(system, classical, float(max(energies)), config, seed,
                                      workers)
    c = chaos_scan(system, classical, energies, n_samples, seed, config, workers, threshold)
    q = chaos_scan(quantum_system or system, quantum, energies, n_samples, seed, config,
                   workers, threshold)
    return PairedScan(c, q)


def scan_summary(result: ChaosScanResult) -> str:
    return json.dumps(result.config_echo(), indent=2, sort_keys=True)
