"""Spectra, unfolding, nearest-neighbour spacings and reference fits."""
from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import optimize, special, stats

from .errors import (
    DomainError,
    EigensolverError,
    FitDegenerateError,
    InsufficientDataError,
    RankDeficiencyWarning,
    SmallSampleWarning,
    UnfoldingDegeneracyError,
)

EIGEN_RESIDUAL_TOL = 1e-10
DEFAULT_BINS = 40
DEFAULT_RANGE = (0.0, 4.0)
SMALL_SAMPLE = 50


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    source: str = ""
    norm: float = 0.0
    max_residual: float = 0.0
    noise_floor: float = 0.0

    def __len__(self):
        return len(self.eigenvalues)

    @property
    def n_resolved(self) -> int:
        """Eigenvalues that stand clear of the floating-point noise floor."""
        return int(np.count_nonzero(np.abs(self.eigenvalues) > self.noise_floor))

    @classmethod
    def from_values(cls, values, source=""):
        v = np.sort(np.asarray(values, dtype=float))
        if not np.all(np.isfinite(v)):
            raise DomainError("spectrum contains non-finite values")
        return cls(v, source)


def _as_array(matrix):
    a = getattr(matrix, "values", matrix)
    return np.asarray(a, dtype=float)


def eigenvalues(matrix, source: str = "") -> Spectrum:
    """All eigenvalues of a real symmetric matrix, sorted ascending."""
    a = _as_array(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-12 * max(scale, 1e-300):
        raise DomainError("matrix is not symmetric")
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(str(exc)) from exc
    norm = float(np.max(np.abs(w))) if len(w) else 0.0
    resid = np.linalg.norm(a @ v - v * w, axis=0)
    worst = float(resid.max()) if len(w) else 0.0
    if worst > EIGEN_RESIDUAL_TOL * max(norm, 1e-300):
        raise EigensolverError(f"eigenpair residual {worst:.3e} exceeds tolerance")
    floor = len(w) * np.finfo(float).eps * norm
    return Spectrum(w, source or getattr(matrix, "source", ""), norm, worst, float(floor))


def sturm_count(diag, off, x) -> int:
    """Number of eigenvalues below x of a symmetric tridiagonal matrix."""
    count = 0
    d = 1.0
    for i in range(len(diag)):
        b2 = off[i - 1] ** 2 if i else 0.0
        d = diag[i] - x - (b2 / d if i else 0.0)
        if d == 0.0:
            d = -1e-300
        if d < 0:
            count += 1
    return count


@dataclass(frozen=True)
class UnfoldedSpectrum:
    levels: np.ndarray
    degree: int
    coefficients: np.ndarray
    domain: tuple
    fit_residual: float
    edge_fraction: float
    n_discarded: int

    @property
    def mean_spacing(self) -> float:
        return float(np.mean(np.diff(self.levels))) if len(self.levels) > 1 else math.nan


def unfold(spectrum, degree: int = 6, edge_fraction: float = 0.05) -> UnfoldedSpectrum:
    """Map levels through a least-squares polynomial fit of the counting staircase.

    The fit uses every level; afterwards ``edge_fraction`` of the levels is
    dropped at each end, where a polynomial describes the density poorly.
    The fitted map must be increasing over the retained range.
    """
    values = spectrum.eigenvalues if isinstance(spectrum, Spectrum) else np.sort(np.asarray(spectrum, float))
    if degree < 1:
        raise DomainError("unfolding degree must be at least 1")
    if not 0 <= edge_fraction < 0.5:
        raise DomainError("edge fraction must lie in [0, 0.5)")
    n = len(values)
    if n < degree + 2:
        raise InsufficientDataError(f"need at least {degree + 2} levels, have {n}")
    stair = np.arange(1, n + 1, dtype=float)
    if not values[-1] > values[0]:
        raise UnfoldingDegeneracyError("all levels coincide")
    with warnings.catch_warnings():
        warnings.simplefilter("error", np.exceptions.RankWarning)
        try:
            fit = Polynomial.fit(values, stair, degree)
        except np.exceptions.RankWarning as exc:
            raise UnfoldingDegeneracyError(f"ill-conditioned staircase fit: {exc}") from exc
    cut = int(math.floor(edge_fraction * n))
    kept = values[cut:n - cut]
    if len(kept) < 2:
        raise InsufficientDataError("fewer than two levels survive the edge cut")
    probe = np.union1d(np.linspace(kept[0], kept[-1], 4 * len(kept) + 1), kept)
    if np.any(fit.deriv()(probe) < 0):
        raise UnfoldingDegeneracyError(f"degree-{degree} fit is not monotone over the spectrum")
    levels = fit(kept)
    resid = float(np.sqrt(np.mean((fit(values) - stair) ** 2)))
    return UnfoldedSpectrum(levels, degree, fit.coef.copy(), tuple(fit.domain), resid,
                            float(edge_fraction), 2 * cut)


@dataclass(frozen=True)
class SpacingSample:
    spacings: np.ndarray
    edges: np.ndarray
    density: np.ndarray
    overflow: float

    @property
    def size(self) -> int:
        return len(self.spacings)

    @property
    def integral(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))


def histogram(spacings, bins=DEFAULT_BINS, range_=DEFAULT_RANGE):
    """Density over in-range spacings plus the fraction that fell outside."""
    s = np.asarray(spacings, float)
    edges = np.linspace(range_[0], range_[1], bins + 1) if np.isscalar(bins) else np.asarray(bins, float)
    counts, edges = np.histogram(s, edges)
    inside = counts.sum()
    if inside == 0:
        raise InsufficientDataError("no spacings fall inside the histogram range")
    density = counts / (inside * np.diff(edges))
    return edges, density, float((len(s) - inside) / len(s))


def spacing_distribution(unfolded, bins=DEFAULT_BINS, range_=DEFAULT_RANGE) -> SpacingSample:
    """Nearest-neighbour spacings of one or several unfolded spectra (pooled)."""
    items = unfolded if isinstance(unfolded, (list, tuple)) else [unfolded]
    parts = []
    for u in items:
        lv = u.levels if isinstance(u, UnfoldedSpectrum) else np.asarray(u, float)
        if len(lv) < 2:
            raise InsufficientDataError("need at least two levels")
        parts.append(np.diff(lv))
    return sample_from_spacings(np.concatenate(parts), bins, range_)


def sample_from_spacings(spacings, bins=DEFAULT_BINS, range_=DEFAULT_RANGE) -> SpacingSample:
    s = np.asarray(spacings, float)
    if len(s) == 0:
        raise InsufficientDataError("empty spacing sample")
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise DomainError("spacings must be finite and non-negative")
    edges, density, overflow = histogram(s, bins, range_)
    return SpacingSample(s, edges, density, overflow)


def brody_b(q: float) -> float:
    return special.gamma((q + 2) / (q + 1)) ** (q + 1)


def _check_kind(s, kind, q):
    s = np.asarray(s, float)
    if np.any(s < 0):
        raise DomainError("spacing must be non-negative")
    if kind == "brody":
        if q is None or not 0 <= q <= 1:
            raise DomainError(f"Brody parameter must lie in [0, 1], got {q}")
    elif kind not in ("poisson", "wigner_goe"):
        raise DomainError(f"unknown reference {kind!r}")
    return s


def reference_pdf(kind: str, s, q: float | None = None):
    s = _check_kind(s, kind, q)
    if kind == "poisson":
        out = np.exp(-s)
    elif kind == "wigner_goe":
        out = 0.5 * np.pi * s * np.exp(-0.25 * np.pi * s * s)
    else:
        b = brody_b(q)
        out = (q + 1) * b * np.power(s, q) * np.exp(-b * np.power(s, q + 1))
    return out[()] if out.ndim == 0 else out


def reference_cdf(kind: str, s, q: float | None = None):
    s = _check_kind(s, kind, q)
    if kind == "poisson":
        out = -np.expm1(-s)
    elif kind == "wigner_goe":
        out = -np.expm1(-0.25 * np.pi * s * s)
    else:
        out = -np.expm1(-brody_b(q) * np.power(s, q + 1))
    return out[()] if out.ndim == 0 else out


def brody_sample(q: float, n: int, seed: int) -> np.ndarray:
    """Inverse-CDF draws from the Brody density."""
    u = np.random.default_rng(seed).random(n)
    return (-np.log1p(-u) / brody_b(q)) ** (1.0 / (q + 1))


@dataclass(frozen=True)
class FitResult:
    q: float
    ks_poisson: float
    ks_wigner: float
    chi2_per_bin: float
    n: int
    small_sample: bool
    log_likelihood: float

    def as_dict(self):
        return asdict(self)


def brody_log_likelihood(q: float, spacings) -> float:
    s = np.maximum(np.asarray(spacings, float), np.finfo(float).tiny)
    b = brody_b(q)
    n = len(s)
    return float(n * math.log((q + 1) * b) + q * np.sum(np.log(s)) - b * np.sum(s ** (q + 1)))


def fit_spacings(sample) -> FitResult:
    """Maximum-likelihood Brody parameter and KS distances to both references."""
    if isinstance(sample, SpacingSample):
        s, edges = sample.spacings, sample.edges
    else:
        s = np.asarray(sample, float)
        edges = np.linspace(*DEFAULT_RANGE, DEFAULT_BINS + 1)
    n = len(s)
    if n == 0:
        raise InsufficientDataError("empty spacing sample")
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise DomainError("spacings must be finite and non-negative")
    if np.ptp(s) <= 1e-12 * max(np.max(np.abs(s)), 1e-300):
        raise FitDegenerateError("all spacings are identical")
    small = n < SMALL_SAMPLE
    if small:
        warnings.warn(f"only {n} spacings; fit is unreliable", SmallSampleWarning, stacklevel=2)
    nll = lambda q: -brody_log_likelihood(q, s)
    res = optimize.minimize_scalar(nll, bounds=(0.0, 1.0), method="bounded",
                                   options={"xatol": 1e-10})
    q = min((0.0, 1.0, float(res.x)), key=nll)
    ks_p = stats.kstest(s, lambda x: reference_cdf("poisson", x)).statistic
    ks_w = stats.kstest(s, lambda x: reference_cdf("wigner_goe", x)).statistic
    counts, _ = np.histogram(s, edges)
    expected = n * np.diff(reference_cdf("brody", edges, q))
    ok = expected > 0
    chi2 = float(np.sum((counts[ok] - expected[ok]) ** 2 / expected[ok]) / max(ok.sum(), 1))
    return FitResult(q, float(ks_p), float(ks_w), chi2, n, small, -nll(q))


def two_sample_ks(a, b) -> float:
    return float(stats.ks_2samp(np.asarray(a.spacings if hasattr(a, "spacings") else a),
                                np.asarray(b.spacings if hasattr(b, "spacings") else b)).statistic)


def _sub_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def goe_sample(n: int, seed, variance: float = 1.0) -> np.ndarray:
    """Symmetric Gaussian matrix: off-diagonal variance v, diagonal variance 2v."""
    if n < 2:
        raise DomainError("GOE size must be at least 2")
    a = np.random.default_rng(seed).normal(0.0, math.sqrt(2 * variance), (n, n))
    return 0.5 * (a + a.T)


def poisson_sample(n: int, seed) -> np.ndarray:
    """Diagonal matrix with independent uniform entries (uncorrelated levels)."""
    if n < 2:
        raise DomainError("matrix size must be at least 2")
    return np.diag(np.random.default_rng(seed).random(n))


@dataclass(frozen=True)
class SpacingAnalysis:
    spectrum: Spectrum
    unfolded: UnfoldedSpectrum
    sample: SpacingSample
    fit: FitResult


def analyze_matrix(matrix, degree=6, edge_fraction=0.05, bins=DEFAULT_BINS,
                   range_=DEFAULT_RANGE) -> SpacingAnalysis:
    """Eigenvalues, unfolding, spacings and Brody fit for one matrix."""
    spec = eigenvalues(matrix)
    if spec.n_resolved < len(spec):
        warnings.warn(f"only {spec.n_resolved} of {len(spec)} eigenvalues exceed the "
                      f"noise floor {spec.noise_floor:.3e}; spacing statistics of the rest "
                      "reflect rounding, not the matrix", RankDeficiencyWarning, stacklevel=2)
    unf = unfold(spec, degree, edge_fraction)
    sample = spacing_distribution(unf, bins, range_)
    return SpacingAnalysis(spec, unf, sample, fit_spacings(sample))


def degree_sensitivity(spectrum, degrees=(4, 5, 6, 7, 8), edge_fraction=0.05) -> dict:
    """Brody q for several unfolding degrees; unstable q flags a poor unfolding."""
    out = {}
    for d in degrees:
        try:
            unf = unfold(spectrum, d, edge_fraction)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SmallSampleWarning)
                out[d] = fit_spacings(spacing_distribution(unf)).q
        except (UnfoldingDegeneracyError, InsufficientDataError, FitDegenerateError):
            out[d] = None
    return out


def ensemble_spacings(kind: str, n_matrices: int, size: int, seed: int, degree=6,
                      edge_fraction=0.05, workers: int = 1) -> np.ndarray:
    """Pooled unfolded spacings of an ensemble of random matrices."""
    make = {"goe": goe_sample, "poisson": poisson_sample}[kind]

    def one(i):
        spec = eigenvalues(make(size, _sub_seed(seed, i)))
        return np.diff(unfold(spec, degree, edge_fraction).levels)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(n_matrices)))
    else:
        parts = [one(i) for i in range(n_matrices)]
    return np.concatenate(parts)


@dataclass(frozen=True)
class SelftestResult:
    goe: FitResult
    poisson: FitResult
    goe_q_range: tuple = (0.90, 1.00)
    poisson_q_range: tuple = (0.00, 0.10)
    goe_ks_max: float = 0.02
    samples: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return (self.goe_q_range[0] <= self.goe.q <= self.goe_q_range[1]
                and self.goe.ks_wigner < self.goe_ks_max
                and self.poisson_q_range[0] <= self.poisson.q <= self.poisson_q_range[1])


def rmt_selftest(n_matrices=50, size=400, seed=0, degree=6, edge_fraction=0.05,
                 workers=1) -> SelftestResult:
    goe = ensemble_spacings("goe", n_matrices, size, seed, degree, edge_fraction, workers)
    poi = ensemble_spacings("poisson", n_matrices, size, seed, degree, edge_fraction, workers)
    sg, sp = sample_from_spacings(goe), sample_from_spacings(poi)
    return SelftestResult(fit_spacings(sg), fit_spacings(sp), samples={"goe": sg, "poisson": sp})


def values_csv(name: str, values, provenance: dict | None = None) -> str:
    """One value per row, with ``# key: value`` provenance comments on top."""
    lines = [f"# {k}: {v}" for k, v in (provenance or {}).items()]
    lines.append(name)
    lines += [format(float(v), ".17g") for v in values]
    return "\n".join(lines) + "\n"


def histogram_csv(sample: SpacingSample, provenance: dict | None = None) -> str:
    lines = [f"# {k}: {v}" for k, v in (provenance or {}).items()]
    lines.append(f"# overflow: {sample.overflow:.17g}")
    lines.append("left,right,density")
    for lo, hi, d in zip(sample.edges[:-1], sample.edges[1:], sample.density):
        lines.append(f"{lo:.17g},{hi:.17g},{d:.17g}")
    return "\n".join(lines) + "\n"


def fit_json(fit: FitResult, extra: dict | None = None) -> str:
    data = fit.as_dict()
    data.update(extra or {})
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
