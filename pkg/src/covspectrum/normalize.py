"""Matrix constructions and the truncation/recentering pipeline.

Builds every matrix the analysis needs from a p x n data matrix X:

* ``build_A``  -- (X X' - n I) / (2 sqrt(np)), the normalized Gram matrix
  whose spectrum concentrates on [-1, 1];
* ``build_B``  -- the same with the diagonal zeroed;
* ``build_S1`` -- the centered sample covariance (1/n) sum (s_j - sbar)(...)';
* ``build_A1`` -- (1/2) sqrt(n/p) (S1 - I), the centered analogue of A;
* ``build_S2`` -- Sigma^{1/2} S1 Sigma^{1/2} for a population covariance.

Truncation replaces entries exceeding delta * (np)^{1/4} by zero
(indicator truncation, not winsorizing), then recenters/rescales either
empirically (exact at finite size) or by population moments of the
truncated variable (numerical integration).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .ensemble import DataMatrix, DistributionSpec, MatrixShape, load_matrix
from .errors import DegenerateInputError, ValidationError

__all__ = [
    "CovarianceSpec",
    "NormalizationParams",
    "TruncationReport",
    "identity_cov",
    "diagonal_cov",
    "toeplitz_cov",
    "explicit_cov",
    "covariance_from_json",
    "build_A",
    "build_B",
    "build_S",
    "build_S1",
    "build_A1",
    "default_delta",
    "truncate",
    "recenter_rescale",
    "truncated_population_moments",
    "truncation_pipeline",
    "sqrt_psd",
    "build_S2",
]


def _entries(X) -> np.ndarray:
    return X.entries if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)


def _sym(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2.0


def build_A(X) -> np.ndarray:
    """(X X' - n I) / (2 sqrt(np)), symmetrized to kill rounding asymmetry."""
    x = _entries(X)
    p, n = x.shape
    M = x @ x.T
    M[np.diag_indices(p)] -= n
    return _sym(M / (2.0 * math.sqrt(n * p)))


def build_B(X) -> np.ndarray:
    """build_A with the diagonal replaced by zeros."""
    B = build_A(X)
    np.fill_diagonal(B, 0.0)
    return B


def build_S(X) -> np.ndarray:
    """Uncentered sample covariance X X' / n."""
    x = _entries(X)
    n = x.shape[1]
    return _sym(x @ x.T / n)


def build_S1(X) -> np.ndarray:
    """Centered sample covariance, computed as S - sbar sbar' in one pass."""
    x = _entries(X)
    sbar = x.mean(axis=1)
    return _sym(build_S(x) - np.outer(sbar, sbar))


def build_A1(X) -> np.ndarray:
    """(1/2) sqrt(n/p) (S1 - I)."""
    x = _entries(X)
    p, n = x.shape
    S1 = build_S1(x)
    S1[np.diag_indices(p)] -= 1.0
    return _sym(0.5 * math.sqrt(n / p) * S1)


# ---------------------------------------------------------------------------
# Truncation pipeline.


@dataclass(frozen=True)
class NormalizationParams:
    """delta schedule ("default" or an explicit value) plus recenter mode."""

    delta_mode: str = "default"  # "default" or "explicit"
    delta: float | None = None
    recenter_mode: str = "empirical"  # "empirical" or "population"

    def __post_init__(self):
        if self.delta_mode not in ("default", "explicit"):
            raise ValidationError("delta_mode must be 'default' or 'explicit'")
        if self.delta_mode == "explicit" and (self.delta is None or not self.delta > 0):
            raise ValidationError("explicit delta must be > 0")
        if self.recenter_mode not in ("empirical", "population"):
            raise ValidationError("recenter_mode must be 'empirical' or 'population'")

    def resolve_delta(self, shape: MatrixShape) -> float:
        if self.delta_mode == "default":
            return default_delta(shape)
        if self.delta * (shape.n * shape.p) ** 0.25 <= 1.0:
            raise ValidationError(
                "explicit delta too small: delta*(np)^{1/4} must exceed 1 for this shape"
            )
        return self.delta


@dataclass(frozen=True)
class TruncationReport:
    threshold: float
    fraction_truncated: float
    post_mean: float
    post_sigma2: float


def default_delta(shape: MatrixShape) -> float:
    """(np)^{-1/8}: goes to 0 while the threshold (np)^{1/8} grows."""
    return float(shape.n * shape.p) ** (-0.125)


def truncate(X: DataMatrix, delta: float):
    """Zero out entries with |x| > delta*(np)^{1/4}; report what happened.

    post_mean / post_sigma2 are the empirical mean and variance of the
    truncated entries (finite-size stand-ins for the truncated-law moments).
    """
    if not delta > 0:
        raise ValidationError("delta must be > 0")
    x = _entries(X)
    p, n = x.shape
    threshold = delta * float(n * p) ** 0.25
    mask = np.abs(x) > threshold
    out = np.where(mask, 0.0, x)
    out.setflags(write=False)
    report = TruncationReport(
        threshold=threshold,
        fraction_truncated=float(mask.mean()),
        post_mean=float(out.mean()),
        post_sigma2=float(out.var()),
    )
    return DataMatrix(shape=MatrixShape(p, n), entries=out, spec=X.spec if isinstance(X, DataMatrix) else None), report


def truncated_population_moments(spec: DistributionSpec, threshold: float):
    """(center, scale) of X * 1{|X| <= threshold} by numerical integration.

    center = E[X 1{|X|<=thr}], scale = sd of the truncated variable.
    Discrete kinds are summed exactly over their atoms.
    """
    if not threshold > 0:
        raise ValidationError("threshold must be > 0")
    if spec.is_discrete:
        m1 = sum(w * x for x, w in spec.atoms() if abs(x) <= threshold)
        m2 = sum(w * x * x for x, w in spec.atoms() if abs(x) <= threshold)
    else:
        lo_s, hi_s = spec.support
        lo, hi = max(-threshold, lo_s), min(threshold, hi_s)
        m1, _ = integrate.quad(lambda t: t * spec.pdf(t), lo, hi, limit=200)
        m2, _ = integrate.quad(lambda t: t * t * spec.pdf(t), lo, hi, limit=200)
    var = m2 - m1 * m1
    if var <= 0:
        raise DegenerateInputError("truncated variable has zero variance")
    return float(m1), float(math.sqrt(var))


def recenter_rescale(
    Xhat: DataMatrix,
    mode: str = "empirical",
    spec: DistributionSpec | None = None,
    threshold: float | None = None,
) -> DataMatrix:
    """(Xhat - center) / scale.

    empirical mode uses the sample mean/sd of the entries (output has
    entrywise mean 0 and variance 1 to machine precision); population
    mode uses the truncated-law moments, which requires the distribution
    and the truncation threshold.
    """
    x = _entries(Xhat)
    if mode == "empirical":
        center = float(x.mean())
        scale = float(x.std())
        if scale == 0.0 or not math.isfinite(scale):
            raise DegenerateInputError("zero variance after truncation")
    elif mode == "population":
        if spec is None or threshold is None:
            raise ValidationError("population mode requires the distribution spec and threshold")
        center, scale = truncated_population_moments(spec, threshold)
    else:
        raise ValidationError("mode must be 'empirical' or 'population'")
    out = (x - center) / scale
    out.setflags(write=False)
    shape = Xhat.shape if isinstance(Xhat, DataMatrix) else MatrixShape(*x.shape)
    return DataMatrix(shape=shape, entries=out, spec=spec)


def truncation_pipeline(
    X: DataMatrix, params: NormalizationParams = NormalizationParams(), spec: DistributionSpec | None = None
):
    """truncate then recenter/rescale; the report describes the final matrix."""
    shape = X.shape if isinstance(X, DataMatrix) else MatrixShape(*_entries(X).shape)
    delta = params.resolve_delta(shape)
    truncated, report = truncate(X, delta)
    spec = spec if spec is not None else getattr(X, "spec", None)
    out = recenter_rescale(truncated, params.recenter_mode, spec=spec, threshold=report.threshold)
    final = TruncationReport(
        threshold=report.threshold,
        fraction_truncated=report.fraction_truncated,
        post_mean=float(out.entries.mean()),
        post_sigma2=float(out.entries.var()),
    )
    return out, final


# ---------------------------------------------------------------------------
# Population covariances.


@dataclass(frozen=True)
class CovarianceSpec:
    """identity | diagonal(d_1..d_p) | toeplitz(rho) | explicit matrix."""

    kind: str
    d: tuple | None = None
    rho: float | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "identity":
            pass
        elif self.kind == "diagonal":
            if self.d is None or len(self.d) == 0 or any(v < 0 for v in self.d):
                raise ValidationError("diagonal covariance needs entries d_i >= 0")
        elif self.kind == "toeplitz":
            if self.rho is None or not -1 < self.rho < 1:
                raise ValidationError("toeplitz covariance needs rho in (-1, 1)")
        elif self.kind == "explicit":
            m = self.matrix
            if m is None or m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValidationError("explicit covariance needs a square matrix")
            if np.max(np.abs(m - m.T)) > 1e-10:
                raise ValidationError("explicit covariance must be symmetric")
        else:
            raise ValidationError(f"unknown covariance kind {self.kind!r}")

    def materialize(self, p: int) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(p)
        if self.kind == "diagonal":
            if len(self.d) != p:
                raise ValidationError(f"diagonal has {len(self.d)} entries, expected {p}")
            return np.diag(np.asarray(self.d, dtype=float))
        if self.kind == "toeplitz":
            idx = np.arange(p)
            return self.rho ** np.abs(idx[:, None] - idx[None, :])
        if self.matrix.shape[0] != p:
            raise ValidationError(f"explicit covariance is {self.matrix.shape[0]}x..., expected {p}")
        return np.array(self.matrix, dtype=float)

    def to_json(self) -> dict:
        if self.kind == "identity":
            return {"kind": "identity"}
        if self.kind == "diagonal":
            return {"kind": "diagonal", "d": list(self.d)}
        if self.kind == "toeplitz":
            return {"kind": "toeplitz", "rho": self.rho}
        raise ValidationError("explicit covariance serializes via a matrix file path")


def identity_cov() -> CovarianceSpec:
    return CovarianceSpec("identity")


def diagonal_cov(d) -> CovarianceSpec:
    return CovarianceSpec("diagonal", d=tuple(float(v) for v in d))


def toeplitz_cov(rho: float) -> CovarianceSpec:
    return CovarianceSpec("toeplitz", rho=rho)


def explicit_cov(matrix) -> CovarianceSpec:
    return CovarianceSpec("explicit", matrix=np.asarray(matrix, dtype=float))


def covariance_from_json(obj) -> CovarianceSpec:
    """Parse {"kind": ...}; explicit matrices come from a binary matrix file."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValidationError("covariance spec must be a dict with 'kind'")
    kind = obj["kind"]
    if kind == "identity":
        return identity_cov()
    if kind == "diagonal":
        return diagonal_cov(obj["d"])
    if kind == "toeplitz":
        return toeplitz_cov(obj["rho"])
    if kind == "explicit":
        if "path" not in obj:
            raise ValidationError("explicit covariance needs a 'path' to a matrix file")
        return explicit_cov(load_matrix(obj["path"]).entries)
    raise ValidationError(f"unknown covariance kind {kind!r}")


def sqrt_psd(sigma, p: int) -> np.ndarray:
    """Symmetric PSD square root via spectral decomposition."""
    M = sigma.materialize(p) if isinstance(sigma, CovarianceSpec) else np.asarray(sigma, dtype=float)
    if M.shape != (p, p):
        raise ValidationError(f"covariance shape {M.shape} does not match p={p}")
    w, V = np.linalg.eigh(_sym(M))
    if w.min() < -1e-10:
        raise ValidationError(f"covariance is not PSD (min eigenvalue {w.min():.3e})")
    return _sym((V * np.sqrt(np.clip(w, 0.0, None))) @ V.T)


def build_S2(X, sigma) -> np.ndarray:
    """Sigma^{1/2} S1 Sigma^{1/2}: sample covariance of Sigma^{1/2} s_j."""
    x = _entries(X)
    p = x.shape[0]
    root = sqrt_psd(sigma, p)
    return _sym(root @ build_S1(x) @ root)
