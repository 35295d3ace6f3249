"""Eigenvalues, the semicircle reference law, and spectral diagnostics.

Dense spectra come from LAPACK (the oracle of record up to p = 2000).
``lambda_max_matfree`` gets the top eigenvalue of the normalized Gram
matrix without ever materializing it, by restarted Lanczos on the
operator v -> (X (X' v) - n v) / (2 sqrt(np)).

Distribution comparisons are exact: the Kolmogorov-Smirnov statistic is
evaluated with the two-sided jump formula (no grid discretization), and
the sup distance of two empirical spectral distributions is computed
over the merged jump set.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import DataMatrix
from .errors import ConvergenceError, ValidationError
from .normalize import build_A

__all__ = [
    "SemicircleRef",
    "SEMICIRCLE",
    "SpectralSummary",
    "EmpiricalCdf",
    "semicircle_pdf",
    "semicircle_cdf",
    "eigvals_sym",
    "symmetric_operator_norm",
    "esd",
    "ks_distance",
    "esd_sup_diff",
    "diag_max_dev",
    "lambda_max_matfree",
    "spectral_summary",
    "spectrum_to_csv",
]

DENSE_P_LIMIT = 2000


def semicircle_pdf(x):
    """(2/pi) sqrt(1 - x^2) on [-1, 1], else 0."""
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) <= 1.0
    out = np.zeros_like(x)
    out[inside] = (2.0 / np.pi) * np.sqrt(1.0 - x[inside] ** 2)
    return out if out.ndim else float(out)


def semicircle_cdf(x):
    """Closed-form CDF: 1/2 + (x sqrt(1-x^2) + arcsin x) / pi, clamped to [0, 1]."""
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, -1.0, 1.0)
    out = 0.5 + (xc * np.sqrt(1.0 - xc**2) + np.arcsin(xc)) / np.pi
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SemicircleRef:
    """Reference law on [-1, 1]; density and cdf are module functions."""

    density: callable = field(default=semicircle_pdf)
    cdf: callable = field(default=semicircle_cdf)


SEMICIRCLE = SemicircleRef()


def eigvals_sym(M, atol: float = 1e-10) -> np.ndarray:
    """Full ascending spectrum of a symmetric matrix.

    Rejects matrices whose asymmetry exceeds ``atol``; the remaining
    rounding asymmetry is symmetrized away before the decomposition.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] > 1 and float(np.max(np.abs(M - M.T))) > atol:
        raise ValidationError("matrix is not symmetric within tolerance")
    return np.linalg.eigvalsh((M + M.T) / 2.0)


def symmetric_operator_norm(M) -> float:
    """Spectral norm of a symmetric matrix: max |eigenvalue|."""
    w = eigvals_sym(M)
    return float(max(abs(w[0]), abs(w[-1])))


class EmpiricalCdf:
    """Right-continuous step function x -> (1/p) #{i : lambda_i <= x}."""

    def __init__(self, eigenvalues):
        eigs = np.asarray(eigenvalues, dtype=float)
        if eigs.ndim != 1 or eigs.size == 0:
            raise ValidationError("need a nonempty 1-d eigenvalue vector")
        if np.any(np.diff(eigs) < 0):
            raise ValidationError("eigenvalues must be sorted ascending")
        self.eigenvalues = eigs
        self.p = eigs.size

    def __call__(self, x):
        counts = np.searchsorted(self.eigenvalues, np.asarray(x, dtype=float), side="right")
        out = counts / self.p
        return out if out.ndim else float(out)


def esd(eigenvalues) -> EmpiricalCdf:
    """Empirical spectral distribution of a sorted eigenvalue vector."""
    return EmpiricalCdf(eigenvalues)


def ks_distance(eigenvalues, ref: SemicircleRef = SEMICIRCLE) -> float:
    """Exact KS statistic between an ESD and a continuous reference CDF.

    sup over jump points of max(|i/p - F(lam_i)|, |(i-1)/p - F(lam_i)|).
    """
    eigs = np.sort(np.asarray(eigenvalues, dtype=float))
    p = eigs.size
    if p == 0:
        raise ValidationError("need at least one eigenvalue")
    F = np.asarray(ref.cdf(eigs), dtype=float)
    i = np.arange(1, p + 1, dtype=float)
    return float(max(np.max(np.abs(i / p - F)), np.max(np.abs((i - 1) / p - F))))


def esd_sup_diff(eigsA, eigsB) -> float:
    """Exact sup-norm distance of two ESDs over the merged jump set."""
    a = np.sort(np.asarray(eigsA, dtype=float))
    b = np.sort(np.asarray(eigsB, dtype=float))
    if a.size != b.size:
        raise ValidationError(f"spectra have different lengths ({a.size} vs {b.size})")
    grid = np.concatenate([a, b])
    ca = np.searchsorted(a, grid, side="right")
    cb = np.searchsorted(b, grid, side="right")
    return float(np.max(np.abs(ca - cb))) / a.size


def diag_max_dev(X) -> float:
    """max_i |sum_j (X_ij^2 - 1)| / sqrt(np), straight from row sums."""
    x = X.entries if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    p, n = x.shape
    row_sums = np.sum(x * x - 1.0, axis=1)
    return float(np.max(np.abs(row_sums))) / math.sqrt(n * p)


# ---------------------------------------------------------------------------
# Matrix-free largest eigenvalue.


def lambda_max_matfree(X, tol: float = 1e-10, max_iter: int = 20000):
    """Largest eigenvalue of build_A(X) without forming the p x p matrix.

    Restarted Lanczos with full reorthogonalization on the operator
    v -> (X (X'v) - n v) / (2 sqrt(np)); memory stays at the p x n input
    plus O(p * block) work vectors.  Convergence requires BOTH a relative
    Rayleigh-quotient change <= tol across one restart cycle AND a
    residual ||A v - lam v|| <= tol * max(1, |lam|); Rayleigh stagnation
    alone is unreliable near clustered spectral edges.

    Returns (lambda_max, operator_applications).
    """
    if not tol > 0:
        raise ValidationError("tol must be > 0")
    x = X.entries if isinstance(X, DataMatrix) else np.asarray(X, dtype=float)
    p, n = x.shape
    scale = 2.0 * math.sqrt(n * p)

    matvecs = 0

    def apply_a(v):
        nonlocal matvecs
        matvecs += 1
        return (x @ (x.T @ v) - n * v) / scale

    if p == 1:
        lam = float((x[0] @ x[0] - n) / scale)
        return lam, 0

    rng = np.random.default_rng(0x5EED5EED)
    v = rng.standard_normal(p)
    v /= np.linalg.norm(v)

    block = min(p, 32)
    theta_prev = None
    best = None
    while matvecs < max_iter:
        Q = np.empty((p, block))
        alphas = np.empty(block)
        betas = np.empty(block)
        Q[:, 0] = v
        steps = 0
        breakdown = False
        for j in range(block):
            w = apply_a(Q[:, j])
            a_j = float(Q[:, j] @ w)
            alphas[j] = a_j
            w -= a_j * Q[:, j]
            if j > 0:
                w -= betas[j - 1] * Q[:, j - 1]
            # full reorthogonalization; the classic three-term recurrence
            # loses orthogonality long before the edge Ritz value settles
            w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
            beta = float(np.linalg.norm(w))
            betas[j] = beta
            steps = j + 1
            if beta < 1e-14:
                breakdown = True
                break
            if j + 1 < block:
                Q[:, j + 1] = w / beta
        T = np.diag(alphas[:steps]) + np.diag(betas[: steps - 1], 1) + np.diag(betas[: steps - 1], -1)
        ritz_vals, ritz_vecs = np.linalg.eigh(T)
        theta = float(ritz_vals[-1])
        y = ritz_vecs[:, -1]
        v = Q[:, :steps] @ y
        v /= np.linalg.norm(v)
        resid = float(np.linalg.norm(apply_a(v) - theta * v))
        best = theta
        ray_ok = theta_prev is not None and abs(theta - theta_prev) <= tol * max(1.0, abs(theta))
        res_ok = resid <= tol * max(1.0, abs(theta))
        if res_ok and (ray_ok or breakdown):
            return theta, matvecs
        theta_prev = theta
    raise ConvergenceError(
        f"no convergence within {max_iter} operator applications",
        best_value=best,
        iterations=matvecs,
    )


# ---------------------------------------------------------------------------
# Per-matrix summary.


@dataclass(frozen=True)
class SpectralSummary:
    """Spectrum-level diagnostics of one data matrix."""

    eigenvalues: np.ndarray | None
    lambda_max: float
    ks_to_semicircle: float | None
    diag_max_dev: float
    method: str

    def to_json(self) -> dict:
        return {
            "eigenvalues": None if self.eigenvalues is None else [float(v) for v in self.eigenvalues],
            "lambda_max": self.lambda_max,
            "ks_to_semicircle": self.ks_to_semicircle,
            "diag_max_dev": self.diag_max_dev,
            "method": self.method,
        }


def spectral_summary(X, method: str = "dense", tol: float = 1e-10) -> SpectralSummary:
    """Full dense summary, or matfree lambda_max only (for p beyond dense reach)."""
    if method == "dense":
        p = (X.entries if isinstance(X, DataMatrix) else np.asarray(X)).shape[0]
        if p > DENSE_P_LIMIT:
            raise ValidationError(f"dense summaries are limited to p <= {DENSE_P_LIMIT}")
        eigs = eigvals_sym(build_A(X))
        return SpectralSummary(
            eigenvalues=eigs,
            lambda_max=float(eigs[-1]),
            ks_to_semicircle=ks_distance(eigs),
            diag_max_dev=diag_max_dev(X),
            method="dense",
        )
    if method == "matfree":
        lam, _ = lambda_max_matfree(X, tol=tol)
        return SpectralSummary(
            eigenvalues=None,
            lambda_max=lam,
            ks_to_semicircle=None,
            diag_max_dev=diag_max_dev(X),
            method="matfree",
        )
    raise ValidationError("method must be 'dense' or 'matfree'")


def spectrum_to_csv(eigenvalues, path) -> None:
    """CSV export with columns (index, eigenvalue)."""
    with open(path, "w", newline="") as fh:
        fh.write("index,eigenvalue\n")
        for i, v in enumerate(np.asarray(eigenvalues, dtype=float)):
            fh.write(f"{i},{float(v)!r}\n")


def summary_to_json_str(summary: SpectralSummary) -> str:
    return json.dumps(summary.to_json(), sort_keys=True)
