"""Deterministic generation of i.i.d. data matrices from standardized laws.

Every built-in distribution is standardized in closed form (location and
scale chosen analytically), so the population mean is exactly 0 and the
population variance exactly 1 -- no post-hoc sample standardization.
Sampling is a pure function of (distribution, shape, seed, replicate):
the per-matrix stream seed is derived by avalanche mixing, which makes
sweeps parallelizable with scheduling-independent output.
"""

import csv
import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ValidationError

__all__ = [
    "DistributionSpec",
    "MatrixShape",
    "SeedSpec",
    "DataMatrix",
    "StandardizedMoments",
    "EmpiricalMomentReport",
    "gaussian",
    "rademacher",
    "uniform_symmetric",
    "centered_exponential",
    "student_t",
    "two_point",
    "distribution_from_json",
    "standardized_moments",
    "moment_sequence",
    "sample_matrix",
    "empirical_moment_report",
    "save_matrix",
    "load_matrix",
    "matrix_to_csv",
]

KINDS = (
    "gaussian",
    "rademacher",
    "uniform-symmetric",
    "centered-exponential",
    "student-t",
    "two-point",
)

_UNIFORM_HALF_WIDTH = math.sqrt(3.0)  # U[-sqrt(3), sqrt(3)] has variance 1


@dataclass(frozen=True)
class DistributionSpec:
    """A standardized entry distribution with known closed-form moments.

    ``kind`` selects the family; ``df`` parametrizes student-t (df > 2 so
    the variance exists), ``a``/``q`` parametrize the asymmetric two-point
    law (value a with probability q before standardization).
    """

    kind: str
    df: float | None = None
    a: float | None = None
    q: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "student-t":
            if self.df is None or not self.df > 2:
                raise ValidationError("student-t requires df > 2")
        elif self.kind == "two-point":
            if self.a is None or self.a == 0:
                raise ValidationError("two-point requires a != 0")
            if self.q is None or not 0 < self.q < 1:
                raise ValidationError("two-point requires probability q in (0, 1)")
        else:
            if self.df is not None or self.a is not None or self.q is not None:
                raise ValidationError(f"{self.kind} takes no parameters")

    @property
    def fourth_moment_finite(self) -> bool:
        if self.kind == "student-t":
            return self.df > 4
        return True

    def moment(self, order: int) -> float:
        """Population moment E[X^order] of the standardized law.

        Returns math.inf for even orders without a finite moment and
        math.nan for odd orders that are undefined (heavy t tails).
        """
        if order < 0:
            raise ValidationError("moment order must be >= 0")
        if order == 0:
            return 1.0
        if order == 1:
            return 0.0  # exact by standardization for every kind
        if order == 2:
            return 1.0
        kind = self.kind
        if kind == "gaussian":
            return 0.0 if order % 2 else float(_double_factorial(order - 1))
        if kind == "rademacher":
            return 0.0 if order % 2 else 1.0
        if kind == "uniform-symmetric":
            if order % 2:
                return 0.0
            return 3 ** (order // 2) / (order + 1)
        if kind == "centered-exponential":
            # E[(E-1)^s] for E ~ Exp(1) is the derangement number D_s.
            return float(_subfactorial(order))
        if kind == "student-t":
            return self._student_t_moment(order)
        # two-point
        x_hi = math.sqrt((1.0 - self.q) / self.q)
        x_lo = -math.sqrt(self.q / (1.0 - self.q))
        return self.q * x_hi**order + (1.0 - self.q) * x_lo**order

    def _student_t_moment(self, order: int) -> float:
        df = self.df
        if order % 2:
            return 0.0 if order < df else math.nan
        if order >= df:
            return math.inf
        # raw even moment of t_df, then rescale by the sd sqrt(df/(df-2))
        raw = (
            df ** (order / 2)
            * math.gamma((order + 1) / 2)
            * math.gamma((df - order) / 2)
            / (math.sqrt(math.pi) * math.gamma(df / 2))
        )
        return raw / (df / (df - 2.0)) ** (order / 2)

    def pdf(self, x):
        """Density of the standardized law (continuous kinds only)."""
        x = np.asarray(x, dtype=float)
        kind = self.kind
        if kind == "gaussian":
            return np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        if kind == "uniform-symmetric":
            return np.where(np.abs(x) <= _UNIFORM_HALF_WIDTH, 1.0 / (2 * _UNIFORM_HALF_WIDTH), 0.0)
        if kind == "centered-exponential":
            return np.where(x >= -1.0, np.exp(-(x + 1.0)), 0.0)
        if kind == "student-t":
            df = self.df
            s = math.sqrt(df / (df - 2.0))
            t = x * s
            coef = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
            return s * coef * (1.0 + t * t / df) ** (-(df + 1) / 2)
        raise ValidationError(f"{kind} is discrete; use atoms()")

    def atoms(self):
        """Support points and weights (discrete kinds only)."""
        if self.kind == "rademacher":
            return ((-1.0, 0.5), (1.0, 0.5))
        if self.kind == "two-point":
            x_hi = math.sqrt((1.0 - self.q) / self.q)
            x_lo = -math.sqrt(self.q / (1.0 - self.q))
            return ((x_lo, 1.0 - self.q), (x_hi, self.q))
        raise ValidationError(f"{self.kind} is continuous; use pdf()")

    @property
    def is_discrete(self) -> bool:
        return self.kind in ("rademacher", "two-point")

    @property
    def support(self):
        """(lo, hi) of the standardized law (continuous kinds only)."""
        if self.kind == "uniform-symmetric":
            return (-_UNIFORM_HALF_WIDTH, _UNIFORM_HALF_WIDTH)
        if self.kind == "centered-exponential":
            return (-1.0, math.inf)
        if self.kind in ("gaussian", "student-t"):
            return (-math.inf, math.inf)
        raise ValidationError(f"{self.kind} is discrete; use atoms()")

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "student-t":
            out["df"] = self.df
        elif self.kind == "two-point":
            out["a"] = self.a
            out["q"] = self.q
        return out


def gaussian() -> DistributionSpec:
    return DistributionSpec("gaussian")


def rademacher() -> DistributionSpec:
    return DistributionSpec("rademacher")


def uniform_symmetric() -> DistributionSpec:
    return DistributionSpec("uniform-symmetric")


def centered_exponential() -> DistributionSpec:
    return DistributionSpec("centered-exponential")


def student_t(df: float) -> DistributionSpec:
    return DistributionSpec("student-t", df=df)


def two_point(a: float, q: float) -> DistributionSpec:
    return DistributionSpec("two-point", a=a, q=q)


def distribution_from_json(obj) -> DistributionSpec:
    """Build a DistributionSpec from a dict or a bare kind name."""
    if isinstance(obj, str):
        obj = {"kind": obj}
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValidationError("distribution spec must be a kind name or a dict with 'kind'")
    extra = set(obj) - {"kind", "df", "a", "q"}
    if extra:
        raise ValidationError(f"unknown distribution fields {sorted(extra)}")
    return DistributionSpec(obj["kind"], df=obj.get("df"), a=obj.get("a"), q=obj.get("q"))


def _double_factorial(m: int) -> int:
    out = 1
    while m > 1:
        out *= m
        m -= 2
    return out


def _subfactorial(s: int) -> int:
    # D_s = s*D_{s-1} + (-1)^s, D_0 = 1
    d = 1
    for i in range(1, s + 1):
        d = i * d + (-1) ** i
    return d


@dataclass(frozen=True)
class StandardizedMoments:
    m1: float
    m2: float
    m3: float
    m4: float
    m4_finite: bool


def standardized_moments(spec: DistributionSpec) -> StandardizedMoments:
    """First four closed-form moments of the standardized law."""
    return StandardizedMoments(
        m1=spec.moment(1),
        m2=spec.moment(2),
        m3=spec.moment(3),
        m4=spec.moment(4),
        m4_finite=spec.fourth_moment_finite,
    )


def moment_sequence(spec: DistributionSpec, max_order: int) -> tuple:
    """(m1, ..., m_max_order) as needed by the trace-moment oracles."""
    if max_order < 1:
        raise ValidationError("max_order must be >= 1")
    return tuple(spec.moment(s) for s in range(1, max_order + 1))


@dataclass(frozen=True)
class MatrixShape:
    """Dimension p and sample count n of a p x n data matrix."""

    p: int
    n: int

    def __post_init__(self):
        if not (isinstance(self.p, int) and self.p >= 1):
            raise ValidationError("p must be a positive integer")
        if not (isinstance(self.n, int) and self.n >= 1):
            raise ValidationError("n must be a positive integer")

    def ratio(self) -> Fraction:
        """p/n as an exact rational."""
        return Fraction(self.p, self.n)


_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus the deterministic per-run derivation rule."""

    master_seed: int

    def __post_init__(self):
        if not isinstance(self.master_seed, int) or not 0 <= self.master_seed <= _MASK64:
            raise ValidationError("master_seed must be a 64-bit unsigned integer")

    def derive(self, p: int, n: int, replicate: int) -> int:
        """64-bit stream seed for one (p, n, replicate) cell.

        Avalanche mixing guarantees distinct replicates get unrelated
        streams regardless of scheduling order.
        """
        h = self.master_seed
        for field_value in (p, n, replicate):
            h = _splitmix64(h ^ _splitmix64(field_value & _MASK64))
        return h


@dataclass(frozen=True)
class DataMatrix:
    """A p x n real matrix together with its generation provenance."""

    shape: MatrixShape
    entries: np.ndarray
    spec: DistributionSpec | None = None
    seed: SeedSpec | None = None
    replicate: int | None = None

    def __post_init__(self):
        if self.entries.shape != (self.shape.p, self.shape.n):
            raise ValidationError(
                f"entries shape {self.entries.shape} != declared ({self.shape.p}, {self.shape.n})"
            )

    @property
    def p(self) -> int:
        return self.shape.p

    @property
    def n(self) -> int:
        return self.shape.n


def sample_matrix(
    spec: DistributionSpec, shape: MatrixShape, seed: SeedSpec, replicate: int = 0
) -> DataMatrix:
    """Draw p*n i.i.d. standardized entries; bit-identical for identical inputs."""
    if replicate < 0:
        raise ValidationError("replicate index must be >= 0")
    rng = np.random.default_rng(seed.derive(shape.p, shape.n, replicate))
    size = (shape.p, shape.n)
    kind = spec.kind
    if kind == "gaussian":
        entries = rng.standard_normal(size)
    elif kind == "rademacher":
        entries = rng.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0
    elif kind == "uniform-symmetric":
        entries = rng.uniform(-_UNIFORM_HALF_WIDTH, _UNIFORM_HALF_WIDTH, size=size)
    elif kind == "centered-exponential":
        entries = rng.standard_exponential(size) - 1.0
    elif kind == "student-t":
        entries = rng.standard_t(spec.df, size=size) / math.sqrt(spec.df / (spec.df - 2.0))
    else:  # two-point
        (x_lo, w_lo), (x_hi, _) = spec.atoms()
        entries = np.where(rng.random(size=size) < w_lo, x_lo, x_hi)
    entries.setflags(write=False)
    return DataMatrix(shape=shape, entries=entries, spec=spec, seed=seed, replicate=replicate)


@dataclass(frozen=True)
class EmpiricalMomentReport:
    m1: float
    m2: float
    m3: float
    m4: float
    max_abs: float


def empirical_moment_report(X: DataMatrix) -> EmpiricalMomentReport:
    """First four empirical moments and the largest |entry|."""
    e = X.entries
    return EmpiricalMomentReport(
        m1=float(np.mean(e)),
        m2=float(np.mean(e**2)),
        m3=float(np.mean(e**3)),
        m4=float(np.mean(e**4)),
        max_abs=float(np.max(np.abs(e))) if e.size else 0.0,
    )


# ---------------------------------------------------------------------------
# Matrix file formats: self-describing binary and CSV interop.

_MAGIC = b"COVSPEC-MAT-v01\n"  # 16 bytes, magic + version


def save_matrix(X: DataMatrix, path) -> None:
    """Binary dump: 16-byte header, p and n as u64 LE, then row-major f64 LE."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", X.p, X.n))
        fh.write(np.ascontiguousarray(X.entries, dtype="<f8").tobytes())


def load_matrix(path) -> DataMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(16)
        if magic != _MAGIC:
            raise ValidationError(f"{path}: not a covspectrum matrix file")
        p, n = struct.unpack("<QQ", fh.read(16))
        raw = fh.read(8 * p * n)
        if len(raw) != 8 * p * n:
            raise ValidationError(f"{path}: truncated matrix payload")
    entries = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(int(p), int(n))
    entries.setflags(write=False)
    return DataMatrix(shape=MatrixShape(int(p), int(n)), entries=entries)


def matrix_to_csv(X: DataMatrix, path) -> None:
    """CSV export, one line per matrix row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in X.entries:
            writer.writerow([repr(float(v)) for v in row])
