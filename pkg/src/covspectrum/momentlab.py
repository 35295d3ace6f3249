"""Exact combinatorial oracles for the trace-moment machinery.

A circuit of length k is a pair of index sequences (i_1..i_k, j_1..j_k).
It induces 2k directed edges between an I-line and a J-line:

    e_{2a-1} = i_a j_a   (column edge),
    e_{2a}   = j_a i_{a+1}  (row edge, with i_{k+1} = i_1).

Vertices on different lines never coincide even when their integer values
agree; two edges coincide when they share the same unordered end set.
A circuit is a W-graph when every edge coincides with at least one other;
with centered entries these are the only circuits whose expectation
survives.

Edges are classified by first-traversal order: innovations (first edges
to reach a new vertex; column innovations split into T11/T12 by whether
the following row edge is also an innovation), T3 edges (first repeats of
innovations, regular or irregular), and T4 edges (everything else), whose
first appearances are the T2 edges (T21 when the class is headed by an
innovation, T22 otherwise).

On top of the classification the module offers an exact trace-moment
evaluator (full enumeration with compensated summation), a canonical
W-graph enumerator with isomorphism-class sizes, a log-space evaluator of
the sextuple-sum upper bound on E tr(B^k), and a feasibility checker for
the h/k proof schedules.
"""

import itertools
import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

from scipy.special import logsumexp

from .errors import ResourceError, ValidationError

__all__ = [
    "EdgeLabel",
    "IndexCircuit",
    "GraphStats",
    "ScheduleParams",
    "ScheduleCondition",
    "ScheduleReport",
    "classify",
    "classify_json",
    "expectation_of_circuit",
    "circuits",
    "trace_moment_unscaled",
    "exact_trace_moment",
    "enumerate_canonical",
    "isomorphism_class_size",
    "bound_rhs_a13",
    "bound_table",
    "bound_table_csv",
    "check_schedule",
]

ENUMERATION_BUDGET = 10**8
BOUND_TERM_BUDGET = 2 * 10**7
CANONICAL_K_LIMIT = 5

# Finite-scale stand-ins for the asymptotic schedule conditions: a
# "-> infinity" quantity passes when >= LARGE_MIN, a "-> 0" quantity
# when <= SMALL_MAX.  Diagnostic only, not a guarantee.
LARGE_MIN = 10.0
SMALL_MAX = 1.0


class EdgeLabel(str, Enum):
    T11 = "column-innovation-T11"
    T12 = "column-innovation-T12"
    ROW_INNOVATION = "row-innovation"
    T3_REGULAR = "T3-regular"
    T3_IRREGULAR = "T3-irregular"
    T21 = "T21"
    T22 = "T22"
    T4_OTHER = "T4-other"


@dataclass(frozen=True)
class IndexCircuit:
    """k, the I-sequence, the J-sequence, and whether the circuit is
    required to satisfy the adjacency constraint i_1 != i_2, ..., i_k != i_1."""

    k: int
    i_seq: tuple
    j_seq: tuple
    star: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if len(self.i_seq) != self.k or len(self.j_seq) != self.k:
            raise ValidationError("i_seq and j_seq must both have length k")
        if any((not isinstance(v, int)) or v < 1 for v in self.i_seq + self.j_seq):
            raise ValidationError("indices must be integers >= 1")
        if self.star and any(
            self.i_seq[a] == self.i_seq[(a + 1) % self.k] for a in range(self.k)
        ):
            raise ValidationError("star circuit has equal cyclically adjacent I-indices")

    def satisfies_star(self) -> bool:
        return all(self.i_seq[a] != self.i_seq[(a + 1) % self.k] for a in range(self.k))

    def to_json(self) -> dict:
        return {"k": self.k, "i": list(self.i_seq), "j": list(self.j_seq)}

    @classmethod
    def from_json(cls, obj, star: bool = False) -> "IndexCircuit":
        try:
            return cls(int(obj["k"]), tuple(obj["i"]), tuple(obj["j"]), star=star)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed circuit JSON: {exc}") from exc


@dataclass(frozen=True)
class GraphStats:
    """Counts of the full edge taxonomy for one circuit.

    l innovations split into r row and c column ones; r1 of the column
    innovations are T11.  t counts T2 edges, mu of them T21 and mu1 the
    T21s whose class contains no further T4 edge.  n_i are the T4 counts
    of the T21-carrying innovation classes, m_j the sizes of the
    T22-headed coincidence classes.
    """

    k: int
    l: int
    r: int
    c: int
    r1: int
    t: int
    mu: int
    mu1: int
    n_i: tuple
    m_j: tuple
    is_W: bool
    is_canonical: bool

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "l": self.l,
            "r": self.r,
            "c": self.c,
            "r1": self.r1,
            "t": self.t,
            "mu": self.mu,
            "mu1": self.mu1,
            "n_i": list(self.n_i),
            "m_j": list(self.m_j),
            "is_W": self.is_W,
            "is_canonical": self.is_canonical,
        }


def _edges(i_seq, j_seq):
    """(is_col, ivalue, jvalue) in traversal order e_1, ..., e_2k."""
    k = len(i_seq)
    out = []
    for a in range(k):
        out.append((True, i_seq[a], j_seq[a]))
        out.append((False, i_seq[(a + 1) % k], j_seq[a]))
    return out


def _is_canonical(i_seq, j_seq) -> bool:
    if i_seq[0] != 1 or j_seq[0] != 1:
        return False
    imax, jmax = 1, 1
    for a in range(1, len(i_seq)):
        if i_seq[a] > imax + 1 or j_seq[a] > jmax + 1:
            return False
        imax = max(imax, i_seq[a])
        jmax = max(jmax, j_seq[a])
    return True


def classify(circuit: IndexCircuit):
    """Label every edge and aggregate the taxonomy counts.

    Returns (labels, stats) where labels[m] is the EdgeLabel of e_{m+1}.
    """
    k = circuit.k
    edges = _edges(circuit.i_seq, circuit.j_seq)

    # First pass: innovations = edges whose terminal vertex is new.
    seen_i = {circuit.i_seq[0]}
    seen_j = set()
    innovation = [False] * (2 * k)
    for pos, (is_col, iv, jv) in enumerate(edges):
        if is_col:
            if jv not in seen_j:
                innovation[pos] = True
                seen_j.add(jv)
        else:
            if iv not in seen_i:
                innovation[pos] = True
                seen_i.add(iv)

    # Coincidence classes: same unordered end set == same (i, j) value.
    class_positions = {}
    for pos, (_, iv, jv) in enumerate(edges):
        class_positions.setdefault((iv, jv), []).append(pos)
    is_w = all(len(ps) >= 2 for ps in class_positions.values())

    labels = [None] * (2 * k)
    t3_positions = []
    n_i = []
    m_j = []
    # Iterate classes by head position so n_i / m_j follow traversal order.
    for value, positions in sorted(class_positions.items(), key=lambda kv: kv[1][0]):
        head = positions[0]
        if innovation[head]:
            if len(positions) >= 2:
                t3_positions.append(positions[1])
            if len(positions) >= 3:
                labels[positions[2]] = EdgeLabel.T21
                n_i.append(len(positions) - 2)
                for pos in positions[3:]:
                    labels[pos] = EdgeLabel.T4_OTHER
        else:
            labels[head] = EdgeLabel.T22
            m_j.append(len(positions))
            for pos in positions[1:]:
                labels[pos] = EdgeLabel.T4_OTHER

    # Innovation labels; a column innovation is T11 iff the row edge that
    # follows it is a row innovation.
    for pos in range(2 * k):
        if not innovation[pos]:
            continue
        is_col = edges[pos][0]
        if not is_col:
            labels[pos] = EdgeLabel.ROW_INNOVATION
        else:
            labels[pos] = EdgeLabel.T11 if innovation[pos + 1] else EdgeLabel.T12

    # Regular vs irregular T3: replay the traversal and count innovations
    # sharing the T3 edge's initial vertex that are still single.
    for q in t3_positions:
        is_col, iv, jv = edges[q]
        v = ("I", iv) if is_col else ("J", jv)
        count = 0
        for x in range(q):
            if not innovation[x]:
                continue
            _, xi, xj = edges[x]
            if v not in (("I", xi), ("J", xj)):
                continue
            members = class_positions[(xi, xj)]
            if bisect_right(members, q - 1) == 1:  # single up to e_{q-1}
                count += 1
        labels[q] = EdgeLabel.T3_REGULAR if count > 1 else EdgeLabel.T3_IRREGULAR

    row_innov = sum(1 for pos in range(2 * k) if labels[pos] is EdgeLabel.ROW_INNOVATION)
    col_innov = sum(
        1 for pos in range(2 * k) if labels[pos] in (EdgeLabel.T11, EdgeLabel.T12)
    )
    stats = GraphStats(
        k=k,
        l=row_innov + col_innov,
        r=row_innov,
        c=col_innov,
        r1=sum(1 for lab in labels if lab is EdgeLabel.T11),
        t=sum(1 for lab in labels if lab in (EdgeLabel.T21, EdgeLabel.T22)),
        mu=sum(1 for lab in labels if lab is EdgeLabel.T21),
        mu1=sum(1 for v in n_i if v == 1),
        n_i=tuple(n_i),
        m_j=tuple(m_j),
        is_W=is_w,
        is_canonical=_is_canonical(circuit.i_seq, circuit.j_seq),
    )
    return labels, stats


def classify_json(circuit: IndexCircuit) -> dict:
    labels, stats = classify(circuit)
    out = circuit.to_json()
    out["labels"] = [lab.value for lab in labels]
    out["stats"] = stats.to_json()
    return out


# ---------------------------------------------------------------------------
# Expectations and exact trace moments.


def _expectation_from_counts(counts, moments):
    """Product of per-class moments; counts maps edge value -> multiplicity."""
    term = 1
    for mult in counts:
        if mult > len(moments):
            raise ValidationError(
                f"need moments up to order {mult}, got only {len(moments)}"
            )
        m = moments[mult - 1]
        if isinstance(m, float) and not math.isfinite(m):
            raise ValidationError(f"moment of order {mult} is not finite")
        term = term * m
        if term == 0:
            return term
    return term


def expectation_of_circuit(circuit: IndexCircuit, moments):
    """E of the product of entries along the circuit.

    Edges are grouped into coincidence classes; independence across
    distinct index pairs factorizes the expectation into a product of
    per-class moments (moments[s-1] = E X^s).
    """
    counts = {}
    for _, iv, jv in _edges(circuit.i_seq, circuit.j_seq):
        counts[(iv, jv)] = counts.get((iv, jv), 0) + 1
    return _expectation_from_counts(counts.values(), moments)


def circuits(p: int, n: int, k: int, star: bool = True):
    """All circuits with indices in [1,p] x [1,n]; star prunes adjacent equals."""
    if k < 1 or p < 1 or n < 1:
        raise ValidationError("p, n, k must be >= 1")
    for i_seq in itertools.product(range(1, p + 1), repeat=k):
        if star and any(i_seq[a] == i_seq[(a + 1) % k] for a in range(k)):
            continue
        for j_seq in itertools.product(range(1, n + 1), repeat=k):
            yield IndexCircuit(k, i_seq, j_seq, star=star)


def trace_moment_unscaled(p: int, n: int, k: int, moments):
    """sum over star circuits of the factorized expectation (no scaling).

    Exact (integer/Fraction) arithmetic when every moment is an int or
    Fraction; otherwise compensated (Kahan) float summation.
    """
    if k < 1 or p < 1 or n < 1:
        raise ValidationError("p, n, k must be >= 1")
    if (p * n) ** k > ENUMERATION_BUDGET:
        raise ResourceError(
            f"(p*n)^k = {(p * n) ** k:.3e} exceeds the {ENUMERATION_BUDGET:.0e} term budget"
        )
    exact = all(isinstance(m, (int, Fraction)) and not isinstance(m, bool) for m in moments)
    i_tuples = [
        i_seq
        for i_seq in itertools.product(range(1, p + 1), repeat=k)
        if all(i_seq[a] != i_seq[(a + 1) % k] for a in range(k))
    ]
    wrap = list(range(1, k)) + [0]
    total_exact = 0
    total = 0.0
    comp = 0.0
    for i_seq in i_tuples:
        i_next = tuple(i_seq[w] for w in wrap)
        for j_seq in itertools.product(range(1, n + 1), repeat=k):
            counts = {}
            for a in range(k):
                e1 = (i_seq[a], j_seq[a])
                counts[e1] = counts.get(e1, 0) + 1
                e2 = (i_next[a], j_seq[a])
                counts[e2] = counts.get(e2, 0) + 1
            term = _expectation_from_counts(counts.values(), moments)
            if exact:
                total_exact += term
            else:
                y = term - comp
                t = total + y
                comp = (t - total) - y
                total = t
    return total_exact if exact else total


def exact_trace_moment(p: int, n: int, k: int, moments) -> float:
    """E tr(B^k) by full enumeration: (2 sqrt(np))^{-k} * unscaled sum.

    For even k the normalization is the exact integer 2^k (np)^{k/2}, so
    rational cases come out exact in float.
    """
    unscaled = trace_moment_unscaled(p, n, k, moments)
    half, rem = divmod(k, 2)
    denom = (2**k) * (n * p) ** half
    if rem:
        return float(unscaled) / (denom * math.sqrt(n * p))
    if isinstance(unscaled, (int, Fraction)):
        return float(Fraction(unscaled) / denom)
    return unscaled / denom


# ---------------------------------------------------------------------------
# Canonical W-graph enumeration.


def enumerate_canonical(k: int, p_cap: int | None = None, n_cap: int | None = None, star: bool = False):
    """Yield one canonical representative per W-graph isomorphism class.

    Canonical means every new I/J vertex takes the smallest unused label
    (i_1 = j_1 = 1, i_a <= max(i_1..i_{a-1}) + 1, same for j).  p_cap and
    n_cap bound the number of distinct I and J vertices.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > CANONICAL_K_LIMIT:
        raise ResourceError(f"canonical enumeration is guarded to k <= {CANONICAL_K_LIMIT}")
    p_cap = k + 1 if p_cap is None else p_cap
    n_cap = k if n_cap is None else n_cap
    if p_cap < 1 or n_cap < 1:
        return

    def rec(a, i_seq, j_seq, imax, jmax):
        if a == k:
            if star and i_seq[-1] == i_seq[0]:
                return
            circuit = IndexCircuit(k, tuple(i_seq), tuple(j_seq), star=star)
            _, stats = classify(circuit)
            if stats.is_W:
                yield circuit
            return
        if a == 0:
            i_choices = (1,)
            j_choices = (1,)
        else:
            i_choices = range(1, min(imax + 1, p_cap) + 1)
            j_choices = range(1, min(jmax + 1, n_cap) + 1)
        for iv in i_choices:
            if star and a > 0 and iv == i_seq[-1]:
                continue
            for jv in j_choices:
                yield from rec(
                    a + 1, i_seq + [iv], j_seq + [jv], max(imax, iv), max(jmax, jv)
                )

    yield from rec(0, [], [], 0, 0)


def isomorphism_class_size(circuit: IndexCircuit, p: int, n: int) -> int:
    """p(p-1)...(p-r) * n(n-1)...(n-c+1): choices of actual index values.

    The falling factorials run over the distinct I-vertex and J-vertex
    counts; they vanish when the circuit needs more distinct indices than
    p or n provide.
    """
    return math.perm(p, len(set(circuit.i_seq))) * math.perm(n, len(set(circuit.j_seq)))


# ---------------------------------------------------------------------------
# The sextuple-sum upper bound on E tr(B^k).


def _log_binom(logfact, a: int, b: int) -> float:
    return logfact[a] - logfact[b] - logfact[a - b]


def bound_rhs_a13(p: int, n: int, k: int, delta: float) -> float:
    """Sextuple-sum upper bound on E tr(B^k), evaluated in log space.

    2^{-k} sum over (l, r, r1, t, mu, mu1) of
        C(k,r) C(r,r1) C(k-r1, l-r-r1) C(2k-l, l)
        * (p/n)^{(r-r1)/2} * p^{-t/2} * p * k^{3t} * (t+1)^{6k-6l}
        * delta^{2k-2l-2t+mu1}.

    The chain that produces this bound replaces per-class moment caps by
    k^t, which is only valid once k exceeds max(EX^4, |EX^3|); callers
    comparing against exact trace moments at small k should keep that
    caveat in mind.
    """
    if k < 1 or p < 1 or n < 1:
        raise ValidationError("p, n, k must be >= 1")
    if not delta > 0:
        raise ValidationError("delta must be > 0")
    n_terms = sum(
        (r + 1) * ((2 * k - 2 * l + 1) * (2 * k - 2 * l + 2) * (2 * k - 2 * l + 3)) // 6
        for l in range(1, k + 1)
        for r in range(1, l + 1)
    )
    if n_terms > BOUND_TERM_BUDGET:
        raise ResourceError(f"{n_terms} bound terms exceed the {BOUND_TERM_BUDGET} budget")
    logfact = [0.0] * (2 * k + 1)
    for m in range(2, 2 * k + 1):
        logfact[m] = logfact[m - 1] + math.log(m)
    lp, ln, ld = math.log(p), math.log(n), math.log(delta)
    lk = math.log(k)
    l2 = math.log(2.0)
    terms = []
    for l in range(1, k + 1):
        for r in range(1, l + 1):
            for r1 in range(0, r + 1):
                m12 = l - r - r1  # T12 count; binomial vanishes outside [0, k-r1]
                if m12 < 0 or m12 > k - r1:
                    continue
                base = (
                    _log_binom(logfact, k, r)
                    + _log_binom(logfact, r, r1)
                    + _log_binom(logfact, k - r1, m12)
                    + _log_binom(logfact, 2 * k - l, l)
                    + 0.5 * (r - r1) * (lp - ln)
                    + lp
                    - k * l2
                )
                for t in range(0, 2 * k - 2 * l + 1):
                    base_t = base - 0.5 * t * lp + 3 * t * lk + (6 * k - 6 * l) * math.log(t + 1)
                    for mu in range(0, t + 1):
                        for mu1 in range(0, mu + 1):
                            terms.append(base_t + (2 * k - 2 * l - 2 * t + mu1) * ld)
    total = float(logsumexp(terms))
    if total > math.log(1.7976931348623157e308):
        raise ResourceError("bound overflows double precision even in log space")
    return math.exp(total)


def bound_table(cases, moments) -> list:
    """Rows (p, n, k, delta, bound, exact, ratio) for a list of cases."""
    rows = []
    for p, n, k, delta in cases:
        bound = bound_rhs_a13(p, n, k, delta)
        exact = exact_trace_moment(p, n, k, moments)
        rows.append(
            {
                "p": p,
                "n": n,
                "k": k,
                "delta": delta,
                "bound": bound,
                "exact": exact,
                "ratio": bound / exact if exact != 0 else math.inf,
            }
        )
    return rows


def bound_table_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("p,n,k,delta,bound,exact,ratio\n")
        for row in rows:
            fh.write(
                f"{row['p']},{row['n']},{row['k']},{row['delta']!r},"
                f"{row['bound']!r},{row['exact']!r},{row['ratio']!r}\n"
            )


# ---------------------------------------------------------------------------
# Proof-schedule feasibility diagnostics.


@dataclass(frozen=True)
class ScheduleParams:
    h: int
    kk: int
    delta: float
    p: float
    C1: float


@dataclass(frozen=True)
class ScheduleCondition:
    name: str
    value: float
    passed: bool


@dataclass(frozen=True)
class ScheduleReport:
    params: ScheduleParams
    conditions: tuple

    @property
    def h_feasible(self) -> bool:
        return all(c.passed for c in self.conditions if c.name.startswith("h_"))

    @property
    def k_feasible(self) -> bool:
        return all(c.passed for c in self.conditions if c.name.startswith("k_"))

    @property
    def feasible(self) -> bool:
        return all(c.passed for c in self.conditions)

    def to_json(self) -> dict:
        return {
            "h": self.params.h,
            "kk": self.params.kk,
            "delta": self.params.delta,
            "p": self.params.p,
            "C1": self.params.C1,
            "conditions": [
                {"name": c.name, "value": c.value, "passed": c.passed} for c in self.conditions
            ],
            "h_feasible": self.h_feasible,
            "k_feasible": self.k_feasible,
            "feasible": self.feasible,
        }


def _safe_exp(x: float) -> float:
    if x > 709.0:
        return math.inf
    return math.exp(x)


def check_schedule(p, n, delta: float, C1: float = 2.0) -> ScheduleReport:
    """Evaluate both proof schedules at concrete (p, delta) with h = kk = ceil(log^2 p).

    h-schedule: h/log p large, delta^2 h/log p small, delta^4 p / C1 >= sqrt(p).
    k-schedule: kk/log p large, delta^{1/3} kk/log p small, delta^2 p^{1/4} >= kk^3.

    The growth/decay conditions are asymptotic; the pass/fail verdicts use
    the finite-scale thresholds LARGE_MIN and SMALL_MAX and are diagnostic,
    not a guarantee.  C1 is the second moment of X^2 - 1 (2.0 for gaussian).
    """
    if not p >= 2:
        raise ValidationError("p must be >= 2")
    if not delta > 0:
        raise ValidationError("delta must be > 0")
    if not C1 > 0:
        raise ValidationError("C1 must be > 0")
    logp = math.log(p)
    h = kk = math.ceil(logp * logp)
    ld = math.log(delta)
    # ratios evaluated in log space so very large synthetic p cannot overflow
    h_tail_gap = 4 * ld + logp - math.log(C1) - 0.5 * logp
    k_power_gap = 2 * ld + 0.25 * logp - 3 * math.log(kk)
    conditions = (
        ScheduleCondition("h_growth", h / logp, h / logp >= LARGE_MIN),
        ScheduleCondition("h_delta", delta * delta * h / logp, delta * delta * h / logp <= SMALL_MAX),
        ScheduleCondition("h_tail", _safe_exp(h_tail_gap), h_tail_gap >= 0.0),
        ScheduleCondition("k_growth", kk / logp, kk / logp >= LARGE_MIN),
        ScheduleCondition(
            "k_delta", delta ** (1.0 / 3.0) * kk / logp, delta ** (1.0 / 3.0) * kk / logp <= SMALL_MAX
        ),
        ScheduleCondition("k_power", _safe_exp(k_power_gap), k_power_gap >= 0.0),
    )
    return ScheduleReport(params=ScheduleParams(h=h, kk=kk, delta=delta, p=p, C1=C1), conditions=conditions)


def circuit_from_json_str(text: str, star: bool = False) -> IndexCircuit:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid circuit JSON: {exc}") from exc
    return IndexCircuit.from_json(obj, star=star)
