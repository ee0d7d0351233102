"""Hierarchical clustering of space-time configurations and dyadic label sums.

Points are ``(t, x)`` pairs measured with the parabolic distance
``|t - s|**0.5 + |x - y|``; the origin is always present as point ``0``.
Binary trees over the leaves ``0..N`` are written as nested tuples, e.g.
``((0, 1), (2, 3))``, and interior vertices are named by their leaf sets.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np

Point = tuple[float, float]
Shape = object  # nested tuples of ints
LN2 = math.log(2.0)


class ConfigurationError(ValueError):
    """Raised for configurations with coinciding points."""


class UnknownExample(KeyError):
    pass


def parabolic_distance(a: Point, b: Point) -> float:
    return math.sqrt(abs(a[0] - b[0])) + abs(a[1] - b[1])


def hausdorff(a: list[Point], b: list[Point]) -> float:
    ab = max(min(parabolic_distance(p, q) for q in b) for p in a)
    ba = max(min(parabolic_distance(p, q) for p in a) for q in b)
    return max(ab, ba)


def dyadic_label(d: float) -> int:
    """The unique integer ``n`` with ``d <= 2**-n < 2*d``."""
    if not d > 0 or math.isinf(d):
        raise ValueError(f"distance must be positive and finite, got {d}")
    mant, exp = math.frexp(d)  # d = mant * 2**exp, mant in [1/2, 1)
    return -(exp - 1) if mant == 0.5 else -exp


# ---------------------------------------------------------------------------
# labelled binary trees


@dataclass
class LabelledTree:
    """Binary tree over leaves ``0..N`` with integer labels on interior vertices."""

    shape: Shape
    labels: dict[frozenset, int] = field(default_factory=dict)
    raw_labels: dict[frozenset, int] = field(default_factory=dict)  # label of the merge distance itself

    @property
    def n_leaves(self) -> int:
        return len(leaves_of(self.shape))

    @property
    def interior(self) -> list[frozenset]:
        return interior_vertices(self.shape)

    @property
    def root(self) -> frozenset:
        return leaves_of(self.shape)

    def parent(self, v: frozenset) -> frozenset | None:
        best = None
        for u in self.interior:
            if v < u and (best is None or len(u) < len(best)):
                best = u
        return best

    def meet(self, *leaves: int) -> frozenset:
        """Most recent common ancestor of the given leaves."""
        want = set(leaves)
        return min((u for u in self.interior if want <= u), key=len)

    def is_monotone(self) -> bool:
        for v in self.interior:
            p = self.parent(v)
            if p is not None and self.labels[p] > self.labels[v]:
                return False
        return True

    def to_json(self) -> dict:
        return {
            "shape": shape_text(self.shape),
            "labels": {vertex_name(v): self.labels[v] for v in self.interior},
        }

    def to_text(self) -> str:
        lines: list[str] = []

        def walk(s, depth):
            pad = "  " * depth
            if isinstance(s, int):
                lines.append(f"{pad}{s}")
                return
            v = leaves_of(s)
            lines.append(f"{pad}[{vertex_name(v)}] n={self.labels.get(v)}")
            for c in s:
                walk(c, depth + 1)

        walk(self.shape, 0)
        return "\n".join(lines)


def leaves_of(shape: Shape) -> frozenset:
    if isinstance(shape, int):
        return frozenset([shape])
    return frozenset().union(*(leaves_of(c) for c in shape))


def interior_vertices(shape: Shape) -> list[frozenset]:
    """Interior vertices in post-order (children before parents)."""
    if isinstance(shape, int):
        return []
    out = []
    for c in shape:
        out.extend(interior_vertices(c))
    out.append(leaves_of(shape))
    return out


def vertex_name(v: frozenset) -> str:
    return "".join(str(i) for i in sorted(v)) if all(i < 10 for i in v) else "-".join(
        str(i) for i in sorted(v)
    )


def canonical_shape(shape: Shape) -> Shape:
    if isinstance(shape, int):
        return shape
    a, b = (canonical_shape(c) for c in shape)
    return (a, b) if min(leaves_of(a)) < min(leaves_of(b)) else (b, a)


def shape_text(shape: Shape) -> str:
    if isinstance(shape, int):
        return str(shape)
    return "(" + ",".join(shape_text(c) for c in shape) + ")"


def parse_shape(text: str) -> Shape:
    """Parse ``"((0,1),(2,3))"`` into nested tuples; validates binary structure."""
    tokens = re.findall(r"\d+|[(),]", text.replace(" ", ""))
    pos = 0

    def node():
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("unexpected end of tree shape")
        tok = tokens[pos]
        if tok.isdigit():
            pos += 1
            return int(tok)
        if tok != "(":
            raise ValueError(f"unexpected {tok!r} in tree shape")
        pos += 1
        left = node()
        if pos >= len(tokens) or tokens[pos] != ",":
            raise ValueError("binary node needs two children")
        pos += 1
        right = node()
        if pos >= len(tokens) or tokens[pos] != ")":
            raise ValueError("binary node needs exactly two children")
        pos += 1
        return (left, right)

    shape = node()
    if pos != len(tokens):
        raise ValueError("trailing input in tree shape")
    leaves = sorted(leaves_of(shape))
    if leaves != list(range(len(leaves))):
        raise ValueError("leaves must be exactly 0..N")
    return shape


def all_shapes(n: int) -> list[Shape]:
    """Every rooted binary tree with leaves ``0..n`` (canonical form)."""

    def build(items):
        if len(items) == 1:
            return [items[0]]
        first, rest = items[0], items[1:]
        out = []
        for r in range(0, len(rest)):
            for combo in itertools.combinations(rest, r):
                left = (first,) + combo
                right = tuple(x for x in rest if x not in combo)
                for a in build(left):
                    for b in build(right):
                        out.append((a, b))
        return out

    return [canonical_shape(s) for s in build(tuple(range(n + 1)))]


# ---------------------------------------------------------------------------
# clustering


def cluster(z: list[Point]) -> LabelledTree:
    """Greedy Hausdorff clustering of ``0, z_1, ..., z_N`` with dyadic labels.

    Ties are broken by the lexicographically smallest pair of
    (minimum leaf index) among the candidate clusters.

    A later merge can have a smaller Hausdorff distance than an earlier one
    below it (possible from N = 3 on), which would make labels decrease
    towards the leaves.  Labels are therefore taken from the largest merge
    distance in the subtree; ``raw_labels`` keeps the per-merge values, and
    both agree whenever no such inversion occurs.
    """
    pts = [(0.0, 0.0)] + [(float(t), float(x)) for t, x in z]
    if len(set(pts)) != len(pts):
        raise ConfigurationError("configuration points must be pairwise distinct (origin included)")
    groups: list[tuple[frozenset, Shape]] = [(frozenset([i]), i) for i in range(len(pts))]
    labels: dict[frozenset, int] = {}
    raw: dict[frozenset, int] = {}
    reach: dict[frozenset, float] = {frozenset([i]): 0.0 for i in range(len(pts))}
    while len(groups) > 1:
        best = None
        for (ia, (a, _)), (ib, (b, _)) in itertools.combinations(enumerate(groups), 2):
            d = hausdorff([pts[i] for i in a], [pts[i] for i in b])
            key = (d, min(min(a), min(b)), max(min(a), min(b)))
            if best is None or key < best[0]:
                best = (key, ia, ib)
        (d, _, _), ia, ib = best
        (a, sa), (b, sb) = groups[ia], groups[ib]
        merged = a | b
        raw[merged] = dyadic_label(d)
        reach[merged] = max(d, reach[a], reach[b])
        labels[merged] = dyadic_label(reach[merged])
        groups = [g for k, g in enumerate(groups) if k not in (ia, ib)]
        groups.append((merged, canonical_shape((sa, sb))))
    return LabelledTree(canonical_shape(groups[0][1]), labels, raw)


def random_configuration(rng: np.random.Generator, n: int, box: float = 1.0) -> list[Point]:
    arr = rng.uniform(-box, box, size=(n, 2))
    return [(float(t), float(x)) for t, x in arr]


@dataclass
class DistanceFit:
    """Empirical extremes of ``2**-n(i^j) / d(z_i, z_j)`` and their dyadic envelope."""

    ratio_min: float
    ratio_max: float
    c: float
    C: float
    samples: int


def distance_ratios(z: list[Point], tree: LabelledTree | None = None) -> list[float]:
    tree = cluster(z) if tree is None else tree
    pts = [(0.0, 0.0)] + list(z)
    out = []
    for i, j in itertools.combinations(range(len(pts)), 2):
        n = tree.labels[tree.meet(i, j)]
        out.append(2.0 ** (-n) / parabolic_distance(pts[i], pts[j]))
    return out


def verify_distance_equivalence(samples: list[list[Point]]) -> DistanceFit:
    """Constants with ``c*d(z_i,z_j) <= 2**-n(i^j) <= C*d(z_i,z_j)`` over all samples.

    ``c`` and ``C`` are the enclosing powers of two of the empirical extremes.
    """
    lo, hi = math.inf, 0.0
    for z in samples:
        for r in distance_ratios(z):
            lo = min(lo, r)
            hi = max(hi, r)
    c = 2.0 ** math.floor(math.log2(lo))
    C = 2.0 ** math.ceil(math.log2(hi))
    return DistanceFit(lo, hi, c, C, len(samples))


def rescale(z: list[Point], factor_log2: int = 1) -> list[Point]:
    """Parabolic rescaling by ``2**-factor_log2`` (time by its square)."""
    s = 2.0 ** (-factor_log2)
    return [(t * s * s, x * s) for t, x in z]


# ---------------------------------------------------------------------------
# summation conditions and dyadic sums


def x_star(shape: Shape) -> frozenset:
    return LabelledTree(shape).meet(0, 1, 2)


def v_star(shape: Shape) -> list[frozenset]:
    """Vertices on the path from ``0^1^2`` to the root, root excluded."""
    xs = x_star(shape)
    root = leaves_of(shape)
    return [v for v in interior_vertices(shape) if xs <= v and v != root]


def check_sum_conditions(shape: Shape, eta: dict[frozenset, float]) -> tuple[bool, bool]:
    """``(all subtree sums > 0, all complement sums < 0 on the x_star path)``."""
    verts = interior_vertices(shape)
    missing = [v for v in verts if v not in eta]
    if missing:
        raise ValueError(f"eta missing for vertices {[vertex_name(v) for v in missing]}")
    cond1 = all(sum(eta[y] for y in verts if y <= x) > 0 for x in verts)
    cond2 = all(sum(eta[y] for y in verts if not y <= x) < 0 for x in v_star(shape))
    return cond1, cond2


def _children_interior(shape: Shape) -> dict[frozenset, list[frozenset]]:
    out: dict[frozenset, list[frozenset]] = {}

    def walk(s):
        if isinstance(s, int):
            return
        out[leaves_of(s)] = [leaves_of(c) for c in s if not isinstance(c, int)]
        for c in s:
            walk(c)

    walk(shape)
    return out


def log2_dyadic_sum(
    shape: Shape, eta: dict[frozenset, float], lam: float, window: int, C: float = 2.0
) -> float:
    """``log2`` of the sum over weakly increasing labels in ``[n0-window, n0+window]``.

    The summand is ``prod 2**(-eta(x) n(x))``; ``n0`` is the smallest label
    allowed at ``0^1^2`` by ``2**-n <= C*lam``.
    """
    n0 = math.ceil(-math.log2(C * lam) - 1e-12)
    grid = np.arange(n0 - window, n0 + window + 1, dtype=float)
    kids = _children_interior(shape)
    xs = x_star(shape)
    cache: dict[frozenset, np.ndarray] = {}

    def log_f(v: frozenset) -> np.ndarray:
        # natural log of the weight of the subtree at v as a function of its label
        acc = -eta[v] * grid * LN2
        for c in kids[v]:
            fc = log_f(c)
            # tail sums over labels >= current label
            tail = np.logaddexp.accumulate(fc[::-1])[::-1]
            acc = acc + tail
        if v == xs:
            acc = np.where(grid >= n0, acc, -np.inf)
        cache[v] = acc
        return acc

    total = np.logaddexp.reduce(log_f(leaves_of(shape)))
    return float(total / LN2)


@dataclass
class SumResult:
    log2_value: float
    window: int
    converged: bool

    @property
    def value(self) -> float:
        return 2.0 ** self.log2_value


def bounded_sum(
    shape: Shape,
    eta: dict[frozenset, float],
    lam: float,
    window: int = 16,
    C: float = 2.0,
    rtol: float = 1e-3,
    max_window: int = 512,
) -> SumResult:
    """Dyadic label sum with automatic window widening.

    The window doubles until widening it by 8 changes the value by less than
    ``rtol``; otherwise the result is flagged as not converged.
    """
    w = window
    while w <= max_window:
        a = log2_dyadic_sum(shape, eta, lam, w, C)
        b = log2_dyadic_sum(shape, eta, lam, w + 8, C)
        if abs(2.0 ** (b - a) - 1.0) < rtol:
            return SumResult(b, w + 8, True)
        w *= 2
    return SumResult(b, w // 2 + 8, False)


def fit_slope(xs, ys) -> float:
    slope, _ = np.polyfit(np.asarray(xs, float), np.asarray(ys, float), 1)
    return float(slope)


@dataclass
class SweepResult:
    lambdas: list[float]
    log2_values: list[float]
    converged: bool
    slope: float  # against log2(lambda); equals +sum(eta)

    @property
    def scale_slope(self) -> float:
        """Slope against the dyadic scale ``j = -log2(lambda)``; equals ``-sum(eta)``."""
        return -self.slope


def lambda_sweep(shape: Shape, eta: dict[frozenset, float], exps=range(2, 8), C: float = 2.0) -> SweepResult:
    """Sum at ``lam = 2**-e`` and the slope of ``log2(value)`` against ``log2(lam)``."""
    lams, vals, ok = [], [], True
    for e in exps:
        lam = 2.0 ** (-e)
        r = bounded_sum(shape, eta, lam, C=C)
        ok = ok and r.converged
        lams.append(lam)
        vals.append(r.log2_value)
    slope = fit_slope([math.log2(l) for l in lams], vals) if ok else math.nan
    return SweepResult(lams, vals, ok, slope)


# ---------------------------------------------------------------------------
# power counting library

PARABOLIC_DIM = 3


def power_count(shape: Shape, kernels: list[tuple[int, int, float]], dim: int = PARABOLIC_DIM) -> dict:
    """``eta(x) = dim + sum of homogeneities of kernels whose endpoints meet at x``."""
    t = LabelledTree(shape)
    eta = {v: float(dim) for v in t.interior}
    for i, j, alpha in kernels:
        eta[t.meet(i, j)] += alpha
    return eta


@dataclass(frozen=True)
class EtaExample:
    name: str
    n_points: int
    kernels: tuple  # (i, j, homogeneity)
    target: float  # expected sum of eta
    note: str = ""

    def pairs(self) -> list[tuple[Shape, dict]]:
        return [(s, power_count(s, list(self.kernels))) for s in all_shapes(self.n_points)]


# Second moments <Pi tau, phi^lambda>^2: points 1, 2 carry the test functions,
# further points are integrated noise locations.  The covariance of I'(Xi)
# behaves like |z|^-1, that of Xi like a delta (|z|^-3), and the Wick square of
# I'(Xi) like |z|^-2; the unrenormalised square keeps two tadpoles K'(z_i-w)^2.
ETA_LIBRARY: dict[str, EtaExample] = {
    ex.name: ex
    for ex in (
        EtaExample("Xi-second-moment", 2, ((1, 2, -3.0),), 3.0, "borderline: delta covariance"),
        EtaExample("IprimeXi-second-moment", 2, ((1, 2, -1.0),), 5.0),
        EtaExample("IprimeXi2-renormalised", 2, ((1, 2, -2.0),), 4.0),
        EtaExample("IprimeXi2-unrenormalised", 4, ((1, 3, -4.0), (2, 4, -4.0)), 4.0, "tadpoles"),
    )
}


def eta_library(name: str) -> list[tuple[Shape, dict]]:
    try:
        return ETA_LIBRARY[name].pairs()
    except KeyError:
        raise UnknownExample(name) from None


def seeded_violations(seed: int, count: int, n_points: int = 3) -> list[tuple[Shape, dict, str]]:
    """Random ``(shape, eta, which)`` violating condition 1, or only condition 2."""
    rng = np.random.default_rng(seed)
    shapes = all_shapes(n_points)
    out = []
    while len(out) < count:
        shape = shapes[int(rng.integers(len(shapes)))]
        eta = {v: round(float(rng.uniform(-2.0, 3.0)), 3) for v in interior_vertices(shape)}
        c1, c2 = check_sum_conditions(shape, eta)
        if not c1:
            out.append((shape, eta, "condition 1"))
        elif not c2:
            out.append((shape, eta, "condition 2"))
    return out


def eta_from_csv(shape: Shape, text: str) -> dict[frozenset, float]:
    """Values in post-order of the interior vertices, comma separated."""
    vals = [float(v) for v in text.split(",") if v.strip()]
    verts = interior_vertices(shape)
    if len(vals) != len(verts):
        raise ValueError(f"expected {len(verts)} eta values, got {len(vals)}")
    return dict(zip(verts, vals))
