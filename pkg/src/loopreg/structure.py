"""Generation of the tree sets ``W``, ``U``, ``U'`` up to a degree cutoff."""
from __future__ import annotations

import bisect
import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction

from .symbolic import (
    IPRIME,
    NOISE,
    ZERO,
    ZERO_MI,
    Degree,
    Tree,
    mi_of_size_below,
    mi_size,
    planted,
    poly,
    product,
    product_all,
    tree_from_json,
    tree_to_json,
    xi,
)

log = logging.getLogger(__name__)

DEFAULT_GAMMA_MAX = Degree(Fraction(3, 2))
DEFAULT_BUDGET = 200_000

CONVENTIONS = ("none", "b", "c", "d", "b+c", "b+d", "c+d", "b+c+d")


class StructureTooLarge(RuntimeError):
    """Raised when generation would exceed the element budget."""


class GenerationTimeout(RuntimeError):
    """Raised when generation passes its ``time.monotonic()`` deadline."""


@dataclass
class StructureIndex:
    m: int
    gamma_max: Degree
    closure: bool
    basis: list[Tree]
    in_u: set[Tree] = field(default_factory=set)
    in_uprime: set[Tree] = field(default_factory=set)

    def __post_init__(self) -> None:
        self._members = set(self.basis)

    def __contains__(self, tau: Tree) -> bool:
        return tau in self._members

    def __len__(self) -> int:
        return len(self.basis)

    @property
    def strata(self) -> dict[Degree, list[int]]:
        out: dict[Degree, list[int]] = {}
        for i, t in enumerate(self.basis):
            out.setdefault(t.degree, []).append(i)
        return out

    def negative(self) -> list[Tree]:
        return [t for t in self.basis if t.degree < ZERO]

    def upto(self, cutoff: Degree) -> list[Tree]:
        return [t for t in self.basis if t.degree <= cutoff]

    def flags(self, tau: Tree) -> list[str]:
        out = ["W"]
        if tau in self.in_u:
            out.append("U")
        if tau in self.in_uprime:
            out.append("U'")
        return out

    def to_json(self) -> dict:
        g = self.gamma_max
        return {
            "m": self.m,
            "gamma_max": str(g),
            "closure": self.closure,
            "basis": [
                {"tree": tree_to_json(t), "degree": str(t.degree), "flags": self.flags(t)}
                for t in self.basis
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> StructureIndex:
        basis, in_u, in_up = [], set(), set()
        for entry in data["basis"]:
            t = tree_from_json(entry["tree"])
            basis.append(t)
            if "U" in entry["flags"]:
                in_u.add(t)
            if "U'" in entry["flags"]:
                in_up.add(t)
        return cls(data["m"], Degree.parse(data["gamma_max"]), data["closure"], basis, in_u, in_up)


def _basis_order(t: Tree):
    return (t.degree, t.key)


def _multisets(items: list[Tree], budget: Degree, start: int = 0):
    """Multisets (as tuples) of ``items`` whose total degree is <= budget.

    Items must all have strictly positive degree.
    """
    yield ()
    for i in range(start, len(items)):
        d = items[i].degree
        if d > budget:
            break
        for rest in _multisets(items, budget - d, i):
            yield (items[i],) + rest


def generate(
    m: int,
    gamma_max: Degree = DEFAULT_GAMMA_MAX,
    closure: bool = True,
    budget: int = DEFAULT_BUDGET,
    deadline: float | None = None,
) -> StructureIndex:
    """Smallest ``W`` closed under the generating rules, truncated at ``gamma_max``.

    With ``closure`` the set is additionally closed under multiplication by
    ``X^k``, which the recentering coproduct requires.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    W: set[Tree] = {xi(j) for j in range(1, m + 1)}
    W |= {poly(k) for k in _polys_upto(gamma_max)}
    rounds = 0
    while True:
        rounds += 1
        U = sorted(
            (u for u in (planted(ZERO_MI, w) for w in W) if u is not None),
            key=_basis_order,
        )
        Up = sorted(
            (u for u in (planted(IPRIME, w) for w in W) if u is not None),
            key=_basis_order,
        )
        tails: list[Tree] = [Tree()] + [xi(j) for j in range(1, m + 1)]
        tails += [s for s in Up if s.degree <= gamma_max]
        for i, a in enumerate(Up):
            for b in Up[i:]:
                if a.degree + b.degree > gamma_max:
                    break
                tails.append(product(a, b))
        tails.sort(key=_basis_order)
        tail_degrees = [t.degree for t in tails]
        lo = tail_degrees[0] if tails else ZERO
        new: set[Tree] = set()
        for ms in _multisets(U, gamma_max - lo):
            base = product_all(ms)
            stop = bisect.bisect_right(tail_degrees, gamma_max - base.degree)
            for tail in tails[:stop]:
                tau = product(base, tail)
                new.add(tau)
                if closure:
                    for k in _polys_upto(gamma_max - tau.degree):
                        if k != ZERO_MI:
                            new.add(product(poly(k), tau))
            if len(new) > budget:
                raise StructureTooLarge(f"more than {budget} elements below {gamma_max}")
            if deadline is not None and time.monotonic() > deadline:
                raise GenerationTimeout(f"deadline passed with {len(W | new)} elements found")
        if new <= W:
            break
        W |= new
    log.debug("generated %d elements in %d rounds", len(W), rounds)
    basis = sorted(W, key=_basis_order)
    in_u = {t for t in basis if _is_planted(t, ZERO_MI)}
    in_up = {t for t in basis if _is_planted(t, IPRIME)}
    return StructureIndex(m, gamma_max, closure, basis, in_u, in_up)


def _is_planted(t: Tree, k) -> bool:
    return t.n == ZERO_MI and t.o.is_zero() and len(t.edges) == 1 and t.edges[0][1] == k and t.edges[0][0] != NOISE


def _polys_upto(budget: Degree):
    """Multi-indices ``k`` with ``|k| <= budget``."""
    if budget < ZERO:
        return []
    top = int(budget.q) + 1
    return [k for k in mi_of_size_below(top + 1) if Degree(Fraction(mi_size(k))) <= budget]


# ---------------------------------------------------------------------------
# counting


def erase_noise(t: Tree) -> Tree:
    edges = []
    for kind, label, child in t.edges:
        if kind == NOISE:
            edges.append((kind, 1, child))
        else:
            edges.append((kind, label, erase_noise(child)))
    return Tree(t.n, edges, t.o)


def count_with(trees, convention: str) -> int:
    flags = set() if convention == "none" else set(convention.split("+"))
    unknown = flags - {"b", "c", "d"}
    if unknown:
        raise ValueError(f"unknown reduction flags {sorted(unknown)}")
    kept = trees
    if "c" in flags:
        kept = [t for t in kept if t.noise_count() % 2 == 0]
    if "d" in flags:
        kept = [t for t in kept if t.spatial_order() % 2 == 0]
    if "b" in flags:
        return len({erase_noise(t) for t in kept})
    return len(kept)


def count_negative(index: StructureIndex, conventions=CONVENTIONS) -> dict[str, int]:
    """Number of negative-degree elements under each reduction convention.

    ``b`` erases noise indices, ``c`` drops trees with an odd number of
    noises, ``d`` drops trees of odd total spatial derivative order.
    """
    if index.gamma_max < ZERO:
        raise ValueError("index must be generated with gamma_max >= 0")
    neg = index.negative()
    return {c: count_with(neg, c) for c in conventions}


def dims_table(ms=(1, 2, 3), modes=(True, False)) -> list[tuple[str, int]]:
    """Rows ``(label, count)`` for every m, closure mode and convention."""
    rows = []
    for m in ms:
        for closure in modes:
            idx = generate(m, ZERO, closure=closure)
            tag = "closure" if closure else "strict"
            for conv, n in count_negative(idx).items():
                rows.append((f"m={m};{tag};{conv}", n))
    return rows


# ---------------------------------------------------------------------------
# sector closure


@dataclass
class ClosureReport:
    checked: int
    violations: list[tuple[Tree, Tree]]

    @property
    def ok(self) -> bool:
        return not self.violations


def sector_closure_check(index: StructureIndex, cutoff: Degree | None = None) -> ClosureReport:
    """Check that every left factor of the recentering coproduct stays in ``W``."""
    from .hopf import delta_plus

    cutoff = index.gamma_max if cutoff is None else cutoff
    violations = []
    checked = 0
    for tau in index.basis:
        if tau.degree > cutoff:
            continue
        checked += 1
        for (left, _right), _c in delta_plus(tau).items():
            if left not in index:
                violations.append((tau, left))
    return ClosureReport(checked, violations)
