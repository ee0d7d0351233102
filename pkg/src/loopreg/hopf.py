"""Recentering and renormalisation coproducts, antipodes, characters and actions.

Conventions
-----------
* Elements of ``T`` are :class:`Tree`; monomials ``X^l prod I_k(tau)`` of the
  positive algebra are also stored as trees (root decoration ``l``, one kernel
  edge per factor).  Quotient mode drops factors of extended degree ``<= 0``.
* Elements of the negative algebra are :class:`Forest`; quotient mode drops
  any forest containing a tree of degree ``>= 0``, and the bare root (with any
  ``o``) is identified with the empty forest.
* Tensors are tuples inside :class:`LinComb`.
* ``extended=True`` records, at each contracted vertex, the extended degree
  of the contracted component as its ``o`` decoration.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable

from .symbolic import (
    EMPTY_FOREST,
    KERNEL,
    NOISE,
    NOISE_DEGREE,
    UNIT,
    ZERO,
    ZERO_MI,
    Degree,
    Forest,
    LinComb,
    Tree,
    forget_o,
    kernel_degree,
    mi_add,
    mi_below,
    mi_binom,
    mi_factorial,
    mi_of_size_below,
    mi_size,
    mi_sub,
    planted,
    poly,
    product,
    to_text,
)

# ---------------------------------------------------------------------------
# helpers on the positive algebra


def tplus_factors(u: Tree) -> list[tuple]:
    """Kernel factors ``(k, tau)`` of a positive monomial."""
    return [(label, child) for kind, label, child in u.edges]


def is_tplus_monomial(u: Tree) -> bool:
    return u.o.is_zero() and all(kind == KERNEL for kind, _, _ in u.edges)


def tplus_generator(k, tau: Tree, hat: bool = False) -> Tree | None:
    """``I_k(tau)`` in the positive algebra, ``None`` if it vanishes."""
    t = planted(k, tau)
    if t is None:
        return None
    if not hat and t.ext_degree <= ZERO:
        return None
    return t


def tplus_reduce(u: Tree) -> Tree | None:
    for k, tau in tplus_factors(u):
        if tplus_generator(k, tau) is None:
            return None
    return u


def _shifts_below(bound: Degree):
    """Multi-indices ``l`` with ``|l| < bound``."""
    if bound <= ZERO:
        return []
    top = int(bound.q) + 2
    return [l for l in mi_of_size_below(top) if Degree(Fraction(mi_size(l))) < bound]


def _sign(l) -> int:
    return -1 if (l[0] + l[1]) % 2 else 1


def _mul_tensor2(a: LinComb, b: LinComb, mul_left, mul_right) -> LinComb:
    out = LinComb()
    for (x1, y1), c1 in a.terms.items():
        for (x2, y2), c2 in b.terms.items():
            x = mul_left(x1, x2)
            if x is None:
                continue
            y = mul_right(y1, y2)
            if y is None:
                continue
            out.add((x, y), c1 * c2)
    return out


def _tree_mul(a: Tree, b: Tree) -> Tree:
    return product(a, b)


def _forest_mul(a: Forest, b: Forest) -> Forest:
    return a * b


def lincomb_product(a: LinComb, b: LinComb, mul=_tree_mul) -> LinComb:
    out = LinComb()
    for x, cx in a.terms.items():
        for y, cy in b.terms.items():
            z = mul(x, y)
            if z is not None:
                out.add(z, cx * cy)
    return out


# ---------------------------------------------------------------------------
# recentering coproduct


def _poly_coproduct(n, o: Degree = ZERO) -> LinComb:
    out = LinComb()
    for l in mi_below(n):
        out.add((poly(mi_sub(n, l), o), poly(l)), mi_binom(n, l))
    return out


def _planted_coproduct(k, sigma: Tree, left_plus: bool) -> LinComb:
    out = LinComb()
    for (a, b), c in delta_plus(sigma).terms.items():
        left = tplus_generator(k, a) if left_plus else planted(k, a)
        if left is not None:
            out.add((left, b), c)
    top = planted(k, sigma)
    if top is not None:
        for l in _shifts_below(top.ext_degree):
            right = tplus_generator(mi_add(k, l), sigma)
            if right is not None:
                out.add((poly(l), right), Fraction(1, mi_factorial(l)))
    return out


@lru_cache(maxsize=None)
def delta_plus(tau: Tree) -> LinComb:
    """Recentering coproduct ``T -> T ⊗ T+`` (right factors in the quotient)."""
    acc = _poly_coproduct(tau.n, tau.o)
    for kind, label, child in tau.edges:
        if kind == NOISE:
            factor = LinComb.basis((Tree(ZERO_MI, [(kind, label, child)]), UNIT))
        else:
            factor = _planted_coproduct(label, child, left_plus=False)
        acc = _mul_tensor2(acc, factor, _tree_mul, _tree_mul)
    return acc


@lru_cache(maxsize=None)
def delta_plus_tplus(u: Tree) -> LinComb:
    """Recentering coproduct on the positive algebra ``T+ -> T+ ⊗ T+``."""
    if tplus_reduce(u) is None:
        return LinComb()
    acc = _poly_coproduct(u.n)
    for k, sigma in tplus_factors(u):
        acc = _mul_tensor2(acc, _planted_coproduct(k, sigma, left_plus=True), _tree_mul, _tree_mul)
    return acc


def coproduct_plus(x: Tree, mode: str = "T") -> LinComb:
    """``mode='T'`` for ``T -> T ⊗ T+``, ``mode='T+'`` for ``T+ -> T+ ⊗ T+``."""
    if mode == "T":
        return delta_plus(x)
    if mode == "T+":
        return delta_plus_tplus(x)
    raise ValueError(f"unknown mode {mode!r}")


def counit_plus(u: Tree) -> int:
    return 1 if u.is_unit() else 0


# ---------------------------------------------------------------------------
# antipodes of the positive algebra


def _poly_antipode(n) -> LinComb:
    return LinComb.basis(poly(n), _sign(n))


@lru_cache(maxsize=None)
def _antipode_plus_generator(k, sigma: Tree, twisted: bool) -> LinComb:
    out = LinComb()
    top = planted(k, sigma)
    if top is None:
        return out
    for l in _shifts_below(top.ext_degree):
        inner = LinComb()
        kl = mi_add(k, l)
        for (a, b), c in delta_plus(sigma).terms.items():
            g = tplus_generator(kl, a, hat=twisted)
            if g is None:
                continue
            for v, cv in _antipode_plus(b, twisted).terms.items():
                w = product(g, v)
                if twisted and w.ext_degree <= ZERO:
                    continue
                inner.add(w, c * cv)
        scale = Fraction(-_sign(l), mi_factorial(l))
        xl = poly(l)
        for w, cw in inner.terms.items():
            out.add(product(xl, w), cw * scale)
    return out


@lru_cache(maxsize=None)
def _antipode_plus(u: Tree, twisted: bool) -> LinComb:
    if not twisted and tplus_reduce(u) is None:
        return LinComb()
    acc = _poly_antipode(u.n)
    for k, sigma in tplus_factors(u):
        acc = lincomb_product(acc, _antipode_plus_generator(k, sigma, twisted))
    return acc


def antipode_plus(u: Tree) -> LinComb:
    """Antipode of the positive Hopf algebra (quotient mode)."""
    return _antipode_plus(u, False)


def twisted_antipode_plus(u: Tree) -> LinComb:
    """Twisted antipode ``T+ -> hat T+`` with projection onto positive degree."""
    if tplus_reduce(u) is None:
        return LinComb()
    return _antipode_plus(u, True)


# ---------------------------------------------------------------------------
# renormalisation coproduct


class _Flat:
    """Vertex/edge arrays for a tree, root is vertex 0."""

    __slots__ = ("n", "o", "edges", "children", "parent_edge")

    def __init__(self, tau: Tree):
        self.n: list = []
        self.o: list = []
        self.edges: list = []  # (parent, child, kind, label)
        self.children: list = []  # per vertex: list of edge ids
        self.parent_edge: list = []
        self._add(tau, -1)

    def _add(self, t: Tree, pe: int) -> int:
        v = len(self.n)
        self.n.append(t.n)
        self.o.append(t.o)
        self.children.append([])
        self.parent_edge.append(pe)
        for kind, label, child in t.edges:
            e = len(self.edges)
            self.edges.append(None)
            self.children[v].append(e)
            c = self._add(child, e)
            self.edges[e] = (v, c, kind, label)
        return v


def _edge_degree(kind, label) -> Degree:
    return NOISE_DEGREE if kind == NOISE else kernel_degree(label)


def _decorations(slots_n, slots_e, base: Degree):
    """Yield ``(n_A values, e_A values, coefficient)`` with ``base + size < 0``.

    ``slots_n`` are upper bounds ``n(v)`` (one per vertex), ``slots_e`` count
    the kernel boundary edges.
    """
    if base >= ZERO:
        return
    nn = len(slots_n)
    total = nn + slots_e

    def rec(i, used, acc, coef):
        if i == total:
            yield acc, coef
            return
        if i < nn:
            for k in mi_below(slots_n[i]):
                s = used + mi_size(k)
                if base + s < ZERO:
                    yield from rec(i + 1, s, acc + (k,), coef * mi_binom(slots_n[i], k))
        else:
            room = base + used
            for k in _shifts_below(-room):
                yield from rec(i + 1, used + mi_size(k), acc + (k,), coef / mi_factorial(k))

    for acc, coef in rec(0, 0, (), Fraction(1)):
        yield acc[:nn], acc[nn:], coef


def _rooted_subtrees(flat: _Flat, v: int) -> list[tuple[int, int]]:
    """Connected edge sets hanging from ``v`` as ``(edge mask, vertex mask)``.

    The empty set is included; kernel edges never end on a vertex that has
    no chosen child edge and a zero ``o``.
    """
    acc = [(0, 1 << v)]
    for e in flat.children[v]:
        _, c, kind, _ = flat.edges[e]
        if kind == NOISE:
            opts = [(1 << e, 1 << c)]
        else:
            opts = [
                (em | (1 << e), vm)
                for em, vm in _rooted_subtrees(flat, c)
                if em or not flat.o[c].is_zero()
            ]
        acc = acc + [(em | oe, vm | ov) for em, vm in acc for oe, ov in opts]
    return acc


def _candidates(flat: _Flat) -> list[tuple]:
    """Connected subtrees with at least one edge and negative degree."""
    out = []
    for v in range(len(flat.n)):
        for em, vm in _rooted_subtrees(flat, v):
            if not em:
                continue
            edges = [e for e in range(len(flat.edges)) if (em >> e) & 1]
            base = sum((_edge_degree(flat.edges[e][2], flat.edges[e][3]) for e in edges), ZERO)
            if base < ZERO:
                verts = [u for u in range(len(flat.n)) if (vm >> u) & 1]
                out.append((v, verts, edges, vm, base))
    return out


def _families(cands, start=0, used=0):
    """Nonempty vertex-disjoint families of candidates (index tuples)."""
    for i in range(start, len(cands)):
        vm = cands[i][3]
        if vm & used:
            continue
        yield (i,)
        for rest in _families(cands, i + 1, used | vm):
            yield (i,) + rest


@dataclass
class _CompChoice:
    left: Tree
    coef: Fraction
    n_a: dict
    e_a: dict


def _component_choices(flat: _Flat, root, verts, edges, base):
    eset = set(edges)
    boundary = [
        e
        for v in verts
        for e in flat.children[v]
        if e not in eset and flat.edges[e][2] == KERNEL
    ]
    out = []
    for n_vals, e_vals, coef in _decorations([flat.n[v] for v in verts], len(boundary), base):
        n_a = dict(zip(verts, n_vals))
        e_a = dict(zip(boundary, e_vals))
        pie = {v: ZERO_MI for v in verts}
        for e, k in e_a.items():
            p = flat.edges[e][0]
            pie[p] = mi_add(pie[p], k)

        def build(v):
            kids = []
            for ce in flat.children[v]:
                if ce in eset:
                    _, c, kind, label = flat.edges[ce]
                    kids.append((kind, label, build(c)))
            return Tree(mi_add(n_a[v], pie[v]), kids, flat.o[v])

        out.append(_CompChoice(build(root), coef, n_a, e_a))
    return out


def _right_tree(flat: _Flat, in_a, comp_of, choices, extended: bool) -> Tree | None:
    def node(v):
        ci = comp_of.get(v)
        if ci is None:
            verts = [v]
            n = flat.n[v]
            o = flat.o[v]
            e_a = {}
        else:
            ch = choices[ci]
            verts = list(ch.n_a)
            n = ZERO_MI
            o = ZERO
            for u in verts:
                n = mi_add(n, mi_sub(flat.n[u], ch.n_a[u]))
                o = o + flat.o[u]
            if extended:
                o = ch.left.ext_degree
            e_a = ch.e_a
        kids = []
        for u in verts:
            for ce in flat.children[u]:
                if in_a[ce]:
                    continue
                _, c, kind, label = flat.edges[ce]
                if kind == NOISE:
                    kids.append((kind, label, Tree()))
                    continue
                sub = node(c)
                if sub is None or (sub.is_bare() and sub.o.is_zero()):
                    return None
                kids.append((kind, mi_add(label, e_a.get(ce, ZERO_MI)), sub))
        return Tree(n, kids, o)

    return node(0)


@lru_cache(maxsize=None)
def _delta_minus_tree(tau: Tree, extended: bool) -> LinComb:
    """``T -> T- ⊗ T`` on a single tree; right factors as trees."""
    flat = _Flat(tau)
    out = LinComb.basis((EMPTY_FOREST, tau))
    cands = _candidates(flat)
    choices = [_component_choices(flat, r, vs, es, b) for r, vs, es, _, b in cands]
    live = [i for i, ch in enumerate(choices) if ch]
    cands = [cands[i] for i in live]
    choices = [choices[i] for i in live]
    ne = len(flat.edges)
    for fam in _families(cands):
        in_a = [False] * ne
        comp_of = {}
        for j, ci in enumerate(fam):
            for e in cands[ci][2]:
                in_a[e] = True
            for v in cands[ci][1]:
                comp_of[v] = j
        for combo in _combos([choices[ci] for ci in fam]):
            right = _right_tree(flat, in_a, comp_of, combo, extended)
            if right is None:
                continue
            coef = Fraction(1)
            for ch in combo:
                coef *= ch.coef
            out.add((Forest(ch.left for ch in combo), right), coef)
    return out


def _combos(lists):
    if not lists:
        yield ()
        return
    head, rest = lists[0], lists[1:]
    for x in head:
        for tail in _combos(rest):
            yield (x,) + tail


def tminus_reduce_tree(t: Tree) -> Forest | None:
    """Image of a tree in the negative quotient algebra, ``None`` if zero."""
    if t.is_bare() and t.n == ZERO_MI:
        return EMPTY_FOREST
    if t.degree >= ZERO:
        return None
    return Forest([t])


def _map_right(lc: LinComb, f) -> LinComb:
    out = LinComb()
    for (left, right), c in lc.terms.items():
        r = f(right)
        if r is not None:
            out.add((left, r), c)
    return out


def delta_minus(tau: Tree, extended: bool = False) -> LinComb:
    """Renormalisation coproduct ``T -> T- ⊗ T``."""
    return _delta_minus_tree(tau, extended)


@lru_cache(maxsize=None)
def _delta_minus_tminus_tree(tau: Tree, extended: bool) -> LinComb:
    return _map_right(_delta_minus_tree(tau, extended), tminus_reduce_tree)


def delta_minus_tminus(phi: Forest, extended: bool = False) -> LinComb:
    """``T- -> T- ⊗ T-``, multiplicative on forests."""
    acc = LinComb.basis((EMPTY_FOREST, EMPTY_FOREST))
    for t in phi.trees:
        if tminus_reduce_tree(t) is None:
            return LinComb()
        acc = _mul_tensor2(acc, _delta_minus_tminus_tree(t, extended), _forest_mul, _forest_mul)
    return acc


@lru_cache(maxsize=None)
def _delta_minus_tplus_gen(k, sigma: Tree, extended: bool, hat: bool) -> LinComb:
    return _map_right(_delta_minus_tree(sigma, extended), lambda r: tplus_generator(k, r, hat=hat))


def delta_minus_tplus(u: Tree, extended: bool = False, hat: bool = False) -> LinComb:
    """``T+ -> T- ⊗ T+`` (or into ``hat T+``): subforests never touch the planted root."""
    if not hat and tplus_reduce(u) is None:
        return LinComb()
    acc = LinComb.basis((EMPTY_FOREST, poly(u.n)))
    for k, sigma in tplus_factors(u):
        acc = _mul_tensor2(
            acc, _delta_minus_tplus_gen(k, sigma, extended, hat), _forest_mul, _tree_mul
        )
    return acc


def coproduct_minus(x, mode: str = "T", extended: bool = False) -> LinComb:
    """Dispatch: ``mode`` in ``{"T", "T-", "T+", "hatT+"}``."""
    if mode == "T":
        return delta_minus(x, extended)
    if mode == "T-":
        phi = x if isinstance(x, Forest) else Forest([x])
        return delta_minus_tminus(phi, extended)
    if mode == "T+":
        return delta_minus_tplus(x, extended)
    if mode == "hatT+":
        return delta_minus_tplus(x, extended, hat=True)
    raise ValueError(f"unknown mode {mode!r}")


def counit_minus(phi: Forest) -> int:
    return 1 if not phi.trees else 0


# ---------------------------------------------------------------------------
# antipodes of the negative algebra


@lru_cache(maxsize=None)
def _antipode_minus_tree(tau: Tree, twisted: bool) -> LinComb:
    out = LinComb()
    if tminus_reduce_tree(tau) is None:
        return out
    if tminus_reduce_tree(tau) == EMPTY_FOREST:
        return LinComb.basis(EMPTY_FOREST)
    for (left, right), c in _delta_minus_tminus_tree(tau, False).terms.items():
        if not left.trees:
            continue
        for v, cv in _antipode_minus_forest(right, twisted).terms.items():
            w = left * v
            if twisted and w.degree >= ZERO:
                continue
            out.add(w, -c * cv)
    return out


def _antipode_minus_forest(phi: Forest, twisted: bool) -> LinComb:
    acc = LinComb.basis(EMPTY_FOREST)
    for t in phi.trees:
        acc = lincomb_product(acc, _antipode_minus_tree(t, twisted), _forest_mul)
    return acc


def antipode_minus(phi: Forest) -> LinComb:
    """Antipode of the negative Hopf algebra."""
    return _antipode_minus_forest(phi, False)


def twisted_antipode_minus(phi: Forest) -> LinComb:
    """Twisted antipode into ``hat T-`` with projection onto negative degree."""
    return _antipode_minus_forest(phi, True)


# ---------------------------------------------------------------------------
# characters

PLUS = "plus"
PLUS_HAT = "plus_hat"
MINUS = "minus"
MINUS_HAT = "minus_hat"


class CharacterMismatch(ValueError):
    pass


@dataclass
class Character:
    """Multiplicative functional stored by its values on generators.

    Generators of the positive algebras are ``X_0 = poly((1,0))``,
    ``X_1 = poly((0,1))`` and planted trees ``I_k(tau)``; generators of the
    negative algebras are trees.
    """

    algebra: str
    values: dict = field(default_factory=dict)

    def gen(self, t: Tree):
        return self.values.get(t, 0)

    def on_basis(self, b):
        if self.algebra in (PLUS, PLUS_HAT):
            u: Tree = b
            val = 1
            if u.n[0]:
                val = val * self.gen(poly((1, 0))) ** u.n[0]
            if u.n[1]:
                val = val * self.gen(poly((0, 1))) ** u.n[1]
            for e in u.edges:
                if val == 0:
                    return 0
                val = val * self.gen(Tree(ZERO_MI, [e]))
            return val
        phi = b if isinstance(b, Forest) else Forest([b])
        val = 1
        for t in phi.trees:
            if t.is_bare() and t.n == ZERO_MI:
                continue
            val = val * self.gen(t)
            if val == 0:
                return 0
        return val

    def __call__(self, x):
        if isinstance(x, LinComb):
            return sum((c * self.on_basis(b) for b, c in x.terms.items()), 0)
        return self.on_basis(x)


def identity_character(algebra: str) -> Character:
    return Character(algebra, {})


def _check_same(f: Character, g: Character) -> None:
    if f.algebra != g.algebra:
        raise CharacterMismatch(f"cannot combine {f.algebra} with {g.algebra}")


def char_convolve(f: Character, g: Character, generators: Iterable[Tree]) -> Character:
    """``(f∘g)(u) = (f⊗g)Δu`` on the listed generators."""
    _check_same(f, g)
    vals = {}
    for u in generators:
        if f.algebra in (PLUS, PLUS_HAT):
            cop = delta_plus_tplus(u)
        else:
            cop = delta_minus_tminus(Forest([u]))
        v = sum((c * f.on_basis(a) * g.on_basis(b) for (a, b), c in cop.terms.items()), 0)
        if v != 0:
            vals[u] = v
    return Character(f.algebra, vals)


def char_inverse(f: Character, generators: Iterable[Tree]) -> Character:
    """``f^{-1} = f ∘ A`` with the matching antipode."""
    vals = {}
    for u in generators:
        if f.algebra in (PLUS, PLUS_HAT):
            img = antipode_plus(u)
        else:
            img = antipode_minus(Forest([u]))
        v = f(img)
        if v != 0:
            vals[u] = v
    return Character(f.algebra, vals)


def action_gamma(g: Character, tau: Tree) -> LinComb:
    """``Γ_g τ = (id ⊗ g) Δ+ τ``."""
    out = LinComb()
    for (a, b), c in delta_plus(tau).terms.items():
        out.add(a, c * g.on_basis(b))
    return out


def action_Mg(g: Character, tau: Tree, extended: bool = False) -> LinComb:
    """``M_g τ = (g ⊗ id) Δ- τ``."""
    out = LinComb()
    for (phi, r), c in delta_minus(tau, extended).terms.items():
        out.add(r, c * g.on_basis(phi))
    return out


def action_Mg_tplus(g: Character, u: Tree, extended: bool = False) -> LinComb:
    out = LinComb()
    for (phi, r), c in delta_minus_tplus(u, extended).terms.items():
        out.add(r, c * g.on_basis(phi))
    return out


# ---------------------------------------------------------------------------
# extended-space projections


def project_ex(tau: Tree) -> Tree | None:
    """Forget ``o`` decorations; ``None`` when the plain tree vanishes."""
    return forget_o(tau)


def project_ex_minus(phi: Forest) -> Forest | None:
    trees = []
    for t in phi.trees:
        p = forget_o(t)
        if p is None:
            return None
        r = tminus_reduce_tree(p)
        if r is None:
            return None
        trees.extend(r.trees)
    return Forest(trees)


def pullback_minus(g: Character) -> Character:
    """``g ∘ π^ex_-`` as a character on extended forests (evaluated lazily)."""
    return _PulledBack(g.algebra, g)


class _PulledBack(Character):
    def __init__(self, algebra, base: Character):
        super().__init__(algebra, {})
        self.base = base

    def on_basis(self, b):
        phi = b if isinstance(b, Forest) else Forest([b])
        p = project_ex_minus(phi)
        return 0 if p is None else self.base.on_basis(p)


def project_lincomb(lc: LinComb) -> LinComb:
    out = LinComb()
    for t, c in lc.terms.items():
        p = forget_o(t)
        if p is not None:
            out.add(p, c)
    return out


# ---------------------------------------------------------------------------
# identity checks (each returns None on success or a witness LinComb)


def _diff(lhs: LinComb, rhs: LinComb) -> LinComb | None:
    d = lhs - rhs
    return None if d.is_zero() else d


def cointeraction_lhs(tau: Tree, extended: bool, on_tplus: bool = False) -> LinComb:
    """``M_-(Δ- ⊗ Δ-)Δ+ τ`` in ``T- ⊗ T ⊗ T+``."""
    out = LinComb()
    dplus = delta_plus_tplus(tau) if on_tplus else delta_plus(tau)
    for (a, b), c in dplus.terms.items():
        left = delta_minus_tplus(a, extended) if on_tplus else delta_minus(a, extended)
        right = delta_minus_tplus(b, extended)
        for (p1, a1), c1 in left.terms.items():
            for (p2, b1), c2 in right.terms.items():
                out.add((p1 * p2, a1, b1), c * c1 * c2)
    return out


def cointeraction_rhs(tau: Tree, extended: bool, on_tplus: bool = False) -> LinComb:
    """``(id ⊗ Δ+)Δ- τ``."""
    out = LinComb()
    dminus = delta_minus_tplus(tau, extended) if on_tplus else delta_minus(tau, extended)
    for (phi, r), c in dminus.terms.items():
        dp = delta_plus_tplus(r) if on_tplus else delta_plus(r)
        for (a, b), c2 in dp.terms.items():
            out.add((phi, a, b), c * c2)
    return out


@dataclass
class CheckResult:
    ok: bool
    witness: object = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _first_term(d: LinComb):
    b, c = d.sorted_items()[0]
    return b, c


def cointeraction_check(tau: Tree, extended: bool = True, on_tplus: bool = False) -> CheckResult:
    """``M_-(Δ-⊗Δ-)Δ+ = (id⊗Δ+)Δ-`` at ``tau``."""
    d = _diff(cointeraction_lhs(tau, extended, on_tplus), cointeraction_rhs(tau, extended, on_tplus))
    if d is None:
        return CheckResult(True)
    b, c = _first_term(d)
    return CheckResult(False, (tau, b, c), "cointeraction")


def twisted_antipode_cointeraction_check(u: Tree, extended: bool = True) -> CheckResult:
    """``Δ- Â+ u = (id ⊗ Â+) Δ- u`` in ``T- ⊗ hat T+``."""
    lhs = LinComb()
    for v, c in twisted_antipode_plus(u).terms.items():
        for (phi, r), c2 in delta_minus_tplus(v, extended, hat=True).terms.items():
            lhs.add((phi, r), c * c2)
    rhs = LinComb()
    for (phi, r), c in delta_minus_tplus(u, extended).terms.items():
        for w, c2 in twisted_antipode_plus(r).terms.items():
            rhs.add((phi, w), c * c2)
    d = _diff(lhs, rhs)
    if d is None:
        return CheckResult(True)
    b, c = _first_term(d)
    return CheckResult(False, (u, b, c), "twisted antipode cointeraction")


def triangularity_check(g: Character, tau: Tree, extended: bool = True) -> CheckResult:
    """``M_g τ - τ`` has strictly larger plain degree and unchanged extended degree."""
    d = action_Mg(g, tau, extended) - LinComb.basis(tau)
    for r, c in d.terms.items():
        if not (r.degree > tau.degree and r.ext_degree == tau.ext_degree):
            return CheckResult(False, (tau, r, c), "triangularity")
    return CheckResult(True)


def proppi_check(g: Character, tau: Tree) -> CheckResult:
    """``π^ex M^ex_{g π^ex_-} τ = M_g π^ex τ``."""
    lhs = project_lincomb(action_Mg(pullback_minus(g), tau, extended=True))
    p = project_ex(tau)
    rhs = LinComb() if p is None else action_Mg(g, p, extended=False)
    d = _diff(lhs, rhs)
    if d is None:
        return CheckResult(True)
    b, c = _first_term(d)
    return CheckResult(False, (tau, b, c), "projection compatibility")


# -- Hopf-algebra laws


def _compose_left(cop: LinComb, f: Callable) -> LinComb:
    out = LinComb()
    for key, c in cop.terms.items():
        for (x, y), c2 in f(key[0]).terms.items():
            out.add((x, y) + key[1:], c * c2)
    return out


def _compose_right(cop: LinComb, f: Callable) -> LinComb:
    out = LinComb()
    for key, c in cop.terms.items():
        for (x, y), c2 in f(key[-1]).terms.items():
            out.add(key[:-1] + (x, y), c * c2)
    return out


def check_coassociative_plus(u: Tree, comodule: bool = False) -> CheckResult:
    """Coassociativity on ``T+`` (or the comodule law on ``T`` if ``comodule``)."""
    cop = delta_plus(u) if comodule else delta_plus_tplus(u)
    first = delta_plus if comodule else delta_plus_tplus
    d = _diff(_compose_left(cop, first), _compose_right(cop, delta_plus_tplus))
    if d is None:
        return CheckResult(True)
    b, c = _first_term(d)
    return CheckResult(False, (u, b, c), "Δ+ coassociativity" + (" (comodule)" if comodule else ""))


def check_coassociative_minus(x, comodule: bool = False, extended: bool = False) -> CheckResult:
    """Coassociativity on ``T-`` (or the left comodule law on ``T``)."""
    if comodule:
        cop = delta_minus(x, extended)
        rhs = _compose_right(cop, lambda t: delta_minus(t, extended))
    else:
        phi = x if isinstance(x, Forest) else Forest([x])
        cop = delta_minus_tminus(phi, extended)
        rhs = _compose_right(cop, lambda f: delta_minus_tminus(f, extended))
    lhs = _compose_left(cop, lambda f: delta_minus_tminus(f, extended))
    d = _diff(lhs, rhs)
    if d is None:
        return CheckResult(True)
    b, c = _first_term(d)
    return CheckResult(False, (x, b, c), "Δ- coassociativity" + (" (comodule)" if comodule else ""))


def check_counit_plus(u: Tree, comodule: bool = False) -> CheckResult:
    cop = delta_plus(u) if comodule else delta_plus_tplus(u)
    right = LinComb()
    left = LinComb()
    for (a, b), c in cop.terms.items():
        if b.is_unit():
            right.add(a, c)
        if not comodule and a.is_unit():
            left.add(b, c)
    target = LinComb.basis(u)
    if right != target or (not comodule and left != target):
        return CheckResult(False, u, "Δ+ counit")
    return CheckResult(True)


def check_counit_minus(x, comodule: bool = False) -> CheckResult:
    if comodule:
        cop = delta_minus(x)
        target = LinComb.basis(x)
    else:
        phi = x if isinstance(x, Forest) else Forest([x])
        cop = delta_minus_tminus(phi)
        target = LinComb.basis(phi)
    left = LinComb()
    right = LinComb()
    for (a, b), c in cop.terms.items():
        if not a.trees:
            left.add(b, c)
        if not comodule and isinstance(b, Forest) and not b.trees:
            right.add(a, c)
    if left != target or (not comodule and right != target):
        return CheckResult(False, x, "Δ- counit")
    return CheckResult(True)


def check_antipode_plus(u: Tree) -> CheckResult:
    """``M(A⊗id)Δ+u = M(id⊗A)Δ+u = ε(u)1``."""
    target = LinComb.basis(UNIT, counit_plus(u)) if counit_plus(u) else LinComb()
    cop = delta_plus_tplus(u)
    for side in (0, 1):
        acc = LinComb()
        for (a, b), c in cop.terms.items():
            if side == 0:
                acc.iadd(lincomb_product(antipode_plus(a), LinComb.basis(b)), c)
            else:
                acc.iadd(lincomb_product(LinComb.basis(a), antipode_plus(b)), c)
        if acc != target:
            return CheckResult(False, (u, side, acc), "A+ antipode law")
    return CheckResult(True)


def check_antipode_minus(x) -> CheckResult:
    phi = x if isinstance(x, Forest) else Forest([x])
    eps = counit_minus(phi)
    target = LinComb.basis(EMPTY_FOREST) if eps else LinComb()
    cop = delta_minus_tminus(phi)
    for side in (0, 1):
        acc = LinComb()
        for (a, b), c in cop.terms.items():
            if side == 0:
                acc.iadd(lincomb_product(antipode_minus(a), LinComb.basis(b), _forest_mul), c)
            else:
                acc.iadd(lincomb_product(LinComb.basis(a), antipode_minus(b), _forest_mul), c)
        if acc != target:
            return CheckResult(False, (phi, side, acc), "A- antipode law")
    return CheckResult(True)


def tplus_generators(trees: Iterable[Tree], cutoff: Degree) -> list[Tree]:
    """Generators ``X_i`` and ``I_k(tau)`` of ``T+`` with degree ``<= cutoff``."""
    gens = {poly((1, 0)), poly((0, 1))}
    for tau in trees:
        if tau.is_bare():
            continue
        top = planted(ZERO_MI, tau)
        if top is None:
            continue
        for k in _shifts_below(top.ext_degree):
            g = tplus_generator(k, tau)
            if g is not None and g.ext_degree <= cutoff:
                gens.add(g)
    return sorted((g for g in gens if g.ext_degree <= cutoff), key=lambda t: (t.ext_degree, t.key))


def clear_caches() -> None:
    for f in (
        delta_plus,
        delta_plus_tplus,
        _antipode_plus_generator,
        _antipode_plus,
        _delta_minus_tree,
        _delta_minus_tminus_tree,
        _delta_minus_tplus_gen,
        _antipode_minus_tree,
    ):
        f.cache_clear()


# ---------------------------------------------------------------------------
# law suites


class GenericCharacter(Character):
    """Character with deterministic nonzero rational values on every tree.

    Values come from a hash of the tree's text form, so the same generator
    always gets the same value across runs and processes.
    """

    def __init__(self, algebra: str = MINUS, salt: int = 0):
        super().__init__(algebra, {})
        self.salt = salt

    def gen(self, t: Tree):
        h = zlib.crc32(f"{self.salt}:{to_text(t)}".encode())
        return Fraction(h % 89 + 1, h % 7 + 2)


@dataclass
class LawReport:
    name: str
    total: int
    checked: int = 0
    failure: CheckResult | None = None
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.failure is None and self.checked == self.total


def hopf_laws(basis: list[Tree], cutoff: Degree, extended: bool = False, g: Character | None = None):
    """``(name, check, items)`` triples of the law suite on ``basis`` up to ``cutoff``."""
    trees = [t for t in basis if t.degree <= cutoff]
    gens = tplus_generators(trees, cutoff)
    neg = [t for t in trees if t.degree < ZERO]
    laws = [
        ("delta+ comodule coassociativity on T", lambda t: check_coassociative_plus(t, True), trees),
        ("delta+ comodule counit on T", lambda t: check_counit_plus(t, True), trees),
        ("delta+ coassociativity on T+", check_coassociative_plus, gens),
        ("delta+ counit on T+", check_counit_plus, gens),
        ("antipode on T+", check_antipode_plus, gens),
        ("delta- comodule coassociativity on T", lambda t: check_coassociative_minus(t, True), trees),
        ("delta- comodule counit on T", lambda t: check_counit_minus(t, True), trees),
        ("delta- coassociativity on T-", check_coassociative_minus, neg),
        ("delta- counit on T-", check_counit_minus, neg),
        ("antipode on T-", check_antipode_minus, neg),
    ]
    if extended:
        g = GenericCharacter() if g is None else g
        laws += [
            ("cointeraction on T", lambda t: cointeraction_check(t, True), trees),
            ("cointeraction on T+", lambda t: cointeraction_check(t, True, True), gens),
            ("twisted antipode cointeraction", twisted_antipode_cointeraction_check, gens),
            ("triangularity", lambda t: triangularity_check(g, t), trees),
            ("projection compatibility", lambda t: proppi_check(g, t), trees),
        ]
    return laws


def run_laws(laws, progress: Callable | None = None, deadline: float | None = None, stop_on_failure: bool = True):
    """Run law triples; stops at the first failure or when ``deadline`` passes.

    ``deadline`` is a ``time.monotonic()`` value; unchecked elements leave a
    report with ``checked < total``.
    """
    reports = []
    for name, check, items in laws:
        rep = LawReport(name, len(items))
        start = time.monotonic()
        for x in items:
            if deadline is not None and time.monotonic() > deadline:
                break
            res = check(x)
            rep.checked += 1
            if not res:
                rep.failure = res
                break
        rep.elapsed = time.monotonic() - start
        reports.append(rep)
        if progress is not None:
            progress(rep)
        if stop_on_failure and rep.failure is not None:
            break
        if deadline is not None and time.monotonic() > deadline:
            break
    return reports


def plain_cointeraction_witness(basis: list[Tree], cutoff: Degree) -> CheckResult | None:
    """First basis element where the cointeraction identity fails without extended decorations."""
    for t in basis:
        if t.degree <= cutoff:
            res = cointeraction_check(t, extended=False)
            if not res:
                return res
    return None
