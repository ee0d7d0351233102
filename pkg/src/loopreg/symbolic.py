"""Decorated rooted trees, forests, degrees and exact linear combinations.

A tree is stored in canonical form: every node carries a polynomial
decoration ``n`` (a multi-index ``(k0, k1)``) and an auxiliary degree ``o``
(zero unless produced by an extended contraction); every edge is either a
noise edge ``(NOISE, i, leaf)`` or a kernel edge ``(KERNEL, k, child)``.
Children are sorted, so structural equality is equality of canonical keys.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Iterator, Union

MultiIndex = tuple[int, int]

NOISE = 0
KERNEL = 1

ZERO_MI: MultiIndex = (0, 0)
IPRIME: MultiIndex = (0, 1)


# ---------------------------------------------------------------------------
# multi-indices


def mi_add(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return (a[0] + b[0], a[1] + b[1])


def mi_sub(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return (a[0] - b[0], a[1] - b[1])


def mi_size(k: MultiIndex) -> int:
    """Parabolic size ``2 k0 + k1``."""
    return 2 * k[0] + k[1]


def mi_le(a: MultiIndex, b: MultiIndex) -> bool:
    return a[0] <= b[0] and a[1] <= b[1]


def mi_factorial(k: MultiIndex) -> int:
    return math.factorial(k[0]) * math.factorial(k[1])


def mi_binom(n: MultiIndex, k: MultiIndex) -> int:
    if not (mi_le(k, n) and k[0] >= 0 and k[1] >= 0):
        return 0
    return math.comb(n[0], k[0]) * math.comb(n[1], k[1])


def mi_below(n: MultiIndex) -> Iterator[MultiIndex]:
    """All ``k`` with ``0 <= k <= n`` componentwise."""
    for a in range(n[0] + 1):
        for b in range(n[1] + 1):
            yield (a, b)


def mi_of_size_below(bound: int) -> Iterator[MultiIndex]:
    """All ``k`` with ``|k| < bound`` (parabolic size)."""
    for a in range(max(bound, 0) // 2 + 1):
        for b in range(bound - 2 * a):
            yield (a, b)


# ---------------------------------------------------------------------------
# degrees


class Degree:
    """The number ``q + m*kappa`` for an infinitesimal ``kappa > 0``.

    ``q`` is a half-integer, stored as ``h = 2q``.  Ordering is
    lexicographic on ``(q, m)``, which agrees with the numeric order for
    every sufficiently small ``kappa``.
    """

    __slots__ = ("h", "m")

    def __init__(self, q: Fraction | int = 0, m: int = 0):
        twice = Fraction(q) * 2
        if twice.denominator != 1:
            raise ValueError(f"degree {q} is not a half-integer")
        self.h = int(twice)
        self.m = int(m)

    @classmethod
    def _raw(cls, h: int, m: int) -> Degree:
        d = object.__new__(cls)
        d.h = h
        d.m = m
        return d

    @property
    def q(self) -> Fraction:
        return Fraction(self.h, 2)

    def _key(self):
        return (self.h, self.m)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Degree) and self.h == other.h and self.m == other.m

    def __hash__(self) -> int:
        return hash((self.h, self.m))

    def __lt__(self, other: Degree) -> bool:
        return (self.h, self.m) < (other.h, other.m)

    def __le__(self, other: Degree) -> bool:
        return (self.h, self.m) <= (other.h, other.m)

    def __gt__(self, other: Degree) -> bool:
        return (self.h, self.m) > (other.h, other.m)

    def __ge__(self, other: Degree) -> bool:
        return (self.h, self.m) >= (other.h, other.m)

    def __repr__(self) -> str:
        return f"Degree({str(self)!r})"

    def __add__(self, other: Degree | int | Fraction) -> Degree:
        if isinstance(other, Degree):
            return Degree._raw(self.h + other.h, self.m + other.m)
        if isinstance(other, int):
            return Degree._raw(self.h + 2 * other, self.m)
        return self + Degree(other)

    __radd__ = __add__

    def __neg__(self) -> Degree:
        return Degree._raw(-self.h, -self.m)

    def __sub__(self, other: Degree | int | Fraction) -> Degree:
        return self + (-other)

    def __rsub__(self, other: int | Fraction) -> Degree:
        return (-self) + other

    def __mul__(self, c: int) -> Degree:
        return Degree._raw(self.h * c, self.m * c)

    __rmul__ = __mul__

    def sign(self) -> int:
        if self.h != 0:
            return 1 if self.h > 0 else -1
        return (self.m > 0) - (self.m < 0)

    def is_zero(self) -> bool:
        return self.h == 0 and self.m == 0

    def value(self, kappa: float = 0.01) -> float:
        return self.h / 2 + self.m * kappa

    def __str__(self) -> str:
        if self.m == 0:
            return str(self.q)
        head = "" if self.q == 0 else str(self.q)
        if self.m == 1:
            tail = "k"
        elif self.m == -1:
            tail = "-k"
        else:
            tail = f"{self.m}k"
        if head and not tail.startswith("-"):
            tail = "+" + tail
        return head + tail

    @classmethod
    def parse(cls, text: str) -> Degree:
        """Parse ``"3/2"``, ``"-3/2-k"``, ``"1+2k"``, ``"-k"`` and friends."""
        s = text.replace(" ", "")
        try:
            if not s.endswith("k"):
                return cls(Fraction(s), 0)
            body = s[:-1]
            cut = max(body.rfind("+"), body.rfind("-"))
            if cut <= 0:
                q, coef = "0", body
            else:
                q, coef = body[:cut], body[cut:]
            if coef in ("", "+", "-"):
                coef += "1"
            return cls(Fraction(q), int(coef))
        except ValueError:
            raise ValueError(f"cannot parse degree {text!r}") from None


ZERO = Degree()
NOISE_DEGREE = Degree(Fraction(-3, 2), -1)


def kernel_degree(k: MultiIndex) -> Degree:
    return Degree._raw(2 * (2 - k[0] * 2 - k[1]), 0)


# ---------------------------------------------------------------------------
# trees


def _edge_key(edge):
    kind, label, child = edge
    return (kind, label, child.key)


class Tree:
    """Canonical decorated rooted tree.

    ``edges`` is a tuple of ``(kind, label, child)`` triples hanging off the
    root; noise edges have an int label and the zero leaf as child, kernel
    edges have a multi-index label.
    """

    __slots__ = ("n", "o", "edges", "key", "_hash", "nedges", "nnodes", "_deg", "_ext")

    def __init__(self, n: MultiIndex = ZERO_MI, edges: Iterable = (), o: Degree = ZERO):
        edges = tuple(sorted(edges, key=_edge_key))
        self.n = (int(n[0]), int(n[1]))
        self.o = o
        self.edges = edges
        self.nedges = len(edges) + sum(c.nedges for _, _, c in edges)
        self.nnodes = 1 + sum(c.nnodes for _, _, c in edges)
        self.key = (
            self.nedges,
            self.nnodes,
            tuple(_edge_key(e) for e in edges),
            self.n,
            (o.h, o.m),
        )
        self._hash = hash(self.key)
        deg = Degree._raw(2 * mi_size(self.n), 0)
        ext = deg + o
        for kind, label, child in edges:
            if kind == NOISE:
                deg = deg + NOISE_DEGREE
                ext = ext + NOISE_DEGREE
            else:
                deg = deg + kernel_degree(label) + child._deg
                ext = ext + kernel_degree(label) + child._ext
        self._deg = deg
        self._ext = ext

    # -- identity
    def __eq__(self, other: object) -> bool:
        return isinstance(other, Tree) and self.key == other.key

    def __hash__(self) -> int:
        return self._hash

    def __lt__(self, other: Tree) -> bool:
        return self.key < other.key

    def __le__(self, other: Tree) -> bool:
        return self.key <= other.key

    def __gt__(self, other: Tree) -> bool:
        return self.key > other.key

    def __ge__(self, other: Tree) -> bool:
        return self.key >= other.key

    def __repr__(self) -> str:
        return f"Tree({to_text(self)!r})"

    def __str__(self) -> str:
        return to_text(self)

    # -- degrees
    @property
    def degree(self) -> Degree:
        """Degree ignoring the auxiliary ``o`` decorations."""
        return self._deg

    @property
    def ext_degree(self) -> Degree:
        """Degree including the auxiliary ``o`` decorations."""
        return self._ext

    # -- structure
    def is_bare(self) -> bool:
        """True for a single node (a pure polynomial ``X^k``)."""
        return not self.edges

    def is_unit(self) -> bool:
        return not self.edges and self.n == ZERO_MI and self.o.is_zero()

    def is_plain(self) -> bool:
        return self.o.is_zero() and all(c.is_plain() for _, _, c in self.edges)

    def noise_count(self) -> int:
        return sum(1 if k == NOISE else c.noise_count() for k, _, c in self.edges)

    def spatial_order(self) -> int:
        """Total spatial derivative order over kernel labels and node decorations."""
        total = self.n[1]
        for kind, label, child in self.edges:
            if kind == KERNEL:
                total += label[1] + child.spatial_order()
        return total

    def noise_indices(self) -> list[int]:
        out = []
        for kind, label, child in self.edges:
            if kind == NOISE:
                out.append(label)
            else:
                out.extend(child.noise_indices())
        return out

    def with_root(self, n: MultiIndex | None = None, o: Degree | None = None) -> Tree:
        return Tree(self.n if n is None else n, self.edges, self.o if o is None else o)


LEAF = Tree()
UNIT = LEAF


def xi(i: int) -> Tree:
    return Tree(ZERO_MI, [(NOISE, i, LEAF)])


def poly(k: MultiIndex, o: Degree = ZERO) -> Tree:
    return Tree(k, (), o)


def planted(k: MultiIndex, tau: Tree) -> Tree | None:
    """``I_k(tau)`` as a one-branch tree, or ``None`` when it vanishes.

    ``I_k`` of a bare node is zero unless the node carries a nonzero ``o``.
    """
    if tau.is_bare() and tau.o.is_zero():
        return None
    return Tree(ZERO_MI, [(KERNEL, k, tau)])


def product(a: Tree, b: Tree) -> Tree:
    """Tree product: concatenate at the root, adding root decorations."""
    if b.is_unit():
        return a
    if a.is_unit():
        return b
    return Tree(mi_add(a.n, b.n), a.edges + b.edges, a.o + b.o)


def product_all(trees: Iterable[Tree]) -> Tree:
    out = UNIT
    for t in trees:
        out = product(out, t)
    return out


def branches(tau: Tree) -> list[Tree]:
    """Root factors of ``tau`` as single-edge trees (root decoration dropped)."""
    return [Tree(ZERO_MI, [e]) for e in tau.edges]


def forget_o(tau: Tree) -> Tree | None:
    """Set every ``o`` to zero; ``None`` if the result is zero."""
    edges = []
    for kind, label, child in tau.edges:
        if kind == NOISE:
            edges.append((kind, label, child))
            continue
        c = forget_o(child)
        if c is None or c.is_bare():
            return None
        edges.append((kind, label, c))
    return Tree(tau.n, edges, ZERO)


def compare(a: Tree, b: Tree) -> int:
    return (a.key > b.key) - (a.key < b.key)


# ---------------------------------------------------------------------------
# forests (elements of the free commutative algebra generated by trees)


class Forest:
    """Commutative product of trees; the empty forest is the unit."""

    __slots__ = ("trees", "key", "_hash")

    def __init__(self, trees: Iterable[Tree] = ()):
        self.trees = tuple(sorted(trees, key=lambda t: t.key))
        self.key = tuple(t.key for t in self.trees)
        self._hash = hash(("F",) + self.key)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Forest) and self.key == other.key

    def __hash__(self) -> int:
        return self._hash

    def __lt__(self, other: Forest) -> bool:
        return (len(self.key), self.key) < (len(other.key), other.key)

    def __mul__(self, other: Forest) -> Forest:
        if not other.trees:
            return self
        if not self.trees:
            return other
        return Forest(self.trees + other.trees)

    def __len__(self) -> int:
        return len(self.trees)

    def __iter__(self):
        return iter(self.trees)

    @property
    def degree(self) -> Degree:
        return sum((t.degree for t in self.trees), ZERO)

    @property
    def ext_degree(self) -> Degree:
        return sum((t.ext_degree for t in self.trees), ZERO)

    def __repr__(self) -> str:
        return f"Forest({forest_text(self)!r})"

    def __str__(self) -> str:
        return forest_text(self)


EMPTY_FOREST = Forest()


# ---------------------------------------------------------------------------
# linear combinations

Basis = Union[Tree, Forest, tuple]


def sort_key(b):
    if isinstance(b, Tree):
        return (0, b.key)
    if isinstance(b, Forest):
        return (1, len(b.key), b.key)
    return (2, tuple(sort_key(x) for x in b))


class LinComb:
    """Finite formal sum with exact rational coefficients; zeros are never stored."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms: dict = {}
        if terms:
            items = terms.items() if isinstance(terms, dict) else terms
            for b, c in items:
                self.add(b, c)

    @classmethod
    def basis(cls, b, c=1) -> LinComb:
        out = cls()
        out.add(b, c)
        return out

    def add(self, b, c) -> None:
        if c == 0:
            return
        v = self.terms.get(b, 0) + c
        if v == 0:
            self.terms.pop(b, None)
        else:
            self.terms[b] = v

    def iadd(self, other: LinComb, scale=1) -> LinComb:
        for b, c in other.terms.items():
            self.add(b, c * scale)
        return self

    def __add__(self, other: LinComb) -> LinComb:
        return self.copy().iadd(other)

    def __sub__(self, other: LinComb) -> LinComb:
        return self.copy().iadd(other, -1)

    def __neg__(self) -> LinComb:
        return self.scaled(-1)

    def scaled(self, c) -> LinComb:
        out = LinComb()
        if c != 0:
            out.terms = {b: v * c for b, v in self.terms.items()}
        return out

    def __mul__(self, c) -> LinComb:
        return self.scaled(c)

    __rmul__ = __mul__

    def copy(self) -> LinComb:
        out = LinComb()
        out.terms = dict(self.terms)
        return out

    def items(self):
        return self.terms.items()

    def sorted_items(self):
        return sorted(self.terms.items(), key=lambda kv: sort_key(kv[0]))

    def __iter__(self):
        return iter(self.terms.items())

    def __len__(self) -> int:
        return len(self.terms)

    def __bool__(self) -> bool:
        return bool(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coeff(self, b):
        return self.terms.get(b, 0)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LinComb) and self.terms == other.terms

    def __hash__(self):  # pragma: no cover - mutable
        raise TypeError("LinComb is unhashable")

    def map(self, f) -> LinComb:
        """Apply a linear map given on basis elements (returning LinComb)."""
        out = LinComb()
        for b, c in self.terms.items():
            out.iadd(f(b), c)
        return out

    def __repr__(self) -> str:
        return f"LinComb({lincomb_text(self)!r})"

    def __str__(self) -> str:
        return lincomb_text(self)


def tensor(a: LinComb, b: LinComb) -> LinComb:
    out = LinComb()
    for x, cx in a.terms.items():
        for y, cy in b.terms.items():
            out.add(_flat_pair(x, y), cx * cy)
    return out


def _flat_pair(x, y) -> tuple:
    xs = x if isinstance(x, tuple) else (x,)
    ys = y if isinstance(y, tuple) else (y,)
    return xs + ys


# ---------------------------------------------------------------------------
# printing


def _mi_text(k: MultiIndex) -> str:
    return f"({k[0]},{k[1]})"


def _factor_text(kind, label, child) -> str:
    if kind == NOISE:
        return f"Xi({label})"
    inner = to_text(child)
    if label == ZERO_MI:
        return f"I({inner})"
    if label == IPRIME:
        return f"I'({inner})"
    return f"I[{_mi_text(label)}]({inner})"


def to_text(t: Tree) -> str:
    parts = []
    if t.n != ZERO_MI:
        parts.append(f"X^{_mi_text(t.n)}")
    if not t.o.is_zero():
        parts.append(f"O[{t.o.q},{t.o.m}]")
    parts.extend(_factor_text(*e) for e in t.edges)
    return "*".join(parts) if parts else "1"


def forest_text(f: Forest) -> str:
    return "{" + ",".join(to_text(t) for t in f.trees) + "}"


def basis_text(b) -> str:
    if isinstance(b, Tree):
        return to_text(b)
    if isinstance(b, Forest):
        return forest_text(b)
    return " ⊗ ".join(basis_text(x) for x in b)


def coeff_text(c) -> str:
    if isinstance(c, Fraction) and c.denominator == 1:
        return str(c.numerator)
    return str(c)


def lincomb_text(lc: LinComb) -> str:
    if lc.is_zero():
        return "0"
    return " + ".join(f"{coeff_text(c)}·{basis_text(b)}" for b, c in lc.sorted_items())


# ---------------------------------------------------------------------------
# parsing


class TreeSyntaxError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


class _Parser:
    def __init__(self, text: str, m: int | None):
        self.s = "".join(text.split())
        self.i = 0
        self.m = m

    def error(self, msg: str):
        raise TreeSyntaxError(msg, self.i)

    def peek(self, lit: str) -> bool:
        return self.s.startswith(lit, self.i)

    def expect(self, lit: str) -> None:
        if not self.peek(lit):
            self.error(f"expected {lit!r}")
        self.i += len(lit)

    def nat(self) -> int:
        j = self.i
        while j < len(self.s) and self.s[j].isdigit():
            j += 1
        if j == self.i:
            self.error("expected natural number")
        v = int(self.s[self.i:j])
        self.i = j
        return v

    def integer(self) -> int:
        sign = 1
        if self.peek("-"):
            self.i += 1
            sign = -1
        return sign * self.nat()

    def rational(self) -> Fraction:
        num = self.integer()
        if self.peek("/"):
            self.i += 1
            return Fraction(num, self.nat())
        return Fraction(num)

    def pair(self) -> MultiIndex:
        self.expect("(")
        a = self.nat()
        self.expect(",")
        b = self.nat()
        self.expect(")")
        return (a, b)

    def tree(self) -> Tree | None:
        t = self.atom()
        while self.peek("*"):
            self.i += 1
            u = self.atom()
            t = None if t is None or u is None else product(t, u)
        return t

    def atom(self) -> Tree | None:
        if self.peek("Xi("):
            self.i += 3
            pos = self.i
            idx = self.nat()
            if idx < 1 or (self.m is not None and idx > self.m):
                raise TreeSyntaxError(f"noise index {idx} outside 1..{self.m}", pos)
            self.expect(")")
            return xi(idx)
        if self.peek("X^"):
            self.i += 2
            return poly(self.pair())
        if self.peek("O["):
            self.i += 2
            q = self.rational()
            self.expect(",")
            mm = self.integer()
            self.expect("]")
            try:
                return Tree(ZERO_MI, (), Degree(q, mm))
            except ValueError:
                self.error("o decoration must be a half-integer")
        if self.peek("I["):
            self.i += 2
            k = self.pair()
            self.expect("]")
            return self._integrate(k)
        if self.peek("I'("):
            self.i += 2
            return self._integrate(IPRIME)
        if self.peek("I("):
            self.i += 1
            return self._integrate(ZERO_MI)
        if self.peek("1"):
            self.i += 1
            return UNIT
        if self.peek("("):
            self.i += 1
            t = self.tree()
            self.expect(")")
            return t
        self.error("unexpected input")

    def _integrate(self, k: MultiIndex) -> Tree | None:
        self.expect("(")
        inner = self.tree()
        self.expect(")")
        return None if inner is None else planted(k, inner)

    def parse(self) -> Tree | None:
        t = self.tree()
        if self.i != len(self.s):
            self.error("trailing input")
        return t


def parse(text: str, m: int | None = None) -> Tree | LinComb:
    """Parse the tree grammar; returns the zero ``LinComb`` when ``I_k(X^l)`` occurs."""
    t = _Parser(text, m).parse()
    return LinComb() if t is None else t


def parse_tree(text: str, m: int | None = None) -> Tree:
    t = parse(text, m)
    if not isinstance(t, Tree):
        raise ValueError(f"{text!r} is the zero element")
    return t


def parse_forest(text: str, m: int | None = None) -> Forest:
    s = "".join(text.split())
    if not (s.startswith("{") and s.endswith("}")):
        raise TreeSyntaxError("forest must be enclosed in braces", 0)
    body = s[1:-1]
    if not body:
        return EMPTY_FOREST
    parts, depth, start = [], 0, 0
    for j, ch in enumerate(body):
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(body[start:j])
            start = j + 1
    parts.append(body[start:])
    return Forest(parse_tree(p, m) for p in parts)


# ---------------------------------------------------------------------------
# JSON


def tree_to_json(t: Tree) -> dict:
    out: dict = {"n": list(t.n)}
    if not t.o.is_zero():
        out["o"] = {"q": [t.o.q.numerator, t.o.q.denominator], "m": t.o.m}
    out["edges"] = [
        {"noise": label} if kind == NOISE else {"kernel": list(label), "child": tree_to_json(child)}
        for kind, label, child in t.edges
    ]
    return out


def tree_from_json(d: dict) -> Tree:
    o = ZERO
    if "o" in d:
        o = Degree(Fraction(d["o"]["q"][0], d["o"]["q"][1]), d["o"]["m"])
    edges = []
    for e in d["edges"]:
        if "noise" in e:
            edges.append((NOISE, int(e["noise"]), LEAF))
        else:
            edges.append((KERNEL, tuple(e["kernel"]), tree_from_json(e["child"])))
    return Tree(tuple(d["n"]), edges, o)


def basis_to_json(b):
    if isinstance(b, Tree):
        return {"tree": tree_to_json(b)}
    if isinstance(b, Forest):
        return {"forest": [tree_to_json(t) for t in b.trees]}
    return {"tensor": [basis_to_json(x) for x in b]}


def basis_from_json(d):
    if "tree" in d:
        return tree_from_json(d["tree"])
    if "forest" in d:
        return Forest(tree_from_json(t) for t in d["forest"])
    return tuple(basis_from_json(x) for x in d["tensor"])


def lincomb_to_json(lc: LinComb) -> list:
    out = []
    for b, c in lc.sorted_items():
        c = Fraction(c)
        out.append({"num": c.numerator, "den": c.denominator, "term": basis_to_json(b)})
    return out


def lincomb_from_json(data: list) -> LinComb:
    return LinComb((basis_from_json(e["term"]), Fraction(e["num"], e["den"])) for e in data)

