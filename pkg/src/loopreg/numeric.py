"""Mollified noise, canonical lifts and Monte-Carlo BPHZ constants.

Two evaluation back ends share the same mollifier and kernel:

* a uniform periodic space-time grid (``GridSpec``) on which noise fields are
  sampled and trees are lifted by discrete kernel convolution;
* a graded cell decomposition around a single space-time point, used for
  trees whose lift at a point is a product of linear Gaussian functionals
  ("shallow" trees).  White noise integrated over each cell is an exact
  Gaussian, so these samples cost one dot product per factor.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss
from scipy.special import erf

from .hopf import MINUS, Character, action_Mg, delta_plus, twisted_antipode_plus, twisted_antipode_minus
from .symbolic import KERNEL, NOISE, ZERO, ZERO_MI, Forest, LinComb, Tree, to_text


class UnresolvedMollifier(ValueError):
    """The grid is too coarse for the requested mollification scale."""


class MissingKernelTable(KeyError):
    """A kernel derivative was requested that has no table."""


class UnresolvedScale(ValueError):
    """A test-function scale below the grid resolution."""


# ---------------------------------------------------------------------------
# one-dimensional bump


def _bump_raw(s):
    s = np.asarray(s, dtype=float)
    q = 1.0 - 4.0 * s * s
    out = np.zeros_like(s)
    inside = q > 0
    out[inside] = np.exp(-1.0 / q[inside])
    return out


def _bump_norm() -> float:
    nodes, weights = leggauss(400)
    return float(0.5 * np.sum(weights * _bump_raw(0.5 * nodes)))


_BUMP_Z = _bump_norm()


def bump(s, order: int = 0):
    """Smooth even bump on ``[-1/2, 1/2]`` with unit integral, or a derivative."""
    s = np.asarray(s, dtype=float)
    b = _bump_raw(s) / _BUMP_Z
    if order == 0:
        return b
    q = 1.0 - 4.0 * s * s
    safe = np.where(q > 0, q, 1.0)
    d1 = -8.0 * s / safe**2
    if order == 1:
        return b * d1
    if order == 2:
        return b * (d1 * d1 - 8.0 / safe**2 - 128.0 * s * s / safe**3)
    raise ValueError("bump derivatives are tabulated up to order 2")


@dataclass(frozen=True)
class Mollifier:
    """``rho_eps(t, x) = eps^-3 b(t/eps^2) b(x/eps)`` for the bump ``b``."""

    eps: float

    @property
    def support_t(self) -> tuple[float, float]:
        return (-0.5 * self.eps**2, 0.5 * self.eps**2)

    @property
    def support_x(self) -> tuple[float, float]:
        return (-0.5 * self.eps, 0.5 * self.eps)

    def factor_t(self, t, order: int = 0):
        e2 = self.eps**2
        return bump(np.asarray(t) / e2, order) / e2 ** (1 + order)

    def factor_x(self, x, order: int = 0):
        e = self.eps
        return bump(np.asarray(x) / e, order) / e ** (1 + order)

    def __call__(self, t, x, k=ZERO_MI):
        return self.factor_t(t, k[0]) * self.factor_x(x, k[1])


# ---------------------------------------------------------------------------
# truncated heat kernel


def _smooth_step(r):
    """1 for r <= 1/2, 0 for r >= 1, smooth in between."""
    r = np.asarray(r, dtype=float)
    a = np.clip(1.0 - r, 0.0, None)
    b = np.clip(r - 0.5, 0.0, None)
    fa = np.where(a > 0, np.exp(-1.0 / np.where(a > 0, a, 1.0)), 0.0)
    fb = np.where(b > 0, np.exp(-1.0 / np.where(b > 0, b, 1.0)), 0.0)
    return fa / (fa + fb)


def _smooth_step_d(r, order: int):
    h = 1e-4
    if order == 1:
        return (_smooth_step(r + h) - _smooth_step(r - h)) / (2 * h)
    return (_smooth_step(r + h) - 2 * _smooth_step(r) + _smooth_step(r - h)) / (h * h)


def heat(t, x):
    """One-dimensional heat kernel of ``d_t - d_x^2``, zero for ``t <= 0``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    return np.where(pos, np.exp(-x * x / (4 * ts)) / np.sqrt(4 * np.pi * ts), 0.0)


@dataclass(frozen=True)
class KernelSpec:
    """Heat kernel times a smooth cutoff of the parabolic norm ``(t^2+x^4)^(1/4)``.

    The cutoff equals 1 on the ball of radius ``radius/2`` and vanishes
    outside radius ``radius``.
    """

    radius: float = 1.0
    derivatives: tuple = ((0, 0), (0, 1), (0, 2), (1, 0))

    def norm(self, t, x):
        return (np.asarray(t, dtype=float) ** 2 + np.asarray(x, dtype=float) ** 4) ** 0.25

    def chi(self, t, x):
        return _smooth_step(self.norm(t, x) / self.radius)

    def __call__(self, t, x):
        return heat(t, x) * self.chi(t, x)

    def dx_value(self, t, x):
        """``d_x K``; used for exact cell integrals of higher x-derivatives."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        p = heat(t, x)
        ts = np.where(t > 0, t, 1.0)
        r = self.norm(t, x)
        rs = np.where(r > 0, r, 1.0)
        chi_x = _smooth_step_d(r / self.radius, 1) / self.radius * x**3 / rs**3
        return -x / (2 * ts) * p * self.chi(t, x) + p * chi_x

    def require(self, k) -> None:
        if tuple(k) not in self.derivatives:
            raise MissingKernelTable(f"no table for D^{tuple(k)} K")

    def t_support(self) -> float:
        return self.radius**2


# ---------------------------------------------------------------------------
# K-smoothing of product functions


_GH_NODES, _GH_WEIGHTS = hermgauss(48)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(math.pi)
_GL_Y = leggauss(48)
_GL_T = leggauss(12)
_T_GRADING = (0.0, 1 / 256, 1 / 64, 1 / 16, 1 / 4, 1.0)


def _gl(lo, hi, rule):
    """Map a Gauss-Legendre rule onto intervals given by broadcastable ``lo, hi``."""
    nodes, weights = rule
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    return mid[..., None] + half[..., None] * nodes, half[..., None] * weights


def heat_smooth(kernel: KernelSpec, zt, zx, f1, supp1, f2, supp2, chunk: int = 256):
    """``H(z) = ∫ K(u) f1(z_t - u_t) f2(z_x - u_x) du`` at the points ``z``.

    ``f1`` and ``f2`` are smooth one-dimensional functions supported in the
    intervals ``supp1`` and ``supp2``.  The time integral uses graded
    Gauss-Legendre panels; the space integral uses Gauss-Hermite nodes
    adapted to the heat kernel when it is narrow compared with ``supp2`` and
    Gauss-Legendre nodes on ``supp2`` otherwise.
    """
    zt = np.atleast_1d(np.asarray(zt, dtype=float)).ravel()
    zx = np.atleast_1d(np.asarray(zx, dtype=float)).ravel()
    out = np.zeros(zt.shape)
    a1, b1 = supp1
    a2, b2 = supp2
    width2 = b2 - a2
    tmax = kernel.t_support()
    for s in range(0, zt.size, chunk):
        pt = zt[s : s + chunk]
        px = zx[s : s + chunk]
        lo = np.maximum(0.0, pt - b1)
        hi = np.minimum(tmax, pt - a1)
        live = hi > lo
        if not live.any():
            continue
        pt, px, lo, hi = pt[live], px[live], lo[live], hi[live]
        span = hi - lo
        nodes, weights = [], []
        for g0, g1 in zip(_T_GRADING[:-1], _T_GRADING[1:]):
            u, w = _gl(lo + g0 * span, lo + g1 * span, _GL_T)
            nodes.append(u)
            weights.append(w)
        u = np.concatenate(nodes, axis=1)
        wt = np.concatenate(weights, axis=1)
        root = np.sqrt(u)
        inner = np.empty(u.shape)
        narrow = root < width2 / 10.0
        pxb = np.broadcast_to(px[:, None], u.shape)
        if narrow.any():
            # narrow heat kernel: y = 2 sqrt(u) v
            un = u[narrow]
            y = 2.0 * root[narrow][:, None] * _GH_NODES
            inner[narrow] = np.sum(
                _GH_WEIGHTS * kernel.chi(un[:, None], y) * f2(pxb[narrow][:, None] - y), axis=-1
            )
        wide = ~narrow
        if wide.any():
            # wide heat kernel: nodes on the support of f2
            uw = u[wide]
            xw = pxb[wide]
            yy, wy = _gl(xw - b2, xw - a2, _GL_Y)
            inner[wide] = np.sum(wy * kernel(uw[:, None], yy) * f2(xw[:, None] - yy), axis=-1)
        vals = np.sum(wt * f1(pt[:, None] - u) * inner, axis=1)
        res = np.zeros(live.shape)
        res[live] = vals
        out[s : s + chunk] = res
    return out


# ---------------------------------------------------------------------------
# graded cells around a point


def _graded_breaks(inner: float, outer: float, symmetric: bool) -> np.ndarray:
    """Breakpoints ``0, inner/2, inner, 2 inner, ...`` up to ``outer``."""
    pts = [0.0, 0.5 * inner]
    b = inner
    while b < outer:
        pts.append(b)
        b *= 2.0
    pts.append(outer)
    pts = np.unique(np.asarray(pts))
    if symmetric:
        return np.concatenate([-pts[:0:-1], pts])
    return pts


@dataclass(frozen=True)
class Cells:
    """Tensor Gauss-Legendre cells; ``volume`` sums to the covered area."""

    t: np.ndarray
    x: np.ndarray
    volume: np.ndarray

    def __len__(self) -> int:
        return self.t.size


@lru_cache(maxsize=32)
def graded_cells(scale: float, t_extent: float, x_extent: float, order: int = 8) -> Cells:
    """Cells on ``[-t_extent, t_extent] x [-x_extent, x_extent]`` graded towards 0.

    Panels have parabolic size ``scale`` near the origin and double outwards;
    each panel carries an ``order x order`` Gauss-Legendre rule, whose weights
    partition the panel into sub-cells containing their nodes.
    """
    tb = _graded_breaks(scale**2, t_extent, symmetric=True)
    xb = _graded_breaks(scale, x_extent, symmetric=True)
    nodes, weights = leggauss(order)

    def expand(breaks):
        lo, hi = breaks[:-1], breaks[1:]
        pts = (0.5 * (hi + lo))[:, None] + (0.5 * (hi - lo))[:, None] * nodes
        w = (0.5 * (hi - lo))[:, None] * weights
        return pts.ravel(), w.ravel()

    tn, tw = expand(tb)
    xn, xw = expand(xb)
    T, X = np.meshgrid(tn, xn, indexing="ij")
    V = np.outer(tw, xw)
    return Cells(T.ravel(), X.ravel(), V.ravel())


def point_cells(eps: float, kernel: KernelSpec, order: int = 8) -> Cells:
    """Cells covering the support of every shallow factor at scale ``eps``."""
    return graded_cells(eps, kernel.t_support() + eps**2, kernel.radius + eps, order)


def factor_values(factor, eps: float, kernel: KernelSpec, t, x) -> np.ndarray:
    """Values of ``rho_eps`` (factor ``None``) or ``D^k K * rho_eps`` (factor ``k``)."""
    rho = Mollifier(eps)
    if factor is None:
        return rho(t, x)
    k = tuple(factor)
    kernel.require(k)
    return heat_smooth(
        kernel,
        t,
        x,
        lambda s: rho.factor_t(s, k[0]),
        rho.support_t,
        lambda y: rho.factor_x(y, k[1]),
        rho.support_x,
    )


@lru_cache(maxsize=64)
def _cached_factor(factor, eps: float, kernel: KernelSpec, order: int) -> np.ndarray:
    cells = point_cells(eps, kernel, order)
    return factor_values(factor, eps, kernel, cells.t, cells.x)


@dataclass(frozen=True)
class Oracle:
    value: float
    error: float


def second_moment_oracle(factor, eps: float, kernel: KernelSpec = KernelSpec()) -> Oracle:
    """``∫ (D^k K * rho_eps)^2`` by graded Gauss-Legendre quadrature.

    The value uses 12-point panel rules; the error is its difference from
    the 8-point rule.
    """
    vals = []
    for order in (8, 12):
        cells = point_cells(eps, kernel, order)
        g = _cached_factor(factor, eps, kernel, order)
        vals.append(float(np.sum(g * g * cells.volume)))
    return Oracle(vals[1], abs(vals[1] - vals[0]))


def c_oracle(eps: float, kernel: KernelSpec = KernelSpec()) -> Oracle:
    """The BPHZ constant ``c(eps) = ∫ (d_x K * rho_eps)^2``."""
    return second_moment_oracle((0, 1), eps, kernel)


# ---------------------------------------------------------------------------
# seeds


def tree_seed(seed: int, tau: Tree) -> int:
    """Deterministic per-tree substream identifier."""
    return (int(seed) * 1_000_003 + zlib.crc32(to_text(tau).encode())) % (2**63)


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


# ---------------------------------------------------------------------------
# shallow trees


def shallow_factors(tau: Tree):
    """``[(noise label, factor)]`` if ``Pi tau (0)`` is a product of linear functionals.

    ``factor`` is ``None`` for a bare noise and the kernel multi-index for
    ``I_k(Xi_i)``.  Returns ``None`` for deeper trees.
    """
    if not tau.o.is_zero():
        return None
    out = []
    for kind, label, child in tau.edges:
        if kind == NOISE:
            out.append((label, None))
            continue
        if child.n != ZERO_MI or not child.o.is_zero() or len(child.edges) != 1:
            return None
        ckind, clabel, _ = child.edges[0]
        if ckind != NOISE:
            return None
        out.append((clabel, tuple(label)))
    return out


@dataclass
class Estimate:
    mean: float
    stderr: float
    samples: int
    method: str


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return mean, se


def point_samples(factors, eps: float, samples: int, seed: int, kernel: KernelSpec, order: int = 8):
    """Samples of ``prod_j Y_j`` with ``Y_j`` the factor functionals at the origin.

    Sample ``s`` draws its cell noises from the substream ``(seed, s)``.
    """
    cells = point_cells(eps, kernel, order)
    root = np.sqrt(cells.volume)
    rows = [_cached_factor(f, eps, kernel, order) * root for _, f in factors]
    labels = sorted({lab for lab, _ in factors})
    out = np.empty(samples)
    block = 256
    for start in range(0, samples, block):
        idx = range(start, min(samples, start + block))
        draws = {lab: np.empty((len(idx), len(cells))) for lab in labels}
        for r, s in enumerate(idx):
            rng = _sample_rng(seed, s)
            for lab in labels:
                draws[lab][r] = rng.standard_normal(len(cells))
        prod = np.ones(len(idx))
        for (lab, _), row in zip(factors, rows):
            prod = prod * (draws[lab] @ row)
        out[start : start + len(idx)] = prod
    return out


def estimate_point(tau: Tree, eps: float, samples: int, seed: int, kernel: KernelSpec = KernelSpec()) -> Estimate:
    """``E (Pi^eps tau)(0)`` for a shallow tree from independent cell samples."""
    factors = shallow_factors(tau)
    if factors is None:
        raise ValueError(f"{to_text(tau)} is not a product of linear functionals")
    if tau.n != ZERO_MI:
        # the monomial X^n vanishes at the origin
        return Estimate(0.0, 0.0, samples, "point")
    if not factors:
        return Estimate(1.0, 0.0, samples, "point")
    vals = point_samples(factors, eps, samples, tree_seed(seed, tau), kernel)
    mean, se = _mean_se(vals)
    return Estimate(mean, se, samples, "point")


def estimate_gminus(
    tau: Tree,
    eps: float,
    samples: int,
    seed: int = 0,
    kernel: KernelSpec = KernelSpec(),
    grid: GridSpec | None = None,
) -> Estimate:
    """Monte-Carlo estimate of ``E (Pi^eps tau)(0)`` with its standard error.

    Shallow trees use independent point samples; other trees need ``grid``
    and average each field over space and its valid time slab, one value per
    field.
    """
    if shallow_factors(tau) is not None and grid is None:
        return estimate_point(tau, eps, samples, seed, kernel)
    if grid is None:
        raise ValueError(f"{to_text(tau)} needs a grid estimator; pass grid=")
    return estimate_grid(tau, eps, samples, seed, grid, kernel)


# ---------------------------------------------------------------------------
# BPHZ character


@dataclass
class NumericCharacter:
    character: Character
    errors: dict = field(default_factory=dict)
    tree_estimates: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.character(x)

    def value(self, tau: Tree) -> float:
        return self.character.gen(tau)

    def error(self, tau: Tree) -> float:
        return self.errors.get(tau, 0.0)


def bphz_character(
    eps: float,
    samples: int,
    generators,
    seed: int = 0,
    kernel: KernelSpec = KernelSpec(),
    grid: GridSpec | None = None,
) -> NumericCharacter:
    """``g^eps = g^-(Pi^eps) A^-`` on the negative generators listed.

    Forest values are products of tree estimates; errors combine to first
    order in quadrature.
    """
    estimates: dict[Tree, Estimate] = {}

    def est(t: Tree) -> Estimate:
        if t not in estimates:
            estimates[t] = estimate_gminus(t, eps, samples, seed, kernel, grid)
        return estimates[t]

    values, errors = {}, {}
    for tau in generators:
        if tau.degree >= ZERO:
            continue
        total, var = 0.0, 0.0
        for phi, c in twisted_antipode_minus(Forest([tau])).sorted_items():
            trees = [t for t in phi.trees if not (t.is_bare() and t.n == ZERO_MI)]
            ests = [est(t) for t in trees]
            prod = float(c) * math.prod(e.mean for e in ests)
            total += prod
            for i, e in enumerate(ests):
                others = math.prod(f.mean for j, f in enumerate(ests) if j != i)
                var += (float(c) * others * e.stderr) ** 2
        values[tau] = total
        errors[tau] = math.sqrt(var)
    return NumericCharacter(Character(MINUS, values), errors, estimates)


# ---------------------------------------------------------------------------
# periodic grids


@dataclass(frozen=True)
class GridSpec:
    """``nx`` points on a circle of length ``length``, ``nt`` steps of ``dt``."""

    nx: int
    dt: float
    horizon: float
    length: float = 1.0

    def __post_init__(self) -> None:
        if self.nx < 4 or self.dt <= 0 or self.horizon <= 0:
            raise ValueError("grid needs nx >= 4 and positive dt, horizon")
        if self.dt > self.dx**2 / 2 * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds dx^2/2={self.dx**2 / 2}")

    @property
    def dx(self) -> float:
        return self.length / self.nx

    @property
    def nt(self) -> int:
        return int(round(self.horizon / self.dt))

    @classmethod
    def resolving(cls, eps: float, horizon: float, points_per_eps: int = 4, length: float = 1.0) -> GridSpec:
        """Grid with ``dx <= eps/points_per_eps`` and ``dt = dx^2/2``."""
        nx = int(2 ** math.ceil(math.log2(points_per_eps * length / eps)))
        dx = length / nx
        return cls(nx, dx * dx / 2, horizon, length)

    def offsets(self) -> np.ndarray:
        """Spatial offsets of the periodic grid, wrapped into ``[-L/2, L/2)``."""
        j = np.arange(self.nx)
        return ((j + self.nx // 2) % self.nx - self.nx // 2) * self.dx


@dataclass
class NoiseField:
    values: np.ndarray  # (m, nt, nx)
    eps: float
    seed: int
    stream: int
    grid: GridSpec

    @property
    def m(self) -> int:
        return self.values.shape[0]


def _rfft_conv_x(a: np.ndarray, kernel_row_hat: np.ndarray) -> np.ndarray:
    return np.fft.irfft(np.fft.rfft(a, axis=-1) * kernel_row_hat, n=a.shape[-1], axis=-1)


def mollifier_table(grid: GridSpec, eps: float) -> tuple[np.ndarray, int]:
    """Samples of ``rho_eps`` at lags ``-h..h`` in time, normalised to unit mass."""
    if eps < 2 * max(grid.dx, math.sqrt(grid.dt)) * (1 - 1e-12):
        raise UnresolvedMollifier(f"eps={eps} is not resolved by dx={grid.dx}, dt={grid.dt}")
    h = int(math.ceil(0.5 * eps**2 / grid.dt))
    lags = np.arange(-h, h + 1) * grid.dt
    table = Mollifier(eps)(lags[:, None], grid.offsets()[None, :])
    table /= table.sum() * grid.dt * grid.dx
    return table, h


def sample_noise(grid: GridSpec, eps: float, seed: int, m: int = 1, stream: int = 0) -> NoiseField:
    """White-noise cells of variance ``1/(dt dx)`` convolved with ``rho_eps``.

    Component ``i`` of stream ``s`` draws from the substream ``(seed, s, i)``.
    """
    table, h = mollifier_table(grid, eps)
    nt, nx = grid.nt, grid.nx
    hat = np.fft.rfft(table, axis=1)
    out = np.empty((m, nt, nx))
    scale = 1.0 / math.sqrt(grid.dt * grid.dx)
    for i in range(m):
        rng = np.random.default_rng([int(seed), int(stream), i])
        white = rng.standard_normal((nt + 2 * h, nx)) * scale
        wh = np.fft.rfft(white, axis=1)
        acc = np.zeros((nt, wh.shape[1]), dtype=complex)
        for a in range(2 * h + 1):
            # lag (a - h): row i of the output reads white row i + 2h - a
            acc += hat[a] * wh[2 * h - a : 2 * h - a + nt]
        out[i] = np.fft.irfft(acc, n=nx, axis=1) * grid.dt * grid.dx
    return NoiseField(out, eps, int(seed), int(stream), grid)


@lru_cache(maxsize=32)
def kernel_table(kernel: KernelSpec, k: tuple, dt: float, dx: float, nx: int) -> np.ndarray:
    """Integrals of ``D^k K`` over the cells ``[a dt -/+ dt/2] x [x_b -/+ dx/2]``.

    Rows are time lags ``a = 0, 1, ...`` (the first cell is clipped to
    ``t > 0``); columns are wrapped spatial offsets.  Spatial derivatives are
    integrated exactly in ``x``, the time integral uses Gauss-Legendre.
    """
    kernel.require(k)
    if 2 * kernel.radius > nx * dx * (1 + 1e-12):
        raise ValueError("kernel support does not fit on the periodic grid")
    ka = int(math.ceil(kernel.t_support() / dt)) + 1
    a = np.arange(ka, dtype=float)
    tlo = np.maximum(0.0, (a - 0.5) * dt)
    thi = (a + 0.5) * dt
    j = np.arange(nx)
    xb = ((j + nx // 2) % nx - nx // 2) * dx
    xl, xr = xb - dx / 2, xb + dx / 2

    def mass(t):
        t = np.asarray(t, dtype=float)
        ts = np.where(t > 0, t, 1.0)
        cdf = 0.5 * (erf(xr / (2 * np.sqrt(ts))) - erf(xl / (2 * np.sqrt(ts))))
        at0 = ((xl <= 0) & (xr > 0)).astype(float)
        return np.where(t > 0, kernel.chi(t, xb) * cdf, at0)

    if k == (1, 0):
        return mass(thi[:, None]) - mass(tlo[:, None])
    nodes, weights = leggauss(8)
    tq = 0.5 * (thi + tlo)[:, None] + 0.5 * (thi - tlo)[:, None] * nodes
    wq = 0.5 * (thi - tlo)[:, None] * weights
    T = tq[:, :, None]
    if k == (0, 0):
        vals = mass(T)
    elif k == (0, 1):
        vals = kernel(T, xr) - kernel(T, xl)
    elif k == (0, 2):
        vals = kernel.dx_value(T, xr) - kernel.dx_value(T, xl)
    else:  # pragma: no cover - guarded by require
        raise MissingKernelTable(str(k))
    return np.sum(wq[:, :, None] * vals, axis=1)


def convolve_kernel(table: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``out[i] = sum_a sum_b table[a, b] f[i - a, . - b]``, zero history before row 0."""
    nt = f.shape[0]
    ka = table.shape[0]
    n = nt + ka
    F = np.fft.rfft2(f, s=(n, f.shape[1]))
    T = np.fft.rfft2(table, s=(n, f.shape[1]))
    return np.fft.irfft2(F * T, s=(n, f.shape[1]))[:nt]


@dataclass
class GridFunction:
    values: np.ndarray  # (nt, nx)
    valid_from: int  # first row with complete kernel history


class _Lifter:
    def __init__(self, noise: NoiseField, kernel: KernelSpec, origin=(0.0, 0.0)):
        self.noise = noise
        self.kernel = kernel
        self.origin = origin
        self.cache: dict[Tree, GridFunction] = {}
        g = noise.grid
        t = np.arange(g.nt) * g.dt - origin[0]
        x = np.arange(g.nx) * g.dx - origin[1]
        x = (x + g.length / 2) % g.length - g.length / 2
        self.t, self.x = t, x

    def monomial(self, n) -> np.ndarray:
        return np.outer(self.t ** n[0], self.x ** n[1])

    def __call__(self, tau: Tree) -> GridFunction:
        if tau in self.cache:
            return self.cache[tau]
        g = self.noise.grid
        vals = np.ones((g.nt, g.nx)) if tau.n == ZERO_MI else self.monomial(tau.n)
        valid = 0
        for kind, label, child in tau.edges:
            if kind == NOISE:
                if not 1 <= label <= self.noise.m:
                    raise ValueError(f"noise index {label} outside 1..{self.noise.m}")
                vals = vals * self.noise.values[label - 1]
                continue
            inner = self(child)
            table = kernel_table(self.kernel, tuple(label), g.dt, g.dx, g.nx)
            vals = vals * convolve_kernel(table, inner.values)
            valid = max(valid, inner.valid_from + table.shape[0] - 1)
        out = GridFunction(vals, valid)
        self.cache[tau] = out
        return out


def lift(tau, noise: NoiseField, kernel: KernelSpec = KernelSpec(), origin=(0.0, 0.0)) -> GridFunction:
    """Canonical lift of a tree (or a linear combination of trees) on the grid."""
    lifter = _Lifter(noise, kernel, origin)
    if isinstance(tau, Tree):
        return lifter(tau)
    total = np.zeros((noise.grid.nt, noise.grid.nx))
    valid = 0
    for t, c in tau.sorted_items():
        part = lifter(t)
        total = total + float(c) * part.values
        valid = max(valid, part.valid_from)
    return GridFunction(total, valid)


def _has_polynomial(tau: Tree) -> bool:
    return tau.n != ZERO_MI or any(_has_polynomial(c) for k, _, c in tau.edges if k != NOISE)


def estimate_grid(
    tau: Tree, eps: float, samples: int, seed: int, grid: GridSpec, kernel: KernelSpec = KernelSpec()
) -> Estimate:
    """One spatial/temporal average of the lift per independent field."""
    if _has_polynomial(tau):
        raise ValueError("stationary averaging needs a tree without polynomial decorations")
    m = max(tau.noise_indices(), default=1)
    base = tree_seed(seed, tau)
    vals = np.empty(samples)
    for s in range(samples):
        noise = sample_noise(grid, eps, base, m=m, stream=s)
        f = lift(tau, noise, kernel)
        if f.valid_from >= grid.nt:
            raise ValueError("grid horizon shorter than the kernel history")
        vals[s] = float(np.mean(f.values[f.valid_from :]))
    mean, se = _mean_se(vals)
    return Estimate(mean, se, samples, "grid")


def grid_second_moment(k, eps: float, grid: GridSpec, kernel: KernelSpec = KernelSpec()) -> float:
    """Exact variance of ``lift(I_k(Xi))`` at a point with full history."""
    table = kernel_table(kernel, tuple(k), grid.dt, grid.dx, grid.nx)
    rho, h = mollifier_table(grid, eps)
    n = table.shape[0] + rho.shape[0]
    comp = np.fft.irfft2(
        np.fft.rfft2(table, s=(n, grid.nx)) * np.fft.rfft2(rho, s=(n, grid.nx)), s=(n, grid.nx)
    )
    return float(np.sum(comp * comp) * grid.dt * grid.dx)


# ---------------------------------------------------------------------------
# recentered pairings


def probe(t, x):
    """Product bump supported in ``[-1/2, 1/2]^2``, inside the parabolic unit ball."""
    return bump(t) * bump(x)


def scaled_probe(t, x, lam: float):
    return probe(np.asarray(t) / lam**2, np.asarray(x) / lam) / lam**3


@dataclass
class PairingStats:
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def mean_se(self) -> float:
        return _mean_se(self.values)[1]

    @property
    def second_moment(self) -> float:
        return float(np.mean(self.values**2))

    @property
    def second_moment_se(self) -> float:
        return _mean_se(self.values**2)[1]


def _renormalised(tau: Tree, g: Character | None) -> LinComb:
    if g is None:
        return LinComb.basis(tau)
    return action_Mg(g, tau)


def _linear_factor(tau: Tree):
    """``(label, factor)`` when ``tau`` is ``Xi_i`` or ``I_k(Xi_i)`` with trivial recentering."""
    f = shallow_factors(tau)
    if f is None or len(f) != 1 or tau.n != ZERO_MI:
        return None
    if len(delta_plus(tau)) != 1:
        return None
    return f[0]


def _conv_profile(lam_support: float, eps_support: float, phi1, rho1, count: int = 4001):
    """Tabulate ``Psi(v) = ∫ rho1(r) phi1(v + r) dr`` on its support."""
    half = lam_support + eps_support
    v = np.linspace(-half, half, count)
    nodes, weights = leggauss(48)
    r = eps_support * nodes
    w = eps_support * weights
    vals = np.sum(w * rho1(r) * phi1(v[:, None] + r), axis=1)
    return v, vals


def pairing_point(
    tau: Tree,
    lam: float,
    eps: float,
    samples: int,
    seed: int,
    kernel: KernelSpec = KernelSpec(),
    shift: float = 0.0,
    order: int = 8,
) -> PairingStats:
    """Samples of ``<Pi tau, phi^lam> + shift`` for linear ``tau`` from graded cells."""
    lab_factor = _linear_factor(tau)
    if lab_factor is None:
        raise ValueError(f"{to_text(tau)} is not a linear tree with trivial recentering")
    _, factor = lab_factor
    k = (0, 0) if factor is None else factor
    rho = Mollifier(eps)
    vt, p1 = _conv_profile(
        0.5 * lam**2, 0.5 * eps**2, lambda s: bump(s / lam**2) / lam**2, lambda s: rho.factor_t(s, k[0])
    )
    vx, p2 = _conv_profile(
        0.5 * lam, 0.5 * eps, lambda s: bump(s / lam) / lam, lambda s: rho.factor_x(s, k[1])
    )
    if factor is None:
        ext_t, ext_x = vt[-1], vx[-1]
    else:
        kernel.require(k)
        ext_t, ext_x = vt[-1] + kernel.t_support(), vx[-1] + kernel.radius
    cells = graded_cells(lam, ext_t, ext_x, order)
    if factor is None:
        h = np.interp(cells.t, vt, p1, left=0, right=0) * np.interp(cells.x, vx, p2, left=0, right=0)
    else:
        # h(w) = ∫ K(u) Psi(w + u) du, evaluated at -w by the K-smoothing routine
        h = heat_smooth(
            kernel,
            -cells.t,
            -cells.x,
            lambda s: np.interp(-s, vt, p1, left=0, right=0),
            (-vt[-1], vt[-1]),
            lambda y: np.interp(-y, vx, p2, left=0, right=0),
            (-vx[-1], vx[-1]),
        )
    row = h * np.sqrt(cells.volume)
    base = tree_seed(seed, tau)
    vals = np.empty(samples)
    for s in range(samples):
        vals[s] = _sample_rng(base, s).standard_normal(len(cells)) @ row
    return PairingStats(vals + shift)


def pairing_grid(
    tau: Tree,
    lam: float,
    eps: float,
    samples: int,
    seed: int,
    grid: GridSpec,
    kernel: KernelSpec = KernelSpec(),
    g: Character | None = None,
) -> PairingStats:
    """Samples of ``<Pi_z tau, phi_z^lam>`` on the grid, recentered at a grid point ``z``.

    ``Pi_z = (Pi-hat ⊗ f_z) Delta+`` with ``Pi-hat = Pi^eps M_g`` and
    ``f_z = g_z^+(Pi-hat) A+``; coordinates are centred at ``z`` so that
    ``g_z^+(X) = 0``.
    """
    if lam < 2 * max(grid.dx, math.sqrt(grid.dt)):
        raise UnresolvedScale(f"lambda={lam} below grid resolution")
    half = int(math.ceil(0.5 * lam**2 / grid.dt))
    iz = grid.nt - 1 - half
    jz = grid.nx // 2
    z = (iz * grid.dt, jz * grid.dx)
    rows = slice(iz - half, iz + half + 1)
    tt = (np.arange(grid.nt)[rows] - iz) * grid.dt
    xx = (np.arange(grid.nx) - jz) * grid.dx
    weight = scaled_probe(tt[:, None], xx[None, :], lam) * grid.dt * grid.dx
    m = max(tau.noise_indices(), default=1)
    base = tree_seed(seed, tau)
    expansion = delta_plus(tau)
    vals = np.empty(samples)
    for s in range(samples):
        noise = sample_noise(grid, eps, base, m=m, stream=s)
        lifter = _Lifter(noise, kernel, origin=z)
        hat_cache: dict[Tree, GridFunction] = {}

        def hat(sigma: Tree) -> GridFunction:
            if sigma not in hat_cache:
                total = np.zeros((grid.nt, grid.nx))
                valid = 0
                for r, c in _renormalised(sigma, g).sorted_items():
                    part = lifter(r)
                    total = total + float(c) * part.values
                    valid = max(valid, part.valid_from)
                hat_cache[sigma] = GridFunction(total, valid)
            return hat_cache[sigma]

        def gplus(u: Tree) -> float:
            if u.n != ZERO_MI:
                return 0.0
            val = 1.0
            for _, label, sigma in u.edges:
                inner = hat(sigma)
                table = kernel_table(kernel, tuple(label), grid.dt, grid.dx, grid.nx)
                if inner.valid_from + table.shape[0] - 1 > iz:
                    raise ValueError("grid horizon shorter than the kernel history")
                val *= float(convolve_kernel(table, inner.values)[iz, jz])
            return val

        field_total = np.zeros((grid.nt, grid.nx))
        valid = 0
        for (a, b), c in expansion.sorted_items():
            fz = sum((float(cc) * gplus(v) for v, cc in twisted_antipode_plus(b).sorted_items()), 0.0)
            if fz == 0.0:
                continue
            part = hat(a)
            field_total = field_total + float(c) * fz * part.values
            valid = max(valid, part.valid_from)
        if valid > iz - half:
            raise ValueError("grid horizon shorter than the kernel history")
        vals[s] = float(np.sum(weight * field_total[rows]))
    return PairingStats(vals)


def recentered_eval(
    tau: Tree,
    lam: float,
    eps: float,
    samples: int,
    seed: int = 0,
    g: Character | None = None,
    kernel: KernelSpec = KernelSpec(),
    grid: GridSpec | None = None,
) -> PairingStats:
    """Pairing samples of ``<Pi_0 tau, phi_0^lam>``.

    Linear trees with trivial recentering use the graded-cell sampler (the
    renormalised model only adds a constant); other trees need ``grid``.
    """
    if grid is None and _linear_factor(tau) is not None:
        shift = 0.0
        for r, c in _renormalised(tau, g).sorted_items():
            if r == tau:
                if c != 1:
                    raise ValueError("unexpected renormalisation of a linear tree")
            elif r.is_bare() and r.n == ZERO_MI:
                shift += float(c)
            else:
                raise ValueError("unexpected renormalisation of a linear tree")
        return pairing_point(tau, lam, eps, samples, seed, kernel, shift)
    if grid is None:
        raise ValueError(f"{to_text(tau)} needs a grid; pass grid=")
    return pairing_grid(tau, lam, eps, samples, seed, grid, kernel, g)


# ---------------------------------------------------------------------------
# sweeps


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log2 y`` against ``log2 x``."""
    return float(np.polyfit(np.log2(np.asarray(xs, float)), np.log2(np.asarray(ys, float)), 1)[0])


@dataclass
class ScalingRow:
    lam: float
    second_moment: float
    stderr: float


def scaling_sweep(tau: Tree, lambdas, eps: float, samples: int, seed: int = 0, **kw) -> tuple[list[ScalingRow], float]:
    rows = []
    for lam in lambdas:
        st = recentered_eval(tau, lam, eps, samples, seed, **kw)
        rows.append(ScalingRow(lam, st.second_moment, st.second_moment_se))
    return rows, loglog_slope([r.lam for r in rows], [r.second_moment for r in rows])


@dataclass
class ConstantRow:
    eps: float
    estimate: float
    stderr: float
    oracle: float
    oracle_err: float

    @property
    def zscore(self) -> float:
        return abs(self.estimate - self.oracle) / math.hypot(self.stderr, self.oracle_err)


def _matchings(items: list):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, other in enumerate(rest):
        for m in _matchings(rest[:i] + rest[i + 1 :]):
            yield [(first, other)] + m


def moment_oracle(tau: Tree, eps: float, kernel: KernelSpec = KernelSpec()) -> Oracle:
    """``E (Pi^eps tau)(0)`` for shallow trees: Wick pairings of quadrature covariances."""
    factors = shallow_factors(tau)
    if factors is None:
        raise ValueError(f"no quadrature oracle for {to_text(tau)}")
    if tau.n != ZERO_MI or len(factors) % 2:
        return Oracle(0.0, 0.0)
    if not factors:
        return Oracle(1.0, 0.0)

    def cov(a, b, order):
        if a[0] != b[0]:
            return 0.0
        cells = point_cells(eps, kernel, order)
        fa = _cached_factor(a[1], eps, kernel, order)
        fb = _cached_factor(b[1], eps, kernel, order)
        return float(np.sum(fa * fb * cells.volume))

    vals = []
    for order in (8, 12):
        total = 0.0
        for m in _matchings(list(factors)):
            total += math.prod(cov(a, b, order) for a, b in m)
        vals.append(total)
    return Oracle(vals[1], abs(vals[1] - vals[0]))


def character_oracle(tau: Tree, eps: float, kernel: KernelSpec = KernelSpec()) -> Oracle:
    """Quadrature value of ``g^eps(tau)`` when every tree in its expansion is shallow."""
    if tau.degree >= ZERO:
        return Oracle(0.0, 0.0)
    total, var = 0.0, 0.0
    for phi, c in twisted_antipode_minus(Forest([tau])).sorted_items():
        trees = [t for t in phi.trees if not (t.is_bare() and t.n == ZERO_MI)]
        ors = [moment_oracle(t, eps, kernel) for t in trees]
        total += float(c) * math.prod(o.value for o in ors)
        for i, o in enumerate(ors):
            others = math.prod(p.value for j, p in enumerate(ors) if j != i)
            var += (float(c) * others * o.error) ** 2
    return Oracle(total, math.sqrt(var))
