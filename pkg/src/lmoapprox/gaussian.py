"""Multivariate Gaussian algebra on labeled coordinate blocks.

A :class:`GaussianJoint` is a dense Gaussian over the stacked states of an
ordered block of labels, ``state_dim`` coordinates per label.  The module
covers density evaluation, exact marginalization onto sub-blocks, the
closed-form Kullback-Leibler divergence, weighted single-object mixtures,
eigenvalue-floor covariance repair, and trapezoidal grid quadrature.  The
grid is the only approximation anywhere in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .labelspace import Label, LabelSet

__all__ = [
    "GaussianJoint",
    "GaussianMixture",
    "QuadratureGrid",
    "marginalize",
    "evaluate",
    "gaussian_kld",
    "mixture_evaluate",
    "mixture_integral",
    "nearest_pd",
    "default_pd_floor",
    "integrate_on_grid",
    "meshgrid_nodes",
    "SYMMETRY_TOL",
    "PD_EIG_THRESHOLD",
    "DEFAULT_PD_FLOOR_RATIO",
    "MAX_EXACT_DIM",
]

SYMMETRY_TOL = 1e-10
PD_EIG_THRESHOLD = 1e-12
DEFAULT_PD_FLOOR_RATIO = 1e-3
MAX_EXACT_DIM = 3

_LOG_2PI = math.log(2.0 * math.pi)

# numpy 2.x renamed trapz to trapezoid
_trapz = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True, eq=False)
class GaussianJoint:
    """A multivariate Gaussian over an ordered block of labels.

    ``mean`` has length ``len(block) * state_dim`` and ``cov`` is the
    matching square matrix; coordinates are grouped per label in block
    order.  Construction enforces shapes, canonical block order, and
    symmetry of ``cov`` within ``SYMMETRY_TOL``.  Positive definiteness is
    checked by consumers (see :meth:`min_eigenvalue`): a density loaded
    from a document may legitimately carry a defective covariance until a
    validator flags it or a repair fixes it.
    """

    block: tuple[Label, ...]
    mean: np.ndarray
    cov: np.ndarray
    state_dim: int = 1

    def __post_init__(self) -> None:
        block = tuple(self.block)
        if not block:
            raise ValueError("gaussian block must contain at least one label")
        idx = [lab.index for lab in block]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("block labels must be distinct and in canonical order")
        if self.state_dim < 1:
            raise ValueError(f"state_dim must be >= 1, got {self.state_dim}")
        mean = np.array(self.mean, dtype=float).reshape(-1)
        dim = len(block) * self.state_dim
        if mean.size != dim:
            raise ValueError(f"mean has length {mean.size}, expected {dim}")
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (dim, dim):
            raise ValueError(f"cov has shape {cov.shape}, expected {(dim, dim)}")
        asym = float(np.max(np.abs(cov - cov.T))) if dim > 0 else 0.0
        if asym > SYMMETRY_TOL:
            raise ValueError(f"covariance is asymmetric by {asym:.3g} (tol {SYMMETRY_TOL})")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "block", block)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def label_set(self) -> LabelSet:
        return LabelSet(self.block)

    def coordinates_of(self, label: Label) -> slice:
        """Slice of the stacked state vector owned by one block label."""
        for pos, lab in enumerate(self.block):
            if lab == label:
                d = self.state_dim
                return slice(pos * d, (pos + 1) * d)
        raise ValueError(f"label {label} not in block {self.block}")

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.cov)[0])

    def is_pd(self, threshold: float = PD_EIG_THRESHOLD) -> bool:
        return self.min_eigenvalue() > threshold

    def _cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.cov)

    def logpdf(self, x: "np.ndarray | Sequence[float] | float") -> "np.ndarray | float":
        """Log density at one point (returns float) or at rows of a 2-D
        array (returns a vector)."""
        pts = np.asarray(x, dtype=float)
        single = pts.ndim <= 1
        if pts.ndim == 0:
            pts = pts.reshape(1, 1)
        elif pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.shape[1] != self.dim:
            raise ValueError(f"point has dimension {pts.shape[1]}, expected {self.dim}")
        chol = self._cholesky()
        dev = (pts - self.mean).T
        sol = solve_triangular(chol, dev, lower=True)
        maha = np.sum(sol * sol, axis=0)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        out = -0.5 * (self.dim * _LOG_2PI + logdet + maha)
        return float(out[0]) if single else out

    def pdf(self, x: "np.ndarray | Sequence[float] | float") -> "np.ndarray | float":
        return np.exp(self.logpdf(x))

    def marginal(self, keep: "LabelSet | Iterable[Label]") -> "GaussianJoint":
        """Exact marginal onto a nonempty sub-block, in canonical order."""
        kept = sorted(set(keep), key=lambda lab: lab.index)
        if not kept:
            raise ValueError("marginal requires at least one kept label")
        for lab in kept:
            if lab not in self.block:
                raise ValueError(f"label {lab} not in block {self.block}")
        coords: list[int] = []
        for lab in kept:
            sl = self.coordinates_of(lab)
            coords.extend(range(sl.start, sl.stop))
        coords_arr = np.asarray(coords)
        return GaussianJoint(
            block=tuple(kept),
            mean=self.mean[coords_arr],
            cov=self.cov[np.ix_(coords_arr, coords_arr)],
            state_dim=self.state_dim,
        )

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` samples, shape ``(n, dim)``, via the Cholesky factor."""
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._cholesky().T

    def bounds(self, sigma_mult: float = 8.0) -> list[tuple[float, float]]:
        """Per-coordinate ``mean +- sigma_mult * sqrt(var)`` intervals."""
        sig = np.sqrt(np.clip(np.diag(self.cov), 0.0, None))
        return [
            (float(m - sigma_mult * s), float(m + sigma_mult * s))
            for m, s in zip(self.mean, sig)
        ]


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """A weighted mixture of single-label Gaussians on one object's state.

    Weights are nonnegative but need not sum to one: intensity functions
    are mixtures with total weight equal to an expected object count.
    """

    weights: np.ndarray
    components: tuple[GaussianJoint, ...]

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float).reshape(-1)
        comps = tuple(self.components)
        if w.size != len(comps):
            raise ValueError(f"{w.size} weights for {len(comps)} components")
        if np.any(w < 0):
            raise ValueError("mixture weights must be nonnegative")
        dims = {c.state_dim for c in comps}
        if len(dims) > 1:
            raise ValueError("mixture components must share state_dim")
        for c in comps:
            if len(c.block) != 1:
                raise ValueError("mixture components must be single-label Gaussians")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @classmethod
    def empty(cls, state_dim: int = 1) -> "GaussianMixture":
        del state_dim  # dimension is irrelevant for an empty mixture
        return cls(np.zeros(0), ())

    @property
    def state_dim(self) -> int:
        return self.components[0].state_dim if self.components else 1

    def __len__(self) -> int:
        return len(self.components)

    def evaluate(self, x: "np.ndarray | Sequence[float] | float") -> float:
        if not self.components:
            return 0.0
        return float(
            math.fsum(w * c.pdf(x) for w, c in zip(self.weights, self.components))
        )

    def log_evaluate(self, points: np.ndarray) -> np.ndarray:
        """Vectorized log density at rows of ``points``; -inf where zero."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.components:
            return np.full(pts.shape[0], -np.inf)
        cols = np.stack([c.logpdf(pts) for c in self.components], axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(cols + logw, axis=1)

    def integral(self) -> float:
        """Total mixture mass (each Gaussian integrates to one)."""
        return math.fsum(self.weights)

    def scaled(self, factor: float) -> "GaussianMixture":
        if factor < 0:
            raise ValueError("mixture scale factor must be nonnegative")
        return GaussianMixture(self.weights * factor, self.components)

    def bounds(self, sigma_mult: float = 8.0) -> "list[tuple[float, float]] | None":
        """Per-dimension interval covering every component's core mass."""
        if not self.components:
            return None
        lo = np.full(self.state_dim, np.inf)
        hi = np.full(self.state_dim, -np.inf)
        for comp in self.components:
            for j, (a, b) in enumerate(comp.bounds(sigma_mult)):
                lo[j] = min(lo[j], a)
                hi[j] = max(hi[j], b)
        return [(float(a), float(b)) for a, b in zip(lo, hi)]


def marginalize(g: GaussianJoint, keep: "LabelSet | Iterable[Label]") -> GaussianJoint:
    """Marginal of ``g`` onto the labels in ``keep`` (exact)."""
    return g.marginal(keep)


def evaluate(g: GaussianJoint, x) -> float:
    """Density value of ``g`` at a single stacked state vector."""
    out = g.pdf(x)
    return float(out)


def gaussian_kld(a: GaussianJoint, b: GaussianJoint) -> float:
    """Closed-form KL divergence between Gaussians on the same block."""
    if a.block != b.block or a.state_dim != b.state_dim:
        raise ValueError("divergence requires matching blocks")
    dim = a.dim
    chol_a = np.linalg.cholesky(a.cov)
    chol_b = np.linalg.cholesky(b.cov)
    m = solve_triangular(chol_b, chol_a, lower=True)
    trace = float(np.sum(m * m))
    dev = solve_triangular(chol_b, (a.mean - b.mean), lower=True)
    maha = float(dev @ dev)
    logdet_a = 2.0 * float(np.sum(np.log(np.diag(chol_a))))
    logdet_b = 2.0 * float(np.sum(np.log(np.diag(chol_b))))
    val = 0.5 * (trace + maha - dim + logdet_b - logdet_a)
    # identical inputs can land a few ulp below zero
    if -1e-12 < val < 0.0:
        return 0.0
    return val


def mixture_evaluate(mix: GaussianMixture, x) -> float:
    return mix.evaluate(x)


def mixture_integral(mix: GaussianMixture) -> float:
    return mix.integral()


def nearest_pd(m: np.ndarray, eigenvalue_floor: float) -> np.ndarray:
    """Clamp the eigenvalues of (the symmetrized) ``m`` to a positive floor.

    Returns the symmetrized input unchanged when its smallest eigenvalue
    already meets the floor, so the repair is idempotent.
    """
    if eigenvalue_floor <= 0:
        raise ValueError(f"eigenvalue floor must be positive, got {eigenvalue_floor}")
    mat = np.asarray(m, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    sym = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals[0] >= eigenvalue_floor:
        return sym
    clamped = np.maximum(vals, eigenvalue_floor)
    repaired = (vecs * clamped) @ vecs.T
    return 0.5 * (repaired + repaired.T)


def default_pd_floor(m: np.ndarray, ratio: float = DEFAULT_PD_FLOOR_RATIO) -> float:
    """Conservative repair floor: ``ratio`` times the largest eigenvalue."""
    if ratio <= 0:
        raise ValueError(f"floor ratio must be positive, got {ratio}")
    sym = 0.5 * (np.asarray(m, dtype=float) + np.asarray(m, dtype=float).T)
    top = float(np.linalg.eigvalsh(sym)[-1])
    return ratio * top if top > 0 else ratio


@dataclass(frozen=True)
class QuadratureGrid:
    """A rectangular trapezoidal grid over up to three dimensions."""

    bounds: tuple[tuple[float, float], ...]
    points: tuple[int, ...]

    def __post_init__(self) -> None:
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        points = tuple(int(p) for p in self.points)
        if len(bounds) != len(points):
            raise ValueError("bounds and point counts must align")
        if not 1 <= len(bounds) <= MAX_EXACT_DIM:
            raise ValueError(
                f"grid dimension must be 1..{MAX_EXACT_DIM}, got {len(bounds)}"
            )
        for (lo, hi), m in zip(bounds, points):
            if not lo < hi:
                raise ValueError(f"grid bounds must satisfy lo < hi, got ({lo}, {hi})")
            if m < 2:
                raise ValueError(f"grid needs at least 2 points per axis, got {m}")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "points", points)

    @classmethod
    def cube(cls, lo: float, hi: float, points: int, dim: int = 1) -> "QuadratureGrid":
        return cls(tuple((lo, hi) for _ in range(dim)), tuple(points for _ in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, m) for (lo, hi), m in zip(self.bounds, self.points)]

    def nodes(self) -> np.ndarray:
        """All grid nodes as an ``(N, dim)`` array, row-major in axis order."""
        return meshgrid_nodes(self.axes())

    def integrate_values(self, values: np.ndarray) -> float:
        """Trapezoidal integral of values sampled on the full grid."""
        arr = np.asarray(values, dtype=float)
        if arr.shape != tuple(self.points):
            raise ValueError(f"values have shape {arr.shape}, expected {self.points}")
        return nested_trapezoid(arr, self.axes())


def meshgrid_nodes(axes: Sequence[np.ndarray]) -> np.ndarray:
    """Cartesian product of axis vectors as an ``(N, dim)`` node array."""
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def nested_trapezoid(values: np.ndarray, axes: Sequence[np.ndarray]) -> float:
    """Composite trapezoidal rule over all axes of a sampled grid."""
    out = np.asarray(values, dtype=float)
    for axis in range(len(axes) - 1, -1, -1):
        out = _trapz(out, x=axes[axis], axis=axis)
    return float(out)


def integrate_on_grid(
    f: Callable[[np.ndarray], float],
    grid: QuadratureGrid,
    *,
    vectorized: bool = False,
) -> float:
    """Trapezoidal-rule integral of ``f`` over the grid.

    ``f`` maps one point (a ``dim``-vector) to a float; pass
    ``vectorized=True`` if it instead maps an ``(N, dim)`` array to an
    ``(N,)`` array.  Deterministic for a fixed grid.
    """
    nodes = grid.nodes()
    if vectorized:
        vals = np.asarray(f(nodes), dtype=float).reshape(-1)
    else:
        vals = np.array([float(f(p)) for p in nodes])
    if vals.size != nodes.shape[0]:
        raise ValueError("integrand returned the wrong number of values")
    return grid.integrate_values(vals.reshape(tuple(grid.points)))
