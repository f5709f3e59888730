"""Labeled multi-object densities in factorized form.

A density over finite sets of (state, label) pairs factorizes into a
subset weight table (the joint existence probabilities of the label sets)
and, per nonempty label set, a joint Gaussian over the stacked states
conditional on existence.  First-order moments fall out as Gaussian
mixtures by marginalizing each conditional onto single labels.

Every labeled density in this package, the factorized original as well as
its approximations, exposes the same per-subset "stratum" evaluation
surface that the divergence module integrates over:

``has_support(subset)``
    whether the subset carries positive weight;
``log_subset_weight(subset)``
    log of the subset weight (``-inf`` allowed);
``conditional_logpdf(subset, points)`` / ``conditional_grid_logpdf``
    log of the normalized state density on that stratum, flat over
    ``(N, dim)`` rows or over a tensor grid given per-axis vectors;
``stratum_logpdf(subset, points)`` / ``stratum_grid_logpdf``
    log of the full labeled density restricted to the stratum (weight
    included);
``stratum_bounds(subset, sigma_mult)``
    per-coordinate quadrature bounds covering the stratum's mass;
``density_at(X)``
    point evaluation at a labeled multi-object state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .gaussian import (
    GaussianJoint,
    GaussianMixture,
    PD_EIG_THRESHOLD,
    meshgrid_nodes,
)
from .labelspace import (
    NORMALIZATION_TOL,
    CardinalityDistribution,
    Label,
    LabelSet,
    LabelSpace,
    WeightTable,
    cardinality_from_weights,
)

__all__ = [
    "LabeledState",
    "LMODensity",
    "ValidationIssue",
    "ValidationReport",
    "ValidationError",
    "FactorizedStrataMixin",
    "ProductConditionalMixin",
]


class ValidationError(ValueError):
    """Raised when an operation requires a valid density but got issues."""


@dataclass(frozen=True)
class ValidationIssue:
    kind: str
    subset: "LabelSet | None"
    message: str

    def __str__(self) -> str:
        where = f" [{self.subset}]" if self.subset is not None else ""
        return f"{self.kind}{where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def __str__(self) -> str:
        if self.ok:
            return "valid: no issues"
        return "\n".join(str(issue) for issue in self.issues)


@dataclass(frozen=True, eq=False)
class LabeledState:
    """A finite set of (state, label) pairs with pairwise-distinct labels,
    stored in canonical label order."""

    pairs: tuple[tuple[np.ndarray, Label], ...] = ()

    @classmethod
    def of(
        cls,
        pairs: Iterable[tuple["np.ndarray | Sequence[float] | float", Label]],
        state_dim: "int | None" = None,
    ) -> "LabeledState":
        converted: list[tuple[np.ndarray, Label]] = []
        for x, lab in pairs:
            vec = np.asarray(x, dtype=float).reshape(-1)
            if state_dim is not None and vec.size != state_dim:
                raise ValueError(
                    f"state for label {lab} has dimension {vec.size}, expected {state_dim}"
                )
            converted.append((vec, lab))
        dims = {vec.size for vec, _ in converted}
        if len(dims) > 1:
            raise ValueError("all states in a labeled set must share one dimension")
        converted.sort(key=lambda item: item[1].index)
        for (_, a), (_, b) in zip(converted, converted[1:]):
            if a == b:
                raise ValueError(f"duplicate label {a} in labeled state")
        return cls(tuple(converted))

    @classmethod
    def empty(cls) -> "LabeledState":
        return cls(())

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def labels(self) -> LabelSet:
        return LabelSet(tuple(lab for _, lab in self.pairs))

    def state_vector(self) -> np.ndarray:
        """States stacked in canonical label order."""
        if not self.pairs:
            return np.zeros(0)
        return np.concatenate([vec for vec, _ in self.pairs])


class FactorizedStrataMixin:
    """Full-stratum evaluation for densities of the form
    weight(labels) times normalized conditional state density.

    Hosts expect ``log_subset_weight``, ``conditional_logpdf`` and
    ``conditional_grid_logpdf`` on the subclass.
    """

    def has_support(self, subset: LabelSet) -> bool:
        return self.log_subset_weight(subset) > -np.inf

    def stratum_logpdf(self, subset: LabelSet, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        lw = self.log_subset_weight(subset)
        if len(subset) == 0 or lw == -np.inf:
            return np.full(n, lw)
        return lw + self.conditional_logpdf(subset, pts)

    def stratum_grid_logpdf(self, subset: LabelSet, axes: Sequence[np.ndarray]) -> np.ndarray:
        shape = tuple(len(a) for a in axes)
        lw = self.log_subset_weight(subset)
        if len(subset) == 0 or lw == -np.inf:
            return np.full(shape if shape else (), lw)
        return lw + self.conditional_grid_logpdf(subset, axes)


class ProductConditionalMixin:
    """Grid-friendly conditionals that factor across the subset's labels.

    Subclasses provide ``label_logpdf(subset, label, points)`` over the
    single label's ``(N, state_dim)`` coordinates; the joint conditional is
    the sum over labels, which on a tensor grid broadcasts along axes
    instead of touching every node per label.
    """

    def label_logpdf(self, subset: LabelSet, label: Label, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def conditional_logpdf(self, subset: LabelSet, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.state_dim
        out = np.zeros(pts.shape[0])
        for j, lab in enumerate(subset):
            out = out + self.label_logpdf(subset, lab, pts[:, j * d : (j + 1) * d])
        return out

    def conditional_grid_logpdf(self, subset: LabelSet, axes: Sequence[np.ndarray]) -> np.ndarray:
        d = self.state_dim
        shape = tuple(len(a) for a in axes)
        if len(axes) != len(subset) * d:
            raise ValueError(f"{len(axes)} axes for a {len(subset) * d}-dimensional stratum")
        total = np.zeros(shape)
        for j, lab in enumerate(subset):
            sub_axes = list(axes[j * d : (j + 1) * d])
            nodes = meshgrid_nodes(sub_axes)
            vals = self.label_logpdf(subset, lab, nodes)
            bshape = [1] * len(axes)
            for t, ax in enumerate(sub_axes):
                bshape[j * d + t] = len(ax)
            total = total + vals.reshape(bshape)
        return total


@dataclass(frozen=True, eq=False)
class LMODensity(FactorizedStrataMixin):
    """A labeled multi-object density: subset weights plus per-subset joint
    Gaussian conditionals.

    The empty set needs no conditional (its state density is one by
    convention) and zero-weight subsets carry none.  Construction performs
    only structural coercion; run :meth:`validate` for the full contract,
    including positive definiteness of every covariance.
    """

    space: LabelSpace
    weights: WeightTable
    conditionals: Mapping[LabelSet, GaussianJoint]
    state_dim: int = 1

    def __post_init__(self) -> None:
        conds = dict(self.conditionals)
        for subset, g in conds.items():
            if not isinstance(g, GaussianJoint):
                raise TypeError(f"conditional for {subset} is not a GaussianJoint")
            if g.state_dim != self.state_dim:
                raise ValueError(
                    f"conditional for {subset} has state_dim {g.state_dim}, "
                    f"expected {self.state_dim}"
                )
        object.__setattr__(self, "conditionals", conds)

    # ------------------------------------------------------------------
    # validation

    def validate(self) -> ValidationReport:
        """Check normalization, conditional coverage, block agreement, and
        positive definiteness; returns a report instead of raising."""
        issues: list[ValidationIssue] = []
        total = self.weights.total()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            issues.append(
                ValidationIssue(
                    "normalization", None, f"subset weights sum to {total!r}, expected 1"
                )
            )
        for subset, w in self.weights.nonzero():
            if len(subset) == 0:
                continue
            g = self.conditionals.get(subset)
            if g is None:
                issues.append(
                    ValidationIssue(
                        "missing_conditional", subset, "no conditional for a subset with positive weight"
                    )
                )
                continue
            if g.block != subset.members:
                issues.append(
                    ValidationIssue(
                        "block_mismatch",
                        subset,
                        f"conditional block {tuple(str(b) for b in g.block)} does not match the subset",
                    )
                )
                continue
            eigs = np.linalg.eigvalsh(g.cov)
            if eigs[0] <= PD_EIG_THRESHOLD:
                issues.append(
                    ValidationIssue(
                        "not_positive_definite",
                        subset,
                        f"covariance eigenvalues {np.array2string(eigs, precision=6)} "
                        f"include {eigs[0]:.6g} <= {PD_EIG_THRESHOLD}",
                    )
                )
        return ValidationReport(tuple(issues))

    def require_valid(self) -> None:
        report = self.validate()
        if not report.ok:
            raise ValidationError(str(report))

    # ------------------------------------------------------------------
    # point evaluation and moments

    def weight_of(self, subset: LabelSet) -> float:
        return self.weights.weight(subset)

    def conditional(self, subset: LabelSet) -> GaussianJoint:
        try:
            return self.conditionals[subset]
        except KeyError:
            raise ValueError(f"no conditional stored for subset {subset}") from None

    def density_at(self, X: LabeledState) -> float:
        """Density value at a labeled state set (weight times conditional)."""
        for _, lab in X.pairs:
            if lab not in self.space:
                raise ValueError(f"label {lab} outside the density's label space")
        subset = X.labels
        w = self.weight_of(subset)
        if len(subset) == 0:
            return w
        if w == 0.0:
            return 0.0
        return w * float(self.conditional(subset).pdf(X.state_vector()))

    def conditional_marginal(self, subset: LabelSet, label: Label) -> GaussianJoint:
        """Single-label marginal of one subset's conditional (exact)."""
        if label not in subset:
            raise ValueError(f"label {label} not in subset {subset}")
        return self.conditional(subset).marginal([label])

    def labeled_phd(self, label: Label) -> GaussianMixture:
        """First-moment density of one label: mixture over the subsets
        containing it, weighted by their existence probabilities."""
        if label not in self.space:
            raise ValueError(f"label {label} outside the density's label space")
        weights: list[float] = []
        comps: list[GaussianJoint] = []
        for subset, w in self.weights.nonzero():
            if label not in subset:
                continue
            weights.append(w)
            comps.append(self.conditional_marginal(subset, label))
        return GaussianMixture(np.asarray(weights), tuple(comps))

    def unlabeled_phd(self) -> GaussianMixture:
        """Pooled first-moment density: labeled components over all labels."""
        weights: list[float] = []
        comps: list[GaussianJoint] = []
        for lab in self.space:
            phd = self.labeled_phd(lab)
            weights.extend(phd.weights.tolist())
            comps.extend(phd.components)
        return GaussianMixture(np.asarray(weights), tuple(comps))

    def cardinality(self) -> CardinalityDistribution:
        return cardinality_from_weights(self.weights)

    def mean_cardinality(self) -> float:
        return self.cardinality().mean()

    # ------------------------------------------------------------------
    # stratum evaluation surface

    def log_subset_weight(self, subset: LabelSet) -> float:
        w = self.weight_of(subset)
        return math.log(w) if w > 0 else -np.inf

    def conditional_logpdf(self, subset: LabelSet, points: np.ndarray) -> np.ndarray:
        out = self.conditional(subset).logpdf(np.atleast_2d(points))
        return np.asarray(out).reshape(-1)

    def conditional_grid_logpdf(self, subset: LabelSet, axes: Sequence[np.ndarray]) -> np.ndarray:
        shape = tuple(len(a) for a in axes)
        nodes = meshgrid_nodes(list(axes))
        return self.conditional_logpdf(subset, nodes).reshape(shape)

    def stratum_bounds(self, subset: LabelSet, sigma_mult: float = 8.0) -> "list[tuple[float, float]] | None":
        g = self.conditionals.get(subset)
        return None if g is None else g.bounds(sigma_mult)
