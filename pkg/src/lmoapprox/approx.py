"""Principled approximations of a factorized labeled multi-object density.

Four constructions, each preserving specific statistics of the original:

* hypothesis-wise product form (``DeltaGLMBDensity``): keeps every subset
  weight and replaces each conditional joint by the product of its
  single-label marginals, so the cardinality distribution and both
  intensity functions survive exactly;
* independent Bernoulli tracks (``LMBDensity``): one existence probability
  and one spatial mixture per label, matching the labeled intensity and
  the cardinality mean;
* i.i.d. clustering (``LIIDDensity``): a shared spatial density plus the
  original cardinality distribution, matching the unlabeled intensity;
* Poisson (``LPDensity``): the shared spatial density with Poisson counts
  at the mean cardinality, matching the unlabeled intensity only.

The clustering and Poisson forms put their mass on canonical prefix label
sets only, so they assign zero density to states whose labels are not a
prefix of the space.

``integral_cost`` counts the Euclidean integrals behind the set integral
of each representation, per state-space power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .gaussian import GaussianJoint, GaussianMixture
from .labelspace import (
    NORMALIZATION_TOL,
    CardinalityDistribution,
    Label,
    LabelSet,
    LabelSpace,
    WeightTable,
    cardinality_from_weights,
)
from .lmo import (
    FactorizedStrataMixin,
    LabeledState,
    LMODensity,
    ProductConditionalMixin,
)

__all__ = [
    "DeltaGLMBHypothesis",
    "DeltaGLMBDensity",
    "BernoulliTrack",
    "LMBDensity",
    "LIIDDensity",
    "LPDensity",
    "CostProfile",
    "approx_delta_glmb",
    "approx_lmb",
    "approx_liid",
    "approx_lp",
    "lmb_cardinality",
    "lmb_labeled_phd",
    "liid_alpha",
    "lp_alpha",
    "integral_cost",
    "COST_KINDS",
]

_UNIT_MASS_TOL = 1e-9


def _check_labels_in_space(X: LabeledState, space: LabelSpace) -> None:
    for _, lab in X.pairs:
        if lab not in space:
            raise ValueError(f"label {lab} outside the density's label space")


@dataclass(frozen=True, eq=False)
class DeltaGLMBHypothesis:
    """One existence hypothesis: a subset weight and, per member label, a
    normalized single-label spatial density."""

    weight: float
    spatials: Mapping[Label, GaussianJoint]

    def __post_init__(self) -> None:
        if self.weight < 0:
            raise ValueError(f"hypothesis weight must be nonnegative, got {self.weight}")
        object.__setattr__(self, "spatials", dict(self.spatials))


@dataclass(frozen=True, eq=False)
class DeltaGLMBDensity(FactorizedStrataMixin, ProductConditionalMixin):
    """Mixture over label subsets with per-hypothesis product spatials."""

    space: LabelSpace
    state_dim: int
    hypotheses: Mapping[LabelSet, DeltaGLMBHypothesis]

    def __post_init__(self) -> None:
        hyps = dict(self.hypotheses)
        total = math.fsum(h.weight for h in hyps.values())
        if abs(total - 1.0) > _UNIT_MASS_TOL:
            raise ValueError(f"hypothesis weights sum to {total!r}, expected 1")
        for subset, hyp in hyps.items():
            if set(hyp.spatials) != set(subset):
                raise ValueError(f"hypothesis {subset} must carry one spatial per member label")
            for lab, g in hyp.spatials.items():
                if g.block != (lab,):
                    raise ValueError(f"spatial for {lab} in hypothesis {subset} has block {g.block}")
        object.__setattr__(self, "hypotheses", hyps)

    def weight_of(self, subset: LabelSet) -> float:
        hyp = self.hypotheses.get(subset)
        return hyp.weight if hyp is not None else 0.0

    def log_subset_weight(self, subset: LabelSet) -> float:
        w = self.weight_of(subset)
        return math.log(w) if w > 0 else -np.inf

    def label_logpdf(self, subset: LabelSet, label: Label, points: np.ndarray) -> np.ndarray:
        hyp = self.hypotheses.get(subset)
        if hyp is None:
            return np.full(np.atleast_2d(points).shape[0], -np.inf)
        out = hyp.spatials[label].logpdf(np.atleast_2d(points))
        return np.asarray(out).reshape(-1)

    def density_at(self, X: LabeledState) -> float:
        _check_labels_in_space(X, self.space)
        subset = X.labels
        hyp = self.hypotheses.get(subset)
        if hyp is None:
            return 0.0
        value = hyp.weight
        for vec, lab in X.pairs:
            value *= float(hyp.spatials[lab].pdf(vec))
        return value

    def labeled_phd(self, label: Label) -> GaussianMixture:
        """Intensity of one label, summed over the hypotheses containing it."""
        if label not in self.space:
            raise ValueError(f"label {label} outside the density's label space")
        weights: list[float] = []
        comps: list[GaussianJoint] = []
        for subset, hyp in self.hypotheses.items():
            if label in subset and hyp.weight > 0:
                weights.append(hyp.weight)
                comps.append(hyp.spatials[label])
        return GaussianMixture(np.asarray(weights), tuple(comps))

    def cardinality(self) -> CardinalityDistribution:
        table = WeightTable(self.space, {s: h.weight for s, h in self.hypotheses.items()})
        return cardinality_from_weights(table)

    def stratum_bounds(self, subset: LabelSet, sigma_mult: float = 8.0) -> "list[tuple[float, float]] | None":
        hyp = self.hypotheses.get(subset)
        if hyp is None or len(subset) == 0:
            return None
        out: list[tuple[float, float]] = []
        for lab in subset:
            out.extend(hyp.spatials[lab].bounds(sigma_mult))
        return out

    def to_lmo(self) -> LMODensity:
        """Repackage as a factorized density with block-diagonal joints."""
        table = WeightTable(self.space, {s: h.weight for s, h in self.hypotheses.items()})
        conditionals: dict[LabelSet, GaussianJoint] = {}
        d = self.state_dim
        for subset, hyp in self.hypotheses.items():
            if len(subset) == 0 or hyp.weight == 0:
                continue
            dim = len(subset) * d
            mean = np.zeros(dim)
            cov = np.zeros((dim, dim))
            for j, lab in enumerate(subset):
                g = hyp.spatials[lab]
                sl = slice(j * d, (j + 1) * d)
                mean[sl] = g.mean
                cov[sl, sl] = g.cov
            conditionals[subset] = GaussianJoint(subset.members, mean, cov, d)
        return LMODensity(self.space, table, conditionals, d)


@dataclass(frozen=True, eq=False)
class BernoulliTrack:
    """Existence probability plus spatial density of one label."""

    r: float
    density: GaussianMixture

    def __post_init__(self) -> None:
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"existence probability must lie in [0, 1], got {self.r}")
        if len(self.density) > 0:
            total = self.density.integral()
            if abs(total - 1.0) > _UNIT_MASS_TOL:
                raise ValueError(f"track density has mass {total!r}, expected 1")
        elif self.r > 0:
            raise ValueError("a track with positive existence needs a spatial density")


@dataclass(frozen=True, eq=False)
class LMBDensity(FactorizedStrataMixin, ProductConditionalMixin):
    """Independent Bernoulli tracks, one per label of the space."""

    space: LabelSpace
    state_dim: int
    tracks: Mapping[Label, BernoulliTrack]

    def __post_init__(self) -> None:
        tracks = dict(self.tracks)
        if set(tracks) != set(self.space):
            raise ValueError("exactly one track per label of the space is required")
        object.__setattr__(self, "tracks", tracks)

    def track(self, label: Label) -> BernoulliTrack:
        try:
            return self.tracks[label]
        except KeyError:
            raise ValueError(f"label {label} outside the density's label space") from None

    def weight_of(self, subset: LabelSet) -> float:
        value = 1.0
        for lab in self.space:
            r = self.tracks[lab].r
            value *= r if lab in subset else (1.0 - r)
        return value

    def log_subset_weight(self, subset: LabelSet) -> float:
        w = self.weight_of(subset)
        return math.log(w) if w > 0 else -np.inf

    def label_logpdf(self, subset: LabelSet, label: Label, points: np.ndarray) -> np.ndarray:
        del subset  # track spatials do not depend on the hypothesis
        return self.track(label).density.log_evaluate(points)

    def density_at(self, X: LabeledState) -> float:
        _check_labels_in_space(X, self.space)
        value = self.weight_of(X.labels)
        if value == 0.0:
            return 0.0
        for vec, lab in X.pairs:
            value *= self.tracks[lab].density.evaluate(vec)
        return value

    def labeled_phd(self, label: Label) -> GaussianMixture:
        track = self.track(label)
        return track.density.scaled(track.r)

    def cardinality(self) -> CardinalityDistribution:
        return lmb_cardinality(self)

    def mean_cardinality(self) -> float:
        return math.fsum(t.r for t in self.tracks.values())

    def stratum_bounds(self, subset: LabelSet, sigma_mult: float = 8.0) -> "list[tuple[float, float]] | None":
        if len(subset) == 0:
            return None
        out: list[tuple[float, float]] = []
        for lab in subset:
            b = self.track(lab).density.bounds(sigma_mult)
            if b is None:
                return None
            out.extend(b)
        return out


class _SharedSpatialDensity(FactorizedStrataMixin, ProductConditionalMixin):
    """Common machinery for the clustering and Poisson forms: every object
    draws from one shared spatial density and only canonical prefix label
    sets carry weight."""

    def _count_weight(self, n: int) -> float:
        raise NotImplementedError

    def weight_of(self, subset: LabelSet) -> float:
        if subset != self.space.prefix(len(subset)):
            return 0.0
        return self._count_weight(len(subset))

    def log_subset_weight(self, subset: LabelSet) -> float:
        w = self.weight_of(subset)
        return math.log(w) if w > 0 else -np.inf

    def label_logpdf(self, subset: LabelSet, label: Label, points: np.ndarray) -> np.ndarray:
        del subset, label  # one shared spatial density for every object
        return self.spatial.log_evaluate(points)

    def density_at(self, X: LabeledState) -> float:
        _check_labels_in_space(X, self.space)
        value = self.weight_of(X.labels)
        if value == 0.0:
            return 0.0
        for vec, _ in X.pairs:
            value *= self.spatial.evaluate(vec)
        return value

    def stratum_bounds(self, subset: LabelSet, sigma_mult: float = 8.0) -> "list[tuple[float, float]] | None":
        if len(subset) == 0:
            return None
        per_label = self.spatial.bounds(sigma_mult)
        if per_label is None:
            return None
        return per_label * len(subset)


@dataclass(frozen=True, eq=False)
class LIIDDensity(_SharedSpatialDensity):
    """I.i.d. clustering process: shared spatial density, original counts."""

    space: LabelSpace
    state_dim: int
    rho: CardinalityDistribution
    spatial: GaussianMixture
    vbar: float

    def __post_init__(self) -> None:
        if self.rho.kind != "finite":
            raise ValueError("clustering cardinality must be a finite distribution")
        if self.vbar < 0:
            raise ValueError("total intensity mass cannot be negative")
        if len(self.spatial) > 0:
            total = self.spatial.integral()
            if abs(total - 1.0) > _UNIT_MASS_TOL:
                raise ValueError(f"spatial density has mass {total!r}, expected 1")

    def _count_weight(self, n: int) -> float:
        return self.rho.prob(n)

    def alpha(self, label: Label) -> float:
        return liid_alpha(self, label)

    def labeled_phd(self, label: Label) -> GaussianMixture:
        return self.spatial.scaled(self.alpha(label))

    def unlabeled_phd(self) -> GaussianMixture:
        return self.spatial.scaled(self.vbar)

    def cardinality(self) -> CardinalityDistribution:
        return self.rho


@dataclass(frozen=True, eq=False)
class LPDensity(_SharedSpatialDensity):
    """Poisson process on the label prefix convention: shared spatial
    density, Poisson counts at the preserved intensity mass."""

    space: LabelSpace
    state_dim: int
    rate: float
    spatial: GaussianMixture

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ValueError(f"poisson rate must be positive, got {self.rate}")
        total = self.spatial.integral()
        if abs(total - 1.0) > _UNIT_MASS_TOL:
            raise ValueError(f"spatial density has mass {total!r}, expected 1")

    def _count_weight(self, n: int) -> float:
        return float(stats.poisson.pmf(n, self.rate))

    def alpha(self, label: Label) -> float:
        return lp_alpha(self, label)

    def labeled_phd(self, label: Label) -> GaussianMixture:
        return self.spatial.scaled(self.alpha(label))

    def unlabeled_phd(self) -> GaussianMixture:
        return self.spatial.scaled(self.rate)

    def cardinality(self) -> CardinalityDistribution:
        return CardinalityDistribution.poisson(self.rate)


# ----------------------------------------------------------------------
# constructors


def approx_delta_glmb(pi: LMODensity) -> DeltaGLMBDensity:
    """Replace each conditional joint by the product of its single-label
    marginals, keeping every subset weight.

    Preserves the cardinality distribution exactly and the labeled (hence
    unlabeled) intensity pointwise.
    """
    pi.require_valid()
    hypotheses: dict[LabelSet, DeltaGLMBHypothesis] = {}
    for subset, w in pi.weights.nonzero():
        spatials = {lab: pi.conditional_marginal(subset, lab) for lab in subset}
        hypotheses[subset] = DeltaGLMBHypothesis(w, spatials)
    return DeltaGLMBDensity(pi.space, pi.state_dim, hypotheses)


def approx_lmb(pi: LMODensity) -> LMBDensity:
    """Independent Bernoulli tracks matching the labeled intensity.

    Each label's existence probability is the summed weight of the subsets
    containing it, and its spatial density is the labeled intensity rescaled
    to unit mass.  Labels never touched by a positive-weight subset keep a
    zero-existence track with an empty spatial mixture, so the label space
    of the approximation equals the original's.
    """
    pi.require_valid()
    tracks: dict[Label, BernoulliTrack] = {}
    for lab in pi.space:
        touching = [(s, w) for s, w in pi.weights.nonzero() if lab in s]
        r = math.fsum(w for _, w in touching)
        if r == 0.0:
            tracks[lab] = BernoulliTrack(0.0, GaussianMixture.empty(pi.state_dim))
            continue
        if r > 1.0:
            if r > 1.0 + NORMALIZATION_TOL:
                raise ValueError(f"existence mass {r!r} for label {lab} exceeds 1")
            r = 1.0
        comps = tuple(pi.conditional_marginal(s, lab) for s, _ in touching)
        weights = np.array([w for _, w in touching]) / r
        tracks[lab] = BernoulliTrack(r, GaussianMixture(weights, comps))
    return LMBDensity(pi.space, pi.state_dim, tracks)


def approx_liid(pi: LMODensity) -> LIIDDensity:
    """Shared-spatial clustering process keeping the original cardinality
    distribution and the unlabeled intensity.

    A density concentrated on the empty set degenerates to an empty
    spatial mixture with all count mass at zero.
    """
    pi.require_valid()
    rho = cardinality_from_weights(pi.weights)
    v = pi.unlabeled_phd()
    vbar = v.integral()
    if vbar == 0.0:
        return LIIDDensity(
            pi.space, pi.state_dim, rho, GaussianMixture.empty(pi.state_dim), 0.0
        )
    spatial = v.scaled(1.0 / vbar)
    return LIIDDensity(pi.space, pi.state_dim, rho, spatial, vbar)


def approx_lp(pi: LMODensity) -> LPDensity:
    """Poisson process keeping the unlabeled intensity; its rate is the
    mean cardinality of the original."""
    pi.require_valid()
    v = pi.unlabeled_phd()
    rate = v.integral()
    if rate == 0.0:
        raise ValueError("cannot build a Poisson approximation with zero intensity mass")
    spatial = v.scaled(1.0 / rate)
    return LPDensity(pi.space, pi.state_dim, rate, spatial)


# ----------------------------------------------------------------------
# moments and evaluators


def lmb_cardinality(m: LMBDensity) -> CardinalityDistribution:
    """Object-count distribution of independent Bernoulli tracks.

    Computed by convolving the per-track two-point distributions, which is
    algebraically equal to the closed-form product expression when every
    existence probability is below one and stays finite when some equal one.
    """
    probs = np.array([1.0])
    for lab in m.space:
        r = m.tracks[lab].r
        probs = np.convolve(probs, np.array([1.0 - r, r]))
    return CardinalityDistribution(probs)


def lmb_labeled_phd(m: LMBDensity, label: Label) -> GaussianMixture:
    """Intensity of one track: its spatial density scaled by existence."""
    return m.labeled_phd(label)


def _tail_alpha(probs: np.ndarray, position: int) -> float:
    return math.fsum(probs[position + 1 :])


def liid_alpha(m: LIIDDensity, label: Label) -> float:
    """Per-label existence mass of the clustering process.

    Under the prefix labeling convention, the label at canonical position
    ``k`` exists exactly when the count reaches ``k``, so its mass is the
    cardinality tail sum from ``k``.
    """
    pos = m.space.position(label)
    return _tail_alpha(m.rho.probs, pos)


def lp_alpha(m: LPDensity, label: Label) -> float:
    """Per-label existence mass of the Poisson form (truncated tail sum)."""
    pos = m.space.position(label)
    return _tail_alpha(m.cardinality().probs, pos)


@dataclass(frozen=True)
class CostProfile:
    """Euclidean-integral counts per state-space power for one set integral."""

    counts: Mapping[int, int]

    def __post_init__(self) -> None:
        counts = {int(k): int(v) for k, v in dict(self.counts).items()}
        if any(k < 1 for k in counts):
            raise ValueError("state-space powers must be positive")
        if any(v < 0 for v in counts.values()):
            raise ValueError("integral counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    def count(self, power: int) -> int:
        return self.counts.get(power, 0)

    def total(self) -> int:
        return sum(self.counts.values())


COST_KINDS = ("lmo", "delta_glmb", "lmb", "lp", "liid")


def _normalize_kind(kind: str) -> str:
    key = kind.strip().lower().replace("-", "_").replace(" ", "_")
    key = key.replace("δ", "delta")  # allow the Greek spelling
    if key == "deltaglmb":
        key = "delta_glmb"
    if key not in COST_KINDS:
        raise ValueError(f"unknown density kind {kind!r}; expected one of {COST_KINDS}")
    return key


def integral_cost(kind: str, n_labels: int) -> CostProfile:
    """How many Euclidean integrals, on which state-space powers, the set
    integral of each representation requires.

    The factorized original needs one integral per nonempty subset, so
    ``C(n, k)`` integrals on the ``k``-th power.  The hypothesis-wise
    product form needs one single-object integral per (hypothesis, member)
    pair; Bernoulli tracks need one per label; the shared-spatial forms
    need a single one.
    """
    if n_labels < 1:
        raise ValueError(f"need at least one label, got {n_labels}")
    key = _normalize_kind(kind)
    counts = {k: 0 for k in range(1, n_labels + 1)}
    if key == "lmo":
        for k in range(1, n_labels + 1):
            counts[k] = comb(n_labels, k)
    elif key == "delta_glmb":
        counts[1] = sum(k * comb(n_labels, k) for k in range(1, n_labels + 1))
    elif key == "lmb":
        counts[1] = n_labels
    else:  # lp, liid
        counts[1] = 1
    return CostProfile(counts)
