"""Unit-sphere superposition testbed: composition geometry, margins, and
threshold sweeps.

Compositions are normalized sums of orthonormal concept vectors. Per-coordinate
sums are correctly rounded (math.fsum), so superposition is *bitwise*
permutation-invariant: an order- or binding-swapped composition is the
identical vector, the strongest possible witness that cosine cannot see the
swap. Negation near-misses add a dedicated negation concept instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Cancellation

GEOMETRY_FAMILIES = ("order", "binding", "negation")


@dataclass(frozen=True)
class ConceptSpace:
    """Orthonormal concept directions; the last one is reserved for negation."""

    vectors: np.ndarray = field(repr=False)  # (n, d), orthonormal rows
    noise_angle: float
    seed: int

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def content(self) -> np.ndarray:
        return self.vectors[:-1]

    @property
    def negation_vector(self) -> np.ndarray:
        return self.vectors[-1]


def build_concept_space(
    n_concepts: int = 16, dim: int = 32, seed: int = 42, noise_angle: float = 0.05
) -> ConceptSpace:
    """Gram-Schmidt orthonormalization of a seeded random basis (d >= n)."""
    if dim < n_concepts:
        raise ValueError("dim must be >= n_concepts")
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(n_concepts, dim))
    basis = np.empty_like(raw)
    for i in range(n_concepts):
        v = raw[i]
        for j in range(i):
            v = v - np.dot(v, basis[j]) * basis[j]
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            raise Cancellation("degenerate random basis")
        basis[i] = v / norm
    return ConceptSpace(vectors=basis, noise_angle=noise_angle, seed=seed)


def superpose(vectors: list[np.ndarray]) -> np.ndarray:
    """Normalized sum of unit vectors, exactly permutation-invariant.

    Raises:
        Cancellation: the sum has norm below 1e-9.
    """
    stacked = np.asarray(vectors, dtype=np.float64)
    total = np.array([math.fsum(stacked[:, j]) for j in range(stacked.shape[1])])
    norm = float(np.linalg.norm(total))
    if norm < 1e-9:
        raise Cancellation("superposition cancelled to near-zero norm")
    return total / norm


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    # identical keys are a perfect match by definition, independent of how
    # float dot products round
    if np.array_equal(a, b):
        return 1.0
    return float(np.dot(a, b))


def _rotate_in_tangent(anchor: np.ndarray, angle: float, rng: np.random.Generator):
    direction = rng.normal(size=anchor.shape[0])
    direction -= np.dot(direction, anchor) * anchor
    direction /= np.linalg.norm(direction)
    return np.cos(angle) * anchor + np.sin(angle) * direction


@dataclass(frozen=True)
class IdentityInstance:
    family: str
    anchor: np.ndarray = field(repr=False)
    paraphrase: np.ndarray = field(repr=False)
    near_miss: np.ndarray | None = field(repr=False, default=None)


def build_identity_instances(space: ConceptSpace, count: int) -> list[IdentityInstance]:
    """``count`` (anchor, paraphrase, near-miss) triples per family.

    order/binding: the near-miss is the superposition of a permuted
    constituent list, hence the identical vector. negation: the near-miss
    adds the space's dedicated negation concept.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng([space.seed, 53])
    content = space.content
    instances: list[IdentityInstance] = []
    for family in GEOMETRY_FAMILIES:
        for _ in range(count):
            k = 4 if family == "binding" else int(rng.integers(2, 4))
            idx = rng.choice(content.shape[0], size=k, replace=False)
            constituents = [content[i] for i in idx]
            anchor = superpose(constituents)
            paraphrase = _rotate_in_tangent(anchor, space.noise_angle, rng)
            if family == "negation":
                near_miss = superpose(constituents + [space.negation_vector])
            else:
                perm = rng.permutation(k)
                while np.all(perm == np.arange(k)):
                    perm = rng.permutation(k)
                near_miss = superpose([constituents[i] for i in perm])
            instances.append(IdentityInstance(family, anchor, paraphrase, near_miss))
    return instances


@dataclass(frozen=True)
class FamilyStats:
    margin: float
    min_total_error: float
    best_tau: float
    count: int
    fa_curve: np.ndarray = field(repr=False)
    fr_curve: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class MarginReport:
    grid: np.ndarray = field(repr=False)
    families: dict[str, FamilyStats] = field(default_factory=dict)
    absent_families: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        out = {
            "grid_step": float(self.grid[1] - self.grid[0]),
            "absent_families": list(self.absent_families),
            "families": {},
        }
        for family, stats in self.families.items():
            out["families"][family] = {
                "margin": stats.margin,
                "min_total_error": stats.min_total_error,
                "best_tau": stats.best_tau,
                "count": stats.count,
            }
        return out


def threshold_sweep(
    instances: list[IdentityInstance], grid_step: float = 0.001
) -> MarginReport:
    """False-accept/false-reject rates over the tau grid, per family.

    FA(tau) = share of near-misses accepted (cos >= tau); FR(tau) = share of
    paraphrases rejected. The margin is min(paraphrase cos) - max(near-miss
    cos). Families with no near-miss instances are reported absent.
    """
    if not instances:
        raise ValueError("need at least one instance")
    n_points = int(round(2.0 / grid_step)) + 1
    grid = np.linspace(-1.0, 1.0, n_points)

    by_family: dict[str, tuple[list[float], list[float]]] = {}
    for inst in instances:
        para_cos, near_cos = by_family.setdefault(inst.family, ([], []))
        para_cos.append(_cos(inst.anchor, inst.paraphrase))
        if inst.near_miss is not None:
            near_cos.append(_cos(inst.anchor, inst.near_miss))

    families: dict[str, FamilyStats] = {}
    absent: list[str] = []
    for family in sorted(by_family):
        para_cos, near_cos = by_family[family]
        if not near_cos:
            absent.append(family)
            continue
        para = np.asarray(para_cos)
        near = np.asarray(near_cos)
        fa = (near[None, :] >= grid[:, None]).mean(axis=1)
        fr = (para[None, :] < grid[:, None]).mean(axis=1)
        total = fa + fr
        best = int(np.argmin(total))
        families[family] = FamilyStats(
            margin=float(para.min() - near.max()),
            min_total_error=float(total[best]),
            best_tau=float(grid[best]),
            count=len(near_cos),
            fa_curve=fa,
            fr_curve=fr,
        )
    return MarginReport(grid=grid, families=families, absent_families=tuple(absent))


def write_report_json(report: MarginReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_curves_csv(report: MarginReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("family,tau,false_accept,false_reject\n")
        for family in sorted(report.families):
            stats = report.families[family]
            for tau, fa, fr in zip(report.grid, stats.fa_curve, stats.fr_curve):
                fh.write(f"{family},{tau:.3f},{fa:.6f},{fr:.6f}\n")
