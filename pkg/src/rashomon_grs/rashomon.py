"""Rashomon-set boundary, membership test and the admitted-model container."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .data import LossKind, Perturbation
from .models import PerturbedPredictor


class Boundary(str, enum.Enum):
    MULTIPLICATIVE = "multiplicative"
    ADDITIVE = "additive"


@dataclass(frozen=True)
class RashomonConfig:
    epsilon_hat: float
    boundary: Boundary = Boundary.MULTIPLICATIVE
    loss_kind: LossKind = LossKind.MSE
    sparsity_tolerance: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        object.__setattr__(self, "loss_kind", LossKind.parse(self.loss_kind))
        if not self.epsilon_hat >= 0:
            raise ValueError(f"epsilon_hat must be >= 0, got {self.epsilon_hat}")
        if not self.sparsity_tolerance >= 0:
            raise ValueError(f"sparsity_tolerance must be >= 0, got {self.sparsity_tolerance}")

    def with_epsilon(self, epsilon_hat: float) -> "RashomonConfig":
        return RashomonConfig(epsilon_hat, self.boundary, self.loss_kind, self.sparsity_tolerance)


def rashomon_threshold(config: RashomonConfig, ref_loss: float) -> float:
    """Absolute loss budget: ``eps * ref_loss`` (multiplicative) or ``eps`` (additive)."""
    if ref_loss < 0:
        raise ValueError(f"reference loss must be >= 0, got {ref_loss}")
    if config.boundary is Boundary.ADDITIVE:
        return float(config.epsilon_hat)
    return float(config.epsilon_hat * ref_loss)


def is_member(candidate_loss: float, ref_loss: float, config: RashomonConfig) -> bool:
    # Inclusive boundary.
    return bool(candidate_loss <= ref_loss + rashomon_threshold(config, ref_loss))


@dataclass
class SampledModel:
    """One element of a sampled set.

    GRS members and random-input candidates are the reference predictor
    applied to perturbed inputs; weight-noise candidates carry their own
    ``model`` instead and keep an identity perturbation.
    """

    perturbation: Perturbation
    source: dict
    ref_loss_value: float
    model: object = None
    attribution: dict | None = None
    model_id: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.ref_loss_value) and self.ref_loss_value >= 0):
            raise ValueError(f"sampled model loss must be finite and >= 0, got {self.ref_loss_value}")


class Rejected(str, enum.Enum):
    BOUNDARY = "boundary"
    REDUNDANT = "redundant"


@dataclass
class Admission:
    admitted: bool
    reason: Rejected | None = None

    def __bool__(self):
        return self.admitted


def _chebyshev(a: dict, b: dict) -> float:
    return max(abs(a[k] - b[k]) for k in a) if a else 0.0


@dataclass
class RashomonSubset:
    reference: object
    ref_loss: float
    config: RashomonConfig
    members: list = field(default_factory=list)
    rejected_count: int = 0
    rejections: dict = field(default_factory=lambda: {r.value: 0 for r in Rejected})

    @classmethod
    def start(cls, reference, ref_loss: float, config: RashomonConfig, attribution: dict | None,
              p: int) -> "RashomonSubset":
        sub = cls(reference, float(ref_loss), config)
        sub.members.append(SampledModel(Perturbation.identity(p), {"method": "reference"},
                                        float(ref_loss), attribution=attribution, model_id="ref"))
        return sub

    @property
    def threshold(self) -> float:
        return rashomon_threshold(self.config, self.ref_loss)

    @property
    def boundary_loss(self) -> float:
        return self.ref_loss + self.threshold

    @property
    def n_searched(self) -> int:
        return len(self.members) + self.rejected_count

    def predictor(self, member: SampledModel):
        if member.model is not None:
            return member.model
        if member.perturbation.is_identity():
            return self.reference
        return PerturbedPredictor(self.reference, member.perturbation)

    def admit(self, candidate: SampledModel, attribution: dict | None = None) -> Admission:
        """Admit ``candidate`` if it is inside the boundary and not redundant.

        Redundancy is a Chebyshev distance over attribution scores at or
        below ``config.sparsity_tolerance`` to any existing member.
        """
        if attribution is not None:
            candidate.attribution = attribution
        if not is_member(candidate.ref_loss_value, self.ref_loss, self.config):
            self._reject(Rejected.BOUNDARY)
            return Admission(False, Rejected.BOUNDARY)
        att = candidate.attribution
        if att is not None:
            for m in self.members:
                if m.attribution is None:
                    continue
                if set(m.attribution) != set(att):
                    raise ValueError("attribution subsets differ from existing members")
                if _chebyshev(att, m.attribution) <= self.config.sparsity_tolerance:
                    self._reject(Rejected.REDUNDANT)
                    return Admission(False, Rejected.REDUNDANT)
        if not candidate.model_id:
            candidate.model_id = f"m{len(self.members):04d}"
        self.members.append(candidate)
        return Admission(True)

    def _reject(self, reason: Rejected) -> None:
        self.rejected_count += 1
        self.rejections[reason.value] += 1

    def truncated(self, keep) -> "RashomonSubset":
        """Shallow copy keeping members for which ``keep(member)`` is true."""
        out = RashomonSubset(self.reference, self.ref_loss, self.config)
        out.members = [m for m in self.members if keep(m)]
        return out


def admit(subset: RashomonSubset, candidate: SampledModel, attribution: dict | None = None) -> Admission:
    return subset.admit(candidate, attribution)
