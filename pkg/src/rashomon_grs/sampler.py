"""Epsilon-subgradient sampling along feature directions, plus random baselines.

The walk starts at the reference model. For every direction (a feature or
a feature pair) and sign, the columns of that direction are rescaled by
``1 + sign * lambda``; a one-dimensional bracketing/bisection search picks
``lambda`` so that the loss increase over the reference reaches the next
level of an increasing tolerance ladder. Each accepted point is one
sampled model. Targets depend only on the ladder, never on the final
tolerance, so runs on a ladder prefix reproduce the leading members of
the full run.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .attribution import Estimator, attribution_set
from .data import Dataset, LossKind, Perturbation, empirical_loss, permutations_for, perturb_columns, \
    subset_family, subset_index, subset_label
from .models import MlpModel, ModelError, PerturbedPredictor, predict
from .rashomon import Boundary, RashomonConfig, RashomonSubset, SampledModel

logger = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class LineSearch:
    initial_lambda: float = 1e-3
    growth: float = 2.0
    max_doublings: int = 40
    bisection_tol: float = 1e-6
    max_bisections: int = 200

    def __post_init__(self):
        if not self.initial_lambda > 0:
            raise ValueError("initial_lambda must be > 0")
        if not self.growth > 1:
            raise ValueError("growth must be > 1")
        if self.max_doublings < 0 or self.max_bisections < 1:
            raise ValueError("max_doublings must be >= 0 and max_bisections >= 1")
        if not self.bisection_tol > 0:
            raise ValueError("bisection_tol must be > 0")


@dataclass(frozen=True)
class SamplerConfig:
    levels: int = 5
    schedule: str = "linear"
    gamma: float = 2.0
    epsilon_start: float | None = None
    ladder: tuple = ()
    directions: tuple | None = None
    orders: tuple = (1, 2)
    signs: str = "both"
    line_search: LineSearch = LineSearch()
    samples_per_level: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.schedule not in ("linear", "geometric", "explicit"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "geometric":
            if not self.gamma > 1:
                raise ValueError("gamma must be > 1 for the geometric schedule")
            if self.epsilon_start is None or not self.epsilon_start > 0:
                raise ValueError("geometric schedule needs epsilon_start > 0")
        if self.schedule == "explicit" and not self.ladder:
            raise ValueError("explicit schedule needs a non-empty ladder")
        if self.signs not in ("+", "-", "both"):
            raise ValueError(f"signs must be '+', '-' or 'both', got {self.signs!r}")
        if self.samples_per_level < 1:
            raise ValueError("samples_per_level must be >= 1")

    def sign_list(self) -> list:
        return {"+": [1], "-": [-1], "both": [1, -1]}[self.signs]

    def direction_list(self, p: int) -> list:
        if self.directions is None:
            return subset_family(p, self.orders)
        dirs = [subset_index(s, p) for s in self.directions]
        return sorted(set(dirs), key=lambda s: (len(s), s))


def epsilon_schedule(config: SamplerConfig, epsilon_hat: float) -> list:
    """Increasing tolerance ladder ending exactly at ``epsilon_hat``."""
    if epsilon_hat < 0:
        raise ValueError(f"epsilon_hat must be >= 0, got {epsilon_hat}")
    if epsilon_hat == 0:
        return [0.0]
    if config.schedule == "linear":
        K = config.levels
        out = [i * epsilon_hat / K for i in range(1, K)]
        return out + [float(epsilon_hat)]
    if config.schedule == "geometric":
        e = float(config.epsilon_start)
        if not e > 0:
            raise ValueError("geometric schedule needs epsilon_start > 0")
        out = []
        while e < epsilon_hat:
            out.append(e)
            e = config.gamma * e
        return out + [float(epsilon_hat)]
    out = sorted(float(e) for e in set(config.ladder) if 0 < e < epsilon_hat)
    return out + [float(epsilon_hat)]


def nested_ladder(epsilons: Sequence[float], levels: int) -> tuple:
    """Ladder shared by a list of tolerances so that every run is a prefix of the largest."""
    top = max(epsilons)
    rungs = {round(i * top / levels, 15) for i in range(1, levels + 1)} | {float(e) for e in epsilons}
    return tuple(sorted(e for e in rungs if e > 0))


# --------------------------------------------------------------------------
# line search
# --------------------------------------------------------------------------

@dataclass
class StepResult:
    lam: float
    delta: float


def search_step(delta_fn: Callable[[float], float], lo: float, hi: float, ls: LineSearch,
                tol_abs: float, label: str = "") -> StepResult | None:
    """Find ``lam > 0`` with ``lo <= delta_fn(lam) <= hi``.

    Grows ``lam`` geometrically until the increase reaches ``lo``, then
    bisects the last bracket. When the band is narrower than the function
    resolution the feasible end of the bracket is returned once it is
    within ``tol_abs`` of ``lo``; the returned increase never exceeds ``hi``.
    Returns None when the increase never reaches ``lo`` (flat direction).
    """
    if hi < lo:
        raise ValueError(f"empty band [{lo}, {hi}]")

    def evaluate(lam):
        v = delta_fn(lam)
        if math.isnan(v):
            raise SamplerError(f"non-finite loss along direction {label} at lambda={lam:g}")
        return v

    lam_lo, d_lo = 0.0, None
    lam = ls.initial_lambda
    d = evaluate(lam)
    doublings = 0
    while d < lo:
        if doublings >= ls.max_doublings:
            return None
        lam_lo, d_lo = lam, d
        lam *= ls.growth
        d = evaluate(lam)
        doublings += 1
    if d <= hi:
        return StepResult(lam, d)

    lam_hi = lam
    if d_lo is None:
        d_lo = evaluate(0.0)
    for _ in range(ls.max_bisections):
        if lam_lo > 0 and lo - d_lo <= tol_abs:
            return StepResult(lam_lo, d_lo)
        mid = 0.5 * (lam_lo + lam_hi)
        if mid <= lam_lo or mid >= lam_hi:
            break
        dm = evaluate(mid)
        if lo <= dm <= hi:
            return StepResult(mid, dm)
        if dm < lo:
            lam_lo, d_lo = mid, dm
        else:
            lam_hi = mid
    if lam_lo > 0 and d_lo <= hi:
        return StepResult(lam_lo, d_lo)
    return None


def _scaled(current: Perturbation, cols, sign: int, lam: float) -> Perturbation:
    tau = current.tau.copy()
    tau[list(cols)] = tau[list(cols)] * (1.0 + sign * lam)
    return Perturbation(tau, current.zeta)


def line_search_step(f_ref, current: Perturbation, direction, sign: int, band: tuple, ls: LineSearch,
                     d: Dataset, kind, ref_loss: float | None = None, tol_abs: float | None = None):
    """One search along ``direction`` from the point ``current``.

    ``band`` is the target range of the loss increase over ``ref_loss``
    (the reference model's loss on ``d``). Returns ``(StepResult,
    Perturbation)`` or None when the direction is flat.
    """
    kind = LossKind.parse(kind)
    direction = subset_index(direction, d.p)
    if ref_loss is None:
        ref_loss = empirical_loss(predict(f_ref, d.X), d.Y, kind)
    if tol_abs is None:
        tol_abs = ls.bisection_tol * (ref_loss if ref_loss > 0 else max(band[1], 1.0))

    def delta(lam):
        # Inputs the model rejects count as infinitely bad, which bisection steps back from.
        try:
            out = predict(f_ref, perturb_columns(d.X, _scaled(current, direction, sign, lam)))
        except ModelError:
            return math.inf
        if not np.all(np.isfinite(out)):
            return math.inf
        return empirical_loss(out, d.Y, kind) - ref_loss

    res = search_step(delta, band[0], band[1], ls, tol_abs, f"{direction}{'+' if sign > 0 else '-'}")
    if res is None:
        return None
    return res, _scaled(current, direction, sign, res.lam)


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

@dataclass
class TrajectoryPoint:
    direction: tuple
    sign: int
    level: int
    epsilon: float
    lam: float | None
    loss: float | None
    model_id: str = ""


@dataclass
class SampleResult:
    subset: RashomonSubset
    trajectories: dict = field(default_factory=dict)
    schedule: list = field(default_factory=list)
    subsets: list = field(default_factory=list)
    method: str = "grs"

    @property
    def threshold(self) -> float:
        return self.subset.threshold


def _effective_config(rconfig: RashomonConfig, ref_loss: float) -> RashomonConfig:
    if ref_loss == 0 and rconfig.boundary is Boundary.MULTIPLICATIVE and rconfig.epsilon_hat > 0:
        msg = "reference loss is 0; switching to the additive boundary"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return RashomonConfig(rconfig.epsilon_hat, Boundary.ADDITIVE, rconfig.loss_kind,
                              rconfig.sparsity_tolerance)
    return rconfig


def _reference(f_ref, d: Dataset, rconfig: RashomonConfig, est: Estimator, subsets):
    kind = rconfig.loss_kind
    ref_loss = empirical_loss(predict(f_ref, d.X), d.Y, kind)
    if not math.isfinite(ref_loss):
        raise SamplerError("reference loss is not finite")
    rconfig = _effective_config(rconfig, ref_loss)
    perms = permutations_for(d.n, est.repeats, est.seed) if est.mode == "mc" else None
    ref_att = attribution_set(f_ref, d, subsets, kind, est, "ref", perms)
    sub = RashomonSubset.start(f_ref, ref_loss, rconfig, ref_att.scores, d.p)
    return sub, perms


def grs_sample(f_ref, d: Dataset, rconfig: RashomonConfig, sconfig: SamplerConfig = SamplerConfig(),
               est: Estimator = Estimator(), subsets=None) -> SampleResult:
    """Sample the Rashomon set of ``f_ref`` on ``d`` by per-direction ascent.

    Members are ordered by (level, direction, sign). ``subsets`` is the
    attribution family used for the redundancy check (default: orders 1-2).
    """
    subsets = subset_family(d.p, (1, 2)) if subsets is None else [subset_index(s, d.p) for s in subsets]
    sub, perms = _reference(f_ref, d, rconfig, est, subsets)
    kind = sub.config.loss_kind
    result = SampleResult(sub, subsets=subsets, method="grs")
    theta = sub.threshold
    if theta == 0:
        result.schedule = [0.0]
        return result
    schedule = epsilon_schedule(sconfig, sub.config.epsilon_hat)
    result.schedule = schedule
    scale = sub.ref_loss if sub.config.boundary is Boundary.MULTIPLICATIVE else 1.0
    ls = sconfig.line_search
    tol_abs = ls.bisection_tol * (sub.ref_loss if sub.ref_loss > 0 else theta)

    directions = sconfig.direction_list(d.p)
    signs = sconfig.sign_list()
    state = {(s, g): Perturbation.identity(d.p) for s in directions for g in signs}
    for key in state:
        result.trajectories[key] = []

    prev = 0.0
    for level, eps in enumerate(schedule, start=1):
        spl = sconfig.samples_per_level
        targets = [prev + (eps - prev) * t / spl for t in range(1, spl + 1)]
        for target in targets:
            target_abs = min(target * scale, theta)
            for s in directions:
                for g in signs:
                    step = line_search_step(f_ref, state[(s, g)], s, g, (target_abs, target_abs), ls, d, kind,
                                            sub.ref_loss, tol_abs)
                    traj = result.trajectories[(s, g)]
                    if step is None:
                        traj.append(TrajectoryPoint(s, g, level, target, None, None))
                        continue
                    res, pert = step
                    state[(s, g)] = pert
                    loss = sub.ref_loss + res.delta
                    cand = SampledModel(pert, {"method": "grs", "direction": list(s), "sign": g,
                                               "level": level, "epsilon": target}, loss)
                    att = attribution_set(PerturbedPredictor(f_ref, pert), d, subsets, kind, est, "", perms)
                    adm = sub.admit(cand, att.scores)
                    traj.append(TrajectoryPoint(s, g, level, target, res.lam, loss,
                                                cand.model_id if adm else ""))
        prev = eps
    return result


def truncate_to(result: SampleResult, epsilon_hat: float) -> SampleResult:
    """Members of an explicit-ladder run whose level tolerance is within ``epsilon_hat``.

    Equal to a fresh run on the ladder prefix because the walk never
    looks at the final tolerance.
    """
    sub = result.subset
    cfg = sub.config.with_epsilon(epsilon_hat)
    n_levels = sum(1 for e in result.schedule if e <= epsilon_hat)
    out = RashomonSubset(sub.reference, sub.ref_loss, cfg)
    out.members = [m for m in sub.members
                   if m.source.get("method") == "reference" or m.source.get("level", 0) <= n_levels]
    trajs = {k: [pt for pt in v if pt.level <= n_levels] for k, v in result.trajectories.items()}
    return SampleResult(out, trajs, result.schedule[:n_levels], result.subsets, result.method)


def grs_sample_nested(f_ref, d: Dataset, rconfig: RashomonConfig, epsilons: Sequence[float],
                      sconfig: SamplerConfig = SamplerConfig(), est: Estimator = Estimator(), subsets=None) -> dict:
    """One walk on a shared ladder, split into per-tolerance results ``{eps: SampleResult}``."""
    eps_sorted = sorted(set(float(e) for e in epsilons))
    positive = [e for e in eps_sorted if e > 0]
    out = {}
    if positive:
        ladder = nested_ladder(positive, sconfig.levels)
        cfg = SamplerConfig(sconfig.levels, "explicit", sconfig.gamma, sconfig.epsilon_start, ladder,
                            sconfig.directions, sconfig.orders, sconfig.signs, sconfig.line_search,
                            sconfig.samples_per_level, sconfig.seed)
        full = grs_sample(f_ref, d, rconfig.with_epsilon(max(positive)), cfg, est, subsets)
        for e in positive:
            out[e] = truncate_to(full, e)
    if 0.0 in eps_sorted:
        out[0.0] = grs_sample(f_ref, d, rconfig.with_epsilon(0.0), sconfig, est, subsets)
    return out


def _admit_candidates(sub: RashomonSubset, candidates, d: Dataset, subsets, est: Estimator, perms,
                      cache: dict | None) -> None:
    kind = sub.config.loss_kind
    for k, (cand, f) in enumerate(candidates):
        att = None
        if cand.ref_loss_value <= sub.boundary_loss:
            if cache is not None and k in cache:
                att = cache[k]
            else:
                att = attribution_set(f, d, subsets, kind, est, "", perms).scores
                if cache is not None:
                    cache[k] = att
        sub.admit(cand, att)


def baseline_random_input(f_ref, d: Dataset, rconfig: RashomonConfig, n_candidates: int = 200,
                          scale: float = 0.1, seed: int = 0, est: Estimator = Estimator(),
                          subsets=None, cache: dict | None = None) -> SampleResult:
    """Random column rescaling ``tau_i ~ 1 + U(-scale, scale)``, membership-checked.

    ``cache`` (candidate index -> attribution) lets several tolerances
    share one candidate stream without recomputing attributions.
    """
    if n_candidates < 1 or not scale > 0:
        raise ValueError("need n_candidates >= 1 and scale > 0")
    subsets = subset_family(d.p, (1, 2)) if subsets is None else [subset_index(s, d.p) for s in subsets]
    sub, perms = _reference(f_ref, d, rconfig, est, subsets)
    rng = np.random.default_rng(seed)
    candidates = []
    for k in range(n_candidates):
        pert = Perturbation(1.0 + rng.uniform(-scale, scale, d.p))
        f = PerturbedPredictor(f_ref, pert)
        loss = _finite_loss(f, d, sub.config.loss_kind)
        candidates.append((SampledModel(pert, {"method": "random-input", "candidate": k}, loss), f))
    _admit_candidates(sub, candidates, d, subsets, est, perms, cache)
    return SampleResult(sub, subsets=subsets, method="random-input")


def baseline_random_weights(f_ref, d: Dataset, rconfig: RashomonConfig, n_candidates: int = 200,
                            scale: float = 0.01, seed: int = 0, est: Estimator = Estimator(),
                            subsets=None, cache: dict | None = None) -> SampleResult:
    """Gaussian weight noise on an MLP reference (no adversarial step)."""
    if not isinstance(f_ref, MlpModel):
        raise TypeError("random-weight baseline needs an MlpModel reference")
    if n_candidates < 1 or scale < 0:
        raise ValueError("need n_candidates >= 1 and scale >= 0")
    subsets = subset_family(d.p, (1, 2)) if subsets is None else [subset_index(s, d.p) for s in subsets]
    sub, perms = _reference(f_ref, d, rconfig, est, subsets)
    rng = np.random.default_rng(seed)
    candidates = []
    for k in range(n_candidates):
        f = f_ref.with_weight_noise(rng, scale)
        loss = _finite_loss(f, d, sub.config.loss_kind)
        cand = SampledModel(Perturbation.identity(d.p), {"method": "random-weight", "candidate": k}, loss,
                            model=f)
        candidates.append((cand, f))
    _admit_candidates(sub, candidates, d, subsets, est, perms, cache)
    return SampleResult(sub, subsets=subsets, method="random-weight")


def _finite_loss(f, d: Dataset, kind) -> float:
    try:
        out = predict(f, d.X)
    except ModelError:
        return float("inf")
    if not np.all(np.isfinite(out)):
        return float("inf")
    return empirical_loss(out, d.Y, kind)


# --------------------------------------------------------------------------
# diagnostics and export
# --------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    gaps: dict
    flat: list
    exceeded: list
    max_gap: float


def convergence_report(trajectories: dict, ref_loss: float, threshold: float) -> ConvergenceReport:
    """Distance of each direction's final loss from the boundary ``ref_loss + threshold``."""
    if not trajectories:
        raise ValueError("no trajectories")
    boundary = ref_loss + threshold
    gaps, flat, exceeded = {}, [], []
    for key, pts in trajectories.items():
        if any(pt.loss is not None and pt.loss > boundary for pt in pts):
            exceeded.append(key)
        if not pts or pts[-1].loss is None:
            flat.append(key)
            continue
        gaps[key] = abs(pts[-1].loss - boundary)
    return ConvergenceReport(gaps, flat, exceeded, max(gaps.values()) if gaps else 0.0)


def trajectory_rows(trajectories: dict, names=None) -> list:
    rows = []
    for (s, g), pts in trajectories.items():
        for pt in pts:
            rows.append({
                "direction": subset_label(s, names),
                "sign": "+" if g > 0 else "-",
                "level": pt.level,
                "epsilon": pt.epsilon,
                "lambda": pt.lam,
                "loss": pt.loss,
            })
    rows.sort(key=lambda r: (r["level"], r["epsilon"]))
    return rows


def export_trajectories_csv(trajectories: dict, path, names=None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["direction", "sign", "level", "epsilon", "lambda", "loss"])
        for r in trajectory_rows(trajectories, names):
            w.writerow([r["direction"], r["sign"], r["level"], repr(r["epsilon"]),
                        "" if r["lambda"] is None else repr(r["lambda"]),
                        "" if r["loss"] is None else repr(r["loss"])])
