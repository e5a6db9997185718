"""Sample-set schedules, subsampled estimates and their deterministic error bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problem_core import FiniteSumOracle


class ScheduleError(ValueError):
    """A schedule parameterization violates one of its declared conditions."""


FULL = "full"
CONSTANT_FRACTION = "constant_fraction"
GEOMETRIC_GAP = "geometric_gap"
ADAPTIVE_HESSIAN = "adaptive_hessian"


def _clamp(size: float, N: int) -> int:
    return int(min(N, max(1, math.ceil(size - 1e-12))))


def adaptive_hessian_size(k: int, N: int) -> int:
    """``min(floor((1 - 0.95**((k+2)/2)) N), N)``, kept at least 1."""
    return max(1, min(math.floor((1.0 - 0.95 ** ((k + 2) / 2.0)) * N), N))


@dataclass(frozen=True)
class SampleSchedule:
    kind: str
    N: int
    params: dict = field(default_factory=dict)
    horizon: int = 100
    sizes: tuple = ()

    def size(self, k: int) -> int:
        if k < 0:
            raise ValueError("iteration index must be nonnegative")
        if k < len(self.sizes):
            return self.sizes[k]
        return _size_at(self.kind, self.params, self.N, k, self.sizes)

    def __call__(self, k: int) -> int:
        return self.size(k)

    @property
    def is_full(self) -> bool:
        return all(s == self.N for s in self.sizes)


def _size_at(kind, params, N, k, prefix):
    if kind == FULL:
        return N
    if kind == CONSTANT_FRACTION:
        return _clamp(params["p"] * N, N)
    if kind == ADAPTIVE_HESSIAN:
        return adaptive_hessian_size(k, N)
    if kind == GEOMETRIC_GAP:
        r = params["r"]
        j = min(k, len(prefix))
        gap = N - (prefix[j - 1] if j else params["s0"])
        for _ in range(max(j, 1), k + 1):
            if gap == 0:
                break
            gap = min(math.floor(r * gap + 1e-12), gap - 1)
        return N - gap
    raise ScheduleError(f"unknown schedule kind {kind!r}")


def build_schedule(kind: str, params: dict | None, N: int, horizon: int = 100) -> SampleSchedule:
    """Construct and verify a schedule over iterations ``0..horizon``.

    ``geometric_gap`` takes ``r`` in (0, 1) and an initial size ``s0`` (or
    fraction ``frac0``); the gap ``N - b_k`` follows
    ``gap_k = min(floor(r gap_{k-1}), gap_{k-1} - 1)``, so it contracts by ``r``
    and the size grows by at least one sample per iteration until ``N``.
    """
    params = dict(params or {})
    if N < 1:
        raise ScheduleError("N must be positive")
    if horizon < 0:
        raise ScheduleError("horizon must be nonnegative")
    if kind == CONSTANT_FRACTION:
        p = params.get("p")
        if p is None or not 0 < p <= 1:
            raise ScheduleError("constant_fraction requires p in (0, 1]")
    elif kind == GEOMETRIC_GAP:
        r = params.get("r")
        if r is None or not 0 < r < 1:
            raise ScheduleError("geometric_gap requires rate r in (0, 1) (summability)")
        if "s0" not in params:
            params["s0"] = _clamp(params.pop("frac0", 0.5) * N, N)
        params.pop("frac0", None)
        if not 1 <= params["s0"] <= N:
            raise ScheduleError("geometric_gap initial size outside [1, N]")
    elif kind not in (FULL, ADAPTIVE_HESSIAN):
        raise ScheduleError(f"unknown schedule kind {kind!r}")

    sizes = []
    for k in range(horizon + 1):
        sizes.append(_size_at(kind, params, N, k, sizes))
    schedule = SampleSchedule(kind, N, params, horizon, tuple(sizes))
    verify_schedule(schedule)
    return schedule


def verify_schedule(schedule: SampleSchedule) -> None:
    """Re-check the declared conditions on the precomputed horizon."""
    N, sizes = schedule.N, np.asarray(schedule.sizes)
    if sizes.size == 0:
        return
    if sizes.min() < 1 or sizes.max() > N:
        raise ScheduleError("range: sizes must lie in [1, N]")
    if schedule.kind in (GEOMETRIC_GAP, ADAPTIVE_HESSIAN) and np.any(np.diff(sizes) < 0):
        raise ScheduleError("monotonicity: sizes decrease")
    if schedule.kind == GEOMETRIC_GAP:
        r = schedule.params["r"]
        gaps = N - sizes
        if np.any(gaps[1:] > r * gaps[:-1] + 1e-9):
            raise ScheduleError("ratio test: gap does not contract by r")
        if np.any((np.diff(sizes) == 0) & (sizes[1:] < N)):
            raise ScheduleError("strict growth: size stalls below N")
        bound = (N - sizes[0]) / (N * (1 - r))
        if np.cumsum(gaps / N)[-1] > bound + 1e-12:
            raise ScheduleError("summability: partial sums exceed bound")


def full_schedule(N: int, horizon: int = 100) -> SampleSchedule:
    return build_schedule(FULL, None, N, horizon)


def parse_schedule_key(key: str, N: int, horizon: int = 100) -> SampleSchedule:
    """Parse ``full``, ``frac:p``, ``geo:r[:frac0]`` or ``adaptive-hess``."""
    parts = key.strip().split(":")
    head = parts[0].lower()
    try:
        if head == "full" and len(parts) == 1:
            return build_schedule(FULL, None, N, horizon)
        if head == "frac" and len(parts) == 2:
            return build_schedule(CONSTANT_FRACTION, {"p": float(parts[1])}, N, horizon)
        if head == "geo" and len(parts) in (2, 3):
            params = {"r": float(parts[1])}
            if len(parts) == 3:
                params["frac0"] = float(parts[2])
            return build_schedule(GEOMETRIC_GAP, params, N, horizon)
        if head == "adaptive-hess" and len(parts) == 1:
            return build_schedule(ADAPTIVE_HESSIAN, None, N, horizon)
    except ValueError as exc:
        if isinstance(exc, ScheduleError):
            raise
        raise ScheduleError(f"bad schedule key {key!r}: {exc}") from exc
    raise ScheduleError(f"bad schedule key {key!r}")


STREAMS = {"f": 0, "g": 1, "H": 2}


def draw_samples(N: int, size: int, seed: int, iteration: int, stream: int = 0) -> np.ndarray:
    """Sorted uniform draw without replacement, fixed by ``(seed, iteration, stream)``."""
    if not 1 <= size <= N:
        raise ValueError(f"sample size {size} outside [1, {N}]")
    if size == N:
        return np.arange(N)
    rng = np.random.default_rng([int(seed), int(iteration), int(stream)])
    return np.sort(rng.choice(N, size=size, replace=False))


def subsampled_estimates(oracle: FiniteSumOracle, x, sets):
    """Sample means ``(f_bar, g_bar, H_bar)``; a ``None`` set skips that estimate."""
    S_f, S_g, S_H = sets
    for S in sets:
        if S is not None and len(S) == 0:
            raise ValueError("empty sample set")
    f = None if S_f is None else oracle.f_sample(x, S_f)
    g = None if S_g is None else oracle.grad_sample(x, S_g)
    H = None if S_H is None else oracle.hess_sample(x, S_H)
    return f, g, H


@dataclass(frozen=True)
class BoundConstants:
    kf_bound: float
    kg_bound: float
    kh_bound: float
    source: str = "configured"

    def __post_init__(self):
        if min(self.kf_bound, self.kg_bound, self.kh_bound) < 0:
            raise ValueError("bound constants must be nonnegative")


def estimate_bound_constants(oracle: FiniteSumOracle, x0, seed: int = 0,
                             n_probe: int = 4, radius: float = 1.0) -> BoundConstants:
    """Max component magnitudes over ``x0`` and a few seeded points around it."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, float)
    pts = [x0] + [x0 + radius * rng.standard_normal(x0.shape) for _ in range(n_probe)]
    kf = max(float(np.max(np.abs(oracle.component_values(p)))) for p in pts)
    kg = max(float(np.max(np.linalg.norm(oracle.component_grads(p), axis=1))) for p in pts)
    kh = max(float(np.max(oracle.component_hess_norms(p))) for p in pts)
    return BoundConstants(kf, kg, kh, "estimated")


def error_bounds(N: int, sizes, constants: BoundConstants):
    """``eps = 2 (N - |S|)/N * bound`` for the f, g and H estimates."""
    out = []
    for s, b in zip(sizes, (constants.kf_bound, constants.kg_bound, constants.kh_bound)):
        if not 1 <= s <= N:
            raise ValueError(f"sample size {s} outside [1, {N}]")
        out.append(2.0 * (N - s) / N * b)
    return tuple(out)
