"""Optimal DVFS configuration under the eta-weighted energy/time cost.

Voltage is not a free knob on real parts, so every core frequency in the
domain induces one voltage level, ``required_voltage(fc)``.  The analytic
path walks those voltage levels.  For each level it runs the core clock as
fast as the voltage allows, but never past the point where the memory term
starts to bind, ``fc <= (beta/alpha) * fm``.  The memory clock is then chosen
per core frequency:

* compute-bound side (``fm >= (alpha/beta) * fc``): time is flat and power
  grows with ``fm``, so the smallest such grid frequency wins;
* memory-bound side: cost ``(a + b*fm) * (t0 + alpha/fm)`` is convex in
  ``fm`` with stationary point ``sqrt(a*alpha / (b*t0))``.

Continuous values are snapped to the grid and both grid neighbours are
evaluated.  ``brute_force_config`` enumerates the whole grid and serves as
the verification oracle; both share the same tie-breaking key.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

from dso.errors import FrequencyBelowKappa, InvalidDomain
from dso.model import (
    DeviceConstants,
    DvfsConfig,
    KernelModelParams,
    check_eta,
    cost,
    energy,
    exec_time,
    max_core_freq_mhz,
    required_voltage_mhz,
)

_SNAP_RTOL = 1e-12


@dataclass(frozen=True)
class DvfsDomain:
    core_freqs: tuple[float, ...]
    mem_freqs: tuple[float, ...]
    dev: DeviceConstants

    def __post_init__(self):
        object.__setattr__(self, "core_freqs", tuple(float(f) for f in self.core_freqs))
        object.__setattr__(self, "mem_freqs", tuple(float(f) for f in self.mem_freqs))
        for name, freqs in (("core_freqs", self.core_freqs), ("mem_freqs", self.mem_freqs)):
            if not freqs:
                raise InvalidDomain(f"{name} is empty")
            if freqs[0] <= 0 or any(b <= a for a, b in zip(freqs, freqs[1:])):
                raise InvalidDomain(f"{name} must be positive and strictly increasing")
        for f in self.core_freqs:
            try:
                v = required_voltage_mhz(f, self.dev)
            except FrequencyBelowKappa as exc:
                raise InvalidDomain(f"core frequency {f} MHz: {exc}") from None
            if not self.dev.vmin <= v <= self.dev.vmax:
                raise InvalidDomain(
                    f"core frequency {f} MHz needs {v:.4f} V outside "
                    f"[{self.dev.vmin}, {self.dev.vmax}]"
                )

    def config(self, fc: float, fm: float) -> DvfsConfig:
        return DvfsConfig(required_voltage_mhz(fc, self.dev), fc, fm)

    def default_config(self) -> DvfsConfig:
        return self.config(self.core_freqs[-1], self.mem_freqs[-1])

    def to_dict(self) -> dict:
        return {
            "core_freqs_mhz": list(self.core_freqs),
            "mem_freqs_mhz": list(self.mem_freqs),
            "device": self.dev.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DvfsDomain":
        try:
            core = tuple(float(f) for f in d["core_freqs_mhz"])
            mem = tuple(float(f) for f in d["mem_freqs_mhz"])
            dev = DeviceConstants.from_dict(d["device"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidDomain(f"malformed domain document: {exc!r}") from None
        return cls(core, mem, dev)


@dataclass(frozen=True)
class ContinuousPoint:
    """Pre-snap optimum for the voltage level that produced the winner."""

    vc: float
    fc: float
    fm: float


@dataclass
class OptimizationResult:
    best: DvfsConfig
    cost: float
    energy: float
    time: float
    candidates_evaluated: int
    fallback: bool = False
    continuous: ContinuousPoint | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "vc": self.best.vc,
            "fc_mhz": self.best.fc,
            "fm_mhz": self.best.fm,
            "cost": self.cost,
            "energy_j": self.energy,
            "time_s": self.time,
            "fallback": self.fallback,
        }


def _rank_key(params, cfg, eta, pmax):
    return (cost(params, cfg, eta, pmax), energy(params, cfg), cfg.vc, cfg.fm)


def _evaluate(params, domain, pairs, eta, pmax):
    best = None
    for i, j in pairs:
        cfg = domain.config(domain.core_freqs[i], domain.mem_freqs[j])
        key = _rank_key(params, cfg, eta, pmax)
        if best is None or key < best[0]:
            best = (key, cfg, (i, j))
    return best


def _result(params, cfg, eta, pmax, n, fallback=False, continuous=None):
    return OptimizationResult(
        best=cfg,
        cost=cost(params, cfg, eta, pmax),
        energy=energy(params, cfg),
        time=exec_time(params, cfg),
        candidates_evaluated=n,
        fallback=fallback,
        continuous=continuous,
    )


def brute_force_config(
    params: KernelModelParams, domain: DvfsDomain, eta: float, pmax: float | None = None
) -> OptimizationResult:
    """Exhaustive arg-min over every (fc, fm) grid pair at its minimum voltage.

    Ties go to lower energy, then lower voltage, then lower memory frequency.
    """
    check_eta(eta)
    pmax = domain.dev.pmax if pmax is None else pmax
    pairs = [(i, j) for i in range(len(domain.core_freqs)) for j in range(len(domain.mem_freqs))]
    _, cfg, _ = _evaluate(params, domain, pairs, eta, pmax)
    return _result(params, cfg, eta, pmax, len(pairs))


def _floor_index(grid, x):
    """Index of the largest grid value <= x (-1 if none)."""
    return bisect.bisect_right(grid, x * (1 + _SNAP_RTOL)) - 1


def _ceil_index(grid, x):
    """Index of the smallest grid value >= x (len(grid) if none)."""
    return bisect.bisect_left(grid, x * (1 - _SNAP_RTOL))


def _with_neighbours(idx, n):
    return [k for k in (idx - 1, idx, idx + 1) if 0 <= k < n]


def continuous_point(params: KernelModelParams, domain: DvfsDomain, vc: float) -> ContinuousPoint:
    """Core clock at the voltage ceiling, clamped so memory never binds."""
    fm_max = domain.mem_freqs[-1]
    ratio = math.inf if params.alpha == 0 else params.beta / params.alpha
    fc = min(max_core_freq_mhz(vc, domain.dev), ratio * fm_max)
    if params.beta == 0:
        fm = domain.mem_freqs[0]
    else:
        fm = max(domain.mem_freqs[0], params.alpha / params.beta * fc)
    return ContinuousPoint(vc, fc, fm)


def _mem_candidates(params, domain, fc, eta, pmax):
    mem = domain.mem_freqs
    n = len(mem)
    if params.beta == 0:
        # time never depends on fc: every fm is on the memory-bound side
        boundary_idx = n
    else:
        boundary_idx = min(_ceil_index(mem, params.alpha / params.beta * fc), n - 1)
    out = set(_with_neighbours(boundary_idx, n)) if boundary_idx < n else set()

    if params.alpha > 0:
        vc = required_voltage_mhz(fc, domain.dev)
        a = eta * (params.p0 + params.kappa_pow * vc + params.c * vc**2 * fc) + (1 - eta) * pmax
        b = eta * params.gamma
        if b > 0 and params.t0 > 0:
            fm_star = math.sqrt(a * params.alpha / (b * params.t0))
        else:
            fm_star = math.inf
        lo = _floor_index(mem, fm_star)
        hi = _ceil_index(mem, fm_star)
        out.update(k for k in (lo, hi) if 0 <= k < n)
    if not out:
        out.add(0)
    return out


def optimal_config(
    params: KernelModelParams, domain: DvfsDomain, eta: float, pmax: float | None = None
) -> OptimizationResult:
    """Grid search over induced voltage levels with closed-form clocks."""
    check_eta(eta)
    pmax = domain.dev.pmax if pmax is None else pmax
    core = domain.core_freqs

    origin: dict[tuple[int, int], ContinuousPoint] = {}
    for fc_level in core:
        vc = required_voltage_mhz(fc_level, domain.dev)
        point = continuous_point(params, domain, vc)
        # snapping below the grid means no core frequency satisfies the clamp:
        # fc_min is then the least memory-bound choice
        k = max(_floor_index(core, point.fc), 0)
        for i in _with_neighbours(k, len(core)):
            for j in _mem_candidates(params, domain, core[i], eta, pmax):
                origin.setdefault((i, j), point)

    if not origin:
        # no (fc, fm) pair satisfies the clamp ordering
        result = brute_force_config(params, domain, eta, pmax)
        result.fallback = True
        return result

    pairs = sorted(origin)
    _, cfg, ij = _evaluate(params, domain, pairs, eta, pmax)
    return _result(params, cfg, eta, pmax, len(pairs), continuous=origin[ij])
