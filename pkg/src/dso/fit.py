"""Regression of model parameters from measured DVFS sweeps.

Power is linear in its coefficients, so it is an ordinary least-squares
problem on the design ``[1, vc, fm, vc**2 * fc]``.  Time is piecewise: each
sample is explained by either the memory term ``alpha/fm`` or the core term
``beta/fc``.  ``fit_time`` alternates between assigning samples to branches
and a joint least-squares solve for ``(t0, alpha, beta)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from dso.errors import RankDeficient, SchemaMismatch, Underdetermined
from dso.model import DvfsConfig

MAX_ITERATIONS = 50
POWER_SAMPLE_HEADER = ("vc", "fc_mhz", "fm_mhz", "power_w")
TIME_SAMPLE_HEADER = ("vc", "fc_mhz", "fm_mhz", "time_s")
_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class PowerSample:
    cfg: DvfsConfig
    power: float

    def __post_init__(self):
        if not self.power > 0:
            raise SchemaMismatch(f"power must be > 0, got {self.power}")


@dataclass(frozen=True)
class TimeSample:
    cfg: DvfsConfig
    time: float

    def __post_init__(self):
        if not self.time > 0:
            raise SchemaMismatch(f"time must be > 0, got {self.time}")


@dataclass
class PowerFit:
    p0: float
    kappa_pow: float
    gamma: float
    c: float
    mape: float
    constraint_active: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TimeFit:
    t0: float
    alpha: float
    beta: float
    labels: list[str]
    mape: float
    iterations: int
    partial_identifiability: bool
    constraint_active: bool
    rss_trace: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _mape(pred: np.ndarray, obs: np.ndarray) -> float:
    return float(np.mean(np.abs(pred - obs) / np.abs(obs)))


def _solve(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares with column equilibration and an explicit rank test."""
    scale = np.linalg.norm(design, axis=0)
    scale[scale == 0] = 1.0
    scaled = design / scale
    sv = np.linalg.svd(scaled, compute_uv=False)
    if sv.size < design.shape[1] or sv[-1] <= _RANK_RTOL * sv[0]:
        raise RankDeficient(
            f"design of {design.shape[0]} samples has rank < {design.shape[1]} "
            f"(condition {sv[0] / max(sv[-1], 1e-300):.3g})"
        )
    coef, *_ = np.linalg.lstsq(scaled, y, rcond=None)
    return coef / scale


def fit_power(samples: list[PowerSample]) -> PowerFit:
    """Fit ``P = p0 + kappa_pow*vc + gamma*fm + c*vc**2*fc``.

    Negative coefficients are clamped to zero and reported through
    ``constraint_active``.
    """
    if len(samples) < 4:
        raise RankDeficient(f"{len(samples)} samples cannot determine 4 coefficients")
    vc = np.array([s.cfg.vc for s in samples])
    fc = np.array([s.cfg.fc for s in samples])
    fm = np.array([s.cfg.fm for s in samples])
    y = np.array([s.power for s in samples])
    design = np.column_stack([np.ones_like(vc), vc, fm, vc**2 * fc])
    coef = _solve(design, y)
    clamped = np.maximum(coef, 0.0)
    return PowerFit(
        *map(float, clamped),
        mape=_mape(design @ clamped, y),
        constraint_active=bool(np.any(coef < 0)),
    )


def _max_model_rss(theta, x_mem, x_core, y) -> float:
    t0, a, b = theta
    return float(np.sum((y - t0 - np.maximum(a * x_mem, b * x_core)) ** 2))


def _branch_solve(mem: np.ndarray, x_mem, x_core, y) -> tuple[np.ndarray, bool, bool]:
    cols = [np.ones_like(y)]
    active = [0]
    if mem.any():
        cols.append(np.where(mem, x_mem, 0.0))
        active.append(1)
    if (~mem).any():
        cols.append(np.where(mem, 0.0, x_core))
        active.append(2)
    coef = _solve(np.column_stack(cols), y)
    theta = np.zeros(3)
    theta[active] = coef
    partial = len(active) < 3
    return np.maximum(theta, 0.0), bool(np.any(theta < 0)), partial


def _seed_labels(x_mem, x_core, y) -> np.ndarray:
    slopes = []
    for x in (x_mem, x_core):
        coef, *_ = np.linalg.lstsq(np.column_stack([np.ones_like(x), x]), y, rcond=None)
        slopes.append(max(coef[1], 0.0))
    return slopes[0] * x_mem > slopes[1] * x_core


def _bic(rss, n, k, y):
    # RSS floor keeps noiseless fits comparable; the penalty then decides
    rss = max(rss, 1e-24 * float(np.sum(y * y)))
    return n * np.log(rss / n) + k * np.log(n)


def _iterate(mem, x_mem, x_core, y):
    """Alternate solve/relabel from an initial labelling."""
    theta, clamped, partial = _branch_solve(mem, x_mem, x_core, y)
    trace = [_max_model_rss(theta, x_mem, x_core, y)]
    iterations = 1
    while iterations < MAX_ITERATIONS:
        relabel = theta[1] * x_mem > theta[2] * x_core
        if np.array_equal(relabel, mem):
            break
        cand, cand_clamped, cand_partial = _branch_solve(relabel, x_mem, x_core, y)
        rss = _max_model_rss(cand, x_mem, x_core, y)
        iterations += 1
        if rss > trace[-1]:
            break
        mem, theta, clamped, partial = relabel, cand, cand_clamped, cand_partial
        trace.append(rss)
    return mem, theta, clamped, partial, trace, iterations


def fit_time(samples: list[TimeSample]) -> TimeFit:
    """Fit ``T = t0 + max(alpha/fm, beta/fc)`` by iterative branch assignment.

    Each run alternates a joint least-squares solve with relabelling every
    sample to the branch whose term is larger.  A run stops when the labels
    are stable, after ``MAX_ITERATIONS`` solves, or when a relabel would
    raise the residual sum of squares of the max-model (the previous
    solution is kept), so ``rss_trace`` is non-increasing.

    A run whose labels all fall in one branch can never leave it (the idle
    coefficient is zero).  Runs are therefore started from the slope-based
    seed and from every split of the samples by ``fc/fm``, which covers every
    labelling the max-model can produce.  The lowest-RSS single-branch run
    and the lowest-RSS two-branch run are compared by BIC (2 vs 4 free
    parameters, the split counting as one) so that a branch holding a
    couple of noisy corner samples does not invent a coefficient.
    """
    if len(samples) < 3:
        raise Underdetermined(f"{len(samples)} samples cannot determine t0, alpha, beta")
    fc = np.array([s.cfg.fc for s in samples])
    fm = np.array([s.cfg.fm for s in samples])
    y = np.array([s.time for s in samples])
    x_mem, x_core = 1.0 / fm, 1.0 / fc

    starts = [_seed_labels(x_mem, x_core, y)]
    # memory binds exactly when fc/fm exceeds beta/alpha
    ratio = fc / fm
    starts += [ratio >= cut for cut in np.unique(ratio)]
    starts.append(np.zeros(len(y), dtype=bool))

    best = {}
    for start in starts:
        run = _iterate(start, x_mem, x_core, y)
        partial = run[3]
        if partial not in best or run[4][-1] < best[partial][4][-1]:
            best[partial] = run
    mem, theta, clamped, partial, trace, iterations = min(
        best.values(), key=lambda r: _bic(r[4][-1], len(y), 2 if r[3] else 4, y)
    )
    t0, alpha, beta = map(float, theta)
    pred = t0 + np.maximum(alpha * x_mem, beta * x_core)
    return TimeFit(
        t0=t0,
        alpha=alpha,
        beta=beta,
        labels=["mem" if m else "core" for m in mem],
        mape=_mape(pred, y),
        iterations=iterations,
        partial_identifiability=partial,
        constraint_active=clamped,
        rss_trace=trace,
    )


def _read_samples(csv_text: str, header: tuple[str, ...]) -> list[tuple[DvfsConfig, float]]:
    reader = csv.reader(io.StringIO(csv_text, newline=""))
    rows = [r for r in reader if any(cell.strip() for cell in r)]
    if not rows or tuple(c.strip() for c in rows[0]) != header:
        raise SchemaMismatch(f"expected header {','.join(header)}")
    out = []
    for rowno, row in enumerate(rows[1:], start=1):
        try:
            vc, fc, fm, y = (float(c) for c in row)
        except ValueError:
            raise SchemaMismatch(f"row {rowno}: expected 4 numeric columns") from None
        out.append((DvfsConfig(vc, fc, fm), y))
    return out


def load_power_sample_csv(csv_text: str) -> list[PowerSample]:
    return [PowerSample(cfg, y) for cfg, y in _read_samples(csv_text, POWER_SAMPLE_HEADER)]


def load_time_sample_csv(csv_text: str) -> list[TimeSample]:
    return [TimeSample(cfg, y) for cfg, y in _read_samples(csv_text, TIME_SAMPLE_HEADER)]


def _write_samples(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for cfg, y in rows:
        w.writerow([repr(float(v)) for v in (cfg.vc, cfg.fc, cfg.fm, y)])
    return buf.getvalue()


def power_sample_csv(samples: list[PowerSample]) -> str:
    return _write_samples([(s.cfg, s.power) for s in samples], POWER_SAMPLE_HEADER)


def time_sample_csv(samples: list[TimeSample]) -> str:
    return _write_samples([(s.cfg, s.time) for s in samples], TIME_SAMPLE_HEADER)
