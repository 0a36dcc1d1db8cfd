"""Analytic DVFS power, time, energy and cost models.

Units: volts, watts, seconds and MHz.  The voltage/frequency curve works on
normalized frequencies, ``fc_mhz / freq_unit_mhz``, so that its single shape
parameter ``kappa_vf`` stays on the same scale as the voltage.

The static-power coefficient ``kappa_pow`` and the curve parameter
``kappa_vf`` are distinct quantities with different units.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from dso.errors import (
    EtaOutOfRange,
    FrequencyBelowKappa,
    InvalidParams,
    VoltageBelowKappa,
)

PARAM_NAMES = ("p0", "kappa_pow", "gamma", "c", "t0", "alpha", "beta")


@dataclass(frozen=True)
class DvfsConfig:
    vc: float
    fc: float
    fm: float

    def __post_init__(self):
        if not (self.vc > 0 and self.fc > 0 and self.fm > 0):
            raise InvalidParams(f"non-positive operating point {self}")


@dataclass(frozen=True)
class KernelModelParams:
    p0: float
    kappa_pow: float
    gamma: float
    c: float
    t0: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidParams(f"{name}={v} must be finite and >= 0")
        if not self.alpha + self.beta > 0:
            raise InvalidParams("alpha + beta must be > 0")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in PARAM_NAMES)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KernelModelParams":
        missing = [n for n in PARAM_NAMES if n not in d]
        if missing:
            raise InvalidParams(f"missing parameters {missing}")
        try:
            values = {n: float(d[n]) for n in PARAM_NAMES}
        except (TypeError, ValueError) as exc:
            raise InvalidParams(f"non-numeric parameter: {exc}") from None
        return cls(**values)


@dataclass(frozen=True)
class DeviceConstants:
    kappa_vf: float
    pmax: float
    vmin: float
    vmax: float
    freq_unit_mhz: float = 1000.0

    def __post_init__(self):
        if not 0 < self.vmin <= self.vmax:
            raise InvalidParams("need 0 < vmin <= vmax")
        if not self.pmax > 0:
            raise InvalidParams("pmax must be > 0")
        if not self.kappa_vf < self.vmin:
            raise InvalidParams("kappa_vf must be < vmin")
        if not self.freq_unit_mhz > 0:
            raise InvalidParams("freq_unit_mhz must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceConstants":
        keys = ("kappa_vf", "pmax", "vmin", "vmax", "freq_unit_mhz")
        missing = [k for k in keys[:4] if k not in d]
        if missing:
            raise InvalidParams(f"missing device constants {missing}")
        try:
            return cls(**{k: float(d[k]) for k in keys if k in d})
        except (TypeError, ValueError) as exc:
            raise InvalidParams(f"non-numeric device constant: {exc}") from None


def power(params: KernelModelParams, cfg: DvfsConfig) -> float:
    return params.p0 + params.kappa_pow * cfg.vc + params.gamma * cfg.fm + params.c * cfg.vc**2 * cfg.fc


def exec_time(params: KernelModelParams, cfg: DvfsConfig) -> float:
    return params.t0 + max(params.alpha / cfg.fm, params.beta / cfg.fc)


def energy(params: KernelModelParams, cfg: DvfsConfig) -> float:
    return power(params, cfg) * exec_time(params, cfg)


def check_eta(eta: float) -> float:
    if not 0.0 <= eta <= 1.0:
        raise EtaOutOfRange(f"eta={eta} outside [0, 1]")
    return eta


def cost(params: KernelModelParams, cfg: DvfsConfig, eta: float, pmax: float) -> float:
    """Energy/time tradeoff: eta=1 is pure energy, eta=0 is pmax-weighted time."""
    check_eta(eta)
    return (eta * power(params, cfg) + (1.0 - eta) * pmax) * exec_time(params, cfg)


def max_core_freq(vc: float, dev: DeviceConstants) -> float:
    """Highest normalized core frequency sustainable at voltage ``vc``."""
    if vc < dev.kappa_vf:
        raise VoltageBelowKappa(f"vc={vc} < kappa_vf={dev.kappa_vf}")
    return math.sqrt((vc - dev.kappa_vf) / 2.0) + dev.kappa_vf


def required_voltage(fc: float, dev: DeviceConstants) -> float:
    """Lowest voltage whose max_core_freq reaches normalized frequency ``fc``."""
    if fc < dev.kappa_vf:
        raise FrequencyBelowKappa(f"fc={fc} < kappa_vf={dev.kappa_vf}")
    return 2.0 * (fc - dev.kappa_vf) ** 2 + dev.kappa_vf


def max_core_freq_mhz(vc: float, dev: DeviceConstants) -> float:
    return max_core_freq(vc, dev) * dev.freq_unit_mhz


def required_voltage_mhz(fc_mhz: float, dev: DeviceConstants) -> float:
    return required_voltage(fc_mhz / dev.freq_unit_mhz, dev)
