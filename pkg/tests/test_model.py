import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import params_strategy
from dso.errors import (
    EtaOutOfRange,
    FrequencyBelowKappa,
    InvalidParams,
    VoltageBelowKappa,
)
from dso.model import (
    DeviceConstants,
    DvfsConfig,
    KernelModelParams,
    cost,
    energy,
    exec_time,
    max_core_freq,
    max_core_freq_mhz,
    power,
    required_voltage,
    required_voltage_mhz,
)

P = KernelModelParams(p0=10, kappa_pow=5, gamma=2, c=3, t0=1, alpha=8, beta=6)
DEV = DeviceConstants(kappa_vf=0.5, pmax=40, vmin=0.6, vmax=3.0)


def test_power_hand_value():
    assert power(P, DvfsConfig(vc=1, fc=4, fm=2)) == 31


def test_static_only_power():
    p = KernelModelParams(p0=7, kappa_pow=0, gamma=0, c=0, t0=0, alpha=1, beta=1)
    for cfg in (DvfsConfig(1, 1, 1), DvfsConfig(2, 900, 300)):
        assert power(p, cfg) == 7


def test_power_linear_in_fm():
    a, b = DvfsConfig(1, 4, 2), DvfsConfig(1, 4, 4)
    assert power(P, b) - power(P, a) == 2 * 2


def test_exec_time_hand_values():
    assert exec_time(P, DvfsConfig(1, fc=3, fm=2)) == 5
    assert exec_time(P, DvfsConfig(1, fc=3, fm=4)) == 3


def test_alpha_zero_ignores_memory():
    p = KernelModelParams(0, 0, 0, 0, 1, 0, 6)
    assert exec_time(p, DvfsConfig(1, 3, 1)) == exec_time(p, DvfsConfig(1, 3, 1000)) == 3


def test_energy_and_cost_hand_values():
    cfg = DvfsConfig(vc=1, fc=3, fm=4)
    assert power(P, cfg) == 32 and exec_time(P, cfg) == 3
    assert energy(P, cfg) == 96
    assert cost(P, cfg, 1.0, 40) == 96
    assert cost(P, cfg, 0.0, 40) == 120
    assert cost(P, cfg, 0.5, 40) == 108


def test_separable_energy():
    p = KernelModelParams(p0=9, kappa_pow=0, gamma=0, c=0, t0=2, alpha=0, beta=5)
    assert energy(p, DvfsConfig(1, 10, 3)) == 9 * (2 + 0.5)


def test_energy_symmetry_without_dynamic_terms():
    p = KernelModelParams(4, 1, 0, 0, 0.5, 3, 7)
    q = KernelModelParams(4, 1, 0, 0, 0.5, 7, 3)
    assert energy(p, DvfsConfig(1, fc=2, fm=5)) == energy(q, DvfsConfig(1, fc=5, fm=2))


@pytest.mark.parametrize("eta", [-0.01, 1.01, math.nan])
def test_eta_out_of_range(eta):
    with pytest.raises(EtaOutOfRange):
        cost(P, DvfsConfig(1, 1, 1), eta, 40)


def test_g1_hand_values():
    assert max_core_freq(1.0, DEV) == 1.0
    assert max_core_freq(2.5, DEV) == 1.5
    assert max_core_freq(0.5, DEV) == 0.5
    assert required_voltage(1.0, DEV) == 1.0
    assert required_voltage(0.5, DEV) == 0.5


def test_g1_domain_errors():
    with pytest.raises(VoltageBelowKappa):
        max_core_freq(0.4, DEV)
    with pytest.raises(FrequencyBelowKappa):
        required_voltage(0.4, DEV)


def test_g1_round_trip():
    rng = np.random.default_rng(0)
    for f in rng.uniform(0.5, 5.0, 100):
        assert max_core_freq(required_voltage(f, DEV), DEV) == pytest.approx(f, rel=1e-12)
    dev = DeviceConstants(0.2, 300, 0.201, 0.34, 3000.0)
    for f in rng.uniform(600, 1380, 100):
        assert max_core_freq_mhz(required_voltage_mhz(f, dev), dev) == pytest.approx(f, rel=1e-12)


def test_g1_increasing_and_concave():
    v = np.linspace(0.5, 4.0, 200)
    g = np.array([max_core_freq(x, DEV) for x in v])
    assert np.all(np.diff(g) > 0)
    assert np.all(np.diff(g, 2) <= 1e-15)


@pytest.mark.parametrize("kw", [
    dict(p0=-1), dict(gamma=math.inf), dict(alpha=0, beta=0), dict(c=math.nan),
])
def test_invalid_params(kw):
    base = P.to_dict()
    base.update(kw)
    with pytest.raises(InvalidParams):
        KernelModelParams(**base)


@pytest.mark.parametrize("args", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
def test_invalid_config(args):
    with pytest.raises(InvalidParams):
        DvfsConfig(*args)


@pytest.mark.parametrize("kw", [
    dict(kappa_vf=0.7), dict(pmax=0), dict(vmin=2, vmax=1), dict(freq_unit_mhz=0),
])
def test_invalid_device(kw):
    base = DEV.to_dict()
    base.update(kw)
    with pytest.raises(InvalidParams):
        DeviceConstants(**base)


def test_json_round_trip():
    assert KernelModelParams.from_dict(P.to_dict()) == P
    assert DeviceConstants.from_dict(DEV.to_dict()) == DEV
    with pytest.raises(InvalidParams):
        KernelModelParams.from_dict({"p0": 1})
    with pytest.raises(InvalidParams):
        DeviceConstants.from_dict({"pmax": 1})


configs = st.builds(
    DvfsConfig,
    vc=st.floats(0.1, 2.0), fc=st.floats(100, 2000), fm=st.floats(100, 2000),
)


@given(params_strategy(), configs)
def test_cost_endpoints_exact(p, cfg):
    assert cost(p, cfg, 1.0, 250.0) == energy(p, cfg)
    assert cost(p, cfg, 0.0, 250.0) == 250.0 * exec_time(p, cfg)


@given(params_strategy(), configs, st.floats(0, 1), st.floats(0, 1))
def test_cost_affine_in_eta(p, cfg, a, b):
    mid = 0.5 * (a + b)
    lhs = cost(p, cfg, mid, 250.0)
    rhs = 0.5 * (cost(p, cfg, a, 250.0) + cost(p, cfg, b, 250.0))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
    assert lhs == pytest.approx(mid * energy(p, cfg) + (1 - mid) * 250.0 * exec_time(p, cfg), rel=1e-12)


@given(params_strategy(), configs)
def test_monotonicity(p, cfg):
    h = 1e-3
    up = lambda **kw: DvfsConfig(**{**cfg.__dict__, **kw})  # noqa: E731
    if p.kappa_pow > 0 or p.c > 0:
        assert power(p, up(vc=cfg.vc * (1 + h))) > power(p, cfg)
    if p.c > 0:
        assert power(p, up(fc=cfg.fc * (1 + h))) > power(p, cfg)
    if p.gamma > 0:
        assert power(p, up(fm=cfg.fm * (1 + h))) > power(p, cfg)
    assert exec_time(p, up(fc=cfg.fc * (1 + h))) <= exec_time(p, cfg)
    assert exec_time(p, up(fm=cfg.fm * (1 + h))) <= exec_time(p, cfg)
    if p.beta / cfg.fc > p.alpha / cfg.fm:
        assert exec_time(p, up(fm=cfg.fm * 1.5)) == exec_time(p, cfg)
