"""Synthetic GPU used to exercise the whole pipeline without hardware.

Every synthetic kernel is driven by four latent knobs drawn per seed:

``rho``   compute share of the work (1 = fully compute bound)
``size``  occupancy / problem size, scales run time and dynamic power
``fp64``  share of floating point work done in double precision (0-0.2)
``ints``  weight of integer work

Ground-truth parameters and both feature sources (a PTX listing and a DCGM
log) are deterministic functions of these latents plus small bounded
multiplicative jitter, so features -> parameters is learnable.  ``rho`` only
moves the alpha/beta balance inside a band where both time terms bind
somewhere on the profiling sweep.  Features are
produced as text and go back through the regular parsers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dso.errors import DsoError, KernelError
from dso.fit import (
    PowerSample,
    TimeSample,
    fit_power,
    fit_time,
    load_power_sample_csv,
    load_time_sample_csv,
    power_sample_csv,
    time_sample_csv,
)
from dso.mlp import FusedFeatures, TrainConfig, forward, train
from dso.model import (
    DeviceConstants,
    DvfsConfig,
    KernelModelParams,
    energy,
    exec_time,
    power,
    required_voltage_mhz,
)
from dso.optimizer import DvfsDomain, optimal_config
from dso.ptx_features import featurize, parse_ptx
from dso.telemetry import DcgmMetricVector, dcgm_csv, load_dcgm_samples

FORMAT_VERSION = 1
FC_REF_MHZ = 1380.0
FM_REF_MHZ = 877.0
PARAM_JITTER = 0.005
FEATURE_JITTER = 0.02
DRAMA_CAP = 0.9
FP_CAP = 0.85
DEFAULT_ETAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
PROFILE_MEM_FREQS = (300.0, 405.0, 510.0, 615.0, 715.0, 797.0, 877.0)

# flat voltage curve: 705-1380 MHz spans roughly 0.20-0.34 V
DEFAULT_DEVICE = DeviceConstants(kappa_vf=0.2, pmax=300.0, vmin=0.201, vmax=0.34, freq_unit_mhz=3000.0)


def default_domain(dev: DeviceConstants = DEFAULT_DEVICE) -> DvfsDomain:
    """14 core steps over 705-1380 MHz; 877 MHz memory plus two lower steps."""
    core = tuple(float(f) for f in np.round(np.linspace(705.0, 1380.0, 14)))
    return DvfsDomain(core, (715.0, 797.0, 877.0), dev)


def profile_domain(domain: DvfsDomain) -> DvfsDomain:
    """``domain`` with extra low memory clocks, used only to profile training kernels.

    Down-clocking memory well below the tuning range makes the memory term
    bind for compute-heavy kernels too, so their fits identify both branches
    instead of reporting a zero coefficient.
    """
    mem = tuple(sorted(set(domain.mem_freqs) | set(PROFILE_MEM_FREQS)))
    return DvfsDomain(domain.core_freqs, mem, domain.dev)


@dataclass(frozen=True)
class SyntheticKernel:
    name: str
    truth: KernelModelParams
    features: FusedFeatures
    latents: dict = field(compare=False)
    ptx_source: str = field(compare=False, repr=False)
    dcgm_log: str = field(compare=False, repr=False)


def _jitter(rng, amount):
    return 1.0 + rng.uniform(-amount, amount)


def _truth(rng, rho, size, fp64, v_ref) -> KernelModelParams:
    # voltage-dependent terms are expressed relative to the voltage at FC_REF
    j = lambda: _jitter(rng, PARAM_JITTER)  # noqa: E731
    scale = 0.5 + 1.0 * size
    load = 0.6 + 0.4 * size
    return KernelModelParams(
        p0=80.0 * j(),
        kappa_pow=40.0 / v_ref * j(),
        gamma=(0.02 + 0.08 * (1 - rho)) * load * j(),
        c=(0.015 + 0.05 * rho) * (1 + 1.5 * fp64) * load / v_ref**2 * j(),
        t0=0.08 * scale * j(),
        alpha=scale * FM_REF_MHZ * (0.55 + 0.45 * (1 - rho)) * j(),
        beta=scale * FC_REF_MHZ * (0.55 + 0.45 * rho) * j(),
    )


def _dcgm_mean(rho, size, fp64, ints) -> np.ndarray:
    return np.array([
        0.55 + 0.4 * size,                          # SMACT
        0.15 + 0.7 * size,                          # SMOCC
        0.0,                                        # TENSO
        0.03 + (DRAMA_CAP - 0.03) * (1 - rho),      # DRAMA
        FP_CAP * rho * fp64,                        # FP64A
        FP_CAP * rho * (1 - fp64),                  # FP32A
        0.02,                                       # FP16A
        0.05 + 0.45 * rho * (0.5 + 0.5 * ints),     # INTAC
    ])


def _dcgm_log(rng, mean: np.ndarray, rows: int = 5) -> str:
    samples = []
    for r in range(rows):
        vals = np.clip(mean * (1 + rng.uniform(-FEATURE_JITTER, FEATURE_JITTER, size=mean.size)), 0.0, 1.0)
        samples.append((0.1 * r, DcgmMetricVector(*map(float, vals))))
    return dcgm_csv(samples)


def _ptx_source(rng, name, rho, fp64, ints, total=400) -> str:
    ftype = lambda: ".f64" if rng.uniform() < fp64 else ".f32"  # noqa: E731
    arith = 0.15 + 0.6 * rho
    mem = 0.1 + 0.6 * (1 - rho)
    weights = {
        "fp": arith * (1 - 0.4 * ints),
        "int": arith * 0.4 * ints + 0.05,
        "gld": mem * 0.6,
        "gst": mem * 0.25,
        "shared": mem * 0.15,
        "ctrl": 0.08,
    }
    keys = list(weights)
    probs = np.array([weights[k] for k in keys])
    probs = probs * np.array([_jitter(rng, FEATURE_JITTER) for _ in keys])
    counts = rng.multinomial(total, probs / probs.sum())
    lines = [
        ".version 7.5",
        ".target sm_70",
        ".address_size 64",
        "",
        f".visible .entry {name}(",
        "\t.param .u64 param_0",
        ")",
        "{",
        "\t.reg .pred %p<4>;",
        "\t.reg .f32 %f<16>;",
        "\t.reg .f64 %fd<16>;",
        "\t.reg .b32 %r<16>;",
        "\t.reg .b64 %rd<16>;",
        "\tld.param.u64 %rd1, [param_0];",
        "\tcvta.to.global.u64 %rd2, %rd1;",
        "\tmov.u32 %r1, %tid.x;",
    ]
    body = []
    for key, n in zip(keys, counts):
        for _ in range(n):
            if key == "fp":
                t = ftype()
                op = rng.choice(["fma.rn", "mul.rn", "add.rn"])
                reg = "%fd" if t == ".f64" else "%f"
                body.append(f"\t{op}{t} {reg}1, {reg}2, {reg}3{', ' + reg + '4' if op == 'fma.rn' else ''};")
            elif key == "int":
                op = rng.choice(["add.s32", "mad.lo.s32", "shl.b32", "and.b32"])
                extra = ", %r5" if op.startswith("mad") else ""
                body.append(f"\t{op} %r2, %r3, %r4{extra};")
            elif key == "gld":
                t = ftype()
                reg = "%fd" if t == ".f64" else "%f"
                body.append(f"\tld.global{t} {reg}5, [%rd2];")
            elif key == "gst":
                t = ftype()
                reg = "%fd" if t == ".f64" else "%f"
                body.append(f"\tst.global{t} [%rd2], {reg}5;")
            elif key == "shared":
                body.append("\tld.shared.f32 %f6, [%rd3];")
            else:
                body.append("\tsetp.lt.s32 %p1, %r2, %r3;")
                body.append("\t@%p1 bra $L__BB0_1;")
    order = rng.permutation(len(body))
    lines += [body[i] for i in order]
    lines += ["$L__BB0_1:", "\tret;", "}", ""]
    return "\n".join(lines)


def gen_kernel(seed: int, rho: float | None = None, name: str | None = None,
               dev: DeviceConstants = DEFAULT_DEVICE) -> SyntheticKernel:
    """Deterministic synthetic kernel; ``rho`` overrides the drawn compute share."""
    rng = np.random.default_rng(seed)
    lat = {
        "rho": float(rng.uniform()),
        "size": float(rng.uniform()),
        "fp64": float(rng.uniform(0.0, 0.2)),
        "ints": float(rng.uniform()),
    }
    if rho is not None:
        lat["rho"] = float(rho)
    name = name or f"k{seed}"
    truth = _truth(rng, lat["rho"], lat["size"], lat["fp64"], required_voltage_mhz(FC_REF_MHZ, dev))
    dcgm_log = _dcgm_log(rng, _dcgm_mean(lat["rho"], lat["size"], lat["fp64"], lat["ints"]))
    ptx_source = _ptx_source(rng, name, lat["rho"], lat["fp64"], lat["ints"])
    features = FusedFeatures(load_dcgm_samples(dcgm_log), featurize(parse_ptx(ptx_source)[0]))
    return SyntheticKernel(name, truth, features, lat, ptx_source, dcgm_log)


def measure(kernel: SyntheticKernel, cfg: DvfsConfig, noise_level: float = 0.01,
            rng: np.random.Generator | int | None = None) -> tuple[float, float]:
    """Noisy (time_s, power_w) at ``cfg``: each scaled by 1 + U(-noise, noise)."""
    if not noise_level >= 0:
        raise ValueError(f"noise_level must be >= 0, got {noise_level}")
    t = exec_time(kernel.truth, cfg)
    p = power(kernel.truth, cfg)
    if noise_level == 0:
        return t, p
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    u = rng.uniform(-noise_level, noise_level, size=2)
    return t * (1 + u[0]), p * (1 + u[1])


def sweep(kernel: SyntheticKernel, domain: DvfsDomain, noise_level: float,
          rng: np.random.Generator) -> tuple[str, str]:
    """Measure every grid point; returns (power CSV, time CSV)."""
    psamples, tsamples = [], []
    for fc in domain.core_freqs:
        for fm in domain.mem_freqs:
            cfg = domain.config(fc, fm)
            t, p = measure(kernel, cfg, noise_level, rng)
            psamples.append(PowerSample(cfg, p))
            tsamples.append(TimeSample(cfg, t))
    return power_sample_csv(psamples), time_sample_csv(tsamples)


def fit_kernel(power_csv: str, time_csv: str) -> tuple[KernelModelParams, dict]:
    pf = fit_power(load_power_sample_csv(power_csv))
    tf = fit_time(load_time_sample_csv(time_csv))
    params = KernelModelParams(pf.p0, pf.kappa_pow, pf.gamma, pf.c, tf.t0, tf.alpha, tf.beta)
    diag = {
        "power_mape": pf.mape,
        "time_mape": tf.mape,
        "partial_identifiability": tf.partial_identifiability,
    }
    return params, diag


def grid_mape(pred: KernelModelParams, truth: KernelModelParams, domain: DvfsDomain) -> tuple[float, float]:
    """(time MAPE, power MAPE) of ``pred`` against ``truth`` over the grid."""
    te, pe = [], []
    for fc in domain.core_freqs:
        for fm in domain.mem_freqs:
            cfg = domain.config(fc, fm)
            t, p = exec_time(truth, cfg), power(truth, cfg)
            te.append(abs(exec_time(pred, cfg) - t) / t)
            pe.append(abs(power(pred, cfg) - p) / p)
    return float(np.mean(te)), float(np.mean(pe))


def score(params: KernelModelParams, truth: KernelModelParams, domain: DvfsDomain, eta: float) -> dict:
    """Optimize with ``params`` and judge the chosen config with ``truth``."""
    default = domain.default_config()
    chosen = optimal_config(params, domain, eta).best
    e_def, t_def = energy(truth, default), exec_time(truth, default)
    e_opt, t_opt = energy(truth, chosen), exec_time(truth, chosen)
    return {
        "default": {"vc": default.vc, "fc_mhz": default.fc, "fm_mhz": default.fm},
        "optimized": {"vc": chosen.vc, "fc_mhz": chosen.fc, "fm_mhz": chosen.fm},
        "energy_saving_pct": 100.0 * (e_def - e_opt) / e_def,
        "time_loss_pct": 100.0 * (t_opt - t_def) / t_def,
    }


def summarize(apps: dict[str, dict]) -> dict:
    """Mean savings/loss; sums run in sorted-name order so input order is irrelevant."""
    names = sorted(apps)
    n = len(names)
    return {
        "mean_energy_saving_pct": math.fsum(apps[k]["energy_saving_pct"] for k in names) / n,
        "mean_time_loss_pct": math.fsum(apps[k]["time_loss_pct"] for k in names) / n,
    }


def make_corpus(n: int, seed: int, prefix: str, dev: DeviceConstants = DEFAULT_DEVICE) -> list[SyntheticKernel]:
    seeds = np.random.default_rng([seed, len(prefix), n]).integers(0, 2**31 - 1, size=n)
    return [gen_kernel(int(s), name=f"{prefix}{i:03d}", dev=dev) for i, s in enumerate(seeds)]


def training_dataset(kernels: list[SyntheticKernel], domain: DvfsDomain, noise_level: float,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    """Sweep and fit every kernel; returns (features, fitted targets, fit diagnostics)."""
    X, Y, diags = [], [], []
    for k in kernels:
        try:
            params, diag = fit_kernel(*sweep(k, domain, noise_level, rng))
        except DsoError as exc:
            raise KernelError(k.name, exc) from exc
        X.append(k.features.as_vector())
        Y.append(params.as_tuple())
        diags.append(diag)
    return np.array(X), np.array(Y), diags


def campaign_dataset(n_train: int, seed: int, domain: DvfsDomain,
                     noise_level: float = 0.01) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    """The training set a campaign with these arguments fits its network on."""
    train_set = make_corpus(n_train, seed, "train", domain.dev)
    rng = np.random.default_rng([seed, 1])
    return training_dataset(train_set, profile_domain(domain), noise_level, rng)


def run_campaign(
    n_train: int = 138,
    n_test: int = 20,
    domain: DvfsDomain | None = None,
    etas=DEFAULT_ETAS,
    seed: int = 0,
    noise_level: float = 0.01,
    train_config: TrainConfig | None = None,
) -> dict:
    """Measure, fit, train, predict, optimize and score; returns the report dict.

    Training kernels and test kernels come from disjoint seed streams; test
    kernels only ever contribute features at prediction time.
    """
    domain = domain or default_domain()
    cfg = train_config or TrainConfig(seed=seed)
    X, Y, fit_diag = campaign_dataset(n_train, seed, domain, noise_level)
    test_set = make_corpus(n_test, seed, "test", domain.dev)
    model = train((X, Y), cfg)

    predicted, accuracy = {}, {}
    for k in test_set:
        params, clamped = forward(model, k.features)
        predicted[k.name] = params
        t_err, p_err = grid_mape(params, k.truth, domain)
        accuracy[k.name] = {"time_mape": t_err, "power_mape": p_err, "clamped": clamped}

    names = sorted(accuracy)
    sweeps = []
    for eta in etas:
        entry = {"eta": eta}
        for label, source in (("mlp", predicted), ("oracle", {k.name: k.truth for k in test_set})):
            apps = {k.name: score(source[k.name], k.truth, domain, eta) for k in test_set}
            entry[label] = {**summarize(apps), "apps": apps}
        sweeps.append(entry)

    return {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "n_train": n_train,
        "n_test": n_test,
        "noise_level": noise_level,
        "domain": domain.to_dict(),
        "profile_mem_freqs_mhz": list(profile_domain(domain).mem_freqs),
        "fit": {
            "mean_power_mape": float(np.mean([d["power_mape"] for d in fit_diag])),
            "mean_time_mape": float(np.mean([d["time_mape"] for d in fit_diag])),
            "partial_identifiability": sum(d["partial_identifiability"] for d in fit_diag),
        },
        "training": {**model.meta["cv"], "final_loss": model.meta["final_loss"], "epochs": cfg.epochs},
        "accuracy": {
            "time_mape": math.fsum(accuracy[k]["time_mape"] for k in names) / len(names),
            "power_mape": math.fsum(accuracy[k]["power_mape"] for k in names) / len(names),
            "apps": accuracy,
        },
        "sweep": sweeps,
    }
