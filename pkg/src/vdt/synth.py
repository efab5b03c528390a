"""Synthetic desk-scale datasets: a heat-flux-like response surface, a
two-target seasonal grid series, a cooldown sensor field, and a degrading
battery cell. Generation is a pure function of the spec (seed included),
so repeated calls reproduce files byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numkit import RngStream
from .pinn import DischargeProfile, EcmConstants, simulate_voltages

SYNTH_KINDS = ("chf_like", "seasonal_grid", "sensor_field", "degrading_cell")


@dataclass(frozen=True)
class SynthSpec:
    """What to generate; sizes and noise knobs with desk-scale defaults."""

    kind: str
    n: int = 3000  # rows / steps / discharges, per kind
    seed: int = 0
    noise: float = 0.05
    sensors: int = 40  # per quantity, sensor_field only
    steps: int = 80  # per discharge, degrading_cell only
    drift: float = 0.02  # per-discharge degradation, degrading_cell only

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; options: {SYNTH_KINDS}")


# -- heat-flux-like tabular surface -----------------------------------------------

CHF_COLUMNS = ("diameter", "length", "pressure", "mass_flux", "inlet_temp", "chf")

#: unit-cube feature spans mapped onto physically plausible ranges
CHF_RANGES = np.array([
    [2.39, 16.0],  # channel diameter, mm
    [0.07, 15.0],  # heated length, m
    [100.0, 20000.0],  # pressure, kPa
    [17.7, 7712.0],  # mass flux, kg/m2 s
    [9.0, 353.62],  # inlet temperature, C
])


def _chf_surface(u: np.ndarray) -> np.ndarray:
    """Response on the unit cube: a gentle base plus a steep low-flux cliff.

    u columns: diameter, length, pressure, mass flux, inlet temperature.
    The base is near-linear (a handful of points pin it down); almost all
    of the remaining curvature sits below ~15% mass flux, mirroring how
    boiling limits steepen as flow drops.
    """
    d, l, p, g, t = (u[:, j] for j in range(5))
    base = 0.7 * g + 0.4 * p - 0.45 * l + 0.2 * d - 0.25 * t
    cliff = 2.6 * np.exp(-0.5 * (g / 0.09) ** 2) * (0.55 + 0.45 * l)
    return base + cliff


def chf_like(spec: SynthSpec):
    """(X, y) draw of the tabular surface; pool density thins at low flux.

    With spec.noise == 0 the surface is exactly representable, so a small
    network interpolates it (the attainability reference for acquisition
    experiments). Noise is heteroscedastic: scatter grows with flux.
    """
    gen = RngStream(spec.seed, 101).generator()
    n = spec.n
    u = np.empty((n, 5))
    u[:, 0] = gen.beta(1.6, 1.6, n)  # diameter
    u[:, 1] = gen.beta(1.6, 1.6, n)  # length
    u[:, 2] = gen.beta(1.8, 1.4, n)  # pressure
    u[:, 3] = gen.beta(2.2, 1.1, n)  # mass flux: thin low-flux tail
    u[:, 4] = gen.beta(1.5, 1.8, n)  # inlet temperature
    f = _chf_surface(u)
    sigma = spec.noise * (0.25 + 0.75 * u[:, 3])
    y = f + sigma * gen.standard_normal(n)
    X = CHF_RANGES[:, 0] + u * (CHF_RANGES[:, 1] - CHF_RANGES[:, 0])
    return X, y.reshape(-1, 1)


# -- seasonal grid series ----------------------------------------------------------

GRID_FEATURES = ("sin_day", "cos_day", "sin_year", "cos_year", "cloud", "wind_speed")
GRID_TARGETS = ("solar", "wind")
GRID_COLUMNS = GRID_FEATURES + GRID_TARGETS

DAY_STEPS = 144  # 10-minute cadence
YEAR_DAYS = 30  # compressed annual cycle at desk scale


def seasonal_grid(spec: SynthSpec) -> np.ndarray:
    """(n, 8) series: four phase features, two weather proxies, two targets.

    Solar output follows a clipped diurnal arc modulated by season and a
    slow cloud process; wind output follows a regime-switching speed
    process, so its errors are dominated by rare shifts rather than cycles.
    """
    gen = RngStream(spec.seed, 202).generator()
    n = spec.n
    t = np.arange(n)
    day_phase = 2 * np.pi * (t % DAY_STEPS) / DAY_STEPS
    year_phase = 2 * np.pi * (t % (DAY_STEPS * YEAR_DAYS)) / (DAY_STEPS * YEAR_DAYS)

    cloud = np.empty(n)
    cloud[0] = 0.4
    shocks = gen.normal(scale=0.05, size=n)
    for i in range(1, n):
        cloud[i] = np.clip(0.985 * cloud[i - 1] + 0.006 + shocks[i], 0.0, 1.0)

    regime = np.empty(n)
    state = 0
    flips = gen.uniform(size=n)
    speeds = gen.normal(scale=0.12, size=n)
    wind_speed = np.empty(n)
    wind_speed[0] = 0.5
    for i in range(n):
        if flips[i] < 0.004:
            state = 1 - state
        regime[i] = state
        if i:
            target = 0.35 + 0.85 * state
            wind_speed[i] = wind_speed[i - 1] + 0.08 * (target - wind_speed[i - 1]) + speeds[i]
            wind_speed[i] = max(wind_speed[i], 0.0)

    season = 0.75 + 0.25 * np.sin(year_phase)
    sun = np.maximum(np.sin(day_phase), 0.0)
    solar = season * sun**1.5 * (1.0 - 0.65 * cloud)
    solar = solar + spec.noise * 0.3 * gen.standard_normal(n) * (solar > 0.02)
    wind = np.clip(wind_speed, 0, None) ** 1.3 * 0.6
    wind = wind + spec.noise * 0.3 * gen.standard_normal(n)

    cols = [np.sin(day_phase), np.cos(day_phase), np.sin(year_phase), np.cos(year_phase),
            cloud, wind_speed, solar, wind]
    return np.column_stack(cols)


# -- cooldown sensor field ----------------------------------------------------------


@dataclass(frozen=True)
class SensorChannel:
    sensor_id: str
    timestamps: np.ndarray
    values: np.ndarray


def sensor_field(spec: SynthSpec, steps: int = 600, dt: float = 2.0) -> list:
    """2*M cooldown channels: exponential decay over distinct base levels.

    Channel ids carry the quantity prefix ("TS_", "TF_"). Each sensor has
    its own level and time constant plus one shared mid-transient, so the
    per-sensor means spread widely (which is what the binning interleave
    exploits downstream).
    """
    gen = RngStream(spec.seed, 303).generator()
    t = np.arange(steps) * dt
    channels = []
    for prefix, lo, hi in (("TS_", 200.0, 620.0), ("TF_", 150.0, 520.0)):
        for j in range(spec.sensors):
            level = gen.uniform(lo, hi)
            tau = gen.uniform(0.15, 0.75) * steps * dt
            bump_at = gen.uniform(0.2, 0.6) * steps * dt
            bump_amp = gen.uniform(10.0, 35.0)
            bump_w = gen.uniform(0.03, 0.08) * steps * dt
            bump = bump_amp * np.exp(-(((t - bump_at) / bump_w) ** 2))
            decay = level * (0.35 + 0.65 * np.exp(-t / tau))
            noise = spec.noise * 20.0 * gen.standard_normal(steps)
            channels.append(SensorChannel(f"{prefix}{j:03d}", t.copy(), decay + bump + noise))
    return channels


# -- degrading battery cell -----------------------------------------------------------

BATTERY_CONSTS = EcmConstants(c_b=400.0, c_sp=30.0, c_s=60.0, r_s=0.08)
BATTERY_DT = 2.0


def true_soc(q_b: np.ndarray, c_b: float = BATTERY_CONSTS.c_b) -> np.ndarray:
    return np.clip(q_b / c_b, 0.0, 1.0)


def true_vb(q_b_soc: np.ndarray) -> np.ndarray:
    """Open-circuit-style curve: sags steeply once SOC drops below ~0.2."""
    soc = q_b_soc[:, 1:2]
    return 3.15 + 0.95 * soc - 0.16 * np.exp(-9.0 * soc)


def true_rsp_inv(soc: np.ndarray, aging: float = 1.0) -> np.ndarray:
    """Surface conductance falls with depth of discharge and with age.

    Scaled so the overpotential i/rsp_inv stays in the 0.1-0.3 V range a
    healthy cell shows, roughly doubling by end of life.
    """
    return (8.0 + 10.0 * soc) / aging


def degrading_cell(spec: SynthSpec) -> list:
    """Chronological discharge profiles from the reference circuit.

    Ageing grows the series resistance and the surface overpotential
    (aging factor 1 + drift*k at discharge k) and shaves a little capacity,
    so a model frozen early in life mispredicts late-life voltage sag.
    Currents follow a piecewise-constant random walk sized so the faded
    cell never over-discharges; drift of exactly zero makes every
    discharge statistically identical.
    """
    base = RngStream(spec.seed, 404)
    profiles = []
    T = spec.steps
    t = np.arange(T) * BATTERY_DT
    for k in range(spec.n):
        gen = base.derive(k).generator()
        currents = np.empty(T)
        pos = 0
        while pos < T:
            seg = int(gen.integers(5, 15))
            currents[pos : pos + seg] = gen.uniform(0.5, 3.0)
            pos += seg
        aging = 1.0 + 0.5 * spec.drift * k
        fade = 1.0 + 0.1 * spec.drift * k
        consts = EcmConstants(
            c_b=BATTERY_CONSTS.c_b / fade,
            c_sp=BATTERY_CONSTS.c_sp,
            c_s=BATTERY_CONSTS.c_s,
            r_s=BATTERY_CONSTS.r_s * aging,
        )
        budget = 0.7 * consts.c_b  # keep depth of discharge inside the faded cell
        drawn = currents.sum() * BATTERY_DT
        if drawn > budget:
            currents *= budget / drawn
        volts = simulate_voltages(
            currents,
            BATTERY_DT,
            consts,
            soc_fn=lambda q, c=consts.c_b: true_soc(q, c),
            vb_fn=true_vb,
            rsp_inv_fn=lambda s, a=aging: true_rsp_inv(s, a),
        )
        volts = volts + spec.noise * 0.06 * gen.standard_normal(T)
        profiles.append(DischargeProfile(t.copy(), currents, volts))
    return profiles


def generate(spec: SynthSpec):
    """Dispatch on spec.kind; returns the kind's natural in-memory form."""
    if spec.kind == "chf_like":
        return chf_like(spec)
    if spec.kind == "seasonal_grid":
        return seasonal_grid(spec)
    if spec.kind == "sensor_field":
        return sensor_field(spec)
    return degrading_cell(spec)
