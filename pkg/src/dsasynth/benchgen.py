"""Synthetic dual-stage benchmark: plant family, noise spectra and weights.

A redistributable stand-in for measured drive data: a coarse stage with
rigid-body behavior plus three lightly damped structural modes, a fine
stage with one high-frequency mode above the sampled band, mode-frequency
scatter across nine cases, shaped broadband noise spectra, and loop-shaping
weight templates tuned to the family.  All draws come from one seeded
generator, so a configuration maps to exactly one data set.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .freqdata import (ComplexResponse, FrequencyGrid, PlantCase, PlantSet,
                       WeightCurve, save_plant_set, save_spectrum, save_weight)
from .polysys import ClosedLoopChannel, LoopConfig


@dataclass(frozen=True)
class ModeSpec:
    """One resonant mode: radian peak near freq_hz, height ~ gain/(2*zeta)."""

    freq_hz: float
    zeta: float
    gain: float

    def __post_init__(self):
        if not (self.freq_hz > 0.0):
            raise ValueError("mode frequency must be > 0")
        if not (0.0 < self.zeta < 1.0):
            raise ValueError("damping ratio must be in (0, 1)")

    def response(self, f_hz: np.ndarray, freq_scale: float = 1.0) -> np.ndarray:
        wm = 2.0 * np.pi * self.freq_hz * freq_scale
        jw = 2j * np.pi * f_hz
        return self.gain * wm ** 2 / (jw ** 2 + 2.0 * self.zeta * wm * jw + wm ** 2)


# Coarse stage: rigid body with unit gain crossover near 1.2 kHz, softly
# regularized at DC so the response stays finite on a grid that includes 0.
VCM_GAIN = (2.0 * math.pi * 1200.0) ** 2
RIGID_REG_HZ = 0.5
VCM_DELAY_SAMPLES = 1.5


def _vcm_mode_gain(freq_hz: float, zeta: float, boost: float, sign: float) -> float:
    wm = 2.0 * math.pi * freq_hz
    return sign * boost * 2.0 * zeta * VCM_GAIN / wm ** 2


DEFAULT_VCM_MODES = (
    ModeSpec(2500.0, 0.02, _vcm_mode_gain(2500.0, 0.02, 4.0, +1.0)),
    ModeSpec(5500.0, 0.015, _vcm_mode_gain(5500.0, 0.015, 4.0, -1.0)),
    ModeSpec(8000.0, 0.01, _vcm_mode_gain(8000.0, 0.01, 4.0, +1.0)),
)
DEFAULT_PZT_MODE = ModeSpec(40000.0, 0.03, 1.0)


@dataclass(frozen=True)
class BenchConfig:
    seed: int = 42
    n_vcm_variants: int = 3
    n_pzt_variants: int = 3
    perturbation: float = 0.05
    ts: float = 1.0 / 50400.0
    n_grid: int = 300

    def __post_init__(self):
        if self.n_vcm_variants < 1 or self.n_pzt_variants < 1:
            raise ValueError("variant counts must be >= 1")
        if not (0.0 <= self.perturbation < 0.2):
            raise ValueError("perturbation must be in [0, 0.2)")
        if self.n_grid < 2 or not (self.ts > 0.0):
            raise ValueError("invalid grid configuration")

    def grid(self) -> FrequencyGrid:
        return FrequencyGrid(
            self.ts, np.linspace(0.0, 0.5 / self.ts, self.n_grid))


def _vcm_response(grid: FrequencyGrid, scales) -> np.ndarray:
    f = grid.freqs
    jw = 2j * np.pi * f
    w = 2.0 * np.pi * f
    lam = 2.0 * np.pi * RIGID_REG_HZ
    # k/(jw)^2 is real negative (mass line at -180 deg); the regularization
    # keeps that phase all the way to the 0 Hz grid point instead of
    # flipping sign below the corner.
    val = (-VCM_GAIN / (w ** 2 + lam ** 2)).astype(complex)
    for mode, sc in zip(DEFAULT_VCM_MODES, scales):
        val = val + mode.response(f, sc)
    delay = np.exp(-jw * VCM_DELAY_SAMPLES * grid.ts)
    return val * delay


def _pzt_response(grid: FrequencyGrid, scale: float) -> np.ndarray:
    return DEFAULT_PZT_MODE.response(grid.freqs, scale)


def gen_plants(cfg: BenchConfig) -> PlantSet:
    """The case family: Cartesian product of coarse and fine stage variants.

    Every mode frequency of every variant gets an independent uniform draw
    within +-perturbation; cases are numbered "1", "2", ... coarse-major.
    """
    grid = cfg.grid()
    rng = np.random.default_rng(cfg.seed)
    pert = cfg.perturbation
    vcm_scales = [1.0 + rng.uniform(-pert, pert, len(DEFAULT_VCM_MODES))
                  for _ in range(cfg.n_vcm_variants)]
    pzt_scales = [1.0 + rng.uniform(-pert, pert) for _ in range(cfg.n_pzt_variants)]
    vcm_vals = [_vcm_response(grid, sc) for sc in vcm_scales]
    pzt_vals = [_pzt_response(grid, sc) for sc in pzt_scales]
    cases = []
    idx = 1
    for pv in vcm_vals:
        for pp in pzt_vals:
            cases.append(PlantCase(str(idx),
                                   ComplexResponse(grid, pv),
                                   ComplexResponse(grid, pp)))
            idx += 1
    return PlantSet(tuple(cases))


def _res_mag(f: np.ndarray, f0: float, zeta: float) -> np.ndarray:
    """Second-order resonance magnitude normalized to unit peak."""
    nu = f / f0
    mag = 1.0 / np.sqrt((1.0 - nu ** 2) ** 2 + (2.0 * zeta * nu) ** 2)
    peak = 1.0 / (2.0 * zeta * math.sqrt(1.0 - zeta ** 2))
    return mag / peak


DP_CORNER_HZ = 2000.0
DP_BUMPS = ((1200.0, 0.05), (3000.0, 0.05))
DF_CENTER_HZ = 800.0
DF_BANDPASS_ZETA = 0.7
DF_BUMP = (2400.0, 0.05)
BUMP_GAIN = 10.0 ** (12.0 / 20.0) - 1.0  # +12 dB over the base curve


def gen_spectra(cfg: BenchConfig):
    """Unit-peak, zero-phase shaping spectra for the two noise sources."""
    grid = cfg.grid()
    f = grid.freqs
    lp = 1.0 / np.sqrt(1.0 + (f / DP_CORNER_HZ) ** 2)
    dp = lp * (1.0 + BUMP_GAIN * sum(_res_mag(f, f0, z) for f0, z in DP_BUMPS))
    dp = dp / np.max(dp)

    nu = f / DF_CENTER_HZ
    bp = (2.0 * DF_BANDPASS_ZETA * nu) / np.sqrt(
        (1.0 - nu ** 2) ** 2 + (2.0 * DF_BANDPASS_ZETA * nu) ** 2)
    df = bp * (1.0 + BUMP_GAIN * _res_mag(f, DF_BUMP[0], DF_BUMP[1]))
    df = df / np.max(df)
    return (ComplexResponse(grid, dp.astype(complex)),
            ComplexResponse(grid, df.astype(complex)))


SENS_FLOOR = 1e-3
SENS_CEILING = 2.0          # 6 dB sensitivity peaking allowance
VCM_ONLY_BW_FACTOR = 0.5    # the fallback single-stage loop aims lower
U_NOTCH_GAIN = 9.0          # +20 dB input-weight peaks at the coarse modes
U_NOTCH_REL_WIDTH = 0.06


def gen_weights(cfg: BenchConfig, target_bw_hz: float) -> dict:
    """Loop-shaping weight set keyed by (channel, config).

    Sensitivity weights are inverse templates rising from SENS_FLOOR at DC
    to a 6 dB ceiling past the bandwidth; input weights sit at 0 dB with
    +20 dB peaks at the nominal coarse-stage mode frequencies so those
    modes are not excited.
    """
    grid = cfg.grid()
    nyq = grid.nyquist
    if not (0.0 < target_bw_hz < nyq / 4.0):
        raise ValueError(f"target bandwidth must be in (0, {nyq / 4.0}) Hz")
    f = grid.freqs
    out = {}
    for cfg_loop, bw in ((LoopConfig.VCM_ONLY, VCM_ONLY_BW_FACTOR * target_bw_hz),
                         (LoopConfig.DSA, target_bw_hz)):
        bound = np.clip(f / bw, SENS_FLOOR, SENS_CEILING)
        out[(ClosedLoopChannel.S_DE, cfg_loop)] = WeightCurve(grid, 1.0 / bound)
        wu = np.ones_like(f)
        for mode in DEFAULT_VCM_MODES:
            sig = U_NOTCH_REL_WIDTH * mode.freq_hz
            wu = wu + U_NOTCH_GAIN * np.exp(-0.5 * ((f - mode.freq_hz) / sig) ** 2)
        out[(ClosedLoopChannel.U_D_UVCM, cfg_loop)] = WeightCurve(grid, wu)
    return out


# Defaults for the shipped design configuration (see write_benchmark).
DEFAULT_TARGET_BW_HZ = 600.0
DEFAULT_ORDER = 8
DEFAULT_N_ITER = 2
DEFAULT_CONV_TOL = 1e-4
DEFAULT_EPS_MARGIN = 1e-6
DEFAULT_STROKE_LIMIT = 0.15
DEFAULT_STROKE_INTERPRETATION = "THREE_SIGMA"

WEIGHT_FILES = {
    (ClosedLoopChannel.S_DE, LoopConfig.VCM_ONLY): "weights_s_vcm.csv",
    (ClosedLoopChannel.S_DE, LoopConfig.DSA): "weights_s_dsa.csv",
    (ClosedLoopChannel.U_D_UVCM, LoopConfig.VCM_ONLY): "weights_u_vcm.csv",
    (ClosedLoopChannel.U_D_UVCM, LoopConfig.DSA): "weights_u_dsa.csv",
}


def write_benchmark(cfg: BenchConfig, out_dir,
                    target_bw_hz: float = DEFAULT_TARGET_BW_HZ,
                    order: int = DEFAULT_ORDER,
                    stroke_limit: float = DEFAULT_STROKE_LIMIT,
                    n_iter: int = DEFAULT_N_ITER) -> dict:
    """Write plants.csv, dp.csv, df.csv, weights_*.csv, design.json, manifest.json.

    Returns the manifest dictionary.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plants = gen_plants(cfg)
    d_p, d_f = gen_spectra(cfg)
    weights = gen_weights(cfg, target_bw_hz)

    save_plant_set(plants, out / "plants.csv")
    save_spectrum(d_p, out / "dp.csv", magnitude_only=True)
    save_spectrum(d_f, out / "df.csv", magnitude_only=True)
    for key, fname in WEIGHT_FILES.items():
        save_weight(weights[key], out / fname)

    design = {
        "order": order,
        "n_iter": n_iter,
        "conv_tol": DEFAULT_CONV_TOL,
        "eps_margin": DEFAULT_EPS_MARGIN,
        "stroke": {"limit_m": stroke_limit,
                   "interpretation": DEFAULT_STROKE_INTERPRETATION},
        "weights": {"s_vcm": "weights_s_vcm.csv", "s_dsa": "weights_s_dsa.csv",
                    "u_vcm": "weights_u_vcm.csv", "u_dsa": "weights_u_dsa.csv"},
        "spectra": {"dp": "dp.csv", "df": "df.csv"},
    }
    (out / "design.json").write_text(json.dumps(design, indent=2) + "\n")

    manifest = {
        "seed": cfg.seed,
        "n_vcm_variants": cfg.n_vcm_variants,
        "n_pzt_variants": cfg.n_pzt_variants,
        "perturbation": cfg.perturbation,
        "ts": cfg.ts,
        "n_grid": cfg.n_grid,
        "target_bw_hz": target_bw_hz,
        "vcm_gain": VCM_GAIN,
        "rigid_reg_hz": RIGID_REG_HZ,
        "vcm_delay_samples": VCM_DELAY_SAMPLES,
        "vcm_modes": [{"freq_hz": m.freq_hz, "zeta": m.zeta, "gain": m.gain}
                      for m in DEFAULT_VCM_MODES],
        "pzt_mode": {"freq_hz": DEFAULT_PZT_MODE.freq_hz,
                     "zeta": DEFAULT_PZT_MODE.zeta,
                     "gain": DEFAULT_PZT_MODE.gain},
        "dp": {"corner_hz": DP_CORNER_HZ, "bumps": list(DP_BUMPS)},
        "df": {"center_hz": DF_CENTER_HZ, "bandpass_zeta": DF_BANDPASS_ZETA,
               "bump": list(DF_BUMP)},
        "bump_gain": BUMP_GAIN,
        "weights": {"sens_floor": SENS_FLOOR, "sens_ceiling": SENS_CEILING,
                    "vcm_only_bw_factor": VCM_ONLY_BW_FACTOR,
                    "u_notch_gain": U_NOTCH_GAIN,
                    "u_notch_rel_width": U_NOTCH_REL_WIDTH},
        "design": design,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def default_spec(cfg: BenchConfig | None = None,
                 target_bw_hz: float = DEFAULT_TARGET_BW_HZ,
                 order: int = DEFAULT_ORDER,
                 stroke_limit: float = DEFAULT_STROKE_LIMIT,
                 n_iter: int = DEFAULT_N_ITER):
    """In-memory SynthesisSpec over the generated benchmark (no files)."""
    from .synth import StrokeInterpretation, SynthesisSpec
    cfg = cfg or BenchConfig()
    d_p, d_f = gen_spectra(cfg)
    return SynthesisSpec(
        plants=gen_plants(cfg), order=order,
        weights=gen_weights(cfg, target_bw_hz), d_p=d_p, d_f=d_f,
        stroke_limit=stroke_limit,
        stroke_interpretation=StrokeInterpretation.THREE_SIGMA,
        eps_margin=DEFAULT_EPS_MARGIN, n_iter=n_iter,
        conv_tol=DEFAULT_CONV_TOL)
