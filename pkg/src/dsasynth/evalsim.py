"""Independent closed-loop evaluation and stochastic time-domain simulation.

Everything here recomputes closed-loop quantities from the measurement data
directly (module polysys); nothing is taken from solver residuals, so the
audit is an honest cross-check of a synthesized design.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .freqdata import (ComplexResponse, FreqDataError, FrequencyGrid,
                       PlantCase, resample)
from .polysys import ClosedLoopChannel, Controller, LoopConfig, closed_loop, \
    positivity_margin
from .synth import (HINF_CHANNELS, HINF_CONFIGS, QuadratureWeights,
                    SynthesisSpec, quadrature)

HINF_PASS_TOL = 1e-6
BUDGET_PASS_REL = 1e-6


class EvalSimError(ValueError):
    """Invalid evaluation or simulation request."""


def h2_of(channel_response: ComplexResponse, spectrum: ComplexResponse,
          tau: QuadratureWeights) -> float:
    """Squared H2 norm of T*D from the quadrature: sum_k tau_k |T_k D_k|^2."""
    if not (channel_response.grid.matches(tau.grid)
            and spectrum.grid.matches(tau.grid)):
        raise EvalSimError("h2_of: response, spectrum and weights must share a grid")
    return float(tau.tau @ np.abs(channel_response.values * spectrum.values) ** 2)


# ---------------------------------------------------------------------------
# H-infinity audit
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AuditTable:
    """Per-(plant, config, channel, frequency) shaping margins 1 - |W*T|."""

    plant: np.ndarray     # (rows,) str
    config: np.ndarray    # (rows,) str
    channel: np.ndarray   # (rows,) str
    freq_hz: np.ndarray   # (rows,)
    margin: np.ndarray    # (rows,)

    @property
    def n_rows(self) -> int:
        return self.margin.size

    def min_margin(self) -> float:
        return float(np.min(self.margin))

    def summary(self) -> dict:
        out = {"rows": int(self.n_rows), "min_margin": self.min_margin()}
        per = {}
        for cfg in np.unique(self.config):
            for ch in np.unique(self.channel):
                m = (self.config == cfg) & (self.channel == ch)
                per[f"{cfg}/{ch}"] = float(np.min(self.margin[m]))
        out["min_margin_by_constraint"] = per
        return out

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["plant", "config", "channel", "freq_hz", "margin"])
            for i in range(self.n_rows):
                w.writerow([self.plant[i], self.config[i], self.channel[i],
                            repr(float(self.freq_hz[i])),
                            repr(float(self.margin[i]))])


def audit_hinf(K: Controller, spec: SynthesisSpec) -> AuditTable:
    """Directly evaluated margins for every enforced shaping constraint."""
    grid = spec.grid
    plants, configs, channels, freqs, margins = [], [], [], [], []
    for cfg in HINF_CONFIGS:
        for ch in HINF_CHANNELS:
            w = spec.weight(ch, cfg).magnitudes
            for plant in spec.plants.cases:
                t = closed_loop(K, plant, cfg, ch).values
                m = 1.0 - w * np.abs(t)
                plants.append(np.full(grid.n, plant.id, dtype=object))
                configs.append(np.full(grid.n, cfg.value, dtype=object))
                channels.append(np.full(grid.n, ch.value, dtype=object))
                freqs.append(grid.freqs)
                margins.append(m)
    return AuditTable(
        plant=np.concatenate(plants), config=np.concatenate(configs),
        channel=np.concatenate(channels), freq_hz=np.concatenate(freqs),
        margin=np.concatenate(margins))


# ---------------------------------------------------------------------------
# Full evaluation report
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PlantConfigEval:
    plant_id: str
    config: str
    positivity_margin: float
    peaks: dict               # channel value -> max_k |W*T|
    hinf_pass: bool

    def to_dict(self) -> dict:
        return {
            "plant": self.plant_id, "config": self.config,
            "positivity_margin": self.positivity_margin,
            "weighted_peaks": dict(self.peaks), "hinf_pass": self.hinf_pass,
        }


@dataclass(eq=False)
class PlantH2Eval:
    plant_id: str
    e_dp: float      # error variance share from the output-noise path
    e_df: float      # error variance share from the vibration path
    ycp_dp: float    # stroke variance share from the output-noise path
    ycp_df: float    # stroke variance share from the vibration path

    def to_dict(self) -> dict:
        return {
            "plant": self.plant_id,
            "e_dp": self.e_dp, "e_df": self.e_df,
            "e_total": self.e_dp + self.e_df,
            "ycp_dp": self.ycp_dp, "ycp_df": self.ycp_df,
            "ycp_total": self.ycp_dp + self.ycp_df,
        }


@dataclass(eq=False)
class EvaluationReport:
    entries: list
    h2: list
    h2_objective: float          # averaged error variance (DSA)
    stroke_budget_used: float    # averaged stroke variance (DSA)
    budget_rhs: float
    stroke_pass: bool
    all_stable: bool
    all_hinf_pass: bool
    audit: AuditTable

    def to_json_dict(self) -> dict:
        return {
            "per_plant_config": [e.to_dict() for e in self.entries],
            "per_plant_h2": [h.to_dict() for h in self.h2],
            "h2_objective": self.h2_objective,
            "stroke_budget_used": self.stroke_budget_used,
            "stroke_budget_rhs": self.budget_rhs,
            "stroke_pass": self.stroke_pass,
            "all_stable": self.all_stable,
            "all_hinf_pass": self.all_hinf_pass,
            "hinf_audit": self.audit.summary(),
        }


def evaluate(K: Controller, spec: SynthesisSpec) -> EvaluationReport:
    """Audit a controller against a synthesis configuration.

    Reports, per plant and loop configuration, the positivity stability
    certificate and weighted shaping peaks, and per plant the two error and
    two stroke variance contributions under the dual-stage loop, plus the
    set-wide averages checked against the budget.
    """
    tau = quadrature(spec.grid)
    entries = []
    h2 = []
    for plant in spec.plants.cases:
        for cfg in HINF_CONFIGS:
            peaks = {}
            for ch in HINF_CHANNELS:
                w = spec.weight(ch, cfg).magnitudes
                t = closed_loop(K, plant, cfg, ch).values
                peaks[ch.value] = float(np.max(w * np.abs(t)))
            entries.append(PlantConfigEval(
                plant_id=plant.id, config=cfg.value,
                positivity_margin=positivity_margin(K, plant, cfg),
                peaks=peaks,
                hinf_pass=max(peaks.values()) <= 1.0 + HINF_PASS_TOL))
        s = closed_loop(K, plant, LoopConfig.DSA, ClosedLoopChannel.S_DE)
        ypzt = closed_loop(K, plant, LoopConfig.DSA, ClosedLoopChannel.Y_D_YPZT)
        dfv = ComplexResponse(spec.grid, plant.p_cv.values * spec.d_f.values)
        h2.append(PlantH2Eval(
            plant_id=plant.id,
            e_dp=h2_of(s, spec.d_p, tau), e_df=h2_of(s, dfv, tau),
            ycp_dp=h2_of(ypzt, spec.d_p, tau), ycp_df=h2_of(ypzt, dfv, tau)))
    l = spec.plants.l
    obj = sum(r.e_dp + r.e_df for r in h2) / l
    budget = sum(r.ycp_dp + r.ycp_df for r in h2) / l
    return EvaluationReport(
        entries=entries, h2=h2, h2_objective=obj, stroke_budget_used=budget,
        budget_rhs=spec.budget_rhs,
        stroke_pass=budget <= spec.budget_rhs * (1.0 + BUDGET_PASS_REL),
        all_stable=all(e.positivity_margin > 0.0 for e in entries),
        all_hinf_pass=all(e.hinf_pass for e in entries),
        audit=audit_hinf(K, spec))


def bode_rows(K: Controller, spec: SynthesisSpec):
    """Rows for the Bode export CSV, one per (config, channel, plant, freq).

    Weighted channels carry the inverse-weight curve for plotting against
    the response; unweighted channels leave that column empty.
    """
    rows = []
    grid = spec.grid
    all_channels = (ClosedLoopChannel.S_DE, ClosedLoopChannel.U_D_UVCM,
                    ClosedLoopChannel.U_D_UPZT, ClosedLoopChannel.Y_D_YPZT)
    for cfg in HINF_CONFIGS:
        for ch in all_channels:
            has_w = (ch, cfg) in spec.weights
            inv_w = (1.0 / spec.weight(ch, cfg).magnitudes) if has_w else None
            for plant in spec.plants.cases:
                t = closed_loop(K, plant, cfg, ch).values
                mag_db = 20.0 * np.log10(np.maximum(np.abs(t), 1e-300))
                ph = np.degrees(np.angle(t))
                for k in range(grid.n):
                    rows.append([
                        repr(float(grid.freqs[k])), ch.value, cfg.value,
                        plant.id, repr(float(mag_db[k])), repr(float(ph[k])),
                        repr(float(20.0 * np.log10(inv_w[k]))) if has_w else "",
                    ])
    return rows


def write_bode_csv(K: Controller, spec: SynthesisSpec, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "channel", "config", "plant",
                    "mag_db", "phase_deg", "inv_weight_db"])
        w.writerows(bode_rows(K, spec))


# ---------------------------------------------------------------------------
# Stochastic simulation
# ---------------------------------------------------------------------------

class NoiseKind(Enum):
    UNIFORM = "UNIFORM"
    GAUSSIAN = "GAUSSIAN"


@dataclass(frozen=True)
class SimulationConfig:
    seed: int
    samples: int = 1 << 18
    noise_kind: NoiseKind = NoiseKind.UNIFORM
    track_width: float = 100e-9

    def __post_init__(self):
        m = int(self.samples)
        if m < (1 << 16) or (m & (m - 1)) != 0:
            raise EvalSimError("samples must be a power of two >= 65536")
        if not (self.track_width > 0.0):
            raise EvalSimError("track width must be > 0")


@dataclass(frozen=True)
class SimulationMetrics:
    sigma3_e: float            # 3x std of the error signal
    sigma3_e_pct_track: float  # the same as a percentage of the track width
    max_abs_ycp: float         # peak fine-stage displacement
    var_ycp: float             # fine-stage displacement variance
    var_e: float

    def to_dict(self) -> dict:
        return {
            "sigma3_e_m": self.sigma3_e,
            "sigma3_e_pct_track": self.sigma3_e_pct_track,
            "max_abs_ycp_m": self.max_abs_ycp,
            "var_ycp_m2": self.var_ycp,
            "var_e_m2": self.var_e,
        }


def _unit_noise(rng: np.random.Generator, kind: NoiseKind, m: int) -> np.ndarray:
    if kind is NoiseKind.UNIFORM:
        r = np.sqrt(3.0)
        return rng.uniform(-r, r, m)
    return rng.standard_normal(m)


def simulate(K: Controller, plant: PlantCase, spectra, cfg: SimulationConfig):
    """Closed-loop time series under the two shaped unit-variance noises.

    Frequency-domain (circular) filtering: the real FFT of each white
    sequence is multiplied by the shaping spectrum and the closed-loop
    response resampled onto the FFT bins, so no plant model is ever fitted.
    Draw order is fixed (output-noise sequence first), making runs with one
    seed bit-identical.

    Returns (e, y_cp, SimulationMetrics).
    """
    d_p, d_f = spectra
    grid = plant.grid
    m = int(cfg.samples)
    ts = grid.ts
    bins = np.fft.rfftfreq(m, d=ts)
    if bins[0] < grid.freqs[0] or bins[-1] > grid.freqs[-1] * (1.0 + 1e-12):
        raise EvalSimError(
            "FFT bins outside the measured band; the grid must span "
            "[0, Nyquist] to simulate")
    bin_grid = FrequencyGrid(ts, bins)

    s_de = resample(closed_loop(K, plant, LoopConfig.DSA,
                                ClosedLoopChannel.S_DE), bin_grid).values
    y_pzt = resample(closed_loop(K, plant, LoopConfig.DSA,
                                 ClosedLoopChannel.Y_D_YPZT), bin_grid).values
    filt_p = resample(d_p, bin_grid).values
    filt_f = resample(ComplexResponse(grid, plant.p_cv.values * d_f.values),
                      bin_grid).values

    rng = np.random.default_rng(cfg.seed)
    n_p = np.fft.rfft(_unit_noise(rng, cfg.noise_kind, m))
    n_f = np.fft.rfft(_unit_noise(rng, cfg.noise_kind, m))

    d_hat_p = n_p * filt_p
    d_hat_f = n_f * filt_f
    e = np.fft.irfft(s_de * (d_hat_p + d_hat_f), n=m)
    ycp = np.fft.irfft(y_pzt * (d_hat_p + d_hat_f), n=m)

    var_e = float(np.var(e))
    var_ycp = float(np.var(ycp))
    sigma3 = 3.0 * float(np.std(e))
    metrics = SimulationMetrics(
        sigma3_e=sigma3,
        sigma3_e_pct_track=100.0 * sigma3 / cfg.track_width,
        max_abs_ycp=float(np.max(np.abs(ycp))),
        var_ycp=var_ycp, var_e=var_e)
    return e, ycp, metrics


def write_series_csv(e: np.ndarray, ycp: np.ndarray, ts: float, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "e_m", "ycp_m"])
        for i in range(e.size):
            w.writerow([repr(i * ts), repr(float(e[i])), repr(float(ycp[i]))])
