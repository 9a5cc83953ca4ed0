"""Frequency grids, complex frequency-response data, spectra, weights and CSV I/O.

All containers are immutable after construction (arrays are made read-only)
and therefore safe to share across threads.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NYQUIST_RTOL = 1e-9
GRID_MATCH_RTOL = 1e-9


class FreqDataError(ValueError):
    """Malformed file or violated data invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Sampled frequency axis for a discrete-time system.

    Only the nonnegative half-axis is stored; values at negative frequencies
    follow from conjugate symmetry of real-coefficient systems.

    ts : sampling period in seconds
    freqs : strictly increasing frequencies in Hz, within [0, 1/(2*ts)]
    """

    ts: float
    freqs: np.ndarray

    def __post_init__(self):
        ts = float(self.ts)
        if not np.isfinite(ts) or ts <= 0.0:
            raise FreqDataError(f"sampling period must be positive, got {ts}")
        f = np.asarray(self.freqs, dtype=float)
        if f.ndim != 1 or f.size < 2:
            raise FreqDataError("grid needs at least 2 frequencies")
        if not np.all(np.isfinite(f)):
            raise FreqDataError("grid frequencies must be finite")
        if f[0] < 0.0:
            raise FreqDataError("grid frequencies must be nonnegative")
        if not np.all(np.diff(f) > 0.0):
            raise FreqDataError("grid frequencies must be strictly increasing")
        nyq = 0.5 / ts
        if f[-1] > nyq * (1.0 + NYQUIST_RTOL):
            raise FreqDataError(
                f"last frequency {f[-1]} Hz exceeds Nyquist {nyq} Hz")
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "freqs", _frozen(f))

    @property
    def n(self) -> int:
        return self.freqs.size

    @property
    def nyquist(self) -> float:
        return 0.5 / self.ts

    def omegas(self) -> np.ndarray:
        """Angular frequencies in rad/s."""
        return 2.0 * np.pi * self.freqs

    def z_points(self) -> np.ndarray:
        """Unit-circle evaluation points exp(j*2*pi*f*ts)."""
        return np.exp(1j * 2.0 * np.pi * self.freqs * self.ts)

    def matches(self, other: "FrequencyGrid", rtol: float = GRID_MATCH_RTOL) -> bool:
        if other is self:
            return True
        if self.n != other.n:
            return False
        if abs(self.ts - other.ts) > rtol * self.ts:
            return False
        scale = max(self.freqs[-1], 1.0)
        return bool(np.all(np.abs(self.freqs - other.freqs) <= rtol * scale))


def _require_same_grid(a: "FrequencyGrid", b: "FrequencyGrid", what: str) -> None:
    if not a.matches(b):
        raise FreqDataError(f"{what}: frequency grids do not match")


@dataclass(frozen=True, eq=False)
class ComplexResponse:
    """Complex values sampled on a frequency grid."""

    grid: FrequencyGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 1 or v.size != self.grid.n:
            raise FreqDataError(
                f"response length {v.size} does not match grid length {self.grid.n}")
        if not np.all(np.isfinite(v)):
            raise FreqDataError("response values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    def __mul__(self, other):
        if isinstance(other, ComplexResponse):
            _require_same_grid(self.grid, other.grid, "response product")
            return ComplexResponse(self.grid, self.values * other.values)
        return ComplexResponse(self.grid, self.values * other)

    __rmul__ = __mul__

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass(frozen=True, eq=False)
class WeightCurve:
    """Strictly positive magnitude weight on a frequency grid."""

    grid: FrequencyGrid
    magnitudes: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.magnitudes, dtype=float)
        if m.ndim != 1 or m.size != self.grid.n:
            raise FreqDataError(
                f"weight length {m.size} does not match grid length {self.grid.n}")
        if not np.all(np.isfinite(m)) or np.any(m <= 0.0):
            raise FreqDataError("weight magnitudes must be finite and > 0")
        object.__setattr__(self, "magnitudes", _frozen(m))


@dataclass(frozen=True, eq=False)
class PlantCase:
    """One drive: VCM-path and PZT-path responses on a shared grid."""

    id: str
    p_cv: ComplexResponse
    p_cp: ComplexResponse

    def __post_init__(self):
        if not str(self.id):
            raise FreqDataError("plant case id must be nonempty")
        _require_same_grid(self.p_cv.grid, self.p_cp.grid, f"case {self.id}")
        object.__setattr__(self, "id", str(self.id))

    @property
    def grid(self) -> FrequencyGrid:
        return self.p_cv.grid


@dataclass(frozen=True, eq=False)
class PlantSet:
    """A family of plant cases sharing one frequency grid."""

    cases: tuple

    def __post_init__(self):
        cases = tuple(self.cases)
        if not cases:
            raise FreqDataError("plant set must contain at least one case")
        ids = [c.id for c in cases]
        if len(set(ids)) != len(ids):
            raise FreqDataError("plant case ids must be unique")
        g = cases[0].grid
        for c in cases[1:]:
            _require_same_grid(g, c.grid, f"case {c.id}")
        object.__setattr__(self, "cases", cases)

    @property
    def grid(self) -> FrequencyGrid:
        return self.cases[0].grid

    @property
    def l(self) -> int:
        return len(self.cases)

    def case(self, case_id: str) -> PlantCase:
        for c in self.cases:
            if c.id == str(case_id):
                return c
        raise KeyError(f"no plant case with id {case_id!r}")


def resample(r: ComplexResponse, target: FrequencyGrid) -> ComplexResponse:
    """Complex-linear interpolation of a response onto a new grid.

    Real and imaginary parts are interpolated independently; values at
    shared nodes are reproduced exactly.  Extrapolation outside the source
    band is an error.
    """
    src = r.grid.freqs
    tgt = target.freqs
    if tgt[0] < src[0] or tgt[-1] > src[-1]:
        raise FreqDataError(
            f"resample target [{tgt[0]}, {tgt[-1]}] Hz outside source band "
            f"[{src[0]}, {src[-1]}] Hz")
    re = np.interp(tgt, src, r.values.real)
    im = np.interp(tgt, src, r.values.imag)
    return ComplexResponse(target, re + 1j * im)


# ---------------------------------------------------------------------------
# CSV I/O.
#
# Plant file:    case_id,freq_hz,re_pcv,im_pcv,re_pcp,im_pcp
# Spectrum file: freq_hz,re,im   (or freq_hz,mag for magnitude-only data)
# Weight file:   freq_hz,mag
#
# Numbers are locale-independent decimal with '.' as separator, written with
# shortest round-trip precision (repr), so save -> load is bit-identical.
# The schemas carry no sampling period; on load it defaults to 1/(2*f_last),
# i.e. the grid is assumed to extend to Nyquist.  Pass ts explicitly when
# loading band-limited files.
# ---------------------------------------------------------------------------

PLANT_HEADER = ["case_id", "freq_hz", "re_pcv", "im_pcv", "re_pcp", "im_pcp"]


def _parse_float(token: str, path, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise FreqDataError(f"{path}:{line}: cannot parse number {token!r}") from None


def _read_rows(path, expected_header: Sequence[str], alt_header: Sequence[str] = ()):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FreqDataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header == list(expected_header):
            variant = 0
        elif alt_header and header == list(alt_header):
            variant = 1
        else:
            raise FreqDataError(
                f"{path}: unexpected header {header!r}, want {list(expected_header)!r}")
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            want = len(alt_header) if variant else len(expected_header)
            if len(row) != want:
                raise FreqDataError(f"{path}:{i}: expected {want} fields, got {len(row)}")
            rows.append((i, row))
        return variant, rows


def _infer_ts(freqs: np.ndarray) -> float:
    return 0.5 / float(freqs[-1])


def load_plant_set(path, ts: float | None = None) -> PlantSet:
    """Load a plant set from CSV (schema in the module docstring)."""
    path = Path(path)
    _, rows = _read_rows(path, PLANT_HEADER)
    if not rows:
        raise FreqDataError(f"{path}: no data rows")
    # Group rows by case id, preserving first-appearance order.
    order: list[str] = []
    by_case: dict[str, list] = {}
    for line, row in rows:
        cid = row[0].strip()
        if cid not in by_case:
            by_case[cid] = []
            order.append(cid)
        nums = [_parse_float(t, path, line) for t in row[1:]]
        by_case[cid].append(nums)

    grid = None
    cases = []
    for cid in order:
        arr = np.asarray(by_case[cid], dtype=float)
        f = arr[:, 0]
        if grid is None:
            if np.any(np.diff(f) <= 0.0):
                raise FreqDataError(f"{path}: case {cid}: non-monotone frequency grid")
            grid = FrequencyGrid(ts if ts is not None else _infer_ts(f), f)
        else:
            if f.size != grid.n:
                raise FreqDataError(
                    f"{path}: case {cid}: {f.size} rows, expected {grid.n}")
            if not np.array_equal(f, grid.freqs):
                raise FreqDataError(f"{path}: case {cid}: grid differs from first case")
        pcv = ComplexResponse(grid, arr[:, 1] + 1j * arr[:, 2])
        pcp = ComplexResponse(grid, arr[:, 3] + 1j * arr[:, 4])
        cases.append(PlantCase(cid, pcv, pcp))
    return PlantSet(tuple(cases))


def save_plant_set(plants: PlantSet, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PLANT_HEADER)
        f = plants.grid.freqs
        for c in plants.cases:
            for k in range(plants.grid.n):
                w.writerow([c.id, repr(f[k]),
                            repr(c.p_cv.values[k].real), repr(c.p_cv.values[k].imag),
                            repr(c.p_cp.values[k].real), repr(c.p_cp.values[k].imag)])


def load_spectrum(path, ts: float | None = None) -> ComplexResponse:
    """Load a disturbance spectrum (complex, or magnitude-only with zero phase)."""
    path = Path(path)
    variant, rows = _read_rows(path, ["freq_hz", "re", "im"], ["freq_hz", "mag"])
    if not rows:
        raise FreqDataError(f"{path}: no data rows")
    arr = np.asarray([[_parse_float(t, path, line) for t in row]
                      for line, row in rows], dtype=float)
    f = arr[:, 0]
    if np.any(np.diff(f) <= 0.0):
        raise FreqDataError(f"{path}: non-monotone frequency grid")
    grid = FrequencyGrid(ts if ts is not None else _infer_ts(f), f)
    if variant:
        values = arr[:, 1].astype(complex)
    else:
        values = arr[:, 1] + 1j * arr[:, 2]
    return ComplexResponse(grid, values)


def save_spectrum(r: ComplexResponse, path, magnitude_only: bool = False) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if magnitude_only:
            w.writerow(["freq_hz", "mag"])
            for k in range(r.grid.n):
                w.writerow([repr(r.grid.freqs[k]), repr(abs(r.values[k]))])
        else:
            w.writerow(["freq_hz", "re", "im"])
            for k in range(r.grid.n):
                w.writerow([repr(r.grid.freqs[k]),
                            repr(r.values[k].real), repr(r.values[k].imag)])


def load_weight(path, ts: float | None = None) -> WeightCurve:
    path = Path(path)
    _, rows = _read_rows(path, ["freq_hz", "mag"])
    if not rows:
        raise FreqDataError(f"{path}: no data rows")
    arr = np.asarray([[_parse_float(t, path, line) for t in row]
                      for line, row in rows], dtype=float)
    f = arr[:, 0]
    if np.any(np.diff(f) <= 0.0):
        raise FreqDataError(f"{path}: non-monotone frequency grid")
    grid = FrequencyGrid(ts if ts is not None else _infer_ts(f), f)
    return WeightCurve(grid, arr[:, 1])


def save_weight(w: WeightCurve, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["freq_hz", "mag"])
        for k in range(w.grid.n):
            wr.writerow([repr(w.grid.freqs[k]), repr(w.magnitudes[k])])
