"""Polynomial controller representation and closed-loop evaluation.

A controller is the factorization K = X / Y with a 2-row numerator
polynomial X (row 1 drives the coarse VCM stage, row 2 the fine PZT stage)
over a common monic denominator Y of degree p.  Closed-loop maps are then
linear-fractional in the coefficients, which is what the synthesis side
exploits; this module only evaluates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .freqdata import (ComplexResponse, FreqDataError, FrequencyGrid,
                       PlantCase, _frozen, _require_same_grid)

DENOM_ABS_TOL = 1e-12


class PolySysError(ValueError):
    """Invalid controller data or singular closed loop."""


class LoopConfig(Enum):
    """Which stages act: VCM alone (fallback) or the full dual stage."""
    VCM_ONLY = "VCM_ONLY"
    DSA = "DSA"


class ClosedLoopChannel(Enum):
    S_DE = "S_de"            # lumped disturbance -> position error
    U_D_UVCM = "U_d_uvcm"    # disturbance -> VCM input
    U_D_UPZT = "U_d_upzt"    # disturbance -> PZT input
    Y_D_YPZT = "Y_d_ypzt"    # disturbance -> PZT displacement


@dataclass(frozen=True, eq=False)
class Controller:
    """Coefficients of X (2 x (p+1)) and monic Y (p trailing coefficients).

    Coefficients are stored highest degree first; the leading 1 of Y is
    implied and not stored.  p = 0 is allowed (static controller, Y = 1).
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1:
            raise PolySysError("y coefficients must be a 1-D array")
        p = y.size
        if x.shape != (2, p + 1):
            raise PolySysError(
                f"x must have shape (2, {p + 1}) for order {p}, got {x.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise PolySysError("controller coefficients must be finite")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))

    @property
    def p(self) -> int:
        return self.y.size

    def y_full(self) -> np.ndarray:
        """Monic denominator coefficients including the leading 1."""
        return np.concatenate(([1.0], self.y))


def eval_controller(K: Controller, grid: FrequencyGrid):
    """Evaluate X1, X2 and Y on the grid's unit-circle points (Horner)."""
    z = grid.z_points()
    x1 = np.polyval(K.x[0], z)
    x2 = np.polyval(K.x[1], z)
    y = np.polyval(K.y_full(), z)
    return (ComplexResponse(grid, x1), ComplexResponse(grid, x2),
            ComplexResponse(grid, y))


def _loop_terms(K: Controller, plant: PlantCase, cfg: LoopConfig):
    grid = plant.grid
    x1, x2, y = eval_controller(K, grid)
    gx = plant.p_cv.values * x1.values
    if cfg is LoopConfig.DSA:
        gx = gx + plant.p_cp.values * x2.values
    return grid, x1.values, x2.values, y.values, y.values + gx


def denominator(K: Controller, plant: PlantCase, cfg: LoopConfig) -> ComplexResponse:
    """Closed-loop denominator P = Y + G*X on the plant grid."""
    grid, _, _, _, den = _loop_terms(K, plant, cfg)
    return ComplexResponse(grid, den)


def _check_denominator(grid: FrequencyGrid, y: np.ndarray, den: np.ndarray) -> None:
    bad = np.abs(den) <= DENOM_ABS_TOL * np.maximum(1.0, np.abs(y))
    if np.any(bad):
        k = int(np.argmax(bad))
        raise PolySysError(
            f"closed loop is near-singular at {grid.freqs[k]:.6g} Hz "
            f"(|Y+GX| = {abs(den[k]):.3e})")


def closed_loop(K: Controller, plant: PlantCase, cfg: LoopConfig,
                ch: ClosedLoopChannel) -> ComplexResponse:
    """One closed-loop transfer function evaluated on the plant grid.

    S_de = Y/P, U_d_uvcm = X1/P, U_d_upzt = X2/P, Y_d_ypzt = Gpzt*X2/P,
    with P = Y + G*X and Gpzt = P_cp under DSA, 0 under VCM_ONLY.
    """
    grid, x1, x2, y, den = _loop_terms(K, plant, cfg)
    _check_denominator(grid, y, den)
    if ch is ClosedLoopChannel.S_DE:
        num = y
    elif ch is ClosedLoopChannel.U_D_UVCM:
        num = x1
    elif ch is ClosedLoopChannel.U_D_UPZT:
        num = x2
    elif ch is ClosedLoopChannel.Y_D_YPZT:
        gpzt = plant.p_cp.values if cfg is LoopConfig.DSA else 0.0
        num = gpzt * x2
    else:  # pragma: no cover
        raise PolySysError(f"unknown channel {ch}")
    return ComplexResponse(grid, num / den)


def positivity_margin(K: Controller, plant: PlantCase, cfg: LoopConfig) -> float:
    """min_k Re[Y + G*X] over the grid; > 0 is the stability certificate."""
    _, _, _, _, den = _loop_terms(K, plant, cfg)
    return float(np.min(den.real))


def winding_number(curve: ComplexResponse, around: complex = 0.0) -> int:
    """Encirclements of `around` by the conjugate-symmetric closure of `curve`.

    The stored half (nonnegative frequencies) is reflected as conj(values)
    in reverse to close the contour over the full unit circle.  Phase
    increments between adjacent nodes must stay below pi in magnitude;
    larger steps mean the grid is too coarse to count reliably.
    """
    v = curve.values - complex(around)
    scale = max(1.0, float(np.max(np.abs(v))))
    if np.any(np.abs(v) <= 1e-12 * scale):
        raise PolySysError("curve touches the reference point")
    closed = np.concatenate([v, np.conj(v[::-1]), v[:1]])
    dphi = np.angle(closed[1:] / closed[:-1])
    if np.any(np.abs(dphi) >= np.pi * (1.0 - 1e-12)):
        k = int(np.argmax(np.abs(dphi)))
        raise PolySysError(
            f"phase step of {dphi[k]:.3f} rad between adjacent nodes "
            "(grid too coarse for winding count)")
    total = float(np.sum(dphi))
    return int(round(total / (2.0 * np.pi)))


# ---------------------------------------------------------------------------
# Controller JSON: {"ts": seconds, "order": p, "x": [[...],[...]], "y": [...]},
# coefficients highest degree first, Y's leading 1 implied.
# ---------------------------------------------------------------------------

def controller_to_dict(K: Controller, ts: float) -> dict:
    return {
        "ts": float(ts),
        "order": K.p,
        "x": [[float(c) for c in row] for row in K.x],
        "y": [float(c) for c in K.y],
    }


def save_controller(K: Controller, ts: float, path) -> None:
    Path(path).write_text(json.dumps(controller_to_dict(K, ts), indent=2) + "\n")


def load_controller(path) -> tuple[Controller, float]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise PolySysError(f"{path}: invalid JSON: {e}") from None
    try:
        ts = float(doc["ts"])
        order = int(doc["order"])
        x = np.asarray(doc["x"], dtype=float)
        y = np.asarray(doc["y"], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise PolySysError(f"{path}: malformed controller document: {e}") from None
    if y.size != order:
        raise PolySysError(f"{path}: order {order} inconsistent with y length {y.size}")
    K = Controller(x, y)
    if not np.isfinite(ts) or ts <= 0:
        raise PolySysError(f"{path}: invalid sampling period {ts}")
    return K, ts
