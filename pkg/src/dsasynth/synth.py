"""Controller synthesis: constraint assembly and the iterative design loop.

The design variables are the stacked controller coefficients
theta = [x1 (p+1), x2 (p+1), y (p)], highest degree first.  Every
closed-loop quantity used here is affine in theta except the squared
denominator |Y + G X|^2, which is replaced by its first-order expansion
about the previous iterate; the dropped square makes every linearized
constraint conservative with respect to the true one.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .conic import (ConeBlock, ConeKind, ConicProblem, ConicSolution,
                    SolveStatus, ToleranceSet, solve)
from .freqdata import (ComplexResponse, FreqDataError, FrequencyGrid,
                       PlantCase, PlantSet, WeightCurve, _frozen)
from .polysys import ClosedLoopChannel, Controller, LoopConfig, eval_controller

MARGIN_CAP = 1e6
THETA_CAP = 1e3
DENOM_FLOOR = 1e-12

HINF_CHANNELS = (ClosedLoopChannel.S_DE, ClosedLoopChannel.U_D_UVCM)
HINF_CONFIGS = (LoopConfig.VCM_ONLY, LoopConfig.DSA)


class SynthesisError(RuntimeError):
    """Synthesis failed (solver breakdown or invalid intermediate state)."""


class InfeasibleDesignError(SynthesisError):
    """The constraint set admits no controller at the requested order."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst  # (config, channel, plant_id, freq_hz) or similar


class StrokeInterpretation(Enum):
    # THREE_SIGMA: limit is a hard amplitude bound; the average output std
    # is kept below a third of it.  VARIANCE_BOUND: limit bounds the std
    # directly (variance <= limit^2).
    THREE_SIGMA = "THREE_SIGMA"
    VARIANCE_BOUND = "VARIANCE_BOUND"


@dataclass(frozen=True, eq=False)
class QuadratureWeights:
    """Trapezoid weights tau with sum_k tau_k h_k ~ (Ts/2pi) Int_Omega h dw.

    The stored nonnegative half-axis is doubled once to account for the
    conjugate-symmetric half, so a flat h = 1 over the full band integrates
    to exactly 1.
    """

    grid: FrequencyGrid
    tau: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tau, dtype=float)
        if t.shape != (self.grid.n,) or np.any(t < 0.0):
            raise ValueError("invalid quadrature weights")
        object.__setattr__(self, "tau", _frozen(t))


def quadrature(grid: FrequencyGrid) -> QuadratureWeights:
    """Trapezoid node weights over the covered band, in normalized units."""
    w = grid.omegas()
    node = np.zeros(grid.n)
    dw = np.diff(w)
    node[:-1] += 0.5 * dw
    node[1:] += 0.5 * dw
    return QuadratureWeights(grid, (grid.ts / np.pi) * node)


@dataclass(frozen=True, eq=False)
class SynthesisSpec:
    """Full configuration of one synthesis run."""

    plants: PlantSet
    order: int
    weights: dict            # (ClosedLoopChannel, LoopConfig) -> WeightCurve
    d_p: ComplexResponse
    d_f: ComplexResponse
    stroke_limit: float
    stroke_interpretation: StrokeInterpretation = StrokeInterpretation.THREE_SIGMA
    eps_margin: float = 1e-6
    n_iter: int = 2
    conv_tol: float = 1e-4

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("controller order must be >= 1")
        if not (self.stroke_limit > 0.0):
            raise ValueError("stroke limit must be > 0")
        if not (self.eps_margin > 0.0):
            raise ValueError("eps_margin must be > 0")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if not (self.conv_tol >= 0.0):
            raise ValueError("conv_tol must be >= 0")
        grid = self.plants.grid
        for ch in HINF_CHANNELS:
            for cfg in HINF_CONFIGS:
                try:
                    wc = self.weights[(ch, cfg)]
                except KeyError:
                    raise ValueError(
                        f"missing weight for ({ch.value}, {cfg.value})") from None
                if not wc.grid.matches(grid):
                    raise ValueError(
                        f"weight ({ch.value}, {cfg.value}) grid mismatch")
        for name, r in (("d_p", self.d_p), ("d_f", self.d_f)):
            if not r.grid.matches(grid):
                raise ValueError(f"{name} grid mismatch")

    @property
    def grid(self) -> FrequencyGrid:
        return self.plants.grid

    def weight(self, ch: ClosedLoopChannel, cfg: LoopConfig) -> WeightCurve:
        return self.weights[(ch, cfg)]

    @property
    def mu_eff(self) -> float:
        if self.stroke_interpretation is StrokeInterpretation.THREE_SIGMA:
            return self.stroke_limit / 3.0
        return self.stroke_limit

    @property
    def budget_rhs(self) -> float:
        return self.mu_eff ** 2


# ---------------------------------------------------------------------------
# Coefficient layout and affine maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoeffLayout:
    """Indexing of the design vector theta = [x1, x2, y]."""

    p: int

    @property
    def n_coeffs(self) -> int:
        return 3 * self.p + 2

    @property
    def sl_x1(self) -> slice:
        return slice(0, self.p + 1)

    @property
    def sl_x2(self) -> slice:
        return slice(self.p + 1, 2 * self.p + 2)

    @property
    def sl_y(self) -> slice:
        return slice(2 * self.p + 2, 3 * self.p + 2)

    def basis(self, grid: FrequencyGrid) -> np.ndarray:
        """Monomials [z^p, ..., z, 1] at each grid point, shape (N, p+1)."""
        return np.vander(grid.z_points(), self.p + 1)

    def theta_of(self, K: Controller) -> np.ndarray:
        if K.p != self.p:
            raise ValueError(f"controller order {K.p} != layout order {self.p}")
        return np.concatenate([K.x[0], K.x[1], K.y])

    def controller_from(self, theta: np.ndarray) -> Controller:
        theta = np.asarray(theta, dtype=float)
        return Controller(np.vstack([theta[self.sl_x1], theta[self.sl_x2]]),
                          theta[self.sl_y])


class _AffineMaps:
    """Complex affine maps theta -> (X1, X2, Y, P) per plant and config."""

    def __init__(self, layout: CoeffLayout, grid: FrequencyGrid):
        self.layout = layout
        n = layout.n_coeffs
        N = grid.n
        B = layout.basis(grid)
        self.CY = np.zeros((N, n), dtype=complex)
        self.CY[:, layout.sl_y] = B[:, 1:]
        self.dY = B[:, 0].copy()
        self.CX1 = np.zeros((N, n), dtype=complex)
        self.CX1[:, layout.sl_x1] = B
        self.CX2 = np.zeros((N, n), dtype=complex)
        self.CX2[:, layout.sl_x2] = B

    def P(self, plant: PlantCase, cfg: LoopConfig):
        CP = self.CY + plant.p_cv.values[:, None] * self.CX1
        if cfg is LoopConfig.DSA:
            CP = CP + plant.p_cp.values[:, None] * self.CX2
        return CP, self.dY

    def channel_num(self, ch: ClosedLoopChannel):
        if ch is ClosedLoopChannel.S_DE:
            return self.CY, self.dY
        if ch is ClosedLoopChannel.U_D_UVCM:
            return self.CX1, np.zeros_like(self.dY)
        raise ValueError(f"no shaping constraint defined for channel {ch}")


# ---------------------------------------------------------------------------
# Linearization of the squared denominator
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AffineReal:
    """A real affine functional of theta: coeffs @ theta + const."""

    coeffs: np.ndarray
    const: float

    def __call__(self, theta: np.ndarray) -> float:
        return float(self.coeffs @ np.asarray(theta, dtype=float) + self.const)


def _linearize_all(K_c: Controller, plant: PlantCase, maps: _AffineMaps,
                   cfg: LoopConfig = LoopConfig.DSA):
    """Rows (N, n) and constants (N,) of the linearized |Y + G X|^2."""
    grid = plant.grid
    x1, x2, y = eval_controller(K_c, grid)
    pc = y.values + plant.p_cv.values * x1.values
    if cfg is LoopConfig.DSA:
        pc = pc + plant.p_cp.values * x2.values
    if np.any(np.abs(pc) < DENOM_FLOOR):
        k = int(np.argmin(np.abs(pc)))
        raise SynthesisError(
            f"linearization point is singular at {grid.freqs[k]:.6g} Hz")
    CP, dP = maps.P(plant, cfg)
    Q = 2.0 * np.real(np.conj(pc)[:, None] * CP)
    q0 = 2.0 * np.real(np.conj(pc) * dP) - np.abs(pc) ** 2
    return Q, q0, pc


def linearize_denominator(K_c: Controller, plant: PlantCase, k: int,
                          cfg: LoopConfig = LoopConfig.DSA) -> AffineReal:
    """First-order model of |Y + G X|^2 at grid point k, exact at K_c.

    The dropped quadratic term makes the returned functional a lower bound
    of the true squared magnitude everywhere.
    """
    layout = CoeffLayout(K_c.p)
    maps = _AffineMaps(layout, plant.grid)
    Q, q0, _ = _linearize_all(K_c, plant, maps, cfg)
    return AffineReal(Q[k].copy(), float(q0[k]))


# ---------------------------------------------------------------------------
# Constraint assembly
# ---------------------------------------------------------------------------

def _hinf_blocks(spec: SynthesisSpec, layout: CoeffLayout,
                 margin_var: int | None, n_vars: int):
    """3-dim SOC blocks  |W*T_num| <= Re[Y+GX] - eps  (or - t).

    Enumeration order (configs, channels, plants, frequencies) is fixed;
    the returned metadata parallels the block list.
    """
    maps = _AffineMaps(layout, spec.grid)
    n = layout.n_coeffs
    sup = np.arange(n_vars, dtype=np.int64)
    blocks = []
    meta = []
    eps = spec.eps_margin
    for cfg in HINF_CONFIGS:
        for ch in HINF_CHANNELS:
            w = spec.weight(ch, cfg).magnitudes
            CT, dT = maps.channel_num(ch)
            for plant in spec.plants.cases:
                CP, dP = maps.P(plant, cfg)
                N = spec.grid.n
                F = np.zeros((N, 3, n_vars))
                g = np.zeros((N, 3))
                F[:, 0, :n] = CP.real
                g[:, 0] = dP.real
                if margin_var is None:
                    g[:, 0] -= eps
                else:
                    F[:, 0, margin_var] = -1.0
                F[:, 1, :n] = w[:, None] * CT.real
                F[:, 2, :n] = w[:, None] * CT.imag
                g[:, 1] = w * dT.real
                g[:, 2] = w * dT.imag
                # uniform per-block normalization (cone-exact)
                scale = 1.0 / np.maximum(1.0, np.abs(F).max(axis=(1, 2)))
                F *= scale[:, None, None]
                g *= scale[:, None]
                for k in range(N):
                    blocks.append(ConeBlock(ConeKind.SOC, sup, F[k], g[k]))
                    meta.append((cfg, ch, plant.id, k))
    return blocks, meta


def assemble_hinf(spec: SynthesisSpec, layout: CoeffLayout):
    """Shaping constraints with the fixed slack margin eps."""
    return _hinf_blocks(spec, layout, None, layout.n_coeffs)


def _rsoc_pair_blocks(spec, layout, K_c, num_specs, slack_start):
    """RSOC blocks (slack, q(theta), sqrt2*Re b, sqrt2*Im b) per plant/freq.

    num_specs: list of (tag, numerator_fn) where numerator_fn(plant, maps)
    returns the complex affine numerator (C, d).  One slack variable per
    (numerator, plant, frequency), allocated from slack_start.

    |P_c|^2 spans many decades across the band, so each slack is expressed
    in units of its own block's |P_c|^2 (an exact change of variable): the
    theta-coupled rows all become O(1) and the magnitude spread moves into
    the returned per-slack weights, where it is numerically harmless.
    Returns (blocks, meta, slack_ids, slack_scales).
    """
    maps = _AffineMaps(layout, spec.grid)
    n = layout.n_coeffs
    N = spec.grid.n
    blocks = []
    meta = []
    sqrt2 = np.sqrt(2.0)
    slack = slack_start
    slack_ids = []
    slack_scales = []
    theta_sup = np.arange(n, dtype=np.int64)
    for tag, num_fn in num_specs:
        for plant in spec.plants.cases:
            Q, q0, pc = _linearize_all(K_c, plant, maps, LoopConfig.DSA)
            Cb, db = num_fn(plant, maps)
            s_blk = np.maximum(np.abs(pc) ** 2, 1e-30)
            inv = 1.0 / s_blk
            F = np.zeros((N, 4, n + 1))
            g = np.zeros((N, 4))
            F[:, 0, n] = 1.0
            F[:, 1, :n] = Q * inv[:, None]
            g[:, 1] = q0 * inv
            F[:, 2, :n] = sqrt2 * Cb.real * inv[:, None]
            F[:, 3, :n] = sqrt2 * Cb.imag * inv[:, None]
            g[:, 2] = sqrt2 * db.real * inv
            g[:, 3] = sqrt2 * db.imag * inv
            for k in range(N):
                sup = np.append(theta_sup, slack)
                blocks.append(ConeBlock(ConeKind.RSOC, sup, F[k], g[k]))
                meta.append((tag, plant.id, k))
                slack_ids.append(slack)
                slack_scales.append(s_blk[k])
                slack += 1
    return (blocks, meta, np.asarray(slack_ids, dtype=np.int64),
            np.asarray(slack_scales))


def assemble_h2_stroke(spec: SynthesisSpec, layout: CoeffLayout,
                       K_c: Controller, slack_start: int):
    """Stroke-variance constraints and the averaged budget row.

    Per plant and frequency, two slacks bound the squared magnitudes of the
    fine-stage displacement responses to the two shaped noise sources; the
    budget row keeps their quadrature average below mu_eff^2.
    """
    dp = spec.d_p.values
    df = spec.d_f.values

    def num_dp(plant, maps):
        w = plant.p_cp.values * dp
        return w[:, None] * maps.CX2, np.zeros(spec.grid.n, dtype=complex)

    def num_df(plant, maps):
        w = plant.p_cp.values * plant.p_cv.values * df
        return w[:, None] * maps.CX2, np.zeros(spec.grid.n, dtype=complex)

    blocks, meta, slack_ids, scales = _rsoc_pair_blocks(
        spec, layout, K_c, [("stroke_dp", num_dp), ("stroke_df", num_df)],
        slack_start)
    tau = quadrature(spec.grid).tau
    coeff = np.tile(tau, 2 * spec.plants.l) / spec.plants.l * scales
    budget = ConeBlock(ConeKind.NONNEG, slack_ids, -coeff[None, :],
                       [spec.budget_rhs])
    return blocks, meta, slack_ids, coeff, budget


def assemble_h2_objective(spec: SynthesisSpec, layout: CoeffLayout,
                          K_c: Controller, slack_start: int):
    """Error-variance epigraph blocks and the objective weights over slacks."""
    dp = spec.d_p.values
    df = spec.d_f.values

    def num_dp(plant, maps):
        return dp[:, None] * maps.CY, dp * maps.dY

    def num_df(plant, maps):
        w = plant.p_cv.values * df
        return w[:, None] * maps.CY, w * maps.dY

    blocks, meta, slack_ids, scales = _rsoc_pair_blocks(
        spec, layout, K_c, [("error_dp", num_dp), ("error_df", num_df)],
        slack_start)
    tau = quadrature(spec.grid).tau
    obj_coeff = np.tile(tau, 2 * spec.plants.l) / spec.plants.l * scales
    return blocks, meta, slack_ids, obj_coeff


# ---------------------------------------------------------------------------
# Design loop
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class IterationStats:
    index: int
    status: str
    ipm_iterations: int
    primal_obj: float
    dual_obj: float
    solver_objective: float | None
    solver_budget: float | None
    true_objective: float
    true_budget: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "status": self.status,
            "ipm_iterations": self.ipm_iterations,
            "primal_obj": self.primal_obj,
            "dual_obj": self.dual_obj,
            "solver_objective": self.solver_objective,
            "solver_budget": self.solver_budget,
            "true_objective": self.true_objective,
            "true_budget": self.true_budget,
        }


@dataclass(eq=False)
class DesignReport:
    controller: Controller
    ts: float
    objective_trace: list
    iterations: list
    initial_margin: float
    positivity: dict         # (plant_id, config value) -> margin
    stable_certificate: bool
    converged_early: bool
    h2_budget_used: float    # solver-side budget attained at the final iterate
    true_budget: float       # directly evaluated budget at the final iterate
    budget_rhs: float
    stroke_limit: float
    stroke_interpretation: str
    audit: object = None     # evalsim.AuditTable
    order_warning: str | None = None

    def to_json_dict(self) -> dict:
        from .polysys import controller_to_dict
        doc = {
            "controller": controller_to_dict(self.controller, self.ts),
            "objective_trace": [float(v) for v in self.objective_trace],
            "initial_margin": self.initial_margin,
            "iterations": [s.to_dict() for s in self.iterations],
            "positivity_margins": {f"{pid}/{cfg}": m
                                   for (pid, cfg), m in self.positivity.items()},
            "stable_certificate": self.stable_certificate,
            "converged_early": self.converged_early,
            "stroke": {
                "limit": self.stroke_limit,
                "interpretation": self.stroke_interpretation,
                "budget_rhs": self.budget_rhs,
                "solver_budget_used": self.h2_budget_used,
                "true_budget_used": self.true_budget,
            },
        }
        if self.order_warning:
            doc["order_warning"] = self.order_warning
        if self.audit is not None:
            doc["hinf_audit"] = self.audit.summary()
        return doc


def _true_h2(spec: SynthesisSpec, K: Controller):
    """Directly evaluated error objective and stroke budget (no slacks)."""
    from .polysys import closed_loop
    tau = quadrature(spec.grid).tau
    dp = spec.d_p.values
    df = spec.d_f.values
    obj = 0.0
    budget = 0.0
    for plant in spec.plants.cases:
        s = closed_loop(K, plant, LoopConfig.DSA, ClosedLoopChannel.S_DE).values
        ypzt = closed_loop(K, plant, LoopConfig.DSA,
                           ClosedLoopChannel.Y_D_YPZT).values
        dfv = plant.p_cv.values * df
        obj += float(tau @ (np.abs(s * dp) ** 2 + np.abs(s * dfv) ** 2))
        budget += float(tau @ (np.abs(ypzt * dp) ** 2 + np.abs(ypzt * dfv) ** 2))
    return obj / spec.plants.l, budget / spec.plants.l


def _solver_tol() -> ToleranceSet:
    return ToleranceSet()


def _worst_block(sol: ConicSolution, meta):
    if sol.cert_z_blocks is None:
        return None
    norms = [float(np.linalg.norm(zb)) for zb in sol.cert_z_blocks[:len(meta)]]
    if not norms:
        return None
    return meta[int(np.argmax(norms))]


def initial_design(spec: SynthesisSpec) -> Controller:
    """Shaping-only design: maximize a uniform feasibility margin."""
    K, _, _ = _initial_design_full(spec)
    return K


def _initial_design_full(spec: SynthesisSpec):
    layout = CoeffLayout(spec.order)
    n = layout.n_coeffs
    t_var = n
    n_vars = n + 1
    blocks, meta = _hinf_blocks(spec, layout, t_var, n_vars)
    # t >= eps and a generous cap against unbounded margin rays
    t_sup = np.asarray([t_var], dtype=np.int64)
    blocks.append(ConeBlock(ConeKind.NONNEG, t_sup, [[1.0]], [-spec.eps_margin]))
    blocks.append(ConeBlock(ConeKind.NONNEG, t_sup, [[-1.0]], [MARGIN_CAP]))
    # The constraint set is nearly homogeneous in theta (only the monic z^p
    # term breaks scaling), so the margin grows without bound along the
    # scaling ray; a coefficient-norm ball makes the maximization well posed.
    ball = np.zeros((n + 1, n))
    ball[1:, :] = np.eye(n)
    gball = np.zeros(n + 1)
    gball[0] = THETA_CAP
    blocks.append(ConeBlock(ConeKind.SOC, np.arange(n, dtype=np.int64),
                            ball, gball))
    c = np.zeros(n_vars)
    c[t_var] = -1.0
    prob = ConicProblem(n_vars, c, blocks)
    sol = solve(prob, _solver_tol())
    if sol.status is SolveStatus.PRIMAL_INFEASIBLE:
        worst = _worst_block(sol, meta)
        detail = ""
        if worst is not None:
            cfg, ch, pid, k = worst
            detail = (f" (most violated: plant {pid}, {cfg.value}/{ch.value} "
                      f"at {spec.grid.freqs[k]:.6g} Hz)")
        raise InfeasibleDesignError(
            f"shaping weights unachievable at order {spec.order}{detail}",
            worst=worst)
    if sol.status is not SolveStatus.OPTIMAL:
        raise SynthesisError(f"initial design failed: {sol.status.value} "
                             f"{sol.message}")
    K0 = layout.controller_from(sol.x[:n])
    return K0, float(sol.x[t_var]), sol


def synthesize(spec: SynthesisSpec) -> DesignReport:
    """Run the full iterative design and audit the result.

    One shaping-only solve produces the starting controller; each following
    iteration relinearizes the denominator there, adds the variance budget
    and the error-variance objective, and solves again.  Objective-trace
    entries are always the directly evaluated error variance of the iterate,
    never the solver's surrogate.
    """
    layout = CoeffLayout(spec.order)
    n = layout.n_coeffs
    N = spec.grid.n
    order_warning = None
    if n > N / 5:
        order_warning = (f"{n} design coefficients against {N} grid points; "
                         "the result may overfit the measurement set")
        warnings.warn(order_warning)

    K, t_star, sol0 = _initial_design_full(spec)
    obj0, bud0 = _true_h2(spec, K)
    trace = [obj0]
    stats = [IterationStats(
        index=0, status=sol0.status.value, ipm_iterations=sol0.iterations,
        primal_obj=sol0.primal_obj, dual_obj=sol0.dual_obj,
        solver_objective=None, solver_budget=None,
        true_objective=obj0, true_budget=bud0)]
    converged_early = False
    solver_budget = None

    degenerate = (not np.any(spec.d_p.values)) and (not np.any(spec.d_f.values))
    if not degenerate:
        for it in range(1, spec.n_iter + 1):
            hinf_blocks, hinf_meta = assemble_hinf(spec, layout)
            n_stroke = 2 * spec.plants.l * N
            # slack layout: [stroke | objective]
            stroke_blocks, stroke_meta, stroke_ids, budget_coeff, budget = \
                assemble_h2_stroke(spec, layout, K, n)
            obj_blocks, obj_meta, obj_ids, obj_coeff = \
                assemble_h2_objective(spec, layout, K, n + n_stroke)
            n_vars = n + 2 * n_stroke
            c = np.zeros(n_vars)
            c[obj_ids] = obj_coeff
            blocks = hinf_blocks + stroke_blocks + obj_blocks + [budget]
            meta = hinf_meta + [("stroke",) + m for m in stroke_meta] \
                + [("objective",) + m for m in obj_meta]
            prob = ConicProblem(n_vars, c, tuple(blocks))
            sol = solve(prob, _solver_tol())
            if sol.status is SolveStatus.PRIMAL_INFEASIBLE:
                worst = _worst_block(sol, meta)
                raise InfeasibleDesignError(
                    f"iteration {it}: constraints infeasible about the current "
                    f"iterate (worst: {worst})", worst=worst)
            if sol.status is not SolveStatus.OPTIMAL:
                raise SynthesisError(
                    f"iteration {it}: solver returned {sol.status.value} "
                    f"{sol.message}")
            K = layout.controller_from(sol.x[:n])
            solver_budget = float(budget_coeff @ sol.x[stroke_ids])
            obj_k, bud_k = _true_h2(spec, K)
            trace.append(obj_k)
            stats.append(IterationStats(
                index=it, status=sol.status.value,
                ipm_iterations=sol.iterations, primal_obj=sol.primal_obj,
                dual_obj=sol.dual_obj, solver_objective=sol.primal_obj,
                solver_budget=solver_budget, true_objective=obj_k,
                true_budget=bud_k))
            if abs(trace[-1] - trace[-2]) <= spec.conv_tol * abs(trace[-2]):
                converged_early = it < spec.n_iter
                break

    from . import evalsim
    from .polysys import positivity_margin
    audit = evalsim.audit_hinf(K, spec)
    positivity = {}
    for plant in spec.plants.cases:
        for cfg in HINF_CONFIGS:
            positivity[(plant.id, cfg.value)] = positivity_margin(K, plant, cfg)
    stable = min(positivity.values()) > 0.0

    return DesignReport(
        controller=K, ts=spec.grid.ts, objective_trace=trace,
        iterations=stats, initial_margin=t_star, positivity=positivity,
        stable_certificate=stable, converged_early=converged_early,
        h2_budget_used=solver_budget if solver_budget is not None
        else stats[-1].true_budget,
        true_budget=stats[-1].true_budget, budget_rhs=spec.budget_rhs,
        stroke_limit=spec.stroke_limit,
        stroke_interpretation=spec.stroke_interpretation.value,
        audit=audit, order_warning=order_warning)
