"""Problem model for the dense conic solver.

A problem is: minimize c'x subject to A_eq x = b_eq and, for every cone
block, F x + g in K where K is the nonnegative orthant, a second-order
cone (first entry >= Euclidean norm of the rest) or a rotated second-order
cone (first two entries u, v >= 0 and 2uv >= ||rest||^2).

Block matrices are stored against an explicit variable support so that
problems with many single-use slack variables stay compact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ..freqdata import _frozen

_SQRT1_2 = math.sqrt(0.5)


class ConicError(ValueError):
    """Invalid conic problem data."""


class ConeKind(Enum):
    NONNEG = "nonneg"
    SOC = "soc"
    RSOC = "rsoc"


class SolveStatus(Enum):
    OPTIMAL = "OPTIMAL"
    PRIMAL_INFEASIBLE = "PRIMAL_INFEASIBLE"
    DUAL_INFEASIBLE = "DUAL_INFEASIBLE"
    MAX_ITER = "MAX_ITER"
    NUMERICAL = "NUMERICAL"


@dataclass(frozen=True, eq=False)
class ConeBlock:
    """One cone membership constraint F x[support] + g in K."""

    kind: ConeKind
    support: np.ndarray   # (s,) int variable indices, unique
    F: np.ndarray         # (dim, s)
    g: np.ndarray         # (dim,)

    def __post_init__(self):
        sup = np.asarray(self.support, dtype=np.int64).ravel()
        F = np.asarray(self.F, dtype=float)
        g = np.asarray(self.g, dtype=float).ravel()
        if F.ndim != 2 or F.shape[1] != sup.size:
            raise ConicError(f"F shape {F.shape} inconsistent with support {sup.size}")
        if g.size != F.shape[0]:
            raise ConicError(f"g length {g.size} inconsistent with F rows {F.shape[0]}")
        if sup.size != np.unique(sup).size:
            raise ConicError("block support has duplicate variable indices")
        d = F.shape[0]
        if self.kind is ConeKind.SOC and d < 2:
            raise ConicError("SOC block needs dim >= 2")
        if self.kind is ConeKind.RSOC and d < 3:
            raise ConicError("RSOC block needs dim >= 3")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(g))):
            raise ConicError("block data must be finite")
        object.__setattr__(self, "support", _frozen(sup))
        object.__setattr__(self, "F", _frozen(F))
        object.__setattr__(self, "g", _frozen(g))

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    @staticmethod
    def dense(kind: ConeKind, F, g, n_vars: int | None = None) -> "ConeBlock":
        """Build a block whose support is all variables 0..n-1."""
        F = np.atleast_2d(np.asarray(F, dtype=float))
        n = F.shape[1] if n_vars is None else n_vars
        return ConeBlock(kind, np.arange(n, dtype=np.int64), F[:, :n], g)

    def value(self, x: np.ndarray) -> np.ndarray:
        """F x[support] + g for a full-length variable vector x."""
        return self.F @ np.asarray(x, dtype=float)[self.support] + self.g


def in_soc(v: np.ndarray, tol: float = 0.0) -> bool:
    v = np.asarray(v, dtype=float)
    scale = max(1.0, float(np.max(np.abs(v))))
    return v[0] >= np.linalg.norm(v[1:]) - tol * scale


def in_rsoc(v: np.ndarray, tol: float = 0.0) -> bool:
    v = np.asarray(v, dtype=float)
    scale = max(1.0, float(np.max(np.abs(v))))
    if v[0] < -tol * scale or v[1] < -tol * scale:
        return False
    return 2.0 * v[0] * v[1] >= float(v[2:] @ v[2:]) - tol * scale * scale


def in_cone(kind: ConeKind, v: np.ndarray, tol: float = 0.0) -> bool:
    if kind is ConeKind.NONNEG:
        v = np.asarray(v, dtype=float)
        scale = max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
        return bool(np.all(v >= -tol * scale))
    if kind is ConeKind.SOC:
        return in_soc(v, tol)
    return in_rsoc(v, tol)


def rsoc_rotation(dim: int) -> np.ndarray:
    """Orthogonal involution R mapping RSOC(dim) onto SOC(dim).

    (u, v, w) -> ((u+v)/sqrt2, (u-v)/sqrt2, w); a point is in the rotated
    cone exactly when its image is in the standard cone.
    """
    R = np.eye(dim)
    R[0, 0] = R[0, 1] = R[1, 0] = _SQRT1_2
    R[1, 1] = -_SQRT1_2
    return R


def rsoc_to_soc(block: ConeBlock) -> ConeBlock:
    """Rewrite a rotated-cone block as an equivalent standard SOC block."""
    if block.kind is not ConeKind.RSOC:
        raise ConicError("rsoc_to_soc expects an RSOC block")
    R = rsoc_rotation(block.dim)
    return ConeBlock(ConeKind.SOC, block.support, R @ block.F, R @ block.g)


@dataclass(frozen=True)
class ToleranceSet:
    """Solver tolerances: relative duality gap, feasibility, iteration cap."""

    gap: float = 1e-8
    feas: float = 1e-8
    max_iter: int = 200


@dataclass(frozen=True, eq=False)
class ConicProblem:
    n_vars: int
    c: np.ndarray
    blocks: tuple
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        n = int(self.n_vars)
        if n < 1:
            raise ConicError("problem needs at least one variable")
        c = np.asarray(self.c, dtype=float).ravel()
        if c.size != n:
            raise ConicError(f"objective length {c.size} != n_vars {n}")
        blocks = tuple(self.blocks)
        if not blocks and self.A_eq is None:
            raise ConicError("problem has no constraints")
        for b in blocks:
            if not isinstance(b, ConeBlock):
                raise ConicError("blocks must be ConeBlock instances")
            if b.support.size and int(b.support.max()) >= n:
                raise ConicError("block support references unknown variable")
        A = self.A_eq
        bb = self.b_eq
        if (A is None) != (bb is None):
            raise ConicError("A_eq and b_eq must be given together")
        if A is not None:
            A = np.atleast_2d(np.asarray(A, dtype=float))
            bb = np.asarray(bb, dtype=float).ravel()
            if A.shape[1] != n or A.shape[0] != bb.size:
                raise ConicError("equality dimensions inconsistent")
            object.__setattr__(self, "A_eq", _frozen(A))
            object.__setattr__(self, "b_eq", _frozen(bb))
        object.__setattr__(self, "n_vars", n)
        object.__setattr__(self, "c", _frozen(c))
        object.__setattr__(self, "blocks", blocks)

    @property
    def n_eq(self) -> int:
        return 0 if self.A_eq is None else self.A_eq.shape[0]


@dataclass(eq=False)
class ConicSolution:
    status: SolveStatus
    x: np.ndarray | None
    primal_obj: float
    dual_obj: float
    iterations: int
    # Cone slack and dual values per original block (RSOC blocks are
    # reported in their own coordinates); None unless the solve produced
    # an interior-point iterate.
    s_blocks: list | None = None
    z_blocks: list | None = None
    # Infeasibility certificates (populated for the respective statuses).
    cert_y: np.ndarray | None = None
    cert_z_blocks: list | None = None
    cert_x: np.ndarray | None = None
    message: str = ""


def dump_problem(prob: ConicProblem, path) -> None:
    """Plain-text dump (c, equalities, every block's F and g, row-major).

    Intended for differential testing against external solvers.
    """
    lines = ["conic-problem v1", f"n_vars {prob.n_vars}"]
    lines.append("c " + " ".join(repr(v) for v in prob.c))
    lines.append(f"n_eq {prob.n_eq}")
    if prob.A_eq is not None:
        for i in range(prob.n_eq):
            row = " ".join(repr(v) for v in prob.A_eq[i])
            lines.append(f"eq {row} | {prob.b_eq[i]!r}")
    lines.append(f"n_blocks {len(prob.blocks)}")
    for b in prob.blocks:
        lines.append(f"block {b.kind.value} dim {b.dim} "
                     "support " + " ".join(str(i) for i in b.support))
        for r in range(b.dim):
            lines.append("F " + " ".join(repr(v) for v in b.F[r]))
        lines.append("g " + " ".join(repr(v) for v in b.g))
    Path(path).write_text("\n".join(lines) + "\n")
