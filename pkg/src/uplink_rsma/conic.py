"""Real-valued conic program representation and a Clarabel-backed solver.

A :class:`ConicProgram` maximises ``c @ x`` subject to a list of cone
memberships of affine expressions of ``x``:

* :class:`Nonneg`  ``A x + b >= 0`` (elementwise)
* :class:`SOC`     ``||A x + d|| <= a @ x + b``
* :class:`ExpCone` ``(u, v, w) = A x + b`` with ``v * exp(u / v) <= w, v > 0``
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

import clarabel
import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERS = "max_iters"
NUMERICAL = "numerical_trouble"

KKT_TOL = 1e-7


def _mat(A, n):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != n:
        raise ValueError(f"constraint matrix has {A.shape[1]} columns, program has {n} variables")
    return A


@dataclass
class Nonneg:
    A: np.ndarray
    b: np.ndarray

    def affine(self, x):
        return self.A @ x + self.b

    def violation(self, x) -> float:
        return float(np.max(np.maximum(-self.affine(x), 0.0), initial=0.0))


@dataclass
class SOC:
    A: np.ndarray
    d: np.ndarray
    a: np.ndarray
    b: float

    def violation(self, x) -> float:
        return max(0.0, float(np.linalg.norm(self.A @ x + self.d) - (self.a @ x + self.b)))


@dataclass
class ExpCone:
    A: np.ndarray
    b: np.ndarray

    def violation(self, x) -> float:
        u, v, w = self.A @ x + self.b
        if v <= 0 or w <= 0:
            return max(-v, -w, 0.0) + max(u, 0.0) * (v <= 0)
        return max(0.0, u - v * math.log(w / v))


Constraint = Union[Nonneg, SOC, ExpCone]


@dataclass
class ConicProgram:
    n_vars: int
    objective: np.ndarray
    constraints: list = field(default_factory=list)
    layout: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if self.objective.shape != (self.n_vars,):
            raise ValueError("objective length must equal n_vars")

    def add_nonneg(self, A, b):
        A = _mat(A, self.n_vars)
        self.constraints.append(Nonneg(A, np.atleast_1d(np.asarray(b, dtype=float))))

    def add_soc(self, A, d, a, b):
        A = _mat(A, self.n_vars)
        self.constraints.append(SOC(A, np.asarray(d, dtype=float), np.asarray(a, dtype=float), float(b)))

    def add_exp(self, A, b):
        A = _mat(A, self.n_vars)
        if A.shape[0] != 3:
            raise ValueError("exponential cone needs three affine rows")
        self.constraints.append(ExpCone(A, np.asarray(b, dtype=float)))

    def max_violation(self, x) -> float:
        return max((c.violation(x) for c in self.constraints), default=0.0)

    def objective_value(self, x) -> float:
        return float(self.objective @ x)

    # JSON form: {"n_vars", "objective", "constraints": [{"kind", ...arrays}]}
    def to_json(self) -> str:
        cons = []
        for c in self.constraints:
            if isinstance(c, Nonneg):
                cons.append({"kind": "nonneg", "A": c.A.tolist(), "b": c.b.tolist()})
            elif isinstance(c, SOC):
                cons.append({"kind": "soc", "A": c.A.tolist(), "d": c.d.tolist(),
                             "a": c.a.tolist(), "b": c.b})
            else:
                cons.append({"kind": "exp", "A": c.A.tolist(), "b": c.b.tolist()})
        return json.dumps({"n_vars": self.n_vars, "objective": self.objective.tolist(),
                           "constraints": cons})

    @classmethod
    def from_json(cls, text: str) -> "ConicProgram":
        d = json.loads(text)
        prog = cls(d["n_vars"], d["objective"])
        for c in d["constraints"]:
            kind = c["kind"]
            if kind == "nonneg":
                prog.add_nonneg(c["A"], c["b"])
            elif kind == "soc":
                prog.add_soc(np.reshape(c["A"], (-1, prog.n_vars)), c["d"], c["a"], c["b"])
            elif kind == "exp":
                prog.add_exp(c["A"], c["b"])
            else:
                raise ValueError(f"unknown constraint kind {kind!r}")
        return prog


@dataclass
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 200
    verbose: bool = False

    def loosened(self, factor: float = 10.0) -> "SolverSettings":
        return SolverSettings(self.tol * factor, self.max_iter, self.verbose)


@dataclass
class ConicSolution:
    x: np.ndarray
    status: str
    objective_value: float
    kkt_residuals: tuple
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _standard_form(prog: ConicProgram):
    """Map to Clarabel's ``A x + s = b, s in K`` with cones in IR order."""
    rows, rhs, cones = [], [], []
    nonneg_rows, nonneg_rhs = [], []
    for c in prog.constraints:
        if isinstance(c, Nonneg):
            nonneg_rows.append(-c.A)
            nonneg_rhs.append(c.b)
    if nonneg_rows:
        A = np.vstack(nonneg_rows)
        rows.append(A)
        rhs.append(np.concatenate(nonneg_rhs))
        cones.append(clarabel.NonnegativeConeT(A.shape[0]))
    for c in prog.constraints:
        if isinstance(c, SOC):
            rows.append(-np.vstack([c.a[None, :], c.A]))
            rhs.append(np.concatenate([[c.b], c.d]))
            cones.append(clarabel.SecondOrderConeT(1 + c.A.shape[0]))
        elif isinstance(c, ExpCone):
            rows.append(-c.A)
            rhs.append(c.b)
            cones.append(clarabel.ExponentialConeT())
    A = sp.csc_matrix(np.vstack(rows)) if rows else sp.csc_matrix((0, prog.n_vars))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    return A, b, cones


_STATUS = {
    "Solved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "MaxIterations": MAX_ITERS,
    "MaxTime": MAX_ITERS,
}


def kkt_residuals(prog, A, b, q, x, s, z):
    """Relative primal, dual and gap residuals of a primal-dual pair."""
    inf = np.inf
    Ax, ATz = A @ x, A.T @ z
    pscale = 1 + max(np.linalg.norm(b, inf), np.linalg.norm(Ax, inf), np.linalg.norm(s, inf))
    primal = max(np.linalg.norm(Ax + s - b, inf), prog.max_violation(x)) / pscale
    dual = np.linalg.norm(q + ATz, inf) / (1 + max(np.linalg.norm(q, inf), np.linalg.norm(ATz, inf)))
    pobj, dobj = q @ x, -b @ z
    gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
    return float(primal), float(dual), float(gap)


def solve(prog: ConicProgram, settings: SolverSettings | None = None) -> ConicSolution:
    settings = settings or SolverSettings()
    A, b, cones = _standard_form(prog)
    q = -prog.objective
    P = sp.csc_matrix((prog.n_vars, prog.n_vars))
    opts = clarabel.DefaultSettings()
    opts.verbose = settings.verbose
    opts.max_iter = settings.max_iter
    opts.tol_gap_abs = opts.tol_gap_rel = settings.tol
    opts.tol_feas = settings.tol
    opts.tol_ktratio = max(settings.tol, 1e-10)
    try:
        sol = clarabel.DefaultSolver(P, q, A, b, cones, opts).solve()
    except Exception:  # Clarabel raises on malformed numerical data
        nan = np.full(prog.n_vars, np.nan)
        return ConicSolution(nan, NUMERICAL, math.nan, (math.inf,) * 3)
    x, s, z = (np.asarray(v, dtype=float) for v in (sol.x, sol.s, sol.z))
    status = _STATUS.get(str(sol.status), NUMERICAL)
    if status in (INFEASIBLE, UNBOUNDED):
        return ConicSolution(x, status, math.nan, (math.inf,) * 3, sol.iterations)
    res = kkt_residuals(prog, A, b, q, x, s, z)
    if status == OPTIMAL and max(res) > max(KKT_TOL, 10 * settings.tol):
        status = NUMERICAL
    return ConicSolution(x, status, prog.objective_value(x), res, sol.iterations)
