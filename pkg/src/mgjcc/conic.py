"""Convex conic programs: linear, second-order-cone and convex quadratic terms.

Programs are assembled from :class:`Affine` row batches tagged with a family
name.  The family tags drive infeasibility diagnostics, certification reports
and the structural comparison between deterministic and tightened builds.

The bundled backend is Clarabel (a primal-dual interior-point method that
accepts the quadratic objective and second-order cones natively).  CVXOPT's
``coneqp`` is available as an alternative backend for cross-checks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"

DEFAULT_FEAS_TOL = 1e-7
DEFAULT_GAP_TOL = 1e-7


class ConicError(Exception):
    """Malformed program or unusable backend output."""


class CertificationError(ConicError):
    """A solution failed independent residual checks."""

    def __init__(self, block: str, residual: float, tol: float):
        super().__init__(f"constraint block {block!r}: residual {residual:.3e} exceeds {tol:.1e}")
        self.block = block
        self.residual = residual
        self.tol = tol


class Affine:
    """A batch of ``m`` affine rows ``M x + c`` stored in coordinate form."""

    __slots__ = ("m", "rows", "cols", "vals", "const")

    def __init__(self, m: int, const=0.0):
        self.m = int(m)
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.const = np.broadcast_to(np.asarray(const, dtype=float), (self.m,)).copy()

    def add(self, coef, idx) -> "Affine":
        """Add ``coef[i] * x[idx[i]]`` to row ``i`` (both broadcast to ``m``)."""
        idx = np.broadcast_to(np.asarray(idx, dtype=np.int64), (self.m,))
        coef = np.broadcast_to(np.asarray(coef, dtype=float), (self.m,))
        keep = coef != 0.0
        if keep.any():
            self.rows.append(np.arange(self.m)[keep])
            self.cols.append(idx[keep].copy())
            self.vals.append(coef[keep].copy())
        return self

    def add_const(self, c) -> "Affine":
        self.const = self.const + np.broadcast_to(np.asarray(c, dtype=float), (self.m,))
        return self

    def matrix(self, n: int) -> sp.csr_matrix:
        if self.rows:
            r = np.concatenate(self.rows)
            c = np.concatenate(self.cols)
            v = np.concatenate(self.vals)
        else:
            r = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0)
        if c.size and (c.max() >= n or c.min() < 0):
            raise ConicError("affine row references an unknown variable")
        return sp.csr_matrix((v, (r, c)), shape=(self.m, n))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.matrix(x.size) @ x + self.const


@dataclass
class Block:
    family: str
    kind: str  # "eq", "le" or "soc"
    expr: Affine  # eq: expr == 0, le: expr <= 0, soc: rows [t, v...] per cone
    cone_dim: int = 0  # soc only: 1 + length of v
    tag: str = ""


@dataclass
class QuadTerm:
    """``weight * sum_i (x[idx_i] - offset_i)^2 + lin * sum_i x[idx_i]``."""

    name: str
    idx: np.ndarray
    weight: np.ndarray
    offset: np.ndarray
    lin: np.ndarray

    def value(self, x: np.ndarray) -> float:
        xi = x[self.idx]
        return float(np.sum(self.weight * (xi - self.offset) ** 2) + np.sum(self.lin * xi))


class ConicProgram:
    """Variables, constraint blocks and a separable convex quadratic objective."""

    def __init__(self):
        self.n = 0
        self.var_blocks: dict[str, np.ndarray] = {}
        self.blocks: list[Block] = []
        self.terms: list[QuadTerm] = []

    # -- building -----------------------------------------------------------------
    def add_variables(self, name: str, shape) -> np.ndarray:
        if name in self.var_blocks:
            raise ConicError(f"duplicate variable block {name!r}")
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self.var_blocks[name] = idx
        return idx

    def add_eq(self, family: str, expr: Affine, tag: str = "") -> Block:
        return self._add(Block(family, "eq", expr, tag=tag))

    def add_le(self, family: str, expr: Affine, tag: str = "") -> Block:
        return self._add(Block(family, "le", expr, tag=tag))

    def add_soc(self, family: str, expr: Affine, cone_dim: int, tag: str = "") -> Block:
        """Cones ``||v_k|| <= t_k``; ``expr`` stacks ``[t_k, v_k]`` for each cone."""
        if cone_dim < 1 or expr.m % cone_dim:
            raise ConicError(f"cone block {family!r}: {expr.m} rows do not split into cones of {cone_dim}")
        return self._add(Block(family, "soc", expr, cone_dim=cone_dim, tag=tag))

    def _add(self, block: Block) -> Block:
        if not np.all(np.isfinite(block.expr.const)):
            raise ConicError(f"non-finite constant in block {block.family!r}")
        for v in block.expr.vals:
            if not np.all(np.isfinite(v)):
                raise ConicError(f"non-finite coefficient in block {block.family!r}")
        self.blocks.append(block)
        return block

    def add_quadratic(self, name: str, idx, weight, offset=0.0, lin=0.0) -> QuadTerm:
        idx = np.asarray(idx, dtype=np.int64).ravel()
        shape = idx.shape
        weight = np.broadcast_to(np.asarray(weight, dtype=float), shape).copy()
        if np.any(weight < 0):
            raise ConicError(f"objective term {name!r} has a negative quadratic weight")
        term = QuadTerm(
            name,
            idx,
            weight,
            np.broadcast_to(np.asarray(offset, dtype=float), shape).copy(),
            np.broadcast_to(np.asarray(lin, dtype=float), shape).copy(),
        )
        self.terms.append(term)
        return term

    def remove_family(self, family: str) -> int:
        before = len(self.blocks)
        self.blocks = [b for b in self.blocks if b.family != family]
        return before - len(self.blocks)

    def families(self) -> list[str]:
        seen: dict[str, None] = {}
        for b in self.blocks:
            seen.setdefault(b.family, None)
        return list(seen)

    # -- compiled forms --------------------------------------------------------------
    def objective_data(self):
        """Return ``(P, q, const)`` with objective ``0.5 x'Px + q'x + const``."""
        pdiag = np.zeros(self.n)
        q = np.zeros(self.n)
        const = 0.0
        for t in self.terms:
            np.add.at(pdiag, t.idx, 2.0 * t.weight)
            np.add.at(q, t.idx, -2.0 * t.weight * t.offset + t.lin)
            const += float(np.sum(t.weight * t.offset**2))
        return sp.diags(pdiag, format="csc"), q, const

    def objective(self, x: np.ndarray) -> float:
        return float(sum(t.value(x) for t in self.terms))

    def term_values(self, x: np.ndarray) -> dict[str, float]:
        out: dict[str, float] = {}
        for t in self.terms:
            out[t.name] = out.get(t.name, 0.0) + t.value(x)
        return out

    def stacked(self):
        """Stack blocks as ``A x + s = b`` in cone order zero, nonneg, soc."""
        eqs = [b for b in self.blocks if b.kind == "eq"]
        les = [b for b in self.blocks if b.kind == "le"]
        socs = [b for b in self.blocks if b.kind == "soc"]
        mats, rhs = [], []
        for b in eqs + les:
            mats.append(b.expr.matrix(self.n))
            rhs.append(-b.expr.const)
        for b in socs:
            # s = b - A x = [t; v] must lie in the cone
            mats.append(-b.expr.matrix(self.n))
            rhs.append(b.expr.const)
        A = sp.vstack(mats, format="csc") if mats else sp.csc_matrix((0, self.n))
        bvec = np.concatenate(rhs) if rhs else np.zeros(0)
        n_eq = sum(b.expr.m for b in eqs)
        n_le = sum(b.expr.m for b in les)
        soc_dims = [b.cone_dim for b in socs for _ in range(b.expr.m // b.cone_dim)]
        order = eqs + les + socs
        return A, bvec, n_eq, n_le, soc_dims, order


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None
    objective: float
    dual_objective: float
    gap: float
    rel_gap: float
    primal_residual: float
    iterations: int
    solve_time: float
    backend: str
    family_certificate: dict[str, float] = field(default_factory=dict)
    trace: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def relative_gap(p: float, d: float) -> float:
    """``|p - d|`` relative to the larger objective magnitude, floored at one."""
    return abs(p - d) / max(abs(p), abs(d), 1.0)


def _family_mass(order, z: np.ndarray) -> dict[str, float]:
    out: dict[str, float] = {}
    pos = 0
    for b in order:
        seg = z[pos : pos + b.expr.m]
        pos += b.expr.m
        out[b.family] = out.get(b.family, 0.0) + float(np.sum(np.abs(seg)))
    total = sum(out.values()) or 1.0
    return {k: v / total for k, v in sorted(out.items(), key=lambda kv: -kv[1]) if v > 0}


def solve(
    program: ConicProgram,
    feas_tol: float = DEFAULT_FEAS_TOL,
    gap_tol: float = DEFAULT_GAP_TOL,
    backend: str = "clarabel",
    max_iter: int = 200,
) -> SolveResult:
    """Solve ``program`` and report status, primal point and gap.

    The objective is passed unscaled: the backend floors its relative gap at
    an absolute value of one, which matches :func:`relative_gap`.
    """
    if backend == "clarabel":
        return _solve_clarabel(program, feas_tol, gap_tol, max_iter)
    if backend == "cvxopt":
        return _solve_cvxopt(program, feas_tol, gap_tol, max_iter)
    raise ConicError(f"unknown conic backend {backend!r}")


def lifted_objective(program: ConicProgram):
    """Objective without a constant: offset squares move onto auxiliary variables.

    Each entry ``w (x_i - o)^2`` with ``o != 0`` becomes ``w u^2`` plus the
    equality ``x_i - u = o``.  This avoids the cancellation between a large
    constant and the quadratic part, so relative gaps refer to the true cost.
    Returns ``(P, q, E, o)`` with ``P`` and ``q`` over ``[x; u]`` and the
    equalities ``E [x; u] = o``.
    """
    n = program.n
    pdiag = np.zeros(n)
    q = np.zeros(n)
    lift_idx, lift_w, lift_o = [], [], []
    for t in program.terms:
        np.add.at(q, t.idx, t.lin)
        shifted = t.offset != 0.0
        np.add.at(pdiag, t.idx[~shifted], 2.0 * t.weight[~shifted])
        lift_idx.append(t.idx[shifted])
        lift_w.append(t.weight[shifted])
        lift_o.append(t.offset[shifted])
    li = np.concatenate(lift_idx) if lift_idx else np.zeros(0, dtype=np.int64)
    lw = np.concatenate(lift_w) if lift_w else np.zeros(0)
    lo = np.concatenate(lift_o) if lift_o else np.zeros(0)
    k = li.size
    P = sp.diags(np.concatenate([pdiag, 2.0 * lw]), format="csc")
    q = np.concatenate([q, np.zeros(k)])
    E = sp.hstack([sp.csr_matrix((np.ones(k), (np.arange(k), li)), shape=(k, n)), -sp.identity(k, format="csr")],
                  format="csc")
    return P, q, E, lo


def _solve_clarabel(program, feas_tol, gap_tol, max_iter) -> SolveResult:
    import clarabel

    t0 = time.perf_counter()
    P, q, E, o = lifted_objective(program)
    A, b, n_eq, n_le, soc_dims, order = program.stacked()
    k = E.shape[0]
    A = sp.vstack([E, sp.hstack([A, sp.csc_matrix((A.shape[0], k))])], format="csc")
    b = np.concatenate([o, b])
    cones = []
    if n_eq + k:
        cones.append(clarabel.ZeroConeT(n_eq + k))
    if n_le:
        cones.append(clarabel.NonnegativeConeT(n_le))
    cones.extend(clarabel.SecondOrderConeT(dim) for dim in soc_dims)

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_feas = min(1e-11, feas_tol * 1e-4)
    settings.tol_gap_abs = min(1e-11, gap_tol * 1e-4)
    settings.tol_gap_rel = min(1e-10, gap_tol * 1e-3)
    settings.tol_infeas_abs = 1e-10
    settings.tol_infeas_rel = 1e-10
    solver = clarabel.DefaultSolver(sp.triu(P, format="csc"), q, A, b, cones, settings)
    sol = solver.solve()
    elapsed = time.perf_counter() - t0

    status_map = {
        "Solved": OPTIMAL,
        "AlmostSolved": OPTIMAL,
        "PrimalInfeasible": INFEASIBLE,
        "AlmostPrimalInfeasible": INFEASIBLE,
        "DualInfeasible": UNBOUNDED,
        "AlmostDualInfeasible": UNBOUNDED,
    }
    status = status_map.get(str(sol.status), NUMERICAL_FAILURE)
    x = np.asarray(sol.x, dtype=float)[: program.n]
    z = np.asarray(sol.z, dtype=float)[k:]
    trace = f"clarabel status={sol.status} iterations={sol.iterations}"
    if status == INFEASIBLE:
        return SolveResult(status, None, np.inf, np.inf, np.inf, np.inf, np.inf, sol.iterations, elapsed,
                           "clarabel", _family_mass(order, z), trace)
    if status != OPTIMAL:
        return SolveResult(status, None, np.nan, np.nan, np.nan, np.nan, np.nan, sol.iterations, elapsed,
                           "clarabel", {}, trace)
    pobj = sol.obj_val
    dobj = sol.obj_val_dual
    res = primal_residual(program, x)
    gap = relative_gap(pobj, dobj)
    if gap > gap_tol or res > feas_tol:
        # the backend stopped short of the contract tolerances
        status = NUMERICAL_FAILURE
        trace += f" rel_gap={gap:.3e} residual={res:.3e}"
    return SolveResult(status, x, pobj, dobj, abs(pobj - dobj), gap, res,
                       sol.iterations, elapsed, "clarabel", {}, trace)


def _solve_cvxopt(program, feas_tol, gap_tol, max_iter) -> SolveResult:
    import cvxopt
    from cvxopt import solvers

    t0 = time.perf_counter()
    P, q, const = program.objective_data()
    A, b, n_eq, n_le, soc_dims, order = program.stacked()

    def spm(M):
        M = M.tocoo()
        return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), size=M.shape)

    A = A.tocsr()
    G = A[n_eq:]
    h = b[n_eq:]
    kw = {}
    if n_eq:
        kw["A"] = spm(A[:n_eq])
        kw["b"] = cvxopt.matrix(b[:n_eq])
    opts = {"show_progress": False, "maxiters": max_iter, "abstol": 1e-12, "reltol": 1e-10, "feastol": 1e-10}
    sol = solvers.coneqp(spm(P), cvxopt.matrix(q), spm(G), cvxopt.matrix(h),
                         dims={"l": n_le, "q": soc_dims, "s": []}, options=opts, **kw)
    elapsed = time.perf_counter() - t0
    status = {"optimal": OPTIMAL, "primal infeasible": INFEASIBLE, "dual infeasible": UNBOUNDED}.get(
        sol["status"], NUMERICAL_FAILURE)
    trace = f"cvxopt status={sol['status']} iterations={sol.get('iterations')}"
    if status != OPTIMAL:
        return SolveResult(status, None, np.nan, np.nan, np.nan, np.nan, np.nan, sol.get("iterations", 0) or 0,
                           elapsed, "cvxopt", {}, trace)
    x = np.asarray(sol["x"]).ravel()
    pobj = sol["primal objective"] + const
    dobj = sol["dual objective"] + const
    return SolveResult(OPTIMAL, x, pobj, dobj, abs(pobj - dobj), relative_gap(pobj, dobj),
                       primal_residual(program, x), sol["iterations"], elapsed, "cvxopt", {}, trace)


def block_residuals(program: ConicProgram, x: np.ndarray) -> list[tuple[str, str, float]]:
    """Worst violation of every block at ``x``, computed from the raw rows."""
    out = []
    for b in program.blocks:
        val = b.expr.evaluate(x)
        if b.kind == "eq":
            r = float(np.max(np.abs(val), initial=0.0))
        elif b.kind == "le":
            r = float(np.max(val, initial=0.0))
        else:
            cones = val.reshape(-1, b.cone_dim)
            r = float(np.max(np.linalg.norm(cones[:, 1:], axis=1) - cones[:, 0], initial=0.0))
        out.append((b.family, b.tag, max(r, 0.0)))
    return out


def primal_residual(program: ConicProgram, x: np.ndarray) -> float:
    return max((r for _, _, r in block_residuals(program, x)), default=0.0)


@dataclass
class CertificateReport:
    max_residual: float
    by_family: dict[str, float]
    objective: float
    gap: float


def certify(program: ConicProgram, result: SolveResult, tol: float = DEFAULT_FEAS_TOL,
            gap_tol: float = DEFAULT_GAP_TOL) -> CertificateReport:
    """Recheck an optimal result from the program data alone.

    Raises :class:`CertificationError` naming the first block whose residual
    exceeds ``tol``.
    """
    if result.status != OPTIMAL or result.x is None:
        raise ConicError(f"cannot certify a result with status {result.status!r}")
    x = np.asarray(result.x, dtype=float)
    if x.shape != (program.n,):
        raise ConicError("solution length does not match the program")
    by_family: dict[str, float] = {}
    worst = 0.0
    for family, tag, r in block_residuals(program, x):
        by_family[family] = max(by_family.get(family, 0.0), r)
        worst = max(worst, r)
        if r > tol:
            raise CertificationError(f"{family}{'/' + tag if tag else ''}", r, tol)
    obj = program.objective(x)
    if abs(obj - result.objective) > max(tol, 1e-6 * abs(obj)):
        raise CertificationError("objective", abs(obj - result.objective), tol)
    if result.rel_gap > gap_tol and result.gap > gap_tol * 1e-3:
        raise CertificationError("duality gap", result.rel_gap, gap_tol)
    return CertificateReport(worst, by_family, obj, result.rel_gap)


def dump(program: ConicProgram, path) -> None:
    """Write the program as sparse triplet sections for external cross-checks."""
    P, q, const = program.objective_data()
    A, b, n_eq, n_le, soc_dims, _ = program.stacked()
    with open(path, "w") as fh:
        fh.write(f"# conic program: n={program.n} eq={n_eq} le={n_le} soc={len(soc_dims)}\n")
        fh.write(f"[objective] const={const!r}\n")
        Pc = P.tocoo()
        for i, j, v in zip(Pc.row, Pc.col, Pc.data):
            fh.write(f"P {i} {j} {v!r}\n")
        for i in np.flatnonzero(q):
            fh.write(f"q {i} {q[i]!r}\n")
        Ac = A.tocoo()
        fh.write("[constraints] rows: A x + s = b; s in Zero^eq x R+^le x SOC...\n")
        for i, j, v in zip(Ac.row, Ac.col, Ac.data):
            fh.write(f"A {i} {j} {v!r}\n")
        for i in np.flatnonzero(b):
            fh.write(f"b {i} {b[i]!r}\n")
        fh.write("[cones]\n")
        fh.write(f"zero {n_eq}\nnonneg {n_le}\n")
        for k in soc_dims:
            fh.write(f"soc {k}\n")
