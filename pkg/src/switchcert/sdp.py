"""Dense block-diagonal semidefinite programs.

Primal (minimization)::

    minimize    sum_b <C_b, X_b> + c_free . w
    subject to  sum_b <A_ib, X_b> + a_free[i] . w = b_i,   i = 1..k
                X_b PSD,  w free

Dual::

    maximize    b . y
    subject to  S_b = C_b - sum_i y_i A_ib  PSD,   c_free = sum_i y_i a_free[i]

The interior-point work is delegated to CVXOPT's ``conelp`` (primal-dual
path following with Nesterov-Todd scaling on the homogeneous self-dual
embedding).  Everything reported back in :class:`SdpSolution` is recomputed
here from the original problem data, so the residuals do not depend on the
backend's own bookkeeping.
"""

from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

logger = logging.getLogger(__name__)


class SdpError(Exception):
    pass


class IllConditioned(SdpError):
    """The embedding collapsed (tau and kappa both vanish) or the KKT system is singular."""


class DimensionError(SdpError, ValueError):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    STALLED = "Stalled"


@dataclass
class SdpOptions:
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    tol_psd: float | None = None  # default: 1e-8 * (1 + ||X||_F)
    max_iter: int = 200
    kktsolver: str | None = None  # cvxopt KKT solver; None picks one suited to ``form``
    # problem handed to cvxopt: "dual" (LMI in y), "primal" (vectorized X), or "auto"
    # (dual first, primal when the dual-form point does not grade as optimal)
    form: str = "auto"

    def psd_tol(self, X_norm: float) -> float:
        return self.tol_psd if self.tol_psd is not None else 1e-8 * (1.0 + X_norm)


@dataclass
class SdpProblem:
    """Standard-form SDP with symmetric blocks and optional free variables.

    ``A[b]`` has shape ``(k, n_b, n_b)``; ``A_free`` has shape ``(k, n_free)``.
    """

    block_dims: list[int]
    C: list[np.ndarray]
    A: list[np.ndarray]
    b: np.ndarray
    A_free: np.ndarray | None = None
    c_free: np.ndarray | None = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        k = self.b.size
        if len(self.C) != len(self.block_dims) or len(self.A) != len(self.block_dims):
            raise DimensionError("one objective and one constraint tensor per block required")
        self.C = [np.asarray(C, dtype=float) for C in self.C]
        self.A = [np.asarray(A, dtype=float) for A in self.A]
        for nb, C, A in zip(self.block_dims, self.C, self.A):
            if C.shape != (nb, nb):
                raise DimensionError(f"objective block has shape {C.shape}, expected {(nb, nb)}")
            if A.shape != (k, nb, nb):
                raise DimensionError(f"constraint block has shape {A.shape}, expected {(k, nb, nb)}")
            if not np.allclose(C, C.T) or not np.allclose(A, A.transpose(0, 2, 1)):
                raise DimensionError("block matrices must be symmetric")
        if self.A_free is None:
            self.A_free = np.zeros((k, 0))
        self.A_free = np.asarray(self.A_free, dtype=float).reshape(k, -1)
        nf = self.A_free.shape[1]
        if self.c_free is None:
            self.c_free = np.zeros(nf)
        self.c_free = np.asarray(self.c_free, dtype=float).reshape(-1)
        if self.c_free.size != nf:
            raise DimensionError("c_free length must match the number of free variables")

    @property
    def k(self) -> int:
        return self.b.size

    @property
    def n_free(self) -> int:
        return self.A_free.shape[1]

    def apply(self, X: list[np.ndarray], w: np.ndarray | None = None) -> np.ndarray:
        """The constraint map ``A(X) + A_free w``."""
        out = np.zeros(self.k)
        for A, Xb in zip(self.A, X):
            out += np.tensordot(A, Xb, axes=([1, 2], [0, 1]))
        if w is not None and self.n_free:
            out += self.A_free @ w
        return out

    def adjoint(self, y: np.ndarray) -> list[np.ndarray]:
        """``sum_i y_i A_ib`` for every block."""
        return [np.tensordot(y, A, axes=(0, 0)) for A in self.A]

    def primal_objective(self, X, w=None) -> float:
        val = sum(float(np.sum(C * Xb)) for C, Xb in zip(self.C, X))
        if w is not None and self.n_free:
            val += float(self.c_free @ w)
        return val

    def dump(self) -> str:
        """Sparse text dump for cross-checking with external solvers.

        Lines: ``obj <block> <i> <j> <value>``, ``con <row> <block> <i> <j> <value>``,
        ``free <row> <var> <value>``, ``cfree <var> <value>``, ``rhs <row> <value>``;
        only the upper triangle (``i <= j``) of symmetric blocks is written, 1-based.
        """
        buf = io.StringIO()
        buf.write(f"blocks {' '.join(str(d) for d in self.block_dims)}\n")
        buf.write(f"constraints {self.k}\nfree {self.n_free}\n")
        for bi, C in enumerate(self.C):
            for i, j in zip(*np.nonzero(np.triu(C))):
                buf.write(f"obj {bi + 1} {i + 1} {j + 1} {C[i, j]:.17g}\n")
        for bi, A in enumerate(self.A):
            for r, i, j in zip(*np.nonzero(np.triu(A))):
                buf.write(f"con {r + 1} {bi + 1} {i + 1} {j + 1} {A[r, i, j]:.17g}\n")
        for r, v in zip(*np.nonzero(self.A_free)):
            buf.write(f"free {r + 1} {v + 1} {self.A_free[r, v]:.17g}\n")
        for v in np.nonzero(self.c_free)[0]:
            buf.write(f"cfree {v + 1} {self.c_free[v]:.17g}\n")
        for r in np.nonzero(self.b)[0]:
            buf.write(f"rhs {r + 1} {self.b[r]:.17g}\n")
        return buf.getvalue()


@dataclass
class SdpSolution:
    status: Status
    X: list[np.ndarray] = field(default_factory=list)
    w: np.ndarray | None = None
    y: np.ndarray | None = None
    S: list[np.ndarray] = field(default_factory=list)
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    gap: float = np.inf
    primal_objective: float = np.nan
    dual_objective: float = np.nan
    ray: np.ndarray | None = None  # improving ray when PrimalInfeasible / DualInfeasible
    iterations: int = 0
    backend_status: str = ""
    form: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def min_eig(self) -> float:
        return min((float(np.linalg.eigvalsh(Xb)[0]) for Xb in self.X if Xb.size), default=0.0)


def _sym_index(nb: int):
    """Lower-triangular (i >= j) index pairs of an ``nb x nb`` block."""
    ii, jj = np.tril_indices(nb)
    return ii, jj


def kkt_residuals(prob: SdpProblem, X, w, y) -> tuple[float, float, float]:
    """Relative primal residual, dual residual and relative gap for a candidate triple."""
    r_p = np.linalg.norm(prob.apply(X, w) - prob.b) / (1 + np.linalg.norm(prob.b))
    S = [C - Ay for C, Ay in zip(prob.C, prob.adjoint(y))]
    # dual residual: negative part of S plus free-variable stationarity
    neg = 0.0
    for Sb in S:
        if Sb.size:
            neg = max(neg, max(0.0, -float(np.linalg.eigvalsh(Sb)[0])))
    free_res = float(np.linalg.norm(prob.c_free - prob.A_free.T @ y)) if prob.n_free else 0.0
    c_norm = 1 + sum(np.linalg.norm(C) for C in prob.C) + np.linalg.norm(prob.c_free)
    r_d = (neg + free_res) / c_norm
    pobj = prob.primal_objective(X, w)
    dobj = float(prob.b @ y)
    gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
    return float(r_p), float(r_d), float(gap)


def verify_infeasibility_ray(prob: SdpProblem, y: np.ndarray, tol_psd: float = 1e-8) -> bool:
    """Check ``sum y_i A_i <= 0`` blockwise, ``A_free^T y = 0`` and ``b . y > 0``."""
    y = np.asarray(y, dtype=float)
    scale = np.linalg.norm(y)
    if scale == 0 or not np.isfinite(scale):
        return False
    if float(prob.b @ y) <= 0:
        return False
    y = y / float(prob.b @ y)
    for Ay in prob.adjoint(y):
        if Ay.size and float(np.linalg.eigvalsh(Ay)[-1]) > tol_psd * (1 + np.linalg.norm(Ay)):
            return False
    if prob.n_free and np.linalg.norm(prob.A_free.T @ y) > tol_psd * (1 + np.linalg.norm(y)):
        return False
    return True


@dataclass
class _Reduction:
    """Maps the original equality system to an equivalent full-row-rank one without free variables."""

    T: np.ndarray  # reduced rows = T @ original rows
    A_red: np.ndarray
    b_red: np.ndarray
    inconsistent_ray: np.ndarray | None
    free_qr: tuple | None = None  # (Q1, R1, piv) of A_free, rank-truncated

    def solve_free(self, rhs: np.ndarray, n_free: int) -> np.ndarray:
        """Least-squares ``w`` with ``A_free w = rhs``."""
        Q1, R1, piv = self.free_qr
        w = np.zeros(n_free)
        if R1.size:
            w[piv[: R1.shape[0]]] = sla.solve_triangular(R1, Q1.T @ rhs)
        return w

    def solve_free_adjoint(self, c: np.ndarray) -> np.ndarray:
        """``coef`` with ``A_free^T coef = c`` in the least-squares sense."""
        Q1, R1, piv = self.free_qr
        if not R1.size:
            return np.zeros(Q1.shape[0])
        return Q1 @ sla.solve_triangular(R1, c[piv[: R1.shape[0]]], trans="T")


def _reduce(prob: SdpProblem, Amat: np.ndarray, rank_tol: float = 1e-10) -> _Reduction:
    k = prob.k
    # project out the free-variable columns
    if prob.n_free:
        Q, R, piv = sla.qr(prob.A_free, pivoting=True, mode="full")
        diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
        r_w = int(np.sum(diag > rank_tol * max(1.0, diag.max(initial=0.0))))
        P = Q[:, r_w:].T  # rows orthogonal to range(A_free)
        free_qr = (Q[:, :r_w], R[:r_w, :r_w], piv)
    else:
        P = np.eye(k)
        free_qr = None
    A1 = P @ Amat
    b1 = P @ prob.b
    if A1.shape[0] == 0:
        return _Reduction(np.zeros((0, k)), np.zeros((0, Amat.shape[1])), np.zeros(0), None, free_qr)
    U, s, Vt = np.linalg.svd(A1, full_matrices=False)
    r = int(np.sum(s > rank_tol * max(1.0, s.max(initial=0.0))))
    U_r = U[:, :r]
    resid = b1 - U_r @ (U_r.T @ b1)
    ray = None
    if np.linalg.norm(resid) > 1e-9 * (1 + np.linalg.norm(b1)):
        ray = P.T @ resid
    T = (U_r / s[:r]).T @ P
    return _Reduction(T, Vt[:r], (U_r.T @ b1) / s[:r], ray, free_qr)


def _vectorize(prob: SdpProblem):
    """Columns = lower-triangular entries of every block (off-diagonals counted twice)."""
    cols_A = []
    cols_c = []
    G_blocks = []
    for nb, C, A in zip(prob.block_dims, prob.C, prob.A):
        ii, jj = _sym_index(nb)
        weight = np.where(ii == jj, 1.0, 2.0)
        cols_A.append(A[:, ii, jj] * weight)
        cols_c.append(C[ii, jj] * weight)
        G = np.zeros((nb * nb, ii.size))
        G[jj * nb + ii, np.arange(ii.size)] = -1.0  # column-major, 'L' storage
        G[ii * nb + jj, np.arange(ii.size)] = -1.0
        G_blocks.append(G)
    Amat = np.hstack(cols_A) if cols_A else np.zeros((prob.k, 0))
    cvec = np.concatenate(cols_c) if cols_c else np.zeros(0)
    G = sla.block_diag(*G_blocks) if G_blocks else np.zeros((0, 0))
    return Amat, cvec, G


def _unvectorize(prob: SdpProblem, x: np.ndarray) -> list[np.ndarray]:
    X = []
    pos = 0
    for nb in prob.block_dims:
        ii, jj = _sym_index(nb)
        Xb = np.zeros((nb, nb))
        Xb[ii, jj] = x[pos:pos + ii.size]
        Xb[jj, ii] = x[pos:pos + ii.size]
        pos += ii.size
        X.append(Xb)
    return X


def _unpack_blocks(prob: SdpProblem, z: np.ndarray) -> list[np.ndarray]:
    out = []
    pos = 0
    for nb in prob.block_dims:
        M = z[pos:pos + nb * nb].reshape(nb, nb, order="F")
        M = np.tril(M) + np.tril(M, -1).T
        out.append(M)
        pos += nb * nb
    return out


def solve(prob: SdpProblem, opts: SdpOptions | None = None) -> SdpSolution:
    """Solve ``prob``; infeasibility is reported through the status, not raised."""
    opts = opts or SdpOptions()
    if opts.form == "auto":
        sol = solve(prob, replace(opts, form="dual"))
        if sol.status is Status.STALLED:
            logger.debug("dual form stalled (%s); re-solving in primal form", sol.backend_status)
            sol = solve(prob, replace(opts, form="primal"))
        return sol
    if opts.form not in ("dual", "primal"):
        raise ValueError(f"unknown form {opts.form!r}")
    sol = _solve(prob, opts)
    sol.form = opts.form
    return sol


def _solve(prob: SdpProblem, opts: SdpOptions) -> SdpSolution:
    import cvxopt
    from cvxopt import solvers

    Amat, cvec, G = _vectorize(prob)
    red = _reduce(prob, Amat)
    if red.inconsistent_ray is not None:
        ray = red.inconsistent_ray / float(prob.b @ red.inconsistent_ray)
        return SdpSolution(Status.PRIMAL_INFEASIBLE, ray=ray, backend_status="linear-inconsistent")

    # objective restricted to the affine set: free variables must not be unbounded
    if prob.n_free:
        # c_free must lie in the row space of A_free, otherwise the objective is unbounded
        coef = red.solve_free_adjoint(prob.c_free)
        if np.linalg.norm(prob.A_free.T @ coef - prob.c_free) > 1e-9 * (1 + np.linalg.norm(prob.c_free)):
            return SdpSolution(Status.DUAL_INFEASIBLE, backend_status="free-objective-unbounded")
        # substitute c_free . w = coef . (b - A_X x): adds -A_X^T coef to the block objective
        c_eff = cvec - Amat.T @ coef
    else:
        coef = np.zeros(prob.k)
        c_eff = cvec

    solvers.options.update(
        show_progress=False,
        maxiters=opts.max_iter,
        abstol=opts.tol_gap,
        reltol=opts.tol_gap,
        feastol=opts.tol_feas,
        refinement=2,
    )
    if opts.form == "dual":
        return _solve_dual_form(prob, opts, Amat, c_eff, coef, red)
    nvar = Amat.shape[1]
    dims = {"l": 0, "q": [], "s": list(prob.block_dims)}
    args = dict(
        c=cvxopt.matrix(c_eff.reshape(-1, 1)),
        G=cvxopt.sparse(cvxopt.matrix(G)) if G.size else cvxopt.spmatrix([], [], [], (0, nvar)),
        h=cvxopt.matrix(np.zeros((G.shape[0], 1))),
        dims=dims,
    )
    if red.A_red.shape[0]:
        args["A"] = cvxopt.matrix(red.A_red)
        args["b"] = cvxopt.matrix(red.b_red.reshape(-1, 1))
    try:
        res = solvers.conelp(**args, kktsolver=opts.kktsolver)
    except (ArithmeticError, ValueError) as exc:
        raise IllConditioned(str(exc)) from exc

    status = res["status"]
    iters = int(res.get("iterations", 0) or 0)
    if status == "primal infeasible":
        y_red = np.array(res["y"]).reshape(-1) if red.A_red.shape[0] else np.zeros(0)
        y = -(red.T.T @ y_red)
        sol = SdpSolution(Status.PRIMAL_INFEASIBLE, iterations=iters, backend_status=status)
        if float(prob.b @ y) > 0:
            sol.ray = y / float(prob.b @ y)
        return sol
    if status == "dual infeasible":
        x = np.array(res["x"]).reshape(-1)
        return SdpSolution(Status.DUAL_INFEASIBLE, ray=x, iterations=iters, backend_status=status)
    if res["x"] is None:
        return SdpSolution(Status.STALLED, iterations=iters, backend_status=status)

    x = np.array(res["x"]).reshape(-1)
    X = _unvectorize(prob, x)
    X = [0.5 * (Xb + Xb.T) for Xb in X]
    w = None
    if prob.n_free:
        rhs = prob.b - Amat @ x
        w = red.solve_free(rhs, prob.n_free)
    y_red = np.array(res["y"]).reshape(-1) if red.A_red.shape[0] else np.zeros(0)
    # cvxopt dual: G'z + A'y + c = 0  ->  our y has the opposite sign, lifted back
    y = -(red.T.T @ y_red) + coef
    return _finish(prob, opts, X, w, y, status, iters)


def _finish(prob: SdpProblem, opts: SdpOptions, X, w, y, status: str, iters: int) -> SdpSolution:
    """Recompute residuals from the original data and grade the backend's answer."""
    S = [C - Ay for C, Ay in zip(prob.C, prob.adjoint(y))]
    r_p, r_d, gap = kkt_residuals(prob, X, w, y)
    X_norm = float(np.sqrt(sum(np.sum(Xb ** 2) for Xb in X)))
    psd_ok = all(float(np.linalg.eigvalsh(Xb)[0]) >= -opts.psd_tol(X_norm) for Xb in X if Xb.size)
    sol = SdpSolution(
        Status.OPTIMAL,
        X=X,
        w=w,
        y=y,
        S=S,
        primal_residual=r_p,
        dual_residual=r_d,
        gap=gap,
        primal_objective=prob.primal_objective(X, w),
        dual_objective=float(prob.b @ y),
        iterations=iters,
        backend_status=status,
    )
    # the backend label is advisory: a point is graded by the residuals recomputed above
    near = r_d <= 1e3 * opts.tol_feas and gap <= 1e3 * opts.tol_gap
    if status != "optimal" and r_p <= opts.tol_feas and psd_ok and near:
        logger.debug("backend status %r overridden: r_p=%.2e r_d=%.2e gap=%.2e", status, r_p, r_d, gap)
        status = "optimal"
    if status != "optimal" or r_p > opts.tol_feas or not psd_ok:
        logger.debug("sdp not certified optimal: status=%s r_p=%.2e r_d=%.2e gap=%.2e psd_ok=%s",
                     status, r_p, r_d, gap, psd_ok)
        sol.status = Status.STALLED
    elif r_d > opts.tol_feas or gap > opts.tol_gap:
        # primal point is usable; dual accuracy below target is logged, not fatal
        logger.debug("sdp dual accuracy short of target: r_d=%.2e gap=%.2e", r_d, gap)
        if r_d > 1e3 * opts.tol_feas or gap > 1e3 * opts.tol_gap:
            sol.status = Status.STALLED
    return sol


def _lmi_columns(prob: SdpProblem, red: _Reduction, c_eff: np.ndarray):
    """``h - G u`` is ``c_eff - A_red^T u`` as stacked full (column-major) symmetric blocks."""
    r = red.A_red.shape[0]
    G_parts, h_parts = [], []
    pos = 0
    for nb in prob.block_dims:
        ii, jj = _sym_index(nb)
        m = ii.size
        # vector entries carry doubled off-diagonals: matrix entry = value / weight
        weight = np.where(ii == jj, 1.0, 2.0)
        rows_a = jj * nb + ii
        rows_b = ii * nb + jj
        Gb = np.zeros((nb * nb, r))
        hb = np.zeros(nb * nb)
        blockA = red.A_red[:, pos:pos + m].T / weight[:, None]
        blockc = c_eff[pos:pos + m] / weight
        Gb[rows_a] = blockA
        Gb[rows_b] = blockA
        hb[rows_a] = blockc
        hb[rows_b] = blockc
        G_parts.append(Gb)
        h_parts.append(hb)
        pos += m
    G = np.vstack(G_parts) if G_parts else np.zeros((0, r))
    h = np.concatenate(h_parts) if h_parts else np.zeros(0)
    return G, h


def _solve_dual_form(prob: SdpProblem, opts: SdpOptions, Amat, c_eff, coef, red: _Reduction) -> SdpSolution:
    """Hand cvxopt the reduced dual ``max b_red.u  s.t.  c_eff - A_red^T u PSD``.

    cvxopt's multiplier for the LMI is the primal ``X``. There are no
    equality rows, so the Cholesky KKT solver applies and the linear algebra
    scales with the number of constraints rather than with the Gram entries.
    """
    import cvxopt
    from cvxopt import solvers

    r = red.A_red.shape[0]
    G, h = _lmi_columns(prob, red, c_eff)
    if r == 0:
        # no constraints left: X = 0 is the only candidate if C_eff is PSD
        S = _unpack_blocks(prob, h)
        if all(float(np.linalg.eigvalsh(Sb)[0]) >= -1e-12 for Sb in S if Sb.size):
            X = [np.zeros((nb, nb)) for nb in prob.block_dims]
            w = red.solve_free(prob.b.copy(), prob.n_free) if prob.n_free else None
            return _finish(prob, opts, X, w, coef.copy(), "optimal", 0)
        return SdpSolution(Status.DUAL_INFEASIBLE, backend_status="unbounded-without-constraints")
    dims = {"l": 0, "q": [], "s": list(prob.block_dims)}
    try:
        res = solvers.conelp(cvxopt.matrix(-red.b_red.reshape(-1, 1)), cvxopt.matrix(G), cvxopt.matrix(h.reshape(-1, 1)),
                             dims, kktsolver=opts.kktsolver or "chol")
    except (ArithmeticError, ValueError) as exc:
        raise IllConditioned(str(exc)) from exc
    status = res["status"]
    iters = int(res.get("iterations", 0) or 0)
    if status == "dual infeasible":
        # c'u < 0 with G u <= 0: b_red.u > 0 and A_red^T u NSD, i.e. a primal infeasibility ray
        u = np.array(res["x"]).reshape(-1)
        y = red.T.T @ u
        sol = SdpSolution(Status.PRIMAL_INFEASIBLE, iterations=iters, backend_status=status)
        if float(prob.b @ y) > 0:
            sol.ray = y / float(prob.b @ y)
        return sol
    if status == "primal infeasible":
        z = np.array(res["z"]).reshape(-1)
        return SdpSolution(Status.DUAL_INFEASIBLE, ray=z, iterations=iters, backend_status=status)
    if res["x"] is None or res["z"] is None:
        return SdpSolution(Status.STALLED, iterations=iters, backend_status=status)
    u = np.array(res["x"]).reshape(-1)
    z = np.array(res["z"]).reshape(-1)
    X = _unpack_blocks(prob, z)
    X = [0.5 * (Xb + Xb.T) for Xb in X]
    x_vec = np.concatenate([Xb[_sym_index(Xb.shape[0])] for Xb in X]) if X else np.zeros(0)
    w = None
    if prob.n_free:
        w = red.solve_free(prob.b - Amat @ x_vec, prob.n_free)
    y = red.T.T @ u + coef
    return _finish(prob, opts, X, w, y, status, iters)
