"""Dense primal-dual interior-point solver for block-diagonal SDPs.

Problems are in primal standard form over a block-diagonal symmetric cone:

    minimize    <C, X>
    subject to  <A_i, X> = b_i,   i = 1..m,      X >= 0  (PSD, blockwise)

with the dual

    maximize    b' y
    subject to  S = C - sum_i y_i A_i >= 0.

The iteration is a Mehrotra predictor-corrector using the HKM direction:
the raw Newton step solves  dX S + X dS = Rc  and dX is symmetrized
afterwards, which leaves the constraint equations intact because the A_i are
symmetric.  All linear algebra is dense; the problems this package compiles
are tens of variables, so factorizing the m x m Schur complement directly is
both simple and fast.

Free scalar variables are not supported here: the compiler encodes each one
as a difference of two 1x1 blocks, so the solver sees pure standard form.

The starting point is identity-scaled from the data norms:

    X0 = xi_p I,  y0 = 0,  S0 = xi_d I,
    xi_p = max(10, sqrt(K), K * max_i (1 + |b_i|) / (1 + ||A_i||_F)),
    xi_d = max(10, sqrt(K), max(||C||_F, max_i ||A_i||_F)),

with K the total side length, which keeps runs deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError

__all__ = ["SdpProblem", "SolverOptions", "SdpSolution", "solve", "validate_solution"]

Entry = tuple[int, int, int]  # (block, row, col) with row <= col, 0-based


@dataclass(frozen=True)
class SdpProblem:
    """Sparse description of one standard-form SDP.

    ``constraints[i]`` and ``objective`` map (block, row, col) with row <= col
    to the entry value of the corresponding symmetric matrix.
    """

    block_sizes: tuple[int, ...]
    b: np.ndarray
    constraints: tuple[Mapping[Entry, float], ...]
    objective: Mapping[Entry, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        if any(s < 1 for s in self.block_sizes):
            raise DimensionError("block sizes must be >= 1")
        if len(self.b) != len(self.constraints):
            raise DimensionError("one right-hand side per constraint required")
        for ent in self.iter_entries():
            blk, i, j = ent
            if not (0 <= blk < len(self.block_sizes)):
                raise DimensionError(f"block index {blk} out of range")
            s = self.block_sizes[blk]
            if not (0 <= i <= j < s):
                raise DimensionError(f"entry {ent} outside upper triangle of size {s}")

    def iter_entries(self):
        for con in self.constraints:
            yield from con.keys()
        yield from self.objective.keys()

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    @property
    def total_dim(self) -> int:
        return int(sum(self.block_sizes))

    def dense_blocks(self, entries: Mapping[Entry, float]) -> list[np.ndarray]:
        """Materialize a full symmetric matrix per block."""
        mats = [np.zeros((s, s)) for s in self.block_sizes]
        for (blk, i, j), v in entries.items():
            mats[blk][i, j] = v
            mats[blk][j, i] = v
        return mats

    def constraint_matrix_rows(self) -> np.ndarray:
        """Stacked dense rows (one per constraint) over all upper-tri entries.

        Off-diagonal entries are weighted by sqrt(2) so row inner products
        match the Frobenius pairing; used for the independence check.
        """
        cols: dict[Entry, int] = {}
        for blk, s in enumerate(self.block_sizes):
            for i in range(s):
                for j in range(i, s):
                    cols[(blk, i, j)] = len(cols)
        rows = np.zeros((self.num_constraints, len(cols)))
        for r, con in enumerate(self.constraints):
            for ent, v in con.items():
                w = v if ent[1] == ent[2] else v * np.sqrt(2.0)
                rows[r, cols[ent]] = w
        return rows


@dataclass(frozen=True)
class SolverOptions:
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    tol_psd: float = 1e-9
    max_iters: int = 100
    step_fraction: float = 0.98

    def __post_init__(self):
        for name in ("tol_feas", "tol_gap", "tol_psd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SdpSolution:
    status: str  # optimal | infeasible-detected | max-iterations | numerical-failure
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    residuals: dict
    iterations: int
    info: dict = field(default_factory=dict)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _max_step(M: np.ndarray, dM: np.ndarray) -> float:
    """Largest alpha with M + alpha dM still positive definite (1 if >= 1)."""
    L = np.linalg.cholesky(M)
    W = np.linalg.solve(L, np.linalg.solve(L, dM.T).T)
    lam = np.linalg.eigvalsh(_sym(W)).min()
    if lam >= 0:
        return 1.0
    return min(1.0, -1.0 / lam)


class _Kernel:
    """Dense per-block views of the data plus the Schur-complement machinery."""

    def __init__(self, prob: SdpProblem):
        self.prob = prob
        self.sizes = prob.block_sizes
        self.nblocks = len(self.sizes)
        self.m = prob.num_constraints
        self.A = [prob.dense_blocks(con) for con in prob.constraints]
        self.C = prob.dense_blocks(prob.objective)
        # which constraints touch which block (precomputed for Schur assembly)
        self.touch = [[] for _ in range(self.nblocks)]
        for i, con in enumerate(prob.constraints):
            blks = {ent[0] for ent in con}
            for blk in blks:
                self.touch[blk].append(i)
        self.A_flat = []
        for blk in range(self.nblocks):
            idxs = self.touch[blk]
            self.A_flat.append(
                np.array([self.A[i][blk].ravel() for i in idxs]) if idxs else None
            )

    def inner_all(self, mats: list[np.ndarray]) -> np.ndarray:
        """<A_i, mats> for every constraint."""
        out = np.zeros(self.m)
        for blk in range(self.nblocks):
            idxs = self.touch[blk]
            if not idxs:
                continue
            out[idxs] += self.A_flat[blk] @ mats[blk].ravel()
        return out

    def adjoint(self, y: np.ndarray) -> list[np.ndarray]:
        """sum_i y_i A_i as per-block dense matrices."""
        out = [np.zeros((s, s)) for s in self.sizes]
        for blk in range(self.nblocks):
            idxs = self.touch[blk]
            if not idxs:
                continue
            flat = y[idxs] @ self.A_flat[blk]
            out[blk] += flat.reshape(self.sizes[blk], self.sizes[blk])
        return out

    def schur_gram(self, X: list[np.ndarray], S: list[np.ndarray]) -> "_SchurFactor":
        """Factor the Schur complement M_ij = trace(A_i X A_j S^-1) as a Gram matrix.

        With S = L L' and X = R R', the entry is the Frobenius pairing of
        G_i = L^-1 A_i R, so M = G G' and a QR factorization of G' gives a
        Cholesky factor of M without ever squaring the conditioning.
        """
        cols = sum(self.sizes[blk] ** 2 for blk in range(self.nblocks) if self.touch[blk])
        G = np.zeros((self.m, cols))
        offset = 0
        for blk in range(self.nblocks):
            idxs = self.touch[blk]
            if not idxs:
                continue
            s = self.sizes[blk]
            L = np.linalg.cholesky(S[blk])
            R = np.linalg.cholesky(X[blk])
            for i in idxs:
                U = np.linalg.solve(L, self.A[i][blk])
                G[i, offset : offset + s * s] = (U @ R).ravel()
            offset += s * s
        return _SchurFactor(G)


class _SchurFactor:
    """Solve (G G' + jitter I) dy = r through a QR factorization of G'."""

    def __init__(self, G: np.ndarray):
        self.G = G
        self.jitter = 0.0
        self.Rfac = None

    def _refactor(self):
        m = self.G.shape[0]
        if self.jitter > 0:
            stacked = np.vstack([self.G.T, np.sqrt(self.jitter) * np.eye(m)])
        else:
            stacked = self.G.T
        _, self.Rfac = np.linalg.qr(stacked, mode="reduced")
        diag = np.abs(np.diag(self.Rfac))
        if diag.min() <= max(1e-13 * diag.max(), 1e-300):
            raise np.linalg.LinAlgError("Schur complement numerically singular")

    def ensure_regular(self):
        """Escalate jitter until the factorization is usable."""
        for _ in range(6):
            try:
                self._refactor()
                return
            except np.linalg.LinAlgError:
                base = (self.G ** 2).sum() / self.G.shape[0]
                self.jitter = max(self.jitter * 100.0, 1e-14 * base, 1e-30)
        raise np.linalg.LinAlgError("Schur complement numerically singular")

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = self.G @ (self.G.T @ v)
        if self.jitter:
            out = out + self.jitter * v
        return out

    def solve(self, r: np.ndarray) -> np.ndarray:
        dy = np.linalg.solve(self.Rfac, np.linalg.solve(self.Rfac.T, r))
        resid = r - self.apply(dy)
        dy = dy + np.linalg.solve(self.Rfac, np.linalg.solve(self.Rfac.T, resid))
        return dy

    def condition_estimate(self) -> float:
        d = np.abs(np.diag(self.Rfac))
        return float((d.max() / d.min()) ** 2) if d.min() > 0 else np.inf


def _objective(entries_dense: list[np.ndarray], X: list[np.ndarray]) -> float:
    return float(sum(np.tensordot(c, x) for c, x in zip(entries_dense, X)))


def solve(prob: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
    """Run the predictor-corrector iteration until the tolerances are met.

    Returns the best iterate seen, with status ``optimal`` when primal and
    dual feasibility and the relative duality gap are all within tolerance;
    ``max-iterations`` or ``numerical-failure`` otherwise.  Infeasibility is
    reported heuristically when the dual objective diverges while the dual
    residual stays small (no homogeneous embedding in this version).
    """
    opts = opts or SolverOptions()
    if prob.num_constraints == 0:
        raise ValueError("problem has no constraints")

    # normalize constraint rows and the objective; undone on exit (the iterates
    # X are unaffected, y and S pick up the inverse factors)
    def _fro(entries):
        return np.sqrt(
            sum(v * v * (1.0 if i == j else 2.0) for (blk, i, j), v in entries.items())
        )

    con_scales = np.array([max(_fro(con), 1e-12) for con in prob.constraints])
    obj_scale = max(_fro(prob.objective), 1.0)
    b_orig_norm = float(np.max(np.abs(prob.b))) if len(prob.b) else 0.0
    scaled = SdpProblem(
        block_sizes=prob.block_sizes,
        b=prob.b / con_scales,
        constraints=tuple(
            {k: v / s for k, v in con.items()}
            for con, s in zip(prob.constraints, con_scales)
        ),
        objective={k: v / obj_scale for k, v in prob.objective.items()},
    )
    prob = scaled
    ker = _Kernel(prob)
    sizes = prob.block_sizes
    K = prob.total_dim
    b = prob.b

    normsA = [max(np.linalg.norm(Ai[blk]) for blk in range(ker.nblocks)) or 1.0 for Ai in ker.A]
    normC = max(np.linalg.norm(Cb) for Cb in ker.C)
    xi_p = max(10.0, np.sqrt(K), K * max((1 + abs(bi)) / (1 + na) for bi, na in zip(b, normsA)))
    xi_d = max(10.0, np.sqrt(K), normC, max(normsA))

    X = [xi_p * np.eye(s) for s in sizes]
    S = [xi_d * np.eye(s) for s in sizes]
    y = np.zeros(ker.m)

    tau = opts.step_fraction
    best = None
    best_score = np.inf
    status = "max-iterations"
    iters_done = 0

    def residuals_of(X, y, S):
        rp = b - ker.inner_all(X)
        Aty = ker.adjoint(y)
        Rd = [ker.C[l] - S[l] - Aty[l] for l in range(ker.nblocks)]
        # objectives and all stopping measures refer to the original problem
        pobj = obj_scale * _objective(ker.C, X)
        dobj = obj_scale * float(b @ y)
        rel_p = np.max(np.abs(rp * con_scales)) / (1 + b_orig_norm)
        rel_d = max(np.linalg.norm(R) for R in Rd) / (1 + normC)
        rel_g = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        return rp, Rd, pobj, dobj, rel_p, rel_d, rel_g

    trace_log = []
    for it in range(opts.max_iters):
        iters_done = it
        rp, Rd, pobj, dobj, rel_p, rel_d, rel_g = residuals_of(X, y, S)
        mu = sum(np.tensordot(Xb, Sb) for Xb, Sb in zip(X, S)) / K
        trace_log.append((it, pobj, dobj, rel_p, rel_d, rel_g, mu))

        score = max(rel_p, rel_d, rel_g)
        if score < best_score:
            best_score = score
            best = ([Xb.copy() for Xb in X], y.copy(), [Sb.copy() for Sb in S])
        if rel_p <= opts.tol_feas and rel_d <= opts.tol_feas and rel_g <= opts.tol_gap:
            status = "optimal"
            break
        if dobj > 1e8 * (1 + abs(pobj)) and rel_d <= opts.tol_feas:
            status = "infeasible-detected"
            break

        try:
            factor = ker.schur_gram(X, S)
            factor.ensure_regular()

            def solveS(B, l):
                # B S^-1 for symmetric S (right division via a linear solve)
                return np.linalg.solve(S[l], B.T).T

            base_rhs = rp + ker.inner_all(
                [X[l] @ solveS(Rd[l], l) for l in range(ker.nblocks)]
            )

            def directions(RcSinv):
                rhs = base_rhs - ker.inner_all(RcSinv)
                dy = factor.solve(rhs)
                Atdy = ker.adjoint(dy)
                dS = [Rd[l] - Atdy[l] for l in range(ker.nblocks)]
                dX = [
                    _sym(RcSinv[l] - X[l] @ solveS(dS[l], l))
                    for l in range(ker.nblocks)
                ]
                return dX, dy, dS

            # predictor (affine scaling): Rc = -X S, so Rc S^-1 = -X exactly
            dX_a, dy_a, dS_a = directions([-X[l] for l in range(ker.nblocks)])
            ap = min(_max_step(X[l], dX_a[l]) for l in range(ker.nblocks))
            ad = min(_max_step(S[l], dS_a[l]) for l in range(ker.nblocks))
            mu_aff = sum(
                np.tensordot(X[l] + tau * ap * dX_a[l], S[l] + tau * ad * dS_a[l])
                for l in range(ker.nblocks)
            ) / K
            sigma = float(np.clip((max(mu_aff, 0.0) / mu) ** 3, 1e-10, 1.0))

            # corrector with the Mehrotra second-order term
            RcSinv = [
                sigma * mu * solveS(np.eye(sizes[l]), l)
                - X[l]
                - solveS(dX_a[l] @ dS_a[l], l)
                for l in range(ker.nblocks)
            ]
            dX, dy, dS = directions(RcSinv)
        except np.linalg.LinAlgError as exc:
            cond = factor.condition_estimate() if "factor" in locals() else np.inf
            Xb, yb, Sb = best
            _, _, pobj, dobj, rel_p, rel_d, rel_g = residuals_of(Xb, yb, Sb)
            return SdpSolution(
                status="numerical-failure",
                X=Xb,
                y=obj_scale * yb / con_scales,
                S=[obj_scale * Sl for Sl in Sb],
                primal_objective=pobj,
                dual_objective=dobj,
                residuals={"primal": rel_p, "dual": rel_d, "gap": rel_g},
                iterations=it,
                info={"error": str(exc), "schur_condition": cond, "trace": trace_log},
            )

        def _safe_step(mats, dmats, alpha):
            # _max_step is exact up to roundoff; back off only the side that fails
            for _ in range(40):
                try:
                    for l in range(ker.nblocks):
                        np.linalg.cholesky(mats[l] + alpha * dmats[l])
                    return alpha
                except np.linalg.LinAlgError:
                    alpha *= 0.5
            return 0.0

        ap = min(1.0, tau * min(_max_step(X[l], dX[l]) for l in range(ker.nblocks)))
        ad = min(1.0, tau * min(_max_step(S[l], dS[l]) for l in range(ker.nblocks)))
        ap = _safe_step(X, dX, ap)
        ad = _safe_step(S, dS, ad)
        if max(ap, ad) < 1e-10:
            status = "max-iterations"  # stalled: no further progress possible
            break
        X = [_sym(X[l] + ap * dX[l]) for l in range(ker.nblocks)]
        S = [_sym(S[l] + ad * dS[l]) for l in range(ker.nblocks)]
        y = y + ad * dy
    else:
        iters_done = opts.max_iters

    Xb, yb, Sb = best
    rp, Rd, pobj, dobj, rel_p, rel_d, rel_g = residuals_of(Xb, yb, Sb)
    return SdpSolution(
        status=status,
        X=Xb,
        y=obj_scale * yb / con_scales,
        S=[obj_scale * Sl for Sl in Sb],
        primal_objective=pobj,
        dual_objective=dobj,
        residuals={"primal": rel_p, "dual": rel_d, "gap": rel_g},
        iterations=iters_done + (1 if status == "optimal" else 0),
        info={"trace": trace_log},
    )


def validate_solution(prob: SdpProblem, sol: SdpSolution) -> dict:
    """Recompute every residual from scratch, independent of solver state."""
    ker = _Kernel(prob)
    rp = prob.b - ker.inner_all(sol.X)
    Aty = ker.adjoint(sol.y)
    dual_res = max(
        float(np.max(np.abs(ker.C[l] - sol.S[l] - Aty[l]))) for l in range(ker.nblocks)
    )
    min_eig_X = min(float(np.linalg.eigvalsh(Xb).min()) for Xb in sol.X)
    min_eig_S = min(float(np.linalg.eigvalsh(Sb).min()) for Sb in sol.S)
    pobj = _objective(ker.C, sol.X)
    dobj = float(prob.b @ sol.y)
    comp = float(sum(np.tensordot(Xb, Sb) for Xb, Sb in zip(sol.X, sol.S)))
    return {
        "primal_residual_inf": float(np.max(np.abs(rp))) if len(rp) else 0.0,
        "dual_residual_inf": dual_res,
        "min_eig_X": min_eig_X,
        "min_eig_S": min_eig_S,
        "primal_objective": pobj,
        "dual_objective": dobj,
        "duality_gap": pobj - dobj,
        "complementarity": comp,
    }
