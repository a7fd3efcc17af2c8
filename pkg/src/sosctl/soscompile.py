"""Compile matrix-SOS feasibility conditions into standard-form SDPs.

The data-driven program searches for a T x N matrix polynomial Y(x) with

    (i)  Z0T Y(x) = P, a constant symmetric matrix with P - mu I >= 0, and
    (ii) Q(x) = -[ J(x) X1 Y(x) + (J(x) X1 Y(x))' ] - eps(x) I  an SOS matrix,

where J is the Jacobian of the monomial vector.  Condition (ii) is lowered
through the extended-variable characterization: y' Q(x) y must be SOS in
(x, y), so a Gram matrix Theta over the basis { y_i * m_a(x) } is matched
coefficient-by-coefficient against Q.

Feasibility is solved as margin maximization:  maximize t subject to
(P - mu I - t I) >= 0 and (Theta - t I) >= 0 plus all equalities, with t
capped above (``margin_cap``) so the program stays bounded even when the
conditions are strictly feasible and scale-free.  A program is accepted as
feasible when the optimal margin satisfies t* >= -1e-8.

Free scalars (the Y coefficients and t itself) are lowered as differences of
two 1x1 PSD blocks, so the solver only ever sees pure standard form.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DataMatrices
from .errors import CompileError, InfeasibleProgramError, MarginalFeasibilityError
from .poly import (
    MatrixPolynomial,
    Monomial,
    MonomialVector,
    Polynomial,
    grlex_key,
    monomial_basis,
    parse_polynomial,
)
from .sdpsolve import SdpProblem, SdpSolution, SolverOptions, solve

__all__ = [
    "SosOptions",
    "SosProgram",
    "ModelBasedProgram",
    "ScalarSosProgram",
    "SosSolution",
    "StructuralInfeasibilityWarning",
    "FEASIBILITY_MARGIN_TOL",
    "default_epsilon",
    "compile_sos",
    "compile_model_based",
    "compile_scalar_sos",
    "extract_solution",
    "extract_model_based",
    "build_Q_template",
    "build_Q_model_based",
    "gram_residual",
    "reconstruct_residual",
    "load_options",
]

FEASIBILITY_MARGIN_TOL = 1e-8


class StructuralInfeasibilityWarning(UserWarning):
    """A Gram diagonal entry is pinned to a negative value by fixed terms."""


def default_epsilon(n: int, eps0: float = 1e-5) -> Polynomial:
    """The default SOS margin polynomial eps0 * (x1^2 + ... + xn^2)."""
    terms = {}
    for i in range(n):
        exps = [0] * n
        exps[i] = 2
        terms[Monomial(tuple(exps))] = eps0
    return Polynomial(n, terms)


@dataclass(frozen=True)
class SosOptions:
    """Knobs of the synthesis program.

    ``epsilon`` fixes the SOS polynomial of condition (ii); it is a data, not
    a decision variable.  When None, ``epsilon0 * sum x_i^2`` is used.  Note
    that eps must be compatible with the reachable monomials of the Q
    diagonal; the compiler warns when a choice pins the program infeasible.
    """

    dY: int = 1
    mu: float = 1e-3
    epsilon: Polynomial | None = None
    epsilon0: float = 1e-5
    gram_degree_pad: int = 0
    margin_cap: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.dY < 0 or self.gram_degree_pad < 0:
            raise ValueError("degrees must be nonnegative")
        if self.margin_cap <= 0:
            raise ValueError("margin cap must be positive")

    def epsilon_for(self, n: int) -> Polynomial:
        if self.epsilon is not None:
            if self.epsilon.n != n:
                raise CompileError(
                    f"epsilon has {self.epsilon.n} variables, data has {n}"
                )
            return self.epsilon
        return default_epsilon(n, self.epsilon0)


class _Builder:
    """Accumulates PSD blocks, split free scalars and equality rows."""

    def __init__(self):
        self.block_sizes: list[int] = []
        self.cons: list[dict] = []
        self.rhs: list[float] = []
        self.labels: list[str] = []
        self.objective: dict = {}
        self.free_pairs: list[tuple[int, int]] = []

    def add_psd_block(self, size: int) -> int:
        self.block_sizes.append(int(size))
        return len(self.block_sizes) - 1

    def add_free_scalar(self) -> int:
        bp = self.add_psd_block(1)
        bm = self.add_psd_block(1)
        self.free_pairs.append((bp, bm))
        return len(self.free_pairs) - 1

    def new_constraint(self, rhs: float, label: str) -> int:
        self.cons.append({})
        self.rhs.append(float(rhs))
        self.labels.append(label)
        return len(self.cons) - 1

    def add_entry(self, con: int, blk: int, i: int, j: int, coeff: float):
        """Coefficient on the value X[i, j] of block ``blk`` (i, j unordered)."""
        if coeff == 0.0:
            return
        if i > j:
            i, j = j, i
        d = self.cons[con]
        key = (blk, i, j)
        d[key] = d.get(key, 0.0) + (coeff if i == j else coeff / 2.0)
        if d[key] == 0.0:
            del d[key]

    def add_free(self, con: int, fv: int, coeff: float):
        bp, bm = self.free_pairs[fv]
        self.add_entry(con, bp, 0, 0, coeff)
        self.add_entry(con, bm, 0, 0, -coeff)

    def objective_free(self, fv: int, coeff: float):
        bp, bm = self.free_pairs[fv]
        self.objective[(bp, 0, 0)] = self.objective.get((bp, 0, 0), 0.0) + coeff
        self.objective[(bm, 0, 0)] = self.objective.get((bm, 0, 0), 0.0) - coeff

    def build(self) -> SdpProblem:
        prob = SdpProblem(
            block_sizes=tuple(self.block_sizes),
            b=np.array(self.rhs),
            constraints=tuple(self.cons),
            objective=dict(self.objective),
        )
        self._check_independent(prob)
        return prob

    def _check_independent(self, prob: SdpProblem, tol: float = 1e-10):
        rows = prob.constraint_matrix_rows()
        if rows.shape[0] == 0:
            return
        diag = np.abs(np.diag(np.linalg.qr(rows.T, mode="r")))
        rank = int(np.sum(diag > tol * max(diag.max(), 1.0)))
        if rank < prob.num_constraints:
            dep = prob.num_constraints - rank
            raise CompileError(
                f"{dep} equality constraint(s) are linearly dependent; "
                "this indicates an internal compiler error"
            )


def _free_value(prob_free_pairs, sol: SdpSolution, fv: int) -> float:
    bp, bm = prob_free_pairs[fv]
    return float(sol.X[bp][0, 0] - sol.X[bm][0, 0])


@dataclass(frozen=True)
class _GramShape:
    basis: tuple[Monomial, ...]
    pairs: dict  # monomial -> list[(a, b)] over the full basis grid
    block: int
    N: int

    @property
    def M(self) -> int:
        return len(self.basis)


def _gram_pairs(basis: Sequence[Monomial]) -> dict:
    pairs: dict = {}
    for a, ma in enumerate(basis):
        for b, mb in enumerate(basis):
            pairs.setdefault(ma * mb, []).append((a, b))
    return pairs


def _emit_gram(
    builder: _Builder,
    shape: _GramShape,
    acc: dict,
    eps: Polynomial,
    t_fv: int,
) -> list[tuple[int, Monomial, float]]:
    """Rows tying the Gram block to the affine coefficients of Q.

    ``acc[(i, k)]`` maps a monomial to {free var: coeff} and describes
    R_ik(x); the compiled Q is -R - R' - eps I.  Returns the list of
    structurally pinned negative diagonal entries for diagnostics.
    """
    N, M, blk = shape.N, shape.M, shape.block
    pinned = []
    mono_order = sorted(shape.pairs.keys(), key=grlex_key)
    for i in range(N):
        for k in range(i, N):
            r_ik = acc.get((i, k), {})
            r_ki = acc.get((k, i), {})
            for mu in mono_order:
                plist = shape.pairs[mu]
                eps_mu = eps.coefficient(mu) if i == k else 0.0
                con = builder.new_constraint(
                    rhs=-eps_mu, label=f"gram[{i + 1},{k + 1}]:{mu}"
                )
                for a, b in plist:
                    builder.add_entry(con, blk, i * M + a, k * M + b, 1.0)
                if i == k:
                    diag_hits = sum(1 for a, b in plist if a == b)
                    if diag_hits:
                        builder.add_free(con, t_fv, float(diag_hits))
                coeffs: dict[int, float] = {}
                for fv, c in r_ik.get(mu, {}).items():
                    coeffs[fv] = coeffs.get(fv, 0.0) + c
                for fv, c in r_ki.get(mu, {}).items():
                    coeffs[fv] = coeffs.get(fv, 0.0) + c
                for fv, c in coeffs.items():
                    builder.add_free(con, fv, c)
                if (
                    i == k
                    and not coeffs
                    and eps_mu > 0.0
                    and len(plist) == 1
                    and plist[0][0] == plist[0][1]
                ):
                    pinned.append((i, mu, -eps_mu))
    return pinned


def _warn_pinned(pinned):
    if pinned:
        desc = "; ".join(
            f"Q[{i + 1},{i + 1}] coefficient of {mu} is fixed at {val:g}"
            for i, mu, val in pinned
        )
        warnings.warn(
            "structurally forced negative Gram diagonal "
            f"({desc}); no choice of Y can make the program feasible with "
            "this epsilon - use an epsilon supported on monomials reachable "
            "by every diagonal entry of Q",
            StructuralInfeasibilityWarning,
            stacklevel=3,
        )


def _check_coverage(acc: dict, pairs: dict, what: str):
    for (i, k), per_mu in acc.items():
        for mu in per_mu:
            if mu not in pairs:
                raise CompileError(
                    f"{what} produces monomial {mu} of degree {mu.degree} outside "
                    "the Gram basis products; increase gram_degree_pad"
                )


@dataclass(frozen=True)
class SosProgram:
    """Compiled data-driven synthesis program plus its variable maps."""

    dm: DataMatrices
    opts: SosOptions
    epsilon: Polynomial
    basis_Y: tuple[Monomial, ...]
    gram_basis: tuple[Monomial, ...]
    y_index: dict
    t_margin: int
    p_block: int
    gram_block: int
    free_pairs: tuple[tuple[int, int], ...]
    labels: tuple[str, ...]
    problem: SdpProblem

    @property
    def num_y_coefficients(self) -> int:
        return len(self.y_index)

    def margin(self, sol: SdpSolution) -> float:
        return _free_value(self.free_pairs, sol, self.t_margin)

    def is_feasible(self, sol: SdpSolution, tol: float = FEASIBILITY_MARGIN_TOL) -> bool:
        return sol.status == "optimal" and self.margin(sol) >= -tol

    def assemble_Y(self, sol: SdpSolution) -> MatrixPolynomial:
        T, N = self.dm.T, self.dm.N
        n = self.dm.record.n
        rows = []
        for t in range(T):
            row = []
            for k in range(N):
                terms = {}
                for mu in self.basis_Y:
                    v = _free_value(self.free_pairs, sol, self.y_index[(t, k, mu)])
                    if v != 0.0:
                        terms[mu] = v
                row.append(Polynomial(n, terms))
            rows.append(row)
        return MatrixPolynomial(rows)

    def theta(self, sol: SdpSolution) -> np.ndarray:
        t = self.margin(sol)
        G = sol.X[self.gram_block]
        return G + t * np.eye(G.shape[0])


def compile_sos(dm: DataMatrices, opts: SosOptions | None = None) -> SosProgram:
    """Lower the synthesis conditions on the given data to a standard-form SDP."""
    opts = opts or SosOptions()
    rec = dm.record
    Z = rec.Z
    n, N, T = rec.n, dm.N, dm.T
    eps = opts.epsilon_for(n)

    J = Z.jacobian()
    W = J @ rec.X1  # N x T matrix polynomial
    d_Q = max(W.degree + opts.dY, eps.degree)
    D = -(-d_Q // 2) + opts.gram_degree_pad  # ceil(d_Q / 2) + pad
    gram_basis = tuple(monomial_basis(n, D))
    basis_Y = tuple(monomial_basis(n, opts.dY))
    M = len(gram_basis)

    builder = _Builder()
    y_index = {}
    for t in range(T):
        for k in range(N):
            for mu in basis_Y:
                y_index[(t, k, mu)] = builder.add_free_scalar()
    t_fv = builder.add_free_scalar()
    p_blk = builder.add_psd_block(N)
    gram_blk = builder.add_psd_block(N * M)
    cap_blk = builder.add_psd_block(1)

    Z0T = dm.Z0T
    const = Monomial((0,) * n)

    # (i) part 1: nonconstant monomials of Z0T Y(x) vanish
    for k in range(N):
        for mu in basis_Y:
            if mu.is_constant:
                continue
            for r in range(N):
                con = builder.new_constraint(0.0, f"constantness[{r + 1},{k + 1}]:{mu}")
                for t in range(T):
                    builder.add_free(con, y_index[(t, k, mu)], Z0T[r, t])

    # (i) part 2: symmetry of the constant term P
    for r in range(N):
        for c in range(r + 1, N):
            con = builder.new_constraint(0.0, f"symmetry[{r + 1},{c + 1}]")
            for t in range(T):
                builder.add_free(con, y_index[(t, c, const)], Z0T[r, t])
                builder.add_free(con, y_index[(t, r, const)], -Z0T[c, t])

    # (i) part 3: P-block linkage, X_P = P - (mu + t) I
    for r in range(N):
        for c in range(r, N):
            delta = 1.0 if r == c else 0.0
            con = builder.new_constraint(-opts.mu * delta, f"pblock[{r + 1},{c + 1}]")
            builder.add_entry(con, p_blk, r, c, 1.0)
            if delta:
                builder.add_free(con, t_fv, 1.0)
            for t in range(T):
                builder.add_free(con, y_index[(t, c, const)], -Z0T[r, t])

    # (ii): Gram linkage for Q = -(W Y + (W Y)') - eps I
    acc: dict = {}
    for i in range(N):
        for t in range(T):
            for mon1, w in W[i, t].items():
                for k in range(N):
                    for mu2 in basis_Y:
                        fv = y_index[(t, k, mu2)]
                        per = acc.setdefault((i, k), {}).setdefault(mon1 * mu2, {})
                        per[fv] = per.get(fv, 0.0) + w
    shape = _GramShape(basis=gram_basis, pairs=_gram_pairs(gram_basis), block=gram_blk, N=N)
    _check_coverage(acc, shape.pairs, "the compiled Q template")
    pinned = _emit_gram(builder, shape, acc, eps, t_fv)

    # margin cap keeps the maximization bounded on scale-free instances
    con = builder.new_constraint(opts.margin_cap, "margin-cap")
    builder.add_free(con, t_fv, 1.0)
    builder.add_entry(con, cap_blk, 0, 0, 1.0)

    builder.objective_free(t_fv, -1.0)  # minimize -t

    _warn_pinned(pinned)
    return SosProgram(
        dm=dm,
        opts=opts,
        epsilon=eps,
        basis_Y=basis_Y,
        gram_basis=gram_basis,
        y_index=y_index,
        t_margin=t_fv,
        p_block=p_blk,
        gram_block=gram_blk,
        free_pairs=tuple(builder.free_pairs),
        labels=tuple(builder.labels),
        problem=builder.build(),
    )


@dataclass(frozen=True)
class SosSolution:
    """Extracted certificate data of a feasible program."""

    Y: MatrixPolynomial
    P: np.ndarray
    Theta: np.ndarray
    margin: float


def extract_solution(prog: SosProgram, sol: SdpSolution) -> SosSolution:
    """Map a solver result back to (Y, P, Theta); validates the tolerances."""
    if sol.status != "optimal":
        raise MarginalFeasibilityError(
            f"solver finished with status {sol.status!r}",
            diagnostics={"status": sol.status, "residuals": sol.residuals},
        )
    t_star = prog.margin(sol)
    if t_star < -FEASIBILITY_MARGIN_TOL:
        raise InfeasibleProgramError(
            f"program infeasible: certificate margin {t_star:.3e} < -1e-8",
            margin=t_star,
        )
    Y = prog.assemble_Y(sol)
    ZY = prog.dm.Z0T @ Y
    n = prog.dm.record.n
    const = Monomial((0,) * n)
    N = prog.dm.N
    P = np.empty((N, N))
    worst_nonconst = 0.0
    for r in range(N):
        for c in range(N):
            p = ZY[r, c]
            P[r, c] = p.coefficient(const)
            for mono, v in p.items():
                if not mono.is_constant:
                    worst_nonconst = max(worst_nonconst, abs(v))
    diagnostics = {"margin": t_star, "nonconstant_coeff": worst_nonconst}
    if worst_nonconst > 1e-8:
        raise MarginalFeasibilityError(
            f"Z0T Y(x) is not constant to tolerance (max stray coefficient "
            f"{worst_nonconst:.3e})",
            diagnostics=diagnostics,
        )
    asym = float(np.max(np.abs(P - P.T)))
    diagnostics["P_asymmetry"] = asym
    if asym > 1e-8:
        raise MarginalFeasibilityError(
            f"extracted P asymmetric by {asym:.3e}", diagnostics=diagnostics
        )
    P = 0.5 * (P + P.T)
    lam_min = float(np.linalg.eigvalsh(P).min())
    diagnostics["lambda_min_P"] = lam_min
    if lam_min < prog.opts.mu - 1e-6:
        raise MarginalFeasibilityError(
            f"lambda_min(P) = {lam_min:.3e} below mu - 1e-6", diagnostics=diagnostics
        )
    Theta = prog.theta(sol)
    lam_theta = float(np.linalg.eigvalsh(Theta).min())
    diagnostics["lambda_min_Theta"] = lam_theta
    if lam_theta < -1e-8:
        raise MarginalFeasibilityError(
            f"Gram matrix not PSD to tolerance (lambda_min {lam_theta:.3e})",
            diagnostics=diagnostics,
        )
    return SosSolution(Y=Y, P=P, Theta=Theta, margin=t_star)


def _eps_identity(eps: Polynomial, N: int) -> MatrixPolynomial:
    zero = Polynomial.zero(eps.n)
    return MatrixPolynomial(
        [[eps if i == j else zero for j in range(N)] for i in range(N)]
    )


def build_Q_template(dm: DataMatrices, Y: MatrixPolynomial, eps: Polynomial) -> MatrixPolynomial:
    """Q(x) = -[J X1 Y + (J X1 Y)'] - eps I for a concrete Y."""
    rec = dm.record
    if Y.shape != (dm.T, dm.N):
        raise CompileError(f"Y must be {dm.T} x {dm.N}, got {Y.shape}")
    J = rec.Z.jacobian()
    R = (J @ rec.X1) @ Y
    return (R + R.T).scale(-1.0) - _eps_identity(eps, dm.N)


def gram_residual(
    Q: MatrixPolynomial, Theta: np.ndarray, gram_basis: Sequence[Monomial]
) -> float:
    """Max coefficient gap between y'Qy and its Gram reconstruction."""
    N = Q.rows
    M = len(gram_basis)
    if Theta.shape != (N * M, N * M):
        raise CompileError(
            f"Gram matrix is {Theta.shape}, basis implies {(N * M, N * M)}"
        )
    pairs = _gram_pairs(gram_basis)
    worst = 0.0
    for i in range(N):
        for k in range(i, N):
            support = set(pairs.keys()) | set(Q[i, k].terms.keys())
            for mu in support:
                lhs = sum(
                    Theta[i * M + a, k * M + b] for a, b in pairs.get(mu, [])
                )
                worst = max(worst, abs(lhs - Q[i, k].coefficient(mu)))
    return float(worst)


def reconstruct_residual(prog: SosProgram, Y: MatrixPolynomial, Theta: np.ndarray) -> float:
    """Round-trip check of the compiler: rebuild y'Qy both ways and compare."""
    Q = build_Q_template(prog.dm, Y, prog.epsilon)
    return gram_residual(Q, Theta, prog.gram_basis)


# ---------------------------------------------------------------------------
# Model-based program: same Gram machinery, P and Y(x) free, A and B known.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelBasedProgram:
    A: np.ndarray
    B: np.ndarray
    Z: MonomialVector
    opts: SosOptions
    epsilon: Polynomial
    basis_Y: tuple[Monomial, ...]
    gram_basis: tuple[Monomial, ...]
    p_index: dict
    y_index: dict
    t_margin: int
    p_block: int
    gram_block: int
    free_pairs: tuple[tuple[int, int], ...]
    labels: tuple[str, ...]
    problem: SdpProblem

    def margin(self, sol: SdpSolution) -> float:
        return _free_value(self.free_pairs, sol, self.t_margin)

    def is_feasible(self, sol: SdpSolution, tol: float = FEASIBILITY_MARGIN_TOL) -> bool:
        return sol.status == "optimal" and self.margin(sol) >= -tol


def compile_model_based(
    A: np.ndarray, B: np.ndarray, Z: MonomialVector, opts: SosOptions | None = None
) -> ModelBasedProgram:
    """Synthesis with known constant A, B: find P > 0 and Y(x) (m x N) with
    Q = -[J (A P + B Y) + (A P + B Y)' J'] - eps I an SOS matrix."""
    opts = opts or SosOptions()
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, N = Z.n, Z.N
    m = B.shape[1]
    if A.shape != (n, N) or B.shape[0] != n:
        raise CompileError(f"A must be {n}x{N} and B {n}x{m}-shaped")
    eps = opts.epsilon_for(n)

    J = Z.jacobian()
    WA = J @ A  # N x N matrix polynomial
    WB = J @ B  # N x m matrix polynomial
    d_Q = max(WA.degree, WB.degree + opts.dY, eps.degree)
    D = -(-d_Q // 2) + opts.gram_degree_pad
    gram_basis = tuple(monomial_basis(n, D))
    basis_Y = tuple(monomial_basis(n, opts.dY))
    M = len(gram_basis)

    builder = _Builder()
    p_index = {}
    for r in range(N):
        for c in range(r, N):
            p_index[(r, c)] = builder.add_free_scalar()
    y_index = {}
    for s in range(m):
        for k in range(N):
            for mu in basis_Y:
                y_index[(s, k, mu)] = builder.add_free_scalar()
    t_fv = builder.add_free_scalar()
    p_blk = builder.add_psd_block(N)
    gram_blk = builder.add_psd_block(N * M)
    cap_blk = builder.add_psd_block(1)

    # P-block linkage
    for r in range(N):
        for c in range(r, N):
            delta = 1.0 if r == c else 0.0
            con = builder.new_constraint(-opts.mu * delta, f"pblock[{r + 1},{c + 1}]")
            builder.add_entry(con, p_blk, r, c, 1.0)
            if delta:
                builder.add_free(con, t_fv, 1.0)
            builder.add_free(con, p_index[(r, c)], -1.0)

    # R_ik = sum_r WA[i,r] p_(r,k) + sum_s WB[i,s] Y_(s,k)
    acc: dict = {}
    for i in range(N):
        for k in range(N):
            per_ik = acc.setdefault((i, k), {})
            for r in range(N):
                fv = p_index[(min(r, k), max(r, k))]
                for mon, w in WA[i, r].items():
                    per = per_ik.setdefault(mon, {})
                    per[fv] = per.get(fv, 0.0) + w
            for s in range(m):
                for mon1, w in WB[i, s].items():
                    for mu2 in basis_Y:
                        fv = y_index[(s, k, mu2)]
                        per = per_ik.setdefault(mon1 * mu2, {})
                        per[fv] = per.get(fv, 0.0) + w
    shape = _GramShape(basis=gram_basis, pairs=_gram_pairs(gram_basis), block=gram_blk, N=N)
    _check_coverage(acc, shape.pairs, "the model-based Q template")
    pinned = _emit_gram(builder, shape, acc, eps, t_fv)

    con = builder.new_constraint(opts.margin_cap, "margin-cap")
    builder.add_free(con, t_fv, 1.0)
    builder.add_entry(con, cap_blk, 0, 0, 1.0)
    builder.objective_free(t_fv, -1.0)

    _warn_pinned(pinned)
    return ModelBasedProgram(
        A=A, B=B, Z=Z, opts=opts, epsilon=eps,
        basis_Y=basis_Y, gram_basis=gram_basis,
        p_index=p_index, y_index=y_index,
        t_margin=t_fv, p_block=p_blk, gram_block=gram_blk,
        free_pairs=tuple(builder.free_pairs),
        labels=tuple(builder.labels),
        problem=builder.build(),
    )


def extract_model_based(prog: ModelBasedProgram, sol: SdpSolution) -> SosSolution:
    if sol.status != "optimal":
        raise MarginalFeasibilityError(
            f"solver finished with status {sol.status!r}",
            diagnostics={"status": sol.status, "residuals": sol.residuals},
        )
    t_star = prog.margin(sol)
    if t_star < -FEASIBILITY_MARGIN_TOL:
        raise InfeasibleProgramError(
            f"program infeasible: certificate margin {t_star:.3e} < -1e-8",
            margin=t_star,
        )
    N = prog.Z.N
    n = prog.Z.n
    m = prog.B.shape[1]
    P = np.empty((N, N))
    for r in range(N):
        for c in range(r, N):
            P[r, c] = P[c, r] = _free_value(prog.free_pairs, sol, prog.p_index[(r, c)])
    lam_min = float(np.linalg.eigvalsh(P).min())
    if lam_min < prog.opts.mu - 1e-6:
        raise MarginalFeasibilityError(
            f"lambda_min(P) = {lam_min:.3e} below mu - 1e-6",
            diagnostics={"lambda_min_P": lam_min, "margin": t_star},
        )
    rows = []
    for s in range(m):
        row = []
        for k in range(N):
            terms = {}
            for mu in prog.basis_Y:
                v = _free_value(prog.free_pairs, sol, prog.y_index[(s, k, mu)])
                if v != 0.0:
                    terms[mu] = v
            row.append(Polynomial(n, terms))
        rows.append(row)
    Y = MatrixPolynomial(rows)
    G = sol.X[prog.gram_block]
    Theta = G + t_star * np.eye(G.shape[0])
    lam_theta = float(np.linalg.eigvalsh(Theta).min())
    if lam_theta < -1e-8:
        raise MarginalFeasibilityError(
            f"Gram matrix not PSD to tolerance (lambda_min {lam_theta:.3e})",
            diagnostics={"lambda_min_Theta": lam_theta, "margin": t_star},
        )
    return SosSolution(Y=Y, P=P, Theta=Theta, margin=t_star)


def build_Q_model_based(
    A: np.ndarray,
    B: np.ndarray,
    Z: MonomialVector,
    Y: MatrixPolynomial,
    P: np.ndarray,
    eps: Polynomial,
) -> MatrixPolynomial:
    """Q for the model-based conditions at concrete (P, Y)."""
    J = Z.jacobian()
    inner = MatrixPolynomial.from_numeric(A @ P, Z.n) + (
        MatrixPolynomial.from_numeric(B, Z.n) @ Y
    )
    R = J @ inner
    return (R + R.T).scale(-1.0) - _eps_identity(eps, Z.N)


# ---------------------------------------------------------------------------
# Scalar SOS decision (bypasses the data path; shares the Gram machinery).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarSosProgram:
    poly: Polynomial
    gram_basis: tuple[Monomial, ...]
    t_margin: int
    gram_block: int
    free_pairs: tuple[tuple[int, int], ...]
    problem: SdpProblem

    def margin(self, sol: SdpSolution) -> float:
        return _free_value(self.free_pairs, sol, self.t_margin)

    def theta(self, sol: SdpSolution) -> np.ndarray:
        t = self.margin(sol)
        G = sol.X[self.gram_block]
        return G + t * np.eye(G.shape[0])


def compile_scalar_sos(
    p: Polynomial, gram_degree_pad: int = 0, margin_cap: float = 1.0
) -> ScalarSosProgram:
    """Is p(x) a sum of squares?  Feasible iff the solved margin is >= -1e-8."""
    n = p.n
    D = -(-p.degree // 2) + gram_degree_pad
    basis = tuple(monomial_basis(n, D))
    builder = _Builder()
    t_fv = builder.add_free_scalar()
    gram_blk = builder.add_psd_block(len(basis))
    cap_blk = builder.add_psd_block(1)
    pairs = _gram_pairs(basis)
    for mu in sorted(pairs.keys(), key=grlex_key):
        con = builder.new_constraint(p.coefficient(mu), f"gram:{mu}")
        for a, b in pairs[mu]:
            builder.add_entry(con, gram_blk, a, b, 1.0)
        diag_hits = sum(1 for a, b in pairs[mu] if a == b)
        if diag_hits:
            builder.add_free(con, t_fv, float(diag_hits))
    stray = [mu for mu in p.terms if mu not in pairs]
    if stray:
        raise CompileError(
            f"polynomial has monomials {[str(s) for s in stray]} outside the "
            "Gram basis products; increase gram_degree_pad"
        )
    con = builder.new_constraint(margin_cap, "margin-cap")
    builder.add_free(con, t_fv, 1.0)
    builder.add_entry(con, cap_blk, 0, 0, 1.0)
    builder.objective_free(t_fv, -1.0)
    return ScalarSosProgram(
        poly=p,
        gram_basis=basis,
        t_margin=t_fv,
        gram_block=gram_blk,
        free_pairs=tuple(builder.free_pairs),
        problem=builder.build(),
    )


def is_sos(p: Polynomial, solver_opts: SolverOptions | None = None) -> tuple[bool, float]:
    """Decide SOS membership; returns (decision, certificate margin)."""
    prog = compile_scalar_sos(p)
    sol = solve(prog.problem, solver_opts)
    t = prog.margin(sol)
    return sol.status == "optimal" and t >= -FEASIBILITY_MARGIN_TOL, t


def load_options(path, n: int) -> SosOptions:
    """Read synthesis options from a key-value file (see docs/formats.md)."""
    from .plant import read_kv_file

    kv = read_kv_file(path)
    eps = None
    if "epsilon" in kv:
        eps = parse_polynomial(kv["epsilon"], n)
    return SosOptions(
        dY=int(kv.get("dY", "1")),
        mu=float(kv.get("mu", "1e-3")),
        epsilon=eps,
        epsilon0=float(kv.get("epsilon0", "1e-5")),
        gram_degree_pad=int(kv.get("gram_degree_pad", "0")),
        margin_cap=float(kv.get("margin_cap", "1.0")),
    )
