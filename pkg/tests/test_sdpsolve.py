"""Interior-point solver: analytic instances, random suite, determinism."""

import numpy as np
import pytest

from sosctl.sdpsolve import SdpProblem, SolverOptions, SdpSolution, solve, validate_solution


def trace_example():
    # minimize trace X s.t. X_11 = 2 on a single 1x1 block
    return SdpProblem(
        block_sizes=(1,),
        b=np.array([2.0]),
        constraints=({(0, 0, 0): 1.0},),
        objective={(0, 0, 0): 1.0},
    )


def margin_example():
    # maximize t s.t. diag(3,1) - t I >= 0, with t = tp - tm split into
    # 1x1 blocks; optimum is the smallest eigenvalue, t* = 1.
    # Blocks: 0 -> slack 2x2 (diag(3,1) - t I), 1 -> tp, 2 -> tm.
    cons = (
        {(0, 0, 0): 1.0, (1, 0, 0): 1.0, (2, 0, 0): -1.0},
        {(0, 1, 1): 1.0, (1, 0, 0): 1.0, (2, 0, 0): -1.0},
        {(0, 0, 1): 0.5},
    )
    return SdpProblem(
        block_sizes=(2, 1, 1),
        b=np.array([3.0, 1.0, 0.0]),
        constraints=cons,
        objective={(1, 0, 0): -1.0, (2, 0, 0): 1.0},
    )


def eigenvalue_example():
    # minimize <C, X> s.t. trace X = 1: optimum is lambda_min(C) = 1 with
    # X the outer product of the eigenvector (1,-1)/sqrt(2).
    return SdpProblem(
        block_sizes=(2,),
        b=np.array([1.0]),
        constraints=({(0, 0, 0): 1.0, (0, 1, 1): 1.0},),
        objective={(0, 0, 0): 2.0, (0, 1, 1): 2.0, (0, 0, 1): 1.0},
    )


def test_trace_example():
    sol = solve(trace_example())
    assert sol.status == "optimal"
    assert sol.primal_objective == pytest.approx(2.0, abs=1e-7)
    assert sol.X[0][0, 0] == pytest.approx(2.0, abs=1e-7)


def test_margin_example():
    sol = solve(margin_example())
    assert sol.status == "optimal"
    t = sol.X[1][0, 0] - sol.X[2][0, 0]
    assert t == pytest.approx(1.0, abs=1e-6)


def test_eigenvalue_example():
    prob = eigenvalue_example()
    sol = solve(prob)
    assert sol.status == "optimal"
    C = np.array([[2.0, 1.0], [1.0, 2.0]])
    lam, vecs = np.linalg.eigh(C)
    assert sol.primal_objective == pytest.approx(lam[0], abs=1e-7)
    v = vecs[:, 0]
    assert np.max(np.abs(sol.X[0] - np.outer(v, v))) < 1e-5


def random_feasible_problem(rng, max_block=12, max_cons=40):
    nblocks = int(rng.integers(1, 4))
    sizes = tuple(int(rng.integers(1, max_block // nblocks + 2)) for _ in range(nblocks))
    dof = sum(s * (s + 1) // 2 for s in sizes)
    m = int(rng.integers(1, min(max_cons, dof) + 1))

    def rand_psd(s):
        Q = rng.normal(size=(s, s))
        lam = rng.uniform(0.5, 2.0, size=s)
        Qo, _ = np.linalg.qr(Q)
        return (Qo * lam) @ Qo.T

    X0 = [rand_psd(s) for s in sizes]
    S0 = [rand_psd(s) for s in sizes]
    y0 = rng.normal(size=m)
    constraints = []
    for _ in range(m):
        con = {}
        for blk, s in enumerate(sizes):
            if rng.random() < 0.7:
                Amat = rng.normal(size=(s, s))
                Amat = 0.5 * (Amat + Amat.T)
                for i in range(s):
                    for j in range(i, s):
                        if Amat[i, j] != 0.0:
                            con[(blk, i, j)] = Amat[i, j]
        if not con:
            con[(0, 0, 0)] = 1.0
        constraints.append(con)
    # b and C constructed so (X0, y0, S0) is a strictly feasible primal-dual pair
    prob_no_rhs = SdpProblem(
        block_sizes=sizes, b=np.zeros(m), constraints=tuple(constraints)
    )
    Amats = [prob_no_rhs.dense_blocks(con) for con in constraints]
    b = np.array([sum(np.tensordot(Ab, Xb) for Ab, Xb in zip(Ai, X0)) for Ai in Amats])
    Cmats = [sum(y0[i] * Amats[i][blk] for i in range(m)) + S0[blk] for blk in range(nblocks)]
    objective = {}
    for blk, Cm in enumerate(Cmats):
        for i in range(sizes[blk]):
            for j in range(i, sizes[blk]):
                if Cm[i, j] != 0.0:
                    objective[(blk, i, j)] = Cm[i, j]
    return SdpProblem(block_sizes=sizes, b=b, constraints=tuple(constraints), objective=objective)


def test_random_feasible_suite_reaches_optimal():
    # certified at the suite's stated gap tolerance of 1e-7; most instances
    # converge well past it (the solver default is 1e-8)
    rng = np.random.default_rng(2024)
    opts = SolverOptions(tol_gap=1e-7)
    for trial in range(50):
        prob = random_feasible_problem(rng)
        sol = solve(prob, opts)
        assert sol.status == "optimal", f"trial {trial}: {sol.status} {sol.residuals}"
        report = validate_solution(prob, sol)
        gap = abs(report["duality_gap"]) / (
            1 + abs(report["primal_objective"]) + abs(report["dual_objective"])
        )
        assert gap <= 1e-7, f"trial {trial}: gap {gap}"
        assert report["min_eig_X"] >= -1e-9
        assert sol.primal_objective >= sol.dual_objective - 1e-6 * (1 + abs(sol.primal_objective))


def test_determinism():
    rng = np.random.default_rng(5)
    prob = random_feasible_problem(rng)
    s1 = solve(prob)
    s2 = solve(prob)
    assert s1.iterations == s2.iterations
    assert np.array_equal(s1.y, s2.y)
    for a, b in zip(s1.X, s2.X):
        assert np.array_equal(a, b)


def test_validate_solution_exact_and_perturbed():
    prob = trace_example()
    exact = SdpSolution(
        status="optimal",
        X=[np.array([[2.0]])],
        y=np.array([1.0]),
        S=[np.array([[0.0]])],
        primal_objective=2.0,
        dual_objective=2.0,
        residuals={},
        iterations=0,
    )
    rep = validate_solution(prob, exact)
    assert rep["primal_residual_inf"] <= 1e-12
    assert rep["dual_residual_inf"] <= 1e-12
    assert abs(rep["duality_gap"]) <= 1e-12

    perturbed = SdpSolution(
        status="optimal",
        X=[np.array([[2.0 + 1e-3]])],
        y=np.array([1.0]),
        S=[np.array([[0.0]])],
        primal_objective=0.0,
        dual_objective=0.0,
        residuals={},
        iterations=0,
    )
    rep2 = validate_solution(prob, perturbed)
    assert rep2["primal_residual_inf"] >= 1e-3 - 1e-12


def test_solver_output_validates_on_random_instances():
    rng = np.random.default_rng(99)
    for _ in range(5):
        prob = random_feasible_problem(rng)
        sol = solve(prob)
        rep = validate_solution(prob, sol)
        assert rep["primal_residual_inf"] <= 1e-6 * (1 + np.max(np.abs(prob.b)))
        assert rep["min_eig_X"] >= -1e-9
        assert rep["min_eig_S"] >= -1e-9


def test_rejects_empty_problem():
    with pytest.raises(ValueError):
        solve(SdpProblem(block_sizes=(1,), b=np.array([]), constraints=()))
