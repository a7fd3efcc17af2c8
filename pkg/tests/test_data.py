"""Data matrices, rank gate, particular solution and the representation check."""

import numpy as np
import pytest

import refdata
from sosctl.data import (
    DataRecord,
    build_data_matrices,
    g_particular,
    lemma1_check,
    read_data_csv,
    write_data_csv,
)
from sosctl.errors import InsufficientSamplesError, RankDeficientDataError
from sosctl.plant import run_experiment
from sosctl.poly import MatrixPolynomial, Monomial, MonomialVector


@pytest.fixture(scope="module")
def ref_record():
    return run_experiment(refdata.ref_system(), refdata.ref_experiment())


@pytest.fixture(scope="module")
def ref_dm(ref_record):
    return build_data_matrices(ref_record)


def linear_Z(n):
    return MonomialVector(n, [Monomial(tuple(1 if j == i else 0 for j in range(n))) for i in range(n)])


def test_reference_evaluated_monomials_match_published(ref_dm):
    assert np.max(np.abs(ref_dm.Z0T - refdata.REF_Z0T)) < 1e-3


def test_reference_rank_is_full(ref_dm):
    assert ref_dm.rank_report.rank == 2
    assert ref_dm.rank_report.singular_values[-1] > 0.01
    assert ref_dm.rank_report.singular_values[-1] > ref_dm.rank_report.tolerance


def test_duplicate_columns_fail_rank_gate():
    Z = refdata.ref_monomials()
    rec = DataRecord(
        U=np.array([[0.0, 0.0]]),
        X0=np.array([[0.5, 0.5], [1.0, 1.0]]),
        X1=np.zeros((2, 2)),
        Z=Z,
    )
    with pytest.raises(RankDeficientDataError):
        build_data_matrices(rec)


def test_too_few_samples_rejected():
    Z = refdata.ref_monomials()
    rec = DataRecord(U=np.zeros((1, 1)), X0=np.array([[0.5], [1.0]]), X1=np.zeros((2, 1)), Z=Z)
    with pytest.raises(InsufficientSamplesError):
        build_data_matrices(rec)


def test_particular_solution_identity_case():
    rec = DataRecord(U=np.zeros((1, 2)), X0=np.eye(2), X1=np.zeros((2, 2)), Z=linear_Z(2))
    dm = build_data_matrices(rec)
    assert np.allclose(dm.Z0T, np.eye(2))
    assert np.allclose(g_particular(dm), np.eye(2))


def test_particular_solution_reference(ref_dm):
    G = g_particular(ref_dm)
    assert np.max(np.abs(ref_dm.Z0T @ G - np.eye(2))) <= 1e-10


def test_particular_solution_random_wide_matrices():
    rng = np.random.default_rng(0)
    for _ in range(20):
        X0 = rng.normal(size=(3, 5))
        rec = DataRecord(U=np.zeros((1, 5)), X0=X0, X1=np.zeros((3, 5)), Z=linear_Z(3))
        dm = build_data_matrices(rec)
        G = g_particular(dm)
        assert np.max(np.abs(dm.Z0T @ G - np.eye(3))) <= 1e-10


def test_rank_monotone_in_samples():
    rng = np.random.default_rng(4)
    Z = linear_Z(3)
    X0 = rng.normal(size=(3, 8))
    prev = 0
    for T in range(3, 9):
        rec = DataRecord(U=np.zeros((1, T)), X0=X0[:, :T], X1=np.zeros((3, T)), Z=Z)
        rank = build_data_matrices(rec).rank_report.rank
        assert rank >= prev
        prev = rank


def test_lemma1_identity_with_particular_solution(ref_dm):
    sys = refdata.ref_system()
    G = g_particular(ref_dm)
    rng = np.random.default_rng(11)
    xs = rng.uniform(-1, 1, size=(20, 2))
    assert lemma1_check(sys, ref_dm, G, xs) <= 1e-6


def test_lemma1_zero_system_zero_residual():
    from sosctl.plant import PolySystem

    Z = refdata.ref_monomials()
    rng = np.random.default_rng(2)
    X0 = rng.normal(size=(2, 4))
    rec = DataRecord(U=np.zeros((1, 4)), X0=X0, X1=np.zeros((2, 4)), Z=Z)
    dm = build_data_matrices(rec)
    sys = PolySystem(A=np.zeros((2, 2)), B=np.zeros((2, 1)), Z=Z)
    xs = rng.uniform(-1, 1, size=(5, 2))
    assert lemma1_check(sys, dm, g_particular(dm), xs) == 0.0


def test_lemma1_rejects_invalid_annihilator(ref_dm):
    sys = refdata.ref_system()
    bad = np.zeros((ref_dm.T, ref_dm.N))
    with pytest.raises(ValueError):
        lemma1_check(sys, ref_dm, bad, [[0.1, 0.2]])


def test_data_csv_round_trip(tmp_path, ref_record):
    path = tmp_path / "data.csv"
    write_data_csv(ref_record, path)
    back = read_data_csv(path)
    assert np.array_equal(back.U, ref_record.U)
    assert np.array_equal(back.X0, ref_record.X0)
    assert np.array_equal(back.X1, ref_record.X1)
    assert back.Z == ref_record.Z
    assert back.meta["times"] == ref_record.meta["times"]


def test_synthesis_modules_never_import_the_plant():
    # The model-blindness boundary, checked on the import graph: the compiler
    # and solver must consume DataMatrices only.
    import pathlib

    src = pathlib.Path(__file__).resolve().parents[1] / "src" / "sosctl"
    for name in ("soscompile.py", "sdpsolve.py", "sdpa.py"):
        text = (src / name).read_text()
        assert "import plant" not in text and "from .plant" not in text, name
