"""Experiment data matrices and the verifiable data-richness checks.

This module is the boundary between the experiment and the synthesizer: the
synthesis path (compilation, solving, controller extraction) consumes only
:class:`DataMatrices`.  The true system matrices appear here solely inside
:func:`lemma1_check`, a test-only diagnostic, so the model-blindness of the
design pipeline can be audited from the import graph.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, InsufficientSamplesError, RankDeficientDataError
from .poly import MatrixPolynomial, MonomialVector, parse_polynomial

__all__ = [
    "DataRecord",
    "RankReport",
    "DataMatrices",
    "build_data_matrices",
    "g_particular",
    "lemma1_check",
    "write_data_csv",
    "read_data_csv",
]


@dataclass(frozen=True)
class DataRecord:
    """Sampled input row, state samples and state derivatives of one experiment.

    ``U`` is m x T, ``X0`` and ``X1`` are n x T; column k belongs to sample
    instant k.  ``meta`` echoes the experiment configuration (sample times,
    seed, noise level) for reproducibility.
    """

    U: np.ndarray
    X0: np.ndarray
    X1: np.ndarray
    Z: MonomialVector
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        X0 = np.atleast_2d(np.asarray(self.X0, dtype=float))
        X1 = np.atleast_2d(np.asarray(self.X1, dtype=float))
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "X0", X0)
        object.__setattr__(self, "X1", X1)
        T = X0.shape[1]
        if T < 1:
            raise DimensionError("need at least one sample column")
        if U.shape[1] != T or X1.shape[1] != T:
            raise DimensionError("U, X0, X1 must have the same number of columns")
        if X1.shape[0] != X0.shape[0]:
            raise DimensionError("X0 and X1 must have the same number of rows")
        if self.Z.n != X0.shape[0]:
            raise DimensionError(
                f"monomial vector has {self.Z.n} variables, states have {X0.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def T(self) -> int:
        return self.X0.shape[1]


@dataclass(frozen=True)
class RankReport:
    rank: int
    singular_values: np.ndarray
    tolerance: float


@dataclass(frozen=True)
class DataMatrices:
    """A :class:`DataRecord` together with the evaluated monomial matrix."""

    record: DataRecord
    Z0T: np.ndarray
    rank_report: RankReport

    @property
    def N(self) -> int:
        return self.Z0T.shape[0]

    @property
    def T(self) -> int:
        return self.Z0T.shape[1]


def build_data_matrices(rec: DataRecord, rank_tol_factor: float = 1e6) -> DataMatrices:
    """Evaluate Z at every sampled state and gate on full row rank.

    The numerical rank uses the SVD with tolerance
    ``max(N, T) * sigma_max * machine_eps * rank_tol_factor``.  Raises
    :class:`InsufficientSamplesError` when T < N (full row rank is then
    impossible) and :class:`RankDeficientDataError` when the computed rank
    falls short of N; the report carries the singular values so callers can
    judge the margin themselves.
    """
    N, T = rec.Z.N, rec.T
    if T < N:
        raise InsufficientSamplesError(
            f"got T={T} samples for N={N} monomials; full row rank needs T >= N"
        )
    Z0T = rec.Z.eval_many(rec.X0.T).T
    svals = np.linalg.svd(Z0T, compute_uv=False)
    tol = max(N, T) * svals[0] * np.finfo(float).eps * rank_tol_factor if svals[0] > 0 else 0.0
    rank = int(np.sum(svals > tol))
    report = RankReport(rank=rank, singular_values=svals, tolerance=tol)
    if rank < N:
        raise RankDeficientDataError(
            f"evaluated monomial matrix has numerical rank {rank} < N={N} "
            f"(singular values {np.array2string(svals, precision=3)}); "
            "the experiment is not informative enough"
        )
    return DataMatrices(record=rec, Z0T=Z0T, rank_report=report)


def g_particular(dm: DataMatrices) -> np.ndarray:
    """Moore-Penrose particular solution G = Z0T' (Z0T Z0T')^-1.

    Satisfies Z0T @ G = I_N; returned for diagnostics only (the synthesizer
    parameterizes Y(x) directly and never materializes the kernel term).
    """
    Z = dm.Z0T
    gram = Z @ Z.T
    try:
        G = np.linalg.solve(gram, Z).T
    except np.linalg.LinAlgError as exc:
        raise RankDeficientDataError("monomial data matrix is rank deficient") from exc
    residual = np.max(np.abs(Z @ G - np.eye(dm.N)))
    if residual > 1e-10:
        raise RankDeficientDataError(
            f"particular solution residual {residual:.2e} exceeds 1e-10; "
            "data matrix too ill-conditioned"
        )
    return G


def lemma1_check(sys, dm: DataMatrices, G, xs: Sequence[Sequence[float]]) -> float:
    """Max residual of the data-based closed-loop representation over points.

    For any T x N matrix polynomial G(x) with Z0T G(x) = I_N, the true
    closed-loop vector field (A + B U G(x)) Z(x) must equal the purely
    data-based X1 G(x) Z(x).  Test-only: this is the one synthesis-adjacent
    place allowed to look at the true A and B.
    """
    n = dm.record.n
    if not isinstance(G, MatrixPolynomial):
        G = MatrixPolynomial.from_numeric(np.asarray(G, dtype=float), n)
    if G.shape != (dm.T, dm.N):
        raise DimensionError(f"G must be {dm.T} x {dm.N}, got {G.shape}")
    identity_gap = (dm.Z0T @ G).max_coeff_diff(
        MatrixPolynomial.from_numeric(np.eye(dm.N), n)
    )
    if identity_gap > 1e-8:
        raise ValueError(
            f"Z0T G(x) = I_N violated (max coefficient gap {identity_gap:.2e})"
        )
    A, B, U, X1, Z = sys.A, sys.B, dm.record.U, dm.record.X1, dm.record.Z
    worst = 0.0
    for x in xs:
        Gx = G.eval(x)
        Zx = Z.eval(x)
        lhs = (A + B @ U @ Gx) @ Zx
        rhs = X1 @ Gx @ Zx
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


# ---------------------------------------------------------------------------
# CSV import/export.  One row per sample:  t, x1..xn, u1..um, dx1..dxn
# with `# key = value` metadata lines before the header.  The monomials line
# lets real experimental data enter the pipeline without the simulator.
# ---------------------------------------------------------------------------


def write_data_csv(rec: DataRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_data_csv_text(rec))


def _data_csv_text(rec: DataRecord) -> str:
    buf = io.StringIO()
    buf.write("# sosctl-data v1\n")
    buf.write(f"# n = {rec.n}\n")
    buf.write(f"# m = {rec.m}\n")
    buf.write(f"# monomials = {rec.Z}\n")
    for key in sorted(rec.meta):
        if key == "times":
            continue
        buf.write(f"# {key} = {rec.meta[key]}\n")
    times = rec.meta.get("times")
    if times is None:
        times = list(range(rec.T))
    header = (
        ["t"]
        + [f"x{i+1}" for i in range(rec.n)]
        + [f"u{i+1}" for i in range(rec.m)]
        + [f"dx{i+1}" for i in range(rec.n)]
    )
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for k in range(rec.T):
        row = [repr(float(times[k]))]
        row += [repr(float(v)) for v in rec.X0[:, k]]
        row += [repr(float(v)) for v in rec.U[:, k]]
        row += [repr(float(v)) for v in rec.X1[:, k]]
        writer.writerow(row)
    return buf.getvalue()


def read_data_csv(path) -> DataRecord:
    meta: dict = {}
    rows = []
    header = None
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("# ").strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = cells
            else:
                rows.append([float(c) for c in cells])
    if header is None or not rows:
        raise ValueError(f"no sample rows found in {path}")
    n = int(meta.pop("n"))
    m = int(meta.pop("m"))
    mono_text = meta.pop("monomials")
    monos = [parse_polynomial(tok, n) for tok in mono_text.split(",")]
    entries = []
    for p in monos:
        terms = p.terms
        if len(terms) != 1 or abs(next(iter(terms.values())) - 1.0) > 0:
            raise ValueError(f"monomials line must list bare monomials, got {mono_text!r}")
        entries.append(next(iter(terms)))
    Z = MonomialVector(n, entries)
    arr = np.array(rows)
    if arr.shape[1] != 1 + 2 * n + m:
        raise DimensionError(
            f"expected {1 + 2 * n + m} columns for n={n}, m={m}, got {arr.shape[1]}"
        )
    times = arr[:, 0]
    X0 = arr[:, 1 : 1 + n].T
    U = arr[:, 1 + n : 1 + n + m].T
    X1 = arr[:, 1 + n + m :].T
    meta["times"] = times.tolist()
    return DataRecord(U=U, X0=X0, X1=X1, Z=Z, meta=meta)
