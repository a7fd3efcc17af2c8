"""Sparse multivariate polynomials, matrix polynomials and monomial vectors.

Values are immutable after construction and all operations are pure, so they
can be shared freely between threads.  Coefficients are double-precision
floats; the canonical sparse form never stores a coefficient that is exactly
zero.  Monomials are identified by their exponent vectors and ordered graded
lexicographically: lower total degree first, and within one degree the
monomial with the higher power of an earlier variable comes first, so for two
variables the order starts 1, x1, x2, x1^2, x1*x2, x2^2, ...
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DimensionError, PolynomialParseError

__all__ = [
    "Monomial",
    "Polynomial",
    "MatrixPolynomial",
    "MonomialVector",
    "VanishingConditionWarning",
    "monomial_basis",
    "grlex_key",
    "parse_polynomial",
    "format_polynomial",
    "PolyVectorField",
]


@dataclass(frozen=True)
class Monomial:
    """A power product ``x1^q1 * ... * xn^qn`` identified by its exponents."""

    exponents: tuple[int, ...]

    def __post_init__(self):
        if any(e < 0 or int(e) != e for e in self.exponents):
            raise ValueError(f"exponents must be naturals, got {self.exponents}")
        object.__setattr__(self, "exponents", tuple(int(e) for e in self.exponents))

    @property
    def n(self) -> int:
        return len(self.exponents)

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    @property
    def is_constant(self) -> bool:
        return self.degree == 0

    def __mul__(self, other: "Monomial") -> "Monomial":
        if len(self.exponents) != len(other.exponents):
            raise DimensionError("monomial variable counts differ")
        return Monomial(tuple(a + b for a, b in zip(self.exponents, other.exponents)))

    def eval(self, x: Sequence[float]) -> float:
        if len(x) != len(self.exponents):
            raise DimensionError(f"point has {len(x)} coordinates, monomial has {len(self.exponents)}")
        out = 1.0
        for xi, e in zip(x, self.exponents):
            if e:
                out *= float(xi) ** e
        return out

    def derivative(self, var: int) -> tuple[float, "Monomial"]:
        """Power rule: returns (k, m) with d/dx_var = k * m."""
        e = self.exponents[var]
        if e == 0:
            return 0.0, Monomial((0,) * len(self.exponents))
        exps = list(self.exponents)
        exps[var] -= 1
        return float(e), Monomial(tuple(exps))

    def __str__(self) -> str:
        parts = [
            f"x{i + 1}" if e == 1 else f"x{i + 1}^{e}"
            for i, e in enumerate(self.exponents)
            if e > 0
        ]
        return "*".join(parts) if parts else "1"


def grlex_key(m: Monomial) -> tuple:
    """Sort key for the graded lexicographic order used everywhere."""
    return (m.degree, tuple(-e for e in m.exponents))


def monomial_basis(n: int, d: int) -> list[Monomial]:
    """All monomials in ``n`` variables of total degree <= ``d``, graded-lex ordered.

    The list has C(n + d, d) entries; the first is always the constant 1.
    """
    if n < 1:
        raise ValueError("need at least one variable")
    if d < 0:
        raise ValueError("degree bound must be nonnegative")
    out: list[tuple[int, ...]] = []

    def rec(prefix: tuple[int, ...], remaining: int, slots: int):
        if slots == 0:
            out.append(prefix)
            return
        for e in range(remaining + 1):
            rec(prefix + (e,), remaining - e, slots - 1)

    rec((), d, n)
    monos = [Monomial(t) for t in out]
    monos.sort(key=grlex_key)
    return monos


class Polynomial:
    """Sparse multivariate polynomial: a finite map monomial -> coefficient."""

    __slots__ = ("n", "_terms")

    def __init__(self, n: int, terms: Mapping[Monomial, float] | None = None):
        if n < 1:
            raise ValueError("variable count must be >= 1")
        self.n = int(n)
        clean: dict[Monomial, float] = {}
        if terms:
            for m, c in terms.items():
                if m.n != n:
                    raise DimensionError(f"monomial in {m.n} variables in a {n}-variable polynomial")
                c = float(c)
                if c != 0.0:
                    clean[m] = clean.get(m, 0.0) + c
                    if clean[m] == 0.0:
                        del clean[m]
        self._terms = clean

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, n: int) -> "Polynomial":
        return cls(n)

    @classmethod
    def constant(cls, n: int, c: float) -> "Polynomial":
        return cls(n, {Monomial((0,) * n): float(c)})

    @classmethod
    def variable(cls, n: int, index: int) -> "Polynomial":
        """The polynomial x_{index+1} (0-based index)."""
        if not 0 <= index < n:
            raise DimensionError(f"variable index {index} out of range for n={n}")
        exps = [0] * n
        exps[index] = 1
        return cls(n, {Monomial(tuple(exps)): 1.0})

    @classmethod
    def from_monomial(cls, m: Monomial, coeff: float = 1.0) -> "Polynomial":
        return cls(m.n, {m: coeff})

    # -- inspection --------------------------------------------------------

    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def items(self) -> Iterator[tuple[Monomial, float]]:
        return iter(self._terms.items())

    def coefficient(self, m: Monomial) -> float:
        return self._terms.get(m, 0.0)

    @property
    def degree(self) -> int:
        """Max total degree over stored terms; the zero polynomial has degree 0."""
        return max((m.degree for m in self._terms), default=0)

    @property
    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self) -> int:
        return len(self._terms)

    # -- arithmetic --------------------------------------------------------

    def _check(self, other: "Polynomial"):
        if self.n != other.n:
            raise DimensionError(f"variable counts differ: {self.n} vs {other.n}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n, other)
        self._check(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        self._check(other)
        out: dict[Monomial, float] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = ma * mb
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial(self.n, out)

    __rmul__ = __mul__

    def scale(self, c: float) -> "Polynomial":
        return Polynomial(self.n, {m: c * v for m, v in self._terms.items()})

    def derivative(self, var: int) -> "Polynomial":
        out: dict[Monomial, float] = {}
        for m, c in self._terms.items():
            k, dm = m.derivative(var)
            if k:
                out[dm] = out.get(dm, 0.0) + k * c
        return Polynomial(self.n, out)

    # -- evaluation --------------------------------------------------------

    def eval(self, x: Sequence[float]) -> float:
        if len(x) != self.n:
            raise DimensionError(f"point has {len(x)} coordinates, polynomial has {self.n} variables")
        total = 0.0
        for m, c in self._terms.items():
            total += c * m.eval(x)
        return total

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape (k, n)); returns shape (k,)."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.n:
            raise DimensionError(f"expected points of shape (k, {self.n})")
        if not self._terms:
            return np.zeros(points.shape[0])
        exps = np.array([m.exponents for m in self._terms], dtype=int)
        coeffs = np.array(list(self._terms.values()))
        powers = points[:, None, :] ** exps[None, :, :]
        return powers.prod(axis=2) @ coeffs

    # -- comparison --------------------------------------------------------

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.n == other.n and self._terms == other._terms

    def __hash__(self):
        return hash((self.n, frozenset(self._terms.items())))

    def max_coeff_diff(self, other: "Polynomial") -> float:
        """Largest absolute coefficient difference against ``other``."""
        self._check(other)
        monos = set(self._terms) | set(other._terms)
        return max((abs(self.coefficient(m) - other.coefficient(m)) for m in monos), default=0.0)

    def isclose(self, other: "Polynomial", tol: float = 1e-9) -> bool:
        return self.max_coeff_diff(other) <= tol

    def __repr__(self):
        return f"Polynomial({self.n}, {format_polynomial(self)!r})"

    def __str__(self):
        return format_polynomial(self)


class MatrixPolynomial:
    """Rectangular grid of polynomials sharing one variable count."""

    __slots__ = ("rows", "cols", "n", "_entries")

    # keep numpy from intercepting ndarray @ MatrixPolynomial
    __array_ufunc__ = None

    def __init__(self, entries: Sequence[Sequence[Polynomial]]):
        if not entries or not entries[0]:
            raise ValueError("matrix polynomial must be non-empty")
        self.rows = len(entries)
        self.cols = len(entries[0])
        n = entries[0][0].n
        for row in entries:
            if len(row) != self.cols:
                raise DimensionError("ragged rows in matrix polynomial")
            for p in row:
                if p.n != n:
                    raise DimensionError("entries disagree on variable count")
        self.n = n
        self._entries = tuple(tuple(row) for row in entries)

    # -- constructors ------------------------------------------------------

    @classmethod
    def zeros(cls, rows: int, cols: int, n: int) -> "MatrixPolynomial":
        z = Polynomial.zero(n)
        return cls([[z] * cols for _ in range(rows)])

    @classmethod
    def from_numeric(cls, arr: np.ndarray, n: int) -> "MatrixPolynomial":
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        return cls([[Polynomial.constant(n, v) for v in row] for row in arr])

    # -- inspection --------------------------------------------------------

    def __getitem__(self, idx: tuple[int, int]) -> Polynomial:
        i, j = idx
        return self._entries[i][j]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def degree(self) -> int:
        return max(p.degree for row in self._entries for p in row)

    def entries(self) -> tuple[tuple[Polynomial, ...], ...]:
        return self._entries

    # -- algebra -----------------------------------------------------------

    def _coerce(self, other) -> "MatrixPolynomial":
        if isinstance(other, MatrixPolynomial):
            return other
        return MatrixPolynomial.from_numeric(np.asarray(other, dtype=float), self.n)

    def __add__(self, other):
        other = self._coerce(other)
        if other.shape != self.shape:
            raise DimensionError(f"shape mismatch: {self.shape} vs {other.shape}")
        return MatrixPolynomial(
            [[self[i, j] + other[i, j] for j in range(self.cols)] for i in range(self.rows)]
        )

    def __sub__(self, other):
        return self + self._coerce(other).scale(-1.0)

    def scale(self, c: float) -> "MatrixPolynomial":
        return MatrixPolynomial([[p.scale(c) for p in row] for row in self._entries])

    def __neg__(self):
        return self.scale(-1.0)

    def transpose(self) -> "MatrixPolynomial":
        return MatrixPolynomial(
            [[self._entries[i][j] for i in range(self.rows)] for j in range(self.cols)]
        )

    @property
    def T(self) -> "MatrixPolynomial":
        return self.transpose()

    def __matmul__(self, other):
        other = self._coerce(other)
        if self.cols != other.rows:
            raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = Polynomial.zero(self.n)
                for k in range(self.cols):
                    acc = acc + self[i, k] * other[k, j]
                row.append(acc)
            out.append(row)
        return MatrixPolynomial(out)

    def __rmatmul__(self, other):
        return self._coerce(other) @ self

    # -- evaluation --------------------------------------------------------

    def eval(self, x: Sequence[float]) -> np.ndarray:
        out = np.empty((self.rows, self.cols))
        for i in range(self.rows):
            for j in range(self.cols):
                out[i, j] = self._entries[i][j].eval(x)
        return out

    def max_coeff_diff(self, other: "MatrixPolynomial") -> float:
        other = self._coerce(other)
        if other.shape != self.shape:
            raise DimensionError(f"shape mismatch: {self.shape} vs {other.shape}")
        return max(
            self[i, j].max_coeff_diff(other[i, j])
            for i in range(self.rows)
            for j in range(self.cols)
        )

    def __repr__(self):
        body = "; ".join(
            ", ".join(format_polynomial(p) for p in row) for row in self._entries
        )
        return f"MatrixPolynomial[{self.rows}x{self.cols}]({body})"


class VanishingConditionWarning(UserWarning):
    """The monomial vector may vanish away from the origin."""


class MonomialVector:
    """Ordered list of distinct non-constant monomials Z(x) in n variables.

    The sufficient condition for Z(x) = 0 to imply x = 0 is that every
    variable appears as a pure power among the entries; a vector that lacks
    this raises :class:`VanishingConditionWarning` (a warning, not an error,
    because the condition is only sufficient).
    """

    __slots__ = ("n", "monomials")

    def __init__(self, n: int, monomials: Sequence[Monomial]):
        if n < 1:
            raise ValueError("state dimension must be >= 1")
        if len(monomials) < 1:
            raise ValueError("monomial vector must have at least one entry")
        for m in monomials:
            if m.n != n:
                raise DimensionError(f"monomial {m} has {m.n} variables, expected {n}")
            if m.is_constant:
                raise ValueError("constant monomial not allowed in a monomial vector")
        if len(set(monomials)) != len(monomials):
            raise ValueError("monomial vector entries must be pairwise distinct")
        self.n = n
        self.monomials = tuple(monomials)
        missing = self._variables_without_pure_power()
        if missing:
            names = ", ".join(f"x{i + 1}" for i in missing)
            warnings.warn(
                f"no pure-power entry for variable(s) {names}: the vector may "
                "vanish at points other than the origin",
                VanishingConditionWarning,
                stacklevel=2,
            )

    def _variables_without_pure_power(self) -> list[int]:
        covered = set()
        for m in self.monomials:
            nz = [i for i, e in enumerate(m.exponents) if e > 0]
            if len(nz) == 1:
                covered.add(nz[0])
        return [i for i in range(self.n) if i not in covered]

    @property
    def N(self) -> int:
        return len(self.monomials)

    @property
    def degree(self) -> int:
        return max(m.degree for m in self.monomials)

    def eval(self, x: Sequence[float]) -> np.ndarray:
        return np.array([m.eval(x) for m in self.monomials])

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of ``points`` (k, n); returns shape (k, N)."""
        points = np.asarray(points, dtype=float)
        exps = np.array([m.exponents for m in self.monomials], dtype=int)
        powers = points[:, None, :] ** exps[None, :, :]
        return powers.prod(axis=2)

    def jacobian(self) -> MatrixPolynomial:
        """The N x n matrix polynomial with entry (k, i) = d Z_k / d x_i."""
        rows = []
        for m in self.monomials:
            row = []
            for i in range(self.n):
                k, dm = m.derivative(i)
                row.append(Polynomial(self.n, {dm: k}) if k else Polynomial.zero(self.n))
            rows.append(row)
        return MatrixPolynomial(rows)

    def as_column(self) -> MatrixPolynomial:
        return MatrixPolynomial([[Polynomial.from_monomial(m)] for m in self.monomials])

    def __eq__(self, other):
        if not isinstance(other, MonomialVector):
            return NotImplemented
        return self.n == other.n and self.monomials == other.monomials

    def __hash__(self):
        return hash((self.n, self.monomials))

    def __str__(self):
        return ", ".join(str(m) for m in self.monomials)

    def __repr__(self):
        return f"MonomialVector(n={self.n}, [{self}])"


# ---------------------------------------------------------------------------
# Textual grammar.
#
#   polynomial := term (('+' | '-') term)*
#   term       := [number] ('*' factor)*  |  factor ('*' factor)*
#   factor     := 'x' index ['^' exponent]  |  number
#
# Numbers are ordinary floats (scientific notation allowed); variables are
# x1..xn.  Examples: "-4.2114*x1^3 + 2*x1*x2 - 1", "x2", "0".
# ---------------------------------------------------------------------------


def _split_signed_terms(s: str) -> list[str]:
    terms: list[str] = []
    cur = ""
    for ch in s:
        if ch in "+-" and cur and cur[-1] not in "eE+-":
            terms.append(cur)
            cur = ch
        else:
            cur += ch
    if cur:
        terms.append(cur)
    return terms


def parse_polynomial(text: str, n: int) -> Polynomial:
    """Parse the documented textual grammar into a polynomial in n variables."""
    s = text.replace(" ", "").replace("\t", "")
    if not s:
        raise PolynomialParseError("empty polynomial string")
    terms: dict[Monomial, float] = {}
    for raw in _split_signed_terms(s):
        sign = 1.0
        body = raw
        while body and body[0] in "+-":
            if body[0] == "-":
                sign = -sign
            body = body[1:]
        if not body:
            raise PolynomialParseError(f"dangling sign in {text!r}")
        coeff = sign
        exps = [0] * n
        for factor in body.split("*"):
            if not factor:
                raise PolynomialParseError(f"empty factor in term {raw!r}")
            if factor[0] in "xX":
                var_part, _, exp_part = factor[1:].partition("^")
                try:
                    idx = int(var_part)
                    e = int(exp_part) if exp_part else 1
                except ValueError as exc:
                    raise PolynomialParseError(f"bad variable factor {factor!r}") from exc
                if not 1 <= idx <= n:
                    raise PolynomialParseError(
                        f"variable x{idx} out of range for {n} variables"
                    )
                if e < 0:
                    raise PolynomialParseError(f"negative exponent in {factor!r}")
                exps[idx - 1] += e
            else:
                try:
                    coeff *= float(factor)
                except ValueError as exc:
                    raise PolynomialParseError(f"bad coefficient {factor!r}") from exc
        m = Monomial(tuple(exps))
        terms[m] = terms.get(m, 0.0) + coeff
    return Polynomial(n, terms)


def _format_coeff(c: float) -> str:
    return f"{c:.12g}"


def format_polynomial(p: Polynomial) -> str:
    """Canonical printing: highest graded-lex monomial first."""
    if p.is_zero:
        return "0"
    monos = sorted(p._terms, key=grlex_key, reverse=True)
    pieces = []
    for i, m in enumerate(monos):
        c = p._terms[m]
        mag = abs(c)
        sign = "-" if c < 0 else "+"
        if m.is_constant:
            body = _format_coeff(mag)
        elif mag == 1.0:
            body = str(m)
        else:
            body = f"{_format_coeff(mag)}*{m}"
        if i == 0:
            pieces.append(body if c >= 0 else f"-{body}")
        else:
            pieces.append(f" {sign} {body}")
    return "".join(pieces)


class PolyVectorField:
    """Batched evaluator for a vector of polynomials over shared variables.

    Compiles the union of monomials into exponent/coefficient arrays once so
    repeated evaluation (e.g. inside an ODE integrator) stays in numpy.
    """

    def __init__(self, polys: Sequence[Polynomial]):
        if not polys:
            raise ValueError("need at least one polynomial")
        n = polys[0].n
        if any(p.n != n for p in polys):
            raise DimensionError("vector field entries disagree on variable count")
        self.n = n
        self.dim = len(polys)
        monos = sorted({m for p in polys for m in p._terms}, key=grlex_key)
        if not monos:
            monos = [Monomial((0,) * n)]
        self._exps = np.array([m.exponents for m in monos], dtype=int)
        coeffs = np.zeros((self.dim, len(monos)))
        index = {m: j for j, m in enumerate(monos)}
        for i, p in enumerate(polys):
            for m, c in p._terms.items():
                coeffs[i, index[m]] = c
        self._coeffs = coeffs

    def __call__(self, states: np.ndarray) -> np.ndarray:
        """Evaluate at a batch of states (b, n) -> (b, dim); (n,) -> (dim,)."""
        states = np.asarray(states, dtype=float)
        single = states.ndim == 1
        pts = states[None, :] if single else states
        powers = pts[:, None, :] ** self._exps[None, :, :]
        vals = powers.prod(axis=2) @ self._coeffs.T
        return vals[0] if single else vals
