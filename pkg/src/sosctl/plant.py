"""Ground-truth simulator for systems that are linear in a monomial vector.

The model is  xdot = A Z(x) + B u  with constant A (n x N) and B (n x m).
This is the only module allowed to hold A and B: experiments produce a
:class:`~sosctl.data.DataRecord` and everything downstream of that record is
model-blind.

Note the stored A multiplies Z(x) in R^N and therefore has N columns, even
when background material writes it as square; with n = N the two readings
coincide.

Integration is fixed-step classical fourth-order Runge-Kutta, so runs are
deterministic and reproducible bit for bit.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import DataRecord
from .errors import ConfigError, DimensionError, SimulationDiverged
from .poly import (
    Monomial,
    MonomialVector,
    MatrixPolynomial,
    PolyVectorField,
    parse_polynomial,
)

__all__ = [
    "PolySystem",
    "SinusoidSignal",
    "ExperimentConfig",
    "Trajectory",
    "simulate",
    "run_experiment",
    "simulate_closed_loop",
    "closed_loop_field",
    "rk4_fixed",
    "load_system",
    "load_experiment",
    "write_trajectory_csv",
]

_DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class PolySystem:
    """xdot = A Z(x) + B u with constant matrices A, B."""

    A: np.ndarray
    B: np.ndarray
    Z: MonomialVector

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if A.shape != (self.Z.n, self.Z.N):
            raise DimensionError(
                f"A must be n x N = {self.Z.n} x {self.Z.N}, got {A.shape}"
            )
        if B.shape[0] != self.Z.n:
            raise DimensionError(f"B must have n = {self.Z.n} rows, got {B.shape}")

    @property
    def n(self) -> int:
        return self.Z.n

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def N(self) -> int:
        return self.Z.N

    def drift_field(self) -> PolyVectorField:
        """Compiled evaluator for A Z(x)."""
        drift = self.A @ self.Z.as_column()
        return PolyVectorField([drift[i, 0] for i in range(self.n)])

    def rhs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ self.Z.eval(x) + self.B @ np.atleast_1d(u)


@dataclass(frozen=True)
class SinusoidSignal:
    """Per-channel input u_i(t) = offset_i + sum_j a_j sin(w_j t + phi_j)."""

    offsets: tuple[float, ...]
    sinusoids: tuple[tuple[tuple[float, float, float], ...], ...]

    def __post_init__(self):
        if len(self.offsets) != len(self.sinusoids):
            raise DimensionError("one sinusoid list per channel required")

    @classmethod
    def zero(cls, m: int) -> "SinusoidSignal":
        return cls(offsets=(0.0,) * m, sinusoids=((),) * m)

    @classmethod
    def single(cls, amplitude: float, omega: float, phase: float = 0.0) -> "SinusoidSignal":
        return cls(offsets=(0.0,), sinusoids=(((amplitude, omega, phase),),))

    @property
    def m(self) -> int:
        return len(self.offsets)

    def __call__(self, t: float) -> np.ndarray:
        out = np.array(self.offsets, dtype=float)
        for ch, terms in enumerate(self.sinusoids):
            for a, w, phi in terms:
                out[ch] += a * math.sin(w * t + phi)
        return out

    def describe(self) -> str:
        parts = []
        for ch in range(self.m):
            terms = [f"{self.offsets[ch]:g}"] if self.offsets[ch] else []
            terms += [f"{a:g}*sin({w:g}*t{phi:+g})" if phi else f"{a:g}*sin({w:g}*t)"
                      for a, w, phi in self.sinusoids[ch]]
            parts.append(" + ".join(terms) if terms else "0")
        return "; ".join(parts)


@dataclass(frozen=True)
class ExperimentConfig:
    """Sampling plan for one open-loop experiment over [t0, t0 + (T-1) tau]."""

    t0: float
    tau: float
    T: int
    x0: np.ndarray
    input: SinusoidSignal
    integrator_step: float = 1e-3
    derivative_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        if self.tau <= 0:
            raise ConfigError("sampling period tau must be positive")
        if self.T < 1:
            raise ConfigError("sample count T must be positive")
        if self.integrator_step <= 0:
            raise ConfigError("integrator step must be positive")
        if self.integrator_step > self.tau:
            raise ConfigError("integrator step must not exceed tau")
        if self.derivative_noise_std < 0:
            raise ConfigError("derivative noise std must be nonnegative")
        ratio = self.tau / self.integrator_step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError(
                f"integrator step {self.integrator_step} must divide tau {self.tau}"
            )

    @property
    def horizon(self) -> float:
        return self.t0 + (self.T - 1) * self.tau

    def sample_times(self) -> np.ndarray:
        return self.t0 + self.tau * np.arange(self.T)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if not (len(times) == states.shape[0] == inputs.shape[0]):
            raise DimensionError("times, states and inputs must have equal length")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    def state_at(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - t)))
        return self.states[idx]


def _check_finite(x: np.ndarray, t: float):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > _DIVERGENCE_LIMIT:
        raise SimulationDiverged(
            f"state became non-finite at t = {t:.6g} (trajectory blew up)", time=t
        )


def rk4_fixed(
    f: Callable[[float, np.ndarray], np.ndarray],
    x0: np.ndarray,
    t0: float,
    tf: float,
    step: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4 with dense output at every step; raises on blow-up."""
    if step <= 0:
        raise ValueError("step must be positive")
    span = tf - t0
    if span < 0:
        raise ValueError("time span must be nonnegative")
    nsteps = int(round(span / step))
    if abs(nsteps * step - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"step {step} does not divide the span {span}")
    x = np.asarray(x0, dtype=float).copy()
    times = t0 + step * np.arange(nsteps + 1)
    out = np.empty((nsteps + 1, x.size))
    out[0] = x
    h = step
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(nsteps):
            t = times[k]
            k1 = f(t, x)
            k2 = f(t + h / 2, x + (h / 2) * k1)
            k3 = f(t + h / 2, x + (h / 2) * k2)
            k4 = f(t + h, x + h * k3)
            x = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            _check_finite(x, times[k + 1])
            out[k + 1] = x
    return times, out


def simulate(
    sys: PolySystem,
    u_of_t: Callable[[float], np.ndarray],
    x0: Sequence[float],
    t_span: tuple[float, float],
    step: float,
) -> Trajectory:
    """Integrate the open-loop model under the given input signal."""
    drift = sys.drift_field()
    B = sys.B

    def f(t, x):
        return drift(x) + B @ np.atleast_1d(u_of_t(t))

    times, states = rk4_fixed(f, np.asarray(x0, dtype=float), t_span[0], t_span[1], step)
    inputs = np.array([np.atleast_1d(u_of_t(t)) for t in times])
    return Trajectory(times=times, states=states, inputs=inputs)


def run_experiment(sys: PolySystem, cfg: ExperimentConfig) -> DataRecord:
    """Sample an open-loop run into the data matrices.

    Inputs and states are sampled at t0 + k tau; the derivative column is the
    exact model right-hand side at the sample instant, optionally perturbed by
    i.i.d. zero-mean Gaussian noise with the configured standard deviation
    (a seeded generator, echoed in the metadata, keeps records reproducible).
    """
    if cfg.x0.size != sys.n:
        raise DimensionError(f"x0 has {cfg.x0.size} entries, system has n={sys.n}")
    if cfg.input.m != sys.m:
        raise DimensionError(f"input signal has {cfg.input.m} channels, system has m={sys.m}")
    if cfg.T == 1:
        sample_states = cfg.x0[None, :]
    else:
        traj = simulate(sys, cfg.input, cfg.x0, (cfg.t0, cfg.horizon), cfg.integrator_step)
        stride = int(round(cfg.tau / cfg.integrator_step))
        sample_states = traj.states[:: stride][: cfg.T]
    times = cfg.sample_times()
    U = np.column_stack([cfg.input(t) for t in times])
    X0 = sample_states.T
    X1 = np.column_stack(
        [sys.rhs(X0[:, k], U[:, k]) for k in range(cfg.T)]
    )
    if cfg.derivative_noise_std > 0:
        rng = np.random.default_rng(cfg.seed)
        X1 = X1 + rng.normal(0.0, cfg.derivative_noise_std, size=X1.shape)
    meta = {
        "t0": cfg.t0,
        "tau": cfg.tau,
        "T": cfg.T,
        "x0": " ".join(repr(float(v)) for v in cfg.x0),
        "integrator_step": cfg.integrator_step,
        "derivative_noise_std": cfg.derivative_noise_std,
        "seed": cfg.seed,
        "input": cfg.input.describe(),
        "times": times.tolist(),
    }
    return DataRecord(U=U, X0=X0, X1=X1, Z=sys.Z, meta=meta)


def closed_loop_field(sys: PolySystem, ctrl) -> PolyVectorField:
    """Compiled evaluator of A Z(x) + B F(x) Z(x) for a controller with .F."""
    Zcol = sys.Z.as_column()
    rhs = sys.A @ Zcol + sys.B @ (ctrl.F @ Zcol)
    return PolyVectorField([rhs[i, 0] for i in range(sys.n)])


def simulate_closed_loop(
    sys: PolySystem,
    ctrl,
    x0: Sequence[float],
    t_span: tuple[float, float],
    step: float,
) -> Trajectory:
    """Integrate xdot = A Z(x) + B F(x) Z(x); blow-up diagnoses a bad controller."""
    if ctrl.F.shape != (sys.m, sys.N):
        raise DimensionError(
            f"controller F is {ctrl.F.shape}, system needs {(sys.m, sys.N)}"
        )
    field = closed_loop_field(sys, ctrl)
    Zcol = sys.Z.as_column()
    u_polys = ctrl.F @ Zcol
    u_field = PolyVectorField([u_polys[i, 0] for i in range(sys.m)])

    def f(t, x):
        return field(x)

    times, states = rk4_fixed(f, np.asarray(x0, dtype=float), t_span[0], t_span[1], step)
    inputs = u_field(states)
    return Trajectory(times=times, states=states, inputs=inputs)


# ---------------------------------------------------------------------------
# Key-value config files (documented in docs/formats.md).
# ---------------------------------------------------------------------------


def read_kv_file(path) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = body.partition("=")
            key = key.strip()
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def _parse_matrix(text: str) -> np.ndarray:
    rows = [r.strip() for r in text.split(";") if r.strip()]
    return np.array([[float(v) for v in r.split()] for r in rows])


def _require(kv: dict, key: str, path) -> str:
    if key not in kv:
        raise ConfigError(f"{path}: missing required key {key!r}")
    return kv[key]


def load_system(path) -> PolySystem:
    """Read a system config: n, m, monomials, A (n x N), B (n x m)."""
    kv = read_kv_file(path)
    n = int(_require(kv, "n", path))
    monos_text = _require(kv, "monomials", path)
    entries = []
    for tok in monos_text.split(","):
        p = parse_polynomial(tok.strip(), n)
        terms = p.terms
        if len(terms) != 1 or next(iter(terms.values())) != 1.0:
            raise ConfigError(f"{path}: monomials entries must be bare monomials, got {tok!r}")
        entries.append(next(iter(terms)))
    Z = MonomialVector(n, entries)
    A = _parse_matrix(_require(kv, "A", path))
    B = _parse_matrix(_require(kv, "B", path))
    return PolySystem(A=A, B=B, Z=Z)


_SIN_KEY = re.compile(r"input\.u(\d+)\.sin\d*$")
_OFFSET_KEY = re.compile(r"input\.u(\d+)\.offset$")


def load_experiment(path, m: int | None = None) -> ExperimentConfig:
    """Read an experiment config (see docs/formats.md for the key set)."""
    kv = read_kv_file(path)
    x0 = np.array([float(v) for v in _require(kv, "x0", path).split()])
    offsets: dict[int, float] = {}
    sins: dict[int, list[tuple[float, float, float]]] = {}
    channels = set()
    for key, value in kv.items():
        mo = _OFFSET_KEY.match(key)
        if mo:
            ch = int(mo.group(1))
            offsets[ch] = float(value)
            channels.add(ch)
            continue
        ms = _SIN_KEY.match(key)
        if ms:
            ch = int(ms.group(1))
            vals = [float(v) for v in value.split()]
            if len(vals) != 3:
                raise ConfigError(
                    f"{path}: {key} needs 'amplitude omega phase', got {value!r}"
                )
            sins.setdefault(ch, []).append(tuple(vals))
            channels.add(ch)
    m_eff = m if m is not None else (max(channels) if channels else 1)
    signal = SinusoidSignal(
        offsets=tuple(offsets.get(ch, 0.0) for ch in range(1, m_eff + 1)),
        sinusoids=tuple(tuple(sins.get(ch, [])) for ch in range(1, m_eff + 1)),
    )
    return ExperimentConfig(
        t0=float(kv.get("t0", "0.0")),
        tau=float(_require(kv, "tau", path)),
        T=int(_require(kv, "samples", path)),
        x0=x0,
        input=signal,
        integrator_step=float(kv.get("integrator_step", "1e-3")),
        derivative_noise_std=float(kv.get("derivative_noise_std", "0.0")),
        seed=int(kv.get("seed", "0")),
    )


def write_trajectory_csv(traj: Trajectory, path, downsample: int = 1) -> None:
    """Write t, x1..xn, u1..um rows (optionally keeping every k-th step)."""
    n = traj.states.shape[1]
    m = traj.inputs.shape[1]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)])
    idx = list(range(0, len(traj.times), max(1, downsample)))
    if idx[-1] != len(traj.times) - 1:
        idx.append(len(traj.times) - 1)
    for k in idx:
        writer.writerow(
            [repr(float(traj.times[k]))]
            + [repr(float(v)) for v in traj.states[k]]
            + [repr(float(v)) for v in traj.inputs[k]]
        )
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
