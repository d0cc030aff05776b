"""Masked low-rank + sparse + group-sparse decomposition by ADMM.

The stop-duration matrix R is split into a low-rank normal part
Theta = R (*) I and an abnormal part E, with a group-sparse copy W of E
zeroing whole road segments:

    min  ||Theta||_* + lam ||E||_1 + beta ||W||_{2,1}
    s.t. R = R (*) I + E,  Theta = R (*) I,  E = W,
         0 <= E,  0 <= I <= 1,

where (*) is the elementwise product. Each iteration updates E by
shrinkage, Theta by singular value thresholding, I by an elementwise
stationary-point formula clipped to [0, 1], W by a group shrinkage,
then the three multipliers; the penalty grows geometrically each
iteration up to a cap.

Groups of the 2,1 norm default to matrix rows (road segments across
all coach-days); ``group_axis="columns"`` selects the per-column
reading instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class NumericalDivergenceError(RuntimeError):
    """A non-finite value appeared mid-iteration; trace attached."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


GROUP_AXES = ("rows", "columns")


@dataclass
class DecompositionProblem:
    """Input matrix and solver hyper-parameters.

    lam and beta accept zero so the no-group-term baseline and the
    hyper-parameter sweep starting at zero stay expressible.
    """

    values: np.ndarray
    lam: float = 0.1
    beta: float = 0.1
    rho0: float = 1.0
    mu: float = 1.2
    rho_max: float = 1e6
    tol: float = 1e-6
    max_iter: int = 200
    group_axis: str = "rows"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("R must be a 2-D matrix")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("R must be non-negative and finite")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be non-negative")
        if self.rho0 <= 0 or self.mu <= 1 or self.tol <= 0:
            raise ValueError("need rho0 > 0, mu > 1, tol > 0")
        if self.group_axis not in GROUP_AXES:
            raise ValueError(f"group_axis must be one of {GROUP_AXES}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    res_mask: float  # R - R(*)I - E
    res_lowrank: float  # Theta - R(*)I
    res_group: float  # W - E
    rho: float


@dataclass
class SolverState:
    I: np.ndarray
    E: np.ndarray
    W: np.ndarray
    Theta: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    Y3: np.ndarray
    rho: float


@dataclass
class DecompositionResult:
    I: np.ndarray
    E: np.ndarray
    W: np.ndarray
    Theta: np.ndarray
    trace: list[IterationRecord]
    converged: bool
    iterations: int


def soft_threshold(x, alpha: float):
    """Elementwise shrinkage: x -> sign(x) * max(|x| - alpha, 0)."""
    if alpha < 0:
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - alpha, 0.0)


def svt(C: np.ndarray, tau: float) -> np.ndarray:
    """Singular value thresholding: shrink singular values by tau.

    Minimizes 0.5 ||Theta - C||_F^2 + tau ||Theta||_*.
    """
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    U, s, Vt = np.linalg.svd(np.asarray(C, dtype=float), full_matrices=False)
    return U @ (np.maximum(s - tau, 0.0)[:, None] * Vt)


def group_shrink(Q: np.ndarray, alpha: float, group_axis: str = "rows") -> np.ndarray:
    """Scale each group toward zero by alpha in its Euclidean norm.

    Groups with norm at most alpha vanish entirely.
    """
    axis = 1 if group_axis == "rows" else 0
    norms = np.linalg.norm(Q, axis=axis)
    scale = np.zeros_like(norms)
    nz = norms > alpha
    scale[nz] = (norms[nz] - alpha) / norms[nz]
    return Q * (scale[:, None] if axis == 1 else scale[None, :])


def update_E(state: SolverState, R: np.ndarray, lam: float) -> np.ndarray:
    """Shrinkage step for the abnormal part, projected to E >= 0.

    The published step does not enforce the non-negativity constraint;
    the projection keeps every iterate feasible.
    """
    arg = 0.5 * (R + state.W + state.Y1 / state.rho + state.Y3 / state.rho - R * state.I)
    return np.maximum(soft_threshold(arg, lam / (2.0 * state.rho)), 0.0)


def update_Theta(state: SolverState, R: np.ndarray) -> np.ndarray:
    """Low-rank step: svt(R (*) I - Y2 / rho, 1 / rho)."""
    return svt(R * state.I - state.Y2 / state.rho, 1.0 / state.rho)


def update_I(state: SolverState, R: np.ndarray) -> np.ndarray:
    """Elementwise stationary point for the mask, clipped to [0, 1].

    Where R is zero the mask is irrelevant to every constraint and is
    set to 1 (stop presumed normal).
    """
    rho = state.rho
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (rho * R + rho * state.Theta - rho * state.E + state.Y1 + state.Y2) / (
            2.0 * rho * R
        )
    raw = np.where(R > 0.0, raw, 1.0)
    return np.clip(raw, 0.0, 1.0)


def update_W(state: SolverState, beta: float, group_axis: str = "rows") -> np.ndarray:
    """Group-sparsity step on Q = E - Y3 / rho."""
    return group_shrink(state.E - state.Y3 / state.rho, beta / state.rho, group_axis)


def update_multipliers(
    state: SolverState, R: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ascent on the three constraint residuals, scaled by rho."""
    RI = R * state.I
    y1 = state.Y1 + state.rho * (R - RI - state.E)
    y2 = state.Y2 + state.rho * (state.Theta - RI)
    y3 = state.Y3 + state.rho * (state.W - state.E)
    return y1, y2, y3


def objective_value(
    Theta: np.ndarray, E: np.ndarray, W: np.ndarray, lam: float, beta: float,
    group_axis: str = "rows",
) -> float:
    """Unpenalized objective: nuclear + lam * l1 + beta * l2,1."""
    axis = 1 if group_axis == "rows" else 0
    return float(
        np.linalg.svd(Theta, compute_uv=False).sum()
        + lam * np.abs(E).sum()
        + beta * np.linalg.norm(W, axis=axis).sum()
    )


def initial_state(problem: DecompositionProblem) -> SolverState:
    """All stops presumed normal: I = 1, E = W = 0, Theta = R, Y = 0."""
    R = problem.values
    zeros = np.zeros_like(R)
    return SolverState(
        I=np.ones_like(R),
        E=zeros.copy(),
        W=zeros.copy(),
        Theta=R.copy(),
        Y1=zeros.copy(),
        Y2=zeros.copy(),
        Y3=zeros.copy(),
        rho=problem.rho0,
    )


def solve(problem: DecompositionProblem) -> DecompositionResult:
    """Run the ADMM iteration to tolerance or the iteration cap.

    Stops when the largest of the three constraint residual norms,
    relative to max(1, ||R||_F), falls below problem.tol. Deterministic
    for fixed inputs.
    """
    R = problem.values
    state = initial_state(problem)
    denom = max(1.0, float(np.linalg.norm(R)))
    trace: list[IterationRecord] = []
    converged = False
    iterations = 0
    for it in range(1, problem.max_iter + 1):
        iterations = it
        state.E = update_E(state, R, problem.lam)
        state.Theta = update_Theta(state, R)
        state.I = update_I(state, R)
        state.W = update_W(state, problem.beta, problem.group_axis)
        state.Y1, state.Y2, state.Y3 = update_multipliers(state, R)
        RI = R * state.I
        r1 = float(np.linalg.norm(R - RI - state.E)) / denom
        r2 = float(np.linalg.norm(state.Theta - RI)) / denom
        r3 = float(np.linalg.norm(state.W - state.E)) / denom
        record = IterationRecord(
            iteration=it,
            objective=objective_value(
                state.Theta, state.E, state.W, problem.lam, problem.beta,
                problem.group_axis,
            ),
            res_mask=r1,
            res_lowrank=r2,
            res_group=r3,
            rho=state.rho,
        )
        trace.append(record)
        if not all(
            np.isfinite(x) for x in (record.objective, r1, r2, r3)
        ):
            raise NumericalDivergenceError(
                f"non-finite value at iteration {it}", trace
            )
        state.rho = min(state.rho * problem.mu, problem.rho_max)
        if max(r1, r2, r3) < problem.tol:
            converged = True
            break
    return DecompositionResult(
        I=state.I,
        E=state.E,
        W=state.W,
        Theta=state.Theta,
        trace=trace,
        converged=converged,
        iterations=iterations,
    )


def write_trace_csv(trace: list[IterationRecord], path, stamp: dict | None = None,
                    cluster: int = 0, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        if not append:
            if stamp:
                for k in sorted(stamp):
                    fh.write(f"# {k}={stamp[k]}\n")
            fh.write("cluster,iter,objective,res_mask,res_lowrank,res_group,rho\n")
        for rec in trace:
            fh.write(
                f"{cluster},{rec.iteration},{rec.objective:.17g},"
                f"{rec.res_mask:.17g},{rec.res_lowrank:.17g},"
                f"{rec.res_group:.17g},{rec.rho:.17g}\n"
            )


__all__ = [
    "DecompositionProblem",
    "DecompositionResult",
    "GROUP_AXES",
    "IterationRecord",
    "NumericalDivergenceError",
    "SolverState",
    "group_shrink",
    "initial_state",
    "objective_value",
    "soft_threshold",
    "solve",
    "svt",
    "update_E",
    "update_I",
    "update_Theta",
    "update_W",
    "update_multipliers",
    "write_trace_csv",
]
