"""Newton solver and the structured linear algebra behind the implicit
steppers.

The nonlinear systems produced by the one-step schemes are posed over
the real-split vector (Re b_1, Im b_1, ..., Re b_N, Im b_N); in that
ordering their Jacobians are block-tridiagonal with 2x2 blocks, plus two
corner blocks under a periodic closure. ``newton_solve`` itself is
generic: it accepts any residual/Jacobian callables and also handles
small dense systems (used by the projection stepper's 2x2 multiplier
solve), so the iteration accounting is identical everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels

__all__ = [
    "SolverConfig",
    "SolverStats",
    "SingularMatrixError",
    "BlockTridiagonalMatrix",
    "solve_block_tridiagonal",
    "newton_solve",
    "PROJECTION_SOLVER_DEFAULTS",
]


class SingularMatrixError(RuntimeError):
    """A pivot (or dense solve) hit a numerically singular matrix."""


@dataclass(frozen=True)
class SolverConfig:
    """Newton termination and variant knobs.

    Termination is checked after every residual evaluation, in the fixed
    order absolute -> relative -> step size. The defaults push the
    residual to the floor: the absolute tolerance is effectively "exact
    zero", the relative tolerance asks for 15 digits off the initial
    residual, and the step tolerance catches stagnation at roundoff.
    """

    abs_tol: float = 1e-50
    rel_tol: float = 1e-15
    step_tol: float = 1e-15
    max_iters: int = 50
    chord: bool = False          # freeze the Jacobian at the initial guess
    damping: bool = False        # halve steps that increase the residual
    rk2_predictor: bool = False  # one explicit RK2 stage as initial guess

    def __post_init__(self):
        for name in ("abs_tol", "rel_tol", "step_tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


# The constrained projection's multiplier solve terminates on an honest
# absolute tolerance instead of chasing roundoff.
PROJECTION_SOLVER_DEFAULTS = SolverConfig(abs_tol=1e-12)


@dataclass
class SolverStats:
    """Counters from one nonlinear solve.

    function_evals includes the evaluation at the initial guess, so a
    converged full-Newton solve without damping always has
    function_evals == iterations + 1.
    """

    iterations: int = 0
    function_evals: int = 0
    jacobian_evals: int = 0
    final_residual_norm: float = float("nan")
    termination_reason: str = ""

    @property
    def converged(self) -> bool:
        return self.termination_reason in ("abs", "rel", "step")


@dataclass(frozen=True)
class BlockTridiagonalMatrix:
    """Block-tridiagonal matrix with 2x2 blocks, optional periodic corners.

    diag has shape (n, 2, 2); lower/upper have shape (n-1, 2, 2) and hold
    the sub/superdiagonal blocks (lower[k] sits at block row k+1, column
    k). corner_tr is the (0, n-1) block and corner_bl the (n-1, 0) block;
    both must be given together and only make sense for n >= 3.
    """

    diag: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    corner_tr: np.ndarray | None = None
    corner_bl: np.ndarray | None = None

    def __post_init__(self):
        n = self.diag.shape[0]
        if self.diag.shape != (n, 2, 2):
            raise ValueError(f"diag must have shape (n, 2, 2), got {self.diag.shape}")
        want = (max(n - 1, 0), 2, 2)
        if self.lower.shape != want or self.upper.shape != want:
            raise ValueError("lower/upper must have shape (n-1, 2, 2)")
        if (self.corner_tr is None) != (self.corner_bl is None):
            raise ValueError("corner blocks must be given together")
        if self.corner_tr is not None and n < 3:
            raise ValueError("corner blocks require at least 3 block rows")

    @property
    def n_blocks(self) -> int:
        return self.diag.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        m = 2 * self.n_blocks
        return (m, m)

    def to_dense(self) -> np.ndarray:
        n = self.n_blocks
        out = np.zeros((2 * n, 2 * n))
        for j in range(n):
            out[2 * j:2 * j + 2, 2 * j:2 * j + 2] = self.diag[j]
        for j in range(n - 1):
            out[2 * j + 2:2 * j + 4, 2 * j:2 * j + 2] = self.lower[j]
            out[2 * j:2 * j + 2, 2 * j + 2:2 * j + 4] = self.upper[j]
        if self.corner_tr is not None:
            out[0:2, 2 * n - 2:2 * n] = self.corner_tr
            out[2 * n - 2:2 * n, 0:2] = self.corner_bl
        return out


def solve_block_tridiagonal(matrix: BlockTridiagonalMatrix,
                            rhs: np.ndarray) -> np.ndarray:
    """Direct solve via a block Thomas sweep; periodic corners are folded
    out with a bordered elimination and a 2x2 Schur complement.

    rhs may be a vector of length 2n or a (2n, k) stack of columns.
    Raises SingularMatrixError when a pivot is numerically singular.
    """
    n = matrix.n_blocks
    vec = rhs.ndim == 1
    cols = rhs.reshape(n, 2, 1) if vec else rhs.reshape(n, 2, -1)
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    if matrix.corner_tr is not None:
        x, status = _kernels.block_thomas_cyclic(
            matrix.diag, matrix.lower, matrix.upper,
            matrix.corner_tr, matrix.corner_bl, cols, _kernels.PIVOT_RTOL)
    else:
        x, status = _kernels.block_thomas(
            matrix.diag, matrix.lower, matrix.upper, cols, _kernels.PIVOT_RTOL)
    if status != 0:
        raise SingularMatrixError(
            f"numerically singular pivot at block row {status - 1}")
    return x.reshape(rhs.shape)


def _linear_solve(jac, neg_residual: np.ndarray) -> np.ndarray:
    if isinstance(jac, BlockTridiagonalMatrix):
        return solve_block_tridiagonal(jac, neg_residual)
    try:
        return np.linalg.solve(np.asarray(jac, dtype=np.float64), neg_residual)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc


def newton_solve(residual_fn: Callable[[np.ndarray], np.ndarray],
                 jacobian_fn: Callable[[np.ndarray], object],
                 guess: np.ndarray,
                 config: SolverConfig | None = None,
                 ) -> tuple[np.ndarray, SolverStats]:
    """Root-find residual_fn(x) = 0 starting from guess.

    jacobian_fn may return a BlockTridiagonalMatrix or any dense square
    array. Returns (x, stats); non-convergence within max_iters is not
    an exception, it is reported via stats.termination_reason ==
    "max_iters" so callers can decide what a failed step means.
    """
    cfg = config or SolverConfig()
    x = np.array(guess, dtype=np.float64)
    r = np.asarray(residual_fn(x), dtype=np.float64)
    stats = SolverStats(function_evals=1)
    rnorm = float(np.linalg.norm(r))
    rnorm0 = rnorm
    if rnorm <= cfg.abs_tol:
        stats.final_residual_norm = rnorm
        stats.termination_reason = "abs"
        return x, stats

    jac = None
    for _ in range(cfg.max_iters):
        if jac is None or not cfg.chord:
            jac = jacobian_fn(x)
            stats.jacobian_evals += 1
        dx = _linear_solve(jac, -r)
        x_new = x + dx
        r_new = np.asarray(residual_fn(x_new), dtype=np.float64)
        stats.function_evals += 1
        step = dx
        if cfg.damping:
            lam, tries = 1.0, 0
            while np.linalg.norm(r_new) > rnorm and tries < 8:
                lam *= 0.5
                tries += 1
                x_new = x + lam * dx
                r_new = np.asarray(residual_fn(x_new), dtype=np.float64)
                stats.function_evals += 1
            step = lam * dx
        x, r = x_new, r_new
        stats.iterations += 1
        rnorm = float(np.linalg.norm(r))
        if rnorm <= cfg.abs_tol:
            stats.termination_reason = "abs"
            break
        if rnorm <= cfg.rel_tol * rnorm0:
            stats.termination_reason = "rel"
            break
        xscale = float(np.linalg.norm(x))
        step_norm = float(np.linalg.norm(step))
        # overflow in either norm would make the threshold infinite and
        # declare convergence on a diverging iterate
        if (np.isfinite(step_norm) and np.isfinite(xscale)
                and step_norm <= cfg.step_tol * max(xscale, 1e-300)):
            stats.termination_reason = "step"
            break
    else:
        stats.termination_reason = "max_iters"
    stats.final_residual_norm = rnorm
    return x, stats
