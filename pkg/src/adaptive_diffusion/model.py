"""Observation model ``y[k, i] = theta . phi[k, i] + eps[k, i]`` and excitation checks.

Regressor and noise sources are immutable descriptions; all randomness is
drawn from the counter-based streams in :mod:`adaptive_diffusion.streams`,
so any ``(seed, trial, k)`` reproduces the same data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import streams
from .errors import ConstraintError, ParameterError, StructuralError

REGRESSOR_KINDS = (
    "deterministic_schedule",
    "constant",
    "geometric",
    "iid_gaussian",
    "one_hot_rotating",
    "single_informative_node",
    "adversarial",
)
NOISE_KINDS = ("independent_bounded", "gaussian_multivariate")
PSD_TOL = 1e-10


@dataclass(frozen=True)
class RegressorSource:
    """Description of the per-node regressors ``phi[k, i]``.

    Attributes
    ----------
    kind : str
        One of ``REGRESSOR_KINDS``.
    n, m : int
        Node count and parameter dimension.
    table : ndarray, optional
        ``(T, n, m)`` table for ``deterministic_schedule`` and ``adversarial``;
        steps at or beyond ``T`` emit zeros.
    fn : callable, optional
        ``fn(k) -> (n, m)`` alternative to ``table`` for deterministic schedules.
    scale : float
        Constant value, geometric start value, one-hot magnitude, informative
        value or Gaussian standard deviation depending on ``kind``.
    ratio : float
        Geometric decay ratio: ``phi[k, i] = scale * ratio**k``.
    node : int
        Informative node of ``single_informative_node``.
    offsets : tuple of int, optional
        Per-node phase shift of ``one_hot_rotating`` (default all zero).
    """

    kind: str
    n: int
    m: int
    table: np.ndarray | None = None
    fn: Callable[[int], np.ndarray] | None = field(default=None, compare=False)
    scale: float = 1.0
    ratio: float = 1.0
    node: int = 0
    offsets: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in REGRESSOR_KINDS:
            raise ParameterError(f"unknown regressor kind {self.kind!r}; expected one of {REGRESSOR_KINDS}")
        if self.n < 1 or self.m < 1:
            raise ParameterError("n and m must be positive")
        if self.table is not None:
            t = np.array(self.table, dtype=float)
            if t.ndim != 3 or t.shape[1:] != (self.n, self.m):
                raise StructuralError(f"regressor table must have shape (T, {self.n}, {self.m}), got {t.shape}")
            t.setflags(write=False)
            object.__setattr__(self, "table", t)
        if self.kind in ("deterministic_schedule", "adversarial") and self.table is None and self.fn is None:
            raise ParameterError(f"{self.kind} regressors need a table or a function")
        if self.kind == "single_informative_node" and not 0 <= self.node < self.n:
            raise ParameterError(f"informative node {self.node} out of range for n={self.n}")
        if self.offsets is not None and len(self.offsets) != self.n:
            raise StructuralError("one_hot_rotating offsets need one entry per node")

    @property
    def is_random(self) -> bool:
        return self.kind == "iid_gaussian"

    def _deterministic_block(self, start: int, count: int) -> np.ndarray:
        ks = np.arange(start, start + count)
        out = np.zeros((count, self.n, self.m))
        if self.kind in ("deterministic_schedule", "adversarial"):
            if self.table is not None:
                inside = ks < len(self.table)
                out[inside] = self.table[ks[inside]]
            else:
                for row, k in enumerate(ks):
                    out[row] = np.asarray(self.fn(int(k)), dtype=float).reshape(self.n, self.m)
        elif self.kind == "constant":
            out[:] = self.scale
        elif self.kind == "geometric":
            out[:] = (self.scale * self.ratio ** ks.astype(float))[:, None, None]
        elif self.kind == "one_hot_rotating":
            offsets = np.zeros(self.n, dtype=int) if self.offsets is None else np.asarray(self.offsets)
            coord = (ks[:, None] + offsets[None, :]) % self.m
            out[np.arange(count)[:, None], np.arange(self.n)[None, :], coord] = self.scale
        elif self.kind == "single_informative_node":
            out[:, self.node, 0] = self.scale
        return out

    def block(self, start: int, count: int, seed: int = 0, trials: Sequence[int] = (0,)) -> np.ndarray:
        """Regressors for steps ``start .. start+count-1``.

        Returns shape ``(len(trials), count, n, m)`` for random kinds and
        ``(1, count, n, m)`` (shared by every trial) otherwise.
        """
        if not self.is_random:
            return self._deterministic_block(start, count)[None]
        z = streams.batch_normals(seed, trials, streams.REGRESSORS, start, count, self.n * self.m)
        return self.scale * z.reshape(len(trials), count, self.n, self.m)

    def at(self, k: int, seed: int = 0, trial: int = 0) -> np.ndarray:
        """Regressor matrix ``(n, m)`` at step ``k``."""
        return self.block(k, 1, seed, (trial,))[0, 0]

    def expected_normalized_outer(self, draws: int = 1000, seed: int = 0) -> np.ndarray | None:
        """``E[phi phi^T / (1 + |phi|^2)]`` summed over nodes, for stationary random kinds."""
        if not self.is_random:
            return None
        z = streams.normals(seed, 0, streams.SEARCH, 0, draws, self.n * self.m)
        phi = self.scale * z.reshape(draws, self.n, self.m)
        w = 1.0 / (1.0 + np.einsum("dnm,dnm->dn", phi, phi))
        return np.einsum("dn,dni,dnj->ij", w, phi, phi) / draws


def make_regressors(kind: str, n: int, m: int, **params) -> RegressorSource:
    """Build a :class:`RegressorSource`; ``variance`` is accepted for ``iid_gaussian``."""
    params = dict(params)
    if "variance" in params:
        params["scale"] = float(np.sqrt(params.pop("variance")))
    if "values" in params:
        params["table"] = params.pop("values")
    if "offsets" in params and params["offsets"] is not None:
        params["offsets"] = tuple(int(o) for o in params["offsets"])
    return RegressorSource(kind=kind, n=n, m=m, **params)


@dataclass(frozen=True)
class NoiseSource:
    """Observation noise ``V[k] = (eps[k, 1], ..., eps[k, n])``.

    ``independent_bounded`` draws each node independently with variance
    ``covariance[i, i]`` (Gaussian or uniform); ``gaussian_multivariate``
    draws ``N(0, covariance)`` with any PSD covariance.
    """

    kind: str
    covariance: np.ndarray
    bound_M: float
    distribution: str = "gaussian"
    _factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ParameterError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise StructuralError(f"noise covariance must be square, got shape {cov.shape}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > PSD_TOL:
            raise ConstraintError("noise covariance is not symmetric within 1e-10")
        cov = (cov + cov.T) / 2.0
        evals, evecs = np.linalg.eigh(cov)
        if evals.size and evals.min() < -PSD_TOL:
            raise ConstraintError(f"noise covariance is not PSD (smallest eigenvalue {evals.min():.3e})")
        if self.bound_M <= 0:
            raise ConstraintError("noise bound M must be positive")
        if np.max(np.diag(cov), initial=0.0) > self.bound_M * (1 + 1e-12):
            raise ConstraintError(
                f"noise bound M={self.bound_M} is below the largest variance {np.max(np.diag(cov))}"
            )
        if self.kind == "independent_bounded":
            if np.max(np.abs(cov - np.diag(np.diag(cov)))) > PSD_TOL:
                raise ConstraintError("independent_bounded noise needs a diagonal covariance")
            if self.distribution not in ("gaussian", "uniform"):
                raise ParameterError(f"unknown noise distribution {self.distribution!r}")
        elif self.distribution != "gaussian":
            raise ParameterError("gaussian_multivariate noise is Gaussian by definition")
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)
        factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
        factor.setflags(write=False)
        object.__setattr__(self, "_factor", factor)

    @property
    def n(self) -> int:
        return self.covariance.shape[0]

    def block(self, start: int, count: int, seed: int = 0, trials: Sequence[int] = (0,)) -> np.ndarray:
        """Noise for steps ``start .. start+count-1``, shape ``(len(trials), count, n)``."""
        if self.kind == "independent_bounded" and self.distribution == "uniform":
            u = streams.batch_uniforms(seed, trials, streams.NOISE, start, count, self.n)
            half_width = np.sqrt(3.0 * np.diag(self.covariance))
            return (2.0 * u - 1.0) * half_width
        z = streams.batch_normals(seed, trials, streams.NOISE, start, count, self.n)
        if self.kind == "independent_bounded":
            return z * np.sqrt(np.diag(self.covariance))
        return z @ self._factor.T

    def at(self, k: int, seed: int = 0, trial: int = 0) -> np.ndarray:
        return self.block(k, 1, seed, (trial,))[0, 0]


def make_noise(kind: str, n: int, sigma=1.0, bound_M: float | None = None,
               distribution: str = "gaussian") -> NoiseSource:
    """Build a :class:`NoiseSource` from a flexible covariance description.

    ``sigma`` is the covariance: a scalar ``s`` means ``s * I``, a length-n
    list gives the diagonal, and a length-n*n list (or n x n nested list)
    gives the full matrix row-major.  ``bound_M`` defaults to the largest
    variance.
    """
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:
        cov = float(s) * np.eye(n)
    elif s.size == n and s.ndim == 1:
        cov = np.diag(s)
    elif s.size == n * n:
        cov = s.reshape(n, n)
    else:
        raise StructuralError(f"noise sigma has {s.size} entries; expected 1, {n} or {n * n}")
    if bound_M is None:
        bound_M = float(max(np.max(np.diag(cov)), 1e-300))
    return NoiseSource(kind=kind, covariance=cov, bound_M=float(bound_M), distribution=distribution)


@dataclass(frozen=True)
class TrialStream:
    """Handle for the random streams of one trajectory."""

    seed: int = 0
    trial: int = 0


@dataclass(frozen=True)
class Observation:
    phi: np.ndarray  # (n, m)
    noise: np.ndarray  # (n,)
    y: np.ndarray  # (n,)


@dataclass(frozen=True)
class RegressionProblem:
    """Linear regression network problem with true parameter ``theta``."""

    theta: np.ndarray
    regressors: RegressorSource
    noise: NoiseSource

    def __post_init__(self):
        theta = np.atleast_1d(np.array(self.theta, dtype=float))
        if theta.ndim != 1:
            raise StructuralError("theta must be a vector")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if self.regressors.m != theta.size:
            raise StructuralError(f"regressors have m={self.regressors.m} but theta has {theta.size} entries")
        if self.noise.n != self.regressors.n:
            raise StructuralError(f"noise has n={self.noise.n} but regressors have n={self.regressors.n}")

    @property
    def m(self) -> int:
        return self.theta.size

    @property
    def n(self) -> int:
        return self.regressors.n

    def block(self, start: int, count: int, seed: int = 0, trials: Sequence[int] = (0,)):
        """Regressors, noise and observations for a block of steps.

        Returns ``(phi, noise, y)`` with shapes ``(B|1, count, n, m)``,
        ``(B, count, n)`` and ``(B, count, n)``.
        """
        phi = self.regressors.block(start, count, seed, trials)
        noise = self.noise.block(start, count, seed, trials)
        y = phi @ self.theta + noise
        return phi, noise, y


def observe(problem: RegressionProblem, k: int, stream: TrialStream = TrialStream()) -> Observation:
    """Draw ``(Phi_k, V_k, Y_k)`` for one step of one trajectory."""
    if k < 0:
        raise ParameterError("step index must be nonnegative")
    phi, noise, y = problem.block(k, 1, stream.seed, (stream.trial,))
    return Observation(phi=phi[0, 0], noise=noise[0, 0], y=y[0, 0])


def excitation_lambda(regressors, h: int | None = None) -> float:
    """Smallest eigenvalue of the node- and window-averaged normalized outer product.

    Parameters
    ----------
    regressors : array_like
        ``(h, n, m)`` realized regressors, or ``(draws, h, n, m)`` Monte Carlo
        draws (at least 1000) whose average estimates the expectation.
    h : int, optional
        Window length; checked against the array when given.
    """
    phi = np.asarray(regressors, dtype=float)
    if phi.ndim not in (3, 4):
        raise StructuralError(f"regressors must be (h, n, m) or (draws, h, n, m), got shape {phi.shape}")
    if phi.ndim == 3:
        phi = phi[None]
    elif phi.shape[0] < 1000:
        raise ParameterError("Monte Carlo expectations need at least 1000 draws")
    draws, window, n, m = phi.shape
    if h is not None and h != window:
        raise StructuralError(f"window length {window} does not match h={h}")
    w = 1.0 / (1.0 + np.einsum("dhnm,dhnm->dhn", phi, phi))
    mat = np.einsum("dhn,dhni,dhnj->ij", w, phi, phi) / (draws * n * window)
    return float(max(np.linalg.eigvalsh(mat)[0], 0.0))


@dataclass(frozen=True)
class ExcitationReport:
    alpha: float
    c: float
    h: int
    grid: np.ndarray
    lambda_series: np.ndarray
    verdict: bool
    weighted_infimum: float
    finite_horizon: bool = True

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "c": self.c,
            "h": self.h,
            "verdict": self.verdict,
            "weighted_infimum": self.weighted_infimum,
            "grid_points": int(self.grid.size),
            "finite_horizon": self.finite_horizon,
        }


def check_a3(regressors: RegressorSource | np.ndarray, horizon: int, h: int, alpha: float, c: float,
             seed: int = 0, draws: int = 1000) -> ExcitationReport:
    """Finite-horizon check of ``k**alpha * lambda_k(h) > c`` on ``k = 1, 1+h, ... <= horizon``.

    Deterministic sources use realized regressors; ``iid_gaussian`` sources
    are stationary, so their expectation is estimated once from ``draws``
    Monte Carlo samples and reused on the whole grid.
    """
    if not 0.0 <= alpha < 0.5:
        raise ParameterError(f"alpha must lie in [0, 0.5), got {alpha}")
    if h < 1:
        raise ParameterError("h must be a positive integer")
    if horizon < h:
        raise ParameterError(f"horizon {horizon} is shorter than h={h}")
    grid = np.arange(1, horizon + 1, h)
    if isinstance(regressors, RegressorSource) and regressors.is_random:
        mat = regressors.expected_normalized_outer(draws, seed) / regressors.n
        lam = np.full(grid.size, max(float(np.linalg.eigvalsh(mat)[0]), 0.0))
    else:
        if isinstance(regressors, RegressorSource):
            table = regressors.block(0, int(grid[-1]) + h, seed)[0]
        else:
            table = np.asarray(regressors, dtype=float)
            if table.ndim != 3 or table.shape[0] < grid[-1] + h:
                raise StructuralError("regressor table too short for the requested horizon")
        lam = np.array([excitation_lambda(table[k: k + h]) for k in grid])
    weighted = grid.astype(float) ** alpha * lam
    inf = float(weighted.min())
    return ExcitationReport(alpha=alpha, c=c, h=h, grid=grid, lambda_series=lam,
                            verdict=bool(inf > c), weighted_infimum=inf)


def min_information_eigenvalue(p_inv) -> float:
    """Smallest eigenvalue of a symmetric PSD information matrix."""
    mat = np.asarray(p_inv, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise StructuralError(f"information matrix must be square, got shape {mat.shape}")
    if np.max(np.abs(mat - mat.T), initial=0.0) > 1e-9:
        raise StructuralError("information matrix is not symmetric within 1e-9")
    return float(np.linalg.eigvalsh((mat + mat.T) / 2.0)[0])


def noise_variance_report(noise: NoiseSource, draws: int = 100_000, seed: int = 0) -> dict:
    """Compare sample variances of ``draws`` noise vectors with the declared bound M.

    Only unconditional variances are checked.
    """
    v = noise.block(0, draws, seed)[0]
    variances = v.var(axis=0, ddof=1)
    slack = 4.0 * noise.bound_M * np.sqrt(2.0 / (draws - 1))
    return {
        "sample_variances": variances.tolist(),
        "bound_M": noise.bound_M,
        "within_bound": bool(np.all(variances <= noise.bound_M + slack)),
        "conditional_moments_checked": False,
    }
