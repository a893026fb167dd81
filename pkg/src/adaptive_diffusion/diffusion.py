"""Diffusion estimators: adapt-then-combine and combine-then-adapt.

The array kernels accept arbitrary leading batch axes so that many Monte
Carlo trajectories advance together; :class:`NetworkState` wraps them for
a single trajectory.

Shapes: estimates ``(..., n, m)``, covariance-like matrices ``P``
``(..., n, m, m)``, regressors ``(..., n, m)``, observations ``(..., n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, ParameterError, StructuralError
from .topology import NetworkTopology

OVERFLOW_LIMIT = 1e200


@dataclass(frozen=True)
class GainPolicy:
    """Gain rule.

    ``kind`` is ``"rls"``, ``"rm"`` (Robbins-Monro with exponent ``beta``)
    or ``"custom"`` (``table[k]`` holds the ``(n, m)`` gains of step ``k``).
    """

    kind: str = "rls"
    beta: float | None = None
    table: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("rls", "rm", "custom"):
            raise ParameterError(f"unknown gain policy {self.kind!r}")
        if self.kind == "rm":
            if self.beta is None or not 0.5 < self.beta < 1.0:
                raise ParameterError(f"Robbins-Monro gains need beta in (0.5, 1), got {self.beta}")
        if self.kind == "custom" and self.table is None:
            raise ParameterError("custom gain policy needs a table")

    @classmethod
    def rls(cls) -> "GainPolicy":
        return cls("rls")

    @classmethod
    def robbins_monro(cls, beta: float) -> "GainPolicy":
        return cls("rm", beta=beta)

    def check_alpha(self, alpha: float):
        """Raise unless ``beta < 1 - alpha`` (Robbins-Monro only)."""
        if self.kind == "rm" and not self.beta < 1.0 - alpha:
            raise ParameterError(f"beta={self.beta} must lie below 1 - alpha = {1.0 - alpha}")


def rls_gain(p, phi):
    """Recursive least squares gain and rank-one downdate.

    Parameters
    ----------
    p : ndarray (..., m, m)
        Current SPD matrix ``P``.
    phi : ndarray (..., m)

    Returns
    -------
    gain : ndarray (..., m)
        ``P phi / (1 + phi' P phi)``.
    next_p : ndarray (..., m, m)
        ``P - P phi phi' P / (1 + phi' P phi)``, symmetrized.
    denom : ndarray (...)
        ``1 + phi' P phi``.
    """
    p = np.asarray(p, dtype=float)
    phi = np.asarray(phi, dtype=float)
    p_phi = np.einsum("...ij,...j->...i", p, phi)
    denom = 1.0 + np.einsum("...i,...i->...", phi, p_phi)
    if np.any(denom < 1.0 - 1e-12):
        raise ContractError("1 + phi'P phi < 1: P is not positive semidefinite")
    gain = p_phi / denom[..., None]
    next_p = p - gain[..., :, None] * p_phi[..., None, :]
    next_p = (next_p + np.swapaxes(next_p, -1, -2)) / 2.0
    return gain, next_p, denom


def rm_gain(k, beta: float, phi):
    """Robbins-Monro gain ``phi / ((k + 1)**beta * (1 + |phi|^2))``."""
    phi = np.asarray(phi, dtype=float)
    norm_sq = np.einsum("...i,...i->...", phi, phi)
    return phi / ((float(k) + 1.0) ** beta * (1.0 + norm_sq))[..., None]


def _combine(adjacency: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("ij,...jm->...im", adjacency, x)


def _adapt(theta, p, phi, y, k, policy: GainPolicy, track_information: bool):
    if policy.kind == "rls":
        gain, next_p, denom = rls_gain(p, phi)
    else:
        if track_information:
            next_p, denom = _info_only(p, phi)
        else:
            next_p, denom = p, np.ones(theta.shape[:-1])
        if policy.kind == "rm":
            gain = rm_gain(k, policy.beta, phi)
        else:
            row = policy.table[k] if k < len(policy.table) else np.zeros(theta.shape[-2:])
            gain = np.broadcast_to(np.asarray(row, dtype=float), theta.shape)
    resid = y - np.einsum("...nm,...nm->...n", theta, phi)
    return theta + gain * resid[..., None], next_p, denom, gain


def _info_only(p, phi):
    _, next_p, denom = rls_gain(p, phi)
    return next_p, denom


def diffusion_update(theta, p, logdet, k: int, phi, y, adjacency, policy: GainPolicy,
                     strategy: str = "atc", track_information: bool = True):
    """One diffusion step on arrays with arbitrary leading batch axes.

    ``P`` (and the log-determinant of its inverse) is advanced by the RLS
    recursion for every policy, so the information matrix is available for
    diagnostics.  With ``track_information=False`` non-RLS policies leave
    ``P`` untouched, which saves the downdate.

    Returns
    -------
    theta, p, logdet, gain
    """
    if strategy == "atc":
        adapted, next_p, denom, gain = _adapt(theta, p, phi, y, k, policy, track_information)
        next_theta = _combine(adjacency, adapted)
    elif strategy == "cta":
        combined = _combine(adjacency, theta)
        next_theta, next_p, denom, gain = _adapt(combined, p, phi, y, k, policy, track_information)
    else:
        raise ParameterError(f"unknown strategy {strategy!r}; expected 'atc' or 'cta'")
    return next_theta, next_p, logdet + np.log(denom), gain


def overflowed(theta) -> np.ndarray:
    """Per-trajectory overflow flag over the trailing ``(n, m)`` axes."""
    theta = np.asarray(theta)
    bad = ~np.isfinite(theta) | (np.abs(theta) > OVERFLOW_LIMIT)
    return bad.reshape(*theta.shape[:-2], -1).any(axis=-1)


def initial_estimates(n: int, m: int, theta0=None) -> np.ndarray:
    """``(n, m)`` initial estimates from a scalar, a length-m vector (broadcast) or an n x m table."""
    if theta0 is None:
        return np.zeros((n, m))
    arr = np.asarray(theta0, dtype=float)
    if arr.size == 1:
        return np.full((n, m), float(arr.ravel()[0]))
    if arr.size == m and not (arr.ndim == 2 and arr.shape[0] == n and n != 1):
        return np.tile(arr.reshape(1, m), (n, 1))
    if arr.size == n * m:
        return arr.reshape(n, m).copy()
    raise StructuralError(f"theta0 has {arr.size} entries; expected 1, {m} or {n * m}")


@dataclass(frozen=True)
class NodeState:
    theta_hat: np.ndarray
    p_matrix: np.ndarray
    p_inv_logdet: float


@dataclass(frozen=True)
class NetworkState:
    """State of one diffusion trajectory.

    Attributes
    ----------
    theta : ndarray (n, m)
        Node estimates.
    p : ndarray (n, m, m)
        Per-node ``P = (I + sum phi phi')^{-1}``.
    logdet : ndarray (n,)
        ``log det P^{-1}`` per node.
    k : int
        Steps taken so far.
    overflow_step : int or None
        Step at which an estimate first exceeded the overflow limit; the
        trajectory is frozen from then on.
    """

    theta: np.ndarray
    p: np.ndarray
    logdet: np.ndarray
    policy: GainPolicy = GainPolicy()
    strategy: str = "atc"
    k: int = 0
    overflow_step: int | None = None

    @classmethod
    def initial(cls, n: int, m: int, policy: GainPolicy = GainPolicy(), strategy: str = "atc",
                theta0=None) -> "NetworkState":
        """Start from ``P = I`` and ``theta0`` (zero by default; a length-m vector is broadcast)."""
        if strategy not in ("atc", "cta"):
            raise ParameterError(f"unknown strategy {strategy!r}")
        theta = initial_estimates(n, m, theta0)
        return cls(theta=theta, p=np.broadcast_to(np.eye(m), (n, m, m)).copy(), logdet=np.zeros(n),
                   policy=policy, strategy=strategy)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def m(self) -> int:
        return self.theta.shape[1]

    @property
    def nodes(self) -> list[NodeState]:
        return [NodeState(self.theta[i].copy(), self.p[i].copy(), float(self.logdet[i])) for i in range(self.n)]

    @property
    def overflow(self) -> bool:
        return self.overflow_step is not None

    def information_min_eigenvalues(self) -> np.ndarray:
        """``lambda_min(P^{-1})`` per node."""
        return 1.0 / np.linalg.eigvalsh(self.p)[:, -1]


def step(net: NetworkState, topology: NetworkTopology, phi, y) -> NetworkState:
    """Advance one trajectory by one diffusion step.

    Overflow (a non-finite estimate or one above ``OVERFLOW_LIMIT``) is
    recorded in ``overflow_step`` and freezes the estimates; it is not an
    error.
    """
    phi = np.asarray(phi, dtype=float).reshape(net.n, net.m)
    y = np.asarray(y, dtype=float).reshape(net.n)
    if topology.n != net.n:
        raise StructuralError(f"topology has {topology.n} nodes, state has {net.n}")
    if net.overflow:
        return replace(net, k=net.k + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        theta, p, logdet, _ = diffusion_update(net.theta, net.p, net.logdet, net.k, phi, y,
                                               topology.adjacency, net.policy, net.strategy)
    if overflowed(theta):
        return replace(net, k=net.k + 1, overflow_step=net.k)
    return replace(net, theta=theta, p=p, logdet=logdet, k=net.k + 1)


def individual_rls_step(state: NodeState, phi, y) -> NodeState:
    """Single-node RLS update without combination."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    gain, next_p, denom = rls_gain(state.p_matrix, phi)
    theta = state.theta_hat + gain * (float(y) - state.theta_hat @ phi)
    return NodeState(theta, next_p, state.p_inv_logdet + float(np.log(denom)))


def error_vector(net: NetworkState | np.ndarray, theta) -> np.ndarray:
    """Stacked estimation error ``col(theta_i - theta)`` of length ``n * m``."""
    est = net.theta if isinstance(net, NetworkState) else np.asarray(net, dtype=float)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if est.shape[-1] != theta.size:
        raise StructuralError(f"estimates have dimension {est.shape[-1]}, theta has {theta.size}")
    return (est - theta).reshape(*est.shape[:-2], -1)


def error_recursion(adjacency, p_before, phi, error, noise, gains=None) -> np.ndarray:
    """Next stacked error from ``(A kron I)(I - F) err + (A kron I) L V`` with ``F = L Phi'``.

    Evaluated with explicit ``mn x mn`` matrices, independent of
    :func:`diffusion_update`; used as an oracle for the ATC step.
    ``gains`` defaults to the RLS gains ``P_next phi``.
    """
    adjacency = np.asarray(adjacency, dtype=float)
    n, m = np.asarray(phi).shape
    if gains is None:
        gains = []
        for i in range(n):
            info = np.linalg.inv(p_before[i]) + np.outer(phi[i], phi[i])
            gains.append(np.linalg.solve(info, phi[i]))
        gains = np.array(gains)
    big_l = np.zeros((n * m, n))
    big_phi = np.zeros((n * m, n))
    for i in range(n):
        big_l[i * m:(i + 1) * m, i] = gains[i]
        big_phi[i * m:(i + 1) * m, i] = phi[i]
    mix = np.kron(adjacency, np.eye(m))
    f = big_l @ big_phi.T
    return mix @ (np.eye(n * m) - f) @ error + mix @ big_l @ noise
