"""Monte Carlo harness, rate statistics and contraction checks."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .diffusion import GainPolicy, diffusion_update, initial_estimates
from .errors import ContractError, ParameterError, ResourceGuardError, StructuralError
from .model import RegressionProblem
from .topology import NetworkTopology

DEFAULT_BATCH = 50


# --------------------------------------------------------------------------- records


@dataclass
class TrajectoryRecord:
    """One simulated trajectory.

    ``err_norm_sq[k]`` is the squared stacked error after ``k`` steps;
    ``node_err_sq[k, i]`` its share at node ``i``; ``lambda_min_pinv[k, i]``
    the smallest eigenvalue of node ``i``'s information matrix (present
    when recorded).
    """

    err_norm_sq: np.ndarray
    node_err_sq: np.ndarray
    lambda_min_pinv: np.ndarray | None = None
    p_scalar: np.ndarray | None = None
    overflow_step: int | None = None
    seed: int = 0
    trial: int = 0

    @property
    def horizon(self) -> int:
        return len(self.err_norm_sq) - 1


@dataclass
class MonteCarloEstimate:
    """Aggregates of ``|err_k|^2`` over independent trials.

    A trajectory whose update at step ``k`` overflows is excluded from the
    means from index ``k + 1`` on and counted in ``overflow_count``.
    """

    mean_err_sq: np.ndarray
    std_err: np.ndarray
    trials: int
    overflow_count: np.ndarray
    node_mean_err_sq: np.ndarray
    per_trial: np.ndarray | None = None
    seed: int = 0

    @property
    def horizon(self) -> int:
        return len(self.mean_err_sq) - 1

    def rows(self):
        for k in range(len(self.mean_err_sq)):
            yield k, self.mean_err_sq[k], self.std_err[k], int(self.overflow_count[k])


# --------------------------------------------------------------------------- simulation


@dataclass(frozen=True)
class _Job:
    problem: RegressionProblem
    adjacency: np.ndarray
    policy: GainPolicy
    strategy: str
    theta0: np.ndarray
    horizon: int
    seed: int
    trials: tuple[int, ...]
    track_information: bool
    record_information: bool = False


def _simulate(job: _Job):
    """Run a batch of trials; returns per-trial errors, node error sums and overflow steps."""
    prob = job.problem
    n, m = prob.n, prob.m
    b = len(job.trials)
    theta = np.broadcast_to(job.theta0, (b, n, m)).copy()
    p = np.broadcast_to(np.eye(m), (b, n, m, m)).copy()
    logdet = np.zeros((b, n))
    err = np.full((b, job.horizon + 1), np.nan)
    node_err = np.full((b, job.horizon + 1, n), np.nan)
    info = np.empty((b, job.horizon + 1, n)) if job.record_information else None
    p_scalar = np.empty((b, job.horizon + 1, n)) if job.record_information and m == 1 else None
    overflow = np.full(b, -1)
    alive = np.ones(b, dtype=bool)
    diff = theta - prob.theta
    node_err[:, 0] = np.einsum("bnm,bnm->bn", diff, diff)
    err[:, 0] = node_err[:, 0].sum(axis=1)
    if info is not None:
        info[:, 0] = 1.0
    if p_scalar is not None:
        p_scalar[:, 0] = 1.0
    k = 0
    while k < job.horizon:
        count = min(streams.CHUNK - k % streams.CHUNK, job.horizon - k)
        phis, _, ys = prob.block(k, count, job.seed, job.trials)
        for r in range(count):
            phi = phis[:, r]
            with np.errstate(over="ignore", invalid="ignore"):
                nt, np_, nl, _ = diffusion_update(theta, p, logdet, k, phi, ys[:, r], job.adjacency, job.policy,
                                                  job.strategy, track_information=job.track_information)
                bad = alive & (~np.isfinite(nt).reshape(b, -1).all(axis=1)
                               | (np.abs(np.nan_to_num(nt, nan=np.inf)).reshape(b, -1).max(axis=1) > 1e200))
            if bad.any():
                overflow[bad] = k
                alive &= ~bad
                nt = np.where(alive[:, None, None], nt, theta)
            theta, p, logdet = nt, np_, nl
            k += 1
            diff = theta - prob.theta
            ne = np.einsum("bnm,bnm->bn", diff, diff)
            ne[~alive] = np.nan
            node_err[:, k] = ne
            err[:, k] = ne.sum(axis=1)
            if info is not None:
                info[:, k] = 1.0 / np.linalg.eigvalsh(p)[..., -1]
            if p_scalar is not None:
                p_scalar[:, k] = p[..., 0, 0]
    return err, node_err, overflow, info, p_scalar


def _job(problem, topology, policy, strategy, theta0, horizon, seed, trials, track_information,
         record_information=False) -> _Job:
    if topology.n != problem.n:
        raise StructuralError(f"topology has {topology.n} nodes, problem has {problem.n}")
    return _Job(problem=problem, adjacency=np.asarray(topology.adjacency), policy=policy, strategy=strategy,
                theta0=initial_estimates(problem.n, problem.m, theta0), horizon=int(horizon), seed=int(seed),
                trials=tuple(int(t) for t in trials), track_information=track_information,
                record_information=record_information)


def simulate_trajectory(problem: RegressionProblem, topology: NetworkTopology, policy: GainPolicy,
                        horizon: int, seed: int = 0, trial: int = 0, strategy: str = "atc", theta0=None,
                        record_information: bool = True) -> TrajectoryRecord:
    """Simulate one trajectory with the same streams Monte Carlo trial ``trial`` uses."""
    job = _job(problem, topology, policy, strategy, theta0, horizon, seed, (trial,),
               track_information=record_information or policy.kind == "rls",
               record_information=record_information)
    err, node_err, overflow, info, p_scalar = _simulate(job)
    return TrajectoryRecord(err_norm_sq=err[0], node_err_sq=node_err[0],
                            lambda_min_pinv=None if info is None else info[0],
                            p_scalar=None if p_scalar is None else p_scalar[0],
                            overflow_step=None if overflow[0] < 0 else int(overflow[0]), seed=seed, trial=trial)


def monte_carlo(problem: RegressionProblem, topology: NetworkTopology, policy: GainPolicy, horizon: int,
                trials: int, seed: int = 0, strategy: str = "atc", theta0=None, workers: int = 1,
                batch_size: int = DEFAULT_BATCH, keep_trials: bool = False) -> MonteCarloEstimate:
    """Mean and standard error of ``|err_k|^2`` over ``trials`` independent trajectories.

    Trial ``j`` uses streams keyed by ``(seed, j)``; trials run in fixed
    batches of ``batch_size`` and are reduced in trial order, so results do
    not depend on ``workers``.
    """
    if trials < 2:
        raise ParameterError("monte_carlo needs at least 2 trials")
    jobs = [
        _job(problem, topology, policy, strategy, theta0, horizon, seed,
             range(start, min(start + batch_size, trials)), track_information=False)
        for start in range(0, trials, batch_size)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate, jobs))
    else:
        results = [_simulate(j) for j in jobs]
    err = np.concatenate([r[0] for r in results])
    overflow = np.concatenate([r[2] for r in results])
    node_sum = np.zeros((horizon + 1, problem.n))
    for r in results:
        node_sum += np.nansum(r[1], axis=0)
    valid = np.isfinite(err).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.nansum(err, axis=0) / valid
        std = np.sqrt(np.nansum((err - mean) ** 2, axis=0) / (valid - 1)) / np.sqrt(valid)
    steps = np.arange(horizon + 1)
    over_count = ((overflow[:, None] >= 0) & (overflow[:, None] < steps[None, :])).sum(axis=0)
    return MonteCarloEstimate(mean_err_sq=mean, std_err=std, trials=trials, overflow_count=over_count,
                              node_mean_err_sq=node_sum / np.maximum(valid, 1)[:, None],
                              per_trial=err if keep_trials else None, seed=seed)


# --------------------------------------------------------------------------- rate statistics


@dataclass(frozen=True)
class RateReport:
    tail_start: int
    tail_max: float
    tail_max_lower: float
    bound: float
    ratio: float
    passed: bool
    trivially_satisfied: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def rate_fit_ms(estimate: MonteCarloEstimate, beta: float, alpha: float, s: float, c: float, M: float,
                tail_fraction: float = 0.25) -> RateReport:
    """Compare ``max_tail k**(beta - alpha) * mean_err_sq[k]`` with ``M / (s c)``.

    Passes when the statistic, lowered by three standard errors, does not
    exceed the bound.  Ratios below 1e-2 are flagged as trivially satisfied.
    """
    horizon = estimate.horizon
    start = max(1, int(math.floor(horizon * (1.0 - tail_fraction))))
    ks = np.arange(start, horizon + 1, dtype=float)
    weight = ks ** (beta - alpha)
    stat = weight * estimate.mean_err_sq[start:]
    lower = weight * (estimate.mean_err_sq[start:] - 3.0 * estimate.std_err[start:])
    bound = M / (s * c)
    tail_max = float(np.nanmax(stat))
    ratio = tail_max / bound
    return RateReport(tail_start=start, tail_max=tail_max, tail_max_lower=float(np.nanmax(lower)), bound=bound,
                      ratio=ratio, passed=bool(np.nanmax(lower) <= bound), trivially_satisfied=ratio < 1e-2)


def dyadic_windows(start: int, stop: int) -> list[tuple[int, int]]:
    """Half-open dyadic windows ``[2^j, 2^(j+1))`` clipped to ``[start, stop]``."""
    out = []
    j = max(0, int(math.floor(math.log2(max(start, 1)))))
    while 2 ** j <= stop:
        lo, hi = max(2 ** j, start), min(2 ** (j + 1), stop + 1)
        if lo < hi:
            out.append((lo, hi))
        j += 1
    return out


@dataclass(frozen=True)
class WindowReport:
    windows: list
    maxima: list
    slack: list
    passed: bool

    def as_dict(self) -> dict:
        return {"windows": [list(w) for w in self.windows], "maxima": self.maxima, "slack": self.slack,
                "passed": self.passed}


def scaled_tail_windows(estimate: MonteCarloEstimate, exponent: float, k_min: int, k_max: int,
                        n_se: float = 3.0) -> WindowReport:
    """Dyadic-window maxima of ``k**exponent * mean_err_sq[k]`` over ``[k_min, k_max]``.

    Passes when each window maximum is at most the previous one plus
    ``n_se`` scaled standard errors at the later window's arg-max.
    """
    windows = dyadic_windows(k_min, k_max)
    maxima, slack = [], []
    for lo, hi in windows:
        ks = np.arange(lo, hi)
        vals = ks.astype(float) ** exponent * estimate.mean_err_sq[lo:hi]
        arg = int(np.nanargmax(vals))
        maxima.append(float(vals[arg]))
        slack.append(float(n_se * ks[arg] ** exponent * estimate.std_err[lo + arg]))
    passed = all(maxima[i + 1] <= maxima[i] + slack[i + 1] for i in range(len(maxima) - 1))
    return WindowReport(windows=windows, maxima=maxima, slack=slack, passed=passed)


def lms_mean_square_recursion(n: int, c_prime: float, M: float, beta: float, horizon: int,
                              theta: float = 1.0) -> np.ndarray:
    """Exact mean-square error of the common-noise scalar Robbins-Monro network.

    With ``m = 1``, identical regressors ``sqrt(2 c')`` at every node, zero
    initial estimates and one noise sample shared by all nodes, the error is
    the same at every node and

    ``x[k+1] = (1 - 2c'/((1+2c')(k+1)**beta))**2 x[k] + 2 c' n M / ((1+2c')**2 (k+1)**(2 beta))``

    from ``x[0] = n theta**2``.
    """
    if n < 1 or c_prime <= 0 or M < 0 or horizon < 0:
        raise ParameterError("need n >= 1, c' > 0, M >= 0 and horizon >= 0")
    if not 0.5 < beta < 1.0:
        raise ParameterError("beta must lie in (0.5, 1)")
    out = np.empty(horizon + 1)
    out[0] = n * theta ** 2
    g = 2.0 * c_prime / (1.0 + 2.0 * c_prime)
    for k in range(horizon):
        step = (k + 1.0) ** beta
        out[k + 1] = (1.0 - g / step) ** 2 * out[k] + g * n * M / ((1.0 + 2.0 * c_prime) * step ** 2)
    return out


@dataclass(frozen=True)
class AsRateReport:
    epsilon: float
    windows: list
    maxima: list
    passed: bool

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "windows": [list(w) for w in self.windows], "maxima": self.maxima,
                "passed": self.passed}


def as_rate_check(record: TrajectoryRecord | np.ndarray, epsilon: float, burn_in: float = 0.1) -> AsRateReport:
    """Strictly decreasing dyadic maxima of ``k**epsilon * |err_k|^2`` over the last three windows.

    Windows start after the first ``burn_in`` fraction of the horizon.
    """
    err = record.err_norm_sq if isinstance(record, TrajectoryRecord) else np.asarray(record, dtype=float)
    horizon = len(err) - 1
    start = max(1, int(math.ceil(burn_in * horizon)))
    windows = dyadic_windows(start, horizon)
    if len(windows) < 3:
        raise ResourceGuardError(f"horizon {horizon} leaves fewer than three dyadic windows after burn-in")
    last = windows[-3:]
    maxima = []
    for lo, hi in last:
        ks = np.arange(lo, hi, dtype=float)
        maxima.append(float(np.max(ks ** epsilon * err[lo:hi])))
    passed = maxima[0] > maxima[1] > maxima[2]
    return AsRateReport(epsilon=epsilon, windows=last, maxima=maxima, passed=bool(passed))


@dataclass(frozen=True)
class RateSumReport:
    partial_sums: np.ndarray
    weight_sums: np.ndarray
    cauchy_increment: float
    cauchy_passed: bool
    weights_diverge: bool


def scalar_rls_rate_sum(err_norm_sq, p_series, tolerance: float = 0.1) -> RateSumReport:
    """Partial sums of ``sum_i (1 - (P[k+1, i] / P[k, i])**2) * |err_k|^2``.

    Parameters
    ----------
    err_norm_sq : array (K + 1,)
    p_series : array (K + 1, n) or (K + 1, n, 1, 1)
        Scalar ``P`` per node and step.
    tolerance : float
        Cauchy criterion ``S_K - S_{K/2} < tolerance * S_{K/2}`` on the final doubling.

    The weight sums ``sum_i (1 - (P[k+1, i] / P[k, i])**2)`` are reported too;
    ``weights_diverge`` is set when their last doubling adds at least half
    of the previous doubling's increment (logarithmic or faster growth).
    """
    p = np.asarray(p_series, dtype=float)
    if p.ndim == 4:
        if p.shape[-2:] != (1, 1):
            raise ContractError("the rate sum is defined for scalar parameters (m = 1)")
        p = p[..., 0, 0]
    if p.ndim != 2:
        raise ContractError("the rate sum is defined for scalar parameters (m = 1)")
    err = np.asarray(err_norm_sq, dtype=float)
    weights = (1.0 - (p[1:] / p[:-1]) ** 2).sum(axis=1)
    summand = weights * err[:-1]
    partial = np.cumsum(summand)
    wsum = np.cumsum(weights)
    total = len(partial)
    half, quarter = total // 2, total // 4
    base = partial[half - 1] if half >= 1 else 0.0
    inc = float(partial[-1] - base)
    cauchy = inc <= tolerance * base if base > 0 else inc == 0.0
    if quarter >= 1:
        last = wsum[-1] - wsum[half - 1]
        prev = wsum[half - 1] - wsum[quarter - 1]
        diverge = bool(last > 0 and last >= 0.5 * prev)
    else:
        diverge = False
    return RateSumReport(partial_sums=partial, weight_sums=wsum, cauchy_increment=inc,
                         cauchy_passed=bool(cauchy), weights_diverge=diverge)


# --------------------------------------------------------------------------- limit product


@dataclass(frozen=True)
class LimitProductReport:
    mu: np.ndarray
    plateau: float
    row_spread: float
    tail_sum: float


def limit_product_pi(topology: NetworkTopology, phis, theta0_errors, row_tol: float = 1e-8,
                     tail_tol: float = 1e-10) -> LimitProductReport:
    """Limit of ``prod A (I - F_k)`` for scalar RLS and the resulting error plateau.

    Parameters
    ----------
    phis : array (K + 1, n)
        Scalar regressors ``phi[k, i]``.
    theta0_errors : array (n,)
        Initial errors ``theta_{0, i} - theta``.

    Returns ``mu`` (the common row of the converged product) and the plateau
    ``n * (sum_j mu_j * err0_j)**2``.  Raises :class:`ContractError` when the
    gain tail sum over the second half exceeds ``tail_tol`` or the rows
    differ by more than ``row_tol``.
    """
    phis = np.asarray(phis, dtype=float)
    if phis.ndim == 3:
        if phis.shape[2] != 1:
            raise ContractError("limit_product_pi needs scalar regressors")
        phis = phis[..., 0]
    steps, n = phis.shape
    if topology.n != n:
        raise StructuralError("regressor table and topology disagree on n")
    a = topology.adjacency
    p = np.ones(n)
    prod = np.eye(n)
    gains = np.empty(steps)
    for k in range(steps):
        p_next = p / (1.0 + p * phis[k] ** 2)
        gains[k] = float(np.sum(p_next * phis[k] ** 2))
        prod = a @ np.diag(p_next / p) @ prod
        p = p_next
    tail = float(gains[steps // 2:].sum())
    if tail > tail_tol:
        raise ContractError(f"gain tail sum {tail:.3e} exceeds {tail_tol:.1e}: excitation is not summable")
    spread = float(np.max(np.abs(prod - prod[0])))
    if spread > row_tol:
        raise ContractError(f"rows of the product differ by {spread:.3e}: the limit is not rank one yet")
    mu = prod.mean(axis=0)
    err0 = np.asarray(theta0_errors, dtype=float).ravel()
    plateau = n * float(mu @ err0) ** 2
    return LimitProductReport(mu=mu, plateau=plateau, row_spread=spread, tail_sum=tail)


def exact_second_moment_scalar(topology: NetworkTopology, phis, theta0_errors, noise_cov) -> np.ndarray:
    """``E|err_k|^2`` for scalar diffusion RLS under deterministic regressors.

    Propagates the mean and covariance of the error exactly:
    ``mean' = T mean`` and ``cov' = T cov T' + G S G'`` with
    ``T = A (I - F)`` and ``G = A diag(L)``.
    """
    phis = np.asarray(phis, dtype=float)
    if phis.ndim == 3:
        phis = phis[..., 0]
    steps, n = phis.shape
    a = topology.adjacency
    s = np.asarray(noise_cov, dtype=float)
    p = np.ones(n)
    mean = np.asarray(theta0_errors, dtype=float).ravel().copy()
    cov = np.zeros((n, n))
    out = np.empty(steps + 1)
    out[0] = mean @ mean
    for k in range(steps):
        p_next = p / (1.0 + p * phis[k] ** 2)
        t = a @ np.diag(p_next / p)
        g = a @ np.diag(p_next * phis[k])
        mean = t @ mean
        cov = t @ cov @ t.T + g @ s @ g.T
        p = p_next
        out[k + 1] = mean @ mean + np.trace(cov)
    return out


# --------------------------------------------------------------------------- contraction checks


def psi_product(topology: NetworkTopology, blocks) -> np.ndarray:
    """``psi_h = (A kron I) I_h(A) ... (A kron I) I_1(A)`` for blocks of shape ``(h, n, m, m)``."""
    blocks = np.asarray(blocks, dtype=float)
    h, n, m, _ = blocks.shape
    mix = np.kron(topology.adjacency, np.eye(m))
    psi = np.eye(n * m)
    for k in range(h):
        diag = np.zeros((n * m, n * m))
        for i in range(n):
            diag[i * m:(i + 1) * m, i * m:(i + 1) * m] = blocks[k, i]
        psi = mix @ diag @ psi
    return psi


@dataclass(frozen=True)
class ContractionMargin:
    lhs: float
    rhs: float
    margin: float
    passed: bool


def psi_contraction_check(topology: NetworkTopology, blocks, h: int, s: float,
                          tol: float = 1e-10) -> ContractionMargin:
    """Margin ``lambda_min(I - psi' psi) - s * lambda_min(sum_k sum_i (I - A_ki^2))``.

    ``blocks`` has shape ``(h, n, m, m)``; each block must be symmetric with
    eigenvalues in ``[0, 1]``.  Passes when the margin is at least ``-tol``.
    """
    blocks = np.asarray(blocks, dtype=float)
    if blocks.ndim != 4 or blocks.shape[0] != h or blocks.shape[1] != topology.n:
        raise StructuralError(f"blocks must have shape ({h}, {topology.n}, m, m), got {blocks.shape}")
    if np.max(np.abs(blocks - np.swapaxes(blocks, -1, -2))) > 1e-10:
        raise ContractError("contraction blocks must be symmetric")
    ev = np.linalg.eigvalsh(blocks)
    if ev.min() < -1e-10 or ev.max() > 1.0 + 1e-10:
        raise ContractError("contraction blocks need eigenvalues in [0, 1]")
    m = blocks.shape[-1]
    psi = psi_product(topology, blocks)
    left = np.eye(psi.shape[0]) - psi.T @ psi
    lhs = float(np.linalg.eigvalsh((left + left.T) / 2.0)[0])
    excitation = np.einsum("kiab,kibc->ac", blocks, blocks)
    excitation = h * topology.n * np.eye(m) - excitation
    rhs = s * float(np.linalg.eigvalsh((excitation + excitation.T) / 2.0)[0])
    margin = lhs - rhs
    return ContractionMargin(lhs=lhs, rhs=rhs, margin=margin, passed=bool(margin >= -tol))


def diagonal_contraction_check(topology: NetworkTopology, c, s: float, tol: float = 1e-10) -> ContractionMargin:
    """``1 - s * sum(1 - c_i^2) - lambda_max(I(c) A'A I(c)) >= -tol`` for ``c`` in ``[0, 1]^n``."""
    c = np.asarray(c, dtype=float)
    if c.shape != (topology.n,) or c.min() < 0 or c.max() > 1:
        raise ContractError("c must be a length-n vector in [0, 1]")
    a = topology.adjacency
    mat = np.diag(c) @ a.T @ a @ np.diag(c)
    lhs = float(np.linalg.eigvalsh((mat + mat.T) / 2.0)[-1])
    rhs = 1.0 - s * float(np.sum(1.0 - c ** 2))
    return ContractionMargin(lhs=lhs, rhs=rhs, margin=rhs - lhs, passed=bool(rhs - lhs >= -tol))


def random_contraction_blocks(rng: np.random.Generator, h: int, n: int, m: int) -> np.ndarray:
    """Random symmetric blocks with eigenvalues in ``[0, 1]``; some eigenvalues pinned at 0 or 1."""
    out = np.empty((h, n, m, m))
    for k in range(h):
        for i in range(n):
            q, _ = np.linalg.qr(rng.standard_normal((m, m)))
            ev = rng.random(m)
            pin = rng.random(m)
            ev[pin < 0.15] = 1.0
            ev[pin > 0.9] = 0.0
            out[k, i] = (q * ev) @ q.T
            out[k, i] = (out[k, i] + out[k, i].T) / 2.0
    return out


# --------------------------------------------------------------------------- adversarial Monte Carlo


@dataclass
class ScheduleMonteCarlo:
    checkpoints: list
    checkpoint_norms: np.ndarray  # (trials, len(checkpoints))
    mean_error: np.ndarray  # (len(checkpoints), nm)
    std_error: np.ndarray
    running_max_increasing: np.ndarray  # (trials,)

    @property
    def fraction_increasing(self) -> float:
        return float(np.mean(self.running_max_increasing))


def schedule_monte_carlo(schedule, trials: int, seed: int = 0, noise_cov=None,
                         batch_size: int = DEFAULT_BATCH, record_steps=None) -> ScheduleMonteCarlo:
    """Noisy diffusion RLS along an adversarial schedule.

    The error follows ``err_{t+1} = T_t err_t + G_t V_t`` with the exact
    per-step maps of the schedule rounded once to double precision;
    ``V_t ~ N(0, noise_cov)`` is drawn from the usual per-trial streams.
    Records ``err_{t + 1}`` (the error whose mean is ``R_t``) for every
    ``t`` in ``record_steps``, which defaults to the schedule's checkpoints.
    """
    from .adversary import exact_linear_maps

    transitions, gains = exact_linear_maps(schedule)
    steps = transitions.shape[0]
    n, m = schedule.n, schedule.m
    cov = np.eye(n) if noise_cov is None else np.asarray(noise_cov, dtype=float)
    evals, evecs = np.linalg.eigh(cov)
    factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
    checkpoints = list(schedule.checkpoints if record_steps is None else record_steps)
    if any(not 0 <= t < steps for t in checkpoints):
        raise ParameterError(f"record steps must lie in [0, {steps - 1}]")
    norms = np.empty((trials, len(checkpoints)))
    sums = np.zeros((len(checkpoints), n * m))
    sq = np.zeros((len(checkpoints), n * m))
    e0 = np.asarray(schedule.e_theta0_error, dtype=float)
    for start in range(0, trials, batch_size):
        ids = tuple(range(start, min(start + batch_size, trials)))
        v = streams.batch_normals(seed, ids, streams.NOISE, 0, steps, n) @ factor.T
        err = np.broadcast_to(e0, (len(ids), n * m)).copy()
        for t in range(steps):
            err = err @ transitions[t].T + v[:, t] @ gains[t].T
            if t in checkpoints:
                col = checkpoints.index(t)
                norms[start:start + len(ids), col] = np.linalg.norm(err, axis=1)
                sums[col] += err.sum(axis=0)
                sq[col] += (err ** 2).sum(axis=0)
    mean = sums / trials
    std = np.sqrt(np.maximum(sq / trials - mean ** 2, 0.0) * trials / (trials - 1)) / np.sqrt(trials)
    running = np.maximum.accumulate(norms, axis=1)
    increasing = np.all(np.diff(running, axis=1) > 0, axis=1)
    return ScheduleMonteCarlo(checkpoints=checkpoints, checkpoint_norms=norms, mean_error=mean, std_error=std,
                              running_max_increasing=increasing)
