"""Adversarial regressor schedules that make diffusion RLS diverge in the mean.

For a pivot node ``j_star`` the construction tracks the mean error
``R_t = prod (A kron I)(I - F_i) E[err_0]`` and keeps it outside a cyclic
family of hyperplanes ``P_0, ..., P_d``.  Each hyperplane is a linear form
on the first coordinate of every node block:

* level 0: the first coordinate of node ``j_star``;
* level ``l >= 1``: ``sum_k b[l, k] * C[k, 0]`` with ``b_1`` the row of ``A``
  at ``j_star`` with its own entry zeroed and ``b_l = b_1 A^(l-1)``.

Each block of ``(m + 3)(d + 1)`` steps first excites every node so the
information matrices keep growing, then walks down the hyperplane levels,
and finally spends two steps probing ``j_star`` to amplify the error seen
by a neighbour ``target_node`` past ``20 (t + 1)**4``.

All searches run on exact rationals: probe vectors are drawn as floats,
converted exactly, and every condition is verified on the exact state, so
the emitted float schedule is exactly what was certified.

Node and coordinate indices are 0-based.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import _exact as ex
from . import streams
from .errors import ContractError, ParameterError, PreconditionError, SearchFailure, StructuralError
from .topology import NetworkTopology, check_assumption_a1

SCHEMA_VERSION = "adaptive-diffusion/schedule/1"
SATURATION = 1e290


# --------------------------------------------------------------------------- families


def return_time_d(topology: NetworkTopology, j_star: int) -> tuple[int, int]:
    """Smallest ``d`` with ``(A^(d+1))[j_star, j_star] > 0`` and the target node.

    The target node is the smallest index ``l`` with ``A[l, j_star] > 0``.
    """
    a = topology.adjacency
    n = topology.n
    if not 0 <= j_star < n:
        raise ParameterError(f"j_star={j_star} out of range for n={n}")
    support = (a > 0).astype(np.int64)
    power = support.copy()
    for d in range(n + 1):
        if power[j_star, j_star] > 0:
            break
        power = np.minimum(power @ support, 1)
    else:
        raise ContractError(f"no closed walk through node {j_star}: adjacency is not irreducible")
    column = np.flatnonzero(a[:, j_star] > 0)
    if column.size == 0:
        raise ContractError(f"no node listens to node {j_star}")
    return d, int(column[0])


def level_after(j: int, d: int) -> int:
    """Hyperplane level to avoid ``j`` steps into a block: ``(d - j) mod (d + 1)``."""
    return (d - j) % (d + 1)


@dataclass(frozen=True)
class HyperplaneFamily:
    """Cyclic hyperplane family for pivot ``j_star``.

    ``b_coeffs[l - 1]`` holds ``b_l`` for ``l = 1 .. d + 1``.  Level ``d + 1``
    is kept because the amplification step needs ``P_1`` even when ``d = 0``.
    """

    j_star: int
    d: int
    n: int
    m: int
    b_exact: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, topology: NetworkTopology, j_star: int, m: int) -> "HyperplaneFamily":
        d, _ = return_time_d(topology, j_star)
        a = ex.exact(topology.adjacency)
        b1 = a[j_star].copy()
        b1[j_star] = Fraction(0)
        rows = [b1]
        for _ in range(d):
            rows.append(rows[-1] @ a)
        return cls(j_star=j_star, d=d, n=topology.n, m=m, b_exact=np.array(rows, dtype=object))

    @property
    def b_coeffs(self) -> np.ndarray:
        return ex.to_float(self.b_exact)

    @property
    def max_level(self) -> int:
        return self.d + 1

    def form(self, c, level: int):
        """Value of the level's linear form at ``c`` (exact if ``c`` is exact)."""
        self._check_level(level)
        first = np.asarray(c).reshape(self.n, self.m)[:, 0]
        if level == 0:
            return first[self.j_star]
        coeffs = self.b_exact[level - 1] if np.asarray(c).dtype == object else self.b_coeffs[level - 1]
        return sum(coeffs[k] * first[k] for k in range(self.n))

    def scale(self, level: int) -> float:
        self._check_level(level)
        return 1.0 if level == 0 else float(np.max(self.b_coeffs[level - 1]))

    def _check_level(self, level: int):
        if not 0 <= level <= self.max_level:
            raise ParameterError(f"level {level} outside [0, {self.max_level}]")


def membership(c, level: int, family: HyperplaneFamily, tol: float = 1e-8) -> bool:
    """True iff ``c`` lies on the level's hyperplane up to a relative tolerance.

    The test is ``|form(c)| <= tol * (1 + |c|) * max_k b[level, k]`` (scale 1
    at level 0).  Exact inputs are evaluated exactly before the comparison.
    """
    arr = np.asarray(c)
    if arr.size != family.n * family.m:
        raise StructuralError(f"vector has {arr.size} entries, expected {family.n * family.m}")
    value = abs(float(family.form(arr, level)))
    flt = ex.to_float(arr) if arr.dtype == object else np.asarray(arr, dtype=float)
    return value <= tol * (1.0 + float(np.linalg.norm(flt))) * family.scale(level)


# --------------------------------------------------------------------------- search parameters


@dataclass(frozen=True)
class SearchParams:
    nonmembership_tol: float = 1e-8
    max_attempts: int = 10_000
    radius_growth: float = 2.0
    seed: int = 0
    max_growth_steps: int = 400
    amplification_factor: float = 20.0

    def __post_init__(self):
        if self.nonmembership_tol <= 0:
            raise ParameterError("nonmembership_tol must be positive")
        if self.max_attempts < 1:
            raise ParameterError("max_attempts must be at least 1")
        if self.radius_growth <= 1:
            raise ParameterError("radius_growth must exceed 1")

    def rng(self, *key: int) -> np.random.Generator:
        return streams.chunk_generator(self.seed, 0, streams.SEARCH, _fold(key))


def _fold(key: Sequence[int]) -> int:
    ss = np.random.SeedSequence([int(k) for k in key])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# --------------------------------------------------------------------------- exact RLS mean map


def _info_from_blocks(b_blocks) -> list[np.ndarray]:
    return [ex.inv(ex.exact(b)) for b in b_blocks]


def mean_step(mix: np.ndarray, info: list[np.ndarray], phi_exact: np.ndarray, c: np.ndarray):
    """One exact mean-error step ``(A kron I) diag((J_i + v v')^{-1} J_i) C``.

    ``info[i]`` is the information matrix ``J_i = P_i^{-1}`` before the step.
    Returns the new vector and the updated information matrices.
    """
    n = len(info)
    m = info[0].shape[0]
    blocks = c.reshape(n, m)
    new_info = []
    out = np.empty((n, m), dtype=object)
    for i in range(n):
        v = phi_exact[i]
        if all(x == 0 for x in v):
            new_info.append(info[i])
            out[i] = blocks[i]
            continue
        j_next = info[i] + np.outer(v, v)
        out[i] = ex.solve(j_next, info[i] @ blocks[i])
        new_info.append(j_next)
    return (mix @ out).reshape(-1), new_info


def _mix(topology: NetworkTopology) -> np.ndarray:
    return ex.exact(topology.adjacency)


def _avoids(c, levels: Sequence[int], family: HyperplaneFamily, tol: float) -> bool:
    return all(not membership(c, lv, family, tol) for lv in levels)


def _ball(rng: np.random.Generator, shape, radius: float) -> np.ndarray:
    g = rng.standard_normal(shape)
    dim = g.size
    return radius * g / np.linalg.norm(g) * rng.random() ** (1.0 / dim)


# --------------------------------------------------------------------------- searches


@dataclass(frozen=True)
class EscapeResult:
    z: np.ndarray
    output: np.ndarray
    info: list
    attempts: int


def _find_escape(c, info, mix, family, levels, params, rng, from_level=None) -> EscapeResult:
    tol = params.nonmembership_tol
    if from_level is not None and membership(c, from_level, family, tol):
        raise ContractError(f"escape precondition violated: input lies on level {from_level}")
    n, m = family.n, family.m
    for attempt in range(1, params.max_attempts + 1):
        z = _ball(rng, (n, m), 1.0)
        out, new_info = mean_step(mix, info, ex.exact(z), c)
        if _avoids(out, levels, family, tol):
            return EscapeResult(z=z, output=out, info=new_info, attempts=attempt)
    raise SearchFailure(f"escape search exhausted {params.max_attempts} attempts for levels {list(levels)}",
                        stage="escape", diagnostics={"levels": list(levels)})


def find_escape(c, from_level: int, to_level: int, b_blocks, topology: NetworkTopology,
                family: HyperplaneFamily, params: SearchParams = SearchParams(), key: int = 0) -> np.ndarray:
    """Probe stack ``z`` (shape ``(n, m)``) moving ``c`` off the ``to_level`` hyperplane.

    The output ``(A kron I) Q0(z) c`` with ``Q0(z) = diag((B_i^{-1} + v_i v_i')^{-1} B_i^{-1})``
    is checked to lie outside level ``to_level``.  Probes are drawn uniformly
    from the unit ball; the draw sequence depends only on ``params.seed``
    and ``key``.
    """
    c = ex.exact(c)
    res = _find_escape(c, _info_from_blocks(b_blocks), _mix(topology), family, [to_level], params,
                       params.rng(1, key), from_level=from_level)
    return res.z


def q0_apply(c, b_blocks, z, topology: NetworkTopology) -> np.ndarray:
    """Exact ``(A kron I) Q0(z) c`` for probe stack ``z``."""
    out, _ = mean_step(_mix(topology), _info_from_blocks(b_blocks), ex.exact(z), ex.exact(c))
    return out


@dataclass(frozen=True)
class ExcitationResult:
    zs: list
    outputs: list
    info: list
    lambda_min: float
    attempts: int


def _excite(c, info, mix, family, target_k, params, rng) -> ExcitationResult:
    n, m, d = family.n, family.m, family.d
    tol = params.nonmembership_tol
    if membership(c, d, family, tol):
        raise ContractError(f"excitation precondition violated: input lies on level {d}")
    center = math.sqrt(n * target_k)
    centers = []
    for j in range(m):
        z = np.zeros((n, m))
        z[:, j] = center
        centers.append(z)
    chosen: list[np.ndarray] = []
    outputs = []
    state_c, state_info = c, info
    total = 0
    for j in range(m):
        radius = 0.1 * center
        for attempt in range(1, params.max_attempts + 1):
            total += 1
            z = centers[j] + _ball(rng, (n, m), radius)
            trial = chosen + [z] + centers[j + 1:]
            if not _information_exceeds(info, trial, target_k):
                radius /= 2.0
                continue
            out, new_info = mean_step(mix, state_info, ex.exact(z), state_c)
            if not membership(out, level_after(j + 1, d), family, tol):
                chosen.append(z)
                outputs.append(out)
                state_c, state_info = out, new_info
                break
        else:
            raise SearchFailure(f"excitation search failed on probe {j + 1} of {m}", stage="excite",
                                diagnostics={"probe": j + 1, "radius": radius})
    lam = min(float(np.linalg.eigvalsh(ex.to_float(j_i))[0]) for j_i in state_info)
    return ExcitationResult(zs=chosen, outputs=outputs, info=state_info, lambda_min=lam, attempts=total)


def _information_exceeds(info, zs, bound) -> bool:
    for i, j_i in enumerate(info):
        total = j_i.copy()
        for z in zs:
            v = ex.exact(z[i])
            total = total + np.outer(v, v)
        if not ex.min_eigenvalue_exceeds(total, Fraction(bound)):
            return False
    return True


def excite(c, b_blocks, target_k: float, topology: NetworkTopology, family: HyperplaneFamily,
           params: SearchParams = SearchParams(), key: int = 0) -> list[np.ndarray]:
    """``m`` probe stacks giving every node information above ``target_k``.

    Probe ``j`` starts at ``sqrt(n K) e_j`` on every node and is perturbed
    inside a shrinking ball until both the exact eigenvalue bound and the
    chained hyperplane avoidance hold.
    """
    res = _excite(ex.exact(c), _info_from_blocks(b_blocks), _mix(topology), family, target_k, params,
                  params.rng(2, key))
    return res.zs


@dataclass(frozen=True)
class AmplifyResult:
    v1: np.ndarray
    v2: np.ndarray
    intermediate: np.ndarray
    output: np.ndarray
    info: list
    radii: tuple[float, float]
    c_threshold: float
    attempts: int


def _block_of(c, node: int, m: int):
    return np.asarray(c, dtype=object).reshape(-1, m)[node]


def _q1_apply(c, info_node, v, node, mix, m):
    """``(A kron I) Q1(v) c``: only ``node``'s block is mapped through ``(J + v v')^{-1} J``."""
    blocks = np.asarray(c, dtype=object).reshape(-1, m).copy()
    j_next = info_node + np.outer(v, v)
    blocks[node] = ex.solve(j_next, info_node @ blocks[node])
    return (mix @ blocks).reshape(-1), j_next


def _amplify(c, info_node, mix, family, target_node, target_l, params, rng) -> AmplifyResult:
    n, m, j_star = family.n, family.m, family.j_star
    tol = params.nonmembership_tol
    if m < 2:
        raise PreconditionError("amplification needs m >= 2")
    if membership(c, 1, family, tol):
        raise ContractError("amplification precondition violated: input lies on level 1")
    a_lj = mix[target_node, j_star]
    if a_lj <= 0:
        raise ContractError(f"target node {target_node} does not listen to node {j_star}")
    c_norm = float(np.linalg.norm(ex.to_float(c)))
    b_exact = ex.inv(info_node)
    c_block = _block_of(c, j_star, m)
    row = np.asarray(c, dtype=object).reshape(n, m)
    base1 = sum(mix[j_star, k] * row[k, 0] for k in range(n))
    base2 = sum(mix[j_star, k] * row[k, 1] for k in range(n))
    target = Fraction(target_l)
    attempts = 0
    for _ in range(min(params.max_attempts, 64)):
        attempts += 1
        x = float(rng.standard_normal() * 2.0)
        z = np.zeros(m)
        z[0], z[1] = x, 1.0
        z_e = ex.exact(z)
        bz = b_exact @ z_e
        quad = z_e @ bz
        proj = z_e @ c_block
        h1 = base1 - mix[j_star, j_star] * proj * bz[0] / quad
        h2 = base2 - mix[j_star, j_star] * proj * bz[1] / quad
        if abs(float(h1 * Fraction(x) + h2)) <= tol * (1.0 + c_norm) * (1.0 + abs(x)):
            continue
        z1 = z / np.linalg.norm(z)
        found = _grow_first(c, info_node, mix, family, z1, target_node, target, params)
        if found is None:
            continue
        r1, v1, d_vec, b1_info, z2, offset = found
        second = _grow_second(d_vec, b1_info, mix, family, target_node, target, z2, params)
        if second is None:
            continue
        r2, v2, out, b2_info = second
        return AmplifyResult(v1=v1, v2=v2, intermediate=d_vec, output=out, info=b2_info,
                             radii=(r1, r2), c_threshold=float(offset / a_lj), attempts=attempts)
    raise SearchFailure("amplification search failed", stage="amplify",
                        diagnostics={"attempts": attempts, "target": float(target_l)})


def _gain_form(b1, d_block, m):
    """Symmetric part of ``D1 B1`` where ``D1`` holds ``d_block`` in its first column."""
    d1 = np.full((m, m), Fraction(0), dtype=object)
    d1[:, 0] = d_block
    prod = d1 @ b1
    return (prod + prod.T) / 2


def _positive_direction(w) -> np.ndarray | None:
    """A float direction ``z`` with exact ``z' w z > 0``, or None if none is found."""
    m = w.shape[0]
    candidates = []
    for i in range(m):
        if w[i, i] > 0:
            e = np.zeros(m)
            e[i] = 1.0
            candidates.append(e)
    for i in range(m):
        for j in range(i + 1, m):
            a, b, c = w[i, i], w[i, j], w[j, j]
            if a * c - b * b < 0 and c != 0:
                # the middle of the positive cone of a + 2 b t + c t^2
                e = np.zeros(m)
                if c < 0:
                    e[i], e[j] = 1.0, float(-b / c)
                else:
                    e[i], e[j] = float(-b / a), 1.0 if a != 0 else 0.0
                candidates.append(e)
    wf = ex.to_float(w)
    if np.all(np.isfinite(wf)):
        evals, evecs = np.linalg.eigh((wf + wf.T) / 2.0)
        candidates.append(evecs[:, -1])
    for z in candidates:
        if not np.any(z):
            continue
        z = z / np.linalg.norm(z)
        ze = ex.exact(z)
        if ze @ w @ ze > 0:
            return z
    return None


def _grow_first(c, info_node, mix, family, z1, target_node, target, params):
    """Grow ``r1`` until a second probe can push the target entry past ``target``.

    With ``D = (A kron I) Q1(r1 z1) c``, ``S = sum_i a_li D[i, 0]`` and
    ``M = sym(D1 B1)``, a second probe ``r2 z2`` drives the target entry to
    ``S - a_lj z2' M z2 / z2' B1 z2`` as ``r2`` grows, so it suffices to
    find ``z2`` with ``z2' (a_lj M - (S + target) B1) z2 > 0`` (entry below
    ``-target``) or ``z2' ((S - target) B1 - a_lj M) z2 > 0`` (above ``target``).
    """
    m, j_star = family.m, family.j_star
    tol = params.nonmembership_tol
    a_lj = mix[target_node, j_star]
    r1 = 1.0
    for _ in range(params.max_growth_steps):
        v1 = ex.exact(r1 * z1)
        d_vec, j_next = _q1_apply(c, info_node, v1, j_star, mix, m)
        if not membership(d_vec, 0, family, tol):
            b1 = ex.inv(j_next)
            gain = _gain_form(b1, _block_of(d_vec, j_star, m), m)
            offset = sum(mix[target_node, i] * d_vec[i * m] for i in range(family.n))
            for w, shift in ((a_lj * gain - (offset + target) * b1, offset + target),
                             ((offset - target) * b1 - a_lj * gain, offset - target)):
                z2 = _positive_direction(w)
                if z2 is not None:
                    return r1, ex.to_float(v1), d_vec, j_next, z2, abs(shift)
        r1 *= params.radius_growth
    return None


def _grow_second(d_vec, b1_info, mix, family, target_node, target, z2, params):
    m, j_star, d = family.m, family.j_star, family.d
    tol = params.nonmembership_tol
    r2 = 1.0
    for _ in range(params.max_growth_steps):
        v2 = ex.exact(r2 * z2)
        out, j_next = _q1_apply(d_vec, b1_info, v2, j_star, mix, m)
        if abs(out[target_node * m]) > target and not membership(out, d, family, tol):
            return r2, ex.to_float(v2), out, j_next
        r2 *= params.radius_growth
    return None


def amplify(c, b, target_l: float, topology: NetworkTopology, family: HyperplaneFamily,
            params: SearchParams = SearchParams(), key: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Two probes ``(v1, v2)`` on node ``j_star`` amplifying the target node's error.

    ``b`` is the pivot node's SPD matrix before the first probe.  The pair
    satisfies: ``(A kron I) Q1(v1) c`` is off level 0, ``Q3(v1, v2)`` is off
    level ``d``, and ``|Q3(v1, v2)[target, 0]| > target_l``.
    """
    _, target = return_time_d(topology, family.j_star)
    res = _amplify(ex.exact(c), ex.inv(ex.exact(b)), _mix(topology), family, target, target_l, params,
                   params.rng(3, key))
    return res.v1, res.v2


def q3_value(c, b, v1, v2, topology: NetworkTopology, j_star: int) -> np.ndarray:
    """Explicit composition ``(A kron I) Q2 (A kron I) Q1 c`` with dense block-diagonal matrices."""
    n, m = topology.n, np.asarray(v1).size
    a = ex.exact(topology.adjacency)
    big_a = np.kron(a, ex.eye(m))
    b_e = ex.exact(b)
    b_inv = ex.inv(b_e)
    v1e, v2e = ex.exact(v1), ex.exact(v2)
    b1 = ex.inv(b_inv + np.outer(v1e, v1e))
    b2 = ex.inv(b_inv + np.outer(v1e, v1e) + np.outer(v2e, v2e))

    def probe_matrix(block):
        q = ex.eye(n * m)
        q[j_star * m:(j_star + 1) * m, j_star * m:(j_star + 1) * m] = block
        return q

    q1 = probe_matrix(b1 @ b_inv)
    q2 = probe_matrix(b2 @ ex.inv(b1))
    return big_a @ q2 @ big_a @ q1 @ ex.exact(c)


# --------------------------------------------------------------------------- schedule


@dataclass
class AdversarialSchedule:
    """Finite regressor schedule ``Phi_0 .. Phi_T`` with its construction record."""

    phis: np.ndarray  # (T + 1, n, m)
    checkpoints: list[int]
    j_star: int
    d: int
    target_node: int
    adjacency: np.ndarray
    e_theta0_error: np.ndarray
    seed: int = 0
    radii: list = field(default_factory=list)
    verification: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.phis.shape[1]

    @property
    def m(self) -> int:
        return self.phis.shape[2]

    @property
    def block_length(self) -> int:
        return (self.m + 3) * (self.d + 1)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n": self.n,
            "m": self.m,
            "j_star": self.j_star,
            "d": self.d,
            "target_node": self.target_node,
            "seed": self.seed,
            "adjacency": self.adjacency.ravel().tolist(),
            "e_theta0_error": np.asarray(self.e_theta0_error, dtype=float).tolist(),
            "phis": [p.ravel().tolist() for p in self.phis],
            "checkpoints": list(self.checkpoints),
            "radii": self.radii,
            "verification": self.verification,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "AdversarialSchedule":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise StructuralError(f"unsupported schedule schema {data.get('schema_version')!r}")
        n, m = int(data["n"]), int(data["m"])
        phis = np.array(data["phis"], dtype=float).reshape(-1, n, m)
        return cls(phis=phis, checkpoints=[int(t) for t in data["checkpoints"]], j_star=int(data["j_star"]),
                   d=int(data["d"]), target_node=int(data["target_node"]),
                   adjacency=np.array(data["adjacency"], dtype=float).reshape(n, n),
                   e_theta0_error=np.array(data["e_theta0_error"], dtype=float), seed=int(data.get("seed", 0)),
                   radii=list(data.get("radii", [])), verification=dict(data.get("verification", {})))

    @classmethod
    def from_json(cls, path) -> "AdversarialSchedule":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @property
    def topology(self) -> NetworkTopology:
        return NetworkTopology(self.adjacency)


def pivot_node(e_theta0_error, m: int) -> int:
    """First node whose first error coordinate is nonzero."""
    e = np.asarray(e_theta0_error, dtype=float).reshape(-1, m)
    nz = np.flatnonzero(e[:, 0] != 0)
    if nz.size == 0:
        raise ContractError("the initial mean error has a zero first coordinate at every node")
    return int(nz[0])


def build_divergent_schedule(topology: NetworkTopology, m: int, e_theta0_error, blocks: int,
                             params: SearchParams = SearchParams()) -> AdversarialSchedule:
    """Construct ``Phi_0 .. Phi_{t_blocks}`` whose mean error outgrows ``20 (t + 1)**4``.

    The returned schedule carries the builder's record (per-step hyperplane
    avoidance, checkpoint magnitudes, probe radii).  Check it with
    :func:`verify_dd`, which shares no state with the builder.
    """
    n = topology.n
    if m < 2:
        raise PreconditionError("divergent schedules need m >= 2")
    if blocks < 0:
        raise ParameterError("blocks must be nonnegative")
    if not check_assumption_a1(topology).irreducible:
        raise PreconditionError("the adjacency must be irreducible")
    e0 = np.asarray(e_theta0_error, dtype=float).ravel()
    if e0.size != n * m:
        raise StructuralError(f"initial error has {e0.size} entries, expected {n * m}")
    j_star = pivot_node(e0, m)
    family = HyperplaneFamily.build(topology, j_star, m)
    d, target = return_time_d(topology, j_star)
    tol = params.nonmembership_tol
    mix = _mix(topology)
    info = [ex.eye(m) for _ in range(n)]
    block_len = (m + 3) * (d + 1)
    phis: list[np.ndarray] = []
    radii: list[dict] = []
    record_steps: list[dict] = []
    checkpoints_rec: list[dict] = []

    def fail(block, stage, exc):
        raise SearchFailure(f"block {block}, stage {stage}: {exc}", stage=f"block {block}: {stage}",
                            diagnostics=getattr(exc, "diagnostics", None)) from exc

    c = ex.exact(e0)
    try:
        res = _find_escape(c, info, mix, family, [d], params, params.rng(0, 0), from_level=0)
    except (SearchFailure, ContractError) as exc:
        fail(0, "initial escape", exc)
    phis.append(res.z)
    c, info = res.output, res.info
    record_steps.append({"t": 0, "level": d, "attempts": res.attempts})
    checkpoints_rec.append(_checkpoint_entry(0, c, target, m, params.amplification_factor))

    for k in range(blocks):
        t_k = k * block_len
        try:
            exc_res = _excite(c, info, mix, family, t_k + m + 1, params, params.rng(2, k))
        except (SearchFailure, ContractError) as exc:
            fail(k, "excite", exc)
        for j, (z, out) in enumerate(zip(exc_res.zs, exc_res.outputs), start=1):
            phis.append(z)
            record_steps.append({"t": t_k + j, "level": level_after(j, d), "stage": "excite"})
        c, info = exc_res.outputs[-1], exc_res.info
        radii.append({"block": k, "excite_max_norm": float(max(np.abs(z).max() for z in exc_res.zs))})
        last_escape = block_len - 2
        for j in range(m + 1, last_escape + 1):
            levels = [level_after(j, d)]
            if j == last_escape and 1 not in levels:
                levels.append(1)
            try:
                res = _find_escape(c, info, mix, family, levels, params, params.rng(1, k, j))
            except SearchFailure as exc:
                fail(k, f"escape step {j}", exc)
            phis.append(res.z)
            c, info = res.output, res.info
            record_steps.append({"t": t_k + j, "level": levels[0], "stage": "escape",
                                 "attempts": res.attempts})
        t_next = t_k + block_len
        target_l = params.amplification_factor * (t_next + 1) ** 4
        try:
            amp = _amplify(c, info[j_star], mix, family, target, target_l, params, params.rng(3, k))
        except (SearchFailure, ContractError) as exc:
            fail(k, "amplify", exc)
        for v, t in ((amp.v1, t_next - 1), (amp.v2, t_next)):
            phi = np.zeros((n, m))
            phi[j_star] = v
            phis.append(phi)
        record_steps.append({"t": t_next - 1, "level": 0, "stage": "amplify"})
        record_steps.append({"t": t_next, "level": d, "stage": "amplify"})
        c = amp.output
        info = list(info)
        info[j_star] = amp.info
        radii[-1].update({"amplify_r1": amp.radii[0], "amplify_r2": amp.radii[1],
                          "threshold": amp.c_threshold})
        checkpoints_rec.append(_checkpoint_entry(t_next, c, target, m, params.amplification_factor))

    schedule = AdversarialSchedule(
        phis=np.array(phis), checkpoints=[k * block_len for k in range(blocks + 1)], j_star=j_star, d=d,
        target_node=target, adjacency=np.array(topology.adjacency), e_theta0_error=e0, seed=params.seed,
        radii=radii, verification={"builder": {"steps": record_steps, "checkpoints": checkpoints_rec}},
    )
    return schedule


def _checkpoint_entry(t: int, c, target: int, m: int, factor: float) -> dict:
    value = float(c[target * m])
    return {
        "t": t,
        "target_value": value,
        "R": ex.to_float(c).tolist(),
        "margin_16": abs(value) / (16.0 * (t + 1) ** 4),
        "margin_target": abs(value) / (factor * (t + 1) ** 4),
    }


# --------------------------------------------------------------------------- independent replay


def mean_trajectory(phis, topology: NetworkTopology, e_theta0_error) -> tuple[np.ndarray, int | None]:
    """Float replay of ``R_t`` for every prefix of ``phis``.

    Returns ``(R, saturated_at)`` where ``R[t]`` is ``R_t`` (shape
    ``(T + 1, n * m)``) and ``saturated_at`` is the first step whose
    magnitude exceeded ``1e290`` (``None`` if never); entries after
    saturation repeat the last finite value.
    """
    phis = np.asarray(phis, dtype=float)
    steps, n, m = phis.shape
    a = topology.adjacency
    info = np.broadcast_to(np.eye(m), (n, m, m)).copy()
    c = np.asarray(e_theta0_error, dtype=float).reshape(n, m).copy()
    out = np.empty((steps, n * m))
    saturated = None
    for t in range(steps):
        if saturated is None:
            phi = phis[t]
            info_next = info + phi[:, :, None] * phi[:, None, :]
            blocks = np.linalg.solve(info_next, np.einsum("nij,nj->ni", info, c)[..., None])[..., 0]
            nxt = a @ blocks
            if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > SATURATION:
                saturated = t
            else:
                c, info = nxt, info_next
        out[t] = c.ravel()
    return out, saturated


def exact_mean_trajectory(phis, topology: NetworkTopology, e_theta0_error) -> list[np.ndarray]:
    """Exact ``R_t`` via the gain form ``(I - L phi') C`` with ``L = (I + sum phi phi')^{-1} phi``.

    Deliberately a different code path from the builder, which uses
    ``(J + v v')^{-1} J C``.
    """
    phis = np.asarray(phis, dtype=float)
    steps, n, m = phis.shape
    a = ex.exact(topology.adjacency)
    gram = [ex.eye(m) for _ in range(n)]
    c = ex.exact(np.asarray(e_theta0_error, dtype=float)).reshape(n, m)
    out = []
    for t in range(steps):
        phi = ex.exact(phis[t])
        nxt = np.empty((n, m), dtype=object)
        for i in range(n):
            gram[i] = gram[i] + np.outer(phi[i], phi[i])
            gain = ex.solve(gram[i], phi[i])
            nxt[i] = c[i] - gain * (phi[i] @ c[i])
        c = a @ nxt
        out.append(c.reshape(-1).copy())
    return out


def verify_dd(schedule: AdversarialSchedule, topology: NetworkTopology | None = None, e_theta0_error=None,
              tol: float = 1e-8, factor: float = 20.0) -> dict:
    """Recheck every divergence condition from the raw schedule.

    For every block ``k`` with ``t_k = k (m + 3)(d + 1)``:

    * ``R_{t_k + j}`` avoids level ``(d - j) mod (d + 1)`` for ``j = 0 .. block length``;
    * ``lambda_min(sum_{i <= t_k + m} Phi_i Phi_i') > t_k + m`` at every node;
    * ``|R_{t_{k+1}}[target, 0]| > factor (t_{k+1} + 1)**4``.

    Returns a JSON-ready record with per-block results, margins against
    ``16 (t + 1)**4`` and the overall ``verdict``.
    """
    top = topology if topology is not None else schedule.topology
    e0 = schedule.e_theta0_error if e_theta0_error is None else np.asarray(e_theta0_error, dtype=float)
    n, m = schedule.n, schedule.m
    j_star = pivot_node(e0, m)
    family = HyperplaneFamily.build(top, j_star, m)
    d, target = return_time_d(top, j_star)
    block_len = (m + 3) * (d + 1)
    steps = schedule.phis.shape[0]
    blocks = (steps - 1) // block_len
    if blocks * block_len + 1 != steps:
        return {"verdict": False, "error": f"schedule length {steps} is not 1 + k * {block_len}"}
    traj = exact_mean_trajectory(schedule.phis, top, e0)
    grams = _cumulative_grams(schedule.phis)
    verdict = True
    base_ok = not membership(traj[0], d, family, tol)
    verdict &= base_ok
    per_block = []
    for k in range(blocks):
        t_k = k * block_len
        avoid = []
        for j in range(1, block_len + 1):
            lv = level_after(j, d)
            avoid.append({"t": t_k + j, "level": lv, "ok": not membership(traj[t_k + j], lv, family, tol)})
        t_info = t_k + m
        lam_ok = all(ex.min_eigenvalue_exceeds(grams[t_info][i], t_info) for i in range(n))
        lam_val = min(float(np.linalg.eigvalsh(ex.to_float(grams[t_info][i]))[0]) for i in range(n))
        t_next = t_k + block_len
        value = traj[t_next][target * m]
        amp_ok = abs(value) > Fraction(factor) * (t_next + 1) ** 4
        ok = all(x["ok"] for x in avoid) and lam_ok and amp_ok
        verdict &= ok
        per_block.append({
            "block": k,
            "t_k": t_k,
            "avoidance": avoid,
            "lambda_min_gram": lam_val,
            "lambda_bound": t_info,
            "lambda_ok": lam_ok,
            "checkpoint": t_next,
            "target_value": float(value),
            "amplification_ok": amp_ok,
            "margin_16": float(abs(value)) / (16.0 * (t_next + 1) ** 4),
            "margin_target": float(abs(value)) / (factor * (t_next + 1) ** 4),
            "ok": ok,
        })
    return {
        "verdict": bool(verdict),
        "j_star": j_star,
        "d": d,
        "target_node": target,
        "blocks": blocks,
        "initial_escape_ok": base_ok,
        "per_block": per_block,
        "checkpoint_R": {str(k * block_len): ex.to_float(traj[k * block_len]).tolist() for k in range(blocks + 1)},
    }


def _cumulative_grams(phis) -> list[list[np.ndarray]]:
    steps, n, m = phis.shape
    acc = [np.full((m, m), Fraction(0), dtype=object) for _ in range(n)]
    out = []
    for t in range(steps):
        phi = ex.exact(phis[t])
        acc = [acc[i] + np.outer(phi[i], phi[i]) for i in range(n)]
        out.append(acc)
    return out


def exact_checkpoint_values(schedule: AdversarialSchedule) -> dict[int, np.ndarray]:
    """Float rendering of the verifier's exact ``R_t`` at every checkpoint."""
    traj = exact_mean_trajectory(schedule.phis, schedule.topology, schedule.e_theta0_error)
    return {t: ex.to_float(traj[t]) for t in schedule.checkpoints}


def exact_linear_maps(schedule: AdversarialSchedule):
    """Per-step exact transition matrices for Monte Carlo with noise.

    Returns ``(transitions, noise_gains)`` as float arrays of shapes
    ``(T + 1, nm, nm)`` and ``(T + 1, nm, n)`` with
    ``err_{t+1} = transitions[t] @ err_t + noise_gains[t] @ V_t``, each
    computed exactly and rounded once.
    """
    phis = schedule.phis
    steps, n, m = phis.shape
    a = ex.exact(schedule.adjacency)
    big_a = np.kron(a, ex.eye(m))
    gram = [ex.eye(m) for _ in range(n)]
    transitions = np.empty((steps, n * m, n * m))
    noise_gains = np.empty((steps, n * m, n))
    for t in range(steps):
        phi = ex.exact(phis[t])
        local = ex.eye(n * m)
        gains = np.full((n * m, n), Fraction(0), dtype=object)
        for i in range(n):
            gram[i] = gram[i] + np.outer(phi[i], phi[i])
            gain = ex.solve(gram[i], phi[i])
            sl = slice(i * m, (i + 1) * m)
            local[sl, sl] = ex.eye(m) - np.outer(gain, phi[i])
            gains[sl, i] = gain
        transitions[t] = ex.to_float(big_a @ local)
        noise_gains[t] = ex.to_float(big_a @ gains)
    return transitions, noise_gains
