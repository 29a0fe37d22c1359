"""Network model: problem data, channel generator and exact evaluators.

All evaluators are pure functions of ``(inst, H, decision, P)`` and follow
the single-cell downlink model in which every subcarrier is either idle,
serves one user (OMA) or serves an ordered (first, second) user pair with
superposition coding (NOMA).  Rates and utilities are expressed in
``log(inst.log_base)`` units, bits by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    'ContractError',
    'NetworkInstance',
    'ChannelModelParams',
    'ChannelRealization',
    'AccessDecision',
    'PowerMatrix',
    'ConstraintReport',
    'P_MIN',
    'generate_instance',
    'uniform_powers',
    'user_rates',
    'subcarrier_rate',
    'sp_rate',
    'sp_rates',
    'noma_cost',
    'total_utility',
    'power_objective',
    'check_feasibility',
    'save_instance',
    'load_instance',
]

#: Floor applied to an active NOMA first-user power inside log terms.
P_MIN = 1e-9


class ContractError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True)
class NetworkInstance:
    """Static problem data shared by every channel realization.

    Parameters
    ----------
    K, N, S : int
        Number of users, subcarriers and service providers.
    sp_of : sequence of int
        Service provider index of every user (length ``K``).
    R_s : sequence of float
        Minimum aggregate rate of every SP, in ``log_base`` units.
    P_max : float
        Total base-station power budget (W).
    P_d : float
        Minimum normalized received-power gap required for SIC.
    noise_var : float
        Noise variance sigma^2.
    cost_A, cost_V : float
        Constant and SINR-dependent NOMA cost, already scaled by the
        normalizing weight.
    log_base : float
        Base of every rate logarithm.
    """

    K: int
    N: int
    S: int
    sp_of: Tuple[int, ...]
    R_s: Tuple[float, ...]
    P_max: float = 100.0
    P_d: float = 0.01
    noise_var: float = 1.0
    cost_A: float = 2.0
    cost_V: float = 2.0
    log_base: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, 'sp_of', tuple(int(s) for s in self.sp_of))
        object.__setattr__(self, 'R_s', tuple(float(r) for r in self.R_s))
        if self.K < 1 or self.N < 1 or self.S < 1:
            raise ContractError('K, N and S must all be >= 1')
        if len(self.sp_of) != self.K:
            raise ContractError('sp_of must list one SP per user')
        if len(self.R_s) != self.S:
            raise ContractError('R_s must list one rate per SP')
        if any(s < 0 or s >= self.S for s in self.sp_of):
            raise ContractError('sp_of entries must lie in [0, S)')
        if set(self.sp_of) != set(range(self.S)):
            raise ContractError('every SP needs at least one user')
        if not self.P_max > 0 or not self.noise_var > 0:
            raise ContractError('P_max and noise_var must be positive')
        if self.P_d < 0 or self.cost_A < 0 or self.cost_V < 0:
            raise ContractError('P_d, cost_A and cost_V must be nonnegative')
        if any(r < 0 for r in self.R_s):
            raise ContractError('R_s must be nonnegative')
        if not self.log_base > 1:
            raise ContractError('log_base must exceed 1')

    @classmethod
    def default(cls, K: int = 20, N: int = 10, S: int = 2,
                R_s: Union[float, Sequence[float]] = 48.0, **kwargs):
        """Build an instance with users dealt round-robin over the SPs."""
        if np.isscalar(R_s):
            R_s = [float(R_s)] * S
        return cls(K=K, N=N, S=S, sp_of=tuple(k % S for k in range(K)),
                   R_s=tuple(R_s), **kwargs)

    @property
    def sp_array(self) -> np.ndarray:
        return np.asarray(self.sp_of, dtype=np.int64)

    @property
    def rate_targets(self) -> np.ndarray:
        return np.asarray(self.R_s, dtype=float)

    @property
    def ln_base(self) -> float:
        return math.log(self.log_base)

    def users_of(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.sp_array == s)

    def replace(self, **changes) -> 'NetworkInstance':
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class ChannelModelParams:
    """Path loss times Rayleigh fading over a square cell.

    ``edge_fraction=None`` places every user uniformly over the whole
    square; a number in ``[0, 1]`` puts that fraction of the users in the
    edge region (outside the centered half-side square) and the rest in the
    central square.  ``fading='none'`` forces unit small-scale gains.
    """

    pathloss_exp: float = 3.0
    area_side: float = 1.0
    edge_fraction: Optional[float] = None
    seed: Union[int, Sequence[int], None] = 0
    fading: str = 'rayleigh'

    def __post_init__(self):
        if not self.pathloss_exp >= 0:
            raise ContractError('pathloss_exp must be nonnegative')
        if not self.area_side > 0:
            raise ContractError('area_side must be positive')
        if self.edge_fraction is not None and not 0 <= self.edge_fraction <= 1:
            raise ContractError('edge_fraction must lie in [0, 1]')
        if self.fading not in ('rayleigh', 'none'):
            raise ContractError(f'unknown fading model {self.fading!r}')


@dataclass(frozen=True)
class ChannelRealization:
    """Channel gains ``h`` (K x N) with the raw draws that produced them."""

    h: np.ndarray
    positions: Optional[np.ndarray] = None
    fading: Optional[np.ndarray] = None

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        if h.ndim != 2:
            raise ContractError('h must be a K x N matrix')
        if not np.all(np.isfinite(h)) or np.any(h <= 0):
            raise ContractError('channel gains must be finite and positive')
        h.setflags(write=False)
        object.__setattr__(self, 'h', h)
        if self.positions is not None:
            pos = np.array(self.positions, dtype=float)
            pos.setflags(write=False)
            object.__setattr__(self, 'positions', pos)

    @property
    def shape(self):
        return self.h.shape


def _gains(H) -> np.ndarray:
    return H.h if isinstance(H, ChannelRealization) else np.asarray(H, float)


def generate_instance(params: ChannelModelParams,
                      topology: NetworkInstance) -> ChannelRealization:
    """Draw user positions and fading, and return ``h = d^-alpha * s``.

    The base station sits at the center of the square.  The generator is a
    fresh ``numpy.random.Generator`` seeded with ``params.seed`` so equal
    seeds give bit-identical realizations.
    """
    rng = np.random.default_rng(params.seed)
    K, N = topology.K, topology.N
    side = params.area_side
    center = np.array([side / 2, side / 2])

    if params.edge_fraction is None:
        regions = np.full(K, -1)
    else:
        n_edge = int(round(params.edge_fraction * K))
        regions = np.r_[np.ones(n_edge, int), np.zeros(K - n_edge, int)]

    positions = np.empty((K, 2))
    for k in range(K):
        while True:
            if regions[k] == 0:
                xy = center + rng.uniform(-side / 4, side / 4, size=2)
            else:
                xy = rng.uniform(0.0, side, size=2)
                if regions[k] == 1 and np.all(np.abs(xy - center) <= side / 4):
                    continue
            # a user exactly on the BS has infinite gain
            if np.hypot(*(xy - center)) > 0:
                break
        positions[k] = xy

    dist = np.hypot(*(positions - center).T)
    if params.fading == 'rayleigh':
        fading = rng.exponential(1.0, size=(K, N))
    else:
        fading = np.ones((K, N))
    h = dist[:, None] ** (-params.pathloss_exp) * fading
    return ChannelRealization(h=h, positions=positions, fading=fading)


@dataclass
class AccessDecision:
    """Binary assignment ``alpha`` (K, K, N), technology ``beta`` (N,) and
    the auxiliary product ``u`` (K, K, N)."""

    alpha: np.ndarray
    beta: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.int8)
        self.beta = np.asarray(self.beta, dtype=np.int8)
        self.u = np.asarray(self.u, dtype=np.int8)

    @property
    def K(self) -> int:
        return self.alpha.shape[0]

    @property
    def N(self) -> int:
        return self.alpha.shape[2]

    @classmethod
    def empty(cls, K: int, N: int) -> 'AccessDecision':
        return cls(np.zeros((K, K, N)), np.zeros(N), np.zeros((K, K, N)))

    @classmethod
    def from_pairs(cls, K: int, first: Sequence[int],
                   second: Sequence[int]) -> 'AccessDecision':
        """Build a decision from per-subcarrier user indices.

        ``first[n]`` is the OMA user or NOMA first user (``-1`` for idle);
        ``second[n]`` is the NOMA second user or ``-1``.
        """
        N = len(first)
        dec = cls.empty(K, N)
        for n, (k1, k2) in enumerate(zip(first, second)):
            if k1 < 0:
                if k2 >= 0:
                    raise ContractError('a second user needs a first user')
                continue
            dec.alpha[k1, k1, n] = 1
            if k2 >= 0:
                if k2 == k1:
                    raise ContractError('a NOMA pair needs two distinct users')
                dec.alpha[k1, k2, n] = 1
                dec.u[k1, k2, n] = 1
                dec.beta[n] = 1
        return dec

    def pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """Inverse of :meth:`from_pairs`."""
        first = np.full(self.N, -1)
        second = np.full(self.N, -1)
        diag = np.einsum('kkn->kn', self.alpha)
        for n in range(self.N):
            users = np.flatnonzero(diag[:, n])
            if users.size:
                first[n] = users[0]
                partners = np.flatnonzero(self.u[users[0], :, n])
                if partners.size:
                    second[n] = partners[0]
        return first, second

    def modes(self):
        """Per-subcarrier label: ``'idle'``, ``'oma'`` or ``'noma'``."""
        first, second = self.pairs()
        return ['idle' if f < 0 else ('noma' if s >= 0 else 'oma')
                for f, s in zip(first, second)]

    def key(self) -> bytes:
        return self.alpha.tobytes() + self.beta.tobytes()

    def copy(self) -> 'AccessDecision':
        return AccessDecision(self.alpha.copy(), self.beta.copy(), self.u.copy())

    def validate(self, H=None) -> None:
        """Raise :class:`ContractError` unless every structural invariant holds.

        With ``H`` given the SIC ordering (second gain not above the first)
        is checked too.
        """
        K, N = self.K, self.N
        if self.alpha.shape != (K, K, N) or self.u.shape != (K, K, N) \
                or self.beta.shape != (N,):
            raise ContractError('inconsistent decision shapes')
        for arr in (self.alpha, self.beta, self.u):
            if np.any((arr != 0) & (arr != 1)):
                raise ContractError('decision variables must be binary')
        diag = np.einsum('kkn->kn', self.alpha)
        off = ~np.eye(K, dtype=bool)[:, :, None]
        expected_u = self.beta[None, None, :] * diag[:, None, :] * self.alpha
        if np.any((self.u != expected_u) & off):
            raise ContractError('u must equal beta * alpha_kk * alpha_kk2')
        if np.any(np.einsum('kkn->kn', self.u)):
            raise ContractError('u is undefined on the diagonal')
        if np.any(diag.sum(axis=0) > 1):
            raise ContractError('at most one OMA/first user per subcarrier')
        n_pairs = (self.u * off).sum(axis=(0, 1))
        if np.any(n_pairs > 1):
            raise ContractError('at most one NOMA pair per subcarrier')
        if np.any(n_pairs != self.beta):
            raise ContractError('beta_n must equal the number of NOMA pairs')
        # stray second-user flags with no first user or beta = 0
        stray = (self.alpha * off) & ~(self.u.astype(bool))
        if np.any(stray):
            raise ContractError('alpha pair entries must coincide with u')
        if H is not None:
            h = _gains(H)
            k1, k2, n = np.nonzero(self.u * off)
            if np.any(h[k2, n] > h[k1, n]):
                raise ContractError('NOMA second user has the larger gain')


@dataclass
class PowerMatrix:
    """Nonnegative transmit powers ``p`` (K x N), in watts."""

    p: np.ndarray

    def __post_init__(self):
        self.p = np.array(self.p, dtype=float)
        if self.p.ndim != 2:
            raise ContractError('p must be a K x N matrix')
        if np.any(self.p < 0) or not np.all(np.isfinite(self.p)):
            raise ContractError('powers must be finite and nonnegative')

    @classmethod
    def zeros(cls, K: int, N: int) -> 'PowerMatrix':
        return cls(np.zeros((K, N)))


def _powers(P) -> np.ndarray:
    return P.p if isinstance(P, PowerMatrix) else np.asarray(P, float)


def uniform_powers(inst: NetworkInstance) -> PowerMatrix:
    """P_max spread over the N subcarriers and over two potential users."""
    return PowerMatrix(np.full((inst.K, inst.N), inst.P_max / (2 * inst.N)))


def _log(x, inst):
    return np.log(x) / inst.ln_base


def user_rates(inst: NetworkInstance, H, decision: AccessDecision, P):
    """Per-user, per-subcarrier achieved rate (K x N).

    An OMA or first user gets ``log(1 + p h / sigma^2)``; a NOMA second user
    gets ``log(1 + p2 h2 / (p1 h2 + sigma^2))`` on subcarriers with
    ``beta_n = 1``.
    """
    h, p = _gains(H), _powers(P)
    s2 = inst.noise_var
    diag = np.einsum('kkn->kn', decision.alpha).astype(float)
    rates = diag * _log(1.0 + p * h / s2, inst)
    off = ~np.eye(decision.K, dtype=bool)[:, :, None]
    # weight[k1, k2, n] = beta_n * alpha_{k1,k1,n} * alpha_{k1,k2,n}
    weight = (decision.beta[None, None, :] * diag[:, None, :]
              * decision.alpha * off)
    if np.any(weight):
        # interference seen by the second user k2 from first user k1
        second = _log(1.0 + p[None, :, :] * h[None, :, :]
                      / (p[:, None, :] * h[None, :, :] + s2), inst)
        rates = rates + (weight * second).sum(axis=0)
    return rates


def subcarrier_rate(inst: NetworkInstance, H, decision: AccessDecision, P,
                    n: int) -> float:
    """Total rate carried by subcarrier ``n``."""
    return float(user_rates(inst, H, decision, P)[:, n].sum())


def sp_rates(inst: NetworkInstance, H, decision: AccessDecision, P) -> np.ndarray:
    """Aggregate rate of every SP (length S)."""
    per_user = user_rates(inst, H, decision, P).sum(axis=1)
    return np.bincount(inst.sp_array, weights=per_user, minlength=inst.S)


def sp_rate(inst: NetworkInstance, H, decision: AccessDecision, P,
            s: int) -> float:
    return float(sp_rates(inst, H, decision, P)[s])


def _pair_cost_terms(inst, h, p, decision):
    diag = np.einsum('kkn->kn', decision.alpha)
    off = ~np.eye(decision.K, dtype=bool)[:, :, None]
    weight = decision.alpha * diag[:, None, :] * off
    p1 = np.maximum(p, P_MIN)
    ratio = (h[:, None, :] * p[None, :, :] + inst.noise_var) \
        / (h[:, None, :] * p1[:, None, :])
    return np.where(weight > 0, _log(ratio, inst), 0.0).sum(axis=(0, 1))


def noma_cost(inst: NetworkInstance, H, decision: AccessDecision, P,
              n: int) -> float:
    """NOMA processing cost ``A + V log((h1 p2 + s2) / (h1 p1))`` of one
    subcarrier.

    The value is not gated by ``beta_n``; :func:`total_utility` applies the
    gate.  A zero first-user power is floored at :data:`P_MIN`.
    """
    h, p = _gains(H), _powers(P)
    return float(inst.cost_A
                 + inst.cost_V * _pair_cost_terms(inst, h, p, decision)[n])


def total_utility(inst: NetworkInstance, H, decision: AccessDecision, P) -> float:
    """Sum rate minus the beta-gated NOMA cost."""
    h, p = _gains(H), _powers(P)
    rate = user_rates(inst, H, decision, P).sum()
    beta = decision.beta.astype(float)
    cost = beta * (inst.cost_A
                   + inst.cost_V * _pair_cost_terms(inst, h, p, decision))
    return float(rate - cost.sum())


def power_objective(inst: NetworkInstance, H, decision: AccessDecision, P) -> float:
    """Utility without the constant ``A`` charge, i.e. the part that depends
    on the powers."""
    return total_utility(inst, H, decision, P) \
        + inst.cost_A * float(decision.beta.sum())


@dataclass
class ConstraintReport:
    """Slack of every master-problem constraint; negative slack = violated."""

    sp_slack: np.ndarray
    sic_slack: np.ndarray
    ordering_violations: int
    cardinality_violations: int
    linkage_violations: int
    power_slack: float
    tol: float
    feasible: bool = field(init=False)

    def __post_init__(self):
        self.feasible = bool(
            np.all(self.sp_slack >= -self.tol)
            and np.all(self.sic_slack >= -self.tol)
            and self.ordering_violations == 0
            and self.cardinality_violations == 0
            and self.linkage_violations == 0
            and self.power_slack >= -self.tol)

    @property
    def max_violation(self) -> float:
        worst = max(0.0, -float(np.min(self.sp_slack, initial=0.0)),
                    -float(np.min(self.sic_slack, initial=0.0)),
                    -self.power_slack)
        if self.ordering_violations or self.cardinality_violations \
                or self.linkage_violations:
            worst = math.inf
        return worst


def check_feasibility(inst: NetworkInstance, H, decision: AccessDecision, P,
                      tol: float = 1e-6) -> ConstraintReport:
    """Evaluate every constraint of the master problem.

    Strict inequalities are treated as ``>=`` with tolerance ``tol``.
    Infeasibility is reported, never raised.
    """
    h, p = _gains(H), _powers(P)
    K, N = decision.K, decision.N
    s2 = inst.noise_var
    diag = np.einsum('kkn->kn', decision.alpha).astype(float)
    off = ~np.eye(K, dtype=bool)[:, :, None]
    pair = decision.alpha * diag[:, None, :] * off

    sp_slack = sp_rates(inst, H, decision, P) - inst.rate_targets

    # received-power gap of the active pair, first user k
    gap = np.einsum('kn,kjn,jn->n', diag * h / s2, pair, p) \
        - np.einsum('kn,kn,kjn->n', diag * h / s2, p, pair)
    sic_slack = decision.beta * (gap - inst.P_d)

    k1, k2, n = np.nonzero(decision.u * off)
    ordering = int(np.sum(h[k2, n] > h[k1, n]))

    u_off = decision.u * off
    card = int(np.sum(u_off.sum(axis=(0, 1)) > 1))
    card += int(np.sum(diag.sum(axis=0) > 1))
    card += int(np.sum(np.einsum('kjn,kn->n', pair, diag) != decision.beta))

    served = decision.alpha.sum(axis=0)  # sum over k' of alpha_{k',k,n}
    linkage = int(np.sum(p - served * inst.P_max > tol))

    used = np.einsum('kn,kn->', diag, p) + np.einsum('kjn,jn->', pair, p)
    power_slack = inst.P_max - float(used)

    return ConstraintReport(sp_slack=sp_slack, sic_slack=sic_slack,
                            ordering_violations=ordering,
                            cardinality_violations=card,
                            linkage_violations=linkage,
                            power_slack=power_slack, tol=tol)


def _fmt(x: float) -> str:
    return '%.17g' % x


def save_instance(path, inst: NetworkInstance, H) -> None:
    """Write ``inst`` and the realization ``H`` in the line-oriented format.

    Header ``K N S sigma2 Pmax Pd A V logbase``, then ``s R_s`` per SP,
    ``k sp x y`` per user and ``k n h`` for every gain.
    """
    h = _gains(H)
    pos = getattr(H, 'positions', None)
    lines = [' '.join([str(inst.K), str(inst.N), str(inst.S)]
                      + [_fmt(v) for v in (inst.noise_var, inst.P_max,
                                           inst.P_d, inst.cost_A,
                                           inst.cost_V, inst.log_base)])]
    lines += [f'{s} {_fmt(r)}' for s, r in enumerate(inst.R_s)]
    for k in range(inst.K):
        x, y = (pos[k] if pos is not None else (math.nan, math.nan))
        lines.append(f'{k} {inst.sp_of[k]} {_fmt(x)} {_fmt(y)}')
    for k in range(inst.K):
        for n in range(inst.N):
            lines.append(f'{k} {n} {_fmt(h[k, n])}')
    Path(path).write_text('\n'.join(lines) + '\n')


def load_instance(path) -> Tuple[NetworkInstance, ChannelRealization]:
    """Inverse of :func:`save_instance`."""
    rows = [ln.split() for ln in Path(path).read_text().splitlines()
            if ln.strip()]
    head = rows[0]
    K, N, S = (int(v) for v in head[:3])
    sigma2, pmax, pd, A, V, base = (float(v) for v in head[3:9])
    R_s = [0.0] * S
    for s, r in rows[1:1 + S]:
        R_s[int(s)] = float(r)
    sp_of = [0] * K
    pos = np.empty((K, 2))
    for k, sp, x, y in rows[1 + S:1 + S + K]:
        sp_of[int(k)] = int(sp)
        pos[int(k)] = float(x), float(y)
    h = np.empty((K, N))
    for k, n, v in rows[1 + S + K:1 + S + K + K * N]:
        h[int(k), int(n)] = float(v)
    inst = NetworkInstance(K=K, N=N, S=S, sp_of=sp_of, R_s=R_s, P_max=pmax,
                           P_d=pd, noise_var=sigma2, cost_A=A, cost_V=V,
                           log_base=base)
    positions = None if np.all(np.isnan(pos)) else pos
    return inst, ChannelRealization(h=h, positions=positions)
