"""Statevector simulation of a laser-driven Rydberg atom chain.

The chain Hamiltonian (units: rad/us, um, us) is

    H = (Omega/2) sum_j (|g_j><r_j| + |r_j><g_j|)
        + sum_{j<k} V_jk n_j n_k
        - sum_j (Delta_g + alpha_j * Delta_l_j) n_j,

with van der Waals couplings V_jk = C6 / (|j-k| * spacing)^6 on a 1-D chain.
Basis convention: bit j of a computational index is 1 iff atom j is in the
Rydberg state, so index 0 is the all-ground state. Z_j is +1 on |g> and -1
on |r>.

Readout probes the evolving state at T equally spaced times and collects
exact expectation values of Z_i, Z_i Z_j and Z_i Z_j Z_k (infinite-shot
limit); all of these are diagonal, so a single sweep over the probability
vector evaluates the whole set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from multiprocessing import Pool
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import expit

from .errors import ConfigError, EvolutionError

# Rb 70S van der Waals coefficient, 2*pi * 862690 MHz um^6 expressed in
# rad/us um^6; overridable per config.
C6_RB70S = 2.0 * math.pi * 862690.0

# Krylov propagator controls: per-substep phase budget and basis cap. A
# Gershgorin bound on ||H|| picks the substep count; convergence of the
# small tridiagonal exponential is checked explicitly each iteration.
_KRYLOV_PHASE_PER_SUBSTEP = 6.0
_KRYLOV_MAX_BASIS = 32
_KRYLOV_TOL = 1e-12

_NORM_DRIFT_LIMIT = 1e-6


@dataclass(frozen=True)
class ReservoirConfig:
    """Physical and readout parameterization of the atom chain."""

    n_atoms: int
    lattice_spacing: float = 10.0  # um
    rabi_frequency: float = math.pi  # rad/us
    c6_coefficient: float = C6_RB70S  # rad/us * um^6
    global_detuning: float = 0.0  # rad/us
    site_modulation: tuple[float, ...] | None = None  # alpha_j, defaults to all ones
    detuning_scale: float = 2.0 * math.pi  # rad/us
    total_time: float = 4.0  # us
    n_timesteps: int = 16
    observable_orders: frozenset[int] = frozenset({1, 2, 3})

    def __post_init__(self) -> None:
        if self.n_atoms < 1:
            raise ConfigError(f"n_atoms must be >= 1, got {self.n_atoms}")
        if self.lattice_spacing <= 0:
            raise ConfigError(f"lattice_spacing must be > 0, got {self.lattice_spacing}")
        if self.total_time <= 0:
            raise ConfigError(f"total_time must be > 0, got {self.total_time}")
        if self.n_timesteps < 1:
            raise ConfigError(f"n_timesteps must be >= 1, got {self.n_timesteps}")
        orders = frozenset(int(o) for o in self.observable_orders)
        if not orders:
            raise ConfigError("observable_orders must be non-empty")
        if not orders <= {1, 2, 3}:
            raise ConfigError(f"observable_orders must be a subset of {{1,2,3}}, got {sorted(orders)}")
        object.__setattr__(self, "observable_orders", orders)
        if self.site_modulation is not None:
            mod = tuple(float(a) for a in self.site_modulation)
            if len(mod) != self.n_atoms:
                raise ConfigError(
                    f"site_modulation has length {len(mod)}, expected {self.n_atoms}"
                )
            if any(not (0.0 <= a <= 1.0) for a in mod):
                raise ConfigError("site_modulation entries must lie in [0, 1]")
            object.__setattr__(self, "site_modulation", mod)

    @property
    def modulation(self) -> np.ndarray:
        if self.site_modulation is None:
            return np.ones(self.n_atoms)
        return np.asarray(self.site_modulation, dtype=np.float64)

    @property
    def dim(self) -> int:
        return 1 << self.n_atoms

    def to_dict(self) -> dict:
        return {
            "n_atoms": self.n_atoms,
            "lattice_spacing": self.lattice_spacing,
            "rabi_frequency": self.rabi_frequency,
            "c6_coefficient": self.c6_coefficient,
            "global_detuning": self.global_detuning,
            "site_modulation": None if self.site_modulation is None else list(self.site_modulation),
            "detuning_scale": self.detuning_scale,
            "total_time": self.total_time,
            "n_timesteps": self.n_timesteps,
            "observable_orders": sorted(self.observable_orders),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ReservoirConfig":
        raw = dict(raw)
        if "site_modulation" in raw and raw["site_modulation"] is not None:
            raw["site_modulation"] = tuple(raw["site_modulation"])
        if "observable_orders" in raw:
            raw["observable_orders"] = frozenset(raw["observable_orders"])
        return cls(**raw)


@dataclass
class HamiltonianAction:
    """Matrix-free action of the chain Hamiltonian.

    ``diagonal`` carries the interaction-minus-detuning terms per basis
    index; ``rabi_coupling`` (= Omega/2) couples each index to its N
    single-bit-flip neighbors.
    """

    diagonal: np.ndarray
    rabi_coupling: float
    n_atoms: int
    _flip_index: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        if self._flip_index is None:
            self._flip_index = _flip_index_table(self.n_atoms)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        out = self.diagonal * psi
        if self.rabi_coupling != 0.0:
            out = out + self.rabi_coupling * psi[self._flip_index].sum(axis=0)
        return out

    def norm_bound(self) -> float:
        """Gershgorin upper bound on the spectral norm."""
        return float(np.abs(self.diagonal).max()) + self.n_atoms * abs(self.rabi_coupling)


@lru_cache(maxsize=16)
def _flip_index_table(n_atoms: int) -> np.ndarray:
    idx = np.arange(1 << n_atoms, dtype=np.intp)
    return np.stack([idx ^ (1 << j) for j in range(n_atoms)])


@lru_cache(maxsize=16)
def _occupation_table(n_atoms: int) -> np.ndarray:
    """(N, 2^N) matrix; row j is the Rydberg occupation n_j per basis index."""
    idx = np.arange(1 << n_atoms, dtype=np.int64)
    return ((idx[None, :] >> np.arange(n_atoms)[:, None]) & 1).astype(np.float64)


def count_observables(n_atoms: int, observable_orders: Iterable[int]) -> int:
    """Number of distinct Z-correlation observables per timestep."""
    orders = sorted(set(int(o) for o in observable_orders))
    if not orders:
        raise ConfigError("observable_orders must be non-empty")
    if any(o < 1 or o > 3 for o in orders):
        raise ConfigError(f"observable orders must lie in {{1,2,3}}, got {orders}")
    if max(orders) > n_atoms:
        raise ConfigError(
            f"observable order {max(orders)} exceeds the number of atoms ({n_atoms})"
        )
    return sum(math.comb(n_atoms, k) for k in orders)


def embedding_dimension(config: ReservoirConfig) -> int:
    return config.n_timesteps * count_observables(config.n_atoms, config.observable_orders)


def observable_labels(n_atoms: int, observable_orders: Iterable[int]) -> list[str]:
    """Labels in readout order: singles, then pairs, then triples, lexicographic."""
    count_observables(n_atoms, observable_orders)
    orders = sorted(set(int(o) for o in observable_orders))
    labels = []
    for k in orders:
        for combo in itertools.combinations(range(n_atoms), k):
            labels.append("".join(f"z{i}" for i in combo))
    return labels


def embedding_labels(config: ReservoirConfig) -> list[str]:
    """Column labels ``t{step}_{obs}``; steps are 1-based probe indices."""
    per_step = observable_labels(config.n_atoms, config.observable_orders)
    return [f"t{t}_{lab}" for t in range(1, config.n_timesteps + 1) for lab in per_step]


def all_ground_state(n_atoms: int) -> np.ndarray:
    psi = np.zeros(1 << n_atoms, dtype=np.complex128)
    psi[0] = 1.0
    return psi


def build_hamiltonian(config: ReservoirConfig, local_detunings: np.ndarray) -> HamiltonianAction:
    """Assemble the diagonal + flip action for fixed drive and detunings."""
    det = np.asarray(local_detunings, dtype=np.float64)
    if det.shape != (config.n_atoms,):
        raise ConfigError(
            f"local_detunings has shape {det.shape}, expected ({config.n_atoms},)"
        )
    occ = _occupation_table(config.n_atoms)
    diag = np.zeros(config.dim, dtype=np.float64)
    for j in range(config.n_atoms):
        for k in range(j + 1, config.n_atoms):
            v_jk = config.c6_coefficient / ((k - j) * config.lattice_spacing) ** 6
            if v_jk != 0.0:
                diag += v_jk * occ[j] * occ[k]
    site_terms = config.global_detuning + config.modulation * det
    diag -= site_terms @ occ
    return HamiltonianAction(
        diagonal=diag,
        rabi_coupling=0.5 * config.rabi_frequency,
        n_atoms=config.n_atoms,
    )


def _tridiag_expm_e1(alpha: np.ndarray, beta: np.ndarray, dt: float) -> np.ndarray:
    """First column of exp(-i dt T) for real symmetric tridiagonal T."""
    if alpha.size == 1:
        return np.array([np.exp(-1j * dt * alpha[0])])
    w, q = eigh_tridiagonal(alpha, beta)
    return q @ (np.exp(-1j * dt * w) * q[0, :])


def _krylov_propagate(h: HamiltonianAction, psi: np.ndarray, dt: float) -> np.ndarray:
    """One Lanczos substep of exp(-i dt H) |psi> (psi assumed unit norm)."""
    dim = psi.shape[0]
    m_max = min(_KRYLOV_MAX_BASIS, dim)
    basis = np.empty((m_max, dim), dtype=np.complex128)
    alpha = np.empty(m_max)
    beta = np.empty(max(m_max - 1, 1))

    basis[0] = psi
    w = h.apply(basis[0])
    alpha[0] = np.vdot(basis[0], w).real
    w = w - alpha[0] * basis[0]

    m = 1
    coeffs = _tridiag_expm_e1(alpha[:1], beta[:0], dt)
    while m < m_max:
        b = float(np.linalg.norm(w))
        if b < 1e-13:
            break  # invariant subspace reached; current expansion is exact
        beta[m - 1] = b
        basis[m] = w / b
        w = h.apply(basis[m]) - b * basis[m - 1]
        alpha[m] = np.vdot(basis[m], w).real
        w = w - alpha[m] * basis[m]
        # full reorthogonalization; cheap at these basis sizes
        overlaps = basis[: m + 1].conj() @ w
        w = w - basis[: m + 1].T @ overlaps
        m += 1
        coeffs = _tridiag_expm_e1(alpha[:m], beta[: m - 1], dt)
        if float(np.linalg.norm(w)) * abs(coeffs[-1]) < _KRYLOV_TOL:
            break
    else:
        residual = float(np.linalg.norm(w)) * abs(coeffs[-1])
        if residual > 1e-9:
            raise EvolutionError(
                f"Krylov propagator did not converge for dt={dt} "
                f"(residual estimate {residual:.2e})"
            )
    return basis[:m].T @ coeffs


def evolve(psi: np.ndarray, h: HamiltonianAction, dt: float) -> np.ndarray:
    """Propagate |psi> by exp(-i H dt); the result is renormalized exactly.

    Raises EvolutionError when the pre-renormalization norm drifts by more
    than 1e-6, which indicates the integrator tolerances were violated.
    """
    if dt <= 0:
        raise ConfigError(f"dt must be > 0, got {dt}")
    if abs(np.linalg.norm(psi) - 1.0) > 1e-6:
        raise ConfigError("evolve expects a normalized state")
    n_sub = max(1, math.ceil(h.norm_bound() * dt / _KRYLOV_PHASE_PER_SUBSTEP))
    out = psi
    for _ in range(n_sub):
        out = _krylov_propagate(h, out, dt / n_sub)
    norm = float(np.linalg.norm(out))
    if abs(norm - 1.0) > _NORM_DRIFT_LIMIT:
        raise EvolutionError(
            f"norm drifted to {norm!r} during a step of dt={dt}; "
            f"integrator tolerance violated"
        )
    return out / norm


@lru_cache(maxsize=8)
def _parity_matrix(n_atoms: int, orders: frozenset[int]) -> np.ndarray:
    """(O_N, 2^N) matrix of Z-product eigenvalues, readout order by rows."""
    occ = _occupation_table(n_atoms)
    z = 1.0 - 2.0 * occ  # +1 on ground, -1 on Rydberg
    rows = []
    for k in sorted(orders):
        for combo in itertools.combinations(range(n_atoms), k):
            sign = z[combo[0]].copy()
            for i in combo[1:]:
                sign *= z[i]
            rows.append(sign)
    return np.stack(rows)


def measure_observables(psi: np.ndarray, config: ReservoirConfig) -> np.ndarray:
    """Exact <Z...Z> expectation values as signed parity sums over |psi|^2."""
    probs = np.abs(psi) ** 2
    values = _parity_matrix(config.n_atoms, config.observable_orders) @ probs
    # parity sums over a probability vector live in [-1, 1]; clip the
    # sub-ulp float excursions so the bound is exact
    return np.clip(values, -1.0, 1.0)


def map_latent_to_detuning(latent: np.ndarray, config: ReservoirConfig) -> np.ndarray:
    """Squash latent features into [0, detuning_scale] with a logistic map."""
    z = np.asarray(latent, dtype=np.float64)
    if z.shape != (config.n_atoms,):
        raise ConfigError(f"latent has shape {z.shape}, expected ({config.n_atoms},)")
    if not np.all(np.isfinite(z)):
        raise ConfigError("latent vector contains non-finite entries")
    return config.detuning_scale * expit(z)


def embed(latent: np.ndarray, config: ReservoirConfig) -> np.ndarray:
    """Full reservoir pass: encode, evolve in T steps, read out after each.

    Returns the length T*O_N embedding, ordered by timestep then by
    observable. Deterministic in (latent, config).
    """
    detunings = map_latent_to_detuning(latent, config)
    h = build_hamiltonian(config, detunings)
    psi = all_ground_state(config.n_atoms)
    dt = config.total_time / config.n_timesteps
    n_obs = count_observables(config.n_atoms, config.observable_orders)
    out = np.empty(config.n_timesteps * n_obs, dtype=np.float64)
    for t in range(config.n_timesteps):
        psi = evolve(psi, h, dt)
        out[t * n_obs : (t + 1) * n_obs] = measure_observables(psi, config)
    return out


def _embed_item(args: tuple[int, np.ndarray, ReservoirConfig]) -> np.ndarray:
    i, latent, config = args
    try:
        return embed(latent, config)
    except Exception as exc:
        raise type(exc)(f"latent {i}: {exc}") from exc


def embed_batch(
    latents: Sequence[np.ndarray] | np.ndarray,
    config: ReservoirConfig,
    n_workers: int = 1,
) -> np.ndarray:
    """Embed many latents; results are independent of the parallelism degree."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.size == 0:
        return np.zeros((0, embedding_dimension(config)))
    if latents.ndim != 2 or latents.shape[1] != config.n_atoms:
        raise ConfigError(
            f"latent batch has shape {latents.shape}, expected (n, {config.n_atoms})"
        )
    jobs = [(i, latents[i], config) for i in range(latents.shape[0])]
    if n_workers > 1 and len(jobs) > 1:
        with Pool(processes=n_workers) as pool:
            rows = pool.map(_embed_item, jobs, chunksize=max(1, len(jobs) // (4 * n_workers)))
    else:
        rows = [_embed_item(job) for job in jobs]
    return np.stack(rows)
