"""Finite spin-chain measurement model with dense and factorized backends.

An electron spin is read out by a chain of N two-level sites: the spin-down
sector rotates every site it has passed by a fixed angle (a full reversal at
the default angle pi), the spin-up sector leaves the chain untouched, and the
pointer cells are the positive and negative halves of the mean-magnetisation
spectrum.  ``build_dense`` materialises the full ``2**N``-dimensional
apparatus for the generic dense machinery; ``factorized_f_tensor`` exploits
the product structure to evaluate the same tensor exactly for chains far
beyond dense reach, carrying magnitudes in log space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import reduce
from typing import Mapping

import numpy as np

from .coarse_ldp import CellPartitionSpec, IntensiveObservable, coarse_grain
from .core import (
    Apparatus,
    FTensor,
    MicroSystem,
    PhaseCellPartition,
    _check_hermitian,
)
from .errors import AccumulationWarning, CapacityError, StructuralError
from .logspace import lc_convolve, lc_sum, log_binom, power_pair_log

#: largest chain the dense backend will materialise (2**N * 2 state dimension)
DENSE_SITE_CAP = 12
#: mixed-phase convolution sizes above this warn about compensated accumulation
MIXED_PHASE_SAFE_SITES = 10_000

MICRO_LABELS = ("+", "-")  # index 0: spin-up sector, index 1: spin-down

_SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
_EYE2 = np.eye(2, dtype=complex)


def site_rotation(theta: float) -> np.ndarray:
    """Single-site rotation ``exp(i theta sigma_x / 2)`` applied by passage.

    At exactly pi the rotation is the exact flip ``1j * sigma_x``: its zero
    diagonal kills every cross-sector accumulator path structurally, which
    the generic cosine would miss by one rounding ulp.
    """
    if theta == math.pi:
        return 1j * _SIGMA_X.copy()
    return math.cos(theta / 2.0) * _EYE2 + 1j * math.sin(theta / 2.0) * _SIGMA_X


def polarized_site(m0: float) -> np.ndarray:
    """Single-site state ``(I + m0 sigma_z) / 2`` of a chain polarised to m0."""
    return (_EYE2 + m0 * _SIGMA_Z) / 2.0


def _check_site_state(rho, site) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise StructuralError(f"override for site {site} must be a 2x2 matrix")
    _check_hermitian(rho, f"site {site} override")
    if abs(np.trace(rho).real - 1.0) > 1e-12:
        raise StructuralError(f"site {site} override must have unit trace")
    if np.linalg.eigvalsh(rho).min() < -1e-12:
        raise StructuralError(f"site {site} override is not positive semidefinite")
    return rho


@dataclass(frozen=True)
class ChainSpec:
    """Parameters of one chain experiment.

    ``t`` is the effective traversal time: the tensor is evaluated after the
    full passage, with the sector energies contributing phases ``exp(i e t)``.
    ``site_overrides`` replaces the initial state of selected sites, which is
    how localized perturbations are expressed.
    """

    N: int
    m0: float
    theta: float = math.pi
    energies: tuple[float, float] = (0.0, 0.0)
    t: float = 1.0
    site_overrides: Mapping[int, np.ndarray] | None = None

    def __post_init__(self):
        if self.N < 1:
            raise StructuralError("chain must have at least one site")
        if not (0.0 < self.m0 <= 1.0):
            raise StructuralError(f"initial polarisation must lie in (0, 1], got {self.m0!r}")
        if not (0.0 < self.theta < 2.0 * math.pi):
            raise StructuralError(f"rotation angle must lie in (0, 2*pi), got {self.theta!r}")
        if len(self.energies) != 2:
            raise StructuralError("two sector energies required")
        if not (self.t > 0.0 and math.isfinite(self.t)):
            raise StructuralError(f"traversal time must be positive and finite, got {self.t!r}")
        overrides = {}
        if self.site_overrides:
            for site, rho in self.site_overrides.items():
                site = int(site)
                if not (0 <= site < self.N):
                    raise StructuralError(f"override site {site} outside the chain")
                overrides[site] = _check_site_state(rho, site)
        object.__setattr__(self, "site_overrides", overrides)
        object.__setattr__(self, "energies", tuple(float(e) for e in self.energies))

    def site_states(self) -> list[np.ndarray]:
        base = polarized_site(self.m0)
        return [self.site_overrides.get(k, base) for k in range(self.N)]

    def with_overrides(self, overrides: Mapping[int, np.ndarray]) -> "ChainSpec":
        merged = dict(self.site_overrides)
        merged.update(overrides)
        return ChainSpec(N=self.N, m0=self.m0, theta=self.theta,
                         energies=self.energies, t=self.t, site_overrides=merged)


def chain_cells(N: int) -> tuple[CellPartitionSpec, PhaseCellPartition | None]:
    """Two-cell magnetisation-sign partition; the boundary state joins "+"."""
    obs = IntensiveObservable.magnetization_chain(N)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return coarse_grain(obs, 2)


def build_dense(spec: ChainSpec) -> tuple[MicroSystem, Apparatus]:
    """Materialise the chain as a generic dense microsystem/apparatus pair.

    The spin-down coupling is the commuting sum of single-site rotation
    generators scaled so that evolving to time ``spec.t`` performs exactly
    one rotation by ``spec.theta`` per site.
    """
    if spec.N > DENSE_SITE_CAP:
        raise CapacityError(
            f"dense chain capped at {DENSE_SITE_CAP} sites (got {spec.N}); "
            "use the factorized backend")
    micro = MicroSystem(energies=spec.energies, labels=MICRO_LABELS)
    dim = 2 ** spec.N
    K = np.zeros((dim, dim), dtype=complex)
    v_plus = np.zeros((dim, dim), dtype=complex)
    v_minus = np.zeros((dim, dim), dtype=complex)
    coeff = spec.theta / (2.0 * spec.t)
    for k in range(spec.N):
        ops = [_EYE2] * spec.N
        ops[k] = _SIGMA_X
        v_minus += coeff * reduce(np.kron, ops)
    omega = reduce(np.kron, spec.site_states())
    _, partition = chain_cells(spec.N)
    apparatus = Apparatus(K=K, V=(v_plus, v_minus), Omega=omega, cells=partition)
    return micro, apparatus


@dataclass(frozen=True)
class ChainFTensor(FTensor):
    """Chain tensor with per-entry log magnitudes and underflow flags.

    ``values`` underflow to exact zero below the double-precision floor;
    ``log_magnitude`` keeps the information (``-inf`` marks a structural
    zero) and ``underflow`` marks entries that are nonzero only in log space.
    """

    log_magnitude: np.ndarray = None
    underflow: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        lm = np.asarray(self.log_magnitude, dtype=float)
        uf = np.asarray(self.underflow, dtype=bool)
        if lm.shape != self.values.shape or uf.shape != self.values.shape:
            raise StructuralError("diagnostic arrays must match the tensor shape")
        lm.setflags(write=False)
        uf.setflags(write=False)
        object.__setattr__(self, "log_magnitude", lm)
        object.__setattr__(self, "underflow", uf)


@dataclass(frozen=True)
class FactorizedSectorOverlap:
    """Product-structure evaluation of one sector pair against the cells.

    ``per_site[k]`` is the single-site operator whose diagonal feeds the
    magnetisation-resolved accumulator; ``(log_mag, phase)[j]`` is the exact
    log-coded coefficient of the up-count-j subspace, and their sum over j
    reproduces the product of the per-site traces.
    """

    per_site: np.ndarray  # (N, 2, 2)
    log_mag: np.ndarray  # (N + 1,)
    phase: np.ndarray  # (N + 1,)
    global_phase: float

    @property
    def N(self) -> int:
        return self.per_site.shape[0]

    def dp_total(self) -> tuple[float, float]:
        return lc_sum(self.log_mag, self.phase)

    def trace_product(self) -> tuple[float, float]:
        traces = np.einsum("kii->k", self.per_site)
        lm = 0.0
        ph = 0.0
        for tr in traces:
            mag = abs(tr)
            if mag == 0.0:
                return -np.inf, 0.0
            lm += math.log(mag)
            ph += float(np.angle(tr))
        return lm, ph

    def cell_values(self, cells: CellPartitionSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Collapse the accumulator onto the cells: values, log mags, flags."""
        values = np.zeros(cells.n_cells, dtype=complex)
        log_mags = np.full(cells.n_cells, -np.inf)
        flags = np.zeros(cells.n_cells, dtype=bool)
        for a in range(cells.n_cells):
            js = list(cells.value_indices(a))
            if not js:
                continue
            lm, ph = lc_sum(self.log_mag[js], self.phase[js])
            ph += self.global_phase
            log_mags[a] = lm
            if lm == -np.inf:
                continue
            value = np.exp(lm) * complex(math.cos(ph), math.sin(ph))
            values[a] = value
            if value == 0.0:
                flags[a] = True
        return values, log_mags, flags


def _group_polynomial(size: int, d0: complex, d1: complex) -> tuple[np.ndarray, np.ndarray]:
    # coefficients of (d1 + d0 z)**size over the up-count power j
    j = np.arange(size + 1, dtype=float)
    mag0, mag1 = abs(d0), abs(d1)
    lg0 = math.log(mag0) if mag0 > 0 else -np.inf
    lg1 = math.log(mag1) if mag1 > 0 else -np.inf
    a0 = float(np.angle(d0)) if mag0 > 0 else 0.0
    a1 = float(np.angle(d1)) if mag1 > 0 else 0.0
    lm_up, ph_up = power_pair_log(j, lg0, a0)
    lm_dn, ph_dn = power_pair_log(size - j, lg1, a1)
    return log_binom(size, j) + lm_up + lm_dn, ph_up + ph_dn


def sector_overlap(spec: ChainSpec, r: int, s: int, rotated_count: int | None = None) -> FactorizedSectorOverlap:
    """Build the factorized accumulator for sector pair (r, s).

    Sites with index below ``rotated_count`` have been passed by the
    traversing particle and carry the conditional rotation in the spin-down
    sector; the remainder are untouched.  Identical sites collapse into
    binomial closed forms; distinct blocks are combined by log-space
    convolution in a fixed site order.
    """
    if rotated_count is None:
        rotated_count = spec.N
    if not (0 <= rotated_count <= spec.N):
        raise StructuralError("rotated site count outside the chain")
    R = site_rotation(spec.theta)
    base = polarized_site(spec.m0)

    def site_operator(rho: np.ndarray, rotated: bool) -> np.ndarray:
        a = R if (r == 1 and rotated) else _EYE2
        b = R if (s == 1 and rotated) else _EYE2
        return a.conj().T @ rho @ b

    x_rot = site_operator(base, True)
    x_plain = site_operator(base, False)
    per_site = np.empty((spec.N, 2, 2), dtype=complex)
    per_site[:rotated_count] = x_rot
    per_site[rotated_count:] = x_plain
    override_sites = sorted(spec.site_overrides)
    for k in override_sites:
        per_site[k] = site_operator(spec.site_overrides[k], k < rotated_count)
    # identical sites collapse into closed-form blocks, in fixed site order:
    # rotated bulk, unrotated bulk, then each overridden site
    n_rot = rotated_count - sum(1 for k in override_sites if k < rotated_count)
    n_plain = (spec.N - rotated_count) - sum(1 for k in override_sites if k >= rotated_count)
    rot_key = (complex(x_rot[0, 0]), complex(x_rot[1, 1]))
    plain_key = (complex(x_plain[0, 0]), complex(x_plain[1, 1]))
    groups: list[tuple[int, complex, complex]] = []
    if rot_key == plain_key:
        # sectors the traversal does not touch: one closed form for the bulk
        if n_rot + n_plain:
            groups.append((n_rot + n_plain, *rot_key))
    else:
        if n_rot:
            groups.append((n_rot, *rot_key))
        if n_plain:
            groups.append((n_plain, *plain_key))
    for k in override_sites:
        groups.append((1, complex(per_site[k, 0, 0]), complex(per_site[k, 1, 1])))
    polys = [_group_polynomial(size, d0, d1) for size, d0, d1 in groups]

    def phase_spread(*blocks) -> float:
        live = [block_ph[np.isfinite(block_lm)] for block_lm, block_ph in blocks]
        live = [p for p in live if p.size]
        if not live:
            return 0.0
        merged = np.concatenate(live)
        return float(np.ptp(np.mod(merged, 2.0 * math.pi)))

    lm, ph = polys[0]
    for extra in polys[1:]:
        if spec.N > MIXED_PHASE_SAFE_SITES and phase_spread((lm, ph), extra) > 1e-12:
            warnings.warn(
                "mixed-phase convolution beyond the compensated-accumulation range; "
                "expect reduced relative accuracy",
                AccumulationWarning, stacklevel=2)
        lm, ph = lc_convolve((lm, ph), extra)
    delta_e = (spec.energies[s] - spec.energies[r]) * spec.t
    return FactorizedSectorOverlap(per_site=per_site, log_mag=lm, phase=ph,
                                   global_phase=float(delta_e))


def _assemble_tensor(spec: ChainSpec, rotated_count: int) -> ChainFTensor:
    cells, _ = chain_cells(spec.N)
    values = np.zeros((2, 2, 2), dtype=complex)
    log_mags = np.full((2, 2, 2), -np.inf)
    flags = np.zeros((2, 2, 2), dtype=bool)
    for r in range(2):
        for s in range(2):
            ov = sector_overlap(spec, r, s, rotated_count)
            values[r, s], log_mags[r, s], flags[r, s] = ov.cell_values(cells)
    return ChainFTensor(values=values, t=spec.t, log_magnitude=log_mags, underflow=flags)


def factorized_f_tensor(spec: ChainSpec) -> ChainFTensor:
    """Pointer-statistics tensor after the full traversal, any chain size."""
    return _assemble_tensor(spec, spec.N)


def traversal_schedule(spec: ChainSpec, fraction: float) -> ChainFTensor:
    """Tensor after the particle has passed the first ``floor(fraction * N)`` sites."""
    if not (0.0 <= fraction <= 1.0):
        raise StructuralError(f"traversal fraction must lie in [0, 1], got {fraction!r}")
    return _assemble_tensor(spec, int(math.floor(fraction * spec.N + 1e-12)))


def sector_up_probability(spec: ChainSpec, r: int, site: int) -> float:
    """Up-probability of one site in the evolved diagonal sector r."""
    rho = spec.site_overrides.get(site, polarized_site(spec.m0))
    if r == 1:
        R = site_rotation(spec.theta)
        rho = R.conj().T @ rho @ R
    return float(rho[0, 0].real)


def diagonal_sector_product(spec: ChainSpec, r: int):
    """Per-site up-probabilities of the evolved diagonal sector r."""
    base = polarized_site(spec.m0)
    if r == 1:
        R = site_rotation(spec.theta)
        base = R.conj().T @ base @ R
    probs = np.full(spec.N, float(base[0, 0].real))
    for k in spec.site_overrides:
        probs[k] = sector_up_probability(spec, r, k)
    return probs
