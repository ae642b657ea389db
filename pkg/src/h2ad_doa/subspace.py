"""Per-group subspace estimation: root-MUSIC on the virtual ULA.

Each group's virtual array undersamples space by its subarray size
``M_q``, so the root-MUSIC phase only pins ``sin(theta)`` modulo
``lambda / (M_q * d)``.  :func:`enumerate_candidates` unfolds that
ambiguity into the group's full candidate set; resolving which candidate
is the true angle is the fusion stage's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .array_model import GroupGeometry, gain_coefficient, virtual_steering

#: Two eigenvalues closer than this (relative) leave no usable signal subspace.
DEGENERACY_RTOL = 1e-9

#: Roots whose moduli differ by less than this tie on the modulus criterion.
ROOT_TIE_TOL = 1e-12

#: Slack on the unit-circle membership test; keeps a root pair that numerics
#: pushed marginally outside from being discarded.
_CIRCLE_SLACK = 1e-9


class DegenerateSpectrumError(RuntimeError):
    """Eigenvalue spectrum with no separable signal eigenvalue."""


class NoRootFoundError(RuntimeError):
    """Root polynomial with no usable root (all at or near zero)."""


@dataclass(frozen=True)
class NoiseSubspace:
    """Noise-subspace basis of one group's covariance.

    Attributes
    ----------
    basis : ndarray, shape (K_q, K_q - 1)
        Orthonormal eigenvectors spanning the noise subspace.
    leading_eigenvalue : float
        Largest eigenvalue (the signal eigenvalue).
    noise_floor : float
        Mean of the trailing ``K_q - 1`` eigenvalues.
    """

    basis: np.ndarray
    leading_eigenvalue: float
    noise_floor: float


@dataclass(frozen=True)
class CandidateSet:
    """All angles of one group consistent with its root-MUSIC phase.

    ``angles`` is strictly ascending, in radians, of length ``M_q`` for
    half-wavelength element spacing.  Exactly one entry is the true
    angle; the rest are the group's pseudo-solutions.
    """

    group_index: int
    phase_hat: float
    angles: np.ndarray


def noise_subspace(cov: np.ndarray) -> NoiseSubspace:
    """Split a group covariance into signal and noise subspaces.

    The signal subspace is fixed at dimension one (single emitter), so
    the noise basis is the trailing ``K_q - 1`` eigenvectors in
    descending eigenvalue order.

    Raises
    ------
    DegenerateSpectrumError
        If the two largest eigenvalues agree to within
        ``DEGENERACY_RTOL`` relative, as happens for noise-only input.
    """
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got {cov.shape}")
    if cov.shape[0] < 2:
        raise ValueError("need at least two subarrays for a noise subspace")
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    # eigh sorts ascending; flip to descending.
    eigenvalues = eigenvalues[::-1]
    eigenvectors = eigenvectors[:, ::-1]
    lead, second = eigenvalues[0], eigenvalues[1]
    if lead - second <= DEGENERACY_RTOL * max(abs(lead), np.finfo(float).tiny):
        raise DegenerateSpectrumError(
            f"leading eigenvalues {lead:.6e} and {second:.6e} are not separable"
        )
    return NoiseSubspace(
        basis=eigenvectors[:, 1:],
        leading_eigenvalue=float(lead),
        noise_floor=float(np.mean(eigenvalues[1:])),
    )


def _root_polynomial(ns: NoiseSubspace) -> np.ndarray:
    """Coefficients of the root-MUSIC polynomial, highest degree first.

    With ``F = U U^H``, the quadratic form ``a(z)^H F a(z)`` collapses to
    ``sum_l c_l z^l`` where ``c_l`` is the sum of the l-th diagonal of
    ``F``; multiplying by ``z^(K-1)`` gives a degree ``2(K-1)``
    polynomial whose unit-circle roots are the MUSIC nulls.
    """
    f = ns.basis @ ns.basis.conj().T
    k = f.shape[0]
    return np.array([np.trace(f, offset=off) for off in range(k - 1, -k, -1)])


def root_music_phase(ns: NoiseSubspace, geom: GroupGeometry) -> float:
    """Electrical phase of the signal root of one group.

    Roots the noise-subspace polynomial and keeps, among roots inside
    the unit circle, the one of largest modulus; modulus ties within
    ``ROOT_TIE_TOL`` break toward the smaller principal argument.  The
    analog gain prefactor is angle-dependent but root-free, so it plays
    no part in rooting.

    Returns
    -------
    float
        ``phase_hat`` in ``(-pi, pi]``, the argument of the selected
        root; equals ``(2*pi/lambda) * M_q * d * sin(theta0)`` folded to
        the principal branch.
    """
    coeffs = _root_polynomial(ns)
    if not np.any(np.abs(coeffs) > 0):
        raise NoRootFoundError("all polynomial coefficients vanish")
    roots = np.roots(coeffs)
    if roots.size == 0:
        raise NoRootFoundError("polynomial has no roots")
    moduli = np.abs(roots)
    inside = moduli <= 1.0 + _CIRCLE_SLACK
    if not np.any(inside):
        raise NoRootFoundError("no root on or inside the unit circle")
    roots = roots[inside]
    moduli = moduli[inside]
    best = np.max(moduli)
    if best < 1e-12:
        raise NoRootFoundError("all roots numerically at zero")
    tied = roots[moduli >= best - ROOT_TIE_TOL]
    return float(np.min(np.angle(tied)) if tied.size > 1 else np.angle(tied[0]))


def enumerate_candidates(phase_hat: float, geom: GroupGeometry) -> CandidateSet:
    """Unfold a group phase into its full candidate angle set.

    Collects every integer ``j`` for which
    ``sin(theta) = (phase_hat + 2*pi*j) * lambda / (2*pi*M_q*d)`` lands
    in ``[-1, 1]``.  At half-wavelength spacing that yields ``M_q``
    angles, or ``M_q + 1`` when the phase folds exactly onto the visible
    boundary, in which case the entry of largest ``|sin|`` is dropped
    (the positive one on an exact tie).
    """
    scale = geom.wavelength / (2.0 * np.pi * geom.virtual_spacing)
    two_pi = 2.0 * np.pi
    j_lo = math.ceil((-1.0 / scale - phase_hat) / two_pi - 1e-12)
    j_hi = math.floor((1.0 / scale - phase_hat) / two_pi + 1e-12)
    j = np.arange(j_lo, j_hi + 1)
    sines = scale * (phase_hat + two_pi * j)
    keep = np.abs(sines) <= 1.0 + 1e-12
    sines = np.clip(sines[keep], -1.0, 1.0)
    if sines.size == geom.subarray_size + 1:
        # Boundary fold: one alias too many; shed the outermost.
        order = sorted(range(sines.size), key=lambda i: (abs(sines[i]), sines[i]))
        sines = np.delete(sines, order[-1])
    return CandidateSet(
        group_index=geom.group_index,
        phase_hat=phase_hat,
        angles=np.arcsin(sines),
    )


def music_pseudospectrum(
    ns: NoiseSubspace, geom: GroupGeometry, theta_grid: np.ndarray
) -> np.ndarray:
    """Diagnostic MUSIC pseudo-spectrum over an angle grid (radians).

    ``P(theta) = 1 / (|e_q(theta)|^2 * ||U^H a(theta)||^2)``, including
    the analog gain term, so it is not the bare noise-subspace spectrum.
    Peaks line up with the candidate set of the rooted phase.
    """
    theta_grid = np.asarray(theta_grid, dtype=float)
    power = np.empty(theta_grid.shape)
    for i, theta in np.ndenumerate(theta_grid):
        gain = abs(gain_coefficient(geom, theta)) ** 2
        steer = virtual_steering(geom, theta)
        proj = np.linalg.norm(ns.basis.conj().T @ steer) ** 2
        power[i] = 1.0 / (gain * proj) if gain * proj > 0 else np.inf
    return power
