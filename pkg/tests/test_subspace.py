import math

import numpy as np
import pytest

from h2ad_doa.array_model import ArrayConfig, virtual_steering
from h2ad_doa.signal_sim import SimScenario, exact_covariance, sample_covariance, simulate_group
from h2ad_doa.subspace import (
    CandidateSet,
    DegenerateSpectrumError,
    NoiseSubspace,
    NoRootFoundError,
    _root_polynomial,
    enumerate_candidates,
    music_pseudospectrum,
    noise_subspace,
    root_music_phase,
)

BASE_CFG = ArrayConfig(M=(7, 11, 13), K=(16, 16, 16))
THETA41 = math.radians(41.0)


def scenario(**kw):
    base = dict(cfg=BASE_CFG, theta0=THETA41, snr_db=0.0, snapshots=200, seed=0)
    base.update(kw)
    return SimScenario(**base)


def exact_ns(q, sc=None):
    return noise_subspace(exact_covariance(sc or scenario(), q))


def test_noise_subspace_shape_and_orthogonality():
    ns = exact_ns(0)
    assert ns.basis.shape == (16, 15)
    gram = ns.basis.conj().T @ ns.basis
    assert np.allclose(gram, np.eye(15), atol=1e-12)
    steer = virtual_steering(BASE_CFG.group(0), THETA41)
    assert np.linalg.norm(ns.basis.conj().T @ steer) < 1e-10


def test_noise_subspace_eigenvalues():
    ns = exact_ns(0)
    assert ns.leading_eigenvalue == pytest.approx(2.99884102722619, abs=1e-12)
    assert ns.noise_floor == pytest.approx(1.0, abs=1e-12)


def test_noise_subspace_rejects_nonsquare_and_tiny():
    with pytest.raises(ValueError):
        noise_subspace(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        noise_subspace(np.eye(1))


def test_degenerate_spectrum_raises():
    with pytest.raises(DegenerateSpectrumError):
        noise_subspace(np.eye(5))


def test_root_polynomial_conjugate_reciprocal_roots():
    # coefficients c_l = tr(F, l) of a Hermitian F give roots in
    # (z, 1/conj(z)) pairs, the basis for picking the inside-circle root
    ns = noise_subspace(sample_covariance(simulate_group(scenario(seed=9), 0)))
    coeffs = _root_polynomial(ns)
    assert np.allclose(coeffs, coeffs[::-1].conj(), atol=1e-12)
    roots = np.roots(coeffs)
    mirrored = 1.0 / roots.conj()
    for r in roots:
        assert np.min(np.abs(mirrored - r)) < 1e-6


@pytest.mark.parametrize("q,m", [(0, 7), (1, 11), (2, 13)])
def test_root_phase_on_exact_covariance(q, m):
    phase = root_music_phase(exact_ns(q), BASE_CFG.group(q))
    oracle = math.remainder(math.pi * m * math.sin(THETA41), 2 * math.pi)
    assert phase == pytest.approx(oracle, abs=1e-7)
    assert -math.pi < phase <= math.pi


def test_root_phase_frozen_value_group0():
    phase = root_music_phase(exact_ns(0), BASE_CFG.group(0))
    assert phase == pytest.approx(1.8611209662256432, abs=1e-7)


def test_root_phase_scale_invariant():
    cov = exact_covariance(scenario(), 1)
    a = root_music_phase(noise_subspace(cov), BASE_CFG.group(1))
    b = root_music_phase(noise_subspace(5.0 * cov), BASE_CFG.group(1))
    assert a == pytest.approx(b, abs=1e-7)


def test_no_root_on_zero_basis():
    ns = NoiseSubspace(basis=np.zeros((4, 3), dtype=complex),
                       leading_eigenvalue=1.0, noise_floor=0.1)
    with pytest.raises(NoRootFoundError):
        root_music_phase(ns, BASE_CFG.group(0))


def test_no_root_when_only_origin():
    ns = NoiseSubspace(basis=np.array([[1.0], [0.0]], dtype=complex),
                       leading_eigenvalue=1.0, noise_floor=0.1)
    with pytest.raises(NoRootFoundError):
        root_music_phase(ns, BASE_CFG.group(0))


@pytest.mark.parametrize("q,m", [(0, 7), (1, 11), (2, 13)])
def test_candidate_count_and_order(q, m):
    phase = root_music_phase(exact_ns(q), BASE_CFG.group(q))
    cs = enumerate_candidates(phase, BASE_CFG.group(q))
    assert isinstance(cs, CandidateSet)
    assert cs.group_index == q
    assert len(cs.angles) == m
    assert np.all(np.diff(cs.angles) > 0)
    assert np.max(np.abs(np.sin(cs.angles))) <= 1.0
    assert np.min(np.abs(cs.angles - THETA41)) < 1e-8


def test_candidate_grid_uniform_in_sine():
    phase = root_music_phase(exact_ns(1), BASE_CFG.group(1))
    cs = enumerate_candidates(phase, BASE_CFG.group(1))
    gaps = np.diff(np.sin(cs.angles))
    assert np.allclose(gaps, 2.0 / 11.0, atol=1e-12)


def test_candidate_exact_recovery_fuzz():
    # exact covariance, random angle: some candidate must hit it exactly
    rng = np.random.default_rng(21)
    for _ in range(100):
        theta = float(rng.uniform(-1.2, 1.2))
        q = int(rng.integers(0, 3))
        sc = scenario(theta0=theta, snapshots=1)
        phase = root_music_phase(exact_ns(q, sc), BASE_CFG.group(q))
        cs = enumerate_candidates(phase, BASE_CFG.group(q))
        assert len(cs.angles) == BASE_CFG.M[q]
        assert np.min(np.abs(cs.angles - theta)) < 1e-7


def test_boundary_tie_drops_positive_end():
    # phase exactly pi puts candidates at sin = (1+2j)/7 including both
    # endpoints -1 and +1; the tie is resolved by dropping +1
    cs = enumerate_candidates(math.pi, BASE_CFG.group(0))
    sines = np.sin(cs.angles)
    assert len(cs.angles) == 7
    assert sines[0] == pytest.approx(-1.0, abs=1e-12)
    assert sines[-1] == pytest.approx((1 + 2 * 2) / 7, abs=1e-12)


def test_pseudospectrum_peaks_at_candidates():
    ns = exact_ns(2)
    geom = BASE_CFG.group(2)
    phase = root_music_phase(ns, geom)
    cs = enumerate_candidates(phase, geom)
    on = music_pseudospectrum(ns, geom, cs.angles)
    off = music_pseudospectrum(ns, geom, cs.angles + math.radians(0.3))
    assert np.min(on) > 1e4 * np.max(off)
