import cmath
import json
import math

import numpy as np
import pytest

from h2ad_doa.array_model import (
    ArrayConfig,
    ConfigError,
    GroupTooSmallError,
    NonCoprimeError,
    element_steering,
    gain_coefficient,
    load_config,
    position_weighted_gain,
    save_config,
    validate_config,
    virtual_steering,
)

BASE_CFG = ArrayConfig(M=(7, 11, 13), K=(16, 16, 16))


def test_base_config_shape():
    assert BASE_CFG.num_groups == 3
    assert BASE_CFG.total_antennas == 16 * (7 + 11 + 13)
    g = BASE_CFG.group(1)
    assert g.subarray_size == 11
    assert g.num_subarrays == 16
    assert g.virtual_spacing == pytest.approx(11 * 0.5)


def test_validate_accepts_base_config():
    assert validate_config(BASE_CFG) is BASE_CFG


@pytest.mark.parametrize(
    "kwargs, exc",
    [
        (dict(M=(), K=()), ConfigError),
        (dict(M=(7, 11), K=(16,)), ConfigError),
        (dict(M=(7, 11.5), K=(16, 16)), ConfigError),
        (dict(M=(1, 11), K=(16, 16)), GroupTooSmallError),
        (dict(M=(7, 11), K=(16, 1)), GroupTooSmallError),
        (dict(M=(6, 9), K=(16, 16)), NonCoprimeError),
        (dict(M=(7, 11), K=(16, 16), d_over_lambda=0.0), ConfigError),
        (dict(M=(7, 11), K=(16, 16), wavelength=-1.0), ConfigError),
    ],
)
def test_validate_rejects(kwargs, exc):
    with pytest.raises(exc):
        validate_config(ArrayConfig(**kwargs))


def test_noncoprime_error_names_the_pair():
    with pytest.raises(NonCoprimeError) as info:
        validate_config(ArrayConfig(M=(4, 7, 10), K=(8, 8, 8)))
    assert info.value.groups == (0, 2)
    assert "factor 2" in str(info.value)


def test_coprime_fuzz():
    rng = np.random.default_rng(7)
    accepted = 0
    for _ in range(300):
        m = tuple(int(v) for v in rng.integers(2, 40, size=3))
        coprime = all(
            math.gcd(m[i], m[j]) == 1 for i in range(3) for j in range(i + 1, 3)
        )
        cfg = ArrayConfig(M=m, K=(4, 4, 4))
        if coprime:
            validate_config(cfg)
            accepted += 1
        else:
            with pytest.raises(NonCoprimeError):
                validate_config(cfg)
    assert accepted > 30  # the draw actually exercises both branches


def test_element_steering_matches_scalar_oracle():
    # exp(j * 2*pi/lambda * m*d * sin(theta)) at m=4, theta=0.3, d=0.5
    oracle = cmath.exp(1j * 2 * math.pi * 4 * 0.5 * math.sin(0.3))
    vec = element_steering(BASE_CFG.group(0), 0.3)
    assert vec.shape == (7,)
    assert vec[0] == 1.0 + 0.0j
    assert vec[4] == pytest.approx(oracle, abs=1e-15)


def test_steering_conjugate_symmetry():
    rng = np.random.default_rng(11)
    g = BASE_CFG.group(2)
    for theta in rng.uniform(-1.5, 1.5, size=50):
        assert np.allclose(
            element_steering(g, -theta), element_steering(g, theta).conj(), atol=1e-14
        )


def test_gain_coefficient_frozen_value():
    # scalar cmath sum for M=7 at 41 deg, frozen
    g = gain_coefficient(BASE_CFG.group(0), math.radians(41.0))
    assert g == pytest.approx(0.930473824448805 - 0.09333494215497623j, abs=1e-14)


def test_gain_matches_dirichlet_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(200):
        m = int(rng.integers(2, 30))
        theta = float(rng.uniform(-1.5, 1.5))
        geom = ArrayConfig(M=(m,), K=(2,)).group(0)
        x = math.pi * math.sin(theta)
        if abs(math.sin(x / 2)) < 1e-6:
            continue
        closed = abs(math.sin(m * x / 2) / math.sin(x / 2))
        assert abs(gain_coefficient(geom, theta)) == pytest.approx(closed, rel=1e-12)


def test_gain_at_broadside_is_subarray_size():
    for q, m in enumerate(BASE_CFG.M):
        assert gain_coefficient(BASE_CFG.group(q), 0.0) == pytest.approx(m)


def test_virtual_steering_unit_modulus_and_spacing():
    g = BASE_CFG.group(1)
    theta = 0.47
    vec = virtual_steering(g, theta)
    assert vec.shape == (16,)
    assert np.allclose(np.abs(vec), 1.0, atol=1e-14)
    # phase progression is 2*pi * M*d * sin(theta) per virtual element
    step = np.angle(vec[1:] / vec[:-1])
    expected = math.remainder(2 * math.pi * 11 * 0.5 * math.sin(theta), 2 * math.pi)
    assert np.allclose(step, expected, atol=1e-12)


def test_position_weighted_gain_scalar_oracle():
    theta = math.radians(41.0)
    oracle = sum(
        (m * 0.5) * cmath.exp(-1j * 2 * math.pi * m * 0.5 * math.sin(theta))
        for m in range(7)
    )
    assert position_weighted_gain(BASE_CFG.group(0), theta) == pytest.approx(
        oracle, abs=1e-12
    )


def test_config_json_round_trip(tmp_path):
    path = tmp_path / "cfg.json"
    cfg = ArrayConfig(M=(11, 13, 17), K=(16, 24, 32), d_over_lambda=0.5, wavelength=2.0)
    save_config(cfg, path)
    back = load_config(path)
    assert back == cfg


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(
        json.dumps({"groups": 1, "M": [7], "K": [4], "frequency": 3e9})
    )
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_rejects_group_count_mismatch(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"groups": 2, "M": [7, 11, 13], "K": [4, 4, 4]}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
