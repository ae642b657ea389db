"""Geometry and gain math for a grouped coprime-subarray receiver.

The physical array is a uniform line of ``N = sum(K_q * M_q)`` antennas
partitioned into ``Q`` groups.  Group ``q`` holds ``K_q`` subarrays of
``M_q`` antennas each, with one RF chain per subarray.  Analog combining
collapses every subarray to a single output, so group ``q`` behaves as a
``K_q``-element virtual ULA whose element spacing is ``M_q * d``.  All
estimators in this package operate on those virtual arrays.

Subarray sizes must be pairwise coprime: spatial undersampling by the
factor ``M_q`` folds the visible region ``M_q``-fold, and coprimality is
what guarantees the folded candidate sets of different groups share
exactly one angle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

#: Keys accepted in a config file, in canonical order.
CONFIG_KEYS = ("groups", "M", "K", "d_over_lambda", "lambda_m")


class ConfigError(ValueError):
    """Array configuration that cannot describe a valid receiver."""


class NonCoprimeError(ConfigError):
    """Two subarray sizes share a common factor."""

    def __init__(self, q: int, k: int, m_q: int, m_k: int):
        self.groups = (q, k)
        super().__init__(
            f"subarray sizes M[{q}]={m_q} and M[{k}]={m_k} share a factor "
            f"{math.gcd(m_q, m_k)}; group sizes must be pairwise coprime"
        )


class GroupTooSmallError(ConfigError):
    """A group with fewer than two subarrays or two antennas per subarray."""

    def __init__(self, q: int, what: str, value: int):
        self.group = q
        super().__init__(f"group {q}: {what}={value}, need at least 2")


@dataclass(frozen=True)
class GroupGeometry:
    """Geometry of one group's virtual ULA.

    Parameters
    ----------
    group_index : int
        Position of the group in the configuration, 0-based.
    subarray_size : int
        Antennas per subarray (``M_q``).
    num_subarrays : int
        RF chains in the group (``K_q``), the virtual array length.
    spacing : float
        Physical element spacing ``d`` in meters.
    wavelength : float
        Carrier wavelength in meters.
    """

    group_index: int
    subarray_size: int
    num_subarrays: int
    spacing: float
    wavelength: float

    @property
    def virtual_spacing(self) -> float:
        """Spacing of the virtual ULA in meters (``M_q * d``)."""
        return self.subarray_size * self.spacing


@dataclass(frozen=True)
class ArrayConfig:
    """Receiver layout: subarray sizes, subarray counts, spacing.

    Parameters
    ----------
    M : tuple of int
        Subarray size per group, pairwise coprime.
    K : tuple of int
        Number of subarrays per group.
    d_over_lambda : float
        Element spacing in wavelengths.  Half-wavelength is the supported
        operating point; the candidate-count contract assumes it.
    wavelength : float
        Carrier wavelength in meters.
    """

    M: tuple[int, ...]
    K: tuple[int, ...]
    d_over_lambda: float = 0.5
    wavelength: float = 1.0

    @property
    def num_groups(self) -> int:
        return len(self.M)

    @property
    def spacing(self) -> float:
        """Physical element spacing ``d`` in meters."""
        return self.d_over_lambda * self.wavelength

    @property
    def total_antennas(self) -> int:
        """Total element count ``N = sum(K_q * M_q)``."""
        return int(sum(k * m for k, m in zip(self.K, self.M)))

    def group(self, q: int) -> GroupGeometry:
        """Geometry of group ``q``."""
        return GroupGeometry(
            group_index=q,
            subarray_size=self.M[q],
            num_subarrays=self.K[q],
            spacing=self.spacing,
            wavelength=self.wavelength,
        )

    def groups(self) -> list[GroupGeometry]:
        return [self.group(q) for q in range(self.num_groups)]


def validate_config(cfg: ArrayConfig) -> ArrayConfig:
    """Check a configuration and return it unchanged.

    Raises
    ------
    NonCoprimeError
        If any two subarray sizes share a common factor.
    GroupTooSmallError
        If any ``M_q < 2`` or ``K_q < 2``.
    ConfigError
        On shape or sign problems (mismatched lists, non-positive
        spacing or wavelength).
    """
    if len(cfg.M) == 0:
        raise ConfigError("configuration has no groups")
    if len(cfg.M) != len(cfg.K):
        raise ConfigError(
            f"M has {len(cfg.M)} groups but K has {len(cfg.K)}"
        )
    for q, (m, k) in enumerate(zip(cfg.M, cfg.K)):
        if int(m) != m or int(k) != k:
            raise ConfigError(f"group {q}: M and K must be integers")
        if m < 2:
            raise GroupTooSmallError(q, "subarray size M", m)
        if k < 2:
            raise GroupTooSmallError(q, "subarray count K", k)
    for q in range(len(cfg.M)):
        for k in range(q + 1, len(cfg.M)):
            if math.gcd(cfg.M[q], cfg.M[k]) != 1:
                raise NonCoprimeError(q, k, cfg.M[q], cfg.M[k])
    if not cfg.d_over_lambda > 0:
        raise ConfigError(f"d_over_lambda={cfg.d_over_lambda} must be positive")
    if not cfg.wavelength > 0:
        raise ConfigError(f"wavelength={cfg.wavelength} must be positive")
    return cfg


def gain_coefficient(geom: GroupGeometry, theta: float) -> complex:
    """Analog combining gain ``e_q(theta)`` of one subarray.

    Direct sum ``sum_m exp(j*(2*pi/lambda)*m*d*sin(theta))`` over the
    ``M_q`` elements.  The closed-form geometric ratio has a removable
    0/0 at broadside, so the sum is evaluated as written; at
    ``theta = 0`` it equals ``M_q`` exactly.

    Parameters
    ----------
    geom : GroupGeometry
    theta : float
        Angle in radians off broadside.

    Returns
    -------
    complex
    """
    m = np.arange(geom.subarray_size)
    phases = (2.0 * np.pi / geom.wavelength) * m * geom.spacing * np.sin(theta)
    return complex(np.sum(np.exp(1j * phases)))


def element_steering(geom: GroupGeometry, theta: float) -> np.ndarray:
    """Steering vector of one subarray (``M_q`` elements, spacing ``d``)."""
    m = np.arange(geom.subarray_size)
    phases = (2.0 * np.pi / geom.wavelength) * m * geom.spacing * np.sin(theta)
    return np.exp(1j * phases)


def virtual_steering(geom: GroupGeometry, theta: float) -> np.ndarray:
    """Steering vector of the group's virtual ULA.

    ``K_q`` elements at spacing ``M_q * d``; element ``k`` is
    ``exp(j*(2*pi/lambda)*M_q*d*sin(theta)*k)``.  Unit modulus per
    element, first element 1.

    Parameters
    ----------
    geom : GroupGeometry
    theta : float
        Angle in radians off broadside.

    Returns
    -------
    ndarray of complex, shape (K_q,)
    """
    k = np.arange(geom.num_subarrays)
    phase_step = (
        (2.0 * np.pi / geom.wavelength) * geom.virtual_spacing * np.sin(theta)
    )
    return np.exp(1j * phase_step * k)


def position_weighted_gain(geom: GroupGeometry, theta: float) -> complex:
    """Conjugate-weighted element-position sum used by the exact CRLB.

    ``sum_m (m*d) * exp(-j*(2*pi/lambda)*m*d*sin(theta))`` over the
    subarray, i.e. the element positions weighted by the conjugated
    element steering vector.  Units are meters.
    """
    m = np.arange(geom.subarray_size)
    positions = m * geom.spacing
    return complex(np.sum(positions * np.conj(element_steering(geom, theta))))


def load_config(path) -> ArrayConfig:
    """Read and validate a JSON config file.

    Expected keys: ``groups`` (int), ``M`` (list), ``K`` (list),
    ``d_over_lambda`` (float, optional), ``lambda_m`` (float, optional).
    Unknown keys are rejected.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; allowed: {list(CONFIG_KEYS)}")
    for key in ("groups", "M", "K"):
        if key not in raw:
            raise ConfigError(f"config {path} is missing required key '{key}'")
    try:
        M = tuple(int(v) for v in raw["M"])
        K = tuple(int(v) for v in raw["K"])
    except (TypeError, ValueError) as err:
        raise ConfigError(f"M and K must be integer lists: {err}") from err
    if int(raw["groups"]) != len(M):
        raise ConfigError(
            f"groups={raw['groups']} does not match len(M)={len(M)}"
        )
    cfg = ArrayConfig(
        M=M,
        K=K,
        d_over_lambda=float(raw.get("d_over_lambda", 0.5)),
        wavelength=float(raw.get("lambda_m", 1.0)),
    )
    return validate_config(cfg)


def save_config(cfg: ArrayConfig, path) -> None:
    """Write a configuration as a JSON config file."""
    raw = {
        "groups": cfg.num_groups,
        "M": list(cfg.M),
        "K": list(cfg.K),
        "d_over_lambda": cfg.d_over_lambda,
        "lambda_m": cfg.wavelength,
    }
    with open(path, "w") as fh:
        json.dump(raw, fh, indent=2)
        fh.write("\n")
