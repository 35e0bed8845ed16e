"""Blackbody chromaticity math and illumination-aware kernel seeding.

A scene lit by a thermal source of temperature T reflects light whose
normalized three-channel chromaticity factors into a
temperature-independent part (geometry, reflectance, sensor gains) and
a temperature-dependent exponential part. `chromaticity` evaluates the
full expression, `decompose` returns the two parts separately, and
`init_kernel` seeds a convolution kernel whose constant component is
the temperature-free part and whose stochastic component draws a
temperature per element.

All three functions work in the log domain, so the only failure mode is
an exponent outside the float64 range, reported via NumericError.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, ParseError
from .refine import EmbeddingSet, load_embeddings, save_embeddings

PLANCK_H_JS = 6.626e-34
BOLTZMANN_K_JK = 1.381e-23
SPEED_OF_LIGHT_MS = 3e8

# visible-band sanity ranges for the three channel wavelengths, in nm
RED_BAND_NM = (620.0, 750.0)
GREEN_BAND_NM = (495.0, 570.0)
BLUE_BAND_NM = (450.0, 495.0)

_MAX_EXPONENT = 700.0  # exp() overflows just past 709


@dataclass(frozen=True)
class RadiationConstants:
    """Physical constants of the thermal-radiation model."""

    planck_h: float = PLANCK_H_JS
    boltzmann_k: float = BOLTZMANN_K_JK
    speed_of_light: float = SPEED_OF_LIGHT_MS

    def __post_init__(self) -> None:
        for name in ("planck_h", "boltzmann_k", "speed_of_light"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def k2(self) -> float:
        """Second radiation constant h*c/k_B in meter-kelvin (about 1.4394e-2)."""
        return self.planck_h * self.speed_of_light / self.boltzmann_k


@dataclass(frozen=True)
class ChromaticityParams:
    """Inputs of the chromaticity expression.

    wavelengths_nm: channel wavelengths (red, green, blue) in nanometers.
    reflectance: surface spectral reflectance sampled at each wavelength.
    channel_gain: per-channel sensor gain factors.
    temperature_k: source temperature in kelvin.
    enforce_bands: keep each wavelength inside its visible band; switch
        off only for symmetry checks that need equal wavelengths.
    """

    wavelengths_nm: tuple[float, float, float] = (685.0, 532.5, 472.5)
    reflectance: tuple[float, float, float] = (1.0, 1.0, 1.0)
    channel_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    temperature_k: float = 5000.0
    enforce_bands: bool = True

    def __post_init__(self) -> None:
        for name in ("wavelengths_nm", "reflectance", "channel_gain"):
            values = getattr(self, name)
            if len(values) != 3:
                raise ValueError(f"{name} must have exactly 3 entries, got {len(values)}")
            if any(v <= 0 for v in values):
                raise ValueError(f"every {name} entry must be positive, got {values}")
        if self.temperature_k <= 0:
            raise ValueError(f"temperature_k must be positive, got {self.temperature_k}")
        if self.enforce_bands:
            for value, band, channel in zip(
                self.wavelengths_nm, (RED_BAND_NM, GREEN_BAND_NM, BLUE_BAND_NM), "RGB"
            ):
                if not (band[0] <= value <= band[1]):
                    raise ValueError(
                        f"{channel} wavelength {value} nm outside its band {band}"
                    )


def _log_constant_part(params: ChromaticityParams) -> np.ndarray:
    lam_m = np.asarray(params.wavelengths_nm, dtype=np.float64) * 1e-9
    log_a = (
        np.log(np.asarray(params.channel_gain, dtype=np.float64))
        - 5.0 * np.log(lam_m)
        + np.log(np.asarray(params.reflectance, dtype=np.float64))
    )
    return log_a - log_a.mean()


def _thermal_exponents(params: ChromaticityParams, constants: RadiationConstants) -> np.ndarray:
    lam_m = np.asarray(params.wavelengths_nm, dtype=np.float64) * 1e-9
    e = -constants.k2 / (lam_m * params.temperature_k)
    return e - e.mean()


def _checked_exp(exponents: np.ndarray, what: str) -> np.ndarray:
    worst = float(np.max(np.abs(exponents)))
    if worst > _MAX_EXPONENT:
        raise NumericError(
            f"{what} exponent {worst:.6g} exceeds the float64-safe limit {_MAX_EXPONENT:g}"
        )
    return np.exp(exponents)


def chromaticity(
    params: ChromaticityParams,
    constants: RadiationConstants | None = None,
) -> np.ndarray:
    """Normalized three-channel chromaticity.

    Each channel value is the channel's gain * wavelength^-5 *
    reflectance * exp(-k2 / (wavelength * T)) term divided by the
    geometric mean of all three such terms, evaluated as a single
    log-domain expression. The three outputs multiply to 1.
    """
    if constants is None:
        constants = RadiationConstants()
    expo = _log_constant_part(params) + _thermal_exponents(params, constants)
    return _checked_exp(expo, "chromaticity")


def decompose(
    params: ChromaticityParams,
    constants: RadiationConstants | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Split the chromaticity into its two factors.

    Returns (constant_part, thermal_part): the first depends only on
    wavelengths, reflectance, and gains; the second only on wavelengths
    and temperature. Each part multiplies to 1 across channels and
    their elementwise product equals `chromaticity(params)` up to
    float rounding.
    """
    if constants is None:
        constants = RadiationConstants()
    part_a = _checked_exp(_log_constant_part(params), "constant-part")
    part_b = _checked_exp(_thermal_exponents(params, constants), "thermal-part")
    return part_a, part_b


@dataclass(frozen=True)
class KernelInitSpec:
    """How to seed an illumination-aware kernel tensor.

    shape: kernel shape with the channel axis first; shape[0] must be 3.
    temperature_mean_k / temperature_std_k: per-element temperature
        distribution (normal, truncated to positive values).
    seed: RNG seed; the generator is counter-based (Philox), so the
        tensor is reproducible and safe to evaluate in parallel chunks.
    """

    shape: tuple[int, ...]
    temperature_mean_k: float = 5000.0
    temperature_std_k: float = 500.0
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.shape) < 1:
            raise ValueError("kernel shape must have at least one axis")
        if any(int(s) != s or s < 1 for s in self.shape):
            raise ValueError(f"kernel shape must be positive integers, got {self.shape}")
        if self.shape[0] != 3:
            raise ValueError(f"channel axis (shape[0]) must be 3, got {self.shape[0]}")
        if self.temperature_mean_k <= 0:
            raise ValueError(f"temperature_mean_k must be positive, got {self.temperature_mean_k}")
        if self.temperature_std_k < 0:
            raise ValueError(f"temperature_std_k must be >= 0, got {self.temperature_std_k}")


_TRUNCATION_ROUNDS = 100


def init_kernel(
    spec: KernelInitSpec,
    params: ChromaticityParams | None = None,
    constants: RadiationConstants | None = None,
) -> np.ndarray:
    """Seed a kernel tensor as constant-part x stochastic thermal part.

    The temperature-free chromaticity factor of `params` is broadcast
    along the channel axis (every element of channel c gets the same
    constant factor). Each element then draws its own temperature from
    N(mean, std) truncated to positive values and multiplies in the
    thermal factor for its channel at that temperature. With std 0
    every element equals the full chromaticity of its channel at the
    mean temperature.
    """
    if params is None:
        params = ChromaticityParams()
    if constants is None:
        constants = RadiationConstants()

    rng = np.random.Generator(np.random.Philox(spec.seed))
    temps = rng.normal(spec.temperature_mean_k, spec.temperature_std_k, size=spec.shape)
    for _ in range(_TRUNCATION_ROUNDS):
        bad = temps <= 0.0
        n_bad = int(np.count_nonzero(bad))
        if n_bad == 0:
            break
        temps[bad] = rng.normal(spec.temperature_mean_k, spec.temperature_std_k, size=n_bad)
    else:
        raise NumericError(
            f"could not draw positive temperatures after {_TRUNCATION_ROUNDS} rounds "
            f"(mean {spec.temperature_mean_k}, std {spec.temperature_std_k})"
        )

    lam_m = np.asarray(params.wavelengths_nm, dtype=np.float64) * 1e-9
    coef = -constants.k2 / lam_m  # exponent per channel is coef / T
    centered = coef - coef.mean()
    channel_shape = (3,) + (1,) * (len(spec.shape) - 1)
    exponents = centered.reshape(channel_shape) / temps
    thermal = _checked_exp(exponents, "kernel thermal-part")

    constant = _checked_exp(_log_constant_part(params), "constant-part")
    return constant.reshape(channel_shape) * thermal


# --- kernel export ----------------------------------------------------------
#
# Reuses the embedding binary layout: leading axes flatten into the row
# count, the last axis is the vector dimension, and the true tensor shape
# goes to a small JSON sidecar next to the file.


def _shape_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".shape.json")


def export_kernel(kernel: np.ndarray, path: str | Path) -> None:
    """Write a kernel tensor in the embedding binary format plus shape sidecar."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim < 2:
        raise ValueError(f"kernel must have at least 2 axes, got shape {kernel.shape}")
    if not np.all(np.isfinite(kernel)):
        raise NumericError("kernel contains non-finite values")
    path = Path(path)
    flat = kernel.reshape(-1, kernel.shape[-1])
    save_embeddings(EmbeddingSet.from_vectors(flat), path)
    _shape_sidecar(path).write_text(
        json.dumps({"shape": list(kernel.shape), "dtype": "float32"}, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_kernel(path: str | Path) -> np.ndarray:
    """Read a kernel written by `export_kernel`."""
    path = Path(path)
    embeddings = load_embeddings(path)
    sidecar = _shape_sidecar(path)
    if not sidecar.exists():
        raise ParseError(f"{path}: missing shape sidecar {sidecar.name}")
    obj = json.loads(sidecar.read_text(encoding="utf-8"))
    shape = tuple(int(s) for s in obj["shape"])
    if int(np.prod(shape)) != embeddings.vectors.size:
        raise ParseError(f"{path}: sidecar shape {shape} does not match payload")
    return embeddings.vectors.reshape(shape)
