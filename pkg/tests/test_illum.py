"""Thermal-chromaticity math and kernel seeding."""

import json

import numpy as np
import pytest

from gazemark.errors import NumericError, ParseError
from gazemark.illum import (
    BOLTZMANN_K_JK,
    PLANCK_H_JS,
    SPEED_OF_LIGHT_MS,
    ChromaticityParams,
    KernelInitSpec,
    RadiationConstants,
    chromaticity,
    decompose,
    export_kernel,
    init_kernel,
    load_kernel,
)


def brute_force_chromaticity(wavelengths_nm, reflectance, gain, temperature_k, k2):
    """Direct-product reference: per-channel term over the geometric mean."""
    lam = np.asarray(wavelengths_nm, dtype=np.float64) * 1e-9
    terms = (
        np.asarray(gain)
        * lam**-5.0
        * np.asarray(reflectance)
        * np.exp(-k2 / (lam * temperature_k))
    )
    gmean = np.exp(np.mean(np.log(terms)))
    return terms / gmean


def random_params(rng, enforce=True):
    if enforce:
        lam = (
            float(rng.uniform(620.0, 750.0)),
            float(rng.uniform(495.0, 570.0)),
            float(rng.uniform(450.0, 495.0)),
        )
    else:
        lam = tuple(float(rng.uniform(100.0, 2000.0)) for _ in range(3))
    return ChromaticityParams(
        wavelengths_nm=lam,
        reflectance=tuple(float(rng.uniform(0.05, 1.0)) for _ in range(3)),
        channel_gain=tuple(float(rng.uniform(0.2, 3.0)) for _ in range(3)),
        temperature_k=float(rng.uniform(2000.0, 12000.0)),
        enforce_bands=enforce,
    )


class TestRadiationConstants:
    def test_k2_value(self):
        k2 = RadiationConstants().k2
        assert k2 == pytest.approx(0.014393917451122376, rel=1e-12)
        assert abs(k2 - 1.4394e-2) / 1.4394e-2 < 1e-4

    def test_k2_formula(self):
        c = RadiationConstants(planck_h=2.0, boltzmann_k=4.0, speed_of_light=6.0)
        assert c.k2 == 3.0

    def test_defaults_are_module_constants(self):
        c = RadiationConstants()
        assert (c.planck_h, c.boltzmann_k, c.speed_of_light) == (
            PLANCK_H_JS,
            BOLTZMANN_K_JK,
            SPEED_OF_LIGHT_MS,
        )

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            RadiationConstants(planck_h=0.0)


class TestChromaticityParams:
    def test_band_enforcement(self):
        with pytest.raises(ValueError, match="R wavelength"):
            ChromaticityParams(wavelengths_nm=(600.0, 532.5, 472.5))
        with pytest.raises(ValueError, match="G wavelength"):
            ChromaticityParams(wavelengths_nm=(685.0, 600.0, 472.5))
        with pytest.raises(ValueError, match="B wavelength"):
            ChromaticityParams(wavelengths_nm=(685.0, 532.5, 400.0))

    def test_bands_can_be_disabled(self):
        p = ChromaticityParams(wavelengths_nm=(100.0, 100.0, 100.0), enforce_bands=False)
        assert p.wavelengths_nm == (100.0, 100.0, 100.0)

    def test_rejects_nonpositive_entries(self):
        with pytest.raises(ValueError, match="reflectance"):
            ChromaticityParams(reflectance=(1.0, 0.0, 1.0))
        with pytest.raises(ValueError, match="temperature"):
            ChromaticityParams(temperature_k=-5.0)

    def test_rejects_wrong_arity(self):
        with pytest.raises(ValueError, match="3 entries"):
            ChromaticityParams(channel_gain=(1.0, 1.0))


class TestChromaticity:
    def test_matches_direct_product_oracle(self):
        params = ChromaticityParams(
            wavelengths_nm=(700.0, 550.0, 460.0),
            reflectance=(0.9, 1.1, 1.0),
            channel_gain=(1.2, 0.8, 1.0),
            temperature_k=5000.0,
        )
        c = chromaticity(params)
        expected = (1.0847168786077084, 0.9614919616314291, 0.9588218983618677)
        assert np.allclose(c, expected, rtol=1e-12)

    def test_matches_brute_force_randomized(self):
        rng = np.random.default_rng(17)
        k2 = RadiationConstants().k2
        for _ in range(100):
            params = random_params(rng)
            c = chromaticity(params)
            ref = brute_force_chromaticity(
                params.wavelengths_nm,
                params.reflectance,
                params.channel_gain,
                params.temperature_k,
                k2,
            )
            assert np.allclose(c, ref, rtol=1e-10)

    def test_product_is_one(self):
        rng = np.random.default_rng(29)
        for _ in range(500):
            c = chromaticity(random_params(rng))
            assert abs(float(np.prod(c)) - 1.0) < 1e-9

    def test_equal_wavelengths_give_unit_vector(self):
        params = ChromaticityParams(
            wavelengths_nm=(500.0, 500.0, 500.0), enforce_bands=False
        )
        assert np.array_equal(chromaticity(params), np.ones(3))

    def test_overflow_guard(self):
        params = ChromaticityParams(temperature_k=1e-7)
        with pytest.raises(NumericError, match="exponent"):
            chromaticity(params)

    def test_custom_constants_change_result(self):
        params = ChromaticityParams()
        doubled = RadiationConstants(planck_h=2 * PLANCK_H_JS)
        assert not np.allclose(chromaticity(params), chromaticity(params, doubled))


class TestDecompose:
    def test_parts_multiply_to_chromaticity(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            params = random_params(rng)
            part_a, part_b = decompose(params)
            assert np.allclose(part_a * part_b, chromaticity(params), rtol=1e-12, atol=1e-12)

    def test_each_part_product_is_one(self):
        rng = np.random.default_rng(37)
        for _ in range(200):
            part_a, part_b = decompose(random_params(rng))
            assert abs(float(np.prod(part_a)) - 1.0) < 1e-9
            assert abs(float(np.prod(part_b)) - 1.0) < 1e-9

    def test_constant_part_temperature_free(self):
        base = ChromaticityParams(reflectance=(0.5, 0.8, 0.9), channel_gain=(1.1, 1.0, 0.7))
        cold = ChromaticityParams(
            reflectance=base.reflectance, channel_gain=base.channel_gain, temperature_k=3000.0
        )
        hot = ChromaticityParams(
            reflectance=base.reflectance, channel_gain=base.channel_gain, temperature_k=9000.0
        )
        a_cold, _ = decompose(cold)
        a_hot, _ = decompose(hot)
        assert np.array_equal(a_cold, a_hot)

    def test_thermal_part_surface_free(self):
        dull = ChromaticityParams(reflectance=(0.2, 0.3, 0.4), channel_gain=(0.5, 2.0, 1.0))
        shiny = ChromaticityParams(reflectance=(0.9, 0.9, 0.9), channel_gain=(1.0, 1.0, 1.0))
        _, b_dull = decompose(dull)
        _, b_shiny = decompose(shiny)
        assert np.array_equal(b_dull, b_shiny)

    def test_thermal_part_flattens_at_high_temperature(self):
        # the residual scales as 1/T: about 5e-6 at 1e9 K, 5e-9 at 1e12 K
        _, b = decompose(ChromaticityParams(temperature_k=1e9))
        assert np.max(np.abs(b - 1.0)) < 1e-5
        _, b = decompose(ChromaticityParams(temperature_k=1e12))
        assert np.max(np.abs(b - 1.0)) < 1e-6

    def test_thermal_residual_shrinks_monotonically(self):
        deviations = []
        for temp in (1e6, 1e8, 1e10, 1e12):
            _, b = decompose(ChromaticityParams(temperature_k=temp))
            deviations.append(float(np.max(np.abs(b - 1.0))))
        assert deviations == sorted(deviations, reverse=True)
        assert deviations[-1] > 0.0


class TestInitKernel:
    def test_zero_std_equals_chromaticity(self):
        spec = KernelInitSpec(shape=(3, 4, 5), temperature_std_k=0.0, seed=1)
        params = ChromaticityParams()
        kernel = init_kernel(spec, params)
        expected = chromaticity(params)
        for ch in range(3):
            assert np.allclose(kernel[ch], expected[ch], rtol=1e-12)

    def test_deterministic(self):
        spec = KernelInitSpec(shape=(3, 8, 8), seed=42)
        assert np.array_equal(init_kernel(spec), init_kernel(spec))

    def test_seed_changes_tensor(self):
        a = init_kernel(KernelInitSpec(shape=(3, 8, 8), seed=0))
        b = init_kernel(KernelInitSpec(shape=(3, 8, 8), seed=1))
        assert not np.array_equal(a, b)

    def test_shape_respected(self):
        kernel = init_kernel(KernelInitSpec(shape=(3, 2, 7, 4), seed=0))
        assert kernel.shape == (3, 2, 7, 4)

    def test_channel_axis_must_be_three(self):
        with pytest.raises(ValueError, match="channel axis"):
            KernelInitSpec(shape=(4, 4))

    def test_zero_std_channel_product_is_one(self):
        kernel = init_kernel(KernelInitSpec(shape=(3, 6, 6), temperature_std_k=0.0))
        assert np.allclose(np.prod(kernel, axis=0), 1.0, atol=1e-12)

    def test_monte_carlo_mean_near_mean_temperature_value(self):
        spec = KernelInitSpec(shape=(3, 120, 120), temperature_std_k=50.0, seed=7)
        params = ChromaticityParams()
        kernel = init_kernel(spec, params)
        expected = chromaticity(params)
        for ch in range(3):
            assert kernel[ch].mean() == pytest.approx(expected[ch], rel=1e-2)

    def test_all_positive_finite(self):
        kernel = init_kernel(KernelInitSpec(shape=(3, 16, 16), temperature_std_k=900.0, seed=3))
        assert np.all(np.isfinite(kernel))
        assert np.all(kernel > 0)

    def test_near_zero_temperatures_hit_overflow_guard(self):
        spec = KernelInitSpec(shape=(3, 4), temperature_mean_k=1e-6, temperature_std_k=4e-8, seed=0)
        with pytest.raises(NumericError, match="exponent"):
            init_kernel(spec)


class TestKernelExport:
    def test_round_trip(self, tmp_path):
        kernel = init_kernel(KernelInitSpec(shape=(3, 5, 4), seed=2))
        path = tmp_path / "k.emb"
        export_kernel(kernel, path)
        back = load_kernel(path)
        assert back.shape == kernel.shape
        assert np.allclose(back, kernel, rtol=1e-6)  # float32 payload

    def test_sidecar_contents(self, tmp_path):
        kernel = init_kernel(KernelInitSpec(shape=(3, 2, 2), seed=0))
        path = tmp_path / "k.emb"
        export_kernel(kernel, path)
        obj = json.loads((tmp_path / "k.emb.shape.json").read_text())
        assert obj == {"shape": [3, 2, 2], "dtype": "float32"}

    def test_missing_sidecar(self, tmp_path):
        kernel = init_kernel(KernelInitSpec(shape=(3, 2, 2), seed=0))
        path = tmp_path / "k.emb"
        export_kernel(kernel, path)
        (tmp_path / "k.emb.shape.json").unlink()
        with pytest.raises(ParseError, match="sidecar"):
            load_kernel(path)

    def test_shape_mismatch_rejected(self, tmp_path):
        kernel = init_kernel(KernelInitSpec(shape=(3, 2, 2), seed=0))
        path = tmp_path / "k.emb"
        export_kernel(kernel, path)
        (tmp_path / "k.emb.shape.json").write_text('{"shape": [3, 5, 5], "dtype": "float32"}')
        with pytest.raises(ParseError, match="match"):
            load_kernel(path)

    def test_rejects_non_finite(self, tmp_path):
        bad = np.full((3, 2), np.nan)
        with pytest.raises(NumericError, match="finite"):
            export_kernel(bad, tmp_path / "bad.emb")

    def test_rejects_one_axis(self, tmp_path):
        with pytest.raises(ValueError, match="axes"):
            export_kernel(np.ones(3), tmp_path / "flat.emb")
