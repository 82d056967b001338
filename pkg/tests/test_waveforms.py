import math

import numpy as np
import pytest

from spectwin.errors import InfeasibleSINR, InvalidParams
from spectwin.iqcore import measure_power, psd_estimate
from spectwin.waveforms import (
    CellularParams,
    RadarParams,
    gen_cellular,
    gen_noise,
    gen_radar,
    mix_at_snr,
)


class TestRadar:
    def test_default_length_and_duration(self):
        buf = gen_radar(RadarParams())
        assert len(buf) == 106657
        assert buf.duration_s == pytest.approx(106657 / 6e6)
        assert buf.duration_s == pytest.approx(17.776e-3, rel=1e-3)

    def test_first_quadrant_across_seeds(self):
        for seed in range(4):
            buf = gen_radar(RadarParams(), seed=seed)
            assert buf.samples.real.min() >= 0.0
            assert buf.samples.imag.min() >= 0.0

    def test_first_quadrant_other_params(self):
        params = RadarParams(total_samples=30000, pri_s=0.5e-3, pulse_width_s=0.3e-3,
                             jitter_s=50e-6, amplitude=3.0, i_offset=0.01, q_offset=0.2)
        buf = gen_radar(params, seed=11)
        assert buf.samples.real.min() >= 0.0
        assert buf.samples.imag.min() >= 0.0

    def test_zero_amplitude_collapses_to_offsets(self):
        params = RadarParams(total_samples=5000, amplitude=0.0)
        buf = gen_radar(params, seed=2)
        assert np.all(buf.samples == np.complex64(0.05 + 0.05j))

    def test_deterministic(self):
        a = gen_radar(RadarParams(), seed=5)
        b = gen_radar(RadarParams(), seed=5)
        assert np.array_equal(a.samples, b.samples)

    def test_pulse_width_must_fit_pri(self):
        with pytest.raises(InvalidParams):
            RadarParams(pulse_width_s=2e-3, pri_s=1e-3)


class TestCellular:
    def test_length_arithmetic(self):
        p = CellularParams(num_subcarriers=256, cp_len=18)
        buf = gen_cellular(p, 1, seed=0)
        assert len(buf) == 256 + 18

    def test_deterministic(self):
        p = CellularParams()
        a = gen_cellular(p, 5, seed=9)
        b = gen_cellular(p, 5, seed=9)
        assert np.array_equal(a.samples, b.samples)

    def test_unit_mean_power(self):
        buf = gen_cellular(CellularParams(), 20, seed=1)
        assert measure_power(buf) == pytest.approx(1.0, abs=1e-5)

    def test_psd_occupancy(self):
        # half the band occupied: interior flat within 10 dB of peak, guard
        # bands beyond a 4-bin transition margin at or below -30 dB
        p = CellularParams(occupied_fraction=0.5, sample_rate_hz=6e6)
        buf = gen_cellular(p, 200, seed=3)
        psd = psd_estimate(buf, 256)
        lo, hi = 128 - 64, 128 + 64
        interior = psd[lo + 2 : hi - 2]
        assert interior.min() >= -10.0
        guard = np.concatenate([psd[: lo - 4], psd[hi + 4 :]])
        assert guard.max() <= -30.0

    def test_num_symbols_validated(self):
        with pytest.raises(InvalidParams):
            gen_cellular(CellularParams(), 0)


class TestNoise:
    def test_large_sample_power(self):
        buf = gen_noise(10**6, 1.0, seed=0)
        assert 0.99 <= measure_power(buf) <= 1.01

    def test_power_scaling_exact(self):
        a = gen_noise(1000, 1.0, seed=4)
        b = gen_noise(1000, 4.0, seed=4)
        assert np.array_equal(b.samples, np.complex64(2.0) * a.samples)

    def test_deterministic(self):
        assert np.array_equal(gen_noise(100, 1.0, seed=7).samples,
                              gen_noise(100, 1.0, seed=7).samples)

    def test_invalid_params(self):
        with pytest.raises(InvalidParams):
            gen_noise(0, 1.0)
        with pytest.raises(InvalidParams):
            gen_noise(10, 0.0)


class TestMix:
    def test_snr_zero_matches_noise_power(self):
        signal = gen_radar(RadarParams(total_samples=50000), seed=1)
        mixed, meta = mix_at_snr(signal, None, 0.0, seed=2)
        # a^2 * P_sig must equal measured noise power at SNR 0
        noise = gen_noise(50000, 1.0, 2, 6e6)
        p_n = measure_power(noise)
        p_s = meta.signal_scale**2 * measure_power(signal)
        assert abs(p_s - p_n) / p_n < 1e-6
        assert meta.realized_snr_db == pytest.approx(0.0, abs=1e-9)

    def test_sinr_realized_by_components(self):
        signal = gen_radar(RadarParams(total_samples=40000), seed=3)
        interferer = gen_cellular(CellularParams(sample_rate_hz=6e6), 40, seed=4)
        mixed, meta = mix_at_snr(signal, interferer, 10.0, -20.0, seed=5)
        # recompute SINR from scaled components
        noise = gen_noise(40000, 1.0, 5, 6e6)
        p_s = meta.signal_scale**2 * measure_power(signal)
        intf = np.tile(interferer.samples.astype(np.complex128), 2)[:40000]
        p_i = meta.interferer_scale**2 * float(np.mean(np.abs(intf) ** 2))
        p_n = measure_power(noise)
        sinr = 10 * math.log10(p_s / (p_i + p_n))
        assert sinr == pytest.approx(-20.0, abs=0.01)
        assert 10 * math.log10(p_s / p_n) == pytest.approx(10.0, abs=0.01)

    def test_infeasible_sinr(self):
        signal = gen_radar(RadarParams(total_samples=20000), seed=1)
        interferer = gen_noise(20000, 1.0, seed=9)
        with pytest.raises(InfeasibleSINR):
            mix_at_snr(signal, interferer, 10.0, 15.0)

    def test_random_parameterizations_hit_request(self):
        rng = np.random.default_rng(10)
        signal = gen_radar(RadarParams(total_samples=20000), seed=0)
        interferer = gen_cellular(CellularParams(sample_rate_hz=6e6), 20, seed=1)
        for trial in range(100):
            snr = float(rng.uniform(-25, 25))
            sinr = float(rng.uniform(-35, snr - 0.5))
            _, meta = mix_at_snr(signal, interferer, snr, sinr, seed=trial)
            assert meta.realized_snr_db == pytest.approx(snr, abs=0.01)
            assert meta.realized_sinr_db == pytest.approx(sinr, abs=0.01)

    def test_interferer_cyclic_extension(self):
        signal = gen_noise(5000, 1.0, seed=0)
        short = gen_noise(512, 1.0, seed=1)
        mixed, meta = mix_at_snr(signal, short, 0.0, -5.0, seed=2)
        assert len(mixed) == 5000
        assert meta.interferer_scale > 0
