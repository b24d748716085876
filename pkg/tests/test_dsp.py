import numpy as np
import pytest

from earexg import dsp
from earexg.dsp import (
    BiquadCascade,
    BiquadCoeffs,
    FilterDesignError,
    StreamingFilter,
    band_power,
    design_bandpass,
    design_notch,
    detect_deflections,
    filter_series,
    magnitude_response,
    rms_envelope,
    welch_psd,
)

SPS = 500.0


def sine(f, duration_s, sps=SPS, amp=1.0):
    t = np.arange(0, duration_s, 1 / sps)
    return amp * np.sin(2 * np.pi * f * t)


def steady_amplitude(y, sps=SPS, settle_s=5.0):
    tail = y[int(settle_s * sps):]
    return np.sqrt(2) * np.std(tail)


class TestDesignNotch:
    def test_kills_50hz_in_steady_state(self):
        notch = design_notch(50, 30, SPS)
        out = filter_series(notch, sine(50, 10))
        assert steady_amplitude(out) <= 0.01

    def test_unity_gain_at_dc(self):
        notch = design_notch(50, 30, SPS)
        assert magnitude_response(notch, [0.0], SPS)[0] == pytest.approx(1.0, abs=1e-9)
        out = filter_series(notch, np.ones(5000))
        assert out[-1] == pytest.approx(1.0, abs=1e-6)

    def test_10hz_changed_under_1_db(self):
        notch = design_notch(50, 30, SPS)
        amp = steady_amplitude(filter_series(notch, sine(10, 10)))
        assert 10 ** (-1 / 20) <= amp <= 10 ** (1 / 20)

    def test_3db_points_near_half_bandwidth(self):
        # -3 dB at f0 +- f0/(2q)
        notch = design_notch(50, 30, SPS)
        for f in (50 - 50 / 60, 50 + 50 / 60):
            assert magnitude_response(notch, [f], SPS)[0] == pytest.approx(2**-0.5, abs=0.05)

    def test_invalid_parameters(self):
        with pytest.raises(FilterDesignError):
            design_notch(250, 30, SPS)
        with pytest.raises(FilterDesignError):
            design_notch(50, 0, SPS)


class TestDesignBandpass:
    def test_dc_rejected(self):
        bp = design_bandpass(1, 40, SPS)
        out = filter_series(bp, np.ones(10_000))
        assert abs(out[-1]) <= 1e-3

    def test_passband_within_1_db(self):
        bp = design_bandpass(1, 40, SPS)
        amp = steady_amplitude(filter_series(bp, sine(10, 10)))
        assert 0.89 <= amp <= 1.12

    def test_stopband_attenuation(self):
        bp = design_bandpass(20, 150, SPS)
        amp = steady_amplitude(filter_series(bp, sine(10, 10)))
        assert amp <= 0.1

    def test_edges_at_3_db(self):
        bp = design_bandpass(1, 40, SPS)
        for f in (1.0, 40.0):
            assert magnitude_response(bp, [f], SPS)[0] == pytest.approx(2**-0.5, abs=0.03)

    def test_rolloff_at_least_24_db_per_octave(self):
        bp = design_bandpass(1, 40, SPS)
        assert magnitude_response(bp, [80.0], SPS)[0] <= 10 ** (-24 / 20)

    def test_invalid_band(self):
        with pytest.raises(FilterDesignError):
            design_bandpass(40, 1, SPS)
        with pytest.raises(FilterDesignError):
            design_bandpass(1, 300, SPS)


class TestFilterProperties:
    @pytest.mark.parametrize(
        "filt",
        [design_notch(50, 30, SPS), design_notch(60, 30, SPS), design_bandpass(1, 40, SPS),
         design_bandpass(20, 150, SPS)],
        ids=["notch50", "notch60", "bp1-40", "bp20-150"],
    )
    def test_impulse_response_decays(self, filt):
        imp = np.zeros(60_000)
        imp[0] = 1.0
        h = filter_series(filt, imp)
        peak = np.max(np.abs(h))
        assert np.max(np.abs(h[-1000:])) < 1e-6 * peak

    def test_linearity(self):
        rng = np.random.default_rng(7)
        x, y = rng.standard_normal(2000), rng.standard_normal(2000)
        filt = design_bandpass(1, 40, SPS)
        lhs = filter_series(filt, 2.5 * x - 1.25 * y)
        rhs = 2.5 * filter_series(filt, x) - 1.25 * filter_series(filt, y)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    def test_unstable_biquad_rejected(self):
        with pytest.raises(FilterDesignError):
            BiquadCoeffs(1, 0, 0, 0, 1.5)

    def test_streaming_matches_batch(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(4096)
        filt = design_notch(50, 30, SPS)
        batch = filter_series(filt, x)
        sf = StreamingFilter(filt)
        chunks = [sf.process(c) for c in np.split(x, [100, 101, 1000, 2500])]
        np.testing.assert_allclose(np.concatenate(chunks), batch, rtol=1e-12, atol=1e-15)

    def test_streaming_settles_dc(self):
        sf = StreamingFilter(design_notch(50, 30, SPS), settle_dc=True)
        out = sf.process(np.full(100, 1.65))
        np.testing.assert_allclose(out, 1.65, rtol=1e-9)


class TestWelchPsd:
    def test_sine_power_concentrates_in_band(self):
        psd = welch_psd(sine(10, 30), SPS, window_s=2.0, overlap=0.5)
        in_band = band_power(psd, 8, 12)
        assert in_band >= 0.95 * psd.total_power
        assert psd.total_power == pytest.approx(0.5, rel=0.05)

    def test_zero_series_gives_zero_psd(self):
        psd = welch_psd(np.zeros(5000), SPS)
        assert not np.any(psd.power)

    def test_parseval_within_5_percent(self):
        rng = np.random.default_rng(13)
        for scale in (1.0, 3.0):
            x = rng.standard_normal(30_000) * scale
            psd = welch_psd(x, SPS, window_s=2.0, overlap=0.5)
            assert psd.total_power == pytest.approx(np.var(x), rel=0.05)

    def test_too_short_series_rejected(self):
        with pytest.raises(ValueError):
            welch_psd(np.zeros(100), SPS, window_s=2.0)

    def test_bad_overlap_rejected(self):
        with pytest.raises(ValueError):
            welch_psd(np.zeros(5000), SPS, overlap=1.0)


class TestBandPower:
    def test_full_range_equals_total(self):
        psd = welch_psd(np.random.default_rng(5).standard_normal(10_000), SPS)
        assert band_power(psd, 0, SPS / 2) == pytest.approx(psd.total_power, rel=1e-12)

    def test_disjoint_band_near_zero(self):
        psd = welch_psd(sine(10, 30), SPS)
        assert band_power(psd, 20, 30) <= 1e-6 * psd.total_power

    def test_alpha_band_captures_10hz_sine(self):
        psd = welch_psd(sine(10, 30), SPS)
        assert band_power(psd, 8, 12) == pytest.approx(psd.total_power, rel=0.01)

    def test_empty_band_rejected(self):
        psd = welch_psd(np.zeros(5000), SPS)
        with pytest.raises(ValueError):
            band_power(psd, 12, 8)
        with pytest.raises(ValueError):
            band_power(psd, 10.0, 10.1)


class TestRmsEnvelope:
    def test_constant_series(self):
        env = rms_envelope(np.full(1000, -3.0), 0.1, SPS)
        np.testing.assert_allclose(env, 3.0, rtol=1e-12)
        assert len(env) == 1000 - 50 + 1

    def test_sine_rms_is_inverse_sqrt2(self):
        env = rms_envelope(sine(10, 10), 2.0, SPS)
        np.testing.assert_allclose(env, 2**-0.5, atol=1e-3)

    def test_tracks_amplitude_modulation(self):
        t = np.arange(0, 20, 1 / SPS)
        modulation = 1.0 + 0.5 * np.sin(2 * np.pi * 0.05 * t)
        rng = np.random.default_rng(17)
        carrier = filter_series(design_bandpass(20, 150, SPS), rng.standard_normal(len(t)))
        carrier /= np.std(carrier)
        env = rms_envelope(carrier * modulation, 0.5, SPS)
        centers = (np.arange(len(env)) + int(0.25 * SPS)) / SPS
        expected = 1.0 + 0.5 * np.sin(2 * np.pi * 0.05 * centers)
        assert np.median(np.abs(env - expected) / expected) < 0.1

    def test_window_longer_than_series_rejected(self):
        with pytest.raises(ValueError):
            rms_envelope(np.zeros(10), 1.0, SPS)


class TestDetectDeflections:
    def test_flat_series_has_no_events(self):
        assert detect_deflections(np.zeros(1000), SPS, 10.0, 0.1) == []

    def test_single_positive_ramp(self):
        t = np.arange(0, 5, 1 / SPS)
        x = np.zeros_like(t)
        ramp = (t >= 2) & (t < 2.5)
        x[ramp] = (t[ramp] - 2) / 0.5 * 211.2
        x[(t >= 2.5) & (t < 3.0)] = 211.2
        events = detect_deflections(x, SPS, 100.0, 0.1)
        assert len(events) == 1
        ev = events[0]
        assert ev.direction == "positive"
        assert ev.amplitude_uv == pytest.approx(211.2, rel=0.01)

    def test_min_duration_filters_blips(self):
        x = np.zeros(1000)
        x[500:505] = 50.0  # 10 ms blip
        assert detect_deflections(x, SPS, 10.0, 0.1) == []

    def test_scale_covariance(self):
        rng = np.random.default_rng(23)
        x = np.cumsum(rng.standard_normal(4000)) / 10
        a = detect_deflections(x, SPS, 5.0, 0.05)
        b = detect_deflections(x * 7.5, SPS, 5.0 * 7.5, 0.05)
        assert [(e.onset_s, e.direction) for e in a] == [(e.onset_s, e.direction) for e in b]

    def test_threshold_must_be_positive(self):
        with pytest.raises(ValueError):
            detect_deflections(np.zeros(10), SPS, 0.0, 0.1)


class TestCascade:
    def test_empty_cascade_rejected(self):
        with pytest.raises(FilterDesignError):
            BiquadCascade(())

    def test_sos_shape(self):
        bp = design_bandpass(1, 40, SPS)
        assert bp.sos.shape[1] == 6
