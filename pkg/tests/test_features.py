import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcmcl.features import (HOP_LENGTH, LOG_FLOOR, N_FFT, N_MELS, SAMPLE_RATE, WIN_LENGTH, apply_norm, concat_mel,
                            fit_norm, hz_to_mel, mel_centers, mel_filterbank, mel_spectrogram, mel_to_hz, n_frames,
                            power_spectrogram, read_feature_cache, resample_to_16k, write_feature_cache)


def count_frames(n):
    start, k = 0, 0
    while start + WIN_LENGTH <= n:
        k += 1
        start += HOP_LENGTH
    return k


def test_frame_count_formula_small_range():
    for n in range(WIN_LENGTH, 4000):
        assert n_frames(n) == count_frames(n)


@given(st.integers(WIN_LENGTH, 200000))
def test_frame_count_formula(n):
    assert n_frames(n) == 1 + (n - WIN_LENGTH) // HOP_LENGTH == count_frames(n)


def test_ten_seconds_gives_998_frames():
    assert mel_spectrogram(np.zeros(10 * SAMPLE_RATE)).shape == (N_MELS, 998)


def test_too_short_input_rejected():
    with pytest.raises(ValueError):
        mel_spectrogram(np.zeros(WIN_LENGTH - 1))


def test_power_spectrum_matches_naive_dft():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(WIN_LENGTH + 2 * HOP_LENGTH)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(WIN_LENGTH) / WIN_LENGTH)
    k = np.arange(N_FFT // 2 + 1)[:, None]
    t = np.arange(WIN_LENGTH)[None, :]
    basis = np.exp(-2j * np.pi * k * t / N_FFT)
    got = power_spectrogram(x)
    for f in range(3):
        frame = x[f * HOP_LENGTH:f * HOP_LENGTH + WIN_LENGTH] * window
        np.testing.assert_allclose(got[f], np.abs(basis @ frame) ** 2, rtol=1e-9, atol=1e-9)


def test_htk_mel_scale():
    assert hz_to_mel(0.0) == 0.0
    assert hz_to_mel(700.0) == pytest.approx(2595 * np.log10(2))
    f = np.linspace(0, 8000, 50)
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)


def test_filterbank_shape_and_peaks():
    fb = mel_filterbank()
    assert fb.shape == (N_MELS, N_FFT // 2 + 1)
    assert fb.min() >= 0
    np.testing.assert_allclose(fb.max(axis=1), 1.0)
    assert np.all(fb.sum(axis=1) > 0)
    assert not fb.flags.writeable


@pytest.mark.parametrize("freq", [250.0, 1000.0, 3000.0])
def test_tone_lands_in_nearest_band(freq):
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    spec = mel_spectrogram(np.sin(2 * np.pi * freq * t))
    band = int(np.argmax(spec.mean(axis=1)))
    centers = mel_centers()
    # oracle: the filter whose centre is nearest on the mel axis
    expected = int(np.argmin(np.abs(hz_to_mel(centers) - hz_to_mel(freq))))
    assert band == expected


def test_silence_hits_log_floor():
    assert np.all(mel_spectrogram(np.zeros(1000)) == np.log(LOG_FLOOR))


@pytest.mark.parametrize("half", [800, 1600, 16000, 80000])
def test_concat_mel_matches_direct(half):
    rng = np.random.default_rng(half)
    a, b = rng.standard_normal(half), rng.standard_normal(half)
    got = concat_mel(a, b, mel_spectrogram(a), mel_spectrogram(b))
    np.testing.assert_allclose(got, mel_spectrogram(np.concatenate([a, b])), rtol=0, atol=1e-9)


def test_concat_mel_falls_back_for_odd_lengths():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(1000), rng.standard_normal(1000)
    got = concat_mel(a, b, mel_spectrogram(a), mel_spectrogram(b))
    np.testing.assert_array_equal(got, mel_spectrogram(np.concatenate([a, b])))


def test_norm_standardises_training_frames():
    rng = np.random.default_rng(2)
    specs = [rng.normal(3.0, 2.0, size=(N_MELS, k)) for k in (5, 9, 13)]
    norm = fit_norm(specs)
    z = np.concatenate([apply_norm(s, norm) for s in specs], axis=1)
    np.testing.assert_allclose(z.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=1), 1, atol=1e-12)
    constant = fit_norm([np.ones((N_MELS, 4))])
    assert np.all(constant.std > 0)


def test_feature_cache_roundtrip(tmp_path):
    spec = np.random.default_rng(3).standard_normal((N_MELS, 7))
    path = tmp_path / "x.melf"
    write_feature_cache(path, spec)
    assert path.read_bytes()[:4] == b"MELF"
    assert path.stat().st_size == 16 + 4 * spec.size
    np.testing.assert_array_equal(read_feature_cache(path), spec.astype(np.float32))
    path.write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(ValueError):
        read_feature_cache(path)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([8000, 22050, 44100, 48000]), st.integers(100, 5000))
def test_resample_length(sr, n):
    assert len(resample_to_16k(np.zeros(n), sr)) == round(n * SAMPLE_RATE / sr)


def test_resample_keeps_tone():
    sr = 44100
    t = np.arange(sr) / sr
    y = resample_to_16k(np.sin(2 * np.pi * 440 * t), sr)
    ref = np.sin(2 * np.pi * 440 * np.arange(len(y)) / SAMPLE_RATE)
    assert np.max(np.abs(y - ref)[1000:-1000]) < 1e-2
    np.testing.assert_array_equal(resample_to_16k(ref, SAMPLE_RATE), ref)
    with pytest.raises(ValueError):
        resample_to_16k(ref, 0)
