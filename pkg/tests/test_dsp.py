import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from axialvc.dsp import (
    PEAK_TARGET,
    Spectrogram,
    StftConfig,
    Waveform,
    griffin_lim,
    istft,
    log_mel,
    mel_matrix,
    preprocess,
    read_wav,
    resample,
    spectral_convergence,
    stft_magnitude,
    write_wav,
)
from axialvc.errors import AudioError, ConfigError, ShapeError

from conftest import direct_dft_frames

CFG = StftConfig()
SR = 22050


def tone(n: int, partials=(1, 2, 3), f0: float = 220.0, sr: int = SR) -> np.ndarray:
    t = np.arange(n) / sr
    return sum(np.sin(2 * np.pi * k * f0 * t) / k for k in partials)


# ------------------------------------------------------------- preprocess


def test_frame_count_examples():
    assert CFG.samples_for(128) == 33_536
    assert CFG.frames(33_536) == 128


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1024, 20_000), window=st.sampled_from([128, 256, 1024]), hop_div=st.sampled_from([1, 2, 4]))
def test_frame_count_law(n, window, hop_div):
    cfg = StftConfig(window, window // hop_div)
    if n < window:
        return
    starts = [s for s in range(0, n) if s + window <= n and s % cfg.hop == 0]  # brute-force enumeration
    assert cfg.frames(n) == len(starts) == 1 + (n - window) // cfg.hop


def test_preprocess_keeps_exact_length(rng):
    x = rng.uniform(-1, 1, 33_536)
    out = preprocess(Waveform(x), 128)
    assert len(out) == 33_536
    assert np.max(np.abs(out.samples)) == pytest.approx(PEAK_TARGET)


def test_preprocess_pads_with_trailing_zeros(rng):
    x = rng.uniform(-1, 1, 30_000)
    out = preprocess(Waveform(x), 128)
    assert len(out) == 33_536
    np.testing.assert_array_equal(out.samples[30_000:], 0.0)
    np.testing.assert_allclose(out.samples[:30_000], x * PEAK_TARGET / np.max(np.abs(x)))


def test_preprocess_trims_leading_silence(rng):
    body = rng.uniform(-1, 1, 20_000)
    body[0] = 1.0
    x = np.concatenate([1e-4 * rng.uniform(-1, 1, 5_000), body])
    out = preprocess(Waveform(x), 128)
    np.testing.assert_allclose(out.samples[:20_000], body * PEAK_TARGET)


def test_preprocess_rejects_silence():
    with pytest.raises(AudioError, match="empty after trim"):
        preprocess(Waveform(np.zeros(5000)), 4)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), lead=st.integers(0, 3000), frames=st.integers(1, 20))
def test_preprocess_is_idempotent(seed, lead, frames):
    rng = np.random.default_rng(seed)
    x = np.concatenate([np.zeros(lead), rng.standard_normal(4000) * rng.uniform(0.01, 5)])
    cfg = StftConfig(256, 64)
    once = preprocess(Waveform(x), frames, cfg)
    twice = preprocess(once, frames, cfg)
    np.testing.assert_array_equal(once.samples, twice.samples)


# ------------------------------------------------------------------- STFT


def test_stft_shapes_and_zero_input():
    assert stft_magnitude(Waveform(np.zeros(33_536))).mag.shape == (513, 128)
    np.testing.assert_array_equal(stft_magnitude(Waveform(np.zeros(2048))).mag, 0.0)
    with pytest.raises(ShapeError):
        stft_magnitude(Waveform(np.zeros(1000)))


def test_bin_64_cosine_matches_direct_dft():
    n = 4096
    x = np.cos(2 * np.pi * (64 * SR / 1024) * np.arange(n) / SR)
    mag = stft_magnitude(Waveform(x)).mag
    ref = direct_dft_frames(x, CFG.window, CFG.hop)
    np.testing.assert_allclose(mag, ref, rtol=1e-6, atol=1e-9 * ref.max())
    assert (mag.argmax(axis=0) == 64).all()


@pytest.mark.parametrize("n", [1024, 1500, 4096])
def test_stft_matches_direct_dft_on_noise(n, rng):
    x = rng.standard_normal(n)
    mag = stft_magnitude(Waveform(x)).mag
    ref = direct_dft_frames(x, CFG.window, CFG.hop)
    np.testing.assert_allclose(mag, ref, rtol=1e-6, atol=1e-9 * ref.max())


def test_istft_inverts_stft_in_the_interior(rng):
    from axialvc.dsp import stft

    cfg = StftConfig(256, 64)
    x = rng.standard_normal(cfg.samples_for(30))
    y = istft(stft(x, cfg), cfg)
    np.testing.assert_allclose(y[1:], x[1:], atol=1e-9)  # sample 0 has zero window weight


# ------------------------------------------------------------- Griffin-Lim


def test_griffin_lim_zero_magnitude_gives_silence():
    y = griffin_lim(Spectrogram(np.zeros((513, 6)), CFG), 4)
    np.testing.assert_array_equal(y.samples, 0.0)


def test_griffin_lim_zero_iterations_is_initial_inverse(rng):
    cfg = StftConfig(256, 64)
    mag = rng.uniform(0, 1, (cfg.bins, 10))
    y = griffin_lim(Spectrogram(mag, cfg), 0, seed=5)
    phase = np.exp(2j * np.pi * np.random.default_rng(5).random(mag.shape))
    np.testing.assert_allclose(y.samples, istft(mag * phase, cfg), atol=1e-12)


def test_griffin_lim_converges_on_a_tone():
    x = tone(CFG.samples_for(40))
    mag = stft_magnitude(Waveform(x)).mag
    hist: list[float] = []
    y = griffin_lim(Spectrogram(mag, CFG), 32, seed=0, history=hist)
    assert len(hist) == 33
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    assert hist[-1] < 0.5 * hist[0]
    assert spectral_convergence(y.samples, mag, CFG) == pytest.approx(hist[-1])


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 1000))
def test_griffin_lim_error_never_increases(seed):
    cfg = StftConfig(128, 32)
    mag = np.random.default_rng(seed).uniform(0, 1, (cfg.bins, 12)) ** 3
    hist: list[float] = []
    griffin_lim(Spectrogram(mag, cfg), 12, seed=seed, history=hist)
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


# -------------------------------------------------------------------- mel


def test_mel_defaults_and_properties():
    fb = mel_matrix()
    assert fb.weights.shape == (40, 513)
    assert (np.diff(fb.centers_hz) > 0).all()
    assert fb.weights.min() >= 0 and fb.weights.max() <= 1
    freqs = np.arange(513) * SR / 1024
    inside = (freqs > 0) & (freqs < 8000)
    assert (fb.weights[:, inside].sum(axis=0) > 0).all()


def test_single_mel_filter_spans_the_band():
    fb = mel_matrix(1, 513, SR, 0.0, 8000.0)
    freqs = np.arange(513) * SR / 1024
    nz = freqs[fb.weights[0] > 0]
    assert nz.min() > 0 and nz.max() < 8000
    assert nz.min() < 2 * SR / 1024 and nz.max() > 8000 - 2 * SR / 1024


def test_mel_errors():
    with pytest.raises(ConfigError, match="Nyquist"):
        mel_matrix(f_max=12_000)
    with pytest.raises(ConfigError, match="cover no frequency bin"):
        mel_matrix(40, 17, SR)


def test_log_mel_values(rng):
    fb = mel_matrix()
    assert np.all(log_mel(np.zeros((513, 3)), fb, 1e-5).logmel == pytest.approx(np.log(1e-5)))
    spec = rng.uniform(0.5, 2.0, (513, 4))
    a, b = log_mel(spec, fb).logmel, log_mel(spec * 3.0, fb).logmel
    np.testing.assert_allclose(b - a, np.log(3.0), atol=1e-12)
    from axialvc.dsp import MelFilterbank

    eye = MelFilterbank(np.eye(2), 0.0, 1.0, np.array([0.0, 1.0]))
    np.testing.assert_allclose(log_mel(np.array([[2.0], [1e-9]]), eye, 1e-5).logmel,
                               [[np.log(2.0)], [np.log(1e-5)]])
    with pytest.raises(ShapeError):
        log_mel(np.zeros((10, 2)), fb)


# -------------------------------------------------------------------- WAV


def test_wav_round_trip(tmp_path, rng):
    x = 0.8 * rng.uniform(-1, 1, 3000)
    write_wav(tmp_path / "a.wav", Waveform(x))
    y = read_wav(tmp_path / "a.wav")
    assert y.sample_rate == SR
    np.testing.assert_allclose(y.samples, x, atol=1 / 32767)


def test_wav_resampling_and_errors(tmp_path, rng):
    wavfile.write(tmp_path / "lo.wav", 11025, (rng.uniform(-1, 1, 1000) * 3e4).astype(np.int16))
    assert len(read_wav(tmp_path / "lo.wav")) == 2000
    np.testing.assert_allclose(resample(np.linspace(0, 1, 441), 44100, 22050), np.linspace(0, 1, 441)[::2][:220])
    wavfile.write(tmp_path / "st.wav", SR, np.zeros((100, 2), np.int16))
    with pytest.raises(AudioError, match="mono"):
        read_wav(tmp_path / "st.wav")
    (tmp_path / "bad.wav").write_bytes(b"not a wav")
    with pytest.raises(AudioError):
        read_wav(tmp_path / "bad.wav")
