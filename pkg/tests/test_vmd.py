import numpy as np
import pytest

from lftsformer.vmd import ImfSet, VmdParams, one_sided_weights, psd, vmd_decompose

N = 1024
TONES = (0.05, 0.20)


@pytest.fixture(scope="module")
def two_tone():
    t = np.arange(N)
    return np.sin(2 * np.pi * TONES[0] * t) + np.sin(2 * np.pi * TONES[1] * t)


def fft_peaks(x, count):
    # independent of the decomposition: the largest periodogram bins
    spec = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(len(x))
    return np.sort(freqs[np.argsort(spec)[-count:]])


def test_fft_oracle_sees_the_tones(two_tone):
    np.testing.assert_allclose(fft_peaks(two_tone, 2), TONES, rtol=0.01)


def test_two_tone_recovery(two_tone):
    imfs = vmd_decompose(two_tone, VmdParams(K=2))
    peaks = fft_peaks(two_tone, 2)
    np.testing.assert_allclose(imfs.center_freqs, TONES, rtol=0.02)
    np.testing.assert_allclose(imfs.center_freqs, peaks, rtol=0.02)
    err = np.linalg.norm(imfs.reconstruction() - two_tone) / np.linalg.norm(two_tone)
    assert err < 0.05


def test_constant_signal_dc_mode():
    x = np.full(200, 2.5)
    imfs = vmd_decompose(x, VmdParams(K=1, dc_mode=True))
    assert np.max(np.abs(imfs.modes[0] - x)) < 1e-6
    assert abs(imfs.center_freqs[0]) < 1e-12


def test_output_contract(two_tone):
    imfs = vmd_decompose(two_tone, VmdParams(K=3, max_iter=50))
    assert isinstance(imfs, ImfSet)
    assert imfs.modes.shape == (3, N)
    assert np.all(np.diff(imfs.center_freqs) >= 0)
    np.testing.assert_array_equal(imfs.residual, two_tone - imfs.modes.sum(0))
    assert imfs.iterations_used <= 50


def test_max_iter_flag(two_tone):
    imfs = vmd_decompose(two_tone, VmdParams(K=2, tol=1e-300, max_iter=3))
    assert not imfs.converged and imfs.iterations_used == 3


def test_odd_length_and_errors():
    x = np.sin(np.arange(101) * 0.3)
    assert vmd_decompose(x, VmdParams(K=2)).modes.shape == (2, 101)
    with pytest.raises(ValueError):
        vmd_decompose(np.arange(8.0), VmdParams(K=1))
    with pytest.raises(ValueError):
        vmd_decompose(np.r_[np.ones(20), np.nan], VmdParams(K=1))
    with pytest.raises(ValueError):
        VmdParams(K=0)


def test_mode_spectra_separate(two_tone):
    imfs = vmd_decompose(two_tone, VmdParams(K=2))
    dominant = [np.argmax(psd(m)[1]) for m in imfs.modes]
    assert dominant[0] != dominant[1]
    f = psd(imfs.modes[0])[0]
    np.testing.assert_allclose(f[dominant], TONES, atol=1.5 / N)


@pytest.mark.parametrize("seed", range(3))
def test_energy_not_inflated(seed):
    rng = np.random.default_rng(seed)
    t = np.arange(512)
    x = np.sin(2 * np.pi * 0.07 * t) + 0.5 * np.sin(2 * np.pi * 0.31 * t) + 0.3 * rng.standard_normal(512)
    imfs = vmd_decompose(x, VmdParams(K=3))
    assert imfs.converged
    assert (imfs.modes ** 2).sum() <= 1.1 * (x ** 2).sum()


def test_deterministic(two_tone):
    a = vmd_decompose(two_tone, VmdParams(K=3))
    b = vmd_decompose(two_tone, VmdParams(K=3))
    assert a.modes.tobytes() == b.modes.tobytes()
    assert a.center_freqs.tobytes() == b.center_freqs.tobytes()


def _errors_over_tol(x, tau):
    errs = []
    tol = 1e-3
    while tol > 1e-12:
        imfs = vmd_decompose(x, VmdParams(K=2, tol=tol, tau=tau))
        errs.append(np.linalg.norm(imfs.residual))
        tol /= 2
    return errs


@pytest.mark.xfail(strict=True, reason="without dual ascent the reconstruction error is not a "
                   "descent quantity; it grows by ~3e-6 relative between sweeps 4 and 5")
def test_tightening_tol_default_tau(two_tone):
    errs = _errors_over_tol(two_tone, 0.0)
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_tightening_tol_default_tau_drift_is_tiny(two_tone):
    errs = _errors_over_tol(two_tone, 0.0)
    assert max(errs) <= min(errs) * (1 + 1e-5)


@pytest.mark.parametrize("tau", [0.1, 0.5])
def test_tightening_tol_with_dual_ascent(two_tone, tau):
    errs = _errors_over_tol(two_tone, tau)
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_trace_csv(tmp_path, two_tone):
    imfs = vmd_decompose(two_tone, VmdParams(K=2), keep_trace=True)
    imfs.write_trace(tmp_path / "trace.csv")
    rows = (tmp_path / "trace.csv").read_text().splitlines()
    assert rows[0].startswith("iteration,update_ratio")
    assert len(rows) == imfs.iterations_used + 1


def test_psd():
    t = np.arange(1024)
    f, p = psd(np.sin(2 * np.pi * 0.1 * t))
    assert abs(f[np.argmax(p)] - 0.1) <= 0.5 / 1024
    assert np.all(psd(np.zeros(64))[1] == 0)
    x = np.random.default_rng(0).standard_normal(1000)
    for n in (1000, 999):
        _, p = psd(x[:n])
        energy = (one_sided_weights(n) * p).sum() / n
        assert abs(energy - (x[:n] ** 2).sum() / n) < 1e-9
