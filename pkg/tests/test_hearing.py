import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hasanet.dsp import AudioSignal
from hasanet.hearing import (
    CONFIGURATIONS,
    Audiogram,
    Configuration,
    HearingError,
    Split,
    apply_gains,
    apply_nalr,
    classify_configuration,
    gain_curve,
    interpolate_log_freq,
    nalr_gains,
    parse_bank,
)
from hasanet.labels import band_energies

thresholds = st.lists(st.integers(0, 120), min_size=6, max_size=6)


@pytest.mark.parametrize(
    "levels, expected",
    [
        ([40, 40, 40, 40, 40, 40], Configuration.FLAT),
        ([10, 15, 25, 45, 65, 70], Configuration.SLOPING),
        ([10, 10, 15, 45, 70, 40], Configuration.NOISE_NOTCHED),
        ([70, 60, 50, 40, 30, 20], Configuration.RISING),
        ([20, 35, 55, 50, 35, 25], Configuration.COOKIE_BITE),
        ([15, 10, 10, 25, 40, 40], Configuration.HIGH_FREQUENCY),
    ],
)
def test_classify_examples(levels, expected):
    assert classify_configuration(Audiogram(levels)) == expected


def test_cookie_bite_peak_must_be_mid_frequency():
    # peak at 4000 Hz with low edges is a noise notch, not a cookie bite
    assert classify_configuration([10, 10, 15, 45, 70, 40]) != Configuration.COOKIE_BITE


def test_unclassifiable():
    with pytest.raises(HearingError, match="unclassifiable audiogram"):
        classify_configuration([0, 30, 0, 30, 0, 30])


def test_audiogram_validation():
    with pytest.raises(HearingError):
        Audiogram([10, 20, 30])
    with pytest.raises(HearingError):
        Audiogram([10, 20, 30, 40, 50, 130])
    assert not Audiogram([20] * 6).is_hearing_loss
    assert Audiogram([20, 20, 20, 20, 20, 21]).is_hearing_loss


def test_builtin_bank_layout(bank):
    assert len(bank) == 42
    assert bank.validate() == []
    for c in CONFIGURATIONS:
        assert len(bank.select(c)) == 7
        assert len(bank.select(c, Split.SEEN)) == 5
        assert len(bank.select(c, Split.UNSEEN)) == 2
    seen = {e.id for e in bank.select(split=Split.SEEN)}
    unseen = {e.id for e in bank.select(split=Split.UNSEEN)}
    assert not seen & unseen


def test_builtin_bank_labels_match_classifier(bank):
    for entry in bank:
        assert classify_configuration(entry.audiogram) == entry.configuration
        assert entry.audiogram.is_hearing_loss


def test_bank_severity_spread(bank):
    # every configuration spans mild (<= 40), moderate and severe (> 55 dB) peak losses
    for c in CONFIGURATIONS:
        peaks = [max(e.audiogram.thresholds_db_hl) for e in bank.select(c)]
        assert min(peaks) <= 40 and max(peaks) > 55


def test_bank_text_round_trip(bank):
    again = parse_bank(bank.to_text())
    assert [(e.id, e.split, e.audiogram.thresholds_db_hl) for e in again] == [
        (e.id, e.split, e.audiogram.thresholds_db_hl) for e in bank
    ]


def test_bank_validate_reports_problems():
    text = "#hasa-patterns v1\nFlat\tSEEN\t10\t40\t10\t40\t10\t40\n"
    problems = parse_bank(text).validate()
    assert any("unclassifiable" in p for p in problems)
    assert any("expected 42" in p for p in problems)


def test_parse_bank_errors():
    with pytest.raises(HearingError):
        parse_bank("nope\n")
    with pytest.raises(HearingError):
        parse_bank("#hasa-patterns v1\nFlat\tSEEN\t1\t2\n")
    with pytest.raises(HearingError):
        parse_bank("#hasa-patterns v1\nSquare\tSEEN\t1\t2\t3\t4\t5\t6\n")


# -- NAL-R -------------------------------------------------------------------------------


def test_nalr_zero_loss():
    np.testing.assert_array_equal(nalr_gains(Audiogram([0] * 6)), [0, 0, 1, 0, 0, 0])


def test_nalr_flat_60():
    # X = 0.05 * 180 = 9; G = 9 + 18.6 + k
    gains = nalr_gains(Audiogram([60] * 6))
    np.testing.assert_allclose(gains, [10.6, 19.6, 28.6, 26.6, 25.6, 25.6], atol=1e-12)
    assert gains[3] == pytest.approx(26.6, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(thresholds, st.integers(0, 5), st.integers(1, 60))
def test_nalr_monotone_in_each_threshold(levels, index, bump):
    raised = list(levels)
    raised[index] = min(120, raised[index] + bump)
    assert np.all(nalr_gains(Audiogram(raised)) >= nalr_gains(Audiogram(levels)))


def test_interpolation_holds_edges():
    values = np.arange(6.0)
    np.testing.assert_allclose(interpolate_log_freq([0, 100, 250, 6000, 8000], values), [0, 0, 0, 5, 5])
    # midpoint in log frequency between 250 and 500 Hz
    assert interpolate_log_freq([250 * np.sqrt(2)], values)[0] == pytest.approx(0.5)


def test_zero_loss_filter_within_one_db():
    g = gain_curve(16000, 16000, nalr_gains(Audiogram([0] * 6)))
    db = 20 * np.log10(g)
    assert db.min() >= 0.0 and db.max() <= 1.0 + 1e-12


def test_flat60_white_noise_band_gains(rng):
    x = rng.standard_normal(16000 * 4)
    audiogram = Audiogram([60] * 6)
    y = apply_nalr(AudioSignal(x), audiogram).samples
    centers = 1000.0 * 2.0 ** (np.arange(-6, 9) / 3.0)
    measured = 10 * np.log10(band_energies(y, 16000, centers) / band_energies(x, 16000, centers))
    expected = interpolate_log_freq(centers, nalr_gains(audiogram))
    assert np.max(np.abs(measured - expected)) < 1.0


def test_silence_in_silence_out():
    out = apply_nalr(AudioSignal(np.zeros(1000)), Audiogram([50] * 6))
    assert not out.samples.any()


def test_apply_nalr_length_and_linearity(rng):
    a, b = rng.standard_normal(3001), rng.standard_normal(3001)
    ag = Audiogram([20, 30, 40, 50, 60, 70])
    fa, fb = apply_nalr(AudioSignal(a), ag).samples, apply_nalr(AudioSignal(b), ag).samples
    fab = apply_nalr(AudioSignal(a + b), ag).samples
    assert fab.shape == a.shape
    np.testing.assert_allclose(fab, fa + fb, rtol=1e-6, atol=1e-9 * np.abs(fab).max())
    np.testing.assert_allclose(apply_nalr(AudioSignal(2.5 * a), ag).samples, 2.5 * fa, rtol=1e-12, atol=1e-12)


def test_zero_gain_round_trip(rng):
    x = rng.standard_normal(4097)
    out = apply_nalr(AudioSignal(x), Audiogram([0] * 6), corrections=np.zeros(6))
    np.testing.assert_allclose(out.samples, x, rtol=1e-6, atol=1e-12)
    np.testing.assert_allclose(apply_gains(AudioSignal(x), np.zeros(6)).samples, x, atol=1e-12)
