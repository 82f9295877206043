import numpy as np
import pytest
from scipy import stats

from phaseswap.edf import load_identity_map, read_edf_file
from phaseswap.dataset import read_label_file
from phaseswap.errors import ParameterError
from phaseswap.signals import phase_swap_array
from phaseswap.synth import (
    SynthSpec,
    generate,
    generate_white_noise,
    measured_offset,
    wrap_angle,
    write_corpus,
)

WINDOW = 512  # 5 s at 102.4 Hz


def autocorrelation(x, lags):
    x = x - x.mean()
    denom = np.dot(x, x)
    return np.array([np.dot(x[:-k], x[k:]) / denom for k in lags])


def ljung_box_pvalue(x, h=20):
    n = len(x)
    rho = autocorrelation(x, range(1, h + 1))
    q = n * (n + 2) * np.sum(rho ** 2 / (n - np.arange(1, h + 1)))
    return stats.chi2.sf(q, h)


def windows_with_regimes(corpus):
    for r in corpus.recordings:
        for reg in corpus.regimes[corpus.name_of(r)]:
            for s in range(reg.start, reg.end - WINDOW + 1, WINDOW):
                yield r, reg, s


class TestGenerate:
    def test_default_layout(self):
        c = generate(SynthSpec())
        assert len(c.recordings) == 16
        r = c.recordings[0]
        assert r.data.shape == (4, 61440) and r.sample_rate == 102.4
        assert len(c.segments_for(r)) == 20

    def test_deterministic(self):
        a, b = generate(SynthSpec(n_subjects=2, seed=4)), generate(SynthSpec(n_subjects=2, seed=4))
        for x, y in zip(a.recordings, b.recordings):
            np.testing.assert_array_equal(x.data, y.data)
        assert a.segments == b.segments
        c = generate(SynthSpec(n_subjects=2, seed=5))
        assert not np.array_equal(a.recordings[0].data, c.recordings[0].data)

    def test_zero_coupling_is_white(self):
        c = generate(SynthSpec(n_subjects=1, sessions_per_subject=1, coupling_strength=0.0, duration=120))
        x = c.recordings[0].data[:, :10000]
        for channel in x:
            assert np.max(np.abs(autocorrelation(channel, range(1, 101)))) < 0.05

    def test_coupling_offset_per_window(self):
        spec = SynthSpec(n_subjects=2, duration=300, noise_level=0.0, seed=1)
        c = generate(spec)
        for r, reg, s in windows_with_regimes(c):
            for channel in r.data:
                off = measured_offset(channel[s:s + WINDOW], reg.frequency, spec.sample_rate)
                assert abs(wrap_angle(off - reg.offset)) < 0.1

    def _swap_deviations(self, same_class_allowed=True):
        spec = SynthSpec(n_subjects=3, duration=300, noise_level=0.0, seed=1)
        c = generate(spec)
        rng = np.random.default_rng(0)
        out = []
        for r, reg, s in windows_with_regimes(c):
            regimes = c.regimes[c.name_of(r)]
            partner = regimes[int(rng.integers(len(regimes)))]
            s2 = int(rng.integers(partner.start, partner.end - WINDOW + 1))
            y = phase_swap_array(r.data[0, s:s + WINDOW], r.data[0, s2:s2 + WINDOW])
            out.append(abs(wrap_angle(measured_offset(y, reg.frequency, spec.sample_rate) - reg.offset)))
        return np.array(out)

    def test_swap_disturbs_coupling(self):
        # an unswapped window sits within 0.1 rad; most swapped ones move far off
        assert np.mean(self._swap_deviations() > 0.5) > 0.6

    @pytest.mark.xfail(strict=True, reason=(
        "a same-class partner carries the same fixed harmonic offset, and the swap "
        "transplants it; about 75% of swaps move the offset by more than 0.5 rad"))
    def test_swap_breaks_coupling_in_ninety_percent(self):
        assert np.mean(self._swap_deviations() > 0.5) >= 0.9

    def test_labels_align_with_regimes(self):
        c = generate(SynthSpec(n_subjects=2))
        for r in c.recordings:
            segs = c.segments_for(r)
            regs = c.regimes[c.name_of(r)]
            assert [(s.start, s.end, s.label) for s in segs] == [(g.start, g.end, g.label) for g in regs]
            assert segs[0].start == 0 and segs[-1].end == r.n_samples
            assert all(a.end == b.start for a, b in zip(segs, segs[1:]))

    def test_class_bands_are_distinct(self):
        c = generate(SynthSpec(n_subjects=2))
        for regs in c.regimes.values():
            for g in regs:
                lo, hi = c.spec.band(g.label)
                assert lo <= g.frequency <= hi

    @pytest.mark.parametrize("kwargs", [
        {"duration": 10.0},
        {"coupling_strength": 1.5},
        {"noise_level": -1.0},
        {"n_subjects": 0},
        {"band_low": 20.0},
        {"band_gap": -2.5},
        {"band_width": 0.0},
    ])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ParameterError):
            generate(SynthSpec(**kwargs))


class TestWhiteNoise:
    def test_mean_bound(self):
        c = generate_white_noise(SynthSpec(n_subjects=1, sessions_per_subject=1, noise_level=1.0))
        x = c.recordings[0].data
        assert np.all(np.abs(x.mean(axis=1)) < 3 / np.sqrt(x.shape[1]))

    def test_deterministic(self):
        a = generate_white_noise(SynthSpec(n_subjects=1))
        b = generate_white_noise(SynthSpec(n_subjects=1))
        np.testing.assert_array_equal(a.recordings[0].data, b.recordings[0].data)

    def test_swap_stays_white(self):
        rng = np.random.default_rng(0)
        rejections = 0
        trials = 200
        for _ in range(trials):
            y = phase_swap_array(rng.normal(size=WINDOW), rng.normal(size=WINDOW))
            rejections += ljung_box_pvalue(y) < 0.01
        # the nominal rate is 1%; allow binomial slack
        assert rejections <= 8


def test_write_corpus(tmp_path):
    c = generate(SynthSpec(n_subjects=2, sessions_per_subject=1, duration=60))
    paths = write_corpus(c, tmp_path)
    mapping = load_identity_map(paths["identity"])
    assert set(mapping) == {"sub00_ses1.edf", "sub01_ses1.edf"}
    back = read_edf_file(tmp_path / "sub01_ses1.edf")
    original = c.recordings[1]
    assert back.sample_rate == 102.4
    step = 2 * np.max(np.abs(original.data)) * 1.06 / 65535
    assert np.max(np.abs(back.data - original.data)) < step
    assert read_label_file(paths["labels"]) == c.segments


def test_shared_band_keeps_only_the_phase_label():
    spec = SynthSpec(n_subjects=1, sessions_per_subject=1, duration=120.0, band_gap=-2.0)
    assert len({spec.band(k) for k in range(spec.n_classes)}) == 1
    offsets = {spec.class_offset(k) for k in range(spec.n_classes)}
    assert len(offsets) == spec.n_classes
