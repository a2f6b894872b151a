import numpy as np
import pytest

from t2tgan import signals as sig
from t2tgan.evaluation import detect_beats


def _record(n, fs=125.0, seed=0):
    rng = np.random.default_rng(seed)
    return sig.WaveformRecord(ppg=rng.normal(size=n), abp=80 + 40 * rng.uniform(size=n), sample_rate=fs)


# ---------------------------------------------------------------------------
# records and segmentation


def test_record_invariants():
    with pytest.raises(ValueError):
        sig.WaveformRecord(np.ones(10), np.ones(9), 100.0)
    with pytest.raises(ValueError):
        sig.WaveformRecord(np.ones(10), np.ones(10), 0.0)


@pytest.mark.parametrize("n, count", [(10_000, 10), (1000, 1), (2500, 2)])
def test_segment_counts(n, count):
    assert len(sig.segment(_record(n))) == count


def test_segment_index_accounting():
    rec = _record(2500)
    segs = sig.segment(rec)
    assert [s.offset for s in segs] == [0, 1000]
    covered = np.concatenate([np.arange(s.offset, s.offset + 1000) for s in segs])
    assert set(range(2500)) - set(covered) == set(range(2000, 2500))
    for s in segs:
        np.testing.assert_array_equal(s.ppg, rec.ppg[s.offset : s.offset + 1000])
        np.testing.assert_array_equal(s.abp, rec.abp[s.offset : s.offset + 1000])


def test_segment_short_record_rejected():
    with pytest.raises(ValueError):
        sig.segment(_record(999))


# ---------------------------------------------------------------------------
# normalisation


def test_abp_full_scale_maps_to_unit_interval():
    abp = np.linspace(30.0, 220.0, 1000)
    out = sig.normalize_abp(abp, (30.0, 220.0))
    assert out[0] == 0.0 and out[-1] == 1.0


def test_abp_midpoint_is_half():
    np.testing.assert_array_equal(sig.normalize_abp(np.full(1000, 125.0), (30.0, 220.0)), 0.5)


def test_abp_out_of_scale_is_clipped():
    out = sig.normalize_abp(np.array([10.0, 300.0]), (30.0, 220.0))
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_denormalize_endpoints_and_midpoint():
    np.testing.assert_array_equal(sig.denormalize_abp(np.array([0.0, 1.0]), (30.0, 220.0)), [30.0, 220.0])
    assert sig.denormalize_abp(np.array([0.5]), (50.0, 150.0))[0] == 100.0


def test_normalize_round_trip():
    rng = np.random.default_rng(1)
    abp = rng.uniform(30.0, 220.0, 1000)
    back = sig.denormalize_abp(sig.normalize_abp(abp, (30.0, 220.0)), (30.0, 220.0))
    assert np.abs(back - abp).max() < 1e-12


def test_normalize_ppg_per_segment_and_drop_flat():
    raw = [
        sig.RawSegment(np.linspace(-3, 5, 1000), np.full(1000, 100.0), 0),
        sig.RawSegment(np.full(1000, 2.0), np.full(1000, 100.0), 1000),
    ]
    pairs = sig.normalize(raw, (30.0, 220.0))
    assert len(pairs) == 1
    assert pairs[0].ppg.min() == 0.0 and pairs[0].ppg.max() == 1.0
    assert pairs[0].offset == 0 and pairs[0].abp_scale == (30.0, 220.0)


def test_flat_segment_rejected_directly():
    with pytest.raises(sig.UnusableSegmentError):
        sig.normalize_segment(sig.RawSegment(np.zeros(1000), np.zeros(1000), 0), (30.0, 220.0))


def test_bad_scale_rejected():
    with pytest.raises(ValueError):
        sig.normalize([], (100.0, 100.0))


# ---------------------------------------------------------------------------
# dataset tensor


def test_prepare_dataset_layout():
    ds = sig.prepare_dataset([_record(3000), _record(2000, seed=1)])
    assert ds.data.shape == (5, 2, 1000)
    assert ds.sample_rate == 125.0
    assert np.all((ds.data >= 0) & (ds.data <= 1))
    np.testing.assert_array_equal(ds.offsets, [0, 1000, 2000, 0, 1000])


def test_dataset_container_round_trip(tmp_path):
    ds = sig.synth_paired_dataset(5, seed=2)
    ds.save(tmp_path / "d.ckpt")
    back = sig.DatasetTensor.load(tmp_path / "d.ckpt")
    np.testing.assert_array_equal(back.data, ds.data)
    assert back.abp_scale == ds.abp_scale
    assert sorted(back.truth) == sorted(ds.truth)
    np.testing.assert_array_equal(back.truth["map"], ds.truth["map"])


def test_dataset_rejects_bad_layout():
    with pytest.raises(ValueError):
        sig.DatasetTensor(np.zeros((3, 1000)))
    with pytest.raises(ValueError):
        sig.DatasetTensor(np.zeros((0, 2, 1000)))


def test_subset_keeps_truth_aligned():
    ds = sig.synth_paired_dataset(6, seed=3)
    sub = ds.subset([4, 1])
    np.testing.assert_array_equal(sub.data, ds.data[[4, 1]])
    np.testing.assert_array_equal(sub.truth["sbp"], ds.truth["sbp"][[4, 1]])


# ---------------------------------------------------------------------------
# record files


def test_record_file_round_trip(tmp_path):
    recs = [_record(1200, fs=125.0), _record(1000, fs=100.0, seed=4)]
    path = sig.write_records(tmp_path / "r.txt", recs)
    back = sig.load_records(path)
    assert [r.sample_rate for r in back] == [125.0, 100.0]
    np.testing.assert_array_equal(back[0].abp, recs[0].abp)
    np.testing.assert_array_equal(back[1].ppg, recs[1].ppg)


def test_empty_record_file(tmp_path):
    (tmp_path / "e.txt").write_text("")
    with pytest.raises(sig.RecordFormatError):
        sig.load_records(tmp_path / "e.txt")


def test_column_mismatch_cites_line(tmp_path):
    lines = ["rate=100"] + [f"{i}.0,{i}.5" for i in range(5)] + ["1.0,2.0,3.0"]
    (tmp_path / "bad.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(sig.RecordFormatError, match=r":7:"):
        sig.load_records(tmp_path / "bad.txt")


def test_missing_header_cites_line(tmp_path):
    (tmp_path / "bad.txt").write_text("1.0,2.0\n")
    with pytest.raises(sig.RecordFormatError, match=r":1:.*rate"):
        sig.load_records(tmp_path / "bad.txt")


# ---------------------------------------------------------------------------
# synthetic data


def test_synth_truth_map_definition():
    ds = sig.synth_paired_dataset(20, seed=5)
    np.testing.assert_allclose(ds.truth["map"], (ds.truth["sbp"] + 2 * ds.truth["dbp"]) / 3, rtol=0, atol=0)


def test_synth_parameter_ranges():
    ds = sig.synth_paired_dataset(300, seed=6)
    t = ds.truth
    assert t["hr"].min() >= 60 and t["hr"].max() <= 100
    assert t["sbp"].min() >= 100 and t["sbp"].max() <= 160
    assert t["dbp"].min() >= 60 and t["dbp"].max() <= 90


def test_synth_is_seeded():
    a = sig.synth_paired_dataset(4, seed=7)
    b = sig.synth_paired_dataset(4, seed=7)
    c = sig.synth_paired_dataset(4, seed=8)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_synth_values_in_unit_interval():
    ds = sig.synth_paired_dataset(10, seed=9)
    assert ds.data.min() >= 0.0 and ds.data.max() <= 1.0


def test_synth_beat_counts_per_segment():
    ds = sig.synth_paired_dataset(100, seed=10)
    for k in range(len(ds)):
        abp = sig.denormalize_abp(ds.abp[k], ds.abp_scale)
        peaks, _ = detect_beats(abp, ds.sample_rate)
        assert 10 <= len(peaks) <= 17


@pytest.mark.parametrize("hr, beats", [(60.0, 10), (75.0, 12), (80.0, 13), (100.0, 16)])
def test_detected_beats_equal_constructed_beats(hr, beats):
    # whole beats only: the train starts at an onset and stops at the next one
    fs = 100.0
    n = int(round(beats * 60.0 / hr * fs))
    t = np.arange(n) / fs
    rng = np.random.default_rng(int(hr))
    abp = sig.abp_waveform(t, hr, rng.uniform(100, 160), rng.uniform(60, 90), 0.0)
    peaks, troughs = detect_beats(abp, fs)
    assert len(peaks) == beats
    assert len(troughs) == beats - 1
    expected = np.round((sig.UPSTROKE_S + np.arange(beats) * 60.0 / hr) * fs)
    np.testing.assert_array_equal(peaks, expected)


def test_ppg_lags_abp_by_transit_time():
    ds = sig.synth_paired_dataset(5, seed=11)
    lag = int(round(sig.PTT_S * ds.sample_rate))
    for k in range(5):
        a = ds.abp[k] - ds.abp[k].mean()
        p = ds.ppg[k] - ds.ppg[k].mean()
        xc = [np.dot(a[: 1000 - s], p[s:]) for s in range(40)]
        assert abs(int(np.argmax(xc)) - lag) <= 1


def test_synth_coupling_correlates_hr_and_pressure():
    ds = sig.synth_paired_dataset(2000, seed=12, coupling=0.8)
    assert np.corrcoef(ds.truth["hr"], ds.truth["sbp"])[0, 1] > 0.6
    ds0 = sig.synth_paired_dataset(2000, seed=12)
    assert abs(np.corrcoef(ds0.truth["hr"], ds0.truth["sbp"])[0, 1]) < 0.1


def test_synth_rejects_empty():
    with pytest.raises(ValueError):
        sig.synth_paired_dataset(0, seed=0)
