import numpy as np
import pytest

import ecg_features as F
from ecgsiglip import synthgen as S
from ecgsiglip import vocab as V
from ecgsiglip.data import DatasetManifest, load_signal


def test_record_deterministic():
    a = S.generate_record({"Normal range"}, 7)
    b = S.generate_record({"Normal range"}, 7)
    assert np.array_equal(a.signal, b.signal)
    assert not np.array_equal(a.signal, S.generate_record({"Normal range"}, 8).signal)


def test_signals_finite_and_bounded():
    rng = np.random.default_rng(0)
    for i, labels in enumerate(S.sample_label_sets(60, "default", rng)):
        sig = S.generate_record(labels, i).signal
        assert sig.dtype == np.float32 and sig.shape == (12, 5000)
        assert np.all(np.isfinite(sig)) and np.abs(sig).max() <= 10.0


def test_empty_labels_rejected():
    with pytest.raises(ValueError):
        S.generate_record(set(), 0)


@pytest.mark.parametrize("seed", range(40))
def test_afib_has_no_p_wave_and_irregular_rr(seed):
    f = F.features(S.generate_record({"Atrial fibrillation"}, seed).signal)
    assert f["p_amp"] < 0.02
    assert f["rr_cv"] > 0.1


@pytest.mark.parametrize("seed", range(40))
def test_prolonged_qt_measures_long(seed):
    assert F.features(S.generate_record({"Prolonged QT interval"}, seed).signal)["qt"] >= 0.44


def test_normal_measures_within_limits():
    for seed in range(20):
        f = F.features(S.generate_record({"Normal range"}, seed).signal)
        assert f["qt"] < 0.44 and f["qrs_width"] < 0.11 and f["rr_cv"] < 0.1 and f["ectopic"] == 0


def test_strong_label_causality():
    """The independent detector separates each strong label at >= 90% on 500 records."""
    rng = np.random.default_rng(1)
    sets = S.sample_label_sets(500, "strong", rng)
    hits = {c: 0 for c in V.STRONG_LABELS}
    for i, labels in enumerate(sets):
        found, _ = F.detect(S.generate_record(labels, 1000 + i).signal)
        for c in V.STRONG_LABELS:
            hits[c] += found[V.FINDINGS[c]] == (c in labels)
    acc = {V.FINDINGS[c]: n / len(sets) for c, n in hits.items()}
    assert min(acc.values()) >= 0.9, acc


def _rec():
    return S.generate_record({"Tall T wave"}, 3)


def test_drift_identity():
    r = _rec()
    assert np.array_equal(S.apply_drift(r, S.DriftParams.identity(), 5).signal, r.signal)


def test_drift_doubles():
    r = _rec()
    out = S.apply_drift(r, S.DriftParams(2.0, 0, 0, 0), 5).signal
    assert np.array_equal(out, np.clip(2 * r.signal, -10, 10))


def test_drift_shift_is_circular_500_samples():
    r = _rec()
    out = S.apply_drift(r, S.DriftParams(1.0, 0, 0, 1000), 5).signal
    assert np.array_equal(out, np.roll(r.signal, 500, axis=1))
    assert out.shape == r.signal.shape


def test_drift_keeps_labels_and_validates():
    r = _rec()
    assert S.apply_drift(r, S.DriftParams(), 1).labels == r.labels
    with pytest.raises(ValueError):
        S.DriftParams(amplitude_scale=0.0)
    with pytest.raises(ValueError):
        S.DriftParams(noise_std_mV=-1.0)


def test_sampled_offset_within_range():
    for seed in range(50):
        d = S.sample_drift(S.DriftParams(), seed)
        assert -600 <= d.time_offset_ms <= 600
    a = S.drift_signal(_rec().signal, S.DriftParams(), 3, "R1")
    assert np.array_equal(a, S.drift_signal(_rec().signal, S.DriftParams(), 3, "R1"))


def test_label_set_sampling_rules():
    rng = np.random.default_rng(0)
    assert all(s == {V.NORMAL} for s in S.sample_label_sets(50, "none", rng))
    sets = S.sample_label_sets(500, {"Normal range": 1.0, "Atrial fibrillation": 0.5}, rng)
    assert all((V.NORMAL in s) == (s == {V.NORMAL}) for s in sets)


def test_prior_frequency_concentrates():
    sets = S.sample_label_sets(2000, {"Atrial fibrillation": 0.3}, np.random.default_rng(4))
    freq = np.mean([V.AFIB in s for s in sets])
    assert 0.27 <= freq <= 0.33


def test_prior_validation():
    with pytest.raises(ValueError):
        S.prior_vector([0.5] * 25)
    with pytest.raises(ValueError):
        S.prior_vector({"Atrial fibrillation": 1.5})


def test_corpus_counts_and_determinism(tmp_path):
    m = S.generate_corpus(tmp_path / "a", n_patients=100, records_per_patient=2, seed=3)
    assert len(m) == 200
    assert len({e.patient_id for e in m.entries}) == 100
    S.generate_corpus(tmp_path / "b", n_patients=100, records_per_patient=2, seed=3)
    assert (tmp_path / "a/manifest.jsonl").read_bytes() == (tmp_path / "b/manifest.jsonl").read_bytes()
    e = m.entries[17]
    assert (tmp_path / "a" / e.signal_path).read_bytes() == (tmp_path / "b" / e.signal_path).read_bytes()
    back = DatasetManifest.read(tmp_path / "a/manifest.jsonl")
    assert np.array_equal(load_signal(back.resolve(e)), load_signal(m.resolve(e)))


def test_corpus_zero_prior_all_normal(tmp_path):
    m = S.generate_corpus(tmp_path, n_patients=10, label_prior="none", split_ratios=None)
    assert all(e.labels == {V.NORMAL} for e in m.entries)
    assert all(e.split is None for e in m.entries)
