import pytest
from hypothesis import given, strategies as st

from ecgsiglip import vocab as V


def test_vocabulary_size_and_order():
    assert V.N_FINDINGS == 26
    assert V.FINDINGS[V.NORMAL] == "Normal range"
    assert V.FINDINGS[V.AFIB] == "Atrial fibrillation"
    assert len(set(V.FINDINGS)) == 26
    assert all(", " not in name for name in V.FINDINGS)


def test_render_examples():
    assert V.render_training_text({"Normal range"}) == "This ECG shows Normal range."
    text = V.render_training_text({"Atrial fibrillation", "Left ventricular hypertrophy"})
    assert text == "This ECG shows Left ventricular hypertrophy, Atrial fibrillation."
    assert V.render_label_prompt("lowEF") == "This ECG shows Low ejection fraction (lowEF)."


def test_render_rejects_empty_and_unknown():
    with pytest.raises(ValueError):
        V.render_training_text(set())
    with pytest.raises(KeyError):
        V.label_set({"Brugada pattern"})


def test_aliases():
    assert V.finding_id("Normal range (Normal)") == V.NORMAL
    assert V.finding_id("AFib") == V.AFIB
    assert V.finding_id(V.VOCABULARY[4]) == 4
    with pytest.raises(KeyError):
        V.finding_id(26)


@given(st.frozensets(st.integers(0, 25), min_size=1))
def test_render_parse_roundtrip(ids):
    assert V.parse_training_text(V.render_training_text(ids)) == ids


@given(st.frozensets(st.integers(0, 25)))
def test_vector_roundtrip(ids):
    v = V.to_vector(ids)
    assert v.sum() == len(ids)
    assert V.from_vector(v) == ids
    assert (V.to_matrix([ids, ids]) == v).all()


def test_parse_rejects_other_text():
    with pytest.raises(ValueError):
        V.parse_training_text("Sinus rhythm.")
    with pytest.raises(ValueError):
        V.parse_training_text("This ECG shows Sinus rhythm.")
