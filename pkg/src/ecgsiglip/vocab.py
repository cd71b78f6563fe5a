"""The 26-finding label vocabulary and the text templates built from it.

A label set is a ``frozenset`` of finding ids (0..25). The id order is the
canonical order used everywhere: in label vectors, in rendered text, and in
per-label reports.
"""
from dataclasses import dataclass
from typing import Iterable

import numpy as np

FINDINGS = (
    "Left ventricular hypertrophy",
    "Left atrial enlargement",
    "Low ejection fraction (lowEF)",
    "Normal range",
    "Prolonged QT interval",
    "Tall T wave",
    "Left axis deviation",
    "Artificial pacemaker rhythm",
    "Intraventricular conduction delay",
    "Complete right bundle branch block",
    "Complete left bundle branch block",
    "Flat T wave",
    "Inverted T wave",
    "ST-T abnormality",
    "Poor R wave progression",
    "Abnormal Q wave",
    "Anterior wall myocardial infarction",
    "Lateral wall myocardial infarction",
    "Inferior wall myocardial infarction",
    "Anterior septal myocardial infarction",
    "Ventricular premature contraction",
    "Frequent ventricular premature contraction",
    "Ventricular bigeminy",
    "Ventricular tachycardia",
    "Couplet of ventricular premature contractions",
    "Atrial fibrillation",
)
N_FINDINGS = len(FINDINGS)

# Short handles used in code and configs.
LVH, LAE, LOW_EF, NORMAL, LONG_QT, TALL_T, LAD, PACED, IVCD, RBBB, LBBB = range(11)
FLAT_T, INV_T, STT, POOR_R, ABN_Q, ANT_MI, LAT_MI, INF_MI, AS_MI = range(11, 20)
PVC, FREQ_PVC, BIGEMINY, VT, COUPLET, AFIB = range(20, 26)

ALIASES = {
    "lowEF": LOW_EF,
    "Normal": NORMAL,
    "Normal range (Normal)": NORMAL,
    "Prolonged QT": LONG_QT,
    "AFib": AFIB,
    "LBBB": LBBB,
    "RBBB": RBBB,
    "PVC": PVC,
}

# Labels with a crisp synthetic morphology signature.
STRONG_LABELS = (AFIB, LONG_QT, LBBB, RBBB, STT, PVC, TALL_T, NORMAL)

TEXT_PREFIX = "This ECG shows "

_INDEX = {name: i for i, name in enumerate(FINDINGS)}


@dataclass(frozen=True)
class Finding:
    id: int
    name: str


VOCABULARY = tuple(Finding(i, name) for i, name in enumerate(FINDINGS))


def finding_id(label) -> int:
    """Resolve a canonical name, an alias, a :class:`Finding` or an id."""
    if isinstance(label, Finding):
        return label.id
    if isinstance(label, (int, np.integer)):
        if not 0 <= label < N_FINDINGS:
            raise KeyError(f"finding id out of range: {label}")
        return int(label)
    if label in _INDEX:
        return _INDEX[label]
    if label in ALIASES:
        return ALIASES[label]
    raise KeyError(f"unknown finding: {label!r}")


def label_set(labels: Iterable) -> frozenset:
    return frozenset(finding_id(x) for x in labels)


def label_names(labels: Iterable[int]) -> list:
    return [FINDINGS[i] for i in sorted(labels)]


def to_vector(labels: Iterable[int]) -> np.ndarray:
    v = np.zeros(N_FINDINGS, dtype=np.uint8)
    v[list(labels)] = 1
    return v


def to_matrix(label_sets) -> np.ndarray:
    out = np.zeros((len(label_sets), N_FINDINGS), dtype=np.uint8)
    for r, labels in enumerate(label_sets):
        out[r, list(labels)] = 1
    return out


def from_vector(vec) -> frozenset:
    return frozenset(int(i) for i in np.flatnonzero(np.asarray(vec)))


def render_training_text(labels: Iterable) -> str:
    """``"This ECG shows f1, f2, ..., fk."`` with findings in canonical order."""
    ids = label_set(labels)
    if not ids:
        raise ValueError("empty label set; records carry 'Normal range' at minimum")
    return TEXT_PREFIX + ", ".join(label_names(ids)) + "."


def render_label_prompt(label) -> str:
    return TEXT_PREFIX + FINDINGS[finding_id(label)] + "."


def parse_training_text(text: str) -> frozenset:
    """Inverse of :func:`render_training_text`."""
    if not (text.startswith(TEXT_PREFIX) and text.endswith(".")):
        raise ValueError(f"not a rendered ECG text: {text!r}")
    body = text[len(TEXT_PREFIX):-1]
    try:
        return label_set(body.split(", "))
    except KeyError as exc:
        raise ValueError(f"not a rendered ECG text: {text!r}") from exc
