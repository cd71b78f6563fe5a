"""Label-conditioned synthetic 12-lead ECGs.

Each beat is a handful of Gaussian bumps (P, Q, R, S, terminal R', T and an
ST shelf) with per-lead amplitudes. A record starts from a randomized sinus
template and every finding in its label set edits the template, in canonical
label order. This is a stand-in for a private clinical corpus, not a cardiac
simulator: findings without a crisp ECG correlate get deliberately weak edits.
"""
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import vocab as V
from .data import (
    N_LEADS,
    N_SAMPLES,
    SAMPLE_RATE,
    DatasetManifest,
    EcgRecord,
    ManifestEntry,
    save_signal,
    split_dataset,
)
from .kernels import render_waves

LEADS = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
I, II, III, AVR, AVL, AVF, V1, V2, V3, V4, V5, V6 = range(12)
LIMB = slice(0, 6)
LIMB_ANGLES = np.deg2rad([0.0, 60.0, 120.0, -150.0, -30.0, 90.0])
_LIMB_UNIT = np.stack([np.cos(LIMB_ANGLES), np.sin(LIMB_ANGLES)], axis=1)  # (6, 2)

DURATION = N_SAMPLES / SAMPLE_RATE
NOISE_MV = 0.005
GAIN_RANGE = (0.85, 1.15)
WANDER_MAX_MV = 0.1
SIGNAL_LIMIT = 10.0

# Per-label prevalences for the default corpus. Chosen for this stand-in;
# they are not clinical statistics.
DEFAULT_PRIOR = {
    V.LVH: 0.08, V.LAE: 0.06, V.LOW_EF: 0.06, V.NORMAL: 0.0, V.LONG_QT: 0.05,
    V.TALL_T: 0.03, V.LAD: 0.06, V.PACED: 0.02, V.IVCD: 0.03, V.RBBB: 0.05,
    V.LBBB: 0.03, V.FLAT_T: 0.08, V.INV_T: 0.06, V.STT: 0.10, V.POOR_R: 0.05,
    V.ABN_Q: 0.03, V.ANT_MI: 0.02, V.LAT_MI: 0.02, V.INF_MI: 0.03, V.AS_MI: 0.03,
    V.PVC: 0.07, V.FREQ_PVC: 0.02, V.BIGEMINY: 0.02, V.VT: 0.01, V.COUPLET: 0.02,
    V.AFIB: 0.08,
}
STRONG_PRIOR = {
    V.AFIB: 0.15, V.LONG_QT: 0.12, V.LBBB: 0.08, V.RBBB: 0.10,
    V.STT: 0.15, V.PVC: 0.12, V.TALL_T: 0.10,
}


def prior_vector(prior) -> np.ndarray:
    """Accept a dict keyed by finding name/id, a 26-sequence, or a preset name."""
    if isinstance(prior, str):
        prior = {"default": DEFAULT_PRIOR, "strong": STRONG_PRIOR, "none": {}}[prior]
    if isinstance(prior, dict):
        vec = np.zeros(V.N_FINDINGS)
        for k, p in prior.items():
            vec[V.finding_id(k)] = p
    else:
        vec = np.asarray(prior, dtype=np.float64)
    if vec.shape != (V.N_FINDINGS,) or np.any(vec < 0) or np.any(vec > 1):
        raise ValueError("label prior must be 26 probabilities in [0, 1]")
    return vec


@dataclass(frozen=True)
class MorphologyParams:
    heart_rate_bpm: float
    rr_jitter: float
    p_amp: np.ndarray
    q_amp: np.ndarray
    qrs_amp: np.ndarray  # R wave
    s_amp: np.ndarray
    r2_amp: np.ndarray  # terminal R' / notch
    t_amp: np.ndarray
    st_offset_mV: np.ndarray
    qrs_width_ms: float = 90.0
    qt_ms: float = 400.0
    p_width_ms: float = 20.0
    pvc_rate: float = 0.0
    axis_rotation_deg: float = 0.0
    irregular: bool = False
    paced: bool = False
    min_pvcs: int = 0
    bigeminy: bool = False
    couplet: bool = False
    vt_run: int = 0

    def __post_init__(self):
        if not 30.0 <= self.heart_rate_bpm <= 220.0:
            raise ValueError(f"heart rate {self.heart_rate_bpm} outside [30, 220]")
        if self.qrs_width_ms <= 0 or self.qt_ms <= 0 or self.p_width_ms <= 0:
            raise ValueError("widths and intervals must be positive")
        for name in ("p_amp", "q_amp", "qrs_amp", "s_amp", "r2_amp", "t_amp", "st_offset_mV"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (N_LEADS,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 12-vector")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class DriftParams:
    amplitude_scale: float = 0.9
    baseline_wander_mV: float = 0.05
    noise_std_mV: float = 0.02
    time_offset_ms: float = 600.0

    def __post_init__(self):
        if not self.amplitude_scale > 0:
            raise ValueError("amplitude_scale must be positive")
        if self.baseline_wander_mV < 0 or self.noise_std_mV < 0:
            raise ValueError("wander and noise must be non-negative")

    @classmethod
    def identity(cls) -> "DriftParams":
        return cls(1.0, 0.0, 0.0, 0.0)


def _limb(angle_deg, mag):
    a = np.deg2rad(angle_deg)
    return mag * (_LIMB_UNIT @ np.array([np.cos(a), np.sin(a)]))


def _rotate_limb(vec, deg):
    if deg == 0.0:
        return vec
    out = vec.copy()
    v2, *_ = np.linalg.lstsq(_LIMB_UNIT, vec[LIMB], rcond=None)
    resid = vec[LIMB] - _LIMB_UNIT @ v2
    a = np.deg2rad(deg)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    out[LIMB] = _LIMB_UNIT @ (rot @ v2) + resid
    return out


def base_params(rng) -> MorphologyParams:
    """A randomized normal sinus template."""
    u = rng.uniform
    axis = u(20.0, 70.0)
    r = np.zeros(N_LEADS)
    r[LIMB] = np.clip(_limb(axis, u(0.8, 1.3)), 0.0, None)
    r[V1:] = np.array([0.2, 0.4, 0.7, 1.1, 1.2, 0.9]) * u(0.8, 1.2)
    s = np.zeros(N_LEADS)
    s[LIMB] = np.clip(_limb(axis, u(0.8, 1.3)), None, 0.0) * 0.8
    s[V1:] = np.array([-0.9, -1.1, -0.7, -0.4, -0.2, -0.1]) * u(0.8, 1.2)
    q = np.zeros(N_LEADS)
    q[[I, II, AVL, V5, V6]] = -0.06 * u(0.5, 1.5)
    t = np.zeros(N_LEADS)
    t[LIMB] = _limb(axis + u(-20.0, 20.0), u(0.25, 0.35))
    t[V1:] = np.array([0.05, 0.3, 0.35, 0.3, 0.25, 0.2])
    t *= u(0.85, 1.25)
    p = np.zeros(N_LEADS)
    p[LIMB] = _limb(u(40.0, 70.0), u(0.12, 0.2))
    p[V1:] = np.array([0.06, 0.08, 0.08, 0.08, 0.08, 0.08]) * u(0.8, 1.3)
    return MorphologyParams(
        heart_rate_bpm=u(55.0, 90.0),
        rr_jitter=u(0.01, 0.03),
        p_amp=p,
        q_amp=q,
        qrs_amp=r,
        s_amp=s,
        r2_amp=np.zeros(N_LEADS),
        t_amp=t,
        st_offset_mV=np.zeros(N_LEADS),
        qrs_width_ms=u(75.0, 95.0),
        qt_ms=u(370.0, 415.0),
        p_width_ms=u(17.0, 22.0),
    )


def _scaled(vec, leads, factor):
    out = vec.copy()
    out[leads] = out[leads] * factor
    return out


def _set(vec, leads, value):
    out = vec.copy()
    out[leads] = value
    return out


def _modify(p: MorphologyParams, label: int, rng) -> MorphologyParams:
    u = rng.uniform
    if label == V.LVH:
        k = u(1.1, 1.4)
        return replace(p, qrs_amp=_scaled(p.qrs_amp, [I, AVL, V5, V6], k), s_amp=_scaled(p.s_amp, [V1, V2], k))
    if label == V.LAE:
        p_amp = p.p_amp.copy()
        p_amp[V1] -= u(0.02, 0.05)
        return replace(p, p_width_ms=p.p_width_ms * u(1.1, 1.3), p_amp=p_amp)
    if label == V.LOW_EF:
        k = u(0.65, 0.85)
        return replace(p, qrs_amp=p.qrs_amp * k, s_amp=p.s_amp * k, qrs_width_ms=p.qrs_width_ms + u(8.0, 18.0))
    if label == V.LONG_QT:
        return replace(p, qt_ms=u(490.0, 540.0), heart_rate_bpm=min(p.heart_rate_bpm, 80.0))
    if label == V.TALL_T:
        return replace(p, t_amp=_scaled(p.t_amp, slice(V1, None), u(2.6, 3.2)))
    if label == V.LAD:
        return replace(p, axis_rotation_deg=p.axis_rotation_deg - u(80.0, 110.0))
    if label == V.PACED:
        return replace(
            p, paced=True, p_amp=p.p_amp * 0.0, qrs_width_ms=max(p.qrs_width_ms, u(150.0, 170.0)),
            axis_rotation_deg=p.axis_rotation_deg - 100.0, t_amp=-0.7 * p.t_amp,
        )
    if label == V.IVCD:
        return replace(p, qrs_width_ms=max(p.qrs_width_ms, u(115.0, 125.0)))
    if label == V.RBBB:
        r2 = p.r2_amp.copy()
        r2[[V1, V2]] += [u(0.6, 0.9), u(0.3, 0.5)]
        r2[[I, AVL, V5, V6]] -= u(0.25, 0.4)
        return replace(
            p, r2_amp=r2, s_amp=_scaled(p.s_amp, [V1, V2], 0.2),
            qrs_width_ms=max(p.qrs_width_ms, u(130.0, 155.0)),
            t_amp=_set(p.t_amp, [V1, V2], -0.15),
        )
    if label == V.LBBB:
        r2 = p.r2_amp.copy()
        r2[[I, AVL, V5, V6]] += 0.6 * np.abs(p.qrs_amp[[I, AVL, V5, V6]]) + 0.2
        return replace(
            p, r2_amp=r2,
            qrs_amp=_set(p.qrs_amp, [V1, V2, V3], [-1.1, -1.4, -1.0]),
            s_amp=_set(p.s_amp, [V1, V2, V3], 0.0),
            q_amp=_set(p.q_amp, [I, AVL, V5, V6], 0.0),
            qrs_width_ms=max(p.qrs_width_ms, u(135.0, 160.0)),
            t_amp=_scaled(p.t_amp, [I, AVL, V5, V6], -0.6),
        )
    if label == V.FLAT_T:
        return replace(p, t_amp=p.t_amp * u(0.1, 0.25))
    if label == V.INV_T:
        return replace(p, t_amp=_scaled(p.t_amp, [I, AVL, V3, V4, V5, V6], -u(0.4, 0.7)))
    if label == V.STT:
        leads = [I, II, AVF, V4, V5, V6]
        return replace(
            p, st_offset_mV=_set(p.st_offset_mV, leads, -u(0.14, 0.22)),
            t_amp=_scaled(p.t_amp, leads, 0.4),
        )
    if label == V.POOR_R:
        return replace(p, qrs_amp=_scaled(p.qrs_amp, [V1, V2, V3, V4], u(0.2, 0.4)))
    if label == V.ABN_Q:
        groups = ([II, III, AVF], [I, AVL], [V2, V3])
        return replace(p, q_amp=_set(p.q_amp, groups[rng.integers(len(groups))], -u(0.15, 0.3)))
    if label in (V.ANT_MI, V.LAT_MI, V.INF_MI, V.AS_MI):
        leads = {
            V.ANT_MI: [V2, V3, V4], V.LAT_MI: [I, AVL, V5, V6],
            V.INF_MI: [II, III, AVF], V.AS_MI: [V1, V2, V3],
        }[label]
        return replace(
            p, q_amp=_set(p.q_amp, leads, -u(0.25, 0.45)),
            qrs_amp=_scaled(p.qrs_amp, leads, 0.5),
            st_offset_mV=_set(p.st_offset_mV, leads, u(0.02, 0.05)),
        )
    if label == V.PVC:
        return replace(p, pvc_rate=max(p.pvc_rate, u(0.08, 0.15)), min_pvcs=max(p.min_pvcs, 1))
    if label == V.FREQ_PVC:
        return replace(p, pvc_rate=max(p.pvc_rate, u(0.25, 0.35)), min_pvcs=max(p.min_pvcs, 3))
    if label == V.BIGEMINY:
        return replace(p, bigeminy=True)
    if label == V.VT:
        return replace(p, vt_run=int(rng.integers(4, 8)))
    if label == V.COUPLET:
        return replace(p, couplet=True, min_pvcs=max(p.min_pvcs, 2))
    if label == V.AFIB:
        return replace(
            p, irregular=True, p_amp=p.p_amp * 0.0, rr_jitter=max(p.rr_jitter, 0.2),
            heart_rate_bpm=min(p.heart_rate_bpm, 75.0),
        )
    return p  # Normal range: template unchanged


def morphology(labels, rng) -> MorphologyParams:
    p = base_params(rng)
    for label in sorted(labels):
        p = _modify(p, label, rng)
    return p


def _beat_schedule(p: MorphologyParams, rng):
    """List of (R time in seconds, is_ectopic) covering the record.

    Slots are consumed left to right: a sinus beat follows its predecessor by
    one RR interval, an ectopic beat comes early (coupling 0.55-0.65 RR) and
    the sinus beat after it is delayed by a compensatory pause.
    """
    rr = 60.0 / p.heart_rate_bpm
    if p.irregular:
        # redraw until the intervals inside the record (edges dropped) are
        # clearly irregular
        while True:
            seq = rr * rng.uniform(0.75, 1.55, size=40)
            inner = seq[1:max(3, int(np.searchsorted(np.cumsum(seq), DURATION - rr)))]
            if 0.18 <= inner.std() / inner.mean() <= 0.35:
                break
        it = iter(seq)

        def next_rr():
            return next(it, rr)
    else:
        def next_rr():
            return rr * (1.0 + p.rr_jitter * rng.standard_normal())

    n_slots = 2 * int(DURATION / rr) + 16
    # slots guaranteed to land well inside the record
    usable = max(3, int((DURATION - 1.0 - rr) / (1.45 * rr)))
    ectopic = np.zeros(n_slots, dtype=bool)
    if p.bigeminy:
        ectopic[1 + int(rng.integers(2)) :: 2] = True
    if p.pvc_rate > 0:
        ectopic[1:] |= rng.random(n_slots - 1) < p.pvc_rate
    if p.couplet:
        k = int(rng.integers(2, usable))
        ectopic[k:k + 2] = True
        ectopic[k - 1] = ectopic[k + 2] = False
    if ectopic[2:usable + 1].sum() < p.min_pvcs:
        free = np.flatnonzero(~ectopic[2:usable + 1]) + 2
        ectopic[rng.choice(free, size=min(len(free), p.min_pvcs), replace=False)] = True
    vt_start = int(rng.integers(2, usable + 1)) if p.vt_run else -1

    beats = [(rng.uniform(0.0, rr), False)]
    slot = 1
    while True:
        prev_t, prev_e = beats[-1]
        if slot == vt_start:
            t = prev_t
            for _ in range(p.vt_run):
                t += rng.uniform(0.34, 0.40)
                beats.append((t, True))
            slot += 1
            continue
        if slot < n_slots and ectopic[slot]:
            t, e = prev_t + rng.uniform(0.55, 0.65) * rr, True
        elif prev_e:
            t, e = prev_t + rng.uniform(1.25, 1.45) * rr, False
        else:
            t, e = prev_t + next_rr(), False
        if t > DURATION + 1.0:
            return beats
        beats.append((t, e))
        slot += 1


def _beat_waves(p: MorphologyParams, r_time: float, ectopic: bool, ectopic_shape):
    """Wave list (center s, sigma s, 12 amplitudes) for one beat."""
    w = p.qrs_width_ms / 1000.0
    waves = []
    if ectopic:
        q, r, s, t, ew = ectopic_shape
        waves.append((r_time - 0.3 * ew, ew / 7.0, q))
        waves.append((r_time, ew / 4.5, r))
        waves.append((r_time + 0.35 * ew, ew / 6.0, s))
        waves.append((r_time - ew / 2 + 0.42, 0.055, t))
        return waves
    rot = p.axis_rotation_deg
    if p.paced:
        waves.append((r_time - 0.5 * w - 0.01, 0.002, np.full(N_LEADS, 1.2)))
    if np.any(p.p_amp):
        waves.append((r_time - 0.5 * w - 0.11, p.p_width_ms / 1000.0, p.p_amp))
    waves.append((r_time - 0.3 * w, w / 10.0, _rotate_limb(p.q_amp, rot)))
    waves.append((r_time, w / 5.0, _rotate_limb(p.qrs_amp, rot)))
    waves.append((r_time + 0.32 * w, w / 10.0, _rotate_limb(p.s_amp, rot)))
    if np.any(p.r2_amp):
        waves.append((r_time + 0.3 * w, w / 7.0, _rotate_limb(p.r2_amp, rot)))
    if np.any(p.st_offset_mV):
        waves.append((r_time + 0.5 * w + 0.07, 0.035, p.st_offset_mV))
    t_sigma = 0.035
    t_end = r_time - 0.5 * w + p.qt_ms / 1000.0
    waves.append((t_end - 2.3 * t_sigma, t_sigma, p.t_amp))
    return waves


def synthesize(p: MorphologyParams, rng) -> np.ndarray:
    beats = _beat_schedule(p, rng)
    ew = rng.uniform(0.14, 0.17)
    pvc_axis = rng.uniform(-150.0, -90.0)
    er = np.zeros(N_LEADS)
    er[LIMB] = _limb(pvc_axis, 1.4)
    er[V1:] = np.array([1.0, 1.2, 1.0, 0.6, 0.2, -0.3]) * rng.uniform(1.0, 1.4)
    ectopic_shape = (-0.15 * np.abs(er), er, -0.3 * er, -0.35 * er, ew)
    centers, sigmas, amps = [], [], []
    for r_time, ect in beats:
        for c, s, a in _beat_waves(p, r_time, ect, ectopic_shape):
            centers.append(c)
            sigmas.append(s)
            amps.append(a)
    sig = render_waves(np.array(centers), np.array(sigmas), np.array(amps), N_SAMPLES, SAMPLE_RATE)
    return np.clip(_acquisition(sig, rng), -SIGNAL_LIMIT, SIGNAL_LIMIT).astype(np.float32)


def _acquisition(sig, rng):
    """Recording artifacts every clean record carries: gain spread, slow wander, noise."""
    t = np.arange(sig.shape[1]) / SAMPLE_RATE
    sig = sig * rng.uniform(*GAIN_RANGE)
    freq = rng.uniform(0.05, 0.4)
    amp = rng.uniform(0.0, WANDER_MAX_MV) * rng.uniform(0.5, 1.0, size=(sig.shape[0], 1))
    phase = rng.uniform(0.0, 2 * np.pi, size=(sig.shape[0], 1))
    sig = sig + amp * np.sin(2 * np.pi * freq * t[None, :] + phase)
    return sig + NOISE_MV * rng.standard_normal(sig.shape)


def _seed_words(*parts) -> list:
    h = hashlib.sha256(repr(parts).encode()).digest()
    return [int.from_bytes(h[i:i + 4], "little") for i in range(0, 16, 4)]


def generate_record(labels, seed, record_id="rec", patient_id="pat", institution="synthetic") -> EcgRecord:
    ids = V.label_set(labels)
    if not ids:
        raise ValueError("labels must be nonempty")
    rng = np.random.default_rng(_seed_words("record", int(seed)))
    sig = synthesize(morphology(ids, rng), rng)
    return EcgRecord(record_id, patient_id, institution, sig, ids)


def _drift_array(sig, drift: DriftParams, seed) -> np.ndarray:
    sig = np.asarray(sig)
    shift = int(round(drift.time_offset_ms * SAMPLE_RATE / 1000.0))
    out = drift.amplitude_scale * sig
    if shift:
        out = np.roll(out, shift, axis=1)
    if drift.baseline_wander_mV or drift.noise_std_mV:
        rng = np.random.default_rng(_seed_words("drift", seed))
        out = out.astype(np.float64)
        if drift.baseline_wander_mV:
            t = np.arange(sig.shape[1]) / SAMPLE_RATE
            freq = rng.uniform(0.15, 0.5)
            phase = rng.uniform(0.0, 2 * np.pi, size=(sig.shape[0], 1))
            out = out + drift.baseline_wander_mV * np.sin(2 * np.pi * freq * t[None, :] + phase)
        if drift.noise_std_mV:
            out = out + drift.noise_std_mV * rng.standard_normal(sig.shape)
    return np.clip(out, -SIGNAL_LIMIT, SIGNAL_LIMIT).astype(np.float32)


def apply_drift(record: EcgRecord, drift: DriftParams, seed) -> EcgRecord:
    """Scale, circularly shift by ``time_offset_ms`` (0.5 samples/ms), add wander and noise."""
    return replace(record, signal=_drift_array(record.signal, drift, int(seed)))


def sample_drift(drift: DriftParams, seed) -> DriftParams:
    """Per-record drift: offset drawn uniformly from +/- ``time_offset_ms``."""
    if drift.time_offset_ms == 0:
        return drift
    rng = np.random.default_rng(_seed_words("offset", seed))
    return replace(drift, time_offset_ms=float(rng.uniform(-drift.time_offset_ms, drift.time_offset_ms)))


def drift_signal(signal, drift: DriftParams, seed, record_id: str = "") -> np.ndarray:
    """Drift one stored signal with a per-record offset; repeatable for a given (seed, record_id)."""
    key = (int(seed), str(record_id))
    return _drift_array(signal, sample_drift(drift, key), key)


def sample_label_sets(n: int, prior, rng) -> list:
    prior = prior_vector(prior)
    draws = rng.random((n, V.N_FINDINGS)) < prior[None, :]
    out = []
    for row in draws:
        ids = set(np.flatnonzero(row).tolist())
        ids.discard(V.NORMAL)
        if not ids:
            ids = {V.NORMAL}
        out.append(frozenset(ids))
    return out


def generate_corpus(
    out_dir,
    n_patients: int,
    records_per_patient: int = 1,
    label_prior="default",
    drift: Optional[DriftParams] = None,
    seed: int = 0,
    institution: str = "synthetic",
    split_ratios: Optional[Sequence[float]] = (0.8, 0.1, 0.1),
) -> DatasetManifest:
    """Write ``manifest.jsonl`` and ``signals/*.f32`` under ``out_dir``.

    Record ``k`` gets a signal seed derived from ``(seed, k)``, so the corpus
    is reproducible and records are independent of each other.
    """
    if n_patients < 1 or records_per_patient < 1:
        raise ValueError("n_patients and records_per_patient must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "signals").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(_seed_words("corpus", int(seed)))
    n = n_patients * records_per_patient
    label_sets = sample_label_sets(n, label_prior, rng)
    entries = []
    for k, labels in enumerate(label_sets):
        pid = f"P{k // records_per_patient:06d}"
        rid = f"R{k:07d}"
        rec_seed = _seed_words("corpus-record", int(seed), k)[0]
        rec = generate_record(labels, rec_seed, rid, pid, institution)
        if drift is not None:
            rec = apply_drift(rec, sample_drift(drift, rec_seed), rec_seed)
        rel = f"signals/{rid}.f32"
        save_signal(out_dir / rel, rec.signal)
        entries.append(ManifestEntry(rid, pid, institution, rec.labels, rel))
    manifest = DatasetManifest(tuple(entries), out_dir)
    if split_ratios is not None:
        manifest = split_dataset(manifest, split_ratios, seed)
    manifest.write(out_dir / "manifest.jsonl")
    return manifest
