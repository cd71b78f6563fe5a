"""Zero-shot scoring and the multi-label metric suite.

A contrastive model scores record r against finding c as
``sigmoid(t * cos(zimg_r, ztxt_c) + b)`` where ``ztxt_c`` embeds the single
finding prompt and ``t, b`` are the trained head parameters. A baseline model
scores with its own per-finding sigmoid. Predictions are ``score >= threshold``
(0.5 unless per-label thresholds are supplied).
"""
import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from scipy.special import expit

from .data import load_arrays, load_signal
from .kernels import roc_sweep
from .vocab import FINDINGS, N_FINDINGS, render_label_prompt

DEFAULT_THRESHOLD = 0.5


def center_crop(signals, crop_len):
    length = signals.shape[-1]
    if crop_len is None or crop_len >= length:
        return signals
    start = (length - crop_len) // 2
    return signals[..., start:start + crop_len]


def score_embeddings(zimg, ztxt, t_prime, b) -> np.ndarray:
    """Sigmoid scores from unit-norm signal rows and unit-norm prompt rows."""
    cos = np.asarray(zimg, dtype=np.float64) @ np.asarray(ztxt, dtype=np.float64).T
    return expit(np.exp(float(t_prime)) * cos + float(b))


def prompt_embeddings(model) -> np.ndarray:
    prompts = [render_label_prompt(c) for c in range(N_FINDINGS)]
    with torch.no_grad():
        z = model.encode_texts(prompts).double()
    return (z / z.norm(dim=1, keepdim=True)).numpy()


def score_records(model, signals, crop_len=None, batch_size=64) -> np.ndarray:
    """Score ``signals[m, 12, L]`` against all 26 findings; returns ``m x 26`` in (0, 1)."""
    model.eval()
    signals = center_crop(np.asarray(signals, dtype=np.float32), crop_len)
    siglip = model.kind == "siglip"
    ztxt = prompt_embeddings(model) if siglip else None
    out = np.empty((signals.shape[0], N_FINDINGS))
    with torch.no_grad():
        for lo in range(0, signals.shape[0], batch_size):
            x = torch.from_numpy(np.ascontiguousarray(signals[lo:lo + batch_size]))
            if siglip:
                z = model.encode_signals(x).double()
                z = z / z.norm(dim=1, keepdim=True)
                out[lo:lo + len(x)] = score_embeddings(z.numpy(), ztxt, model.head.t_prime.item(),
                                                       model.head.b.item())
            else:
                out[lo:lo + len(x)] = expit(model(x).double().numpy())
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite scores")
    return out


def binarize(scores, thresholds=None) -> np.ndarray:
    scores = np.asarray(scores)
    th = DEFAULT_THRESHOLD if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    return (scores >= th).astype(np.uint8)


# ---------------------------------------------------------------- metrics


def _safe_div(a, b) -> float:
    return float(a) / float(b) if b else 0.0


def _f1(p, r) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def _check(pred, truth):
    pred = np.asarray(pred) != 0
    truth = np.asarray(truth) != 0
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return pred, truth


def hamming_loss(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    return _safe_div(np.count_nonzero(pred != truth), pred.size)


def micro_prf(pred, truth):
    pred, truth = _check(pred, truth)
    tp = np.count_nonzero(pred & truth)
    fp = np.count_nonzero(pred & ~truth)
    fn = np.count_nonzero(~pred & truth)
    p, r = _safe_div(tp, tp + fp), _safe_div(tp, tp + fn)
    return p, r, _f1(p, r)


def sample_jaccard_index(pred, truth) -> float:
    """Mean over records of |pred ∩ truth| / |pred ∪ truth| (empty vs empty counts as 1)."""
    pred, truth = _check(pred, truth)
    inter = (pred & truth).sum(axis=1)
    union = (pred | truth).sum(axis=1)
    per = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return float(per.mean()) if len(per) else 0.0


def micro_jaccard(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    union = np.count_nonzero(pred | truth)
    return _safe_div(np.count_nonzero(pred & truth), union) if union else 1.0


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: Optional[float]  # None when only one class is present


def roc_curve(scores, truth) -> RocCurve:
    """Sweep thresholds over distinct scores, descending, starting from (0, 0).

    Tied scores move the curve in a single diagonal step. The area is the
    trapezoid sum, which equals the Mann-Whitney statistic with ties at 1/2.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth) != 0
    order = np.argsort(-scores, kind="stable")
    th, tps, fps = roc_sweep(scores[order], truth[order].astype(np.uint8))
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    tps = np.r_[0.0, tps]
    fps = np.r_[0.0, fps]
    th = np.r_[np.inf, th]
    if n_pos == 0 or n_neg == 0:
        tpr = tps / n_pos if n_pos else np.zeros_like(tps)
        fpr = fps / n_neg if n_neg else np.zeros_like(fps)
        return RocCurve(fpr, tpr, th, None)
    tpr, fpr = tps / n_pos, fps / n_neg
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1])) / 2.0)
    return RocCurve(fpr, tpr, th, auc)


@dataclass
class LabelMetrics:
    label: str
    support: int
    accuracy: float
    precision: float
    recall: float
    f1_score: float
    auc: Optional[float]


def per_label_metrics(pred, truth, scores=None) -> list:
    pred, truth = _check(pred, truth)
    rows = []
    for c in range(pred.shape[1]):
        p, t = pred[:, c], truth[:, c]
        tp = np.count_nonzero(p & t)
        fp = np.count_nonzero(p & ~t)
        fn = np.count_nonzero(~p & t)
        tn = np.count_nonzero(~p & ~t)
        prec, rec = _safe_div(tp, tp + fp), _safe_div(tp, tp + fn)
        auc = roc_curve(scores[:, c], t).auc if scores is not None else None
        name = FINDINGS[c] if pred.shape[1] == N_FINDINGS else str(c)
        rows.append(LabelMetrics(name, int(t.sum()), _safe_div(tp + tn, len(t)), prec, rec, _f1(prec, rec), auc))
    return rows


def tune_thresholds(scores, truth, objective="label_f1") -> np.ndarray:
    """Per-label thresholds picked from the observed scores plus 0.5.

    ``label_f1`` maximizes each label's own F1 (ties keep 0.5, then the larger
    threshold). ``micro_f1`` runs coordinate ascent on pooled micro-F1 starting
    from 0.5, so the result never scores below the fixed threshold on the
    tuning data.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth) != 0
    m, k = scores.shape
    th = np.full(k, DEFAULT_THRESHOLD)
    cands = [np.unique(np.r_[DEFAULT_THRESHOLD, scores[:, c]]) for c in range(k)]

    def counts(c, t):
        p = scores[:, c] >= t
        return (np.count_nonzero(p & truth[:, c]), np.count_nonzero(p & ~truth[:, c]),
                np.count_nonzero(~p & truth[:, c]))

    if objective == "label_f1":
        for c in range(k):
            best, best_f = DEFAULT_THRESHOLD, _label_f1(*counts(c, DEFAULT_THRESHOLD))
            for t in cands[c][::-1]:
                f = _label_f1(*counts(c, t))
                if f > best_f:
                    best, best_f = t, f
            th[c] = best
        return th
    if objective != "micro_f1":
        raise ValueError(f"unknown objective {objective!r}")
    per = np.array([counts(c, DEFAULT_THRESHOLD) for c in range(k)], dtype=np.int64)
    for _ in range(3):
        improved = False
        for c in range(k):
            base = per.sum(axis=0) - per[c]
            cur = _label_f1(*(base + per[c]))
            for t in cands[c][::-1]:
                cnt = np.array(counts(c, t))
                f = _label_f1(*(base + cnt))
                if f > cur:
                    cur, th[c], per[c] = f, t, cnt
                    improved = True
        if not improved:
            break
    return th


def _label_f1(tp, fp, fn) -> float:
    return _f1(_safe_div(tp, tp + fp), _safe_div(tp, tp + fn))


# ---------------------------------------------------------------- reports


@dataclass
class MetricsReport:
    n_records: int
    hamming_loss: float
    precision_micro: float
    recall_micro: float
    f1_micro: float
    jaccard_index: float
    jaccard_micro: float
    macro_auc: Optional[float]
    per_label: list = field(default_factory=list)
    roc: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("roc")
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


def compute_report(scores, truth, thresholds=None) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    pred = binarize(scores, thresholds)
    p, r, f = micro_prf(pred, truth)
    rows = per_label_metrics(pred, truth, scores)
    roc = {c: roc_curve(scores[:, c], truth[:, c]) for c in range(scores.shape[1])}
    aucs = [row.auc for row in rows if row.auc is not None]
    return MetricsReport(
        n_records=int(scores.shape[0]),
        hamming_loss=hamming_loss(pred, truth),
        precision_micro=p,
        recall_micro=r,
        f1_micro=f,
        jaccard_index=sample_jaccard_index(pred, truth),
        jaccard_micro=micro_jaccard(pred, truth),
        macro_auc=float(np.mean(aucs)) if aucs else None,
        per_label=[asdict(row) for row in rows],
        roc=roc,
    )


def roc_filename(c: int) -> str:
    slug = "".join(ch if ch.isalnum() else "_" for ch in FINDINGS[c].lower()).strip("_")
    while "__" in slug:
        slug = slug.replace("__", "_")
    return f"{c:02d}_{slug}.csv"


def write_report(report: MetricsReport, out_dir, scores=None, record_ids=None) -> Path:
    out = Path(out_dir)
    (out / "roc").mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(report.dumps(), encoding="utf-8")
    for c, curve in report.roc.items():
        with open(out / "roc" / roc_filename(c), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr", "threshold"])
            for row in zip(curve.fpr, curve.tpr, curve.thresholds):
                w.writerow([repr(float(v)) for v in row])
    if scores is not None:
        with open(out / "scores.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record_id"] + list(FINDINGS))
            for rid, row in zip(record_ids, scores):
                w.writerow([rid] + [repr(float(v)) for v in row])
    return path


def eval_crop_len(header_or_meta) -> Optional[int]:
    crop = (header_or_meta.get("meta", {}).get("train_config") or {}).get("crop")
    return crop["train_crop_len"] if crop else None


def evaluate(model, manifest, split="test", out_dir=None, drift=None, seed=0, thresholds=None,
             crop_len=None, loader=load_signal) -> MetricsReport:
    """Score one split, compute every metric and optionally write report files.

    ``drift`` (a :class:`~ecgsiglip.synthgen.DriftParams`) evaluates a drifted
    copy of the split; each record's perturbation is seeded by ``seed`` and its
    record id, so runs are repeatable.
    """
    from .synthgen import drift_signal

    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"split {split!r} is empty")
    signals, truth = load_arrays(manifest, entries, loader)
    if drift is not None:
        for i, e in enumerate(entries):
            signals[i] = drift_signal(signals[i], drift, seed, e.record_id)
    scores = score_records(model, signals, crop_len=crop_len)
    report = compute_report(scores, truth, thresholds)
    if out_dir is not None:
        write_report(report, out_dir, scores, [e.record_id for e in entries])
    return report
