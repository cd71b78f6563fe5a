"""Records, manifests, signal files and patient-disjoint splitting."""
import json
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .vocab import FINDINGS, N_FINDINGS, label_names, label_set, to_matrix

N_LEADS = 12
SAMPLE_RATE = 500
N_SAMPLES = 5000
SIGNAL_SHAPE = (N_LEADS, N_SAMPLES)
SIGNAL_BYTES = N_LEADS * N_SAMPLES * 4
SPLITS = ("train", "val", "test")


class SignalFormatError(ValueError):
    pass


class SignalDataError(ValueError):
    pass


@dataclass(frozen=True)
class EcgRecord:
    record_id: str
    patient_id: str
    institution: str
    signal: np.ndarray = field(repr=False)
    labels: frozenset
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        sig = np.asarray(self.signal)
        if sig.shape != SIGNAL_SHAPE:
            raise SignalFormatError(f"{self.record_id}: signal shape {sig.shape} != {SIGNAL_SHAPE}")
        if not np.all(np.isfinite(sig)):
            raise SignalDataError(f"{self.record_id}: non-finite samples")
        if self.sample_rate != SAMPLE_RATE:
            raise SignalFormatError(f"{self.record_id}: sample rate {self.sample_rate} != {SAMPLE_RATE}")
        if not self.labels:
            raise ValueError(f"{self.record_id}: empty label set")
        object.__setattr__(self, "labels", label_set(self.labels))


def save_signal(path, signal) -> None:
    arr = np.asarray(signal)
    if arr.shape != SIGNAL_SHAPE:
        raise SignalFormatError(f"signal shape {arr.shape} != {SIGNAL_SHAPE}")
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def load_signal(path) -> np.ndarray:
    """Read a headerless little-endian float32 12x5000 lead-major file."""
    size = os.path.getsize(path)
    if size != SIGNAL_BYTES:
        raise SignalFormatError(f"{path}: {size} bytes, expected {SIGNAL_BYTES}")
    sig = np.fromfile(path, dtype="<f4").reshape(SIGNAL_SHAPE)
    if not np.all(np.isfinite(sig)):
        raise SignalDataError(f"{path}: non-finite samples")
    return sig


@dataclass(frozen=True)
class ManifestEntry:
    record_id: str
    patient_id: str
    institution: str
    labels: frozenset
    signal_path: str
    split: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "patient_id": self.patient_id,
            "institution": self.institution,
            "labels": label_names(self.labels),
            "signal_path": self.signal_path,
            "split": self.split,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ManifestEntry":
        missing = {"record_id", "patient_id", "institution", "labels", "signal_path"} - obj.keys()
        if missing:
            raise ValueError(f"manifest line missing keys: {sorted(missing)}")
        split = obj.get("split")
        if split is not None and split not in SPLITS:
            raise ValueError(f"unknown split {split!r} for {obj['record_id']}")
        labels = label_set(obj["labels"])
        if not labels:
            raise ValueError(f"{obj['record_id']}: empty label set")
        return cls(
            record_id=str(obj["record_id"]),
            patient_id=str(obj["patient_id"]),
            institution=str(obj["institution"]),
            labels=labels,
            signal_path=str(obj["signal_path"]),
            split=split,
        )


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    root: Path = Path(".")

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "root", Path(self.root))
        ids = [e.record_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate record_id in manifest")

    def __len__(self):
        return len(self.entries)

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.signal_path)
        return p if p.is_absolute() else self.root / p

    def label_matrix(self, entries: Optional[Sequence[ManifestEntry]] = None) -> np.ndarray:
        entries = self.entries if entries is None else entries
        return to_matrix([e.labels for e in entries])

    def with_splits(self, assignment: dict) -> "DatasetManifest":
        return DatasetManifest(tuple(replace(e, split=assignment[e.record_id]) for e in self.entries), self.root)

    def write(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_json()) + "\n")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            entries = [ManifestEntry.from_json(json.loads(line)) for line in fh if line.strip()]
        return cls(tuple(entries), path.parent)


def load_records(manifest: DatasetManifest, entries: Iterable[ManifestEntry], loader: Callable = load_signal) -> list:
    return [
        EcgRecord(e.record_id, e.patient_id, e.institution, loader(manifest.resolve(e)), e.labels)
        for e in entries
    ]


def load_arrays(manifest: DatasetManifest, entries: Sequence[ManifestEntry], loader: Callable = load_signal):
    """Stack an entry list into ``(signals[m,12,5000] float32, labels[m,26] uint8)``."""
    signals = np.empty((len(entries),) + SIGNAL_SHAPE, dtype=np.float32)
    for i, e in enumerate(entries):
        signals[i] = loader(manifest.resolve(e))
    return signals, manifest.label_matrix(entries)


def split_dataset(manifest: DatasetManifest, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetManifest:
    """Assign every record to train/val/test with all of a patient's records together.

    Patients are placed greedily, rarest label first, into whichever split is
    furthest below its share of that label's positives (ties go to the split
    furthest below its record share, then to a seeded random choice). A
    seeded local search then moves or swaps whole patients between splits while
    that lowers the squared gap between each split's label prevalence and the
    corpus prevalence, with a penalty that keeps split sizes near their shares.
    """
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (len(SPLITS),) or np.any(r <= 0) or not np.isclose(r.sum(), 1.0):
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    if any(not e.labels for e in manifest.entries):
        raise ValueError("every record needs a nonempty label set")

    patients = sorted({e.patient_id for e in manifest.entries})
    pidx = {p: i for i, p in enumerate(patients)}
    counts = np.zeros((len(patients), N_FINDINGS), dtype=np.int64)
    sizes = np.zeros(len(patients), dtype=np.int64)
    for e in manifest.entries:
        i = pidx[e.patient_id]
        counts[i] += to_matrix([e.labels])[0]
        sizes[i] += 1

    for c in range(N_FINDINGS):
        holders = np.flatnonzero(counts[:, c])
        if len(holders) == 1:
            warnings.warn(
                f"all positives of {FINDINGS[c]!r} belong to patient {patients[holders[0]]}; "
                "the label will be missing from some splits",
                stacklevel=2,
            )

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(patients))
    label_need = r[:, None] * counts.sum(axis=0)[None, :]
    record_need = r * sizes.sum()
    left = counts.sum(axis=0).astype(np.float64)
    assigned = np.full(len(patients), -1)

    def place(i, c):
        if c is None:
            key = record_need
            tied = np.flatnonzero(key == key.max())
        else:
            best = label_need[:, c] == label_need[:, c].max()
            key = np.where(best, record_need, -np.inf)
            tied = np.flatnonzero(key == key.max())
        s = tied[0] if len(tied) == 1 else rng.choice(tied)
        assigned[i] = s
        label_need[s] -= counts[i]
        record_need[s] -= sizes[i]
        left[:] -= counts[i]

    while np.any(assigned < 0):
        active = np.flatnonzero(left > 0)
        if len(active) == 0:
            for i in order:
                if assigned[i] < 0:
                    place(i, None)
            break
        c = active[np.argmin(left[active])]
        for i in order:
            if assigned[i] < 0 and counts[i, c] > 0:
                place(i, c)

    assigned = _rebalance(counts, sizes, assigned, r, rng)
    assignment = {e.record_id: SPLITS[assigned[pidx[e.patient_id]]] for e in manifest.entries}
    return manifest.with_splits(assignment)


SIZE_PENALTY = 10.0


def _rebalance(counts, sizes, assigned, ratios, rng, max_passes=20):
    """Hill-climb a patient-to-split assignment towards equal label prevalence.

    Cost is ``sum_s sum_c (prev[s, c] - prev[c])**2`` plus ``SIZE_PENALTY``
    times the squared relative deviation of each split's size from its share.
    Each pass visits patients in a seeded order and tries moving the patient
    to every other split and swapping it with one random patient from each
    other split, keeping any change that lowers the cost.
    """
    counts = counts.astype(np.float64)
    sizes = sizes.astype(np.float64)
    k = len(ratios)
    target = ratios * sizes.sum()
    prev = counts.sum(axis=0) / sizes.sum()
    lab = np.stack([counts[assigned == s].sum(axis=0) for s in range(k)])
    tot = np.array([sizes[assigned == s].sum() for s in range(k)])
    members = [list(np.flatnonzero(assigned == s)) for s in range(k)]

    def part(s, lab_s, tot_s):
        if tot_s <= 0:
            return np.inf
        return float(((lab_s / tot_s - prev) ** 2).sum()) + SIZE_PENALTY * ((tot_s - target[s]) / target[s]) ** 2

    cost = np.array([part(s, lab[s], tot[s]) for s in range(k)])

    def apply(a, b, i, j, new_a, new_b):
        # patient i goes a -> b and, when given, patient j goes b -> a
        lab[a] = new_a[0]
        tot[a] = new_a[1]
        lab[b] = new_b[0]
        tot[b] = new_b[1]
        cost[a], cost[b] = part(a, *new_a), part(b, *new_b)
        assigned[i] = b
        members[a].remove(i)
        members[b].append(i)
        if j is not None:
            assigned[j] = a
            members[b].remove(j)
            members[a].append(j)

    for _ in range(max_passes):
        improved = False
        for i in rng.permutation(len(sizes)):
            a = assigned[i]
            for b in range(k):
                if b == a:
                    continue
                new_a = (lab[a] - counts[i], tot[a] - sizes[i])
                new_b = (lab[b] + counts[i], tot[b] + sizes[i])
                if part(a, *new_a) + part(b, *new_b) < cost[a] + cost[b] - 1e-15:
                    apply(a, b, i, None, new_a, new_b)
                    improved = True
                    break
                if not members[b]:
                    continue
                j = members[b][rng.integers(len(members[b]))]
                new_a = (lab[a] - counts[i] + counts[j], tot[a] - sizes[i] + sizes[j])
                new_b = (lab[b] + counts[i] - counts[j], tot[b] + sizes[i] - sizes[j])
                if part(a, *new_a) + part(b, *new_b) < cost[a] + cost[b] - 1e-15:
                    apply(a, b, i, j, new_a, new_b)
                    improved = True
                    break
        if not improved:
            break
    return assigned
