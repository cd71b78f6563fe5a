"""Adam training loops for the contrastive model and the supervised baseline."""
import json
import queue
import threading
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .data import N_SAMPLES, DatasetManifest, load_arrays, load_signal
from .encoders import MIN_LENGTH, BaselineModel, ModelConfig, SignalEncoderConfig, SiglipModel, TextEncoderConfig
from .evalkit import binarize, hamming_loss, micro_prf, sample_jaccard_index, score_records
from .loss import LOSS_MODES, build_target_matrix, class_weights, sigmoid_contrastive_loss, weighted_bce_loss
from .vocab import N_FINDINGS, render_label_prompt, render_training_text


class ConfigError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step, record_ids, value):
        self.step = step
        self.record_ids = list(record_ids)
        super().__init__(f"non-finite loss {value} at step {step}; batch records: {', '.join(self.record_ids)}")


@dataclass(frozen=True)
class CropConfig:
    train_crop_len: int = 4096

    def __post_init__(self):
        if not MIN_LENGTH <= self.train_crop_len <= N_SAMPLES:
            raise ConfigError(f"train_crop_len must be in [{MIN_LENGTH}, {N_SAMPLES}], got {self.train_crop_len}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    warmup_steps: int = 5000
    epochs: int = 250
    batch_size: int = 64
    embed_dim: int = 128
    loss_mode: str = "jaccard"
    crop: Optional[CropConfig] = None
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    encoder: SignalEncoderConfig = field(default_factory=SignalEncoderConfig)
    text: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    class_weighting: bool = True  # baseline only
    manifest: Optional[str] = None
    threads: int = 1
    deterministic: bool = True
    prefetch: int = 0  # batches assembled ahead on a worker thread; 0 = inline

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.epochs < 1 or self.batch_size < 1 or self.embed_dim < 1:
            raise ConfigError("epochs, batch_size and embed_dim must be positive")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas) or self.eps <= 0:
            raise ConfigError("invalid Adam betas/eps")
        if self.threads < 1 or self.prefetch < 0:
            raise ConfigError("threads must be >= 1 and prefetch >= 0")

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(encoder=self.encoder, text=self.text, embed_dim=self.embed_dim)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "TrainConfig":
        d = {**d, **overrides}
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        d = dict(d)
        try:
            if d.get("crop") is not None:
                d["crop"] = d["crop"] if isinstance(d["crop"], CropConfig) else CropConfig(**d["crop"])
            if "encoder" in d and not isinstance(d["encoder"], SignalEncoderConfig):
                d["encoder"] = SignalEncoderConfig(**d["encoder"])
            if "text" in d and not isinstance(d["text"], TextEncoderConfig):
                d["text"] = TextEncoderConfig(**d["text"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path, **overrides) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), **overrides)


def lr_at_step(step: int, config: TrainConfig) -> float:
    """Linear ramp from 0 over ``warmup_steps``, then constant."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return config.learning_rate * min(1.0, step / config.warmup_steps)


def random_crop(signal, crop_len: int, seed) -> np.ndarray:
    """Same contiguous window across all leads, start uniform in [0, L - crop_len]."""
    signal = np.asarray(signal)
    length = signal.shape[-1]
    if crop_len > length:
        raise ValueError(f"crop_len {crop_len} exceeds signal length {length}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    start = int(rng.integers(0, length - crop_len + 1))
    return signal[..., start:start + crop_len]


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: list
    best_epoch: int
    best_val_f1: float
    steps: int
    checkpoint: Optional[Path] = None
    log_path: Optional[Path] = None


def _configure_torch(config: TrainConfig):
    torch.manual_seed(config.seed)
    torch.set_num_threads(config.threads)
    torch.use_deterministic_algorithms(config.deterministic)


def _batches(signals, config: TrainConfig, rng, crop_rng):
    """Yield ``(epoch, index array, float32 batch)`` for every step of the run."""
    n = signals.shape[0]
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            x = signals[idx]
            if config.crop is not None:
                x = np.stack([random_crop(s, config.crop.train_crop_len, crop_rng) for s in x])
            yield epoch, idx, np.ascontiguousarray(x, dtype=np.float32)


def _prefetched(gen, depth):
    """Run ``gen`` on a worker thread with a bounded queue of ``depth`` items."""
    if depth <= 0:
        yield from gen
        return
    q = queue.Queue(maxsize=depth)
    done = object()
    stop = threading.Event()

    def work():
        try:
            for item in gen:
                while not stop.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put(done)
        except BaseException as exc:  # surfaced on the consumer side
            q.put(exc)

    t = threading.Thread(target=work, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is done:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()


def _val_metrics(model, signals, truth, crop_len) -> dict:
    scores = score_records(model, signals, crop_len=crop_len)
    pred = binarize(scores)
    p, r, f = micro_prf(pred, truth)
    return {
        "f1_micro": f,
        "precision_micro": p,
        "recall_micro": r,
        "hamming_loss": hamming_loss(pred, truth),
        "jaccard_index": sample_jaccard_index(pred, truth),
    }


class _Log:
    def __init__(self, path, sink):
        self.records = []
        self.fh = open(path, "w", encoding="utf-8", newline="\n") if path else None
        self.sink = sink

    def __call__(self, rec):
        self.records.append(rec)
        if self.fh:
            self.fh.write(json.dumps(rec) + "\n")
            self.fh.flush()
        if self.sink:
            self.sink(rec)

    def close(self):
        if self.fh:
            self.fh.close()


def _run(kind, manifest: DatasetManifest, config: TrainConfig, out_dir, loader, log_sink) -> TrainResult:
    _configure_torch(config)
    train_e, val_e = manifest.split("train"), manifest.split("val")
    if not train_e or not val_e:
        raise ValueError("manifest needs nonempty train and val splits")
    x_train, y_train = load_arrays(manifest, train_e, loader)
    x_val, y_val = load_arrays(manifest, val_e, loader)
    ids = [e.record_id for e in train_e]
    crop_len = config.crop.train_crop_len if config.crop else None

    if kind == "siglip":
        model = SiglipModel(config.model_config)
        texts = [render_training_text(e.labels) for e in train_e]
        # fail before any compute if a training text or prompt is not encodable
        with torch.no_grad():
            model.encode_texts(sorted(set(texts)) + [render_label_prompt(c) for c in range(N_FINDINGS)])
        label_sets = [e.labels for e in train_e]
    else:
        model = BaselineModel(config.model_config)
        w = class_weights(y_train) if config.class_weighting else np.ones(N_FINDINGS)
        weights = torch.as_tensor(w, dtype=torch.float32)
        y_t = torch.as_tensor(y_train, dtype=torch.float32)

    opt = torch.optim.Adam(model.parameters(), lr=0.0, betas=config.betas, eps=config.eps,
                           weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 0])
    crop_rng = np.random.default_rng([config.seed, 1])

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log = _Log(out / "train_log.jsonl" if out else None, log_sink)
    best_f1, best_epoch, step = -1.0, 0, 0
    meta_base = {"train_config": config.to_dict(), "kind": kind}

    def end_epoch(epoch):
        nonlocal best_f1, best_epoch
        metrics = _val_metrics(model, x_val, y_val, crop_len)
        log({"kind": "val", "epoch": epoch, "step": step, **metrics})
        if metrics["f1_micro"] > best_f1:
            best_f1, best_epoch = metrics["f1_micro"], epoch
            if out is not None:
                save_checkpoint(out / "best.ckpt", model,
                                {**meta_base, "epoch": epoch, "step": step, "val": metrics})

    current = 1
    try:
        for epoch, idx, xb in _prefetched(_batches(x_train, config, rng, crop_rng), config.prefetch):
            if epoch != current:
                end_epoch(current)
                current = epoch
            model.train()
            lr = lr_at_step(step, config)
            for g in opt.param_groups:
                g["lr"] = lr
            x = torch.from_numpy(xb)
            if kind == "siglip":
                batch = model(x, [texts[i] for i in idx])
                targets = build_target_matrix([label_sets[i] for i in idx], config.loss_mode)
                loss = sigmoid_contrastive_loss(batch, targets)
            else:
                loss = weighted_bce_loss(model(x), y_t[idx], weights)
            value = float(loss.detach())
            if not np.isfinite(value):
                raise NonFiniteLossError(step, [ids[i] for i in idx], value)
            opt.zero_grad()
            loss.backward()
            opt.step()
            log({"kind": "step", "epoch": epoch, "step": step, "lr": lr, "loss": value})
            step += 1
        end_epoch(current)
    finally:
        log.close()

    if out is not None:
        save_checkpoint(out / "last.ckpt", model,
                        {**meta_base, "epoch": config.epochs, "step": step, "val": log.records[-1]})
    return TrainResult(model.eval(), log.records, best_epoch, best_f1, step,
                       out / "best.ckpt" if out else None, out / "train_log.jsonl" if out else None)


def train_contrastive(manifest: DatasetManifest, config: TrainConfig, out_dir=None,
                      loader: Callable = load_signal, log: Optional[Callable] = None) -> TrainResult:
    """Train the signal/text towers with the pairwise sigmoid loss.

    Writes ``train_log.jsonl`` (one object per step and per validation pass),
    ``best.ckpt`` (best validation micro-F1) and ``last.ckpt`` into ``out_dir``.
    Only train and val records are ever passed to ``loader``.
    """
    return _run("siglip", manifest, config, out_dir, loader, log)


BASELINE_DEFAULTS = {"learning_rate": 1e-4, "batch_size": 32, "crop": CropConfig(), "epochs": 600}


def baseline_config(**kw) -> TrainConfig:
    return TrainConfig.from_dict({**BASELINE_DEFAULTS, **kw})


def train_baseline_multilabel(manifest: DatasetManifest, config: Optional[TrainConfig] = None, out_dir=None,
                              loader: Callable = load_signal, log: Optional[Callable] = None) -> TrainResult:
    """Signal tower plus a 26-way linear head trained with class-weighted BCE."""
    return _run("baseline", manifest, config or baseline_config(), out_dir, loader, log)
