"""Signal and text towers plus the learnable sigmoid head.

The signal tower is a 1D ResNet-18: a kernel-7/stride-2 stem with max-pool,
four stages of two basic blocks (channels w, 2w, 4w, 8w; stride 2 entering
stages 2-4) and global average pooling. ``base_width=64`` gives the canonical
512-d feature; narrower widths keep the topology for CPU-sized runs.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .vocab import N_FINDINGS, parse_training_text

EMBED_DIMS = (128, 256, 512)
MIN_LENGTH = 64


class UnknownTextError(KeyError):
    pass


class DegenerateEmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class SignalEncoderConfig:
    in_leads: int = 12
    base_width: int = 64
    stem_kernel: int = 7
    block_kernel: int = 3
    blocks_per_stage: tuple = (2, 2, 2, 2)
    # average-pool factor applied to the raw input before the stem
    input_decimation: int = 1

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_stage", tuple(self.blocks_per_stage))
        if self.base_width < 1 or self.input_decimation < 1 or len(self.blocks_per_stage) < 1:
            raise ValueError("invalid signal encoder config")

    @property
    def channels(self) -> tuple:
        return tuple(self.base_width * 2 ** i for i in range(len(self.blocks_per_stage)))

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]


@dataclass(frozen=True)
class TextEncoderConfig:
    kind: str = "toy"  # "toy" | "frozen"
    token_dim: int = 64
    path: Optional[str] = None  # frozen: JSON-lines of {text, vector}

    def __post_init__(self):
        if self.kind not in ("toy", "frozen"):
            raise ValueError(f"unknown text encoder kind {self.kind!r}")
        if self.kind == "frozen" and not self.path:
            raise ValueError("frozen text encoder needs a path")


@dataclass(frozen=True)
class ModelConfig:
    encoder: SignalEncoderConfig = field(default_factory=SignalEncoderConfig)
    text: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    embed_dim: int = 128
    init_t_prime: float = math.log(10.0)
    init_bias: float = -10.0

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be positive, got {self.embed_dim}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        enc = SignalEncoderConfig(**d.pop("encoder", {}))
        text = TextEncoderConfig(**d.pop("text", {}))
        return cls(encoder=enc, text=text, **d)


class BasicBlock1d(nn.Module):
    def __init__(self, c_in, c_out, stride, kernel):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv1d(c_in, c_out, kernel, stride, pad, bias=False)
        self.bn1 = nn.BatchNorm1d(c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel, 1, pad, bias=False)
        self.bn2 = nn.BatchNorm1d(c_out)
        self.downsample = None
        if stride != 1 or c_in != c_out:
            self.downsample = nn.Sequential(nn.Conv1d(c_in, c_out, 1, stride, bias=False), nn.BatchNorm1d(c_out))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        identity = x if self.downsample is None else self.downsample(x)
        return F.relu(out + identity)


class ResNet1d(nn.Module):
    def __init__(self, cfg: SignalEncoderConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        k = cfg.stem_kernel
        self.stem = nn.Sequential(
            nn.Conv1d(cfg.in_leads, w, k, 2, k // 2, bias=False),
            nn.BatchNorm1d(w),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.MaxPool1d(3, 2, 1)
        stages = []
        c_in = w
        for i, (c, n) in enumerate(zip(cfg.channels, cfg.blocks_per_stage)):
            blocks = [BasicBlock1d(c_in, c, 1 if i == 0 else 2, cfg.block_kernel)]
            blocks += [BasicBlock1d(c, c, 1, cfg.block_kernel) for _ in range(n - 1)]
            stages.append(nn.Sequential(*blocks))
            c_in = c
        self.stages = nn.ModuleList(stages)

    def forward(self, x, return_lengths=False):
        if x.dim() != 3 or x.shape[1] != self.cfg.in_leads:
            raise ValueError(f"expected (batch, {self.cfg.in_leads}, length), got {tuple(x.shape)}")
        if x.shape[2] < MIN_LENGTH:
            raise ValueError(f"signal length {x.shape[2]} < {MIN_LENGTH}")
        if self.cfg.input_decimation > 1:
            x = F.avg_pool1d(x, self.cfg.input_decimation, ceil_mode=True)
        x = self.stem(x)
        lengths = [x.shape[2]]
        x = self.pool(x)
        lengths.append(x.shape[2])
        for stage in self.stages:
            x = stage(x)
            lengths.append(x.shape[2])
        feat = x.mean(dim=2)
        return (feat, lengths) if return_lengths else feat


class ToyTextEncoder(nn.Module):
    """Mean of per-finding embeddings, then a linear map to the shared space."""

    def __init__(self, token_dim, embed_dim):
        super().__init__()
        self.table = nn.Embedding(N_FINDINGS, token_dim)
        self.proj = nn.Linear(token_dim, embed_dim)

    def encode_label_matrix(self, bits: torch.Tensor) -> torch.Tensor:
        bits = bits.to(self.table.weight.dtype)
        mean = bits @ self.table.weight / bits.sum(dim=1, keepdim=True)
        return self.proj(mean)

    def forward(self, texts: Sequence[str]) -> torch.Tensor:
        bits = torch.from_numpy(np.stack([_text_bits(t) for t in texts]))
        return self.encode_label_matrix(bits)


@lru_cache(maxsize=8192)
def _text_bits(text: str) -> np.ndarray:
    try:
        ids = parse_training_text(text)
    except ValueError as exc:
        raise UnknownTextError(text) from exc
    if not ids:
        raise UnknownTextError(text)
    v = np.zeros(N_FINDINGS, dtype=np.float32)
    v[list(ids)] = 1.0
    return v


def read_text_embeddings(path):
    texts, vectors = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                texts.append(obj["text"])
                vectors.append(obj["vector"])
    arr = np.asarray(vectors, dtype=np.float32)
    if arr.ndim != 2 or len(set(texts)) != len(texts):
        raise ValueError(f"{path}: vectors must share one dimension and texts must be unique")
    return texts, arr


def write_text_embeddings(path, texts, vectors) -> None:
    vectors = np.asarray(vectors, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t, v in zip(texts, vectors):
            fh.write(json.dumps({"text": t, "vector": [float(x) for x in v]}) + "\n")


class FrozenFileEncoder(nn.Module):
    """Fixed text vectors looked up by exact string, then a trainable projection."""

    def __init__(self, texts, vectors, embed_dim):
        super().__init__()
        vectors = torch.as_tensor(np.asarray(vectors, dtype=np.float32))
        self.texts = list(texts)
        self.index = {t: i for i, t in enumerate(self.texts)}
        self.register_buffer("vectors", vectors)
        self.proj = nn.Linear(vectors.shape[1], embed_dim)

    @classmethod
    def from_file(cls, path, embed_dim):
        texts, arr = read_text_embeddings(path)
        return cls(texts, arr, embed_dim)

    def lookup(self, texts):
        missing = [t for t in texts if t not in self.index]
        if missing:
            raise UnknownTextError(f"no frozen embedding for text: {missing[0]!r}")
        return torch.tensor([self.index[t] for t in texts], dtype=torch.long)

    def forward(self, texts):
        return self.proj(self.vectors[self.lookup(texts)])


class ContrastiveHead(nn.Module):
    def __init__(self, t_prime=math.log(10.0), bias=-10.0):
        super().__init__()
        self.t_prime = nn.Parameter(torch.tensor(float(t_prime)))
        self.b = nn.Parameter(torch.tensor(float(bias)))


@dataclass
class EmbeddingBatch:
    zimg: torch.Tensor
    ztxt: torch.Tensor
    t_prime: torch.Tensor
    b: torch.Tensor


def normalize_and_pair(img_emb, txt_emb, head) -> EmbeddingBatch:
    if img_emb.shape[0] != txt_emb.shape[0]:
        raise ValueError(f"row count mismatch: {img_emb.shape[0]} vs {txt_emb.shape[0]}")
    zs = []
    for name, emb in (("signal", img_emb), ("text", txt_emb)):
        norms = emb.norm(dim=1, keepdim=True)
        if torch.any(norms <= torch.finfo(emb.dtype).tiny):
            raise DegenerateEmbeddingError(f"zero-norm {name} embedding row")
        zs.append(emb / norms)
    return EmbeddingBatch(zs[0], zs[1], head.t_prime, head.b)


class SiglipModel(nn.Module):
    kind = "siglip"

    def __init__(self, cfg: ModelConfig, text_encoder: Optional[nn.Module] = None):
        super().__init__()
        self.cfg = cfg
        self.signal = ResNet1d(cfg.encoder)
        self.signal_proj = nn.Linear(cfg.encoder.feature_dim, cfg.embed_dim)
        if text_encoder is None:
            if cfg.text.kind == "toy":
                text_encoder = ToyTextEncoder(cfg.text.token_dim, cfg.embed_dim)
            else:
                text_encoder = FrozenFileEncoder.from_file(cfg.text.path, cfg.embed_dim)
        self.text = text_encoder
        self.head = ContrastiveHead(cfg.init_t_prime, cfg.init_bias)

    def encode_signals(self, x):
        return self.signal_proj(self.signal(x))

    def encode_texts(self, texts):
        return self.text(texts)

    def forward(self, x, texts) -> EmbeddingBatch:
        return normalize_and_pair(self.encode_signals(x), self.encode_texts(texts), self.head)


class BaselineModel(nn.Module):
    """Same signal tower with a per-finding linear head."""

    kind = "baseline"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.signal = ResNet1d(cfg.encoder)
        self.classifier = nn.Linear(cfg.encoder.feature_dim, N_FINDINGS)

    def forward(self, x):
        return self.classifier(self.signal(x))


def encode_signals(signals, model: SiglipModel) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(signals) if not torch.is_tensor(signals) else signals)
    x = x.to(next(model.parameters()).dtype)
    return model.encode_signals(x)


def encode_texts(texts, model: SiglipModel) -> torch.Tensor:
    return model.encode_texts(list(texts))
