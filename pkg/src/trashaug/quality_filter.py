"""Binary good/bad quality classifier bootstrapped from human labels.

Trains on human-labeled generated images at 128x128x3 and gates which
generated images are appended to the dataset. The label store is an
append-only line-delimited record file; conflicting verdicts resolve by
per-annotator latest timestamp, then majority, then overall latest.
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from . import images
from .dataset import DatasetManifest
from .vae import ResidualBlock, ShapeMismatchError

FILTER_INPUT_SHAPE = (128, 128, 3)
FORMAT_VERSION = 1


class FilterError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Label records


@dataclass(frozen=True)
class LabelRecord:
    image_id: str
    verdict: str  # good | bad
    annotator: str
    labeled_at: float

    def __post_init__(self):
        if self.verdict not in ("good", "bad"):
            raise FilterError(f"verdict must be 'good' or 'bad', got {self.verdict!r}")


class LabelStore:
    """Append-only JSONL store of label records; writes are serialized."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()

    def append(self, record: LabelRecord) -> bool:
        """Append one record. Idempotent: a record that would not change the
        annotator's effective verdict is dropped. Returns True if written."""
        with self._lock:
            current = self._effective_by_annotator()
            prev = current.get((record.image_id, record.annotator))
            if prev is not None and prev.verdict == record.verdict:
                return False
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(asdict(record), sort_keys=False) + "\n")
                f.flush()
            return True

    def records(self) -> list[LabelRecord]:
        try:
            with open(self.path, encoding="utf-8") as f:
                return [LabelRecord(**json.loads(line)) for line in f if line.strip()]
        except FileNotFoundError:
            return []

    def _effective_by_annotator(self) -> dict:
        eff = {}
        for r in self.records():
            key = (r.image_id, r.annotator)
            if key not in eff or r.labeled_at >= eff[key].labeled_at:
                eff[key] = r
        return eff

    def verdicts(self) -> dict[str, str]:
        """image_id -> verdict after per-annotator latest + majority resolution."""
        per_image: dict[str, list[LabelRecord]] = {}
        for r in self._effective_by_annotator().values():
            per_image.setdefault(r.image_id, []).append(r)
        out = {}
        for image_id, recs in per_image.items():
            good = sum(1 for r in recs if r.verdict == "good")
            bad = len(recs) - good
            if good != bad:
                out[image_id] = "good" if good > bad else "bad"
            else:
                out[image_id] = max(recs, key=lambda r: r.labeled_at).verdict
        return out


def now_timestamp() -> float:
    return time.time()


# ---------------------------------------------------------------------------
# Model


class SmallResNetBinary(nn.Module):
    """Depth-scaled residual binary classifier for 128x128x3 inputs."""

    def __init__(self, base=16, kernel_size=3):
        super().__init__()
        pad = kernel_size // 2
        chans = [base, base * 2, base * 4, base * 4]
        self.stem = nn.Conv2d(3, chans[0], kernel_size, stride=2, padding=pad)
        blocks = []
        for i in range(len(chans) - 1):
            blocks.append(ResidualBlock(chans[i], kernel_size))
            blocks.append(
                nn.Conv2d(chans[i], chans[i + 1], kernel_size, stride=2, padding=pad)
            )
        self.trunk = nn.Sequential(*blocks)
        self.head = nn.Linear(chans[-1], 1)

    def forward(self, x):
        h = torch.relu(self.stem(x))
        h = self.trunk(h)
        h = h.mean(dim=(2, 3))
        return self.head(h).squeeze(-1)


def _build_net(arch: str) -> nn.Module:
    if arch == "small":
        return SmallResNetBinary()
    if arch == "resnet50":
        # full-scale option; the 128x128 input is handled by the adaptive pool
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        net.fc = nn.Linear(net.fc.in_features, 1)

        class Squeeze(nn.Module):
            def __init__(self, inner):
                super().__init__()
                self.inner = inner

            def forward(self, x):
                return self.inner(x).squeeze(-1)

        return Squeeze(net)
    raise FilterError(f"unknown filter architecture {arch!r}")


@dataclass
class FilterTrainConfig:
    batch_size: int = 16
    epochs: int = 50
    learning_rate: float = 1e-3
    seed: int = 0
    arch: str = "small"  # "small" | "resnet50"
    threshold: float = 0.5
    val_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise FilterError(f"threshold must lie in (0, 1), got {self.threshold}")


@dataclass
class FilterModel:
    state_dict: dict
    arch: str
    threshold: float
    training_stats: dict
    input_shape: tuple = FILTER_INPUT_SHAPE
    format_version: int = FORMAT_VERSION
    _net: nn.Module | None = None

    def net(self) -> nn.Module:
        if self._net is None:
            net = _build_net(self.arch)
            net.load_state_dict(self.state_dict)
            net.eval()
            self._net = net
        return self._net

    def save(self, path) -> None:
        torch.save(
            {
                "format_version": self.format_version,
                "model_kind": "quality-filter",
                "arch": self.arch,
                "threshold": self.threshold,
                "training_stats": self.training_stats,
                "state_dict": self.state_dict,
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "FilterModel":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("model_kind") != "quality-filter":
            raise FilterError(f"{path} is not a quality-filter model file")
        return cls(
            state_dict=payload["state_dict"],
            arch=payload["arch"],
            threshold=payload["threshold"],
            training_stats=payload["training_stats"],
        )


def _load_at_filter_size(manifest: DatasetManifest) -> np.ndarray:
    rows = [
        manifest.load_pixels(e, target_size=FILTER_INPUT_SHAPE[:2]) for e in manifest
    ]
    return np.stack(rows).astype(np.float32)


def _accuracy(net, x, y, threshold):
    if len(y) == 0:
        return float("nan")
    with torch.no_grad():
        p = torch.sigmoid(net(x))
    pred = (p >= threshold).float()
    return float((pred == y).float().mean())


def train_filter(
    good: DatasetManifest, bad: DatasetManifest, config: FilterTrainConfig
) -> FilterModel:
    """Train the binary quality classifier on labeled good/bad image sets."""
    if len(good) == 0 or len(bad) == 0:
        raise FilterError("both the good and bad sets must be nonempty")
    warnings = []
    ratio = max(len(good), len(bad)) / min(len(good), len(bad))
    if ratio > 10.0:
        warnings.append(f"class imbalance {ratio:.1f}:1 exceeds 10:1")

    x = np.concatenate([_load_at_filter_size(good), _load_at_filter_size(bad)])
    y = np.concatenate([np.ones(len(good)), np.zeros(len(bad))]).astype(np.float32)
    x = torch.from_numpy(x).permute(0, 3, 1, 2).contiguous()
    y = torch.from_numpy(y)

    rng = np.random.default_rng(config.seed)
    n = len(y)
    perm = rng.permutation(n)
    n_val = int(round(config.val_fraction * n))
    n_test = int(round(config.test_fraction * n))
    val_idx = perm[:n_val]
    test_idx = perm[n_val : n_val + n_test]
    train_idx = perm[n_val + n_test :]
    if len(train_idx) == 0:
        train_idx = perm

    torch.manual_seed(config.seed)
    net = _build_net(config.arch)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()

    for _ in range(config.epochs):
        order = rng.permutation(len(train_idx))
        for start in range(0, len(order), config.batch_size):
            sel = train_idx[order[start : start + config.batch_size]].copy()
            logits = net(x[sel])
            loss = loss_fn(logits, y[sel])
            if not torch.isfinite(loss):
                raise FilterError("non-finite loss during filter training")
            opt.zero_grad()
            loss.backward()
            opt.step()

    net.eval()
    stats = {
        "train_acc": _accuracy(net, x[train_idx.copy()], y[train_idx.copy()], config.threshold),
        "val_acc": _accuracy(net, x[val_idx.copy()], y[val_idx.copy()], config.threshold),
        "test_acc": _accuracy(net, x[test_idx.copy()], y[test_idx.copy()], config.threshold),
        "n_good": len(good),
        "n_bad": len(bad),
        "arch": config.arch,
        "warnings": warnings,
    }
    state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    return FilterModel(
        state_dict=state,
        arch=config.arch,
        threshold=config.threshold,
        training_stats=stats,
    )


def predict(model: FilterModel, image: np.ndarray) -> float:
    """Probability that the image is good quality (deterministic per model)."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.shape != model.input_shape:
        raise ShapeMismatchError(
            f"filter expects input shape {model.input_shape}, got {arr.shape}"
        )
    t = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        p = torch.sigmoid(model.net()(t))
    p = float(p[0])
    if not math.isfinite(p):
        raise FilterError("filter produced a non-finite probability")
    return p


def filter_pool(model: FilterModel, pool: DatasetManifest):
    """Partition the pool into (accepted, rejected) by p_good >= threshold."""
    if len(pool) == 0:
        raise FilterError("cannot filter an empty pool")
    accepted, rejected = [], []
    for e in pool:
        img = pool.load_pixels(e, target_size=model.input_shape[:2])
        p = predict(model, img)
        (accepted if p >= model.threshold else rejected).append(e)
    return (
        DatasetManifest(pool.root, accepted),
        DatasetManifest(pool.root, rejected),
    )
