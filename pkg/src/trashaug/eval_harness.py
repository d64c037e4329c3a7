"""Multi-class evaluation harness.

Trains a small 3-class convolutional classifier (32x32x3 input) once per
dataset composition (real / generated / mixed) and reports per-class
precision, recall, F1 and support on a shared real-only test set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .dataset import DatasetManifest
from .metrics import ClassificationReport, classification_report

EVAL_INPUT_SHAPE = (32, 32, 3)


class EvalError(ValueError):
    pass


class ProtocolViolation(EvalError):
    pass


@dataclass
class ExperimentSpec:
    trash_class: str
    composition: str  # real | generated | mixed
    train_size: int = 3000
    test_size: int = 300  # per class
    epochs: int = 30
    batch_size: int = 100
    seed: int = 0
    learning_rate: float = 1e-3
    dropout: float = 0.5

    def __post_init__(self):
        if self.composition not in ("real", "generated", "mixed"):
            raise EvalError(f"unknown composition {self.composition!r}")


class EvalNet(nn.Module):
    """conv(32) -> pool -> conv(64) -> pool -> dense(128) -> dropout -> softmax(3)."""

    def __init__(self, n_classes=3, dropout=0.5):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 32, 3, padding=1)
        self.conv2 = nn.Conv2d(32, 64, 3, padding=1)
        self.pool = nn.MaxPool2d(2)
        self.dense = nn.Linear(64 * 8 * 8, 128)
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Linear(128, n_classes)

    def forward(self, x):
        h = self.pool(torch.relu(self.conv1(x)))
        h = self.pool(torch.relu(self.conv2(h)))
        h = torch.relu(self.dense(h.flatten(1)))
        return self.out(self.dropout(h))


@dataclass
class EvalModel:
    state_dict: dict
    classes: list[str]
    seed: int
    input_shape: tuple = EVAL_INPUT_SHAPE
    _net: EvalNet | None = None

    def net(self) -> EvalNet:
        if self._net is None:
            net = EvalNet(n_classes=len(self.classes))
            net.load_state_dict(self.state_dict)
            net.eval()
            self._net = net
        return self._net

    def save(self, path) -> None:
        torch.save(
            {
                "model_kind": "eval-classifier",
                "classes": self.classes,
                "seed": self.seed,
                "state_dict": self.state_dict,
            },
            path,
        )

    @classmethod
    def load(cls, path) -> "EvalModel":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("model_kind") != "eval-classifier":
            raise EvalError(f"{path} is not an eval-classifier model file")
        return cls(
            state_dict=payload["state_dict"],
            classes=payload["classes"],
            seed=payload["seed"],
        )


def _load_xy(manifest: DatasetManifest, classes: list[str]):
    idx = {c: i for i, c in enumerate(classes)}
    xs, ys = [], []
    for e in manifest:
        xs.append(manifest.load_pixels(e, target_size=EVAL_INPUT_SHAPE[:2]))
        ys.append(idx[e.class_label])
    x = torch.from_numpy(np.stack(xs).astype(np.float32)).permute(0, 3, 1, 2)
    y = torch.from_numpy(np.asarray(ys, dtype=np.int64))
    return x.contiguous(), y


def train_eval_classifier(train: DatasetManifest, spec: ExperimentSpec) -> EvalModel:
    """Train one 3-class classifier on the given composition's manifest."""
    classes = train.class_labels()
    if len(classes) != 3:
        raise EvalError(
            f"training set must cover exactly 3 classes, found {classes}"
        )
    if spec.trash_class not in classes:
        raise EvalError(f"missing trash class {spec.trash_class!r} in {classes}")
    x, y = _load_xy(train, classes)

    torch.manual_seed(spec.seed)
    net = EvalNet(n_classes=3, dropout=spec.dropout)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=spec.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    rng = np.random.default_rng(spec.seed)

    for _ in range(spec.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(order), spec.batch_size):
            sel = order[start : start + spec.batch_size].copy()
            loss = loss_fn(net(x[sel]), y[sel])
            if not torch.isfinite(loss):
                raise EvalError("non-finite loss during classifier training")
            opt.zero_grad()
            loss.backward()
            opt.step()

    net.eval()
    state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    return EvalModel(state_dict=state, classes=classes, seed=spec.seed)


def predict_labels(model: EvalModel, manifest: DatasetManifest) -> list[str]:
    x, _ = _load_xy(manifest, model.classes)
    with torch.no_grad():
        logits = model.net()(x)
    return [model.classes[i] for i in logits.argmax(dim=1).tolist()]


def evaluate(model: EvalModel, test: DatasetManifest) -> ClassificationReport:
    """Score the model on real held-out test images only."""
    for e in test:
        if e.provenance != "real":
            raise ProtocolViolation(
                f"test entry {e.image_id!r} has provenance {e.provenance!r}; "
                "test images must be real"
            )
        if e.class_label not in model.classes:
            raise EvalError(f"test label {e.class_label!r} not in {model.classes}")
    predictions = predict_labels(model, test)
    truths = [e.class_label for e in test]
    return classification_report(predictions, truths, model.classes)


def assert_disjoint(train: DatasetManifest, test: DatasetManifest) -> None:
    overlap = set(train.ids()) & set(test.ids())
    if overlap:
        raise ProtocolViolation(
            f"{len(overlap)} image ids appear in both train and test, "
            f"e.g. {sorted(overlap)[:3]}"
        )


@dataclass
class ComparisonTable:
    trash_class: str
    reports: dict[str, ClassificationReport]  # composition -> report
    compositions: list[str] = field(default_factory=list)

    def to_record(self) -> str:
        import json

        return json.dumps(
            {
                "trash_class": self.trash_class,
                "compositions": self.compositions,
                "reports": {
                    c: json.loads(self.reports[c].to_record())
                    for c in self.compositions
                },
            },
            sort_keys=False,
        )

    def render(self) -> str:
        """Side-by-side text table: per-class rows, one column block per
        composition, and a closing avg/tot row."""
        classes = self.reports[self.compositions[0]].classes
        lines = [self.trash_class.capitalize().center(12 + 44 * len(self.compositions))]
        head1 = f"{'':>12}"
        head2 = f"{'':>12}"
        for comp in self.compositions:
            head1 += f"{comp.capitalize():^44}"
            head2 += f"{'Precision':>10} {'Recall':>10} {'F1 score':>10} {'Support':>12}"
        lines.append(head1)
        lines.append(head2)
        for c in classes:
            row = f"{c:>12}"
            for comp in self.compositions:
                m = self.reports[comp].per_class[c]
                row += f"{m.precision:>10.2f} {m.recall:>10.2f} {m.f1:>10.2f} {m.support:>12d}"
            lines.append(row)
        row = f"{'avg/tot':>12}"
        for comp in self.compositions:
            r = self.reports[comp]
            row += (
                f"{r.macro_precision:>10.2f} {r.macro_recall:>10.2f} "
                f"{r.macro_f1:>10.2f} {r.total_support:>12d}"
            )
        lines.append(row)
        return "\n".join(lines)


def run_comparison(
    experiments: list[tuple[ExperimentSpec, DatasetManifest]],
    test: DatasetManifest,
) -> ComparisonTable:
    """Train one classifier per composition and score all on the shared test set."""
    if not experiments:
        raise EvalError("no experiments given")
    trash = {spec.trash_class for spec, _ in experiments}
    if len(trash) != 1:
        raise EvalError(f"experiments must share one trash class, got {sorted(trash)}")
    reports = {}
    compositions = []
    for spec, train in experiments:
        assert_disjoint(train, test)
        model = train_eval_classifier(train, spec)
        reports[spec.composition] = evaluate(model, test)
        compositions.append(spec.composition)
    return ComparisonTable(
        trash_class=trash.pop(), reports=reports, compositions=compositions
    )
