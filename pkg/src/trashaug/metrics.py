"""Sample-quality and classification metrics.

Fréchet distance between Gaussian fits of feature distributions, the PSD
matrix square root it needs, mean absolute error, and per-class
precision/recall/F1 reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import images


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PSD matrix square root


def matrix_sqrt_psd(m: np.ndarray, *, eig_tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    The input is symmetrized before use; asymmetry beyond tolerance or a
    substantially negative spectrum is an error. Eigenvalues in
    [-tol, 0) are clamped to zero.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise MetricError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > eig_tol * scale:
        raise MetricError(
            f"matrix is asymmetric beyond tolerance: max |M - M^T| = "
            f"{np.abs(m - m.T).max():.3g}"
        )
    sym = 0.5 * (m + m.T)
    evals, evecs = np.linalg.eigh(sym)
    lo = -eig_tol * max(1.0, float(evals.max(initial=0.0)))
    if evals.min() < lo:
        raise MetricError(f"matrix has a negative eigenvalue {evals.min():.3g}")
    evals = np.clip(evals, 0.0, None)
    return (evecs * np.sqrt(evals)) @ evecs.T


# ---------------------------------------------------------------------------
# FID


@dataclass
class FeatureSet:
    """N x D feature matrix, one row per image, tagged by its extractor."""

    features: np.ndarray
    extractor_id: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise MetricError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] < 2:
            raise MetricError("need at least 2 samples to fit a covariance")
        if not np.isfinite(self.features).all():
            raise MetricError("features contain non-finite values")


@dataclass
class FidReport:
    score: float
    mean_term: float
    trace_term: float
    n_real: int
    n_generated: int
    extractor_id: str
    clamped: bool = False

    def to_record(self) -> str:
        fields = {
            "score": self.score,
            "mean_term": self.mean_term,
            "trace_term": self.trace_term,
            "n_real": self.n_real,
            "n_generated": self.n_generated,
            "extractor_id": self.extractor_id,
            "clamped": self.clamped,
        }
        return json.dumps(fields, sort_keys=False)


def fid(real: FeatureSet, generated: FeatureSet) -> FidReport:
    """Fréchet distance between Gaussian fits of the two feature sets.

    ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^(1/2)), with the product
    square root computed through the symmetric equivalent
    S_r^(1/2) S_g S_r^(1/2) and unbiased (N-1) covariances.
    """
    if real.extractor_id != generated.extractor_id:
        raise MetricError(
            f"extractor mismatch: {real.extractor_id!r} vs {generated.extractor_id!r}"
        )
    if real.features.shape[1] != generated.features.shape[1]:
        raise MetricError(
            f"feature dimension mismatch: {real.features.shape[1]} vs "
            f"{generated.features.shape[1]}"
        )
    mu_r = real.features.mean(axis=0)
    mu_g = generated.features.mean(axis=0)
    cov_r = np.cov(real.features, rowvar=False, ddof=1)
    cov_g = np.cov(generated.features, rowvar=False, ddof=1)
    cov_r = np.atleast_2d(cov_r)
    cov_g = np.atleast_2d(cov_g)

    mean_term = float(np.sum((mu_r - mu_g) ** 2))
    sqrt_r = matrix_sqrt_psd(cov_r)
    inner = sqrt_r @ cov_g @ sqrt_r
    inner = 0.5 * (inner + inner.T)
    cross = matrix_sqrt_psd(inner)
    trace_term = float(np.trace(cov_r) + np.trace(cov_g) - 2.0 * np.trace(cross))

    score = mean_term + trace_term
    clamped = False
    if score < 0.0:
        if score < -1e-9:
            raise MetricError(f"FID came out substantially negative: {score:.3g}")
        score = 0.0
        clamped = True
    return FidReport(
        score=score,
        mean_term=mean_term,
        trace_term=trace_term,
        n_real=real.features.shape[0],
        n_generated=generated.features.shape[0],
        extractor_id=real.extractor_id,
        clamped=clamped,
    )


class FlattenDownsampleExtractor:
    """Deterministic built-in feature extractor: bilinear downsample + flatten."""

    def __init__(self, out_hw: int = 16):
        self.out_hw = out_hw
        self.extractor_id = f"flatten-downsample-{out_hw}"

    def __call__(self, batch: list[np.ndarray]) -> np.ndarray:
        rows = [
            images.resize(img, (self.out_hw, self.out_hw)).reshape(-1) for img in batch
        ]
        return np.stack(rows).astype(np.float64)


class TorchScriptExtractor:
    """Feature extractor backed by user-supplied TorchScript weights.

    The module must map a (N, 3, H, W) float tensor in [0, 1] to (N, D)
    features.
    """

    def __init__(self, weights_path, extractor_id=None):
        import torch

        try:
            self.module = torch.jit.load(str(weights_path), map_location="cpu")
        except (OSError, RuntimeError, ValueError) as exc:
            raise MetricError(
                f"could not load extractor weights from {weights_path}: {exc}. "
                "Supply a TorchScript file mapping (N, 3, H, W) images in [0, 1] "
                "to (N, D) features."
            ) from exc
        self.module.eval()
        self.extractor_id = extractor_id or f"torchscript:{weights_path}"

    def __call__(self, batch: list[np.ndarray]) -> np.ndarray:
        import torch

        x = torch.from_numpy(np.stack(batch).astype(np.float32)).permute(0, 3, 1, 2)
        with torch.no_grad():
            out = self.module(x)
        return out.numpy().astype(np.float64)


def extract_features(imgs: list[np.ndarray], extractor) -> FeatureSet:
    """Run the extractor over an image list, one feature row per image."""
    if not imgs:
        raise MetricError("cannot extract features from an empty image list")
    return FeatureSet(features=extractor(list(imgs)), extractor_id=extractor.extractor_id)


# ---------------------------------------------------------------------------
# MAE


def mae(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Mean absolute elementwise deviation."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return float(np.mean(np.abs(x - x_hat)))


# ---------------------------------------------------------------------------
# Classification report


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    zero_division: bool = False


@dataclass
class ClassificationReport:
    per_class: dict[str, ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    total_support: int
    classes: list[str] = field(default_factory=list)

    def accuracy(self) -> float:
        """Micro accuracy recovered from the confusion diagonal."""
        correct = sum(
            m.recall * m.support for m in self.per_class.values()
        )
        return correct / self.total_support if self.total_support else 0.0

    def to_record(self) -> str:
        fields = {
            "classes": self.classes,
            "per_class": {
                c: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                    "zero_division": m.zero_division,
                }
                for c, m in self.per_class.items()
            },
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "total_support": self.total_support,
        }
        return json.dumps(fields, sort_keys=False)

    def render(self) -> str:
        """Aligned text table: one row per class plus an avg/tot row."""
        header = f"{'':>12} {'Precision':>10} {'Recall':>10} {'F1 score':>10} {'Support':>10}"
        lines = [header]
        for c in self.classes:
            m = self.per_class[c]
            lines.append(
                f"{c:>12} {m.precision:>10.2f} {m.recall:>10.2f} {m.f1:>10.2f} {m.support:>10d}"
            )
        lines.append(
            f"{'avg/tot':>12} {self.macro_precision:>10.2f} {self.macro_recall:>10.2f} "
            f"{self.macro_f1:>10.2f} {self.total_support:>10d}"
        )
        return "\n".join(lines)


def classification_report(predictions, truths, classes) -> ClassificationReport:
    """Per-class precision/recall/F1/support with unweighted macro averages."""
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise MetricError(
            f"got {len(predictions)} predictions for {len(truths)} truths"
        )
    classes = list(classes)
    class_set = set(classes)
    for label in predictions + truths:
        if label not in class_set:
            raise MetricError(f"unknown label {label!r}")

    per_class = {}
    for c in classes:
        tp = sum(1 for p, t in zip(predictions, truths) if p == c and t == c)
        fp = sum(1 for p, t in zip(predictions, truths) if p == c and t != c)
        fn = sum(1 for p, t in zip(predictions, truths) if p != c and t == c)
        support = tp + fn
        zero_div = (tp + fp) == 0
        precision = 0.0 if zero_div else tp / (tp + fp)
        recall = 0.0 if support == 0 else tp / support
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        per_class[c] = ClassMetrics(precision, recall, f1, support, zero_div)

    n = len(classes)
    return ClassificationReport(
        per_class=per_class,
        macro_precision=sum(m.precision for m in per_class.values()) / n,
        macro_recall=sum(m.recall for m in per_class.values()) / n,
        macro_f1=sum(m.f1 for m in per_class.values()) / n,
        total_support=len(truths),
        classes=classes,
    )
