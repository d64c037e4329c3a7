"""Dataset manifests: ingestion, flip/rotate augmentation, subsampling, composition.

A manifest is an ordered list of records mapping image ids to files plus
class / provenance / split bookkeeping. It serializes to a line-delimited
JSON file with a fixed field order, with image paths stored relative to
the manifest's root directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import images

MANIFEST_FIELDS = ("image_id", "path", "class_label", "provenance", "split", "transform")
PROVENANCES = ("real", "generated")
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


class NoImagesError(DatasetError):
    pass


class InsufficientEntriesError(DatasetError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: str  # relative to the manifest root
    class_label: str
    provenance: str
    split: str
    transform: str = "orig"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise DatasetError(f"unknown provenance {self.provenance!r}")
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}")


class DatasetManifest:
    """Ordered, id-unique record set over image files under one root."""

    def __init__(self, root, entries):
        self.root = Path(root)
        self.entries = list(entries)
        seen = set()
        for e in self.entries:
            if e.image_id in seen:
                raise DatasetError(f"duplicate image_id {e.image_id!r}")
            seen.add(e.image_id)
        by_split = {}
        for e in self.entries:
            prev = by_split.setdefault(e.image_id, e.split)
            if prev != e.split:
                raise DatasetError(f"{e.image_id!r} appears in two splits")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def ids(self):
        return [e.image_id for e in self.entries]

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def load_pixels(self, entry: ManifestEntry, target_size=None) -> np.ndarray:
        return images.load_image(self.resolve(entry), target_size=target_size)

    def select(self, *, class_label=None, provenance=None, split=None) -> "DatasetManifest":
        kept = [
            e
            for e in self.entries
            if (class_label is None or e.class_label == class_label)
            and (provenance is None or e.provenance == provenance)
            and (split is None or e.split == split)
        ]
        return DatasetManifest(self.root, kept)

    def class_labels(self):
        return sorted({e.class_label for e in self.entries})

    def with_split(self, split: str) -> "DatasetManifest":
        return DatasetManifest(self.root, [replace(e, split=split) for e in self.entries])

    def save(self, path) -> None:
        """Write one JSON record per line, paths rebased onto the file's dir."""
        path = Path(path)
        new_root = path.parent
        new_root.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for e in self.entries:
                record = {k: getattr(e, k) for k in MANIFEST_FIELDS}
                if new_root.resolve() != self.root.resolve():
                    record["path"] = os.path.relpath(self.root / e.path, new_root)
                f.write(json.dumps(record, sort_keys=False) + "\n")

    @classmethod
    def load(cls, path, root=None) -> "DatasetManifest":
        path = Path(path)
        root = Path(root) if root is not None else path.parent
        entries = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                entries.append(ManifestEntry(**record))
        return cls(root, entries)

    def validate_files(self) -> None:
        """Every path must resolve to a decodable image."""
        for e in self.entries:
            p = self.resolve(e)
            if not p.is_file():
                raise DatasetError(f"missing image file for {e.image_id!r}: {p}")
            images.load_image(p)


@dataclass
class IngestResult:
    manifest: DatasetManifest
    skipped: list  # (filename, reason) pairs for undecodable files


def ingest(source_dir, class_label, target_size, out_dir, provenance="real") -> IngestResult:
    """Register every decodable image under source_dir.

    Images are resized (bilinear) to target_size, rescaled to [0, 1] and
    written as canonical PNGs under out_dir. Undecodable files are skipped
    and reported in the result, never silently dropped.
    """
    source_dir = Path(source_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in source_dir.iterdir() if p.is_file())
    entries = []
    skipped = []
    for p in files:
        try:
            arr = images.load_image(p, target_size=target_size)
        except (images.DecodableError, OSError) as exc:
            skipped.append((p.name, str(exc)))
            continue
        image_id = f"{class_label}_{p.stem}"
        rel = f"{image_id}.png"
        images.save_image(arr, out_dir / rel)
        entries.append(
            ManifestEntry(
                image_id=image_id,
                path=rel,
                class_label=class_label,
                provenance=provenance,
                split="train",
            )
        )
    if not entries:
        raise NoImagesError(f"no decodable images found in {source_dir}")
    return IngestResult(DatasetManifest(out_dir, entries), skipped)


AUGMENT_TRANSFORMS = (
    ("hflip", images.hflip),
    ("vflip", images.vflip),
    ("rot90", images.rot90),
)


def augment(manifest: DatasetManifest, out_dir) -> DatasetManifest:
    """Expand each image to exactly 4 entries: original + hflip + vflip + rot90.

    Transformed pixels are written under out_dir; augmented entries inherit
    class, provenance and split, with ids derived from the source id plus a
    transform suffix. Requires square images (lossless 90-degree rotation).
    """
    if len(manifest) == 0:
        raise NoImagesError("cannot augment an empty manifest")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for e in manifest:
        arr = manifest.load_pixels(e)
        if arr.shape[0] != arr.shape[1]:
            raise DatasetError(
                f"augment requires square images; {e.image_id!r} is {arr.shape[:2]}"
            )
        src = manifest.resolve(e)
        if src.resolve().parent != out_dir.resolve():
            images.save_image(arr, out_dir / f"{e.image_id}.png")
            e = replace(e, path=f"{e.image_id}.png")
        entries.append(e)
        for tag, fn in AUGMENT_TRANSFORMS:
            new_id = f"{e.image_id}.{tag}"
            rel = f"{new_id}.png"
            images.save_image(fn(arr), out_dir / rel)
            entries.append(replace(e, image_id=new_id, path=rel, transform=tag))
    return DatasetManifest(out_dir, entries)


def subsample(manifest: DatasetManifest, n: int, seed: int) -> DatasetManifest:
    """Uniform sample of n entries without replacement, reproducible by seed."""
    if n > len(manifest):
        raise InsufficientEntriesError(
            f"requested {n} entries from a manifest of {len(manifest)}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(manifest))[:n]
    return DatasetManifest(manifest.root, [manifest.entries[i] for i in order])


def compose(
    real: DatasetManifest,
    generated: DatasetManifest,
    mode: str,
    total: int,
    seed: int,
) -> DatasetManifest:
    """Build a real / generated / mixed training set of exactly `total` entries.

    mixed takes ceil(total/2) real + floor(total/2) generated. The output is
    shuffled deterministically by seed. Source manifests must carry the
    matching provenance.
    """
    if mode not in ("real", "generated", "mixed"):
        raise DatasetError(f"unknown composition mode {mode!r}")
    real = real.select(provenance="real")
    generated = generated.select(provenance="generated")
    if mode == "real":
        n_real, n_gen = total, 0
    elif mode == "generated":
        n_real, n_gen = 0, total
    else:
        n_real = (total + 1) // 2
        n_gen = total // 2
    if n_real > len(real):
        raise InsufficientEntriesError(
            f"real side has {len(real)} entries, {n_real} requested"
        )
    if n_gen > len(generated):
        raise InsufficientEntriesError(
            f"generated side has {len(generated)} entries, {n_gen} requested"
        )
    rng = np.random.default_rng(seed)
    picked = []
    if n_real:
        idx = rng.permutation(len(real))[:n_real]
        picked.extend(real.entries[i] for i in idx)
    if n_gen:
        idx = rng.permutation(len(generated))[:n_gen]
        picked.extend(generated.entries[i] for i in idx)
    order = rng.permutation(len(picked))
    # both sides may live under different roots; keep paths resolvable
    root = real.root if n_real else generated.root
    entries = []
    for i in order:
        e = picked[i]
        src_root = real.root if e.provenance == "real" else generated.root
        if src_root != root:
            rel = os.path.relpath(src_root / e.path, root)
            e = replace(e, path=rel)
        entries.append(e)
    return DatasetManifest(root, entries)


def split_train_test(manifest: DatasetManifest, test_count: int, seed: int):
    """Reserve test_count entries as the held-out test split (seeded)."""
    if test_count > len(manifest):
        raise InsufficientEntriesError(
            f"cannot hold out {test_count} of {len(manifest)} entries"
        )
    rng = np.random.default_rng(seed)
    test_idx = set(rng.permutation(len(manifest))[:test_count].tolist())
    train, test = [], []
    for i, e in enumerate(manifest):
        if i in test_idx:
            test.append(replace(e, split="test"))
        else:
            train.append(replace(e, split="train"))
    return DatasetManifest(manifest.root, train), DatasetManifest(manifest.root, test)


def concat(manifests) -> DatasetManifest:
    """Concatenate manifests (ids must stay unique); paths re-rooted to the first."""
    manifests = list(manifests)
    if not manifests:
        raise NoImagesError("nothing to concatenate")
    root = manifests[0].root
    entries = []
    for m in manifests:
        for e in m:
            if m.root != root:
                rel = os.path.relpath(m.root / e.path, root)
                e = replace(e, path=rel)
            entries.append(e)
    return DatasetManifest(root, entries)
