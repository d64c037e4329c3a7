#!/usr/bin/env python3
"""The quality gate: collect good/bad verdicts on generated images, train a
binary filter from them, and keep only the images the filter accepts.

Verdicts normally come from a person through the HTTP service (see
`pipeline label-serve --interactive` and the browser client in frontend/);
here a scripted labeler stands in so the demo runs unattended."""

import tempfile
from pathlib import Path

import numpy as np

from trashaug import quality_filter as qf
from trashaug.dataset import DatasetManifest, ManifestEntry, concat
from trashaug.images import save_image
from trashaug.labeling import auto_label, build_app

work = Path(tempfile.mkdtemp(prefix="filterdemo_"))
rng = np.random.default_rng(4)

# --- a generated pool where half the images are visibly worse --------------
def pool_manifest(subdir, n, crisp):
    d = work / subdir
    d.mkdir()
    entries = []
    for i in range(n):
        if crisp:  # saturated red blob stand-in for a clean sample
            base = np.array([0.8, 0.1, 0.1])
        else:  # washed-out gray stand-in for a muddy one
            base = np.array([0.45, 0.45, 0.45])
        img = np.clip(base + rng.normal(0, 0.05, (128, 128, 3)), 0, 1).astype(np.float32)
        save_image(img, d / f"{subdir}{i}.png")
        entries.append(ManifestEntry(f"{subdir}{i}", f"{subdir}{i}.png", "bag", "generated", "train"))
    return DatasetManifest(d, entries)

pool = concat([pool_manifest("crisp", 24, True), pool_manifest("washed", 24, False)])
print("pool of", len(pool), "generated images")

# --- verdicts are append-only records; conflicts resolve by majority -------
store = qf.LabelStore(work / "labels.jsonl")
counts = auto_label(pool, store, good_fraction=0.5)
print("scripted labeler wrote", counts)

# the same store backs the HTTP service a human would use:
app = build_app(pool, store)
print("labeling service routes:",
      sorted(r.path for r in app.routes if r.path.startswith(("/batch", "/label", "/image", "/progress"))))

# --- train the binary filter from the verdicts ------------------------------
verdicts = store.verdicts()
good = DatasetManifest(pool.root, [e for e in pool if verdicts[e.image_id] == "good"])
bad = DatasetManifest(pool.root, [e for e in pool if verdicts[e.image_id] == "bad"])
model = qf.train_filter(good, bad, qf.FilterTrainConfig(epochs=3, seed=0))
print("filter training accuracy:", model.training_stats["train_acc"])

# --- apply it: the pool splits exactly into accepted + rejected -------------
accepted, rejected = qf.filter_pool(model, pool)
print("accepted", len(accepted), "/ rejected", len(rejected))
p = qf.predict(model, pool.load_pixels(pool.entries[0], target_size=(128, 128)))
print("per-image probability for the first pool image:", round(p, 3),
      "(threshold", model.threshold, ")")
