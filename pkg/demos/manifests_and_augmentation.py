#!/usr/bin/env python3
"""Dataset bookkeeping: ingest a folder of images into a manifest, expand it
with the fixed flip/rotation set, and compose real/generated/mixed training
sets of equal size."""

import tempfile
from pathlib import Path

from trashaug import dataset, synthetic
from trashaug.dataset import DatasetManifest

work = Path(tempfile.mkdtemp(prefix="augdemo_"))
print("working under", work)

# --- a tiny source corpus: one folder per class ---------------------------
dirs = synthetic.write_corpus(work / "corpus", n_per_class=12, size=32, seed=3)
print("source folders:", sorted(d.name for d in dirs.values()))

# ingest normalizes everything to PNG at a fixed size and records each image
# with an id, class label, provenance and split
result = dataset.ingest(dirs["bag"], "bag", (32, 32), work / "ingested")
manifest = result.manifest
print("\ningested", len(manifest), "images; skipped:", result.skipped)
print("first entry:", manifest.entries[0])

# --- augmentation is an exact 4x: original + two flips + a 90-degree turn --
augmented = dataset.augment(manifest, work / "augmented")
print("\naugmented size:", len(augmented), "=", len(manifest), "x 4")
print("ids derived from one source image:",
      sorted(i for i in augmented.ids() if i.startswith(manifest.entries[0].image_id)))

# --- composing training sets ----------------------------------------------
# pretend half of the augmented pool came from a generator
half = len(augmented) // 2
real = DatasetManifest(augmented.root, augmented.entries[:half])
generated = DatasetManifest(
    augmented.root,
    [dataset.ManifestEntry(e.image_id + ".gen", e.path, e.class_label, "generated", e.split)
     for e in augmented.entries[half:]],
)

for mode in ("real", "generated", "mixed"):
    composed = dataset.compose(real, generated, mode, total=16, seed=0)
    by_prov = {}
    for e in composed:
        by_prov[e.provenance] = by_prov.get(e.provenance, 0) + 1
    print(f"{mode:>9}: {len(composed)} entries, provenance counts {by_prov}")

# manifests round-trip through JSONL and can be saved anywhere; paths are
# rebased so they stay resolvable
augmented.save(work / "elsewhere" / "augmented.jsonl")
back = DatasetManifest.load(work / "elsewhere" / "augmented.jsonl")
print("\nround-tripped manifest still loads pixels:",
      back.load_pixels(back.entries[0]).shape)
