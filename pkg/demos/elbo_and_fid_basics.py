#!/usr/bin/env python3
"""A walk through the numeric building blocks: the training objective and
the distribution distance used to score generated images."""

import numpy as np
import scipy.linalg

from trashaug.metrics import FeatureSet, FlattenDownsampleExtractor, extract_features, fid, matrix_sqrt_psd
from trashaug.vae import GaussianParams, elbo_loss, reparameterize

rng = np.random.default_rng(0)

# --- the latent posterior and its divergence from the unit prior ---------
# an encoder emits a mean and log-variance per latent dimension
posterior = GaussianParams(mean=rng.normal(size=4), log_variance=rng.normal(size=4) * 0.5)

x = rng.random((8, 8, 3))          # a toy "image"
x_hat = x + rng.normal(0, 0.05, x.shape)  # an imperfect reconstruction

total, recon, kl = elbo_loss(x, x_hat, posterior)
print("training loss =", round(total, 3))
print("  reconstruction term =", round(recon, 3))
print("  kl term             =", round(kl, 3))

# at the prior (zero mean, unit variance) the kl term vanishes exactly
_, _, kl0 = elbo_loss(x, x, GaussianParams(np.zeros(4), np.zeros(4)))
print("kl at the prior =", kl0)

# sampling goes through the reparameterization so gradients can flow:
# z = mean + std * noise
z = reparameterize(posterior, rng.standard_normal(4))
print("one latent sample:", np.round(z, 3))

# --- the Frechet distance between feature distributions ------------------
# identical feature sets are at distance zero
feats = FeatureSet(rng.normal(size=(100, 6)), extractor_id="demo")
print("\nfid(A, A) =", fid(feats, feats).score)

# shifting every feature by 1 in one dimension costs exactly 1.0
shifted = FeatureSet(feats.features + np.eye(1, 6), extractor_id="demo")
print("fid(A, A shifted by e1) =", round(fid(feats, shifted).score, 6))

# the heavy lifting is a symmetric PSD matrix square root
m = rng.normal(size=(5, 5))
psd = m @ m.T
root = matrix_sqrt_psd(psd)
print("sqrt reconstruction error =", np.linalg.norm(root @ root - psd))
print("agrees with scipy.linalg.sqrtm:",
      np.allclose(root, scipy.linalg.sqrtm(psd).real, atol=1e-10))

# on real pixels, features come from an extractor; the built-in one just
# downsamples and flattens, which is plenty for smoke tests
imgs = [rng.random((32, 32, 3)).astype(np.float32) for _ in range(10)]
fs = extract_features(imgs, FlattenDownsampleExtractor(out_hw=8))
print("\nextracted feature matrix:", fs.features.shape, "tagged", fs.extractor_id)
