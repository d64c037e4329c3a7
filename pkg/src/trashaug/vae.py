"""Two-stage variational autoencoder.

Stage 1 is a residual convolutional VAE over images; stage 2 is a small
dense VAE trained on the frozen stage-1 latent codes. Both stages minimize
the same objective: negative Gaussian reconstruction log-likelihood (with a
learned global observation variance) plus the closed-form KL divergence of
the encoder posterior from the standard normal prior. Generation samples
the stage-2 prior and decodes through both decoders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from . import metrics
from .dataset import DatasetManifest

FORMAT_VERSION = 1


class VaeError(ValueError):
    pass


class ShapeMismatchError(VaeError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class GaussianParams:
    """Encoder output: mean and log-variance of the latent posterior."""

    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_variance = np.asarray(self.log_variance, dtype=np.float64)
        if self.mean.shape != self.log_variance.shape:
            raise ShapeMismatchError(
                f"mean shape {self.mean.shape} != log_variance shape "
                f"{self.log_variance.shape}"
            )
        if not (np.isfinite(self.mean).all() and np.isfinite(self.log_variance).all()):
            raise VaeError("non-finite Gaussian parameters")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


@dataclass
class VaeStageConfig:
    stage: int
    latent_dim: int
    image_size: int = 128  # stage 1 input edge (square, power of two >= 8)
    base_dim: int = 16  # stage 1 channel multiplier
    kernel_size: int = 3
    input_dim: int = 0  # stage 2 input width; must equal stage 1 latent_dim
    dense_dim: int = 1024
    dense_layers: int = 4
    batch_size: int = 16
    max_epochs: int = 3000
    learning_rate: float = 1e-4
    seed: int = 0
    mae_patience: int = 200
    mae_min_delta: float = 1e-4
    val_fraction: float = 0.1
    fixed_gamma: float | None = None  # None -> learn the observation variance
    latent_source: str = "means"  # stage-2 training inputs: "means" | "samples"

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise VaeError(f"stage must be 1 or 2, got {self.stage}")
        if self.latent_dim < 1:
            raise VaeError("latent_dim must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise VaeError("max_epochs and batch_size must be >= 1")
        if self.stage == 1:
            s = self.image_size
            if s < 8 or (s & (s - 1)) != 0:
                raise VaeError(f"image_size must be a power of two >= 8, got {s}")
        if self.stage == 2 and self.input_dim < 1:
            raise VaeError("stage 2 needs input_dim (the stage-1 latent_dim)")
        if self.latent_source not in ("means", "samples"):
            raise VaeError(f"unknown latent_source {self.latent_source!r}")


# ---------------------------------------------------------------------------
# Loss


def elbo_terms(x, reconstruction, mean, log_variance, log_gamma):
    """Differentiable single-sample objective, averaged over the batch.

    recon = 0.5 * (n log 2*pi*gamma + ||x - x_hat||^2 / gamma) summed over
    elements; kl = 0.5 * sum(mu^2 + var - 1 - log var). Returns
    (total, recon, kl) as 0-d tensors.
    """
    batch = x.shape[0]
    n_elem = x[0].numel()
    sq = ((x - reconstruction) ** 2).reshape(batch, -1).sum(dim=1)
    gamma = torch.exp(log_gamma)
    recon = 0.5 * (n_elem * (math.log(2.0 * math.pi) + log_gamma) + sq / gamma)
    var = torch.exp(log_variance)
    kl = 0.5 * (mean**2 + var - 1.0 - log_variance).reshape(batch, -1).sum(dim=1)
    recon = recon.mean()
    kl = kl.mean()
    return recon + kl, recon, kl


def elbo_loss(x, reconstruction, params: GaussianParams, gamma: float = 1.0):
    """Objective value for one input: (total, recon_term, kl_term) floats."""
    x = np.asarray(x, dtype=np.float64)
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    if x.shape != reconstruction.shape:
        raise ShapeMismatchError(
            f"input shape {x.shape} != reconstruction shape {reconstruction.shape}"
        )
    if not (np.isfinite(x).all() and np.isfinite(reconstruction).all()):
        raise VaeError("non-finite inputs to elbo_loss")
    if gamma <= 0:
        raise VaeError("gamma must be positive")
    total, recon, kl = elbo_terms(
        torch.from_numpy(x).unsqueeze(0),
        torch.from_numpy(reconstruction).unsqueeze(0),
        torch.from_numpy(params.mean).unsqueeze(0),
        torch.from_numpy(params.log_variance).unsqueeze(0),
        torch.tensor(math.log(gamma), dtype=torch.float64),
    )
    out = (float(total), float(recon), float(kl))
    if not all(math.isfinite(v) for v in out):
        raise VaeError("elbo_loss produced a non-finite value")
    return out


def reparameterize(params: GaussianParams, noise: np.ndarray) -> np.ndarray:
    """z = mean + exp(log_variance / 2) * noise, elementwise."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != params.mean.shape:
        raise ShapeMismatchError(
            f"noise shape {noise.shape} != params shape {params.mean.shape}"
        )
    return params.mean + np.exp(0.5 * params.log_variance) * noise


# ---------------------------------------------------------------------------
# Networks

LOGVAR_CLAMP = 8.0


class ResidualBlock(nn.Module):
    def __init__(self, channels, kernel_size):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv2d(channels, channels, kernel_size, padding=pad)
        self.conv2 = nn.Conv2d(channels, channels, kernel_size, padding=pad)

    def forward(self, x):
        h = torch.relu(self.conv1(x))
        h = self.conv2(h)
        return torch.relu(x + h)


def _stage1_channels(config: VaeStageConfig):
    levels = int(math.log2(config.image_size)) - 2  # downsample to 4x4
    chans = [min(config.base_dim * (2**i), config.base_dim * 8) for i in range(levels + 1)]
    return levels, chans


class ConvEncoder(nn.Module):
    def __init__(self, config: VaeStageConfig):
        super().__init__()
        k, pad = config.kernel_size, config.kernel_size // 2
        levels, chans = _stage1_channels(config)
        self.stem = nn.Conv2d(3, chans[0], k, padding=pad)
        blocks = []
        for i in range(levels):
            blocks.append(ResidualBlock(chans[i], k))
            blocks.append(nn.Conv2d(chans[i], chans[i + 1], k, stride=2, padding=pad))
        self.trunk = nn.Sequential(*blocks)
        flat = chans[-1] * 4 * 4
        self.mean_head = nn.Linear(flat, config.latent_dim)
        self.logvar_head = nn.Linear(flat, config.latent_dim)

    def forward(self, x):
        h = torch.relu(self.stem(x))
        h = self.trunk(h)
        h = h.flatten(1)
        return self.mean_head(h), self.logvar_head(h).clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)


class ConvDecoder(nn.Module):
    def __init__(self, config: VaeStageConfig):
        super().__init__()
        k, pad = config.kernel_size, config.kernel_size // 2
        levels, chans = _stage1_channels(config)
        self.top_channels = chans[-1]
        self.fc = nn.Linear(config.latent_dim, chans[-1] * 4 * 4)
        blocks = []
        for i in reversed(range(levels)):
            blocks.append(ResidualBlock(chans[i + 1], k))
            blocks.append(nn.Upsample(scale_factor=2, mode="nearest"))
            blocks.append(nn.Conv2d(chans[i + 1], chans[i], k, padding=pad))
        self.trunk = nn.Sequential(*blocks)
        self.head = nn.Conv2d(chans[0], 3, k, padding=pad)

    def forward(self, z):
        h = torch.relu(self.fc(z))
        h = h.reshape(-1, self.top_channels, 4, 4)
        h = self.trunk(h)
        return torch.sigmoid(self.head(h))


class Mlp(nn.Module):
    def __init__(self, in_dim, hidden, layers, out_dim=None):
        super().__init__()
        mods = []
        d = in_dim
        for _ in range(layers):
            mods.append(nn.Linear(d, hidden))
            mods.append(nn.ReLU())
            d = hidden
        self.body = nn.Sequential(*mods)
        self.head = nn.Linear(d, out_dim) if out_dim else nn.Identity()

    def forward(self, x):
        return self.head(self.body(x))


class VaeNet(nn.Module):
    """Encoder/decoder pair plus the learned log observation variance."""

    def __init__(self, config: VaeStageConfig):
        super().__init__()
        self.config = config
        if config.stage == 1:
            self.encoder = ConvEncoder(config)
            self.decoder = ConvDecoder(config)
        else:
            # separate heads over a shared dense trunk
            self.enc_body = Mlp(config.input_dim, config.dense_dim, config.dense_layers)
            self.mean_head = nn.Linear(config.dense_dim, config.latent_dim)
            self.logvar_head = nn.Linear(config.dense_dim, config.latent_dim)
            self.dec = Mlp(config.latent_dim, config.dense_dim, config.dense_layers, config.input_dim)
        if config.fixed_gamma is not None:
            if config.fixed_gamma <= 0:
                raise VaeError("fixed_gamma must be positive")
            self.register_buffer(
                "log_gamma", torch.tensor(math.log(config.fixed_gamma))
            )
        else:
            self.log_gamma = nn.Parameter(torch.zeros(()))

    def encode(self, x):
        if self.config.stage == 1:
            return self.encoder(x)
        h = self.enc_body.body(x)
        return self.mean_head(h), self.logvar_head(h).clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)

    def decode(self, z):
        if self.config.stage == 1:
            return self.decoder(z)
        return self.dec(z)

    def forward(self, x, noise=None):
        mean, logvar = self.encode(x)
        if noise is None:
            noise = torch.randn_like(mean)
        z = mean + torch.exp(0.5 * logvar) * noise
        return self.decode(z), mean, logvar

    def expected_input_shape(self):
        if self.config.stage == 1:
            s = self.config.image_size
            return (s, s, 3)
        return (self.config.input_dim,)


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class VaeCheckpoint:
    config: VaeStageConfig
    state_dict: dict
    training_log: list = field(default_factory=list)
    format_version: int = FORMAT_VERSION
    _model: VaeNet | None = None

    def model(self) -> VaeNet:
        if self._model is None:
            net = VaeNet(self.config)
            net.load_state_dict(self.state_dict)
            net.eval()
            self._model = net
        return self._model

    def gamma(self) -> float:
        return float(torch.exp(self.model().log_gamma))

    def save(self, path) -> None:
        payload = {
            "format_version": self.format_version,
            "model_kind": "vae",
            "config": asdict(self.config),
            "state_dict": self.state_dict,
            "training_log": self.training_log,
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path) -> "VaeCheckpoint":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("format_version") != FORMAT_VERSION:
            raise VaeError(
                f"unsupported checkpoint format_version {payload.get('format_version')}"
            )
        return cls(
            config=VaeStageConfig(**payload["config"]),
            state_dict=payload["state_dict"],
            training_log=payload["training_log"],
        )


# ---------------------------------------------------------------------------
# Operations


def _as_batch_tensor(x, checkpoint: VaeCheckpoint):
    expected = checkpoint.model().expected_input_shape()
    arr = np.asarray(x, dtype=np.float32)
    if arr.shape != expected:
        raise ShapeMismatchError(
            f"stage {checkpoint.config.stage} expects input shape {expected}, "
            f"got {arr.shape}"
        )
    t = torch.from_numpy(arr)
    if checkpoint.config.stage == 1:
        t = t.permute(2, 0, 1)
    return t.unsqueeze(0)


def encode(x, stage: int, checkpoint: VaeCheckpoint) -> GaussianParams:
    """Posterior parameters of one input under the given stage checkpoint."""
    if stage != checkpoint.config.stage:
        raise VaeError(
            f"checkpoint is for stage {checkpoint.config.stage}, asked for {stage}"
        )
    t = _as_batch_tensor(x, checkpoint)
    with torch.no_grad():
        mean, logvar = checkpoint.model().encode(t)
    return GaussianParams(mean[0].numpy(), logvar[0].numpy())


def _manifest_pixels(manifest: DatasetManifest, image_size: int) -> np.ndarray:
    rows = [
        manifest.load_pixels(e, target_size=(image_size, image_size)) for e in manifest
    ]
    return np.stack(rows).astype(np.float32)


def stage1_latents(
    manifest: DatasetManifest, checkpoint: VaeCheckpoint, *, source="means", seed=0
) -> np.ndarray:
    """Latent codes of a dataset under a frozen stage-1 checkpoint."""
    pixels = _manifest_pixels(manifest, checkpoint.config.image_size)
    t = torch.from_numpy(pixels).permute(0, 3, 1, 2)
    with torch.no_grad():
        mean, logvar = checkpoint.model().encode(t)
        if source == "samples":
            gen = torch.Generator().manual_seed(seed)
            noise = torch.randn(mean.shape, generator=gen)
            mean = mean + torch.exp(0.5 * logvar) * noise
    return mean.numpy().astype(np.float32)


def _epoch_mae(net: VaeNet, data: torch.Tensor) -> float:
    with torch.no_grad():
        mean, _ = net.encode(data)
        recon = net.decode(mean)
    return metrics.mae(data.numpy(), recon.numpy())


def train_stage(data, config: VaeStageConfig, *, progress=None) -> VaeCheckpoint:
    """Train one VAE stage.

    Stage 1 takes a DatasetManifest; stage 2 takes an (N, input_dim) array of
    stage-1 latent codes produced by a frozen stage-1 checkpoint. Stops at
    max_epochs or when the validation MAE fails to improve by mae_min_delta
    for mae_patience consecutive epochs.
    """
    if config.stage == 1:
        if not isinstance(data, DatasetManifest):
            raise VaeError("stage 1 trains on a DatasetManifest")
        if len(data) == 0:
            raise VaeError("empty training data")
        arr = _manifest_pixels(data, config.image_size)
        tensor = torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()
    else:
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise VaeError("stage 2 trains on a nonempty (N, input_dim) latent array")
        if arr.shape[1] != config.input_dim:
            raise ShapeMismatchError(
                f"stage 2 expects latents of width {config.input_dim}, got {arr.shape[1]}"
            )
        tensor = torch.from_numpy(arr)

    torch.manual_seed(config.seed)
    net = VaeNet(config)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)

    n = tensor.shape[0]
    rng = np.random.default_rng(config.seed)
    n_val = int(round(config.val_fraction * n))
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        train_idx = perm
    train_data = tensor[train_idx.copy()]
    # tiny datasets fall back to validating on the training slice
    val_data = tensor[val_idx.copy()] if n_val > 0 else train_data

    log = []
    best_mae = math.inf
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_data))
        totals = np.zeros(3)
        batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = train_data[order[start : start + config.batch_size].copy()]
            recon, mean, logvar = net(batch)
            total, rec, kl = elbo_terms(batch, recon, mean, logvar, net.log_gamma)
            if not torch.isfinite(total):
                raise TrainingDivergedError(epoch)
            opt.zero_grad()
            total.backward()
            opt.step()
            totals += (
                float(total.detach()),
                float(rec.detach()),
                float(kl.detach()),
            )
            batches += 1
        net.eval()
        epoch_mae = _epoch_mae(net, val_data)
        net.train()
        entry = {
            "epoch": epoch,
            "elbo": totals[0] / batches,
            "reconstruction_term": totals[1] / batches,
            "kl_term": totals[2] / batches,
            "mae": epoch_mae,
        }
        log.append(entry)
        if progress is not None:
            progress(entry)
        if epoch_mae < best_mae - config.mae_min_delta:
            best_mae = epoch_mae
            stale = 0
        else:
            stale += 1
            if stale >= config.mae_patience:
                break

    net.eval()
    state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    return VaeCheckpoint(config=config, state_dict=state, training_log=log)


def _check_two_stage(stage1: VaeCheckpoint, stage2: VaeCheckpoint):
    if stage1.config.stage != 1 or stage2.config.stage != 2:
        raise VaeError(
            f"need a (stage 1, stage 2) pair, got ({stage1.config.stage}, "
            f"{stage2.config.stage})"
        )
    if stage2.config.input_dim != stage1.config.latent_dim:
        raise VaeError(
            f"stage-2 input width {stage2.config.input_dim} != stage-1 latent "
            f"dim {stage1.config.latent_dim}"
        )


def generate(
    n: int, stage1: VaeCheckpoint, stage2: VaeCheckpoint, seed: int
) -> list[np.ndarray]:
    """Sample n images: stage-2 prior -> stage-2 decoder (+ its observation
    noise) -> stage-1 decoder. Deterministic under a fixed seed."""
    _check_two_stage(stage1, stage2)
    if n == 0:
        return []
    gen = torch.Generator().manual_seed(seed)
    u = torch.randn(n, stage2.config.latent_dim, generator=gen)
    with torch.no_grad():
        z_mean = stage2.model().decode(u)
        noise = torch.randn(z_mean.shape, generator=gen)
        z = z_mean + math.sqrt(stage2.gamma()) * noise
        imgs = stage1.model().decode(z).clamp(0.0, 1.0)
    return [img.permute(1, 2, 0).numpy().astype(np.float32) for img in imgs]


def generate_stage1(n: int, stage1: VaeCheckpoint, seed: int) -> list[np.ndarray]:
    """Sample n images from the stage-1 prior alone (no second stage)."""
    if stage1.config.stage != 1:
        raise VaeError("generate_stage1 needs a stage-1 checkpoint")
    if n == 0:
        return []
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(n, stage1.config.latent_dim, generator=gen)
    with torch.no_grad():
        imgs = stage1.model().decode(z).clamp(0.0, 1.0)
    return [img.permute(1, 2, 0).numpy().astype(np.float32) for img in imgs]


def reconstruct(x, stage1: VaeCheckpoint, stage2: VaeCheckpoint | None = None):
    """Mean-substitution reconstruction through stage 1 (optionally via stage 2)."""
    t = _as_batch_tensor(x, stage1)
    with torch.no_grad():
        z, _ = stage1.model().encode(t)
        if stage2 is not None:
            _check_two_stage(stage1, stage2)
            u, _ = stage2.model().encode(z)
            z = stage2.model().decode(u)
        out = stage1.model().decode(z).clamp(0.0, 1.0)
    return out[0].permute(1, 2, 0).numpy().astype(np.float32)
