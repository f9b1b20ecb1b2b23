"""Trainable components: transformation bank, encoder, decoder, classifier.

Tensor layout conventions: a batch of series is ``(B, C, L)``; augmented
views are ``(B, K, C, L)``; latents are ``(B, K, D)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import CheckpointError, InvalidConfig, ShapeMismatch

TASKS = ("con", "rec", "class")
CHECKPOINT_MAGIC = "NCRC1"
N_FIXED_TRANSFORMATIONS = 12


@dataclass
class ModelConfig:
    """Architecture hyperparameters. ``n_transformations`` counts the identity."""

    input_channels: int
    input_length: int
    n_transformations: int = 12
    latent_dim: int = 320
    hidden_channels: int = 64
    encoder_depth: int = 10
    decoder_depth: int | None = None
    kernel_size: int = 3
    transform_channels: int = 32
    transformation_mode: str = "learnable"
    pooling: str = "max"

    def __post_init__(self):
        self.validate()

    @property
    def K(self) -> int:
        return self.n_transformations

    def validate(self) -> None:
        if self.n_transformations < 2:
            raise InvalidConfig("n_transformations must be >= 2 (identity plus one more)")
        for name in ("latent_dim", "hidden_channels", "encoder_depth", "kernel_size",
                     "transform_channels", "input_channels", "input_length"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.decoder_depth is not None and self.decoder_depth < 1:
            raise InvalidConfig("decoder_depth must be >= 1")
        if self.transformation_mode not in ("learnable", "fixed"):
            raise InvalidConfig(f"unknown transformation_mode {self.transformation_mode!r}")
        if self.transformation_mode == "fixed" and self.n_transformations != N_FIXED_TRANSFORMATIONS:
            raise InvalidConfig("the fixed transformation set has exactly 12 views")
        if self.pooling not in ("max", "mean"):
            raise InvalidConfig(f"unknown pooling {self.pooling!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidConfig(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------
# Transformations


class _GroupedResBlock(nn.Module):
    """G independent residual blocks computed with grouped convolutions."""

    def __init__(self, groups, in_ch, out_ch, kernel_size):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv1d(groups * in_ch, groups * out_ch, kernel_size, padding=pad,
                               groups=groups, bias=False)
        self.norm1 = nn.InstanceNorm1d(groups * out_ch, affine=True)
        self.conv2 = nn.Conv1d(groups * out_ch, groups * out_ch, kernel_size, padding=pad,
                               groups=groups, bias=False)
        self.norm2 = nn.InstanceNorm1d(groups * out_ch, affine=True)
        self.shortcut = (
            nn.Conv1d(groups * in_ch, groups * out_ch, 1, groups=groups, bias=False)
            if in_ch != out_ch else nn.Identity()
        )

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.relu(h + self.shortcut(x))


class TransformationBank(nn.Module):
    """Identity followed by K-1 learnable shape-preserving transformations.

    Each learnable transformation is three residual conv blocks with instance
    normalization and ReLU, then a final convolution back to C channels.
    """

    def __init__(self, n_channels, n_transformations, hidden=32, kernel_size=3):
        super().__init__()
        self.n_channels = n_channels
        self.n_transformations = n_transformations
        g = n_transformations - 1
        k = kernel_size if kernel_size % 2 == 1 else kernel_size + 1
        self.blocks = nn.Sequential(
            _GroupedResBlock(g, n_channels, hidden, k),
            _GroupedResBlock(g, hidden, hidden, k),
            _GroupedResBlock(g, hidden, hidden, k),
        )
        self.out = nn.Conv1d(g * hidden, g * n_channels, k, padding=k // 2, groups=g)

    def forward(self, x):
        b, c, length = x.shape
        if c != self.n_channels:
            raise ShapeMismatch(f"expected {self.n_channels} channels, got {c}")
        g = self.n_transformations - 1
        h = x.repeat(1, g, 1)
        views = self.out(self.blocks(h)).view(b, g, c, length)
        return torch.cat([x.unsqueeze(1), views], dim=1)


def fixed_transform(x: torch.Tensor) -> torch.Tensor:
    """The 12 hand-crafted views: time flip x channel flip x circular shift.

    Nesting order is time-flip (no, yes), channel-flip (no, yes), shift
    (none, +L/4, -L/4), so view 0 is the input itself. A view is
    ``roll(flip_channels(flip_time(x)), shift)``.
    """
    if x.dim() != 3:
        raise ShapeMismatch(f"expected (B, C, L), got shape {tuple(x.shape)}")
    shift = int(0.25 * x.shape[-1])
    views = []
    for time_flip in (False, True):
        for channel_flip in (False, True):
            for s in (0, shift, -shift):
                v = x
                if time_flip:
                    v = torch.flip(v, dims=(-1,))
                if channel_flip:
                    v = torch.flip(v, dims=(-2,))
                if s:
                    v = torch.roll(v, shifts=s, dims=-1)
                views.append(v)
    return torch.stack(views, dim=1)


class FixedTransformations(nn.Module):
    n_transformations = N_FIXED_TRANSFORMATIONS

    def __init__(self, n_channels):
        super().__init__()
        self.n_channels = n_channels

    def forward(self, x):
        if x.shape[1] != self.n_channels:
            raise ShapeMismatch(f"expected {self.n_channels} channels, got {x.shape[1]}")
        return fixed_transform(x)


# --------------------------------------------------------------------------
# Encoder / decoder


class SamePadConv(nn.Module):
    def __init__(self, in_ch, out_ch, kernel_size, dilation=1):
        super().__init__()
        receptive_field = (kernel_size - 1) * dilation + 1
        self.conv = nn.Conv1d(in_ch, out_ch, kernel_size, padding=receptive_field // 2,
                              dilation=dilation)
        self.remove = 1 if receptive_field % 2 == 0 else 0

    def forward(self, x):
        out = self.conv(x)
        return out[:, :, :-self.remove] if self.remove else out


class ConvBlock(nn.Module):
    """GELU -> dilated conv -> GELU -> dilated conv, with a residual path."""

    def __init__(self, in_ch, out_ch, kernel_size, dilation, final=False):
        super().__init__()
        self.conv1 = SamePadConv(in_ch, out_ch, kernel_size, dilation)
        self.conv2 = SamePadConv(out_ch, out_ch, kernel_size, dilation)
        self.projector = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch or final else None

    def forward(self, x):
        residual = x if self.projector is None else self.projector(x)
        x = self.conv2(F.gelu(self.conv1(F.gelu(x))))
        return x + residual


def _dilated_stack(channels, depth, kernel_size, out_channels=None):
    blocks = [ConvBlock(channels, channels, kernel_size, 2 ** i) for i in range(depth)]
    if out_channels is not None:
        blocks.append(ConvBlock(channels, out_channels, kernel_size, 2 ** depth, final=True))
    return nn.Sequential(*blocks)


class Encoder(nn.Module):
    """Per-timestep linear projection, dilated conv stack, temporal pooling."""

    def __init__(self, in_channels, latent_dim=320, hidden=64, depth=10, kernel_size=3,
                 pooling="max"):
        super().__init__()
        self.in_channels = in_channels
        self.input_fc = nn.Linear(in_channels, hidden)
        self.features = _dilated_stack(hidden, depth, kernel_size, out_channels=latent_dim)
        self.pooling = pooling

    def forward(self, x):
        # x: (N, C, L) -> (N, D)
        h = self.input_fc(x.transpose(1, 2)).transpose(1, 2)
        h = self.features(h)
        if self.pooling == "max":
            return h.max(dim=-1).values
        return h.mean(dim=-1)


def _sinusoid_table(channels, length):
    pos = torch.arange(length, dtype=torch.float32)[None, :]
    i = torch.arange(channels, dtype=torch.float32)[:, None]
    angle = pos / torch.pow(10000.0, (2 * torch.div(i, 2, rounding_mode="floor")) / channels)
    return torch.where(i % 2 == 0, torch.sin(angle), torch.cos(angle))


class Decoder(nn.Module):
    """Latent vector broadcast over time, plus a learnable position table,
    through a dilated conv stack and a channel projection."""

    def __init__(self, out_channels, length, latent_dim=320, hidden=64, depth=10, kernel_size=3):
        super().__init__()
        self.out_channels = out_channels
        self.length = length
        self.input_fc = nn.Linear(latent_dim, hidden)
        self.position = nn.Parameter(_sinusoid_table(hidden, length))
        self.features = _dilated_stack(hidden, depth, kernel_size)
        self.output = nn.Conv1d(hidden, out_channels, 1)

    def forward(self, z):
        # z: (N, D) -> (N, C, L)
        h = self.input_fc(z).unsqueeze(-1) + self.position.unsqueeze(0)
        h = self.features(h)
        return self.output(F.gelu(h))


class UncertaintyWeights(nn.Module):
    """Learnable log-sigma per task; sigma = exp(log_sigma) stays positive."""

    def __init__(self):
        super().__init__()
        self.log_sigma_con = nn.Parameter(torch.zeros(()))
        self.log_sigma_rec = nn.Parameter(torch.zeros(()))
        self.log_sigma_class = nn.Parameter(torch.zeros(()))

    def log_sigma(self, task):
        return getattr(self, f"log_sigma_{task}")

    def sigma(self, task):
        return torch.exp(self.log_sigma(task))

    def as_dict(self) -> dict:
        return {t: self.sigma(t).item() for t in TASKS}


class NeuCoReClassNet(nn.Module):
    """Transformation bank, encoder, decoder, linear classifier and
    uncertainty weights, wired for joint training."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c, length, k = config.input_channels, config.input_length, config.n_transformations
        if config.transformation_mode == "fixed":
            self.transformations = FixedTransformations(c)
        else:
            self.transformations = TransformationBank(c, k, config.transform_channels,
                                                      config.kernel_size)
        self.encoder = Encoder(c, config.latent_dim, config.hidden_channels,
                               config.encoder_depth, config.kernel_size, config.pooling)
        self.decoder = Decoder(c, length, config.latent_dim, config.hidden_channels,
                               config.decoder_depth or config.encoder_depth, config.kernel_size)
        self.classifier = nn.Linear(config.latent_dim, k)
        self.weights = UncertaintyWeights()
        self.tasks = tuple(TASKS)
        self.tau = 0.1
        self.trained = False

    @property
    def n_transformations(self):
        return self.config.n_transformations

    def check_input(self, x):
        cfg = self.config
        if x.dim() != 3 or x.shape[1] != cfg.input_channels or x.shape[2] != cfg.input_length:
            raise ShapeMismatch(
                f"expected input (B, {cfg.input_channels}, {cfg.input_length}), "
                f"got {tuple(x.shape)}"
            )

    def transform(self, x):
        self.check_input(x)
        return self.transformations(x)

    def encode(self, views):
        b, k, c, length = views.shape
        if k != self.n_transformations or c != self.config.input_channels:
            raise ShapeMismatch(f"expected views (B, {self.n_transformations}, "
                                f"{self.config.input_channels}, L), got {tuple(views.shape)}")
        return self.encoder(views.reshape(b * k, c, length)).view(b, k, -1)

    def decode(self, latents):
        b, k, d = latents.shape
        if d != self.config.latent_dim:
            raise ShapeMismatch(f"expected latent dim {self.config.latent_dim}, got {d}")
        out = self.decoder(latents.reshape(b * k, d))
        return out.view(b, k, self.config.input_channels, self.config.input_length)

    def logits(self, latents):
        if latents.shape[-1] != self.config.latent_dim:
            raise ShapeMismatch(f"expected latent dim {self.config.latent_dim}, "
                                f"got {latents.shape[-1]}")
        return self.classifier(latents)

    def classify(self, latents):
        return torch.softmax(self.logits(latents), dim=-1)

    def forward(self, x, tasks=TASKS):
        """Run the pipeline; outputs of tasks not listed are ``None``."""
        views = self.transform(x)
        latents = self.encode(views)
        recon = self.decode(latents) if "rec" in tasks else None
        logits = self.logits(latents) if "class" in tasks else None
        return {"views": views, "latents": latents, "reconstructions": recon, "logits": logits}


def init_model(config: ModelConfig, seed: int = 0) -> NeuCoReClassNet:
    """Build a model whose parameters are a pure function of ``(config, seed)``.

    Convolutions and linear layers keep torch's fan-in scaled uniform
    initialization; the classifier bias starts at zero and every log-sigma
    at zero (sigma = 1).
    """
    if isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = NeuCoReClassNet(config)
    nn.init.zeros_(model.classifier.bias)
    return model


# --------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(model: NeuCoReClassNet, path, seed: int | None = None, extra: dict | None = None):
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "config": model.config.to_dict(),
        "tasks": list(model.tasks),
        "tau": float(model.tau),
        "trained": bool(model.trained),
        "seed": seed,
        "uncertainty": model.weights.as_dict(),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> tuple[NeuCoReClassNet, dict]:
    """Load a checkpoint; returns the model and the raw metadata."""
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_MAGIC} checkpoint")
    model = NeuCoReClassNet(ModelConfig.from_dict(payload["config"]))
    state = payload["state_dict"]
    dtype = next(iter(state.values())).dtype if state else torch.float32
    model.to(dtype)
    model.load_state_dict(state)
    model.tasks = tuple(payload["tasks"])
    model.tau = float(payload["tau"])
    model.trained = payload["trained"]
    return model, {k: v for k, v in payload.items() if k != "state_dict"}


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def clone_state(model: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def parameters_finite(model: nn.Module) -> bool:
    return all(bool(torch.isfinite(p).all()) for p in model.parameters())
