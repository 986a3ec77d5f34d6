"""Vision transformer matching the DINO ViT-B/16 checkpoint layout.

State-dict keys follow the reference implementation (``cls_token``,
``pos_embed``, ``patch_embed.proj.*``, ``blocks.N.{norm1,attn.qkv,attn.proj,
norm2,mlp.fc1,mlp.fc2}.*``, ``norm.*``) so published backbone checkpoints
load strictly. Two presets:

* ``vit-base-16`` - the full 12-layer backbone; meaningful only with real
  pretrained weights supplied via ``load_checkpoint``.
* ``tiny768`` - a 1-layer model with the same 768-wide embedding and the
  same key layout, seeded deterministically. It exercises the full export
  path (preprocessing, batching, file formats) at test speed; its features
  are reproducible but not semantically trained.

Features are the final-norm class token by default; ``pooling="patch_mean"``
averages the patch tokens instead.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import torch
import torch.nn as nn

from .errors import CheckpointLoadError

EMBED_DIM = 768
PATCH_SIZE = 16
IMG_SIZE = 224

PRESETS = {
    "vit-base-16": {"depth": 12, "num_heads": 12, "mlp_ratio": 4.0},
    "tiny768": {"depth": 1, "num_heads": 12, "mlp_ratio": 1.0},
}

POOLINGS = ("cls", "patch_mean")


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchEmbed(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Conv2d(3, dim, kernel_size=PATCH_SIZE, stride=PATCH_SIZE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(x).flatten(2).transpose(1, 2)  # (B, N, C)


class VisionTransformer(nn.Module):
    def __init__(self, depth: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        n_patches = (IMG_SIZE // PATCH_SIZE) ** 2
        self.patch_embed = PatchEmbed(EMBED_DIM)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, EMBED_DIM))
        self.pos_embed = nn.Parameter(torch.zeros(1, n_patches + 1, EMBED_DIM))
        self.blocks = nn.ModuleList(
            Block(EMBED_DIM, num_heads, mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(EMBED_DIM, eps=1e-6)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)

    def forward_tokens(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != (IMG_SIZE, IMG_SIZE):
            raise CheckpointLoadError(
                f"model expects {IMG_SIZE}x{IMG_SIZE} inputs, got "
                f"{x.shape[-2]}x{x.shape[-1]}")
        tokens = self.patch_embed(x)
        cls = self.cls_token.expand(tokens.shape[0], -1, -1)
        tokens = torch.cat([cls, tokens], dim=1) + self.pos_embed
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens)

    @torch.no_grad()
    def features(self, x: torch.Tensor, pooling: str = "cls") -> torch.Tensor:
        """(B, 3, 224, 224) -> (B, 768) frozen embeddings."""
        if pooling not in POOLINGS:
            raise CheckpointLoadError(f"unknown pooling {pooling!r} "
                                      f"(want one of {POOLINGS})")
        tokens = self.forward_tokens(x)
        if pooling == "cls":
            return tokens[:, 0]
        return tokens[:, 1:].mean(dim=1)


def build_model(preset: str, seed: int = 0) -> VisionTransformer:
    """Construct a preset architecture with seeded (untrained) weights."""
    if preset not in PRESETS:
        raise CheckpointLoadError(f"unknown model preset {preset!r} "
                                  f"(want one of {sorted(PRESETS)})")
    torch.manual_seed(seed)
    model = VisionTransformer(**PRESETS[preset])
    model.eval()
    return model


def load_checkpoint(model: VisionTransformer, path: str | Path) -> str:
    """Load backbone weights into ``model``; returns the file's sha256.

    Accepts a bare state dict or one nested under ``state_dict`` / ``model``
    / ``teacher`` (the DINO release wraps the teacher backbone); ``module.``
    prefixes from DataParallel and projection-``head.*`` entries are
    stripped. Anything else that does not line up raises
    :class:`CheckpointLoadError`.
    """
    p = Path(path)
    if not p.is_file():
        raise CheckpointLoadError(f"checkpoint not found: {p}")
    digest = hashlib.sha256(p.read_bytes()).hexdigest()
    try:
        payload = torch.load(p, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointLoadError(f"{p}: cannot deserialize: {exc}") from None
    if not isinstance(payload, dict):
        raise CheckpointLoadError(f"{p}: expected a state dict, got "
                                  f"{type(payload).__name__}")
    for key in ("state_dict", "model", "teacher"):
        if key in payload and isinstance(payload[key], dict):
            payload = payload[key]
            break
    state = {}
    for key, value in payload.items():
        if key.startswith("module."):
            key = key[len("module."):]
        if key.startswith("head."):
            continue
        state[key] = value
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointLoadError(f"{p}: incompatible checkpoint: {exc}") from None
    model.eval()
    return digest
