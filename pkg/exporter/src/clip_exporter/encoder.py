"""Model handles: a deterministic stub encoder for offline runs and an
optional loader for a real pretrained vision-language model.

Model identifier grammar:
    "stub:<seed>:<dim>"   deterministic hash-based encoder (no downloads)
    anything else         passed to the transformers CLIP loader
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ModelLoadError

DEFAULT_MODEL = "openai/clip-vit-large-patch14"
DEFAULT_TAU = 100.0


@dataclass
class ClipModelRef:
    model_id: str
    image_encoder: object  # callable: N x D_pixels float array -> N x D unit rows
    text_encoder: object   # callable: list of strings -> len x D unit rows
    tau: float
    embed_dim: int

    def validate(self) -> None:
        if not self.tau > 0:
            raise ModelLoadError("tau must be > 0")


def _hash_seed(*parts: str) -> int:
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


class StubEncoder:
    """Deterministic text/image encoder with light class-name semantics.

    Text prompts that mention a known class name (or registered synonym)
    embed near that class's prototype with template-dependent jitter, so
    prompt averaging genuinely denoises; unknown text hashes to an arbitrary
    stable direction. Images are projected through a fixed random map.
    """

    def __init__(self, seed: int, dim: int, jitter: float = 0.6):
        self.seed = seed
        self.dim = dim
        self.jitter = jitter
        self._protos: dict[str, np.ndarray] = {}
        self._aliases: dict[str, str] = {}
        self._image_maps: dict[int, np.ndarray] = {}

    def register_classes(self, class_names,
                         synonyms: dict[str, list[str]] | None = None) -> None:
        for name in class_names:
            rng = np.random.default_rng(_hash_seed("proto", str(self.seed), name))
            self._protos[name] = _unit(rng.normal(size=self.dim))
            self._aliases[name] = name
        for name, alts in (synonyms or {}).items():
            for alt in alts:
                self._aliases[alt] = name

    def class_prototype(self, name: str) -> np.ndarray:
        return self._protos[name]

    def _match_class(self, text: str) -> str | None:
        hits = [alias for alias in self._aliases if alias in text]
        if not hits:
            return None
        return self._aliases[max(hits, key=len)]

    def encode_text(self, prompts) -> np.ndarray:
        out = np.empty((len(prompts), self.dim))
        for i, text in enumerate(prompts):
            rng = np.random.default_rng(_hash_seed("text", str(self.seed), text))
            noise = rng.normal(size=self.dim)
            name = self._match_class(text)
            if name is None:
                out[i] = _unit(noise)
            else:
                out[i] = _unit(self._protos[name] + self.jitter * _unit(noise))
        return out

    def image_map(self, d_pixels: int) -> np.ndarray:
        if d_pixels not in self._image_maps:
            rng = np.random.default_rng(
                _hash_seed("imap", str(self.seed), str(d_pixels)))
            self._image_maps[d_pixels] = rng.normal(
                size=(d_pixels, self.dim)) / np.sqrt(d_pixels)
        return self._image_maps[d_pixels]

    def encode_images(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        return _unit((x - 0.5) @ self.image_map(x.shape[1]))


def _load_stub(model_id: str) -> ClipModelRef:
    try:
        _, seed, dim = model_id.split(":")
        seed, dim = int(seed), int(dim)
    except ValueError:
        raise ModelLoadError(
            f"stub model id must be 'stub:<seed>:<dim>', got {model_id!r}"
        ) from None
    enc = StubEncoder(seed=seed, dim=dim)
    return ClipModelRef(model_id=model_id, image_encoder=enc.encode_images,
                        text_encoder=enc.encode_text, tau=DEFAULT_TAU,
                        embed_dim=dim)


def _load_transformers_clip(model_id: str) -> ClipModelRef:
    try:
        import torch
        from transformers import CLIPModel, CLIPProcessor
    except ImportError as e:
        raise ModelLoadError(f"transformers/torch unavailable: {e}") from e
    try:
        model = CLIPModel.from_pretrained(model_id)
        processor = CLIPProcessor.from_pretrained(model_id)
    except Exception as e:  # downloads can fail in many library-specific ways
        raise ModelLoadError(f"could not load {model_id}: {e}") from e
    model.eval()
    tau = float(model.logit_scale.exp().item())
    dim = int(model.config.projection_dim)

    def encode_text(prompts):
        with torch.no_grad():
            tokens = processor(text=list(prompts), return_tensors="pt",
                               padding=True)
            emb = model.get_text_features(**tokens).numpy()
        return _unit(emb.astype(np.float64))

    def encode_images(images):
        # images arrive as N x (H*W*3) float rows in [0, 1]
        x = np.asarray(images, dtype=np.float32)
        side = int(round((x.shape[1] / 3) ** 0.5))
        batch = (x.reshape(-1, side, side, 3) * 255).astype(np.uint8)
        with torch.no_grad():
            inputs = processor(images=list(batch), return_tensors="pt")
            emb = model.get_image_features(**inputs).numpy()
        return _unit(emb.astype(np.float64))

    return ClipModelRef(model_id=model_id, image_encoder=encode_images,
                        text_encoder=encode_text, tau=tau, embed_dim=dim)


def load_model(model_id: str = DEFAULT_MODEL) -> ClipModelRef:
    if model_id.startswith("stub:"):
        ref = _load_stub(model_id)
    else:
        ref = _load_transformers_clip(model_id)
    ref.validate()
    return ref
