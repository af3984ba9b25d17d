"""Export pipeline: prompt-ensemble text embeddings, per-prompt zero-shot
logits, image features, and a complete cache bundle on disk."""

from __future__ import annotations

import numpy as np

from .cache_writer import write_bundle_files
from .encoder import ClipModelRef, StubEncoder
from .errors import IOFailure
from .prompts import PromptSet, name_variants

BATCH_SIZE = 256


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def class_text_embeddings(model: ClipModelRef, ps: PromptSet,
                          class_names) -> np.ndarray:
    """M x K x D unit embeddings, one per (template, class).

    Under the complex strategy each template is rendered once per name
    variant (class name plus synonyms); the variant embeddings are averaged
    and re-normalized into that template's single class embedding.
    """
    ps.validate()
    enc = getattr(model.text_encoder, "__self__", None)
    if isinstance(enc, StubEncoder):
        enc.register_classes(class_names, ps.synonyms)
    m, k = len(ps.templates), len(class_names)
    out = np.empty((m, k, model.embed_dim))
    for j, name in enumerate(class_names):
        variants = name_variants(ps, name)
        # template-major: rows i*len(variants) .. belong to template i
        prompts = [t.format(v) for t in ps.templates for v in variants]
        emb = np.asarray(model.text_encoder(prompts), dtype=np.float64)
        emb = emb.reshape(m, len(variants), model.embed_dim)
        out[:, j, :] = _unit(emb.mean(axis=1))
    return out


def encode_images(model: ClipModelRef, images: np.ndarray) -> np.ndarray:
    """N x D unit image features, batched."""
    chunks = [np.asarray(model.image_encoder(images[i:i + BATCH_SIZE]),
                         dtype=np.float64)
              for i in range(0, len(images), BATCH_SIZE)]
    return np.concatenate(chunks, axis=0)


def prompt_logits(model: ClipModelRef, text_emb: np.ndarray,
                  image_feats: np.ndarray) -> np.ndarray:
    """M x N x K logits: tau * cosine(image, class-text) per prompt."""
    # text_emb is M x K x D, image_feats is N x D; rows are unit vectors so
    # the inner product is the cosine.
    return model.tau * np.einsum("nd,mkd->mnk", image_feats, text_emb)


def average_logits(logits_mnk: np.ndarray) -> np.ndarray:
    """Mean over the prompt axis: N x K."""
    return logits_mnk.mean(axis=0)


def export_bundle(model: ClipModelRef, images: np.ndarray, labels: np.ndarray,
                  class_names, ps: PromptSet, out_dir,
                  teacher_logits: np.ndarray | None = None,
                  teacher_features: np.ndarray | None = None):
    """Compute all tensors and write a validated cache bundle to ``out_dir``.

    Without an external teacher hook, teacher_logits/teacher_features are
    filled with the prompt-averaged zero-shot logits and image features so
    the bundle is complete and loadable; a downstream classifier script may
    overwrite them. Returns (out_dir, tensors dict).
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 2:
        raise IOFailure(f"images must be N x D_in, got shape {images.shape}")
    if labels.shape != (images.shape[0],):
        raise IOFailure("labels length must match image count")
    k = len(class_names)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IOFailure(f"labels outside [0, {k})")
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise IOFailure("image values must lie in [0, 1]")

    text_emb = class_text_embeddings(model, ps, class_names)
    feats = encode_images(model, images)
    logits = prompt_logits(model, text_emb, feats)

    if teacher_logits is None:
        teacher_logits = average_logits(logits)
    if teacher_features is None:
        teacher_features = feats
    tensors = {
        "teacher_logits": np.asarray(teacher_logits, dtype=np.float32),
        "clip_prompt_logits": logits.astype(np.float32),
        "teacher_features": np.asarray(teacher_features, dtype=np.float32),
        "clip_features": feats.astype(np.float32),
        "images": images.astype(np.float32),
        "labels": labels,
    }
    fields = {
        "sample_count": str(images.shape[0]),
        "class_count": str(k),
        "prompt_count": str(ps.prompt_count),
        "teacher_feature_dim": str(tensors["teacher_features"].shape[1]),
        "clip_feature_dim": str(model.embed_dim),
        "input_dim": str(images.shape[1]),
        "clip_temperature": repr(float(model.tau)),
        "class_names": ",".join(class_names),
        "model_id": model.model_id,
        "prompt_strategy": ps.strategy,
    }
    out = write_bundle_files(out_dir, tensors, fields)
    return out, tensors
