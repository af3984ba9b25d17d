import numpy as np
import pytest

from clip_exporter import load_model


def make_stub_images(model, class_names, n, d_pixels, noise, seed):
    """Images whose stub features align with class prototypes.

    Inverts the stub's fixed pixel-to-embedding map so each image's feature
    points toward its class prototype, plus pixel noise, giving a nontrivial
    zero-shot problem.
    """
    enc = model.text_encoder.__self__
    enc.register_classes(class_names)
    w_inv = np.linalg.pinv(enc.image_map(d_pixels))
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, len(class_names), size=n)
    protos = np.stack([enc.class_prototype(c) for c in class_names])
    base = protos[labels] @ w_inv
    base = base / np.abs(base).max()
    x = 0.5 + 0.2 * base + noise * rng.normal(size=(n, d_pixels))
    return np.clip(x, 0.0, 1.0), labels


@pytest.fixture(scope="session")
def stub_model():
    return load_model("stub:3:16")


@pytest.fixture(scope="session")
def class_names():
    return [f"class{i}" for i in range(10)]


@pytest.fixture(scope="session")
def stub_sample(stub_model, class_names):
    images, labels = make_stub_images(
        stub_model, class_names, n=600, d_pixels=24, noise=0.05, seed=0)
    return images, labels
