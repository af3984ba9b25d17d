import numpy as np
import pytest

from kdfuse.synth import SynthSpec, gen_synth


@pytest.fixture(scope="session")
def small_bundle(tmp_path_factory):
    """A small but fully-formed synthetic bundle shared across test modules."""
    directory = tmp_path_factory.mktemp("bundle_small")
    spec = SynthSpec(n=600, k=6, m=3, d_t=8, d_c=12, d_in=16, seed=7)
    manifest = gen_synth(spec, directory)
    return spec, manifest, directory


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
