"""Shared fixtures.

Two trained models are built once per session: a full toy-preset
checkpoint (used by the acceptance tests and anything needing real
reconstruction quality) and a micro checkpoint (small net, 16x16 images)
for unit tests that just need a trained artifact quickly.
"""

import numpy as np
import pytest

from gicx.config import make_config
from gicx.dataset import ToyDatasetSpec, generate_toy_dataset
from gicx.pipeline import compress_image, inversion_from_config, train_checkpoint


@pytest.fixture(scope="session")
def toy_config():
    return make_config("toy")


@pytest.fixture(scope="session")
def corpus(toy_config):
    spec = ToyDatasetSpec(count=toy_config.dataset_count,
                          resolution=toy_config.image_size,
                          seed=toy_config.dataset_seed,
                          kind=toy_config.dataset_kind)
    return generate_toy_dataset(spec)


@pytest.fixture(scope="session")
def trained(toy_config, corpus):
    return train_checkpoint(toy_config, corpus)


@pytest.fixture(scope="session")
def checkpoint(trained):
    return trained[0]


@pytest.fixture(scope="session")
def compressed(checkpoint, corpus, toy_config):
    """One CompressResult per corpus image, inversion seeded per image."""
    results = []
    for i, image in enumerate(corpus):
        inversion = inversion_from_config(toy_config, seed=toy_config.seed + i)
        results.append(compress_image(checkpoint, image, inversion=inversion,
                                      guidance_levels=toy_config.guidance_levels,
                                      comp_scale=toy_config.comp_scale,
                                      cfg_scale=toy_config.cfg_scale))
    return results


MICRO_OVERRIDES = dict(image_size=16, dataset_count=4, schedule_steps=100,
                       widths=(8, 12, 16), cond_dim=16, cond_hidden=24,
                       embed_tokens=4, train_steps=250, inversion_steps=60,
                       sampler_steps=8)


@pytest.fixture(scope="session")
def micro_config():
    return make_config("toy", **MICRO_OVERRIDES)


@pytest.fixture(scope="session")
def micro_corpus(micro_config):
    spec = ToyDatasetSpec(count=micro_config.dataset_count,
                          resolution=micro_config.image_size,
                          seed=micro_config.dataset_seed,
                          kind=micro_config.dataset_kind)
    return generate_toy_dataset(spec)


@pytest.fixture(scope="session")
def micro_trained(micro_config, micro_corpus):
    return train_checkpoint(micro_config, micro_corpus)


@pytest.fixture(scope="session")
def micro_checkpoint(micro_trained):
    return micro_trained[0]
