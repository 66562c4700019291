import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_encoder():
    from ppgmorph.model import EncoderConfig
    # 3 blocks on 64 samples: lengths 64 -> 32 -> 32 -> 16
    return EncoderConfig(n_blocks=4, base_filters=2, double_every=2, dropout=0.0, embedding_dim=8,
                         input_len=64, expert_hidden=4)
