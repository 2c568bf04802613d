import numpy as np
import pytest

from armpose import network as nn


def untrained_model(arch="feedforward", codec="quat", dropout=0.2, width=16, seed=0):
    """A structurally valid model with random (untrained) weights."""
    input_dim = 16 if arch == "feedforward" else 17
    spec = nn.ModelSpec(
        arch=arch, codec=codec, width=width, depth=2, dropout=dropout,
        input_dim=input_dim,
    )
    params = nn.init_params(spec, np.random.default_rng(seed), dtype=np.float64)
    meta = nn.TrainingMeta(
        epochs_run=0, best_epoch=-1, best_val_loss=float("inf"), seed=seed,
        dtype="float32",
    )
    return nn.TrainedModel(spec=spec, params=params.data.copy(), meta=meta)


@pytest.fixture(scope="session")
def tiny_ff_model():
    return untrained_model(arch="feedforward", codec="quat")


@pytest.fixture(scope="session")
def tiny_rnn_model():
    return untrained_model(arch="recurrent", codec="sixd", width=8)
