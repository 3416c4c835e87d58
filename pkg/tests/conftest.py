import numpy as np
import pytest

from camlink.attention import Model, ModelConfig
from camlink.simulator import WorldConfig, generate, overlap_matrix
from camlink.training import TrainConfig, build_chunks, train


def toy_world(seed=0, frames=200, fragmentation=0.0):
    return WorldConfig(
        num_cameras=2,
        num_identities=3,
        frames=frames,
        feature_dim=8,
        identity_spread=1.0,
        camera_distortion=0.4,
        observation_noise=0.03,
        fragmentation_prob=fragmentation,
        dwell_min=8,
        dwell_max=16,
        overlap=overlap_matrix(2, [(0, 1)]),
        seed=seed,
    )


TOY_MODEL = dict(
    feature_dim=8, num_cameras=2, camera_dim=4,
    structural_heads=(2, 2), structural_head_dim=(4, 4),
    temporal_heads=(4, 4), temporal_head_dim=(2, 2),
    window=3, seed=3,
)


@pytest.fixture(scope="session")
def trained_toy_model():
    """One small model trained well enough for pipeline-level tests."""
    scenario = generate(toy_world(seed=42, frames=300, fragmentation=0.05))
    cfg = TrainConfig(window=3, chunk_size=3, batch_chunks=32, epochs=8,
                      walk_length=2, walks_per_node=4, lr=3e-3, seed=7,
                      chunk_stride=1, val_every=5, pad_multiple=8)
    chunks = build_chunks(scenario, cfg)
    result = train(chunks, cfg, Model(ModelConfig(**TOY_MODEL)))
    return result.model
