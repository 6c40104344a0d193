import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def backgrounds():
    rng = np.random.default_rng(1234)
    # smooth random fields: cheap, deterministic stand-ins for photos
    out = []
    for _ in range(4):
        coarse = rng.random((9, 9, 3))
        ys = np.linspace(0, 8, 300)
        xs = np.linspace(0, 8, 260)
        img = np.stack(
            [
                np.array([np.interp(xs, np.arange(9), row) for row in coarse[..., c]]).T
                for c in range(3)
            ],
            axis=-1,
        )
        img = np.stack(
            [np.array([np.interp(ys, np.arange(9), col) for col in img[..., c]]).T for c in range(3)],
            axis=-1,
        )
        out.append(np.clip(img + rng.normal(0, 0.02, img.shape), 0, 1))
    return out
