import numpy as np
import pytest

from evifuse.dataset import MissingnessSpec, MultiViewDataset, generate_missing_mask


def make_blobs_dataset(n=120, class_count=3, view_dims=(3, 2), noise=0.7,
                       eta=0.0, seed=0, mask_seed=None):
    """Small multi-view Gaussian-blob classification problem."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, class_count, n)
    views = []
    for d in view_dims:
        centers = rng.normal(0.0, 3.0, (class_count, d))
        views.append(centers[labels] + rng.normal(0.0, noise, (n, d)))
    if eta > 0:
        mask = generate_missing_mask(
            n, len(view_dims),
            MissingnessSpec(eta, seed=seed if mask_seed is None else mask_seed),
        )
    else:
        mask = np.ones((n, len(view_dims)), dtype=bool)
    return MultiViewDataset(views, labels, mask, class_count)


def write_dataset_dir(path, data: MultiViewDataset, include_mask=True):
    path.mkdir(parents=True, exist_ok=True)
    for v, mat in enumerate(data.views):
        np.savetxt(path / f"view_{v}.csv", mat, fmt="%.10g", delimiter=",")
    np.savetxt(path / "labels.csv", data.labels[:, None], fmt="%d", delimiter=",")
    if include_mask:
        np.savetxt(path / "mask.csv", data.mask.astype(int), fmt="%d", delimiter=",")
    return path


@pytest.fixture
def blobs():
    return make_blobs_dataset()


@pytest.fixture
def blobs_incomplete():
    return make_blobs_dataset(eta=0.3, mask_seed=7)
