import numpy as np
import pytest

from onenet.data import (class_palette, export_pnm_dataset, generate_toy_dataset, load_pnm_dataset,
                         read_image, read_mask, toy_sample, write_image, write_mask)
from onenet.errors import DataError


def test_toy_dataset_is_deterministic_per_seed():
    a = generate_toy_dataset(10, 32, 32, 3, seed=5, batch_size=4)
    b = generate_toy_dataset(10, 32, 32, 3, seed=5, batch_size=4)
    c = generate_toy_dataset(10, 32, 32, 3, seed=6, batch_size=4)
    assert [len(x) for x in a] == [4, 4, 2]
    assert all(x.images.data.tobytes() == y.images.data.tobytes() and np.array_equal(x.masks, y.masks)
               for x, y in zip(a, b))
    assert not np.array_equal(a[0].masks, c[0].masks)


def test_sample_depends_only_on_seed_and_index():
    a = generate_toy_dataset(6, 16, 16, 3, seed=2, batch_size=6)[0]
    b = generate_toy_dataset(3, 16, 16, 3, seed=2, batch_size=3)[0]
    assert np.array_equal(a.masks[:3], b.masks)


def test_toy_dataset_geometry_and_labels():
    batches = generate_toy_dataset(32, K=4, seed=1)
    masks = np.concatenate([b.masks for b in batches])
    images = np.concatenate([b.images.data for b in batches])
    assert images.shape == (32, 3, 64, 64) and masks.shape == (32, 32, 32)
    assert images.min() >= 0 and images.max() <= 1
    assert masks.min() >= 0 and masks.max() < 4
    assert (masks == 0).mean() > 0.5
    # every foreground class is present in most samples
    present = [(m == c).any() for m in masks for c in range(1, 4)]
    assert np.mean(present) > 0.9


def test_mask_labels_follow_block_centres():
    rng = np.random.default_rng(0)
    img, mask = toy_sample(16, 16, 2, rng)
    pal = class_palette(2)[1]
    # pixels of labelled blocks carry the class colour (up to jitter), the rest are grey
    blocks = img.reshape(3, 8, 2, 8, 2).mean(axis=(2, 4))
    dist = np.abs(blocks - pal[:, None, None]).sum(axis=0)
    assert dist[mask == 1].mean() < dist[mask == 0].mean()


def test_toy_errors():
    with pytest.raises(DataError):
        generate_toy_dataset(0)
    with pytest.raises(DataError):
        toy_sample(15, 16, 3, np.random.default_rng(0))
    with pytest.raises(DataError):
        toy_sample(16, 16, 1, np.random.default_rng(0))


def test_pnm_round_trip(tmp_path):
    batches = generate_toy_dataset(5, 16, 16, 3, seed=0, batch_size=2)
    export_pnm_dataset(tmp_path, batches)
    assert (tmp_path / "sample00000.ppm").read_bytes()[:2] == b"P6"
    assert (tmp_path / "sample00000.pgm").read_bytes()[:2] == b"P5"
    loaded = load_pnm_dataset(tmp_path, batch_size=2, num_classes=3)
    for a, b in zip(batches, loaded):
        assert np.array_equal(a.masks, b.masks)
        assert np.abs(a.images.data - b.images.data).max() <= 0.5 / 255 + 1e-6


def test_pnm_errors(tmp_path):
    write_image(tmp_path / "a.ppm", np.zeros((3, 8, 8)))
    with pytest.raises(DataError):
        load_pnm_dataset(tmp_path)  # no mask
    write_mask(tmp_path / "a.pgm", np.zeros((8, 8), dtype=np.int64))
    with pytest.raises(DataError):
        load_pnm_dataset(tmp_path)  # mask not half resolution
    write_mask(tmp_path / "a.pgm", np.full((4, 4), 5))
    with pytest.raises(DataError):
        load_pnm_dataset(tmp_path, num_classes=3)
    with pytest.raises(DataError):
        read_image(tmp_path / "a.pgm")
    with pytest.raises(DataError):
        read_mask(tmp_path / "a.ppm")
    with pytest.raises(DataError):
        read_image(tmp_path / "missing.ppm")
    with pytest.raises(DataError):
        write_mask(tmp_path / "b.pgm", np.full((2, 2), 300))
    with pytest.raises(DataError):
        load_pnm_dataset(tmp_path / "empty")
