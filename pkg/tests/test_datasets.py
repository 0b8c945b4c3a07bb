import gzip
import struct

import numpy as np
import pytest

from l3net.datasets import (LabeledGraphSignalSet, NoiseSpec, add_gaussian_noise, add_missing_values,
                           add_permutation_noise, bump_profile, downsample, find_mnist_files, gen_updown,
                           images_to_set, interior_nodes, load_mnist_idx, mnist_sets, noisy_copy, psnr,
                           rotate_neighbors, updown_signals, write_idx)
from l3net.errors import IDXFormatError, InvalidGraphError, PreconditionError
from l3net.graph import build_grid, build_ring


def _reflect(x):
    n = x.shape[-1]
    return x[..., (-np.arange(n)) % n]


def test_bump_profile_radius_and_values():
    h = bump_profile(1.5)
    assert len(h) == 7
    assert h[0] == pytest.approx(1 / (1.5 * np.sqrt(2 * np.pi)))
    assert h[2] / h[0] == pytest.approx(np.exp(-4 / 4.5))


def test_single_bump_direction():
    c = np.zeros((2, 16), bool)
    c[:, 5] = True
    up, down = updown_signals(c, np.array([0, 1]), "ring")
    assert np.all(up[5:12] > 0) and np.all(up[:5] == 0) and np.all(up[12:] == 0)
    assert set(np.flatnonzero(down)) == {15, 0, 1, 2, 3, 4, 5}  # offsets -6..0 wrap past node 0
    chain = updown_signals(np.eye(8, dtype=bool)[[6]], np.array([0]), "chain")
    assert np.count_nonzero(chain) == 2


def test_mirror_law(rng):
    """Reflecting an up signal gives the down signal of the reflected centers."""
    C = rng.random((20, 64)) < 0.1
    up = updown_signals(C, np.zeros(20, int), "ring")
    down = updown_signals(_reflect(C), np.ones(20, int), "ring")
    assert np.allclose(_reflect(up), down, atol=0)


def test_gen_updown_determinism_balance_and_independence():
    a_tr, a_te = gen_updown(seed=0)
    b_tr, _ = gen_updown(seed=0)
    c_tr, _ = gen_updown(seed=1)
    assert np.array_equal(a_tr.signals, b_tr.signals) and np.array_equal(a_tr.labels, b_tr.labels)
    assert not np.array_equal(a_tr.signals, c_tr.signals)
    assert not np.array_equal(a_tr.signals, a_te.signals)
    assert a_tr.signals.shape == (5000, 64, 1)
    assert abs(np.mean(a_tr.labels) - 0.5) < 0.03
    assert a_tr.cache_key() != a_te.cache_key()
    with pytest.raises(InvalidGraphError):
        gen_updown("grid")
    with pytest.raises(ValueError):
        gen_updown(n=4)


def test_signal_set_roundtrip(tmp_path):
    tr, _ = gen_updown(n=16, n_train=10, n_test=2)
    path = tr.save(tmp_path / "s.npz")
    back = LabeledGraphSignalSet.load(path)
    assert back.graph == tr.graph and back.graph.kind == "ring"
    assert np.array_equal(back.signals, tr.signals) and back.provenance == tr.provenance
    with pytest.raises(ValueError):
        LabeledGraphSignalSet(tr.graph, tr.signals, tr.labels[:3])


def _idx_bytes(arr):
    arr = np.asarray(arr, np.uint8)
    return struct.pack(">I", 0x800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()


def test_idx_roundtrip_plain_and_gzip(tmp_path, rng):
    img = rng.integers(0, 256, (3, 28, 28), dtype=np.uint8)
    lab = np.array([1, 7, 9], np.uint8)
    write_idx(tmp_path / "train-images-idx3-ubyte.gz", img)
    write_idx(tmp_path / "train-labels-idx1-ubyte.gz", lab)
    assert (tmp_path / "train-images-idx3-ubyte.gz").read_bytes()[:2] == b"\x1f\x8b"
    X, y = load_mnist_idx(*find_mnist_files(tmp_path, "train"))
    assert np.allclose(X * 255, img) and y.tolist() == [1, 7, 9]
    (tmp_path / "plain").write_bytes(_idx_bytes(img))
    (tmp_path / "lab").write_bytes(_idx_bytes(lab))
    assert np.array_equal(load_mnist_idx(tmp_path / "plain", tmp_path / "lab")[0], X)


@pytest.mark.parametrize("mutate, msg", [
    (lambda b: b"\x00\x00\x08\x01" + b[4:], "magic"),
    (lambda b: b[:-5], "truncated"),
    (lambda b: b + b"\x00", "trailing"),
    (lambda b: b[:6], "header"),
])
def test_idx_errors(tmp_path, mutate, msg):
    good = _idx_bytes(np.zeros((2, 4, 4)))
    (tmp_path / "img").write_bytes(mutate(good))
    (tmp_path / "lab").write_bytes(_idx_bytes(np.zeros(2)))
    with pytest.raises(IDXFormatError, match=msg):
        load_mnist_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_count_mismatch(tmp_path):
    (tmp_path / "img").write_bytes(_idx_bytes(np.zeros((2, 4, 4))))
    (tmp_path / "lab").write_bytes(gzip.compress(_idx_bytes(np.zeros(3))))
    with pytest.raises(IDXFormatError, match="labels"):
        load_mnist_idx(tmp_path / "img", tmp_path / "lab")


def test_find_mnist_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        find_mnist_files(tmp_path)


def test_downsample_block_means():
    img = np.arange(16.0).reshape(1, 4, 4)
    assert downsample(img, 2)[0].tolist() == [[2.5, 4.5], [10.5, 12.5]]
    assert downsample(np.ones((2, 28, 28)), 4).shape == (2, 7, 7)
    with pytest.raises(ValueError):
        downsample(img, 3)


def test_mnist_sets_split(tmp_path, rng):
    for prefix, count in (("train", 12), ("t10k", 4)):
        write_idx(tmp_path / f"{prefix}-images-idx3-ubyte", rng.integers(0, 256, (count, 28, 28)))
        write_idx(tmp_path / f"{prefix}-labels-idx1-ubyte", rng.integers(0, 10, count))
    tr, va, te = mnist_sets(tmp_path, 4, validation=5)
    assert (len(tr), len(va), len(te)) == (7, 5, 4)
    assert tr.graph.n == 49 and tr.graph.grid_shape == (7, 7) and va.split == "validation"


def _grid_set(rng, B=50, side=7):
    return images_to_set(rng.random((B, side, side)), rng.integers(0, 10, B), "train", {"generator": "t"})


def test_gaussian_noise_statistics_and_batching(rng):
    data = _grid_set(rng, 400)
    noisy, p = add_gaussian_noise(data, 0.1, seed=3)
    resid = noisy.signals - data.signals
    assert resid.std() == pytest.approx(0.1, rel=0.03) and abs(resid.mean()) < 0.005
    first, _ = add_gaussian_noise(data.subset(slice(0, 150)), 0.1, seed=3)
    rest, _ = add_gaussian_noise(data.subset(slice(150, None)), 0.1, seed=3, start=150)
    assert np.array_equal(np.concatenate([first.signals, rest.signals]), noisy.signals)
    assert noisy.provenance["noise"]["std"] == 0.1


def test_psnr_oracle(rng):
    """PSNR of unclipped N(0, s^2) noise is 20 log10(1/s) plus a small per-sample averaging bias."""
    data = _grid_set(rng, 2000)
    for std, expect in ((0.1, 20.094), (0.2, 14.074), (0.3, 10.552)):
        _, p = add_gaussian_noise(data, std, seed=0)
        assert p == pytest.approx(expect, abs=0.05)
    assert psnr(np.zeros((1, 4)), np.full((1, 4), 0.5)) == pytest.approx(20 * np.log10(2))
    assert psnr(np.zeros((1, 4)), np.zeros((1, 4))) == np.inf


@pytest.mark.xfail(strict=True, reason="published PSNR for std 0.1 is not reachable with unit-range pixels; "
                                       "see the acceptance notes in the README")
def test_psnr_published_value(rng):
    _, p = add_gaussian_noise(_grid_set(rng, 2000), 0.1, seed=0)
    assert p == pytest.approx(24.9, abs=1.5)


def test_missing_values_rate(rng):
    data = _grid_set(rng, 300)
    data = data.with_signals(data.signals + 1.0)
    out = add_missing_values(data, 0.3, seed=1)
    assert np.mean(out.signals == 0) == pytest.approx(0.3, abs=0.02)
    kept = out.signals != 0
    assert np.array_equal(out.signals[kept], data.signals[kept])
    with pytest.raises(ValueError):
        add_missing_values(data, 1.0, 0)


def test_rotate_neighbors_cycle():
    g = build_grid(3, 3)
    x = np.arange(9.0)
    y = rotate_neighbors(x, g, 4)
    assert (y[5], y[7], y[3], y[1]) == (x[1], x[5], x[7], x[3])
    assert np.array_equal(rotate_neighbors(rotate_neighbors(rotate_neighbors(y, g, 4), g, 4), g, 4), x)


def test_permutation_noise(rng):
    data = _grid_set(rng, 30)
    out = add_permutation_noise(data, seed=2)
    for a, b in zip(data.signals, out.signals):
        assert np.allclose(np.sort(a.ravel()), np.sort(b.ravel()))
        assert np.count_nonzero(a != b) <= 4
    assert interior_nodes(build_grid(3, 3)).tolist() == [4]
    with pytest.raises(PreconditionError):
        interior_nodes(build_grid(2, 5))
    with pytest.raises(PreconditionError):
        interior_nodes(build_ring(8))


def test_noise_spec_validation_and_split_independence(rng):
    for bad in (dict(kind="gaussian"), dict(kind="missing", noise_level=0.0), dict(kind="salt")):
        with pytest.raises(ValueError):
            NoiseSpec(**bad)
    data = _grid_set(rng, 10)
    spec = NoiseSpec("gaussian", std=0.2, seed=5)
    a, b = noisy_copy(data, spec, 0), noisy_copy(data, spec, 1)
    assert not np.array_equal(a.signals, b.signals)
    assert np.array_equal(a.signals, noisy_copy(data, spec, 0).signals)
    assert noisy_copy(data, None, 0) is data
