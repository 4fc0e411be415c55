import numpy as np
import pytest

import neuralmrf as nm


@pytest.fixture(scope="module")
def net():
    nm.set_log_level("quiet")
    return nm.make_test_network(42)


def textured(h, w, seed):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w].astype(np.float32)
    base = 127.5 + 60 * np.sin(x / 3.0 + seed) * np.cos(y / 4.0)
    img = np.stack([base, np.roll(base, 5, axis=1), base.T[:h, :w] if h == w else base[::-1]])
    return np.clip(img + rng.normal(0, 10, img.shape), 0, 255).astype(np.float32)


def test_forward_shapes(net):
    acts = nm.forward(net, textured(32, 32, 1), ["input", "relu2_1", "relu3_1"])
    assert acts["input"].shape == (3, 32, 32)
    assert acts["relu2_1"].shape == (net.channels_at("relu2_1"), 16, 16)
    assert acts["relu3_1"].shape == (net.channels_at("relu3_1"), 8, 8)
    assert (acts["relu3_1"] >= 0).all()


def test_weights_round_trip(net, tmp_path):
    path = tmp_path / "w.nmrf"
    nm.save_weights(net, path)
    back = nm.load_weights(path)
    img = textured(16, 16, 2)
    np.testing.assert_array_equal(
        nm.forward(net, img, ["relu2_1"])["relu2_1"], nm.forward(back, img, ["relu2_1"])["relu2_1"]
    )
    path.write_bytes(b"NMRFxxxx")
    with pytest.raises(nm.LoadError):
        nm.load_weights(path)


def test_match_against_numpy():
    rng = np.random.default_rng(3)
    query = rng.random((40, 4 * 9), dtype=np.float32)
    style = rng.random((70, 4 * 9), dtype=np.float32)
    idx, ncc = nm.match_patches(query, style, 3, 4)
    scores = (query @ style.T) / np.linalg.norm(style, axis=1)
    np.testing.assert_array_equal(idx, scores.argmax(axis=1))
    expected = scores.max(axis=1) / np.linalg.norm(query, axis=1)
    np.testing.assert_allclose(ncc, expected, rtol=1e-5)


def test_extract_patches_scan_order():
    feat = np.arange(2 * 5 * 4, dtype=np.float32).reshape(2, 5, 4)
    patches, norms, origins = nm.extract_patches(feat, 3, 1)
    assert patches.shape == (6, 18)
    assert origins[0] == (0, 0) and origins[-1] == (2, 1)
    np.testing.assert_array_equal(patches[0], feat[:, 0:3, 0:3].ravel())
    np.testing.assert_allclose(norms, np.linalg.norm(patches, axis=1), rtol=1e-6)


def test_pyramid_defaults():
    assert nm.pyramid_schedule(96, 96) == [(48, 48, 200), (96, 96, 200)]
    assert nm.pyramid_schedule(384, 384)[0][:2] == (48, 48)
    with pytest.raises(nm.ConfigError):
        nm.pyramid_schedule(0, 4)


def test_transfer_deterministic(net):
    cfg = nm.EnergyConfig()
    cfg.mrf_layers = ["relu2_1", "relu3_1"]
    cfg.scales = [1.0]
    style, content = textured(36, 36, 4), textured(40, 32, 5)
    a, trace = nm.transfer(net, style, content, cfg, seed=7, iterations_per_level=4, min_size=100)
    b, _ = nm.transfer(net, style, content, cfg, seed=7, iterations_per_level=4, min_size=100)
    assert a.shape == (3, 40, 32) and a.dtype == np.float32
    np.testing.assert_array_equal(a, b)
    totals = [r["total"] for r in trace]
    assert totals == sorted(totals, reverse=True)
    assert 0 <= a.min() and a.max() <= 255


def test_transfer_requires_content(net):
    with pytest.raises(nm.ConfigError):
        nm.transfer(net, textured(32, 32, 6))


def test_invert_reduces_error(net):
    img, initial, final = nm.invert(net, textured(24, 24, 8), ["relu2_1"], iterations=30)
    assert img.shape == (3, 24, 24)
    assert final < 0.5 * initial


def test_match_report_self(net):
    img = textured(40, 40, 9)
    rows = nm.match_report(net, img, img, [(12, 20), (39, 39)], ["relu3_1"])
    assert rows[0][:5] == ("relu3_1", 12, 20, 12, 20)
    assert rows[1][3:5] == (28, 28)
    assert all(r[5] >= 0.9999 for r in rows)
    with pytest.raises(nm.InputError):
        nm.match_report(net, img, img, [(40, 0)])


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(10).integers(0, 256, (3, 9, 7)).astype(np.float32)
    nm.write_png(img, tmp_path / "x.png")
    np.testing.assert_array_equal(nm.read_image(tmp_path / "x.png"), img)
    with pytest.raises(nm.InputError):
        nm.read_image(tmp_path / "missing.png")
