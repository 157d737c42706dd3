import numpy as np
import pytest

from irgnm4pi import plotting


def test_pgm_round_trip_and_sidecar(tmp_path):
    img = np.linspace(-1.0, 3.0, 12).reshape(3, 4)
    pgm, side = plotting.write_pgm(tmp_path / "img", img)
    pix = plotting.read_pgm(pgm)
    assert pix.shape == (3, 4)
    assert pix[0, 0] == 0 and pix[-1, -1] == 255
    assert np.array_equal(pix, np.round((img + 1.0) / 4.0 * 255).astype(np.uint8))
    text = side.read_text().splitlines()
    assert text[0] == "min\t-1.0" and text[1] == "max\t3.0"


def test_pgm_fixed_range_clips_and_constant_images(tmp_path):
    pgm, _ = plotting.write_pgm(tmp_path / "c", np.full((2, 2), 5.0))
    assert np.all(plotting.read_pgm(pgm) == 0)
    pgm, _ = plotting.write_pgm(tmp_path / "k", np.array([[-5.0, 0.5, 5.0]]), vmin=0.0, vmax=1.0)
    assert list(plotting.read_pgm(pgm)[0]) == [0, 128, 255]
    with pytest.raises(ValueError):
        plotting.write_pgm(tmp_path / "x", np.ones(3))


def test_dotted_stems_keep_their_name(tmp_path):
    pgm, side = plotting.write_pgm(tmp_path / "phi1.5708", np.eye(2))
    assert pgm.name == "phi1.5708.pgm" and side.name == "phi1.5708.colorbar.txt"


def test_to_slice():
    a = np.arange(24.0).reshape(2, 3, 4)
    assert np.array_equal(plotting.to_slice(a), a[:, 1, :])
    assert plotting.to_slice(np.ones(5)).shape == (1, 5)
    with pytest.raises(ValueError):
        plotting.to_slice(np.ones((1, 1, 1, 1)))


def test_figures_are_written_deterministically(tmp_path):
    img = np.outer(np.arange(8.0), np.ones(6))
    a = plotting.save_image(tmp_path / "a", img, (50.0, 50.0), "title", scale_bar_nm=100)
    b = plotting.save_image(tmp_path / "b", img, (50.0, 50.0), "title", scale_bar_nm=100)
    assert a.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert a.read_bytes() == b.read_bytes()
    t = plotting.plot_trace(tmp_path / "t", {"residual": [1.0, 0.5, 0.25], "err": [np.nan, 0.0, 1.0]})
    r = plotting.plot_rate(tmp_path / "r", [1, 2, 4], [1, 1.4, 2], 0.5, 0.0, "x", "y")
    p = plotting.plot_psf_panel(tmp_path / "p", [img, -img], ["a", "b"], (50.0, 50.0), 100)
    assert all(f.exists() and f.suffix == ".png" for f in (t, r, p))
