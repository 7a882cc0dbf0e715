import numpy as np
import pytest
from hypothesis import given, strategies as st

from scmunmix.core import ScmError
from scmunmix.synth import (
    SynthSpec,
    bundled_spectra_path,
    gaussian_kernel,
    generate_abundances,
    interior_mask,
    load_spectra_library,
    make_scene,
    region_labels,
    render_cube,
    write_spectra_library,
)

SPECTRA, NAMES = load_spectra_library(bundled_spectra_path())


def test_bundled_library_shape():
    assert SPECTRA.shape == (4, 200)
    assert len(NAMES) == 4 and all("standin" in n for n in NAMES)
    assert SPECTRA.min() >= 0 and SPECTRA.max() <= 1


def test_no_blur_is_one_hot():
    a, labels = generate_abundances(SynthSpec(SPECTRA, 40, 40, 0.0, None))
    assert np.array_equal(a.values, np.eye(4)[labels])


@given(st.floats(0.3, 4.0), st.integers(0, 3))
def test_blurred_rows_sum_to_one(sigma, k):
    a, _ = generate_abundances(SynthSpec(SPECTRA[: k + 2], 30, 30, sigma, None))
    assert np.abs(a.values.sum(axis=1) - 1).max() <= 1e-12


def test_interior_stays_pure():
    sigma = 2.0
    a, labels = generate_abundances(SynthSpec(SPECTRA, 40, 40, sigma, None))
    # beyond the kernel radius the blur only sees one region
    mask = interior_mask(labels, 40, 40, np.ceil(3 * sigma))
    assert mask.sum() > 0
    dominant = a.values[mask, labels[mask]]
    assert np.abs(dominant - 1).max() <= 1e-6
    k = gaussian_kernel(sigma)
    assert k.sum() == pytest.approx(1.0, abs=1e-15) and k.size == 13


def test_quadrant_layout():
    lab = region_labels(4, 6, 4).reshape(4, 6)
    assert np.array_equal(lab[:2, :3], np.zeros((2, 3)))
    assert np.array_equal(lab[:2, 3:], np.ones((2, 3)))
    assert np.array_equal(lab[2:, :3], np.full((2, 3), 2))
    assert np.array_equal(lab[2:, 3:], np.full((2, 3), 3))
    strips = region_labels(3, 9, 3).reshape(3, 9)
    assert np.array_equal(strips[0], [0, 0, 0, 1, 1, 1, 2, 2, 2])


def test_kernel_too_large():
    with pytest.raises(ScmError):
        generate_abundances(SynthSpec(SPECTRA, 8, 8, 3.0, None))


def test_noise_free_cube_is_exact():
    sc = make_scene(SynthSpec(SPECTRA, 20, 20, 1.0, None))
    assert sc.sigma_y == 0
    assert np.array_equal(sc.cube.data, sc.abundances.values @ SPECTRA)


def test_unique_rows_are_library_spectra():
    sc = make_scene(SynthSpec(SPECTRA, 20, 20, 0.0, None))
    assert np.array_equal(np.unique(sc.cube.data, axis=0), np.unique(SPECTRA, axis=0))


def test_twenty_db_at_rms_point_one():
    scaled = SPECTRA * (0.1 / np.sqrt(np.mean(SPECTRA**2)))
    sc = make_scene(SynthSpec(scaled, 40, 40, 0.0, 20.0, 0))
    assert sc.sigma_y == pytest.approx(0.01, rel=0.1)


@pytest.mark.parametrize("snr", [20.0, 40.0, 60.0])
def test_empirical_noise_std(snr):
    sc = make_scene(SynthSpec(SPECTRA, 40, 40, 2.0, snr, 7))
    noise = sc.cube.data - sc.abundances.values @ SPECTRA
    assert noise.std() == pytest.approx(sc.sigma_y, rel=0.02)
    clean_rms = np.sqrt(np.mean((sc.abundances.values @ SPECTRA) ** 2))
    assert sc.sigma_y == pytest.approx(clean_rms * 10 ** (-snr / 20), rel=1e-14)


def test_seed_fixes_cube():
    a = make_scene(SynthSpec(SPECTRA, 16, 16, 1.0, 30.0, 11)).cube.data
    b = make_scene(SynthSpec(SPECTRA, 16, 16, 1.0, 30.0, 11)).cube.data
    c = make_scene(SynthSpec(SPECTRA, 16, 16, 1.0, 30.0, 12)).cube.data
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_render_cube_shape_check():
    with pytest.raises(ScmError):
        render_cube(np.ones((4, 2)) / 2, SPECTRA, 20.0, 0, 2, 2)


def test_spec_validation():
    with pytest.raises(ScmError):
        SynthSpec(SPECTRA, snr_db=-5)
    with pytest.raises(ScmError):
        SynthSpec(SPECTRA, snr_db=121)
    with pytest.raises(ScmError):
        SynthSpec(SPECTRA, blur_sigma=-1)
    with pytest.raises(ScmError):
        SynthSpec(SPECTRA, height=0)


def test_library_small_csv(tmp_path):
    p = tmp_path / "lib.csv"
    p.write_text("a,b\n0.1,0.2\n0.3,0.4\n0.5,0.6\n")
    m, names = load_spectra_library(p)
    assert m.shape == (2, 3) and names == ["a", "b"]
    assert np.array_equal(m, [[0.1, 0.3, 0.5], [0.2, 0.4, 0.6]])


def test_library_missing_column_names_row(tmp_path):
    p = tmp_path / "lib.csv"
    p.write_text("a,b\n0.1,0.2\n0.3\n")
    with pytest.raises(ScmError, match="line 3"):
        load_spectra_library(p)


def test_library_out_of_range(tmp_path):
    p = tmp_path / "lib.csv"
    p.write_text("a\n1.5\n")
    with pytest.raises(ScmError, match="outside"):
        load_spectra_library(p)


def test_library_round_trip(tmp_path):
    p = tmp_path / "lib.csv"
    write_spectra_library(p, SPECTRA, NAMES)
    m, names = load_spectra_library(p)
    assert names == NAMES and np.array_equal(m, SPECTRA)


def test_interior_mask_margin():
    lab = region_labels(10, 10, 4)
    # a pixel next to another region is at distance 1
    assert interior_mask(lab, 10, 10, 0.5).all()
    assert interior_mask(lab, 10, 10, 1.0).sum() == 4 * (5 * 5 - 5 - 4)
    assert interior_mask(np.zeros(9, int), 3, 3, 10).all()
