import csv
import io
import os
import subprocess
import sys

import numpy as np
import pytest

from scmunmix import fileio
from scmunmix.cli import main
from scmunmix.core import ScmConfig
from scmunmix.metrics import aligned_errors

SMALL = ["--size", "16x16", "--blur", "1.0"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.reader(io.StringIO(text)))


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert main(["synth", *SMALL, "--snr", "40", "--seed", "3", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def unmixed(scene, tmp_path_factory):
    d = tmp_path_factory.mktemp("est")
    assert main(["unmix", str(scene / "cube.scmc"), "--out", str(d)]) == 0
    return d


def test_synth_files_and_header(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--size", "40x40", "--snr", "20", "--seed", "1",
                       "--out", tmp_path)
    assert code == 0 and out.strip() == str(tmp_path / "cube.scmc")
    for name in ("cube.scmc", "truth_abundances.csv", "truth_endmembers.csv", "metadata.txt"):
        assert (tmp_path / name).exists()
    cube = fileio.read_cube(tmp_path / "cube.scmc")
    assert cube.n_pixels == 1600 and cube.bands == 200
    meta = fileio.read_kv(tmp_path / "metadata.txt")
    assert meta["layout"] == "quadrants" and meta["seed"] == "1"
    assert float(meta["sigma_y"]) > 0 and meta["blur_sigma"] == "2"


def test_synth_is_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        run(capsys, "synth", *SMALL, "--snr", "30", "--seed", "9", "--out", tmp_path / d)
    for name in ("cube.scmc", "truth_abundances.csv", "metadata.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_negative_snr_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--snr", "-5", "--out", str(tmp_path)])
    assert exc.value.code == 2
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1 and err.startswith("scmunmix: error:")


def test_unmix_outputs(unmixed):
    a = fileio.read_abundances(unmixed / "abundances.csv")
    assert a.shape == (256, 4)
    assert np.abs(a.sum(axis=1) - 1).max() <= 1e-6
    r, _ = fileio.read_endmembers(unmixed / "endmembers.csv")
    covs, noise = fileio.read_covariances(unmixed)
    assert r.shape == (4, 200) and len(covs) == 4 and noise > 0
    header, rows = fileio.read_csv(unmixed / "uncertainty.csv")
    assert header == ["endmember", "band", "mean", "lower", "upper"] and len(rows) == 800
    assert fileio.read_csv(unmixed / "energy_trace.csv")[0] == ["phase", "iteration", "energy"]
    cfg = fileio.read_config(unmixed / "run_config.txt")
    assert cfg == ScmConfig.preset("scm")
    assert "ratio_quad" in fileio.read_kv(unmixed / "diagnostics.txt")


def test_preset_and_config_layering(scene, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("max_outer_iters = 3\nmax_inner_iters = 1\n")
    code, _, _ = run(capsys, "unmix", scene / "cube.scmc", "--preset", "ncm", "--config", cfg,
                     "--seed", "5", "--clamp-r", "--out", tmp_path / "o")
    assert code == 0
    got = fileio.read_config(tmp_path / "o" / "run_config.txt")
    assert got == ScmConfig.preset("ncm", max_outer_iters=3, max_inner_iters=1, rng_seed=5,
                                   clamp_r=True)
    assert got.beta1_prime == got.beta2_prime == got.rho2_prime == 0.0
    assert fileio.read_endmembers(tmp_path / "o" / "endmembers.csv")[0].min() >= 0


def test_eval_zero_and_permuted(scene, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", scene, scene)
    assert code == 0
    header, row = rows_of(out)
    assert header == ["permutation", "endmember_error", "abundance_error"]
    assert row == ["0 1 2 3", "0", "0"]
    r, names = fileio.read_endmembers(scene / "truth_endmembers.csv")
    a = fileio.read_abundances(scene / "truth_abundances.csv")
    order = [2, 3, 0, 1]
    fileio.write_endmembers(tmp_path / "endmembers.csv", r[order])
    fileio.write_abundances(tmp_path / "abundances.csv", a[:, order])
    code, out, _ = run(capsys, "eval", tmp_path, scene)
    assert rows_of(out)[1] == ["2 3 0 1", "0", "0"]


def test_eval_matches_library(scene, unmixed, tmp_path, capsys):
    code, _, _ = run(capsys, "eval", unmixed, scene, "--out", tmp_path / "e.csv")
    assert code == 0
    _, (row,) = fileio.read_csv(tmp_path / "e.csv")
    r, _ = fileio.read_endmembers(unmixed / "endmembers.csv")
    a = fileio.read_abundances(unmixed / "abundances.csv")
    t, _ = fileio.read_endmembers(scene / "truth_endmembers.csv")
    ta = fileio.read_abundances(scene / "truth_abundances.csv")
    ref = aligned_errors(r, a, t, ta)
    assert row[0] == " ".join(map(str, ref.permutation))
    assert float(row[1]) == pytest.approx(ref.endmember_error, rel=1e-8)
    assert float(row[2]) == pytest.approx(ref.abundance_error, rel=1e-8)


BENCH = ["bench", *SMALL, "--snr", "20,30,40,50,60", "--trials", "1", "--algs", "scm,ncm",
         "--seed", "4"]


@pytest.fixture(scope="module")
def bench_small(tmp_path_factory):
    d = tmp_path_factory.mktemp("bench")
    cfg = d / "fast.cfg"
    cfg.write_text("max_outer_iters = 20\n")
    out = d / "bench.csv"
    assert main([*BENCH, "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def test_bench_rows(bench_small):
    _, out = bench_small
    header, rows = fileio.read_csv(out)
    assert header[:3] == ["snr_db", "algorithm", "trials"]
    assert len(rows) == 10
    assert [(r[0], r[1]) for r in rows] == [
        (s, a) for s in ("20", "30", "40", "50", "60") for a in ("scm", "ncm")]
    assert all(r[5] == "0" and r[6] == "0" for r in rows)


def test_bench_reproducible(bench_small, tmp_path, monkeypatch, capsys):
    cfg, out = bench_small
    code, text, _ = run(capsys, *BENCH, "--config", cfg)
    assert code == 0 and text == out.read_text()
    # the process-pool path must give the same table
    monkeypatch.setattr(os, "cpu_count", lambda: 2)
    monkeypatch.setenv("SCM_THREADS", "2")
    code, text, _ = run(capsys, *BENCH, "--config", cfg)
    assert code == 0 and text == out.read_text()


def test_sweep_rows_and_consistency(scene, tmp_path, capsys):
    code, out, _ = run(capsys, "sweep-rho1", scene / "cube.scmc", "--rho1", "0.01,1")
    assert code == 0
    header, *rows = rows_of(out)
    names = fileio.read_endmembers(scene / "truth_endmembers.csv")[1]
    assert header == ["rho1_prime"] + [f"amount_{n}" for n in names] + [
        "amount_mean", "endmember_error"]
    assert [r[0] for r in rows] == ["0.01", "1"]

    code, out, _ = run(capsys, "sweep-rho1", scene / "cube.scmc", "--rho1", "0.01")
    (single,) = rows_of(out)[1:]
    assert single == rows[0]

    cfg = tmp_path / "rho.cfg"
    cfg.write_text("rho1_prime = 0.01\n")
    run(capsys, "unmix", scene / "cube.scmc", "--config", cfg, "--out", tmp_path / "u")
    _, amounts = fileio.read_csv(tmp_path / "u" / "uncertainty_amount.csv")
    _, out, _ = run(capsys, "eval", tmp_path / "u", scene)
    perm = [int(p) for p in rows_of(out)[1][0].split()]
    by_truth = np.empty(4)
    by_truth[perm] = [float(a[1]) for a in amounts]
    assert np.allclose([float(v) for v in single[1:5]], by_truth, rtol=1e-8)
    assert float(single[-1]) == pytest.approx(float(rows_of(out)[1][1]), rel=1e-8)


@pytest.mark.parametrize("argv, needle", [
    (["bench", "--algs", "scm,vca"], "unknown algorithm"),
    (["unmix", "missing.scmc", "--out", "x"], "missing.scmc"),
    (["synth", "--size", "4by4"], "HxW"),
])
def test_errors_are_single_line(tmp_path, capsys, monkeypatch, argv, needle):
    monkeypatch.chdir(tmp_path)
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    err = capsys.readouterr().err.strip()
    assert code != 0
    assert len(err.splitlines()) == 1 and err.startswith("scmunmix: error:") and needle in err


def test_bad_config_line_reported(scene, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("eta = 0.05\nbogus = 1\n")
    code, _, err = run(capsys, "unmix", scene / "cube.scmc", "--config", cfg, "--out", tmp_path)
    assert code == 1 and "line 2: unknown key 'bogus'" in err


def test_invalid_thread_cap(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SCM_THREADS", "zero")
    code, _, err = run(capsys, *BENCH[:-2], "--out", tmp_path / "b.csv")
    assert code == 1 and "SCM_THREADS" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "scmunmix.cli", "synth", "--snr", "200",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.count("\n") == 1 and "outside" in proc.stderr
