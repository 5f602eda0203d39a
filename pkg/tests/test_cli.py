import numpy as np
import pytest

import toys

from s2hsi.cli import main, read_echo
from s2hsi.cube import HsiCube, read_cube, write_cube
from s2hsi.discriminator import init_params, read_params
from s2hsi.prior import estimate_spectral_prior, read_prior

SIZE = 24


_run = toys.run_cli
_files = toys.output_files


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    return (root, *toys.run_cli_pipeline(root, SIZE))


def test_simulate_outputs(pipeline):
    root, m, _ = pipeline
    sim = root / "sim"
    assert [len(m.split(t)) for t in ("train", "test", "val")] == [1, 1, 1]
    for _, _, sid in m.entries:
        assert read_cube(sim / f"{sid}_A.hsc").shape == (186, SIZE, SIZE)
        assert read_cube(sim / f"{sid}_S.hsc").shape == (12, SIZE // 2, SIZE // 2)
        assert read_cube(sim / f"{sid}_Su_true.hsc").shape == (12, SIZE, SIZE)
    assert (sim / "srf.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    echo = read_echo(sim / "config_echo.txt")
    assert echo["command"] == "simulate" and echo["seed"] == 4


def test_prior_matches_oracle(pipeline):
    root, m, _ = pipeline
    P = read_prior(root / "prior" / "prior.spm")
    train = [read_cube(p) for p, _, _ in m.split("train")]
    np.testing.assert_array_equal(P.values, estimate_spectral_prior(train, train[0].pixels).values)


def test_reconstruct_dimensions(pipeline):
    root, _, sid = pipeline
    rec = read_cube(root / "rec" / f"{sid}_rec.hsc")
    assert rec.shape == (186, SIZE, SIZE)
    assert rec.data.min() >= 0
    lines = (root / "rec" / f"{sid}_trace.csv").read_text().splitlines()
    assert len(lines) == 1 + 4
    echo = (root / "rec" / "config_echo.txt").read_text()
    assert "info.solver.lambda2 = 0.5" in echo


def test_train_disc_zero_steps_is_initialization(pipeline, tmp_path):
    root, m, _ = pipeline
    assert _run("train-disc", "--manifest", root / "sim" / "manifest.tsv", "--out", tmp_path, "--steps", 0, "--seed", 5) == 0
    params = read_params(tmp_path / "disc.dsc")
    for a, b in zip(params.arrays(), init_params(186, 32, seed=5).arrays()):
        np.testing.assert_array_equal(a, b)


def test_eval_identical_and_composite(pipeline, tmp_path):
    root, _, sid = pipeline
    ref = root / "sim" / f"{sid}_A.hsc"
    assert _run("eval", "--ref", ref, ref, "--est", ref, root / "rec" / f"{sid}_rec.hsc",
                "--ids", "same", "rec", "--composite", "25,12,8", "--out", tmp_path) == 0
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[1].split(",")[:2] == ["same", "inf"]
    fields = lines[1].split(",")
    assert float(fields[2]) == 0.0 and float(fields[3]) == 1.0 and float(fields[4]) == 0.0
    assert lines[2].startswith("rec,")
    assert (tmp_path / "same_ref_rgb.ppm").read_bytes().startswith(b"P6\n24 24\n255\n")
    assert (tmp_path / "metrics_bands.png").exists()


def test_eval_from_manifest(pipeline, tmp_path):
    root, _, sid = pipeline
    assert _run("eval", "--manifest", root / "sim" / "manifest.tsv", "--est-dir", root / "rec", "--out", tmp_path) == 0
    assert (tmp_path / "metrics.csv").read_text().splitlines()[1].startswith(f"{sid},")


def test_mdl_prints_order(tmp_path, capsys):
    rng = np.random.default_rng(0)
    data = np.outer(0.2 + rng.random(8), 0.5 + rng.random(400)) + 1e-3 * rng.standard_normal((8, 400))
    write_cube(HsiCube(data.reshape(8, 20, 20)), tmp_path / "r1.hsc")
    assert _run("mdl", tmp_path / "r1.hsc", "--max-k", 5, "--out", tmp_path / "o") == 0
    assert capsys.readouterr().out.strip() == "1"
    assert len((tmp_path / "o" / "r1_mdl.csv").read_text().splitlines()) == 1 + 5
    assert _run("mdl", tmp_path / "r1.hsc", "--max-k", 8, "--out", tmp_path / "o") == 2


def test_exit_codes(pipeline, tmp_path, capsys):
    root, _, sid = pipeline
    assert _run("simulate", tmp_path / "nope.hsc", "--out", tmp_path) == 2
    assert _run("simulate", root / "sim" / f"{sid}_A.hsc", "--bands", tmp_path / "missing.txt", "--out", tmp_path) == 2
    assert "usage:" in capsys.readouterr().err
    (tmp_path / "bad.hsc").write_bytes(b"XXXX" + bytes(20))
    assert _run("mdl", tmp_path / "bad.hsc", "--out", tmp_path) == 1
    ref = root / "sim" / f"{sid}_A.hsc"
    assert _run("eval", "--ref", ref, "--est", root / "sim" / f"{sid}_S.hsc", "--out", tmp_path) == 2
    assert _run("reconstruct", root / "sim" / f"{sid}_S.hsc", "--srf", root / "sim" / "srf.txt", "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as exc:
        main(["reconstruct"])
    assert exc.value.code == 2


def test_no_dmr_no_prior_runs_without_inputs(pipeline, tmp_path):
    root, _, sid = pipeline
    assert _run("reconstruct", root / "sim" / f"{sid}_S.hsc", "--srf", root / "sim" / "srf.txt",
                "--no-dmr", "--no-spectrum-prior", "--unfold-faithful", "--out", tmp_path) == 0
    lines = (tmp_path / f"{sid}_trace.csv").read_text().splitlines()
    # one fixed step per outer iteration: inner_step is only ever 0 or 1
    assert {line.split(",")[1] for line in lines[1:]} == {"0", "1"}
    assert all(line.split(",")[7] in ("0.0", "0.001") for line in lines[1:])


@pytest.mark.parametrize("sub", ["sim", "prior", "disc", "rec", "eval", "mdl"])
def test_rerun_from_echo_is_byte_identical(pipeline, tmp_path, sub):
    root, _, _ = pipeline
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        assert _run("rerun", root / sub / "config_echo.txt", "--out", out, "--workers", workers) == 0
        assert _files(out) == _files(root / sub)
