"""Seeded toy fixtures shared by the unit and acceptance tests."""

import numpy as np

from s2hsi.discriminator import TrainOptions, disc_loss, init_params, mean_probability, train_discriminator
from s2hsi.synthetic import mixture_scene

# step size for the small toy; the library default targets full-size scenes
TOY_DISC_STEP = 1e-3


def disc_toy_data(bands=16, size=24, n=3):
    reals = [mixture_scene(bands, size, size, 4, seed=s)[0].data for s in range(n)]
    rng = np.random.default_rng(99)
    fakes = [rng.uniform(r.min(), r.max(), r.shape) for r in reals]
    return reals, fakes


def run_disc_toy(steps=200, seed=0):
    """Train on structured reals vs uniform-noise fakes.

    Returns (trained, trace, initial_loss, final_loss, separation).
    """
    reals, fakes = disc_toy_data()
    p0 = init_params(reals[0].shape[0], 32, seed=0)
    opts = TrainOptions(steps=steps, step_size=TOY_DISC_STEP, patch_size=12, batch_size=4, seed=seed)
    params, trace = train_discriminator(p0, reals, fakes, opts)
    initial = disc_loss(mean_probability(p0, reals), mean_probability(p0, fakes))
    p_r, p_f = mean_probability(params, reals), mean_probability(params, fakes)
    return params, trace, initial, disc_loss(p_r, p_f), p_r - p_f


def solver_toy(seed=0, bands=16, rows=6, cols=6, with_prior=True, with_disc=True):
    """Small random Problem with every term populated; returns (problem, A, T, U)."""
    from s2hsi.operators import build_gaussian_kernel
    from s2hsi.solver import Problem
    from s2hsi.synthetic import toy_srf

    rng = np.random.default_rng(seed)
    D = toy_srf(bands, n_rows=min(12, bands), width=2)
    L = rows * cols
    A = rng.random((bands, L))
    S_u = rng.random((D.shape[0], L))
    X = rng.random((bands, 2 * L))
    P = X @ X.T / 2 if with_prior else None
    disc = init_params(bands, 8, seed=seed) if with_disc else None
    problem = Problem(S_u, D, (rows, cols), build_gaussian_kernel(3, 0.7), P, disc)
    T = rng.random((bands, L))
    U = 0.1 * rng.standard_normal((bands, L))
    return problem, A, T, U


def smoothness_discriminator(bands, weight=4.0, bias=2.0):
    """Frozen net whose probability falls with the local Laplacian magnitude of each band.

    Layer 1 produces +/- the 3x3 Laplacian per band, the leaky pair sums to
    0.8 |lap|, and the output is ``sigmoid(bias - weight * 0.8 |lap|)``.
    """
    from s2hsi.discriminator import DiscriminatorParams

    lap = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
    p = DiscriminatorParams.zeros(bands, 2 * bands)
    for c in range(bands):
        p.w1[c, c] = lap
        p.w1[c + bands, c] = -lap
    for h in range(2 * bands):
        p.w2[h, h, 1, 1] = 1.0
    for c in range(bands):
        p.w3[c, c, 0, 0] = -weight
        p.w3[c, c + bands, 0, 0] = -weight
    p.b3[:] = bias
    return p


def e2e_toy(seed=1, bands=32, size=48):
    """Rank-4 scene through the full simulate path plus prior and discriminator inputs."""
    from s2hsi.prior import estimate_spectral_prior
    from s2hsi.simulate import simulate_sentinel2
    from s2hsi.synthetic import toy_srf

    A, E, _ = mixture_scene(bands, size, size, 4, seed=seed)
    D = toy_srf(bands)
    S, _ = simulate_sentinel2(A, D)
    train = [mixture_scene(bands, size, size, 4, seed=100 + i, endmembers=E)[0] for i in range(3)]
    P = estimate_spectral_prior(train, size * size)
    return A, S, D, P, init_params(bands, 32, seed=0)


def mdl_scene(seed, sources=4, bands=12, pixels=4096, snr_db=30.0):
    """Linear mixture with independent uniform abundances plus white noise at ``snr_db``.

    Abundances are not forced to sum to one, so the centered covariance keeps
    all ``sources`` signal directions.  SNR is mean signal power over noise
    variance.
    """
    from s2hsi.synthetic import smooth_endmembers

    rng = np.random.default_rng(seed)
    E = smooth_endmembers(bands, sources, rng)
    X = E @ rng.random((sources, pixels))
    noise_std = np.sqrt(np.mean(X**2) / 10 ** (snr_db / 10))
    return X + noise_std * rng.standard_normal(X.shape)


CLI_STAGES = ("sim", "prior", "disc", "rec", "eval", "mdl")


def run_cli(*argv):
    from s2hsi.cli import main

    return main([str(a) for a in argv])


def output_files(directory, skip=("config_echo.txt",)):
    """Name -> bytes for every output file; the echo itself records the output path and is skipped."""
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file() and p.name not in skip}


def run_cli_pipeline(root, size=24):
    """simulate -> build-prior -> train-disc -> reconstruct -> eval -> mdl on three 186-band scenes.

    Each stage writes into ``root/<stage>`` (see ``CLI_STAGES``).  Returns
    the manifest and the scene id of the test split.
    """
    from s2hsi.cube import HsiCube, read_manifest, write_cube
    from s2hsi.simulate import default_hsi_wavelengths

    raw = root / "raw"
    raw.mkdir(parents=True)
    wl = default_hsi_wavelengths()
    _, E, _ = mixture_scene(186, size, size, 4, seed=0)
    for i in range(3):
        cube, _, _ = mixture_scene(186, size, size, 4, seed=i, endmembers=E)
        write_cube(HsiCube(cube.data, wl), raw / f"scene{i}.hsc")
    sim = root / "sim"
    codes = [run_cli("simulate", *sorted(raw.glob("*.hsc")), "--out", sim, "--split", "1,1,1", "--seed", "4")]
    m = read_manifest(sim / "manifest.tsv")
    test_sid = m.split("test")[0][2]
    codes.append(run_cli("build-prior", "--manifest", sim / "manifest.tsv", "--out", root / "prior"))
    codes.append(run_cli(
        "train-disc", "--manifest", sim / "manifest.tsv", "--out", root / "disc",
        "--steps", 3, "--patch-size", 12, "--batch-size", 2,
    ))
    codes.append(run_cli(
        "reconstruct", *sorted(sim.glob("*_S.hsc")), "--srf", sim / "srf.txt", "--prior", root / "prior" / "prior.spm",
        "--disc", root / "disc" / "disc.dsc", "--out", root / "rec", "--outer-iters", 1, "--inner-steps", 3,
    ))
    codes.append(run_cli(
        "eval", "--manifest", sim / "manifest.tsv", "--split", "train", "--est-dir", root / "rec",
        "--composite", "25,12,8", "--out", root / "eval",
    ))
    codes.append(run_cli("mdl", sim / f"{test_sid}_A.hsc", "--out", root / "mdl"))
    if any(codes):
        raise RuntimeError(f"pipeline stage failed with exit codes {codes}")
    return m, test_sid
