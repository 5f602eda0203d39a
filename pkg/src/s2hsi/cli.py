"""Command-line front end: ``s2hsi <command> ...``.

Commands
--------
simulate      AVIRIS-level cubes -> Sentinel-2 products, SRF and manifest
build-prior   pooled spectral prior matrix from a manifest split
train-disc    train the element-wise discriminator
reconstruct   quasi-Split-Bregman reconstruction of one or more products
eval          PSNR / SAM / SSIM / RMSE / L_G report, optional composites
mdl           MDL model-order selection on a cube
rerun         repeat a previous run from its config echo

Every command writes ``config_echo.txt`` (``key = json value`` lines) into
its output directory.  Exit status: 0 success, 1 data or internal error,
2 usage or precondition error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cube import DataError, HsiCube, read_cube, read_manifest, truecolor_composite, write_cube, write_manifest, write_ppm
from .cube import split_manifest
from .discriminator import TrainOptions, init_params, read_params, train_discriminator, write_loss_csv, write_params
from .metrics import evaluate, mdl_order, write_mdl_csv, write_metric_csv
from .operators import SIM_SIGMA_PER_FACTOR, SrfMatrix
from .prior import estimate_spectral_prior, read_prior, spatial_prior_image, write_prior
from .simulate import (
    aviris_ng_wavelengths,
    build_srf,
    default_hsi_wavelengths,
    load_band_specs,
    remove_water_bands,
    simulate_sentinel2,
    spectral_downsample2,
)
from .solver import SolverConfig, init_a, solve, write_trace_csv

log = logging.getLogger("s2hsi")

ECHO_NAME = "config_echo.txt"
# Keys never restored by ``rerun``.
_ECHO_SKIP = {"func", "from_echo"}


class UsageError(Exception):
    """Precondition failure that maps to exit status 2."""


# ---------------------------------------------------------------- helpers

def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path, what):
    if path is None or not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _map(func, jobs, workers):
    """Ordered map, optionally over a process pool."""
    if workers <= 1 or len(jobs) <= 1:
        return [func(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, *zip(*jobs)))


def write_echo(args, extra=None):
    """Record every effective option, plus informational ``info.*`` keys."""
    path = Path(args.config_echo) if args.config_echo else Path(args.out) / ECHO_NAME
    values = {k: v for k, v in vars(args).items() if k not in _ECHO_SKIP}
    lines = [f"version = {json.dumps(__version__)}"]
    for key in sorted(values):
        lines.append(f"{key} = {json.dumps(values[key])}")
    for key, val in sorted((extra or {}).items()):
        lines.append(f"info.{key} = {json.dumps(val)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_echo(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        key, sep, raw = line.partition(" = ")
        if not sep:
            raise DataError(f"{path}:{lineno}: malformed echo line")
        if key.startswith("info.") or key == "version":
            continue
        values[key] = json.loads(raw)
    if "command" not in values:
        raise DataError(f"{path}: no command recorded")
    return values


def _abs(p):
    return None if p is None else str(Path(p).resolve())


def _solver_config(args) -> SolverConfig:
    cfg = SolverConfig(
        lambda1=args.lambda1, lambda2=args.lambda2, mu=args.mu, gamma=args.gamma,
        outer_iters=args.outer_iters, inner_grad_steps=args.inner_steps, tol=args.tol,
        clamp_output=not args.no_clamp, use_backtracking=True,
    )
    if args.no_dmr:
        cfg.lambda1 = cfg.mu = 0.0
    if args.no_spectrum_prior:
        cfg.lambda2 = 0.0
    if args.unfold_faithful:
        cfg.inner_grad_steps = 1
        cfg.use_backtracking = False
    return cfg


def _hsi_wavelengths(cube: HsiCube):
    if cube.wavelengths is not None:
        return cube.wavelengths
    if cube.bands == 186:
        return default_hsi_wavelengths()
    if cube.bands == 425:
        return aviris_ng_wavelengths()
    raise UsageError(f"cube with {cube.bands} bands carries no wavelengths; cannot build an SRF")


# ---------------------------------------------------------------- simulate

def _prepare_reference(path, raw_aviris):
    cube = read_cube(path)
    if raw_aviris:
        if cube.wavelengths is None:
            cube = HsiCube(cube.data, aviris_ng_wavelengths())
        cube = spectral_downsample2(remove_water_bands(cube))
    elif cube.wavelengths is None and cube.bands == 186:
        cube = HsiCube(cube.data, default_hsi_wavelengths())
    return cube


def _simulate_one(path, sid, out, raw_aviris, D, specs):
    A = _prepare_reference(path, raw_aviris)
    if D.shape[1] != A.bands:
        raise UsageError(f"{path}: {A.bands} bands, SRF expects {D.shape[1]}")
    product, su_true = simulate_sentinel2(A, D, specs)
    out = Path(out)
    write_cube(A, out / f"{sid}_A.hsc")
    write_cube(product.cube, out / f"{sid}_S.hsc")
    write_cube(su_true, out / f"{sid}_Su_true.hsc")
    log.info("simulated %s: %s -> %s", sid, A.shape, product.cube.shape)
    return sid


def cmd_simulate(args) -> int:
    specs = load_band_specs(_require_file(args.bands, "band-spec table") if args.bands else None)
    paths = [_require_file(p, "input cube") for p in args.cubes]
    sids = [p.stem for p in paths]
    if len(set(sids)) != len(sids):
        raise UsageError("input cubes must have distinct file stems")
    out = _out_dir(args)
    first = _prepare_reference(paths[0], args.raw_aviris)
    D = build_srf(_hsi_wavelengths(first), specs)
    D.save(out / "srf.txt")
    sizes = args.split if args.split else [len(paths), 0, 0]
    if len(sizes) != 3:
        raise UsageError("--split takes three counts: train,test,val")
    jobs = [(str(p), sid, str(out), args.raw_aviris, D, specs) for p, sid in zip(paths, sids)]
    _map(_simulate_one, jobs, args.workers)
    manifest = split_manifest([f"{sid}_A.hsc" for sid in sids], sizes, args.seed, sids)
    write_manifest(manifest, out / "manifest.tsv")
    if not args.no_figures:
        from .plotting import plot_srf
        plot_srf(D, out / "srf.png")
    write_echo(args, {"sim_sigma_per_factor": SIM_SIGMA_PER_FACTOR, "factors": [s.downsample_factor for s in specs]})
    return 0


# ---------------------------------------------------------------- build-prior

def cmd_build_prior(args) -> int:
    manifest = read_manifest(_require_file(args.manifest, "manifest"))
    entries = manifest.split(args.split)
    if not entries:
        raise UsageError(f"manifest has no '{args.split}' entries")
    cubes = [read_cube(p) for p, _, _ in entries]
    target = args.target_pixels or cubes[0].pixels
    P = estimate_spectral_prior(cubes, target)
    out = _out_dir(args)
    write_prior(P, out / f"{args.name}.spm")
    diag = P.diagnostics()
    log.info(
        "prior %dx%d from %d cubes: asymmetry %.3g, min eigenvalue %.3g (tolerance %.3g)",
        P.size, P.size, len(cubes), diag["asymmetry_fro"], diag["min_eigenvalue"], diag["psd_tolerance"],
    )
    if diag["min_eigenvalue"] < diag["psd_tolerance"]:
        log.warning("prior is not positive semidefinite within tolerance")
    if not args.no_figures:
        from .plotting import plot_prior
        plot_prior(P, out / f"{args.name}.png")
    write_echo(args, {"scene_count": len(cubes), "scale_pixels": int(target)})
    return 0


# ---------------------------------------------------------------- train-disc

def _fake_cube(sid, real: HsiCube, products, D, source, rng):
    if source == "noise":
        lo, hi = float(real.data.min()), float(real.data.max())
        return rng.uniform(lo, hi, real.shape)
    S = read_cube(_require_file(Path(products) / f"{sid}_S.hsc", "product"))
    su = spatial_prior_image(S)
    lift = init_a(su.data.reshape(su.bands, -1), D).reshape(D.shape[1], su.rows, su.cols)
    sigma = 0.01 * float(np.sqrt(np.mean(lift**2)))
    return lift + sigma * rng.standard_normal(lift.shape)


def cmd_train_disc(args) -> int:
    manifest_path = _require_file(args.manifest, "manifest")
    manifest = read_manifest(manifest_path)
    entries = manifest.split(args.split)
    if not entries:
        raise UsageError(f"manifest has no '{args.split}' entries")
    products = Path(args.products) if args.products else manifest_path.parent
    D = None
    if args.fake_source == "lift":
        D = SrfMatrix.load(_require_file(args.srf or manifest_path.parent / "srf.txt", "SRF file"))
    rng = np.random.default_rng(args.seed)
    reals, fakes = [], []
    for path, _, sid in entries:
        real = read_cube(path)
        reals.append(real.data)
        fakes.append(_fake_cube(sid, real, products, D, args.fake_source, rng))
    params = init_params(reals[0].shape[0], args.width, args.seed)
    opts = TrainOptions(
        steps=args.steps, step_size=args.step_size, patch_size=args.patch_size,
        batch_size=args.batch_size, seed=args.seed,
    )
    params, trace = train_discriminator(params, reals, fakes, opts)
    out = _out_dir(args)
    write_params(params, out / f"{args.name}.dsc")
    write_loss_csv(trace, out / f"{args.name}_loss.csv")
    if trace.step:
        log.info("final L_D %.6f, p_r %.4f, p_f %.4f", trace.loss[-1], trace.p_r[-1], trace.p_f[-1])
    if not args.no_figures and trace.step:
        from .plotting import plot_loss_trace
        plot_loss_trace(trace, out / f"{args.name}_loss.png")
    write_echo(args)
    return 0


# ---------------------------------------------------------------- reconstruct

def _scene_name(path):
    stem = Path(path).stem
    return stem[:-2] if stem.endswith("_S") else stem


def _reconstruct_one(path, out, D, P, disc, cfg, figures):
    S = read_cube(path)
    if S.bands != D.shape[0]:
        raise UsageError(f"{path}: product has {S.bands} bands, SRF has {D.shape[0]} rows")
    cube, state = solve(S, D, P, disc, cfg)
    name = _scene_name(path)
    out = Path(out)
    write_cube(cube, out / f"{name}_rec.hsc")
    write_trace_csv(state.trace, out / f"{name}_trace.csv")
    if figures:
        from .plotting import plot_trace
        plot_trace(state.trace, out / f"{name}_trace.png")
    if state.stalled:
        log.warning("%s: line search stalled; result written anyway", name)
    return name, state.trace[-1].total if state.trace else float("nan")


def cmd_reconstruct(args) -> int:
    cfg = _solver_config(args)
    D = SrfMatrix.load(_require_file(args.srf, "SRF file"))
    P = None
    if cfg.lambda2 > 0:
        if args.prior is None:
            raise UsageError("--prior is required unless --no-spectrum-prior is given")
        P = read_prior(_require_file(args.prior, "prior file"))
    disc = None
    if cfg.dmr_active:
        if args.disc is None:
            raise UsageError("--disc is required unless --no-dmr is given")
        disc = read_params(_require_file(args.disc, "discriminator file"))
    paths = [_require_file(p, "product") for p in args.products]
    out = _out_dir(args)
    jobs = [(str(p), str(out), D, P, disc, cfg, not args.no_figures) for p in paths]
    for name, total in _map(_reconstruct_one, jobs, args.workers):
        log.info("%s: final Lagrangian %.6g", name, total)
    write_echo(args, {f"solver.{k}": v for k, v in cfg.as_dict().items()})
    return 0


# ---------------------------------------------------------------- eval

def _eval_one(sid, ref_path, est_path, out, composite, gamma):
    ref, est = read_cube(ref_path), read_cube(est_path)
    if ref.shape != est.shape:
        raise UsageError(f"{sid}: reference {ref.shape} and estimate {est.shape} differ")
    rep = evaluate(ref, est)
    if composite:
        idx = [b - 1 for b in composite]
        for tag, cube in (("ref", ref), ("est", est)):
            try:
                rgb = truecolor_composite(cube, idx, gamma)
            except IndexError as exc:
                raise UsageError(str(exc)) from None
            write_ppm(rgb, Path(out) / f"{sid}_{tag}_rgb.ppm")
    return sid, rep, ref.wavelengths


def cmd_eval(args) -> int:
    if args.manifest:
        manifest = read_manifest(_require_file(args.manifest, "manifest"))
        entries = manifest.split(args.split)
        if not entries:
            raise UsageError(f"manifest has no '{args.split}' entries")
        est_dir = Path(args.est_dir) if args.est_dir else Path(".")
        triples = [(sid, p, str(est_dir / f"{sid}_rec.hsc")) for p, _, sid in entries]
    else:
        if not args.ref or not args.est or len(args.ref) != len(args.est):
            raise UsageError("give --manifest, or matching --ref and --est lists")
        ids = args.ids or [Path(p).stem for p in args.ref]
        if len(ids) != len(args.ref):
            raise UsageError("--ids must match --ref in length")
        triples = list(zip(ids, args.ref, args.est))
    for _, r, e in triples:
        _require_file(r, "reference cube")
        _require_file(e, "estimate cube")
    out = _out_dir(args)
    jobs = [(sid, r, e, str(out), args.composite, args.gamma) for sid, r, e in triples]
    results = _map(_eval_one, jobs, args.workers)
    write_metric_csv([(sid, rep) for sid, rep, _ in results], out / f"{args.name}.csv")
    for sid, rep, _ in results:
        log.info("%s: PSNR %.4f dB, SAM %.4f deg, SSIM %.4f, RMSE %.5f", sid, rep.psnr, rep.sam, rep.ssim, rep.rmse)
    if not args.no_figures:
        from .plotting import plot_band_metrics
        plot_band_metrics(results[0][2], [r[1] for r in results], [r[0] for r in results], out / f"{args.name}_bands.png")
    write_echo(args)
    return 0


# ---------------------------------------------------------------- mdl

def cmd_mdl(args) -> int:
    cube = read_cube(_require_file(args.cube, "input cube"))
    max_k = args.max_k if args.max_k is not None else min(10, cube.bands - 1)
    if not 1 <= max_k < cube.bands:
        raise UsageError(f"--max-k must lie in [1, {cube.bands - 1}]")
    result = mdl_order(cube, max_k)
    if result.floored:
        log.warning("covariance is rank deficient; eigenvalues were floored")
    out = _out_dir(args)
    stem = Path(args.cube).stem
    write_mdl_csv(result, out / f"{stem}_mdl.csv")
    if not args.no_figures:
        from .plotting import plot_mdl_curve
        plot_mdl_curve(result, out / f"{stem}_mdl.png")
    write_echo(args)
    print(result.order)
    return 0


# ---------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="scene-level worker processes")
    p.add_argument("--config-echo", default=None, help="echo file path (default OUT/config_echo.txt)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s2hsi", description="Sentinel-2 to AVIRIS-level reconstruction")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate Sentinel-2 products from AVIRIS-level cubes")
    p.add_argument("cubes", nargs="+")
    p.add_argument("--bands", default=None, help="band-spec table (default: shipped Sentinel-2 table)")
    p.add_argument("--raw-aviris", action="store_true", help="inputs are 425-band cubes; drop water bands and pair-average")
    p.add_argument("--split", type=_int_list, default=None, help="train,test,val counts")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-prior", help="pooled spectral prior matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train", choices=["train", "test", "val"])
    p.add_argument("--target-pixels", type=int, default=None)
    p.add_argument("--name", default="prior")
    _common(p)
    p.set_defaults(func=cmd_build_prior)

    p = sub.add_parser("train-disc", help="train the discriminator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train", choices=["train", "test", "val"])
    p.add_argument("--products", default=None, help="directory holding <scene>_S.hsc (default: manifest directory)")
    p.add_argument("--srf", default=None)
    p.add_argument("--fake-source", choices=["lift", "noise"], default="lift")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--step-size", type=float, default=1e-5)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--name", default="disc")
    _common(p)
    p.set_defaults(func=cmd_train_disc)

    p = sub.add_parser("reconstruct", help="reconstruct hyperspectral cubes from products")
    p.add_argument("products", nargs="+")
    p.add_argument("--srf", required=True)
    p.add_argument("--prior", default=None)
    p.add_argument("--disc", default=None)
    d = SolverConfig()
    p.add_argument("--lambda1", type=float, default=d.lambda1)
    p.add_argument("--lambda2", type=float, default=d.lambda2)
    p.add_argument("--mu", type=float, default=d.mu)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--outer-iters", type=int, default=d.outer_iters)
    p.add_argument("--inner-steps", type=int, default=d.inner_grad_steps)
    p.add_argument("--tol", type=float, default=d.tol)
    p.add_argument("--no-dmr", action="store_true", help="drop the discriminator terms (lambda1 = mu = 0)")
    p.add_argument("--no-spectrum-prior", action="store_true", help="lambda2 = 0")
    p.add_argument("--unfold-faithful", action="store_true", help="one fixed-gamma step per outer iteration")
    p.add_argument("--no-clamp", action="store_true", help="keep negative values in the output")
    _common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="quality metrics against reference cubes")
    p.add_argument("--ref", nargs="*", default=None)
    p.add_argument("--est", nargs="*", default=None)
    p.add_argument("--ids", nargs="*", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default="test", choices=["train", "test", "val"])
    p.add_argument("--est-dir", default=None, help="directory holding <scene>_rec.hsc")
    p.add_argument("--composite", type=_int_list, default=None, help="1-based R,G,B bands, e.g. 25,12,8")
    p.add_argument("--gamma", type=float, default=1.0, help="composite gamma")
    p.add_argument("--name", default="metrics")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mdl", help="MDL model-order selection")
    p.add_argument("cube")
    p.add_argument("--max-k", type=int, default=None)
    _common(p)
    p.set_defaults(func=cmd_mdl)

    p = sub.add_parser("rerun", help="repeat a run from its config echo")
    p.add_argument("from_echo", metavar="ECHO")
    p.add_argument("--out", default=None, help="override the recorded output directory")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=None)
    return parser


_PATH_KEYS = {"out", "config_echo", "cubes", "bands", "manifest", "products", "srf", "prior", "disc", "ref", "est", "est_dir", "cube"}
_COMMANDS = {
    "simulate": cmd_simulate, "build-prior": cmd_build_prior, "train-disc": cmd_train_disc,
    "reconstruct": cmd_reconstruct, "eval": cmd_eval, "mdl": cmd_mdl,
}


def _absolutize(args):
    for key in _PATH_KEYS & set(vars(args)):
        val = getattr(args, key)
        if isinstance(val, list):
            setattr(args, key, [_abs(v) for v in val])
        elif isinstance(val, str):
            setattr(args, key, _abs(val))


def _from_echo(args):
    values = read_echo(args.from_echo)
    ns = argparse.Namespace(**values)
    if args.out is not None:
        ns.out = args.out
        ns.config_echo = None
    if args.workers is not None:
        ns.workers = args.workers
    ns.func = _COMMANDS[ns.command]
    return ns


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr
    )
    try:
        if args.command == "rerun":
            verbose = args.verbose
            args = _from_echo(args)
            args.verbose = verbose
        else:
            _absolutize(args)
        return args.func(args)
    except (UsageError, ValueError, IndexError, FileNotFoundError) as exc:
        parser.print_usage(sys.stderr)
        print(f"s2hsi: error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"s2hsi: data error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"s2hsi: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
