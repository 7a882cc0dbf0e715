"""Command-line entry point: synth, unmix, eval, bench, sweep-rho1.

Failures print one ``scmunmix: error: ...`` line to stderr and exit nonzero
(2 for usage errors, 1 for everything else).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from scmunmix import fileio
from scmunmix.core import ScmConfig, ScmError
from scmunmix.experiments import ALGORITHMS, bench_trials, summarize_bench, sweep_rho1
from scmunmix.metrics import aligned_errors
from scmunmix.solver import unmix
from scmunmix.synth import SNR_RANGE, SynthSpec, bundled_spectra_path, load_spectra_library, make_scene
from scmunmix.uncertainty import summarize_uncertainty

PROG = "scmunmix"
U64_MAX = 2**64 - 1

# file names inside output directories
CUBE_FILE = "cube.scmc"
TRUTH_ABUNDANCES = "truth_abundances.csv"
TRUTH_ENDMEMBERS = "truth_endmembers.csv"
METADATA = "metadata.txt"
ABUNDANCES = "abundances.csv"
ENDMEMBERS = "endmembers.csv"
UNCERTAINTY = "uncertainty.csv"
UNCERTAINTY_AMOUNT = "uncertainty_amount.csv"
ENERGY_TRACE = "energy_trace.csv"
DIAGNOSTICS = "diagnostics.txt"
RUN_CONFIG = "run_config.txt"

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"{PROG}: error: usage: {message}", file=sys.stderr)
        sys.exit(2)


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _snr_list(text: str) -> list[float]:
    vals = _float_list(text)
    lo, hi = SNR_RANGE
    for v in vals:
        if not lo <= v <= hi:
            raise argparse.ArgumentTypeError(f"SNR {v:g} dB outside [{lo:g}, {hi:g}]")
    return vals


def _rho_list(text: str) -> list[float]:
    vals = _float_list(text)
    if any(not v >= 0 for v in vals):
        raise argparse.ArgumentTypeError("rho1 values must be >= 0")
    return vals


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _algs(text: str) -> list[str]:
    algs = [t.strip() for t in text.split(",") if t.strip()]
    for a in algs:
        if a not in ALGORITHMS:
            raise argparse.ArgumentTypeError(f"unknown algorithm {a!r}; choose from {','.join(ALGORITHMS)}")
    if not algs:
        raise argparse.ArgumentTypeError("empty algorithm list")
    return algs


def _add_config_args(p):
    p.add_argument("--preset", choices=ALGORITHMS, default="scm")
    p.add_argument("--config", type=Path, help="key = value file; overrides the preset")
    p.add_argument("--seed", type=_seed, help="k-means initialisation seed")
    p.add_argument("--clamp-r", action="store_true", help="clip endmembers at zero")


def _resolve_config(args, num_endmembers: int | None = None) -> ScmConfig:
    cfg = ScmConfig.preset(args.preset)
    if num_endmembers is not None:
        cfg = cfg.with_(num_endmembers=num_endmembers)
    if args.config is not None:
        cfg = fileio.read_config(args.config, base=cfg)
    if args.seed is not None:
        cfg = cfg.with_(rng_seed=args.seed)
    if args.clamp_r:
        cfg = cfg.with_(clamp_r=True)
    return cfg


def _spectra(path):
    return load_spectra_library(path if path is not None else bundled_spectra_path())


def _out_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ScmError(f"cannot create output directory {path}: {exc.strerror}") from exc
    return path


def _read_any_cube(path: Path):
    if path.suffix.lower() == ".hdr":
        return fileio.read_envi(path)
    return fileio.read_cube(path)


def _find(directory: Path, *names) -> Path:
    for n in names:
        if (directory / n).exists():
            return directory / n
    raise ScmError(f"{directory}: none of {', '.join(names)} found")


# --------------------------------------------------------------------------
# commands

def cmd_synth(args) -> None:
    if len(args.snr) != 1:
        raise ScmError("synth takes a single --snr value")
    spectra, names = _spectra(args.spectra)
    h, w = args.size
    scene = make_scene(SynthSpec(spectra, h, w, args.blur, args.snr[0], args.seed))
    out = _out_dir(args.out)
    fileio.write_cube(out / CUBE_FILE, scene.cube)
    fileio.write_abundances(out / TRUTH_ABUNDANCES, scene.abundances.values)
    fileio.write_endmembers(out / TRUTH_ENDMEMBERS, scene.spectra, names)
    m = spectra.shape[0]
    fileio.write_kv(out / METADATA, {
        "height": h, "width": w, "bands": spectra.shape[1], "endmembers": m,
        "names": " ".join(names), "snr_db": float(args.snr[0]), "sigma_y": scene.sigma_y,
        "blur_sigma": float(args.blur), "seed": args.seed,
        "layout": "quadrants" if m == 4 else "vertical_strips",
    })
    print(out / CUBE_FILE)


def write_unmix_outputs(out: Path, result, config: ScmConfig) -> None:
    ems = result.endmembers
    m, b = ems.means.shape
    fileio.write_endmembers(out / ENDMEMBERS, ems.means)
    fileio.write_abundances(out / ABUNDANCES, result.abundances.values)
    fileio.write_covariances(out, ems.covariances, ems.noise_std)
    summ = summarize_uncertainty(ems)
    # lower/upper are r -/+ 2 sigma u, so a band where u < 0 has lower > upper
    fileio.write_csv(out / UNCERTAINTY, ["endmember", "band", "mean", "lower", "upper"],
                     ([j + 1, i, float(summ.means[j, i]), float(summ.band_lower[j, i]),
                       float(summ.band_upper[j, i])] for j in range(m) for i in range(b)))
    fileio.write_csv(out / UNCERTAINTY_AMOUNT, ["endmember", "amount"],
                     ([j + 1, float(a)] for j, a in enumerate(summ.amount)))
    rows = [["abundance_endmember", i, float(e)] for i, e in enumerate(result.energy_trace)]
    rows += [["covariance", i, float(e)] for i, e in enumerate(result.covariance_trace)]
    fileio.write_csv(out / ENERGY_TRACE, ["phase", "iteration", "energy"], rows)
    diag = dict(result.diagnostics)
    diag["noise_std"] = float(ems.noise_std)
    fileio.write_kv(out / DIAGNOSTICS, diag)
    fileio.write_config(out / RUN_CONFIG, config)


def cmd_unmix(args) -> None:
    cube = _read_any_cube(args.cube)
    cfg = _resolve_config(args)
    result = unmix(cube, cfg)
    out = _out_dir(args.out)
    write_unmix_outputs(out, result, cfg)
    print(out)


def _load_estimate(directory: Path, truth_first: bool):
    order = ((TRUTH_ENDMEMBERS, ENDMEMBERS), (TRUTH_ABUNDANCES, ABUNDANCES))
    if not truth_first:
        order = tuple(o[::-1] for o in order)
    R, _ = fileio.read_endmembers(_find(directory, *order[0]))
    A = fileio.read_abundances(_find(directory, *order[1]))
    return R, A


def cmd_eval(args) -> None:
    R, A = _load_estimate(args.estimate, truth_first=False)
    M, T = _load_estimate(args.truth, truth_first=True)
    err = aligned_errors(R, A, M, T)
    header = ["permutation", "endmember_error", "abundance_error"]
    row = [" ".join(str(int(p)) for p in err.permutation), err.endmember_error, err.abundance_error]
    _emit(args.out, header, [row])


def _emit(path, header, rows) -> None:
    if path is None:
        fileio.write_csv_stream(sys.stdout, header, rows)
        return
    _out_dir(Path(path).parent)
    fileio.write_csv(path, header, rows)


def cmd_bench(args) -> None:
    spectra, _ = _spectra(args.spectra)
    overrides = {}
    if args.config is not None:
        overrides = fileio.parse_config_values(args.config.read_text(), str(args.config))
        for key in ("rng_seed", "num_endmembers"):
            overrides.pop(key, None)
    if args.clamp_r:
        overrides["clamp_r"] = True
    results = bench_trials(spectra, args.snr, args.trials, args.algs, args.seed, args.size,
                           args.blur, **overrides)
    rows = summarize_bench(results)
    header = ["snr_db", "algorithm", "trials", "mean_endmember_error", "mean_abundance_error",
              "std_endmember_error", "std_abundance_error"]
    _emit(args.out, header, ([r.snr_db, r.algorithm, r.trials, r.mean_endmember_error,
                              r.mean_abundance_error, r.std_endmember_error,
                              r.std_abundance_error] for r in rows))


def cmd_sweep_rho1(args) -> None:
    cube = _read_any_cube(args.cube)
    truth_dir = args.truth if args.truth is not None else args.cube.parent
    truth, names = fileio.read_endmembers(_find(truth_dir, TRUTH_ENDMEMBERS, ENDMEMBERS))
    cfg = _resolve_config(args, num_endmembers=truth.shape[0])
    rows = sweep_rho1(cube, cfg, truth, args.rho1)
    header = ["rho1_prime"] + [f"amount_{n}" for n in names] + ["amount_mean", "endmember_error"]
    _emit(args.out, header, ([r.rho1_prime, *map(float, r.amounts), float(np.mean(r.amounts)),
                              r.endmember_error] for r in rows))


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog=PROG, description="Spatial compositional model unmixing.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic cube with truth sidecars")
    s.add_argument("--size", type=_size, default=(40, 40))
    s.add_argument("--snr", type=_snr_list, default=[20.0])
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--blur", type=float, default=2.0)
    s.add_argument("--spectra", type=Path, help="spectra CSV (default: bundled library)")
    s.add_argument("--out", type=Path, default=Path("."))
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("unmix", help="estimate endmembers, abundances and uncertainty")
    s.add_argument("cube", type=Path, help="SCMC cube or ENVI .hdr")
    _add_config_args(s)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_unmix)

    s = sub.add_parser("eval", help="permutation-aligned errors of an estimate")
    s.add_argument("estimate", type=Path)
    s.add_argument("truth", type=Path)
    s.add_argument("--out", type=Path, help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="SNR x trials benchmark on synthetic cubes")
    s.add_argument("--spectra", type=Path)
    s.add_argument("--snr", type=_snr_list, default=[20.0, 30.0, 40.0, 50.0, 60.0])
    s.add_argument("--trials", type=_positive_int, default=20)
    s.add_argument("--algs", type=_algs, default=list(ALGORITHMS))
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--size", type=_size, default=(40, 40))
    s.add_argument("--blur", type=float, default=2.0)
    s.add_argument("--config", type=Path, help="overrides applied on top of each preset")
    s.add_argument("--clamp-r", action="store_true")
    s.add_argument("--out", type=Path, help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep-rho1", help="uncertainty amount and error versus rho1'")
    s.add_argument("cube", type=Path)
    s.add_argument("--rho1", type=_rho_list, default=[1.0, 0.1, 0.01, 0.001, 0.0001])
    s.add_argument("--truth", type=Path, help="directory with truth endmembers "
                   "(default: the cube's directory)")
    _add_config_args(s)
    s.add_argument("--out", type=Path, help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_sweep_rho1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ScmError as exc:
        print(f"{PROG}: error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except OSError as exc:
        where = f"{exc.filename}: " if exc.filename else ""
        print(f"{PROG}: error: {where}{exc.strerror or exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
