"""Command-line front end.

``slowfast <command> [options]`` writes into the output directory:

* ``manifest.json``: config, digests, seed and SHA-256 digests of every output
* ``report.json``: the structured report (results, checks, timings)
* one CSV per report table, plus PNG figures unless ``--no-plots``

Exit codes: 0 success, 1 a reported check failed, 2 bad usage, bad config or
failed model validation, 3 blow-up dominated run.
``slowfast replay MANIFEST`` re-runs a manifest and compares the CSV digests.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .config import ConfigError, RunConfig, RunManifest, file_digest, load_config, tomllib
from .experiments import RUNNERS, run_experiment
from .model import CATALOG, InvalidModelError

ENV_OUT = "SLOWFAST_OUTPUT_DIR"
DEFAULT_OUT = "slowfast-output"

EXIT_OK, EXIT_CHECKS, EXIT_INVALID, EXIT_BLOWUP = 0, 1, 2, 3

# which experiment field each --eps flag sets
EPS_FIELD = {"khasminskii": "khasminskii_epsilons", "moments": "moment_epsilons"}

# dedicated flags and the config fields they set: (block, key)
FLAG_FIELDS = {
    "model": ("model", "name"),
    "seed": ("noise", "seed"),
    "paths": ("experiment", "paths"),
    "x0": ("experiment", "x0"),
    "y0": ("experiment", "y0"),
    "T": ("solver", "T"),
    "h": ("solver", "h"),
}


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def build_parser():
    p = argparse.ArgumentParser(prog="slowfast",
                                description="Slow-fast stochastic reaction-diffusion experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--out", help=f"output directory (default: ${ENV_OUT}/<command> "
                                      f"or ./{DEFAULT_OUT}/<command>)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--model", choices=CATALOG, help="catalog model")
    common.add_argument("--paths", type=int, help="ensemble size")
    common.add_argument("--x0", help="slow initial state spec")
    common.add_argument("--y0", help="fast initial state spec")
    common.add_argument("--eps", type=_float_list, help="decreasing eps grid, e.g. 0.1,0.01")
    common.add_argument("--T", type=float, help="time horizon")
    common.add_argument("--h", type=float, help="macro step")
    common.add_argument("--set", action="append", default=[], metavar="BLOCK.KEY=VALUE",
                        help="override any config key (value in TOML syntax); repeatable")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    common.add_argument("--quiet", action="store_true")

    helps = {
        "validate": "check the model assumptions on sampled points",
        "simulate": "coupled trajectories at the first eps of the grid",
        "average": "finite-window averaged drift at fixed slow states",
        "converge": "coupled vs averaged slow component across an eps grid",
        "mix": "forgetting rate of the frozen fast equation",
        "moments": "sup-norm moments across an eps grid",
        "khasminskii": "window-frozen auxiliary fast motion vs eps",
        "almost-periodic": "periodicity and forgetting of the fast evolution family",
    }
    for name in RUNNERS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "validate":
            sp.add_argument("--budget", type=int, default=10_000, help="sample budget")
    rp = sub.add_parser("replay", help="re-run a manifest and compare its CSV outputs")
    rp.add_argument("manifest")
    rp.add_argument("--out", help="output directory (default: <manifest dir>/replay)")
    rp.add_argument("--workers", type=int, default=1)
    rp.add_argument("--no-plots", action="store_true")
    rp.add_argument("--quiet", action="store_true")
    return p


def resolve_config(args) -> RunConfig:
    """Config file, then ``--set`` entries, then dedicated flags; a key set twice is an error."""
    cfg = load_config(args.config) if args.config else RunConfig()
    d = cfg.to_dict()
    seen = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        block, dot, field = key.strip().partition(".")
        if not sep or not dot or block not in d:
            raise ConfigError(f"--set {item!r}: use BLOCK.KEY=VALUE with BLOCK in "
                              f"{', '.join(d)}")
        if (block, field) in seen:
            raise ConfigError(f"conflicting flags: {block}.{field} set twice")
        seen[(block, field)] = f"--set {item}"
        d[block][field] = _parse_value(val.strip())
    flags = dict(FLAG_FIELDS)
    flags["eps"] = ("experiment", EPS_FIELD.get(args.command, "epsilons"))
    for flag, (block, field) in flags.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        if (block, field) in seen:
            raise ConfigError(f"conflicting flags: --{flag} and {seen[(block, field)]} "
                              f"both set {block}.{field}")
        seen[(block, field)] = f"--{flag}"
        d[block][field] = val
    return RunConfig.from_dict(d, source=args.config or "flags")


def _out_dir(args, command):
    if args.out:
        return args.out
    base = os.environ.get(ENV_OUT) or DEFAULT_OUT
    return os.path.join(base, command)


def write_outputs(rep, out_dir, manifest: RunManifest, plots=True):
    """Write CSVs, report, figures and the manifest; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, table in rep.tables.items():
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(table.to_csv())
        written.append(path)
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(rep.to_json())
        fh.write("\n")
    written.append(path)
    if plots:
        from .plotting import plot_report
        written += plot_report(rep, out_dir)
    manifest.outputs = {os.path.basename(p): file_digest(p) for p in written}
    manifest.write(os.path.join(out_dir, "manifest.json"))
    return manifest


def _exit_code(rep):
    if rep.kind == "validate" and not rep.passed:
        return EXIT_INVALID
    if rep.blow_up_dominated:
        return EXIT_BLOWUP
    return EXIT_OK if rep.passed else EXIT_CHECKS


def _run(command, cfg, out_dir, workers, plots, quiet, options=None):
    if command == "validate":
        rep = RUNNERS["validate"](cfg, sample_budget=(options or {}).get("budget", 10_000))
    else:
        rep = run_experiment(command, cfg, workers=workers)
    manifest = RunManifest.create(command, cfg, options)
    write_outputs(rep, out_dir, manifest, plots)
    if not quiet:
        print(rep.summary())
        if rep.kind == "validate" and not rep.passed:
            for c in rep.checks:
                if not c.passed:
                    print(f"  witness for {c.name}: {c.note}")
        print(f"outputs: {out_dir}")
    return rep, manifest


def _replay(args):
    manifest = RunManifest.read(args.manifest)
    cfg = manifest.run_config()
    out_dir = args.out or os.path.join(os.path.dirname(os.path.abspath(args.manifest)), "replay")
    _, fresh = _run(manifest.command, cfg, out_dir, args.workers, not args.no_plots, True,
                    manifest.options)
    old = {k: v for k, v in manifest.outputs.items() if k.endswith(".csv")}
    new = {k: v for k, v in fresh.outputs.items() if k.endswith(".csv")}
    bad = sorted(k for k in set(old) | set(new) if old.get(k) != new.get(k))
    if not args.quiet:
        for k in sorted(old):
            print(f"{'MISMATCH' if k in bad else 'identical'}  {k}")
        for k in sorted(set(new) - set(old)):
            print(f"MISMATCH  {k} (new output)")
    return EXIT_CHECKS if bad else EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.command == "replay":
            return _replay(args)
        cfg = resolve_config(args)
        options = {"budget": args.budget} if args.command == "validate" else {}
        rep, _ = _run(args.command, cfg, _out_dir(args, args.command), args.workers,
                      not args.no_plots, args.quiet, options)
        return _exit_code(rep)
    except InvalidModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
