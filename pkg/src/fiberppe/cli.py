"""Command-line front end: run, sweep, fit, verify, report."""
import argparse
import os
import sys
from pathlib import Path

from .harness import (
    _fits_csv,
    emit_results,
    load_config,
    refit_from_offsets,
    run_grid,
)

ENV_OUT = "FIBERPPE_OUT"


def _add_common(parser):
    parser.add_argument("--config", required=True, help="TOML config file")
    parser.add_argument("--out", default=None, help="output directory "
                        f"(default: config output_dir or ${ENV_OUT})")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the master seed")
    parser.add_argument("--preset", choices=("paper", "desk"), default=None,
                        help="override the scale preset")
    parser.add_argument("--threads", type=int, default=1,
                        help="concurrent grid points")


def _parse_list(text, cast):
    return tuple(cast(tok) for tok in text.split(",") if tok.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fiberppe",
        description="Fiber-longitudinal power profile estimation lab",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run the grid of one config file")
    _add_common(run)

    sweep = sub.add_parser("sweep", help="run a config with grid overrides")
    _add_common(sweep)
    sweep.add_argument("--modulations", default=None,
                       help="comma list, e.g. 4,16,64")
    sweep.add_argument("--powers-dbm", default=None,
                       help="comma list, e.g. 5,6,7,8")
    sweep.add_argument("--target-sers", default=None,
                       help="comma list, e.g. 0.02,0.04,0.08")

    fit = sub.add_parser("fit", help="re-fit the offset law from offsets.csv")
    fit.add_argument("--in", dest="in_dir", required=True,
                     help="directory containing offsets.csv")
    fit.add_argument("--out", default=None,
                     help="directory for fits.csv (default: --in)")

    sub.add_parser("verify", help="run the numerical invariant suite")

    report = sub.add_parser("report", help="summarize a results directory")
    report.add_argument("--in", dest="in_dir", required=True)

    return parser


def _resolve_out(args, config) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get(ENV_OUT):
        return Path(os.environ[ENV_OUT])
    return Path(config.output_dir)


def _cmd_run(args, overrides=None) -> int:
    base = {"master_seed": args.seed, "preset": args.preset}
    if overrides:
        base.update(overrides)
    config = load_config(args.config, overrides=base)
    record = run_grid(config, threads=max(1, args.threads),
                      log=lambda msg: print(msg, flush=True))
    paths = emit_results(record, _resolve_out(args, config))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    failed = [p for p in record.points if not p.ok]
    for p in failed:
        print(f"FAILED {p.run_id}: {p.error}", file=sys.stderr)
    return 1 if failed else 0


def _cmd_sweep(args) -> int:
    overrides = {}
    if args.modulations:
        overrides["modulations"] = _parse_list(args.modulations, int)
    if args.powers_dbm:
        overrides["launch_powers_dbm"] = _parse_list(args.powers_dbm, float)
    if args.target_sers:
        overrides["target_sers"] = _parse_list(args.target_sers, float)
    return _cmd_run(args, overrides)


def _cmd_fit(args) -> int:
    in_dir = Path(args.in_dir)
    fits = refit_from_offsets(in_dir / "offsets.csv")
    out_dir = Path(args.out) if args.out else in_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "fits.csv").write_text(_fits_csv(fits))
    print(f"wrote {out_dir / 'fits.csv'} ({len(fits)} fits)")
    return 0


def _cmd_verify() -> int:
    from .selfcheck import run_checks

    results = run_checks()
    width = max(len(name) for name, _, _ in results)
    ok_all = True
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        ok_all &= ok
        print(f"{status}  {name:<{width}}  {detail}")
    return 0 if ok_all else 1


def _cmd_report(args) -> int:
    import json

    in_dir = Path(args.in_dir)
    manifest = json.loads((in_dir / "manifest.json").read_text())
    print(f"config: M={manifest['config']['modulations']} "
          f"powers={manifest['config']['launch_powers_dbm']} dBm "
          f"target SERs={manifest['config']['target_sers']}")
    print(f"{'run_id':<28}{'status':<8}{'ser':>10}{'rms_tx':>12}"
          f"{'rms_hd':>12}{'rms_corr':>12}{'identity':>11}")
    for pt in manifest["points"]:
        ser = pt["measured_ser"]
        row = [
            f"{pt['run_id']:<28}",
            f"{pt['status']:<8}",
            f"{ser:>10.4g}" if ser is not None else f"{'-':>10}",
        ]
        for key in ("rms_tx", "rms_hd", "rms_corrected"):
            v = pt[key]
            row.append(f"{v:>12.4g}" if v is not None else f"{'-':>12}")
        ident = pt["identity_residual"]
        row.append(f"{ident:>11.2e}" if ident is not None else f"{'-':>11}")
        print("".join(row))
    fits_path = in_dir / "fits.csv"
    if fits_path.exists():
        rows = fits_path.read_text().strip().splitlines()[1:]
        print(f"{len(rows)} offset-vs-SER fits in fits.csv")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "run":
        return _cmd_run(args)
    if args.verb == "sweep":
        return _cmd_sweep(args)
    if args.verb == "fit":
        return _cmd_fit(args)
    if args.verb == "verify":
        return _cmd_verify()
    if args.verb == "report":
        return _cmd_report(args)
    raise AssertionError(f"unhandled verb {args.verb}")


if __name__ == "__main__":
    sys.exit(main())
