#!/usr/bin/env python3
"""Regenerate the experiment figures from the published CSV outputs.

Reads only profiles.csv / offsets.csv / fits.csv as documented in the main
package README; no access to simulator internals.  Rendering is a pure
function of the CSV contents and the recipe, so re-rendering the same inputs
is pixel-identical.

Usage:
    python figures/render.py --recipe fig7 --in runs/fig7 --out figs/
"""
import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

DPI = 120
META = {"Software": "fiberppe-figures"}

PROFILE_COLUMNS = ["run_id", "position_km", "gamma_prime_ref", "est_tx",
                   "est_hd", "est_corrected"]
OFFSET_COLUMNS = ["run_id", "position_km", "ser", "power_dbm", "M",
                  "po_linear", "po_db"]
FIT_COLUMNS = ["run_id", "z_km", "k", "p", "q", "r2"]


class RecipeError(RuntimeError):
    pass


def read_csv(path: Path, expected_columns):
    if not path.exists():
        raise RecipeError(f"missing input file: {path}")
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise RecipeError(f"{path.name} is empty")
        missing = [c for c in expected_columns if c not in header]
        if missing:
            raise RecipeError(
                f"{path.name} schema mismatch: missing column "
                f"{missing[0]!r} (found {header})")
        idx = {c: header.index(c) for c in expected_columns}
        rows = []
        for raw in reader:
            rows.append({c: raw[idx[c]] for c in expected_columns})
    if not rows:
        raise RecipeError(f"{path.name} has a header but no data rows")
    return rows


def _floats(rows, key):
    return np.array([float(r[key]) for r in rows])


def _group(rows, key):
    order, groups = [], {}
    for r in rows:
        k = r[key]
        if k not in groups:
            groups[k] = []
            order.append(k)
        groups[k].append(r)
    return [(k, groups[k]) for k in order]


def _ser_by_run(offset_rows):
    return {run_id: float(rows[0]["ser"])
            for run_id, rows in _group(offset_rows, "run_id")}


def _offset_mw(rows, gamma):
    # The CSV stores po = est_tx - est_hd in gamma*P units (1/km); the
    # positive "HD minus TX" offset in mW is -po / gamma * 1e3.
    return -_floats(rows, "po_linear") / gamma * 1e3


def render_fig4(in_dir: Path, out_path: Path, gamma: float):
    profiles = read_csv(in_dir / "profiles.csv", PROFILE_COLUMNS)
    offsets = read_csv(in_dir / "offsets.csv", OFFSET_COLUMNS)
    sers = _ser_by_run(offsets)
    runs = _group(profiles, "run_id")
    fig, axes = plt.subplots(1, len(runs), figsize=(4.2 * len(runs), 3.4),
                             sharey=True)
    axes = np.atleast_1d(axes)
    for ax, (run_id, rows) in zip(axes, runs):
        z = _floats(rows, "position_km")
        for col, style, label in (("gamma_prime_ref", "k-", "reference"),
                                  ("est_tx", "y:", "TX data"),
                                  ("est_hd", "b-", "HD data"),
                                  ("est_corrected", "r-.", "HD + removal")):
            ax.plot(z, _floats(rows, col) / gamma * 1e3, style, label=label,
                    linewidth=1.0)
        ax.set_title(f"SER = {sers.get(run_id, float('nan')):.3g}")
        ax.set_xlabel("distance (km)")
    axes[0].set_ylabel("estimated power (mW)")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI, metadata=META)
    plt.close(fig)


def render_fig5(in_dir: Path, out_path: Path, gamma: float,
                span_length_km: float, within_km: float):
    profiles = read_csv(in_dir / "profiles.csv", PROFILE_COLUMNS)
    offsets = read_csv(in_dir / "offsets.csv", OFFSET_COLUMNS)
    meta = {run_id: (int(rows[0]["M"]), float(rows[0]["ser"]))
            for run_id, rows in _group(offsets, "run_id")}
    per_m = {}
    for run_id, rows in _group(profiles, "run_id"):
        if run_id not in meta:
            continue
        m, ser = meta[run_id]
        z = _floats(rows, "position_km")
        mask = np.mod(z, span_length_km) < within_km
        ref = _floats(rows, "gamma_prime_ref")[mask]
        rms = {}
        for col in ("est_tx", "est_hd", "est_corrected"):
            est = _floats(rows, col)[mask]
            rms[col] = float(np.sqrt(np.mean((est - ref) ** 2))) / gamma * 1e3
        per_m.setdefault(m, []).append((ser, rms))
    fig, axes = plt.subplots(1, len(per_m), figsize=(4.0 * len(per_m), 3.2),
                             sharey=True)
    axes = np.atleast_1d(axes)
    for ax, (m, entries) in zip(axes, sorted(per_m.items())):
        entries.sort()
        sers = [e[0] for e in entries]
        for col, style, label in (("est_tx", "yo-", "TX data"),
                                  ("est_hd", "bs-", "HD data"),
                                  ("est_corrected", "r^-.", "HD + removal")):
            ax.plot(sers, [e[1][col] for e in entries], style, label=label,
                    markersize=4)
        ax.set_title(f"{m}-QAM")
        ax.set_xlabel("SER")
    axes[0].set_ylabel("RMS error (mW)")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI, metadata=META)
    plt.close(fig)


def render_fig6(in_dir: Path, out_path: Path, gamma: float):
    offsets = read_csv(in_dir / "offsets.csv", OFFSET_COLUMNS)
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    for run_id, rows in sorted(_group(offsets, "run_id"),
                               key=lambda kv: float(kv[1][0]["ser"])):
        z = _floats(rows, "position_km")
        ax.plot(z, _offset_mw(rows, gamma),
                label=f"SER {float(rows[0]['ser']):.3g}", linewidth=1.0)
    ax.set_xlabel("distance (km)")
    ax.set_ylabel("power offset (mW, HD - TX)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI, metadata=META)
    plt.close(fig)


def _fit_curves(in_dir: Path):
    """Law-fit coefficients per (group, position); empty when no fits exist
    (runs with fewer than 4 SER points legitimately publish none)."""
    try:
        fits = read_csv(in_dir / "fits.csv", FIT_COLUMNS)
    except RecipeError:
        return {}
    by_group_z = {}
    for row in fits:
        key = (row["run_id"], float(row["z_km"]))
        by_group_z[key] = (float(row["k"]), float(row["p"]), float(row["q"]))
    return by_group_z


def render_fig7(in_dir: Path, out_path: Path, gamma: float,
                span_length_km: float):
    offsets = read_csv(in_dir / "offsets.csv", OFFSET_COLUMNS)
    fits = _fit_curves(in_dir)
    positions = sorted({float(r["position_km"]) for r in offsets})
    spans = sorted({p - p % span_length_km for p in positions})
    spans = [s for s in spans if s + 40.0 <= max(positions) + span_length_km]
    fig, axes = plt.subplots(1, max(len(spans), 1),
                             figsize=(4.0 * max(len(spans), 1), 3.2),
                             sharey=True)
    axes = np.atleast_1d(axes)
    group_id = offsets[0]["run_id"].rsplit("_ser", 1)[0]
    ser_grid = np.linspace(1e-4, max(float(r["ser"]) for r in offsets), 200)
    for ax, span0 in zip(axes, spans):
        picks = [p for p in positions
                 if span0 <= p < span0 + 40.0][::2][:5]
        for z in picks:
            rows = [r for r in offsets if float(r["position_km"]) == z]
            sers = _floats(rows, "ser")
            ax.plot(sers, _offset_mw(rows, gamma), "o", markersize=3.5,
                    label=f"{z:g} km")
            coeff = fits.get((group_id, z))
            if coeff:
                k, p, q = coeff
                law = k * ser_grid + p * np.sqrt(1 - ser_grid) + q
                ax.plot(ser_grid, -law / gamma * 1e3, "--", linewidth=0.9)
        ax.set_xlabel("SER")
        ax.set_title(f"{span0:g}-{span0 + 40:g} km")
        ax.legend(fontsize=6)
    axes[0].set_ylabel("power offset (mW, HD - TX)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI, metadata=META)
    plt.close(fig)


def _z0_rows(offsets):
    rows = [r for r in offsets if float(r["position_km"]) == 0.0]
    if not rows:
        raise RecipeError("offsets.csv has no rows at position 0 km")
    return rows


def render_fig8(in_dir: Path, out_path: Path, gamma: float):
    offsets = read_csv(in_dir / "offsets.csv", OFFSET_COLUMNS)
    rows0 = _z0_rows(offsets)
    fits = _fit_curves(in_dir)
    groups = _group(rows0, "run_id")
    by_mp = {}
    for run_id, rows in groups:
        key = (int(rows[0]["M"]), float(rows[0]["power_dbm"]))
        by_mp.setdefault(key, []).extend(rows)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ser_grid = np.linspace(1e-4, max(float(r["ser"]) for r in rows0), 200)
    for (m, power), rows in sorted(by_mp.items()):
        rows.sort(key=lambda r: float(r["ser"]))
        sers = _floats(rows, "ser")
        ax.plot(sers, _offset_mw(rows, gamma), "o", markersize=4,
                label=f"{m}-QAM, {power:g} dBm")
        coeff = fits.get((f"m{m}_p{power:g}dbm", 0.0))
        if coeff:
            k, p, q = coeff
            law = k * ser_grid + p * np.sqrt(1 - ser_grid) + q
            ax.plot(ser_grid, -law / gamma * 1e3, "--", linewidth=0.9)
    ax.set_xlabel("SER")
    ax.set_ylabel("power offset at 0 km (mW, HD - TX)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI, metadata=META)
    plt.close(fig)


def render_fig9(in_dir: Path, out_path: Path, gamma: float):
    offsets = read_csv(in_dir / "offsets.csv", OFFSET_COLUMNS)
    rows0 = _z0_rows(offsets)
    by_mp = {}
    for run_id, rows in _group(rows0, "run_id"):
        key = (int(rows[0]["M"]), float(rows[0]["power_dbm"]))
        by_mp.setdefault(key, []).extend(rows)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for (m, power), rows in sorted(by_mp.items()):
        rows.sort(key=lambda r: float(r["ser"]))
        sers = _floats(rows, "ser")
        db = -_floats(rows, "po_db")  # positive when HD overestimates
        keep = np.isfinite(db)
        ax.plot(sers[keep], db[keep], "o-", markersize=4, linewidth=0.9,
                label=f"{m}-QAM, {power:g} dBm")
    ax.set_xlabel("SER")
    ax.set_ylabel("power offset at 0 km (dB, HD vs TX)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI, metadata=META)
    plt.close(fig)


RECIPES = {
    "fig4": lambda in_dir, out, args: render_fig4(in_dir, out, args.gamma),
    "fig5": lambda in_dir, out, args: render_fig5(
        in_dir, out, args.gamma, args.span_length_km, 40.0),
    "fig6": lambda in_dir, out, args: render_fig6(in_dir, out, args.gamma),
    "fig7": lambda in_dir, out, args: render_fig7(
        in_dir, out, args.gamma, args.span_length_km),
    "fig8": lambda in_dir, out, args: render_fig8(in_dir, out, args.gamma),
    "fig9": lambda in_dir, out, args: render_fig9(in_dir, out, args.gamma),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--recipe", required=True, choices=sorted(RECIPES))
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory with the result CSVs")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--gamma", type=float, default=1.3,
                        help="nonlinear coefficient (1/W/km) used to express "
                             "profile units in mW")
    parser.add_argument("--span-length-km", type=float, default=80.0)
    args = parser.parse_args(argv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{args.recipe}.png"
    try:
        RECIPES[args.recipe](Path(args.in_dir), out_path, args)
    except RecipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
