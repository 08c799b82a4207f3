"""Config-driven experiment runner.

For every (modulation, launch power, target SER) grid point: generate and
shape symbols, propagate, calibrate the receiver AWGN to the target SER,
run the receiver, build the TX- and HD-referenced estimation systems, solve
both, run the virtual HD re-transmission, compute the analytical offset and
the corrected profile, and collect RMS metrics.  Offset-vs-SER fits are then
computed per (modulation, power) group at every span-start position.

All randomness derives from one master seed: stream seeds are spawned per
grid point and stage, so points are independent of execution order and any
stage can be reproduced in isolation.
"""
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .channel import (
    FiberLink,
    NoiseSpec,
    add_awgn,
    invert_mqam_ser,
    n0_for_target_ser,
    reference_profile,
    ssfm_propagate,
)
from .constellation import build_qam, hard_decide
from .offset import (
    fit_offset_vs_ser,
    ideal_po_removal,
    po_to_db,
    power_offset,
    rms_error,
    span_start_mask,
    virtual_hd_perturbation,
)
from .ppe import HD, TX, build_matrix, delta_u, dispersion_operator, mmse_solve
from .rxdsp import RxBundle, measure_ser, regenerate_references, run_receiver
from .waveform import ShapingConfig, generate_symbols, rrc_shape, set_launch_power

__all__ = [
    "ExperimentConfig",
    "GridPointResult",
    "FitResult",
    "RunRecord",
    "load_config",
    "run_point",
    "run_grid",
    "emit_results",
    "refit_from_offsets",
]

PRESETS = {
    "paper": {"dz_km": 1.0, "symbol_count": 2**14},
    "desk": {"dz_km": 4.0, "symbol_count": 2**14},
}

_STAGE_SYMBOLS = 0
_STAGE_NOISE = 1


@dataclass(frozen=True)
class ExperimentConfig:
    modulations: tuple = (16,)
    launch_powers_dbm: tuple = (8.0,)
    target_sers: tuple = (0.02, 0.04, 0.08)
    baud_rate_hz: float = 130e9
    samples_per_symbol: int = 2
    rolloff: float = 0.1
    filter_span_symbols: int = 64
    span_length_km: float = 80.0
    span_count: int = 3
    alpha_db_per_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    gamma_per_w_km: float = 1.3
    wavelength_nm: float = 1550.0
    dz_km: float = 4.0
    ssfm_step_km: float = 0.1
    symbol_count: int = 2**14
    test_phases: int = 64
    master_seed: int = 20240
    preset: str = "desk"
    output_dir: str = "runs"
    fit_within_km: float = 40.0
    noise_mode: str = "coupled"
    kernel_offset_km: Optional[float] = None
    frames_per_point: int = 1

    def __post_init__(self):
        object.__setattr__(self, "modulations",
                           tuple(int(m) for m in self.modulations))
        object.__setattr__(self, "launch_powers_dbm",
                           tuple(float(p) for p in self.launch_powers_dbm))
        object.__setattr__(self, "target_sers",
                           tuple(float(s) for s in self.target_sers))
        for s in self.target_sers:
            if not (0.0 < s <= 0.3):
                raise ValueError(f"target SER {s} outside (0, 0.3]")
        if self.noise_mode not in ("coupled", "decoupled"):
            raise ValueError(
                f"noise_mode must be 'coupled' or 'decoupled', "
                f"got {self.noise_mode!r}")
        self.link()  # validates dz / span geometry

    def link(self) -> FiberLink:
        return FiberLink(span_length_km=self.span_length_km,
                         span_count=self.span_count,
                         alpha_db_per_km=self.alpha_db_per_km,
                         dispersion_ps_nm_km=self.dispersion_ps_nm_km,
                         gamma_per_w_km=self.gamma_per_w_km,
                         wavelength_nm=self.wavelength_nm,
                         dz_km=self.dz_km)

    def shaping(self) -> ShapingConfig:
        return ShapingConfig(samples_per_symbol=self.samples_per_symbol,
                             rolloff=self.rolloff,
                             filter_span_symbols=self.filter_span_symbols,
                             baud_rate_hz=self.baud_rate_hz)

    def grid(self) -> list:
        return [(m, p, s) for m in self.modulations
                for p in self.launch_powers_dbm
                for s in self.target_sers]


def _toml_loads(text: str) -> dict:
    if sys.version_info >= (3, 11):
        import tomllib
        return tomllib.loads(text)
    import tomli
    return tomli.loads(text)


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a TOML config; preset values apply first, file keys override."""
    raw = _toml_loads(Path(path).read_text())
    flat = {}
    for section in ("experiment", "fiber", "dsp", "output"):
        flat.update(raw.get(section, {}))
    flat.update(raw.get("", {}))
    if overrides:
        flat.update({k: v for k, v in overrides.items() if v is not None})
    preset = flat.get("preset", "desk")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from "
                         f"{sorted(PRESETS)}")
    merged = dict(PRESETS[preset])
    merged.update(flat)
    merged["preset"] = preset
    known = ExperimentConfig.__dataclass_fields__
    unknown = set(merged) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**merged)


def seed_for(master_seed: int, point_index: int, stage: int,
             frame: int = 0) -> int:
    ss = np.random.SeedSequence(master_seed,
                                spawn_key=(point_index, stage, frame))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class GridPointResult:
    """One grid point's outputs.

    ``po_linear`` is the measured power offset gamma_tx_hat - gamma_hd_hat
    (the Eq.-37 sign convention: negative where the HD path overestimates);
    ``po_db`` is its log-scale form with the TX estimate standing in for the
    true profile.  ``po_analytic`` is the virtual-perturbation prediction of
    the same quantity, used for the ideal-removal path.
    """

    run_id: str
    modulation: int
    power_dbm: float
    target_ser: float
    measured_ser: float = np.nan
    n0: float = np.nan
    positions_km: Optional[np.ndarray] = None
    gamma_prime_ref: Optional[np.ndarray] = None
    est_tx: Optional[np.ndarray] = None
    est_hd: Optional[np.ndarray] = None
    est_corrected: Optional[np.ndarray] = None
    po_linear: Optional[np.ndarray] = None
    po_db: Optional[np.ndarray] = None
    po_analytic: Optional[np.ndarray] = None
    rms_tx: float = np.nan
    rms_hd: float = np.nan
    rms_corrected: float = np.nan
    identity_residual: float = np.nan
    seconds: float = 0.0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class FitResult:
    group_id: str
    modulation: int
    power_dbm: float
    z_km: float
    k: float
    p: float
    q: float
    r_squared: float
    n_points: int


@dataclass
class RunRecord:
    config: ExperimentConfig
    points: list = field(default_factory=list)
    fits: list = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return all(p.ok for p in self.points)


def _run_id(m: int, power_dbm: float, target_ser: float) -> str:
    return f"m{m}_p{power_dbm:g}dbm_ser{target_ser:g}"


def _group_id(m: int, power_dbm: float) -> str:
    return f"m{m}_p{power_dbm:g}dbm"


def _run_frame(config: ExperimentConfig, modulation: int, power_dbm: float,
               target_ser: float, point_index: int, frame_idx: int) -> dict:
    """One independent frame through the full pipeline."""
    link = config.link()
    shaping = config.shaping()
    spec = build_qam(modulation)
    frame = generate_symbols(
        spec, config.symbol_count,
        seed=seed_for(config.master_seed, point_index, _STAGE_SYMBOLS,
                      frame_idx))
    tx_wave = set_launch_power(
        rrc_shape(frame, shaping.samples_per_symbol, shaping.rolloff,
                  shaping.filter_span_symbols, shaping.baud_rate_hz),
        power_dbm)
    propagated = ssfm_propagate(tx_wave, link, config.ssfm_step_km)
    noise_seed = seed_for(config.master_seed, point_index, _STAGE_NOISE,
                          frame_idx)

    if config.noise_mode == "decoupled":
        # The regime of the offset-vs-SER law's derivation: noiseless
        # field, hard-decision errors drawn from the per-symbol AWGN
        # decision experiment at the SER-matched noise level.
        es_over_n0 = invert_mqam_ser(spec, target_ser)
        rng = np.random.default_rng(noise_seed)
        sigma = np.sqrt(0.5 / es_over_n0)
        w = sigma * (rng.standard_normal(len(frame))
                     + 1j * rng.standard_normal(len(frame)))
        decided = hard_decide(spec.points[frame.tx_indices] + w, spec)
        n0 = propagated.power / config.baud_rate_hz / es_over_n0
        a_tx0, a_hd0 = regenerate_references(frame, decided, shaping,
                                             power_dbm)
        bundle = RxBundle(a_l=propagated, a_tx0=a_tx0, a_hd0=a_hd0,
                          measured_ser=measure_ser(decided,
                                                   frame.tx_indices))
    else:
        def measure(n0: float) -> float:
            noisy = add_awgn(propagated, NoiseSpec(n0=n0, seed=noise_seed))
            inner, _ = run_receiver(noisy, link, frame, shaping,
                                    power_dbm, config.test_phases)
            return inner.measured_ser

        hint = propagated.power / config.baud_rate_hz / invert_mqam_ser(
            spec, target_ser)
        n0 = n0_for_target_ser(spec, target_ser, measure, n0_hint=hint)
        a_l_phys = add_awgn(propagated, NoiseSpec(n0=n0, seed=noise_seed))
        bundle, _ = run_receiver(a_l_phys, link, frame, shaping,
                                 power_dbm, config.test_phases)

    # One normalization constant per run keeps every solve consistent.
    norm = np.sqrt(bundle.a_tx0.power)
    a_l = bundle.a_l.with_samples(bundle.a_l.samples / norm)
    a_tx = bundle.a_tx0.with_samples(bundle.a_tx0.samples / norm)
    a_hd = bundle.a_hd0.with_samples(bundle.a_hd0.samples / norm)

    offset_km = config.kernel_offset_km
    if offset_km is None:
        offset_km = link.dz_km / 2.0  # midpoint quadrature of the kernel
    g_tx = build_matrix(a_tx, link, built_from=TX,
                        kernel_offset_km=offset_km)
    g_hd = build_matrix(a_hd, link, built_from=HD,
                        kernel_offset_km=offset_km)
    du_tx = delta_u(a_l, a_tx, link, built_from=TX)
    du_hd = delta_u(a_l, a_hd, link, built_from=HD)
    est_tx = mmse_solve(g_tx, du_tx)
    est_hd = mmse_solve(g_hd, du_hd)

    virt = virtual_hd_perturbation(bundle.a_hd0, link,
                                   step_km=config.ssfm_step_km,
                                   normalization=norm)
    u_hd = dispersion_operator(a_hd, link, 0.0, link.total_length_km).samples
    u_tx = dispersion_operator(a_tx, link, 0.0, link.total_length_km).samples
    report = power_offset(g_hd, u_hd, u_tx, virt, du_tx,
                          ser=bundle.measured_ser,
                          launch_power_dbm=power_dbm, modulation=modulation)
    corrected = ideal_po_removal(est_hd, report)
    virt_est = mmse_solve(g_hd, virt)
    identity = (np.linalg.norm(corrected.gamma_prime_hat
                               - virt_est.gamma_prime_hat)
                / np.linalg.norm(virt_est.gamma_prime_hat))
    return {
        "measured_ser": bundle.measured_ser,
        "n0": n0,
        "est_tx": est_tx.gamma_prime_hat,
        "est_hd": est_hd.gamma_prime_hat,
        "est_corrected": corrected.gamma_prime_hat,
        "po_analytic": report.po_linear,
        "identity": float(identity),
    }


def run_point(config: ExperimentConfig, modulation: int, power_dbm: float,
              target_ser: float, point_index: int) -> GridPointResult:
    """Execute one grid point, averaging over independent frames.

    Frames differ in symbols and noise realizations; profile and offset
    arrays are frame-averaged, the SER and noise level are means, and the
    identity residual is the worst frame's.
    """
    started = time.perf_counter()
    run_id = _run_id(modulation, power_dbm, target_ser)
    try:
        n_frames = max(1, int(config.frames_per_point))
        frames = [
            _run_frame(config, modulation, power_dbm, target_ser,
                       point_index, f)
            for f in range(n_frames)
        ]
        link = config.link()
        ref = reference_profile(link, power_dbm)
        mask = span_start_mask(ref.positions_km, link.span_length_km,
                               config.fit_within_km)

        def avg(key):
            return np.mean([fr[key] for fr in frames], axis=0)

        est_tx = avg("est_tx")
        est_hd = avg("est_hd")
        est_corrected = avg("est_corrected")
        po_measured = est_tx - est_hd

        def rms(est):
            diff = est[mask] - ref.gamma_prime[mask]
            return float(np.sqrt(np.mean(diff**2)))

        return GridPointResult(
            run_id=run_id, modulation=modulation, power_dbm=power_dbm,
            target_ser=target_ser,
            measured_ser=float(np.mean([fr["measured_ser"]
                                        for fr in frames])),
            n0=float(np.mean([fr["n0"] for fr in frames])),
            positions_km=ref.positions_km,
            gamma_prime_ref=ref.gamma_prime,
            est_tx=est_tx,
            est_hd=est_hd,
            est_corrected=est_corrected,
            po_linear=po_measured,
            po_db=po_to_db(po_measured, est_tx),
            po_analytic=avg("po_analytic"),
            rms_tx=rms(est_tx),
            rms_hd=rms(est_hd),
            rms_corrected=rms(est_corrected),
            identity_residual=max(fr["identity"] for fr in frames),
            seconds=time.perf_counter() - started,
        )
    except Exception as exc:  # grid keeps going; the point records why
        return GridPointResult(
            run_id=run_id, modulation=modulation, power_dbm=power_dbm,
            target_ser=target_ser, seconds=time.perf_counter() - started,
            error=f"{type(exc).__name__}: {exc}",
        )


def _fits_for_points(points: list, span_length_km: float,
                     within_km: float) -> list:
    """Offset-vs-SER fits per (modulation, power) at span-start positions."""
    groups = {}
    for pt in points:
        if pt.ok:
            groups.setdefault((pt.modulation, pt.power_dbm), []).append(pt)
    fits = []
    for (m, power), pts in sorted(groups.items()):
        sers = np.array([p.measured_ser for p in pts])
        if len(np.unique(sers)) < 4:
            continue
        positions = pts[0].positions_km
        mask = span_start_mask(positions, span_length_km, within_km)
        for idx in np.flatnonzero(mask):
            po = np.array([p.po_linear[idx] for p in pts])
            fit = fit_offset_vs_ser(sers, po)
            fits.append(FitResult(group_id=_group_id(m, power), modulation=m,
                                  power_dbm=power,
                                  z_km=float(positions[idx]),
                                  k=fit.k, p=fit.p, q=fit.q,
                                  r_squared=fit.r_squared,
                                  n_points=len(sers)))
    return fits


def run_grid(config: ExperimentConfig, threads: int = 1,
             log=None) -> RunRecord:
    """Run every grid point (optionally in a thread pool) and fit the law.

    Failures are recorded per point and do not stop the grid; results are
    ordered by grid index regardless of completion order.
    """
    grid = config.grid()
    say = log if log is not None else (lambda msg: None)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_point, config, m, p, s, i)
                       for i, (m, p, s) in enumerate(grid)]
            points = [f.result() for f in futures]
    else:
        points = []
        for i, (m, p, s) in enumerate(grid):
            pt = run_point(config, m, p, s, i)
            status = "ok" if pt.ok else f"FAILED ({pt.error})"
            say(f"[{i + 1}/{len(grid)}] {pt.run_id}: {status} "
                f"ser={pt.measured_ser:.4g} elapsed={pt.seconds:.1f}s")
            points.append(pt)
    fits = _fits_for_points(points, config.span_length_km,
                            config.fit_within_km)
    return RunRecord(config=config, points=points, fits=fits)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _profiles_csv(record: RunRecord) -> str:
    lines = ["run_id,position_km,gamma_prime_ref,est_tx,est_hd,est_corrected"]
    for pt in record.points:
        if not pt.ok:
            continue
        for i, z in enumerate(pt.positions_km):
            lines.append(",".join([
                pt.run_id, _fmt(z), _fmt(pt.gamma_prime_ref[i]),
                _fmt(pt.est_tx[i]), _fmt(pt.est_hd[i]),
                _fmt(pt.est_corrected[i]),
            ]))
    return "\n".join(lines) + "\n"


def _offsets_csv(record: RunRecord) -> str:
    lines = ["run_id,position_km,ser,power_dbm,M,po_linear,po_db"]
    for pt in record.points:
        if not pt.ok:
            continue
        for i, z in enumerate(pt.positions_km):
            lines.append(",".join([
                pt.run_id, _fmt(z), _fmt(pt.measured_ser), _fmt(pt.power_dbm),
                str(pt.modulation), _fmt(pt.po_linear[i]), _fmt(pt.po_db[i]),
            ]))
    return "\n".join(lines) + "\n"


def _fits_csv(fits: list) -> str:
    lines = ["run_id,z_km,k,p,q,r2"]
    for f in fits:
        lines.append(",".join([
            f.group_id, _fmt(f.z_km), _fmt(f.k), _fmt(f.p), _fmt(f.q),
            _fmt(f.r_squared),
        ]))
    return "\n".join(lines) + "\n"


def _manifest(record: RunRecord) -> str:
    cfg = asdict(record.config)
    grid = record.config.grid()
    payload = {
        "config": cfg,
        "seeds": {
            "master": record.config.master_seed,
            "per_point": {
                _run_id(*grid[i]): {
                    "symbols": seed_for(record.config.master_seed, i,
                                        _STAGE_SYMBOLS),
                    "noise": seed_for(record.config.master_seed, i,
                                      _STAGE_NOISE),
                } for i in range(len(grid))
            },
        },
        "versions": {
            "fiberppe": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "points": [
            {
                "run_id": pt.run_id,
                "status": "ok" if pt.ok else "error",
                "error": pt.error,
                "measured_ser": None if np.isnan(pt.measured_ser)
                else pt.measured_ser,
                "n0": None if np.isnan(pt.n0) else pt.n0,
                "identity_residual": None if np.isnan(pt.identity_residual)
                else pt.identity_residual,
                "rms_tx": None if np.isnan(pt.rms_tx) else pt.rms_tx,
                "rms_hd": None if np.isnan(pt.rms_hd) else pt.rms_hd,
                "rms_corrected": None if np.isnan(pt.rms_corrected)
                else pt.rms_corrected,
                "seconds": pt.seconds,
            } for pt in record.points
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit_results(record: RunRecord, out_dir) -> dict:
    """Write profiles.csv, offsets.csv, fits.csv and manifest.json.

    Everything is serialized before any file is opened, and all files are
    opened before any byte is written, so an unwritable directory fails
    without leaving partial output.
    """
    out = Path(out_dir)
    contents = {
        "profiles.csv": _profiles_csv(record),
        "offsets.csv": _offsets_csv(record),
        "fits.csv": _fits_csv(record.fits),
        "manifest.json": _manifest(record),
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        handles = {name: open(out / name, "w", newline="")
                   for name in contents}
    except OSError as exc:
        raise RuntimeError(f"output directory {out} is not writable: {exc}")
    try:
        for name, handle in handles.items():
            handle.write(contents[name])
    finally:
        for handle in handles.values():
            handle.close()
    return {name: out / name for name in contents}


def refit_from_offsets(offsets_csv_path) -> list:
    """Recompute offset-vs-SER fits from an offsets.csv file."""
    rows = Path(offsets_csv_path).read_text().strip().splitlines()
    header = rows[0].split(",")
    expected = ["run_id", "position_km", "ser", "power_dbm", "M",
                "po_linear", "po_db"]
    if header != expected:
        raise ValueError(f"offsets.csv schema mismatch: {header}")
    by_group = {}
    for row in rows[1:]:
        run_id, z, ser, power, m, po, _ = row.split(",")
        key = (int(m), float(power))
        by_group.setdefault(key, {}).setdefault(float(z), []).append(
            (float(ser), float(po)))
    fits = []
    for (m, power), by_z in sorted(by_group.items()):
        for z, pairs in sorted(by_z.items()):
            sers = np.array([s for s, _ in pairs])
            if len(np.unique(sers)) < 4:
                continue
            po = np.array([p for _, p in pairs])
            fit = fit_offset_vs_ser(sers, po)
            fits.append(FitResult(group_id=_group_id(m, power), modulation=m,
                                  power_dbm=power, z_km=z, k=fit.k, p=fit.p,
                                  q=fit.q, r_squared=fit.r_squared,
                                  n_points=len(sers)))
    return fits
