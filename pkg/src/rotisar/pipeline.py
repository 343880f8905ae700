"""End-to-end orchestration: synthesize, correlate, estimate, migrate, image.

Each stage is a plain function so tests and the CLI can stop anywhere.
:func:`run_pipeline` chains them, tags failures with the stage name and
optionally writes every artifact to an output directory.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io, migration
from .config import ScenarioConfig, dumps, from_dict
from .correlation import CorrelationSet, build_correlations, write_auto_csv
from .geometry import C0, RotationParams
from .migration import Image, ImageGrid, InterferenceMatrix, PeakMatch
from .rotation_estimation import (EstimationOptions, RotationEstimate, estimate_rotation,
                                  write_diagnostics)
from .waveform import EchoSet, add_noise, synthesize_freq, synthesize_time

STAGES = ("simulate", "correlate", "estimate", "migrate", "image")
SWEEP_PARAMETERS = {
    "theta_rot": "rotation.theta",
    "aperture_pulses": "imaging.num_pulses",
    "snr_db": "noise.snr_db",
    "alpha": "estimation.alpha",
}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage


def mean_width(widths) -> float:
    """Mean of the finite widths, NaN when none could be measured."""
    w = np.asarray(widths, float)
    w = w[np.isfinite(w)]
    return float(w.mean()) if len(w) else np.nan


@dataclass
class RunReport:
    config: ScenarioConfig
    truth: RotationParams
    rotation_used: RotationParams | None = None
    estimate: RotationEstimate | None = None
    traces: list = field(default_factory=list)
    interference: InterferenceMatrix | None = None
    images: dict = field(default_factory=dict)
    eigenvalues: np.ndarray | None = None
    spot_widths: dict = field(default_factory=dict)
    matches: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def relative_errors(self) -> np.ndarray | None:
        if self.estimate is None:
            return None
        return self.estimate.relative_errors(self.truth)

    def metrics(self) -> dict:
        """Flat scalar summary used by sweeps and the text report."""
        out = {}
        if self.estimate is not None:
            err = self.relative_errors
            out.update(theta_hat=self.estimate.theta_hat, phi_hat=self.estimate.phi_hat,
                       omega_hat=self.estimate.omega_hat, rel_err_theta=err[0],
                       rel_err_phi=err[1], rel_err_omega=err[2],
                       num_support_peaks=len(self.estimate.peak_times))
        if self.eigenvalues is not None and len(self.eigenvalues) > 1:
            out["lambda2_over_lambda1"] = self.eigenvalues[1] / self.eigenvalues[0]
        for kind in self.images:
            tag = kind.replace("-", "_")
            m = self.matches.get(kind)
            if m is not None:
                out[f"{tag}_matched"] = m.matched
                out[f"{tag}_spurious"] = m.spurious
            wx, wy = self.spot_widths.get(kind, (np.nan, np.nan))
            out[f"{tag}_fwhm_x"] = wx
            out[f"{tag}_fwhm_y"] = wy
            out[f"{tag}_fwhm_mean"] = mean_width((wx, wy))
        return out


@dataclass
class Acquisition:
    """Echo sets of one run; either may be absent when its stage is off."""

    estimation: EchoSet | None = None
    imaging: EchoSet | None = None


# ---- stages -----------------------------------------------------------------

def simulate(cfg: ScenarioConfig, estimation: bool = True, imaging: bool = True
             ) -> Acquisition:
    """Noisy (if configured) echoes for the estimation and imaging apertures."""
    scene = cfg.scene_obj()
    acq = Acquisition()
    snr = cfg.snr_db
    if estimation and cfg.estimation.enabled:
        echoes = synthesize_time(cfg.scenario(cfg.estimation.num_pulses, time_domain=True),
                                 scene)
        acq.estimation = echoes if snr is None else add_noise(echoes, snr, cfg.noise_seed)
    if imaging and cfg.imaging.enabled:
        echoes = synthesize_freq(cfg.scenario(cfg.imaging.num_pulses), scene)
        acq.imaging = echoes if snr is None else add_noise(echoes, snr, cfg.noise_seed + 1)
    return acq


def correlate(cfg: ScenarioConfig, acq: Acquisition
              ) -> tuple[CorrelationSet | None, CorrelationSet | None]:
    x0, v0 = cfg.trajectory.position, cfg.trajectory.velocity
    est = img = None
    if acq.estimation is not None:
        e = cfg.estimation
        est = build_correlations(None, acq.estimation, x0, v0, e.max_lag, e.decimation)
    if acq.imaging is not None:
        img = build_correlations(acq.imaging, None, x0, v0)
    return est, img


def estimation_options(cfg: ScenarioConfig) -> EstimationOptions:
    e = cfg.estimation
    return EstimationOptions(alpha=e.alpha, window=e.window, theta_steps=e.theta_steps,
                             phi_steps=e.phi_steps, omega_steps=e.omega_steps,
                             omega_span=e.omega_span, max_lag=e.max_lag)


def estimate(cfg: ScenarioConfig, correlations: CorrelationSet):
    scenario = cfg.scenario(cfg.estimation.num_pulses, time_domain=True)
    return estimate_rotation(correlations, scenario, estimation_options(cfg),
                             return_traces=True)


def migration_rotation(cfg: ScenarioConfig, estimated: RotationParams | None) -> RotationParams:
    """Rotation handed to migration: estimate or truth, then injected error."""
    base = estimated if estimated is not None else cfg.rotation_truth()
    e_theta, e_phi, e_omega = cfg.imaging.rotation_error
    omega = base.omega_r * (1 + e_omega) if cfg.imaging.compensate_rotation else 0.0
    return RotationParams(base.theta_rot * (1 + e_theta), base.phi_rot * (1 + e_phi), omega)


def image_grid(cfg: ScenarioConfig) -> ImageGrid:
    return ImageGrid(cfg.imaging.grid_size, cfg.grid_spacing())


def migrate(cfg: ScenarioConfig, correlations: CorrelationSet, rotation: RotationParams
            ) -> InterferenceMatrix:
    scenario = cfg.scenario(cfg.imaging.num_pulses)
    return migration.migrate_two_point(correlations, scenario, rotation, image_grid(cfg))


def spot_widths(image: Image, targets) -> tuple[float, float]:
    """Mean FWHM along x and y over the targets whose spot can be measured."""
    wx, wy = [], []
    for t in np.asarray(targets, float):
        for direction, acc in (((1.0, 0.0), wx), ((0.0, 1.0), wy)):
            try:
                acc.append(migration.measure_spot(image, image.grid, t[:2], direction))
            except migration.PeakNotFoundError:
                pass
    return (float(np.mean(wx)) if wx else np.nan, float(np.mean(wy)) if wy else np.nan)


def form_images(cfg: ScenarioConfig, x: InterferenceMatrix, rotation: RotationParams,
                imaging_echoes=None) -> dict:
    """Requested images; ``imaging_echoes`` is a callable returning echoes for Kirchhoff."""
    out = {}
    for kind in cfg.imaging.images:
        if kind == "single-point":
            out[kind] = migration.image_single_point(x)
        elif kind == "rank-1":
            out[kind] = migration.image_rank1(x)
        elif kind == "kirchhoff":
            echoes = imaging_echoes()
            out[kind] = migration.image_kirchhoff(echoes, cfg.scenario(cfg.imaging.num_pulses),
                                                  rotation, x.grid)
    return out


# ---- stage cache --------------------------------------------------------------

def config_digest(cfg: ScenarioConfig, part: str) -> str:
    """Hash of the config fields that determine one correlation set."""
    data = cfg.to_dict()
    data.pop("output")
    if part == "estimation":
        data.pop("imaging")
    else:
        data.pop("estimation")
        data["imaging"] = {k: data["imaging"][k] for k in ("enabled", "num_pulses")}
    blob = json.dumps([part, data], sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _cache_path(cache_dir, cfg, part) -> Path:
    return Path(cache_dir) / f"{part}-{config_digest(cfg, part)}.isarcorr"


def _timed(report: RunReport, stage: str, fn, *args, **kwargs):
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            result = fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(stage, exc) from exc
    for w in caught:
        report.notes.append(f"{stage}: {w.message}")
    report.timings[stage] = report.timings.get(stage, 0.0) + time.perf_counter() - t0
    return result


def run_pipeline(cfg: ScenarioConfig, out_dir=None, until: str = "image",
                 stage_cache=None) -> RunReport:
    """Run the stages up to and including ``until`` and return the report.

    With ``stage_cache`` the correlation sets are stored there keyed by a
    hash of the relevant config fields and reloaded on the next run.  When
    estimation is disabled the true rotation is used for migration.
    Artifacts are written when ``out_dir`` is given.
    """
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}")
    stop = STAGES.index(until)
    rep = RunReport(cfg, cfg.rotation_truth())
    want_est = cfg.estimation.enabled
    want_img = cfg.imaging.enabled and (stop <= 1 or stop >= STAGES.index("migrate"))

    cached = {}
    if stage_cache is not None:
        Path(stage_cache).mkdir(parents=True, exist_ok=True)
        for part, wanted in (("estimation", want_est), ("imaging", want_img)):
            path = _cache_path(stage_cache, cfg, part)
            if wanted and path.is_file():
                cached[part] = _timed(rep, "correlate", CorrelationSet.load, path)
                rep.notes.append(f"correlate: reused {path.name}")

    acq = _timed(rep, "simulate", simulate, cfg,
                 estimation=want_est and "estimation" not in cached,
                 imaging=want_img and "imaging" not in cached)
    if stop == 0:
        return _finish(rep, out_dir, acq=acq)

    est_cs, img_cs = _timed(rep, "correlate", correlate, cfg, acq)
    est_cs = cached.get("estimation", est_cs)
    img_cs = cached.get("imaging", img_cs)
    if stage_cache is not None:
        for part, cs in (("estimation", est_cs), ("imaging", img_cs)):
            path = _cache_path(stage_cache, cfg, part)
            if cs is not None and not path.is_file():
                cs.save(path)
    if stop == 1:
        return _finish(rep, out_dir, correlations=(est_cs, img_cs))

    estimated = None
    if est_cs is not None:
        rep.estimate, rep.traces = _timed(rep, "estimate", estimate, cfg, est_cs)
        estimated = rep.estimate.params
    if stop == 2 or img_cs is None:
        return _finish(rep, out_dir)

    rep.rotation_used = migration_rotation(cfg, estimated)
    rep.interference = _timed(rep, "migrate", migrate, cfg, img_cs, rep.rotation_used)

    def imaging_echoes():
        if acq.imaging is None:
            acq.imaging = simulate(cfg, estimation=False).imaging
        return acq.imaging

    rep.images = _timed(rep, "image", form_images, cfg, rep.interference, rep.rotation_used,
                        imaging_echoes)
    m = min(cfg.imaging.eigenvalues, rep.interference.grid.size)
    rep.eigenvalues = _timed(rep, "image", lambda: migration.eigen_spectrum(
        rep.interference, m)[0])
    targets = cfg.scene_obj().offsets
    for kind, img in rep.images.items():
        rep.matches[kind] = migration.match_peaks(img, targets, cfg.imaging.peak_threshold)
        rep.spot_widths[kind] = spot_widths(img, targets)
    return _finish(rep, out_dir)


# ---- artifacts ----------------------------------------------------------------

def _finish(rep: RunReport, out_dir, acq: Acquisition | None = None, correlations=None
            ) -> RunReport:
    if out_dir is not None:
        try:
            write_artifacts(rep, out_dir, acq, correlations)
        except OSError as exc:
            raise StageError("report", exc) from exc
    return rep


def write_artifacts(rep: RunReport, out_dir, acq: Acquisition | None = None,
                    correlations=None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = rep.config
    plots = cfg.output.plots
    files = []
    (out / "config.toml").write_text(dumps(cfg))
    files.append(out / "config.toml")

    if acq is not None:
        for name, echoes in (("estimation", acq.estimation), ("imaging", acq.imaging)):
            if echoes is None:
                continue
            # receiver 0, one row per pulse; magnitude for spectra
            vals = np.abs(echoes.data[0]) if echoes.domain == "freq" else echoes.data[0]
            files.append(io.write_matrix_csv(out / f"echoes_{name}_receiver0.csv", vals))
    if correlations is not None:
        for name, cs in zip(("estimation", "imaging"), correlations):
            if cs is None:
                continue
            path = out / f"correlations_{name}.isarcorr"
            cs.save(path)
            files.append(path)
            if cs.auto is not None:
                path = out / "autocorrelation_receiver0.csv"
                write_auto_csv(path, cs, 0)
                files.append(path)

    if rep.estimate is not None:
        files += write_diagnostics(out, rep.estimate, rep.traces)
        if plots:
            from . import plotting
            files.append(plotting.plot_support_traces(out / "support_traces.png", rep.traces))
            surf = io.read_matrix_csv(out / "loss_theta_phi.csv")
            files.append(plotting.plot_loss_slice(out / "loss_theta_phi.png", surf,
                                                  "loss at estimated spin rate"))

    truth_xy = cfg.scene_obj().offsets[:, :2]
    for kind, img in rep.images.items():
        tag = kind.replace("-", "_")
        files.append(io.write_matrix_csv(out / f"image_{tag}.csv", img.as_matrix))
        files.append(io.write_pgm(out / f"image_{tag}.pgm", img.as_matrix))
        if plots:
            from . import plotting
            files.append(plotting.plot_image(out / f"image_{tag}.png", img.as_matrix,
                                             img.grid.coords, kind, truth_xy))
    if rep.eigenvalues is not None:
        lam = rep.eigenvalues
        files.append(io.write_rows_csv(out / "eigenvalues.csv", ["index", "eigenvalue", "ratio"],
                                       [(i + 1, float(v), float(v / lam[0]))
                                        for i, v in enumerate(lam)]))
        if plots:
            from . import plotting
            files.append(plotting.plot_eigen_spectrum(out / "eigenvalues.png", lam))
    if rep.images:
        files.append(io.write_rows_csv(out / "metrics.csv", ["metric", "value"],
                                       sorted(rep.metrics().items())))
    rep.files = files + [out / "report.txt"]
    (out / "report.txt").write_text(format_report(rep))
    return rep.files


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def format_report(rep: RunReport) -> str:
    cfg = rep.config
    lines = ["run report", "==========", ""]
    t = rep.truth
    lines.append(f"true rotation      theta={t.theta_rot:.6f} phi={t.phi_rot:.6f} "
                 f"omega={t.omega_r:.6f}")
    if rep.estimate is not None:
        e, err = rep.estimate, rep.relative_errors
        lines.append(f"estimated rotation theta={e.theta_hat:.6f} phi={e.phi_hat:.6f} "
                     f"omega={e.omega_hat:.6f}")
        lines.append(f"relative errors    theta={err[0]:.3%} phi={err[1]:.3%} omega={err[2]:.3%}")
        lines.append(f"support maxima     {len(e.peak_times)}  final loss {e.loss:.4g}")
    elif cfg.estimation.enabled:
        lines.append("estimated rotation (not run)")
    else:
        lines.append("estimation disabled: true rotation used")
    if rep.rotation_used is not None:
        r = rep.rotation_used
        lines.append(f"migration rotation theta={r.theta_rot:.6f} phi={r.phi_rot:.6f} "
                     f"omega={r.omega_r:.6f}")
    lines.append("")
    if rep.images:
        lam_h = cfg.pulse_obj(1).wavelength
        height = cfg.trajectory.position[2] - cfg.layout().receiver_height
        lines.append(f"grid               {cfg.imaging.grid_size} x {cfg.imaging.grid_size}, "
                     f"spacing {cfg.grid_spacing():.4g} m")
        lines.append(f"reference scales   lambda H / a = {lam_h * height / cfg.geometry.area:.4g} m"
                     f", lambda / (2 sin theta) = "
                     f"{lam_h / (2 * np.sin(t.theta_rot)):.4g} m")
        lines.append("image          matched spurious  fwhm_x [m]  fwhm_y [m]")
        for kind in rep.images:
            m: PeakMatch = rep.matches[kind]
            wx, wy = rep.spot_widths[kind]
            lines.append(f"{kind:<14} {m.matched:>7} {m.spurious:>8}  {wx:>10.4g}  {wy:>10.4g}")
        lines.append("")
    if rep.eigenvalues is not None:
        lam = rep.eigenvalues
        lines.append("eigenvalues (ratio to largest): "
                     + " ".join(f"{v / lam[0]:.4g}" for v in lam))
        lines.append("")
    lines.append("stage timings [s]")
    for stage, sec in rep.timings.items():
        lines.append(f"  {stage:<10} {sec:8.2f}")
    if rep.notes:
        lines += ["", "notes"] + [f"  {n}" for n in rep.notes]
    if rep.files:
        lines += ["", "files"] + [f"  {Path(f).name}" for f in rep.files]
    lines += ["", "resolved configuration", "----------------------", dumps(cfg)]
    return "\n".join(lines)


# ---- sweeps -------------------------------------------------------------------

@dataclass
class SweepEntry:
    value: float
    report: RunReport | None = None
    error: str | None = None


def _sweep_one(args):
    data, out_dir, stage_cache = args
    cfg = from_dict(data)
    try:
        # stored rather than returned: the matrix is large and not needed downstream
        rep = run_pipeline(cfg, out_dir, stage_cache=stage_cache)
        rep.interference = None
        return rep, None
    except StageError as exc:
        return None, str(exc)


def sweep(cfg: ScenarioConfig, parameter: str, values, out_dir=None, workers: int = 1,
          stage_cache=None) -> list[SweepEntry]:
    """Independent runs with one parameter varied.

    Every run keeps the base config's seed, so noise realisations are
    common across values and differences come from the parameter alone.
    Failed runs are recorded with their error text and the sweep goes on.
    ``sweep.csv`` in ``out_dir`` collects the metrics of all runs.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; "
                         f"choose from {', '.join(SWEEP_PARAMETERS)}")
    path = SWEEP_PARAMETERS[parameter]
    jobs, entries = [], []
    for i, v in enumerate(values):
        v = int(v) if parameter == "aperture_pulses" else float(v)
        entries.append(SweepEntry(v))
        try:
            run_cfg = cfg.replace(**{path: v})
        except ValueError as exc:
            entries[-1].error = f"config: {exc}"
            continue
        sub = None if out_dir is None else Path(out_dir) / f"run_{i:02d}"
        jobs.append((len(entries) - 1, (run_cfg.to_dict(), sub, stage_cache)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, [j[1] for j in jobs]))
    else:
        results = [_sweep_one(j[1]) for j in jobs]
    for (idx, _), (rep, err) in zip(jobs, results):
        entries[idx].report, entries[idx].error = rep, err
    if out_dir is not None:
        write_sweep_csv(Path(out_dir) / "sweep.csv", parameter, entries)
        if cfg.output.plots:
            _plot_sweep(Path(out_dir) / "sweep.png", parameter, entries)
    return entries


def write_sweep_csv(path, parameter: str, entries) -> Path:
    keys = []
    for e in entries:
        if e.report is not None:
            keys += [k for k in e.report.metrics() if k not in keys]
    rows = []
    for e in entries:
        m = e.report.metrics() if e.report is not None else {}
        rows.append([e.value, "ok" if e.error is None else "error", e.error or ""]
                    + [m.get(k, "") for k in keys])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return io.write_rows_csv(path, [parameter, "status", "error"] + keys, rows)


def _plot_sweep(path, parameter, entries):
    from . import plotting
    ok = [e for e in entries if e.report is not None and e.report.images]
    if not ok:
        return None
    x = [e.value for e in ok]
    curves = {}
    for kind in ok[0].report.images:
        curves[kind] = [mean_width(e.report.spot_widths.get(kind, (np.nan, np.nan)))
                        for e in ok]
    return plotting.plot_curves(path, x, curves, parameter, "mean FWHM [m]")


# ---- analytic kernels ----------------------------------------------------------

def write_kernel_tables(cfg: ScenarioConfig, out_dir, points: int = 201) -> list[Path]:
    """Cross-sections and 2-D maps of the array, effective and Bessel kernels."""
    from . import resolution
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    omega = 2 * np.pi * cfg.pulse.carrier
    a = cfg.geometry.area
    height = cfg.trajectory.position[2] - cfg.layout().receiver_height
    rot = cfg.rotation_truth()
    duration = cfg.imaging.num_pulses * cfg.pulse.spacing
    lobe = resolution.main_lobe_scale(omega, a, height)
    x = np.linspace(-2 * lobe, 2 * lobe, points)
    xs = np.column_stack([x, np.zeros_like(x)])
    ys = np.column_stack([np.zeros_like(x), x])
    ba = resolution.kernel_array(xs, omega, a, height) / a ** 2
    beff_x = resolution.kernel_effective(xs, omega, a, height, rot, duration)
    beff_y = resolution.kernel_effective(ys, omega, a, height, rot, duration)
    norm = np.max(np.abs(beff_x))
    j0 = resolution.kernel_rotation_bessel(np.abs(x), omega, rot.theta_rot)
    files = [io.write_rows_csv(out / "kernel_sections.csv",
                               ["offset", "array", "effective_x", "effective_y", "bessel"],
                               zip(x, ba, beff_x / norm, beff_y / norm, j0))]
    n = 61
    c = np.linspace(-1.5 * lobe, 1.5 * lobe, n)
    gx, gy = np.meshgrid(c, c, indexing="xy")
    plane = np.stack([gx, gy], axis=-1)
    maps = {"array": resolution.kernel_array(plane, omega, a, height) / a ** 2,
            "effective": np.abs(resolution.kernel_effective(plane, omega, a, height, rot,
                                                             duration, nodes=257))}
    maps["effective"] /= maps["effective"].max()
    for name, m in maps.items():
        files.append(io.write_matrix_csv(out / f"kernel_{name}_map.csv", m))
        files.append(io.write_pgm(out / f"kernel_{name}_map.pgm", m))
    summary = [("wavelength", C0 / cfg.pulse.carrier), ("lambda_H_over_a", lobe),
               ("array_first_zero", resolution.first_zero(
                   lambda u: resolution.kernel_array(np.column_stack([u, 0 * u]), omega, a,
                                                     height), lobe * 0.5, lobe * 1.5)),
               ("finest_spot", resolution.finest_spot(C0 / cfg.pulse.carrier, rot.theta_rot))]
    files.append(io.write_rows_csv(out / "kernel_summary.csv", ["quantity", "value"], summary))
    if cfg.output.plots:
        from . import plotting
        files.append(plotting.plot_curves(out / "kernel_sections.png", x,
                                          {"array": ba, "effective x": beff_x / norm,
                                           "effective y": beff_y / norm, "J0": j0},
                                          "offset [m]", "normalized kernel"))
    return files
