"""Execute one configured run and record what it produced."""

from __future__ import annotations

import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np

from . import __version__, batch
from . import experiments as ex
from .config import RunConfig
from .engine import generate_batch, reconstruct_batch, record_times
from .io import (
    BinaryWriter,
    TableWriter,
    atomic_open,
    read_records,
    sha256_file,
    write_ndjson,
    write_table,
)

MANIFEST = "manifest.ndjson"


@dataclass
class RunManifest:
    config: dict
    version: str
    platform: dict
    outputs: list[dict] = field(default_factory=list)
    wall_clock_s: float = 0.0
    n_traj_completed: int = 0
    status: str = "running"
    error: str | None = None

    def lines(self) -> list[dict]:
        head = {"kind": "run", "version": self.version, "platform": self.platform,
                "status": self.status, "wall_clock_s": self.wall_clock_s,
                "n_traj_completed": self.n_traj_completed}
        if self.error:
            head["error"] = self.error
        return [head, {"kind": "config", **self.config}] + [{"kind": "output", **o} for o in self.outputs]

    def checksums(self) -> dict[str, str]:
        return {o["path"]: o["sha256"] for o in self.outputs if o.get("valid")}


def platform_fingerprint() -> dict:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "machine": platform.machine(),
        "system": platform.system(),
    }


class _Outputs:
    def __init__(self, out_dir: str, fmt: str):
        self.out_dir = out_dir
        self.fmt = fmt
        self.paths: list[str] = []

    @property
    def table_fmt(self) -> str:
        # the raw binary layout only covers record and trajectory arrays
        return "csv" if self.fmt == "bin" else self.fmt

    def path(self, stem: str, array: bool = False) -> str:
        ext = "qtrj" if array and self.fmt == "bin" else self.table_fmt
        p = os.path.join(self.out_dir, f"{stem}.{ext}")
        self.paths.append(p)
        return p

    def table(self, stem: str, columns, rows) -> None:
        write_table(self.path(stem), columns, rows, self.table_fmt)

    def summary(self, objects: list[dict]) -> None:
        p = os.path.join(self.out_dir, "summary.ndjson")
        self.paths.append(p)
        write_ndjson(p, objects)


def _spec(cfg: RunConfig, outputs=("raw_average",), params=None) -> ex.EnsembleSpec:
    return ex.EnsembleSpec(params or cfg.params, cfg.n_traj, cfg.master_seed, cfg.subset, tuple(outputs))


# ---------------------------------------------------------------------------
# array streams (generate / reconstruct)


class _ArraySink:
    """Writes ``(n, n_times, 3)`` blocks as QTRJ or as one row per (trajectory, time)."""

    def __init__(self, outputs: _Outputs, stem: str, n_traj: int, times: np.ndarray, cols):
        self.path = outputs.path(stem, array=True)
        self.binary = outputs.fmt == "bin"
        self.times = times
        self.single = n_traj == 1
        self._ctx = atomic_open(self.path, "wb" if self.binary else "w")
        fh = self._ctx.__enter__()
        if self.binary:
            self.writer = BinaryWriter(fh, n_traj, len(times), 3)
        else:
            head = ("t_us", *cols) if self.single else ("trajectory", "t_us", *cols)
            self.writer = TableWriter(fh, head, outputs.table_fmt)

    def write(self, indices, block: np.ndarray) -> None:
        if self.binary:
            self.writer.write(block)
            return
        for i, traj in zip(indices, block):
            for t, row in zip(self.times, traj):
                if self.single:
                    self.writer.write((t, *row))
                else:
                    self.writer.write((int(i), t, *row))

    def close(self, ok: bool = True) -> None:
        if ok:
            self._ctx.__exit__(None, None, None)
        else:
            self._ctx.__exit__(RuntimeError, RuntimeError("aborted"), None)


def _generate_chunk(params, seed, start, stop):
    b = generate_batch(params, seed, range(start, stop))
    return b.indices, b.records, b.omniscient


def _reconstruct_chunk(params, seed, subset, start, stop):
    b = generate_batch(params, seed, range(start, stop))
    return b.indices, reconstruct_batch(b.records, params, subset)


def _run_generate(cfg: RunConfig, out: _Outputs, manifest: RunManifest) -> None:
    p = cfg.params
    rec_t = (np.arange(p.n_bins) + 0.5) * p.dt_record
    recs = _ArraySink(out, "records", cfg.n_traj, rec_t, ("u", "v", "w"))
    omni = _ArraySink(out, "omniscient", cfg.n_traj, record_times(p), ("x", "y", "z"))
    ok = False
    try:
        fn = partial(_generate_chunk, p, cfg.master_seed)
        for idx, r, o in batch.map_chunks(fn, cfg.n_traj, cfg.workers, cfg.option("chunk_size")):
            recs.write(idx, r)
            omni.write(idx, o)
            manifest.n_traj_completed += len(idx)
        ok = True
    finally:
        recs.close(ok)
        omni.close(ok)


def _run_reconstruct(cfg: RunConfig, out: _Outputs, manifest: RunManifest) -> None:
    p = cfg.params
    source = cfg.option("records_file")
    sink = None
    ok = False
    try:
        if source:
            samples = read_records(source)
            if samples.shape[1] != p.n_bins:
                raise ValueError(f"{source} has {samples.shape[1]} bins, config implies {p.n_bins}")
            sink = _ArraySink(out, "trajectories", len(samples), record_times(p), ("x", "y", "z"))
            cs = cfg.option("chunk_size")
            for a in range(0, len(samples), cs):
                idx = np.arange(a, min(a + cs, len(samples)))
                sink.write(idx, reconstruct_batch(samples[idx], p, cfg.subset))
                manifest.n_traj_completed += len(idx)
        else:
            sink = _ArraySink(out, "trajectories", cfg.n_traj, record_times(p), ("x", "y", "z"))
            fn = partial(_reconstruct_chunk, p, cfg.master_seed, cfg.subset)
            for idx, states in batch.map_chunks(fn, cfg.n_traj, cfg.workers, cfg.option("chunk_size")):
                sink.write(idx, states)
                manifest.n_traj_completed += len(idx)
        ok = True
    finally:
        if sink is not None:
            sink.close(ok)


# ---------------------------------------------------------------------------
# ensemble modes

AVERAGE_COLUMNS = ("t_us", "u_tilde", "v_tilde", "w_tilde", "se_u", "se_v", "se_w", "x_me", "y_me", "z_me")


def _average_rows(ra: ex.RawAverage, prefix=()):
    for k, t in enumerate(ra.times):
        yield (*prefix, t, *ra.mean[k], *ra.sem[k], *ra.me[k])


def _average_summary(ra: ex.RawAverage) -> dict:
    within = ra.within(5.0)
    frac = {c: (None if c in ra.absent else float(within[:, i].mean())) for i, c in enumerate("uvw")}
    period = None
    if "w" not in ra.absent:
        try:
            period = ex.oscillation_period(ra.times, ra.mean[:, 2], t_max=10.0)
        except ValueError:
            period = None
    return {"kind": "average", "n_traj": ra.n_traj, "absent": list(ra.absent),
            "fraction_within_5se": frac, "w_period_us": period}


def _run_average(cfg: RunConfig, out: _Outputs, manifest: RunManifest) -> None:
    ra = ex.raw_average_tomography(_spec(cfg), cfg.workers, cfg.option("chunk_size"))
    out.table("average", AVERAGE_COLUMNS, _average_rows(ra))
    out.summary([_average_summary(ra)])
    manifest.n_traj_completed = ra.n_traj


def _run_validate(cfg: RunConfig, out: _Outputs, manifest: RunManifest) -> None:
    T = cfg.option("validation_time_us")
    data = ex.collect_validation_data(_spec(cfg, ("validation",)), T, cfg.workers, cfg.option("chunk_size"))
    final = data.filter_final(cfg.subset)
    rows, summary = [], []
    for a, axis in enumerate(ex.AXES):
        vb = ex.bin_validation(final[:, a], data.outcomes[:, a], a, T, cfg.option("bin_width"))
        for k in np.nonzero(vb.count)[0]:
            rows.append((axis, vb.centers[k], int(vb.count[k]), vb.mean_outcome[k], vb.sem[k],
                         vb.mean_coordinate[k]))
        fit = asdict(vb.fit) if vb.fit else None
        summary.append({"kind": "validation_fit", "axis": axis, "T_us": T, "fit": fit,
                        "bins_used": int(vb.used.sum()), "identity_chi2": vb.identity_chi2()})
    out.table("validation", ("axis", "bin_center", "count", "mean_outcome", "se", "mean_coordinate"), rows)
    out.summary(summary)
    manifest.n_traj_completed = len(data.outcomes)


def _run_histogram(cfg: RunConfig, out: _Outputs, manifest: RunManifest) -> None:
    taus = cfg.option("taus_us")
    sd = ex.state_distribution(_spec(cfg, ("histograms",)), taus, cfg.option("planes"),
                               cfg.option("hist_bins"), cfg.workers, cfg.option("chunk_size"))

    def hist_rows():
        for g in sd.grids:
            c = g.centers
            for i in range(g.n_bins):
                for j in range(g.n_bins):
                    yield (g.plane, g.tau, c[i], c[j], int(g.counts[i, j]))

    def overlay_rows():
        for tau in sd.taus:
            t, m = sd.overlay(tau, cfg.option("overlay_trim_us"))
            for tk, mk in zip(t, m):
                yield (tau, tk, *mk)

    out.table("histogram", ("plane", "tau_us", "x_center", "y_center", "count"), hist_rows())
    out.table("overlay", ("tau_us", "t_us", "x", "y", "z"), overlay_rows())
    summary = []
    for k, tau in enumerate(sd.taus):
        entry = {"kind": "distribution", "tau_us": tau, "subset": sd.subset,
                 "total": int(len(sd.snapshots))}
        try:
            a = ex.asymmetry_statistic(sd.snapshots[:, k])
            entry["asymmetry"] = {**asdict(a), "ratio": a.ratio, "ratio_se": a.ratio_se,
                                  "significance": a.significance}
        except ValueError as exc:
            entry["asymmetry"] = {"error": str(exc)}
        if "xz" in cfg.option("planes"):
            entry["polar_modes_xz"] = asdict(ex.polar_modes(sd.grid("xz", tau)))
        summary.append(entry)
    out.summary(summary)
    manifest.n_traj_completed = len(sd.snapshots)


def _run_sweep(cfg: RunConfig, out: _Outputs, manifest: RunManifest) -> None:
    T = cfg.option("validation_time_us")
    data = ex.collect_validation_data(_spec(cfg, ("validation",)), T, cfg.workers, cfg.option("chunk_size"))
    hw, step = cfg.option("sweep_half_width"), cfg.option("sweep_step")
    ef = ex.efficiency_grid(cfg.params.eta_f, hw, step)
    ed = ex.efficiency_grid(cfg.params.eta_d, hw, step)
    ef, ed = ef[(ef >= 0) & (ef <= 1)], ed[(ed >= 0) & (ed <= 1)]
    res = ex.efficiency_sweep(data, ef, ed, cfg.subset)
    rows = ((f, d, res.score[i, j], bool(res.region[i, j]))
            for i, f in enumerate(res.eta_f) for j, d in enumerate(res.eta_d))
    out.table("sweep", ("eta_f", "eta_d", "score", "in_region"), rows)
    (f_lo, f_hi), (d_lo, d_hi) = res.region_bounds()
    out.summary([{"kind": "sweep", "best_eta_f": res.best[0], "best_eta_d": res.best[1],
                  "region_eta_f": [f_lo, f_hi], "region_eta_d": [d_lo, d_hi],
                  "truth_in_region": res.contains(cfg.params.eta_f, cfg.params.eta_d)}])
    manifest.n_traj_completed = len(data.outcomes)


def _grid_specs(cfg: RunConfig) -> list[tuple[str, float, float, ex.EnsembleSpec]]:
    path = cfg.option("grid_file")
    if path:
        with open(path, encoding="utf-8") as fh:
            grid = json.load(fh)["grid"]
    else:
        grid = ex.load_presets()["grid"]
    specs = []
    for i, rabi in enumerate(grid["rabi_per_us"]):
        for j, gd in enumerate(grid["gamma_d_per_us"]):
            p = cfg.params.with_(omega=2 * np.pi * rabi, gamma_d=gd)
            specs.append((f"grid-{i}-{j}", rabi, gd, _spec(cfg, params=p)))
    return specs


def _run_grid(cfg: RunConfig, out: _Outputs, manifest: RunManifest) -> None:
    path = out.path("grid")
    summary = []
    with atomic_open(path) as fh:
        w = TableWriter(fh, ("config_id", "rabi_per_us", "gamma_d_per_us", *AVERAGE_COLUMNS), out.table_fmt)
        for cid, rabi, gd, spec in _grid_specs(cfg):
            ra = ex.raw_average_tomography(spec, cfg.workers, cfg.option("chunk_size"))
            w.write_many(_average_rows(ra, (cid, rabi, gd)))
            summary.append({"config_id": cid, "rabi_per_us": rabi, "gamma_d_per_us": gd,
                            **_average_summary(ra)})
            manifest.n_traj_completed += ra.n_traj
    out.summary(summary)


MODE_RUNNERS = {
    "generate": _run_generate,
    "reconstruct": _run_reconstruct,
    "average": _run_average,
    "validate": _run_validate,
    "histogram": _run_histogram,
    "sweep": _run_sweep,
    "grid": _run_grid,
}


def run(cfg: RunConfig) -> RunManifest:
    """Run ``cfg.mode`` and write its outputs plus ``manifest.ndjson`` into ``cfg.out_dir``.

    On failure the manifest is still written, with status ``failed`` and every
    output marked invalid, and the exception propagates.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    manifest = RunManifest(
        config={k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(cfg.resolved.items())},
        version=__version__,
        platform=platform_fingerprint(),
    )
    out = _Outputs(cfg.out_dir, cfg.format)
    start = time.perf_counter()
    try:
        MODE_RUNNERS[cfg.mode](cfg, out, manifest)
        manifest.status = "complete"
    except BaseException as exc:
        manifest.status = "failed"
        manifest.error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest.wall_clock_s = round(time.perf_counter() - start, 3)
        ok = manifest.status == "complete"
        for p in out.paths:
            rel = os.path.relpath(p, cfg.out_dir)
            if ok and os.path.exists(p):
                manifest.outputs.append({"path": rel, "sha256": sha256_file(p),
                                         "bytes": os.path.getsize(p), "valid": True})
            else:
                manifest.outputs.append({"path": rel, "valid": False})
        write_ndjson(os.path.join(cfg.out_dir, MANIFEST), manifest.lines())
    return manifest
