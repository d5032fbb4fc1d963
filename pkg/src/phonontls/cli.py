"""Command-line front end: ``phonontls run`` and ``phonontls validate``.

Exit codes: 0 success, 1 stale artifacts found by ``validate --check-stale``,
2 configuration error, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load

log = logging.getLogger("phonontls")

EXIT_OK, EXIT_STALE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
OUT_DIR_ENV = "PHONONTLS_OUT_DIR"
DEFAULT_OUT_DIR = "results"
HASH_PREFIX = "# config_hash: "
MANIFEST = "manifest.json"


class NumericalFailure(RuntimeError):
    pass


class ArtifactWriter:
    """Writes into a staging directory; :meth:`commit` moves everything into place."""

    def __init__(self, out_dir: Path, config_hash: str):
        self.out_dir = out_dir
        self.hash = config_hash
        out_dir.mkdir(parents=True, exist_ok=True)
        self.staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        p = self.staging / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.names.append(name)
        return p

    def csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            fh.write(f"{HASH_PREFIX}{self.hash}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])

    def json(self, name: str, obj: dict) -> None:
        doc = {"config_hash": self.hash}
        doc.update(obj)
        with open(self.path(name), "w") as fh:
            json.dump(_plain(doc), fh, indent=2, sort_keys=False)
            fh.write("\n")

    def figure(self, name: str) -> str:
        return str(self.path(f"figures/{name}"))

    def commit(self) -> None:
        for name in self.names:
            dst = self.out_dir / name
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(self.staging / name, dst)
        self.discard()

    def discard(self) -> None:
        shutil.rmtree(self.staging, ignore_errors=True)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    return x


def _suffix(i: int, n: int) -> str:
    return "" if n == 1 else f"_{i}"


# ---------------------------------------------------------------------------
# pipelines


def _ringdown(rc: RunConfig, w: ArtifactWriter, threads: int) -> dict:
    from .experiments import run_ringdown
    from .plotting import ringdown_figure
    from .readout import fit_double_exp

    tol = rc.section("tolerances")
    k1 = rc.angular("fit", "kappa1_fixed")
    fits = []
    for i, alpha in enumerate(rc.alphas):
        sfx = _suffix(i, len(rc.alphas))
        ds = run_ringdown(rc.system, alpha, rc.taus, rtol=tol["rtol"], atol=tol["atol"])
        n_levels = ds.pn_matrix.shape[1]
        w.csv(f"ringdown{sfx}.csv", ["tau_s", "nbar"] + [f"p{n}" for n in range(n_levels)],
              ([t, nb, *p] for t, nb, p in zip(ds.taus, ds.nbar, ds.pn_matrix)))
        traj = ds.trajectory
        w.csv(f"trajectory{sfx}.csv", traj.csv_header(), traj.csv_rows())
        fit = fit_double_exp(ds.taus, ds.nbar, fixed_kappa1=k1)
        fits.append({"alpha": alpha, "nbar0": float(ds.nbar[0]), "fit": fit.to_dict()})
        if rc.figures:
            ringdown_figure(ds.taus, ds.nbar, fit, w.figure(f"ringdown{sfx}.png"), w.hash, pn=ds.pn_matrix)
    w.json("double_exp_fit.json", {"model": "a1*exp(-kappa1*tau) + a2*exp(-kappa2*tau)", "units": "rad/s", "fits": fits})
    return {"fits": len(fits)}


def _interferometry(rc: RunConfig, w: ArtifactWriter, threads: int) -> dict:
    from .experiments import run_interferometry
    from .plotting import envelope_figure, fringe_figure
    from .readout import fit_interference, fit_t2m

    tol = rc.section("tolerances")
    results = []
    for i, alpha in enumerate(rc.alphas):
        sfx = _suffix(i, len(rc.alphas))
        ds = run_interferometry(rc.system, alpha, rc.taus, rc.phis, threads=threads,
                                rtol=tol["rtol"], atol=tol["atol"])
        w.csv(f"fringes{sfx}.csv", ["tau_s", "phi_rad", "nbar"], ds.rows())
        fits = [fit_interference(ds.phis, row) for row in ds.nbar_grid]
        amps = np.array([f.params["C"] for f in fits])
        errs = np.array([f.stderr["C"] for f in fits])
        w.csv(f"fringe_amplitudes{sfx}.csv", ["tau_s", "C", "C_stderr", "phi0_rad", "nbar_off", "relative_residual"],
              ([t, f.params["C"], e, f.params["phi0"], f.params["nbar_off"], f.flags["relative_residual"]]
               for t, f, e in zip(ds.taus, fits, errs)))
        t2 = fit_t2m(ds.taus, amps)
        results.append({"alpha": alpha, "fit": t2.to_dict()})
        if rc.figures:
            fringe_figure(ds.phis, ds.nbar_grid, ds.taus, fits, w.figure(f"fringes{sfx}.png"), w.hash)
            envelope_figure(ds.taus, amps, t2, w.figure(f"t2m{sfx}.png"), w.hash)
    w.json("t2m_fit.json", {"model": "C0*exp(-tau/T2m)", "fits": results})
    return {"fits": len(results)}


def _read_columns(path, required) -> dict[str, np.ndarray]:
    if not os.path.isfile(path):
        raise ConfigError(f"input file {path} does not exist")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise ConfigError(f"{path}: missing columns {missing}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]])
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric or ragged data ({exc})") from exc
    if data.size == 0:
        raise ConfigError(f"{path}: no data rows")
    return {h: data[:, j] for j, h in enumerate(header)}


def _ramsey(rc: RunConfig, w: ArtifactWriter, threads: int) -> dict:
    from .plotting import ramsey_figure
    from .readout import RamseySignal, _ramsey_model_quad, fit_ramsey, synthesize_ramsey

    r = rc.section("ramsey")
    omega0, chi2, kappa = rc.angular("ramsey", "omega0"), rc.angular("ramsey", "two_chi"), rc.angular("ramsey", "kappa")
    chi = chi2 / 2
    src = rc.section("io").get("input")
    if src:
        cols = _read_columns(src, ("time_s", "signal"))
        sig = RamseySignal(cols["time_s"], cols["signal"])
    else:
        times = np.linspace(0.0, r["window_s"], r["n_points"])
        sig = synthesize_ramsey(np.array(r["probs"]), omega0, chi, kappa, times=times)
        if r["noise"] > 0:
            rng = np.random.default_rng(rc.seed)
            sig = RamseySignal(sig.times, sig.values + r["noise"] * rng.standard_normal(sig.times.size))
        w.csv("signal.csv", ["time_s", "signal"], zip(sig.times, sig.values))
    hints = {"omega0": omega0, "chi": chi, "kappa": kappa} if r["use_hints"] else None
    dist, fit = fit_ramsey(sig, r["n_max"], hints, phase_mode=r["phase_mode"])
    w.csv("pn.csv", ["n", "p", "sigma"], ([n, p, s] for n, (p, s) in enumerate(zip(dist.probs, dist.sigmas))))
    w.json("ramsey_fit.json", {"nbar": dist.mean(), "probs": dist.probs, "sigmas": dist.sigmas, "fit": fit.to_dict()})
    if rc.figures:
        model = None
        if r["phase_mode"] == "per_level":
            model = _fit_curve(sig, fit, r["n_max"])
        ramsey_figure(sig.times, sig.values, model, dist.probs, dist.sigmas, w.figure("ramsey.png"), w.hash)
    return {"nbar": dist.mean()}


def _fit_curve(sig, fit, n_max):
    p = fit.params
    n = np.arange(n_max + 1)
    amps = np.array([p[f"A_{k}"] for k in n])
    phases = np.array([p[f"phi_{k}"] for k in n])
    w = p["omega0"] + 2 * p["chi"] * n
    t = sig.times
    return np.exp(-p["kappa"] * t) * (amps * np.cos(np.outer(t, w) + phases)).sum(axis=1)


def _tls(rc: RunConfig, w: ArtifactWriter, threads: int) -> dict:
    from . import tlsparams as tp
    from .plotting import histogram_figure

    t = rc.section("tls")
    mat = tp.MaterialConstants(rho=t["rho"], v=t["v"], p0=t["p0"], delta0=t["delta0"])
    omega_m = rc.angular("tls", "omega_m")
    out = {}
    xi = t["xi_zpf"]
    if "mode_field" in t:
        mode = tp.ModeField.from_csv(t["mode_field"], omega_m)
        m_eff = tp.effective_mass(mode, mat.rho)
        x_zpf = tp.zero_point_displacement(m_eff, omega_m)
        xi = tp.zero_point_strain(mode, x_zpf)
        out.update({"m_eff_kg": m_eff, "x_zpf_m": x_zpf, "xi_zpf_from_field": xi, "field_points": mode.n_points})
    gamma = tp.elastic_dipole(mat)
    g = tp.tls_coupling_rate(gamma, xi, mat.hbar)
    n_tls = tp.estimate_tls_count(mat.p0, t["volume_m3"], rc.angular("tls", "delta_omega"), mat.hbar)
    lo, hi = tp.coupling_bounds(xi, mat)
    out.update({
        "elastic_dipole_J": gamma,
        "elastic_dipole_eV": gamma / 1.602176634e-19,
        "g_tls_hz": g / tp.TWO_PI,
        "tls_count": n_tls,
        "xi_zpf_used": xi,
        "g_tls_bounds_hz": [lo / tp.TWO_PI, hi / tp.TWO_PI],
    })
    w.json("tls_params.json", out)
    s = tp.sample_tls_distributions(t["n_samples"], rc.seed, xi_zpf=xi, mat=mat)
    hists = {}
    for q, label in (("gamma", "elastic dipole (J)"), ("g_tls", "g_TLS / 2pi (Hz)")):
        counts, edges = s.histogram(q, bins=t["bins"])
        values = s.g_tls / tp.TWO_PI if q == "g_tls" else s.gamma
        hists[q] = {"median": float(np.median(values)), "edges": edges, "counts": counts}
        if rc.figures:
            histogram_figure(edges, counts, label, w.figure(f"{q}_hist.png"), w.hash)
    w.json("tls_samples.json", {"n_samples": t["n_samples"], "seed": rc.seed, "histograms": hists})
    return {"g_tls_hz": g / tp.TWO_PI}


def _mc(rc: RunConfig, w: ArtifactWriter, threads: int) -> dict:
    from .montecarlo import FitDataset, ResampleConfig, resample_fit, resample_pn
    from .plotting import histogram_figure
    from .readout import PhononDistribution, fit_double_exp, fit_t2m

    m = rc.section("mc")
    cfg = ResampleConfig(n_iterations=m["n_iterations"], seed=rc.seed, threads=threads, bins=m["bins"])
    src = rc.section("io").get("input")
    if m["mode"] == "pn":
        if src:
            cols = _read_columns(src, ("p", "sigma"))
            pn = PhononDistribution(cols["p"], cols["sigma"])
        else:
            pn = PhononDistribution(np.array(m["probs"]), np.array(m["sigmas"]))
        reports = [resample_pn(pn, cfg)]
    else:
        if m["mode"] == "ringdown-fit":
            cols = _read_columns(src, ("tau_s", "nbar"))
            x, y = cols["tau_s"], cols["nbar"]
            k1 = rc.angular("fit", "kappa1_fixed")
            fn = lambda xx, yy: fit_double_exp(xx, yy, fixed_kappa1=k1)  # noqa: E731
            sig = cols.get("nbar_stderr")
        else:
            cols = _read_columns(src, ("tau_s", "C"))
            x, y = cols["tau_s"], cols["C"]
            fn = fit_t2m
            sig = cols.get("C_stderr")
        if m.get("sigma_rel") is not None:
            sig = m["sigma_rel"] * np.abs(y)
        if sig is None:
            raise ConfigError("[mc] no uncertainty column in input; set sigma_rel")
        reports = list(resample_fit(FitDataset(x, y, sig), fn, cfg).values())
    w.json("mc_report.json", {"mode": m["mode"], "seed": rc.seed, "n_iterations": cfg.n_iterations,
                              "reports": [r.to_dict() for r in reports]})
    if rc.figures:
        for r in reports:
            histogram_figure(r.edges, r.counts, r.name, w.figure(f"mc_{r.name}.png"), w.hash, marker=r.estimate)
    return {r.name: r.std for r in reports}


def _bvd(rc: RunConfig, w: ArtifactWriter, threads: int) -> dict:
    from . import tlsparams as tp
    from .plotting import admittance_figure

    b = rc.section("bvd")
    omega = np.linspace(rc.angular("bvd", "f_start"), rc.angular("bvd", "f_stop"), b["n_points"])
    adm = tp.bvd_admittance(omega, b["c0_f"], b["cm_f"], b["lm_h"], b["r_ohm"])
    w.csv("admittance.csv", ["freq_hz", "re_Y", "im_Y"], adm.rows())
    fs = tp.series_resonance(b["cm_f"], b["lm_h"]) / tp.TWO_PI
    w.json("bvd.json", {
        "series_resonance_hz": fs,
        "mode_frequency_hz": tp.MODE_FREQUENCY_HZ,
        "relative_deviation": fs / tp.MODE_FREQUENCY_HZ - 1,
        "poles_hit": int(adm.at_pole.sum()),
    })
    if rc.figures:
        admittance_figure(adm.omega / tp.TWO_PI, adm.y, w.figure("admittance.png"), w.hash)
    return {"series_resonance_hz": fs}


PIPELINES = {
    "ringdown": _ringdown,
    "interferometry": _interferometry,
    "ramsey-fit": _ramsey,
    "tls-params": _tls,
    "mc-report": _mc,
    "bvd-sweep": _bvd,
}


def versions() -> dict:
    import matplotlib
    import scipy

    return {
        "phonontls": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


def run(rc: RunConfig, out_dir: Path, threads: int = 1) -> tuple[int, str]:
    from .hilbert import DimensionError, TruncationError
    from .readout import FitError
    from .rk import IntegrationError

    try:
        w = ArtifactWriter(out_dir, rc.hash)
    except OSError as exc:
        return EXIT_IO, f"cannot create output directory {out_dir}: {exc}"
    t0 = time.perf_counter()
    try:
        summary = PIPELINES[rc.experiment](rc, w, threads)
        w.json(MANIFEST, {
            "experiment": rc.experiment,
            "seed": rc.seed,
            "config_source": rc.source,
            "config": rc.sections,
            "versions": versions(),
            "artifacts": sorted(w.names) + [MANIFEST],
            "summary": summary,
            "wall_time_s": time.perf_counter() - t0,
        })
        w.commit()
    except ConfigError as exc:
        w.discard()
        return EXIT_CONFIG, f"config error: {exc}"
    except (TruncationError, DimensionError) as exc:
        w.discard()
        return EXIT_CONFIG, f"config error: {exc}"
    except (IntegrationError, FitError, FloatingPointError, np.linalg.LinAlgError, NumericalFailure) as exc:
        w.discard()
        return EXIT_NUMERIC, f"numerical failure: {exc}"
    except OSError as exc:
        w.discard()
        return EXIT_IO, f"I/O failure: {exc}"
    except BaseException:
        w.discard()
        raise
    return EXIT_OK, f"wrote {len(w.names)} artifacts to {out_dir} (config hash {rc.hash})"


def artifact_hash(path: Path) -> str | None:
    try:
        if path.suffix == ".csv":
            with open(path) as fh:
                first = fh.readline()
            return first[len(HASH_PREFIX):].strip() if first.startswith(HASH_PREFIX) else None
        if path.suffix == ".json":
            with open(path) as fh:
                return json.load(fh).get("config_hash")
    except (OSError, ValueError, AttributeError):
        return None
    return None


def stale_artifacts(out_dir: Path, expected: str) -> list[tuple[str, str | None]]:
    stale = []
    for p in sorted(out_dir.glob("*")):
        if p.suffix in (".csv", ".json"):
            h = artifact_hash(p)
            if h != expected:
                stale.append((p.name, h))
    return stale


def _describe(rc: RunConfig) -> list[str]:
    lines = [f"experiment: {rc.experiment}", f"seed: {rc.seed}", f"config hash: {rc.hash}"]
    if rc.system is not None:
        L = rc.system.layout
        lines.append(f"system: n_tls={rc.system.n_tls} n_max={rc.system.n_max} total_dim={L.total_dim}")
        lines.append(f"alphas: {', '.join(f'{a:.4g}' for a in rc.alphas)}")
        lines.append(f"delays: {len(rc.taus)} from {rc.taus[0]:.4g} s to {rc.taus[-1]:.4g} s")
        if rc.phis is not None:
            lines.append(f"phases: {len(rc.phis)}")
    lines.append("resolved configuration:")
    lines.append(json.dumps(rc.sections, indent=2, sort_keys=True))
    return lines


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phonontls", description="Mechanical mode + TLS bath simulations and fits.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed (unsigned 64-bit)")

    r = sub.add_parser("run", help="run the configured pipeline and write artifacts")
    common(r)
    r.add_argument("--out-dir", default=None, help=f"output directory (default ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
    r.add_argument("--threads", type=int, default=1)

    v = sub.add_parser("validate", help="check a configuration without computing")
    common(v)
    v.add_argument("--out-dir", default=None)
    v.add_argument("--check-stale", action="store_true", help="report artifacts in --out-dir written by a different config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = load(args.config, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)

    if args.command == "validate":
        print("OK")
        for line in _describe(rc):
            print(line)
        if args.check_stale:
            if not out_dir.is_dir():
                print(f"no artifacts: {out_dir} does not exist", file=sys.stderr)
                return EXIT_IO
            stale = stale_artifacts(out_dir, rc.hash)
            for name, h in stale:
                print(f"stale: {name} (hash {h})")
            return EXIT_STALE if stale else EXIT_OK
        return EXIT_OK

    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    code, msg = run(rc, out_dir, args.threads)
    print(msg, file=sys.stderr if code else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
