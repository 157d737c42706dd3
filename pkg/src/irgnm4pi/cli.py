"""Command line: ``irgnm4pi {simulate,reconstruct,rates,psf}``.

Every command writes a run log (``<command>.log``) whose bytes depend only
on the effective config and seed; wall-clock timings and the thread count
go to ``timings.json`` next to it. The exit status is 1 when any check
marked PASS/FAIL in the log failed, 2 on errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments, fourpi, grid, plotting
from .fieldio import RunLog, dumps_json, write_field
from .irgnm import VARIANTS, IrgnmDivergence
from .pipeline import (DEFAULT_CONFIG, build_setup, load_scene, merge_config, reconstruct,
                       save_scene, simulate_scene)

log = logging.getLogger("irgnm4pi")


class Timer:
    def __init__(self):
        self.marks: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def mark(self, name: str) -> None:
        self.marks[name] = time.perf_counter() - self._t0

    def write(self, out: Path, threads: int) -> None:
        (out / "timings.json").write_text(json.dumps(
            {"threads": threads, "seconds": self.marks}, indent=2, sort_keys=True) + "\n")


def _load_config(args) -> dict:
    override = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = merge_config(DEFAULT_CONFIG, override)
    if getattr(args, "variant", None):
        cfg["irgnm"]["variant"] = args.variant
    return cfg


def _images(out: Path, name: str, values: np.ndarray, spacing, title: str) -> None:
    sl = plotting.to_slice(values)
    plotting.write_pgm(out / name, sl)
    plotting.save_image(out / name, sl, spacing[:1] + spacing[-1:], title)


def cmd_simulate(args, cfg: dict, out: Path, timer: Timer) -> RunLog:
    runlog = RunLog("simulate", {"seed": args.seed, "config": cfg})
    setup = build_setup(cfg)
    sim = simulate_scene(cfg, setup, args.seed)
    timer.mark("simulate")
    save_scene(sim, setup, out)
    h = setup.box.voxel_spacing
    for name, arr in (("object_true", sim.object), ("phase_true", sim.phase_field),
                      ("data_exact", sim.exact), ("data", sim.noisy)):
        _images(out, name, arr, h, name.replace("_", " "))
    runlog.add_metric("object_dims", "x".join(map(str, setup.box.object_dims)))
    runlog.add_metric("data_dims", "x".join(map(str, setup.box.extended_dims)))
    runlog.add_metric("object_scale", sim.scale)
    runlog.add_metric("exact_peak", float(np.max(sim.exact)))
    runlog.add_metric("noisy_peak", float(np.max(sim.noisy)))
    runlog.add_metric("relative_noise", sim.relative_noise)
    runlog.add_metric("clamped_negative_means", sim.clamped)
    timer.mark("write")
    return runlog


def _run_variant(cfg, setup, data, truth, variant, out: Path, runlog: RunLog, timer: Timer, suffix: str):
    try:
        state, trace, problem = reconstruct(cfg, setup, data, truth, variant)
    except IrgnmDivergence as exc:
        runlog.add_tsv(f"trace{suffix}", exc.trace.to_tsv())
        runlog.add_metric(f"run_completed{suffix}", 0, passed=False)
        return None
    timer.mark(f"reconstruct{suffix}")
    h = setup.box.voxel_spacing
    phase_grid = setup.model.phase_field(state.phase)
    write_field(out / f"object_rec{suffix}", state.object, h, "object")
    write_field(out / f"phase_rec{suffix}", phase_grid, h, "phase")
    write_field(out / f"phase_coeffs{suffix}", state.phase, (1.0,) * state.phase.ndim, "phase",
                axis_order=[f"degree_{a}" for a in "xyz"[:state.phase.ndim]],
                meta={"basis_degrees": list(setup.basis.degrees),
                      "basis_halfwidths_nm": list(setup.basis.halfwidths)})
    _images(out, f"object_rec{suffix}", state.object, h, f"object ({variant})")
    _images(out, f"phase_rec{suffix}", phase_grid, h, f"phase ({variant})")
    cols = {"residual": trace.column("residual")}
    if truth is not None:
        cols["object error"] = trace.column("obj_error")
        cols["phase error"] = trace.column("phase_error")
    plotting.plot_trace(out / f"trace{suffix}", cols, f"{variant} IRGNM")
    runlog.add_tsv(f"trace{suffix}", trace.to_tsv())
    runlog.add_records(f"kkt{suffix}", trace.kkt_reports)
    runlog.add_metric(f"stop_index{suffix}", trace.stop_index)
    runlog.add_metric(f"stop_reason{suffix}", trace.stop_reason)
    runlog.add_metric(f"final_residual{suffix}", float(trace.column("residual")[-1]))
    runlog.add_metric(f"inner_solves_converged{suffix}",
                      int(all(r["converged"] for r in trace.kkt_reports)))
    if truth is not None:
        runlog.add_metric(f"final_object_error{suffix}", float(trace.column("obj_error")[-1]))
        runlog.add_metric(f"final_phase_error{suffix}", float(trace.column("phase_error")[-1]))
    if variant == "constrained":
        runlog.add_metric(f"object_min{suffix}", float(state.object.min()),
                          passed=bool(np.all(state.object >= 0)))
    return trace


def cmd_reconstruct(args, cfg: dict, out: Path, timer: Timer) -> RunLog:
    runlog = RunLog("reconstruct", {"seed": args.seed, "config": cfg})
    setup = build_setup(cfg)
    if cfg["data"]["dir"]:
        data, exact, truth = load_scene(cfg["data"]["dir"])
    else:
        sim = simulate_scene(cfg, setup, args.seed)
        save_scene(sim, setup, out)
        data, exact = sim.noisy, sim.exact
        truth = fourpi.SceneTruth(sim.object, sim.phase_field)
        runlog.add_metric("relative_noise", sim.relative_noise)
    if cfg["data"]["use_exact"]:
        if exact is None:
            raise ValueError("use_exact requested but no exact data available")
        data = exact
    timer.mark("data")
    variant = cfg["irgnm"]["variant"]
    _images(out, "data_input", data, setup.box.voxel_spacing, "data")
    if variant != "all":
        _run_variant(cfg, setup, data, truth, variant, out, runlog, timer, "")
        return runlog
    finals = {}
    for v in VARIANTS:
        tr = _run_variant(cfg, setup, data, truth, v, out, runlog, timer, f"_{v}")
        if tr is not None and truth is not None:
            finals[v] = float(tr.column("obj_error")[-1])
    if truth is not None and len(finals) == len(VARIANTS):
        c = finals["constrained"]
        for other in ("projected", "unconstrained"):
            runlog.add_metric(f"margin_{other}_minus_constrained", finals[other] - c)
        runlog.add_metric("ordering_constrained_best", int(c <= min(finals.values())),
                          passed=c <= finals["projected"] and c <= finals["unconstrained"])
    return runlog


def cmd_rates(args, cfg: dict, out: Path, timer: Timer) -> RunLog:
    runlog = RunLog("rates", {"seed": args.seed, "config": cfg["rates"], "ssn": "defaults"})
    rc = cfg["rates"]

    lin_cfg = rc["linear"]
    alphas = np.logspace(math.log10(lin_cfg["alpha_min"]), math.log10(lin_cfg["alpha_max"]), lin_cfg["n_alpha"])
    lin = experiments.linear_rate(experiments.LINEAR_TOY, alphas)
    timer.mark("linear")
    runlog.add_table("linear_rate", ["alpha", "error", "residual", "error_ratio", "residual_ratio"],
                     list(zip(lin["alphas"], lin["errors"], lin["residuals"],
                              lin["error_ratios"], lin["residual_ratios"])))
    runlog.add_metric("linear_slope", lin["slope"], passed=abs(lin["slope"] - 0.5) <= lin_cfg["tolerance"])
    runlog.add_metric("linear_bound", int(lin["bound_holds"]), passed=lin["bound_holds"])
    plotting.plot_rate(out / "linear_rate", lin["alphas"], lin["errors"], lin["slope"], lin["intercept"],
                       "alpha", "||x_alpha - x_true||")

    nf_cfg = rc["noise_free"]
    nf = experiments.noise_free_rate(experiments.NONLINEAR_TOY, nf_cfg["iterations"], tuple(nf_cfg["window"]))
    timer.mark("noise_free")
    runlog.add_tsv("noise_free_trace", nf["trace"].to_tsv())
    runlog.add_metric("noise_free_slope", nf["slope"], passed=abs(nf["slope"] - 1.0) <= nf_cfg["tolerance"])
    lo, hi = nf["window"]
    plotting.plot_rate(out / "noise_free_rate", np.sqrt(nf["alphas"][lo:hi + 1]), nf["errors"][lo:hi + 1],
                       nf["slope"], nf["intercept"], "sqrt(alpha_n)", "||x_n - x_true||")

    ns_cfg = rc["noisy"]
    deltas = np.logspace(math.log10(ns_cfg["delta_min"]), math.log10(ns_cfg["delta_max"]), ns_cfg["n_delta"])
    ns = experiments.noisy_sweep(experiments.NONLINEAR_TOY, deltas, eta=ns_cfg["eta"], seed=args.seed,
                                 threads=args.threads)
    timer.mark("noisy")
    runlog.add_table("noisy_sweep", ["delta_bar", "final_error", "stop_index", "seed"],
                     list(zip(ns["delta_bars"], ns["errors"], ns["stop_indices"], ns["seeds"])))
    runlog.add_metric("noisy_slope", ns["slope"], passed=abs(ns["slope"] - 0.5) <= ns_cfg["tolerance"])
    plotting.plot_rate(out / "noisy_rate", ns["delta_bars"], ns["errors"], ns["slope"], ns["intercept"],
                       "combined noise level", "||x_N - x_true||")

    pt = experiments.operator_perturbation_trials(n_trials=rc["perturbation"]["n_trials"], seed=args.seed)
    timer.mark("perturbation")
    runlog.add_metric("perturbation_max_ratio", pt["max_ratio"])
    runlog.add_metric("perturbation_violations", pt["violations"], passed=pt["violations"] == 0)
    return runlog


def _axial_lobe_width(profile: np.ndarray, spacing: float) -> float:
    """Full width at half maximum of the lobe holding the profile's maximum.

    Half-maximum crossings are located by linear interpolation between
    samples.
    """
    p = np.asarray(profile, float)
    k = int(np.argmax(p))
    half = 0.5 * p[k]
    lo = k
    while lo > 0 and p[lo - 1] >= half:
        lo -= 1
    hi = k
    while hi < p.size - 1 and p[hi + 1] >= half:
        hi += 1
    left = lo - (p[lo] - half) / (p[lo] - p[lo - 1]) if lo > 0 else float(lo)
    right = hi + (p[hi] - half) / (p[hi] - p[hi + 1]) if hi < p.size - 1 else float(hi)
    return float((right - left) * spacing)


def cmd_psf(args, cfg: dict, out: Path, timer: Timer) -> RunLog:
    pc = cfg["psf_images"]
    runlog = RunLog("psf", {"seed": args.seed, "config": {k: cfg[k] for k in ("psf", "psf_images")}})
    pcfg = merge_config(cfg, {"grid": {"dims": pc["dims"], "spacing_nm": pc["spacing_nm"]}})
    for power in pc["powers"]:
        K = build_setup(pcfg, power=power).kernels
        imgs, labels = [], []
        for phi in pc["phases"]:
            p = fourpi.synthesize_psf(K, phi).values
            sl = plotting.to_slice(p)
            tag = f"psf_n{power}_phi{int(round(1000 * phi))}mrad"
            plotting.write_pgm(out / tag, sl)
            write_field(out / tag, p, K.spacing, "kernel_real", meta={"phase": phi, "power": power})
            imgs.append(sl)
            labels.append(f"n={power}, phi={phi:.3f}")
            centre = tuple(n // 2 for n in p.shape)
            runlog.add_metric(f"{tag}_centre_value", float(p[centre]))
            runlog.add_metric(f"{tag}_main_lobe_fwhm_nm", _axial_lobe_width(sl[sl.shape[0] // 2], K.spacing[-1]))
        plotting.plot_psf_panel(out / f"psf_panel_n{power}", imgs, labels,
                                (K.spacing[0], K.spacing[-1]), pc["scale_bar_nm"])
    runlog.add_metric("scale_bar_nm", pc["scale_bar_nm"])
    timer.mark("psf")
    return runlog


COMMANDS = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct, "rates": cmd_rates, "psf": cmd_psf}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irgnm4pi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file overriding the default config")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=f"out/{name}", help="output directory")
        p.add_argument("--variant", choices=list(VARIANTS) + ["all"], default=None)
        p.add_argument("--threads", type=int, default=1, help="FFT / sweep worker threads")
        p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        print(dumps_json(cfg))
        return 0
    grid.set_fft_workers(max(1, args.threads))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timer = Timer()
    try:
        runlog = COMMANDS[args.command](args, cfg, out, timer)
    except Exception as exc:  # solver or I/O errors: record and fail
        runlog = RunLog(args.command, {"seed": args.seed, "config": cfg})
        runlog.add_metric("error", f"{type(exc).__name__}: {exc}", passed=False)
        runlog.write(out / f"{args.command}.log")
        timer.write(out, args.threads)
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 2
    runlog.write(out / f"{args.command}.log")
    timer.write(out, args.threads)
    for name, ok in runlog.checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"wrote {out / (args.command + '.log')}")
    return 1 if runlog.failed else 0


if __name__ == "__main__":
    sys.exit(main())
