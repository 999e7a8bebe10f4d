"""Command-line interface: ``vcmo <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data/config/convergence error.
Every command writes its data file atomically plus a JSON run summary next
to it (``<output stem>.summary.json``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ProjectConfig, default_config, load_config, write_model
from .dataio import atomic_open, load_admittance, write_csv
from .errors import VcmoError
from .fitting import DEFAULT_PROMINENCE_DB, detect_peaks, initial_guess, refine_fit
from .loop import loop_response_export, required_grid_step, tuning_sweep
from .phase_noise import (
    LeesonParams,
    calibrate_leeson,
    fom_vcmo,
    leeson,
    loaded_q,
    noise_floor,
    phase_noise_profile,
)
from .resonator import PRESETS, LOBAR_C0_ASSUMED, get_preset, mode_metrics
from .tank import classify_region, tank_resonances

log = logging.getLogger("vcmo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> _Parser:
    p = _Parser(prog="vcmo", description="Multi-overtone VCMO loop simulator.")
    p.add_argument("--version", action="version", version=f"vcmo {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log provenance to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def with_config(sp):
        sp.add_argument("-c", "--config", help="project config file (default: built-in defaults)")

    sp = sub.add_parser("fit", help="fit an MBVD model to measured admittance")
    sp.add_argument("input", help="CSV (f_Hz, re_Y, im_Y) or one-port Touchstone file")
    sp.add_argument("--format", choices=("csv", "touchstone"), help="input format (default: by suffix)")
    sp.add_argument("--prominence", type=float, default=DEFAULT_PROMINENCE_DB, help="peak prominence in dB")
    sp.add_argument("--max-iter", type=int, default=200)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("-o", "--output", help="model file (default: <input stem>.model.cfg)")
    sp.add_argument("--report", help="per-branch report CSV (default: <output stem>.report.csv)")

    sp = sub.add_parser("sweep", help="loop gain/phase versus frequency at one bias")
    with_config(sp)
    sp.add_argument("--bias", type=float, help="varactor bias in V (default: sweep.bias_v)")
    sp.add_argument("-o", "--output", default="sweep.csv")

    sp = sub.add_parser("tune", help="oscillation frequency versus varactor bias")
    with_config(sp)
    sp.add_argument("-o", "--output", default="tune.csv")

    sp = sub.add_parser("regions", help="tank region of each frequency at one bias")
    with_config(sp)
    sp.add_argument("--bias", type=float, help="varactor bias in V (default: sweep.bias_v)")
    sp.add_argument("-o", "--output", default="regions.csv")

    sp = sub.add_parser("pn", help="Leeson phase-noise profile")
    with_config(sp)
    sp.add_argument("-o", "--output", default="pn.csv")

    sp = sub.add_parser("export-preset", help="write a built-in resonator preset as a model file")
    sp.add_argument("name", help=f"preset name ({', '.join(sorted(PRESETS))})")
    sp.add_argument("-o", "--output", help="output path (default: <name>.cfg)")
    return p


def _summary_path(output: Path) -> Path:
    return output.with_name(output.stem + ".summary.json")


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, (np.floating, np.integer)):
        return _json_safe(v.item())
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def _write_summary(path: Path, summary: dict):
    with atomic_open(path) as fh:
        json.dump(_json_safe(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load(args) -> ProjectConfig:
    cfg = load_config(args.config) if args.config else default_config()
    return cfg


def _config_summary(cfg: ProjectConfig) -> dict:
    return {
        "config": cfg.path,
        "resonator_source": cfg.resonator_source,
        "defaults_applied": dict(sorted(cfg.defaults_applied.items())),
    }


def _f_grid(cfg: ProjectConfig) -> np.ndarray:
    lo, hi = cfg.window()
    step = cfg.get("sweep.f_step_hz")
    if step is None:
        step = required_grid_step(cfg.loop, lo, hi) or (hi - lo) / 2000.0
    n = int(math.ceil((hi - lo) / step)) + 1
    return np.linspace(lo, hi, n)


def _cmd_fit(args) -> tuple[int, Path, dict]:
    src = Path(args.input)
    out = Path(args.output) if args.output else src.with_name(src.stem + ".model.cfg")
    report = Path(args.report) if args.report else out.with_name(out.stem + ".report.csv")
    data = load_admittance(src, args.format)
    peaks = detect_peaks(data, args.prominence)
    if not peaks:
        raise VcmoError("no resonance peaks detected; lower --prominence")
    init = initial_guess(data, peaks, label=src.stem)
    res = refine_fit(data, init, args.max_iter, args.tol)
    notes = list(peaks.warnings) + list(res.warnings)
    write_model(out, res.model, header=(f"fitted from {src.name}",
                                        f"residual_rms {res.residual_rms!r}",
                                        f"converged {res.converged}"))
    rows = []
    for k, b in enumerate(res.model.branches):
        mm = mode_metrics(res.model, k)
        rows.append((k + 1, b.f_m, b.q, b.r_m, b.l_m, b.c_m, mm.k_eff_sq, mm.fom))
    meta = [f"source: {src.name}", f"points: {len(data)}", f"c_0_F: {res.model.c_0!r}",
            f"residual_rms: {res.residual_rms!r}", f"iterations: {res.iterations}",
            f"converged: {res.converged}"]
    write_csv(report, ("tone", "f_m_Hz", "q", "r_m_ohm", "l_m_H", "c_m_F", "k_eff_sq", "fom"),
              rows, comments=meta)
    for n in notes:
        print(f"warning: {n}", file=sys.stderr)
    info = {"inputs": {"data": str(src), "points": len(data), "prominence_db": args.prominence,
                       "max_iter": args.max_iter, "tol": args.tol},
            "outputs": [str(out), str(report)],
            "result": {"branches": len(res.model.branches), "residual_rms": res.residual_rms,
                       "iterations": res.iterations, "converged": res.converged,
                       "warnings": notes}}
    if not res.converged:
        print("error: fit did not converge; best-so-far model written", file=sys.stderr)
        return 2, out, info
    return 0, out, info


def _cmd_sweep(args):
    cfg = _load(args)
    bias = cfg.get("sweep.bias_v") if args.bias is None else args.bias
    out = Path(args.output)
    rows = loop_response_export(cfg.loop, bias, _f_grid(cfg))
    write_csv(out, ("f_Hz", "gain_dB", "phase_deg"), rows)
    return 0, out, {"inputs": {**_config_summary(cfg), "bias_V": bias}, "outputs": [str(out)],
                    "result": {"rows": len(rows)}}


def _cmd_tune(args):
    cfg = _load(args)
    out = Path(args.output)
    lo, hi = cfg.window()
    pts = tuning_sweep(cfg.loop, cfg.bias_grid(), lo, hi, cfg.get("sweep.f_step_hz"))
    rows = []
    for p in pts:
        s = p.solution
        if s is None:
            rows.append((p.bias, math.nan, 0, math.nan, False))
        else:
            rows.append((p.bias, s.f_osc, s.mode_index, s.gain_margin_db, p.hop))
    write_csv(out, ("bias_V", "f_osc_Hz", "mode_index", "gain_margin_dB", "hop_flag"), rows)
    modes = sorted({p.solution.mode_index for p in pts if p.solution})
    return 0, out, {"inputs": {**_config_summary(cfg), "bias_points": len(pts),
                               "window_Hz": [lo, hi]},
                    "outputs": [str(out)],
                    "result": {"locked_points": sum(p.solution is not None for p in pts),
                               "modes": modes, "hops": sum(p.hop for p in pts)}}


def _cmd_regions(args):
    cfg = _load(args)
    bias = cfg.get("sweep.bias_v") if args.bias is None else args.bias
    out = Path(args.output)
    res = tank_resonances(cfg.tank, bias)
    tol = cfg.get("regions.tol")
    rows = [(f, classify_region(float(f), res, tol).value) for f in _f_grid(cfg)]
    write_csv(out, ("f_Hz", "region"), rows)
    return 0, out, {"inputs": {**_config_summary(cfg), "bias_V": bias},
                    "outputs": [str(out)],
                    "result": {"f_s_t_Hz": res.f_s_t, "f_p_t_Hz": res.f_p_t, "bw_Hz": res.bw}}


def _pn_params(cfg: ProjectConfig) -> tuple[LeesonParams, list[str]]:
    f_c = cfg.get("pn.f_carrier_hz")
    q_l = cfg.get("pn.q_loaded")
    if q_l is None:
        k = cfg.resonator.nearest_branch(f_c)
        b = cfg.resonator.branches[k]
        r_ext = cfg.get("pn.r_external_ohm")
        r_ext = b.r_m if r_ext is None else r_ext
        q_l = loaded_q(b, r_ext)
        q_note = f"q_loaded {q_l!r} from branch {k + 1} (f_m {b.f_m!r} Hz) with r_external {r_ext!r} ohm"
    else:
        q_note = f"q_loaded {q_l!r} from config"
    nf, ff = cfg.get("pn.noise_factor_db"), cfg.get("pn.f_flicker_hz")
    if cfg.get("pn.p_sig_w") is not None:
        p = LeesonParams(nf, cfg.get("pn.p_sig_w"), q_l, ff)
        prov = "p_sig from config (no calibration)"
    else:
        a, off = cfg.get("pn.anchor_dbchz"), cfg.get("pn.anchor_offset_hz")
        p = calibrate_leeson(a, off, f_c, q_l, ff, nf)
        prov = (f"calibrated: p_sig fitted so L({off!r} Hz) = {a!r} dBc/Hz at {f_c!r} Hz; "
                "model fit to an anchor, not a prediction")
    return p, [prov, q_note]


def _cmd_pn(args):
    cfg = _load(args)
    out = Path(args.output)
    p, notes = _pn_params(cfg)
    f_c = cfg.get("pn.f_carrier_hz")
    lo, hi = cfg.get("pn.offset_start_hz"), cfg.get("pn.offset_stop_hz")
    n = int(round(math.log10(hi / lo) * cfg.get("pn.points_per_decade"))) + 1
    offsets = np.logspace(math.log10(lo), math.log10(hi), n)
    offsets[0], offsets[-1] = lo, hi
    prof = phase_noise_profile(p, f_c, offsets)
    a_off = cfg.get("pn.anchor_offset_hz")
    fom = fom_vcmo(leeson(p, f_c, a_off), f_c, a_off, cfg.get("pn.p_dc_w"))
    meta = notes + [
        f"f_carrier_Hz {f_c!r}",
        f"noise_factor_dB {p.noise_factor_db!r}",
        f"p_sig_W {p.p_sig!r}",
        f"q_loaded {p.q_loaded!r}",
        f"f_flicker_Hz {p.f_flicker!r}",
        f"floor_dBc_Hz {noise_floor(p)!r}",
        f"fom_vcmo_dBc_Hz at {a_off!r} Hz, p_dc {cfg.get('pn.p_dc_w')!r} W: {fom!r}",
    ]
    write_csv(out, ("offset_Hz", "L_dBc_Hz"), ((pt.offset, pt.value) for pt in prof), comments=meta)
    return 0, out, {"inputs": _config_summary(cfg), "outputs": [str(out)],
                    "result": {"p_sig_W": p.p_sig, "q_loaded": p.q_loaded, "fom_vcmo": fom,
                               "provenance": notes}}


def _cmd_export(args):
    if args.name not in PRESETS:
        raise UsageError(f"unknown preset {args.name!r}; available: {', '.join(sorted(PRESETS))}")
    r = get_preset(args.name)
    out = Path(args.output or f"{args.name}.cfg")
    header = [f"preset {args.name}"]
    if LOBAR_C0_ASSUMED:
        header.append(f"c_0 = {r.c_0!r} F is an assumed value, not a measurement")
    write_model(out, r, tuple(header))
    return 0, out, {"inputs": {"preset": args.name}, "outputs": [str(out)],
                    "result": {"branches": len(r.branches), "c_0_assumed": LOBAR_C0_ASSUMED}}


COMMANDS = {
    "fit": _cmd_fit,
    "sweep": _cmd_sweep,
    "tune": _cmd_tune,
    "regions": _cmd_regions,
    "pn": _cmd_pn,
    "export-preset": _cmd_export,
}


def run_command(argv: list[str] | None = None) -> int:
    """Parse ``argv``, run the command, return the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code, out, info = COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"vcmo: error: {e}", file=sys.stderr)
        return 1
    except (VcmoError, OSError) as e:
        print(f"vcmo: error: {e}", file=sys.stderr)
        return 2
    summary = {
        "command": args.command,
        "argv": argv,
        "exit_code": code,
        "versions": {"vcmo": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "timings_s": {"total": time.perf_counter() - t0},
        **info,
    }
    _write_summary(_summary_path(out), summary)
    return code


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
