"""Command line front end.

    presto-emu [global flags] <command> [global flags]

Commands: characterize, readout-calibrate, reset, rb, iswap, qutrit-reset,
cw-demo, validate. Results go to ``--out`` as ``manifest.json``,
``<command>/<name>.csv``, ``<command>/<name>.svg`` and ``sdram/<addr>.bin``.
Exit status: 0 success, 1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import persist
from .config import ConfigError, RunConfig, build_device, load_config
from .feedback import LatencyModel
from .sequencer import EventSchedule, validate

COMMANDS = ("characterize", "readout-calibrate", "reset", "rb", "iswap", "qutrit-reset", "cw-demo", "validate")

# section overrides for --scale paper; desk uses the dataclass defaults
FULL_SCALE = {
    "rb": {"realizations": 50, "shots": 1000},
    "iswap": {"shots": 1000},
    "qutrit_reset": {"shots": 100_000},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _globals(default: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: v) if default else (lambda v: argparse.SUPPRESS)
    p.add_argument("--config", default=d(None), help="JSON run configuration")
    p.add_argument("--seed", type=int, default=d(0), help="master seed (unsigned 64-bit)")
    p.add_argument("--out", default=d("results"), help="output directory")
    p.add_argument("--shots", type=int, default=d(None), help="override the command's shot count")
    p.add_argument("--scale", choices=("desk", "paper"), default=d("desk"))
    p.add_argument("--jobs", type=int, default=d(os.cpu_count() or 1),
                   help="worker processes (results do not depend on it)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="presto-emu", parents=[_globals(True)],
                     description="Pulsed-mode controller emulator closed against a simulated device.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    helps = {"characterize": "Rabi, T1, echo, chevrons, spectroscopy and crosstalk",
             "readout-calibrate": "template calibration and single-shot statistics",
             "reset": "active reset to g and to e with histograms",
             "rb": "randomized benchmarking", "iswap": "coupler-driven exchange scan",
             "qutrit-reset": "three-level reset with the boolean feedback network",
             "cw-demo": "two-tone comb and lock-in demo", "validate": "check a schedule JSON file"}
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name], parents=[_globals(False)])
        if name == "validate":
            sp.add_argument("schedule", help="schedule JSON file")
    return parser


def _section(cfg: RunConfig, name: str, args) -> object:
    sec = getattr(cfg, name)
    if args.scale == "paper":
        for k, v in FULL_SCALE.get(name, {}).items():
            setattr(sec, k, v)
    if args.shots is not None and hasattr(sec, "shots"):
        sec.shots = args.shots
    return sec


def _device(sec, where: str, default):
    return build_device(sec.device, where) if sec.device is not None else default()


def _latency(value: float) -> LatencyModel:
    try:
        return LatencyModel(float(value))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _clean(summary: dict) -> dict:
    return {k: v for k, v in summary.items() if k != "elapsed"}


def _summary_table(w: persist.ResultWriter, exp: str, summary: dict):
    rows = []
    for k, v in summary.items():
        if isinstance(v, dict):
            rows += [(f"{k}.{kk}", vv) for kk, vv in v.items()]
        elif isinstance(v, (list, tuple)):
            rows += [(f"{k}[{i}]", vv) for i, vv in enumerate(v)]
        else:
            rows.append((k, v))
    w.table(exp, "summary", ["quantity", "value"], rows)


# -------------------------------------------------------------- commands

def cmd_characterize(args, cfg, w):
    from .experiments.characterize import characterization_device, multiplexed_crosstalk, run_characterization_suite
    sec = _section(cfg, "characterize", args)
    dev = _device(sec, "characterize", characterization_device)
    res = run_characterization_suite(dev, shots=sec.shots, seed=args.seed, jobs=args.jobs)
    xt = multiplexed_crosstalk(shots=10 * sec.shots, seed=args.seed + 6, jobs=args.jobs)
    exp = "characterize"
    r = res.rabi
    w.table(exp, "rabi", ["amplitude", "p_excited"], zip(r.amplitudes, r.p_excited))
    w.svg(exp, "rabi", persist.svg_lines("Rabi, 10 pulses", r.amplitudes, {"P(e)": r.p_excited}, "amplitude (FS)"))
    for name, d in (("t1", res.t1), ("echo", res.echo)):
        w.table(exp, name, ["delay_s", "p_excited"], zip(d.delays, d.p_excited))
        w.svg(exp, name, persist.svg_lines(name, d.delays * 1e6, {"P(e)": d.p_excited}, "delay (us)"))
    for name, c, col in (("rabi_chevron", res.chevron, "duration_s"), ("ramsey_chevron", res.ramsey, "delay_s")):
        rows = [(dt, t, c.p_excited[i, k]) for i, dt in enumerate(c.detunings) for k, t in enumerate(c.times)]
        w.table(exp, name, ["detuning_hz", col, "p_excited"], rows)
        w.svg(exp, name, persist.svg_map(name, c.times * 1e9, c.detunings / 1e6, c.p_excited, "time (ns)",
                                         "detuning (MHz)"))
    s = res.spectroscopy
    w.table(exp, "spectroscopy", ["frequency_hz", "g_re", "g_im", "e_re", "e_im", "separation"],
            zip(s.frequencies, s.response_g.real, s.response_g.imag, s.response_e.real, s.response_e.imag,
                s.separation))
    w.svg(exp, "spectroscopy", persist.svg_lines(
        "resonator spectroscopy", s.frequencies / 1e9,
        {"|S| g": np.abs(s.response_g), "|S| e": np.abs(s.response_e), "separation": s.separation},
        "frequency (GHz)"))
    summary = _clean(res.summary())
    summary["crosstalk_correlation"] = xt.correlation
    summary["ramsey_frequencies"] = [float(v) for v in res.ramsey.frequencies()]
    summary["ramsey_predicted"] = [float(v) for v in res.ramsey.predicted()]
    _summary_table(w, exp, summary)
    return summary


def cmd_readout_calibrate(args, cfg, w):
    from .calibration import histogram
    from .experiments.readout import (averaged_traces, calibrate_readout, design_readout, reset_device,
                                      single_shot, tune_noise, with_noise)
    sec = _section(cfg, "readout_calibrate", args)
    dev = _device(sec, "readout_calibrate", reset_device)
    readout = design_readout(dev, [0])
    if sec.tune_noise:
        nt = tune_noise(dev, readout, sec.target_overlap, shots=sec.shots, seed=args.seed, jobs=args.jobs)
        dev, cal = with_noise(dev, nt.sigma), nt.calibration
    else:
        cal = calibrate_readout(dev, readout, seed=args.seed, jobs=args.jobs)
    disc = cal.discriminators[0]
    ss = single_shot(dev, readout, disc, sec.shots, seed=args.seed + 1, jobs=args.jobs)
    exp = "readout-calibrate"
    rows = [(k, a.real, a.imag, b.real, b.imag) for k, (a, b) in enumerate(zip(disc.tau_g, disc.tau_e))]
    w.table(exp, "templates", ["sample", "tau_g_re", "tau_g_im", "tau_e_re", "tau_e_im"], rows)
    counts, edges = histogram(ss.differences)
    w.table(exp, "single_shot", ["bin_low", "bin_high", "count"], zip(edges[:-1], edges[1:], counts))
    w.svg(exp, "single_shot", persist.svg_histogram("single shot, g/e mixture", counts, edges, "match difference"))
    res, tg, te = averaged_traces(dev, readout, shots=1024, seed=args.seed + 2, jobs=args.jobs)
    t_ns = np.arange(tg.size)
    w.svg(exp, "averaged_traces", persist.svg_lines("averaged readout traces", t_ns,
                                                    {"|g|": np.abs(tg), "|e|": np.abs(te)}, "time (ns)"))
    w.sdram(res.sdram)
    summary = {"noise_sigma": dev.noise_sigma, "overlap_error": ss.epsilon, "fidelity_bound": ss.fidelity_bound,
               "window_start_ticks": disc.window_start, "window_ticks": disc.window_ticks,
               "threshold": disc.threshold, "rejected": cal.rejected.get(0, 0.0)}
    _summary_table(w, exp, summary)
    return summary


def cmd_reset(args, cfg, w):
    from .experiments.readout import reset_device, run_reset_study
    sec = _section(cfg, "reset", args)
    dev = _device(sec, "reset", reset_device)
    lat = _latency(sec.latency)
    st = run_reset_study(dev, shots=sec.shots, seed=args.seed, latency=lat, delay=sec.delay_ticks,
                         tune=sec.tune_noise, target_overlap=sec.target_overlap, tune_shots=sec.shots,
                         jobs=args.jobs)
    exp = "reset"
    titles = {"thermal": "thermal", "reset_g": "after reset to g", "reset_e": "after reset to e"}
    for name in ("thermal", "reset_g", "reset_e"):
        counts, edges = st.to_g.histograms[name]
        w.table(exp, name, ["bin_low", "bin_high", "count"], zip(edges[:-1], edges[1:], counts))
        w.svg(exp, name, persist.svg_histogram(titles[name], counts, edges, "match difference"))
    summary = st.summary()
    summary["latency"] = lat.round_trip
    _summary_table(w, exp, summary)
    return summary


def cmd_rb(args, cfg, w):
    from .experiments.rb import DESK_LENGTHS, coherence_limit, rb_device, run_rb
    sec = _section(cfg, "rb", args)
    dev = _device(sec, "rb", rb_device)
    lengths = list(DESK_LENGTHS if sec.lengths is None else sec.lengths)
    if not lengths or sec.realizations < 1:
        return {}
    res = run_rb(lengths, sec.realizations, sec.shots, dev, seed=args.seed, jobs=args.jobs)
    exp = "rb"
    q = res.quartiles()
    w.table(exp, "survival", ["length", "q25", "median", "q75", "mean"],
            [(m, *q[k], res.survival[:, k].mean()) for k, m in enumerate(res.lengths)])
    w.table(exp, "realizations", ["realization", "length", "survival"],
            [(r, m, res.survival[r, k]) for r in range(res.survival.shape[0]) for k, m in enumerate(res.lengths)])
    w.svg(exp, "survival", persist.svg_lines("randomized benchmarking", res.lengths,
                                             {"median": q[:, 1], "q25": q[:, 0], "q75": q[:, 2]},
                                             "Cliffords", "P(g)"))
    q0 = dev.qubits[0]
    summary = {"alpha": res.fit.alpha, "A": res.fit.A, "B": res.fit.B, "fit_ok": res.fit.ok,
               "epc": res.epc, "fidelity": res.fit.fidelity, "pulses_per_clifford": res.pulses_per_clifford,
               "predicted_epc": res.pulses_per_clifford * coherence_limit(q0.T1, q0.T2_echo),
               "realizations": sec.realizations, "shots": sec.shots}
    _summary_table(w, exp, summary)
    return summary


def cmd_iswap(args, cfg, w):
    from .experiments.iswap import iswap_device, run_iswap_scan
    sec = _section(cfg, "iswap", args)
    dev = _device(sec, "iswap", iswap_device)
    if dev.coupler is None or len(dev.qubits) < 2:
        raise ConfigError("iswap.device: needs two qubits and a coupler")
    if not sec.detunings:
        return {}
    durations = np.arange(0, sec.max_duration + 1e-12, 20e-9)
    scan = run_iswap_scan(sec.detunings, durations, dev, shots=sec.shots, seed=args.seed, jobs=args.jobs)
    exp = "iswap"
    rows = [(d, t, scan.p_target[i, k], scan.p_source[i, k])
            for i, d in enumerate(scan.detunings) for k, t in enumerate(scan.durations)]
    w.table(exp, "populations", ["detuning_hz", "duration_s", "p_target", "p_source"], rows)
    pc = scan.predicted_contrasts()
    w.table(exp, "fits", ["detuning_hz", "amplitude", "omega", "offset", "residual", "contrast", "predicted"],
            [(f.detuning, f.amplitude, f.omega, f.offset, f.residual, c, p)
             for f, c, p in zip(scan.fits, scan.contrasts(), pc)])
    order = np.argsort(scan.detunings)
    det = np.asarray(scan.detunings)[order] / 1e6
    t_ns = np.asarray(scan.durations) * 1e9
    w.svg(exp, "target", persist.svg_map("receiving qubit P(e)", t_ns, det, scan.p_target[order], "duration (ns)",
                                         "detuning (MHz)"))
    w.svg(exp, "source", persist.svg_map("excited qubit P(e)", t_ns, det, scan.p_source[order], "duration (ns)",
                                         "detuning (MHz)"))
    r = scan.resonant()
    summary = {"swap_time": r.swap_time, "g_eff": scan.g_eff, "resonant_amplitude": r.amplitude,
               "resonant_offset": r.offset}
    _summary_table(w, exp, summary)
    return summary


def cmd_qutrit_reset(args, cfg, w):
    from .experiments.qutrit import (LEVELS, model_qutrit_discriminator, qutrit_device, qutrit_readout,
                                     run_qutrit_reset, truth_table)
    from .feedback import qutrit_reset_config
    sec = _section(cfg, "qutrit_reset", args)
    dev = _device(sec, "qutrit_reset", qutrit_device)
    if dev.qubits[0].levels < 3:
        raise ConfigError("qutrit_reset.device: the qubit needs three levels")
    lat = _latency(sec.latency)
    readout = qutrit_readout(dev, sec.readout_amplitude)
    disc = model_qutrit_discriminator(dev, readout, sec.window_ticks)
    res = run_qutrit_reset(dev, sec.shots, args.seed, lat, readout, disc, sec.window_ticks, jobs=args.jobs)
    exp = "qutrit-reset"
    m = res.assignment()
    w.table(exp, "assignment", ["prepared", "read_g", "read_e", "read_f"],
            [(LEVELS[i], *m[i]) for i in range(3)])
    pops = np.array([res.final[res.prepared == i].mean(axis=0) for i in range(3)])
    w.table(exp, "final_populations", ["prepared", "g", "e", "f"], [(LEVELS[i], *pops[i]) for i in range(3)])
    w.svg(exp, "final_populations", persist.svg_lines("populations after reset", [0, 1, 2],
                                                      {f"P({c})": pops[:, k] for k, c in enumerate(LEVELS)},
                                                      "prepared level (g, e, f)"))
    w.table(exp, "truth_table", ["r_eg", "r_fe", "r_gf", "mask", "pi_eg", "pi_fg", "expected_eg", "expected_fg"],
            [(t["R_eg"], t["R_fe"], t["R_gf"], t["mask"], t["pi_eg"], t["pi_fg"], *t["expected"])
             for t in truth_table(qutrit_reset_config(disc.thresholds, lat, disc.pairs))])
    summary = _clean(res.summary())
    _summary_table(w, exp, summary)
    return summary


def cmd_cw_demo(args, cfg, w):
    from .experiments.cw import run_cw_demo
    sec = _section(cfg, "cw_demo", args)
    if sec.pump_frequencies is not None and len(sec.pump_frequencies) == 0:
        return {}
    res = run_cw_demo(sec.probe_frequency, sec.pump_frequencies, window=sec.window, noise_sigma=sec.noise_sigma,
                      seed=args.seed)
    exp = "cw-demo"
    w.table(exp, "sweep", ["pump_hz", "probe_re", "probe_im", "pump_re", "pump_im", "pump_expected_re",
                           "pump_expected_im"],
            zip(res.pump_frequencies, res.probe.real, res.probe.imag, res.pump.real, res.pump.imag,
                res.expected_pump.real, res.expected_pump.imag))
    w.svg(exp, "sweep", persist.svg_lines("lock-in amplitudes", res.pump_frequencies / 1e6,
                                          {"|probe|": np.abs(res.probe), "|pump|": np.abs(res.pump)},
                                          "pump offset (MHz)"))
    summary = {"max_error": res.max_error(), "window": res.window}
    _summary_table(w, exp, summary)
    return summary


HANDLERS = {"characterize": cmd_characterize, "readout-calibrate": cmd_readout_calibrate, "reset": cmd_reset,
            "rb": cmd_rb, "iswap": cmd_iswap, "qutrit-reset": cmd_qutrit_reset, "cw-demo": cmd_cw_demo}


def cmd_validate(path: str) -> int:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return 2
    try:
        sched = EventSchedule.from_json(text)
    except (ValueError, TypeError, KeyError) as exc:
        print(f"invalid schedule: {exc}", file=sys.stderr)
        return 1
    problems = validate(sched)
    if problems:
        for msg in problems:
            print(msg, file=sys.stderr)
        return 1
    print("ok")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("presto-emu: error: a command is required")
        if not 0 <= args.seed < 1 << 64:
            raise UsageError("presto-emu: error: --seed must be an unsigned 64-bit integer")
        if args.jobs < 1:
            raise UsageError("presto-emu: error: --jobs must be positive")
        if args.shots is not None and args.shots < 1:
            raise UsageError("presto-emu: error: --shots must be positive")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command == "validate":
        return cmd_validate(args.schedule)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: cannot read configuration: {exc}", file=sys.stderr)
        return 2
    options = {"scale": args.scale, "shots": args.shots}
    writer = persist.ResultWriter(args.out, args.command, args.seed, cfg.digest(), options)
    try:
        summary = HANDLERS[args.command](args, cfg, writer)
        writer.summary = summary
        writer.manifest()
    except ConfigError as exc:
        writer.discard()
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure is a runtime error
        writer.discard()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(persist._plain(summary), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
