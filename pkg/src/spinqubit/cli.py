"""Command-line entry point: ``spinqubit <command> [options]``.

Every artifact is written under ``--out`` together with a ``<name>.meta.json``
sidecar holding the config hash and seed. Outputs depend only on the config
and seed, never on ``--workers``.

Exit codes: 0 success, 2 configuration error, 3 runtime or fit failure (any
data already computed is still written).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarking import RBConfig, RBResult, run_irb, run_rb
from .config import ConfigError, ExperimentConfig, load_bundled, load_config
from .physics import derive_rates, keith_conditions, predict_budget
from .qubit import chevron, hahn_delays, ramsey_delays, run_hahn, run_ramsey
from .readout import DetectionConfig, default_threshold_grid, sweep_delta, sweep_threshold_window
from .traces import generate_batch, write_trace_dump

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

HEADERS = {
    "sweep-delta": ("delta_uev", "f_up", "f_down", "visibility", "ci_up", "ci_down"),
    "sweep-grid": ("g_thr", "t_r_us", "f_up", "f_down", "visibility"),
    "rabi": ("detuning_mhz", "tau_us", "p_up"),
    "ramsey": ("delay_us", "p_up", "fit_envelope"),
    "hahn": ("delay_us", "p_up", "fit_envelope"),
    "rb": ("m", "mean_p_up", "scatter_std", "n_sequences"),
    "irb": ("gate", "p_ref", "p_int", "gate_fidelity", "fidelity_std"),
}


class RunFailure(RuntimeError):
    """Runtime failure after partial outputs were written."""


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if not math.isfinite(v) else v
    return v


class Emitter:
    """Writes tables and summaries deterministically (LF endings, sorted JSON)."""

    def __init__(self, out: Path, fmt: str, cfg: ExperimentConfig, seed: int, command: str, noise: bool):
        self.out, self.fmt, self.cfg, self.seed = out, fmt, cfg, seed
        self.command, self.noise = command, noise
        out.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def meta(self, **extra) -> dict:
        return {
            "schema": "spinqubit.artifact/1",
            "version": __version__,
            "command": self.command,
            "config_source": Path(self.cfg.source).name,
            "config_sha256": self.cfg.sha256,
            "seed": self.seed,
            "noise": self.noise,
            **extra,
        }

    def _write(self, path: Path, text: str) -> Path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.written.append(path)
        return path

    def json(self, name: str, payload: dict) -> Path:
        return self._write(self.out / name, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")

    def table(self, name: str, header: tuple[str, ...], rows, **meta) -> Path:
        if self.fmt == "csv":
            body = ",".join(header) + "\n" + "".join(",".join(_fmt(v) for v in r) + "\n" for r in rows)
            path = self._write(self.out / f"{name}.csv", body)
        else:
            path = self.json(f"{name}.json", {"columns": list(header), "rows": [list(r) for r in rows]})
        self.json(f"{path.name}.meta.json", self.meta(columns=list(header), **meta))
        return path


# ---------------------------------------------------------------------------
# commands


def _detection(cfg: ExperimentConfig, window: float | None = None) -> DetectionConfig:
    d = cfg.detection
    return DetectionConfig.for_params(
        cfg.physical,
        read_window=d.read_window_us if window is None else window,
        threshold=d.threshold_e2h,
        blank_time=d.blank_us,
    )


def cmd_budget(cfg: ExperimentConfig, args, emit: Emitter | None) -> None:
    p = cfg.physical
    rates = derive_rates(p)
    budget = predict_budget(p, rates, cfg.detection.read_window_us)
    keith = keith_conditions(p, rates)
    if args.format == "json":
        payload = {
            "rates_hz": asdict(rates),
            "budget": asdict(budget),
            "keith": [{"name": k.name, "ratio": k.ratio, "threshold": k.threshold, "passed": k.passed} for k in keith],
        }
        print(json.dumps(_jsonable(payload), indent=2, sort_keys=True))
        return
    print(f"t_up_out   {rates.t_up_out:10.3f} us")
    print(f"t_down_in  {rates.t_down_in:10.3f} us")
    print(f"relaxation {100 * budget.relaxation_loss:10.4f} %")
    print(f"missed     {100 * budget.missed_bump:10.4f} %")
    print(f"thermal    {100 * budget.thermal_escape:10.4f} %")
    print(f"F_up       {100 * budget.predicted_f_up:10.4f} %")
    print(f"F_down     {100 * budget.predicted_f_down:10.4f} %")
    print(f"visibility {100 * budget.predicted_visibility:10.4f} %")
    print()
    print(f"{'condition':<18}{'ratio':>10}{'min':>8}  result")
    for k in keith:
        print(f"{k.name:<18}{k.ratio:>10.2f}{k.threshold:>8.0f}  {'PASS' if k.passed else 'FAIL'}")


def cmd_sweep_delta(cfg: ExperimentConfig, args, emit: Emitter) -> None:
    e, p = cfg.experiment, cfg.physical
    thresholds = default_threshold_grid(p, cfg.detection.threshold_points)
    sweep = sweep_delta(
        p,
        e.delta_grid_uev,
        e.delta_shots,
        base_seed=args.seed,
        thresholds=thresholds,
        windows=(cfg.detection.read_window_us,),
        workers=args.workers,
        noise=not args.noise_off,
    )
    best = sweep.best
    emit.table("sweep_delta", HEADERS["sweep-delta"], sweep.rows(), best_delta_uev=best.delta, shots_per_point=e.delta_shots)
    print(f"best delta {best.delta:g} ueV: visibility {100 * best.estimate.visibility:.3f} %")


def cmd_sweep_grid(cfg: ExperimentConfig, args, emit: Emitter) -> None:
    p, d = cfg.physical, cfg.detection
    windows = np.asarray(d.window_grid_us, float)
    batch = generate_batch(
        p, cfg.experiment.trace_shots, "interleaved", base_seed=args.seed,
        read_window=float(windows.max()), workers=args.workers, noise=not args.noise_off,
    )
    det = _detection(cfg)
    grid = sweep_threshold_window(batch, default_threshold_grid(p, d.threshold_points), windows, det.blank_time, det.polarity)
    g, t = grid.best
    est = grid.estimate(*grid.argmax)
    emit.table("sweep_grid", HEADERS["sweep-grid"], grid.rows(), best_g_thr=g, best_t_r_us=t, shots=len(batch))
    print(
        f"best g_thr {g:.4f} e2/h, t_R {t:g} us: F_up {100 * est.f_up:.3f} %, "
        f"F_down {100 * est.f_down:.3f} %, V {100 * est.visibility:.3f} %"
    )


def _linspace(spec) -> np.ndarray:
    lo, hi, n = spec
    return np.linspace(lo, hi, int(n))


def cmd_rabi(cfg: ExperimentConfig, args, emit: Emitter) -> None:
    q = _qubit(cfg, args)
    det = _linspace(cfg.experiment.chevron_detuning_mhz)
    tau = _linspace(cfg.experiment.chevron_tau_us)
    grid = chevron(q, det, tau, cfg.experiment.chevron_shots, np.random.default_rng(args.seed))
    rows = [(float(d), float(t), float(grid[i, j])) for i, d in enumerate(det) for j, t in enumerate(tau)]
    emit.table("rabi", HEADERS["rabi"], rows)


def _decay(cfg: ExperimentConfig, args, emit: Emitter, kind: str) -> None:
    q = _qubit(cfg, args)
    e = cfg.experiment
    rng = np.random.default_rng(args.seed)
    if kind == "ramsey":
        result = run_ramsey(q, ramsey_delays(q.t2_star, e.ramsey_points), e.ramsey_shots, rng)
    else:
        result = run_hahn(q, hahn_delays(q.t2_hahn, e.hahn_points), e.hahn_shots, rng)
    emit.table(
        kind, HEADERS[kind], result.rows(),
        time_constant_us=result.time_constant, exponent=result.exponent,
        amplitude=result.amplitude, fit_ok=result.fit_ok, message=result.message,
    )
    if not result.fit_ok:
        raise RunFailure(f"{kind} fit failed: {result.message}")
    print(f"{kind}: T = {result.time_constant:.4g} us, exponent {result.exponent:.3g}")


def _qubit(cfg: ExperimentConfig, args):
    return cfg.qubit.replace(noise_model="none") if args.noise_off else cfg.qubit


def _rb_config(cfg: ExperimentConfig, args, gate: str | None = None) -> RBConfig:
    e = cfg.experiment
    return RBConfig(
        e.rb_lengths, e.rb_sequences, e.rb_shots, interleaved_gate=gate,
        readout_channel=e.rb_readout, bootstrap_resamples=e.rb_bootstrap, seed=args.seed,
    )


def _rb_summary(r: RBResult) -> dict:
    f = r.fit
    return {
        "amplitude": f.amplitude,
        "decay": f.decay,
        "offset": f.offset,
        "decay_std": f.decay_std,
        "clifford_fidelity": f.clifford_fidelity,
        "clifford_fidelity_std": f.clifford_fidelity_std,
        "mean_gates_per_clifford": r.mean_gates_per_clifford,
        "gate_fidelity_estimate": r.gate_fidelity_estimate,
        "fit_ok": f.fit_ok,
        "message": f.message,
        "config": asdict(r.config),
    }


def _emit_rb(emit: Emitter, name: str, r: RBResult) -> None:
    emit.table(name, HEADERS["rb"], r.rows())
    emit.json(f"{name}_summary.json", {**emit.meta(), "fit": _rb_summary(r)})


def cmd_rb(cfg: ExperimentConfig, args, emit: Emitter) -> None:
    r = run_rb(_rb_config(cfg, args), _qubit(cfg, args), cfg.physical, _detection(cfg), workers=args.workers)
    _emit_rb(emit, "rb", r)
    if not r.fit.fit_ok:
        raise RunFailure(f"rb fit failed: {r.fit.message}")
    print(f"clifford fidelity {100 * r.fit.clifford_fidelity:.4f} % +- {100 * r.fit.clifford_fidelity_std:.4f} %")


def cmd_irb(cfg: ExperimentConfig, args, emit: Emitter) -> None:
    q, det = _qubit(cfg, args), _detection(cfg)
    ref = run_rb(_rb_config(cfg, args), q, cfg.physical, det, workers=args.workers)
    _emit_rb(emit, "irb_reference", ref)
    rows, failed = [], []
    for gate in cfg.experiment.irb_gates:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = run_irb(gate, _rb_config(cfg, args), q, cfg.physical, det, reference=ref, workers=args.workers)
        for w in caught:
            print(f"warning ({gate}): {w.message}", file=sys.stderr)
        safe = gate.replace("-", "m")
        _emit_rb(emit, f"irb_{safe}", res.interleaved)
        rows.append((gate, res.p_ref, res.p_int, res.gate_fidelity, res.gate_fidelity_std))
        if not res.interleaved.fit.fit_ok:
            failed.append(gate)
        print(f"{gate:>3}: F = {100 * res.gate_fidelity:.4f} % +- {100 * res.gate_fidelity_std:.4f} %")
    emit.table("irb", HEADERS["irb"], rows)
    if not ref.fit.fit_ok or failed:
        raise RunFailure(f"irb fit failed for {['reference'] if not ref.fit.fit_ok else failed}")


def cmd_traces(cfg: ExperimentConfig, args, emit: Emitter) -> None:
    window = max(cfg.detection.read_window_us, max(cfg.detection.window_grid_us))
    batch = generate_batch(
        cfg.physical, cfg.experiment.trace_shots, "interleaved", base_seed=args.seed,
        read_window=window, workers=args.workers, noise=not args.noise_off,
    )
    path, sidecar = write_trace_dump(emit.out / "traces.f32", batch, cfg.physical, base_seed=args.seed, read_window=window)
    emit.written += [path, sidecar]
    emit.json("traces.f32.meta.json", emit.meta())


COMMANDS = {
    "budget": (cmd_budget, "print the readout error budget and the visibility conditions"),
    "sweep-delta": (cmd_sweep_delta, "visibility versus Fermi offset"),
    "sweep-grid": (cmd_sweep_grid, "fidelities over the threshold x read-window grid"),
    "rabi": (cmd_rabi, "Rabi chevron P_up(detuning, pulse length)"),
    "ramsey": (lambda c, a, e: _decay(c, a, e, "ramsey"), "Ramsey decay and T2* fit"),
    "hahn": (lambda c, a, e: _decay(c, a, e, "hahn"), "Hahn-echo decay and T2 fit"),
    "rb": (cmd_rb, "Clifford randomized benchmarking"),
    "irb": (cmd_irb, "interleaved randomized benchmarking of the configured gates"),
    "traces": (cmd_traces, "dump simulated readout traces as float32"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinqubit", description="Spin qubit readout and benchmarking simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="config file (default: bundled paper.cfg)")
    common.add_argument("--seed", type=int, help="base seed (default: [meta] seed)")
    common.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--noise", choices=("on", "off"), default="on", help="'off' disables sensor and qubit noise")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_bundled() if args.config is None else load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is None:
        args.seed = cfg.seed
    if args.seed < 0 or args.workers < 1:
        print("config error: --seed must be >= 0 and --workers >= 1", file=sys.stderr)
        return EXIT_CONFIG
    args.noise_off = args.noise == "off"

    func = COMMANDS[args.command][0]
    try:
        if args.command == "budget":
            func(cfg, args, None)
            return EXIT_OK
        emit = Emitter(args.out, args.format, cfg, args.seed, args.command, not args.noise_off)
        func(cfg, args, emit)
    except RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in emit.written:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
