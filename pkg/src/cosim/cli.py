"""Batch experiment runner: single runs, convergence sweeps, step-error studies.

Everything is driven by a JSON configuration file; results are written as CSV
(comma separated, ``.`` decimal point, LF line endings, 17 significant digits
so values round-trip exactly).  Standard output carries only the fitted slope
summary lines; diagnostics go to standard error.

Exit codes: 0 success, 2 configuration/usage error, 3 run abort (the last
reached time is reported on standard error).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .costarica import (
    ControlHistory,
    ControlPolicy,
    control_predict,
    estimate,
    update1,
    update2,
)
from .laplace import stehfest_weights
from .models import CosimModel, ModelId, build_model, make_isolated_prey
from .orchestrator import (
    ConvergenceFailure,
    CosimConfig,
    Mode,
    TraceRecord,
    fit_loglog_slope,
    monolithic_reference,
    run_cosimulation,
)
from .rational import PoleError
from .signals import value_at_absolute, xi_for_step
from .systems import DivergenceError

REFERENCE_MICRO_DT = 1e-5

_DEFAULTS = {
    "epsilon": 1e-6,
    "max_iters": 50,
    "anderson_depth": 3,
    "stehfest_N": 14,
    "rich_factor": 0.2,
    "control_policy": "FLEX",
    "micro_steps": 100,
}

_ALLOWED_KEYS = {
    "model", "mode", "t_init", "t_end", "macro_dt", "dt_list",
    "epsilon", "max_iters", "anderson_depth", "stehfest_N",
    "rich_factor", "control_policy", "micro_steps", "output_path",
}


class ConfigError(ValueError):
    pass


@dataclass
class Experiment:
    model_id: ModelId
    modes: list[Mode]
    t_init: float | None
    t_end: float | None
    macro_dt: float | None
    dt_list: list[float] | None
    output_path: str
    epsilon: float
    max_iters: int
    anderson_depth: int
    stehfest_N: int
    rich_factor: float
    control_policy: ControlPolicy
    micro_steps: int

    def cosim_config(self, model: CosimModel, macro_dt: float, mode: Mode) -> CosimConfig:
        return CosimConfig(
            t_init=self.t_init if self.t_init is not None else model.t_init,
            t_end=self.t_end if self.t_end is not None else model.t_end,
            macro_dt=macro_dt,
            mode=mode,
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            anderson_depth=self.anderson_depth,
            stehfest_N=self.stehfest_N,
            rich_factor=self.rich_factor,
            control_policy=self.control_policy,
            micro_steps=self.micro_steps,
        )


def load_experiment(path: str, mode_override: str | None = None) -> Experiment:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _ALLOWED_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "model" not in raw:
        raise ConfigError("config key 'model' is required")
    try:
        model_id = ModelId[str(raw["model"])]
    except KeyError:
        raise ConfigError(f"unknown model {raw['model']!r}") from None

    modes_raw = raw.get("mode", "COSTARICA")
    if mode_override is not None:
        modes_raw = mode_override
    if isinstance(modes_raw, str):
        modes_raw = [modes_raw]
    try:
        modes = [Mode[m] for m in modes_raw]
    except KeyError as exc:
        raise ConfigError(f"unknown mode {exc.args[0]!r}") from None

    merged = dict(_DEFAULTS)
    for k in _DEFAULTS:
        if k in raw:
            merged[k] = raw[k]
    try:
        policy = ControlPolicy[str(merged["control_policy"])]
    except KeyError:
        raise ConfigError(f"unknown control policy {merged['control_policy']!r}") from None

    dt_list = raw.get("dt_list")
    if dt_list is not None:
        dt_list = [float(v) for v in dt_list]
    return Experiment(
        model_id=model_id,
        modes=modes,
        t_init=float(raw["t_init"]) if "t_init" in raw else None,
        t_end=float(raw["t_end"]) if "t_end" in raw else None,
        macro_dt=float(raw["macro_dt"]) if "macro_dt" in raw else None,
        dt_list=dt_list,
        output_path=str(raw.get("output_path", "cosim_out.csv")),
        epsilon=float(merged["epsilon"]),
        max_iters=int(merged["max_iters"]),
        anderson_depth=int(merged["anderson_depth"]),
        stehfest_N=int(merged["stehfest_N"]),
        rich_factor=float(merged["rich_factor"]),
        control_policy=policy,
        micro_steps=int(merged["micro_steps"]),
    )


# -- CSV ----------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trace_csv(path: str, model: CosimModel, trace: TraceRecord) -> None:
    cols = ["time"]
    for s in model.graph.systems:
        cols += [f"{s.name}_y{j + 1}" for j in range(s.spec.n_out)]
    cols.append("iterations")
    lines = [",".join(cols)]
    for row in range(trace.times.size):
        vals = [_fmt(trace.times[row])]
        for sys_out in trace.outputs:
            vals += [_fmt(v) for v in sys_out[row]]
        vals.append(str(int(trace.iterations[row])))
        lines.append(",".join(vals))
    _write_atomic(path, "\n".join(lines) + "\n")


def write_header_only_trace_csv(path: str, model: CosimModel) -> None:
    cols = ["time"]
    for s in model.graph.systems:
        cols += [f"{s.name}_y{j + 1}" for j in range(s.spec.n_out)]
    cols.append("iterations")
    _write_atomic(path, ",".join(cols) + "\n")


def write_sweep_csv(path: str, comment: str, header: list[str], rows) -> None:
    lines = [f"# {comment}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _write_atomic(path, "\n".join(lines) + "\n")


def _write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


# -- studies --------------------------------------------------------------

def run_single(exp: Experiment, mode: Mode) -> tuple[CosimModel, TraceRecord]:
    model = build_model(exp.model_id)
    if exp.macro_dt is None:
        raise ConfigError("'macro_dt' is required for a single run")
    cfg = exp.cosim_config(model, exp.macro_dt, mode)
    trace = run_cosimulation(model.graph, cfg)
    return model, trace


def reference_on_times(model: CosimModel, times, micro_dt: float) -> np.ndarray:
    """Characteristic variable of the monolithic reference at the given times."""
    states = monolithic_reference(model.monolithic_rhs, model.monolithic_x0, model.t_init, times, micro_dt)
    return model.char_from_monolithic(np.asarray(times), states)


def convergence_study(
    exp: Experiment,
    reference_micro_dt: float = REFERENCE_MICRO_DT,
    threads: int = 1,
):
    """One co-simulation per (mode, dt); the monolithic reference runs once.

    Returns ``{mode: (dts, errors, iters_mean, slope)}``.
    """
    if not exp.dt_list or len(set(exp.dt_list)) < 4:
        raise ConfigError("convergence sweeps need at least 4 distinct step sizes")
    dts = sorted(set(exp.dt_list), reverse=True)

    probe = build_model(exp.model_id)
    t0 = exp.t_init if exp.t_init is not None else probe.t_init
    t1 = exp.t_end if exp.t_end is not None else probe.t_end
    union = set()
    for dt in dts:
        n = int(np.floor((t1 - t0) / dt + 1e-9))
        union.update(t0 + k * dt for k in range(n + 1))
        union.add(t1)
    union_times = np.array(sorted(union))
    ref_char = reference_on_times(probe, union_times, reference_micro_dt)

    def one_point(args):
        mode, dt = args
        model = build_model(exp.model_id)
        cfg = exp.cosim_config(model, dt, mode)
        trace = run_cosimulation(model.graph, cfg)
        char = model.char_from_trace(trace)
        idx = np.searchsorted(union_times, trace.times)
        idx = np.clip(idx, 0, union_times.size - 1)
        # tolerate one-ulp grid mismatches between the sweeps
        left = np.clip(idx - 1, 0, union_times.size - 1)
        use_left = np.abs(union_times[left] - trace.times) < np.abs(union_times[idx] - trace.times)
        idx[use_left] = left[use_left]
        if np.max(np.abs(union_times[idx] - trace.times)) > 1e-6 * dt + 1e-12:
            raise RuntimeError("macro grid does not align with the reference grid")
        mask = model.char_mask(trace.times)
        err = float(np.max(np.abs(char[mask] - ref_char[idx][mask])))
        iters_mean = float(np.mean(trace.iterations[1:])) if trace.times.size > 1 else 0.0
        return mode, dt, err, iters_mean

    points = [(mode, dt) for mode in exp.modes for dt in dts]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_point, points))
    else:
        results = [one_point(p) for p in points]

    out = {}
    for mode in exp.modes:
        rows = [(dt, err, it) for (md, dt, err, it) in results if md is mode]
        rows.sort(key=lambda r: -r[0])
        ds = [r[0] for r in rows]
        errs = [r[1] for r in rows]
        its = [r[2] for r in rows]
        out[mode] = (ds, errs, its, fit_loglog_slope(ds, errs))
    return out


def single_step_prey_estimate(modified: bool, dt: float, stehfest_N: int = 14) -> float:
    """Full estimation pipeline for the isolated prey over one step from t=0."""
    system, stimulus = make_isolated_prey(modified)
    system.set_initial_time(0.0)
    u0 = value_at_absolute(stimulus, 0.0)
    y0 = system.outputs_now(u0)
    lin = system.make_linearization_point(u0, y0)
    ens = update1(lin)
    tens = update2(ens, dt, stimulus.degree, stehfest_weights(stehfest_N), need_derivatives=False)
    hist = ControlHistory()
    hist.append(0.0, lin.y_c)
    yc_hat, _ = control_predict(hist, dt, ControlPolicy.ZOH)
    y_hat, _ = estimate(tens, xi_for_step(stimulus, 0.0), lin.x_tilde, lin.f_c, yc_hat)
    return float(y_hat[0])


def steperror_study(
    exp: Experiment,
    truth_micro_dt: float = REFERENCE_MICRO_DT,
    threads: int = 1,
):
    """Absolute end-of-step state error of one estimation, per step size."""
    if exp.model_id not in (ModelId.LV_CLASSIC, ModelId.LV_TIME_MODIFIED):
        raise ConfigError("step-error studies exist for the isolated prey models only")
    if not exp.dt_list or len(set(exp.dt_list)) < 2:
        raise ConfigError("step-error studies need at least 2 distinct step sizes")
    modified = exp.model_id is ModelId.LV_TIME_MODIFIED
    dts = sorted(set(exp.dt_list), reverse=True)

    def one_point(dt):
        est = single_step_prey_estimate(modified, dt, exp.stehfest_N)
        system, stimulus = make_isolated_prey(modified)
        system.set_initial_time(0.0)
        m = max(1, int(round(dt / truth_micro_dt)))
        res = system.do_step(stimulus, dt, m)
        return abs(est - float(res.x_end[0]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            errors = list(pool.map(one_point, dts))
    else:
        errors = [one_point(dt) for dt in dts]
    return dts, errors, fit_loglog_slope(dts, errors)


# -- command implementations ---------------------------------------------

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("COSIM_THREADS", "1")))
    except ValueError:
        return 1


def cmd_run(exp: Experiment, with_reference: bool) -> int:
    t0 = exp.t_init
    t1 = exp.t_end
    model = build_model(exp.model_id)
    if t0 is None:
        t0 = model.t_init
    if t1 is None:
        t1 = model.t_end
    if t1 == t0:
        write_header_only_trace_csv(exp.output_path, model)
        return 0
    model, trace = run_single(exp, exp.modes[0])
    write_trace_csv(exp.output_path, model, trace)
    if with_reference:
        ref = reference_on_times(model, trace.times, REFERENCE_MICRO_DT)
        stem, ext = os.path.splitext(exp.output_path)
        header = ["time"] + [f"ref_{j + 1}" for j in range(ref.shape[1])]
        rows = [(trace.times[i], *ref[i]) for i in range(trace.times.size)]
        write_sweep_csv(f"{stem}_reference{ext or '.csv'}",
                        f"model={exp.model_id.name} reference micro_dt={REFERENCE_MICRO_DT}",
                        header, rows)
    return 0


def cmd_convergence(exp: Experiment) -> int:
    results = convergence_study(exp, threads=_threads())
    stem, ext = os.path.splitext(exp.output_path)
    for mode, (dts, errs, its, slope) in results.items():
        comment = (
            f"model={exp.model_id.name} mode={mode.name} "
            f"dts={','.join(_fmt(d) for d in dts)}"
        )
        rows = list(zip(dts, errs, its))
        write_sweep_csv(f"{stem}_{mode.name}{ext or '.csv'}", comment,
                        ["dt", "error", "iterations_mean"], rows)
        print(f"slope {mode.name} {_fmt(slope) if slope is not None else 'nan'}")
    return 0


def cmd_steperror(exp: Experiment) -> int:
    dts, errors, slope = steperror_study(exp, threads=_threads())
    comment = f"model={exp.model_id.name} dts={','.join(_fmt(d) for d in dts)}"
    write_sweep_csv(exp.output_path, comment, ["dt", "error"], list(zip(dts, errors)))
    print(f"slope {exp.model_id.name} {_fmt(slope) if slope is not None else 'nan'}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cosim", description="co-simulation experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "convergence", "steperror"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--mode", default=None, help="override the config's mode")
        if name == "run":
            p.add_argument("--reference", action="store_true",
                           help="also write the monolithic reference as a separate CSV")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        exp = load_experiment(args.config, args.mode)
        if args.command == "run":
            return cmd_run(exp, args.reference)
        if args.command == "convergence":
            return cmd_convergence(exp)
        return cmd_steperror(exp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceFailure as exc:
        print(f"run aborted at t={exc.t_last}: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"run aborted at t={exc.t_last}: {exc}", file=sys.stderr)
        return 3
    except PoleError as exc:
        print(f"run aborted (pole hit during estimation): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
