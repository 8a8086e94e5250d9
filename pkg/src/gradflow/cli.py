"""Command-line front end.

Subcommands: integrate, minimize, protocol, bench, neti, spectrum, gradcheck.
Configuration is flat JSON (--config file) with one-to-one flag overrides
(--set key=value); every run directory receives a run.json capturing the
resolved configuration, seeds, and version, from which the run can be
reproduced bit-for-bit (wall-clock-limited runs record their accepted-step
cutoffs and replay by count).

Exit codes: 0 success, 1 configuration error, 2 numerical failure (partial
outputs are left in place).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import benchmark, read_benchmark_csv, reference_trajectory, write_benchmark_csv
from .datagen import teacher_student_dataset
from .derivatives import EvalWork, fd_gradient, gradient, hessian_spectrum, loss
from .network import Activation, Dataset, LossConfig, Net, init_params
from .ode import IntegratorConfig, integrate, method_from_name
from .optimize import (
    Budget,
    NewtonTR,
    minimize,
    optimizer_from_name,
    probably_converged_protocol_objective,
)
from .persist import (
    load_params,
    read_run_json,
    save_params,
    save_trajectory,
    write_run_json,
)
from .population import NetISpec, mc_oracle, neti_gradient, neti_loss, neti_train
from .derivatives import as_objective

__all__ = ["main", "ConfigError"]

_SUBCOMMANDS = (
    "integrate",
    "minimize",
    "protocol",
    "bench",
    "neti",
    "spectrum",
    "gradcheck",
)


class ConfigError(ValueError):
    """Malformed or missing configuration; maps to exit code 1."""


def _need(cfg: dict, key: str):
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"missing config key: {key!r}")
    return cfg[key]


def _load_config_file(path: Path, expected_cmd: str) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if "subcommand" in raw and "config" in raw:  # a run.json from a prior run
        if raw["subcommand"] != expected_cmd:
            raise ConfigError(
                f"run.json is for subcommand {raw['subcommand']!r}, "
                f"not {expected_cmd!r}"
            )
        return dict(raw["config"])
    return dict(raw)


def _apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        try:
            cfg[key] = json.loads(value)
        except json.JSONDecodeError:
            cfg[key] = value
    return cfg


def _build_net(spec: dict) -> Net:
    try:
        return Net.from_description(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid net description: {exc}") from exc


def _build_losscfg(cfg: dict) -> LossConfig:
    sub = cfg.get("loss", {}) or {}
    barrier_c = sub.get("barrier_c")
    try:
        return LossConfig(
            barrier_c=np.inf if barrier_c is None else float(barrier_c),
            eta=float(sub.get("eta", 1.0)),
            reduction=sub.get("reduction", "mean"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid loss config: {exc}") from exc


def _build_data(cfg: dict, net: Net) -> tuple[Dataset, dict]:
    sub = _need(cfg, "data")
    source = _need(sub, "source")
    if source == "synthetic":
        teacher = _build_net(_need(sub, "teacher"))
        if teacher.input_dim != net.input_dim:
            raise ConfigError("teacher and net input_dim differ")
        theta_t = init_params(
            teacher,
            int(_need(sub, "teacher_seed")),
            float(sub.get("teacher_scale", 1.0)),
        )
        data = teacher_student_dataset(
            teacher, theta_t, int(_need(sub, "n_samples")), int(_need(sub, "seed"))
        )
        return data, dict(sub)
    if source == "file":
        path = Path(_need(sub, "path"))
        if not path.exists():
            raise ConfigError(f"data file not found: {path}")
        with np.load(path) as archive:
            if "X" not in archive or "Y" not in archive:
                raise ConfigError(f"data file {path} must contain arrays X and Y")
            data = Dataset(archive["X"], archive["Y"])
        return data, dict(sub)
    raise ConfigError(f"unknown data source: {source!r}")


def _build_theta0(cfg: dict, net: Net, key: str = "theta0") -> tuple[np.ndarray, dict]:
    sub = _need(cfg, key)
    if "path" in sub:
        path = Path(sub["path"])
        if not path.exists():
            raise ConfigError(f"{key} file not found: {path}")
        return load_params(path, net=net), dict(sub)
    if "seed" in sub:
        return (
            init_params(net, int(sub["seed"]), float(sub.get("scale", 1.0))),
            dict(sub),
        )
    raise ConfigError(f"config key {key!r} needs either 'path' or 'seed'")


def _outdir(args, cmd: str) -> Path:
    if args.out is not None:
        out = Path(args.out)
    else:
        root = Path(os.environ.get("GRADFLOW_OUT_ROOT", "runs"))
        out = root / f"{cmd}-{int(time.time() * 1000)}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(outdir: Path, cmd: str, cfg: dict) -> None:
    write_run_json(
        outdir,
        {
            "version": __version__,
            "subcommand": cmd,
            "config": cfg,
        },
    )


def _report(outdir: Path, payload: dict, name: str = "report.json") -> None:
    with open(outdir / name, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


# ----------------------------------------------------------------- integrate


def _run_integrate(cfg: dict, outdir: Path) -> int:
    net = _build_net(_need(cfg, "net"))
    losscfg = _build_losscfg(cfg)
    data, _ = _build_data(cfg, net)
    theta0, _ = _build_theta0(cfg, net)
    name = _need(cfg, "method")
    try:
        method = method_from_name(name, dt=cfg.get("dt"))
        replay = cfg.get("replay_steps")
        intcfg = IntegratorConfig(
            method=method,
            t_end=float(_need(cfg, "t_end")),
            abstol=float(cfg.get("abstol", 1e-6)),
            reltol=float(cfg.get("reltol", 1e-6)),
            max_steps=int(replay) if replay else int(cfg.get("max_steps", 10_000_000)),
            wall_budget_seconds=None
            if replay
            else cfg.get("wall_budget_seconds"),
            save_grid=int(cfg.get("grid_points", 1000)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _write_run(outdir, "integrate", cfg)

    traj = integrate(net, theta0, data, losscfg, intcfg)

    save_trajectory(traj, outdir / "trajectory")
    save_params(traj.final_state, outdir / "theta_final.bin", net=net)
    from .plots import plot_trajectory

    plot_trajectory(traj, outdir / "trajectory.png")
    _report(
        outdir,
        {
            "final_time": traj.final_time,
            "final_loss": float(traj.losses[-1]),
            "final_grad_norm": float(traj.grad_norms[-1]),
            "terminated_by": traj.terminated_by,
            "n_accepted": traj.n_accepted,
            "n_rejected": traj.n_rejected,
            "work": {
                "n_loss": traj.work.n_loss,
                "n_grad": traj.work.n_grad,
                "n_hess": traj.work.n_hess,
            },
        },
    )
    cfg["replay_steps"] = traj.n_accepted
    _write_run(outdir, "integrate", cfg)
    return 0


# ------------------------------------------------------------------ minimize


def _build_optimizer(cfg: dict):
    name = _need(cfg, "method")
    kwargs = {}
    fields = {
        "gd": ("lr",),
        "adam": ("lr", "beta1", "beta2", "eps"),
        "bfgs": (),
        "lbfgs": ("memory", "scale_init"),
        "newton_tr": ("delta0", "delta_max"),
    }
    if name not in fields:
        raise ConfigError(f"unknown optimizer method: {name!r}")
    for f in fields[name]:
        if f in cfg and cfg[f] is not None:
            kwargs[f] = cfg[f]
    try:
        return optimizer_from_name(name, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid optimizer config: {exc}") from exc


def _run_minimize(cfg: dict, outdir: Path) -> int:
    net = _build_net(_need(cfg, "net"))
    losscfg = _build_losscfg(cfg)
    data, _ = _build_data(cfg, net)
    theta0, _ = _build_theta0(cfg, net)
    method = _build_optimizer(cfg)
    replay = cfg.get("replay_iters")
    budget = Budget(
        max_iters=int(replay) if replay else int(cfg.get("max_iters", 1000)),
        grad_tol=float(cfg.get("grad_tol", 1e-8)),
        wall_seconds=None if replay else cfg.get("wall_seconds"),
    )
    _write_run(outdir, "minimize", cfg)

    theta_opt, report = minimize(net, theta0, data, losscfg, method, budget)

    save_params(theta_opt, outdir / "theta_opt.bin", net=net)
    _report(
        outdir,
        {
            "final_loss": report.final_loss,
            "grad_norm": report.grad_norm,
            "iterations": report.iterations,
            "status": report.status,
            "n_linesearch_failures": report.n_linesearch_failures,
            "n_skipped_updates": report.n_skipped_updates,
        },
    )
    cfg["replay_iters"] = report.iterations
    _write_run(outdir, "minimize", cfg)
    return 0


# ------------------------------------------------------------------ protocol


def _run_protocol(cfg: dict, outdir: Path) -> int:
    net = _build_net(_need(cfg, "net"))
    losscfg = _build_losscfg(cfg)
    data, _ = _build_data(cfg, net)
    theta0, _ = _build_theta0(cfg, net)
    try:
        method = NewtonTR(
            delta0=float(cfg.get("delta0", 1.0)),
            delta_max=float(cfg.get("delta_max", 100.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _write_run(outdir, "protocol", cfg)

    obj = as_objective(net, data, losscfg)
    theta_fin, report = probably_converged_protocol_objective(
        obj,
        theta0,
        epochs=int(cfg.get("epochs", 30)),
        steps_per_epoch=int(cfg.get("steps_per_epoch", 10_000)),
        method=method,
        grad_tol=float(cfg.get("grad_tol", 1e-16)),
        eta=losscfg.eta,
    )

    save_params(theta_fin, outdir / "theta_final.bin", net=net)
    from .plots import plot_epoch_losses

    if report.epoch_losses:
        plot_epoch_losses(report.epoch_losses, outdir / "epochs.png")
    _report(
        outdir,
        {
            "status": report.status,
            "final_loss": report.final_loss,
            "grad_norm": report.grad_norm,
            "min_eigenvalue": report.min_eigenvalue,
            "iterations": report.iterations,
            "epoch_losses": report.epoch_losses,
        },
    )
    _write_run(outdir, "protocol", cfg)
    return 0


# --------------------------------------------------------------------- bench


def _run_bench(cfg: dict, outdir: Path) -> int:
    net = _build_net(_need(cfg, "net"))
    losscfg = _build_losscfg(cfg)
    data, _ = _build_data(cfg, net)
    methods_cfg = _need(cfg, "methods")
    try:
        methods = [
            method_from_name(m["name"], dt=m.get("dt")) for m in methods_cfg
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid methods list: {exc}") from exc
    budgets = [float(b) for b in _need(cfg, "budgets")]
    seeds = [int(s) for s in cfg.get("seeds", [0])]
    t_end = float(_need(cfg, "t_end"))
    grid_points = int(cfg.get("grid_points", 1000))
    ref_tol = float(cfg.get("ref_tol", 1e-6))
    theta0_scale = float(cfg.get("theta0_scale", 1.0))
    stored_replay = cfg.get("replay") or {}
    _write_run(outdir, "bench", cfg)

    all_records = []
    for seed in seeds:
        theta0 = init_params(net, seed, theta0_scale)
        ref = reference_trajectory(
            net, theta0, data, losscfg, t_end, tol=ref_tol, grid_points=grid_points
        )
        replay_steps = None
        if stored_replay:
            replay_steps = {}
            from .ode import method_name as _mn

            for m in methods:
                for b in budgets:
                    key = f"{_mn(m)}|{b!r}|{seed}"
                    if key in stored_replay:
                        replay_steps[(_mn(m), float(b))] = int(stored_replay[key])
        records = benchmark(
            net,
            theta0,
            data,
            losscfg,
            methods,
            budgets,
            ref,
            seed=seed,
            grid_points=grid_points,
            replay_steps=replay_steps,
        )
        all_records.extend(records)

    write_benchmark_csv(all_records, outdir / "bench.csv")
    from .plots import plot_benchmark

    plot_benchmark(all_records, outdir / "benchmark.png")
    cfg["replay"] = {
        f"{r.method}|{r.budget_s!r}|{r.seed}": r.steps for r in all_records
    }
    _write_run(outdir, "bench", cfg)
    failures = [r for r in all_records if r.error]
    if failures:
        print(f"bench: {len(failures)} run(s) failed", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------- neti


def _build_netispec(cfg: dict) -> NetISpec:
    sub = _need(cfg, "netispec")
    if "path" in sub:
        path = Path(sub["path"])
        if not path.exists():
            raise ConfigError(f"netispec file not found: {path}")
        with open(path) as fh:
            return NetISpec.from_json_dict(json.load(fh))
    if "random" in sub:
        r = sub["random"]
        try:
            D = int(_need(r, "input_dim"))
            K = int(_need(r, "student"))
            M = int(_need(r, "teacher"))
            rng = np.random.default_rng(int(_need(r, "seed")))
            scale = float(r.get("scale", 1.0))
            return NetISpec(
                input_dim=D,
                W=scale * rng.standard_normal((K, D)),
                a=scale * rng.standard_normal(K),
                V=scale * rng.standard_normal((M, D)),
                a_star=scale * rng.standard_normal(M),
                activation=Activation(r.get("activation", "erf_scaled")),
                trainable_output=bool(r.get("trainable_output", True)),
            )
        except ValueError as exc:
            raise ConfigError(f"invalid random netispec: {exc}") from exc
    try:
        return NetISpec.from_json_dict(sub)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid netispec: {exc}") from exc


def _run_neti(cfg: dict, outdir: Path) -> int:
    spec = _build_netispec(cfg)
    _write_run(outdir, "neti", cfg)

    result = {
        "loss": neti_loss(spec),
        "grad_norm": float(np.linalg.norm(neti_gradient(spec))),
    }
    if cfg.get("mc_samples"):
        est, se = mc_oracle(
            spec, int(cfg["mc_samples"]), int(cfg.get("mc_seed", 0))
        )
        result["mc_estimate"] = est
        result["mc_standard_error"] = se
    if cfg.get("train"):
        method = _build_optimizer(
            {**cfg, "method": cfg.get("train_method", "newton_tr")}
        )
        budget = Budget(
            max_iters=int(cfg.get("max_iters", 1000)),
            grad_tol=float(cfg.get("grad_tol", 1e-8)),
            wall_seconds=cfg.get("wall_seconds"),
        )
        warm = None
        if cfg.get("warm_start_t_end"):
            warm = IntegratorConfig(
                method=method_from_name(cfg.get("warm_start_method", "adaptive_rk45")),
                t_end=float(cfg["warm_start_t_end"]),
                max_steps=int(cfg.get("warm_start_max_steps", 1000)),
                save_grid=2,
            )
        spec_opt, report = neti_train(
            spec, method, budget, warm_start=warm, eta=float(cfg.get("eta", 1.0))
        )
        result["train_report"] = {
            "final_loss": report.final_loss,
            "grad_norm": report.grad_norm,
            "iterations": report.iterations,
            "status": report.status,
        }
        with open(outdir / "netispec_trained.json", "w") as fh:
            json.dump(spec_opt.to_json_dict(), fh, indent=2)
            fh.write("\n")
    _report(outdir, result, "neti_result.json")
    _write_run(outdir, "neti", cfg)
    return 0


# ------------------------------------------------------------------ spectrum


def _run_spectrum(cfg: dict, outdir: Path) -> int:
    net = _build_net(_need(cfg, "net"))
    losscfg = _build_losscfg(cfg)
    data, _ = _build_data(cfg, net)
    theta, _ = _build_theta0(cfg, net, key="theta")
    _write_run(outdir, "spectrum", cfg)

    work = EvalWork()
    eigs = hessian_spectrum(net, theta, data, losscfg, work=work)

    with open(outdir / "eigenvalues.json", "w") as fh:
        json.dump(
            {
                "eigenvalues_ascending": eigs.tolist(),
                "min": float(eigs[0]),
                "max": float(eigs[-1]),
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    from .plots import plot_spectrum

    plot_spectrum(eigs, outdir / "spectrum.png")
    _write_run(outdir, "spectrum", cfg)
    return 0


# ----------------------------------------------------------------- gradcheck


def _run_gradcheck(cfg: dict, outdir: Path) -> int:
    net_cfg = cfg.get("net") or {
        "input_dim": 2,
        "layers": [[3, "tanh", True], [1, "identity", True]],
    }
    net = _build_net(net_cfg)
    losscfg = _build_losscfg(cfg)
    seed = int(cfg.get("seed", 0))
    rng = np.random.default_rng(seed)
    n = int(cfg.get("n_samples", 16))
    data = Dataset(
        rng.standard_normal((n, net.input_dim)),
        rng.standard_normal((n, net.output_dim)),
    )
    theta = init_params(net, seed + 1)
    step = float(cfg.get("step", 1e-6))
    _write_run(outdir, "gradcheck", cfg)

    g = gradient(net, theta, data, losscfg)
    g_fd = fd_gradient(net, theta, data, losscfg, step=step)
    denom = np.maximum(np.abs(g), np.abs(g_fd))
    denom[denom == 0] = 1.0
    max_rel = float(np.max(np.abs(g - g_fd) / denom))

    print(f"gradcheck: max relative finite-difference error = {max_rel:.3e}")
    _report(outdir, {"max_relative_error": max_rel, "step": step, "seed": seed})
    _write_run(outdir, "gradcheck", cfg)
    return 0 if max_rel < 1e-6 else 2


# ---------------------------------------------------------------------- main

_RUNNERS = {
    "integrate": _run_integrate,
    "minimize": _run_minimize,
    "protocol": _run_protocol,
    "bench": _run_bench,
    "neti": _run_neti,
    "spectrum": _run_spectrum,
    "gradcheck": _run_gradcheck,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gradflow",
        description=(
            "Gradient-flow integration, exact Hessian diagnostics, and "
            "fixed-point search for small dense networks."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON config or a prior run.json")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            dest="overrides",
            metavar="KEY=VALUE",
            help="override a config key (value parsed as JSON when possible)",
        )
        p.add_argument("--out", type=Path, default=None, help="output directory")
    args = parser.parse_args(argv)

    try:
        cfg = (
            _load_config_file(args.config, args.cmd)
            if args.config is not None
            else {}
        )
        cfg = _apply_overrides(cfg, args.overrides)
        outdir = _outdir(args, args.cmd)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        return _RUNNERS[args.cmd](cfg, outdir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # numerical failure: keep partial outputs
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
