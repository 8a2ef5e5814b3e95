"""Command-line interface.

Subcommands: simulate, train, sample, evaluate, fpe-check. Exit codes:
0 success, 1 runtime or check failure, 2 usage error. Every command updates
the output directory's manifest.json.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, equilibrium, fpe, nn, nonequilibrium, simulate
from .evaluate import Grid2D, histogram, jsd, reference_frames
from .exceptions import NeqlabError
from .manifest import load_manifest, write_manifest
from .potential import SystemConfig
from .rng import RngStream, derive_stream

OUTPUT_ROOT_ENV = "NEQLAB_OUTPUT_ROOT"

_CONFIG_FLAGS = (
    "s", "beta", "dt", "total_time", "n_traj", "domain_lo", "domain_hi",
    "seed", "radial_squared",
)


def _default_out_dir() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _require_dir(path: str) -> str:
    if not os.path.isdir(path):
        raise NeqlabError(f"output directory {path!r} does not exist")
    return path


def _merge_config(args) -> SystemConfig:
    """Config file plus flag overrides; flags win."""
    base: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            base = json.loads(fh.read())
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    return SystemConfig.from_dict(base)


def _write_floats_csv(path, header: str, columns) -> None:
    rows = zip(*columns)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _load_dataset(data_dir: str, name: str):
    cfg_path = os.path.join(data_dir, "config.json")
    bin_path = os.path.join(data_dir, f"{name}.bin")
    csv_path = os.path.join(data_dir, f"{name}.csv")
    if os.path.exists(bin_path):
        return simulate.load_trajectories_bin(bin_path)
    if not os.path.exists(csv_path):
        raise NeqlabError(f"no {name}.bin or {name}.csv under {data_dir}")
    with open(cfg_path) as fh:
        full_cfg = SystemConfig.from_json(fh.read())
    from dataclasses import replace

    half = replace(full_cfg, n_traj=full_cfg.n_traj // 2)
    return simulate.load_trajectories_csv(csv_path, half)


def cmd_simulate(args) -> int:
    out_dir = _require_dir(args.out_dir)
    cfg = _merge_config(args)
    manifest = load_manifest(out_dir, __version__)
    t0 = time.time()
    ensemble = simulate.simulate_ensemble(cfg, workers=args.workers)
    train, test = simulate.split_train_test(ensemble)
    elapsed = time.time() - t0
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(cfg.to_json())
    ext = args.format
    for name, ts in (("train", train), ("test", test)):
        path = os.path.join(out_dir, f"{name}.{ext}")
        if ext == "bin":
            simulate.save_trajectories_bin(ts, path)
        else:
            simulate.save_trajectories_csv(ts, path)
        manifest.artifacts[name] = f"{name}.{ext}"
    manifest.config = json.loads(cfg.to_json())
    manifest.artifacts["config"] = "config.json"
    manifest.timings["simulate"] = elapsed
    write_manifest(manifest, out_dir)
    print(
        f"simulated {cfg.n_traj} trajectories x {cfg.n_steps + 1} frames "
        f"in {elapsed:.1f}s -> {out_dir}"
    )
    return 0


def _parse_hidden(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def cmd_train(args) -> int:
    data_dir = args.data_dir
    out_dir = _require_dir(args.out_dir or data_dir)
    train = _load_dataset(data_dir, "train")
    cfg = train.config
    seed = args.seed if args.seed is not None else cfg.seed
    manifest = load_manifest(out_dir, __version__)
    t0 = time.time()
    if args.method == "eq":
        grid = Grid2D(
            (args.grid_lo, args.grid_lo), (args.grid_hi, args.grid_hi),
            (args.grid_bins, args.grid_bins),
        )
        table = equilibrium.distill_energy(train, grid, args.slice_width)
        equilibrium.save_table(table, os.path.join(out_dir, "energy_table.json"))
        net = nn.init_dense_net(
            [3] + _parse_hidden(args.hidden or "64,64") + [1],
            derive_stream(seed, "init-eq"),
        )
        model, history = equilibrium.train_energy_field(
            table, net, derive_stream(seed, "train-eq"),
            steps=args.steps, batch=args.batch, learning_rate=args.lr,
            t_scale=cfg.total_time,
        )
        ckpt = os.path.join(out_dir, "eq_model.json")
        equilibrium.save_energy_model(model, ckpt)
        with open(ckpt) as fh:
            doc = json.load(fh)
        doc["beta"] = cfg.beta
        with open(ckpt, "w") as fh:
            json.dump(doc, fh)
        loss_name = "eq_loss.csv"
        manifest.artifacts["eq_model"] = "eq_model.json"
        manifest.artifacts["energy_table"] = "energy_table.json"
        manifest.grid = grid.to_dict()
        manifest.training["eq"] = {
            "steps": args.steps, "batch": args.batch, "lr": args.lr,
            "hidden": args.hidden or "64,64", "slice_width": args.slice_width,
            "seed": seed, "final_loss": float(history[-1]),
        }
    else:
        schedule = nonequilibrium.make_schedule(
            args.sigma_max, args.sigma_min, args.levels
        )
        net = nn.init_dense_net(
            [4] + _parse_hidden(args.hidden or "128,128") + [2],
            derive_stream(seed, "init-noneq"),
        )
        model = nonequilibrium.ScoreModel(net, schedule, cfg.total_time)
        model, history = nonequilibrium.train_score(
            train, model, args.steps, derive_stream(seed, "train-noneq"),
            batch=args.batch, learning_rate=args.lr,
        )
        nonequilibrium.save_score_model(
            model, os.path.join(out_dir, "noneq_model.json")
        )
        loss_name = "noneq_loss.csv"
        manifest.artifacts["noneq_model"] = "noneq_model.json"
        manifest.schedule = schedule.to_dict()
        manifest.training["noneq"] = {
            "steps": args.steps, "batch": args.batch, "lr": args.lr,
            "hidden": args.hidden or "128,128", "seed": seed,
            "final_loss": float(history[-1]),
        }
    _write_floats_csv(
        os.path.join(out_dir, loss_name), "step,loss",
        [np.arange(len(history)), history],
    )
    manifest.artifacts[loss_name.removesuffix(".csv")] = loss_name
    manifest.timings[f"train_{args.method}"] = time.time() - t0
    write_manifest(manifest, out_dir)
    print(
        f"trained {args.method} for {args.steps} steps "
        f"(final loss {history[-1]:.6g}) in {manifest.timings[f'train_{args.method}']:.1f}s"
    )
    return 0


def cmd_sample(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.method == "eq":
        with open(args.checkpoint) as fh:
            beta = json.load(fh).get("beta", args.beta)
        model = equilibrium.load_energy_model(args.checkpoint)
        points = equilibrium.boltzmann_sample(
            model.net, beta, args.t, model.grid, args.n,
            derive_stream(seed, "sample-eq"), t_scale=model.t_scale,
        )
    else:
        model = nonequilibrium.load_score_model(args.checkpoint)
        points = nonequilibrium.annealed_langevin_sample(
            model, args.t, args.n, eps=args.eps,
            steps_per_level=args.steps_per_level,
            rng=derive_stream(seed, "sample-noneq"),
        )
    _write_floats_csv(
        args.out, "t,x,y",
        [np.full(len(points), args.t), points[:, 0], points[:, 1]],
    )
    print(f"wrote {len(points)} samples at t={args.t} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    data_dir = args.data_dir
    out_dir = _require_dir(args.out_dir or data_dir)
    test = _load_dataset(data_dir, "test")
    cfg = test.config
    seed = args.seed if args.seed is not None else cfg.seed
    grid = Grid2D(
        (args.grid_lo, args.grid_lo), (args.grid_hi, args.grid_hi),
        (args.grid_bins, args.grid_bins),
    )
    with open(args.eq_checkpoint) as fh:
        eq_doc = json.load(fh)
    eq_model = equilibrium.load_energy_model(args.eq_checkpoint)
    beta = eq_doc.get("beta", cfg.beta)
    if eq_model.grid != grid:
        raise NeqlabError(
            f"grid flags {grid} do not match the grid the energy field was "
            f"trained on ({eq_model.grid})"
        )
    noneq_model = nonequilibrium.load_score_model(args.noneq_checkpoint)
    eval_times = np.linspace(args.eval_lo, args.eval_hi, args.eval_times)

    t0 = time.time()
    jsd_eq = np.empty(len(eval_times))
    refs = []
    for j, t in enumerate(eval_times):
        ref = histogram(reference_frames(test, float(t), args.slice_width), grid)
        refs.append(ref)
        pts = equilibrium.boltzmann_sample(
            eq_model.net, beta, float(t), grid, args.n_per_time,
            derive_stream(seed, "eval-eq", j), t_scale=eq_model.t_scale,
        )
        jsd_eq[j] = jsd(ref, histogram(pts, grid))
    t_eq = time.time() - t0

    t0 = time.time()
    blocks = nonequilibrium.sample_at_times(
        noneq_model, eval_times, args.n_per_time, eps=args.eps,
        steps_per_level=args.steps_per_level,
        rng=derive_stream(seed, "eval-noneq"),
    )
    jsd_noneq = np.array(
        [jsd(refs[j], histogram(blocks[j], grid)) for j in range(len(eval_times))]
    )
    t_noneq = time.time() - t0

    curve_path = os.path.join(out_dir, "jsd_curve.csv")
    _write_floats_csv(curve_path, "t,jsd_eq,jsd_noneq",
                      [eval_times, jsd_eq, jsd_noneq])
    with open(os.path.join(out_dir, "jsd_curve_meta.json"), "w") as fh:
        json.dump(
            {"grid": grid.to_dict(), "n_per_time": args.n_per_time,
             "log_base": "e", "seed": seed, "slice_width": args.slice_width},
            fh,
        )
    summary = {
        "mean_jsd_eq": float(jsd_eq.mean()),
        "mean_jsd_noneq": float(jsd_noneq.mean()),
        "fraction_times_noneq_lower": float(np.mean(jsd_noneq < jsd_eq)),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    manifest = load_manifest(out_dir, __version__)
    manifest.grid = grid.to_dict()
    manifest.artifacts.update(
        {"jsd_curve": "jsd_curve.csv", "jsd_curve_meta": "jsd_curve_meta.json",
         "summary": "summary.json"}
    )
    manifest.timings["evaluate_eq"] = t_eq
    manifest.timings["evaluate_noneq"] = t_noneq
    write_manifest(manifest, out_dir)
    print(
        f"mean JSD: eq={summary['mean_jsd_eq']:.4f} "
        f"noneq={summary['mean_jsd_noneq']:.4f} "
        f"(noneq lower at {summary['fraction_times_noneq_lower']:.0%} of times)"
    )
    return 0


def _check_diffusion(args, rng):
    return fpe.greens_function_check(args.sigma, args.t, args.n, rng)


def _check_independence(args, rng):
    schedule = nonequilibrium.make_schedule(
        args.sigma_max, args.sigma_min, args.levels
    )
    forward, _ = nonequilibrium.make_ve_sde(schedule)
    horizon = nonequilibrium.ve_horizon_for_variance(schedule, args.variance)
    gen = rng.generator()
    init_a = np.full((args.n, 1), args.delta_at)
    init_b = gen.uniform(-1.0, 1.0, size=(args.n, 1))
    edges = np.linspace(-8.0, 8.0, 161)
    value = fpe.independence_check(init_a, init_b, forward, horizon, edges, gen)
    return {
        "check_name": "initial_state_independence",
        "parameters": {
            "delta_at": args.delta_at, "accumulated_variance": args.variance,
            "n": args.n, "levels": args.levels,
            "sigma_max": args.sigma_max, "sigma_min": args.sigma_min,
        },
        "statistic": value,
        "threshold": 0.02,
        "pass": bool(value < 0.02),
    }


def _check_mc_vs_pde(args, rng):
    sigma = args.sigma
    sde = nonequilibrium.SdeDescriptor(
        lambda p, t: np.zeros_like(np.asarray(p, float)),
        lambda t: sigma, "forward",
    )
    init = fpe.gaussian_density_1d(-3.0, 3.0, 300, 0.0, 0.2)
    l1 = fpe.fpe_vs_monte_carlo(sde, init, args.horizon, args.n, rng)
    return {
        "check_name": "fpe_vs_monte_carlo_diffusion",
        "parameters": {"sigma": sigma, "horizon": args.horizon, "n": args.n,
                       "grid_h": 0.02, "init_std": 0.2},
        "statistic": l1,
        "threshold": 0.05,
        "pass": bool(l1 < 0.05),
    }


def _check_reverse(args, rng):
    schedule = nonequilibrium.make_schedule(
        args.sigma_max, args.sigma_min, args.levels
    )
    v0 = 0.25
    acc = nonequilibrium.ve_accumulated_variance

    def score(x, sigma_now):
        # analytic score of the forward-diffused Gaussian at the time where
        # the interpolated level equals sigma_now
        ratio = schedule.sigma_max / schedule.sigma_min
        t_now = np.log(sigma_now / schedule.sigma_min) / np.log(ratio)
        return -x / (v0 + acc(schedule, t_now))

    _, reverse = nonequilibrium.make_ve_sde(schedule, score)
    v_end = v0 + acc(schedule, 1.0)
    init = fpe.gaussian_density_1d(-4.0, 4.0, 400, 0.0, np.sqrt(v_end))
    l1 = fpe.fpe_vs_monte_carlo(reverse, init, 1.0, args.n, rng)
    return {
        "check_name": "fpe_vs_monte_carlo_reverse",
        "parameters": {"initial_variance": v0, "final_variance": v_end,
                       "n": args.n, "levels": args.levels,
                       "sigma_max": args.sigma_max, "sigma_min": args.sigma_min},
        "statistic": l1,
        "threshold": 0.05,
        "pass": bool(l1 < 0.05),
    }


def cmd_fpe_check(args) -> int:
    out_dir = _require_dir(args.out_dir)
    rng = derive_stream(args.seed, f"fpe-{args.case}")
    report = {
        "diffusion": _check_diffusion,
        "independence": _check_independence,
        "mc-vs-pde": _check_mc_vs_pde,
        "reverse": _check_reverse,
    }[args.case](args, rng)
    path = os.path.join(out_dir, f"fpe_check_{args.case}.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
    manifest = load_manifest(out_dir, __version__)
    manifest.artifacts[f"fpe_check_{args.case}"] = os.path.basename(path)
    write_manifest(manifest, out_dir)
    status = "PASS" if report["pass"] else "FAIL"
    print(
        f"{report['check_name']}: statistic={report['statistic']:.5f} "
        f"threshold={report['threshold']} {status}"
    )
    return 0 if report["pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neqlab",
        description="Equilibrium vs. non-equilibrium generative sampling on a "
        "rotating multi-well potential, plus stochastic-dynamics checks.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate train/test trajectory files")
    p.add_argument("--out-dir", default=_default_out_dir())
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--s", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--total-time", dest="total_time", type=float)
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--domain-lo", dest="domain_lo", type=float)
    p.add_argument("--domain-hi", dest="domain_hi", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--radial-squared", dest="radial_squared",
                   action="store_const", const=True)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train one of the two pipelines")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--method", choices=("eq", "noneq"), required=True)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", help="comma-separated hidden sizes")
    p.add_argument("--slice-width", type=float, default=0.1)
    p.add_argument("--grid-bins", type=int, default=50)
    p.add_argument("--grid-lo", type=float, default=-1.2)
    p.add_argument("--grid-hi", type=float, default=1.2)
    p.add_argument("--sigma-max", type=float, default=1.0)
    p.add_argument("--sigma-min", type=float, default=0.01)
    p.add_argument("--levels", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", choices=("eq", "noneq"), required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--eps", type=float, default=2e-5)
    p.add_argument("--steps-per-level", type=int, default=100)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="time-resolved JSD comparison curve")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--eq-checkpoint", required=True)
    p.add_argument("--noneq-checkpoint", required=True)
    p.add_argument("--n-per-time", type=int, default=2500)
    p.add_argument("--eval-times", type=int, default=40)
    p.add_argument("--eval-lo", type=float, default=0.5)
    p.add_argument("--eval-hi", type=float, default=19.5)
    p.add_argument("--slice-width", type=float, default=0.1)
    p.add_argument("--grid-bins", type=int, default=50)
    p.add_argument("--grid-lo", type=float, default=-1.2)
    p.add_argument("--grid-hi", type=float, default=1.2)
    p.add_argument("--eps", type=float, default=2e-5)
    p.add_argument("--steps-per-level", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fpe-check", help="stochastic-dynamics verification")
    p.add_argument("--case", required=True,
                   choices=("diffusion", "reverse", "independence", "mc-vs-pde"))
    p.add_argument("--out-dir", default=_default_out_dir())
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--n", type=int, default=100000)
    p.add_argument("--horizon", type=float, default=0.5)
    p.add_argument("--variance", type=float, default=1.0,
                   help="accumulated variance for the independence case")
    p.add_argument("--delta-at", type=float, default=0.0)
    p.add_argument("--sigma-max", type=float, default=1.0)
    p.add_argument("--sigma-min", type=float, default=0.01)
    p.add_argument("--levels", type=int, default=10)
    p.set_defaults(func=cmd_fpe_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (NeqlabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
