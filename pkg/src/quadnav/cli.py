"""Command-line entry points: path search, policy training, plan-and-fly
evaluation with metrics and figures, trace plotting, and a search benchmark.

Exit codes: 0 success, 2 invalid input, 3 planning failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from .dynamics import QuadParams
from .env import EnvConfig, QuadEnv, select_policy_model
from .gridmap import OccupancyGrid, build_esdf, esdf_at, load_map
from .metrics import (
    EVENT_ATTITUDE,
    EVENT_COLLISION,
    EVENT_CP_PASS,
    EVENT_FINISH,
    EVENT_NONE,
    EVENT_TRUNCATED,
    RunMetrics,
    TraceError,
    TraceWriter,
    metrics_from_trace,
    read_trace,
)
from .scenarios import Scenario, built_in_scenes, load_scenario
from .search import (
    UnreachableError,
    SearchStats,
    oracle_shortest_length,
    sample_control_points,
    visibility_search,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_PLANNING = 3
EXIT_IO = 4


def _parse_point(text: str) -> np.ndarray:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError as e:
        raise ValueError(f"expected 'x,y', got {text!r}") from e
    return np.array([x, y])


def _load_config_file(path):
    if path is None:
        return {}
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config file must be a mapping")
    return data


def _env_config(overrides: dict, *more: dict) -> EnvConfig:
    merged = EnvConfig().to_dict()
    for d in (overrides, *more):
        for k in d or {}:
            if k not in merged:
                raise ValueError(f"unknown env config key {k!r}")
        merged.update(d or {})
    return EnvConfig.from_dict(merged)


def _quad_params(config: dict) -> QuadParams:
    p = config.get("params") or {}
    kwargs = {}
    for key in ("m", "l", "kappa", "f_rotor_max"):
        if key in p:
            kwargs[key] = float(p[key])
    if "inertia" in p:
        kwargs["inertia"] = np.array([p["inertia"]["xx"], p["inertia"]["yy"],
                                      p["inertia"]["zz"]], float)
    if "rate_gains" in p:
        kwargs["rate_gains"] = np.array([p["rate_gains"]["x"], p["rate_gains"]["y"],
                                         p["rate_gains"]["z"]], float)
    return QuadParams(**kwargs)


def _scenario_from_args(args) -> Scenario:
    if getattr(args, "scenario", None):
        return load_scenario(args.scenario)
    scenes = built_in_scenes()
    if args.scene not in scenes:
        raise ValueError(f"unknown scene {args.scene!r}; built-ins: {sorted(scenes)}")
    return scenes[args.scene]


# ------------------------------------------------------------------ search

def cmd_search(args) -> int:
    config = _load_config_file(args.config)
    if args.map:
        grid = load_map(args.map)
        if args.start is None or args.goal is None:
            raise ValueError("--start and --goal are required with --map")
        start, goal = _parse_point(args.start), _parse_point(args.goal)
    else:
        scenario = _scenario_from_args(args)
        grid = scenario.grid
        start = _parse_point(args.start) if args.start else scenario.start
        goal = _parse_point(args.goal) if args.goal else scenario.goal
    m = build_esdf(grid, args.inflation)
    r_max = args.r_max if args.r_max else max(grid.width, grid.height)

    stats = SearchStats()
    t0 = time.perf_counter()
    path = visibility_search(m, start, goal, r_max=r_max, seed=args.seed, stats=stats)
    wall_ms = (time.perf_counter() - t0) * 1e3
    cps = sample_control_points(path, start, spacing=args.spacing, count=args.count)

    out = Path(args.out or "search.csv")
    with open(out, "w") as f:
        f.write("# kind=path\n")
        for x, y in path.waypoints:
            f.write(f"{float(x)!r},{float(y)!r}\n")
        f.write("# kind=cp\n")
        for x, y in cps.points:
            f.write(f"{float(x)!r},{float(y)!r}\n")

    print(f"path length:      {path.length:.6f} m")
    print(f"corner vertices:  {max(len(path.waypoints) - 2, 0)}")
    print(f"node expansions:  {stats.expansions}")
    print(f"wall time:        {wall_ms:.3f} ms")
    print(f"control points:   {len(cps.points)} (spacing {args.spacing} m)")
    print(f"csv written:      {out}")
    if args.oracle:
        best = oracle_shortest_length(m, start, goal)
        print(f"oracle length:    {best:.6f} m" if best is not None else "oracle: unreachable")
        if best is not None:
            print(f"matches oracle:   {abs(best - path.length) <= 1e-9}")
    return EXIT_OK


# ------------------------------------------------------------------- train

def cmd_train(args) -> int:
    from .ppo import PpoConfig, train

    config = _load_config_file(args.config)
    ppo_dict = PpoConfig().to_dict()
    ppo_dict.update(config.get("ppo") or {})
    if args.timesteps:
        ppo_dict["total_timesteps"] = args.timesteps
    if args.n_envs:
        ppo_dict["n_envs"] = args.n_envs
    ppo_config = PpoConfig.from_dict(ppo_dict)
    env_config = _env_config(config.get("env") or {})
    params = _quad_params(config)

    out_dir = Path(args.out or f"train_{args.tag}")
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = {"tag": args.tag, "seed": args.seed, "ppo": ppo_config.to_dict(),
            "env": env_config.to_dict()}
    with open(out_dir / f"config_echo_{args.tag}.yaml", "w") as f:
        yaml.safe_dump(echo, f, sort_keys=True)

    result = train(args.tag, ppo_config, out_dir, seed=args.seed,
                   env_config=env_config, params=params)
    print(json.dumps(result, indent=2))
    return EXIT_OK


# --------------------------------------------------------------------- fly

def run_flight(scenario: Scenario, checkpoints: dict, seed: int,
               env_overrides: dict | None = None, params: QuadParams | None = None,
               replan_every: int = 0, search_seed: int | None = None):
    """Plan-and-fly one episode: search the scenario map, sample control
    points, pick the policy by clearance along the chain, and roll the
    policy out through the environment. Returns (RunMetrics, trace dict,
    extras)."""
    from .ppo import deterministic_action, load_checkpoint

    cfg = _env_config(scenario.env_overrides, env_overrides or {},
                      {"z_min": scenario.z_center - scenario.z_halfwidth,
                       "z_max": scenario.z_center + scenario.z_halfwidth})
    m = build_esdf(scenario.grid, cfg.inflation_radius)
    r_max = max(scenario.grid.width, scenario.grid.height)
    sseed = seed if search_seed is None else search_seed

    def plan(from_xy):
        path = visibility_search(m, from_xy, scenario.goal, r_max=r_max, seed=sseed)
        cps = sample_control_points(path, from_xy, spacing=1.0, count=64,
                                    pass_radius=cfg.d_hor, pass_half_height=cfg.d_hgt)
        cps3 = np.column_stack([cps.points, np.full(len(cps.points), scenario.z_center)])
        return path, cps3

    path, cps3 = plan(scenario.start)
    chain = np.vstack([scenario.start3[None, :2], cps3[:, :2]])
    tag = select_policy_model(m, scenario.start3, chain,
                              horizon=cfg.sensing_horizon)
    for t in ("free", "obstacle"):
        if t not in checkpoints or not Path(checkpoints[t]).exists():
            from .ppo import CheckpointError
            raise CheckpointError(f"missing checkpoint for tag '{t}'")
    ck = load_checkpoint(checkpoints[tag])

    env = QuadEnv(cfg, params=params)
    obs = env.reset_scenario(m, cps3, scenario.start3, seed=seed)
    writer = TraceWriter()
    min_clearance = esdf_at(m, env.state.p_w[:2])
    finish_step = None
    dt = cfg.dt
    writer.add(0.0, env.state, float("nan"), 0.0, EVENT_NONE)
    step = 0
    while True:
        action = deterministic_action(ck.policy, ck.obs_norm, obs)
        res = env.step(action)
        step += 1
        obs = res.obs
        min_clearance = min(min_clearance, esdf_at(m, env.state.p_w[:2]))
        if res.info["collision_event"]:
            event = EVENT_COLLISION
        elif res.info["attitude_event"]:
            event = EVENT_ATTITUDE
        elif res.info["finished"]:
            event = EVENT_FINISH
        elif res.info["cp_passes"] > 0:
            event = EVENT_CP_PASS
        elif res.truncated:
            event = EVENT_TRUNCATED
        else:
            event = EVENT_NONE
        writer.add(step * dt, env.state, res.info["applied_f_T"], res.reward, event)
        if res.info["finished"]:
            finish_step = step
        if res.terminated or res.truncated:
            break
        if replan_every and step % replan_every == 0:
            try:
                path, cps3 = plan(env.state.p_w[:2])
                env.control_points = cps3
                env.cp_index = 0
                chain = np.vstack([env.state.p_w[None, :2], cps3[:, :2]])
                new_tag = select_policy_model(m, env.state.p_w, chain,
                                              horizon=cfg.sensing_horizon)
                if new_tag != tag:
                    tag = new_tag
                    ck = load_checkpoint(checkpoints[tag])
            except UnreachableError:
                pass  # keep flying on the previous plan

    trace_text = writer.text()
    trace = _trace_from_text(trace_text)
    derived = metrics_from_trace(trace)
    metrics = RunMetrics(
        success=bool(env.finished and not env.collided),
        time_span=derived["time_span"],
        energy=derived["energy"],
        path_length=derived["path_length"],
        min_clearance=float(min_clearance),
    )
    extras = {"tag": tag, "planned_length": path.length, "steps": step,
              "finish_step": finish_step, "trace_text": trace_text,
              "control_points": cps3, "esdf": m}
    return metrics, trace, extras


def _trace_from_text(text: str) -> dict:
    from .metrics import TRACE_COLUMNS
    lines = text.splitlines()
    numeric = {c: [] for c in TRACE_COLUMNS[:-1]}
    events = []
    for line in lines[1:]:
        parts = line.split(",")
        for c, v in zip(TRACE_COLUMNS[:-1], parts[:-1]):
            numeric[c].append(float(v))
        events.append(parts[-1])
    out = {c: np.array(v) for c, v in numeric.items()}
    out["event"] = events
    return out


def cmd_fly(args) -> int:
    config = _load_config_file(args.config)
    scenario = _scenario_from_args(args)
    checkpoints = {"free": args.checkpoint_free, "obstacle": args.checkpoint_obstacle}
    metrics, trace, extras = run_flight(
        scenario, checkpoints, seed=args.seed,
        env_overrides=config.get("env") or {},
        params=_quad_params(config),
        replan_every=args.replan_every,
    )
    out_dir = Path(args.out or f"fly_{scenario.name}")
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "trace.csv"
    trace_path.write_text(extras["trace_text"])
    with open(out_dir / "metrics.json", "w") as f:
        json.dump({**metrics.to_dict(), "policy_tag": extras["tag"],
                   "planned_length": extras["planned_length"]}, f, indent=2)
    if not args.no_figures:
        from .plots import render_timeseries, render_trajectory
        render_trajectory(trace, out_dir / "trajectory.svg", esdf=extras["esdf"],
                          control_points=extras["control_points"])
        render_timeseries(trace, out_dir / "timeseries.svg")
    print(f"policy tag:     {extras['tag']}")
    print(f"success:        {metrics.success}")
    print(f"time span:      {metrics.time_span:.3f} s")
    print(f"energy:         {metrics.energy:.2f} m^2/s^5")
    print(f"path length:    {metrics.path_length:.3f} m")
    print(f"min clearance:  {metrics.min_clearance:.3f} m")
    print(f"outputs:        {out_dir}")
    return EXIT_OK


# -------------------------------------------------------------------- plot

def cmd_plot(args) -> int:
    from .plots import render_timeseries, render_trajectory
    trace = read_trace(args.trace)
    out_dir = Path(args.out or "plots")
    out_dir.mkdir(parents=True, exist_ok=True)
    render_trajectory(trace, out_dir / "trajectory.svg")
    render_timeseries(trace, out_dir / "timeseries.svg")
    print(f"figures written: {out_dir}/trajectory.svg, {out_dir}/timeseries.svg")
    return EXIT_OK


# ------------------------------------------------------------ bench-search

def _random_bench_map(rng, width, height, density):
    g = OccupancyGrid.empty(width, height, 0.1)
    budget = int(density * width * height)
    for _ in range(int(rng.integers(1, 10))):
        w = int(rng.integers(1, 9))
        h = int(rng.integers(1, 9))
        x = int(rng.integers(0, width - w + 1))
        y = int(rng.integers(0, height - h + 1))
        trial = g.cells.copy()
        trial[y:y + h, x:x + w] = True
        if trial.sum() <= budget:
            g.cells = trial
    return build_esdf(g, 0.0)


def cmd_bench_search(args) -> int:
    rng = np.random.default_rng(args.seed)
    times = []
    expansions = []
    solved = 0
    unsolved = 0
    matches = 0
    for _ in range(args.maps):
        m = _random_bench_map(rng, args.size, args.size, args.density)

        def free_cell():
            while True:
                c = (int(rng.integers(0, args.size)), int(rng.integers(0, args.size)))
                if not m.occupied[c[1], c[0]]:
                    return c
        start = m.center_of(free_cell())
        goal = m.center_of(free_cell())
        stats = SearchStats()
        t0 = time.perf_counter()
        try:
            path = visibility_search(m, start, goal, r_max=2 * args.size,
                                     seed=args.seed, stats=stats)
        except UnreachableError:
            unsolved += 1
            continue
        times.append((time.perf_counter() - t0) * 1e3)
        expansions.append(stats.expansions)
        solved += 1
        if args.oracle:
            best = oracle_shortest_length(m, start, goal)
            if best is not None and abs(best - path.length) <= 1e-9:
                matches += 1
    times = np.array(times)
    print(f"maps:             {args.maps} ({solved} solved, {unsolved} unreachable)")
    if solved:
        print(f"wall time [ms]:   mean {times.mean():.3f}  median {np.median(times):.3f}  "
              f"p95 {np.percentile(times, 95):.3f}  max {times.max():.3f}")
        print(f"expansions:       mean {np.mean(expansions):.1f}  max {max(expansions)}")
    if args.oracle and solved:
        print(f"oracle matches:   {matches}/{solved}")
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadnav",
                                     description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="run seed")
    common.add_argument("--config", help="YAML with env/ppo/params overrides")
    common.add_argument("--out", help="output file or directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", parents=[common], help="visibility path search")
    p.add_argument("--map", help="map text file")
    p.add_argument("--scene", default="corridor", help="built-in scene name")
    p.add_argument("--start", help="x,y world position")
    p.add_argument("--goal", help="x,y world position")
    p.add_argument("--r-max", type=int, default=0, help="expansion radius, cells (0 = map size)")
    p.add_argument("--inflation", type=float, default=0.3, help="obstacle inflation, m")
    p.add_argument("--spacing", type=float, default=1.0, help="control point spacing, m")
    p.add_argument("--count", type=int, default=32, help="max control points")
    p.add_argument("--oracle", action="store_true", help="also run the brute-force oracle")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", parents=[common], help="train a policy")
    p.add_argument("--tag", required=True, choices=["free", "obstacle"])
    p.add_argument("--timesteps", type=int, default=0, help="override total timesteps")
    p.add_argument("--n-envs", type=int, default=0, help="override parallel env count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fly", parents=[common], help="plan and fly a scenario")
    p.add_argument("--scene", default="corridor", help="built-in scene name")
    p.add_argument("--scenario", help="scenario YAML (overrides --scene)")
    p.add_argument("--checkpoint-free", required=True)
    p.add_argument("--checkpoint-obstacle", required=True)
    p.add_argument("--replan-every", type=int, default=0,
                   help="re-run the search every N steps (0 = off)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_fly)

    p = sub.add_parser("plot", parents=[common], help="render figures from a trace CSV")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("bench-search", parents=[common], help="search timing benchmark")
    p.add_argument("--maps", type=int, default=100)
    p.add_argument("--size", type=int, default=40, help="square map size, cells")
    p.add_argument("--density", type=float, default=0.2)
    p.add_argument("--oracle", action="store_true")
    p.set_defaults(func=cmd_bench_search)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .ppo import CheckpointError
    try:
        return args.func(args)
    except UnreachableError as e:
        print(f"planning failure: {e}", file=sys.stderr)
        return EXIT_PLANNING
    except (ValueError, TraceError, CheckpointError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
