"""``hope`` command-line entry point.

Exit codes: 0 success, 1 usage or invalid input, 2 a benchmark check
failed, 3 I/O error.  ``HOPE_SEED`` replaces every default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import FormatError, HopeError

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_IO = 0, 1, 2, 3

BENCH_EPILOG = """\
CSV columns per experiment:
  scaling       impl,L,trial,latency_ns,seed
                impl in {attention, ghn, attention_dense, adaptive, static_deep}
  lid-by-scene  scene_type,seed,trial,d_hat,n_used
  occlusion     gap,mode,suite,seed,trial,occ_track,events,recovered
  routing       policy,seed,trial,deviation,ops
Fitted statistics and the pass/fail checks are printed as JSON on stdout.
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_seed() -> int:
    raw = os.environ.get("HOPE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"HOPE_SEED must be an integer, got {raw!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=1)
    sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_lid(args) -> int:
    from .io import read_cloud
    from .lid import VoxelConfig, estimate_lid

    cloud = read_cloud(args.input)
    voxel = VoxelConfig(args.voxel) if args.voxel > 0 else None
    method = "regression" if args.method == "regress" else "mle"
    est = estimate_lid(cloud, voxel, method, args.discard)
    _emit({"d_hat": est.d_hat, "n_used": est.n_used, "method": est.method})
    return EXIT_OK


def _cmd_route(args) -> int:
    from .io import read_json
    from .router import RouterParams, route

    cfg = read_json(args.config) if args.config else {}
    mode = args.mode or cfg.get("mode", "threshold")
    _emit(route(args.dhat, RouterParams.from_dict(cfg), mode).to_dict())
    return EXIT_OK


def _cmd_scenegen(args) -> int:
    from .ghn import GhnParams, scene_to_dict
    from .io import write_json
    from .scenegen import ScenarioConfig, gen_scene, write_scenario

    seed = args.seed if args.seed is not None else _default_seed()
    cfg = ScenarioConfig(args.type, num_agents=args.agents, frames=args.frames, seed=seed, noise_level=args.noise)
    scenario = gen_scene(cfg)
    out = write_scenario(scenario, args.out)
    write_json(out / "scene.json", scene_to_dict(scenario.hypergraph(0), GhnParams(seed=seed)))
    _emit({"out": str(out), "frames": cfg.frames, "agents": cfg.num_agents, "scene_type": cfg.scene_type})
    return EXIT_OK


def _cmd_ghn(args) -> int:
    from .ghn import redimension_scene, run_ghn, scene_from_dict, scene_to_dict
    from .io import read_json, write_json
    from .router import PathSpec

    scene, params = scene_from_dict(read_json(args.scene))
    spec = PathSpec.named(args.path)
    if scene.agents and scene.agents[0].subspace.dim != spec.subspace_dim:
        scene = redimension_scene(scene, spec.subspace_dim, seed=params.seed)
    out = run_ghn(scene, spec, params)
    write_json(args.out, scene_to_dict(out, params))
    _emit({"out": args.out, "agents": len(out), "edges": len(out.edges), "rounds": spec.rounds, "subspace_dim": spec.subspace_dim})
    return EXIT_OK


def _cmd_track(args) -> int:
    from .memory import track_sequence
    from .scenegen import read_observations

    report = track_sequence(read_observations(args.scenario), args.mode)
    _emit(report.to_dict())
    return EXIT_OK


def _finish_bench(result, out) -> int:
    result.to_csv(out)
    _emit(result.stats)
    return EXIT_OK if result.ok else EXIT_CHECK


def _cmd_bench(args) -> int:
    from . import bench

    seed = args.seed if args.seed is not None else _default_seed()
    if args.experiment == "scaling":
        result = bench.bench_scaling(args.agents, trials=args.trials, warmup=args.warmup, seed=seed)
    elif args.experiment == "lid-by-scene":
        result = bench.bench_lid_by_scene(args.seeds, base_seed=seed)
    elif args.experiment == "occlusion":
        result = bench.bench_occlusion(args.gaps, args.modes, args.seeds, base_seed=seed)
    else:
        result = bench.bench_routing_ablation(args.seeds, base_seed=seed)
    return _finish_bench(result, args.out)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hope", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("lid", help="estimate the intrinsic dimension of a point cloud")
    s.add_argument("--input", required=True, help="HPC1 binary or CSV (header c0,c1,...)")
    s.add_argument("--voxel", type=float, default=0.5, help="voxel size in metres; 0 disables")
    s.add_argument("--method", choices=("mle", "regress"), default="mle")
    s.add_argument("--discard", type=float, default=0.1)
    s.set_defaults(func=_cmd_lid)

    s = sub.add_parser("route", help="route a complexity value to a path")
    s.add_argument("--dhat", type=float, required=True)
    s.add_argument("--config", help="router JSON {centers, beta, tau1, tau2, mode}")
    s.add_argument("--mode", choices=("soft", "hard", "threshold"))
    s.set_defaults(func=_cmd_route)

    s = sub.add_parser("scenegen", help="write a synthetic scenario directory")
    s.add_argument("--type", required=True, choices=("highway", "suburban", "urban", "intersection", "construction", "adverse"))
    s.add_argument("--frames", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--agents", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_scenegen)

    s = sub.add_parser("ghn", help="run message passing on a scene file")
    s.add_argument("--scene", required=True)
    s.add_argument("--path", required=True, choices=("shallow", "medium", "deep"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_ghn)

    s = sub.add_parser("track", help="track a scenario directory's observations")
    s.add_argument("--scenario", required=True)
    s.add_argument("--mode", choices=("none", "stm", "stm+ltm"), default="stm+ltm")
    s.set_defaults(func=_cmd_track)

    b = sub.add_parser("bench", help="run a benchmark", epilog=BENCH_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    bsub = b.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    for name, helptext in (
        ("scaling", "latency against agent count"),
        ("lid-by-scene", "mean LID per scene type"),
        ("occlusion", "Occ-Track per gap and memory mode"),
        ("routing", "LID routing against random routing"),
    ):
        e = bsub.add_parser(name, help=helptext, epilog=BENCH_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        e.add_argument("--out", required=True, help="CSV output path")
        e.add_argument("--seed", type=int, help="base seed (default: HOPE_SEED or 0)")
        if name == "scaling":
            e.add_argument("--agents", type=_int_list, default=[32, 64, 128, 256, 384, 512])
            e.add_argument("--trials", type=int, default=20)
            e.add_argument("--warmup", type=int, default=3)
        elif name == "occlusion":
            e.add_argument("--gaps", type=_int_list, default=[40, 80])
            e.add_argument("--modes", type=_str_list, default=["none", "stm", "stm+ltm"])
            e.add_argument("--seeds", type=int, default=10)
        else:
            e.add_argument("--seeds", type=int, default=20)
        e.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"hope: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HopeError as exc:
        print(f"hope: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
