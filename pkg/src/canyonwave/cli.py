"""Command-line driver: scene file in, map/coverage artifacts out.

`canyonwave run` executes one experiment and writes, into --out:
rate_map.csv / .ppm / .png (plus ee_map.* in multiuser mode),
coverage.json, and manifest.json. `canyonwave compare` runs two scenes
under one configuration and emits a side-by-side statistics table.
Every artifact embeds the config hash; all randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from canyonwave import __version__, hybrid, mapping, report
from canyonwave.hybrid import HybridConfig, PowerModel
from canyonwave.mapping import DEFAULT_TARGET_RATES, RateMap
from canyonwave.raytracer import dump_rays_csv, load_rays_csv
from canyonwave.scene import Scene, load_scene

INTERP_FACTOR = 8  # display points inserted between adjacent vehicles

_STRUCTURES = {"fc": hybrid.FULLY_CONNECTED, "pc": hybrid.PARTIALLY_CONNECTED}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canyonwave",
        description="mmWave V2X rate-map simulator (ray tracing + analog/hybrid beamforming)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, scene_flags):
        for flag in scene_flags:
            p.add_argument(flag, required=True, help="scene JSON file")
        p.add_argument("--mode", choices=("su", "mu"), required=True)
        p.add_argument("--rho", type=int, default=1, help="codebook oversampling factor")
        csit = p.add_mutually_exclusive_group()
        csit.add_argument("--bits", type=int, help="RVQ feedback bits (mu mode)")
        csit.add_argument("--perfect-csit", action="store_true", help="bypass feedback quantization")
        p.add_argument("--structure", choices=("fc", "pc"), default="fc")
        p.add_argument("--users", type=int, help="served users per slot (mu mode)")
        p.add_argument("--realizations", type=int, help="scheduling realizations (mu mode)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--targets", default="1e9,5e8,5e7", help="comma-separated target rates, bits/s")
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--throughput-scaling", type=float, metavar="EPS", default=None,
                       help="also report (1-EPS)-scaled rate with outage EPS")

    run = sub.add_parser("run", help="run one experiment and write artifacts")
    add_common(run, ["--scene"])
    run.add_argument("--ray-dump", metavar="CSV", help="write traced rays to this CSV")
    run.add_argument("--ray-import", metavar="CSV", help="bypass the tracer with rays from this CSV")

    cmp_ = sub.add_parser("compare", help="run two scenes under one configuration")
    add_common(cmp_, ["--scene-a", "--scene-b"])
    return parser


def _validate(parser: argparse.ArgumentParser, args):
    if args.mode == "mu":
        if args.users is None:
            parser.error("--mode mu requires --users")
        if args.realizations is None:
            parser.error("--mode mu requires --realizations")
    if args.rho < 1:
        parser.error("--rho must be >= 1")
    if args.mode == "su" and args.bits is not None:
        parser.error("--bits only applies to --mode mu")
    try:
        args.target_list = [float(t) for t in args.targets.split(",") if t]
    except ValueError:
        parser.error(f"cannot parse --targets {args.targets!r}")
    if not args.target_list:
        parser.error("--targets must list at least one rate")


def _config_dict(args, scene_hash: str) -> dict:
    cfg = {
        "mode": args.mode,
        "rho": args.rho,
        "seed": args.seed,
        "targets": args.target_list,
        "scene_hash": scene_hash,
        "threads_invariant": True,  # thread count never changes results
    }
    if args.mode == "mu":
        cfg.update(
            users=args.users,
            realizations=args.realizations,
            structure=_STRUCTURES[args.structure],
            feedback_bits=args.bits,  # None => perfect CSIT
        )
    if args.throughput_scaling is not None:
        cfg["throughput_scaling_eps"] = args.throughput_scaling
    return cfg


def _hash_config(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _hybrid_config(args, scene: Scene) -> HybridConfig:
    structure = _STRUCTURES[args.structure]
    sub = scene.n_tx // args.users if structure == hybrid.PARTIALLY_CONNECTED else None
    return HybridConfig(
        structure=structure, users=args.users,
        feedback_bits=args.bits, subarray_size=sub,
    )


def _run_maps(args, scene: Scene, rays_by_link=None, ray_sink=None):
    """Returns (maps to emit as {name: RateMap}, coverage source map)."""
    if args.mode == "su":
        ratemap = mapping.su_map(
            scene, oversampling=args.rho,
            rays_by_link=rays_by_link, ray_sink=ray_sink, threads=args.threads,
        )
        return {"rate_map": ratemap}, ratemap
    cfg = _hybrid_config(args, scene)
    ratemap = mapping.mu_map(
        scene, cfg, realizations=args.realizations, seed=args.seed,
        oversampling=args.rho, power_model=PowerModel(),
        rays_by_link=rays_by_link, ray_sink=ray_sink, threads=args.threads,
    )
    denom = hybrid.consumed_power_w(cfg, PowerModel(), scene.n_tx)
    ee_map = ratemap.scaled(1.0 / denom, "energy-efficiency")
    return {"rate_map": ratemap, "ee_map": ee_map}, ratemap


def _emit_map(ratemap: RateMap, name: str, outdir: Path, scene: Scene, config_hash: str) -> list[str]:
    raster = mapping.interpolate_map(ratemap, INTERP_FACTOR)
    mapping.write_ratemap_csv(ratemap, outdir / f"{name}.csv", config_hash=config_hash)
    report.write_ppm(raster, outdir / f"{name}.ppm", config_hash=config_hash)
    title = f"{ratemap.quantity} map ({ratemap.metadata.get('mode', '?')} mode)"
    report.render_heatmap_png(raster, outdir / f"{name}.png", title=title,
                              scene=scene, config_hash=config_hash)
    return [f"{name}.csv", f"{name}.ppm", f"{name}.ppm.txt", f"{name}.png"]


def _coverage_payload(ratemap: RateMap, args, config_hash: str) -> dict:
    rep = mapping.coverage(ratemap, targets=args.target_list)
    payload = rep.to_dict()
    payload["config_hash"] = config_hash
    if args.throughput_scaling is not None:
        eps = args.throughput_scaling
        import numpy as np

        pooled = np.concatenate(
            ratemap.realization_samples or [ratemap.served_values()]
        )
        r_eps = mapping.rate_with_outage(pooled, eps)
        payload["outage"] = {
            "epsilon": eps,
            "rate_with_outage": r_eps,
            "throughput": (1.0 - eps) * r_eps,
        }
    return payload


def cmd_run(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    scene = load_scene(args.scene)
    scene_hash = _file_hash(args.scene)
    config = _config_dict(args, scene_hash)
    config_hash = _hash_config(config)

    rays_by_link = load_rays_csv(args.ray_import) if args.ray_import else None
    ray_sink = [] if args.ray_dump else None

    maps, coverage_map = _run_maps(args, scene, rays_by_link=rays_by_link, ray_sink=ray_sink)

    artifacts = []
    for name, m in maps.items():
        artifacts += _emit_map(m, name, outdir, scene, config_hash)

    payload = _coverage_payload(coverage_map, args, config_hash)
    (outdir / "coverage.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    artifacts.append("coverage.json")

    if args.ray_dump:
        dump_rays_csv(ray_sink, args.ray_dump)

    manifest = {
        "package_version": __version__,
        "config": config,
        "config_hash": config_hash,
        "scene_file": str(args.scene),
        "scene_hash": scene_hash,
        "artifacts": sorted(artifacts),
        "singular_slots": coverage_map.metadata.get("singular_slots", 0),
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_compare(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    sides = {}
    for label, path in (("a", args.scene_a), ("b", args.scene_b)):
        scene = load_scene(path)
        scene_hash = _file_hash(path)
        config = _config_dict(args, scene_hash)
        maps, coverage_map = _run_maps(args, scene)
        sides[label] = {
            "scene_file": str(path),
            "scene_hash": scene_hash,
            "config_hash": _hash_config(config),
            "map": coverage_map,
        }

    table = mapping.deployment_compare(
        {label: side["map"] for label, side in sides.items()}, targets=args.target_list
    )

    stats = table["variants"]
    delta = {
        "mean_rate": stats["b"]["mean_rate"] - stats["a"]["mean_rate"],
        "coverage_percent": [
            b - a for a, b in zip(stats["a"]["coverage_percent"], stats["b"]["coverage_percent"])
        ],
    }
    payload = {
        "target_rates": table["target_rates"],
        "a": {k: v for k, v in sides["a"].items() if k != "map"} | {"stats": stats["a"]},
        "b": {k: v for k, v in sides["b"].items() if k != "map"} | {"stats": stats["b"]},
        "delta": delta,
    }
    (outdir / "compare.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_compare(args)
    except Exception as exc:  # report failures as machine-readable JSON
        print(
            json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
