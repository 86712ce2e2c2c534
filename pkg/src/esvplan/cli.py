"""Command-line entry point: generate, run, compare, replay, presets.

Exit codes: 0 success, 1 error, 2 usage error, 3 patch rejected by an
initialisation filter, 4 replay mismatch, 5 replay refused on hash mismatch.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .dataset import DEFAULT_COMPOSITION, SplitSpec, build_dataset, synth_region
from .env import EpisodeConfig, config_digest, read_action_log, run_config_text, write_action_log
from .esv import build_esv_table, read_esv_overrides
from .grid import GridFormatError, GridState, LandClass, read_grid, write_grid
from .manifest import RunManifest, atomic_write_text, write_json
from .planners import PatchRejected, PlannerSpec, run_episode
from .replay import HashMismatch, check_hashes, replay
from .report import compare, write_report
from .reward import SCENARIOS, RewardConfig, get_scenario, load_flat

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_REJECTED, EXIT_REPLAY_FAIL, EXIT_HASH = 0, 1, 2, 3, 4, 5
OUTPUT_ENV = "ESVPLAN_OUTPUT_DIR"

log = logging.getLogger("esvplan")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ENV, "runs")) / default_name


def parse_composition(text: str) -> dict[LandClass, float]:
    comp = {}
    for part in text.split(","):
        if not part.strip():
            continue
        name, _, value = part.partition("=")
        if not value:
            raise CliError(f"bad composition entry {part!r}; expected class=fraction", EXIT_USAGE)
        comp[LandClass.parse(name)] = float(value)
    return comp


def _split_spec(args) -> SplitSpec:
    return SplitSpec(args.seed, args.train_fraction, args.n_aug, args.shift_range)


def cmd_generate(args) -> int:
    comp = parse_composition(args.composition) if args.composition else DEFAULT_COMPOSITION
    region = synth_region(args.m, comp, args.seed, args.n_pixels)
    out = _out_dir(args, f"region-m{args.m}-seed{args.seed}")
    grid_path = out / "region.grid"
    write_grid(region, grid_path)

    extra = {"composition": {c.label: v for c, v in sorted(comp.items())},
             "m": args.m, "n_pixels": args.n_pixels, "patch_size": args.patch_size}
    if args.m % args.patch_size == 0 and args.m > args.patch_size:
        spec = _split_spec(args)
        ds = build_dataset(region, spec, args.patch_size)
        extra["split"] = {"seed": spec.seed, "train_fraction": spec.train_fraction, "n_aug": spec.n_aug,
                          "shift_range": spec.shift_range, "train_indices": ds.train_indices,
                          "test_indices": ds.test_indices}
        extra["augmentation"] = [
            {"split": name, "index": p.index, "origin": list(p.origin), "shift": list(p.shift),
             "patch_id": p.patch_id}
            for name, patches in (("train", ds.train), ("test", ds.test)) for p in patches]
    RunManifest("generate", __version__, {"region.grid": region.digest()}, {}, {"region": args.seed},
                extra=extra).write(out)
    print(f"wrote {grid_path}")
    return EXIT_OK


def _dynamics(args):
    """(esv, reward config, episode config, config text) from run/compare flags."""
    scenario = get_scenario(args.preset)
    reward, uplift = scenario.reward, scenario.regen_uplift
    if args.reward_config:
        overrides = load_flat(Path(args.reward_config).read_text())
        reward = RewardConfig.from_dict({**reward.to_dict(), **overrides})
        uplift = float(overrides.get("regen_uplift", uplift))
    if args.regen_uplift is not None:
        uplift = args.regen_uplift
    raw = read_esv_overrides(args.esv_overrides) if args.esv_overrides else None
    esv = build_esv_table(uplift, raw)
    for note in esv.warnings:
        log.warning(note)
    episode = EpisodeConfig(t_max=args.t_max, delta_pixels=args.delta_pixels, et_tolerance=args.et_tolerance,
                            noop_limit=args.noop_limit, min_modifiable_fraction=args.min_modifiable_fraction,
                            min_initial_value=args.min_initial_value, water_threshold=args.water_threshold)
    text = run_config_text(esv, reward, episode, args.progress)
    return esv, reward, episode, text


def _filters(text: str) -> tuple[str, ...]:
    if text.strip().lower() == "none":
        return ()
    return tuple(f.strip() for f in text.split(",") if f.strip())


def _planner(kind: str, args, seed: int) -> PlannerSpec:
    return PlannerSpec(kind, seed, args.beam_width, args.horizon, args.tie_break)


def _load_grid(path) -> GridState:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"grid file not found: {path}")
    try:
        return read_grid(path)
    except GridFormatError as exc:
        raise CliError(f"{path}: {exc}") from exc


def cmd_run(args) -> int:
    grid = _load_grid(args.grid)
    esv, reward, episode_config, cfg_text = _dynamics(args)
    spec = _planner(args.planner, args, args.seed)
    cfg_hash = config_digest(cfg_text)
    try:
        record = run_episode(grid, spec, episode_config, esv, reward, _filters(args.filters),
                             grid_id=Path(args.grid).stem, progress=args.progress,
                             grid_hash=grid.digest(), config_hash=cfg_hash)
    except PatchRejected as exc:
        print(f"rejected by filter '{exc.rejection.filter}': {exc.rejection.message}", file=sys.stderr)
        return EXIT_REJECTED

    out = _out_dir(args, f"run-{Path(args.grid).stem}-{spec.name}-seed{args.seed}")
    atomic_write_text(out / "run.cfg", cfg_text)
    write_action_log(out / "actions.log", record.steps, grid.digest(), cfg_hash)
    write_json(out / "record.json", record.to_dict())
    RunManifest("run", __version__, {"grid": grid.digest()}, {"run.cfg": cfg_hash}, {"planner": args.seed},
                extra={"grid_path": str(Path(args.grid).resolve()), "preset": args.preset,
                       "planner": spec.to_dict(), "esv_warnings": list(esv.warnings)}).write(out)
    print(f"{spec.name}: V0={record.initial.v_total:.4f} dV={record.delta_v:.4f} "
          f"steps={record.n_steps} cause={record.cause} -> {out}")
    return EXIT_OK


def _compare_grids(args):
    if args.grids:
        return [(Path(p).stem, _load_grid(p)) for p in args.grids]
    region_dir = Path(args.region)
    region = _load_grid(region_dir / "region.grid")
    manifest = RunManifest.read(region_dir)
    split = manifest.extra.get("split")
    if split is None:
        raise CliError(f"{region_dir}: manifest has no split")
    spec = SplitSpec(split["seed"], split["train_fraction"], split["n_aug"], split["shift_range"])
    ds = build_dataset(region, spec, manifest.extra["patch_size"])
    patches = {"test": ds.test, "train": ds.train, "original": ds.originals}[args.split]
    return [(f"{args.split}{n:03d}_{p.patch_id}", p.grid) for n, p in enumerate(patches)]


def cmd_compare(args) -> int:
    esv, reward, episode_config, cfg_text = _dynamics(args)
    cfg_hash = config_digest(cfg_text)
    kinds = [k.strip() for k in args.methods.split(",") if k.strip()]
    methods = [_planner(k, args, args.seed + n) for n, k in enumerate(kinds)]
    grids = _compare_grids(args)
    report = compare(grids, methods, episode_config, esv, reward, args.progress, args.jobs,
                     _filters(args.filters), cfg_hash)
    out = _out_dir(args, f"compare-{args.preset}-seed{args.seed}")
    paths = write_report(report, out)
    atomic_write_text(out / "run.cfg", cfg_text)
    by_id = dict(grids)
    lines = []
    for rec, row in zip(report.records, report.rows):
        name = f"{rec.grid_id}__{row.method}"
        write_grid(by_id[rec.grid_id], out / "grids" / f"{rec.grid_id}.grid")
        write_action_log(out / "episodes" / f"{name}.log", rec.steps, by_id[rec.grid_id].digest(), cfg_hash)
        lines.append(rec.to_json())
    atomic_write_text(out / "records.jsonl", "".join(line + "\n" for line in lines))
    RunManifest("compare", __version__, {gid: g.digest() for gid, g in grids}, {"run.cfg": cfg_hash},
                {m.name: m.seed for m in methods},
                extra={"preset": args.preset, "skipped": report.skipped, "reference_results": report.reference,
                       "esv_warnings": list(esv.warnings)}).write(out)

    if report.empty:
        print("no effective grids: every grid was rejected by the initialisation filters")
    for s in report.summary():
        print(f"{s['method']:>16}: n={s['n']} mean dV={s['mean_delta_v']:.3f} +/- {s['std_delta_v']:.3f} "
              f"success={s['success_rate']:.2f}")
    for d in report.dominance():
        print(f"{d['method_a']} > {d['method_b']}: {d['wins']}/{d['n']}")
    print(f"skipped {len(report.skipped)} grid(s); wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def _replay_one(log_path: Path, grid_path: Path, cfg_path: Path):
    header, entries = read_action_log(log_path)
    grid = _load_grid(grid_path)
    cfg_text = cfg_path.read_text()
    check_hashes(header, grid, cfg_text)
    return replay(grid, entries, cfg_text)


def cmd_replay(args) -> int:
    jobs = []
    if args.log:
        if not (args.grid and args.config):
            raise CliError("--log needs --grid and --config", EXIT_USAGE)
        jobs.append((Path(args.log), Path(args.grid), Path(args.config)))
    elif args.run_dir:
        run_dir = Path(args.run_dir)
        cfg = run_dir / "run.cfg"
        if (run_dir / "episodes").is_dir():
            for log_path in sorted((run_dir / "episodes").glob("*.log")):
                grid_id = log_path.stem.rsplit("__", 1)[0]
                jobs.append((log_path, run_dir / "grids" / f"{grid_id}.grid", cfg))
        else:
            grid = args.grid or RunManifest.read(run_dir).extra["grid_path"]
            jobs.append((run_dir / "actions.log", Path(grid), cfg))
    else:
        raise CliError("give a run directory or --log/--grid/--config", EXIT_USAGE)

    code = EXIT_OK
    for log_path, grid_path, cfg_path in jobs:
        try:
            verdict = _replay_one(log_path, grid_path, cfg_path)
        except HashMismatch as exc:
            print(f"{log_path}: REFUSED: {exc}")
            return EXIT_HASH
        print(f"{log_path}: {verdict}")
        if not verdict.passed:
            code = EXIT_REPLAY_FAIL
    return code


def cmd_presets(args) -> int:
    if args.show or args.write:
        scenario = get_scenario(args.show or args.write[0])
        text = scenario.reward.to_text() + f"regen_uplift = {scenario.regen_uplift!r}\n"
        if args.write:
            atomic_write_text(args.write[1], text)
            print(f"wrote {args.write[1]}")
        else:
            sys.stdout.write(text)
        return EXIT_OK
    for name, sc in SCENARIOS.items():
        r = sc.reward
        print(f"{name:>17}: w_T={r.w_T} w_C={r.w_C} w_B={r.w_B} w_R={r.w_R} "
              f"w_W={r.w_W_start}->{r.w_W_end} over {r.w_W_ramp_fraction:.0%}, uplift={sc.regen_uplift}  "
              f"({sc.description})")
    return EXIT_OK


def _add_dynamics_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="headline", choices=sorted(SCENARIOS))
    p.add_argument("--reward-config", help="flat key = value file overriding preset weights")
    p.add_argument("--regen-uplift", type=float, help="override the preset's crop uplift")
    p.add_argument("--esv-overrides", help="class_name,raw_value CSV")
    p.add_argument("--progress", type=float, default=1.0, help="anneal progress for w_W (default: final)")
    d = EpisodeConfig()
    p.add_argument("--t-max", type=int, default=d.t_max)
    p.add_argument("--delta-pixels", type=int, default=d.delta_pixels)
    p.add_argument("--et-tolerance", type=float, default=d.et_tolerance)
    p.add_argument("--noop-limit", type=int, default=d.noop_limit)
    p.add_argument("--min-modifiable-fraction", type=float, default=d.min_modifiable_fraction)
    p.add_argument("--min-initial-value", type=float, default=d.min_initial_value)
    p.add_argument("--water-threshold", type=int, default=d.water_threshold)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beam-width", type=int, default=2)
    p.add_argument("--horizon", type=int, default=2)
    p.add_argument("--tie-break", default="lowest-index", choices=["lowest-index", "random-among-ties"])
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esvplan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic region grid and dataset manifest")
    g.add_argument("--m", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--composition", help="e.g. water=0.5,crops=0.5 (default: study-region shares)")
    g.add_argument("--n-pixels", type=int, default=25)
    g.add_argument("--patch-size", type=int, default=10)
    g.add_argument("--train-fraction", type=float, default=0.7)
    g.add_argument("--n-aug", type=int, default=5)
    g.add_argument("--shift-range", type=int, default=2)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run one planner episode on a grid file")
    r.add_argument("--grid", required=True)
    r.add_argument("--planner", default="greedy", choices=["random", "greedy", "beam"])
    r.add_argument("--filters", default="modifiable,value",
                   help="comma list of modifiable,value,effective or 'none'")
    _add_dynamics_flags(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare planners over many grids")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--grids", nargs="+")
    src.add_argument("--region", help="directory written by 'generate'")
    c.add_argument("--split", default="test", choices=["test", "train", "original"])
    c.add_argument("--methods", default="greedy,random")
    c.add_argument("--filters", default="effective")
    c.add_argument("--jobs", type=int, default=1)
    _add_dynamics_flags(c)
    c.set_defaults(func=cmd_compare)

    p = sub.add_parser("replay", help="re-execute action logs and verify rewards")
    p.add_argument("run_dir", nargs="?")
    p.add_argument("--log")
    p.add_argument("--grid")
    p.add_argument("--config")
    p.set_defaults(func=cmd_replay)

    s = sub.add_parser("presets", help="list or export scenario presets")
    s.add_argument("--show", choices=sorted(SCENARIOS))
    s.add_argument("--write", nargs=2, metavar=("PRESET", "FILE"))
    s.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
