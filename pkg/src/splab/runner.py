"""Command-line interface and experiment configuration.

Subcommands:
    train <cfg>                run a training experiment from a key=value config
    sparsity <a> <b>           compare two parameter snapshots (or raw float files)
    passk <log> --k 1,2,...    unbiased pass@k over a completion log
    probe <rundir>             difficulty probe over buffered tasks by creation time
    export <rundir>            flatten metrics.jsonl into per-metric CSV files

Exit codes: 0 ok, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import random
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

from . import metrics as metrics_mod
from .policy import load_snapshot, params_from_snapshot, SnapshotFormatError
from .rewards import RewardConfig
from .tasks import Buffer, InductionInfeasible, TaskMode, make_task
from .trainer import TrainConfig, run as run_training

EXPORT_SCHEMA = "# splab-export v1"
PASSK_SCHEMA = "# splab-passk v1"
SPARSITY_SCHEMA = "# splab-sparsity v1"
PROBE_SCHEMA = "# splab-probe v1"


class ConfigError(ValueError):
    pass


_TRAIN_KEYS = {
    "iterations": int,
    "batch_per_mode": int,
    "learning_rate": float,
    "gamma_explore": float,
    "clip_ratio": float,
    "frozen_proposer": bool,
    "seed": int,
    "advantage_norm": str,
    "snapshot_every": int,
    "entropy_prompts_per_role": int,
    "entropy_samples_per_prompt": int,
}
_REWARD_KEYS = {
    "proposer_variant": str,
    "n_mc": int,
    "format_penalty": float,
    "wrong_penalty": float,
}


@dataclass
class RunConfig:
    train: TrainConfig
    rewards: RewardConfig
    output_dir: str | None
    raw: dict[str, str]


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def parse_config(path: Path) -> RunConfig:
    """Parse a flat key=value config file; unknown keys are errors."""
    train_kwargs: dict = {}
    reward_kwargs: dict = {}
    output_dir = None
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value
        try:
            if key == "output_dir":
                output_dir = value
            elif key in _TRAIN_KEYS:
                caster = _TRAIN_KEYS[key]
                if key == "clip_ratio" and value.lower() in ("none", "off", ""):
                    train_kwargs[key] = None
                elif caster is bool:
                    train_kwargs[key] = _parse_bool(value)
                else:
                    train_kwargs[key] = caster(value)
            elif key in _REWARD_KEYS:
                caster = _REWARD_KEYS[key]
                reward_kwargs[key] = _parse_bool(value) if caster is bool else caster(value)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    try:
        return RunConfig(TrainConfig(**train_kwargs), RewardConfig(**reward_kwargs), output_dir, raw)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def cmd_train(args) -> int:
    try:
        cfg = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.output_dir or cfg.output_dir
    if out is None:
        print("error: no output_dir in config and no --output-dir given", file=sys.stderr)
        return 2
    out_dir = Path(out)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not args.force:
            print(f"error: {out_dir} exists and is not empty (use --force)", file=sys.stderr)
            return 2
        shutil.rmtree(out_dir)
    echo = dict(cfg.raw)
    echo["output_dir"] = str(out_dir)
    try:
        run_training(cfg.train, cfg.rewards, out_dir, config_echo=echo, verbose=not args.quiet)
    except OSError as exc:
        print(f"error: {exc} (while writing {out_dir})", file=sys.stderr)
        return 1
    return 0


def _parse_snapshot(path: str):
    try:
        return load_snapshot(Path(path))
    except (SnapshotFormatError, OSError) as exc:
        raise SnapshotFormatError(str(exc))


def cmd_sparsity(args) -> int:
    try:
        if args.raw:
            report = metrics_mod.raw_array_sparsity(Path(args.snap_a), Path(args.snap_b), args.tol)
        else:
            a = _parse_snapshot(args.snap_a)
            b = _parse_snapshot(args.snap_b)
            report = metrics_mod.update_sparsity(a, b, args.tol)
    except (metrics_mod.IncompatibleSnapshots, SnapshotFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(SPARSITY_SCHEMA)
    print("label,total_params,unchanged,sparsity,tolerance")
    label = args.label or f"{Path(args.snap_a).stem}_vs_{Path(args.snap_b).stem}"
    print(f"{label},{report.total_params},{report.unchanged},{report.sparsity!r},{report.tolerance!r}")
    return 0


def _read_completion_log(path: Path) -> list[tuple[str, int, int]]:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = [p.strip() for p in stripped.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"{path}:{lineno}: expected task_id,n,c")
        try:
            task_id, n, c = parts[0], int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
        if not 0 <= c <= n:
            raise ConfigError(f"{path}:{lineno}: need 0 <= c <= n, got n={n}, c={c}")
        rows.append((task_id, n, c))
    if not rows:
        raise ConfigError(f"{path}: no tasks in completion log")
    return rows


def cmd_passk(args) -> int:
    try:
        rows = _read_completion_log(Path(args.log))
        ks = [int(k) for k in args.k.split(",") if k]
        if not ks:
            raise ConfigError("--k must list at least one budget")
        for k in ks:
            for lineno, (task_id, n, c) in enumerate(rows, start=1):
                if k > n:
                    raise ConfigError(f"task {task_id!r} (entry {lineno}): k={k} exceeds n={n}")
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(PASSK_SCHEMA)
    print("k,mean_pass_at_k")
    for k in ks:
        mean = sum(metrics_mod.pass_at_k(n, c, k) for _, n, c in rows) / len(rows)
        print(f"{k},{mean!r}")
    return 0


def _load_manifest(run_dir: Path) -> dict:
    manifest = json.loads((run_dir / "manifest.json").read_text())
    if manifest.get("schema_version") != 1 or manifest.get("kind") != "splab-run-manifest":
        raise ConfigError(f"{run_dir}/manifest.json: unrecognized manifest schema")
    return manifest


def cmd_probe(args) -> int:
    run_dir = Path(args.rundir)
    try:
        manifest = _load_manifest(run_dir)
        seed = manifest["seed"]
        cadence = int(manifest["config"].get("snapshot_every", 25))
        buffer = Buffer.load(TaskMode.DEDUCTION, run_dir / "buffers" / "deduction.txt")
        snapshot_paths = (
            [Path(p) for p in args.snapshots]
            if args.snapshots
            else sorted(
                (run_dir / "snapshots").glob("iter_*.bin"),
                key=lambda p: int(p.stem.split("_")[1]),
            )
        )
        if not snapshot_paths:
            raise ConfigError("no snapshots to probe")

        by_bucket: dict[int, list] = {}
        for triplet in buffer:
            by_bucket.setdefault(triplet.created_iter // cadence * cadence, []).append(triplet)
        rng = random.Random(f"{seed}:probe" if args.probe_seed is None else args.probe_seed)
        question_set = []
        for bucket in sorted(by_bucket):
            pool = by_bucket[bucket]
            if not pool:
                raise ConfigError(f"probe bucket {bucket} has no triplets")
            chosen = pool if len(pool) <= args.per_bucket else rng.sample(pool, args.per_bucket)
            for triplet in chosen:
                question_set.append((make_task(TaskMode.DEDUCTION, triplet, rng), bucket))

        out_dir = Path(args.out) if args.out else run_dir / "probe"
        out_dir.mkdir(parents=True, exist_ok=True)
        length_rows = [PROBE_SCHEMA, "snapshot_iter,bucket,mean_response_len"]
        rate_rows = [PROBE_SCHEMA, "snapshot_iter,bucket,mean_solve_rate"]
        for snap_path in snapshot_paths:
            snap_iter = int(snap_path.stem.split("_")[1])
            params = params_from_snapshot(load_snapshot(snap_path))
            probe_rng = random.Random(f"{seed}:probe-rollouts:{snap_iter}")
            buckets = metrics_mod.difficulty_probe(question_set, params, probe_rng, n=args.rollouts)
            for bucket, cell in buckets.items():
                length_rows.append(f"{snap_iter},{bucket},{cell.mean_response_len!r}")
                rate_rows.append(f"{snap_iter},{bucket},{cell.mean_solve_rate!r}")
        (out_dir / "probe_lengths.csv").write_text("\n".join(length_rows) + "\n")
        (out_dir / "probe_solve_rates.csv").write_text("\n".join(rate_rows) + "\n")
    except (ConfigError, SnapshotFormatError, InductionInfeasible, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"probe CSVs written to {out_dir}")
    return 0


def cmd_export(args) -> int:
    run_dir = Path(args.rundir)
    try:
        _load_manifest(run_dir)
        lines = (run_dir / "metrics.jsonl").read_text().splitlines()
        records = [json.loads(line) for line in lines if line.strip()]
        if not records:
            raise ConfigError(f"{run_dir}/metrics.jsonl is empty")
        out_dir = Path(args.out) if args.out else run_dir / "export"
        out_dir.mkdir(parents=True, exist_ok=True)
        skip = {"iter", "schema_version"}
        for key in records[0]:
            if key in skip:
                continue
            rows = [f"{EXPORT_SCHEMA} metric={key}", "iter,value"]
            rows += [f"{rec['iter']},{rec[key]!r}" for rec in records]
            (out_dir / f"{key}.csv").write_text("\n".join(rows) + "\n")
    except (ConfigError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"per-metric CSVs written to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("config", help="key=value config file")
    p_train.add_argument("--output-dir", help="override output_dir from the config")
    p_train.add_argument("--force", action="store_true", help="clobber an existing output dir")
    p_train.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p_train.set_defaults(func=cmd_train)

    p_sparsity = sub.add_parser("sparsity", help="update sparsity between two snapshots")
    p_sparsity.add_argument("snap_a")
    p_sparsity.add_argument("snap_b")
    p_sparsity.add_argument("--tol", type=float, default=0.0, help="change threshold (default exact)")
    p_sparsity.add_argument("--raw", action="store_true", help="inputs are raw float64 array files")
    p_sparsity.add_argument("--label", help="row label for the CSV output")
    p_sparsity.set_defaults(func=cmd_sparsity)

    p_passk = sub.add_parser("passk", help="pass@k over a completion log (task_id,n,c lines)")
    p_passk.add_argument("log")
    p_passk.add_argument("--k", required=True, help="comma-separated budgets, e.g. 1,2,4,8")
    p_passk.set_defaults(func=cmd_passk)

    p_probe = sub.add_parser("probe", help="difficulty probe by task creation iteration")
    p_probe.add_argument("rundir")
    p_probe.add_argument("--snapshots", nargs="*", help="snapshot files (default: all in run)")
    p_probe.add_argument("--per-bucket", type=int, default=8, help="questions per creation bucket")
    p_probe.add_argument("--rollouts", type=int, default=8, help="solver rollouts per question")
    p_probe.add_argument("--out", help="output directory (default <rundir>/probe)")
    p_probe.add_argument("--probe-seed", type=int, default=None, help="override the probe RNG seed")
    p_probe.set_defaults(func=cmd_probe)

    p_export = sub.add_parser("export", help="flatten metrics.jsonl to per-metric CSVs")
    p_export.add_argument("rundir")
    p_export.add_argument("--out", help="output directory (default <rundir>/export)")
    p_export.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
