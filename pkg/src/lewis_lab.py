#!/usr/bin/env python3
"""
Lewis Lab
Command-line runner for the referential game experiments:
generate features, train agents, analyze their representations, probe
them with noise, render noise vectors and summarise a seed sweep.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from agents import ReceiverParams, SenderParams, receiver_forward, sender_argmax_symbols
from checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from errors import (
    AllSeedsFailedError,
    ConfigError,
    DimensionMismatchError,
    GroupingError,
    LewisLabError,
)
from experiment_config import ExperimentConfig, apply_overrides, config_to_dict, load_experiment_config
from feature_store import (
    FeatureStore,
    generate_synthetic_features,
    load_feature_csv,
    load_feature_store,
    save_feature_store,
)
from game_sampler import GameMode, SplitSpec, make_split, sample_noise_game
from noise_probes import CrossEvalTable, SwapTestResult, cross_eval, swap_test
from noise_renderer import NoiseRenderer, load_vector
from numerics import RngStream
from run_ledger import RunLedger, RunRecord, RunStatus
from similarity_analysis import (
    AlignmentReport,
    Grouping,
    Space,
    SubgroupSimilarityReport,
    alignment_report,
    embed_all,
    select_probe_rows,
    top_shift_pairs,
    write_pair_dump,
    write_shift_pairs,
    z_subgroup_similarity,
)
from trainer import TrainRunResult, run_seed_sweep, train

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / "experiment_config.json"
STORE_NAME = "features.lfs"
LEDGER_NAME = "ledger.json"
SOLVED_NOISE_PROBABILITY = 0.95
SOLVED_NOISE_ATTEMPTS = 10_000
IO_EXIT_CODE = 3


def configure_logging(out_dir: Path, level: str = "INFO", verbose: bool = False) -> Path:
    """Log to <out>/logs/lewis_lab.log and to the console"""
    log_dir = Path(out_dir) / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    log_path = log_dir / "lewis_lab.log"
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, level.upper()),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_path, encoding="utf-8"),
            logging.StreamHandler(),
        ],
        force=True,
    )
    return log_path


def sweep_threads(n_seeds: int) -> int:
    """Worker threads for a sweep, capped by LEWISGAME_THREADS"""
    raw = os.environ.get("LEWISGAME_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"LEWISGAME_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise ConfigError("LEWISGAME_THREADS must be >= 1")
    return min(cap, n_seeds)


def check_report(payload: Dict, report_type) -> Dict:
    """A report payload must carry exactly its dataclass fields and kind tag"""
    names = {f.name for f in fields(report_type)}
    if set(payload) != names:
        raise ConfigError(
            f"{report_type.__name__} payload keys {sorted(set(payload) ^ names)} do not match its schema"
        )
    expected_kind = report_type.__dataclass_fields__["kind"].default
    if payload["kind"] != expected_kind:
        raise ConfigError(f"report kind {payload['kind']!r} is not {expected_kind!r}")
    return payload


def write_json(path: Path, payload: Dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_report(path: Path, report) -> Path:
    payload = check_report(asdict(report), type(report))
    write_json(path, payload)
    logger.info(f"Report written: {path}")
    return path


def probe_id_for(rows: np.ndarray) -> str:
    """Short content hash of the probe row indices"""
    return hashlib.sha256(np.asarray(rows, dtype="<i8").tobytes()).hexdigest()[:16]


class LewisLab:
    """One experiment directory, driven by one configuration."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    # data

    @property
    def store_path(self) -> Path:
        """Where the synthetic store is cached; user feature files are never written"""
        return self.out_dir / STORE_NAME

    def generate_store(self) -> FeatureStore:
        data = self.config.data
        if data.synthetic is None:
            raise ConfigError("no 'data.synthetic' section to generate a store from")
        return generate_synthetic_features(data.synthetic, RngStream.named(data.data_seed, "data"))

    def load_store(self, persist: bool = True) -> Optional[FeatureStore]:
        """Feature file, CSV, cached synthetic store, or a fresh synthetic one"""
        data = self.config.data
        if data.feature_path is not None:
            store = load_feature_store(data.feature_path)
        elif data.csv_path is not None:
            store = load_feature_csv(data.csv_path)
        elif self.store_path.exists():
            store = load_feature_store(self.store_path)
        elif persist:
            save_feature_store(self.generate_store(), self.store_path)
            # reload so every command sees the same float32-rounded features
            store = load_feature_store(self.store_path)
        else:
            return None
        logger.info(f"Feature store ready: {store.summary()}")
        return store

    def split_for(self, store: FeatureStore) -> SplitSpec:
        data = self.config.data
        return make_split(
            store,
            RngStream.named(data.data_seed, "data"),
            test_per_concept=data.test_per_concept,
            validation_per_concept=data.validation_per_concept,
        )

    def probe_rows_for(self, split: SplitSpec) -> np.ndarray:
        return select_probe_rows(
            split, RngStream.named(self.config.data.data_seed, "probe"), self.config.analysis.probe_size
        )

    def gen_data(self) -> Dict[str, int]:
        data = self.config.data
        if data.feature_path is not None or data.csv_path is not None:
            raise ConfigError(
                f"gen-data writes a synthetic store; this configuration reads {data.feature_path or data.csv_path}"
            )
        store = self.generate_store()
        save_feature_store(store, self.store_path)
        counts = np.bincount(np.unique(store.concept_ids(), return_inverse=True)[1])
        if counts.min() < 2:
            logger.warning(
                f"{int((counts < 2).sum())} concept(s) have a single image; "
                f"different-image games cannot be played on this store"
            )
        summary = store.summary()
        print(
            f"Feature store {self.store_path}: N={summary['n']} d={summary['d']} "
            f"concepts={summary['concepts']} classes={summary['classes']}"
        )
        return summary

    # training

    def seed_dir(self, seed: int) -> Path:
        return self.out_dir / f"seed_{seed}"

    def save_run(self, result: TrainRunResult, ledger: RunLedger) -> RunRecord:
        """Checkpoint, curve CSV, run JSON and one ledger record for a finished seed"""
        train_cfg = self.config.train
        run_dir = self.seed_dir(result.seed)
        run_dir.mkdir(parents=True, exist_ok=True)

        checkpoint_path = run_dir / "checkpoint.lgck"
        save_checkpoint(
            checkpoint_path, result.sender, result.receiver, result.seed, train_cfg.mode.value, result.batches_trained
        )
        curve_path = run_dir / "curve.csv"
        pd.DataFrame([asdict(r) for r in result.curve], columns=["batch", "mvr", "rsa_sr", "rsa_si", "rsa_ri"]).to_csv(
            curve_path, index=False, float_format="%.10g"
        )
        rho_sr, rho_si, rho_ri = result.final_alignment
        run_path = write_json(
            run_dir / "run.json",
            {
                "kind": "run",
                "seed": result.seed,
                "mode": train_cfg.mode.value,
                "success": result.success,
                "final_mvr": result.final_mvr,
                "test_reward": result.test_reward,
                "batches_trained": result.batches_trained,
                "rho_sr": rho_sr,
                "rho_si": rho_si,
                "rho_ri": rho_ri,
                "checkpoint_id": checkpoint_hash(checkpoint_path),
                "config": config_to_dict(replace(self.config, train=replace(train_cfg, seed=result.seed))),
                "created_at": datetime.now().isoformat(),
            },
        )
        record = RunRecord(
            seed=result.seed,
            mode=train_cfg.mode.value,
            status=RunStatus.SUCCEEDED if result.success else RunStatus.FAILED,
            final_mvr=result.final_mvr,
            rho_sr=rho_sr,
            rho_si=rho_si,
            rho_ri=rho_ri,
            test_reward=result.test_reward,
            artifacts={
                "checkpoint": str(checkpoint_path),
                "curve": str(curve_path),
                "run": str(run_path),
            },
        )
        return ledger.append(record)

    def train(self) -> List[RunRecord]:
        store = self.load_store()
        train_cfg = self.config.train
        if store.d != train_cfg.d:
            raise DimensionMismatchError(f"store has d={store.d} but train.d={train_cfg.d}")
        split = self.split_for(store)
        probe_rows = self.probe_rows_for(split) if train_cfg.rsa_during_training else None

        ledger_path = self.out_dir / LEDGER_NAME
        if ledger_path.exists():
            logger.warning(f"Replacing existing ledger {ledger_path}")
            ledger_path.unlink()
        ledger = RunLedger(str(ledger_path))
        records: List[RunRecord] = []

        def on_result(result: TrainRunResult):
            records.append(self.save_run(result, ledger))

        if self.config.seeds == 1:
            on_result(train(train_cfg, store, split, probe_rows, progress=True))
        else:
            run_seed_sweep(
                train_cfg,
                store,
                self.config.seeds,
                split,
                probe_rows,
                threads=sweep_threads(self.config.seeds),
                on_result=on_result,
            )

        stats = ledger.get_run_stats()
        print(f"{stats['succeeded']}/{stats['total']} seeds successful (MVR >= 0.80)")
        if stats["succeeded"] == 0:
            raise AllSeedsFailedError(f"none of {stats['total']} seed(s) reached the success threshold")
        return records

    # analysis

    def resolve_checkpoint(self, checkpoint: Optional[str]) -> Path:
        """An explicit file, or the best seed recorded in a run directory's ledger"""
        path = Path(checkpoint) if checkpoint is not None else self.out_dir
        if path.is_dir():
            ledger_path = path / LEDGER_NAME
            if not ledger_path.exists():
                raise FileNotFoundError(f"no {LEDGER_NAME} in run directory {path}")
            best = RunLedger(str(ledger_path)).best_seed()
            if best is None:
                raise AllSeedsFailedError(f"run directory {path} has no successful seed")
            logger.info(f"Using best seed {best.seed} (MVR {best.final_mvr:.4f}) from {path}")
            return Path(best.artifacts["checkpoint"])
        return path

    def analyze(self, checkpoint: Optional[str]) -> Dict[str, Path]:
        checkpoint_path = self.resolve_checkpoint(checkpoint)
        sender, receiver, meta = load_checkpoint(checkpoint_path)
        checkpoint_id = checkpoint_hash(checkpoint_path)
        store = self.load_store()
        if store.d != sender.d:
            raise DimensionMismatchError(f"checkpoint expects d={sender.d}, store has d={store.d}")

        rows = self.probe_rows_for(self.split_for(store))
        manifest = [store.manifest[i] for i in rows]
        x, s, r = embed_all(store.features, sender, receiver, rows)
        report_dir = self.out_dir / "reports"
        written = {}

        alignment = alignment_report(
            store.features, sender, receiver, rows, probe_id_for(rows), checkpoint_id, count_symbols=True
        )
        written["alignment"] = write_report(report_dir / "alignment.json", alignment)

        subgroups = []
        for grouping in Grouping:
            for space, reps in zip(Space, (x, s, r)):
                try:
                    subgroups.append(asdict(z_subgroup_similarity(reps, manifest, grouping, space)))
                except GroupingError as e:
                    logger.warning(f"Skipping {grouping.value} grouping in {space.value} space: {e}")
        written["subgroups"] = write_json(
            report_dir / "subgroups.json",
            {
                "kind": "subgroups",
                "checkpoint_id": checkpoint_id,
                "reports": [check_report(p, SubgroupSimilarityReport) for p in subgroups],
            },
        )

        shifts = top_shift_pairs(x, s, manifest, self.config.analysis.shift_k, receiver_reps=r)
        written["shift_pairs"] = write_shift_pairs(shifts, report_dir / "shift_pairs.csv")
        written["pair_dump"] = write_pair_dump(report_dir / "pair_dump.csv", manifest, x, s, r)
        print(
            f"rho_S/R={alignment.rho_sr:.4f} rho_S/I={alignment.rho_si:.4f} rho_R/I={alignment.rho_ri:.4f} "
            f"({alignment.n_items} images, {alignment.symbols_used} symbols used; trained on {meta.game_mode})"
        )
        return written

    # probes

    def load_probe_agents(self, checkpoints: Sequence[str]) -> Tuple[Dict[GameMode, Tuple], Dict[str, str]]:
        agents: Dict[GameMode, Tuple[SenderParams, ReceiverParams]] = {}
        hashes: Dict[str, str] = {}
        for item in checkpoints:
            path = self.resolve_checkpoint(item)
            sender, receiver, meta = load_checkpoint(path)
            mode = GameMode(meta.game_mode)
            if mode in agents:
                logger.warning(f"Ignoring {path}: a {mode.value}-image checkpoint is already loaded")
                continue
            agents[mode] = (sender, receiver)
            hashes[mode.value] = checkpoint_hash(path)
        if not agents:
            raise ConfigError("probe needs at least one checkpoint")
        dims = {sender.d for sender, _ in agents.values()}
        if len(dims) > 1:
            raise DimensionMismatchError(f"checkpoints disagree on d: {sorted(dims)}")
        return agents, hashes

    def probe(self, checkpoints: Sequence[str]) -> Dict[str, Path]:
        agents, hashes = self.load_probe_agents(checkpoints)
        d = next(iter(agents.values()))[0].d
        store = self.load_store(persist=False)
        split = None
        if store is None:
            logger.warning("No feature store available; only the noise column will be filled")
        else:
            if store.d != d:
                raise DimensionMismatchError(f"checkpoints expect d={d}, store has d={store.d}")
            split = self.split_for(store)

        probe = self.config.probe
        seed = self.config.train.seed
        table = cross_eval(
            agents,
            store,
            split,
            d,
            RngStream.named(seed, "eval"),
            runs=probe.runs,
            n_batches=probe.n_batches,
            batch_size=probe.batch_size,
            progress=sys.stderr.isatty(),
        )
        table = replace(table, checkpoint_ids=hashes)
        report_dir = self.out_dir / "reports"
        written = {"cross_eval": write_report(report_dir / "cross_eval.json", table)}
        for mode, (sender, _) in agents.items():
            result = swap_test(
                sender,
                d,
                n_pairs=probe.swap_pairs,
                runs=probe.swap_runs,
                rng=RngStream.named(seed, "noise"),
                checkpoint_id=hashes[mode.value],
            )
            written[f"swap_test_{mode.value}"] = write_report(report_dir / f"swap_test_{mode.value}.json", result)
        print(format_cross_eval(table))
        return written

    # rendering

    def find_solved_noise_pair(self, sender: SenderParams, receiver: ReceiverParams, rng: RngStream):
        """First noise game the agents solve with target probability >= 0.95"""
        for _ in range(SOLVED_NOISE_ATTEMPTS):
            game = sample_noise_game(sender.d, rng)
            x_t, x_d = game.sender_inputs(None)
            x_l, x_r = game.receiver_inputs(None)
            symbol = int(sender_argmax_symbols(sender, x_t[None, :], x_d[None, :])[0])
            out = receiver_forward(receiver, x_l, x_r, symbol, choice=game.target_position)
            if out.probs[game.target_position] >= SOLVED_NOISE_PROBABILITY:
                return x_t, x_d
        return None

    def render_noise(
        self,
        vector_path: Optional[str],
        d: Optional[int],
        width: Optional[int],
        output: Optional[str],
        checkpoint: Optional[str],
    ) -> List[Path]:
        renderer = NoiseRenderer(width)
        rng = RngStream.named(self.config.train.seed, "noise")
        render_dir = self.out_dir / "renders"
        if checkpoint is not None:
            sender, receiver, _ = load_checkpoint(self.resolve_checkpoint(checkpoint))
            if d is not None and d != sender.d:
                raise DimensionMismatchError(f"--dim {d} does not match the checkpoint's d={sender.d}")
            renderer.grid_shape(sender.d)
            pair = self.find_solved_noise_pair(sender, receiver, rng)
            if pair is None:
                logger.warning(f"No solved noise pair in {SOLVED_NOISE_ATTEMPTS} attempts")
                return []
            out_dir = Path(output) if output is not None else render_dir
            return [
                renderer.render(pair[0], out_dir / "noise_target.pgm"),
                renderer.render(pair[1], out_dir / "noise_distractor.pgm"),
            ]
        if vector_path is not None:
            vector = load_vector(vector_path)
            if d is not None and d != vector.size:
                raise DimensionMismatchError(f"--dim {d} but {vector_path} holds {vector.size} values")
        else:
            n = d if d is not None else self.config.train.d
            if n < 1:
                raise ConfigError("--dim must be >= 1")
            vector = rng.standard_normal(n)
        out_path = Path(output) if output is not None else render_dir / "noise.pgm"
        return [renderer.render(vector, out_path)]

    # summary

    def report(self, run_dir: Optional[str]) -> Dict:
        ledger_path = Path(run_dir or self.out_dir) / LEDGER_NAME
        if not ledger_path.exists():
            raise FileNotFoundError(f"no ledger at {ledger_path}")
        stats = RunLedger(str(ledger_path)).get_run_stats()
        print(format_ledger_stats(stats))
        return stats


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def format_cross_eval(table: CrossEvalTable) -> str:
    columns = list(next(iter(table.cells.values())).keys())
    lines = ["train \\ test".ljust(14) + "".join(c.rjust(10) for c in columns)]
    for train_mode, row in table.cells.items():
        cells = ["-" if row[c] is None else f"{row[c]:.2f}" for c in columns]
        lines.append(train_mode.ljust(14) + "".join(v.rjust(10) for v in cells))
    return "\n".join(lines)


def format_ledger_stats(stats: Dict) -> str:
    if stats["total"] == 0:
        return "Ledger is empty"
    lines = [
        f"Seeds: {stats['total']}  successful: {stats['succeeded']}  failed: {stats['failed']} "
        f"({stats['success_rate']:.1f}%)",
        f"Mean final MVR: {_fmt(stats['mean_final_mvr'])}",
    ]
    for label in ("successful", "failing"):
        group = stats[label]
        lines.append(
            f"{label:>10}: rho_S/R={_fmt(group['rho_sr'])} rho_S/I={_fmt(group['rho_si'])} "
            f"rho_R/I={_fmt(group['rho_ri'])}  seeds={group['seeds']}"
        )
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lewis_lab", description="Referential game experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON (default: experiment_config.json)")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--seeds", type=int, help="number of seeds in a sweep (0..n-1)")
    common.add_argument("--mode", choices=["same", "diff"], help="training game")
    common.add_argument("--out", help="output directory")
    common.add_argument("--probe-size", type=int, help="images in the analysis probe set")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("gen-data", parents=[common], help="generate and save a synthetic feature store")
    commands.add_parser("train", parents=[common], help="train one seed or a sweep")
    analyze = commands.add_parser("analyze", parents=[common], help="alignment, subgroup and shift reports")
    analyze.add_argument("--checkpoint", help="checkpoint file or run directory (best seed)")
    probe = commands.add_parser("probe", parents=[common], help="cross-evaluation table and swap test")
    probe.add_argument("--checkpoint", action="append", default=[], help="checkpoint file or run directory")
    render = commands.add_parser("render-noise", parents=[common], help="render a noise vector as PGM")
    render.add_argument("--vector", help=".npy or text file holding the vector")
    render.add_argument("--dim", type=int, help="vector length when drawing from --seed")
    render.add_argument("--width", type=int, help="grid width for non-square lengths")
    render.add_argument("--output", help="output PGM path (directory with --checkpoint)")
    render.add_argument("--checkpoint", help="render a noise pair these agents solve")
    report = commands.add_parser("report", parents=[common], help="summarise a run ledger")
    report.add_argument("--run-dir", help="directory holding ledger.json (default: --out)")
    return parser


def run_command(args: argparse.Namespace) -> int:
    config_path = args.config
    if config_path is None and DEFAULT_CONFIG_PATH.exists():
        config_path = DEFAULT_CONFIG_PATH
    config = load_experiment_config(config_path)
    config = apply_overrides(
        config, seed=args.seed, seeds=args.seeds, mode=args.mode, out_dir=args.out, probe_size=args.probe_size
    )
    configure_logging(Path(config.out_dir), config.log_level, args.verbose)
    logger.info(f"lewis_lab {args.command} (out={config.out_dir})")

    lab = LewisLab(config)
    if args.command == "gen-data":
        lab.gen_data()
    elif args.command == "train":
        lab.train()
    elif args.command == "analyze":
        lab.analyze(args.checkpoint)
    elif args.command == "probe":
        lab.probe(args.checkpoint or [str(lab.out_dir)])
    elif args.command == "render-noise":
        lab.render_noise(args.vector, args.dim, args.width, args.output, args.checkpoint)
    elif args.command == "report":
        lab.report(args.run_dir)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run_command(args)
    except LewisLabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return IO_EXIT_CODE
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
