"""Command-line entry point wiring data, training, and evaluation together.

Subcommands: ``train``, ``eval-pose``, ``eval-depth``, ``synth``,
``gradcheck``.  Every run writes ``manifest.json`` into the output
directory before any heavy work; a manifest without a ``finished``
timestamp marks an interrupted run.  Exit codes: 0 success, 1 usage or
config error, 2 data error, 3 shape or numeric failure.

Heavy imports happen inside the command handlers so that ``main`` can pin
BLAS thread counts from ``GANVO_THREADS`` before numerics load.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .errors import ConfigError, DataError, NumericError, ShapeError

THREADS_ENV = "GANVO_THREADS"
_BLAS_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _pin_threads() -> None:
    """Propagate GANVO_THREADS to the BLAS pools before numpy loads."""
    value = os.environ.get(THREADS_ENV)
    if not value:
        return
    if not value.isdigit() or int(value) < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    for var in _BLAS_VARS:
        os.environ.setdefault(var, value)


@dataclass
class RunManifest:
    """Reproducibility record written before any command does real work."""

    command: str
    config: str | None
    seed: int
    build: str
    out_dir: str
    started: str
    finished: str | None = None


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _start_manifest(args, command: str, seed: int | None = None) -> tuple[Path, RunManifest]:
    from . import __version__

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command=command,
        config=getattr(args, "config", None),
        seed=args.seed if seed is None else seed,
        build=f"ganvo-{__version__}",
        out_dir=str(out_dir),
        started=_now(),
    )
    _write_manifest(out_dir, manifest)
    return out_dir, manifest


def _write_manifest(out_dir: Path, manifest: RunManifest) -> None:
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")


def _finish_manifest(out_dir: Path, manifest: RunManifest) -> None:
    manifest.finished = _now()
    _write_manifest(out_dir, manifest)


# -- data loading -----------------------------------------------------------


def _load_train_config(args):
    from .training import TrainConfig

    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, steps=args.steps)
    return cfg


def _sequence_ids(args, root) -> list:
    from .data.kitti import available_sequences

    chosen = getattr(args, "sequence", None)
    if chosen:
        return list(chosen)
    return available_sequences(root)


def _load_sequences(args, width: int, height: int) -> list:
    from .data import DatasetManifest
    from .data.kitti import load_kitti_sequence

    root = Path(args.data)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    ids = _sequence_ids(args, root)
    manifest = DatasetManifest(
        root=str(root), train_sequences=tuple(ids), width=width, height=height
    )
    return [load_kitti_sequence(manifest, sid) for sid in ids]


def _training_samples(args, cfg) -> list:
    if args.data == "synthetic":
        from .data import toy_dataset

        if (cfg.width, cfg.height) != (48, 16):
            raise ConfigError(
                f"the built-in synthetic corpus is 16x48; config asks for "
                f"{cfg.height}x{cfg.width}"
            )
        _, train, _ = toy_dataset(cfg.seed)
        return train
    samples = []
    for seq in _load_sequences(args, cfg.width, cfg.height):
        samples.extend(seq.sample_sequences(cfg.n_frames))
    return samples


def _load_models(checkpoint_path):
    from .checkpoint import load_checkpoint
    from .models import build_models
    from .training import TrainConfig

    arrays, meta = load_checkpoint(checkpoint_path)
    cfg = TrainConfig(**meta["config"])
    models = build_models(cfg.network_config(), seed=cfg.seed)
    weights = {
        name: arr
        for name, arr in arrays.items()
        if not name.startswith(("g_opt.", "d_opt."))
    }
    models.load_state(weights)
    models.eval()
    return models, cfg


# -- commands ---------------------------------------------------------------


def cmd_train(args) -> int:
    from .training import Trainer

    cfg = _load_train_config(args)
    samples = _training_samples(args, cfg)  # fail on bad data before any work
    out_dir, manifest = _start_manifest(args, "train", seed=cfg.seed)
    trainer = Trainer(cfg, samples, out_dir=out_dir)
    trainer.run()
    _finish_manifest(out_dir, manifest)
    final = trainer.reports[-1]
    print(f"trained {cfg.steps} steps; final L_g {final.L_g:.3f}, L_final {final.L_final:.3f}")
    return 0


def _predict_sequence_poses(models, seq, n_frames: int):
    """Chain per-window relative poses into camera-to-world matrices.

    Each window targeted at frame t yields the step (t-1 -> t) from its
    previous-source block and, for the final frame only, the step
    (t -> t+1) from its next-source block.
    """
    import numpy as np

    from .engine import Tensor, no_grad
    from .geometry import pose_vec_to_matrix, se3_inverse

    n = seq.n_frames
    if n < n_frames:
        raise DataError(f"sequence {seq.sequence_id} has {n} frames, needs {n_frames}")
    stacks = np.stack(
        [
            np.concatenate([seq.frame(t - 1), seq.frame(t), seq.frame(t + 1)])
            for t in range(1, n - 1)
        ]
    )
    with no_grad():
        out = models.pose(Tensor(stacks)).data  # (n-2, 12)
    poses = [np.eye(4)]
    for t in range(1, n):
        if t <= n - 2:
            step = pose_vec_to_matrix(out[t - 1, :6]).data  # target t -> source t-1
        else:
            step = se3_inverse(pose_vec_to_matrix(out[t - 2, 6:]).data)  # t-1 -> source t
        poses.append(poses[-1] @ step)
    return poses


def cmd_eval_pose(args) -> int:
    from .evaluation import Trajectory, summarize_ate, windowed_ate
    from .export import fmt_mean_std, write_metrics_json, write_trajectory_csv, write_trajectory_svg

    if not args.oracle and not args.checkpoint:
        raise ConfigError("eval-pose needs a checkpoint unless --oracle is set")
    models = None
    width, height, n_frames = 48, 16, 3
    if not args.oracle:
        models, cfg = _load_models(args.checkpoint)
        width, height, n_frames = cfg.width, cfg.height, cfg.n_frames
    sequences = _load_sequences(args, width, height)
    out_dir, manifest = _start_manifest(args, "eval-pose")

    report = {}
    for seq in sequences:
        if seq.gt_cam_to_world is None:
            raise DataError(f"sequence {seq.sequence_id} has no ground-truth poses")
        gt = Trajectory(seq.gt_cam_to_world)
        if args.oracle:
            pred = gt
        else:
            pred = Trajectory(_predict_sequence_poses(models, seq, n_frames))
        summary = summarize_ate(windowed_ate(pred, gt, window=5))
        report[seq.sequence_id] = summary
        print(f"{seq.sequence_id}: ATE {fmt_mean_std(summary['mean'], summary['std'])}")
        write_trajectory_csv(out_dir / f"trajectory_{seq.sequence_id}.csv", pred)
        write_trajectory_svg(out_dir / f"trajectory_{seq.sequence_id}.svg", pred, gt)
    write_metrics_json(out_dir / "ate.json", report, config={"window": 5, "oracle": args.oracle})
    _finish_manifest(out_dir, manifest)
    return 0


_DEPTH_HEADER = ("Abs Rel", "Sq Rel", "RMSE", "RMSE log", "d<1.25", "d<1.25^2", "d<1.25^3")


def cmd_eval_depth(args) -> int:
    import numpy as np

    from .engine import Tensor, no_grad
    from .evaluation import DepthMetrics, depth_metrics
    from .export import fmt3, write_metrics_json

    if not args.oracle and not args.checkpoint:
        raise ConfigError("eval-depth needs a checkpoint unless --oracle is set")
    models = None
    width, height = 48, 16
    if not args.oracle:
        models, cfg = _load_models(args.checkpoint)
        width, height = cfg.width, cfg.height
    sequences = _load_sequences(args, width, height)
    out_dir, manifest = _start_manifest(args, "eval-depth")

    rows = []
    for seq in sequences:
        if seq.depth_paths is None:
            raise DataError(f"sequence {seq.sequence_id} has no ground-truth depth")
        for i in range(seq.n_frames):
            gt = seq.gt_depth(i, max_depth=args.cap)
            if args.oracle:
                pred = gt.data
            else:
                with no_grad():
                    depth, _, _ = models.depth(Tensor(seq.frame(i)[None]))
                pred = depth.data[0, 0]
            rows.append(depth_metrics(pred, gt, cap=args.cap).as_row())
    mean = np.asarray(rows, dtype=float).mean(axis=0)
    report = dict(zip(DepthMetrics.COLUMNS, mean.tolist()))
    report["frames"] = len(rows)

    print("  ".join(_DEPTH_HEADER))
    print("  ".join(fmt3(v) for v in mean))
    write_metrics_json(
        out_dir / "depth_metrics.json",
        report,
        config={"cap": args.cap, "oracle": args.oracle},
    )
    _finish_manifest(out_dir, manifest)
    return 0


def cmd_synth(args) -> int:
    from .data import toy_dataset
    from .export import write_kitti_scene

    out_dir, manifest = _start_manifest(args, "synth")
    ds, _, _ = toy_dataset(args.seed)
    for i, scene in enumerate(ds.scenes):
        write_kitti_scene(scene, out_dir, f"{i:02d}")
        print(f"sequence {i:02d}: {scene.n_frames} frames ({scene.config.kind})")
    _finish_manifest(out_dir, manifest)
    return 0


def cmd_gradcheck(args) -> int:
    from .checksuite import run_all

    results = run_all(seed=args.seed)
    width = max(len(name) for name in results)
    failures = []
    for name, (err, tol, ok) in sorted(results.items()):
        status = "pass" if ok else "FAIL"
        print(f"{name:<{width}}  {err:11.3e}  tol {tol:.0e}  {status}")
        if not ok:
            failures.append(name)
    if failures:
        raise NumericError(f"gradient checks failed: {', '.join(failures)}")
    print(f"{len(results)} gradient checks passed")
    return 0


# -- argument plumbing -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Argparse variant that reports usage problems as config errors."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ganvo", description=__doc__.split("\n", 1)[0])
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run the adversarial training loop")
    train.add_argument("--config", help="key=value training config file")
    train.add_argument("--data", required=True,
                       help="dataset directory, or 'synthetic' for the built-in corpus")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.add_argument("--steps", type=int, default=None, help="override the config step count")
    train.add_argument("--sequence", action="append",
                       help="sequence id to train on (repeatable; default: all)")
    train.set_defaults(fn=cmd_train)

    for name, fn in (("eval-pose", cmd_eval_pose), ("eval-depth", cmd_eval_depth)):
        cmd = sub.add_parser(name, help=f"{name.replace('-', ' ')} against ground truth")
        cmd.add_argument("checkpoint", nargs="?", help="trained checkpoint (.bin)")
        cmd.add_argument("--data", required=True, help="KITTI-layout dataset directory")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--sequence", action="append",
                         help="sequence id to evaluate (repeatable; default: all)")
        cmd.add_argument("--seed", type=int, default=0)
        cmd.add_argument("--oracle", action="store_true",
                         help="feed ground truth as the prediction (protocol check)")
        if name == "eval-depth":
            cmd.add_argument("--cap", type=int, choices=(80, 50), default=80,
                             help="depth cap in meters")
        cmd.set_defaults(fn=fn)

    synth = sub.add_parser("synth", help="materialize the synthetic corpus in KITTI layout")
    synth.add_argument("--out", required=True, help="dataset root to create")
    synth.add_argument("--seed", type=int, default=42)
    synth.set_defaults(fn=cmd_synth)

    grad = sub.add_parser("gradcheck", help="finite-difference check every differentiable op")
    grad.add_argument("--seed", type=int, default=0)
    grad.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    try:
        _pin_threads()
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ShapeError, NumericError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
