"""Command-line experiment runner.

    entkcone dynamics --config run.cfg      # eNTK evolution, curves, report, embedding
    entkcone switch   --config run.cfg      # std -> lin switching sweep
    entkcone embed    --out runs/default    # recompute the embedding of a stored run
    entkcone validate                       # invariant checks on a tiny model

Exit codes: 0 success, 1 usage/config error, 2 numeric divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .analysis import (
    adjacent_distances,
    cone_embedding,
    cone_report,
    distance_to_references,
    pairwise_distances,
    velocity_series,
)
from .checks import run_checks
from .data import load_idx, load_mnist5k, probe_sample, synth_blobs_split
from .errors import (
    CheckpointMissing,
    ConfigError,
    DivergenceError,
    FormatError,
    NumericError,
    UsageError,
)
from .lintrain import switch_experiment
from .nn import init_model
from .ntk import GramMatrix, GramRecorder
from .store import atomic_write, load_trajectory_index, save_trajectory, write_csv
from .svg import emit_svg
from .train import Checkpoint, TrajectoryLog, train

log = logging.getLogger("entkcone")

RESOLVED_NAME = "config.resolved.txt"
EMBED_KEY = ("stored", "stored")


def load_data(cfg):
    """Train and test Datasets for the configured source."""
    if cfg.data_source == "mnist5k":
        train_set, test_set = load_mnist5k("train"), load_mnist5k("test")
    elif cfg.data_source == "idx":
        train_set = load_idx(cfg.data_train_images, cfg.data_train_labels, name="idx-train")
        test_set = None
        if cfg.data_test_images and cfg.data_test_labels:
            test_set = load_idx(cfg.data_test_images, cfg.data_test_labels, name="idx-test")
    else:
        train_set, test_set = synth_blobs_split(
            cfg.seed + 3, cfg.blobs_per_class, cfg.blobs_dim, cfg.blobs_classes,
            cfg.blobs_spread, cfg.blobs_separation)
    if cfg.data_limit is not None and cfg.data_limit < len(train_set):
        # fixed permutation: files may be sorted by class
        keep = np.sort(np.random.default_rng(0).permutation(len(train_set))[:cfg.data_limit])
        train_set = train_set.subset(keep)
    return train_set, test_set


def _setup(cfg):
    train_set, test_set = load_data(cfg)
    arch = cfg.arch_spec(train_set.dim, train_set.n_classes)
    return train_set, test_set, init_model(arch, cfg.init_seed)


def _write_svg(path, series, **kw):
    series = [(label, pts) for label, pts in series if pts]
    if series:
        atomic_write(path, emit_svg(series, **kw))


def _write_embedding(out, S, iterations, chash):
    emb = cone_embedding(S, iterations)
    write_csv(out / "embedding.csv", ("t", "x", "y"), emb.points, chash)
    _write_svg(out / "embedding.svg", [("eNTK H(t)", [(x, y) for _, x, y in emb.points])],
               title=f"eNTK trajectory (classical MDS, stress {emb.stress:.3f})",
               xlabel="MDS 1", ylabel="MDS 2", style="embedding")
    return emb


def run_dynamics(cfg, quiet=False):
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfgmod.config_hash(cfg)
    train_set, test_set, model = _setup(cfg)
    probe_source = train_set if cfg.probe_split == "train" else test_set
    if probe_source is None:
        raise ConfigError("probe.split = test needs a test set")
    probe = probe_sample(probe_source, cfg.probe_size, cfg.resolved_probe_seed,
                         cfg.probe_stratified, cfg.probe_split)
    recorder = GramRecorder(probe, cfg.readout_rule, cfg.chunk)
    log.info("training %s (%d params) for %d iterations", cfg.arch_kind, model.n_params,
             cfg.iterations)
    traj = train(model, train_set, cfg.train_config(), hooks=[recorder])
    key = recorder.key

    refs = distance_to_references(traj, cfg.taus, key)
    adjs = adjacent_distances(traj, cfg.dts, key)
    rows = [(c.kind, c.param, t, s) for c in refs + adjs for t, s in c.points]
    write_csv(out / "kernel_distance.csv", ("kind", "param", "t", "S"), rows, chash)
    vel_rows = [(t, c.param, v) for c in adjs for t, v in velocity_series(c)]
    write_csv(out / "velocity.csv", ("t", "dt", "v"), vel_rows, chash)

    report = cone_report(traj, cfg.taus, cfg.dts, cfg.rho, cfg.window, key)
    emb = _write_embedding(out, pairwise_distances(traj, key), traj.iterations, chash)
    text = (f"# config_hash={chash}\n"
            f"# embedding=classical-mds (projection method chosen here, not prescribed)\n"
            + report.to_text()
            + f"embedding_stress = {emb.stress:.17g}\n"
            + f"final_train_loss = {traj.final.train_loss:.17g}\n"
            + f"final_train_accuracy = {traj.final.train_accuracy:.17g}\n")
    atomic_write(out / "cone_report.txt", text)

    _write_svg(out / "kernel_distance_ref.svg",
               [(f"tau={c.param}", c.points) for c in refs],
               title="Kernel distance to reference S(theta(t), theta(tau))",
               xlabel="iteration t", ylabel="S")
    _write_svg(out / "kernel_distance_adj.svg",
               [(f"dt={c.param}", c.points) for c in adjs],
               title="Adjacent kernel distance S(theta(t), theta(t+dt))",
               xlabel="iteration t", ylabel="S")
    save_trajectory(out / "checkpoints", traj, key, chash)
    atomic_write(out / RESOLVED_NAME, f"# config_hash={chash}\n" + cfgmod.dumps(cfg))
    if not quiet:
        sys.stdout.write(cfgmod.dumps(cfg))
        sys.stdout.write(report.to_text())
    return traj, report


def run_switch(cfg, quiet=False):
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfgmod.config_hash(cfg)
    train_set, test_set, model = _setup(cfg)
    if test_set is None:
        raise ConfigError("the switching experiment needs a test set")
    tcfg = cfg.train_config(iterations=cfg.horizon).replace(checkpoints=(0, cfg.horizon))
    rows = []
    for t_switch in sorted(set(cfg.switch_grid)):
        res = switch_experiment(model, train_set, test_set, tcfg, t_switch, cfg.horizon)
        log.info("t_switch=%d test_loss=%.4f test_acc=%.4f", t_switch, res.test_loss,
                 res.test_accuracy)
        rows.append((res.t_switch, res.test_loss, res.test_accuracy))
    write_csv(out / "switch.csv", ("t_switch", "test_loss", "test_accuracy"), rows, chash)
    _write_svg(out / "switch.svg", [("test accuracy", [(t, a) for t, _, a in rows])],
               title=f"std -> lin switching, T={cfg.horizon}", xlabel="switch iteration t",
               ylabel="test accuracy")
    atomic_write(out / RESOLVED_NAME, f"# config_hash={chash}\n" + cfgmod.dumps(cfg))
    if not quiet:
        for row in rows:
            print("t_switch={} test_loss={:.6f} test_accuracy={:.4f}".format(*row))
    return rows


def run_embed(run_dir, quiet=False):
    run_dir = Path(run_dir)
    cfg = cfgmod.load(run_dir / RESOLVED_NAME)
    chash = cfgmod.config_hash(cfg)
    traj = TrajectoryLog()
    for t, _, gram, loss, acc in load_trajectory_index(run_dir / "checkpoints"):
        if gram is None:
            raise CheckpointMissing(t, "stored Gram matrix")
        traj.append(Checkpoint(t, None, loss, acc, {EMBED_KEY: GramMatrix(gram, t)}))
    emb = _write_embedding(run_dir, pairwise_distances(traj, EMBED_KEY), traj.iterations,
                           chash)
    if not quiet:
        print(f"embedding of {len(traj)} checkpoints, stress {emb.stress:.6f}")
    return emb


def run_validate(seed=0, quiet=False):
    ok = True
    for name, passed, detail in run_checks(seed):
        ok &= bool(passed)
        if not quiet:
            print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return ok


def _resolve_config(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    if args.out is not None:
        cfg = cfg.replace(out_dir=args.out)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(prog="entkcone", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("dynamics", "train and measure eNTK evolution"),
                            ("switch", "run the std -> lin switching sweep"),
                            ("embed", "recompute the embedding of a stored run"),
                            ("validate", "run invariant checks on a tiny model")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            return 0 if run_validate(args.seed or 0, args.quiet) else 1
        if args.command == "embed":
            run_dir = args.out or (_resolve_config(args).out_dir if args.config else None)
            if run_dir is None:
                raise UsageError("embed needs --out DIR (or --config) naming a stored run")
            run_embed(run_dir, args.quiet)
            return 0
        cfg = _resolve_config(args)
        if args.command == "dynamics":
            run_dynamics(cfg, args.quiet)
        else:
            run_switch(cfg, args.quiet)
        return 0
    except (DivergenceError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, UsageError, FormatError, CheckpointMissing, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
