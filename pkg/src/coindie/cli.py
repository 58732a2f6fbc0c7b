"""Command-line entry point: ``coindie <subcommand> ...``.

Run ``coindie <subcommand> -h`` for the options of each step.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

import numpy as np

from . import clustering, evaluation, io, metric, pipeline, synth
from .errors import CoinDieError
from .geometry import RigidTransform
from .globalreg import Strategy, global_register
from .icp import IcpProblem


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="seed for every random choice (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, help="parallel pairwise jobs")
    p.add_argument("--voxel-size", type=float, default=None, help="voxel-grid downsampling size in mm")
    p.add_argument("--config", default=None, help="key = value file overriding defaults")


def _settings(args) -> io.PipelineConfig:
    cfg = io.PipelineConfig.load(args.config) if args.config else io.PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.voxel_size is not None:
        cfg = replace(cfg, voxel_size=args.voxel_size)
    if getattr(args, "alpha", None) is not None:
        cfg = replace(cfg, alpha=args.alpha)
    return cfg


class _Clouds:
    """Lazily loaded, prepared clouds keyed by id."""

    def __init__(self, directory, cfg: io.PipelineConfig):
        self.directory = directory
        self.cfg = cfg
        self._cache = {}

    def path(self, coin_id):
        return io.find_cloud(self.directory, coin_id)

    def __getitem__(self, coin_id):
        if coin_id not in self._cache:
            path = coin_id if os.path.isfile(coin_id) else self.path(coin_id)
            self._cache[coin_id] = pipeline.prepare(io.load_cloud(path), self.cfg.voxel_size, self.cfg.normals_k)
        return self._cache[coin_id]


def _load(path, cfg):
    return pipeline.prepare(io.load_cloud(path), cfg.voxel_size, cfg.normals_k)


def _truth(poses: Dict[str, np.ndarray], a: str, b: str) -> RigidTransform:
    for k in (a, b):
        if k not in poses:
            raise KeyError(f"no ground-truth pose for {k!r}")
    return RigidTransform.from_matrix(poses[b]) @ RigidTransform.from_matrix(poses[a]).inverse()


def _matrix_text(T: RigidTransform) -> str:
    return "\n".join(" ".join(f"{v: .9f}" for v in row) for row in T.matrix)


def cmd_register(args):
    cfg = _settings(args)
    a, b = _load(args.source, cfg), _load(args.target, cfg)
    res = global_register(a, b, cfg.global_config())
    print(_matrix_text(res.transform))
    print(f"rmse {res.final_rmse:.6f}")
    print(f"iterations {res.iterations_used} converged {str(res.converged).lower()}")
    if args.poses:
        err = evaluation.registration_error(res.transform, _truth(io.read_poses(args.poses), a.id, b.id))
        print(f"error dR {err.dR:.4f} deg dt {err.dt:.4f} mm")
    return 0


def cmd_compare(args):
    cfg = _settings(args)
    model = metric.load_model(args.model)
    a, b = _load(args.source, cfg), _load(args.target, cfg)
    res, h = pipeline.compare(a, b, cfg.global_config(), model.dimension, model.h_max)
    print(f"rmse {res.final_rmse:.6f}")
    print(f"probability {metric.predict(model, h):.6f}")
    return 0


def _records(pairs, clouds, cfg, poses=None, progress=True):
    gcfg = cfg.global_config()
    out = []
    for k, (a, b, label) in enumerate(pairs):
        src, tgt = clouds[a], clouds[b]
        try:
            if poses is not None:
                # ground truth is available: refine it locally instead of searching
                T = IcpProblem(src, tgt, gcfg.icp).run(_truth(poses, a, b)).transform
            else:
                T = global_register(src, tgt, gcfg).transform
        except CoinDieError as exc:
            raise CoinDieError(f"pair {a},{b}: {exc}") from exc
        h = pipeline.pair_histogram(src, tgt, T, gcfg.icp.border_radius_mm, cfg.bins, cfg.h_max)
        out.append(metric.ComparisonRecord((a, b), h, label))
        if progress:
            print(f"\rregistered {k + 1}/{len(pairs)}", end="", file=sys.stderr)
    if progress and pairs:
        print(file=sys.stderr)
    return out


def split_indices(n: int, seed: int, train_fraction: float = 0.5):
    """Seeded permutation split into train and test index arrays."""
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(train_fraction * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def cmd_train(args):
    cfg = _settings(args)
    pairs = io.read_pairs(args.pairs)
    n_pos = sum(l for _, _, l in pairs)
    print(f"pairs {len(pairs)} positive {n_pos} negative {len(pairs) - n_pos}")
    directory = args.dir or os.path.dirname(os.path.abspath(args.pairs))
    poses = io.read_poses(args.poses) if args.poses else None
    recs = _records(pairs, _Clouds(directory, cfg), cfg, poses, progress=not args.quiet)
    tr, te = split_indices(len(recs), cfg.seed)
    train_recs = [recs[i] for i in tr]
    coins = {c for r in train_recs for c in r.pair}
    model = metric.train(train_recs, cfg.lam, self_matches=len(coins))
    metric.save_model(model, args.out)
    print(f"train accuracy {metric.accuracy(model, train_recs):.4f} ({len(tr)} pairs)")
    if len(te):
        print(f"test accuracy {metric.accuracy(model, [recs[i] for i in te]):.4f} ({len(te)} pairs)")
    return 0


def cmd_cluster(args):
    cfg = _settings(args)
    model = metric.load_model(args.model)
    paths = io.list_clouds(args.dir)
    if len(paths) < 2:
        raise CoinDieError(f"{args.dir}: need at least two cloud files")
    clouds = [_load(p, cfg) for p in paths]
    gcfg = cfg.global_config()
    graph = clustering.cluster_pipeline(clouds, model, gcfg, cfg.alpha, jobs=args.jobs)
    out = args.out or args.dir
    os.makedirs(out, exist_ok=True)
    clustering.write_matrix_csv(graph.probabilities, os.path.join(out, "matrix.csv"))
    clustering.write_dot(graph, os.path.join(out, "graph.dot"))
    clustering.write_json(graph, os.path.join(out, "graph.json"))
    print(f"components {len(graph.components)} failures {len(graph.failures)}")
    for a, b, err in graph.failures:
        print(f"failed {a},{b}: {err}", file=sys.stderr)
    if args.labels:
        truth = io.read_labels(args.labels)
        missing = [c for c in graph.ids if c not in truth]
        if missing:
            raise CoinDieError(f"{args.labels}: no label for {missing[0]!r}")
        ari = clustering.adjusted_rand_index(graph.labeling(), {c: truth[c] for c in graph.ids})
        print(f"ARI {ari:.6f}")
    return 0


def cmd_synth(args):
    profile = synth.DamageProfile(fraction=args.damage)
    spec = synth.StrikeSpec(sample_count=args.samples)
    corpus = synth.make_corpus(
        args.dies, args.coins_per_die, profile, seed=args.seed or 0, strike_spec=spec, poses="aligned" if args.aligned else "random"
    )
    synth.write_corpus(corpus, args.out, binary=not args.ascii)
    ids = corpus.ids
    io.write_pairs([(ids[i], ids[j], l) for i, j, l in corpus.pairs()], os.path.join(args.out, "pairs.csv"))
    n_pos = sum(l for _, _, l in corpus.pairs())
    print(f"coins {len(ids)} pairs {len(corpus.pairs())} positive {n_pos}")
    return 0


def _same_die_pairs(directory, cfg, limit=None):
    labels = io.read_labels(os.path.join(directory, "labels.csv"))
    poses = io.read_poses(os.path.join(directory, "poses.csv"))
    ids = sorted(labels)
    by_die: Dict[str, List[str]] = {}
    for c in ids:
        by_die.setdefault(labels[c], []).append(c)
    names = [(m[k], m[k + 1]) for m in by_die.values() for k in range(0, len(m) - 1, 2)]
    names = names[:limit] if limit else names
    clouds = _Clouds(directory, cfg)
    return names, [(clouds[a], clouds[b], _truth(poses, a, b)) for a, b in names]


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_basin(args):
    cfg = _settings(args)
    a, b = _load(args.source, cfg), _load(args.target, cfg)
    truth = _truth(io.read_poses(args.poses), a.id, b.id)
    bm = evaluation.basin_map(
        (a, b, truth),
        np.linspace(-30, 30, args.angles),
        np.linspace(0, 5, args.norms),
        cfg.icp_config(),
        seed=cfg.seed,
    )
    _emit(bm.to_csv(), args.out)
    rate = bm.rate_within(10.0, 3.0)
    print(evaluation.summary_line("basin (10 deg, 3 mm)", rate >= 0.95, f"success {rate:.3f}"), file=sys.stderr)
    return 0


def cmd_border_sweep(args):
    cfg = _settings(args)
    _, pairs = _same_die_pairs(args.dir, cfg, args.pairs)
    radii = [None if r.lower() == "none" else float(r) for r in args.radii.split(",")]
    rows = evaluation.border_sweep(pairs, radii, args.variants.split(","), args.inits, cfg.seed, cfg.icp_config())
    _emit(evaluation.sweep_csv(rows), args.out)
    best = min(rows, key=lambda r: (np.nan_to_num(r.mean_dR, nan=np.inf), np.nan_to_num(r.mean_dt, nan=np.inf)))
    print(evaluation.summary_line("border sweep", best.variant == "point_to_plane" and best.radius == 8.0,
                                  f"lowest error at {best.variant} radius {best.radius}"), file=sys.stderr)
    return 0


def cmd_method_table(args):
    cfg = _settings(args)
    _, pairs = _same_die_pairs(args.dir, cfg, args.pairs)
    base = cfg.global_config()
    methods = {
        "RandomSearch": evaluation.search_method(replace(base, strategy=Strategy.RANDOM)),
        "GridSearch": evaluation.search_method(replace(base, strategy=Strategy.GRID)),
    }
    rows = evaluation.global_method_table(pairs, methods)
    _emit(evaluation.method_csv(rows), args.out)
    rnd, grd = rows
    dom = all(rnd.rates[c] >= grd.rates[c] for c in rnd.rates)
    print(evaluation.summary_line("random search dominates grid search", dom), file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coindie", description="Die analysis of scanned coins.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("register", help="globally register two clouds")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--poses", help="ground-truth poses CSV; prints the registration error")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("compare", help="same-die probability of two clouds")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("train", help="fit the same-die classifier on labeled pairs")
    p.add_argument("--pairs", required=True, help="CSV of idA,idB,label")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--dir", help="directory holding the clouds (default: the pairs file's)")
    p.add_argument("--poses", help="ground-truth poses; pairs are ICP-refined from them instead of searched")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="group the clouds of a directory by die")
    p.add_argument("dir")
    p.add_argument("--model", required=True)
    p.add_argument("--alpha", type=float, default=None, help="edge threshold (default 0.5)")
    p.add_argument("--labels", help="labels CSV (id,die); prints the adjusted Rand index")
    p.add_argument("--out", help="output directory (default: the input directory)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("synth", help="write a synthetic labeled corpus")
    p.add_argument("--dies", type=int, required=True)
    p.add_argument("--coins-per-die", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--damage", type=float, default=0.0, help="fraction of worn or fractured coins")
    p.add_argument("--samples", type=int, default=20000, help="points per coin")
    p.add_argument("--aligned", action="store_true", help="scan every coin in its die frame")
    p.add_argument("--ascii", action="store_true", help="ASCII instead of binary PLY")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("basin", help="local ICP success over initial offsets")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--poses", required=True)
    p.add_argument("--angles", type=int, default=13)
    p.add_argument("--norms", type=int, default=11)
    p.add_argument("--out")
    p.set_defaults(func=cmd_basin)

    p = sub.add_parser("border-sweep", help="mean error per border radius and ICP variant")
    p.add_argument("dir", help="synthetic corpus directory")
    p.add_argument("--radii", default="4,6,8,10,none")
    p.add_argument("--variants", default="point_to_plane,point_to_point")
    p.add_argument("--inits", type=int, default=100)
    p.add_argument("--pairs", type=int, default=10, help="number of same-die pairs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_border_sweep)

    p = sub.add_parser("method-table", help="success rates of the global search strategies")
    p.add_argument("dir", help="synthetic corpus directory")
    p.add_argument("--pairs", type=int, default=None, help="number of same-die pairs (default all)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_method_table)

    for sp in sub.choices.values():
        _common(sp)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CoinDieError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"coindie {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
