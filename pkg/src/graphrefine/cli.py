"""Command-line front end.

Commands:
    refine     run the pipeline, write enhanced edges + run manifest + BO trace
    eval       train a backbone on the original or refined graph, summarize
    sweep      repeat eval over a range of one parameter (p, q, or alpha)
    ablate     run all pipeline modes with shared seeds
    svd-cache  precompute a factor cache file for a dataset
    info       dataset statistics

Configuration is a flat key=value file plus flag overrides; flags win.
Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
error.

Numeric libraries are imported lazily so that --threads can pin the
BLAS thread count before anything loads.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import (
    ConfigError,
    ConsistencyError,
    FormatError,
    GraphRefineError,
    LoadError,
    NumericalError,
    PreconditionError,
    UndefinedResultError,
)

BACKBONES = ("gcn", "sage", "sgc")
MODES = ("full", "ad_only", "sp_only", "sp_then_ad", "backbone")
ABLATION_MODES = ("backbone", "ad_only", "sp_only", "sp_then_ad", "full")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunConfig:
    """Everything a command needs, resolvable from file plus flags."""
    dataset_dir: str = ""
    output_dir: str = "runs"
    backbone: str = "gcn"
    mode: str = "full"
    p: float = 0.004
    q: float = 0.002
    alpha: float = 0.5
    seed: int = 0
    repeats: int = 1
    seeds: tuple = ()
    random_split: tuple = ()         # (train, val, test) sizes; empty = use split.tsv
    bo_grid_size: int = 64
    bo_init_points: int = 5
    bo_iterations: int = 45
    bo_seed: int = 0
    bo_rank_cap: int = 3072
    bo_on_original: bool = False
    train_epochs: int = 200
    train_lr: float = 0.01
    train_weight_decay: float = 5e-4
    train_dropout: float = 0.5
    train_hidden: int = 16
    normalize_features: bool = True

    def resolved_seeds(self) -> tuple:
        if self.seeds:
            return self.seeds
        return tuple(self.seed + i for i in range(self.repeats))

    def validate(self):
        if not self.dataset_dir:
            raise ConfigError("no dataset directory given (--dataset)")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"p={self.p} outside [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha={self.alpha} outside [0, 1]")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        if self.seeds and len(self.seeds) != self.repeats:
            raise ConfigError("repeats must equal the number of seeds")
        if self.random_split and len(self.random_split) != 3:
            raise ConfigError("random split needs train,val,test sizes")
        return self


# config-file key <-> RunConfig field
CONFIG_KEYS = {
    "dataset": "dataset_dir",
    "out": "output_dir",
    "backbone": "backbone",
    "mode": "mode",
    "p": "p",
    "q": "q",
    "alpha": "alpha",
    "seed": "seed",
    "repeats": "repeats",
    "seeds": "seeds",
    "random_split": "random_split",
    "bo.grid_size": "bo_grid_size",
    "bo.init_points": "bo_init_points",
    "bo.iterations": "bo_iterations",
    "bo.seed": "bo_seed",
    "bo.rank_cap": "bo_rank_cap",
    "bo.on_original": "bo_on_original",
    "train.epochs": "train_epochs",
    "train.lr": "train_lr",
    "train.weight_decay": "train_weight_decay",
    "train.dropout": "train_dropout",
    "train.hidden": "train_hidden",
    "train.normalize_features": "normalize_features",
}


def _parse_value(field_type, raw: str):
    raw = raw.strip()
    if field_type is bool:
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if field_type is int:
        return int(raw)
    if field_type is float:
        return float(raw)
    if field_type is tuple:
        if not raw:
            return ()
        return tuple(int(v) for v in raw.split(","))
    return raw


def load_config_file(path) -> dict:
    """Parse key=value lines into RunConfig field values."""
    field_types = {f.name: f.type for f in fields(RunConfig)}
    # annotations are strings under `from __future__ import annotations`
    type_map = {"str": str, "int": int, "float": float, "bool": bool,
                "tuple": tuple}
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected key=value")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path} line {lineno}: unknown key {key!r}")
        field_name = CONFIG_KEYS[key]
        ftype = type_map[field_types[field_name]]
        try:
            out[field_name] = _parse_value(ftype, raw)
        except ValueError as e:
            raise ConfigError(f"{path} line {lineno}: {e}") from None
    return out


def dump_config(cfg: RunConfig, path) -> None:
    """Write the effective configuration; re-parsing reproduces it."""
    lines = []
    for key, field_name in CONFIG_KEYS.items():
        value = getattr(cfg, field_name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    Path(path).write_text("\n".join(lines) + "\n")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems on exit code 1, not 2."""

    def error(self, message):
        raise ConfigError(message)


def _csv_ints(raw: str) -> tuple:
    try:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma list of integers: {raw!r}")


def _csv_floats(raw: str) -> tuple:
    try:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma list of numbers: {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", help="dataset directory")
    common.add_argument("--out", help="output directory (default runs)")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--threads", type=int,
                        help="pin BLAS/OpenMP thread count")
    common.add_argument("--dump-config", metavar="FILE",
                        help="write the effective config to FILE and continue")

    run_common = argparse.ArgumentParser(add_help=False)
    run_common.add_argument("--mode", choices=MODES)
    run_common.add_argument("--p", type=float)
    run_common.add_argument("--q", type=float)
    run_common.add_argument("--alpha", type=float)
    run_common.add_argument("--repeats", type=int)
    run_common.add_argument("--seeds", type=_csv_ints,
                            help="explicit comma-separated seeds")
    run_common.add_argument("--bo-grid-size", type=int)
    run_common.add_argument("--bo-init-points", type=int)
    run_common.add_argument("--bo-iterations", type=int)
    run_common.add_argument("--bo-seed", type=int)
    run_common.add_argument("--bo-rank-cap", type=int)
    run_common.add_argument("--bo-on-original", action="store_true", default=None,
                            help="evaluate ranks on the original matrix, "
                                 "not the residual")

    train_common = argparse.ArgumentParser(add_help=False)
    train_common.add_argument("--backbone", choices=BACKBONES)
    train_common.add_argument("--train-epochs", type=int)
    train_common.add_argument("--train-lr", type=float)
    train_common.add_argument("--train-weight-decay", type=float)
    train_common.add_argument("--train-dropout", type=float)
    train_common.add_argument("--train-hidden", type=int)
    train_common.add_argument("--no-normalize-features", action="store_true",
                              default=None)
    train_common.add_argument("--random-split", type=_csv_ints,
                              metavar="TRAIN,VAL,TEST",
                              help="generate a stratified split per repeat "
                                   "instead of using split.tsv")

    parser = _Parser(prog="graphrefine",
                     description="graph structure refinement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("refine", parents=[common, run_common],
                   help="run the refinement pipeline")
    evalp = sub.add_parser("eval", parents=[common, run_common, train_common],
                           help="train and score a backbone")
    evalp.add_argument("--dump-embeddings", action="store_true")
    sweep = sub.add_parser("sweep", parents=[common, run_common, train_common],
                           help="parameter sensitivity sweep")
    sweep.add_argument("--param", choices=("p", "q", "alpha"), required=True)
    sweep.add_argument("--values", type=_csv_floats, required=True)
    sub.add_parser("ablate", parents=[common, run_common, train_common],
                   help="run every pipeline mode with shared seeds")
    cache = sub.add_parser("svd-cache", parents=[common],
                           help="precompute a factor cache")
    cache.add_argument("--rank", type=int, required=True)
    cache.add_argument("--oversampling", type=int, default=10)
    cache.add_argument("--power-iters", type=int, default=2)
    cache.add_argument("--cache-file", help="output path "
                       "(default <out>/<dataset name>.svd)")
    sub.add_parser("info", parents=[common], help="dataset statistics")
    return parser


def resolve_config(args) -> RunConfig:
    """Defaults, then config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    flag_map = {
        "dataset": "dataset_dir", "out": "output_dir", "seed": "seed",
        "mode": "mode", "p": "p", "q": "q", "alpha": "alpha",
        "repeats": "repeats", "seeds": "seeds", "random_split": "random_split",
        "bo_grid_size": "bo_grid_size", "bo_init_points": "bo_init_points",
        "bo_iterations": "bo_iterations", "bo_seed": "bo_seed",
        "bo_rank_cap": "bo_rank_cap", "bo_on_original": "bo_on_original",
        "backbone": "backbone", "train_epochs": "train_epochs",
        "train_lr": "train_lr", "train_weight_decay": "train_weight_decay",
        "train_dropout": "train_dropout", "train_hidden": "train_hidden",
    }
    for flag, field_name in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[field_name] = value
    if getattr(args, "no_normalize_features", None):
        values["normalize_features"] = False
    if values.get("seeds"):
        values["repeats"] = len(values["seeds"])
    cfg = RunConfig(**values).validate()
    if getattr(args, "dump_config", None):
        dump_config(cfg, args.dump_config)
    return cfg


def _fmt(x) -> str:
    return f"{float(x):.10g}"


def _load(cfg: RunConfig):
    from .graphstore import load_graph
    return load_graph(cfg.dataset_dir)


def _bo_config(cfg: RunConfig, num_nodes: int):
    from .rankopt import BoConfig, default_grid
    grid = default_grid(num_nodes, cfg.bo_rank_cap, cfg.bo_grid_size)
    return BoConfig(grid=grid, init_points=min(cfg.bo_init_points, len(grid)),
                    iterations=cfg.bo_iterations, seed=cfg.bo_seed)


def _train_config(cfg: RunConfig, seed: int):
    from .gnn import TrainConfig
    return TrainConfig(epochs=cfg.train_epochs, learning_rate=cfg.train_lr,
                       weight_decay=cfg.train_weight_decay,
                       dropout=cfg.train_dropout, hidden=cfg.train_hidden,
                       seed=seed, normalize_features=cfg.normalize_features)


def _split_graph(cfg: RunConfig, g, seed: int):
    """Apply a per-repeat stratified split when requested."""
    if not cfg.random_split:
        return g
    from .graphstore import stratified_split, with_split
    tr, va, te = cfg.random_split
    return with_split(g, stratified_split(g.labels, tr, va, te, seed))


def _run_pipeline(cfg: RunConfig, g, seed: int):
    from .perturb import run_pipeline
    return run_pipeline(g, cfg.p, cfg.q, cfg.alpha,
                        bo_cfg=_bo_config(cfg, g.num_nodes), mode=cfg.mode,
                        seed=seed, rank_cap=cfg.bo_rank_cap,
                        bo_on_original=cfg.bo_on_original)


def _write_run_artifacts(run_dir: Path, cfg: RunConfig, seed, result):
    from .spectral import save_svd_cache
    run_dir.mkdir(parents=True, exist_ok=True)
    if result.enhanced is not None:
        with open(run_dir / "enhanced_edges.tsv", "w") as f:
            for s, t in result.enhanced.kept.edges:
                f.write(f"{s}\t{t}\t1\tkept\n")
            alpha = result.enhanced.params.alpha
            if alpha > 0:
                for s, t in result.enhanced.recovered.edges:
                    f.write(f"{s}\t{t}\t{_fmt(alpha)}\trecovered\n")
    if result.factors is not None and result.enhanced is None:
        save_svd_cache(result.factors, run_dir / "denoised.svd")
    removed = len(result.plan.removed) if result.plan else 0
    budget = len(result.scored.edges) if result.scored else 0
    with open(run_dir / "run.tsv", "w") as f:
        f.write(f"p\t{_fmt(cfg.p)}\n")
        f.write(f"q\t{_fmt(cfg.q)}\n")
        f.write(f"alpha\t{_fmt(cfg.alpha)}\n")
        f.write(f"seed\t{seed}\n")
        f.write(f"k_star\t{result.k_star if result.k_star is not None else ''}\n")
        f.write(f"P\t{budget}\n")
        f.write(f"removed\t{removed}\n")
        f.write(f"mode\t{result.mode}\n")
    if result.trace is not None:
        with open(run_dir / "bo_trace.csv", "w") as f:
            f.write("step,k,objective,incumbent,ei_at_proposal\n")
            for step in result.trace:
                ei = "" if math.isnan(step.ei) else _fmt(step.ei)
                f.write(f"{step.step},{step.k},{_fmt(step.y)},"
                        f"{_fmt(step.incumbent)},{ei}\n")


def cmd_refine(cfg: RunConfig) -> int:
    if cfg.mode == "backbone":
        raise ConfigError("refine needs a pipeline mode, not 'backbone'")
    g = _load(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.resolved_seeds():
        result = _run_pipeline(cfg, _split_graph(cfg, g, seed), seed)
        _write_run_artifacts(out / f"run_{seed}", cfg, seed, result)
        print(f"run_{seed}: mode={result.mode} k_star={result.k_star} "
              f"removed={len(result.plan.removed) if result.plan else 0} "
              f"recovered={len(result.scored.edges) if result.scored else 0}")
    return EXIT_OK


def _propagate_twice(op, x):
    return op.apply(op.apply(x))


def _train_and_score(cfg: RunConfig, g, result, seed: int,
                     dump_dir: Path | None = None,
                     dump_embeddings: bool = False):
    """Train the configured backbone; returns test accuracy."""
    from .gnn import (
        aggregator_from_factors,
        evaluate,
        hidden_embeddings,
        mean_aggregator,
        normalize_gcn,
        row_normalize,
        train_gcn,
        train_sage,
        train_sgc,
    )

    tc = _train_config(cfg, seed)
    # modes whose refined structure is a low-rank factored operator
    factored = result is not None and result.denoised_op is not None
    if result is not None and result.mode in ("full", "sp_only"):
        train_graph = result.enhanced.as_graph()
    else:
        train_graph = g

    if cfg.backbone == "gcn":
        if factored:
            op = result.denoised_op
        else:
            source = "original" if result is None else "enhanced"
            op = normalize_gcn(train_graph.adjacency, source=source)
        params, metrics = train_gcn(op, train_graph, tc)
        carrier = op
    elif cfg.backbone == "sage":
        prop = aggregator_from_factors(result.factors) if factored else None
        params, metrics = train_sage(train_graph, tc, prop=prop)
        carrier = prop if prop is not None else mean_aggregator(train_graph.adjacency)
    else:
        if factored:
            op = result.denoised_op
        else:
            source = "original" if result is None else "enhanced"
            op = normalize_gcn(train_graph.adjacency, source=source)
        x = row_normalize(train_graph.features) if cfg.normalize_features \
            else train_graph.features
        carrier = _propagate_twice(op, x)
        params, metrics = train_sgc(carrier, train_graph, tc)

    test_acc = evaluate(params, carrier, train_graph, "test", tc)
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
        with open(dump_dir / f"metrics_{cfg.backbone}.csv", "w") as f:
            f.write("epoch,train_loss,val_acc\n")
            for epoch, loss, val in metrics:
                f.write(f"{epoch},{_fmt(loss)},{_fmt(val)}\n")
            f.write(f"final,test_acc,{_fmt(test_acc)}\n")
        if dump_embeddings:
            emb = hidden_embeddings(params, carrier, train_graph, tc)
            with open(dump_dir / "embeddings.csv", "w") as f:
                dims = ",".join(f"dim_{i}" for i in range(emb.shape[1]))
                f.write(f"node_id,{dims}\n")
                for i in range(emb.shape[0]):
                    f.write(str(i) + "," +
                            ",".join(_fmt(v) for v in emb[i]) + "\n")
    return test_acc


def _eval_accuracies(cfg: RunConfig, g, out: Path | None = None,
                     dump_embeddings: bool = False) -> list:
    accs = []
    for seed in cfg.resolved_seeds():
        gs = _split_graph(cfg, g, seed)
        result = None if cfg.mode == "backbone" else _run_pipeline(cfg, gs, seed)
        dump_dir = out / f"run_{seed}" if out is not None else None
        accs.append(_train_and_score(cfg, gs, result, seed, dump_dir,
                                     dump_embeddings))
    return accs


def cmd_eval(cfg: RunConfig, dump_embeddings: bool = False) -> int:
    import numpy as np
    g = _load(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    accs = _eval_accuracies(cfg, g, out, dump_embeddings)
    mean, std = float(np.mean(accs)), float(np.std(accs))
    with open(out / "summary.csv", "w", encoding="utf-8") as f:
        f.write("seed,mode,backbone,test_acc\n")
        for seed, acc in zip(cfg.resolved_seeds(), accs):
            f.write(f"{seed},{cfg.mode},{cfg.backbone},{_fmt(acc)}\n")
        f.write(f"mean,{cfg.mode},{cfg.backbone},{mean:.4f}±{std:.4f}\n")
    print(f"{cfg.mode}/{cfg.backbone}: test acc {mean:.4f} ± {std:.4f} "
          f"over {cfg.repeats} run(s)")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, param: str, values) -> int:
    import numpy as np
    if not values:
        raise ConfigError("sweep needs at least one value")
    g = _load(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        sub_cfg = replace(cfg, **{param: value})
        try:
            accs = _eval_accuracies(sub_cfg, g)
            rows.append((value, float(np.mean(accs)), float(np.std(accs))))
        except GraphRefineError as e:
            print(f"sweep {param}={value} failed: {e}", file=sys.stderr)
            rows.append((value, None, None))
    with open(out / f"sweep_{param}.csv", "w") as f:
        f.write("value,mean_acc,std_acc\n")
        for value, mean, std in rows:
            if mean is None:
                f.write(f"{_fmt(value)},NA,NA\n")
            else:
                f.write(f"{_fmt(value)},{_fmt(mean)},{_fmt(std)}\n")
    for value, mean, std in rows:
        shown = "NA" if mean is None else f"{mean:.4f}"
        print(f"{param}={_fmt(value)}: {shown}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    import numpy as np
    g = _load(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_mode = {}
    for mode in ABLATION_MODES:
        sub_cfg = replace(cfg, mode=mode)
        per_mode[mode] = _eval_accuracies(sub_cfg, g)
    with open(out / "ablation.csv", "w") as f:
        f.write("mode,seed,test_acc\n")
        for mode in ABLATION_MODES:
            for seed, acc in zip(cfg.resolved_seeds(), per_mode[mode]):
                f.write(f"{mode},{seed},{_fmt(acc)}\n")
        for mode in ABLATION_MODES:
            f.write(f"{mode},mean,{_fmt(np.mean(per_mode[mode]))}\n")
    for mode in ABLATION_MODES:
        print(f"{mode}: {np.mean(per_mode[mode]):.4f}")
    return EXIT_OK


def cmd_svd_cache(cfg: RunConfig, rank: int, oversampling: int,
                  power_iters: int, cache_file: str | None) -> int:
    from .spectral import randomized_svd, save_svd_cache
    g = _load(cfg)
    factors = randomized_svd(g.adjacency, rank, oversampling=oversampling,
                             power_iters=power_iters, seed=cfg.seed)
    if cache_file is None:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cache_file = out / f"{Path(cfg.dataset_dir).name}.svd"
    save_svd_cache(factors, cache_file)
    print(f"wrote rank-{factors.rank} factors to {cache_file}")
    return EXIT_OK


def cmd_info(cfg: RunConfig) -> int:
    import numpy as np

    from .graphstore import edge_homophily
    g = _load(cfg)
    print(f"nodes\t{g.num_nodes}")
    print(f"edges\t{g.num_canonical_edges}")
    print(f"directed\t{int(g.directed)}")
    print(f"features\t{g.num_features}")
    print(f"classes\t{g.num_classes}")
    print(f"labeled\t{int(np.sum(g.labels >= 0))}")
    print(f"train\t{int(g.train_mask.sum())}")
    print(f"val\t{int(g.val_mask.sum())}")
    print(f"test\t{int(g.test_mask.sum())}")
    try:
        print(f"homophily\t{edge_homophily(g):.4f}")
    except UndefinedResultError:
        print("homophily\tundefined")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE

    if getattr(args, "threads", None):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    try:
        if args.command == "refine":
            return cmd_refine(resolve_config(args))
        if args.command == "eval":
            return cmd_eval(resolve_config(args),
                            dump_embeddings=args.dump_embeddings)
        if args.command == "sweep":
            return cmd_sweep(resolve_config(args), args.param, args.values)
        if args.command == "ablate":
            return cmd_ablate(resolve_config(args))
        if args.command == "svd-cache":
            return cmd_svd_cache(resolve_config(args), args.rank,
                                 args.oversampling, args.power_iters,
                                 args.cache_file)
        if args.command == "info":
            return cmd_info(resolve_config(args))
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (LoadError, FormatError, PreconditionError, ConsistencyError,
            UndefinedResultError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
