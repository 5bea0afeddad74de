"""``covaroc`` command line: simulate, fit, metrics, threshold, roc, baseline, evaluate.

Every flag overrides one key of the JSON run config (``--config``).  Exit codes:
0 success, 1 runtime or numeric failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import datagen, modelfile
from .baseline import BinSpec, binned_metric
from .config import RunConfig, load_config
from .dataset import ingest_pairs_csv, normalize, write_pairs_csv
from .errors import (ConfigurationError, CovarocError, EmptyDatasetError, RowError,
                     SchemaError)
from .inference import fit_both
from .metrics import auc_grid, metric_draws, r_squared, tpr_matrix, MetricResult

log = logging.getLogger("covaroc")

USAGE_ERRORS = (ConfigurationError, SchemaError, RowError, EmptyDatasetError)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- parsing helpers

def _csv_list(cast):
    def parse(text):
        try:
            return [cast(t.strip()) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"cannot parse {text!r}") from None
    return parse


def _basis_grid(text):
    vals = _csv_list(int)(text)
    return vals[0] if len(vals) == 1 else vals


def _query(text):
    """``name=value[,name=value...]``"""
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        name, sep, value = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"query term {part!r} is not name=value")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"query value {value!r} is not a number") from None
    return out


def parse_grid(text, dim) -> list:
    """``"250x250"`` -> per-dimension counts; a single count applies to every dimension."""
    try:
        counts = [int(t) for t in str(text).lower().split("x")]
    except ValueError:
        raise ConfigurationError(f"grid {text!r} is not of the form NxM") from None
    if len(counts) == 1:
        counts = counts * dim
    if len(counts) != dim or any(c < 1 for c in counts):
        raise ConfigurationError(f"grid {text!r} does not give {dim} positive counts")
    return counts


def _covariate_union(*posts):
    names = []
    for p in posts:
        names.extend(n for n in p.covariate_names if n not in names)
    return names


def _covariate_ranges(names, *posts):
    ranges = []
    for name in names:
        lo, hi = np.inf, -np.inf
        for p in posts:
            if name in p.covariate_names and p.covariate_range is not None:
                k = p.covariate_names.index(name)
                lo = min(lo, p.covariate_range[k, 0])
                hi = max(hi, p.covariate_range[k, 1])
        ranges.append((lo, hi))
    return ranges


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(cfg: RunConfig):
    if not cfg.dataset.csv:
        raise ConfigurationError("no pair CSV given (--data or dataset.csv)")
    if not Path(cfg.dataset.csv).is_file():
        raise ConfigurationError(f"pair CSV {cfg.dataset.csv} does not exist")
    return ingest_pairs_csv(cfg.dataset.csv)


def _load_model(path):
    if not path:
        raise ConfigurationError("no model file given (--model)")
    try:
        return modelfile.read_model(path)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigurationError(f"cannot read model {path}: {e}") from None


def _queries(cfg: RunConfig, post_m, post_n):
    """Explicit queries, or a grid over the covariate ranges seen in training."""
    names = _covariate_union(post_m, post_n)
    if cfg.metrics.queries:
        return names, [dict(q) for q in cfg.metrics.queries]
    if not names:
        return names, [{}]
    counts = parse_grid(cfg.metrics.grid or "10", len(names))
    pts = datagen.grid_points(_covariate_ranges(names, post_m, post_n), counts)
    return names, [dict(zip(names, row)) for row in pts]


def _write_table(out: Path, stem, names, queries, results, meta):
    rows = [[_fmt(q[n]) for n in names] + [_fmt(r.point), _fmt(r.lo), _fmt(r.hi)]
            for q, r in zip(queries, results)]
    _write_csv(out / f"{stem}.csv", [*names, "metric", "lo", "hi"], rows)
    meta = dict(meta, covariates=names, rows=[
        {"x": {n: float(q[n]) for n in names}, **r.to_dict()} for q, r in zip(queries, results)])
    modelfile.write_json(meta, out / f"{stem}.json")


# ---------------------------------------------------------------- commands

def _truth_spec(cfg: RunConfig) -> datagen.TruthSpec:
    ds = cfg.dataset
    if ds.truth is not None:
        try:
            spec = datagen.TruthSpec.from_dict(ds.truth)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"invalid dataset.truth: {e}") from None
    elif ds.preset is not None:
        spec = datagen.preset(ds.preset)
    else:
        raise ConfigurationError("simulate needs dataset.preset (--preset) or dataset.truth")
    n_m, n_n = spec.n_match, spec.n_nonmatch
    if ds.n is not None:
        total = n_m + n_n
        n_m = int(round(ds.n * n_m / total)) if total else ds.n // 2
        n_n = ds.n - n_m
    n_m = ds.n_match if ds.n_match is not None else n_m
    n_n = ds.n_nonmatch if ds.n_nonmatch is not None else n_n
    if n_m < 1 or n_n < 1:
        raise ConfigurationError("simulate needs at least one match and one non-match pair")
    return spec.with_counts(n_m, n_n)


def cmd_simulate(cfg: RunConfig, args) -> int:
    spec = _truth_spec(cfg)
    seed = cfg.resolved_seed()
    out = _out_dir(cfg)
    ds = datagen.generate(spec, seed)
    write_pairs_csv(ds, out / "pairs.csv")
    modelfile.write_json({"preset": cfg.dataset.preset, "seed": seed, "truth": spec.to_dict()},
                         out / "truth.json")
    print(f"wrote {len(ds)} pairs ({spec.n_match} match, {spec.n_nonmatch} non-match) "
          f"to {out / 'pairs.csv'}")
    oc = cfg.oracle
    if oc.enabled:
        names = list(spec.covariate_names)
        counts = parse_grid(oc.grid, len(names)) if names else []
        pts = datagen.grid_points(spec.sampler.ranges, counts)
        values = datagen.oracle_grid(spec, pts, oc.metric, oc.fpr, oc.n_per_point, seed,
                                     cfg.metrics.similarity)
        _write_csv(out / "oracle.csv", [*names, "metric"],
                   [[_fmt(v) for v in row] + [_fmt(val)] for row, val in zip(pts, values)])
        modelfile.write_json({"metric": oc.metric, "fpr": oc.fpr, "n_per_point": oc.n_per_point,
                              "seed": seed, "covariates": names}, out / "oracle.json")
        print(f"wrote {len(pts)}-point {oc.metric} oracle to {out / 'oracle.csv'}")
    return 0


def _fit_echo(cfg: RunConfig, seed) -> dict:
    d = cfg.model_dump(mode="json", include={"streams", "basis", "prior", "fit"})
    d["seed"] = seed
    d["similarity"] = cfg.metrics.similarity
    return d


def cmd_fit(cfg: RunConfig, args) -> int:
    ds = normalize(_load_dataset(cfg))
    fit_cfg = cfg.fit_config()
    start = time.perf_counter()
    post_m, post_n, (rep_m, rep_n) = fit_both(
        ds, cfg.basis_config(), cfg.prior_spec(), fit_cfg,
        cfg.streams.match_covariates, cfg.streams.nonmatch_covariates)
    wall = time.perf_counter() - start
    out = _out_dir(cfg)
    modelfile.write_model(out / "model.json", post_m, post_n, _fit_echo(cfg, fit_cfg.seed),
                          cfg.metrics.similarity)
    # wall time is printed, never written, so reruns stay byte-identical
    modelfile.write_json({"match": rep_m.to_dict(include_time=False),
                          "nonmatch": rep_n.to_dict(include_time=False)},
                         out / "fit_report.json")
    print(f"fit ({fit_cfg.method}, H={fit_cfg.components}, {fit_cfg.n_draws} draws) "
          f"in {wall:.1f}s")
    for label, post in (("match", post_m), ("non-match", post_n)):
        d = post.diagnostics
        summary = (f"final ELBO {d['final_elbo']:.6g}" if d["method"] == "svi"
                   else f"acceptance {d['acceptance_rate']:.3f}, divergences {d['divergences']}")
        print(f"  {label}: {len(post.covariate_names)} covariates, "
              f"{post.basis.n_active} basis centers, {summary}, "
              f"clamped densities {d['clamped_densities']}")
        for w in d.get("warnings", []):
            print(f"  {label} warning: {w}", file=sys.stderr)
    print(f"wrote {out / 'model.json'}")
    return 0


def cmd_metrics(cfg: RunConfig, args) -> int:
    model = _load_model(args.model)
    post_m, post_n = model["match"], model["nonmatch"]
    mc = cfg.metrics
    similarity = model["similarity"]
    metric = "threshold" if args.command == "threshold" else mc.metric
    names, queries = _queries(cfg, post_m, post_n)
    values = metric_draws(post_m, post_n, queries, metric, mc.fpr, similarity,
                          cfg.resolved_workers())
    results = [MetricResult.from_draws(values[:, g], mc.mass) for g in range(len(queries))]
    stem = "threshold" if metric == "threshold" else "metrics"
    out = _out_dir(cfg)
    _write_table(out, stem, names, queries, results,
                 {"metric": metric, "fpr": mc.fpr, "mass": mc.mass, "similarity": similarity})
    if len(queries) == 1:
        r = results[0]
        print(f"{metric}: {r.point:.6g} [{r.lo:.6g}, {r.hi:.6g}]")
    print(f"wrote {len(queries)} rows to {out / (stem + '.csv')}")
    return 0


def cmd_roc(cfg: RunConfig, args) -> int:
    model = _load_model(args.model)
    post_m, post_n = model["match"], model["nonmatch"]
    names, queries = _queries(cfg, post_m, post_n)
    if len(queries) != 1:
        raise ConfigurationError("roc needs exactly one covariate query (--query)")
    fprs = auc_grid() if args.points is None else np.unique(
        np.linspace(0.0, 1.0, args.points + 2)[1:-1])
    tpr = tpr_matrix(post_m, post_n, queries, fprs, model["similarity"],
                     cfg.resolved_workers())[:, 0, :]
    out = _out_dir(cfg)
    rows = [[d, _fmt(f), _fmt(t)] for d in range(tpr.shape[0]) for f, t in zip(fprs, tpr[d])]
    _write_csv(out / "roc.csv", ["draw", "fpr", "tpr"], rows)
    print(f"wrote {tpr.shape[0]} curves x {len(fprs)} points to {out / 'roc.csv'}")
    return 0


def cmd_baseline(cfg: RunConfig, args) -> int:
    ds = _load_dataset(cfg)
    bc = cfg.baseline
    bins = BinSpec(bc.covariate, tuple(bc.edges), tuple(bc.labels) if bc.labels else None)
    results = binned_metric(ds, bins, bc.metric, bc.fpr, bc.replicates, cfg.resolved_seed(),
                            cfg.metrics.similarity, bc.mass)
    out = _out_dir(cfg)
    rows = []
    for r in results:
        cells = ["nan"] * 3 if r.missing else [_fmt(r.point), _fmt(r.lo), _fmt(r.hi)]
        rows.append([r.label, *cells, r.n_match, r.n_nonmatch])
        if r.missing:
            print(f"bin {r.label}: {r.missing}", file=sys.stderr)
    _write_csv(out / "baseline.csv", ["bin", "metric", "lo", "hi", "n_match", "n_nonmatch"], rows)
    modelfile.write_json({
        "metric": bc.metric, "fpr": bc.fpr, "mass": bc.mass, "replicates": bc.replicates,
        "covariate": bc.covariate, "edges": list(bins.edges),
        "rows": [{"bin": r.label, "point": None if r.missing else r.point,
                  "lo": None if r.missing else r.lo, "hi": None if r.missing else r.hi,
                  "n_match": r.n_match, "n_nonmatch": r.n_nonmatch, "missing": r.missing}
                 for r in results]}, out / "baseline.json")
    print(f"wrote {len(results)} bins to {out / 'baseline.csv'}")
    return 0


def read_oracle_csv(path):
    """``x...,metric`` table -> (covariate names, list of query dicts, values)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[-1] != "metric":
                raise ConfigurationError(f"{path}: header must end with a 'metric' column")
            names, queries, values = header[:-1], [], []
            for line, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise RowError(line, f"expected {len(header)} cells, found {len(row)}")
                try:
                    nums = [float(c) for c in row]
                except ValueError:
                    raise RowError(line, "non-numeric cell") from None
                queries.append(dict(zip(names, nums[:-1])))
                values.append(nums[-1])
    except OSError as e:
        raise ConfigurationError(f"cannot read oracle {path}: {e}") from None
    return names, queries, np.asarray(values)


def cmd_evaluate(cfg: RunConfig, args) -> int:
    model = _load_model(args.model)
    if not args.oracle:
        raise ConfigurationError("no oracle table given (--oracle)")
    names, queries, oracle = read_oracle_csv(args.oracle)
    oc = cfg.oracle
    est = metric_draws(model["match"], model["nonmatch"], queries, oc.metric, oc.fpr,
                       model["similarity"], cfg.resolved_workers())
    r2 = r_squared(est, oracle, args.mass)
    r2_median = r_squared(np.median(est, axis=0), oracle).point
    out = _out_dir(cfg)
    modelfile.write_json({"metric": oc.metric, "fpr": oc.fpr, "n_gridpoints": len(oracle),
                          "r2": r2.to_dict(), "r2_of_median_surface": r2_median},
                         out / "evaluate.json")
    print(f"R2 {r2.point:.4f} ({int(round(100 * args.mass))}% interval "
          f"{r2.lo:.4f}, {r2.hi:.4f}) over {len(oracle)} gridpoints")
    return 0


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "metrics": cmd_metrics,
            "threshold": cmd_metrics, "roc": cmd_roc, "baseline": cmd_baseline,
            "evaluate": cmd_evaluate}


# ---------------------------------------------------------------- argument parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _cfg_flag(p, flag, key, **kw):
    """A flag whose value overrides config key ``key`` (stored under that dest)."""
    p.add_argument(flag, dest=key, default=None, **kw)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    _cfg_flag(common, "--seed", "seed", type=int)
    _cfg_flag(common, "--out", "output_dir", help="output directory")
    _cfg_flag(common, "--workers", "workers", type=int)
    _cfg_flag(common, "--similarity", "metrics.similarity", action="store_const", const=True,
              help="scores are similarities (larger = more alike)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="covaroc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic pair dataset")
    _cfg_flag(p, "--preset", "dataset.preset", choices=sorted(datagen.PRESETS))
    _cfg_flag(p, "--n", "dataset.n", type=int, help="total pairs (split in preset ratio)")
    _cfg_flag(p, "--n-match", "dataset.n_match", type=int)
    _cfg_flag(p, "--n-nonmatch", "dataset.n_nonmatch", type=int)
    _cfg_flag(p, "--oracle-grid", "oracle.grid")
    _cfg_flag(p, "--oracle-n", "oracle.n_per_point", type=int)
    _cfg_flag(p, "--oracle-metric", "oracle.metric")
    _cfg_flag(p, "--oracle-fpr", "oracle.fpr", type=float)
    _cfg_flag(p, "--no-oracle", "oracle.enabled", action="store_const", const=False)

    p = sub.add_parser("fit", parents=[common], help="fit match and non-match posteriors")
    _cfg_flag(p, "--data", "dataset.csv", help="pair CSV")
    _cfg_flag(p, "--method", "fit.method", choices=["svi", "hmc"])
    _cfg_flag(p, "--draws", "fit.draws", type=int)
    _cfg_flag(p, "--components", "fit.components", type=int)
    _cfg_flag(p, "--chains", "fit.chains", type=int)
    _cfg_flag(p, "--iterations", "fit.svi.iterations", type=int)
    _cfg_flag(p, "--minibatch", "fit.svi.minibatch_size", type=int)
    _cfg_flag(p, "--learning-rate", "fit.svi.learning_rate", type=float)
    _cfg_flag(p, "--warmup", "fit.hmc.warmup", type=int)
    _cfg_flag(p, "--leapfrog-steps", "fit.hmc.leapfrog_steps", type=int)
    _cfg_flag(p, "--basis-grid", "basis.grid", type=_basis_grid)
    _cfg_flag(p, "--bandwidth", "basis.bandwidth", type=float)
    _cfg_flag(p, "--prune-distance", "basis.prune_distance", type=float)
    _cfg_flag(p, "--smoothness", "basis.smoothness", choices=["smooth", "rough"])
    _cfg_flag(p, "--coefficient-scale", "prior.coefficient_scale", type=float)
    _cfg_flag(p, "--match-covariates", "streams.match_covariates", type=_csv_list(str))
    _cfg_flag(p, "--nonmatch-covariates", "streams.nonmatch_covariates", type=_csv_list(str))

    for name, text in (("metrics", "metric surface or per-query metrics"),
                       ("threshold", "score thresholds for a target FPR")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--model", required=True)
        if name == "metrics":
            _cfg_flag(p, "--metric", "metrics.metric", choices=["tpr", "auc", "threshold"])
        _cfg_flag(p, "--fpr", "metrics.fpr", type=float)
        _cfg_flag(p, "--grid", "metrics.grid", help="e.g. 250x250")
        _cfg_flag(p, "--query", "metrics.queries", type=_query, action="append",
                  help="name=value[,name=value]; repeatable")
        _cfg_flag(p, "--mass", "metrics.mass", type=float)

    p = sub.add_parser("roc", parents=[common], help="per-draw ROC curves at one query")
    p.add_argument("--model", required=True)
    _cfg_flag(p, "--query", "metrics.queries", type=_query, action="append")
    p.add_argument("--points", type=int, default=None,
                   help="evenly spaced fpr points instead of the default log/linear grid")

    p = sub.add_parser("baseline", parents=[common], help="binned empirical metric + bootstrap")
    _cfg_flag(p, "--data", "dataset.csv")
    _cfg_flag(p, "--covariate", "baseline.covariate")
    _cfg_flag(p, "--edges", "baseline.edges", type=_csv_list(float))
    _cfg_flag(p, "--labels", "baseline.labels", type=_csv_list(str))
    _cfg_flag(p, "--metric", "baseline.metric", choices=["tpr", "auc"])
    _cfg_flag(p, "--fpr", "baseline.fpr", type=float)
    _cfg_flag(p, "--replicates", "baseline.replicates", type=int)
    _cfg_flag(p, "--mass", "baseline.mass", type=float)

    p = sub.add_parser("evaluate", parents=[common], help="R2 of a model against an oracle table")
    p.add_argument("--model", required=True)
    p.add_argument("--oracle", required=True, help="oracle CSV (x...,metric)")
    _cfg_flag(p, "--metric", "oracle.metric", choices=["tpr", "auc", "threshold"])
    _cfg_flag(p, "--fpr", "oracle.fpr", type=float)
    p.add_argument("--mass", type=float, default=0.90)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k in ("seed", "output_dir", "workers") or "." in k}
    if args.command == "threshold" and overrides.get("metrics.metric") is None:
        overrides["metrics.metric"] = "threshold"
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CovarocError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ArithmeticError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
