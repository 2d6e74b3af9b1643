"""Command-line interface.

Contract: stdout carries exactly one machine-parseable JSON document on
success; human-oriented logs and errors go to stderr (errors as one-line
JSON objects).  Exit codes: 0 success, 1 validation failure (arguments or
input files), 2 computation failure.  Non-finite floats serialize as null;
the accompanying flags (e.g. ``degenerate``) carry their meaning.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diversity import geometric_diversity, ncd_multiset, std_norm
from .coverage import dsc, kmnc, lsc, nbc, nc, snac, tknc
from .errors import DtestError, MalformedFile, SpecInvalid
from .faults import (
    Embedding,
    FaultClustering,
    augment_features,
    count_faults,
    hdbscan,
    pca_embed,
    sweep,
)
from .formats import (
    read_clusters,
    read_embedding,
    read_features,
    read_labels,
    read_outcomes,
    read_profile,
    read_sample_ids,
    read_trace,
    read_value_column,
    validate_file,
    write_clusters,
    write_features_csv,
    write_features_fmat,
)
from .harness import (
    SampleSpec,
    rq1_class_diversity,
    rq2_sample_and_correlate,
    rq3_coverage_correlate,
    rq4_bench,
    rq5_metric_vs_metric,
)
from .matrix import FeatureMatrix, min_max_normalize
from .stats import spearman


class _UsageError(Exception):
    pass


class _ValidationFailure(Exception):
    def __init__(self, error: str, message: str):
        self.error = error
        self.message = message
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise _UsageError(message)


def _sanitize(obj):
    """Replace non-finite floats with null, recursively."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.floating):
        return _sanitize(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dump(obj) -> str:
    return json.dumps(_sanitize(obj), sort_keys=True, separators=(",", ":"))


def _emit(obj) -> None:
    sys.stdout.write(_dump(obj) + "\n")


def _error_name(exc: Exception) -> str:
    if isinstance(exc, FileNotFoundError):
        return "FileNotFound"
    return type(exc).__name__


def _load(fn, *args, **kwargs):
    """Run a loader; any failure counts as a validation error (exit 1)."""
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise _ValidationFailure(_error_name(exc), str(exc)) from exc


def _read_json_config(path) -> dict:
    def go():
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise MalformedFile("config must be a JSON object", path=str(path))
        return doc

    return _load(go)


def _write_report(report: dict, out: str | None) -> None:
    text = _dump(report) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Handlers


def _cmd_diversity(args) -> int:
    matrix = _load(read_features, args.features)
    matrix = min_max_normalize(matrix)
    if args.command == "gd":
        score = geometric_diversity(matrix, auto_dedup=not args.no_dedup)
    elif args.command == "std":
        score = std_norm(matrix)
    else:
        score = ncd_multiset(
            matrix,
            compressor=args.compressor,
            mode=args.ncd_mode,
            exact_limit=args.exact_limit,
        )
    _emit(
        {
            "metric": score.metric,
            "value": score.value,
            "set_size": score.set_size,
            "degenerate": score.degenerate,
        }
    )
    return 0


def _predicted_from_outcomes(trace, outcomes_path):
    outcomes = _load(read_outcomes, outcomes_path)
    table = {i: int(p) for i, p in zip(outcomes.ids, outcomes.predicted)}
    missing = [i for i in trace.ids if i not in table]
    if missing:
        raise _ValidationFailure(
            "MalformedFile", f"outcomes missing trace id {missing[0]!r}"
        )
    return np.array([table[i] for i in trace.ids], dtype=np.int64)


def _cmd_coverage(args) -> int:
    trace = _load(read_trace, args.trace)
    profile = _load(read_profile, args.profile) if args.profile else None
    predicted = (
        _predicted_from_outcomes(trace, args.outcomes) if args.outcomes else None
    )
    crit = args.criterion
    needs_profile = crit in ("kmnc", "nbc", "snac", "lsc", "dsc")
    if needs_profile and profile is None:
        raise _ValidationFailure("MissingInput", f"{crit} requires --profile")
    if crit in ("lsc", "dsc") and args.upper_bound is None:
        raise _ValidationFailure("MissingInput", f"{crit} requires --upper-bound")
    if crit == "nc":
        score = nc(trace, args.threshold)
    elif crit == "kmnc":
        score = kmnc(trace, profile, args.k if args.k is not None else 1000)
    elif crit == "nbc":
        score = nbc(trace, profile)
    elif crit == "snac":
        score = snac(trace, profile)
    elif crit == "tknc":
        score = tknc(trace, args.k if args.k is not None else 3)
    else:
        if not args.layer:
            raise _ValidationFailure("MissingInput", f"{crit} requires --layer")
        fn = lsc if crit == "lsc" else dsc
        score = fn(
            trace, profile, args.layer, args.upper_bound, args.buckets, predicted
        )
    _emit({"criterion": score.criterion, "value": score.value, "params": score.params})
    return 0


def _clustering_quality(clustering: FaultClustering) -> dict:
    return {
        "num_clusters": clustering.num_clusters,
        "silhouette": clustering.silhouette,
        "dbcv": clustering.dbcv,
        "noise_count": clustering.noise_count,
        "params": clustering.params,
    }


def _mispredicted_embedding_inputs(args):
    """Shared loader for the faults cluster/sweep pipelines."""
    if args.embedding:
        embedding = _load(read_embedding, args.embedding)
        if args.outcomes:
            outcomes = _load(read_outcomes, args.outcomes)
            wanted = {
                i for i, m in zip(outcomes.ids, outcomes.mispredicted) if m
            }
            keep = [k for k, i in enumerate(embedding.ids) if i in wanted]
            if not keep:
                raise _ValidationFailure(
                    "EmptySet", "no mispredicted inputs in embedding"
                )
            embedding = Embedding(
                tuple(embedding.ids[k] for k in keep),
                embedding.coordinates[keep],
                embedding.source,
            )
        return embedding
    if not (args.features and args.outcomes):
        raise _ValidationFailure(
            "MissingInput",
            "need --embedding, or --features with --outcomes and --reduce",
        )
    if args.reduce != "pca":
        raise _ValidationFailure(
            "MissingInput", "--reduce pca is required without --embedding"
        )
    features = _load(read_features, args.features)
    outcomes = _load(read_outcomes, args.outcomes)
    wanted = {i for i, m in zip(outcomes.ids, outcomes.mispredicted) if m}
    keep = [k for k, i in enumerate(features.ids) if i in wanted]
    if not keep:
        raise _ValidationFailure("EmptySet", "no mispredicted inputs in features")
    sub = FeatureMatrix(
        tuple(features.ids[k] for k in keep), features.values[keep], False
    )
    sub = min_max_normalize(sub)
    augmented = augment_features(sub, outcomes)
    return pca_embed(augmented, args.dims)


def _cmd_faults_cluster(args) -> int:
    embedding = _mispredicted_embedding_inputs(args)
    clustering = hdbscan(embedding, args.min_cluster_size, args.min_samples)
    if args.out:
        write_clusters(clustering.ids, clustering.labels, args.out)
    _emit(_clustering_quality(clustering))
    return 0


def _cmd_faults_sweep(args) -> int:
    grid = _read_json_config(args.grid)
    ns = argparse.Namespace(
        embedding=grid.get("embedding"),
        outcomes=grid.get("outcomes"),
        features=grid.get("features"),
        reduce=grid.get("reduce", "pca"),
        dims=int(grid.get("dims", 2)),
    )
    embedding = _mispredicted_embedding_inputs(ns)
    mcs_values = grid.get("min_cluster_size")
    if not mcs_values:
        raise _ValidationFailure("MissingInput", "grid needs min_cluster_size list")
    ms_values = grid.get("min_samples", [None])
    rows = sweep(embedding, [int(v) for v in mcs_values],
                 [None if v is None else int(v) for v in ms_values])
    _emit({"rows": rows, "best": rows[0] if rows else None})
    return 0


def _cmd_faults_count(args) -> int:
    ids, labels = _load(read_clusters, args.clusters)
    sample = _load(read_sample_ids, args.sample)
    clustering = FaultClustering(
        ids, labels, len({int(v) for v in labels if v >= 0}), None, None, {}
    )
    _emit({"faults": count_faults(sample, clustering)})
    return 0


def _cmd_correlate(args) -> int:
    xs = _load(read_value_column, args.x)
    ys = _load(read_value_column, args.y)
    result = spearman(xs, ys)
    _emit(
        {
            "rho": result.rho,
            "p_value": result.p_value,
            "n": result.n,
            "significant": result.significant,
        }
    )
    return 0


def _sample_spec(config: dict, seed: int, default_sizes=(100, 200, 300, 400, 1000)) -> SampleSpec:
    try:
        return SampleSpec(
            sizes=tuple(int(s) for s in config.get("sizes", default_sizes)),
            repetitions=int(config.get("repetitions", 60)),
            seed=seed,
            with_replacement=bool(config.get("with_replacement", True)),
        )
    except SpecInvalid as exc:
        raise _ValidationFailure("SpecInvalid", str(exc)) from exc


def _clustering_from_file(path) -> FaultClustering:
    ids, labels = _load(read_clusters, path)
    return FaultClustering(
        ids, labels, len({int(v) for v in labels if v >= 0}), None, None, {}
    )


def _cfg(config: dict, key: str):
    if key not in config:
        raise _ValidationFailure("MissingInput", f"config needs {key!r}")
    return config[key]


def _metric_descriptor(value) -> dict:
    if isinstance(value, str):
        value = {"kind": value}
    if not (isinstance(value, dict) and "kind" in value):
        raise _ValidationFailure(
            "SpecInvalid", "metric must be a kind string or an object with 'kind'"
        )
    if value["kind"].lower() == "cluster_count":
        # confounder-check mode: score = clusters of a second clustering
        # (usually built over the whole test set) touched by the sample
        if "clusters" not in value:
            raise _ValidationFailure(
                "MissingInput", "cluster_count metric needs a 'clusters' path"
            )
        value = dict(value)
        value["_clustering"] = _clustering_from_file(value.pop("clusters"))
    return value


def _cmd_exp(args) -> int:
    config = _read_json_config(args.config)
    rq = args.rq
    if rq == "rq1":
        features = _load(read_features, _cfg(config, "features"))
        labels = _load(read_labels, _cfg(config, "labels"))
        report = rq1_class_diversity(
            features,
            labels,
            set_size=int(config.get("set_size", 100)),
            reps=int(config.get("repetitions", 20)),
            seed=args.seed,
            metrics=config.get("metrics", ["GD", "STD"]),
            ncd_params=config.get("ncd"),
        )
    elif rq == "rq2":
        features = _load(read_features, _cfg(config, "features"))
        clustering = _clustering_from_file(_cfg(config, "clusters"))
        spec = _sample_spec(config, args.seed)
        report = rq2_sample_and_correlate(
            features, clustering, _metric_descriptor(config.get("metric", "gd")), spec
        )
    elif rq == "rq3":
        trace = _load(read_trace, _cfg(config, "trace"))
        profile = _load(read_profile, config["profile"]) if config.get("profile") else None
        clustering = _clustering_from_file(_cfg(config, "clusters"))
        predicted = (
            _predicted_from_outcomes(trace, config["outcomes"])
            if config.get("outcomes")
            else None
        )
        spec = _sample_spec(config, args.seed)
        report = rq3_coverage_correlate(
            trace, profile, clustering,
            _metric_descriptor(_cfg(config, "criterion")), spec, predicted,
        )
    elif rq == "rq5":
        features = (
            _load(read_features, config["features"]) if config.get("features") else None
        )
        trace = _load(read_trace, config["trace"]) if config.get("trace") else None
        profile = (
            _load(read_profile, config["profile"]) if config.get("profile") else None
        )
        predicted = (
            _predicted_from_outcomes(trace, config["outcomes"])
            if trace is not None and config.get("outcomes")
            else None
        )
        spec = _sample_spec(config, args.seed)
        report = rq5_metric_vs_metric(
            _metric_descriptor(_cfg(config, "metric_a")),
            _metric_descriptor(_cfg(config, "metric_b")),
            spec,
            features,
            trace,
            profile,
            predicted,
        )
    else:  # rq4 / bench
        features = (
            _load(read_features, config["features"]) if config.get("features") else None
        )
        trace = _load(read_trace, config["trace"]) if config.get("trace") else None
        profile = (
            _load(read_profile, config["profile"]) if config.get("profile") else None
        )
        predicted = (
            _predicted_from_outcomes(trace, config["outcomes"])
            if trace is not None and config.get("outcomes")
            else None
        )
        spec = _sample_spec(config, args.seed, default_sizes=(100, 200, 300, 400))
        metrics = [_metric_descriptor(m) for m in config.get("metrics", ["gd"])]
        report = rq4_bench(
            metrics,
            spec,
            features,
            trace,
            profile,
            predicted,
            config.get("preprocessing_seconds"),
        )
    _write_report(report, args.out)
    return 0


def _cmd_formats_convert(args) -> int:
    matrix = _load(read_features, args.infile)
    target = args.to
    if target is None:
        suffix = Path(args.out).suffix.lower()
        target = "fmat" if suffix in (".fmat", ".bin", ".fmat1") else "csv"
    if target == "fmat":
        write_features_fmat(matrix, args.out)
    else:
        write_features_csv(matrix, args.out)
    _emit({"written": args.out, "rows": matrix.n, "features": matrix.m, "format": target})
    return 0


def _cmd_formats_validate(args) -> int:
    summary = _load(validate_file, args.file, args.kind)
    _emit(summary)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    parser = _Parser(prog="dtest", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("gd", "ncd", "std"):
        p = sub.add_parser(name, help=f"{name.upper()} diversity of a feature matrix")
        p.add_argument("--features", required=True)
        p.add_argument("--no-dedup", action="store_true")
        p.add_argument(
            "--compressor", choices=("bzip2", "gzip", "zstd"), default="bzip2"
        )
        p.add_argument("--ncd-mode", choices=("exact", "greedy"), default="greedy")
        p.add_argument("--exact-limit", type=int, default=12)
        p.set_defaults(handler=_cmd_diversity)

    p = sub.add_parser("coverage", help="coverage criteria over activation traces")
    p.add_argument(
        "criterion", choices=("nc", "kmnc", "nbc", "snac", "tknc", "lsc", "dsc")
    )
    p.add_argument("--trace", required=True)
    p.add_argument("--profile")
    p.add_argument("--outcomes", help="CSV supplying predicted classes for lsc/dsc")
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--k", type=int)
    p.add_argument("--layer")
    p.add_argument("--upper-bound", type=float)
    p.add_argument("--buckets", type=int, default=1000)
    p.set_defaults(handler=_cmd_coverage)

    p = sub.add_parser("faults", help="fault clustering and counting")
    fsub = p.add_subparsers(dest="faults_command", required=True)
    pc = fsub.add_parser("cluster")
    pc.add_argument("--features")
    pc.add_argument("--outcomes")
    pc.add_argument("--embedding")
    pc.add_argument("--reduce", choices=("pca",))
    pc.add_argument("--dims", type=int, default=2)
    pc.add_argument("--min-cluster-size", type=int, required=True)
    pc.add_argument("--min-samples", type=int)
    pc.add_argument("--out", help="write id,cluster CSV here")
    pc.set_defaults(handler=_cmd_faults_cluster)
    ps = fsub.add_parser("sweep")
    ps.add_argument("--grid", required=True)
    ps.set_defaults(handler=_cmd_faults_sweep)
    pk = fsub.add_parser("count")
    pk.add_argument("--clusters", required=True)
    pk.add_argument("--sample", required=True)
    pk.set_defaults(handler=_cmd_faults_count)

    p = sub.add_parser("correlate", help="Spearman correlation of two columns")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.set_defaults(handler=_cmd_correlate)

    p = sub.add_parser("exp", help="run an experiment from a JSON config")
    p.add_argument("rq", choices=("rq1", "rq2", "rq3", "rq4", "rq5"))
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_exp)

    p = sub.add_parser("bench", help="timing benchmark (same config as exp rq4)")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_exp, rq="rq4")

    p = sub.add_parser("formats", help="convert and validate data files")
    fsub = p.add_subparsers(dest="formats_command", required=True)
    pv = fsub.add_parser("validate")
    pv.add_argument("--file", required=True)
    pv.add_argument(
        "--kind",
        choices=("features", "trace", "profile", "embedding", "outcomes", "clusters"),
    )
    pv.set_defaults(handler=_cmd_formats_validate)
    pc = fsub.add_parser("convert")
    pc.add_argument("--in", dest="infile", required=True)
    pc.add_argument("--out", required=True)
    pc.add_argument("--to", choices=("csv", "fmat"))
    pc.set_defaults(handler=_cmd_formats_convert)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(_dump({"error": "UsageError", "message": str(exc)}) + "\n")
        return 1
    try:
        return args.handler(args)
    except _ValidationFailure as exc:
        sys.stderr.write(_dump({"error": exc.error, "message": exc.message}) + "\n")
        return 1
    except DtestError as exc:
        sys.stderr.write(
            _dump({"error": _error_name(exc), "message": str(exc)}) + "\n"
        )
        return 2
    except Exception as exc:  # computation-stage failures
        sys.stderr.write(
            _dump({"error": _error_name(exc), "message": str(exc)}) + "\n"
        )
        return 2


def entry() -> None:
    raise SystemExit(main())
