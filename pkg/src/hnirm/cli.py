"""Command line: ``hnirm fit|simulate|analyze|diagnose``.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import binary_dataset, dichotomize, load_responses, write_responses
from .exceptions import HnirmError, ValidationError
from .hierarchy import assign_groups
from .sampler import ChainConfig, config_from_mapping, read_config_file, run_chain, write_config_file
from .sampler.diagnostics import diagnostics
from .sampler.io import load_samples, read_manifest, write_samples

logger = logging.getLogger("hnirm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _resolve_seed(arg_seed, file_values):
    if arg_seed is not None:
        return arg_seed
    if "seed" in file_values:
        return None
    env = os.environ.get("HNIRM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"HNIRM_SEED must be an integer, got {env!r}") from None
    return None


# -- fit ----------------------------------------------------------------------

def cmd_fit(args) -> int:
    values = read_config_file(args.config) if args.config else {}
    config = config_from_mapping(values)
    overrides = {}
    seed = _resolve_seed(args.seed, values)
    if seed is not None:
        overrides["seed"] = seed
    for key in ("d", "parallel", "n_iter", "burn_in", "thin"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    if args.groups is not None:
        overrides["group_mode"] = args.groups
    if args.adapt:
        overrides["adapt"] = True
    config = config_from_mapping({k: str(v) for k, v in overrides.items()}, base=config)

    dataset = load_responses(args.data, format=args.format)
    matrices = dichotomize(dataset, cut=args.cut, mode=args.mode)
    groups, labels = assign_groups(dataset, config.group_mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = run_chain(matrices, config, group_of_school=groups, group_labels=labels,
                        item_ids=dataset.item_ids)
    write_responses(binary_dataset(matrices, dataset.item_ids), out / "binary_responses.csv")
    write_config_file(config, out / "config.txt")
    write_samples(samples, out, inputs=[args.data],
                  extra={"dropped_respondents": dataset.dropped_count, "cut": args.cut})
    logger.info("wrote %d draws to %s (%.1f s)", samples.n_draws, out, samples.wall_time)
    return 0


# -- simulate -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .synthgen import generate, write_truth

    seed = args.seed if args.seed is not None else int(os.environ.get("HNIRM_SEED", "0"))
    groups = args.groups if args.groups and args.groups > 1 else None
    ds, truth = generate(args.M, args.n, args.p, d=args.d, group_spec=groups, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_responses(ds, out / "responses.csv")
    write_truth(truth, out)
    return 0


# -- analyze ------------------------------------------------------------------

def _school_matrices(directory, school_ids):
    ds = load_responses(Path(directory) / "binary_responses.csv")
    mats = {m.school_id: m.X for m in dichotomize(ds, mode="binary")}
    return [mats[s] for s in school_ids]


def cmd_analyze(args) -> int:
    from .plots import scatter_svg
    from .postprocess import (
        integrate_item_school_space,
        item_dissimilarity_from_mu,
        kruskal_mds,
        pooled_mu,
        school_space_from_delta,
        school_space_from_mu,
        spectral_cluster,
        summarize,
    )

    samples = load_samples(args.samples)
    out = Path(args.out) if args.out else Path(args.samples) / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else int(os.environ.get("HNIRM_SEED", "0"))
    M, p = len(samples.school_ids), len(samples.item_ids)

    rows = summarize(samples, level=args.level)
    _write_rows(out / "summary.csv", ["family", "unit", "i", "j", "mean", "hpd_low", "hpd_high", "excludes_zero"],
                [[r[k] for k in ("family", "unit", "i", "j", "mean", "hpd_low", "hpd_high", "excludes_zero")]
                 for r in rows])

    weights = np.bincount(samples.group_of_school, minlength=len(samples.group_labels))
    mu = pooled_mu(samples.draws["mu"].mean(axis=0), weights)
    item_D = item_dissimilarity_from_mu(mu)
    item_emb = kruskal_mds(item_D, args.d)
    item_labels = spectral_cluster(item_D, args.item_clusters, seed=seed)
    _write_rows(out / "item_space.csv", ["item", "cluster"] + [f"x{a + 1}" for a in range(args.d)] + ["stress"],
                [[samples.item_ids[i], int(item_labels[i])] + [float(v) for v in item_emb.positions[i]]
                 + [item_emb.stress] for i in range(p)])
    scatter_svg(out / "item_space.svg", item_emb.positions, labels=samples.item_ids,
                groups=[f"cluster {c}" for c in item_labels], title="Item latent space")
    cluster_rows = [["item", samples.item_ids[i], int(item_labels[i])] for i in range(p)]

    group_names = [samples.group_labels[g] for g in samples.group_of_school]
    school_emb = None
    if args.school_space in ("delta", "both"):
        delta_means = samples.means.get("delta")
        if delta_means is None:
            delta_means = samples.family("delta").mean(axis=0)
        space = school_space_from_delta(delta_means, args.d)
        emb = space.embedding
        s_labels = None
        if M > args.school_clusters >= 2:
            s_labels = spectral_cluster(space.distances.S, args.school_clusters, seed=seed)
            cluster_rows += [["school", samples.school_ids[m], int(s_labels[m])] for m in range(M)]
        dim = emb.positions.shape[1] if emb is not None else 0
        _write_rows(out / "school_space_delta.csv",
                    ["school", "group", "cluster"] + [f"x{a + 1}" for a in range(dim)],
                    [[samples.school_ids[m], group_names[m], "" if s_labels is None else int(s_labels[m])]
                     + ([float(v) for v in emb.positions[m]] if emb is not None else []) for m in range(M)])
        if emb is not None and dim >= 1:
            scatter_svg(out / "school_space_delta.svg", emb.positions, labels=samples.school_ids,
                        groups=group_names, title="School latent space (delta)")
            school_emb = emb
    if args.school_space in ("mu", "both"):
        X = _school_matrices(args.samples, samples.school_ids)
        space = school_space_from_mu(mu, X, args.d, aggregate=args.aggregate)
        P = space.embedding.positions
        _write_rows(out / "school_space_mu.csv", ["school", "group"] + [f"x{a + 1}" for a in range(args.d)],
                    [[samples.school_ids[m], group_names[m]] + [float(v) for v in P[m]] for m in range(M)])
        scatter_svg(out / "school_space_mu.svg", P, labels=samples.school_ids, groups=group_names,
                    title="School latent space (mu)")
        if school_emb is None:
            school_emb = space.embedding
    _write_rows(out / "clusters.csv", ["kind", "id", "cluster"], cluster_rows)

    if school_emb is not None and school_emb.positions.shape[1] == args.d:
        joint = integrate_item_school_space(item_emb, school_emb, samples.item_ids, samples.school_ids)
        coords = [f"x{a + 1}" for a in range(args.d)]
        _write_rows(out / "integrated_space.csv", ["role", "label"] + coords,
                    [[r["role"], r["label"]] + [r[c] for c in coords] for r in joint.rows])
        pts = np.array([[r[c] for c in coords] for r in joint.rows])
        scatter_svg(out / "integrated_space.svg", pts, labels=[r["label"] for r in joint.rows],
                    groups=[r["role"] for r in joint.rows],
                    markers=["o" if r["role"] == "item" else "s" for r in joint.rows],
                    title="Items and schools (standardised)")
    return 0


# -- diagnose -----------------------------------------------------------------

def cmd_diagnose(args) -> int:
    samples = load_samples(args.samples)
    out = Path(args.out) if args.out else Path(args.samples) / "diagnostics"
    out.mkdir(parents=True, exist_ok=True)
    report = diagnostics(samples, max_lag=args.max_lag)
    trace_rows = []
    for name, series in report.traces.items():
        trace_rows += [[name, s, float(v)] for s, v in enumerate(series)]
    _write_rows(out / "trace.csv", ["parameter", "draw", "value"], trace_rows)
    ac_rows = []
    for row in report.rows:
        ac_rows += [[row["parameter"], lag, float(v)] for lag, v in enumerate(row["acf"])]
    _write_rows(out / "autocorr.csv", ["parameter", "lag", "value"], ac_rows)
    _write_rows(out / "ess.csv", ["parameter", "mean", "ess", "degenerate"],
                [[r["parameter"], r["mean"], r["ess"], r["degenerate"]] for r in report.rows])
    _write_rows(out / "acceptance.csv", ["family", "rate"], [[k, float(v)] for k, v in report.acceptance.items()])
    return 0


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hnirm", description="Hierarchical network item response model")
    parser.add_argument("--version", action="version", version=f"hnirm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="run the sampler on a response file")
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--config")
    f.add_argument("--groups", choices=["single", "by_label"])
    f.add_argument("--d", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--parallel", type=int)
    f.add_argument("--n-iter", dest="n_iter", type=int)
    f.add_argument("--burn-in", dest="burn_in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--adapt", action="store_true", help="tune jump scales during burn-in")
    f.add_argument("--format", choices=["wide", "long"], default="wide")
    f.add_argument("--cut", type=int, default=4)
    f.add_argument("--mode", choices=["auto", "likert", "binary"], default="auto")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    s.add_argument("--M", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--groups", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="summaries, clusters, embeddings and plots")
    a.add_argument("--samples", required=True)
    a.add_argument("--out")
    a.add_argument("--item-clusters", dest="item_clusters", type=int, default=3)
    a.add_argument("--school-clusters", dest="school_clusters", type=int, default=2)
    a.add_argument("--school-space", dest="school_space", choices=["delta", "mu", "both"], default="both")
    a.add_argument("--aggregate", choices=["mean", "median"], default="mean")
    a.add_argument("--d", type=int, default=2)
    a.add_argument("--level", type=float, default=0.95)
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_analyze)

    g = sub.add_parser("diagnose", help="trace, autocorrelation and ESS tables")
    g.add_argument("--samples", required=True)
    g.add_argument("--out")
    g.add_argument("--max-lag", dest="max_lag", type=int, default=50)
    g.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, KeyError) as exc:
        print(f"hnirm: error: {exc}", file=sys.stderr)
        return 1
    except HnirmError as exc:
        print(f"hnirm: runtime error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError, MemoryError) as exc:
        print(f"hnirm: runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
