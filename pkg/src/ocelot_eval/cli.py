"""Command-line interface.

Exit codes: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import io
from .core import CELL_CLASSES, InputError, TissueClass, validate_manifest
from .fusion import adaptive_fusion, background_revision, extreme_fusion
from .labelgen import points_to_disks, points_to_gaussians, peaks_from_heatmap
from .matching import hit_radius_px
from .metrics import count_split, evaluate_by_group, evaluate_split
from .stats import STATISTICS, bootstrap_ci, pairwise_outperformance, rank_probability_matrix
from .subgroup import cooccurrence_table, subgroup_evaluate
from .synth import gen_corpus, perturb_to_predictions

REPORT_DIGITS = 6


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.{REPORT_DIGITS}g}"
    return "" if v is None else str(v)


def _csv(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _emit(args, payload: dict, table=None, digits: int | None = REPORT_DIGITS) -> None:
    if args.format == "csv":
        if table is None:
            raise InputError(f"command {args.command!r} has no CSV form; use --format json")
        text = _csv(*table)
    else:
        text = io.canonical_json(payload, digits)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _radius(args) -> float:
    return hit_radius_px(args.radius_um, args.mpp)


def _report_row(name, rep):
    row = [name, rep.n_images]
    for c in CELL_CLASSES:
        k, m = rep.counts[c], rep.metrics[c]
        row += [k.tp, k.fp, k.fn, m.precision, m.recall, m.f1]
    return row + [rep.mf1]


def _report_header():
    head = ["group", "n_images"]
    for c in CELL_CLASSES:
        head += [f"{k}_{c.name}" for k in ("tp", "fp", "fn", "precision", "recall", "f1")]
    return head + ["mF1"]


# -- commands ---------------------------------------------------------------------

def cmd_evaluate(args):
    split = io.load_split(args.gt)
    preds = io.read_predictions_json(args.pred)
    radius = _radius(args)
    report = evaluate_split(preds, split.gts, radius, args.jobs)
    payload = {"radius_px": radius, "all": report.to_dict()}
    rows = [_report_row("all", report)]
    if args.by_organ:
        groups = {m.pair_id: m.organ for m in split.manifest.pairs}
        by = evaluate_by_group(preds, split.gts, groups, radius, args.jobs)
        payload["by_organ"] = {k: v.to_dict() for k, v in by.items()}
        rows += [_report_row(k, v) for k, v in by.items()]
    _emit(args, payload, (_report_header(), rows))


def _team_counts(args, split):
    teams = {}
    for spec in args.team:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise InputError(f"--team expects NAME=PREDICTIONS.json, got {spec!r}")
        if name in teams:
            raise InputError(f"duplicate team name {name!r}")
        teams[name] = count_split(io.read_predictions_json(path), split.gts, _radius(args), args.jobs)
    return teams


def cmd_ci(args):
    split = io.load_split(args.gt)
    if args.team:
        teams = _team_counts(args, split)
    else:
        teams = {"submission": count_split(io.read_predictions_json(args.pred), split.gts,
                                           _radius(args), args.jobs)}
    stats = args.statistic or ["mF1"]
    results, rows = [], []
    for team, counts in teams.items():
        for s in stats:
            ci = bootstrap_ci(counts, s, args.iterations, args.level, args.seed, args.jobs, args.method)
            results.append({"team": team, **ci.to_dict()})
            rows.append([team, s, ci.point, ci.lo, ci.hi, ci.level, ci.n_iter])
    payload = {"seed": args.seed, "method": args.method, "intervals": results}
    _emit(args, payload, (["team", "statistic", "point", "lo", "hi", "level", "n_iter"], rows))


def cmd_rank(args):
    split = io.load_split(args.gt)
    teams = _team_counts(args, split)
    payload, rows = {"seed": args.seed, "n_iter": args.iterations, "statistics": {}}, []
    for s in args.statistic or ["mF1"]:
        m = rank_probability_matrix(teams, s, args.iterations, args.seed, args.jobs)
        payload["statistics"][s] = m.to_dict()
        for j, t in enumerate(m.team_ids):
            rows.append([s, t] + [float(m.probs[k, j]) for k in range(len(m.team_ids))])
    header = ["statistic", "team"] + [f"rank_{k + 1}" for k in range(len(teams))]
    _emit(args, payload, (header, rows))


def cmd_pairwise(args):
    split = io.load_split(args.gt)
    teams = _team_counts(args, split)
    payload, rows = {"seed": args.seed, "n_iter": args.iterations, "statistics": {}}, []
    for s in args.statistic or ["mF1"]:
        q = pairwise_outperformance(teams, s, args.iterations, args.seed, args.jobs)
        payload["statistics"][s] = q.to_dict()
        for i, t in enumerate(q.team_ids):
            rows.append([s, t] + [float(v) for v in q.probs[i]])
    _emit(args, payload, (["statistic", "team"] + list(teams), rows))


def cmd_subgroup(args):
    split = io.load_split(args.gt)
    preds = io.read_predictions_json(args.pred)
    regions = [TissueClass.BG, TissueClass.CA] if args.region == "both" else [TissueClass[args.region]]
    payload, rows = {"mode": args.mode, "regions": {}}, []
    for r in regions:
        rep = subgroup_evaluate(preds, split.gts, split.grids, split.metas, r, _radius(args), args.mode)
        payload["regions"][r.name] = rep.to_dict()
        rows.append(_report_row(r.name, rep))
    _emit(args, payload, (_report_header(), rows))


def cmd_cooccur(args):
    split = io.load_split(args.gt)
    table = cooccurrence_table(split.gts, split.grids, split.metas)
    rows = [[c.name, t.name, table.counts[c][t], table.rate(c, t)]
            for c in CELL_CLASSES for t in (TissueClass.BG, TissueClass.CA)]
    _emit(args, table.to_dict(), (["cell_class", "tissue_class", "count", "rate_given_tissue"], rows))


def cmd_labelgen(args):
    cells = io.read_cells_csv(args.cells)
    if args.kind == "disk":
        out = points_to_disks(cells, args.disk_radius_um, args.mpp, args.size)
    else:
        out = points_to_gaussians(cells, args.sigma_um, args.mpp, args.size)
    dest = Path(args.out)
    if dest.suffix.lower() in (".pgm", ".png") and out.ndim == 2:
        if dest.suffix.lower() == ".png":
            Image.fromarray(out).save(dest)
        else:
            io._write_pgm(dest, out)
    else:
        np.save(dest, out)


def cmd_peaks(args):
    try:
        heat = np.load(args.heatmap)
    except (OSError, ValueError) as exc:
        raise InputError(f"{args.heatmap}: cannot read heatmap ({exc})") from None
    cells = peaks_from_heatmap(heat, args.min_distance, args.threshold)
    _emit(args, io.predictions_to_json({args.image_id: cells}), digits=None)


def cmd_fuse(args):
    split = io.load_split(args.gt, with_probs=True)
    scored = io.read_scored_json(args.scored)
    unknown = sorted(set(scored) - set(split.gts))
    if unknown:
        raise InputError(f"scored cells reference unknown image ids: {', '.join(unknown)}")
    metas, out = split.metas, {}
    for image_id in sorted(scored):
        cells, meta, prob = scored[image_id], metas[image_id], split.probs[image_id]
        if args.method == "extreme":
            tissue = split.grids[image_id] if args.tissue_source == "labels" else prob
            out[image_id] = extreme_fusion(cells, tissue, meta, args.threshold)
        elif args.method == "adaptive":
            out[image_id] = [c.to_prediction() for c in adaptive_fusion(cells, prob, meta)]
        else:
            out[image_id] = background_revision(cells, prob, meta, args.tau)
    _emit(args, io.predictions_to_json(out), digits=None)


def cmd_synth(args):
    corpus = gen_corpus(args.seed, args.pairs, args.density, args.min_sep, args.n_blobs, args.unk_border)
    out = Path(args.out)
    io.write_split(out, corpus.manifest, corpus.gts, corpus.grids, corpus.probs)
    if args.predictions:
        preds, expected = {}, {}
        for k, pid in enumerate(sorted(corpus.gts)):
            pert = perturb_to_predictions(
                corpus.gts[pid], args.drop, args.jitter, args.spurious, args.flip,
                seed=args.seed * 100003 + k, radius_px=_radius(args),
            )
            preds[pid] = pert.predictions
            expected[pid] = {c.name: vars(pert.expected[c]) for c in CELL_CLASSES} | {"exact": pert.exact}
        io.write_predictions_json(out / "predictions.json", preds)
        io.write_json(out / "expected_counts.json", expected)


def cmd_validate(args):
    if args.manifest:
        manifest = io.read_manifest(args.manifest)
    else:
        manifest = io.read_manifest(Path(args.gt) / "manifest.json")
    rep = validate_manifest(manifest, args.tolerance_pairs, args.tolerance_fraction)
    payload = {
        "ok": rep.ok,
        "violations": [vars(v) for v in rep.violations],
        "pairs_per_split": rep.pairs_per_split,
        "pairs_per_organ": rep.pairs_per_organ,
        "slides_per_organ": rep.slides_per_organ,
    }
    rows = [[v.kind, v.subject, v.message] for v in rep.violations]
    _emit(args, payload, (["kind", "subject", "message"], rows))
    if args.strict and not rep.ok:
        return 1
    return 0


# -- parser -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--radius-um", type=float, default=3.0, help="hit radius in microns")
    common.add_argument("--mpp", type=float, default=0.2, help="cell-patch microns per pixel")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--iterations", type=int, default=10_000)
    common.add_argument("--level", type=float, default=0.95)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("-o", "--output", help="write the report here instead of stdout")

    p = _Parser(prog="ocelot-eval", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("evaluate", cmd_evaluate, "pooled per-class P/R/F1 and mF1")
    sp.add_argument("--gt", required=True, help="split directory")
    sp.add_argument("--pred", required=True, help="predictions JSON")
    sp.add_argument("--by-organ", action="store_true")

    sp = add("ci", cmd_ci, "bootstrap confidence intervals")
    sp.add_argument("--gt", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--pred")
    g.add_argument("--team", action="append", metavar="NAME=FILE")
    sp.add_argument("--statistic", action="append", choices=STATISTICS)
    sp.add_argument("--method", choices=("percentile", "basic"), default="percentile")

    for name, func, help_ in (("rank", cmd_rank, "rank probability matrix"),
                              ("pairwise", cmd_pairwise, "pairwise outperformance matrix")):
        sp = add(name, func, help_)
        sp.add_argument("--gt", required=True)
        sp.add_argument("--team", action="append", required=True, metavar="NAME=FILE")
        sp.add_argument("--statistic", action="append", choices=STATISTICS)

    sp = add("subgroup", cmd_subgroup, "metrics restricted to a tissue region")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--region", choices=("BG", "CA", "both"), default="both")
    sp.add_argument("--mode", choices=("filter", "attribute"), default="filter")

    sp = add("cooccur", cmd_cooccur, "cell class by tissue class counts")
    sp.add_argument("--gt", required=True)

    sp = add("labelgen", cmd_labelgen, "disk or Gaussian targets from a cell CSV")
    sp.add_argument("--cells", required=True)
    sp.add_argument("--kind", choices=("disk", "gaussian"), default="disk")
    sp.add_argument("--disk-radius-um", type=float, default=1.4)
    sp.add_argument("--sigma-um", type=float, default=1.14)
    sp.add_argument("--size", type=int, default=1024)
    sp.add_argument("--out", required=True, help=".npy, or .pgm/.png for disk maps")

    sp = add("peaks", cmd_peaks, "point detections from a (2, H, W) .npy heatmap stack")
    sp.add_argument("--heatmap", required=True)
    sp.add_argument("--image-id", required=True)
    sp.add_argument("--min-distance", type=float, default=7.0)
    sp.add_argument("--threshold", type=float, default=0.5)

    sp = add("fuse", cmd_fuse, "apply a cell-tissue fusion rule")
    sp.add_argument("--gt", required=True, help="split directory with tissue/ and tissue_prob/")
    sp.add_argument("--scored", required=True, help="scored cells JSON")
    sp.add_argument("--method", choices=("extreme", "adaptive", "revise"), default="extreme")
    sp.add_argument("--tissue-source", choices=("labels", "prob"), default="prob")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--tau", type=float, default=0.5)

    sp = add("synth", cmd_synth, "write a synthetic split directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--pairs", type=int, default=10)
    sp.add_argument("--density", type=float, default=300.0, help="cells per megapixel")
    sp.add_argument("--min-sep", type=float, default=0.0)
    sp.add_argument("--n-blobs", type=int, default=6)
    sp.add_argument("--unk-border", type=int, default=0)
    sp.add_argument("--predictions", action="store_true", help="also write perturbed predictions")
    sp.add_argument("--drop", type=float, default=0.0)
    sp.add_argument("--jitter", type=float, default=0.0)
    sp.add_argument("--spurious", type=float, default=0.0)
    sp.add_argument("--flip", type=float, default=0.0)

    sp = add("validate", cmd_validate, "check a manifest for leakage and split balance")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--manifest")
    g.add_argument("--gt")
    sp.add_argument("--tolerance-pairs", type=float, default=1.0)
    sp.add_argument("--tolerance-fraction", type=float, default=0.025)
    sp.add_argument("--strict", action="store_true", help="exit 1 when violations are found")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = args.func(args)
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
