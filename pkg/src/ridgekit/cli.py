"""ridgekit command line: preprocess, enroll, cluster, search, eval, synth."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import store
from .cluster import LINKAGES, SimilarityParams, fprock_cluster, linkage_cluster, misclassification_error
from .errors import ReferenceMismatchError, RidgekitError
from .imaging import atomic_write_bytes, load_pgm, preprocess, save_pgm
from .minutiae import extract_minutiae, remove_false
from .orientation import estimate_orientation, smooth_orientation
from .pipeline import enroll_image, enroll_many
from .rfpcode import DEFAULT_STRIDE, N_CODES, MetaBase
from .search import DEFAULT_TAU_PRUNE, DEFAULT_TOP_R, QueryTuple, build_profiles, evaluate_search, search
from .synth import SIX_CLASSES, SynthSpec, generate_codes, render_class

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _warn(msg: str):
    print(f"ridgekit: {msg}", file=sys.stderr)


def _theta(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("theta must lie in (0, 1)")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _noise(text: str) -> float:
    v = float(text)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError("noise must lie in [0, 1)")
    return v


# ---------------------------------------------------------------- commands


def cmd_preprocess(args) -> int:
    img = load_pgm(args.image)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    stages = preprocess(img)
    save_pgm(stages.enhanced, out / f"{stem}_enhanced.pgm")
    save_pgm(stages.binary, out / f"{stem}_binary.pgm")
    save_pgm(stages.skeleton, out / f"{stem}_skeleton.pgm")
    if args.dump_field:
        field = smooth_orientation(estimate_orientation(stages.enhanced, roi=stages.roi))
        atomic_write_bytes(out / f"{stem}_field.txt", field.dump().encode())
    if args.dump_minutiae:
        mset = remove_false(extract_minutiae(stages.skeleton), stages.roi)
        atomic_write_bytes(out / f"{stem}_minutiae.txt", mset.dump().encode())
    return EXIT_OK


def cmd_enroll(args) -> int:
    src = Path(args.image_dir)
    if not src.is_dir():
        raise RidgekitError(f"{src} is not a directory")
    paths = sorted(p for p in src.iterdir() if p.suffix.lower() == ".pgm")
    if not paths:
        _warn(f"no .pgm files in {src}; writing an empty meta-base")
    results = enroll_many(paths, n=args.n, stride=args.stride)
    records = []
    for image_id, outcome in results:
        if isinstance(outcome, Exception):
            _warn(f"{image_id}: {outcome}")
        else:
            records.append(outcome.record)
    if len(records) != len(paths):
        _warn(f"enrolled {len(records)} of {len(paths)} images")
    store.save_metabase(MetaBase(records, args.n), args.meta)
    return EXIT_OK


def cmd_cluster(args) -> int:
    meta = store.load_metabase(args.meta)
    if args.method == "fprock":
        model = fprock_cluster(meta.records, SimilarityParams(args.theta, args.k))
    else:
        model = linkage_cluster(meta.records, args.linkage, args.k)
    store.save_clusters(model, args.out)
    return EXIT_OK


def _query_from(arg: str, meta: MetaBase, n: int) -> QueryTuple:
    path = Path(arg)
    if path.is_file():
        return enroll_image(load_pgm(path), path.stem, n=n).query()
    by_id = meta.by_id()
    if arg in by_id:
        return QueryTuple.from_record(by_id[arg])
    raise RidgekitError(f"query {arg!r} is neither an image file nor a record id")


def cmd_search(args) -> int:
    meta = store.load_metabase(args.meta)
    model = store.load_clusters(args.clusters, meta)
    tree = build_profiles(model, meta)
    query = _query_from(args.query, meta, meta.n)
    result = search(query, tree, meta, top_r=args.top, tau_prune=args.tau_prune)
    sys.stdout.write(result.report())
    return EXIT_OK


def cmd_eval(args) -> int:
    meta = store.load_metabase(args.meta)
    model = store.load_clusters(args.clusters, meta)
    labels = store.load_labels(args.labels)
    if set(labels) != set(meta.ids):
        diff = sorted(set(labels) ^ set(meta.ids))[:5]
        raise ReferenceMismatchError(f"labels and meta-base ids differ (e.g. {', '.join(diff)})")
    sys.stdout.write(f"M_E {misclassification_error(labels, model):.6f}\n")
    if args.queries:
        qmeta = store.load_metabase(args.queries)
        known = set(meta.ids)
        queries = []
        for r in qmeta:
            if r.image_id not in known:
                raise ReferenceMismatchError(f"query target {r.image_id!r} is not in the meta-base")
            queries.append(QueryTuple.from_record(r))
        tree = build_profiles(model, meta)
        report = evaluate_search(queries, meta, tree, top_r=args.top, tau_prune=args.tau_prune)
        sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_synth(args) -> int:
    classes = tuple(args.classes.split(",")) if args.classes else SIX_CLASSES
    unknown = [c for c in classes if c not in SIX_CLASSES]
    if unknown:
        raise UsageError(f"unknown class(es): {', '.join(unknown)}")
    spec = SynthSpec(classes, args.per_class, args.noise, args.seed, args.query_noise)
    data = generate_codes(spec)
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    store.save_metabase(data.meta, f"{prefix}.meta")
    store.save_labels(data.labels, f"{prefix}.labels")
    queries = MetaBase([r.__class__(q.target, q.gamma, r.class_label, q.alpha, q.beta, q.delta)
                        for q, r in zip(data.queries, data.meta)])
    store.save_metabase(queries, f"{prefix}.queries")
    if args.render:
        for ci, label in enumerate(classes):
            for j in range(args.render):
                img, _ = render_class(label, args.size, args.size, seed=args.seed * 1000 + ci * 100 + j)
                save_pgm(img, f"{prefix}-{label}-{j:04d}.pgm")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ridgekit", description="Fingerprint RFP coding, clustering and search.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="write enhanced, binary and skeleton stage images")
    s.add_argument("image")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--dump-field", action="store_true", help="also write the block orientation field")
    s.add_argument("--dump-minutiae", action="store_true", help="also write accepted/rejected minutiae")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("enroll", help="build a meta-base from a directory of PGM images")
    s.add_argument("image_dir")
    s.add_argument("--meta", required=True)
    s.add_argument("--n", type=_positive, default=N_CODES)
    s.add_argument("--stride", type=_positive, default=DEFAULT_STRIDE)
    s.set_defaults(func=cmd_enroll)

    s = sub.add_parser("cluster", help="cluster a meta-base")
    s.add_argument("--meta", required=True)
    s.add_argument("--method", choices=("fprock", "linkage"), default="fprock")
    s.add_argument("--linkage", choices=LINKAGES, default="complete")
    s.add_argument("--theta", type=_theta, default=0.5)
    s.add_argument("--k", type=_positive, default=6)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("search", help="rank meta-base records against a query")
    s.add_argument("--meta", required=True)
    s.add_argument("--clusters", required=True)
    s.add_argument("--query", required=True, help="PGM image path or enrolled record id")
    s.add_argument("--top", type=_positive, default=DEFAULT_TOP_R)
    s.add_argument("--tau-prune", type=int, default=DEFAULT_TAU_PRUNE)
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("eval", help="misclassification error and optional search report")
    s.add_argument("--meta", required=True)
    s.add_argument("--clusters", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--queries", help="meta-base file of queries whose ids name their targets")
    s.add_argument("--top", type=_positive, default=DEFAULT_TOP_R)
    s.add_argument("--tau-prune", type=int, default=DEFAULT_TAU_PRUNE)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a labelled synthetic meta-base")
    s.add_argument("--classes", help="comma-separated subset of: " + ",".join(SIX_CLASSES))
    s.add_argument("--per-class", type=int, default=100)
    s.add_argument("--noise", type=_noise, default=0.10)
    s.add_argument("--query-noise", type=_noise, default=0.05)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--out-prefix", required=True)
    s.add_argument("--render", type=int, nargs="?", const=1, default=0, metavar="PER_CLASS",
                   help="also render PER_CLASS ridge images per class (default 1)")
    s.add_argument("--size", type=_positive, default=256)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "per_class", 0) < 0:
            raise UsageError("--per-class must be >= 0")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (RidgekitError, OSError, ValueError) as exc:
        print(f"ridgekit: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
