"""Text persistence for the meta-base, cluster models and label files."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .cluster import GOODNESS_DECIMALS, ClusterModel, Merge, partition_from_merges
from .errors import ParseError, ReferenceMismatchError
from .imaging import atomic_write_bytes
from .rfpcode import CLASS_LABELS, N_CODES, MetaBase, RidgeFlowPattern

META_HEADER = "RFPMETA 1"
CLUSTERS_HEADER = "RFPCLUSTERS 1"
_UINT = re.compile(r"^(0|[1-9][0-9]*)$")
_BITS10 = re.compile(r"^[01]{10}$")
_FIXED9 = re.compile(r"^-?[0-9]+\.[0-9]{9}$")


@dataclass(frozen=True)
class Archive:
    meta: MetaBase
    model: ClusterModel | None = None
    format_version: int = 1


def _lines(text: str, path) -> list[str]:
    if text and not text.endswith("\n"):
        raise ParseError("file must end with a newline", text.count("\n") + 1, path)
    lines = text.split("\n")[:-1] if text else []
    for i, line in enumerate(lines, start=1):
        if line != line.strip() or "  " in line or "\t" in line or "\r" in line:
            raise ParseError("fields must be separated by single spaces", i, path)
    return lines


def _read(path) -> str:
    try:
        return Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8 ({exc.reason})", 1, str(path)) from None


def _uint(tok: str, what: str, line: int, path) -> int:
    if not _UINT.match(tok):
        raise ParseError(f"{what} must be a non-negative integer, got {tok!r}", line, path)
    return int(tok)


# ---------------------------------------------------------------- meta-base


def format_metabase(meta: MetaBase) -> str:
    out = [META_HEADER]
    for r in meta:
        label = r.class_label or "?"
        out.append(" ".join([r.image_id, label, str(r.alpha), str(r.beta), r.delta]
                            + [str(c) for c in r.codes]))
    return "\n".join(out) + "\n"


def parse_metabase(text: str, path=None, n: int = N_CODES) -> MetaBase:
    lines = _lines(text, path)
    if not lines or lines[0] != META_HEADER:
        raise ParseError(f"expected header {META_HEADER!r}", 1, path)
    records = []
    seen = set()
    for no, line in enumerate(lines[1:], start=2):
        f = line.split(" ")
        if len(f) != 5 + n:
            raise ParseError(f"expected {5 + n} fields (id class alpha beta delta + {n} codes), "
                             f"got {len(f)}", no, path)
        rid, label, alpha, beta, delta = f[:5]
        if rid in seen:
            raise ParseError(f"duplicate image id {rid!r}", no, path)
        if label != "?" and label not in CLASS_LABELS:
            raise ParseError(f"unknown class {label!r}", no, path)
        a = _uint(alpha, "alpha", no, path)
        b = _uint(beta, "beta", no, path)
        if not _BITS10.match(delta):
            raise ParseError(f"delta must be 10 bits, got {delta!r}", no, path)
        codes = []
        for tok in f[5:]:
            if len(tok) != 1 or tok not in "01234567":
                raise ParseError(f"code must be a digit 0..7, got {tok!r}", no, path)
            codes.append(int(tok))
        seen.add(rid)
        records.append(RidgeFlowPattern(rid, tuple(codes), None if label == "?" else label, a, b, delta))
    return MetaBase(records, n)


def save_metabase(meta: MetaBase, path):
    atomic_write_bytes(path, format_metabase(meta).encode("utf-8"))


def load_metabase(path, n: int = N_CODES) -> MetaBase:
    return parse_metabase(_read(path), str(path), n)


# ---------------------------------------------------------------- clusters


def format_clusters(model: ClusterModel) -> str:
    out = [CLUSTERS_HEADER]
    for cid, members in model.clusters().items():
        out.append(" ".join(["C", str(cid)] + members))
    out += [f"O {rid}" for rid in sorted(model.outliers)]
    out += [f"M {m.left} {m.right} {m.new} {m.goodness:.{GOODNESS_DECIMALS}f}" for m in model.dendrogram]
    return "\n".join(out) + "\n"


def parse_clusters(text: str, path=None) -> ClusterModel:
    lines = _lines(text, path)
    if not lines or lines[0] != CLUSTERS_HEADER:
        raise ParseError(f"expected header {CLUSTERS_HEADER!r}", 1, path)
    clusters: dict[int, list[str]] = {}
    outliers: list[str] = []
    raw_merges: list[tuple[int, int, int, int, float]] = []
    where: dict[str, int] = {}
    section = 0  # C lines, then O lines, then M lines
    for no, line in enumerate(lines[1:], start=2):
        f = line.split(" ")
        kind = f[0]
        order = {"C": 0, "O": 1, "M": 2}.get(kind)
        if order is None:
            raise ParseError(f"unknown line type {kind!r}", no, path)
        if order < section:
            raise ParseError(f"{kind} line out of order (C, O, M)", no, path)
        section = order
        if kind == "C":
            if len(f) < 3:
                raise ParseError("C line needs a cluster id and at least one member", no, path)
            cid = _uint(f[1], "cluster id", no, path)
            if cid != len(clusters) + 1:
                raise ParseError(f"cluster ids must run 1, 2, ...; got {cid}", no, path)
            members = f[2:]
            if members != sorted(members):
                raise ParseError("cluster members must be sorted", no, path)
            for rid in members:
                if rid in where:
                    raise ParseError(f"record {rid!r} already listed on line {where[rid]}", no, path)
                where[rid] = no
            clusters[cid] = members
        elif kind == "O":
            if len(f) != 2:
                raise ParseError("O line needs exactly one record id", no, path)
            rid = f[1]
            if rid in where:
                raise ParseError(f"record {rid!r} already listed on line {where[rid]}", no, path)
            if outliers and rid < outliers[-1]:
                raise ParseError("outliers must be sorted", no, path)
            where[rid] = no
            outliers.append(rid)
        else:
            if len(f) != 5:
                raise ParseError("M line needs: left right new goodness", no, path)
            left = _uint(f[1], "left node", no, path)
            right = _uint(f[2], "right node", no, path)
            new = _uint(f[3], "new node", no, path)
            if not _FIXED9.match(f[4]):
                raise ParseError(f"goodness must have exactly {GOODNESS_DECIMALS} decimals, got {f[4]!r}",
                                 no, path)
            raw_merges.append((no, left, right, new, float(f[4])))

    ids = tuple(sorted(where))
    m = len(ids)
    used: set[int] = set()
    merges = []
    for i, (no, left, right, new, g) in enumerate(raw_merges):
        if new != m + i:
            raise ParseError(f"merge node must be {m + i}, got {new}", no, path)
        for node in (left, right):
            if node >= new:
                raise ParseError(f"node {node} is referenced before it exists", no, path)
            if node in used:
                raise ParseError(f"node {node} merged twice", no, path)
            used.add(node)
        if left == right:
            raise ParseError("a node cannot merge with itself", no, path)
        merges.append(Merge(left, right, new, g))
    partition = {rid: cid for cid, members in clusters.items() for rid in members}
    model = ClusterModel(ids, partition, tuple(merges), tuple(outliers), "loaded")
    if merges and model.replay() != partition:
        raise ParseError("merge lines do not reproduce the C lines", raw_merges[-1][0], path)
    return model


def save_clusters(model: ClusterModel, path):
    atomic_write_bytes(path, format_clusters(model).encode("utf-8"))


def load_clusters(path, meta: MetaBase | None = None) -> ClusterModel:
    model = parse_clusters(_read(path), str(path))
    if meta is not None:
        check_references(model, meta)
    return model


def check_references(model: ClusterModel, meta: MetaBase):
    """Cluster files must name exactly the meta-base's records."""
    known = set(meta.ids)
    listed = set(model.ids)
    unknown = sorted(listed - known)
    if unknown:
        raise ReferenceMismatchError(f"clusters reference unknown record id(s): {', '.join(unknown[:5])}")
    absent = sorted(known - listed)
    if absent:
        raise ReferenceMismatchError(f"meta-base records missing from clusters: {', '.join(absent[:5])}")


# ---------------------------------------------------------------- labels


def format_labels(labels: dict[str, str]) -> str:
    return "".join(f"{rid} {lab}\n" for rid, lab in labels.items())


def parse_labels(text: str, path=None) -> dict[str, str]:
    out: dict[str, str] = {}
    for no, line in enumerate(_lines(text, path), start=1):
        f = line.split(" ")
        if len(f) != 2:
            raise ParseError("expected '<image_id> <class>'", no, path)
        if f[0] in out:
            raise ParseError(f"duplicate image id {f[0]!r}", no, path)
        out[f[0]] = f[1]
    return out


def save_labels(labels: dict[str, str], path):
    atomic_write_bytes(path, format_labels(labels).encode("utf-8"))


def load_labels(path) -> dict[str, str]:
    return parse_labels(_read(path), str(path))


def load_archive(meta_path, clusters_path=None) -> Archive:
    meta = load_metabase(meta_path)
    model = load_clusters(clusters_path, meta) if clusters_path else None
    return Archive(meta, model)
