"""Line-oriented text formats for galleries, queries, features, models and reports.

Floats are written as the shortest decimal that round-trips the float64
(``repr``), so parse(serialize(x)) is bit-exact. Each file starts with a
``MEAAD-<KIND> v1`` header; other versions are rejected.
"""

import csv
import json
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .detector import DetectorModel, Hyperparams, hyperparams_dict
from .embedding import ExpertIndex, QuerySample
from .errors import DataError, FormatError
from .features import feature_dim

VERSION = "v1"


def fmt_floats(values) -> str:
    return ",".join(map(repr, np.asarray(values, dtype=np.float64).ravel().tolist()))


def parse_floats(text: str) -> np.ndarray:
    if not text:
        return np.empty(0)
    try:
        return np.array([float(t) for t in text.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"bad float list: {exc}") from None


def _header(kind: str, **fields) -> str:
    return " ".join([f"MEAAD-{kind}", VERSION] + [f"{k}={v}" for k, v in fields.items()])


def _parse_header(line: str, kind: str, path) -> Dict[str, str]:
    parts = line.split()
    if len(parts) < 2 or parts[0] != f"MEAAD-{kind}":
        raise FormatError(f"{path}: not a MEAAD-{kind} file")
    if parts[1] != VERSION:
        raise FormatError(f"{path}: unsupported version {parts[1]!r} (expected {VERSION})")
    fields = {}
    for p in parts[2:]:
        key, sep, value = p.partition("=")
        if not sep:
            raise FormatError(f"{path}: malformed header field {p!r}")
        fields[key] = value
    return fields


def _int_field(fields, key, path) -> int:
    try:
        return int(fields[key])
    except (KeyError, ValueError):
        raise FormatError(f"{path}: header field {key!r} missing or not an integer") from None


def _read_lines(path) -> List[str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: empty file")
    return lines


def _write(path, lines: Iterable[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


# -- galleries ---------------------------------------------------------------


def write_gallery(path, index: ExpertIndex) -> None:
    def rows():
        yield _header("EMB", dim=index.dimension, expert=index.expert_id)
        for n in range(len(index)):
            yield f"{index.item_ids[n]}\t{index.identity_ids[n]}\t{fmt_floats(index.embeddings[n])}"

    _write(path, rows())


def read_gallery(path) -> ExpertIndex:
    lines = _read_lines(path)
    h = _parse_header(lines[0], "EMB", path)
    dim, expert = _int_field(h, "dim", path), _int_field(h, "expert", path)
    ids, idents, emb = [], [], []
    for ln, line in enumerate(lines[1:], start=2):
        cols = line.split("\t")
        if len(cols) != 3:
            raise FormatError(f"{path}:{ln}: expected 3 tab-separated columns")
        v = parse_floats(cols[2])
        if v.size != dim:
            raise FormatError(f"{path}:{ln}: embedding has {v.size} values, header says dim={dim}")
        ids.append(int(cols[0]))
        idents.append(int(cols[1]))
        emb.append(v)
    if not emb:
        raise DataError(f"{path}: gallery has no items")
    return ExpertIndex(expert, np.array(ids), np.array(idents), np.stack(emb))


def gallery_path(directory, expert: int) -> Path:
    return Path(directory) / f"gallery_{expert}.emb"


def read_galleries(directory) -> List[ExpertIndex]:
    paths = sorted(Path(directory).glob("gallery_*.emb"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise DataError(f"no gallery_*.emb files in {directory}")
    indexes = [read_gallery(p) for p in paths]
    if [i.expert_id for i in indexes] != list(range(len(indexes))):
        raise DataError(f"{directory}: expert ids must be 0..N-1")
    return indexes


# -- queries -----------------------------------------------------------------


def write_queries(path, queries: Sequence[QuerySample], dim: int = None, n_experts: int = None) -> None:
    if queries:
        dim, n_experts = queries[0].dimension, queries[0].n_experts
    if dim is None or n_experts is None:
        raise DataError("empty query list needs explicit dim and n_experts")

    def rows():
        yield _header("QRY", dim=dim, experts=n_experts)
        for q in queries:
            emb = ";".join(fmt_floats(row) for row in q.embeddings)
            yield f"{q.query_id}\t{q.identity_id}\t{q.label}\t{emb}"

    _write(path, rows())


def read_queries(path) -> List[QuerySample]:
    lines = _read_lines(path)
    h = _parse_header(lines[0], "QRY", path)
    dim, n = _int_field(h, "dim", path), _int_field(h, "experts", path)
    out = []
    for ln, line in enumerate(lines[1:], start=2):
        cols = line.split("\t")
        if len(cols) != 4:
            raise FormatError(f"{path}:{ln}: expected 4 tab-separated columns")
        chans = cols[3].split(";")
        if len(chans) != n:
            raise FormatError(f"{path}:{ln}: {len(chans)} embeddings, header says experts={n}")
        emb = np.stack([parse_floats(c) for c in chans]) if chans else None
        if emb.shape[1] != dim:
            raise FormatError(f"{path}:{ln}: embedding dimension {emb.shape[1]} != dim={dim}")
        out.append(QuerySample(int(cols[0]), emb, int(cols[1]), cols[2]))
    return out


# -- features ----------------------------------------------------------------


def write_features(path, n_experts: int, k: int, query_ids, labels, matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    d = feature_dim(n_experts, k)
    if matrix.ndim != 2 or matrix.shape[1] != d:
        raise DataError(f"feature matrix has shape {matrix.shape}, dimension law gives d={d}")

    def rows():
        yield _header("FEAT", n=n_experts, k=k, d=d)
        for qid, lab, row in zip(query_ids, labels, matrix):
            yield f"{int(qid)}\t{int(lab)}\t{fmt_floats(row)}"

    _write(path, rows())


def read_features(path):
    """Returns ``(n_experts, k, query_ids, labels, matrix)``."""
    lines = _read_lines(path)
    h = _parse_header(lines[0], "FEAT", path)
    n, k, d = (_int_field(h, key, path) for key in ("n", "k", "d"))
    if d != feature_dim(n, k):
        raise FormatError(f"{path}: header d={d} violates the dimension law for n={n}, k={k}")
    qids, labels, rows = [], [], []
    for ln, line in enumerate(lines[1:], start=2):
        cols = line.split("\t")
        if len(cols) != 3:
            raise FormatError(f"{path}:{ln}: expected 3 tab-separated columns")
        v = parse_floats(cols[2])
        if v.size != d:
            raise FormatError(f"{path}:{ln}: {v.size} features, header says d={d}")
        qids.append(int(cols[0]))
        labels.append(int(cols[1]))
        rows.append(v)
    matrix = np.stack(rows) if rows else np.empty((0, d))
    return n, k, np.array(qids, dtype=np.int64), np.array(labels, dtype=np.int64), matrix


# -- models ------------------------------------------------------------------


def write_model(path, model: DetectorModel) -> None:
    def rows():
        yield _header("MODEL", input_dim=model.input_dim, layers=len(model.weights))
        meta = {
            "n_experts": model.n_experts,
            "support_size": model.support_size,
            "feature_blocks": list(model.feature_blocks),
            "hyperparams": hyperparams_dict(model.hyperparams),
        }
        yield "meta " + json.dumps(meta, sort_keys=True)
        for i, (w, b) in enumerate(zip(model.weights, model.biases)):
            yield f"layer {i} in={w.shape[0]} out={w.shape[1]}"
            yield "W " + fmt_floats(w)
            yield "b " + fmt_floats(b)

    _write(path, rows())


def read_model(path) -> DetectorModel:
    lines = _read_lines(path)
    h = _parse_header(lines[0], "MODEL", path)
    n_layers = _int_field(h, "layers", path)
    if len(lines) != 2 + 3 * n_layers or not lines[1].startswith("meta "):
        raise FormatError(f"{path}: expected meta line and {n_layers} layer blocks")
    try:
        meta = json.loads(lines[1][5:])
        hp = Hyperparams(**meta["hyperparams"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad meta line ({exc})") from None
    weights, biases = [], []
    for i in range(n_layers):
        head, wline, bline = lines[2 + 3 * i : 5 + 3 * i]
        f = _parse_header("MEAAD-L v1 " + " ".join(head.split()[2:]), "L", path)
        fan_in, fan_out = _int_field(f, "in", path), _int_field(f, "out", path)
        if not (wline.startswith("W ") and bline.startswith("b ")):
            raise FormatError(f"{path}: layer {i} is missing W or b")
        w, b = parse_floats(wline[2:]), parse_floats(bline[2:])
        if w.size != fan_in * fan_out or b.size != fan_out:
            raise FormatError(f"{path}: layer {i} shape mismatch")
        weights.append(w.reshape(fan_in, fan_out))
        biases.append(b)
    model = DetectorModel(
        weights,
        biases,
        hp,
        meta.get("n_experts"),
        meta.get("support_size"),
        tuple(meta.get("feature_blocks", ("qs", "ss", "ce"))),
    )
    if model.input_dim != _int_field(h, "input_dim", path):
        raise FormatError(f"{path}: input_dim header disagrees with layer 0")
    return model


# -- CSV reports -------------------------------------------------------------


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


def read_csv(path) -> Tuple[List[str], List[List[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


RELATION_HEADER = ("query_id", "label", "qs_mean", "ss_mean", "common_count")


def write_relation_stats(path, stats) -> None:
    write_csv(path, RELATION_HEADER, ([s.query_id, s.label, s.qs_mean, s.ss_mean, s.common_count] for s in stats))


def write_loss_curve(path, history) -> None:
    write_csv(path, ("iteration", "loss"), ([i, float(v)] for i, v in enumerate(history)))
