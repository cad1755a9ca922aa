"""Readers for tabular CSV, bag-of-words JSONL, binary PGM and raw vector JSON."""
from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Domain, ExplainInstance
from .errors import IngestionError, ParseError

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"


@dataclass
class Dataset:
    """Vectors plus whatever is needed to render explanations back to the user."""

    vectors: list[np.ndarray]
    domain_kind: str
    feature_names: list[str] = field(default_factory=list)
    labels: list[int | None] = field(default_factory=list)
    image_shape: tuple[int, int] | None = None

    def __len__(self):
        return len(self.vectors)

    def instances(self, classifier=None) -> list[ExplainInstance]:
        """Instances whose t0 is the classifier's prediction, or the stored label without one."""
        out = []
        for k, v in enumerate(self.vectors):
            if classifier is not None:
                t0 = int(np.argmax(classifier.predict(v)))
            else:
                label = self.labels[k] if k < len(self.labels) else None
                t0 = 0 if label is None else int(label)
            out.append(ExplainInstance(v, t0, Domain(self.domain_kind, v.shape[0])))
        return out


def load_tabular_csv(path) -> Dataset:
    """Rows of non-negative features; an optional ``label`` column is kept aside."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        logger.warning("%s is empty", path)
        return Dataset([], "non_negative")
    header = [h.strip() for h in rows[0]]
    label_idx = header.index(LABEL_COLUMN) if LABEL_COLUMN in header else None
    names = [h for i, h in enumerate(header) if i != label_idx]
    vectors, labels = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        values = []
        for c, cell in enumerate(row):
            try:
                x = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {r}, column {header[c]!r}: not a number: {cell!r}") from None
            if c == label_idx:
                labels.append(int(x))
                continue
            if not np.isfinite(x) or x < 0:
                raise IngestionError(f"{path}: row {r}, column {header[c]!r}: value {cell} is not non-negative")
            values.append(x)
        vectors.append(np.array(values))
        if label_idx is None:
            labels.append(None)
    return Dataset(vectors, "non_negative", names, labels)


def load_text_jsonl(path, vocabulary: Sequence[str] | None = None) -> Dataset:
    """Bag-of-words documents, one ``{"tokens": {word: weight}}`` object per line.

    Without a `vocabulary` the union of all words is used, in order of first
    appearance. With one, unknown words are dropped.
    """
    docs, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tokens = obj["tokens"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{n}: expected an object with a 'tokens' mapping") from exc
            for word, w in tokens.items():
                if not isinstance(w, (int, float)) or not 0.0 <= w <= 1.0:
                    raise IngestionError(f"{path}:{n}: weight {w!r} for {word!r} is outside [0, 1]")
            docs.append(tokens)
            labels.append(obj.get("label"))
    if vocabulary is None:
        vocab: list[str] = []
        seen = set()
        for tokens in docs:
            for word in tokens:
                if word not in seen:
                    seen.add(word)
                    vocab.append(word)
    else:
        vocab = list(vocabulary)
    index = {w: i for i, w in enumerate(vocab)}
    vectors = []
    for n, tokens in enumerate(docs):
        v = np.zeros(len(vocab))
        for word, w in tokens.items():
            if word in index:
                v[index[word]] = float(w)
            else:
                logger.debug("document %d: dropping out-of-vocabulary word %r", n, word)
        vectors.append(v)
    return Dataset(vectors, "unit_box", vocab, labels)


def _pgm_tokens(data: bytes, count: int):
    """Split the first `count` header fields, skipping comments; returns them and the data offset."""
    fields, pos = [], 0
    while len(fields) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header")
        fields.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return fields, pos + 1


def read_pgm(path) -> tuple[np.ndarray, int, int]:
    """Pixels scaled to [0, 1], row-major, plus (height, width)."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ParseError(f"{path}: expected binary PGM (magic 'P5'), found {data[:2]!r}")
    try:
        fields, offset = _pgm_tokens(data, 4)
        width, height, maxval = (int(f) for f in fields[1:])
    except (ParseError, ValueError) as exc:
        raise ParseError(f"{path}: malformed PGM header") from exc
    if width < 1 or height < 1:
        raise ParseError(f"{path}: image dimensions must be positive")
    if not 0 < maxval <= 65535:
        raise ParseError(f"{path}: maxval {maxval} outside 1..65535")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    raster = data[offset:offset + need]
    if len(raster) != need:
        raise ParseError(f"{path}: expected {need} bytes of pixel data, found {len(raster)}")
    pixels = np.frombuffer(raster, dtype=dtype).astype(np.float64) / maxval
    return np.clip(pixels, 0.0, 1.0), height, width


def load_pgm(path) -> Dataset:
    pixels, h, w = read_pgm(path)
    return Dataset([pixels], "unit_box", [], [None], (h, w))


def load_pgms(paths: Sequence) -> Dataset:
    vectors, shape = [], None
    for p in paths:
        pixels, h, w = read_pgm(p)
        if shape is not None and shape != (h, w):
            raise IngestionError(f"{p}: size {h}x{w} differs from {shape[0]}x{shape[1]}")
        shape = (h, w)
        vectors.append(pixels)
    return Dataset(vectors, "unit_box", [], [None] * len(vectors), shape)


def write_pgm(path, pixels, height: int, width: int, maxval: int = 255) -> None:
    pixels = np.clip(np.asarray(pixels, dtype=np.float64).reshape(height, width), 0.0, 1.0)
    raster = np.rint(pixels * maxval).astype(">u2" if maxval > 255 else "u1")
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    atomic_write_bytes(path, header + raster.tobytes())


def load_vector_json(path) -> Dataset:
    """``{"x0": [...], "domain": "unit_box"|"non_negative", "t0": k}`` or a list of such objects."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    items = data if isinstance(data, list) else [data]
    kinds = {it.get("domain", "unit_box") for it in items}
    if len(kinds) > 1:
        raise IngestionError(f"{path}: mixed domains {sorted(kinds)}")
    vectors = [np.asarray(it["x0"], dtype=np.float64) for it in items]
    return Dataset(vectors, kinds.pop() if kinds else "unit_box", [], [it.get("t0") for it in items])


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
