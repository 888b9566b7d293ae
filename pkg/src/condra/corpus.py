"""Corpus storage: feature vectors, categorical metadata, metrics, generators.

A corpus is an immutable n x d matrix of float32 features plus a table of
categorical text attributes (one value per point per attribute).  Points are
identified by their dense row index 0..n-1.  The ``angular`` metric stores
unit-normalized rows so that Euclidean distance on them is a true metric
that preserves cosine nearest-neighbor order.
"""

from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, DataError, DimensionMismatch, FormatError

METRICS = ("euclidean", "angular")
VECTORS_MAGIC = b"CNDR"
VECTORS_VERSION = 1
IMAGE_URL_COLUMN = "image_url"

_IDENT_RE = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*\Z")


def as_float64(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def sq_distances(rows64: np.ndarray, q64: np.ndarray) -> np.ndarray:
    """Squared L2 distance of each row to q, accumulated in float64.

    Every query path (tree leaves, brute force, dedicated trees) funnels
    through this one kernel so equal inputs give bit-equal distances.
    """
    diff = rows64 - q64
    return np.einsum("ij,ij->i", diff, diff)


def distance(metric: str, a: np.ndarray, b: np.ndarray) -> float:
    """Distance between two vectors.  Angular expects unit-norm inputs."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"vectors have shapes {a.shape} and {b.shape}")
    return float(np.sqrt(sq_distances(a[None, :], b)[0]))


def normalize_rows(points: np.ndarray) -> np.ndarray:
    """Unit-normalize rows in place; rows already unit (to 1e-6) are left
    untouched so normalization is idempotent and round trips bit-exactly."""
    norms = np.linalg.norm(as_float64(points), axis=1)
    if np.any(norms == 0.0):
        raise DataError("cannot unit-normalize a zero vector for the angular metric")
    off = np.abs(norms - 1.0) > 1e-6
    if np.any(off):
        points[off] = (as_float64(points[off]) / norms[off, None]).astype(np.float32)
    return points


@dataclass(eq=False)
class Corpus:
    """Immutable-by-convention feature matrix with categorical metadata."""

    points: np.ndarray
    metadata: dict[str, np.ndarray]
    metric: str = "euclidean"
    image_urls: np.ndarray | None = None
    _f64: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DataError("points must be a nonempty 2-d matrix")
        if not np.all(np.isfinite(pts)):
            raise DataError("points contain NaN or Inf coordinates")
        if self.metric not in METRICS:
            raise FormatError(f"unknown metric {self.metric!r}")
        if self.metric == "angular":
            pts = normalize_rows(pts)
        self.points = pts
        n = pts.shape[0]
        meta: dict[str, np.ndarray] = {}
        for name, values in self.metadata.items():
            if not _IDENT_RE.match(name) or name in ("id", IMAGE_URL_COLUMN):
                raise DataError(f"invalid attribute name {name!r}")
            arr = np.asarray(values, dtype=np.str_)
            if arr.shape != (n,):
                raise ConsistencyError(
                    f"attribute {name!r} has {arr.shape[0] if arr.ndim else 0} values, expected {n}"
                )
            if np.any(arr == ""):
                raise DataError(f"attribute {name!r} has missing values")
            meta[name] = arr
        self.metadata = meta
        if self.image_urls is not None:
            urls = np.asarray(self.image_urls, dtype=np.str_)
            if urls.shape != (n,):
                raise ConsistencyError("image_url column length does not match n")
            self.image_urls = urls

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.n)

    @property
    def attributes(self) -> list[str]:
        return list(self.metadata)

    def points64(self) -> np.ndarray:
        if self._f64 is None:
            self._f64 = as_float64(self.points)
        return self._f64

    def query_vector(self, q) -> np.ndarray:
        """Validate and prepare a query vector (unit-normalized if angular)."""
        q = np.asarray(q, dtype=np.float64).ravel()
        if q.shape[0] != self.d:
            raise DimensionMismatch(f"query has dim {q.shape[0]}, corpus has {self.d}")
        if not np.all(np.isfinite(q)):
            raise DataError("query vector contains NaN or Inf")
        if self.metric == "angular":
            norm = float(np.linalg.norm(q))
            if norm == 0.0:
                raise DataError("cannot normalize a zero query vector")
            if abs(norm - 1.0) > 1e-6:
                q = q / norm
        return q

    def fingerprint(self) -> int:
        """Cheap identity token binding trees/indexes to this corpus."""
        h = zlib.crc32(struct.pack("<IIB", self.n, self.d, METRICS.index(self.metric)))
        h = zlib.crc32(self.points.tobytes(), h)
        return h

    def value_counts(self, attribute: str) -> dict[str, int]:
        values, counts = np.unique(self.metadata[attribute], return_counts=True)
        return {str(v): int(c) for v, c in zip(values, counts)}


def subset_corpus(corpus: Corpus, indices: np.ndarray) -> Corpus:
    indices = np.asarray(indices, dtype=np.int64)
    return Corpus(
        points=corpus.points[indices].copy(),
        metadata={k: v[indices].copy() for k, v in corpus.metadata.items()},
        metric=corpus.metric,
        image_urls=None if corpus.image_urls is None else corpus.image_urls[indices].copy(),
    )


def merge_corpora(a: Corpus, b: Corpus) -> Corpus:
    if a.d != b.d:
        raise DimensionMismatch("corpora have different dimensionality")
    if a.metric != b.metric:
        raise ConsistencyError("corpora have different metrics")
    if a.attributes != b.attributes:
        raise ConsistencyError("corpora declare different attributes")
    urls = None
    if a.image_urls is not None or b.image_urls is not None:
        ua = a.image_urls if a.image_urls is not None else np.full(a.n, "", dtype=np.str_)
        ub = b.image_urls if b.image_urls is not None else np.full(b.n, "", dtype=np.str_)
        urls = np.concatenate([ua, ub])
    return Corpus(
        points=np.vstack([a.points, b.points]),
        metadata={k: np.concatenate([a.metadata[k], b.metadata[k]]) for k in a.metadata},
        metric=a.metric,
        image_urls=urls,
    )


def with_attribute(corpus: Corpus, name: str, values) -> Corpus:
    meta = dict(corpus.metadata)
    meta[name] = np.asarray(values, dtype=np.str_)
    return Corpus(corpus.points, meta, corpus.metric, corpus.image_urls)


# ---------------------------------------------------------------------------
# Bundle I/O
#
# A corpus bundle is a directory holding vectors.bin (binary header + float32
# payload), meta.tsv (id column first, then attributes, optional image_url
# last) and corpus.toml (key/value lines declaring the metric).
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIII")


def save_corpus(corpus: Corpus, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "vectors.bin", "wb") as f:
        f.write(_HEADER.pack(VECTORS_MAGIC, VECTORS_VERSION, corpus.n, corpus.d))
        f.write(np.ascontiguousarray(corpus.points, dtype="<f4").tobytes())

    columns = corpus.attributes
    for col in columns:
        cells = corpus.metadata[col]
        if any(("\t" in v) or ("\n" in v) or ("\r" in v) for v in cells.tolist()):
            raise DataError(f"attribute {col!r} contains tab or newline characters")
    header = ["id"] + columns
    if corpus.image_urls is not None:
        header.append(IMAGE_URL_COLUMN)
    lines = ["\t".join(header)]
    for i in range(corpus.n):
        row = [str(i)] + [str(corpus.metadata[c][i]) for c in columns]
        if corpus.image_urls is not None:
            row.append(str(corpus.image_urls[i]))
        lines.append("\t".join(row))
    (path / "meta.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (path / "corpus.toml").write_text(f'metric = "{corpus.metric}"\n', encoding="utf-8")


def _parse_keyvalue_toml(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"corpus.toml line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        value = value.strip()
        if value.startswith('"') and value.endswith('"') and len(value) >= 2:
            value = value[1:-1]
        out[key.strip()] = value
    return out


def load_corpus(path) -> Corpus:
    path = Path(path)
    vec_path = path / "vectors.bin"
    if not vec_path.is_file():
        raise FormatError(f"{vec_path} is missing")
    raw = vec_path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("vectors.bin is too short for its header")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != VECTORS_MAGIC:
        raise FormatError(f"bad magic {magic!r} in vectors.bin")
    if version != VECTORS_VERSION:
        raise FormatError(f"unsupported vectors.bin version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != n * d * 4:
        raise FormatError(
            f"vectors.bin payload holds {len(payload)} bytes, header implies {n * d * 4}"
        )
    points = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()

    meta_path = path / "meta.tsv"
    if not meta_path.is_file():
        raise FormatError(f"{meta_path} is missing")
    lines = meta_path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError("meta.tsv is empty")
    header = lines[0].split("\t")
    if not header or header[0] != "id":
        raise FormatError("meta.tsv must start with an 'id' column")
    rows = [ln.split("\t") for ln in lines[1:] if ln != ""]
    if len(rows) != n:
        raise ConsistencyError(f"meta.tsv has {len(rows)} rows, vectors.bin declares n={n}")
    ncol = len(header)
    table: list[list[str]] = [[] for _ in range(ncol)]
    for i, row in enumerate(rows):
        if len(row) != ncol:
            raise ConsistencyError(f"meta.tsv row {i} has {len(row)} cells, expected {ncol}")
        if row[0] != str(i):
            raise ConsistencyError(f"meta.tsv row {i} has id {row[0]!r}, expected {i}")
        for j, cell in enumerate(row):
            table[j].append(cell)

    metadata: dict[str, np.ndarray] = {}
    image_urls = None
    for j, name in enumerate(header[1:], start=1):
        if name == IMAGE_URL_COLUMN:
            image_urls = np.asarray(table[j], dtype=np.str_)
        else:
            metadata[name] = np.asarray(table[j], dtype=np.str_)

    toml_path = path / "corpus.toml"
    if not toml_path.is_file():
        raise FormatError(f"{toml_path} is missing")
    config = _parse_keyvalue_toml(toml_path.read_text(encoding="utf-8"))
    metric = config.get("metric")
    if metric not in METRICS:
        raise FormatError(f"corpus.toml declares unknown metric {metric!r}")
    return Corpus(points=points, metadata=metadata, metric=metric, image_urls=image_urls)


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlobComponent:
    """One mixture component: count points around mean, optionally shaped by
    a covariance matrix or an explicit linear transform of standard normals."""

    mean: tuple
    count: int
    label: str
    cov: tuple | None = None
    transform: tuple | None = None


def generate_blobs(
    components: list[BlobComponent],
    seed: int,
    metric: str = "euclidean",
    attribute: str = "source",
) -> Corpus:
    if not components:
        raise DataError("mixture spec lists no components")
    rng = np.random.default_rng(seed)
    chunks = []
    labels = []
    d = len(np.asarray(components[0].mean).ravel())
    for comp in components:
        mean = np.asarray(comp.mean, dtype=np.float64).ravel()
        if mean.shape[0] != d:
            raise DimensionMismatch("mixture components disagree on dimensionality")
        if comp.count <= 0:
            raise DataError(f"component {comp.label!r} has nonpositive count")
        z = rng.standard_normal((comp.count, d))
        if comp.transform is not None:
            z = z @ np.asarray(comp.transform, dtype=np.float64).T
        elif comp.cov is not None:
            z = z @ np.linalg.cholesky(np.asarray(comp.cov, dtype=np.float64)).T
        chunks.append(mean + z)
        labels.extend([comp.label] * comp.count)
    points = np.vstack(chunks).astype(np.float32)
    return Corpus(points, {attribute: np.asarray(labels, dtype=np.str_)}, metric=metric)


def generate_content_style(
    n_content: int,
    n_style: int,
    d: int,
    style_strength: float = 0.2,
    noise: float = 0.05,
    seed: int = 0,
    metric: str = "euclidean",
) -> Corpus:
    """One point per (content, style) pair: a content prototype plus a scaled
    per-style offset plus isotropic noise.  Small style_strength and noise
    relative to prototype separation make contents recoverable across styles.
    """
    if n_content < 2 or n_style < 2:
        raise DataError("need at least 2 contents and 2 styles")
    if d < 2:
        raise DataError("need dimension >= 2")
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((n_content, d))
    offsets = rng.standard_normal((n_style, d))
    grid = prototypes[:, None, :] + style_strength * offsets[None, :, :]
    pts = grid.reshape(n_content * n_style, d)
    if noise:
        pts = pts + noise * rng.standard_normal(pts.shape)
    content = np.repeat([f"c{i:04d}" for i in range(n_content)], n_style)
    style = np.tile([f"s{j:04d}" for j in range(n_style)], n_content)
    return Corpus(
        pts.astype(np.float32),
        {"content": content, "style": style},
        metric=metric,
    )
