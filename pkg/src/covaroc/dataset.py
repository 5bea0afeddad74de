"""Pairwise comparison datasets: construction, CSV ingestion, normalization, filtering.

A :class:`PairDataset` is stored column-wise (one numpy array per field) so that
the N^2 comparisons of even a few thousand items stay cheap.  Individual
:class:`PairRecord` views are produced on demand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    ConfigurationError,
    DegenerateDimensionError,
    EmptyDatasetError,
    MalformedInputError,
    PreconditionError,
    RowError,
    SchemaError,
)

DISTANCES = {
    "euclidean": "euclidean",
    "squared-euclidean": "sqeuclidean",
    "cosine-distance": "cosine",
}

_TRUE = {"1", "true"}
_FALSE = {"0", "false"}


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ItemTable:
    item_ids: np.ndarray
    identities: np.ndarray
    embeddings: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = ()

    def __init__(self, item_ids, identities, embeddings, covariates=None, covariate_names=()):
        item_ids = [str(i) for i in item_ids]
        if len(set(item_ids)) != len(item_ids):
            raise MalformedInputError("item_id values must be unique")
        lengths = {len(e) for e in embeddings}
        if len(lengths) > 1:
            raise MalformedInputError(f"embeddings have differing lengths {sorted(lengths)}")
        n = len(item_ids)
        if len(identities) != n or len(embeddings) != n:
            raise MalformedInputError("item_ids, identities and embeddings differ in length")
        emb = np.asarray(embeddings, dtype=float)
        emb = emb.reshape(n, -1) if n else emb.reshape(0, emb.shape[-1] if emb.ndim == 2 else 0)
        if n and emb.shape[1] < 1:
            raise MalformedInputError("embeddings must have length >= 1")
        names = tuple(covariate_names)
        if covariates is None:
            cov = np.zeros((n, len(names)))
        else:
            cov_lengths = {len(c) for c in covariates}
            if len(cov_lengths) > 1:
                raise MalformedInputError("covariate vectors have differing lengths")
            cov = np.asarray(covariates, dtype=float).reshape(n, -1 if n else len(names))
        if cov.shape[1] != len(names):
            if names:
                raise MalformedInputError(
                    f"{cov.shape[1]} covariate columns but {len(names)} names")
            names = tuple(f"c{k}" for k in range(cov.shape[1]))
        object.__setattr__(self, "item_ids", _frozen(item_ids, dtype=object))
        object.__setattr__(self, "identities", _frozen([str(i) for i in identities], dtype=object))
        object.__setattr__(self, "embeddings", _frozen(emb))
        object.__setattr__(self, "covariates", _frozen(cov))
        object.__setattr__(self, "covariate_names", names)

    def __len__(self):
        return len(self.item_ids)


@dataclass(frozen=True)
class PairRecord:
    query_id: str
    gallery_id: str
    score: float
    covariates: tuple
    match: bool
    diagonal: bool


@dataclass(frozen=True)
class Affine:
    """Per-dimension z-score transform ``z = (x - mean) / std``."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean, dtype=float))
        object.__setattr__(self, "std", _frozen(self.std, dtype=float))
        if np.any(~(self.std > 0)):
            raise PreconditionError("affine transform requires std > 0")

    @classmethod
    def fit(cls, values, names=None):
        values = np.asarray(values, dtype=float)
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        for k, s in enumerate(np.atleast_1d(std)):
            if not s > 0:
                label = names[k] if names is not None else k
                raise DegenerateDimensionError(label)
        return cls(mean, std)

    def forward(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def subset(self, idx):
        return Affine(np.atleast_1d(self.mean)[idx], np.atleast_1d(self.std)[idx])

    def to_dict(self):
        return {"mean": np.atleast_1d(self.mean).tolist(), "std": np.atleast_1d(self.std).tolist()}

    @classmethod
    def from_dict(cls, d, scalar=False):
        mean, std = np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float)
        if scalar:
            mean, std = mean.reshape(()), std.reshape(())
        return cls(mean, std)


@dataclass(frozen=True)
class Normalization:
    match_score: Affine
    nonmatch_score: Affine
    covariates: Affine

    def score_transform(self, match: bool) -> Affine:
        return self.match_score if match else self.nonmatch_score


@dataclass(frozen=True)
class PairDataset:
    query_ids: np.ndarray
    gallery_ids: np.ndarray
    scores: np.ndarray
    covariates: np.ndarray
    match: np.ndarray
    diagonal: np.ndarray
    covariate_names: tuple = ()
    normalization: Normalization | None = None

    def __post_init__(self):
        n = len(self.scores)
        object.__setattr__(self, "query_ids", _frozen(self.query_ids, dtype=object))
        object.__setattr__(self, "gallery_ids", _frozen(self.gallery_ids, dtype=object))
        object.__setattr__(self, "scores", _frozen(self.scores, dtype=float))
        object.__setattr__(
            self, "covariates",
            _frozen(np.asarray(self.covariates, dtype=float).reshape(n, len(self.covariate_names))))
        object.__setattr__(self, "match", _frozen(self.match, dtype=bool))
        object.__setattr__(self, "diagonal", _frozen(self.diagonal, dtype=bool))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        for name in ("query_ids", "gallery_ids", "match", "diagonal"):
            if len(getattr(self, name)) != n:
                raise MalformedInputError(f"column {name} has wrong length")
        if not np.all(np.isfinite(self.scores)):
            raise MalformedInputError("scores must be finite")

    def __len__(self):
        return len(self.scores)

    def record(self, i) -> PairRecord:
        return PairRecord(
            str(self.query_ids[i]), str(self.gallery_ids[i]), float(self.scores[i]),
            tuple(float(v) for v in self.covariates[i]), bool(self.match[i]),
            bool(self.diagonal[i]))

    @property
    def records(self) -> Iterator[PairRecord]:
        return (self.record(i) for i in range(len(self)))

    def column(self, name) -> np.ndarray:
        return self.covariates[:, self.covariate_index(name)]

    def covariate_index(self, name) -> int:
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise ConfigurationError(f"unknown covariate {name!r}") from None

    def take(self, mask_or_index) -> "PairDataset":
        idx = np.asarray(mask_or_index)
        return replace(
            self,
            query_ids=self.query_ids[idx], gallery_ids=self.gallery_ids[idx],
            scores=self.scores[idx], covariates=self.covariates[idx],
            match=self.match[idx], diagonal=self.diagonal[idx])

    def normalized_scores(self) -> np.ndarray:
        norm = self._require_normalization()
        z = np.empty_like(self.scores)
        z[self.match] = norm.match_score.forward(self.scores[self.match])
        z[~self.match] = norm.nonmatch_score.forward(self.scores[~self.match])
        return z

    def normalized_covariates(self, names: Sequence[str] | None = None) -> np.ndarray:
        norm = self._require_normalization()
        z = norm.covariates.forward(self.covariates) if self.covariate_names else self.covariates
        if names is None:
            return z
        return z[:, [self.covariate_index(n) for n in names]]

    def _require_normalization(self) -> Normalization:
        if self.normalization is None:
            raise PreconditionError("dataset has not been normalized")
        return self.normalization


@dataclass(frozen=True)
class Interaction:
    """Derived pair-level covariate: ``product`` or ``absdiff`` of two named columns."""

    kind: str
    left: str
    right: str

    @property
    def name(self):
        if self.kind == "product":
            return f"{self.left}*{self.right}"
        return f"|{self.left}-{self.right}|"

    def apply(self, a, b):
        if self.kind == "product":
            return a * b
        if self.kind == "absdiff":
            return np.abs(a - b)
        raise ConfigurationError(f"unsupported interaction kind {self.kind!r}")


def build_pairs(items: ItemTable, distance: str = "euclidean", keep_diagonal: bool = True,
                interactions: Sequence[Interaction] = (), drop_symmetric: bool = False) -> PairDataset:
    """All query/gallery comparisons of ``items`` against itself, row-major."""
    if len(items) == 0:
        raise EmptyDatasetError("item table is empty")
    if distance not in DISTANCES:
        raise ConfigurationError(
            f"unknown distance {distance!r}; expected one of {sorted(DISTANCES)}")
    n = len(items)
    if distance == "cosine-distance" and np.any(np.linalg.norm(items.embeddings, axis=1) == 0):
        raise MalformedInputError("cosine distance is undefined for all-zero embeddings")
    d = cdist(items.embeddings, items.embeddings, metric=DISTANCES[distance])
    qi, gi = np.divmod(np.arange(n * n), n)
    keep = np.ones(n * n, dtype=bool)
    if not keep_diagonal:
        keep &= qi != gi
    if drop_symmetric:
        keep &= qi <= gi
    qi, gi = qi[keep], gi[keep]

    names = [f"q_{c}" for c in items.covariate_names] + [f"g_{c}" for c in items.covariate_names]
    cov = np.hstack([items.covariates[qi], items.covariates[gi]])
    for inter in interactions:
        if inter.left not in names or inter.right not in names:
            raise ConfigurationError(f"interaction {inter.name!r} references unknown covariate")
        a, b = cov[:, names.index(inter.left)], cov[:, names.index(inter.right)]
        cov = np.column_stack([cov, inter.apply(a, b)])
        names.append(inter.name)

    return PairDataset(
        query_ids=items.item_ids[qi], gallery_ids=items.item_ids[gi], scores=d[qi, gi],
        covariates=cov.reshape(len(qi), len(names)),
        match=items.identities[qi] == items.identities[gi], diagonal=qi == gi,
        covariate_names=tuple(names))


@dataclass(frozen=True)
class PairSchema:
    """Column mapping for pair CSV files.  ``covariates=None`` takes every other column."""

    score: str = "score"
    match: str = "match"
    query_id: str | None = "query_id"
    gallery_id: str | None = "gallery_id"
    covariates: tuple | None = None


def _parse_bool(cell, line, column):
    v = cell.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise RowError(line, f"column {column!r}: {cell!r} is not one of 0, 1, true, false")


def _parse_float(cell, line, column):
    try:
        return float(cell)
    except ValueError:
        raise RowError(line, f"column {column!r}: cannot parse {cell!r} as a number") from None


def ingest_pairs_csv(path, schema: PairSchema | None = None) -> PairDataset:
    schema = schema or PairSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDatasetError(f"{path}: file is empty") from None
        for col in (schema.score, schema.match):
            if col not in header:
                raise SchemaError(col)
        qcol = schema.query_id if schema.query_id in header else None
        gcol = schema.gallery_id if schema.gallery_id in header else None
        if schema.covariates is None:
            reserved = {schema.score, schema.match, qcol, gcol}
            cov_names = [h for h in header if h not in reserved]
        else:
            cov_names = list(schema.covariates)
            for col in cov_names:
                if col not in header:
                    raise SchemaError(col)
        pos = {h: k for k, h in enumerate(header)}
        qids, gids, scores, matches, covs = [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise RowError(line, f"expected {len(header)} cells, found {len(row)}")
            score = _parse_float(row[pos[schema.score]], line, schema.score)
            if not math.isfinite(score):
                raise RowError(line, f"non-finite score {row[pos[schema.score]]!r}")
            scores.append(score)
            matches.append(_parse_bool(row[pos[schema.match]], line, schema.match))
            covs.append([_parse_float(row[pos[c]], line, c) for c in cov_names])
            n = len(scores) - 1
            qids.append(row[pos[qcol]] if qcol else f"q{n}")
            gids.append(row[pos[gcol]] if gcol else f"g{n}")
    if not scores:
        raise EmptyDatasetError(f"{path}: no data rows")
    diagonal = [q == g for q, g in zip(qids, gids)] if (qcol and gcol) else [False] * len(scores)
    return PairDataset(qids, gids, scores, np.asarray(covs, dtype=float).reshape(len(scores), -1),
                       matches, diagonal, tuple(cov_names))


def write_pairs_csv(ds: PairDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "gallery_id", "score", "match", *ds.covariate_names])
        for i in range(len(ds)):
            w.writerow([ds.query_ids[i], ds.gallery_ids[i], repr(float(ds.scores[i])),
                        int(ds.match[i]), *(repr(float(v)) for v in ds.covariates[i])])


def read_items_csv(path) -> ItemTable:
    """Read ``item_id,identity,e0..e{D-1}[,covariates...]``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDatasetError(f"{path}: file is empty") from None
        for col in ("item_id", "identity"):
            if col not in header:
                raise SchemaError(col)
        emb_cols = [h for h in header if h[:1] == "e" and h[1:].isdigit()]
        emb_cols.sort(key=lambda h: int(h[1:]))
        if not emb_cols:
            raise SchemaError("e0")
        cov_cols = [h for h in header if h not in ("item_id", "identity") and h not in emb_cols]
        pos = {h: k for k, h in enumerate(header)}
        ids, idents, emb, covs = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RowError(line, f"expected {len(header)} cells, found {len(row)}")
            ids.append(row[pos["item_id"]])
            idents.append(row[pos["identity"]])
            emb.append([_parse_float(row[pos[c]], line, c) for c in emb_cols])
            covs.append([_parse_float(row[pos[c]], line, c) for c in cov_cols])
    if not ids:
        raise EmptyDatasetError(f"{path}: no data rows")
    return ItemTable(ids, idents, emb, covs, cov_cols)


def normalize(ds: PairDataset) -> PairDataset:
    """Fit z-score transforms for match scores, non-match scores and covariates.

    Raw values are kept; the transforms are attached and applied on demand by
    :meth:`PairDataset.normalized_scores` / :meth:`PairDataset.normalized_covariates`.
    """
    if not ds.match.any() or ds.match.all():
        raise PreconditionError("normalize needs nonempty match and non-match streams")
    m_scores = ds.scores[ds.match]
    nm_scores = ds.scores[~ds.match]
    if not m_scores.std() > 0:
        raise DegenerateDimensionError("match score")
    if not nm_scores.std() > 0:
        raise DegenerateDimensionError("non-match score")
    match_t = Affine.fit(m_scores)
    nonmatch_t = Affine.fit(nm_scores)
    if ds.covariate_names:
        cov_t = Affine.fit(ds.covariates, names=ds.covariate_names)
    else:
        cov_t = Affine(np.zeros(0), np.ones(0))
    return replace(ds, normalization=Normalization(match_t, nonmatch_t, cov_t))


@dataclass(frozen=True)
class Predicate:
    """Row filter.  ``None`` fields are ignored; ``ranges`` maps covariate -> (lo, hi), inclusive."""

    match: bool | None = None
    diagonal: bool | None = None
    ranges: Mapping[str, tuple] = field(default_factory=dict)


def filter_pairs(ds: PairDataset, predicate: Predicate) -> PairDataset:
    keep = np.ones(len(ds), dtype=bool)
    if predicate.match is not None:
        keep &= ds.match == predicate.match
    if predicate.diagonal is not None:
        keep &= ds.diagonal == predicate.diagonal
    for name, (lo, hi) in predicate.ranges.items():
        col = ds.column(name)
        keep &= (col >= lo) & (col <= hi)
    return ds.take(np.flatnonzero(keep))


filter = filter_pairs  # noqa: A001
