"""Feature tables: synthetic generation, file formats and splitting.

Binary AEFT layout (little-endian): ``b"AEFT"``, u32 version (1), u32 N,
u32 D, then per row i64 identity, i32 camera and D float32 features.

CSV layout: header ``id,camera,f0,...,f{D-1}``, one row per image.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_numeric import Rng, l2_normalize
from .errors import (
    ConfigInvalid,
    DataEmpty,
    InsufficientCoverage,
    MagicMismatch,
    ParseError,
    TruncatedFile,
    VersionUnsupported,
)

TABLE_MAGIC = b"AEFT"
TABLE_VERSION = 1
ROW_DTYPE_HEAD = np.dtype([("id", "<i8"), ("camera", "<i4")])


@dataclass
class FeatureTable:
    ids: np.ndarray
    cameras: np.ndarray
    features: np.ndarray  # (N, D) float32

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.cameras = np.asarray(self.cameras, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ConfigInvalid("features must be 2-D")
        n = self.features.shape[0]
        if n < 1:
            raise DataEmpty("feature table has no rows")
        if self.ids.shape != (n,) or self.cameras.shape != (n,):
            raise ConfigInvalid("ids/cameras must have one entry per row")
        if np.any(self.ids < -1) or np.any(self.cameras < 0):
            raise ConfigInvalid("identity must be >= -1 and camera >= 0")
        if not np.all(np.isfinite(self.features)):
            raise ConfigInvalid("features must be finite")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "FeatureTable":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureTable(self.ids[rows], self.cameras[rows], self.features[rows])

    def unlabeled(self) -> "FeatureTable":
        return FeatureTable(np.full(len(self), -1), self.cameras, self.features)

    def equals(self, other: "FeatureTable") -> bool:
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.cameras, other.cameras)
            and self.features.tobytes() == other.features.tobytes()
            and self.features.shape == other.features.shape
        )


@dataclass(frozen=True)
class SynthConfig:
    identities: int = 40
    images_per_identity: int = 18
    cameras: int = 6
    dim: int = 64
    sigma_within: float = 0.25
    sigma_cam: float = 0.15
    seed: int = 0

    def validate(self):
        if self.identities < 2:
            raise ConfigInvalid("need at least 2 identities")
        if self.images_per_identity < 2:
            raise ConfigInvalid("need at least 2 images per identity")
        if self.dim < 2:
            raise ConfigInvalid("need dim >= 2")
        if self.cameras < 1:
            raise ConfigInvalid("need at least one camera")
        if self.sigma_within < 0 or self.sigma_cam < 0:
            raise ConfigInvalid("noise scales must be non-negative")


def generate(cfg: SynthConfig) -> FeatureTable:
    """Gaussian identity clusters on the unit sphere.

    Each identity gets a uniform random unit direction and each
    (identity, camera) pair a fixed offset with per-coordinate scale
    ``sigma_cam``; images add isotropic noise of per-coordinate scale
    ``sigma_within`` and are l2-normalized. Images cycle through cameras.
    """
    cfg.validate()
    rng = Rng(cfg.seed)
    C, n, D = cfg.identities, cfg.images_per_identity, cfg.dim
    means = l2_normalize(rng.normal(1.0, size=(C, D)))
    offsets = rng.normal(cfg.sigma_cam, size=(C, cfg.cameras, D))
    ids = np.repeat(np.arange(C), n)
    cams = np.tile(np.arange(n) % cfg.cameras, C)
    noise = rng.normal(cfg.sigma_within, size=(C * n, D))
    x = means[ids] + offsets[ids, cams] + noise
    return FeatureTable(ids, cams, l2_normalize(x).astype(np.float32))


# -- binary format ----------------------------------------------------------

def _row_dtype(dim: int) -> np.dtype:
    return np.dtype([("id", "<i8"), ("camera", "<i4"), ("f", "<f4", (dim,))])


def table_to_bytes(table: FeatureTable) -> bytes:
    rows = np.empty(len(table), dtype=_row_dtype(table.dim))
    rows["id"] = table.ids
    rows["camera"] = table.cameras
    rows["f"] = table.features
    header = TABLE_MAGIC + struct.pack("<III", TABLE_VERSION, len(table), table.dim)
    return header + rows.tobytes()


def table_from_bytes(data: bytes) -> FeatureTable:
    if len(data) < 4:
        raise TruncatedFile("file shorter than magic")
    if data[:4] != TABLE_MAGIC:
        raise MagicMismatch(f"expected magic {TABLE_MAGIC!r}, got {data[:4]!r}")
    if len(data) < 16:
        raise TruncatedFile("file shorter than header")
    version, n, dim = struct.unpack_from("<III", data, 4)
    if version != TABLE_VERSION:
        raise VersionUnsupported(f"AEFT version {version} not supported")
    dt = _row_dtype(dim)
    if len(data) < 16 + n * dt.itemsize:
        raise TruncatedFile(f"expected {n} rows of {dt.itemsize} bytes")
    rows = np.frombuffer(data, dtype=dt, count=n, offset=16)
    return FeatureTable(rows["id"].copy(), rows["camera"].copy(), rows["f"].copy())


def write_table(table: FeatureTable, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        write_csv(table, path)
    else:
        path.write_bytes(table_to_bytes(table))


def read_table(path) -> FeatureTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if path.suffix.lower() == ".csv":
        return read_csv(path)
    return table_from_bytes(path.read_bytes())


def write_csv(table: FeatureTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "camera"] + [f"f{k}" for k in range(table.dim)])
        for i in range(len(table)):
            # repr of the float32 value round-trips exactly
            w.writerow([int(table.ids[i]), int(table.cameras[i])] + [repr(float(v)) for v in table.features[i]])


def read_csv(path) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty CSV") from None
        if len(header) < 3 or header[0] != "id" or header[1] != "camera":
            raise ParseError(f"{path}: header must start with id,camera,f0")
        dim = len(header) - 2
        ids, cams, feats = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise ParseError(f"{path}: row {lineno} has {len(row) - 2} features, expected {dim}")
            try:
                ids.append(int(row[0]))
                cams.append(int(row[1]))
                feats.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise ParseError(f"{path}: row {lineno}: {exc}") from None
    if not ids:
        raise DataEmpty(f"{path}: no data rows")
    return FeatureTable(ids, cams, np.array(feats, dtype=np.float32))


# -- splitting ---------------------------------------------------------------

def split(table: FeatureTable, query_fraction: float = 0.2, seed: int = 0,
          holdout_identities: float = 0.0):
    """Return ``(train, query, gallery)``.

    ``holdout_identities`` of the identities (a fraction) are kept out of
    ``train`` and only they feed query/gallery; with 0 the whole table is the
    (unlabeled) training set and query/gallery partition all of it.

    Per eligible identity (>= 2 images over >= 2 cameras) the query takes
    ``max(1, floor(query_fraction * n_images))`` images, capped so every
    query keeps a gallery match in another camera.
    """
    if not 0.0 <= query_fraction <= 1.0 or not 0.0 <= holdout_identities < 1.0:
        raise ConfigInvalid("fractions must lie in [0, 1)")
    rng = Rng(seed)
    uniq = np.unique(table.ids[table.ids >= 0])
    held = uniq
    train_rows = np.arange(len(table))
    if holdout_identities > 0:
        n_held = max(1, int(round(holdout_identities * uniq.size)))
        held = np.sort(rng.permutation(uniq)[:n_held])
        train_rows = np.flatnonzero(~np.isin(table.ids, held))
        if train_rows.size == 0:
            raise InsufficientCoverage("holdout leaves no training rows")
    eval_rows = np.flatnonzero(np.isin(table.ids, held))
    query = []
    if query_fraction > 0:
        for ident in held:
            rows = eval_rows[table.ids[eval_rows] == ident]
            cams = table.cameras[rows]
            if rows.size < 2 or np.unique(cams).size < 2:
                continue
            want = max(1, int(np.floor(query_fraction * rows.size)))
            chosen = []
            for r in rows[rng.permutation(rows.size)]:
                if len(chosen) == want:
                    break
                rest = np.setdiff1d(rows, chosen + [r])
                # every chosen query needs a remaining gallery image in another camera
                if all(np.any(table.cameras[rest] != table.cameras[q]) for q in chosen + [r]):
                    chosen.append(int(r))
            query.extend(chosen)
        if not query:
            raise InsufficientCoverage("no identity has images in two cameras")
    query = np.sort(np.asarray(query, dtype=np.int64))
    gallery = np.setdiff1d(eval_rows, query)
    train = table.subset(train_rows).unlabeled()
    q = table.subset(query) if query.size else None
    return train, q, table.subset(gallery)
