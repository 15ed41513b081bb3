"""FAU data model, dataset manifests and OpenFace-style CSV ingestion."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import EmptyInputError, FormatError, IntegrityError, VersionError

MANIFEST_VERSION = 1

# OpenFace 2.x intensity outputs
FAU_COLUMNS = (
    "AU01_r", "AU02_r", "AU04_r", "AU05_r", "AU06_r", "AU07_r", "AU09_r", "AU10_r",
    "AU12_r", "AU14_r", "AU15_r", "AU17_r", "AU20_r", "AU23_r", "AU25_r", "AU26_r",
    "AU45_r",
)
# presence outputs; OpenFace has AU28_c but no AU28_r
FAU_PRESENCE_COLUMNS = tuple(c.replace("_r", "_c") for c in FAU_COLUMNS) + ("AU28_c",)

GENUINE = "genuine"
FORGED = "forged"
RECONSTRUCTED = "reconstructed"
SURROGATE = "surrogate"
BASE_TAGS = (GENUINE, FORGED, RECONSTRUCTED)


@dataclass(frozen=True)
class Provenance:
    tag: str
    surrogate_kind: str | None = None
    surrogate_level: int | None = None
    base: str | None = None

    def __post_init__(self):
        if self.tag in BASE_TAGS:
            if self.surrogate_kind is not None or self.surrogate_level is not None or self.base is not None:
                raise IntegrityError(f"{self.tag} provenance carries surrogate fields")
        elif self.tag == SURROGATE:
            if self.base not in BASE_TAGS:
                raise IntegrityError(f"surrogate provenance needs a base tag, got {self.base!r}")
            if self.surrogate_kind is None or self.surrogate_level is None:
                raise IntegrityError("surrogate provenance needs kind and level")
        else:
            raise IntegrityError(f"unknown provenance tag {self.tag!r}")

    @property
    def base_tag(self) -> str:
        return self.base if self.tag == SURROGATE else self.tag

    def to_json(self) -> dict:
        out = {"tag": self.tag}
        if self.tag == SURROGATE:
            out.update(surrogate_kind=self.surrogate_kind, surrogate_level=self.surrogate_level, base=self.base)
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "Provenance":
        return cls(obj["tag"], obj.get("surrogate_kind"), obj.get("surrogate_level"), obj.get("base"))


PROV_GENUINE = Provenance(GENUINE)
PROV_FORGED = Provenance(FORGED)
PROV_RECONSTRUCTED = Provenance(RECONSTRUCTED)


def surrogate_provenance(base: Provenance, kind: str, level: int) -> Provenance:
    return Provenance(SURROGATE, kind, int(level), base.base_tag)


def check_labels(subject: str, appearance: str, puppeteer: str, provenance: Provenance, artifact) -> None:
    """Reject label combinations that cannot come out of the generation process."""
    tag = provenance.base_tag
    if tag == GENUINE:
        if not (appearance == puppeteer == subject):
            raise IntegrityError(
                f"genuine record needs subject == appearance == puppeteer, got {subject}/{appearance}/{puppeteer}"
            )
        if artifact is not None:
            raise IntegrityError("genuine record cannot carry a deepfake artifact")
    elif tag == FORGED:
        if appearance == puppeteer:
            raise IntegrityError("forged record needs appearance != puppeteer")
        if artifact is None:
            raise IntegrityError("forged record must name its artifact")
    elif tag == RECONSTRUCTED:
        if appearance != puppeteer:
            raise IntegrityError("reconstructed record needs appearance == puppeteer")
        if artifact is None:
            raise IntegrityError("reconstructed record must carry an artifact")


@dataclass(eq=False)
class VideoRecord:
    """One FAU time series, ``frames`` of shape ``(T, D)``.

    ``subject`` is the person the source footage was recorded from, ``puppeteer``
    the identity whose actions drive the video and ``appearance`` the face shown.
    ``artifact`` names the deepfake algorithm that touched the frames, if any.
    """

    video_id: str
    subject: str
    appearance: str
    puppeteer: str
    provenance: Provenance
    frames: np.ndarray
    artifact: str | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] == 0:
            raise IntegrityError(f"{self.video_id}: frames must be a nonempty (T, D) array")
        if not np.all(np.isfinite(self.frames)):
            raise IntegrityError(f"{self.video_id}: non-finite FAU value")
        check_labels(self.subject, self.appearance, self.puppeteer, self.provenance, self.artifact)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def fau_dim(self) -> int:
        return self.frames.shape[1]

    def entry(self, path: str = "") -> "RecordEntry":
        return RecordEntry(self.video_id, self.subject, self.appearance, self.puppeteer,
                           self.provenance, path, self.artifact)

    def same_as(self, other: "VideoRecord") -> bool:
        return (self.entry() == other.entry()) and np.array_equal(self.frames, other.frames)


@dataclass(frozen=True)
class RecordEntry:
    video_id: str
    subject: str
    appearance: str
    puppeteer: str
    provenance: Provenance
    path: str = ""
    artifact: str | None = None

    def __post_init__(self):
        check_labels(self.subject, self.appearance, self.puppeteer, self.provenance, self.artifact)

    def to_json(self) -> dict:
        out = {
            "video_id": self.video_id,
            "subject": self.subject,
            "appearance": self.appearance,
            "puppeteer": self.puppeteer,
            "provenance": self.provenance.to_json(),
            "path": self.path,
        }
        if self.artifact is not None:
            out["artifact"] = self.artifact
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "RecordEntry":
        try:
            return cls(obj["video_id"], obj["subject"], obj["appearance"], obj["puppeteer"],
                       Provenance.from_json(obj["provenance"]), obj.get("path", ""), obj.get("artifact"))
        except KeyError as exc:
            raise FormatError(f"manifest record lacks field {exc.args[0]!r}") from None


@dataclass
class DatasetManifest:
    """Record descriptors plus the identity split.

    ``split`` maps ``"train"``/``"test"`` to puppeteer identity lists; a record
    belongs to the split holding its puppeteer.
    """

    records: list[RecordEntry]
    fau_dim: int = len(FAU_COLUMNS)
    split: dict[str, list[str]] = field(default_factory=lambda: {"train": [], "test": []})
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.records = list(self.records)
        self.validate()

    def validate(self) -> None:
        seen = set()
        for r in self.records:
            if r.video_id in seen:
                raise IntegrityError(f"duplicate video_id {r.video_id!r}")
            seen.add(r.video_id)
        train = set(self.split.get("train", ()))
        test = set(self.split.get("test", ()))
        if train & test:
            raise IntegrityError(f"train/test identities overlap: {sorted(train & test)}")
        if train or test:
            for r in self.records:
                if r.puppeteer not in train and r.puppeteer not in test:
                    raise IntegrityError(f"{r.video_id}: puppeteer {r.puppeteer!r} is in no split")

    def split_of(self, entry: RecordEntry) -> str:
        if entry.puppeteer in self.split.get("test", ()):
            return "test"
        return "train"

    def entries(self, split: str | None = None, tag: str | None = None) -> list[RecordEntry]:
        out = self.records
        if split is not None:
            out = [r for r in out if self.split_of(r) == split]
        if tag is not None:
            out = [r for r in out if r.provenance.tag == tag]
        return list(out)

    def by_id(self) -> dict[str, RecordEntry]:
        return {r.video_id: r for r in self.records}


def save_manifest(manifest: DatasetManifest) -> bytes:
    manifest.validate()
    obj = {
        "version": MANIFEST_VERSION,
        "fau_dim": manifest.fau_dim,
        "split": {k: list(v) for k, v in manifest.split.items()},
        "records": [r.to_json() for r in manifest.records],
        "metadata": manifest.metadata,
    }
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode("utf-8")


def load_manifest(source) -> DatasetManifest:
    if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("{"):
        source = Path(source).read_bytes()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        obj = json.loads(source)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from None
    if obj.get("version") != MANIFEST_VERSION:
        raise VersionError(f"manifest version {obj.get('version')!r}, expected {MANIFEST_VERSION}")
    return DatasetManifest(
        records=[RecordEntry.from_json(r) for r in obj.get("records", [])],
        fau_dim=int(obj["fau_dim"]),
        split={k: list(v) for k, v in obj.get("split", {}).items()},
        metadata=obj.get("metadata", {}),
    )


def _as_text(source) -> io.TextIOBase:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8")


def read_fau_frames(source, schema: Iterable[str] = FAU_COLUMNS, drop_failed: bool = True) -> np.ndarray:
    """Parse a CSV into a ``(T, D)`` array; rows with ``success == 0`` are dropped."""
    schema = list(schema)
    reader = csv.reader(_as_text(source))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyInputError("FAU CSV is empty") from None
    col = {name: i for i, name in enumerate(header)}
    for name in schema:
        if name not in col:
            raise FormatError(f"FAU CSV lacks column {name}")
    idx = [col[name] for name in schema]
    success = col.get("success") if drop_failed else None
    rows = []
    for rowno, row in enumerate(reader, start=1):
        if not row:
            continue
        try:
            if success is not None and float(row[success]) == 0.0:
                continue
            vals = [float(row[i]) for i in idx]
        except (ValueError, IndexError):
            raise FormatError(f"row {rowno}: non-numeric or missing FAU value") from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"row {rowno}: non-finite FAU value")
        rows.append(vals)
    if not rows:
        raise EmptyInputError("FAU CSV has no usable data rows")
    return np.array(rows, dtype=np.float64)


def ingest_fau_csv(
    source,
    schema: Iterable[str] = FAU_COLUMNS,
    *,
    video_id: str,
    subject: str,
    appearance: str | None = None,
    puppeteer: str | None = None,
    provenance: Provenance = PROV_GENUINE,
    artifact: str | None = None,
    drop_failed: bool = True,
) -> VideoRecord:
    frames = read_fau_frames(source, schema, drop_failed=drop_failed)
    return VideoRecord(video_id, subject, appearance or subject, puppeteer or subject,
                       provenance, frames, artifact)


def write_fau_csv(frames: np.ndarray, schema: Iterable[str] = FAU_COLUMNS) -> bytes:
    schema = list(schema)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[1] != len(schema):
        raise FormatError(f"{frames.shape[1]} FAU columns but schema names {len(schema)}")
    lines = [",".join(["frame", "success", *schema])]
    for t, row in enumerate(frames.tolist()):
        lines.append(f"{t + 1},1," + ",".join(map(repr, row)))
    return ("\n".join(lines) + "\n").encode("utf-8")


class Dataset:
    """A manifest with its FAU frames, loaded lazily from ``root`` or held in memory."""

    def __init__(self, manifest: DatasetManifest, root: str | Path | None = None,
                 records: Mapping[str, VideoRecord] | None = None,
                 schema: Iterable[str] | None = None):
        self.manifest = manifest
        self.root = Path(root) if root is not None else None
        self.schema = tuple(schema) if schema is not None else tuple(
            manifest.metadata.get("schema", FAU_COLUMNS[: manifest.fau_dim]))
        self._cache: dict[str, VideoRecord] = dict(records or {})
        self._entries = manifest.by_id()

    @classmethod
    def open(cls, manifest_path: str | Path) -> "Dataset":
        path = Path(manifest_path)
        return cls(load_manifest(path.read_bytes()), root=path.parent)

    def __len__(self):
        return len(self.manifest.records)

    def entry(self, video_id: str) -> RecordEntry:
        return self._entries[video_id]

    def get(self, video_id: str) -> VideoRecord:
        rec = self._cache.get(video_id)
        if rec is None:
            e = self._entries[video_id]
            if self.root is None:
                raise KeyError(f"{video_id} is not in memory and the dataset has no root")
            frames = read_fau_frames((self.root / e.path).read_bytes(), self.schema)
            rec = VideoRecord(e.video_id, e.subject, e.appearance, e.puppeteer, e.provenance, frames, e.artifact)
            self._cache[video_id] = rec
        return rec

    def records(self, split: str | None = None, tag: str | None = None) -> list[VideoRecord]:
        return [self.get(e.video_id) for e in self.manifest.entries(split, tag)]

    def driving_of(self, video_id: str) -> str:
        return self.manifest.metadata["driving"][video_id]

    def with_records(self, extra: Iterable[VideoRecord]) -> "Dataset":
        """New in-memory view with additional (e.g. surrogate-processed) records appended."""
        extra = list(extra)
        manifest = DatasetManifest(self.manifest.records + [r.entry() for r in extra], self.manifest.fau_dim,
                                   self.manifest.split, self.manifest.metadata)
        cache = dict(self._cache)
        cache.update({r.video_id: r for r in extra})
        return Dataset(manifest, self.root, cache, self.schema)
