"""Evaluation protocols: which videos are compared, with which label, and how they are scored.

Reference-free labelling::

    conventional   genuine -> 1          forged -> 0
    rddp_whitehat  reconstructed -> 1    forged -> 0
    rddp_surrogate A(genuine) -> 1       A(forged) -> 0

Reference-based labelling (probe, reference)::

    conventional   (genuine, genuine) 1   (forged, genuine) 0
    rddp_whitehat  (genuine, genuine) 1   (forged, reconstructed) 0
    rddp_surrogate (genuine, genuine) 1   (A(forged), A(genuine)) 0

The reference depicts the probe's claimed (displayed) identity: the
lowest-id eligible video of that subject other than the probe itself and its
driving video.
"""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import data as D
from .errors import CapabilityError, FormatError, ProtocolError
from .metrics import accuracy, auc, calibrated_accuracy, reid_metrics
from .synth import SurrogateSpec, apply_surrogate

CONVENTIONAL = "conventional"
WHITEHAT = "rddp_whitehat"
SURROGATE = "rddp_surrogate"
REFERENCE_FREE = "reference_free"
REFERENCE_BASED = "reference_based"
PROTOCOL_ALIASES = {"conventional": CONVENTIONAL, "whitehat": WHITEHAT, "rddp_whitehat": WHITEHAT,
                    "surrogate": SURROGATE, "rddp_surrogate": SURROGATE}


@dataclass(frozen=True)
class ProtocolKind:
    name: str
    mode: str = REFERENCE_BASED
    surrogate: SurrogateSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "name", PROTOCOL_ALIASES.get(self.name, self.name))
        if self.name not in (CONVENTIONAL, WHITEHAT, SURROGATE):
            raise ProtocolError(f"unknown protocol {self.name!r}")
        if self.mode not in (REFERENCE_FREE, REFERENCE_BASED):
            raise ProtocolError(f"unknown protocol mode {self.mode!r}")
        if (self.name == SURROGATE) != (self.surrogate is not None):
            raise ProtocolError("a surrogate spec is required for, and only for, rddp_surrogate")

    @property
    def tag(self) -> str:
        t = self.name if self.surrogate is None else f"{self.name}:{self.surrogate.tag}"
        return f"{t}/{self.mode}"


@dataclass(frozen=True)
class EvaluationPair:
    pair_id: int
    probe: str
    reference: str | None
    label: int
    protocol: str


@dataclass
class PairSet:
    pairs: list[EvaluationPair]
    skipped: list[str] = field(default_factory=list)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.pairs], dtype=int)


def _match_surrogate(e: D.RecordEntry, base: str, spec: SurrogateSpec) -> bool:
    p = e.provenance
    return p.tag == D.SURROGATE and p.base == base and p.surrogate_kind == spec.kind and p.surrogate_level == spec.level


def provenance_sets(manifest: D.DatasetManifest, protocol: ProtocolKind, split: str = "test"):
    """The named record sets a protocol draws from, restricted to ``split``."""
    entries = manifest.entries(split=split)
    sets = {
        "D_gen": [e for e in entries if e.provenance.tag == D.GENUINE],
        "D_forg": [e for e in entries if e.provenance.tag == D.FORGED],
        "D_recon": [e for e in entries if e.provenance.tag == D.RECONSTRUCTED],
    }
    spec = protocol.surrogate
    if spec is not None:
        if spec.level == 0:
            sets["A(D_gen)"], sets["A(D_forg)"] = sets["D_gen"], sets["D_forg"]
        else:
            sets["A(D_gen)"] = [e for e in entries if _match_surrogate(e, D.GENUINE, spec)]
            sets["A(D_forg)"] = [e for e in entries if _match_surrogate(e, D.FORGED, spec)]
    return sets


# (probe set, reference set, label) rows per protocol
REFERENCE_FREE_TABLE = {
    CONVENTIONAL: (("D_gen", None, 1), ("D_forg", None, 0)),
    WHITEHAT: (("D_recon", None, 1), ("D_forg", None, 0)),
    SURROGATE: (("A(D_gen)", None, 1), ("A(D_forg)", None, 0)),
}
REFERENCE_BASED_TABLE = {
    CONVENTIONAL: (("D_gen", "D_gen", 1), ("D_forg", "D_gen", 0)),
    WHITEHAT: (("D_gen", "D_gen", 1), ("D_forg", "D_recon", 0)),
    SURROGATE: (("D_gen", "D_gen", 1), ("A(D_forg)", "A(D_gen)", 0)),
}


def build_pairs(manifest: D.DatasetManifest, protocol: ProtocolKind, split: str = "test") -> PairSet:
    sets = provenance_sets(manifest, protocol, split)
    table = (REFERENCE_FREE_TABLE if protocol.mode == REFERENCE_FREE else REFERENCE_BASED_TABLE)[protocol.name]
    for probe_set, ref_set, _ in table:
        for name in (probe_set, ref_set):
            if name is not None and not sets[name]:
                raise ProtocolError(f"{protocol.tag} needs a nonempty {name} set in the {split} split")
    driving = manifest.metadata.get("driving", {})
    refs_by_subject = {}
    for _, ref_set, _ in table:
        if ref_set is not None and ref_set not in refs_by_subject:
            by = defaultdict(list)
            for e in sets[ref_set]:
                by[e.subject].append(e.video_id)
            refs_by_subject[ref_set] = {k: sorted(v) for k, v in by.items()}
    pairs, skipped = [], []
    for probe_set, ref_set, label in table:
        for e in sorted(sets[probe_set], key=lambda e: e.video_id):
            ref = None
            if ref_set is not None:
                banned = {e.video_id, driving.get(e.video_id)}
                cands = [v for v in refs_by_subject[ref_set].get(e.appearance, []) if v not in banned]
                if not cands:
                    skipped.append(e.video_id)
                    continue
                ref = cands[0]
            pairs.append(EvaluationPair(len(pairs), e.video_id, ref, label, protocol.tag))
    return PairSet(pairs, skipped)


def with_surrogate(dataset: D.Dataset, spec: SurrogateSpec, split: str = "test") -> D.Dataset:
    """Add the surrogate-processed genuine/forged sets for ``spec`` unless already materialised."""
    if spec.level == 0:
        return dataset
    have = {e.video_id for e in dataset.manifest.records}
    extra = []
    for e in dataset.manifest.entries(split=split):
        if e.provenance.tag in (D.GENUINE, D.FORGED):
            vid = f"{e.video_id}~{spec.tag}"
            if vid not in have:
                extra.append(apply_surrogate(dataset.get(e.video_id), spec, video_id=vid))
    if not extra:
        return dataset
    view = dataset.with_records(extra)
    driving = dict(view.manifest.metadata.get("driving", {}))
    for r in extra:
        base = r.video_id.split("~")[0]
        if base in driving:
            driving[r.video_id] = driving[base]
    view.manifest.metadata = {**view.manifest.metadata, "driving": driving}
    return view


# -- scoring -----------------------------------------------------------------------------------


class IDMinerScorer:
    """Reference-based scorer: ``(cos(M(probe), M(reference)) + 1) / 2``."""

    supports = (REFERENCE_BASED,)

    def __init__(self, model):
        self.model = model
        self._reps: dict[str, np.ndarray] = {}

    def representations(self, dataset: D.Dataset, ids: Iterable[str]) -> dict[str, np.ndarray]:
        missing = sorted({i for i in ids if i not in self._reps})
        if missing:
            reps = self.model.represent([dataset.get(i) for i in missing])
            self._reps.update(zip(missing, reps))
        return self._reps

    def score(self, dataset: D.Dataset, pairs: list[EvaluationPair]) -> np.ndarray:
        if any(p.reference is None for p in pairs):
            raise CapabilityError("ID-Miner scoring needs a reference video; reference-free mode is unsupported")
        reps = self.representations(dataset, [p.probe for p in pairs] + [p.reference for p in pairs])
        return np.array([score_from_cosine(float(reps[p.probe] @ reps[p.reference])) for p in pairs])


def score_from_cosine(c: float) -> float:
    return min(1.0, max(0.0, (c + 1.0) / 2.0))


def score_pair(model, dataset: D.Dataset, pair: EvaluationPair) -> float:
    return float(IDMinerScorer(model).score(dataset, [pair])[0])


@dataclass
class EvalReport:
    protocol: ProtocolKind
    auc: float
    acc: float
    acc_calibrated: float
    threshold: float
    n_pairs: int
    n_skipped: int
    pairs: list[EvaluationPair] = field(repr=False, default_factory=list)
    scores: np.ndarray = field(repr=False, default=None)

    def to_json(self) -> dict:
        out = {"protocol": self.protocol.name, "mode": self.protocol.mode, "auc": self.auc, "acc": self.acc,
               "acc_calibrated": self.acc_calibrated, "calibrated_threshold": self.threshold,
               "n_pairs": self.n_pairs, "n_skipped": self.n_skipped}
        if self.protocol.surrogate is not None:
            out["surrogate_kind"] = self.protocol.surrogate.kind
            out["surrogate_level"] = self.protocol.surrogate.level
        return out


def evaluate(scorer, dataset: D.Dataset, protocol: ProtocolKind, split: str = "test",
             threshold: float = 0.5) -> EvalReport:
    if protocol.mode not in scorer.supports:
        raise CapabilityError(f"{type(scorer).__name__} does not support {protocol.mode} evaluation")
    if protocol.surrogate is not None:
        dataset = with_surrogate(dataset, protocol.surrogate, split)
    ps = build_pairs(dataset.manifest, protocol, split)
    scores = scorer.score(dataset, ps.pairs)
    labels = ps.labels
    acc_c, thr = calibrated_accuracy(scores, labels)
    return EvalReport(protocol, auc(scores, labels), accuracy(scores, labels, threshold), acc_c, thr,
                      len(ps.pairs), len(ps.skipped), ps.pairs, scores)


# -- score files -------------------------------------------------------------------------------

SCORE_COLUMNS = ("pair_id", "probe_id", "reference_id", "label", "score")


def scores_csv(pairs: list[EvaluationPair], scores) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for p, s in zip(pairs, scores):
        w.writerow([p.pair_id, p.probe, p.reference or "", p.label, repr(float(s))])
    return buf.getvalue().encode()


def read_scores_csv(source) -> tuple[np.ndarray, np.ndarray]:
    """Parse a score CSV (ours or an external detector's) into ``(scores, labels)``."""
    text = source.decode() if isinstance(source, bytes) else source
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise FormatError("score file has no rows")
    missing = [c for c in ("label", "score") if c not in rows[0]]
    if missing:
        raise FormatError(f"score file lacks column {missing[0]}")
    try:
        scores = np.array([float(r["score"]) for r in rows])
        labels = np.array([int(r["label"]) for r in rows])
    except ValueError as exc:
        raise FormatError(f"bad score row: {exc}") from None
    if np.any((scores < 0) | (scores > 1)) or not np.all(np.isfinite(scores)):
        raise FormatError("scores must lie in [0, 1]")
    return scores, labels


def frame_average(frame_scores) -> float:
    """Video-level score of a per-frame detector: the mean over frames."""
    s = np.asarray(frame_scores, dtype=np.float64)
    if s.size == 0:
        raise FormatError("no frame scores")
    return float(s.mean())


def reciprocal_distance(distance) -> np.ndarray:
    """Similarity in (0, 1] from an embedding distance; ``1 / (1 + d)`` ranks like ``1 / d``."""
    d = np.asarray(distance, dtype=np.float64)
    if np.any(d < 0):
        raise FormatError("distances must be non-negative")
    return 1.0 / (1.0 + d)


def read_frame_scores(source) -> dict[str, float]:
    """Average a ``video_id,frame,score`` CSV into one score per video."""
    text = source.decode() if isinstance(source, bytes) else source
    per = defaultdict(list)
    for r in csv.DictReader(io.StringIO(text)):
        try:
            per[r["video_id"]].append(float(r["score"]))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad frame score row: {exc}") from None
    return {k: frame_average(v) for k, v in sorted(per.items())}


def report_json(reports) -> bytes:
    return (json.dumps(reports, indent=1, sort_keys=True) + "\n").encode()


def reid_sets(dataset: D.Dataset, split: str = "test", gallery_tag: str = D.FORGED):
    """Puppeteer re-id: genuine videos as probes, forged videos (fully synthetic faces) as gallery."""
    probes = dataset.records(split=split, tag=D.GENUINE)
    gallery = dataset.records(split=split, tag=gallery_tag)
    if not probes or not gallery:
        raise ProtocolError(f"re-id needs genuine probes and a {gallery_tag} gallery in the {split} split")
    return probes, gallery


def evaluate_reid(represent, dataset: D.Dataset, split: str = "test", gallery_tag: str = D.FORGED):
    """``represent`` maps a list of records to an array of embeddings."""
    probes, gallery = reid_sets(dataset, split, gallery_tag)
    return reid_metrics(represent(probes), [r.puppeteer for r in probes],
                        represent(gallery), [r.puppeteer for r in gallery])
