"""Trial scoring, score fusion, EER and report tables."""
from __future__ import annotations

import csv
import io
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from avsv.data.protocol import CONDITIONS, TrialPair
from avsv.errors import CapabilityError, DataError, DimensionError
from avsv.models.config import MID_FUSION, MULTI_VIEW, UNIMODAL_A, UNIMODAL_V
from avsv.models.zoo import Model, embed

FUSION = "FUSION"
REPORT_ORDER = ("AA", "VV", "AVAV", FUSION, "AV_X", "A_AV", "V_AV")

# condition -> topologies able to score it
CAPABLE = {
    "AA": (UNIMODAL_A, MULTI_VIEW),
    "VV": (UNIMODAL_V, MULTI_VIEW),
    "AVAV": (MID_FUSION,),
    "AV_X": (MULTI_VIEW,),
    "A_AV": (MULTI_VIEW,),
    "V_AV": (MULTI_VIEW,),
}

# (enrol side, test side); "AV" on MultiView means the mean of the two embeddings
SIDES = {
    "AA": ("A", "A"),
    "VV": ("V", "V"),
    "AVAV": ("AV", "AV"),
    "AV_X": ("A", "V"),
    "A_AV": ("A", "AV"),
    "V_AV": ("V", "AV"),
}


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray
    condition: str = ""
    system: str = ""
    enrol_ids: Optional[np.ndarray] = None
    test_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.scores.shape != self.labels.shape:
            raise DimensionError(f"{self.scores.size} scores but {self.labels.size} labels")

    def __len__(self) -> int:
        return self.scores.size


@dataclass
class EerResult:
    eer: float
    threshold: float
    num_target: int
    num_nontarget: int


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"cosine: dimensions differ, {a.size} vs {b.size}")
    na = max(float(np.linalg.norm(a)), 1e-12)
    nb = max(float(np.linalg.norm(b)), 1e-12)
    return float(a @ b) / (na * nb)


def compute_eer(scores, labels=None) -> EerResult:
    """Equal error rate with linear interpolation between operating points.

    With thresholds at every distinct score, FRR(t) is the share of targets
    scoring below t and FAR(t) the share of nontargets scoring at or above t.
    The first threshold at which FRR reaches FAR (lowest threshold on ties)
    closes the crossing segment.
    """
    if isinstance(scores, ScoreSet):
        scores, labels = scores.scores, scores.labels
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    tar, non = np.sort(s[y]), np.sort(s[~y])
    if tar.size == 0 or non.size == 0:
        raise DataError(f"EER needs both classes; got {tar.size} targets and {non.size} nontargets")
    thresholds = np.append(np.unique(s), np.inf)
    frr = np.searchsorted(tar, thresholds, side="left") / tar.size
    far = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    i = int(np.argmax(frr >= far))
    if frr[i] == far[i] or i == 0:
        return EerResult(float(frr[i]), float(thresholds[i]), tar.size, non.size)
    d0, d1 = far[i - 1] - frr[i - 1], far[i] - frr[i]
    alpha = d0 / (d0 - d1)
    eer = frr[i - 1] + alpha * (frr[i] - frr[i - 1])
    hi = thresholds[i] if np.isfinite(thresholds[i]) else thresholds[i - 1]
    threshold = thresholds[i - 1] + alpha * (hi - thresholds[i - 1])
    return EerResult(float(eer), float(threshold), tar.size, non.size)


def det_points(scores: ScoreSet) -> np.ndarray:
    """Raw ``(threshold, FAR, FRR)`` rows at every distinct score."""
    tar, non = np.sort(scores.scores[scores.labels]), np.sort(scores.scores[~scores.labels])
    t = np.unique(scores.scores)
    frr = np.searchsorted(tar, t, side="left") / max(tar.size, 1)
    far = 1.0 - np.searchsorted(non, t, side="left") / max(non.size, 1)
    return np.column_stack([t, far, frr])


def fuse_scores(sets: Sequence[ScoreSet], system: Optional[str] = None, weights=None) -> ScoreSet:
    """Per-trial (weighted) mean of aligned score sets; equal weights by default."""
    sets = list(sets)
    if not sets:
        raise DataError("nothing to fuse")
    ref = sets[0]
    for other in sets[1:]:
        if len(other) != len(ref) or not np.array_equal(other.labels, ref.labels):
            raise DataError(f"cannot fuse {other.system}/{other.condition} with {ref.system}/{ref.condition}: "
                            "trial lists differ")
        for attr in ("enrol_ids", "test_ids"):
            a, b = getattr(ref, attr), getattr(other, attr)
            if a is not None and b is not None and not np.array_equal(a, b):
                raise DataError(f"cannot fuse {other.system} with {ref.system}: {attr} differ")
    if weights is None:
        fused = np.mean(np.stack([x.scores for x in sets]), axis=0)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(sets),) or w.sum() <= 0:
            raise DataError("fusion weights must be one positive-sum weight per score set")
        fused = (w[:, None] * np.stack([x.scores for x in sets])).sum(axis=0) / w.sum()
    name = system or "+".join(x.system for x in sets)
    return ScoreSet(fused, ref.labels.copy(), FUSION, name, ref.enrol_ids, ref.test_ids)


def check_capable(model: Model, condition: str, system: str = "") -> None:
    if condition not in CAPABLE:
        raise CapabilityError(f"unknown condition {condition!r}")
    if model.kind not in CAPABLE[condition]:
        need = " or ".join(CAPABLE[condition])
        raise CapabilityError(f"condition {condition} needs a {need} model; {system or 'system'} is {model.kind}")


def side_embedding(model: Model, sample, side: str) -> np.ndarray:
    if side == "AV" and model.kind == MULTI_VIEW:
        a = embed(model, sample, "A").data.astype(np.float64)
        v = embed(model, sample, "V").data.astype(np.float64)
        return (a + v) / 2
    return embed(model, sample, side).data.astype(np.float64)


def _parallel_map(fn, items, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def score_condition(model: Model, trials: Sequence[TrialPair], samples: dict, condition: str,
                    system: str = "", threads: int = 1) -> ScoreSet:
    check_capable(model, condition, system)
    model.eval()
    enrol_side, test_side = SIDES[condition]
    needed = OrderedDict()
    for t in trials:
        needed[(t.enrol_id, enrol_side)] = None
        needed[(t.test_id, test_side)] = None
    missing = sorted({u for u, _ in needed if u not in samples})
    if missing:
        raise DataError(f"trial utterances {missing[:5]} not found in the dataset")
    keys = list(needed)
    vectors = _parallel_map(lambda k: side_embedding(model, samples[k[0]], k[1]), keys, threads)
    table = dict(zip(keys, vectors))
    scores = np.array([cosine(table[(t.enrol_id, enrol_side)], table[(t.test_id, test_side)]) for t in trials])
    return ScoreSet(
        scores, np.array([t.label for t in trials], dtype=bool), condition, system,
        np.array([t.enrol_id for t in trials]), np.array([t.test_id for t in trials]),
    )


def score_trials(models: dict, trials: Sequence[TrialPair], dataset, threads: int = 1) -> dict:
    """Score every trial with every system able to handle its condition.

    Returns ``{(system, condition): ScoreSet}`` in trial order. A condition no
    supplied system can score raises :class:`CapabilityError`.
    """
    samples = dataset.by_id() if hasattr(dataset, "by_id") else dict(dataset)
    groups = OrderedDict()
    for t in trials:
        groups.setdefault(t.condition, []).append(t)
    out = {}
    for condition in sorted(groups, key=REPORT_ORDER.index):
        able = [tag for tag in sorted(models) if models[tag].kind in CAPABLE[condition]]
        if not able:
            need = " or ".join(CAPABLE[condition])
            have = ", ".join(f"{tag}={models[tag].kind}" for tag in sorted(models)) or "none"
            raise CapabilityError(f"condition {condition} needs a {need} model; supplied: {have}")
        for tag in able:
            out[(tag, condition)] = score_condition(models[tag], groups[condition], samples, condition, tag, threads)
    return out


def native_condition(model: Model) -> str:
    """Default condition used when a system is named in a fusion recipe."""
    return {UNIMODAL_A: "AA", UNIMODAL_V: "VV", MID_FUSION: "AVAV"}.get(model.kind, "")


# ----------------------------------------------------------------------------
# files and reports


def write_scores(scores: ScoreSet, path) -> None:
    cond = scores.condition
    lines = [
        f"{cond}\t{e}\t{t}\t{int(lab)}\t{s:.9g}\n"
        for e, t, lab, s in zip(scores.enrol_ids, scores.test_ids, scores.labels, scores.scores)
    ]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_scores(path, system: str = "") -> ScoreSet:
    rows = [line.split("\t") for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if any(len(r) != 5 for r in rows):
        raise DataError(f"{path}: expected 5 tab-separated fields per line")
    cond = rows[0][0] if rows else ""
    return ScoreSet(
        np.array([float(r[4]) for r in rows]), np.array([r[3] == "1" for r in rows]), cond, system,
        np.array([int(r[1]) for r in rows]), np.array([int(r[2]) for r in rows]),
    )


def _ordered(results: dict) -> list:
    rank = {c: i for i, c in enumerate(REPORT_ORDER)}
    return sorted(results.items(), key=lambda kv: (rank.get(kv[0][1], len(rank)), kv[0][0]))


def format_eer(eer: float) -> str:
    return f"{100.0 * eer:.1f}"


def report_table(results: dict) -> tuple:
    """Render ``{(system, condition): EerResult}`` as ``(aligned text, csv text)``."""
    header = ("system", "condition", "eer_percent", "targets", "nontargets")
    rows = [(sys_, cond, format_eer(r.eer), str(r.num_target), str(r.num_nontarget))
            for (sys_, cond), r in _ordered(results)]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(header)]
    def line(cells):
        return "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))).rstrip()
    text = "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return text, buf.getvalue()


__all__ = [
    "CAPABLE", "CONDITIONS", "FUSION", "EerResult", "ScoreSet", "compute_eer", "cosine", "det_points",
    "fuse_scores", "native_condition", "read_scores", "report_table", "score_condition", "score_trials",
    "write_scores",
]
