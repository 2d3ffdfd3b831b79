"""Class-level retrieval evaluation: mAP, Recall@k, MRR, per-class analysis.

A candidate is relevant iff it shares the query's class, so every same-class
item counts, not just the query's original pair. mAP and R@k are reported as
percentages, MRR as a raw fraction. Multi-seed runs aggregate with the mean
and the unbiased (n-1) standard deviation.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .retrieval import RankedList, cosine_similarity

METRIC_KEYS = ("mAP", "R@1", "R@5", "MRR")


class MetricError(ValueError):
    """Undefined metric (no relevant candidate, empty input, degenerate group)."""


def relevance_flags(ranked: RankedList) -> np.ndarray:
    """Boolean flag per candidate: same class as the query."""
    return np.array([c.class_id == ranked.query_class for c in ranked.candidates], dtype=bool)


def average_precision(flags: Sequence[bool] | np.ndarray) -> float:
    """Mean of precision@k over the relevant ranks; undefined without relevant items."""
    flags = np.asarray(flags, dtype=bool)
    relevant = int(flags.sum())
    if relevant == 0:
        raise MetricError("average precision undefined: no relevant candidate")
    cum_hits = np.cumsum(flags)
    ranks = np.arange(1, flags.size + 1)
    return float((cum_hits[flags] / ranks[flags]).sum() / relevant)


def recall_at_k(flags: Sequence[bool] | np.ndarray, k: int) -> float:
    """Per-query hit indicator: 1 if any of the first k flags is true."""
    if k < 1:
        raise MetricError(f"k must be >= 1, got {k}")
    flags = np.asarray(flags, dtype=bool)
    return 1.0 if flags[: min(k, flags.size)].any() else 0.0


def reciprocal_rank(flags: Sequence[bool] | np.ndarray) -> float:
    """1 / (1-based rank of the first relevant item)."""
    flags = np.asarray(flags, dtype=bool)
    hits = np.nonzero(flags)[0]
    if hits.size == 0:
        raise MetricError("reciprocal rank undefined: no relevant candidate")
    return 1.0 / float(hits[0] + 1)


def evaluate(ranked_lists: Sequence[RankedList]) -> dict[str, float]:
    """mAP, R@1, R@5 (percentages) and MRR (fraction), averaged over queries."""
    if not ranked_lists:
        raise MetricError("evaluate needs at least one ranked list")
    ap, r1, r5, rr = [], [], [], []
    for rl in ranked_lists:
        flags = relevance_flags(rl)
        if not flags.any():
            raise MetricError(f"query '{rl.query_id}' has no relevant candidate")
        ap.append(average_precision(flags))
        r1.append(recall_at_k(flags, 1))
        r5.append(recall_at_k(flags, 5))
        rr.append(reciprocal_rank(flags))
    return {
        "mAP": 100.0 * float(np.mean(ap)),
        "R@1": 100.0 * float(np.mean(r1)),
        "R@5": 100.0 * float(np.mean(r5)),
        "MRR": float(np.mean(rr)),
    }


@dataclass
class ClassReport:
    """Per-class retrieval quality for one evaluation run."""

    class_id: int
    query_count: int
    ap_mean: float
    most_confused: int | None  # class most often holding the top irrelevant rank


def _top_irrelevant_class(ranked: RankedList) -> int | None:
    for cand in ranked.candidates:
        if cand.class_id != ranked.query_class:
            return cand.class_id
    return None


def per_class_report(
    ranked_lists: Sequence[RankedList],
    class_names: Mapping[int, str] | None = None,
) -> dict[int, ClassReport]:
    """Class-wise AP plus the most-confused class.

    The most-confused class is the modal class of the top-ranked irrelevant
    candidate over the class's queries (ties broken by lexicographic class
    name when names are given, by class id otherwise); ``None`` when every
    candidate was relevant for all of the class's queries.
    """
    ap_by_class: dict[int, list[float]] = {}
    confusion_by_class: dict[int, Counter[int]] = {}
    for rl in ranked_lists:
        flags = relevance_flags(rl)
        if not flags.any():
            raise MetricError(f"query '{rl.query_id}' has no relevant candidate")
        ap_by_class.setdefault(rl.query_class, []).append(average_precision(flags))
        top_bad = _top_irrelevant_class(rl)
        counter = confusion_by_class.setdefault(rl.query_class, Counter())
        if top_bad is not None:
            counter[top_bad] += 1
    reports: dict[int, ClassReport] = {}
    for class_id, values in sorted(ap_by_class.items()):
        counter = confusion_by_class[class_id]
        reports[class_id] = ClassReport(
            class_id=class_id,
            query_count=len(values),
            ap_mean=float(np.mean(values)),
            most_confused=_modal_class(counter, class_names),
        )
    return reports


def _modal_class(counter: Counter, class_names: Mapping[int, str] | None) -> int | None:
    if not counter:
        return None
    top = max(counter.values())

    def sort_key(cid: int):
        return class_names[cid] if class_names is not None else cid

    return min((cid for cid, n in counter.items() if n == top), key=sort_key)


def centroid_dispersion(
    vectors: np.ndarray, labels: Sequence[int] | np.ndarray
) -> dict[int, float]:
    """Mean cosine distance of each group's vectors from their mean centroid."""
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    if vectors.ndim != 2 or labels.shape != (vectors.shape[0],):
        raise MetricError("need a 2-D vector matrix and one label per row")
    if vectors.shape[0] == 0:
        raise MetricError("dispersion undefined for an empty group")
    out: dict[int, float] = {}
    for class_id in sorted(set(int(x) for x in labels)):
        members = vectors[labels == class_id]
        centroid = members.mean(axis=0)
        if np.linalg.norm(centroid) == 0.0:
            raise MetricError(f"class {class_id}: zero-norm centroid")
        distances = [1.0 - cosine_similarity(member, centroid) for member in members]
        out[class_id] = max(0.0, float(np.mean(distances)))  # clamp -1ulp roundoff
    return out


def aggregate_seeds(
    per_seed: Sequence[Mapping[str, float]],
) -> dict[str, tuple[float, float]]:
    """Mean and unbiased (n-1) standard deviation of each metric across seeds."""
    if not per_seed:
        raise MetricError("aggregate_seeds needs at least one seed's metrics")
    keys = tuple(per_seed[0])
    for m in per_seed:
        if tuple(m) != keys:
            raise MetricError("seed metric sets disagree on their keys")
    if len(per_seed) == 1:
        warnings.warn("aggregating a single seed: std reported as 0", stacklevel=2)
    out: dict[str, tuple[float, float]] = {}
    for key in keys:
        values = np.array([m[key] for m in per_seed], dtype=np.float64)
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        out[key] = (float(values.mean()), std)
    return out


# ---------------------------------------------------------------------------
# Experiment reports

@dataclass
class ExperimentReport:
    """Per-seed and aggregated metrics plus the class-level analysis tables."""

    direction: str
    seeds: list[int]
    per_seed: list[dict[str, float]]
    aggregate: dict[str, dict[str, float]]  # metric -> {"mean": .., "std": ..}
    per_class: list[dict] = field(default_factory=list)
    dispersion: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "direction": self.direction,
            "seeds": self.seeds,
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
            "per_class": self.per_class,
            "dispersion": self.dispersion,
        }


def build_report(
    direction: str,
    seeds: Sequence[int],
    runs: Sequence[Sequence[RankedList]],
    class_names: Mapping[int, str] | None = None,
) -> ExperimentReport:
    """Evaluate one run per seed and aggregate; class analysis pools all seeds."""
    if len(seeds) != len(runs):
        raise MetricError("need exactly one run of ranked lists per seed")
    per_seed = [evaluate(run) for run in runs]
    agg = aggregate_seeds(per_seed)
    per_class_runs = [per_class_report(run, class_names) for run in runs]
    class_ids = sorted({cid for rep in per_class_runs for cid in rep})
    per_class_rows = []
    for cid in class_ids:
        aps = [rep[cid].ap_mean for rep in per_class_runs if cid in rep]
        pooled = Counter()
        for run in runs:
            for rl in run:
                if rl.query_class != cid:
                    continue
                top_bad = _top_irrelevant_class(rl)
                if top_bad is not None:
                    pooled[top_bad] += 1
        confused = _modal_class(pooled, class_names)
        row = {
            "class_id": cid,
            "class_name": class_names.get(cid) if class_names else None,
            "ap_mean": 100.0 * float(np.mean(aps)),
            "ap_std": 100.0 * float(np.std(aps, ddof=1)) if len(aps) > 1 else 0.0,
            "query_count": sum(rep[cid].query_count for rep in per_class_runs if cid in rep),
            "most_confused": confused,
            "most_confused_name": class_names.get(confused)
            if (class_names and confused is not None)
            else None,
        }
        per_class_rows.append(row)
    return ExperimentReport(
        direction=direction,
        seeds=list(seeds),
        per_seed=per_seed,
        aggregate={k: {"mean": mean, "std": std} for k, (mean, std) in agg.items()},
        per_class=per_class_rows,
    )


def write_report_json(reports: Sequence[ExperimentReport], path: str | Path) -> None:
    doc = {"reports": [r.to_json_dict() for r in reports]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def format_metrics_table(rows: Sequence[tuple[str, Mapping[str, Mapping[str, float]]]]) -> str:
    """Main-results table: one row per (label, aggregated metrics)."""
    header = f"{'Method':<18}{'mAP (%)':>16}{'R@1 (%)':>16}{'R@5 (%)':>16}{'MRR':>16}"
    lines = [header, "-" * len(header)]
    for label, agg in rows:
        cells = []
        for key in ("mAP", "R@1", "R@5"):
            cells.append(f"{agg[key]['mean']:.2f} ± {agg[key]['std']:.2f}")
        cells.append(f"{agg['MRR']['mean']:.3f} ± {agg['MRR']['std']:.3f}")
        lines.append(
            f"{label:<18}{cells[0]:>16}{cells[1]:>16}{cells[2]:>16}{cells[3]:>16}"
        )
    return "\n".join(lines)


def format_class_table(per_class: Sequence[Mapping], bottom_n: int = 5) -> str:
    """Lowest-AP classes with their most-confused class, ascending by AP."""
    rows = sorted(per_class, key=lambda r: r["ap_mean"])[:bottom_n]
    header = f"{'Rank':<6}{'Class':<24}{'AP (%)':>16}  {'Most confused':<24}"
    lines = [header, "-" * len(header)]
    for rank, row in enumerate(rows, 1):
        name = row["class_name"] if row["class_name"] is not None else str(row["class_id"])
        confused = row["most_confused_name"]
        if confused is None:
            confused = "none" if row["most_confused"] is None else str(row["most_confused"])
        ap = f"{row['ap_mean']:.2f} ± {row['ap_std']:.2f}"
        lines.append(f"{rank:<6}{name:<24}{ap:>16}  {confused:<24}")
    return "\n".join(lines)


def format_dispersion_table(rows: Sequence[Mapping]) -> str:
    """Per-class audio vs image cosine dispersion around the class centroid."""
    header = f"{'Class':<24}{'Audio dispersion':>24}{'Image dispersion':>24}"
    lines = [header, "-" * len(header)]
    for row in rows:
        name = row["class_name"] if row.get("class_name") is not None else str(row["class_id"])
        audio = f"{row['audio_mean']:.4f} ± {row['audio_std']:.4f}"
        image = f"{row['image_mean']:.4f} ± {row['image_std']:.4f}"
        lines.append(f"{name:<24}{audio:>24}{image:>24}")
    return "\n".join(lines)
