"""Tracking evaluation: CLEAR MOT, identity scores, and MCTA.

Matching procedure (pinned, since published implementations diverge):
within each camera, frame by frame, ground-truth boxes first keep their
previous correspondence when that predicted id is still present with
IoU >= threshold; the remainder is matched by an optimal assignment
that maximizes match count first and total IoU second.  A matched
ground-truth object whose predicted id differs from its previous
matched id counts one identity switch.

MOTA  = 1 - (FP + FN + IDS) / total ground-truth boxes
MOTP  = mean IoU over matches
IDF1  = 2*IDTP / (2*IDTP + IDFP + IDFN) under the best global one-to-one
        identity matching (Ristani-style, counting per-frame overlaps)
MCTA  = detection F1 * (1 - within-camera mismatches / TP)
        * (1 - handover mismatches / handovers)
where a handover is a pair of consecutive matched detections of one
ground-truth object in two different cameras.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, UndefinedMetricError


@dataclass(frozen=True)
class BoxRecord:
    t: int
    camera_id: int
    obj_id: int
    bbox: tuple[float, float, float, float]


@dataclass
class EvalInput:
    ground_truth: list[BoxRecord]
    predictions: list[BoxRecord]
    iou_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")


def iou(a, b) -> float:
    """Intersection over union of two [x, y, w, h] boxes.

    Areas are derived from the same corner coordinates as the
    intersection, so identical boxes score exactly 1.0.
    """
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ax2, ay2, bx2, by2 = ax + aw, ay + ah, bx + bw, by + bh
    ix = max(0.0, min(ax2, bx2) - max(ax, bx))
    iy = max(0.0, min(ay2, by2) - max(ay, by))
    inter = ix * iy
    union = (ax2 - ax) * (ay2 - ay) + (bx2 - bx) * (by2 - by) - inter
    return inter / union if union > 0 else 0.0


@dataclass
class _FrameMatch:
    t: int
    camera_id: int
    matches: list[tuple[int, int, float]]  # (gt id, pred id, IoU)
    n_gt: int
    n_pred: int
    switches: int


def _group(records: list[BoxRecord]) -> dict[tuple[int, int], list[BoxRecord]]:
    out: dict[tuple[int, int], list[BoxRecord]] = {}
    for r in records:
        out.setdefault((r.camera_id, r.t), []).append(r)
    return out


def match_frames(inp: EvalInput) -> list[_FrameMatch]:
    """Per-(camera, frame) correspondence under the pinned CLEAR procedure."""
    gt_by = _group(inp.ground_truth)
    pr_by = _group(inp.predictions)
    cameras = sorted({k[0] for k in gt_by} | {k[0] for k in pr_by})
    results = []
    for cam in cameras:
        times = sorted({k[1] for k in list(gt_by) + list(pr_by) if k[0] == cam})
        carry: dict[int, int] = {}
        for t in times:
            g = sorted(gt_by.get((cam, t), []), key=lambda r: r.obj_id)
            p = sorted(pr_by.get((cam, t), []), key=lambda r: r.obj_id)
            used_g: set[int] = set()
            used_p: set[int] = set()
            matches: list[tuple[int, int, float]] = []
            # keep persistent correspondences that still hold
            for gi, grec in enumerate(g):
                want = carry.get(grec.obj_id)
                if want is None:
                    continue
                for pi, prec in enumerate(p):
                    if pi in used_p or prec.obj_id != want:
                        continue
                    ov = iou(grec.bbox, prec.bbox)
                    if ov >= inp.iou_threshold:
                        matches.append((grec.obj_id, prec.obj_id, ov))
                        used_g.add(gi)
                        used_p.add(pi)
                    break
            # optimal assignment on the remainder: count first, IoU second
            rem_g = [i for i in range(len(g)) if i not in used_g]
            rem_p = [i for i in range(len(p)) if i not in used_p]
            if rem_g and rem_p:
                cost = np.zeros((len(rem_g), len(rem_p)))
                overlap = np.zeros((len(rem_g), len(rem_p)))
                for a, gi in enumerate(rem_g):
                    for b, pi in enumerate(rem_p):
                        ov = iou(g[gi].bbox, p[pi].bbox)
                        if ov >= inp.iou_threshold:
                            cost[a, b] = -(1.0 + ov)
                            overlap[a, b] = ov
                rows, cols = linear_sum_assignment(cost)
                for a, b in zip(rows, cols):
                    if cost[a, b] < 0:
                        gi, pi = rem_g[a], rem_p[b]
                        matches.append((g[gi].obj_id, p[pi].obj_id, overlap[a, b]))
            switches = 0
            for gid, pid, _ in matches:
                prev = carry.get(gid)
                if prev is not None and prev != pid:
                    switches += 1
                carry[gid] = pid
            matches.sort()
            results.append(_FrameMatch(t, cam, matches, len(g), len(p), switches))
    return results


@dataclass
class ClearResult:
    mota: float
    motp: float
    ids: int
    fp: int
    fn: int
    tp: int
    gt_total: int


def clear_mot(inp: EvalInput) -> ClearResult:
    """CLEAR MOT scores over all cameras; undefined without ground truth."""
    gt_total = len(inp.ground_truth)
    if gt_total == 0:
        raise UndefinedMetricError("MOTA is undefined with zero ground-truth boxes")
    frames = match_frames(inp)
    tp = sum(len(f.matches) for f in frames)
    fp = sum(f.n_pred - len(f.matches) for f in frames)
    fn = sum(f.n_gt - len(f.matches) for f in frames)
    ids = sum(f.switches for f in frames)
    iou_sum = math.fsum(ov for f in frames for _, _, ov in f.matches)
    return ClearResult(
        mota=1.0 - (fp + fn + ids) / gt_total,
        motp=iou_sum / tp if tp else 0.0,
        ids=ids,
        fp=fp,
        fn=fn,
        tp=tp,
        gt_total=gt_total,
    )


@dataclass
class IdScores:
    idf1: float
    idp: float
    idr: float
    idtp: int
    idfp: int
    idfn: int


def id_scores(inp: EvalInput) -> IdScores:
    """Identity precision/recall/F1 under the best global identity matching."""
    counts: dict[tuple[int, int], int] = {}
    gt_by = _group(inp.ground_truth)
    pr_by = _group(inp.predictions)
    for key, gts in gt_by.items():
        preds = pr_by.get(key, [])
        for grec in gts:
            for prec in preds:
                if iou(grec.bbox, prec.bbox) >= inp.iou_threshold:
                    pair = (grec.obj_id, prec.obj_id)
                    counts[pair] = counts.get(pair, 0) + 1
    gt_ids = sorted({r.obj_id for r in inp.ground_truth})
    pr_ids = sorted({r.obj_id for r in inp.predictions})
    idtp = 0
    if counts:
        c = np.zeros((len(gt_ids), len(pr_ids)))
        gpos = {g: i for i, g in enumerate(gt_ids)}
        ppos = {p: i for i, p in enumerate(pr_ids)}
        for (g, p), n in counts.items():
            c[gpos[g], ppos[p]] = n
        rows, cols = linear_sum_assignment(-c)
        idtp = int(c[rows, cols].sum())
    idfp = len(inp.predictions) - idtp
    idfn = len(inp.ground_truth) - idtp
    denom = 2 * idtp + idfp + idfn
    return IdScores(
        idf1=2 * idtp / denom if denom else 0.0,
        idp=idtp / len(inp.predictions) if inp.predictions else 0.0,
        idr=idtp / len(inp.ground_truth) if inp.ground_truth else 0.0,
        idtp=idtp,
        idfp=idfp,
        idfn=idfn,
    )


@dataclass
class MctaResult:
    mcta: float
    f1: float
    within_factor: float
    handover_factor: float
    handovers: int
    handover_mismatches: int
    warnings: list[str] = field(default_factory=list)


def mcta(inp: EvalInput) -> MctaResult:
    """Multi-camera tracking accuracy (detection F1 discounted by mismatches)."""
    frames = match_frames(inp)
    tp = sum(len(f.matches) for f in frames)
    fp = sum(f.n_pred - len(f.matches) for f in frames)
    fn = sum(f.n_gt - len(f.matches) for f in frames)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    within_miss = sum(f.switches for f in frames)
    within_factor = 1.0 - within_miss / tp if tp else 1.0

    timeline: dict[int, list[tuple[int, int, int]]] = {}
    for f in frames:
        for gid, pid, _ in f.matches:
            timeline.setdefault(gid, []).append((f.t, f.camera_id, pid))
    handovers = 0
    handover_miss = 0
    for gid, seq in sorted(timeline.items()):
        seq.sort()
        for (t0, c0, p0), (t1, c1, p1) in zip(seq, seq[1:]):
            if c0 != c1:
                handovers += 1
                if p0 != p1:
                    handover_miss += 1
    warnings = []
    cameras = {r.camera_id for r in inp.ground_truth} | {r.camera_id for r in inp.predictions}
    if len(cameras) < 2:
        warnings.append("single camera: handover factor is undefined, reported as 1")
    handover_factor = 1.0 - handover_miss / handovers if handovers else 1.0
    return MctaResult(
        mcta=f1 * within_factor * handover_factor,
        f1=f1,
        within_factor=within_factor,
        handover_factor=handover_factor,
        handovers=handovers,
        handover_mismatches=handover_miss,
        warnings=warnings,
    )


@dataclass
class EvalReport:
    mota: float
    motp: float
    ids: int
    fp: int
    fn: int
    idf1: float
    idp: float
    idr: float
    mcta: float
    per_camera: dict[int, dict]
    warnings: list[str]

    CSV_COLUMNS = ("MOTA", "MOTP", "IDF1", "IDP", "IDR", "IDS", "MCTA")

    def csv_row(self) -> list:
        return [self.mota, self.motp, self.idf1, self.idp, self.idr, self.ids, self.mcta]

    def to_json_dict(self) -> dict:
        return {
            "MOTA": self.mota, "MOTP": self.motp, "IDS": self.ids,
            "FP": self.fp, "FN": self.fn,
            "IDF1": self.idf1, "IDP": self.idp, "IDR": self.idr,
            "MCTA": self.mcta,
            "per_camera": {str(c): v for c, v in sorted(self.per_camera.items())},
            "warnings": self.warnings,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)


def evaluate(inp: EvalInput) -> EvalReport:
    """Full report: CLEAR MOT + ID scores + MCTA, with a per-camera breakdown."""
    clear = clear_mot(inp)
    ids_res = id_scores(inp)
    mc = mcta(inp)
    per_camera: dict[int, dict] = {}
    cameras = sorted({r.camera_id for r in inp.ground_truth} | {r.camera_id for r in inp.predictions})
    for cam in cameras:
        sub = EvalInput(
            [r for r in inp.ground_truth if r.camera_id == cam],
            [r for r in inp.predictions if r.camera_id == cam],
            inp.iou_threshold,
        )
        if sub.ground_truth:
            c = clear_mot(sub)
            per_camera[cam] = {
                "MOTA": c.mota, "MOTP": c.motp, "IDS": c.ids, "FP": c.fp, "FN": c.fn,
            }
        else:
            per_camera[cam] = {"MOTA": None, "MOTP": 0.0, "IDS": 0,
                               "FP": len(sub.predictions), "FN": 0}
    return EvalReport(
        mota=clear.mota, motp=clear.motp, ids=clear.ids, fp=clear.fp, fn=clear.fn,
        idf1=ids_res.idf1, idp=ids_res.idp, idr=ids_res.idr,
        mcta=mc.mcta, per_camera=per_camera, warnings=list(mc.warnings),
    )
