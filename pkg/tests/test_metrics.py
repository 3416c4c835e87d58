import itertools
import math

import numpy as np
import pytest

from camlink.errors import ConfigError, UndefinedMetricError
from camlink.metrics import (BoxRecord, EvalInput, clear_mot, evaluate, id_scores,
                             iou, match_frames, mcta)

UNIT = (0.1, 0.1, 0.2, 0.2)


def rec(t, cam, obj, box=UNIT):
    return BoxRecord(t=t, camera_id=cam, obj_id=obj, bbox=box)


def shifted(box, dx):
    x, y, w, h = box
    return (x + dx, y, w, h)


# ---------------------------------------------------------------------------
# brute-force oracles (test-only)


def _best_assignment(g, p, thr, used_p):
    """Exhaustively pick the feasible injective matching maximizing
    (match count, total IoU)."""
    free_p = [i for i in range(len(p)) if i not in used_p]
    best = ([], 0, 0.0)
    for k in range(min(len(g), len(free_p)), -1, -1):
        for g_sub in itertools.combinations(range(len(g)), k):
            for p_perm in itertools.permutations(free_p, k):
                pairs = []
                total = 0.0
                ok = True
                for gi, pi in zip(g_sub, p_perm):
                    ov = iou(g[gi].bbox, p[pi].bbox)
                    if ov < thr:
                        ok = False
                        break
                    pairs.append((gi, pi, ov))
                    total = total + ov
                if ok and (len(pairs), total) > (best[1], best[2]):
                    best = (pairs, len(pairs), total)
        if best[1] == k and k > 0:
            break
    return best[0]


def oracle_frames(inp):
    """Same pinned procedure, with the assignment step enumerated."""
    by_cam_t_g: dict = {}
    by_cam_t_p: dict = {}
    for r in inp.ground_truth:
        by_cam_t_g.setdefault((r.camera_id, r.t), []).append(r)
    for r in inp.predictions:
        by_cam_t_p.setdefault((r.camera_id, r.t), []).append(r)
    cams = sorted({k[0] for k in by_cam_t_g} | {k[0] for k in by_cam_t_p})
    out = []
    for cam in cams:
        times = sorted({k[1] for k in list(by_cam_t_g) + list(by_cam_t_p) if k[0] == cam})
        carry = {}
        for t in times:
            g = sorted(by_cam_t_g.get((cam, t), []), key=lambda r: r.obj_id)
            p = sorted(by_cam_t_p.get((cam, t), []), key=lambda r: r.obj_id)
            matches, used_g, used_p = [], set(), set()
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
            rem_g = [g[i] for i in range(len(g)) if i not in used_g]
            for gi, pi, ov in _best_assignment(rem_g, p, inp.iou_threshold, used_p):
                matches.append((rem_g[gi].obj_id, p[pi].obj_id, ov))
                used_p.add(pi)
            switches = 0
            for gid, pid, _ in matches:
                if carry.get(gid) is not None and carry[gid] != pid:
                    switches += 1
                carry[gid] = pid
            out.append((t, cam, sorted(matches), len(g), len(p), switches))
    return out


def oracle_clear(inp):
    frames = oracle_frames(inp)
    tp = sum(len(m) for _, _, m, _, _, _ in frames)
    fp = sum(np_ - len(m) for _, _, m, _, np_, _ in frames)
    fn = sum(ng - len(m) for _, _, m, ng, _, _ in frames)
    ids = sum(sw for *_, sw in frames)
    gt_total = len(inp.ground_truth)
    iou_sum = math.fsum(ov for _, _, m, _, _, _ in frames for _, _, ov in m)
    return {
        "mota": 1.0 - (fp + fn + ids) / gt_total,
        "motp": iou_sum / tp if tp else 0.0,
        "ids": ids, "fp": fp, "fn": fn, "tp": tp,
    }


def oracle_idf1(inp):
    counts = {}
    for grec in inp.ground_truth:
        for prec in inp.predictions:
            if (grec.t, grec.camera_id) != (prec.t, prec.camera_id):
                continue
            if iou(grec.bbox, prec.bbox) >= inp.iou_threshold:
                counts[(grec.obj_id, prec.obj_id)] = counts.get((grec.obj_id, prec.obj_id), 0) + 1
    gt_ids = sorted({r.obj_id for r in inp.ground_truth})
    pr_ids = sorted({r.obj_id for r in inp.predictions})
    best = 0
    k = min(len(gt_ids), len(pr_ids))
    for size in range(k + 1):
        for g_sub in itertools.combinations(gt_ids, size):
            for p_perm in itertools.permutations(pr_ids, size):
                best = max(best, sum(counts.get((g, p), 0) for g, p in zip(g_sub, p_perm)))
    idtp = best
    idfp = len(inp.predictions) - idtp
    idfn = len(inp.ground_truth) - idtp
    denom = 2 * idtp + idfp + idfn
    return {"idtp": idtp, "idf1": 2 * idtp / denom if denom else 0.0}


def oracle_mcta(inp):
    frames = oracle_frames(inp)
    tp = sum(len(m) for _, _, m, _, _, _ in frames)
    fp = sum(np_ - len(m) for _, _, m, _, np_, _ in frames)
    fn = sum(ng - len(m) for _, _, m, ng, _, _ in frames)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    within = sum(sw for *_, sw in frames)
    timeline = {}
    for t, cam, matches, _, _, _ in frames:
        for gid, pid, _ in matches:
            timeline.setdefault(gid, []).append((t, cam, pid))
    handovers = mismatches = 0
    for seq in timeline.values():
        seq.sort()
        for (t0, c0, p0), (t1, c1, p1) in zip(seq, seq[1:]):
            if c0 != c1:
                handovers += 1
                mismatches += p0 != p1
    wfac = 1.0 - within / tp if tp else 1.0
    hfac = 1.0 - mismatches / handovers if handovers else 1.0
    return f1 * wfac * hfac


def random_eval_input(rng):
    n_ids = int(rng.integers(1, 4))
    n_frames = int(rng.integers(1, 6))
    n_cams = int(rng.integers(1, 3))
    gt, preds = [], []
    id_map = {i: int(rng.integers(0, 4)) for i in range(n_ids)}
    for t in range(n_frames):
        for cam in range(n_cams):
            for i in range(n_ids):
                if rng.random() < 0.3:
                    continue
                box = (float(rng.uniform(0, 0.7)), float(rng.uniform(0, 0.7)),
                       float(rng.uniform(0.1, 0.3)), float(rng.uniform(0.1, 0.3)))
                gt.append(rec(t, cam, i, box))
                r = rng.random()
                if r < 0.15:
                    continue  # miss
                jitter = float(rng.uniform(0, 0.05))
                pid = id_map[i] if rng.random() < 0.8 else int(rng.integers(0, 4))
                preds.append(rec(t, cam, pid, shifted(box, jitter)))
            if rng.random() < 0.2:  # stray false positive
                preds.append(rec(t, cam, int(rng.integers(0, 6)),
                                 (float(rng.uniform(0, 0.8)), float(rng.uniform(0, 0.8)),
                                  0.15, 0.15)))
    if not gt:
        gt.append(rec(0, 0, 0))
    return EvalInput(gt, preds)


# ---------------------------------------------------------------------------


class TestIoU:
    def test_identical(self):
        assert iou(UNIT, UNIT) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 0.1, 0.1), (0.5, 0.5, 0.1, 0.1)) == 0.0

    def test_half_overlap_hand_computed(self):
        # boxes 2x1 overlapping on a 1x1 region: inter 1, union 3
        assert math.isclose(iou((0, 0, 2, 1), (1, 0, 2, 1)), 1.0 / 3.0)


class TestClearMot:
    def test_perfect(self):
        gt = [rec(t, 0, 1) for t in range(3)]
        preds = [rec(t, 0, 7) for t in range(3)]
        res = clear_mot(EvalInput(gt, preds))
        assert res.mota == 1.0 and res.ids == 0 and res.motp == 1.0

    def test_one_switch_hand_counted(self):
        gt = [rec(t, 0, 1) for t in range(3)]
        preds = [rec(0, 0, 5), rec(1, 0, 5), rec(2, 0, 6)]
        res = clear_mot(EvalInput(gt, preds))
        assert res.ids == 1
        assert math.isclose(res.mota, 1.0 - 1.0 / 3.0)

    def test_empty_predictions(self):
        gt = [rec(t, 0, 1) for t in range(4)]
        res = clear_mot(EvalInput(gt, []))
        assert res.mota == 0.0 and res.fn == 4 and res.fp == 0

    def test_zero_gt_undefined(self):
        with pytest.raises(UndefinedMetricError):
            clear_mot(EvalInput([], [rec(0, 0, 1)]))

    def test_false_positive_strictly_decreases_mota(self):
        gt = [rec(t, 0, 1) for t in range(3)]
        preds = [rec(t, 0, 5) for t in range(3)]
        base = clear_mot(EvalInput(gt, preds)).mota
        worse = clear_mot(EvalInput(gt, preds + [rec(1, 0, 9, (0.7, 0.7, 0.1, 0.1))])).mota
        assert worse < base

    def test_persistent_match_preferred_over_higher_iou(self):
        # t=0 establishes 1<->5; at t=1 a second pred with higher IoU appears,
        # but the previous correspondence still clears the threshold and wins
        gt = [rec(0, 0, 1), rec(1, 0, 1)]
        preds = [
            rec(0, 0, 5),
            rec(1, 0, 5, shifted(UNIT, 0.05)),
            rec(1, 0, 6, UNIT),
        ]
        res = clear_mot(EvalInput(gt, preds))
        assert res.ids == 0 and res.fp == 1

    def test_iou_threshold_validated(self):
        with pytest.raises(ConfigError):
            EvalInput([], [], iou_threshold=0.0)


class TestIdScores:
    def test_perfect(self):
        gt = [rec(t, 0, 1) for t in range(3)]
        preds = [rec(t, 0, 9) for t in range(3)]
        res = id_scores(EvalInput(gt, preds))
        assert res.idf1 == res.idp == res.idr == 1.0

    def test_one_switch_best_matching(self):
        gt = [rec(t, 0, 1) for t in range(3)]
        preds = [rec(0, 0, 5), rec(1, 0, 5), rec(2, 0, 6)]
        res = id_scores(EvalInput(gt, preds))
        assert (res.idtp, res.idfp, res.idfn) == (2, 1, 1)
        assert math.isclose(res.idf1, 2.0 / 3.0)

    def test_disjoint_ids_zero(self):
        gt = [rec(0, 0, 1)]
        preds = [rec(0, 0, 2, (0.7, 0.7, 0.1, 0.1))]  # no overlap
        assert id_scores(EvalInput(gt, preds)).idf1 == 0.0


class TestMcta:
    def test_perfect_two_cameras(self):
        gt = [rec(0, 0, 1), rec(1, 1, 1)]
        preds = [rec(0, 0, 5), rec(1, 1, 5)]
        assert mcta(EvalInput(gt, preds)).mcta == 1.0

    def test_one_handover_mismatch_of_two(self):
        # identity 1: cam0@t0 -> cam1@t1 (mismatch), identity 2: cam0@t0 -> cam1@t1 (kept)
        gt = [rec(0, 0, 1), rec(1, 1, 1),
              rec(0, 0, 2, shifted(UNIT, 0.5)), rec(1, 1, 2, shifted(UNIT, 0.5))]
        preds = [rec(0, 0, 5), rec(1, 1, 6),
                 rec(0, 0, 7, shifted(UNIT, 0.5)), rec(1, 1, 7, shifted(UNIT, 0.5))]
        res = mcta(EvalInput(gt, preds))
        assert res.handovers == 2 and res.handover_mismatches == 1
        assert res.f1 == 1.0 and res.within_factor == 1.0
        assert res.mcta == 0.5

    def test_zero_recall(self):
        gt = [rec(0, 0, 1), rec(0, 1, 2)]
        assert mcta(EvalInput(gt, [])).mcta == 0.0

    def test_single_camera_warns(self):
        gt = [rec(0, 0, 1)]
        preds = [rec(0, 0, 5)]
        res = mcta(EvalInput(gt, preds))
        assert res.handover_factor == 1.0
        assert any("single camera" in w for w in res.warnings)


class TestOracleAgreement:
    def test_clear_matches_brute_force(self):
        rng = np.random.default_rng(100)
        for _ in range(60):
            inp = random_eval_input(rng)
            got = clear_mot(inp)
            want = oracle_clear(inp)
            assert (got.ids, got.fp, got.fn, got.tp) == \
                   (want["ids"], want["fp"], want["fn"], want["tp"])
            assert got.mota == want["mota"]
            assert got.motp == want["motp"]

    def test_idf1_matches_brute_force(self):
        rng = np.random.default_rng(200)
        for _ in range(60):
            inp = random_eval_input(rng)
            got = id_scores(inp)
            want = oracle_idf1(inp)
            assert got.idtp == want["idtp"]
            assert got.idf1 == want["idf1"]

    def test_mcta_matches_brute_force(self):
        rng = np.random.default_rng(300)
        for _ in range(60):
            inp = random_eval_input(rng)
            assert mcta(inp).mcta == oracle_mcta(inp)

    def test_pred_id_relabeling_invariance(self):
        rng = np.random.default_rng(400)
        for _ in range(20):
            inp = random_eval_input(rng)
            ids = sorted({r.obj_id for r in inp.predictions})
            mapping = {p: 1000 + i * 7 for i, p in enumerate(ids)}
            relabeled = EvalInput(
                inp.ground_truth,
                [BoxRecord(r.t, r.camera_id, mapping[r.obj_id], r.bbox)
                 for r in inp.predictions],
                inp.iou_threshold,
            )
            a, b = evaluate(inp), evaluate(relabeled)
            assert (a.mota, a.motp, a.ids, a.idf1, a.idp, a.idr, a.mcta) == \
                   (b.mota, b.motp, b.ids, b.idf1, b.idp, b.idr, b.mcta)


class TestReport:
    def test_csv_and_json(self, tmp_path):
        gt = [rec(t, c, 1) for t in range(2) for c in range(2)]
        preds = [rec(t, c, 5) for t in range(2) for c in range(2)]
        report = evaluate(EvalInput(gt, preds))
        assert report.csv_row() == [1.0, 1.0, 1.0, 1.0, 1.0, 0, 1.0]
        doc = report.to_json_dict()
        assert doc["MOTA"] == 1.0 and set(doc["per_camera"]) == {"0", "1"}
