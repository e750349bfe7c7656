#!/usr/bin/env python3
"""Writes the synthetic detector-response fixture and its golden annotations.

The golden file is computed here, independently of the C++ code: similarities,
labels and the zero-run window scan are reimplemented below.

usage: make_response_fixture.py <fixture-dir>
"""
import json
import math
import random
import shutil
import sys
from pathlib import Path

import numpy as np

W_IMG = H_IMG = 128
LEVELS = 64
T = 0.75
WINDOW = 3
MIN_KP_AREA = 32.0 * 32.0
FRAME = 224.0
K = [.026, .025, .025, .035, .035, .079, .079, .072, .072, .062, .062, .107, .107, .087, .087, .089, .089]
K = [2 * k for k in K]
TASKS = ["od", "is", "kpd"]

IMAGES = {
    "img_a": ("astronaut", [(10, 12, 48, 64), (70, 20, 40, 50), (60, 84, 24, 30)]),
    "img_b": ("coffee", [(8, 40, 56, 48), (72, 64, 44, 52)]),
    "img_c": ("chelsea", [(20, 16, 72, 80), (96, 96, 26, 28), (4, 100, 40, 24)]),
}


# ---------------------------------------------------------------------------
# geometry and similarity (oracle)


def box_iou(a, b):
    ix = max(0.0, min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def rect_mask(box):
    m = np.zeros((H_IMG, W_IMG), dtype=np.uint8)
    x0, y0 = int(round(box[0])), int(round(box[1]))
    x1, y1 = int(round(box[0] + box[2])), int(round(box[1] + box[3]))
    m[max(0, y0):min(H_IMG, y1), max(0, x0):min(W_IMG, x1)] = 1
    return m


def mask_iou(a, b):
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    return 1.0 if union == 0 else inter / union


def oks(ref, cand, area):
    total, n = 0.0, 0
    for i in range(17):
        if ref[i][2] == 0:
            continue
        dx, dy = ref[i][0] - cand[i][0], ref[i][1] - cand[i][1]
        total += math.exp(-(dx * dx + dy * dy) / (2.0 * area * K[i] * K[i]))
        n += 1
    return min(1.0, max(0.0, total / n))


def runs_of(mask):
    flat = mask.flatten(order="F")
    runs, cur, n = [], 0, 0
    for v in flat:
        if v != cur:
            runs.append(n)
            n, cur = 0, v
        n += 1
    runs.append(n)
    return runs


def rle_string(runs):
    out = []
    for i, x in enumerate(runs):
        if i > 2:
            x -= runs[i - 2]
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def keypoints_for(box, rng):
    pts = []
    for i in range(17):
        fx = 0.15 + 0.7 * ((i * 7) % 17) / 16.0
        fy = 0.1 + 0.8 * i / 16.0
        vis = 0 if i in (3, 4) else 2
        pts.append([round(box[0] + fx * box[2], 2), round(box[1] + fy * box[3], 2), vis])
    return pts


# ---------------------------------------------------------------------------
# response generation


class ObjectPlan:
    def __init__(self, oid, box, rng):
        self.oid = oid
        self.box = box
        self.kp = keypoints_for(box, rng)
        self.dirs = [(math.cos(a), math.sin(a)) for a in (rng.uniform(0, 2 * math.pi) for _ in range(17))]
        self.plan = {}
        for t in TASKS:
            self.plan[t] = {
                "strength": rng.uniform(0.5, 2.5),
                "power": rng.uniform(1.0, 2.5),
                "dips": set(rng.sample(range(2, 60), 2)),
                "flip": rng.randrange(30, 70),
                "vanish": rng.randrange(45, 80),
            }


def distorted(plan, t, q):
    p = plan.plan[t]
    frac = (q / 63.0) ** p["power"]
    shift = p["strength"] * 20.0 * frac
    conf = round(0.99 - 0.15 * q / 63.0, 4)
    if q in p["dips"]:
        conf = 0.6
    cls = 3 if q >= p["flip"] and q % 2 == 0 else 1
    return shift, conf, cls


def shifted_box(box, shift):
    return [round(box[0] + shift, 3), round(box[1] + 0.5 * shift, 3), round(box[2] * (1 + 0.01 * shift), 3), box[3]]


def detection(plan, t, shift, conf, cls, use_string_rle):
    box = shifted_box(plan.box, shift) if shift else list(map(float, plan.box))
    d = {"object_id": plan.oid, "class_id": cls, "confidence": conf, "box": box}
    if t == "is":
        runs = runs_of(rect_mask(box))
        d["rle"] = {"size": [H_IMG, W_IMG], "counts": rle_string(runs) if use_string_rle else runs}
    elif t == "kpd":
        pts = [[round(x + shift * dx, 3), round(y + shift * dy, 3), v] for (x, y, v), (dx, dy) in zip(plan.kp, plan.dirs)]
        d["keypoints"] = [c for p in pts for c in p]
        d["area"] = float(plan.box[2] * plan.box[3])
    return d


def similarity(t, orig, cand):
    if t == "od":
        return box_iou(orig["box"], cand["box"])
    if t == "is":
        return mask_iou(rect_mask(orig["box"]), rect_mask(cand["box"]))
    ref = [orig["keypoints"][3 * i:3 * i + 3] for i in range(17)]
    c = [cand["keypoints"][3 * i:3 * i + 3] for i in range(17)]
    return oks(ref, c, orig["area"])


def jrd_from_labels(labels, w):
    """Brute-force window scan."""
    for start in range(LEVELS):
        end = min(LEVELS, start + w)
        if all(labels[i] == 0 for i in range(start, end)):
            if end - start == w or all(labels[i] == 0 for i in range(start, LEVELS)):
                return start - 1
    return 63


def attrs(box):
    sx, sy = FRAME / W_IMG, FRAME / H_IMG
    w, h = box[2] * sx, box[3] * sy
    cx, cy = (box[0] + box[2] / 2) * sx, (box[1] + box[3] / 2) * sy
    return {"s": w * h / (FRAME * FRAME), "x0": cx / FRAME, "y0": cy / FRAME}


def main(out_dir):
    out = Path(out_dir)
    root = Path(__file__).resolve().parent.parent
    resp = out / "responses"
    if resp.exists():
        shutil.rmtree(resp)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240601)
    golden = []
    for image_id, (src, boxes) in IMAGES.items():
        shutil.copyfile(root / "tests" / "data" / "corpus" / f"{src}.ppm", out / "images" / f"{image_id}.ppm")
        plans = [ObjectPlan(i, b, rng) for i, b in enumerate(boxes)]
        distractor = [100.0, 2.0, 20.0, 20.0]
        per_task = {}
        for t in TASKS:
            d = resp / image_id / t
            d.mkdir(parents=True)
            originals = [detection(p, t, 0.0, 0.99, 1, False) for p in plans]
            kept = [o for o, p in zip(originals, plans) if t != "kpd" or p.box[2] * p.box[3] >= MIN_KP_AREA]
            doc = {"schema_version": 1, "image_id": image_id, "qp": "orig", "task": t, "width": W_IMG, "height": H_IMG,
                   "detections": originals}
            (d / "orig.json").write_text(json.dumps(doc, indent=1) + "\n")
            traces = {o["object_id"]: [] for o in kept}
            for q in range(LEVELS):
                dets = []
                for p in plans:
                    if q >= p.plan[t]["vanish"]:
                        continue
                    shift, conf, cls = distorted(p, t, q)
                    dets.append(detection(p, t, shift, conf, cls, q % 3 == 0))
                dets.append(detection(ObjectPlan(99, distractor, random.Random(q)), t, 0.0, 0.9, 1, False))
                dets[-1].pop("object_id")
                doc = {"image_id": image_id, "qp": q, "task": t, "detections": dets}
                (d / f"q{q:02d}.json").write_text(json.dumps(doc) + "\n")
                for o in kept:
                    best, best_s = None, 0.0
                    for c in dets:
                        s = similarity(t, o, c)
                        if best is None or s > best_s:
                            best, best_s = c, s
                    lab = best is not None and best["class_id"] == o["class_id"] and best["confidence"] > T and best_s > T
                    traces[o["object_id"]].append(1 if lab else 0)
            per_task[t] = {oid: jrd_from_labels(lbl, WINDOW) for oid, lbl in traces.items()}
        for p in plans:
            jrd = {}
            for t in TASKS:
                v = per_task[t].get(p.oid, -1)
                if v >= 0:
                    jrd[t] = v
            golden.append({"image_id": image_id, "object_id": p.oid, "box": [float(v) for v in p.box],
                           "attrs": attrs(p.box), "jrd": jrd})
    golden.sort(key=lambda a: (a["image_id"], a["object_id"]))
    doc = {"schema_version": 1, "threshold": T, "window": WINDOW, "annotations": golden}
    (out / "golden_annotations.json").write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
