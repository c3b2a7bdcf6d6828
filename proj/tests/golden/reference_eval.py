#!/usr/bin/env python3
"""Standalone reference evaluator for the golden fixture.

Shares no code with the C++ library. IoU uses exact rationals.

  reference_eval.py make-detections ANNOTATIONS OUT_DIR [--seed N]
  reference_eval.py report ANNOTATIONS DETECTIONS_DIR [--out FILE]
"""

import argparse
import os
import random
import sys
from fractions import Fraction

SMALL_MAX = 24
MEDIUM_MAX = 64
IOU_THRESHOLD = Fraction(1, 2)


def parse_annotations(path):
    with open(path) as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    images, i = [], 0
    while i < len(lines):
        name = lines[i]
        count = int(lines[i + 1])
        boxes = []
        for k in range(count):
            x, y, w, h = (int(v) for v in lines[i + 2 + k].split(" "))
            boxes.append((Fraction(x), Fraction(y), Fraction(x + w), Fraction(y + h)))
        stem = os.path.splitext(os.path.basename(name))[0]
        images.append((stem, boxes))
        i += 2 + count
    return images


def parse_detections(path):
    dets = []
    with open(path) as f:
        for line in f.read().splitlines():
            fields = line.split(" ")
            dets.append((tuple(Fraction(v) for v in fields[:4]), Fraction(fields[4])))
    return dets


def iou(a, b):
    iw = max(Fraction(0), min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(Fraction(0), min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else Fraction(0)


def split_of(height):
    if height < SMALL_MAX:
        return 0
    if height < MEDIUM_MAX:
        return 1
    return 2


def ap_and_points(flags, n_gt):
    if n_gt == 0:
        return None, []
    points, tp = [], 0
    for i, f in enumerate(flags):
        tp += f
        points.append((Fraction(tp, n_gt), Fraction(tp, i + 1)))
    ap, prev = Fraction(0), Fraction(0)
    for i, (r, _) in enumerate(points):
        best = max(p for _, p in points[i:])
        ap += (r - prev) * best
        prev = r
    return ap, points


def evaluate(images, detections):
    scored = []
    n_gt = [0, 0, 0]
    for img_index, (stem, gts) in enumerate(images):
        for g in gts:
            n_gt[split_of(g[3] - g[1])] += 1
        dets = detections.get(stem, [])
        order = sorted(range(len(dets)), key=lambda k: -dets[k][1])  # stable
        taken = [False] * len(gts)
        for k in order:
            box, score = dets[k]
            best, best_iou = None, IOU_THRESHOLD
            for g, gt in enumerate(gts):
                if taken[g]:
                    continue
                v = iou(box, gt)
                if v > best_iou:
                    best, best_iou = g, v
            if best is not None:
                taken[best] = True
            scored.append((score, img_index, k, best, box[3] - box[1], gts))
    scored.sort(key=lambda s: (-s[0], s[1], s[2]))
    overall, splits = [], [[], [], []]
    for score, _, _, gt, height, gts in scored:
        overall.append(gt is not None)
        if gt is not None:
            splits[split_of(gts[gt][3] - gts[gt][1])].append(True)
        else:
            splits[split_of(height)].append(False)
    return overall, splits, n_gt


def fmt(x):
    return "%.6f" % float(x)


def report(images, detections):
    overall, splits, n_gt = evaluate(images, detections)
    total_gt = sum(n_gt)
    lines = []
    ap, points = ap_and_points(overall, total_gt)
    for name, flags, n in [("ap_overall", overall, total_gt), ("ap_small", splits[0], n_gt[0]),
                           ("ap_medium", splits[1], n_gt[1]), ("ap_large", splits[2], n_gt[2])]:
        a, _ = ap_and_points(flags, n)
        lines.append("%s %s" % (name, "undefined" if a is None else fmt(a)))
    lines.append("n_gt %d" % total_gt)
    lines.append("n_det %d" % len(overall))
    lines.append("PR recall precision")
    lines += ["%s %s" % (fmt(r), fmt(p)) for r, p in points]
    lines.append("ROC false_positives true_positive_rate")
    if total_gt > 0:
        tp = fp = 0
        for f in overall:
            tp, fp = tp + f, fp + (not f)
            lines.append("%d %s" % (fp, fmt(Fraction(tp, total_gt))))
    return "".join(line + "\n" for line in lines)


def quarter(rng, lo, hi):
    return Fraction(rng.randint(int(lo * 4), int(hi * 4)), 4)


def make_detections(images, out_dir, seed):
    """Jittered hits, duplicates, exact-threshold boxes and background false positives."""
    rng = random.Random(seed)
    os.makedirs(out_dir, exist_ok=True)
    for idx, (stem, gts) in enumerate(images):
        if idx % 7 == 6:
            continue  # some images have no detection file at all
        dets = []
        for gt in gts:
            x1, y1, x2, y2 = gt
            w, h = x2 - x1, y2 - y1
            kind = rng.random()
            if kind < 0.55:
                j = lambda s: quarter(rng, -0.1 * s, 0.1 * s)
                dets.append(((x1 + j(w), y1 + j(h), x2 + j(w), y2 + j(h)), rng.randint(40, 99) / 100))
            elif kind < 0.7:
                # IoU exactly 1/2: same width, double height
                dets.append(((x1, y1, x2, y1 + 2 * h), rng.randint(40, 99) / 100))
            elif kind < 0.85:
                dets.append(((x1, y1, x2, y2), 0.75))
                dets.append(((x1 + quarter(rng, 0, 2), y1, x2, y2), 0.75))  # duplicate, tied score
            # else: missed face
        for _ in range(rng.randint(0, 3)):
            w, h = quarter(rng, 6, 70), quarter(rng, 6, 90)
            x, y = quarter(rng, 0, 160 - w), quarter(rng, 0, 160 - h)
            dets.append(((x, y, x + w, y + h), rng.randint(1, 60) / 100))
        dets.sort(key=lambda d: -d[1])
        with open(os.path.join(out_dir, stem + ".txt"), "w") as f:
            for box, score in dets:
                f.write(" ".join(fmt(v) for v in box) + " " + fmt(score) + "\n")


def main(argv):
    parser = argparse.ArgumentParser()
    sub = parser.add_subparsers(dest="cmd", required=True)
    mk = sub.add_parser("make-detections")
    mk.add_argument("annotations")
    mk.add_argument("out_dir")
    mk.add_argument("--seed", type=int, default=2024)
    rp = sub.add_parser("report")
    rp.add_argument("annotations")
    rp.add_argument("detections")
    rp.add_argument("--out")
    args = parser.parse_args(argv)
    images = parse_annotations(args.annotations)
    if args.cmd == "make-detections":
        make_detections(images, args.out_dir, args.seed)
        return 0
    detections = {}
    for name in sorted(os.listdir(args.detections)):
        if name.endswith(".txt"):
            detections[name[:-4]] = parse_detections(os.path.join(args.detections, name))
    text = report(images, detections)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
