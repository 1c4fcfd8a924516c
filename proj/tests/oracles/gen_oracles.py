#!/usr/bin/env python3
"""Reference values for the metric and adaptive-weight tests.

Regenerate with:  python3 tests/oracles/gen_oracles.py > tests/oracles/oracle_cases.inc
"""
import numpy as np

EPS = np.finfo(np.float64).eps


def matlab_round(x):
    return int(np.floor(x + 0.5))


def enhanced_alignment(fm, gt):
    fm = fm.astype(np.float64)
    gt = gt.astype(np.float64)
    if gt.sum() == 0:
        enhanced = 1.0 - fm
    elif (1 - gt).sum() == 0:
        enhanced = fm
    else:
        a_fm = fm - fm.mean()
        a_gt = gt - gt.mean()
        align = 2.0 * (a_gt * a_fm) / (a_gt * a_gt + a_fm * a_fm + EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return enhanced.sum() / gt.size


def e_max(pred, gt):
    return max(enhanced_alignment(pred >= t / 255.0, gt) for t in range(256))


def f_max(pred, gt):
    best = 0.0
    pos = gt.sum()
    for t in range(256):
        b = pred >= t / 255.0
        tp = float(np.logical_and(b, gt).sum())
        p = tp / b.sum() if b.sum() > 0 else 0.0
        r = tp / pos
        f = 1.3 * p * r / (0.3 * p + r) if (0.3 * p + r) > 0 else 0.0
        best = max(best, f)
    return best


def object_score(x):
    if x.size == 0:
        return 0.0
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + EPS)


def s_object(pred, gt):
    g = gt.astype(bool)
    u = g.mean()
    return u * object_score(pred[g]) + (1 - u) * object_score(1.0 - pred[~g])


def ssim(pred, gt):
    n = pred.size
    if n == 0:
        return 0.0
    x = pred.mean()
    y = gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    if beta == 0:
        return 1.0
    return 0.0


def s_region(pred, gt):
    h, w = gt.shape
    total = gt.sum()
    if total == 0:
        cx, cy = matlab_round(w / 2), matlab_round(h / 2)
    else:
        cx = matlab_round((gt.sum(axis=0) * np.arange(1, w + 1)).sum() / total)
        cy = matlab_round((gt.sum(axis=1) * np.arange(1, h + 1)).sum() / total)
    area = w * h
    w1 = cx * cy / area
    w2 = (w - cx) * cy / area
    w3 = cx * (h - cy) / area
    w4 = 1.0 - w1 - w2 - w3
    return (w1 * ssim(pred[:cy, :cx], gt[:cy, :cx]) + w2 * ssim(pred[:cy, cx:], gt[:cy, cx:]) +
            w3 * ssim(pred[cy:, :cx], gt[cy:, :cx]) + w4 * ssim(pred[cy:, cx:], gt[cy:, cx:]))


def s_measure(pred, gt):
    y = gt.mean()
    if y == 0:
        q = 1.0 - pred.mean()
    elif y == 1:
        q = pred.mean()
    else:
        q = 0.5 * s_object(pred, gt) + 0.5 * s_region(pred, gt)
    return min(max(q, 0.0), 1.0)


def box_mean_replicate(img, k):
    r = k // 2
    h, w = img.shape
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += img[yy, xx]
            out[y, x] = acc / (k * k)
    return out


def omega(gt, kernels=(3, 15, 31), mu=0.5):
    return 1.0 + mu * sum(np.abs(box_mean_replicate(gt, k) - gt) for k in kernels)


def fmt(v):
    return repr(float(v))


def emit_array(values):
    return "{" + ", ".join(fmt(v) for v in np.asarray(values).ravel()) + "}"


def main():
    rng = np.random.default_rng(20240611)
    cases = []
    while len(cases) < 50:
        density = rng.uniform(0.15, 0.85)
        gt = (rng.random((8, 8)) < density).astype(np.float64)
        if gt.sum() == 0 or gt.sum() == 64:
            continue
        kind = len(cases) % 3
        if kind == 0:
            pred = rng.random((8, 8))
        elif kind == 1:
            pred = np.clip(gt * rng.uniform(0.5, 1.0) + rng.normal(0, 0.25, (8, 8)), 0, 1)
        else:
            pred = np.round(rng.random((8, 8)) * 255) / 255
        cases.append((pred, gt))

    half = np.zeros((8, 8))
    half[:, :4] = 1.0
    cases.append((0.75 * half, half))

    print("// Generated by gen_oracles.py; do not edit.")
    print("struct MetricCase {")
    print("  std::array<double, 64> pred;")
    print("  std::array<double, 64> gt;")
    print("  double f_max;")
    print("  double e_max;")
    print("  double s_measure;")
    print("};")
    print("inline const std::vector<MetricCase> kMetricCases = {")
    for pred, gt in cases:
        print("  {" + emit_array(pred) + ",")
        print("   " + emit_array(gt) + ",")
        print("   %s, %s, %s}," % (fmt(f_max(pred, gt)), fmt(e_max(pred, gt)), fmt(s_measure(pred, gt))))
    print("};")
    print("// omega for an 8x8 mask whose left half is foreground, kernels {3,15,31}, mu 0.5.")
    print("inline const std::array<double, 64> kHalfPlaneOmega = " + emit_array(omega(half)) + ";")


if __name__ == "__main__":
    main()
