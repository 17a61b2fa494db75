"""Naive loop-based reference scorers.

Everything here is written as plain Python loops over nested lists, on
purpose: this module is the slow, independent second route used to produce
fixture expectations and to cross-check the vectorized engine. Keep it free of
numpy tricks and of any import from scoring.py.
"""

from __future__ import annotations

import math


def _as_nested_list(values):
    return values.tolist() if hasattr(values, "tolist") else values


def reflect_index(i: int, n: int) -> int:
    """Mirror-without-border-repeat index fold: -1 -> 1, n -> n-2; size 1 replicates."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def gaussian_kernel_1d(radius: int, sigma: float) -> list[float]:
    weights = [math.exp(-(d * d) / (2.0 * sigma * sigma)) for d in range(-radius, radius + 1)]
    total = sum(weights)
    return [w / total for w in weights]


def gaussian_kernel_2d(radius: int, sigma: float) -> list[list[float]]:
    weights = [
        [math.exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma))
         for dx in range(-radius, radius + 1)]
        for dy in range(-radius, radius + 1)
    ]
    total = sum(sum(row) for row in weights)
    return [[w / total for w in row] for row in weights]


def aggregate_unet(stacked, h: int, w: int) -> list[list[list[float]]]:
    stacked = _as_nested_list(stacked)
    m = len(stacked)
    n = len(stacked[0][0])
    out = [[[0.0] * n for _ in range(w)] for _ in range(h)]
    for j in range(m):
        plane = stacked[j]
        for y in range(h):
            for x in range(w):
                row = plane[y * w + x]
                cell = out[y][x]
                for i in range(n):
                    cell[i] += row[i]
    for y in range(h):
        for x in range(w):
            cell = out[y][x]
            for i in range(n):
                cell[i] /= m
    return out


def sharpen(aggregated, beta: float) -> list[list[list[float]]]:
    aggregated = _as_nested_list(aggregated)
    out = []
    for row in aggregated:
        out_row = []
        for cell in row:
            top = max(cell)
            exps = [math.exp(beta * (v - top)) for v in cell]
            total = sum(exps)
            out_row.append([e / total for e in exps])
        out.append(out_row)
    return out


def smooth_2d(field, kernel) -> list[list[float]]:
    field = _as_nested_list(field)
    kernel = _as_nested_list(kernel)
    h, w = len(field), len(field[0])
    radius = (len(kernel) - 1) // 2
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    yy = reflect_index(y + dy, h)
                    xx = reflect_index(x + dx, w)
                    acc += kernel[dy + radius][dx + radius] * field[yy][xx]
            out[y][x] = acc
    return out


def smooth_1d(values, kernel) -> list[float]:
    values = _as_nested_list(values)
    kernel = _as_nested_list(kernel)
    n = len(values)
    radius = (len(kernel) - 1) // 2
    out = [0.0] * n
    for i in range(n):
        acc = 0.0
        for d in range(-radius, radius + 1):
            acc += kernel[d + radius] * values[reflect_index(i + d, n)]
        out[i] = acc
    return out


def score_unet(stacked, spatial, token_set, beta: float = 100.0,
               kernel_radius: int = 1, sigma: float = 1.0) -> float:
    h, w = spatial
    sharp = sharpen(aggregate_unet(stacked, h, w), beta)
    kernel = gaussian_kernel_2d(kernel_radius, sigma)
    total = 0.0
    indices = sorted(token_set)
    for idx in indices:
        plane = [[sharp[y][x][idx] for x in range(w)] for y in range(h)]
        smoothed = smooth_2d(plane, kernel)
        total += sum(sum(row) for row in smoothed) / (h * w)
    return total / len(indices)


def score_dit(joint, image_token_count: int, token_set,
              kernel_radius: int = 1, sigma: float = 1.0) -> float:
    joint = _as_nested_list(joint)
    side = len(joint)
    m = image_token_count
    n = side - m
    per_token = [0.0] * n
    for j in range(m):
        row = joint[j]
        for i in range(n):
            per_token[i] += row[m + i]
    per_token = [v / m for v in per_token]
    smoothed = smooth_1d(per_token, gaussian_kernel_1d(kernel_radius, sigma))
    indices = sorted(token_set)
    return sum(smoothed[i] for i in indices) / len(indices)
