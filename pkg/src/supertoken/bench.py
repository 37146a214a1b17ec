"""Wall-clock comparison of one-shot global association and the patch baseline.

Both paths start from the same cube, derivative and feature map (feature
extraction is not timed).  The global path runs one association +
aggregation pass over the whole image with ``m1`` centers; the baseline
tiles the image into ``patches_per_side**2`` patches holding
``m1 / patches_per_side**2`` centers each and runs ``iterations`` rounds per
patch, one patch after another.  A single-pass baseline is timed as well so
the report shows where the gap comes from.
"""

from __future__ import annotations

import math
import os
import platform
import statistics
import time

import numpy as np
from threadpoolctl import threadpool_limits

from .baseline import patch_iterative_baseline, patch_tiles
from .config import PipelineConfig
from .errors import InvalidInputError
from .hsi import HsiCube, pca_feature_provider, pixel_coords, spectral_derivative
from .scpa import aggregate, associate_masked, init_center_grid, make_centers, spatial_neighbors

__all__ = ["parse_size", "global_ops", "baseline_ops", "time_call", "run_bench"]


def parse_size(text: str) -> tuple[int, int, int]:
    """``"256x256x32"`` -> ``(256, 256, 32)``."""
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise InvalidInputError(f"size must look like HxWxB, got {text!r}")
    try:
        h, w, b = (int(p) for p in parts)
    except ValueError:
        raise InvalidInputError(f"size must look like HxWxB, got {text!r}") from None
    return h, w, b


def _pass_ops(n: int, m: int, k: int, bands: int, channels: int) -> dict:
    """Multiply-add counts of one association + aggregation pass."""
    feat = bands + (bands - 1) + channels
    return {
        "neighbor_search": 2 * n * m,
        "distance": n * k * (2 + feat),
        "exp": n * k,
        "aggregate": n * k * (channels + 1),
    }


def global_ops(height: int, width: int, bands: int, m: int, k: int, channels: int) -> dict:
    """Closed-form operation counts of the global path.

    ``neighbor_search`` counts the exhaustive N x M scan that defines the
    mask (the KD-tree shortcut only reduces the constant).
    """
    ops = _pass_ops(height * width, m, k, bands, channels)
    ops["total"] = sum(ops.values())
    return ops


def baseline_ops(height: int, width: int, bands: int, patch_size: int, centers_per_patch: int,
                 k: int, channels: int, iterations: int) -> dict:
    """Operation counts of the patch baseline; the mask is computed once per patch."""
    tot = {"neighbor_search": 0, "distance": 0, "exp": 0, "aggregate": 0}
    for r0, r1, c0, c1 in patch_tiles(height, width, patch_size):
        n = (r1 - r0) * (c1 - c0)
        m = min(centers_per_patch, n)
        ops = _pass_ops(n, m, min(k, m), bands, channels)
        tot["neighbor_search"] += ops["neighbor_search"]
        for key in ("distance", "exp", "aggregate"):
            tot[key] += iterations * ops[key]
    tot["total"] = sum(tot.values())
    return tot


def time_call(fn, repetitions: int) -> dict:
    """Median and median absolute deviation of ``repetitions`` timed calls (seconds)."""
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    med = statistics.median(times)
    mad = statistics.median(abs(t - med) for t in times)
    return {"median_s": med, "mad_s": mad, "times_s": times}


def _hardware(threads: int) -> dict:
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "system": platform.system(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "threads": threads,
    }


def run_bench(config: PipelineConfig, sizes, repetitions: int = 5, threads: int = 1,
              seed: int = 0, patches_per_side: int = 4, iterations: int = 3) -> dict:
    """Time both paths at every ``(H, W, B)`` in ``sizes``; returns a JSON-ready dict."""
    if repetitions < 3:
        raise InvalidInputError("repetitions must be >= 3")
    n_patches = patches_per_side * patches_per_side
    if config.m1 % n_patches:
        raise InvalidInputError(f"m1={config.m1} is not divisible by {n_patches} patches")
    per_patch = config.m1 // n_patches
    results = []
    with threadpool_limits(limits=threads):
        for h, w, b in sizes:
            if h % patches_per_side or w % patches_per_side:
                raise InvalidInputError(f"{h}x{w} does not split into {patches_per_side} patches per side")
            patch = max(h, w) // patches_per_side
            rng = np.random.default_rng(seed)
            cube = HsiCube(rng.uniform(0.0, 1.0, size=(h, w, b)))
            deriv = spectral_derivative(cube)
            channels = min(config.channels, b)
            feats = pca_feature_provider(cube, channels, config.smoothing_radius)
            k = min(config.mask_size, per_patch)

            def global_path():
                centers = make_centers(init_center_grid(h, w, config.m1), cube, deriv, feats)
                nbr = spatial_neighbors(pixel_coords(h, w), centers.coords, k)
                assoc = associate_masked(cube, deriv, feats, centers, k, neighbors=nbr,
                                         threads=threads)
                aggregate(assoc, feats.flat(), centers)

            def baseline_path():
                patch_iterative_baseline(cube, deriv, feats, patch, per_patch, k, iterations)

            def single_pass():
                patch_iterative_baseline(cube, deriv, feats, patch, per_patch, k, 1)

            g = time_call(global_path, repetitions)
            p = time_call(baseline_path, repetitions)
            s = time_call(single_pass, repetitions)
            results.append({
                "size": f"{h}x{w}x{b}",
                "pixels": h * w,
                "centers": config.m1,
                "mask_size": k,
                "patch_size": patch,
                "centers_per_patch": per_patch,
                "baseline_iterations": iterations,
                "global": {**g, "ops": global_ops(h, w, b, config.m1, k, channels),
                           "fps": 1.0 / g["median_s"]},
                "baseline": {**p, "ops": baseline_ops(h, w, b, patch, per_patch, k, channels,
                                                      iterations),
                             "fps": 1.0 / p["median_s"]},
                "baseline_single_pass": {**s, "ops": baseline_ops(h, w, b, patch, per_patch, k,
                                                                  channels, 1),
                                         "fps": 1.0 / s["median_s"]},
                "global_faster": g["median_s"] < p["median_s"],
                "speedup": p["median_s"] / g["median_s"] if g["median_s"] > 0 else math.inf,
            })
    return {
        "protocol": {
            "repetitions": repetitions,
            "statistic": "median wall clock, median absolute deviation",
            "warmup": 0,
            "seed": seed,
            "timed": "association + aggregation from precomputed features",
        },
        "hardware": _hardware(threads),
        "results": results,
    }
