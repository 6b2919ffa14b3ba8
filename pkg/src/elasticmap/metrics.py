"""Evaluation metrics: cloud-to-cloud distance and process memory."""
from __future__ import annotations

import os
import resource
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class CloudError:
    distances: np.ndarray
    histogram: np.ndarray
    bin_edges: np.ndarray
    thresholds: tuple
    fractions: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.distances))

    @property
    def mean(self) -> float:
        return float(np.mean(self.distances))

    def fraction_below(self, threshold: float) -> float:
        return float(np.mean(self.distances < threshold))


def cloud_to_cloud_error(test: np.ndarray, reference: np.ndarray,
                         thresholds=(0.05, 0.1, 0.2, 0.5), bins=None) -> CloudError:
    """Exact nearest-neighbour distance from each test point to the reference cloud."""
    test = np.asarray(test, dtype=np.float64).reshape(-1, 3)
    reference = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    if len(test) == 0 or len(reference) == 0:
        raise ValueError("both clouds must be non-empty")
    d, _ = cKDTree(reference).query(test, k=1)
    if bins is None:
        bins = np.linspace(0.0, max(float(d.max()), max(thresholds)) * (1 + 1e-9), 51)
    hist, edges = np.histogram(d, bins=bins)
    thresholds = tuple(float(t) for t in thresholds)
    fractions = np.array([np.mean(d < t) for t in thresholds])
    return CloudError(d, hist, edges, thresholds, fractions)


def resident_mb() -> float:
    """Current resident set size in MiB (peak RSS where /proc is unavailable)."""
    try:
        with open("/proc/self/statm") as fh:
            pages = int(fh.read().split()[1])
        return pages * os.sysconf("SC_PAGE_SIZE") / 2 ** 20
    except (OSError, ValueError, IndexError):
        return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
