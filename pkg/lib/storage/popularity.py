"""
Feature popularity: layout weights from a recent window of sessions, and the
popular-bytes curve (share of stored bytes vs share of read traffic).
"""

from __future__ import annotations

from collections import defaultdict
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from lib.core.model import FeatureProjection


def reorder_weights(access_log: Sequence[Tuple[object, FeatureProjection]], window: int,
                    universe: Iterable[int] = ()) -> List[Tuple[int, float]]:
    """
    weight(f) = number of sessions among the last `window` log entries whose
    projection contains f. Sorted weight-descending, feature id ascending.
    """
    recent = access_log[-window:] if window > 0 else []
    sessions: Dict[int, set] = defaultdict(set)
    for session_id, projection in recent:
        for fid in projection:
            sessions[fid].add(session_id)
    weights = {fid: 0 for fid in universe}
    for fid, ids in sessions.items():
        weights[fid] = len(ids)
    return sorted(((f, float(w)) for f, w in weights.items()), key=lambda p: (-p[1], p[0]))


def popular_bytes_curve(stored_bytes: Mapping[int, int],
                        weights: Mapping[int, float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cumulative share of stored bytes (x) against cumulative share of read
    traffic (y), features taken most popular first. A feature's traffic is its
    stored bytes times its access weight.
    """
    fids = sorted(stored_bytes, key=lambda f: (-weights.get(f, 0.0), f))
    size = np.array([stored_bytes[f] for f in fids], dtype=np.float64)
    traffic = size * np.array([weights.get(f, 0.0) for f in fids], dtype=np.float64)
    total_size, total_traffic = size.sum(), traffic.sum()
    if total_size == 0 or total_traffic == 0:
        return np.zeros(1), np.zeros(1)
    x = np.concatenate([[0.0], np.cumsum(size) / total_size])
    y = np.concatenate([[0.0], np.cumsum(traffic) / total_traffic])
    return x, y


def bytes_share_for_traffic(x: np.ndarray, y: np.ndarray, traffic_share: float = 0.8) -> float:
    """Smallest share of stored bytes that serves `traffic_share` of traffic."""
    index = int(np.searchsorted(y, traffic_share - 1e-12, side="left"))
    return float(x[min(index, len(x) - 1)])
