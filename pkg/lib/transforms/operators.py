"""
Transformation operator catalog - scalar semantics.

Each function is the per-value definition of one operator. The batch
kernels in lib.transforms.kernels lift these over whole columns and must
agree with them exactly (integer ops) or to rounding (float ops).
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from lib.core.errors import DomainError
from lib.core.hashing import h64, h64_concat, to_int64

SECONDS_PER_DAY = 86_400
SECONDS_PER_HOUR = 3_600


def bucketize(x: float, borders: Sequence[float]) -> int:
    """Index of the bucket holding x: the number of borders <= x."""
    return bisect.bisect_right(borders, x)


def sigrid_hash(ids: Sequence[int], max_value: int) -> List[int]:
    if max_value <= 0:
        raise DomainError("sigrid_hash max must be positive")
    return [to_int64(h64(i) % max_value) for i in ids]


def first_x(ids: Sequence, x: int) -> list:
    return list(ids[:max(0, x)])


def logit(p: float, eps: float = 1e-6) -> float:
    q = min(max(p, eps), 1.0 - eps)
    return math.log(q / (1.0 - q))


def box_cox(x: float, lam: float) -> float:
    if x <= 0:
        raise DomainError(f"box_cox needs x > 0, got {x}")
    if lam == 0:
        return math.log(x)
    # expm1 keeps small-lambda results on the log limit
    return math.expm1(lam * math.log(x)) / lam


def onehot(index: int, cardinality: int) -> np.ndarray:
    out = np.zeros(cardinality, dtype=np.float32)
    if 0 <= index < cardinality:
        out[index] = 1.0
    return out


def clamp(x, lo, hi):
    return min(max(x, lo), hi)


def positive_modulus(x: int, m: int) -> int:
    if m <= 0:
        raise DomainError("positive_modulus needs m > 0")
    return x % m


def enumerate_ids(ids: Sequence[int]) -> List[Tuple[int, int]]:
    return list(enumerate(ids))


def id_list_intersect(a: Sequence[int], b: Sequence[int]) -> List[int]:
    """Elements of a, in a's order without repeats, that also occur in b."""
    other = set(b)
    seen = set()
    out = []
    for v in a:
        if v in other and v not in seen:
            seen.add(v)
            out.append(v)
    return out


def map_id(value: int, table: Dict[int, int], default: int) -> int:
    return table.get(value, default)


def ngram(ids: Sequence[int], n: int) -> List[int]:
    if n < 1:
        raise DomainError("ngram needs n >= 1")
    return [to_int64(h64_concat(ids[i:i + n])) for i in range(len(ids) - n + 1)]


def cartesian(a: Sequence[int], b: Sequence[int]) -> List[int]:
    return [to_int64(h64_concat((x, y))) for x in a for y in b]


@dataclass(frozen=True)
class ScoreOp:
    kind: str = "sum"
    factor: float = 1.0

    @classmethod
    def parse(cls, text: str) -> "ScoreOp":
        name, _, arg = text.partition(":")
        name = name.strip().lower()
        if name == "scale":
            return cls("scale", float(arg))
        if name in ("sum", "max"):
            return cls(name)
        raise ValueError(f"unknown score op {text!r}")

    def __str__(self) -> str:
        return f"scale:{self.factor!r}" if self.kind == "scale" else self.kind


def compute_score(scored: Sequence[Tuple[int, float]], op: ScoreOp) -> Union[float, List[Tuple[int, float]]]:
    scores = [float(np.float32(s)) for _, s in scored]
    if op.kind == "sum":
        return float(np.float32(_ordered_sum(scores)))
    if op.kind == "max":
        return float(np.float32(max(scores))) if scores else 0.0
    return [(i, float(np.float32(s * op.factor))) for (i, _), s in zip(scored, scores)]


def _ordered_sum(values: Sequence[float]) -> float:
    total = 0.0
    for v in values:
        total += v
    return total


def get_local_hour(ts: float, offset: int) -> int:
    local = math.floor(ts) + int(offset)
    return (local % SECONDS_PER_DAY) // SECONDS_PER_HOUR


def sampling(rate: float, seed: int, row_index: int) -> bool:
    """Keep the row iff H64(seed || row index) / 2**64 < rate."""
    return h64_concat((seed, row_index)) / float(1 << 64) < rate
