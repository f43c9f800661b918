"""
Batch kernels: every catalog operator lifted over whole columns, plus the
operator registry (parameter grammar, input kinds, cost class).

Kernels only touch rows where their input is present; absent rows stay
absent. Row-level domain errors are flagged in KernelContext.reject.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from lib.core.errors import DomainError
from lib.core.hashing import h64_array, h64_concat_array
from lib.core.model import FeatureKind
from lib.storage.flatmap import Column
from lib.transforms.operators import SECONDS_PER_DAY, SECONDS_PER_HOUR, ScoreOp

DENSE_NORM = "dense_norm"
SPARSE_NORM = "sparse_norm"
FEATURE_GEN = "feature_gen"
FILTER = "filter"


@dataclass
class KernelContext:
    row_ids: np.ndarray
    reject: np.ndarray
    keep: np.ndarray
    counters: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def for_rows(cls, row_ids: np.ndarray) -> "KernelContext":
        n = len(row_ids)
        return cls(row_ids, np.zeros(n, dtype=bool), np.ones(n, dtype=bool), {})

    def count(self, name: str, amount: int) -> None:
        if amount:
            self.counters[name] = self.counters.get(name, 0) + int(amount)


# ---------------------------------------------------------------------------
# Parameter grammar
# ---------------------------------------------------------------------------

def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _idmap(text: str) -> Dict[int, int]:
    table = {}
    for pair in text.split(","):
        if pair.strip():
            key, _, value = pair.partition(":")
            table[int(key)] = int(value)
    return table


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, dict):
        return ",".join(f"{k}:{v}" for k, v in sorted(value.items()))
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Param:
    parse: Callable[[str], object]
    default: object = None

    @property
    def required(self) -> bool:
        return self.default is None


@dataclass(frozen=True)
class OperatorDef:
    name: str
    op_class: str
    input_kind: str
    arity: Tuple[int, int]
    params: Dict[str, Param]
    kernel: Callable[[List[Column], dict, KernelContext], Column]
    check: Optional[Callable[[dict], None]] = None

    def parse_params(self, raw: Dict[str, str]) -> dict:
        unknown = set(raw) - set(self.params)
        if unknown:
            raise ValueError(f"{self.name}: unknown params {sorted(unknown)}")
        out = {}
        for name, param in self.params.items():
            if name in raw:
                try:
                    out[name] = param.parse(raw[name])
                except ValueError as exc:
                    raise ValueError(f"{self.name}: bad {name}={raw[name]!r}: {exc}") from exc
            elif param.required:
                raise ValueError(f"{self.name}: missing param {name}")
            else:
                out[name] = param.default
        self.validate(out)
        return out

    def validate(self, params: dict) -> None:
        if self.check is not None:
            self.check(params)

    def format_params(self, params: dict) -> List[str]:
        return [f"{k}={_fmt(params[k])}" for k in self.params if k in params]

    def accepts(self, kind: FeatureKind) -> bool:
        if self.input_kind == "dense":
            return kind == FeatureKind.DENSE
        if self.input_kind == "sparse":
            return kind in (FeatureKind.SPARSE, FeatureKind.SCORED)
        if self.input_kind == "scored":
            return kind == FeatureKind.SCORED
        return True

    def missing_kind(self) -> FeatureKind:
        return {"dense": FeatureKind.DENSE, "scored": FeatureKind.SCORED}.get(
            self.input_kind, FeatureKind.SPARSE)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)


# ---------------------------------------------------------------------------
# Column helpers
# ---------------------------------------------------------------------------

def _dense(values: np.ndarray, presence: np.ndarray) -> Column:
    values = np.where(presence[:, None], values.reshape(len(presence), -1), 0.0)
    return Column(FeatureKind.DENSE, presence.copy(), values.astype(np.float64))


def _scalar_input(col: Column) -> np.ndarray:
    return col.values[:, 0]


def _row_index(col: Column) -> np.ndarray:
    return np.repeat(np.arange(col.rows, dtype=np.int64), col.lengths())


def _pos_in_row(col: Column) -> np.ndarray:
    lengths = col.lengths()
    return np.arange(len(col.values), dtype=np.int64) - np.repeat(col.offsets[:-1], lengths)


def _with_values(col: Column, values: np.ndarray, kind: Optional[FeatureKind] = None,
                 scores: Optional[np.ndarray] = "keep") -> Column:
    if isinstance(scores, str):
        scores = col.scores
    kind = kind if kind is not None else col.kind
    if kind != FeatureKind.SCORED:
        scores = None
    return Column(kind, col.presence.copy(), values, col.offsets.copy(), scores)


def _from_lists(presence: np.ndarray, lists: Sequence[np.ndarray]) -> Column:
    lengths = np.array([len(v) for v in lists], dtype=np.int64)
    offsets = np.zeros(len(lists) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    values = np.concatenate(lists).astype(np.int64) if lists else np.zeros(0, dtype=np.int64)
    return Column(FeatureKind.SPARSE, presence, values, offsets)


def _as_id_lists(col: Column) -> Column:
    """Dense inputs to id-list ops contribute their value as a single id."""
    if col.kind != FeatureKind.DENSE:
        return col
    lengths = col.presence.astype(np.int64)
    offsets = np.zeros(col.rows + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    values = np.floor(col.values[col.presence, 0]).astype(np.int64)
    return Column(FeatureKind.SPARSE, col.presence.copy(), values, offsets)


def _concat_rows(cols: Sequence[Column]) -> Column:
    """Per row, the id lists of all inputs joined in input order."""
    cols = [_as_id_lists(c) for c in cols]
    if len(cols) == 1:
        return cols[0]
    rows = cols[0].rows
    presence = np.zeros(rows, dtype=bool)
    lengths = np.zeros(rows, dtype=np.int64)
    row_keys, input_keys, values = [], [], []
    for i, col in enumerate(cols):
        presence |= col.presence
        lengths += col.lengths()
        row_keys.append(_row_index(col))
        input_keys.append(np.full(len(col.values), i, dtype=np.int64))
        values.append(col.values)
    order = np.lexsort((np.concatenate(input_keys), np.concatenate(row_keys)))
    offsets = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return Column(FeatureKind.SPARSE, presence, np.concatenate(values)[order], offsets)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def k_bucketize(cols, p, ctx):
    col = cols[0]
    idx = np.searchsorted(np.asarray(p["borders"]), _scalar_input(col), side="right")
    return _dense(idx.astype(np.float64), col.presence)


def k_logit(cols, p, ctx):
    col = cols[0]
    eps = p["eps"]
    q = np.clip(_scalar_input(col), eps, 1.0 - eps)
    return _dense(np.log(q / (1.0 - q)), col.presence)


def k_box_cox(cols, p, ctx):
    col = cols[0]
    x = _scalar_input(col)
    bad = col.presence & ~(x > 0)
    ctx.reject |= bad
    safe = np.where(col.presence & (x > 0), x, 1.0)
    lam = p["lambda"]
    out = np.log(safe) if lam == 0 else np.expm1(lam * np.log(safe)) / lam
    return _dense(out, col.presence & ~bad)


def k_onehot(cols, p, ctx):
    col = cols[0]
    card = p["cardinality"]
    x = _scalar_input(col)
    idx = np.floor(np.where(col.presence, x, -1.0))
    valid = col.presence & (idx >= 0) & (idx < card)
    ctx.count("onehot_out_of_range", int((col.presence & ~valid).sum()))
    out = np.zeros((col.rows, card), dtype=np.float64)
    out[np.flatnonzero(valid), idx[valid].astype(np.int64)] = 1.0
    return _dense(out, col.presence)


def k_clamp(cols, p, ctx):
    col = cols[0]
    if col.kind == FeatureKind.DENSE:
        return _dense(np.clip(col.values, p["lo"], p["hi"]), col.presence)
    lo, hi = math.ceil(p["lo"]), math.floor(p["hi"])
    return _with_values(col, np.clip(col.values, lo, hi).astype(np.int64))


def k_get_local_hour(cols, p, ctx):
    col = cols[0]
    ts = np.floor(_scalar_input(col)).astype(np.int64) + np.int64(p["offset"])
    hours = np.mod(ts, SECONDS_PER_DAY) // SECONDS_PER_HOUR
    return _dense(hours.astype(np.float64), col.presence)


def k_sigrid_hash(cols, p, ctx):
    col = cols[0]
    hashed = h64_array(col.values) % np.uint64(p["max"])
    return _with_values(col, hashed.astype(np.int64))


def k_first_x(cols, p, ctx):
    col = cols[0]
    keep = _pos_in_row(col) < p["x"]
    lengths = np.minimum(col.lengths(), p["x"])
    offsets = np.zeros(col.rows + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    scores = col.scores[keep] if col.scores is not None else None
    return Column(col.kind, col.presence.copy(), col.values[keep], offsets, scores)


def k_positive_modulus(cols, p, ctx):
    col = cols[0]
    return _with_values(col, np.mod(col.values, np.int64(p["m"])))


def k_enumerate(cols, p, ctx):
    col = cols[0]
    return _with_values(col, col.values.copy(), FeatureKind.SCORED,
                        _pos_in_row(col).astype(np.float32))


def k_map_id(cols, p, ctx):
    col = cols[0]
    table = p["table"]
    if not table:
        mapped = np.full(len(col.values), p["default"], dtype=np.int64)
        return _with_values(col, mapped)
    keys = np.array(sorted(table), dtype=np.int64)
    targets = np.array([table[k] for k in keys.tolist()], dtype=np.int64)
    idx = np.searchsorted(keys, col.values)
    clipped = np.minimum(idx, len(keys) - 1)
    hit = keys[clipped] == col.values
    return _with_values(col, np.where(hit, targets[clipped], np.int64(p["default"])))


def k_id_list_intersect(cols, p, ctx):
    a, b = cols
    lists = []
    a_vals, a_off = a.values.tolist(), a.offsets.tolist()
    b_vals, b_off = b.values.tolist(), b.offsets.tolist()
    for r in range(a.rows):
        other = set(b_vals[b_off[r]:b_off[r + 1]])
        seen, row = set(), []
        for v in a_vals[a_off[r]:a_off[r + 1]]:
            if v in other and v not in seen:
                seen.add(v)
                row.append(v)
        lists.append(np.array(row, dtype=np.int64))
    return _from_lists(a.presence | b.presence, lists)


def k_ngram(cols, p, ctx):
    col = _concat_rows(cols)
    n = p["n"]
    lengths = col.lengths()
    starts = np.flatnonzero(_pos_in_row(col) <= np.repeat(lengths - n, lengths))
    windows = [col.values[starts + k] for k in range(n)]
    hashed = h64_concat_array(*windows).view(np.int64) if len(starts) else np.zeros(0, dtype=np.int64)
    counts = np.maximum(lengths - n + 1, 0)
    offsets = np.zeros(col.rows + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return Column(FeatureKind.SPARSE, col.presence.copy(), hashed, offsets)


def k_cartesian(cols, p, ctx):
    a, b = (_as_id_lists(c) for c in cols)
    left, right, counts = [], [], np.zeros(a.rows, dtype=np.int64)
    for r in range(a.rows):
        av = a.values[a.offsets[r]:a.offsets[r + 1]]
        bv = b.values[b.offsets[r]:b.offsets[r + 1]]
        if len(av) and len(bv):
            left.append(np.repeat(av, len(bv)))
            right.append(np.tile(bv, len(av)))
            counts[r] = len(av) * len(bv)
    offsets = np.zeros(a.rows + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    if left:
        hashed = h64_concat_array(np.concatenate(left), np.concatenate(right)).view(np.int64)
    else:
        hashed = np.zeros(0, dtype=np.int64)
    return Column(FeatureKind.SPARSE, a.presence | b.presence, hashed, offsets)


def k_compute_score(cols, p, ctx):
    col = cols[0]
    op: ScoreOp = p["op"]
    scores = col.scores.astype(np.float64)
    if op.kind == "scale":
        return _with_values(col, col.values.copy(), FeatureKind.SCORED,
                            (scores * op.factor).astype(np.float32))
    rows = _row_index(col)
    if op.kind == "sum":
        out = np.bincount(rows, weights=scores, minlength=col.rows)
    else:
        out = np.full(col.rows, -np.inf)
        np.maximum.at(out, rows, scores)
        out[np.isneginf(out)] = 0.0
    return _dense(out.astype(np.float32).astype(np.float64), col.presence)


def k_sampling(cols, p, ctx):
    seeds = np.full(len(ctx.row_ids), p["seed"], dtype=np.int64)
    h = h64_concat_array(seeds, ctx.row_ids)
    keep = h.astype(np.float64) / float(1 << 64) < p["rate"]
    ctx.count("sampled_out", int((~keep).sum()))
    ctx.keep &= keep
    return _dense(keep.astype(np.float64), np.ones(len(keep), dtype=bool))


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

def _check_borders(p):
    b = p["borders"]
    _require(len(b) > 0, "borders must be non-empty")
    _require(all(x < y for x, y in zip(b, b[1:])), "borders must be strictly increasing")


OPERATORS: Dict[str, OperatorDef] = {
    op.name: op for op in (
        OperatorDef("bucketize", FEATURE_GEN, "dense", (1, 1),
                    {"borders": Param(_floats)}, k_bucketize, _check_borders),
        OperatorDef("sigrid_hash", SPARSE_NORM, "sparse", (1, 1),
                    {"max": Param(int)}, k_sigrid_hash,
                    lambda p: _require(0 < p["max"] <= 1 << 63, "max must be in (0, 2**63]")),
        OperatorDef("first_x", SPARSE_NORM, "sparse", (1, 1),
                    {"x": Param(int)}, k_first_x,
                    lambda p: _require(p["x"] >= 0, "x must be >= 0")),
        OperatorDef("logit", DENSE_NORM, "dense", (1, 1),
                    {"eps": Param(float, 1e-6)}, k_logit,
                    lambda p: _require(0 < p["eps"] < 0.5, "eps must be in (0, 0.5)")),
        OperatorDef("box_cox", DENSE_NORM, "dense", (1, 1),
                    {"lambda": Param(float)}, k_box_cox),
        OperatorDef("onehot", DENSE_NORM, "dense", (1, 1),
                    {"cardinality": Param(int)}, k_onehot,
                    lambda p: _require(p["cardinality"] >= 1, "cardinality must be >= 1")),
        OperatorDef("clamp", DENSE_NORM, "any", (1, 1),
                    {"lo": Param(float), "hi": Param(float)}, k_clamp,
                    lambda p: _require(p["lo"] <= p["hi"], "lo must be <= hi")),
        OperatorDef("positive_modulus", SPARSE_NORM, "sparse", (1, 1),
                    {"m": Param(int)}, k_positive_modulus,
                    lambda p: _require(p["m"] > 0, "m must be > 0")),
        OperatorDef("enumerate", FEATURE_GEN, "sparse", (1, 1), {}, k_enumerate),
        OperatorDef("id_list_intersect", FEATURE_GEN, "sparse", (2, 2), {}, k_id_list_intersect),
        OperatorDef("map_id", FEATURE_GEN, "sparse", (1, 1),
                    {"table": Param(_idmap, {}), "default": Param(int, 0)}, k_map_id),
        OperatorDef("ngram", FEATURE_GEN, "any", (1, 8),
                    {"n": Param(int)}, k_ngram,
                    lambda p: _require(p["n"] >= 1, "n must be >= 1")),
        OperatorDef("cartesian", FEATURE_GEN, "any", (2, 2), {}, k_cartesian),
        OperatorDef("compute_score", FEATURE_GEN, "scored", (1, 1),
                    {"op": Param(ScoreOp.parse)}, k_compute_score),
        OperatorDef("get_local_hour", FEATURE_GEN, "dense", (1, 1),
                    {"offset": Param(int, 0)}, k_get_local_hour),
        OperatorDef("sampling", FILTER, "any", (0, 0),
                    {"rate": Param(float), "seed": Param(int, 0)}, k_sampling,
                    lambda p: _require(0.0 <= p["rate"] <= 1.0, "rate must be in [0, 1]")),
    )
}


def output_kind(op: OperatorDef, params: dict, input_kinds: Sequence[FeatureKind]) -> FeatureKind:
    if op.name in ("bucketize", "logit", "box_cox", "onehot", "get_local_hour", "sampling"):
        return FeatureKind.DENSE
    if op.name == "clamp":
        return input_kinds[0] if input_kinds else FeatureKind.DENSE
    if op.name == "enumerate":
        return FeatureKind.SCORED
    if op.name == "compute_score":
        return FeatureKind.SCORED if params["op"].kind == "scale" else FeatureKind.DENSE
    if op.name in ("sigrid_hash", "first_x", "positive_modulus", "map_id"):
        return input_kinds[0] if input_kinds else FeatureKind.SPARSE
    return FeatureKind.SPARSE


def run_kernel(op: OperatorDef, inputs: List[Column], params: dict, ctx: KernelContext) -> Column:
    for col in inputs:
        if not op.accepts(col.kind):
            raise DomainError(f"{op.name} cannot take a {col.kind.name} input")
    return op.kernel(inputs, params, ctx)
