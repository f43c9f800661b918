"""
Transform graphs and their text manifest.

One node per line:

    <out_id> <op> [param=value ...] inputs=<id>[,<id>...]

'#' starts a comment. Every output id is produced by exactly one node.
Validation against a projection (dangling inputs, cycles, input kinds) is
reported, not raised, so session validation can collect every problem.
"""

from __future__ import annotations

import shlex
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

from lib.core.errors import ConfigError
from lib.core.model import FeatureKind
from lib.transforms.kernels import OPERATORS, OperatorDef, output_kind


@dataclass(frozen=True)
class TransformNode:
    output: int
    op: str
    params: dict = field(default_factory=dict, hash=False)
    inputs: Tuple[int, ...] = ()

    @property
    def operator(self) -> OperatorDef:
        return OPERATORS[self.op]

    def to_line(self) -> str:
        parts = [str(self.output), self.op]
        parts += self.operator.format_params(self.params)
        if self.inputs:
            parts.append("inputs=" + ",".join(str(i) for i in self.inputs))
        return " ".join(parts)


@dataclass
class GraphCheck:
    """Problems found validating a graph against its available inputs."""
    dangling: List[Tuple[int, int]] = field(default_factory=list)
    cycle: List[int] = field(default_factory=list)
    kind_errors: List[str] = field(default_factory=list)
    arity_errors: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.dangling or self.cycle or self.kind_errors or self.arity_errors)


class TransformGraph:
    """An immutable set of transform nodes with a stable topological order."""

    def __init__(self, nodes: Sequence[TransformNode] = ()):
        self.nodes: Tuple[TransformNode, ...] = tuple(nodes)
        self._by_output: Dict[int, TransformNode] = {}
        for node in self.nodes:
            if node.op not in OPERATORS:
                raise ConfigError(f"unknown operator {node.op!r} for output {node.output}")
            if node.output in self._by_output:
                raise ConfigError(f"output {node.output} is produced by more than one node")
            self._by_output[node.output] = node

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __eq__(self, other) -> bool:
        return isinstance(other, TransformGraph) and self.to_manifest() == other.to_manifest()

    @property
    def outputs(self) -> List[int]:
        return [n.output for n in self.nodes]

    def node(self, output: int) -> TransformNode:
        return self._by_output[output]

    def external_inputs(self) -> List[int]:
        """Input ids no node produces, in first-use order."""
        seen = {}
        for node in self.nodes:
            for fid in node.inputs:
                if fid not in self._by_output:
                    seen.setdefault(fid, None)
        return list(seen)

    def topological_order(self) -> Tuple[List[TransformNode], List[int]]:
        """(ordered nodes, outputs left on a cycle). Ties keep manifest order."""
        indegree = {n.output: 0 for n in self.nodes}
        users: Dict[int, List[int]] = {n.output: [] for n in self.nodes}
        for node in self.nodes:
            for fid in node.inputs:
                if fid in self._by_output:
                    indegree[node.output] += 1
                    users[fid].append(node.output)
        ready = deque(n.output for n in self.nodes if indegree[n.output] == 0)
        order = []
        while ready:
            out = ready.popleft()
            order.append(self._by_output[out])
            for user in users[out]:
                indegree[user] -= 1
                if indegree[user] == 0:
                    ready.append(user)
        stuck = [n.output for n in self.nodes if indegree[n.output] > 0]
        return order, stuck

    def check(self, available: Mapping[int, FeatureKind]) -> GraphCheck:
        """Validate against the projected features' kinds."""
        result = GraphCheck()
        order, result.cycle = self.topological_order()
        kinds: Dict[int, FeatureKind] = dict(available)
        for node in self.nodes:
            for fid in node.inputs:
                if fid not in kinds and fid not in self._by_output:
                    result.dangling.append((node.output, fid))
            lo, hi = node.operator.arity
            if not lo <= len(node.inputs) <= hi:
                result.arity_errors.append(
                    f"{node.output} {node.op}: {len(node.inputs)} inputs, expected {lo}..{hi}"
                )
        for node in order:
            input_kinds = [kinds.get(fid) for fid in node.inputs]
            for fid, kind in zip(node.inputs, input_kinds):
                if kind is not None and not node.operator.accepts(kind):
                    result.kind_errors.append(
                        f"{node.output} {node.op}: input {fid} is {kind.name}"
                    )
            known = [k for k in input_kinds if k is not None]
            kinds[node.output] = output_kind(node.operator, node.params, known)
        return result

    def output_kinds(self, available: Mapping[int, FeatureKind]) -> Dict[int, FeatureKind]:
        kinds = dict(available)
        order, _ = self.topological_order()
        for node in order:
            known = [kinds[f] for f in node.inputs if f in kinds]
            kinds[node.output] = output_kind(node.operator, node.params, known)
        return {n.output: kinds[n.output] for n in self.nodes}

    def to_manifest(self) -> str:
        return "".join(node.to_line() + "\n" for node in self.nodes)

    @classmethod
    def from_manifest(cls, text: str) -> "TransformGraph":
        nodes = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                nodes.append(parse_node(line))
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"manifest line {lineno}: {exc}") from exc
        return cls(nodes)

    @classmethod
    def load(cls, path) -> "TransformGraph":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read transform manifest {path}: {exc}") from exc
        return cls.from_manifest(text)


def parse_node(line: str) -> TransformNode:
    tokens = shlex.split(line)
    if len(tokens) < 2:
        raise ValueError(f"expected '<out_id> <op> ...', got {line!r}")
    output, op_name = int(tokens[0]), tokens[1]
    if op_name not in OPERATORS:
        raise ValueError(f"unknown operator {op_name!r}")
    raw: Dict[str, str] = {}
    inputs: Tuple[int, ...] = ()
    for token in tokens[2:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {token!r}")
        if key == "inputs":
            inputs = tuple(int(v) for v in value.split(",") if v.strip())
        else:
            raw[key] = value
    params = OPERATORS[op_name].parse_params(raw)
    return TransformNode(output, op_name, params, inputs)


def chain_example(a: int, b: int, *, borders: Sequence[float] = (10.0, 100.0), x: int = 3,
                  n: int = 2, max_value: int = 1 << 20, first_out: int = 1_000_000) -> TransformGraph:
    """Bucketize(a) and FirstX(b) feeding NGram, then SigridHash."""
    bucket, first, gram, hashed = range(first_out, first_out + 4)
    return TransformGraph([
        TransformNode(bucket, "bucketize", {"borders": tuple(float(v) for v in borders)}, (a,)),
        TransformNode(first, "first_x", {"x": x}, (b,)),
        TransformNode(gram, "ngram", {"n": n}, (bucket, first)),
        TransformNode(hashed, "sigrid_hash", {"max": max_value}, (gram,)),
    ])


def identity_graph() -> TransformGraph:
    return TransformGraph([])


def node_from(output: int, op: str, inputs: Sequence[int], /, **params) -> TransformNode:
    """Build a node; params may be manifest strings or already-typed values."""
    definition = OPERATORS[op]
    typed = {}
    for name, param in definition.params.items():
        if name in params:
            value = params[name]
            typed[name] = param.parse(value) if isinstance(value, str) else value
        elif param.required:
            raise ValueError(f"{op}: missing param {name}")
        else:
            typed[name] = param.default
    unknown = set(params) - set(definition.params)
    if unknown:
        raise ValueError(f"{op}: unknown params {sorted(unknown)}")
    definition.validate(typed)
    return TransformNode(output, op, typed, tuple(inputs))


def describe(graph: TransformGraph) -> str:
    lines = [f"{len(graph)} transform nodes"]
    for node in graph:
        lines.append(f"  {node.to_line()}  [{node.operator.op_class}]")
    return "\n".join(lines)
