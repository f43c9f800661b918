"""
Session validation: can this SessionSpec run against this table schema?

validate_session never raises; it returns a ValidationReport listing every
problem so the master can reject a session with one complete message.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

from lib.core.model import FeatureProjection, SessionSpec, TableSchema


@dataclass
class ValidationReport:
    missing_features: List[int] = field(default_factory=list)
    dangling_inputs: List[Tuple[int, int]] = field(default_factory=list)
    cycle: List[int] = field(default_factory=list)
    kind_errors: List[str] = field(default_factory=list)
    arity_errors: List[str] = field(default_factory=list)
    output_collisions: List[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems()

    def problems(self) -> List[str]:
        out = [f"feature {f} is not in the table schema" for f in self.missing_features]
        out += [f"transform {node} reads undefined input {fid}" for node, fid in self.dangling_inputs]
        if self.cycle:
            out.append(f"transform graph has a cycle through outputs {self.cycle}")
        out += self.kind_errors
        out += self.arity_errors
        out += [f"transform output {f} collides with a projected feature" for f in self.output_collisions]
        return out

    def __str__(self) -> str:
        problems = self.problems()
        if not problems:
            return "session is executable"
        return "\n".join(f"  - {p}" for p in problems)


def validate_session(spec: SessionSpec, schema: TableSchema) -> ValidationReport:
    report = ValidationReport()
    report.missing_features = [f for f in spec.projection if f not in schema]
    available = {f: schema.kind_of(f) for f in spec.projection if f in schema}
    # Unknown projection ids are reported once above, not again as dangling edges.
    known = set(spec.projection)
    check = spec.graph.check(available)
    report.dangling_inputs = [(node, fid) for node, fid in check.dangling if fid not in known]
    report.cycle = check.cycle
    report.kind_errors = check.kind_errors
    report.arity_errors = check.arity_errors
    report.output_collisions = [f for f in spec.graph.outputs if f in known]
    return report


def session_to_dict(spec: SessionSpec) -> dict:
    return {
        "table": spec.table,
        "partitions": list(spec.partitions),
        "projection": list(spec.projection.requested),
        "manifest": spec.graph.to_manifest(),
        "batch_size": spec.batch_size,
        "split_size": spec.split_size,
        "digest": spec.digest(),
    }


def session_from_dict(raw: dict) -> SessionSpec:
    from lib.transforms.graph import TransformGraph

    return SessionSpec(
        table=raw["table"],
        partitions=tuple(raw["partitions"]),
        projection=FeatureProjection(tuple(int(f) for f in raw["projection"])),
        graph=TransformGraph.from_manifest(raw.get("manifest", "")),
        batch_size=int(raw["batch_size"]),
        split_size=int(raw["split_size"]),
    )
