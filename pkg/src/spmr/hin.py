"""Heterogeneous information network data model and file ingestion.

A network has typed node sets and typed directed relations, each stored as a
sparse 0/1 adjacency matrix. Meta-paths are sequences of relation traversals
(forward or inverse) that start and end at the designated target node type.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, GraphValidationError, ParseError

INVERSE_SUFFIX = "^-1"


@dataclass(frozen=True)
class NodeType:
    id: int
    name: str
    count: int


@dataclass(frozen=True)
class Relation:
    id: int
    name: str
    source: int
    target: int


@dataclass(frozen=True)
class HinSchema:
    """Typed node sets and directed relations between them.

    Type and relation ids must be dense, unique and zero-based. Every
    relation is traversable in both directions; the inverse is realized as
    the transposed adjacency matrix, never stored separately.
    """

    node_types: tuple[NodeType, ...]
    relations: tuple[Relation, ...]

    def __post_init__(self):
        type_ids = [t.id for t in self.node_types]
        if type_ids != list(range(len(self.node_types))):
            raise GraphValidationError(
                f"node type ids must be dense and zero-based, got {type_ids}"
            )
        rel_ids = [r.id for r in self.relations]
        if rel_ids != list(range(len(self.relations))):
            raise GraphValidationError(
                f"relation ids must be dense and zero-based, got {rel_ids}"
            )
        names = [t.name for t in self.node_types]
        if len(set(names)) != len(names):
            raise GraphValidationError("duplicate node type names")
        rnames = [r.name for r in self.relations]
        if len(set(rnames)) != len(rnames):
            raise GraphValidationError("duplicate relation names")
        for t in self.node_types:
            if t.count < 0:
                raise GraphValidationError(f"negative count for node type {t.name!r}")
        for r in self.relations:
            for endpoint in (r.source, r.target):
                if not 0 <= endpoint < len(self.node_types):
                    raise GraphValidationError(
                        f"relation {r.name!r} references unknown node type {endpoint}"
                    )

    def type_by_name(self, name: str) -> NodeType:
        for t in self.node_types:
            if t.name == name:
                return t
        raise KeyError(name)

    def relation_by_name(self, name: str) -> Relation:
        for r in self.relations:
            if r.name == name:
                return r
        raise KeyError(name)


@dataclass(frozen=True)
class Step:
    """One traversal of a relation, forward or against its direction."""

    relation: int
    inverse: bool = False

    def source_type(self, schema: HinSchema) -> int:
        rel = schema.relations[self.relation]
        return rel.target if self.inverse else rel.source

    def target_type(self, schema: HinSchema) -> int:
        rel = schema.relations[self.relation]
        return rel.source if self.inverse else rel.target

    def token(self, schema: HinSchema) -> str:
        name = schema.relations[self.relation].name
        return name + INVERSE_SUFFIX if self.inverse else name

    def reversed(self) -> "Step":
        return Step(self.relation, not self.inverse)


@dataclass(frozen=True)
class MetaPath:
    """An ordered sequence of relation traversals."""

    steps: tuple[Step, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def length(self) -> int:
        return len(self.steps)

    def sort_key(self) -> tuple:
        return tuple((s.relation, s.inverse) for s in self.steps)

    def reversed(self) -> "MetaPath":
        return MetaPath(tuple(s.reversed() for s in reversed(self.steps)))

    def type_names(self, schema: HinSchema) -> list[str]:
        names = [schema.node_types[self.steps[0].source_type(schema)].name]
        names += [schema.node_types[s.target_type(schema)].name for s in self.steps]
        return names

    def display_name(self, schema: HinSchema) -> str:
        """Human-readable node type chain, e.g. ``Blog-User-User-Blog``."""
        return "-".join(self.type_names(schema))

    def token_form(self, schema: HinSchema) -> str:
        """Relation-name form used in meta-path files."""
        return ".".join(s.token(schema) for s in self.steps)


class HinGraph:
    """Immutable typed graph: schema plus one sparse 0/1 matrix per relation."""

    def __init__(
        self,
        schema: HinSchema,
        adjacency: Sequence[sp.spmatrix],
        target_type: int,
    ):
        if not 0 <= target_type < len(schema.node_types):
            raise GraphValidationError(f"target type {target_type} not in schema")
        if len(adjacency) != len(schema.relations):
            raise GraphValidationError(
                f"expected {len(schema.relations)} adjacency matrices, "
                f"got {len(adjacency)}"
            )
        mats = []
        for rel, mat in zip(schema.relations, adjacency):
            expected = (
                schema.node_types[rel.source].count,
                schema.node_types[rel.target].count,
            )
            if mat.shape != expected:
                raise GraphValidationError(
                    f"relation {rel.name!r}: matrix shape {mat.shape} does not "
                    f"match node counts {expected}"
                )
            mat = sp.csr_matrix(mat, dtype=np.int64)
            mat.sum_duplicates()
            mat.eliminate_zeros()
            mat.data[:] = 1  # collapse multi-edges
            mats.append(mat)
        self.schema = schema
        self.adjacency = tuple(mats)
        self.target_type = target_type

    @property
    def node_counts(self) -> tuple[int, ...]:
        return tuple(t.count for t in self.schema.node_types)

    @property
    def n_target(self) -> int:
        return self.schema.node_types[self.target_type].count

    def step_matrix(self, step: Step) -> sp.csr_matrix:
        mat = self.adjacency[step.relation]
        return sp.csr_matrix(mat.T) if step.inverse else mat

    def fingerprint(self) -> str:
        """Content hash over schema, counts, target type and edge sets."""
        h = hashlib.sha256()
        h.update(json.dumps(schema_to_dict(self), sort_keys=True).encode())
        for mat in self.adjacency:
            coo = mat.tocoo()
            order = np.lexsort((coo.col, coo.row))
            h.update(coo.row[order].astype(np.int64).tobytes())
            h.update(coo.col[order].astype(np.int64).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def schema_to_dict(graph: HinGraph) -> dict:
    return {
        "node_types": [
            {"id": t.id, "name": t.name, "count": t.count}
            for t in graph.schema.node_types
        ],
        "relations": [
            {"id": r.id, "name": r.name, "source": r.source, "target": r.target}
            for r in graph.schema.relations
        ],
        "target_type": graph.target_type,
    }


def read_schema_file(path: str | Path) -> tuple[HinSchema, int]:
    """Parse a schema JSON file, returning the schema and the target type id."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"schema file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    try:
        node_types = tuple(
            NodeType(id=int(t["id"]), name=str(t["name"]), count=int(t["count"]))
            for t in raw["node_types"]
        )
        relations = tuple(
            Relation(
                id=int(r["id"]),
                name=str(r["name"]),
                source=int(r["source"]),
                target=int(r["target"]),
            )
            for r in raw["relations"]
        )
        target_type = int(raw["target_type"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed schema: {exc}") from exc
    return HinSchema(node_types=node_types, relations=relations), target_type


def read_edge_file(path: str | Path, n_source: int, n_target: int) -> sp.csr_matrix:
    """Read a two-column TSV of (source_id, target_id) into a 0/1 matrix.

    Lines starting with '#' and blank lines are ignored. Duplicate rows
    collapse to a single edge.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"edge file not found: {path}")
    rows: list[int] = []
    cols: list[int] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(
                    f"{path}:{lineno}: expected 2 columns, got {len(parts)}"
                )
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(
                    f"{path}:{lineno}: non-integer node id in {line!r}"
                ) from None
            if not 0 <= i < n_source:
                raise GraphValidationError(
                    f"{path}:{lineno}: source id {i} out of range [0, {n_source})"
                )
            if not 0 <= j < n_target:
                raise GraphValidationError(
                    f"{path}:{lineno}: target id {j} out of range [0, {n_target})"
                )
            rows.append(i)
            cols.append(j)
    mat = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)),
        shape=(n_source, n_target),
    )
    mat.sum_duplicates()
    mat.data[:] = 1
    return mat


def load_graph(
    schema_file: str | Path, edge_files: Mapping[str, str | Path]
) -> HinGraph:
    """Load a graph from a schema JSON file and one edge TSV per relation."""
    schema, target_type = read_schema_file(schema_file)
    declared = {r.name for r in schema.relations}
    missing = declared - set(edge_files)
    if missing:
        raise ConfigError(f"no edge file given for relation(s): {sorted(missing)}")
    unknown = set(edge_files) - declared
    if unknown:
        raise ConfigError(f"edge file(s) for undeclared relation(s): {sorted(unknown)}")
    adjacency = []
    for rel in schema.relations:
        n_s = schema.node_types[rel.source].count
        n_t = schema.node_types[rel.target].count
        adjacency.append(read_edge_file(edge_files[rel.name], n_s, n_t))
    return HinGraph(schema, adjacency, target_type)


def write_edge_file(path: str | Path, matrix: sp.spmatrix) -> None:
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.row[k]}\t{coo.col[k]}\n" for k in order]
    Path(path).write_text("".join(lines), encoding="utf-8")


def write_graph(graph: HinGraph, out_dir: str | Path) -> tuple[Path, dict[str, Path]]:
    """Write schema.json plus one <relation>.tsv per relation into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schema_path = out_dir / "schema.json"
    schema_path.write_text(
        json.dumps(schema_to_dict(graph), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    edge_paths = {}
    for rel in graph.schema.relations:
        p = out_dir / f"{rel.name}.tsv"
        write_edge_file(p, graph.adjacency[rel.id])
        edge_paths[rel.name] = p
    return schema_path, edge_paths


# ---------------------------------------------------------------------------
# Meta-path enumeration and validation
# ---------------------------------------------------------------------------

def enumerate_metapaths(
    graph: HinGraph, max_length: int, prune_backtracking: bool = False
) -> list[MetaPath]:
    """All type-compatible meta-paths of length 2..max_length over the schema.

    Paths start and end at the graph's target type. Output order is
    lexicographic over (relation id, inverse flag) step keys and does not
    depend on edge contents. With prune_backtracking, paths containing a
    relation immediately followed by its own inverse are dropped.
    """
    if max_length < 2:
        raise ValueError(f"max_length must be >= 2, got {max_length}")
    schema = graph.schema
    steps_from: dict[int, list[Step]] = {t.id: [] for t in schema.node_types}
    for rel in schema.relations:
        steps_from[rel.source].append(Step(rel.id, inverse=False))
        steps_from[rel.target].append(Step(rel.id, inverse=True))
    for lst in steps_from.values():
        lst.sort(key=lambda s: (s.relation, s.inverse))

    found: list[MetaPath] = []
    prefix: list[Step] = []

    def extend(at_type: int) -> None:
        if len(prefix) >= 2 and at_type == graph.target_type:
            found.append(MetaPath(tuple(prefix)))
        if len(prefix) == max_length:
            return
        for step in steps_from[at_type]:
            if (
                prune_backtracking
                and prefix
                and step == prefix[-1].reversed()
            ):
                continue
            prefix.append(step)
            extend(step.target_type(schema))
            prefix.pop()

    extend(graph.target_type)
    found.sort(key=MetaPath.sort_key)
    return found


def validate_metapath(graph: HinGraph, path: MetaPath) -> str | None:
    """Return None if the path is valid on this graph, else a description."""
    schema = graph.schema
    if not path.steps:
        return "meta-path is empty"
    for idx, step in enumerate(path.steps):
        if not 0 <= step.relation < len(schema.relations):
            return f"step {idx}: unknown relation id {step.relation}"
    if path.steps[0].source_type(schema) != graph.target_type:
        return (
            f"does not start at target type "
            f"{schema.node_types[graph.target_type].name!r}"
        )
    for idx in range(len(path.steps) - 1):
        here = path.steps[idx].target_type(schema)
        there = path.steps[idx + 1].source_type(schema)
        if here != there:
            return (
                f"step {idx + 1}: source type "
                f"{schema.node_types[there].name!r} does not match previous "
                f"target type {schema.node_types[here].name!r}"
            )
    if path.steps[-1].target_type(schema) != graph.target_type:
        return "does not return to target type"
    return None


# ---------------------------------------------------------------------------
# Meta-path file format: one path per line, relation names joined by '.',
# suffix ^-1 marks an inverse traversal. An optional leading token naming the
# target node type is accepted and skipped on parse.
# ---------------------------------------------------------------------------

def parse_metapath_line(graph: HinGraph, line: str) -> MetaPath:
    tokens = line.strip().split(".")
    target_name = graph.schema.node_types[graph.target_type].name
    if tokens and tokens[0] == target_name:
        tokens = tokens[1:]
    if not tokens or tokens == [""]:
        raise ParseError(f"empty meta-path line: {line!r}")
    steps = []
    for tok in tokens:
        inverse = tok.endswith(INVERSE_SUFFIX)
        name = tok[: -len(INVERSE_SUFFIX)] if inverse else tok
        try:
            rel = graph.schema.relation_by_name(name)
        except KeyError:
            raise ParseError(f"unknown relation {name!r} in meta-path {line!r}") from None
        steps.append(Step(rel.id, inverse=inverse))
    return MetaPath(tuple(steps))


def read_metapath_file(graph: HinGraph, path: str | Path) -> list[MetaPath]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"meta-path file not found: {path}")
    paths = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            mp = parse_metapath_line(graph, line)
        except ParseError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        violation = validate_metapath(graph, mp)
        if violation is not None:
            raise GraphValidationError(f"{path}:{lineno}: {violation}")
        paths.append(mp)
    return paths


def write_metapath_file(
    graph: HinGraph, paths: Iterable[MetaPath], out: str | Path
) -> None:
    target_name = graph.schema.node_types[graph.target_type].name
    lines = [f"{target_name}.{mp.token_form(graph.schema)}\n" for mp in paths]
    Path(out).write_text("".join(lines), encoding="utf-8")
