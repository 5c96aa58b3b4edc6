"""Schemas, instances and dataset ingestion (ARFF/CSV) for labeled data streams.

Nominal values are mapped to integer indices at parse time so the training
hot path never touches strings. Missing values are rejected, not imputed.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator, TextIO


class SchemaError(ValueError):
    """Malformed header or inconsistent attribute declaration."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RecordError(ValueError):
    """A data row that cannot be mapped onto its schema."""

    def __init__(self, message: str, row: int | None = None, attribute: str | None = None):
        self.row = row
        self.attribute = attribute
        prefix = []
        if row is not None:
            prefix.append(f"row {row}")
        if attribute is not None:
            prefix.append(f"attribute {attribute!r}")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)


NUMERIC = "numeric"
NOMINAL = "nominal"


@dataclass(frozen=True)
class AttributeSpec:
    """One attribute: numeric, or nominal with an ordered value list."""

    name: str
    kind: str
    values: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, NOMINAL):
            raise SchemaError(f"unknown attribute kind {self.kind!r}")
        if self.kind == NOMINAL:
            if not self.values:
                raise SchemaError(f"nominal attribute {self.name!r} has no values")
            if len(set(self.values)) != len(self.values):
                raise SchemaError(f"nominal attribute {self.name!r} has duplicate values")
        elif self.values:
            raise SchemaError(f"numeric attribute {self.name!r} cannot carry a value list")

    @property
    def is_nominal(self) -> bool:
        return self.kind == NOMINAL


@dataclass(frozen=True)
class Schema:
    """Ordered attribute list plus the index of the (nominal) class attribute."""

    attributes: tuple[AttributeSpec, ...]
    class_attribute: int
    relation: str = "stream"

    def __post_init__(self):
        if not 0 <= self.class_attribute < len(self.attributes):
            raise SchemaError("class attribute index out of range")
        if not self.attributes[self.class_attribute].is_nominal:
            raise SchemaError("class attribute must be nominal")
        if len(self.attributes) < 2:
            raise SchemaError("schema needs at least one non-class attribute")

    @property
    def num_classes(self) -> int:
        return len(self.attributes[self.class_attribute].values)

    @property
    def class_values(self) -> tuple[str, ...]:
        return self.attributes[self.class_attribute].values

    @property
    def feature_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.attributes)) if i != self.class_attribute)

    @property
    def num_features(self) -> int:
        return len(self.attributes) - 1

    def validate_instance(self, inst: "Instance") -> None:
        """Raise RecordError if the instance violates this schema."""
        if len(inst.values) != self.num_features:
            raise RecordError(
                f"expected {self.num_features} feature values, got {len(inst.values)}"
            )
        if not 0 <= inst.class_index < self.num_classes:
            raise RecordError(f"class index {inst.class_index} out of range")
        if inst.weight < 0:
            raise RecordError("negative instance weight")
        for pos, attr_idx in enumerate(self.feature_indices):
            attr = self.attributes[attr_idx]
            v = inst.values[pos]
            if attr.is_nominal:
                if v != int(v) or not 0 <= int(v) < len(attr.values):
                    raise RecordError(
                        f"value {v} outside nominal range", attribute=attr.name
                    )
            elif math.isnan(v):
                raise RecordError("NaN feature value", attribute=attr.name)


@dataclass(slots=True)
class Instance:
    """One labeled record: feature values (class excluded) plus class index.

    Nominal features hold their value-list index as a float. Instances are
    treated as immutable after construction and may be shared across threads.
    """

    values: tuple[float, ...]
    class_index: int
    weight: float = 1.0


@dataclass(slots=True)
class StreamRecord:
    """An instance in flight: stream position plus send/receive timestamps (ns)."""

    seq: int
    instance: Instance
    sent_at: int
    received_at: int


def _parse_value_list(body: str, line_no: int) -> tuple[str, ...]:
    inner = body.strip()
    if not (inner.startswith("{") and inner.endswith("}")):
        raise SchemaError(f"expected {{...}} value list, got {body!r}", line_no)
    values = tuple(v.strip().strip("'\"") for v in inner[1:-1].split(","))
    if any(not v for v in values):
        raise SchemaError("empty nominal value", line_no)
    return values


def _row_to_instance(
    tokens: list[str], schema: Schema, row_no: int
) -> Instance:
    attrs = schema.attributes
    if len(tokens) != len(attrs):
        raise RecordError(
            f"expected {len(attrs)} columns, got {len(tokens)}", row=row_no
        )
    values: list[float] = []
    class_index = -1
    for i, (attr, tok) in enumerate(zip(attrs, tokens)):
        tok = tok.strip().strip("'\"")
        if tok == "?":
            raise RecordError("missing values are not supported", row=row_no, attribute=attr.name)
        if attr.is_nominal:
            try:
                idx = attr.values.index(tok)
            except ValueError:
                raise RecordError(
                    f"token {tok!r} not in nominal value list", row=row_no, attribute=attr.name
                ) from None
            if i == schema.class_attribute:
                class_index = idx
            else:
                values.append(float(idx))
        else:
            try:
                num = float(tok)
            except ValueError:
                raise RecordError(
                    f"cannot parse numeric token {tok!r}", row=row_no, attribute=attr.name
                ) from None
            values.append(num)
    return Instance(tuple(values), class_index)


def parse_arff_header(lines: Iterator[tuple[int, str]]) -> Schema:
    """Consume header lines up to and including @data, returning the Schema."""
    attributes: list[AttributeSpec] = []
    relation = "stream"
    saw_data = False
    last_line = 0
    for line_no, raw in lines:
        last_line = line_no
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        lowered = line.lower()
        if lowered.startswith("@relation"):
            relation = line[len("@relation"):].strip().strip("'\"") or relation
        elif lowered.startswith("@attribute"):
            body = line[len("@attribute"):].strip()
            if not body:
                raise SchemaError("@attribute without a name", line_no)
            if body.startswith("'") or body.startswith('"'):
                quote = body[0]
                end = body.find(quote, 1)
                if end < 0:
                    raise SchemaError("unterminated attribute name quote", line_no)
                name, rest = body[1:end], body[end + 1:].strip()
            else:
                parts = body.split(None, 1)
                if len(parts) != 2:
                    raise SchemaError(f"malformed @attribute line {line!r}", line_no)
                name, rest = parts
            rest = rest.strip()
            if rest.startswith("{"):
                attributes.append(AttributeSpec(name, NOMINAL, _parse_value_list(rest, line_no)))
            elif rest.lower() in ("numeric", "real", "integer"):
                attributes.append(AttributeSpec(name, NUMERIC))
            else:
                raise SchemaError(f"unsupported attribute type {rest!r}", line_no)
        elif lowered.startswith("@data"):
            saw_data = True
            break
        else:
            raise SchemaError(f"unexpected header line {line!r}", line_no)
    if not saw_data:
        raise SchemaError("no @data section found", last_line)
    if not attributes:
        raise SchemaError("no attributes declared", last_line)
    # Class is the last declared attribute, the usual ARFF convention.
    return Schema(tuple(attributes), class_attribute=len(attributes) - 1, relation=relation)


def parse_arff(source: Iterable[str] | TextIO) -> tuple[Schema, Iterator[Instance]]:
    """Parse an ARFF subset: @relation, numeric/{...} attributes, @data, CSV rows.

    Returns the schema eagerly and the instances as a lazy iterator. `%`
    comment lines and blank lines are skipped. The last attribute is the class.
    """
    numbered = iter(enumerate(source, start=1))
    schema = parse_arff_header(numbered)

    def instances() -> Iterator[Instance]:
        for line_no, raw in numbered:
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            yield _row_to_instance(line.split(","), schema, line_no)

    return schema, instances()


def parse_csv(source: Iterable[str] | TextIO, schema: Schema) -> Iterator[Instance]:
    """Parse header-less CSV rows against a caller-supplied schema, class last."""
    for row_no, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        yield _row_to_instance(line.split(","), schema, row_no)


def format_csv_row(schema: Schema, inst: Instance) -> str:
    """Render an instance back to its CSV row form (nominal tokens, class last)."""
    tokens: list[str] = []
    pos = 0
    for i, attr in enumerate(schema.attributes):
        if i == schema.class_attribute:
            tokens.append(attr.values[inst.class_index])
        elif attr.is_nominal:
            tokens.append(attr.values[int(inst.values[pos])])
            pos += 1
        else:
            tokens.append(repr(inst.values[pos]))
            pos += 1
    return ",".join(tokens)


def format_arff_header(schema: Schema) -> str:
    lines = [f"@relation {schema.relation}"]
    for attr in schema.attributes:
        if attr.is_nominal:
            lines.append(f"@attribute {attr.name} {{{','.join(attr.values)}}}")
        else:
            lines.append(f"@attribute {attr.name} numeric")
    lines.append("@data")
    return "\n".join(lines)


def write_arff(schema: Schema, instances: Iterable[Instance], sink: TextIO) -> int:
    """Serialize schema + instances as ARFF text; returns the row count."""
    sink.write(format_arff_header(schema) + "\n")
    count = 0
    for inst in instances:
        sink.write(format_csv_row(schema, inst) + "\n")
        count += 1
    return count


# --- synthetic stream -----------------------------------------------------

_SYNTH_PRE_THRESHOLD = 1.0
_SYNTH_POST_THRESHOLD = 0.6


def synthetic_schema() -> Schema:
    return Schema(
        (
            AttributeSpec("x0", NUMERIC),
            AttributeSpec("x1", NUMERIC),
            AttributeSpec("x2", NUMERIC),
            AttributeSpec("class", NOMINAL, ("0", "1")),
        ),
        class_attribute=3,
        relation="synthetic-drift",
    )


def synthetic_drift_stream(seed: int, change_at: int | float = math.inf) -> Iterator[Instance]:
    """Deterministic 2-class stream with 3 uniform features and one abrupt drift.

    The label is 1 when x0 + x1 exceeds a threshold: 1.0 before `change_at`
    instances have been emitted, 0.6 afterwards. Equal seeds produce equal
    streams.
    """
    if change_at < 0:
        raise ValueError("change_at must be non-negative")
    rng = random.Random(seed)
    emitted = 0
    while True:
        x0 = rng.random()
        x1 = rng.random()
        x2 = rng.random()
        threshold = _SYNTH_PRE_THRESHOLD if emitted < change_at else _SYNTH_POST_THRESHOLD
        label = 1 if x0 + x1 > threshold else 0
        yield Instance((x0, x1, x2), label)
        emitted += 1
