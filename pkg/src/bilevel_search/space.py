"""Searchable parameter space, configurations and proposals.

A configuration assigns one value to every declared parameter. Batch size is
stored as its log2 exponent, so ``TOTAL_BATCH_SIZE = 19`` means 2**19 tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import TYPE_CHECKING, Any, Iterator, Mapping, Sequence

from .errors import (
    FrozenParameter,
    LockedParameter,
    OutOfDomain,
    SpaceFileError,
    UnknownParameter,
)

if TYPE_CHECKING:
    from .strategy import SearchConfig

LOG2 = "log2"
REAL = "real"
CATEGORICAL = "categorical"
KINDS = (LOG2, REAL, CATEGORICAL)

REAL_TOL = 1e-12

Value = Any


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    kind: str
    default: Value
    low: float | int | None = None
    high: float | int | None = None
    choices: tuple = ()
    locked: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.choices:
                raise ValueError(f"{self.name}: categorical needs at least one value")
            object.__setattr__(self, "choices", tuple(self.choices))
        elif self.low is None or self.high is None or self.low > self.high:
            raise ValueError(f"{self.name}: invalid bounds [{self.low}, {self.high}]")
        if not self.contains(self.default):
            raise ValueError(f"{self.name}: default {self.default!r} outside its domain")

    @property
    def is_numeric(self) -> bool:
        return self.kind in (LOG2, REAL)

    def contains(self, value: Value) -> bool:
        if self.kind == CATEGORICAL:
            return any(_same_categorical(value, c) for c in self.choices)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        if self.kind == LOG2:
            return isinstance(value, int) and self.low <= value <= self.high
        return math.isfinite(value) and self.low - REAL_TOL <= value <= self.high + REAL_TOL

    def equal(self, a: Value, b: Value) -> bool:
        if self.kind == REAL:
            return abs(float(a) - float(b)) <= REAL_TOL
        if self.kind == CATEGORICAL:
            return _same_categorical(a, b)
        return a == b

    def position(self, value: Value) -> float:
        """Order key used to tell an increase from a decrease."""
        if self.kind == CATEGORICAL:
            for i, c in enumerate(self.choices):
                if _same_categorical(value, c):
                    return float(i)
            raise OutOfDomain(f"{self.name}: {value!r} not in {self.choices}")
        return float(value)


def _same_categorical(a: Value, b: Value) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return a is b
    return a == b and (isinstance(a, str) == isinstance(b, str))


class ParameterSpace(Sequence[ParameterSpec]):
    """Ordered collection of parameter specs; declaration order matters for tie-breaks."""

    def __init__(self, specs: Sequence[ParameterSpec]):
        self._specs = tuple(specs)
        self._by_name = {s.name: s for s in self._specs}
        if len(self._by_name) != len(self._specs):
            raise ValueError("duplicate parameter names")

    def __getitem__(self, index):
        return self._specs[index]

    def __len__(self) -> int:
        return len(self._specs)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ParameterSpace) and self._specs == other._specs

    def __hash__(self) -> int:
        return hash(self._specs)

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    def get(self, name: str) -> ParameterSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownParameter(f"unknown parameter {name!r}") from None

    def names(self) -> list[str]:
        return [s.name for s in self._specs]

    def editable(self) -> list[str]:
        return [s.name for s in self._specs if not s.locked]

    def index(self, name: str) -> int:  # type: ignore[override]
        return self.names().index(name)

    def baseline(self) -> Configuration:
        return Configuration({s.name: s.default for s in self._specs})


@dataclass(frozen=True)
class Configuration(Mapping[str, Value]):
    """Immutable name -> value assignment."""

    assignments: Mapping[str, Value]

    def __post_init__(self) -> None:
        object.__setattr__(self, "assignments", MappingProxyType(dict(self.assignments)))

    def __getitem__(self, name: str) -> Value:
        return self.assignments[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.assignments)

    def __len__(self) -> int:
        return len(self.assignments)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Configuration):
            return dict(self.assignments) == dict(other.assignments)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.assignments.items())))

    def with_changes(self, changes: Mapping[str, Value]) -> Configuration:
        merged = dict(self.assignments)
        merged.update(changes)
        return Configuration(merged)

    def to_dict(self) -> dict[str, Value]:
        return dict(self.assignments)

    def validate(self, space: ParameterSpace) -> None:
        missing = set(space.names()) - set(self.assignments)
        extra = set(self.assignments) - set(space.names())
        if missing or extra:
            raise UnknownParameter(f"configuration mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, value in self.assignments.items():
            if not space.get(name).contains(value):
                raise OutOfDomain(f"{name}={value!r} outside its domain")


@dataclass(frozen=True)
class Proposal:
    """A set of parameter changes plus a one-sentence hypothesis.

    ``origin`` names the component that produced it (``scripted``,
    ``bandit:<arm>``, ``orthogonal:<param>:<direction>``, ``external``).
    ``clamped`` marks values pinned at a domain boundary and ``forced`` marks a
    candidate passed through after every alternative was vetoed.
    """

    changes: Mapping[str, Value]
    hypothesis: str = ""
    origin: str = ""
    clamped: bool = False
    forced: bool = False

    def __post_init__(self) -> None:
        if not self.changes:
            raise ValueError("a proposal needs at least one change")
        object.__setattr__(self, "changes", MappingProxyType(dict(self.changes)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Proposal):
            return NotImplemented
        return (
            self.key() == other.key()
            and self.hypothesis == other.hypothesis
            and self.origin == other.origin
            and self.clamped == other.clamped
            and self.forced == other.forced
        )

    def __hash__(self) -> int:
        return hash((self.key(), self.hypothesis, self.origin, self.clamped, self.forced))

    def key(self) -> tuple:
        """Identity of the change set, ignoring annotations."""
        return tuple(sorted(self.changes.items(), key=lambda kv: kv[0]))

    def touches(self, name: str) -> bool:
        return name in self.changes

    def to_json(self) -> dict[str, Any]:
        return {"changes": dict(sorted(self.changes.items())), "hypothesis": self.hypothesis}


def apply_proposal(
    config: Configuration,
    proposal: Proposal,
    search_config: SearchConfig | None = None,
    space: ParameterSpace | None = None,
) -> Configuration:
    """Return ``config`` with the proposal's changes applied; ``config`` is not modified."""
    space = space if space is not None else default_space()
    frozen = search_config.frozen if search_config is not None else frozenset()
    for name, value in proposal.changes.items():
        spec = space.get(name)
        if spec.locked:
            raise LockedParameter(f"{name} is locked")
        if name in frozen:
            raise FrozenParameter(f"{name} is frozen")
        if not spec.contains(value):
            raise OutOfDomain(f"{name}={value!r} outside its domain")
    return config.with_changes(proposal.changes)


def default_space() -> ParameterSpace:
    """The benchmark space: five editable knobs, three flat LR-family knobs, two locked."""
    return _DEFAULT_SPACE


_DEFAULT_SPACE = ParameterSpace(
    [
        ParameterSpec("TOTAL_BATCH_SIZE", LOG2, 19, low=16, high=20),
        ParameterSpec("WEIGHT_DECAY", REAL, 0.1, low=0.0, high=0.2),
        ParameterSpec("LR", REAL, 2e-3, low=1e-4, high=1e-2),
        ParameterSpec("WINDOW_PATTERN", CATEGORICAL, "SLSL", choices=("LLLL", "SLSL", "SSSS")),
        ParameterSpec("HEAD_DIM", CATEGORICAL, 128, choices=(64, 128)),
        ParameterSpec("UNEMBEDDING_LR", REAL, 4e-3, low=1e-4, high=1e-2),
        ParameterSpec("MATRIX_LR", REAL, 0.04, low=1e-3, high=0.1),
        ParameterSpec("FINAL_LR_FRAC", REAL, 0.1, low=0.0, high=1.0),
        ParameterSpec("DEPTH", CATEGORICAL, 8, choices=(8,), locked=True),
        ParameterSpec("ASPECT_RATIO", CATEGORICAL, 64, choices=(64,), locked=True),
    ]
)


# -- file format -------------------------------------------------------------
#
#   # comment
#   TOTAL_BATCH_SIZE = log2 16 20 19
#   WEIGHT_DECAY     = real 0.0 0.2 0.1
#   WINDOW_PATTERN   = categorical LLLL,SLSL,SSSS SLSL
#   DEPTH            = categorical 8 8 locked


def parse_value(text: str) -> Value:
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def iter_key_values(text: str) -> Iterator[tuple[int, str, str]]:
    """Yield ``(line_no, key, value)`` from ``key = value`` text, skipping blanks and comments."""
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise SpaceFileError(f"line {line_no}: expected 'key = value', got {raw!r}")
        yield line_no, key.strip(), value.strip()


def parse_space(text: str) -> ParameterSpace:
    specs = []
    for line_no, name, rhs in iter_key_values(text):
        fields = rhs.split()
        locked = False
        if fields and fields[-1] in ("locked", "editable"):
            locked = fields.pop() == "locked"
        try:
            kind = fields[0]
            if kind in (LOG2, REAL):
                if len(fields) != 4:
                    raise SpaceFileError(f"line {line_no}: {kind} needs 'low high default'")
                cast = int if kind == LOG2 else float
                low, high, default = (cast(f) for f in fields[1:])
                specs.append(ParameterSpec(name, kind, default, low=low, high=high, locked=locked))
            elif kind == CATEGORICAL:
                if len(fields) != 3:
                    raise SpaceFileError(f"line {line_no}: categorical needs 'v1,v2,... default'")
                choices = tuple(parse_value(v) for v in fields[1].split(","))
                specs.append(ParameterSpec(name, kind, parse_value(fields[2]), choices=choices, locked=locked))
            else:
                raise SpaceFileError(f"line {line_no}: unknown kind {kind!r}")
        except (IndexError, ValueError) as exc:
            raise SpaceFileError(f"line {line_no}: {exc}") from exc
    if not specs:
        raise SpaceFileError("no parameters declared")
    try:
        return ParameterSpace(specs)
    except ValueError as exc:
        raise SpaceFileError(str(exc)) from exc


def load_space(path: str | Path | None) -> ParameterSpace:
    if path is None:
        return default_space()
    return parse_space(Path(path).read_text())


def format_space(space: ParameterSpace) -> str:
    lines = []
    for s in space:
        if s.kind == CATEGORICAL:
            body = f"{s.kind} {','.join(str(c) for c in s.choices)} {s.default}"
        else:
            body = f"{s.kind} {s.low} {s.high} {s.default}"
        lines.append(f"{s.name} = {body}{' locked' if s.locked else ''}")
    return "\n".join(lines) + "\n"
