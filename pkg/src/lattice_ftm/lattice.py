"""Word lattices: the text format, the arc-adjacency (line) graph and the 1-best path.

A lattice file is line oriented::

    LATTICE <utterance_id> <true|false|unlabeled> <num_states> <num_arcs>
    <start> <end> <word> <am> <lm> <log_post> <frames> <flag1> <flag2> <e1> ... <e14>
    ...

A corpus is several such blocks separated by blank lines.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

EMBEDDING_DIM = 14
FEATURE_DIM = 20
ARC_FIELDS = 9 + EMBEDDING_DIM


class Label(enum.Enum):
    TRUE_TRIGGER = "true"
    FALSE_TRIGGER = "false"
    UNLABELED = "unlabeled"

    @property
    def target(self) -> int:
        """Binary training target; 1 means false trigger."""
        if self is Label.UNLABELED:
            raise ValueError("unlabeled lattice has no target")
        return int(self is Label.FALSE_TRIGGER)


class LatticeError(ValueError):
    """Base class for lattice problems."""


class LatticeParseError(LatticeError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class HeaderError(LatticeParseError):
    pass


class FieldCountError(LatticeParseError):
    pass


class FieldValueError(LatticeParseError):
    pass


class StateIndexError(LatticeParseError):
    pass


class CycleError(LatticeParseError):
    pass


class EmptyLatticeError(LatticeParseError):
    pass


class ArcCountError(LatticeParseError):
    pass


class StructureError(LatticeError):
    """Raised when a lattice has no complete path from the initial state."""


@dataclass(frozen=True)
class ArcFeatures:
    phone_embedding: tuple[float, ...]
    am_score: float
    lm_score: float
    log_posterior: float
    num_frames: int
    trigger_flag_1: int
    trigger_flag_2: int

    def __post_init__(self):
        if len(self.phone_embedding) != EMBEDDING_DIM:
            raise ValueError(f"phone embedding must have {EMBEDDING_DIM} values")
        if self.log_posterior > 0:
            raise ValueError("log posterior must be <= 0")
        if self.num_frames < 0:
            raise ValueError("num_frames must be >= 0")
        if self.trigger_flag_1 not in (0, 1) or self.trigger_flag_2 not in (0, 1):
            raise ValueError("trigger flags must be 0 or 1")

    def to_vector(self) -> np.ndarray:
        return np.array(
            [
                *self.phone_embedding,
                self.am_score,
                self.lm_score,
                self.log_posterior,
                self.num_frames,
                self.trigger_flag_1,
                self.trigger_flag_2,
            ],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class Arc:
    start: int
    end: int
    word: str
    features: ArcFeatures


@dataclass(frozen=True)
class Lattice:
    utterance_id: str
    label: Label
    num_states: int
    arcs: tuple[Arc, ...]

    def __post_init__(self):
        # keep arcs hashable/immutable even if a list was passed
        object.__setattr__(self, "arcs", tuple(self.arcs))

    @property
    def num_arcs(self) -> int:
        return len(self.arcs)

    def permuted(self, order: Sequence[int]) -> "Lattice":
        """Same lattice with arcs reordered so that new arc k is old arc order[k]."""
        return Lattice(self.utterance_id, self.label, self.num_states,
                       tuple(self.arcs[i] for i in order))


@dataclass
class GraphSample:
    adjacency: np.ndarray
    features: np.ndarray
    label: Label
    utterance_id: str

    @property
    def num_arcs(self) -> int:
        return self.adjacency.shape[0]


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def _find_cycle_line(num_states: int, arcs: list[tuple[int, int]], first_line: int) -> int | None:
    """Kahn's algorithm; returns the line number of an arc left on a cycle, else None."""
    indeg = [0] * num_states
    out = defaultdict(list)
    for s, e in arcs:
        indeg[e] += 1
        out[s].append(e)
    stack = [s for s in range(num_states) if indeg[s] == 0]
    done = [False] * num_states
    while stack:
        s = stack.pop()
        done[s] = True
        for e in out[s]:
            indeg[e] -= 1
            if indeg[e] == 0:
                stack.append(e)
    for k, (s, e) in enumerate(arcs):
        if not done[s] and not done[e]:
            return first_line + k
    return None


def _parse_block(lines: list[tuple[int, str]]) -> Lattice:
    header_no, header = lines[0]
    parts = header.split()
    if len(parts) != 5 or parts[0] != "LATTICE":
        raise HeaderError("expected 'LATTICE <id> <label> <num_states> <num_arcs>'", header_no)
    _, utt_id, label_text, states_text, arcs_text = parts
    try:
        label = Label(label_text)
    except ValueError:
        raise HeaderError(f"unknown label {label_text!r}", header_no) from None
    try:
        num_states = int(states_text)
        num_arcs = int(arcs_text)
    except ValueError:
        raise HeaderError("state and arc counts must be integers", header_no) from None
    if num_states < 1:
        raise HeaderError("num_states must be positive", header_no)
    if num_arcs == 0:
        raise EmptyLatticeError("lattice has no arcs", header_no)
    if num_arcs < 0:
        raise HeaderError("num_arcs must be positive", header_no)

    body = lines[1:]
    if len(body) != num_arcs:
        where = body[-1][0] + 1 if body else header_no
        raise ArcCountError(f"header declares {num_arcs} arcs, found {len(body)}", where)

    arcs = []
    for line_no, text in body:
        fields = text.split()
        if len(fields) != ARC_FIELDS:
            raise FieldCountError(f"expected {ARC_FIELDS} fields, got {len(fields)}", line_no)
        try:
            start, end = int(fields[0]), int(fields[1])
            am, lm, post = (float(v) for v in fields[3:6])
            frames, f1, f2 = int(fields[6]), int(fields[7]), int(fields[8])
            emb = tuple(float(v) for v in fields[9:])
        except ValueError as err:
            raise FieldValueError(str(err), line_no) from None
        for s in (start, end):
            if not 0 <= s < num_states:
                raise StateIndexError(f"state {s} outside [0, {num_states})", line_no)
        if not all(math.isfinite(v) for v in (am, lm, post, *emb)):
            raise FieldValueError("non-finite score", line_no)
        try:
            feats = ArcFeatures(emb, am, lm, post, frames, f1, f2)
        except ValueError as err:
            raise FieldValueError(str(err), line_no) from None
        arcs.append(Arc(start, end, fields[2], feats))

    bad = _find_cycle_line(num_states, [(a.start, a.end) for a in arcs], body[0][0])
    if bad is not None:
        raise CycleError("lattice contains a cycle", bad)
    return Lattice(utt_id, label, num_states, tuple(arcs))


def _blocks(text: str) -> Iterable[list[tuple[int, str]]]:
    block: list[tuple[int, str]] = []
    for number, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            block.append((number, line))
        elif block:
            yield block
            block = []
    if block:
        yield block


def parse_lattice(text: str) -> Lattice:
    blocks = list(_blocks(text))
    if not blocks:
        raise HeaderError("empty input", 1)
    if len(blocks) > 1:
        raise HeaderError("more than one lattice; use parse_corpus", blocks[1][0][0])
    return _parse_block(blocks[0])


def parse_corpus(text: str) -> list[Lattice]:
    """Parse blank-line separated lattices; errors also name the lattice they occur in."""
    out = []
    for block in _blocks(text):
        try:
            out.append(_parse_block(block))
        except LatticeParseError as err:
            head = block[0][1].split()
            err.utterance_id = head[1] if len(head) > 1 and head[0] == "LATTICE" else None
            if err.utterance_id is not None:
                err.args = (f"lattice {err.utterance_id}: {err.args[0]}",)
            raise
    return out


def _fmt(x: float) -> str:
    return format(x, ".9g")


def serialize_lattice(lattice: Lattice) -> str:
    out = [f"LATTICE {lattice.utterance_id} {lattice.label.value} "
           f"{lattice.num_states} {lattice.num_arcs}"]
    for arc in lattice.arcs:
        f = arc.features
        fields = [str(arc.start), str(arc.end), arc.word, _fmt(f.am_score), _fmt(f.lm_score),
                  _fmt(f.log_posterior), str(f.num_frames), str(f.trigger_flag_1),
                  str(f.trigger_flag_2)]
        fields.extend(_fmt(v) for v in f.phone_embedding)
        out.append(" ".join(fields))
    return "\n".join(out) + "\n"


def serialize_corpus(lattices: Iterable[Lattice]) -> str:
    return "\n".join(serialize_lattice(lat) for lat in lattices)


# ---------------------------------------------------------------------------
# graph view
# ---------------------------------------------------------------------------


def arc_neighbors(lattice: Lattice) -> list[set[int]]:
    """Arcs j != i sharing an end->start state with arc i, in either direction."""
    leaving = defaultdict(list)
    entering = defaultdict(list)
    for k, arc in enumerate(lattice.arcs):
        leaving[arc.start].append(k)
        entering[arc.end].append(k)
    neighbors = []
    for i, arc in enumerate(lattice.arcs):
        nb = set(leaving[arc.end]) | set(entering[arc.start])
        nb.discard(i)
        neighbors.append(nb)
    return neighbors


def build_line_graph(lattice: Lattice) -> GraphSample:
    n = lattice.num_arcs
    adjacency = np.zeros((n, n))
    for i, nb in enumerate(arc_neighbors(lattice)):
        cols = [i, *nb]
        adjacency[i, cols] = 1.0 / len(cols)
    features = np.stack([arc.features.to_vector() for arc in lattice.arcs])
    return GraphSample(adjacency, features, lattice.label, lattice.utterance_id)


# ---------------------------------------------------------------------------
# 1-best path and the ASR-output baseline decision
# ---------------------------------------------------------------------------

_TIE_TOL = 1e-9


def _arc_score(arc: Arc, am_weight: float, lm_weight: float) -> float:
    return am_weight * arc.features.am_score + lm_weight * arc.features.lm_score


def _topological_states(lattice: Lattice) -> list[int]:
    indeg = [0] * lattice.num_states
    out = defaultdict(list)
    for arc in lattice.arcs:
        indeg[arc.end] += 1
        out[arc.start].append(arc.end)
    order, stack = [], [s for s in range(lattice.num_states) if indeg[s] == 0]
    while stack:
        s = stack.pop()
        order.append(s)
        for e in out[s]:
            indeg[e] -= 1
            if indeg[e] == 0:
                stack.append(e)
    return order


def best_path_with_score(lattice: Lattice, am_weight: float = 1.0,
                         lm_weight: float = 1.0) -> tuple[list[str], float]:
    """Highest-scoring word sequence from state 0 to a state without outgoing arcs.

    Equal totals (within 1e-9) are resolved towards the lexicographically
    smallest word sequence.
    """
    if not (math.isfinite(am_weight) and math.isfinite(lm_weight)):
        raise ValueError("weights must be finite")
    leaving = defaultdict(list)
    for arc in lattice.arcs:
        leaving[arc.start].append(arc)
    if not leaving[0]:
        raise StructureError(f"{lattice.utterance_id}: no arc leaves the initial state")

    # best completion from each state, filled in reverse topological order
    best: dict[int, tuple[float, list[str]]] = {}
    for s in reversed(_topological_states(lattice)):
        if not leaving[s]:
            best[s] = (0.0, [])
            continue
        chosen = None
        for arc in leaving[s]:
            tail_score, tail_words = best[arc.end]
            cand = (_arc_score(arc, am_weight, lm_weight) + tail_score, [arc.word, *tail_words])
            if chosen is None or cand[0] > chosen[0] + _TIE_TOL:
                chosen = cand
            elif abs(cand[0] - chosen[0]) <= _TIE_TOL and cand[1] < chosen[1]:
                chosen = cand
        best[s] = chosen
    score, words = best[0]
    return words, score


def best_path(lattice: Lattice, am_weight: float = 1.0, lm_weight: float = 1.0) -> list[str]:
    return best_path_with_score(lattice, am_weight, lm_weight)[0]


def contains_trigger(words: Sequence[str], trigger_phrase: Sequence[str]) -> bool:
    if not trigger_phrase:
        raise ValueError("trigger phrase must be non-empty")
    w = [x.casefold() for x in words]
    t = [x.casefold() for x in trigger_phrase]
    k = len(t)
    return any(w[i:i + k] == t for i in range(len(w) - k + 1))
