"""Word lattices and contextual biasing.

A lattice is an acyclic graph of recognizer word hypotheses with tropical
costs (negative natural-log probabilities). Biasing composes it with a trie of
boosted word sequences, so paths that spell out a callsign known to be on
frequency get cheaper; the set of word sequences never changes.

Text format, one item per line, blank line between lattices:

    src dst word cost
    state [final_cost]

State 0 is the start state.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

from .textnorm import TOKEN_RE

logger = logging.getLogger(__name__)

DEFAULT_DISCOUNT = -0.5
MAX_SEQUENCES = 10_000
# Contextual biasing degrades noticeably past about a thousand entities.
WARN_SEQUENCES = 1_000
ROOT = 0


class LatticeError(ValueError):
    pass


class NoPath(LatticeError):
    pass


class EmptySequenceSet(LatticeError):
    pass


class PositiveDiscount(LatticeError):
    pass


class Arc(NamedTuple):
    src: int
    dst: int
    word: str
    cost: float


@dataclass(frozen=True)
class Lattice:
    """Immutable acyclic word graph.

    Costs read from text are non-negative; a biased lattice carries the
    discounts as negative costs, which is still a valid lattice.
    """

    arcs: tuple[Arc, ...]
    finals: Mapping[int, float]
    start: int = 0
    _order: tuple[int, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        arcs = tuple(Arc(int(a[0]), int(a[1]), a[2], float(a[3])) for a in self.arcs)
        object.__setattr__(self, "arcs", arcs)
        object.__setattr__(self, "finals", {int(s): float(c) for s, c in self.finals.items()})
        for arc in arcs:
            if not TOKEN_RE.fullmatch(arc.word):
                raise LatticeError(f"arc {arc.src}->{arc.dst}: word {arc.word!r} is not normalized")
            if not math.isfinite(arc.cost):
                raise LatticeError(f"arc {arc.src}->{arc.dst}: cost {arc.cost} is not finite")
        for state, cost in self.finals.items():
            if not math.isfinite(cost):
                raise LatticeError(f"final {state}: cost {cost} is not finite")
        object.__setattr__(self, "_order", self._topological_order())

    @classmethod
    def linear(cls, tokens: Sequence[str], cost: float = 0.0) -> Lattice:
        """Single-path lattice, `cost` on every arc."""
        arcs = [Arc(i, i + 1, w, cost) for i, w in enumerate(tokens)]
        return cls(tuple(arcs), {len(tokens): 0.0})

    @property
    def states(self) -> list[int]:
        return list(self._order)

    def out_arcs(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {s: [] for s in self._order}
        for i, arc in enumerate(self.arcs):
            out[arc.src].append(i)
        return out

    def topological_order(self) -> list[int]:
        return list(self._order)

    def _topological_order(self) -> tuple[int, ...]:
        nodes = {self.start, *self.finals}
        indegree: dict[int, int] = {}
        succ: dict[int, list[int]] = {}
        for arc in self.arcs:
            nodes.update((arc.src, arc.dst))
            succ.setdefault(arc.src, []).append(arc.dst)
            indegree[arc.dst] = indegree.get(arc.dst, 0) + 1
        ready = [n for n in nodes if indegree.get(n, 0) == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            n = heapq.heappop(ready)
            order.append(n)
            for m in succ.get(n, ()):
                indegree[m] -= 1
                if indegree[m] == 0:
                    heapq.heappush(ready, m)
        if len(order) != len(nodes):
            raise LatticeError("lattice has a cycle")
        return tuple(order)

    def trimmed(self) -> Lattice:
        """Drop states not on some start -> final path."""
        forward = {self.start}
        for s in self._order:
            if s in forward:
                forward.update(a.dst for a in self.arcs if a.src == s)
        backward = {s for s in self.finals}
        for s in reversed(self._order):
            if any(a.src == s and a.dst in backward for a in self.arcs):
                backward.add(s)
        live = forward & backward
        arcs = tuple(a for a in self.arcs if a.src in live and a.dst in live)
        finals = {s: c for s, c in self.finals.items() if s in live}
        return Lattice(arcs, finals, self.start)


@dataclass(frozen=True)
class BiasingFst:
    """Trie of boosted sequences, consumed as a matching automaton.

    Following the trie along a token stream, a completed sequence credits
    `discount` per token. A token with no child abandons the partial match
    (crediting it only if the node is itself a complete sequence) and is
    retried at the root.
    """

    sequences: tuple[tuple[str, ...], ...]
    discount: float
    children: tuple[Mapping[str, int], ...]
    depth: tuple[int, ...]
    terminal: tuple[bool, ...]

    def _enter(self, child: int, credit: float) -> tuple[int, float]:
        if self.terminal[child] and not self.children[child]:
            return ROOT, credit + self.depth[child] * self.discount
        return child, credit

    def step(self, node: int, token: str) -> tuple[int, float]:
        child = self.children[node].get(token)
        if child is not None:
            return self._enter(child, 0.0)
        credit = self.finish(node)
        if node != ROOT:
            child = self.children[ROOT].get(token)
            if child is not None:
                return self._enter(child, credit)
        return ROOT, credit

    def finish(self, node: int) -> float:
        return self.depth[node] * self.discount if self.terminal[node] else 0.0

    def match_cost(self, tokens: Iterable[str]) -> float:
        """Total credit the automaton gives one token stream."""
        node, total = ROOT, 0.0
        for token in tokens:
            node, credit = self.step(node, token)
            total += credit
        return total + self.finish(node)


def build_biasing_fst(
    sequences: Iterable[Sequence[str]], discount_per_token: float = DEFAULT_DISCOUNT
) -> BiasingFst:
    if discount_per_token > 0:
        raise PositiveDiscount(f"discount {discount_per_token} must be <= 0")
    unique = sorted({tuple(s) for s in sequences})
    if not unique:
        raise EmptySequenceSet("no sequences to boost")
    if any(not s for s in unique):
        raise EmptySequenceSet("empty sequence in boosting set")
    for seq in unique:
        for token in seq:
            if not TOKEN_RE.fullmatch(token):
                raise LatticeError(f"boosted token {token!r} is not normalized")
    if len(unique) > MAX_SEQUENCES:
        raise LatticeError(f"{len(unique)} sequences exceeds the limit of {MAX_SEQUENCES}")
    if len(unique) > WARN_SEQUENCES:
        logger.warning("%d boosted sequences; biasing quality degrades past %d",
                       len(unique), WARN_SEQUENCES)

    children: list[dict[str, int]] = [{}]
    depth = [0]
    terminal = [False]
    for seq in unique:
        node = ROOT
        for token in seq:
            nxt = children[node].get(token)
            if nxt is None:
                nxt = len(children)
                children[node][token] = nxt
                children.append({})
                depth.append(depth[node] + 1)
                terminal.append(False)
            node = nxt
        terminal[node] = True
    return BiasingFst(
        sequences=tuple(unique),
        discount=float(discount_per_token),
        children=tuple(children),
        depth=tuple(depth),
        terminal=tuple(terminal),
    )


def compose_bias(lattice: Lattice, fst: BiasingFst) -> Lattice:
    """Lattice ∘ biasing FST: same word sequences, discounted costs."""
    ids: dict[tuple[int, int], int] = {(lattice.start, ROOT): 0}
    queue = deque([(lattice.start, ROOT)])
    out = lattice.out_arcs()
    arcs: list[Arc] = []
    finals: dict[int, float] = {}
    while queue:
        pair = queue.popleft()
        state, node = pair
        src = ids[pair]
        if state in lattice.finals:
            finals[src] = lattice.finals[state] + fst.finish(node)
        for i in out.get(state, ()):
            arc = lattice.arcs[i]
            nxt_node, credit = fst.step(node, arc.word)
            key = (arc.dst, nxt_node)
            if key not in ids:
                ids[key] = len(ids)
                queue.append(key)
            arcs.append(Arc(src, ids[key], arc.word, arc.cost + credit))
    return Lattice(tuple(arcs), finals, 0).trimmed()


def _suffixes(lattice: Lattice) -> dict[int, tuple[float, tuple[str, ...], int]]:
    """Best (cost, tokens, arc index or -1 for stop) from each state to a final.

    Computed backwards, so the lexicographic tie-break on whole paths reduces
    to one comparison per state.
    """
    out = lattice.out_arcs()
    best: dict[int, tuple[float, tuple[str, ...], int]] = {}
    for state in reversed(lattice.topological_order()):
        candidates = []
        if state in lattice.finals:
            candidates.append((lattice.finals[state], (), -1))
        for i in out.get(state, ()):
            arc = lattice.arcs[i]
            tail = best.get(arc.dst)
            if tail is not None:
                candidates.append((arc.cost + tail[0], (arc.word, *tail[1]), i))
        if candidates:
            best[state] = min(candidates, key=lambda c: (c[0], c[1]))
    return best


def best_path(lattice: Lattice) -> tuple[list[str], float]:
    best = _suffixes(lattice).get(lattice.start)
    if best is None:
        raise NoPath("no path from the start state to a final state")
    return list(best[1]), best[0]


def best_path_arcs(lattice: Lattice) -> list[int]:
    table = _suffixes(lattice)
    if lattice.start not in table:
        raise NoPath("no path from the start state to a final state")
    arcs = []
    state = lattice.start
    while True:
        choice = table[state][2]
        if choice < 0:
            return arcs
        arcs.append(choice)
        state = lattice.arcs[choice].dst


def _logsumexp(values: Sequence[float]) -> float:
    if not values:
        return -math.inf
    top = max(values)
    if top == -math.inf:
        return top
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def forward_backward(lattice: Lattice) -> tuple[dict[int, float], dict[int, float], float]:
    """Log forward and backward scores, plus the log total over all paths."""
    order = lattice.topological_order()
    incoming: dict[int, list[Arc]] = {s: [] for s in order}
    outgoing: dict[int, list[Arc]] = {s: [] for s in order}
    for arc in lattice.arcs:
        incoming[arc.dst].append(arc)
        outgoing[arc.src].append(arc)

    alpha: dict[int, float] = {}
    for s in order:
        terms = [alpha[a.src] - a.cost for a in incoming[s]]
        if s == lattice.start:
            terms.append(0.0)
        alpha[s] = _logsumexp(terms)

    beta: dict[int, float] = {}
    for s in reversed(order):
        terms = [beta[a.dst] - a.cost for a in outgoing[s]]
        if s in lattice.finals:
            terms.append(-lattice.finals[s])
        beta[s] = _logsumexp(terms)

    total = beta[lattice.start]
    if total == -math.inf:
        raise NoPath("no path from the start state to a final state")
    return alpha, beta, total


def word_posteriors(lattice: Lattice) -> list[float]:
    """Posterior of every arc, parallel to `lattice.arcs`."""
    alpha, beta, total = forward_backward(lattice)
    out = []
    for arc in lattice.arcs:
        log_p = alpha[arc.src] - arc.cost + beta[arc.dst] - total
        out.append(min(1.0, math.exp(log_p)) if log_p > -math.inf else 0.0)
    return out


def best_path_confidences(lattice: Lattice) -> tuple[list[str], list[float], float]:
    """Best-path words, their posteriors, and the mean posterior."""
    posteriors = word_posteriors(lattice)
    chosen = best_path_arcs(lattice)
    words = [lattice.arcs[i].word for i in chosen]
    confs = [posteriors[i] for i in chosen]
    avg = math.fsum(confs) / len(confs) if confs else 0.0
    return words, confs, avg


def parse_lattice(text: str, *, allow_negative: bool = False) -> Lattice:
    arcs: list[Arc] = []
    finals: dict[int, float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        try:
            if len(fields) == 4:
                arc = Arc(int(fields[0]), int(fields[1]), fields[2], float(fields[3]))
                if arc.cost < 0 and not allow_negative:
                    raise LatticeError(f"line {lineno}: negative cost {arc.cost}")
                arcs.append(arc)
            elif len(fields) in (1, 2):
                cost = float(fields[1]) if len(fields) == 2 else 0.0
                if cost < 0 and not allow_negative:
                    raise LatticeError(f"line {lineno}: negative final cost {cost}")
                finals[int(fields[0])] = cost
            else:
                raise LatticeError(f"line {lineno}: expected 'src dst word cost' or 'state [cost]'")
        except ValueError as exc:
            if isinstance(exc, LatticeError):
                raise
            raise LatticeError(f"line {lineno}: {exc}") from exc
    if not finals:
        raise LatticeError("lattice has no final state")
    return Lattice(tuple(arcs), finals, 0).trimmed()


def parse_lattices(text: str, *, allow_negative: bool = False) -> list[Lattice]:
    blocks: list[list[str]] = [[]]
    for line in text.splitlines():
        if line.strip():
            blocks[-1].append(line)
        elif blocks[-1]:
            blocks.append([])
    return [parse_lattice("\n".join(b), allow_negative=allow_negative) for b in blocks if b]


def format_lattice(lattice: Lattice) -> str:
    lines = [f"{a.src} {a.dst} {a.word} {a.cost!r}" for a in lattice.arcs]
    lines += [f"{s} {c!r}" for s, c in sorted(lattice.finals.items())]
    return "\n".join(lines) + "\n"


def format_lattices(lattices: Iterable[Lattice]) -> str:
    return "\n".join(format_lattice(lat) for lat in lattices)
