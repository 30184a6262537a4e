"""Byte-level Aho-Corasick automaton with mixed case sensitivity.

Every keyword is inserted in ASCII-folded form and the subject is folded
once before the scan, so a single automaton serves both ``nocase`` and
exact keywords. Hits on exact keywords are confirmed against the unfolded
subject before being reported.
"""

from __future__ import annotations

from collections import deque
from typing import Iterator


class Automaton:
    """Immutable once built; :meth:`iter_matches` keeps its state on the stack."""

    def __init__(self, keywords: list[tuple[bytes, bool]]):
        """``keywords`` holds ``(bytes, nocase)`` pairs; the index is the keyword id."""
        self.keywords = [kw for kw, _ in keywords]
        self.nocase = [nc for _, nc in keywords]
        self._has_exact = not all(self.nocase)
        goto: list[dict[int, int]] = [{}]
        out: list[list[int]] = [[]]
        for kid, (kw, _) in enumerate(keywords):
            if not kw:
                raise ValueError("empty keyword")
            node = 0
            for byte in kw.lower():
                nxt = goto[node].get(byte)
                if nxt is None:
                    nxt = len(goto)
                    goto[node][byte] = nxt
                    goto.append({})
                    out.append([])
                node = nxt
            out[node].append(kid)

        fail = [0] * len(goto)
        delta: list[dict[int, int]] = [dict() for _ in goto]
        delta[0] = dict(goto[0])
        queue: deque[int] = deque(goto[0].values())
        while queue:
            node = queue.popleft()
            # fail[node] is set and strictly shallower, so its delta row is final
            delta[node] = {**delta[fail[node]], **goto[node]}
            out[node] = out[node] + out[fail[node]]
            for byte, child in goto[node].items():
                fail[child] = delta[fail[node]].get(byte, 0)
                queue.append(child)
        self._delta = delta
        self._out = [tuple(o) for o in out]

    def __len__(self) -> int:
        return len(self.keywords)

    @property
    def state_count(self) -> int:
        return len(self._delta)

    def iter_matches(self, data: bytes) -> Iterator[tuple[int, int]]:
        """Yield ``(keyword_id, start_offset)`` for every occurrence, overlaps included."""
        if not self.keywords:
            return
        delta = self._delta
        out = self._out
        folded = data.lower()
        state = 0
        for end, byte in enumerate(folded):
            state = delta[state].get(byte, 0)
            hits = out[state]
            if not hits:
                continue
            for kid in hits:
                kw = self.keywords[kid]
                start = end - len(kw) + 1
                if self.nocase[kid] or data[start : end + 1] == kw:
                    yield kid, start
