"""Adaptive-window change detection over a stream of values in [0, 1].

The window is kept as an exponential histogram: row r holds buckets that
each summarize 2^r items, at most five buckets per row. When the means of
any old/new partition at a bucket boundary differ by more than the
variance-aware cut bound, the older portion is dropped and a change is
reported. Memory grows with the logarithm of the window width.
"""

from __future__ import annotations

import math
import struct

MAX_BUCKETS_PER_ROW = 5
_MIN_CHECK_WIDTH = 10


class Adwin:
    """Single-writer adaptive window; add() checks for a cut on every insertion."""

    __slots__ = ("delta", "rows", "width", "total", "_var_sum", "n_detections")

    def __init__(self, delta: float = 0.002):
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        self.delta = delta
        self.rows: list[list[tuple[float, float]]] = [[]]
        self.width = 0
        self.total = 0.0
        self._var_sum = 0.0  # sum of squared deviations over the window
        self.n_detections = 0

    # -- statistics ----------------------------------------------------------

    def estimate(self) -> float:
        if self.width == 0:
            raise ValueError("empty window has no estimate")
        return self.total / self.width

    def estimate_or(self, default: float = 0.0) -> float:
        return default if self.width == 0 else self.total / self.width

    @property
    def variance(self) -> float:
        if self.width == 0:
            return 0.0
        return max(self._var_sum / self.width, 0.0)

    def row_count(self) -> int:
        return len(self.rows)

    # -- updates ---------------------------------------------------------------

    def add(self, value: float) -> bool:
        """Insert one value and report whether a change was detected."""
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"value {value!r} outside [0, 1]")
        self.width += 1
        if self.width > 1:
            prev_mean = self.total / (self.width - 1)
            self._var_sum += (self.width - 1) * (value - prev_mean) ** 2 / self.width
        self.total += value
        self.rows[0].append((value, 0.0))
        self._compress()
        return self._detect()

    def _compress(self) -> None:
        rows = self.rows
        r = 0
        while r < len(rows) and len(rows[r]) > MAX_BUCKETS_PER_ROW:
            # Merge the two oldest buckets of this row into the next row.
            cap = 1 << r
            t1, v1 = rows[r].pop(0)
            t2, v2 = rows[r].pop(0)
            u1, u2 = t1 / cap, t2 / cap
            merged = (t1 + t2, v1 + v2 + cap * (u1 - u2) ** 2 / 2.0)
            if r + 1 == len(rows):
                rows.append([])
            rows[r + 1].append(merged)
            r += 1

    def _delete_oldest(self) -> None:
        r = len(self.rows) - 1
        while not self.rows[r]:
            r -= 1
        cap = 1 << r
        tot, var = self.rows[r].pop(0)
        self.width -= cap
        self.total -= tot
        if self.width > 0:
            u = tot / cap
            self._var_sum -= var + cap * self.width * (u - self.total / self.width) ** 2 / (cap + self.width)
            if self._var_sum < 0.0:
                self._var_sum = 0.0
        else:
            self._var_sum = 0.0
        while len(self.rows) > 1 and not self.rows[-1]:
            self.rows.pop()

    def _detect(self) -> bool:
        if self.width < _MIN_CHECK_WIDTH:
            return False
        detected = False
        dropped = True
        while dropped and self.width >= _MIN_CHECK_WIDTH:
            dropped = False
            w = self.width
            total = self.total
            variance = self._var_sum / w
            if variance < 0.0:
                variance = 0.0
            # Confidence is shared across the ~ln(w) cut tests of one pass.
            log_term = math.log(2.0 * math.log(w) / self.delta)
            n0 = 0.0
            u0 = 0.0
            scanned = 0
            rows = self.rows
            for r in range(len(rows) - 1, -1, -1):
                cap = float(1 << r)
                for tot, _ in rows[r]:
                    n0 += cap
                    u0 += tot
                    scanned += 1
                    n1 = w - n0
                    if n1 <= 0.0:
                        break
                    inv_m = 1.0 / n0 + 1.0 / n1
                    cut = math.sqrt(2.0 * inv_m * variance * log_term) + 2.0 / 3.0 * inv_m * log_term
                    if abs(u0 / n0 - (total - u0) / n1) >= cut:
                        for _ in range(scanned):
                            self._delete_oldest()
                        detected = True
                        dropped = True
                        break
                if dropped or n0 >= w:
                    break
        if detected:
            self.n_detections += 1
        return detected

    # -- serialization ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        out = [struct.pack("<dQddII", self.delta, self.width, self.total,
                           self._var_sum, self.n_detections, len(self.rows))]
        for row in self.rows:
            out.append(struct.pack("<I", len(row)))
            for tot, var in row:
                out.append(struct.pack("<dd", tot, var))
        return b"".join(out)
