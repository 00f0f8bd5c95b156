"""Black-Scholes quote synthesis and quote CSV files."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CrossedQuote, DomainError, NegativeInput, ParseError
from .payoffs import ConstraintBlock, Quote

CSV_HEADER = ("expiry_index", "strike", "bid", "ask")


def norm_cdf(x: float) -> float:
    # erfc keeps full relative accuracy in the lower tail
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def bs_call(spot: float, strike: float, vol: float, expiry: float) -> float:
    """Zero-rate Black-Scholes call price."""
    if spot <= 0 or strike < 0 or vol < 0 or expiry < 0:
        raise NegativeInput(f"invalid inputs spot={spot} strike={strike} vol={vol} T={expiry}")
    if strike == 0:
        return spot
    s = vol * math.sqrt(expiry)
    if s == 0:
        return max(spot - strike, 0.0)
    d1 = math.log(spot / strike) / s + 0.5 * s
    return spot * norm_cdf(d1) - strike * norm_cdf(d1 - s)


@dataclass
class QuoteSet:
    quotes: dict[int, list[Quote]] = field(default_factory=dict)
    spot: float | None = None
    rate: float = 0.0

    def __post_init__(self):
        self.quotes = {k: list(v) for k, v in self.quotes.items() if v}
        for k, qs in self.quotes.items():
            if any(q.expiry_index != k for q in qs):
                raise ParseError(f"quote filed under the wrong expiry {k}")

    @classmethod
    def from_quotes(cls, quotes: Iterable[Quote], **kw) -> QuoteSet:
        grouped = defaultdict(list)
        for q in quotes:
            grouped[q.expiry_index].append(q)
        return cls(dict(grouped), **kw)

    def __iter__(self):
        for k in sorted(self.quotes):
            yield from self.quotes[k]

    def __len__(self):
        return sum(len(v) for v in self.quotes.values())

    def blocks(self, n: int) -> tuple[ConstraintBlock, ...]:
        """One constraint block per expiry index ``1..n``."""
        bad = [k for k in self.quotes if not 1 <= k <= n]
        if bad:
            raise ParseError(f"expiry indices {bad} outside 1..{n}")
        return tuple(ConstraintBlock(tuple(self.quotes.get(k, ()))) for k in range(1, n + 1))


def synthesize_quotes(
    spot: float,
    vol: float,
    expiries: Sequence[tuple[int, float]],
    strikes: Sequence[float],
    half_spread: float = 0.0,
) -> QuoteSet:
    """Quotes around Black-Scholes mids, bids floored at zero."""
    if half_spread < 0:
        raise NegativeInput(f"negative half spread {half_spread}")
    quotes = []
    for k, t in expiries:
        for strike in strikes:
            mid = bs_call(spot, strike, vol, t)
            quotes.append(Quote(int(k), float(strike), max(0.0, mid - half_spread), mid + half_spread))
    return QuoteSet.from_quotes(quotes, spot=spot)


def load_quotes_csv(path) -> QuoteSet:
    quotes = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno)
            try:
                k = int(row[0])
                strike, bid, ask = (float(c) for c in row[1:])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if bid > ask:
                raise CrossedQuote(f"bid {bid} above ask {ask}", line=lineno)
            try:
                quotes.append(Quote(k, strike, bid, ask))
            except DomainError as exc:
                raise ParseError(str(exc), line=lineno) from None
    return QuoteSet.from_quotes(quotes)


def write_quotes_csv(quotes: QuoteSet, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for q in quotes:
            w.writerow([q.expiry_index, repr(q.strike), repr(q.bid), repr(q.ask)])
