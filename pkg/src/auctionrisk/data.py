"""Auction dataset container and CSV schema.

One row per auction: the winning bid (second-highest private value), the
covariate vector, the bidder count, and optionally the reserve price and the
seller's outside value.  Outside value may be blank row-by-row: such records
are usable for quantile estimation but not for the risk-parameter stage.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = ["AuctionRecord", "AuctionDataset", "read_auction_csv", "write_auction_csv"]


@dataclass(frozen=True)
class AuctionRecord:
    winning_bid: float
    covariates: tuple
    n_bidders: int
    reserve: float | None = None
    outside_value: float | None = None


class AuctionDataset:
    """Validated column-oriented view over a list of auction records."""

    def __init__(self, records):
        records = list(records)
        if not records:
            raise DataError("empty dataset")
        d = len(records[0].covariates)
        for i, r in enumerate(records):
            if len(r.covariates) != d:
                raise DataError(f"record {i}: covariate length {len(r.covariates)} != {d}")
            if not math.isfinite(r.winning_bid):
                raise DataError(f"record {i}: non-finite winning bid")
            if r.n_bidders < 2 or int(r.n_bidders) != r.n_bidders:
                raise DataError(f"record {i}: bidder count must be an integer >= 2")
        self.records = records
        self.D = d
        self.B = np.array([r.winning_bid for r in records], dtype=float)
        self.X = np.array([r.covariates for r in records], dtype=float).reshape(len(records), d)
        self.I = np.array([r.n_bidders for r in records], dtype=int)
        self.R = np.array(
            [np.nan if r.reserve is None else r.reserve for r in records], dtype=float
        )
        self.W = np.array(
            [np.nan if r.outside_value is None else r.outside_value for r in records], dtype=float
        )

    def __len__(self):
        return len(self.records)

    @property
    def L(self):
        return len(self.records)

    @property
    def X1(self):
        """Design matrix with a leading intercept column, L x (D+1)."""
        return np.column_stack([np.ones(len(self)), self.X])

    def bidder_counts(self):
        return sorted(set(self.I.tolist()))

    def stratum(self, n_bidders):
        """Sub-dataset of auctions with exactly n_bidders bidders."""
        keep = [r for r in self.records if r.n_bidders == n_bidders]
        return AuctionDataset(keep)

    def subset(self, indices):
        return AuctionDataset([self.records[i] for i in indices])

    def summary(self):
        """Per-variable mean / median / quartiles / std / count."""
        rows = []

        def stats(name, vals):
            vals = np.asarray(vals, dtype=float)
            vals = vals[~np.isnan(vals)]
            if vals.size == 0:
                return None
            return {
                "variable": name,
                "mean": float(np.mean(vals)),
                "median": float(np.median(vals)),
                "pct25": float(np.percentile(vals, 25)),
                "pct75": float(np.percentile(vals, 75)),
                "std": float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0,
                "observations": int(vals.size),
            }

        for name, col in [("R", self.R), ("B", self.B), ("W", self.W)]:
            row = stats(name, col)
            if row is not None:
                rows.append(row)
        for j in range(self.D):
            rows.append(stats(f"x{j + 1}", self.X[:, j]))
        rows.append(stats("N", self.I.astype(float)))
        return rows


def _parse_float(text, line_no, column, allow_blank=False):
    text = text.strip()
    if text == "":
        if allow_blank:
            return None
        raise DataError(f"line {line_no}: blank value in required column {column!r}")
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"line {line_no}: malformed numeric {text!r} in column {column!r}") from None
    if not math.isfinite(val):
        raise DataError(f"line {line_no}: non-finite value in column {column!r}")
    return val


def read_auction_csv(path_or_file):
    """Read a dataset CSV.

    Required columns: winning_bid, n_bidders, and x1..xD (D >= 0 inferred
    from the header).  Optional columns: reserve, outside_value; blank
    cells in optional columns mark the field missing for that row.
    Malformed rows raise DataError carrying the 1-based line number.
    """
    if hasattr(path_or_file, "read"):
        lines = path_or_file.read().splitlines()
    else:
        with open(path_or_file, newline="") as fh:
            lines = fh.read().splitlines()
    # tolerate provenance comment lines
    data_lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.startswith("#")]
    if not data_lines:
        raise DataError("empty file")
    header_line_no, header_raw = data_lines[0]
    reader = csv.reader([header_raw])
    header = [h.strip() for h in next(reader)]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise DataError(f"duplicate header column(s): {', '.join(dupes)}")
    for required in ("winning_bid", "n_bidders"):
        if required not in header:
            raise DataError(f"missing mandatory column {required!r}")
    xcols = sorted((h for h in header if h.startswith("x") and h[1:].isdigit()), key=lambda h: int(h[1:]))
    if xcols != [f"x{j + 1}" for j in range(len(xcols))]:
        raise DataError(f"covariate columns must be x1..xD, got {xcols}")
    known = {"winning_bid", "n_bidders", "reserve", "outside_value", *xcols}
    unknown = [h for h in header if h not in known]
    if unknown:
        raise DataError(f"unrecognized column(s): {', '.join(unknown)}")
    idx = {h: k for k, h in enumerate(header)}

    records = []
    for line_no, raw in data_lines[1:]:
        row = next(csv.reader([raw]))
        if len(row) != len(header):
            raise DataError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
        bid = _parse_float(row[idx["winning_bid"]], line_no, "winning_bid")
        if bid <= 0:
            raise DataError(f"line {line_no}: non-positive price in column 'winning_bid'")
        n_raw = row[idx["n_bidders"]].strip()
        try:
            n_bidders = int(n_raw)
        except ValueError:
            raise DataError(f"line {line_no}: malformed integer {n_raw!r} in column 'n_bidders'") from None
        covs = tuple(_parse_float(row[idx[c]], line_no, c) for c in xcols)
        reserve = None
        if "reserve" in idx:
            reserve = _parse_float(row[idx["reserve"]], line_no, "reserve", allow_blank=True)
            if reserve is not None and reserve <= 0:
                raise DataError(f"line {line_no}: non-positive price in column 'reserve'")
        outside = None
        if "outside_value" in idx:
            outside = _parse_float(row[idx["outside_value"]], line_no, "outside_value", allow_blank=True)
        records.append(
            AuctionRecord(
                winning_bid=bid,
                covariates=covs,
                n_bidders=n_bidders,
                reserve=reserve,
                outside_value=outside,
            )
        )
    if not records:
        raise DataError("no data rows")
    try:
        return AuctionDataset(records)
    except DataError:
        raise
    except ValueError as exc:  # pragma: no cover - defensive
        raise DataError(str(exc)) from exc


def format_auction_csv(data, header_comment=None):
    """Render a dataset to CSV text (RFC-4180 quoting via csv module)."""
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    cols = ["winning_bid", "reserve", "outside_value"]
    cols += [f"x{j + 1}" for j in range(data.D)]
    cols += ["n_bidders"]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in data.records:
        row = [repr(float(r.winning_bid))]
        row.append("" if r.reserve is None else repr(float(r.reserve)))
        row.append("" if r.outside_value is None else repr(float(r.outside_value)))
        row += [repr(float(c)) for c in r.covariates]
        row.append(str(int(r.n_bidders)))
        writer.writerow(row)
    return buf.getvalue()


def write_auction_csv(data, path, header_comment=None):
    """Atomically write a dataset CSV (temp file + rename)."""
    text = format_auction_csv(data, header_comment)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
