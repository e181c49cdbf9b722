import io

import numpy as np
import pytest

from auctionrisk.data import (
    AuctionDataset,
    AuctionRecord,
    format_auction_csv,
    read_auction_csv,
    write_auction_csv,
)
from auctionrisk.errors import DataError


def make_dataset(n=6, d=2, seed=0):
    rng = np.random.default_rng(seed)
    recs = [
        AuctionRecord(
            winning_bid=float(1 + rng.random()),
            covariates=tuple(rng.random(d)),
            n_bidders=int(rng.integers(2, 5)),
            reserve=float(1 + rng.random()),
            outside_value=float(rng.random()) if i % 2 == 0 else None,
        )
        for i in range(n)
    ]
    return AuctionDataset(recs)


class TestDataset:
    def test_empty_rejected(self):
        with pytest.raises(DataError):
            AuctionDataset([])

    def test_mismatched_covariates_rejected(self):
        recs = [
            AuctionRecord(1.0, (0.5,), 2),
            AuctionRecord(1.0, (0.5, 0.2), 2),
        ]
        with pytest.raises(DataError):
            AuctionDataset(recs)

    def test_bidder_count_validated(self):
        with pytest.raises(DataError):
            AuctionDataset([AuctionRecord(1.0, (0.5,), 1)])

    def test_columns(self):
        data = make_dataset()
        assert data.X.shape == (6, 2)
        assert data.X1.shape == (6, 3)
        assert np.all(data.X1[:, 0] == 1.0)
        assert np.isnan(data.W).sum() == 3

    def test_stratum(self):
        data = make_dataset(40)
        for count in data.bidder_counts():
            sub = data.stratum(count)
            assert np.all(sub.I == count)
        assert sum(data.stratum(c).L for c in data.bidder_counts()) == data.L

    def test_summary_counts(self):
        rows = {r["variable"]: r for r in make_dataset().summary()}
        assert rows["B"]["observations"] == 6
        assert rows["W"]["observations"] == 3
        assert set(rows) == {"R", "B", "W", "x1", "x2", "N"}


WELL_FORMED = """winning_bid,reserve,outside_value,x1,n_bidders
1.5,2.0,0.7,0.25,3
2.5,1.8,,0.5,3
0.9,,0.4,0.75,2
"""


class TestCsv:
    def test_read_well_formed(self):
        data = read_auction_csv(io.StringIO(WELL_FORMED))
        assert data.L == 3
        assert data.D == 1
        assert data.records[1].outside_value is None
        assert data.records[2].reserve is None
        assert data.records[0].n_bidders == 3

    def test_round_trip_lossless(self, tmp_path):
        data = make_dataset(15, d=2, seed=3)
        path = tmp_path / "auctions.csv"
        write_auction_csv(data, path, header_comment="round trip")
        back = read_auction_csv(path)
        assert back.L == data.L
        np.testing.assert_array_equal(back.B, data.B)
        np.testing.assert_array_equal(back.X, data.X)
        np.testing.assert_array_equal(back.I, data.I)
        np.testing.assert_array_equal(np.isnan(back.W), np.isnan(data.W))
        np.testing.assert_array_equal(back.W[~np.isnan(back.W)], data.W[~np.isnan(data.W)])
        np.testing.assert_array_equal(back.R[~np.isnan(back.R)], data.R[~np.isnan(data.R)])
        # and a second pass is byte-identical
        assert format_auction_csv(back) == format_auction_csv(data)

    def test_duplicate_header_rejected(self):
        text = "winning_bid,winning_bid,n_bidders\n1.0,2.0,3\n"
        with pytest.raises(DataError, match="duplicate"):
            read_auction_csv(io.StringIO(text))

    def test_missing_mandatory_column(self):
        with pytest.raises(DataError, match="winning_bid"):
            read_auction_csv(io.StringIO("reserve,n_bidders\n1.0,2\n"))

    def test_empty_file(self):
        with pytest.raises(DataError, match="empty"):
            read_auction_csv(io.StringIO(""))

    def test_malformed_numeric_reports_line(self):
        text = "winning_bid,n_bidders\n1.0,3\noops,3\n"
        with pytest.raises(DataError, match="line 3"):
            read_auction_csv(io.StringIO(text))

    def test_non_positive_price_rejected(self):
        text = "winning_bid,n_bidders\n-1.0,3\n"
        with pytest.raises(DataError, match="non-positive"):
            read_auction_csv(io.StringIO(text))

    def test_blank_outside_value_marks_stage_two_ineligible(self):
        data = read_auction_csv(io.StringIO(WELL_FORMED))
        eligible = ~np.isnan(data.W)
        np.testing.assert_array_equal(eligible, [True, False, True])

    def test_unknown_column_rejected(self):
        text = "winning_bid,n_bidders,bogus\n1.0,3,9\n"
        with pytest.raises(DataError, match="unrecognized"):
            read_auction_csv(io.StringIO(text))
