"""Ascending-auction structural estimation toolkit.

Two-stage pipeline: (1) kernel-augmented quantile regression recovers the
bidder private-value quantile function and its derivatives from winning
bids; (2) the seller's reserve-price first-order condition identifies a
parametric (CRRA) risk-aversion coefficient, with nonparametric-bootstrap
inference.  A Monte Carlo harness, model-fit diagnostics, and a
counterfactual (risk-neutral reserve) module round out the package.
"""

__version__ = "0.1.0"

from .aqr import (
    AqrConfig,
    AqrFit,
    aqr_objective,
    aqr_subgradient,
    bid_quantile,
    bid_quantile_deriv,
    bid_quantile_inverse,
    fit_aqr,
    fit_aqr_by_stratum,
    rule_of_thumb_bandwidth,
)
from .data import AuctionDataset, AuctionRecord, read_auction_csv, write_auction_csv
from .kernels import EPANECHNIKOV, KernelSpec, PolyBasis, QuadratureRule, gauss_legendre
from .orderstat import bell_compose, phi, phi_deriv, phi_inverse

__all__ = [
    "__version__",
    "AqrConfig",
    "AqrFit",
    "AuctionDataset",
    "AuctionRecord",
    "EPANECHNIKOV",
    "KernelSpec",
    "PolyBasis",
    "QuadratureRule",
    "aqr_objective",
    "aqr_subgradient",
    "bell_compose",
    "bid_quantile",
    "bid_quantile_deriv",
    "bid_quantile_inverse",
    "fit_aqr",
    "fit_aqr_by_stratum",
    "gauss_legendre",
    "phi",
    "phi_deriv",
    "phi_inverse",
    "read_auction_csv",
    "rule_of_thumb_bandwidth",
    "write_auction_csv",
]
