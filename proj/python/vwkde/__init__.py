"""Variationally weighted kernel density estimation."""

from ._vwkde import (
    RkhsAlpha,
    VwkdeError,
    fit_alpha,
    gaussian_kl,
    inspect,
    kde_log_density,
    kl,
    lpdr,
    posterior,
    run_bench,
    select_bandwidth,
    set_threads,
)

__all__ = [
    "RkhsAlpha",
    "VwkdeError",
    "fit_alpha",
    "gaussian_kl",
    "inspect",
    "kde_log_density",
    "kl",
    "lpdr",
    "posterior",
    "run_bench",
    "select_bandwidth",
    "set_threads",
]
