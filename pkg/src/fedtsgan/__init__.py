"""Desk-scale lab for GANs over vertically partitioned time series:
multi-party training, differential-privacy accounting, and
membership-inference auditing of the synthetic releases."""

__version__ = "0.1.0"
