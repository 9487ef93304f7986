"""Quantitative KAM almost-reducibility for quasi-periodic SL(2,R) cocycles."""

__version__ = "0.1.0"
