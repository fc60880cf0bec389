"""Conditioned multitype Galton-Watson trees and the rate functions of their empirical measures."""

__version__ = "0.1.0"
