"""Compress-and-store blockchain: compression as proof of work, off-chain storage proofs."""

__version__ = "0.1.0"
