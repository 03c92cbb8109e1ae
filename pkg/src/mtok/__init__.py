"""Discrete motion tokenization with diffusion decoding, token-space planning,
and decode-time kinematic control."""

__version__ = "0.1.0"
