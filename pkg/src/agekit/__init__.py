"""Machine-learning surrogates for transistor aging (NBTI ΔVth) and guardbanding."""

__version__ = "0.1.0"
