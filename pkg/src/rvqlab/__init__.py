"""rvqlab: a desk-scale residual-vector-quantization speech codec workbench."""

__version__ = "0.1.0"
