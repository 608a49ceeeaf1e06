"""Learnable scattering networks built on the dual-tree complex wavelet transform."""
