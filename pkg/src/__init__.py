"""Optimized Schwarz methods with a discontinuous coarse space on cell-centered finite volumes."""
