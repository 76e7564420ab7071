"""Benchmark problems, error norms, convergence studies and regularity."""
