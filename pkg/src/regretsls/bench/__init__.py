"""Benchmark harness: scenarios, sweeps, tables, figures and the command line."""
