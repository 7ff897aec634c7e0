"""
Numerical service layer: problem model, channels, adaptation, the GAMP
engine, state evolution, diagnostics, baselines and experiment drivers.
"""
