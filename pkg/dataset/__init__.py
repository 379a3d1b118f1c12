"""
Synthetic EHR-shaped datasets: generation, file format, splitting and batching.
"""
