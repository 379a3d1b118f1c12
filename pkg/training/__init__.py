"""
Model configuration, optimization and the training loop.
"""
