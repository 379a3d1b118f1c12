"""
Dense float64 tensors with reverse-mode automatic differentiation.
"""
