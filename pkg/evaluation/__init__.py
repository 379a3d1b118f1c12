"""
Ranking and classification metrics.
"""
