"""
Command-line interface for the gatefuse toolkit.
"""
