"""
Modality encoders, fusion strategies, prediction heads and the model registry.
"""
