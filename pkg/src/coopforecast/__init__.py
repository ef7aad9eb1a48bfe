"""Cooperative occlusion-aware pedestrian forecasting between two cameras."""
__version__ = "0.1.0"
