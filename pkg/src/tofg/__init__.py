"""Occupancy flow graphs over lane maps, a graph-attention trajectory
predictor trained by imitation, and closed-loop replay evaluation."""

__version__ = "0.1.0"

__all__ = ["__version__"]
