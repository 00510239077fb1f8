"""Discrete global optical flow over regular grids."""
from .model import FlowField, Image, LabelSpace, Penalty, SolverConfig
from .pipeline import FlowResult, estimate_flow
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["FlowField", "Image", "LabelSpace", "Penalty", "SolverConfig", "FlowResult",
           "estimate_flow", "BACKEND", "__version__"]
