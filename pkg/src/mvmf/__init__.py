"""Multi-vessel multi-float planning: flow estimation, scheduling, simulation."""
from .flowfield import (FlowField, GridField, GyreField, LangmuirField, PiecewiseConstantField, RotatingField,
                        SolidBodyRotation, StreamFunctionField, Trajectory, UniformField, Workspace,
                        divergence_at, incompressibility_report, integrate_trajectory, velocity_at)

__version__ = "0.1.0"
