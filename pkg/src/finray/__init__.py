"""Simulation and analysis toolkit for a three-finger Fin Ray gripper with tactile slip sensing."""

__version__ = "0.1.0"
