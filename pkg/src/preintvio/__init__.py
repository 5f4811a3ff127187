"""Closed-form IMU preintegration and sliding-window visual-inertial estimation."""

__version__ = "0.1.0"
