"""Discrete simulator for reconfigurable systems built from storage, controller and plant layers."""

__version__ = "0.1.0"
