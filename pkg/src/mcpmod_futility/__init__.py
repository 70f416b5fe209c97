"""Interim futility metrics for MCP-Mod dose-finding trials with longitudinal data."""

__version__ = "0.1.0"
