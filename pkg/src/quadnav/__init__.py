"""Quadrotor navigation stack: grid visibility search, rigid-body simulation,
and a reinforcement-learned body-rate controller, wired together by a CLI."""

__version__ = "0.1.0"
