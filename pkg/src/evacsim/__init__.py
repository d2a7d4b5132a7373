"""Round-based stadium evacuation simulation.

Agents with personas decide where to go through a pluggable decision policy,
move across a pixel-canvas stadium with density-dependent speed and obstacle
sliding, and can be redirected by fixed coordinators.  A separate module
models how official messages get misread and spread.
"""

__version__ = "0.1.0"
