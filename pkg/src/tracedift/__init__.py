"""Trace-driven dynamic information flow tracking for a toy traced core.

A simulated CPU emits a PFT-style waypoint trace and a memory-access side
log; the monitor decodes the trace, rebuilds the executed blocks, replays
statically compiled tag microcode and reports policy violations.
"""

__version__ = "0.1.0"
