"""Gain-scheduled H2 synthesis for LPV plants in structured LFR form.

Pipeline: build a structured plant LFR, lift its uncertainty channel to a
passivity form, solve the synthesis LMIs for the lifted plant, reconstruct
the controller and its triangular scheduling function, and verify the
analysis inequalities on both the lifted and the original closed loop.
"""

from . import matkit, sdp, lfr, lifting, scalings, synthesis, reconstruct, verify, families

__all__ = [
    "matkit",
    "sdp",
    "lfr",
    "lifting",
    "scalings",
    "synthesis",
    "reconstruct",
    "verify",
    "families",
]

__version__ = "0.1.0"
