"""
HTBB

Black-box approximation (HT-cross) and gradient-free optimization (HTOpt)
in the hierarchical Tucker format, with MaxVol-driven index selection.
"""

__version__ = "0.1.0"
