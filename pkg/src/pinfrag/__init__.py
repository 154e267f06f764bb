"""Simulation and analysis toolkit for a reversible particle creation/coagulation
heat-bath chain on {0,...,L} with frozen endpoints.

Subpackages follow the pipeline: laws (gap-law tables) -> equilibrium (exact
sampling and marginals) -> dynamics (event-driven chain) -> coupling /
exact / front (diagnostics) -> harness (experiment orchestration).
"""

from pinfrag.laws import KernelParams, KernelTable, build_table, load_or_build

__all__ = ["KernelParams", "KernelTable", "build_table", "load_or_build"]
__version__ = "0.1.0"
