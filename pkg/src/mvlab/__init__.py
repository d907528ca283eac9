"""mvlab: a numerical laboratory for decoupled McKean-Vlasov SDEs.

Simulates the measure flow / frozen-law flow decomposition of McKean-Vlasov
equations (finite-dimensional, reaction-diffusion, 2D Navier-Stokes) and runs
pullback-attractor, conjugation, contraction and absorbing-set diagnostics on
top of a deterministic, counter-based noise substrate.
"""

__version__ = "0.1.0"
