"""
SAEM with Langevin (ULA/MALA) E-step approximations.
"""
__version__ = "0.1.0"
