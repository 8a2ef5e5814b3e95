"""neqlab: equilibrium vs. non-equilibrium generative sampling on a rotating
multi-well potential, with finite-difference Fokker-Planck cross-checks."""

__version__ = "0.1.0"
