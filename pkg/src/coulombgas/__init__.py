"""coulombgas: verification engine for Coulomb-gas Langevin dynamics.

Subpackages cover truncated Laurent-series arithmetic (fseries), the
linearized-dynamics propagator and its identities (kernel), the discretized
free-boson operator calculus (boson), the equilibrium and dynamical
constraint operators (svconstraints), the stochastic engine (dyson),
noise-preserving trajectory transformations (nptransform), and the batch
verification CLI (cli).
"""

__version__ = "0.1.0"
