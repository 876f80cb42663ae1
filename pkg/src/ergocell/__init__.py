"""ergocell: effective boundary conditions of elliptic PDE with random data.

Solves truncated half-space cell problems for fully nonlinear uniformly
elliptic operators with stationary random boundary data, runs Monte Carlo
concentration/rate experiments on the resulting ergodic constants, and
checks homogenization on curved domains over epsilon sweeps.
"""

__version__ = "0.1.0"
