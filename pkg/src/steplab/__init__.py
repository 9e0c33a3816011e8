"""steplab: a numerical laboratory for one-gradient-step feature learning.

Simulates a single (or a few) full-batch gradient steps on the first layer of
a two-layer network at finite size, measures the resulting spectral spike and
ridge-regression risk, and compares both against closed-form random-matrix
predictions: the BBP spike location/overlap, the asymptotic risk drop delta,
and the large-learning-rate mismatch bound tau*.
"""

__version__ = "0.1.0"
