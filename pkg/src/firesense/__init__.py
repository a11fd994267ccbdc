"""Fire-induced drift surrogates for steel frames.

Structure generation, a thermal spreading law, a linear frame oracle, a
graph-network MIDR surrogate trained by transfer learning, and a predictor
of the most fire-sensitive point that maximises the surrogate.
"""
__version__ = "0.1.0"
