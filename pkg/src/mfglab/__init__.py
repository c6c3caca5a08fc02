# Fluctuation laboratory for the LQ mean field game with common noise

__version__ = "0.1.0"
