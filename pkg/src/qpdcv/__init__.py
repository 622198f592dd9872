"""Control-variates variance reduction for quasiprobability Monte Carlo estimation."""

__version__ = "0.1.0"
