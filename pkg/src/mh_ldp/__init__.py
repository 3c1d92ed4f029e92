"""Large deviations of Metropolis-Hastings empirical measures on finite spaces and 1-D grids."""

__version__ = "0.1.0"
