"""Shape optimization of loaded 2D components on boundary-fitted grids."""

__version__ = "0.1.0"
