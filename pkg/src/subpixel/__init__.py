"""Sub-pixel built-up and vegetation fraction estimation from coarse multiband rasters."""

__version__ = "0.1.0"
