"""Point-cloud to OpenStreetMap place recognition with polar BEV descriptors."""

__version__ = "0.1.0"
