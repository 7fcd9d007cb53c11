"""Privacy-preserving marketplace for location-tagged data objects."""

__version__ = "0.1.0"
