# beamfuse package initialisation.
#
# This module exposes package-level metadata (such as __version__). The
# simulator, learning stack and evaluation harness live in beamfuse.core;
# the command-line surface is beamfuse.cli.

__all__ = ["__version__"]

__version__ = "0.1.0"
