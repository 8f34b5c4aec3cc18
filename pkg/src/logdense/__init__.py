"""Topology compiler and analyzer for logarithmic skip-connection templates."""

__version__ = "0.1.0"

from .topology import ConfigError, NodeKind, Scheme, Topology, generate  # noqa: E402

__all__ = ["ConfigError", "NodeKind", "Scheme", "Topology", "generate", "__version__"]
