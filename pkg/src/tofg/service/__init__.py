"""HTTP compute service around the toolkit.

Stateless by design: every request carries its documents (scenarios,
checkpoints, config overrides) and every response returns plain JSON
documents the caller can persist. The bundled CLI talks to this app
in-process by default and over HTTP when pointed at a server.
"""

from .app import create_app

__all__ = ["create_app"]
