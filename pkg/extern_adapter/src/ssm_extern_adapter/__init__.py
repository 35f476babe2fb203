"""Reference external provider for the ssm-blackbox wire protocol."""

from .server import ForceServer, resolve_model, PROTOCOL_VERSION

__all__ = ["ForceServer", "resolve_model", "PROTOCOL_VERSION"]
