"""Privacy-preserving contact tracing over a fixed BLE beacon infrastructure."""

__version__ = "0.1.0"
