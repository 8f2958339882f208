"""Model and media adapters producing meldrefine's opaque pipeline inputs."""

__version__ = "0.1.0"
