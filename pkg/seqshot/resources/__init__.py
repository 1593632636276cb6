"""Packaged resources (schemas, default config)."""
