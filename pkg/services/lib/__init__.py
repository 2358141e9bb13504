"""Shared infrastructure: configuration, logging, errors, constants."""
