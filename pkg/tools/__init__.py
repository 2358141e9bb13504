"""Command line tools for taskfuse."""
