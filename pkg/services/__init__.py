"""
taskfuse services package.

Task Arithmetic toolkit for zero-shot retrieval: checkpoint container,
task vector arithmetic, BM25 first stage, re-ranking, evaluation and the
experiment pipeline that ties them together.
"""

__version__ = "1.0.0"
__author__ = "Ruben-Alvarez-Dev"
