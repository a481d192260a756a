"""
TranSamba CLI Entrypoint Module

This module provides the command-line interface for TranSamba.
"""

from .main import app

__all__ = ["app"]
