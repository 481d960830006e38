"""
Run output handling
"""

from .output_manager import OutputManager

__all__ = ["OutputManager"]
