"""
SemSync - semantic LIDAR-camera spatio-temporal calibration
"""

__version__ = "1.0.0"
