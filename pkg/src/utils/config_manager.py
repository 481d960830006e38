"""
Configuration Manager
Handles loading and saving tool settings
"""

import copy
import json
import logging
import os
from pathlib import Path
from typing import Dict, Any, Optional

import psutil
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class ConfigManager:
    """Manages tool configuration"""

    ENV_OVERRIDES = {
        "SEMSYNC_LOG_LEVEL": "logging.level",
        "SEMSYNC_WORKERS": "runtime.workers",
    }

    def __init__(self, config_file: Optional[Path] = None):
        self.logger = logging.getLogger(__name__)
        self.config_dir = Path(__file__).parent.parent.parent / "config"
        self.config_file = Path(config_file) if config_file else self.config_dir / "settings.json"
        self.default_config = self._get_default_config()

    def _get_default_config(self) -> Dict[str, Any]:
        """Get default configuration settings"""
        return {
            "logging": {
                "level": "INFO",
                "log_to_file": False
            },
            "runtime": {
                "workers": 1  # integer or "auto"
            },
            "classes": {
                "cloud": 10,  # SemanticKITTI car
                "mask": 13    # Cityscapes car train id
            },
            "odometry": {
                "ransac_iterations": 500,
                "inlier_threshold_px": 1.0,
                "ransac_seed": 0,
                "frame_dt": 0.1
            },
            "synth": {
                "clusters": 5,
                "points_per_cluster": 200,
                "frames": 1,
                "speed": 8.0,
                "delay": 0.1
            }
        }

    def load_config(self) -> Dict[str, Any]:
        """Load configuration from file, falling back to defaults"""
        config = copy.deepcopy(self.default_config)
        try:
            if self.config_file.exists():
                with open(self.config_file, 'r', encoding='utf-8') as f:
                    user = json.load(f)
                # Merge with defaults to ensure all keys exist
                config = self._merge_config(config, user)
        except (OSError, json.JSONDecodeError) as e:
            self.logger.warning(f"Error loading config {self.config_file}: {e}. Using defaults.")
        return self._apply_env_overrides(config)

    def _merge_config(self, default: Dict[str, Any], user: Dict[str, Any]) -> Dict[str, Any]:
        """Recursively merge user config with defaults"""
        result = default.copy()

        for key, value in user.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_config(result[key], value)
            else:
                result[key] = value

        return result

    def _apply_env_overrides(self, config: Dict[str, Any]) -> Dict[str, Any]:
        for env_name, path in self.ENV_OVERRIDES.items():
            value = os.getenv(env_name)
            if value:
                self._set_path(config, path, value)
        return config

    @staticmethod
    def _set_path(config: Dict[str, Any], path: str, value: Any) -> None:
        keys = path.split('.')
        current = config
        for key in keys[:-1]:
            current = current.setdefault(key, {})
        current[keys[-1]] = value

    def get_setting(self, path: str, config: Dict[str, Any] = None) -> Any:
        """Get a setting using dot notation (e.g., 'classes.cloud')"""
        if config is None:
            config = self.load_config()

        value = config
        for key in path.split('.'):
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return None

        return value


def resolve_workers(value: Any) -> int:
    """Turn a workers setting (int, numeric string or "auto") into a count"""
    if value is None:
        return 1
    if isinstance(value, str):
        if value.strip().lower() == "auto":
            return max(1, psutil.cpu_count(logical=False) or 1)
        value = int(value)
    return max(1, int(value))
