"""
Output Manager
Writes command results into the output directory without touching inputs
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Set

from src.utils.errors import InputError
from src.utils.helpers import ensure_directory


class OutputManager:
    """Owns one output directory and refuses to overwrite registered inputs"""

    def __init__(self, output_dir, inputs: Optional[Iterable] = None):
        self.logger = logging.getLogger(__name__)
        self.output_dir = ensure_directory(Path(output_dir))
        self.protected: Set[Path] = set()
        self.written: List[Path] = []
        for path in inputs or []:
            self.register_input(path)

    def register_input(self, path) -> None:
        if path is not None:
            self.protected.add(Path(path).resolve())

    def is_safe_target(self, name: str) -> bool:
        """Check that a result file stays inside the output directory and is not an input"""
        target = (self.output_dir / name).resolve()
        if self.output_dir.resolve() not in target.parents:
            self.logger.warning(f"Output outside the output directory: {target}")
            return False
        if target in self.protected:
            self.logger.warning(f"Refusing to overwrite input file: {target}")
            return False
        return True

    def path_for(self, name: str) -> Path:
        if not self.is_safe_target(name):
            raise InputError(f"refusing to write {name}: it would overwrite an input or leave {self.output_dir}")
        return self.output_dir / name

    def write_text(self, name: str, content: str) -> Path:
        path = self.path_for(name)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(content)
        self.written.append(path)
        self.logger.debug(f"Wrote {path}")
        return path

    def write_json(self, name: str, data: Dict[str, Any]) -> Path:
        """Sorted keys and a trailing newline so identical runs give identical bytes"""
        return self.write_text(name, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def write_bytes(self, name: str, data: bytes) -> Path:
        path = self.path_for(name)
        path.write_bytes(data)
        self.written.append(path)
        self.logger.debug(f"Wrote {path}")
        return path
