import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict

from config.config import MANIFEST_FILE

logger = logging.getLogger("diffcap.cli")


def content_hash(path: str | Path) -> str:
    """
    Git-style blob hash of a file.

    Args:
        path: file to hash

    Returns:
        str: hex sha1 of b"blob <size>\\0" + content
    """
    data = Path(path).read_bytes()
    digest = hashlib.sha1(f"blob {len(data)}\0".encode("utf-8"))
    digest.update(data)
    return digest.hexdigest()


class RunManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    command: str
    seed: int
    config: Optional[dict] = None
    inputs: dict[str, str] = {}
    outputs: dict[str, str] = {}
    created_at: str

    @classmethod
    def create(cls, command: str, seed: int, config: dict = None, inputs: list = (),
               outputs: dict = None) -> "RunManifest":
        hashes = {str(p): content_hash(p) for p in inputs if p is not None and Path(p).is_file()}
        return cls(
            command=command,
            seed=seed,
            config=config,
            inputs=hashes,
            outputs={k: str(v) for k, v in (outputs or {}).items()},
            created_at=datetime.now(timezone.utc).isoformat(),
        )

    def write(self, out_dir: str | Path, name: str = MANIFEST_FILE) -> Path:
        path = Path(out_dir) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.debug(f"Wrote run manifest to {path}")
        return path
