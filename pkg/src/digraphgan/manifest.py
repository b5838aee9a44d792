"""Run manifests and flat key=value config files.

A manifest records the fully resolved configuration of a run plus input
digests and timestamps. Because config lines are plain `key=value` and
metadata lives in comments, a manifest doubles as a config file: re-running
the same command with `--config manifest.txt` reproduces the run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read key=value lines; `#` comments and blank lines are skipped."""
    out: dict[str, str] = {}
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    version: str
    started: str
    finished: str = ""
    config: dict[str, str] = field(default_factory=dict)
    input_digests: dict[str, str] = field(default_factory=dict)

    def write(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# command: {self.command}\n")
            fh.write(f"# version: {self.version}\n")
            fh.write(f"# started: {self.started}\n")
            fh.write(f"# finished: {self.finished}\n")
            for name, digest in sorted(self.input_digests.items()):
                fh.write(f"# digest:{name}: sha256:{digest}\n")
            for key in sorted(self.config):
                fh.write(f"{key}={self.config[key]}\n")
