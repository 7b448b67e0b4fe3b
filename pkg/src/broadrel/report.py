"""Report serialisation and run manifests.

Numbers are written with six significant digits. Every command writes into a
staging directory first and only moves files into place once all of them
have been produced, so a failed run leaves no partial reports behind.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

TOOL = "broadrel"


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, (float, Fraction)):
        return f"{float(value):.6g}"
    return str(value)


def number(value):
    """JSON-friendly number rounded to six significant digits."""
    if value is None or isinstance(value, (bool, int)):
        return value
    return float(f"{float(value):.6g}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Staging:
    """Collects output files and publishes them together.

    Use as a context manager; on an exception the staging directory and
    everything in it is removed and ``out_dir`` is left untouched.
    """

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.files: list[str] = []
        self._dir: Path | None = None

    def __enter__(self) -> "Staging":
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._dir = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir))
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for name in self.files:
                    os.replace(self._dir / name, self.out_dir / name)
        finally:
            shutil.rmtree(self._dir, ignore_errors=True)
        return False

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self._dir / name

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
        with self.path(name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(canonical_json(obj))

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)

    def write_manifest(self, command: str, config: Mapping, inputs: Sequence, version: str) -> dict:
        """Write ``run_manifest.json`` covering every file staged so far.

        Inputs are keyed by file name so the manifest does not depend on
        where the input directory lives.
        """
        manifest = {
            "command": command,
            "config": config,
            "config_hash": config_hash(config),
            "inputs": {Path(p).name: file_digest(p) for p in sorted(inputs, key=lambda p: Path(p).name)},
            "outputs": {n: file_digest(self._dir / n) for n in sorted(self.files)},
            "tool": TOOL,
            "version": version,
        }
        self.write_json("run_manifest.json", manifest)
        return manifest


def rounded(obj):
    """Copy of a JSON-ready structure with every float cut to six significant digits."""
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    if isinstance(obj, (float, Fraction)):
        return number(obj)
    return obj
