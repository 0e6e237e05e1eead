"""Staged workspace with input-hash manifests and atomic stage builds.

Each pipeline stage owns one directory under the workspace root.  A stage is
rebuilt only when its input hashes or parameters change (or --force).  Builds
happen in a temporary directory that is swapped in only on success, so a
failed build never leaves partial output in place.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
from pathlib import Path
from typing import Callable, Mapping

__all__ = ["InputError", "StageError", "Workspace", "atomic_write_text", "file_sha256"]


class InputError(Exception):
    """Missing or malformed user-supplied input."""


class StageError(Exception):
    """A pipeline stage failed while computing."""


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    """Write-then-rename so readers never observe a torn file."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def stage_dir(self, name: str) -> Path:
        return self.root / name

    def stage_file(self, stage: str, filename: str) -> Path:
        path = self.stage_dir(stage) / filename
        if not path.exists():
            raise InputError(f"stage {stage!r} has not produced {filename!r}; run it first")
        return path

    def _manifest(self, inputs: Mapping[str, Path], params: Mapping) -> dict:
        hashes = {}
        for name, path in sorted(inputs.items()):
            path = Path(path)
            if not path.exists():
                raise InputError(f"input {name!r} not found: {path}")
            hashes[name] = file_sha256(path)
        return {"inputs": hashes, "params": json.loads(json.dumps(params, sort_keys=True))}

    def run_stage(
        self,
        name: str,
        inputs: Mapping[str, Path],
        params: Mapping,
        build: Callable[[Path], None],
        force: bool = False,
    ) -> tuple[Path, bool]:
        """Build a stage directory; returns (path, skipped).

        ``build`` receives the temporary directory and must write every
        output file into it.
        """
        final = self.stage_dir(name)
        manifest = self._manifest(inputs, params)
        manifest_path = final / "manifest.json"
        if not force and manifest_path.exists():
            try:
                existing = json.loads(manifest_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                existing = None
            if existing == manifest:
                return final, True
        tmp = self.root / f".{name}.building"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        try:
            build(tmp)
            (tmp / "manifest.json").write_text(
                json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
            )
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        if final.exists():
            shutil.rmtree(final)
        os.rename(tmp, final)
        return final, False
