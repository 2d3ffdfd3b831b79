"""Dataset access: a documented local layout plus optional hub download.

A dataset directory must contain ``metadata.csv`` (or ``metadata.json``)
with one row per image-audio pair:

    pair_id, class_name, illustrator_id, image_file, audio_file

where the file columns are paths relative to the dataset root. A hub
dataset id is accepted wherever a path is: it is snapshotted into the cache
directory first (requires network).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

REQUIRED_COLUMNS = ("pair_id", "class_name", "illustrator_id", "image_file", "audio_file")


class DatasetError(ValueError):
    """Missing or malformed dataset metadata or media files."""


@dataclass(frozen=True)
class DatasetItem:
    pair_id: str
    class_name: str
    illustrator_id: str
    image_path: Path
    audio_path: Path


def resolve_dataset(source: str, cache_dir: str | Path | None = None) -> Path:
    """Return a local dataset directory, downloading a hub dataset if needed."""
    path = Path(source)
    if path.is_dir():
        return path
    try:
        from huggingface_hub import snapshot_download
    except ImportError as exc:
        raise DatasetError(f"'{source}' is not a directory and huggingface_hub is unavailable") from exc
    try:
        local = snapshot_download(repo_id=source, repo_type="dataset", cache_dir=cache_dir)
    except Exception as exc:
        raise DatasetError(
            f"'{source}' is not a local directory and could not be downloaded: {exc}"
        ) from exc
    return Path(local)


def _read_rows(root: Path) -> list[dict]:
    csv_path = root / "metadata.csv"
    json_path = root / "metadata.json"
    if csv_path.exists():
        with open(csv_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    elif json_path.exists():
        rows = json.loads(json_path.read_text(encoding="utf-8"))
        if not isinstance(rows, list):
            raise DatasetError(f"{json_path} must hold a list of objects")
    else:
        raise DatasetError(f"no metadata.csv or metadata.json under {root}")
    return rows


def scan_dataset(root: str | Path) -> list[DatasetItem]:
    """Parse the metadata table and check every referenced file exists."""
    root = Path(root)
    items: list[DatasetItem] = []
    seen: set[str] = set()
    for lineno, row in enumerate(_read_rows(root), start=1):
        missing = [c for c in REQUIRED_COLUMNS if c not in row or row[c] in (None, "")]
        if missing:
            raise DatasetError(f"metadata row {lineno}: missing columns {missing}")
        pair_id = str(row["pair_id"])
        if pair_id in seen:
            raise DatasetError(f"metadata row {lineno}: duplicate pair_id '{pair_id}'")
        seen.add(pair_id)
        image_path = root / str(row["image_file"])
        audio_path = root / str(row["audio_file"])
        for path in (image_path, audio_path):
            if not path.exists():
                raise DatasetError(f"metadata row {lineno}: file not found: {path}")
        items.append(
            DatasetItem(
                pair_id=pair_id,
                class_name=str(row["class_name"]),
                illustrator_id=str(row["illustrator_id"]),
                image_path=image_path,
                audio_path=audio_path,
            )
        )
    return items


def class_id_map(items: list[DatasetItem]) -> dict[str, int]:
    """Contiguous class ids in alphabetical class-name order."""
    return {name: i for i, name in enumerate(sorted({it.class_name for it in items}))}
