"""Caption datasets: image id -> ground-truth captions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .text import tokenize


class DatasetError(ValueError):
    """Malformed caption dataset content."""


@dataclass
class CaptionDataset:
    """Ordered mapping of image id to its raw GT captions.

    Tokenized forms are computed once on construction.
    """

    images: dict[str, list[str]]
    _tokens: dict[str, list[list[str]]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for image_id, caps in self.images.items():
            if not isinstance(image_id, str):
                raise DatasetError(f"image id must be a string, got {image_id!r}")
            if not caps:
                raise DatasetError(f"image {image_id!r} has an empty caption list")
        self._tokens = {i: [tokenize(c) for c in caps] for i, caps in self.images.items()}

    @classmethod
    def from_records(cls, records: Sequence[Mapping]) -> "CaptionDataset":
        images: dict[str, list[str]] = {}
        for n, rec in enumerate(records):
            try:
                image_id, caps = rec["id"], rec["captions"]
            except (KeyError, TypeError):
                raise DatasetError(f"record {n} lacks 'id'/'captions'") from None
            if image_id in images:
                raise DatasetError(f"duplicate image id {image_id!r}")
            if not isinstance(caps, list) or not all(isinstance(c, str) for c in caps):
                raise DatasetError(f"image {image_id!r}: captions must be a list of strings")
            images[image_id] = list(caps)
        return cls(images)

    def to_records(self) -> list[dict]:
        return [{"id": i, "captions": list(c)} for i, c in self.images.items()]

    def __len__(self) -> int:
        return len(self.images)

    def __contains__(self, image_id) -> bool:
        return image_id in self.images

    def __iter__(self) -> Iterator[str]:
        return iter(self.images)

    def ids(self) -> list[str]:
        return list(self.images)

    def tokens(self, image_id: str) -> list[list[str]]:
        """Tokenized GT captions of one image."""
        try:
            return self._tokens[image_id]
        except KeyError:
            raise KeyError(f"unknown image id {image_id!r}") from None


def read_captions(path) -> CaptionDataset:
    """Parse ``{"images": [{"id": str, "captions": [str, ...]}, ...]}``."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        # json.loads also rejects trailing data ("Extra data")
        raise DatasetError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise DatasetError(f"{path}: expected an object with an 'images' list")
    return CaptionDataset.from_records(doc["images"])


def write_captions(dataset: CaptionDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"images": dataset.to_records()}, fh, ensure_ascii=False, indent=1)
        fh.write("\n")
