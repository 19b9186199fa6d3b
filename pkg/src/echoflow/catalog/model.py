"""Catalog items: an href plus an ordered list of rel/val metadata pairs."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..common import LAST_UPDATED, REL, STALE, parse_iso

ITEM_KINDS = ("device", "worker", "dataflow", "service")

_WS = re.compile(r"\s")


class CatalogError(ValueError):
    pass


class InvalidHref(CatalogError):
    pass


class CatalogParseError(CatalogError):
    pass


@dataclass(frozen=True)
class Relation:
    rel: str
    val: str

    def __post_init__(self) -> None:
        if not isinstance(self.rel, str) or not self.rel:
            raise CatalogParseError("relation 'rel' must be a non-empty string")
        if not isinstance(self.val, str):
            raise CatalogParseError(f"relation {self.rel!r}: 'val' must be a string")

    def to_json(self) -> dict:
        return {"rel": self.rel, "val": self.val}


@dataclass(frozen=True)
class CatalogItem:
    href: str
    metadata: tuple[Relation, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "metadata", tuple(self.metadata))

    def values(self, rel: str) -> list[str]:
        return [r.val for r in self.metadata if r.rel == rel]

    def get(self, rel: str, default: str | None = None) -> str | None:
        """Last value for ``rel``; short names are expanded to urn:echo:rel:<name>."""
        if ":" not in rel:
            rel = REL + rel
        found = self.values(rel)
        return found[-1] if found else default

    def as_dict(self) -> dict[str, str]:
        """Relations keyed by short name (urn:echo:rel: prefix stripped); last one wins."""
        out: dict[str, str] = {}
        for r in self.metadata:
            key = r.rel[len(REL):] if r.rel.startswith(REL) else r.rel
            out[key] = r.val
        return out

    @property
    def last_updated(self):
        val = self.get(LAST_UPDATED)
        return parse_iso(val) if val else None

    @property
    def stale(self) -> bool:
        return self.get(STALE) == "true"

    def without(self, *rels: str) -> "CatalogItem":
        return CatalogItem(self.href, tuple(r for r in self.metadata if r.rel not in rels))

    def with_relation(self, rel: str, val: str) -> "CatalogItem":
        return CatalogItem(self.href, self.without(rel).metadata + (Relation(rel, val),))

    def to_json(self) -> dict:
        return {"href": self.href, "item-metadata": [r.to_json() for r in self.metadata]}

    @classmethod
    def from_json(cls, data: object) -> "CatalogItem":
        if not isinstance(data, dict):
            raise CatalogParseError("catalog item must be a JSON object")
        href = data.get("href")
        meta = data.get("item-metadata", [])
        if not isinstance(href, str):
            raise CatalogParseError("catalog item needs a string 'href'")
        if not isinstance(meta, list):
            raise CatalogParseError("'item-metadata' must be a list")
        rels = []
        for entry in meta:
            if not isinstance(entry, dict) or "rel" not in entry or "val" not in entry:
                raise CatalogParseError("each metadata entry needs 'rel' and 'val'")
            rels.append(Relation(entry["rel"], entry["val"]))
        return cls(href, tuple(rels))


def make_item(href: str, values: Mapping[str, object] | Iterable[tuple[str, object]] = ()) -> CatalogItem:
    """Build an item from short-name relations; non-string values are JSON-encoded."""
    pairs = values.items() if isinstance(values, Mapping) else values
    rels = []
    for key, val in pairs:
        rel = key if ":" in key else REL + key
        if not isinstance(val, str):
            val = json.dumps(val, sort_keys=True)
        rels.append(Relation(rel, val))
    return CatalogItem(href, tuple(rels))


def validate_href(href: str) -> None:
    """Check the /<kind>/<id>[/<sub>...] path grammar."""
    if not isinstance(href, str) or not href:
        raise InvalidHref("href must be a non-empty string")
    if not href.startswith("/"):
        raise InvalidHref(f"href {href!r} must begin with '/'")
    if _WS.search(href):
        raise InvalidHref(f"href {href!r} must not contain whitespace")
    parts = href.split("/")[1:]
    if len(parts) < 2 or any(p == "" for p in parts):
        raise InvalidHref(f"href {href!r} must look like /<kind>/<id>[/<sub>...]")
    if parts[0] not in ITEM_KINDS:
        raise InvalidHref(f"href {href!r}: unknown kind {parts[0]!r} (expected one of {', '.join(ITEM_KINDS)})")


def href_kind(href: str) -> str:
    return href.split("/")[1]


def href_depth(href: str) -> int:
    return len(href.split("/")) - 1
