from .client import CatalogClient, CatalogUnavailable, Conflict
from .model import (
    CatalogItem,
    CatalogParseError,
    InvalidHref,
    Relation,
    make_item,
    validate_href,
)
from .store import CatalogStore

__all__ = [
    "CatalogClient",
    "CatalogItem",
    "CatalogParseError",
    "CatalogStore",
    "CatalogUnavailable",
    "Conflict",
    "InvalidHref",
    "Relation",
    "make_item",
    "validate_href",
]
