"""Hypercat-style REST facade over :class:`CatalogStore`."""

from __future__ import annotations

import json
from typing import List, Optional

from fastapi import FastAPI, HTTPException, Query, Request, Response
from pydantic import BaseModel, ConfigDict, Field

from ..common import parse_iso
from .model import CatalogError, CatalogItem, CatalogParseError, InvalidHref
from .store import CATALOGUE_METADATA, CatalogStore, ItemExists


class RelationModel(BaseModel):
    rel: str
    val: str


class ItemModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    href: str
    item_metadata: List[RelationModel] = Field(default_factory=list, alias="item-metadata")


class ItemList(BaseModel):
    items: List[ItemModel]


class Catalogue(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    catalogue_metadata: List[RelationModel] = Field(alias="catalogue-metadata")
    items: List[ItemModel]


def _out(items: list[CatalogItem]) -> dict:
    return {"items": [it.to_json() for it in items]}


def create_app(store: CatalogStore) -> FastAPI:
    app = FastAPI(title="echoflow catalog")
    app.state.store = store

    @app.post("/cat", status_code=201)
    async def register(request: Request, response: Response, if_absent: bool = False):
        raw = await request.body()
        try:
            data = json.loads(raw)
        except ValueError as exc:
            raise HTTPException(400, f"parse error: {exc}")
        try:
            item = CatalogItem.from_json(data)
            stored, created = store.register(item, if_absent=if_absent)
        except InvalidHref as exc:
            raise HTTPException(422, f"validation error: {exc}")
        except CatalogParseError as exc:
            raise HTTPException(400, f"parse error: {exc}")
        except ItemExists as exc:
            raise HTTPException(409, {"message": "item exists", "item": exc.item.to_json()})
        except CatalogError as exc:
            raise HTTPException(422, str(exc))
        if not created:
            response.status_code = 200
        return stored.to_json()

    @app.get("/cat")
    def catalogue():
        return store.to_json()

    @app.get("/cat/items")
    def items(href: Optional[str] = None, prefix: Optional[str] = None):
        if href is not None:
            item = store.get(href)
            if item is None:
                raise HTTPException(404, f"not found: {href}")
            return item.to_json()
        return _out(store.query_prefix(prefix or ""))

    @app.delete("/cat/items", status_code=204)
    def delete(href: str):
        if not store.delete(href):
            raise HTTPException(404, f"not found: {href}")
        return Response(status_code=204)

    @app.get("/cat/watch")
    def watch(prefix: str = "", since: str = Query(...), timeout: Optional[float] = None):
        try:
            ts = parse_iso(since)
        except ValueError:
            raise HTTPException(400, f"bad timestamp: {since}")
        return _out(store.watch(prefix, ts, timeout))

    @app.get("/health")
    def health():
        return {"ok": True, "items": len(store.all()), "catalogue-metadata": CATALOGUE_METADATA}

    return app
