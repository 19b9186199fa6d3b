from __future__ import annotations

import json
import secrets
from dataclasses import dataclass, field
from pathlib import Path

from ..engine.throttle import PROFILES

DEVICE_CLASSES = ("edge", "fog", "cloud")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Caps:
    cpu_millis: int
    mem_mb: int

    def to_json(self) -> dict:
        return {"cpu_millis": self.cpu_millis, "mem_mb": self.mem_mb}

    @classmethod
    def from_json(cls, d: dict) -> "Caps":
        try:
            caps = cls(int(d["cpu_millis"]), int(d["mem_mb"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"caps need integer cpu_millis and mem_mb: {exc}") from None
        if caps.cpu_millis < 0 or caps.mem_mb < 0:
            raise ConfigError("caps must be non-negative")
        return caps


@dataclass(frozen=True)
class DeviceConfig:
    id: str
    device_class: str
    capacity: Caps
    visibility: str = "public"
    reachable_from: tuple[str, ...] = ("*",)
    accelerators: tuple[str, ...] = ()
    catalog_url: str = "http://127.0.0.1:8700"
    listen: str = "127.0.0.1:8710"
    profile: str = "unthrottled"
    workers: tuple[dict, ...] = field(default_factory=tuple)

    @property
    def tags(self) -> list[str]:
        return [self.device_class, *self.accelerators]

    @classmethod
    def from_json(cls, d: dict) -> "DeviceConfig":
        cls_tag = d.get("class", "edge")
        if cls_tag not in DEVICE_CLASSES:
            raise ConfigError(f"class must be one of {', '.join(DEVICE_CLASSES)}, got {cls_tag!r}")
        capacity = Caps.from_json(d.get("capacity", {}))
        if capacity.cpu_millis <= 0 or capacity.mem_mb <= 0:
            raise ConfigError("device capacity must be positive")
        visibility = d.get("visibility", "public")
        if visibility not in ("public", "private"):
            raise ConfigError("visibility must be public or private")
        profile = d.get("profile", "unthrottled")
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        return cls(
            id=str(d.get("id") or secrets.token_hex(6)),
            device_class=cls_tag,
            capacity=capacity,
            visibility=visibility,
            reachable_from=tuple(d.get("reachable_from", ["*"])),
            accelerators=tuple(d.get("accelerators", [])),
            catalog_url=d.get("catalog_url", "http://127.0.0.1:8700"),
            listen=d.get("listen", "127.0.0.1:8710"),
            profile=profile,
            workers=tuple(d.get("workers", [])),
        )

    @classmethod
    def load(cls, path: str | Path) -> "DeviceConfig":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"cannot load device config {path}: {exc}") from exc

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "class": self.device_class,
            "capacity": self.capacity.to_json(),
            "visibility": self.visibility,
            "reachable_from": list(self.reachable_from),
            "accelerators": list(self.accelerators),
            "catalog_url": self.catalog_url,
            "listen": self.listen,
            "profile": self.profile,
            "workers": list(self.workers),
        }
