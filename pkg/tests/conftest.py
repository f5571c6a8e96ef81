"""Shared builders for tests."""
from __future__ import annotations

import pytest

from oppvid.model import Payload, PayloadId, RelayMetadata


def pid(source: str = "n0", segment: int = 0, layer: int | None = 0) -> PayloadId:
    return PayloadId(source, segment, layer)


def payload(
    source: str = "n0",
    segment: int = 0,
    layer: int | None = 0,
    size: int = 1_000,
    created_at: int = 0,
    ttl: int = 86_400,
) -> Payload:
    return Payload(PayloadId(source, segment, layer), size, created_at, ttl)


def meta(copies: int = 8, path: tuple[str, ...] = ("n0",)) -> RelayMetadata:
    return RelayMetadata(copies, path)


@pytest.fixture
def make_payload():
    return payload


@pytest.fixture
def make_meta():
    return meta
