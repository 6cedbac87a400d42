"""Catalog of semantic compression model (SCM) profiles.

Each profile bundles the measured cost/quality numbers of one trained
encoder/decoder pair: compute power draw, per-image inference time, a
distortion proxy (training-loss value, lower is better) and the compressed
payload size per image.  The catalog is loaded once from a YAML file and is
immutable afterwards; profile order in the file defines the SCM index used
by every action encoding downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml


class CatalogError(ValueError):
    """Raised when a catalog file is malformed or violates an invariant."""


@dataclass(frozen=True)
class ScmProfile:
    """Resource/quality profile of one semantic compression model.

    compute_power is in milliwatts, inference_time_per_image in seconds,
    payload_bits in bits per transmitted image.  distortion_proxy is a
    dimensionless quality score where lower means better reconstruction.
    """

    name: str
    compute_power: float
    inference_time_per_image: float
    distortion_proxy: float
    payload_bits: float

    def __post_init__(self) -> None:
        for field in ("compute_power", "inference_time_per_image",
                      "distortion_proxy", "payload_bits"):
            value = getattr(self, field)
            if not value > 0.0:
                raise CatalogError(
                    f"profile {self.name!r}: {field} must be > 0, got {value}")


@dataclass(frozen=True)
class ScmCatalog:
    """Ordered, validated collection of SCM profiles.

    The position of a profile in `profiles` is its SCM index everywhere
    (actions, baselines, reports).  The unit scales record how the raw file
    values were rescaled at load time.
    """

    profiles: tuple[ScmProfile, ...]
    power_unit_scale: float = 1.0
    time_unit_scale: float = 1.0

    def __post_init__(self) -> None:
        if len(self.profiles) == 0:
            raise CatalogError("catalog must contain at least one profile")
        if not self.power_unit_scale > 0.0:
            raise CatalogError("power_unit_scale must be > 0")
        if not self.time_unit_scale > 0.0:
            raise CatalogError("time_unit_scale must be > 0")
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise CatalogError(f"duplicate profile name {dup!r}")

    def __len__(self) -> int:
        return len(self.profiles)

    def __getitem__(self, index: int) -> ScmProfile:
        return self.profiles[index]

    def index_of(self, name: str) -> int:
        for i, profile in enumerate(self.profiles):
            if profile.name == name:
                return i
        raise KeyError(name)


def per_image_inference_time(raw_batch_time: float, batch_size: float) -> float:
    """Per-image inference time from a measured whole-batch duration."""
    if not raw_batch_time > 0.0:
        raise CatalogError(f"raw_batch_time must be > 0, got {raw_batch_time}")
    if not batch_size > 0:
        raise CatalogError(f"batch_size must be > 0, got {batch_size}")
    return raw_batch_time / batch_size


_REQUIRED_PROFILE_KEYS = ("name", "compute_power", "inference_time_raw",
                          "inference_batch", "distortion_proxy", "payload_bits")


def load_catalog(path: str | Path) -> ScmCatalog:
    """Load and validate an SCM catalog from a YAML file.

    The file holds one mapping per profile under `profiles`, plus top-level
    `power_unit_scale` and `time_unit_scale` multipliers.  Scales are applied
    here: stored compute power is `power_unit_scale * compute_power` and the
    per-image time is `time_unit_scale * inference_time_raw / inference_batch`.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise CatalogError(f"cannot parse catalog file {path}: {exc}") from exc
    if not isinstance(raw, dict) or "profiles" not in raw:
        raise CatalogError(f"catalog file {path} must be a mapping with a 'profiles' list")

    power_scale = float(raw.get("power_unit_scale", 1.0))
    time_scale = float(raw.get("time_unit_scale", 1.0))

    profiles = []
    for entry in raw["profiles"]:
        if not isinstance(entry, dict):
            raise CatalogError(f"profile entries must be mappings, got {entry!r}")
        missing = [k for k in _REQUIRED_PROFILE_KEYS if k not in entry]
        if missing:
            name = entry.get("name", "<unnamed>")
            raise CatalogError(f"profile {name!r}: missing keys {missing}")
        name = str(entry["name"])
        raw_time = float(entry["inference_time_raw"])
        batch = float(entry["inference_batch"])
        if not raw_time > 0 or not batch > 0:
            raise CatalogError(
                f"profile {name!r}: inference_time_raw and inference_batch must be > 0")
        profiles.append(ScmProfile(
            name=name,
            compute_power=power_scale * float(entry["compute_power"]),
            inference_time_per_image=time_scale * per_image_inference_time(raw_time, batch),
            distortion_proxy=float(entry["distortion_proxy"]),
            payload_bits=float(entry["payload_bits"]),
        ))
    return ScmCatalog(profiles=tuple(profiles),
                      power_unit_scale=power_scale,
                      time_unit_scale=time_scale)


def save_catalog(catalog: ScmCatalog, path: str | Path) -> None:
    """Serialize a catalog so that load_catalog() reproduces it field-for-field.

    Scales are written as 1.0 and already-scaled values are emitted raw, so
    the round trip is exact.
    """
    doc = {
        "power_unit_scale": 1.0,
        "time_unit_scale": 1.0,
        "profiles": [
            {
                "name": p.name,
                "compute_power": p.compute_power,
                "inference_time_raw": p.inference_time_per_image,
                "inference_batch": 1,
                "distortion_proxy": p.distortion_proxy,
                "payload_bits": p.payload_bits,
            }
            for p in catalog.profiles
        ],
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))
