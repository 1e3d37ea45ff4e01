# backend/stages/roomsim/scene_io.py
"""
Scene files (JSON). Lengths in meters, speed in m/s, rate in Hz:

    {
      "room": [4.0, 5.0, 3.0] | null,
      "beta": 0.5,
      "speakers": [[x, y, z], ...],
      "microphones": [[x, y, z], ...],
      "speed_of_sound": 343.0,
      "image_order": 1,
      "sample_rate": 96000,
      "reflectors": [{"position": [x, y, z], "gain": 1.0}, ...]
    }
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Tuple, Union

from pydantic import ValidationError

from common.config_loader import SAMPLE_RATE_HZ, SPEED_OF_SOUND_MPS
from common.errors import ConfigError
from stages.roomsim.models import Reflector, ReflectorCloud, Room, Scene


def scene_from_dict(raw: Dict[str, Any]) -> Tuple[Scene, ReflectorCloud]:
    if not isinstance(raw, dict):
        raise ConfigError("scene document must be a JSON object")
    try:
        room = None
        if raw.get("room") is not None:
            room = Room(dims=tuple(raw["room"]), beta=raw.get("beta", 0.5))
        scene = Scene(
            room=room,
            speakers=[tuple(p) for p in raw.get("speakers") or []],
            microphones=[tuple(p) for p in raw.get("microphones") or []],
            speed_of_sound_mps=raw.get("speed_of_sound", SPEED_OF_SOUND_MPS),
            image_order=raw.get("image_order", 1),
            sample_rate_hz=raw.get("sample_rate", SAMPLE_RATE_HZ),
        )
        body = ReflectorCloud(
            points=[
                Reflector(position=tuple(r["position"]), gain=r.get("gain", 1.0))
                for r in raw.get("reflectors") or []
            ]
        )
    except (ValidationError, KeyError, TypeError) as e:
        raise ConfigError(f"invalid scene: {e}") from e
    return scene, body


def scene_to_dict(scene: Scene, body: ReflectorCloud | None = None) -> Dict[str, Any]:
    return {
        "room": list(scene.room.dims) if scene.room else None,
        "beta": scene.room.beta if scene.room else 0.0,
        "speakers": [list(p) for p in scene.speakers],
        "microphones": [list(p) for p in scene.microphones],
        "speed_of_sound": scene.speed_of_sound_mps,
        "image_order": scene.image_order,
        "sample_rate": scene.sample_rate_hz,
        "reflectors": [
            {"position": list(r.position), "gain": r.gain} for r in (body.points if body else [])
        ],
    }


def load_scene(path: Union[str, Path]) -> Tuple[Scene, ReflectorCloud]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"scene file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}:{e.lineno}:{e.colno}: {e.msg}") from e
    return scene_from_dict(raw)


def dump_scene(scene: Scene, body: ReflectorCloud | None = None) -> str:
    return json.dumps(scene_to_dict(scene, body), indent=2, sort_keys=True)
