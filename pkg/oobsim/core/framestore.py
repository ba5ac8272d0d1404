"""
Frame files on disk: binary PPM images plus a JSON schedule sidecar.
"""
from pathlib import Path
from typing import List, Tuple

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from oobsim.core.errors import ConfigError

SIDECAR_NAME = "schedule.json"
FRAME_PATTERN = "frame_*.ppm"


class ScheduleSidecar(BaseModel):
    """Metadata the decoder needs alongside the captured frames."""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    hold_time_ms: int = Field(..., ge=0)
    frame_kinds: List[str]
    k: int = Field(..., ge=1)
    data_leds: int = Field(..., ge=1, alias="N")
    expected_leds: int = Field(..., ge=0)


def write_ppm(path: Path, image: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PPM")


def read_ppm(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def frame_path(directory: Path, index: int) -> Path:
    return Path(directory) / f"frame_{index:03d}.ppm"


def write_frames(directory: Path, frames: List[np.ndarray], sidecar: ScheduleSidecar) -> List[Path]:
    """Write frame_NNN.ppm files and schedule.json into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        path = frame_path(directory, i)
        write_ppm(path, frame)
        paths.append(path)
    (directory / SIDECAR_NAME).write_text(sidecar.model_dump_json(by_alias=True, indent=2) + "\n")
    return paths


def read_frames(directory: Path) -> Tuple[List[np.ndarray], ScheduleSidecar]:
    """Load the frames of a directory in index order together with the sidecar."""
    directory = Path(directory)
    sidecar_path = directory / SIDECAR_NAME
    if not sidecar_path.is_file():
        raise ConfigError(f"No {SIDECAR_NAME} in {directory}")
    try:
        sidecar = ScheduleSidecar.model_validate_json(sidecar_path.read_text())
    except ValidationError as e:
        raise ConfigError(f"Invalid {SIDECAR_NAME}: {e}") from e

    paths = sorted(directory.glob(FRAME_PATTERN))
    if not paths:
        raise ConfigError(f"No frames in {directory}")
    frames = [read_ppm(p) for p in paths]
    return frames, sidecar
