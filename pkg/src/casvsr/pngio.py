"""PNG clip I/O: 8-bit RGB frames, lexicographic name order = time order."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def read_png(path) -> np.ndarray:
    """PNG -> float32 [3,H,W] in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def write_png(path, arr: np.ndarray) -> None:
    """float [3,H,W] -> 8-bit RGB PNG; values clamped to [0,1] here only."""
    a = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(a * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def write_gray_png(path, arr: np.ndarray) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path, format="PNG")


def list_frames(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    frames = sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")
    if not frames:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    return frames


def read_clip(directory) -> np.ndarray:
    """Directory of PNGs -> float32 [T,3,H,W]; all frames must share extents."""
    frames = [read_png(p) for p in list_frames(directory)]
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise ValueError(f"frame {i} has extents {f.shape[1:]}, expected {shape[1:]}")
    return np.stack(frames)


def write_clip(directory, clip: np.ndarray, stem: str = "frame") -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(clip):
        p = d / f"{stem}_{i:04d}.png"
        write_png(p, frame)
        paths.append(p)
    return paths
