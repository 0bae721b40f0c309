"""
Noise vector rendering.
Turns a d-dimensional vector into a grayscale grid and writes it as a
binary PGM (P5) image.
"""

import logging
import math
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image

from errors import ConfigError, FormatError
from numerics import vec64

logger = logging.getLogger(__name__)

UNIFORM_GRAY = 128


class NoiseRenderer:
    """Renders vectors as 8-bit grayscale images."""

    def __init__(self, width: Optional[int] = None):
        """
        Args:
            width: Grid width in pixels; when None the vector length must be a perfect square
        """
        if width is not None and width < 1:
            raise ConfigError(f"width must be >= 1, got {width}")
        self.width = width

    def grid_shape(self, d: int) -> Tuple[int, int]:
        """(height, width) of the grid a d-vector is reshaped into"""
        if self.width is not None:
            if d % self.width:
                raise ConfigError(f"a {d}-vector cannot fill rows of width {self.width}")
            return d // self.width, self.width
        side = math.isqrt(d)
        if side * side != d:
            raise ConfigError(f"d={d} is not a perfect square; pass an explicit width")
        return side, side

    @staticmethod
    def scale_to_bytes(vector) -> np.ndarray:
        """Min-max scale to 0..255; a constant vector becomes uniform gray"""
        v = vec64(vector)
        lo, hi = v.min(), v.max()
        if hi == lo:
            return np.full(v.shape, UNIFORM_GRAY, dtype=np.uint8)
        return np.rint((v - lo) / (hi - lo) * 255.0).astype(np.uint8)

    def to_image(self, vector) -> Image.Image:
        v = vec64(vector)
        height, width = self.grid_shape(v.size)
        pixels = self.scale_to_bytes(v).reshape(height, width)
        return Image.fromarray(pixels)

    def render(self, vector, output_path: Union[str, Path]) -> Path:
        """Write the vector as a P5 PGM file"""
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        image = self.to_image(vector)
        # Pillow's PPM writer emits P5 for mode "L"
        image.save(output_path, format="PPM")
        logger.info(f"Rendered {image.width}x{image.height} noise image to {output_path}")
        return output_path


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Pixel grid of a binary PGM file as uint8 (height, width)"""
    try:
        with Image.open(path) as image:
            if image.format != "PPM" or image.mode != "L":
                raise FormatError(f"{path} is not an 8-bit grayscale PGM")
            return np.asarray(image, dtype=np.uint8).copy()
    except (OSError, ValueError) as e:
        if isinstance(e, FileNotFoundError):
            raise
        raise FormatError(f"cannot decode {path}: {e}") from e


def load_vector(path: Union[str, Path]) -> np.ndarray:
    """Read a vector from a .npy file or a whitespace/comma separated text file"""
    path = Path(path)
    try:
        if path.suffix == ".npy":
            values = np.load(path, allow_pickle=False)
        else:
            text = path.read_text(encoding="utf-8").replace(",", " ")
            values = np.array(text.split(), dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"{path} does not hold a numeric vector: {e}") from e
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise FormatError(f"{path} holds an empty vector")
    return values
