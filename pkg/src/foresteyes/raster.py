"""Raster data model, file I/O, cropping/resampling, color compositions, NDVI.

A band stack is stored on disk as a pair of files sharing one base name:
``<name>.bsj`` is a JSON header and ``<name>.bsd`` the raw payload,
band-major then row-major. The payload dtype is declared in the header
(``f32le`` for reflectance stacks; the same container is reused with
``i32le`` for segmentation label planes and ``u8`` for class maps).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import FormatError, ValidationError
from .validation import (
    check_band_indices,
    check_positive,
    check_window,
)

_DTYPES = {"f32le": "<f4", "i32le": "<i4", "u8": "u1"}


@dataclass(frozen=True)
class BandStack:
    """Georeferenced multiband raster; the carrier of all pixel math.

    Parameters
    ----------
    bands : ndarray, shape (n_bands, height, width)
        Band planes, float32.
    band_names : tuple of str
        One unique label per band.
    pixel_size : float
        Meters per (square) pixel.
    origin : (float, float)
        Easting and northing of the top-left corner, meters.
    crs : str
        Coordinate reference system code.
    nodata : float or None
        Optional sentinel value.
    """

    bands: np.ndarray
    band_names: tuple
    pixel_size: float
    origin: tuple
    crs: str = "unspecified"
    nodata: float | None = None

    def __post_init__(self):
        bands = np.ascontiguousarray(np.asarray(self.bands, dtype=np.float32))
        if bands.ndim != 3:
            raise ValidationError(
                f"bands must have shape (n_bands, height, width), got {bands.shape}"
            )
        if bands.shape[1] < 1 or bands.shape[2] < 1:
            raise ValidationError("width and height must be >= 1")
        names = tuple(str(n) for n in self.band_names)
        if len(names) != bands.shape[0]:
            raise ValidationError(
                f"{len(names)} band names for {bands.shape[0]} bands"
            )
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate band names: {names}")
        check_positive("pixel_size", self.pixel_size)
        bands.flags.writeable = False
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "band_names", names)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "pixel_size", float(self.pixel_size))

    @property
    def n_bands(self) -> int:
        return self.bands.shape[0]

    @property
    def height(self) -> int:
        return self.bands.shape[1]

    @property
    def width(self) -> int:
        return self.bands.shape[2]

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    def band(self, index: int) -> np.ndarray:
        return self.bands[check_band_indices(self, [index], distinct=False)[0]]

    def pixel_matrix(self) -> np.ndarray:
        """Bands unrolled to a (height*width, n_bands) float64 matrix."""
        return self.bands.reshape(self.n_bands, -1).T.astype(np.float64)


@dataclass(frozen=True)
class RgbComposite:
    """8-bit three-channel composition of a band stack.

    ``channels`` has shape (height, width, 3); ``source_bands`` records the
    band indices used and ``stretch`` the percentile pair applied.
    """

    channels: np.ndarray
    source_bands: tuple
    stretch: tuple

    def __post_init__(self):
        ch = np.ascontiguousarray(np.asarray(self.channels, dtype=np.uint8))
        if ch.ndim != 3 or ch.shape[2] != 3:
            raise ValidationError(
                f"channels must have shape (height, width, 3), got {ch.shape}"
            )
        ch.flags.writeable = False
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "source_bands", tuple(int(b) for b in self.source_bands))
        object.__setattr__(self, "stretch", (float(self.stretch[0]), float(self.stretch[1])))

    @property
    def height(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[1]


@dataclass(frozen=True)
class NdviResult:
    """NDVI plane in [-1, 1] plus the mask of zero-denominator pixels."""

    values: np.ndarray
    nodata: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple:
        return self.values.shape


# ---------------------------------------------------------------------------
# Container I/O (shared by band stacks, label planes, and class maps)
# ---------------------------------------------------------------------------


def _container_paths(path) -> tuple[str, str]:
    base, ext = os.path.splitext(os.fspath(path))
    if ext not in ("", ".bsj", ".bsd"):
        base = os.fspath(path)
    return base + ".bsj", base + ".bsd"


def write_planes(path, planes: np.ndarray, band_names, header_extra: dict,
                 dtype: str = "f32le") -> None:
    """Write a (n, height, width) array to the .bsj/.bsd container."""
    if dtype not in _DTYPES:
        raise ValidationError(f"unsupported container dtype {dtype!r}")
    header_path, payload_path = _container_paths(path)
    planes = np.ascontiguousarray(planes)
    header = {
        "width": int(planes.shape[2]),
        "height": int(planes.shape[1]),
        "band_names": list(band_names),
        "dtype": dtype,
    }
    header.update(header_extra)
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    planes.astype(_DTYPES[dtype]).tofile(payload_path)


def read_planes(path) -> tuple[np.ndarray, dict]:
    """Read a .bsj/.bsd container; returns (planes, header)."""
    header_path, payload_path = _container_paths(path)
    if not os.path.exists(header_path):
        raise FormatError(f"missing header file: {header_path}")
    if not os.path.exists(payload_path):
        raise FormatError(f"missing payload file: {payload_path}")
    try:
        with open(header_path, "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed header {header_path}: {exc}")
    for key in ("width", "height", "band_names", "dtype"):
        if key not in header:
            raise FormatError(f"header {header_path} missing field {key!r}")
    dtype = header["dtype"]
    if dtype not in _DTYPES:
        raise FormatError(f"unsupported container dtype {dtype!r} in {header_path}")
    width, height = int(header["width"]), int(header["height"])
    names = list(header["band_names"])
    if len(set(names)) != len(names):
        raise FormatError(f"duplicate band names in {header_path}: {names}")
    raw = np.fromfile(payload_path, dtype=_DTYPES[dtype])
    expected = width * height * len(names)
    if raw.size != expected:
        raise FormatError(
            f"payload size mismatch in {payload_path}: header declares "
            f"{expected} values ({len(names)} bands x {height}x{width}), "
            f"payload holds {raw.size}"
        )
    return raw.reshape(len(names), height, width), header


def save_band_stack(stack: BandStack, path) -> None:
    """Write a band stack to ``<path>.bsj`` + ``<path>.bsd``."""
    extra = {
        "pixel_size": stack.pixel_size,
        "origin": [stack.origin[0], stack.origin[1]],
        "crs": stack.crs,
        "nodata": stack.nodata,
    }
    write_planes(path, stack.bands, stack.band_names, extra, dtype="f32le")


def load_band_stack(path) -> BandStack:
    """Read a band stack written by :func:`save_band_stack`.

    Raises :class:`FormatError` for a missing file, a header/payload size
    mismatch, or duplicate band names; each is reported distinctly.
    """
    planes, header = read_planes(path)
    if header["dtype"] != "f32le":
        raise FormatError(
            f"band stack requires dtype f32le, header declares {header['dtype']!r}"
        )
    for key in ("pixel_size", "origin"):
        if key not in header:
            raise FormatError(f"band stack header missing field {key!r}")
    return BandStack(
        bands=planes,
        band_names=header["band_names"],
        pixel_size=header["pixel_size"],
        origin=tuple(header["origin"]),
        crs=header.get("crs", "unspecified"),
        nodata=header.get("nodata"),
    )


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def crop_resample(stack: BandStack, window, target_pixel_size: float) -> BandStack:
    """Crop a pixel window and resample it to a new pixel size.

    ``window`` is (row, col, height, width) in source pixel coordinates.
    Resampling is nearest-neighbor with the source grid anchored at the
    window corner, so downsampling by an integer factor k yields
    ``out[i, j] = in[k*i, k*j]``. The target size must be a positive
    integer multiple or divisor of the source pixel size.
    """
    row, col, height, width = check_window(stack, window)
    check_positive("target_pixel_size", target_pixel_size)
    ratio = float(target_pixel_size) / stack.pixel_size
    if not (
        math.isclose(ratio, round(ratio), rel_tol=1e-9)
        or math.isclose(1.0 / ratio, round(1.0 / ratio), rel_tol=1e-9)
    ):
        raise ValidationError(
            f"target_pixel_size {target_pixel_size} is neither a multiple nor a "
            f"divisor of the source pixel size {stack.pixel_size}"
        )
    out_h = math.ceil(height * stack.pixel_size / target_pixel_size)
    out_w = math.ceil(width * stack.pixel_size / target_pixel_size)
    src_r = row + np.minimum((np.arange(out_h) * ratio).astype(np.int64), height - 1)
    src_c = col + np.minimum((np.arange(out_w) * ratio).astype(np.int64), width - 1)
    planes = stack.bands[:, src_r[:, None], src_c[None, :]]
    origin = (
        stack.origin[0] + col * stack.pixel_size,
        stack.origin[1] - row * stack.pixel_size,
    )
    return BandStack(
        bands=planes,
        band_names=stack.band_names,
        pixel_size=float(target_pixel_size),
        origin=origin,
        crs=stack.crs,
        nodata=stack.nodata,
    )


def _stretch_band(band: np.ndarray, stretch) -> np.ndarray:
    lo_p, hi_p = float(stretch[0]), float(stretch[1])
    if not (0.0 <= lo_p < hi_p <= 100.0):
        raise ValidationError(f"stretch percentiles must satisfy 0 <= lo < hi <= 100, got {stretch}")
    lo = float(np.percentile(band, lo_p))
    hi = float(np.percentile(band, hi_p))
    if hi <= lo:
        # constant band: map to 0, any constant is equally uninformative
        return np.zeros(band.shape, dtype=np.uint8)
    scaled = (band.astype(np.float64) - lo) / (hi - lo) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def compose(stack: BandStack, band_indices, stretch=(2.0, 98.0)) -> RgbComposite:
    """Build an 8-bit RGB composition from three distinct bands.

    Each channel is the named band linearly stretched so the lower/upper
    percentile map to 0/255, clamped.
    """
    indices = check_band_indices(stack, band_indices, distinct=True)
    if len(indices) != 3:
        raise ValidationError(f"compose requires exactly 3 band indices, got {len(indices)}")
    channels = np.stack(
        [_stretch_band(stack.bands[i], stretch) for i in indices], axis=-1
    )
    return RgbComposite(channels=channels, source_bands=indices, stretch=stretch)


def ndvi(stack: BandStack, red_index: int, nir_index: int) -> NdviResult:
    """Normalized difference vegetation index, (NIR - Red) / (NIR + Red).

    Pixels where NIR + Red = 0 get value 0 and are flagged nodata.
    Bands must be non-negative.
    """
    red_i, nir_i = check_band_indices(stack, [red_index, nir_index], distinct=True)
    red = stack.bands[red_i].astype(np.float64)
    nir = stack.bands[nir_i].astype(np.float64)
    if (red < 0).any() or (nir < 0).any():
        raise ValidationError("ndvi requires non-negative red and NIR bands")
    denom = nir + red
    nodata = denom == 0
    values = np.zeros(denom.shape, dtype=np.float64)
    np.divide(nir - red, denom, out=values, where=~nodata)
    values[nodata] = 0.0
    values.flags.writeable = False
    nodata.flags.writeable = False
    return NdviResult(values=values, nodata=nodata)


# ---------------------------------------------------------------------------
# Rendering helpers
# ---------------------------------------------------------------------------


def composite_image(comp: RgbComposite) -> np.ndarray:
    """(height, width, 3) uint8 view of a composite."""
    return comp.channels


def ndvi_image(result: NdviResult) -> np.ndarray:
    """Grayscale 8-bit rendering of an NDVI plane, [-1, 1] -> [0, 255]."""
    gray = np.clip(np.rint((result.values.astype(np.float64) + 1.0) * 127.5), 0, 255)
    gray = gray.astype(np.uint8)
    gray[result.nodata] = 0
    return np.repeat(gray[:, :, None], 3, axis=2)


def stack_image(stack: BandStack) -> np.ndarray:
    """Render a 3-band stack (e.g. a component composite) as (H, W, 3) uint8."""
    if stack.n_bands != 3:
        raise ValidationError(f"stack_image requires a 3-band stack, got {stack.n_bands}")
    return np.clip(np.rint(np.moveaxis(stack.bands, 0, -1)), 0, 255).astype(np.uint8)


def save_png(image: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint8 array as PNG."""
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    Image.fromarray(arr, mode="RGB").save(os.fspath(path), format="PNG")


def save_mask_png(mask: np.ndarray, path) -> None:
    """Write a boolean plane as a black/white PNG mask."""
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(os.fspath(path), format="PNG")
