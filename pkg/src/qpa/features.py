"""Image feature extraction and similarity scoring.

Two extractors produce fixed-length hash vectors: a blur+LBP block-hash
pipeline for textured multi-tone images (positionwise vectors, one hash
per grid block) and a quantize+sliding-window pipeline for flat low-depth
images (set vectors, the numerically smallest distinct window hashes).

Similarity is the fraction of shared hash values; both extractors are
deterministic for a given image and parameter set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, ExtractionError

GRAY_R, GRAY_G, GRAY_B = 0.299, 0.587, 0.114


@dataclass(frozen=True)
class ImagePayload:
    """One 8-bit query image, row-major with interleaved channels."""

    width: int
    height: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ContractError(f"channels must be 1 or 3, got {self.channels}")
        if self.data.dtype != np.uint8:
            raise ContractError(f"image data must be uint8, got {self.data.dtype}")
        if self.data.shape != (self.width * self.height * self.channels,):
            raise ContractError(
                f"data length {self.data.shape} != width*height*channels "
                f"({self.width}*{self.height}*{self.channels})"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImagePayload":
        """Build from an (H, W) or (H, W, C) uint8 array."""
        if arr.ndim == 2:
            h, w = arr.shape
            c = 1
        elif arr.ndim == 3:
            h, w, c = arr.shape
        else:
            raise ContractError(f"expected 2D or 3D array, got shape {arr.shape}")
        return cls(width=w, height=h, channels=c, data=np.ascontiguousarray(arr, dtype=np.uint8).ravel())

    def to_array(self) -> np.ndarray:
        if self.channels == 1:
            return self.data.reshape(self.height, self.width)
        return self.data.reshape(self.height, self.width, self.channels)


@dataclass(frozen=True)
class ExtractorParams:
    """Configuration shared by every vector that will be compared."""

    kind: str = "piha"  # "piha" | "blacklight"
    grid: int = 8
    blur_sigma: float = 1.0
    q_step: int = 50
    window: int = 20
    set_length: int = 50
    hash_seed: int = 0x9E3779B9

    def __post_init__(self):
        if self.kind not in ("piha", "blacklight"):
            raise ContractError(f"unknown extractor kind {self.kind!r}")
        if self.grid < 1 or self.window < 1 or self.q_step < 1 or self.set_length < 1:
            raise ContractError("extractor parameters must be positive")

    @property
    def length(self) -> int:
        return self.grid * self.grid if self.kind == "piha" else self.set_length

    @property
    def extractor_id(self) -> str:
        if self.kind == "piha":
            return f"piha-g{self.grid}-s{self.blur_sigma:g}-h{self.hash_seed:08x}"
        return (
            f"blacklight-q{self.q_step}-w{self.window}-l{self.set_length}"
            f"-h{self.hash_seed:08x}"
        )


@dataclass(frozen=True)
class FeatureVector:
    """Hash feature vector; positionwise vectors compare slot by slot,
    set vectors by sorted-set intersection."""

    hashes: np.ndarray  # int64 holding uint32 values
    extractor_id: str
    positionwise: bool
    length: int  # declared capacity; equals len(hashes) except degenerate set vectors

    def __len__(self) -> int:
        return self.hashes.shape[0]


def gaussian_kernel5(sigma: float) -> np.ndarray:
    """Normalized 5x5 Gaussian tap matrix."""
    k = np.empty((5, 5), dtype=np.float64)
    for dy in range(5):
        for dx in range(5):
            k[dy, dx] = math.exp(-((dy - 2) ** 2 + (dx - 2) ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def to_grayscale(image: ImagePayload) -> np.ndarray:
    """Float64 grayscale plane (ITU-R BT.601 weights for 3-channel input)."""
    arr = image.to_array().astype(np.float64)
    if image.channels == 1:
        return arr
    return GRAY_R * arr[:, :, 0] + GRAY_G * arr[:, :, 1] + GRAY_B * arr[:, :, 2]


def extract_piha_style(image: ImagePayload, params: ExtractorParams) -> FeatureVector:
    """Grayscale -> Gaussian blur -> 8-neighbor LBP -> per-block quantized
    histogram hash. Output has one uint32 hash per grid block, row-major."""
    g = params.grid
    if image.width < 3 * g or image.height < 3 * g:
        raise ExtractionError(
            f"image {image.width}x{image.height} too small for a {g}x{g} block grid"
        )
    gray = to_grayscale(image)
    blurred = kernels.gaussian_blur(gray, gaussian_kernel5(params.blur_sigma))
    codes = kernels.lbp_codes(blurred)
    hashes = kernels.block_histogram_hashes(codes, g, params.hash_seed)
    return FeatureVector(
        hashes=hashes.astype(np.int64),
        extractor_id=params.extractor_id,
        positionwise=True,
        length=g * g,
    )


def extract_blacklight_style(image: ImagePayload, params: ExtractorParams) -> FeatureVector:
    """Quantize intensities, hash every sliding byte window, keep the
    numerically smallest distinct hashes sorted ascending."""
    flat = image.data
    if flat.shape[0] < params.window:
        raise ExtractionError(
            f"flattened image ({flat.shape[0]} bytes) shorter than window {params.window}"
        )
    quantized = flat // np.uint8(params.q_step)
    all_hashes = kernels.fnv_window_hashes(quantized, params.window, params.hash_seed)
    distinct = np.unique(all_hashes.astype(np.int64))
    return FeatureVector(
        hashes=distinct[: params.set_length],
        extractor_id=params.extractor_id,
        positionwise=False,
        length=params.set_length,
    )


def extract(image: ImagePayload, params: ExtractorParams) -> FeatureVector:
    if params.kind == "piha":
        return extract_piha_style(image, params)
    return extract_blacklight_style(image, params)


def similarity(a: FeatureVector, b: FeatureVector) -> float:
    """Fraction of shared hash values, in [0, 1]. Symmetric.

    Positionwise vectors count matching slots; set vectors count the
    intersection of their (distinct, sorted) values.
    """
    if a.extractor_id != b.extractor_id:
        raise ContractError(
            f"cannot compare features from {a.extractor_id!r} and {b.extractor_id!r}"
        )
    if a.length != b.length or a.positionwise != b.positionwise:
        raise ContractError("feature vectors have mismatched shape")
    if a.positionwise:
        if len(a) != len(b):
            raise ContractError("positionwise vectors must have equal length")
        return float(np.count_nonzero(a.hashes == b.hashes)) / a.length
    common = np.intersect1d(a.hashes, b.hashes, assume_unique=True).shape[0]
    return float(common) / max(len(a), len(b), 1)
