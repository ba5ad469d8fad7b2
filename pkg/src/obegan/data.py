"""Data ingestion: labeled factor datasets, batch streams, toy renderer.

Images are normalized to [-1, 1]. 8-bit sources map through v/127.5 - 1;
binary {0, 1} masks (the published sprites archive stores these) are scaled to
{0, 255} first so they land exactly on {-1, +1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DSPRITES_IMAGE_COUNT = 737280
DSPRITES_SIDE = 64
DSPRITES_FACTOR_SIZES = (1, 3, 6, 40, 32, 32)


def normalize_pixels(raw: np.ndarray) -> np.ndarray:
    """Map a source image array to float32 in [-1, 1]."""
    if raw.dtype == np.uint8:
        arr = raw.astype(np.float32)
        if arr.max(initial=0.0) <= 1.0:
            arr = arr * 255.0
        return arr / 127.5 - 1.0
    return raw.astype(np.float32)


def denormalize_pixels(pixels: np.ndarray) -> np.ndarray:
    """Exact inverse of 8-bit normalization: back to uint8 0..255."""
    return np.clip(np.rint((pixels + 1.0) * 127.5), 0, 255).astype(np.uint8)


@dataclass
class ImageBatch:
    """A batch of normalized images with optional factor labels."""

    pixels: np.ndarray  # (B, C, n, n) float32 in [-1, 1]
    factors: np.ndarray | None = None  # (B, F) int64
    replacement: bool = False  # stratum smaller than batch -> sampled w/ replacement


class FactorDataset:
    """Images with per-image integer factor labels.

    Raw pixel storage keeps the source dtype (uint8 stays uint8); pixels are
    normalized on access.
    """

    def __init__(
        self,
        raw_images: np.ndarray,
        factors: np.ndarray | None,
        cardinalities: tuple[int, ...],
        name: str = "dataset",
    ):
        if raw_images.ndim == 3:
            raw_images = raw_images[:, None, :, :]
        if raw_images.ndim != 4:
            raise ValueError(f"images must be (N, C, n, n) or (N, n, n), got {raw_images.shape}")
        if factors is not None:
            factors = np.asarray(factors, dtype=np.int64)
            if factors.shape != (raw_images.shape[0], len(cardinalities)):
                raise ValueError(
                    f"factors must be ({raw_images.shape[0]}, {len(cardinalities)}), "
                    f"got {factors.shape}"
                )
        self.raw = raw_images
        self.factors = factors
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.name = name

    def __len__(self) -> int:
        return self.raw.shape[0]

    @property
    def side(self) -> int:
        return self.raw.shape[-1]

    @property
    def channels(self) -> int:
        return self.raw.shape[1]

    @property
    def labeled(self) -> bool:
        return self.factors is not None

    @property
    def num_factors(self) -> int:
        return len(self.cardinalities)

    def active_factors(self) -> list[int]:
        """Factors usable by metric protocols (cardinality >= 2)."""
        return [i for i, c in enumerate(self.cardinalities) if c >= 2]

    def pixels(self, indices) -> np.ndarray:
        return normalize_pixels(self.raw[np.asarray(indices)])

    def factor_rows(self, indices) -> np.ndarray:
        if self.factors is None:
            raise ValueError(f"dataset {self.name!r} has no factor labels")
        return self.factors[np.asarray(indices)]

    def stratum_indices(self, factor: int, value: int) -> np.ndarray:
        if self.factors is None:
            raise ValueError(f"dataset {self.name!r} has no factor labels")
        return np.nonzero(self.factors[:, factor] == value)[0]


@dataclass(frozen=True)
class ToyFactorSpec:
    """Procedural filled-square dataset: position x/y and scale factors."""

    side: int = 32
    pos_values: int = 8
    scale_values: int = 4
    margin: int = 1
    pos_step: int = 3
    scale_min: int = 4
    scale_step: int = 2

    def __post_init__(self):
        max_origin = self.margin + (self.pos_values - 1) * self.pos_step
        max_size = self.scale_min + (self.scale_values - 1) * self.scale_step
        if max_origin + max_size > self.side:
            raise ValueError("largest square does not fit inside the image")

    @property
    def cardinalities(self) -> tuple[int, int, int]:
        return (self.pos_values, self.pos_values, self.scale_values)


def toy_dataset(spec: ToyFactorSpec = ToyFactorSpec(), seed: int = 0) -> FactorDataset:
    """Render every factor combination once; deterministic, label-aligned."""
    del seed  # rendering is fully deterministic; kept for interface symmetry
    n = spec.side
    combos = []
    images = []
    for px in range(spec.pos_values):
        for py in range(spec.pos_values):
            for sc in range(spec.scale_values):
                x0 = spec.margin + px * spec.pos_step
                y0 = spec.margin + py * spec.pos_step
                size = spec.scale_min + sc * spec.scale_step
                img = np.full((n, n), -1.0, dtype=np.float32)
                img[y0 : y0 + size, x0 : x0 + size] = 1.0
                images.append(img)
                combos.append((px, py, sc))
    raw = np.stack(images)[:, None, :, :]
    factors = np.asarray(combos, dtype=np.int64)
    return FactorDataset(raw, factors, spec.cardinalities, name="toy_squares")


def load_dsprites(path: str | Path) -> FactorDataset:
    """Load the published sprites archive and validate it against itself.

    Checks the canonical shapes, re-derives the latent-to-index stride
    arithmetic from the metadata factor sizes, and cross-checks it on 100
    random records before returning.
    """
    path = Path(path)
    archive = np.load(path, allow_pickle=True, encoding="latin1")
    if "imgs" not in archive or "latents_classes" not in archive:
        raise ValueError(
            f"{path} is missing 'imgs'/'latents_classes'; expected the published "
            f"archive with imgs {(DSPRITES_IMAGE_COUNT, DSPRITES_SIDE, DSPRITES_SIDE)} "
            f"and latents_classes {(DSPRITES_IMAGE_COUNT, len(DSPRITES_FACTOR_SIZES))}"
        )
    imgs = archive["imgs"]
    classes = archive["latents_classes"]
    expected_imgs = (DSPRITES_IMAGE_COUNT, DSPRITES_SIDE, DSPRITES_SIDE)
    expected_classes = (DSPRITES_IMAGE_COUNT, len(DSPRITES_FACTOR_SIZES))
    if imgs.shape != expected_imgs or classes.shape != expected_classes:
        raise ValueError(
            f"unexpected array shapes in {path}: imgs {imgs.shape} (expected "
            f"{expected_imgs}), latents_classes {classes.shape} (expected {expected_classes})"
        )
    if "metadata" in archive:
        meta = archive["metadata"][()]
        sizes = tuple(int(s) for s in meta[b"latents_sizes"])
        if sizes != DSPRITES_FACTOR_SIZES:
            raise ValueError(
                f"metadata factor sizes {sizes} differ from expected {DSPRITES_FACTOR_SIZES}"
            )
    # stride arithmetic: index == dot(classes, strides) for row-major factors
    sizes_arr = np.asarray(DSPRITES_FACTOR_SIZES)
    strides = np.concatenate([np.cumprod(sizes_arr[::-1])[::-1][1:], [1]])
    rng = np.random.default_rng(0)
    probe = rng.integers(0, DSPRITES_IMAGE_COUNT, size=100)
    derived = classes[probe] @ strides
    if not np.array_equal(derived, probe):
        raise ValueError("latent-to-index stride arithmetic failed the cross-check")
    return FactorDataset(imgs, classes, DSPRITES_FACTOR_SIZES, name="dsprites")


def load_celeba_dir(path: str | Path, side: int = 128) -> FactorDataset:
    """Unlabeled faces from a directory of image files (center-crop + resize)."""
    from PIL import Image

    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not files:
        raise ValueError(f"no image files found in {path}")
    images = []
    for f in files:
        with Image.open(f) as im:
            im = im.convert("RGB")
            w, h = im.size
            s = min(w, h)
            im = im.crop(((w - s) // 2, (h - s) // 2, (w + s) // 2, (h + s) // 2))
            im = im.resize((side, side), Image.BILINEAR)
            images.append(np.asarray(im, dtype=np.uint8).transpose(2, 0, 1))
    return FactorDataset(np.stack(images), None, (), name="celeba_dir")


def _batch_indices(n: int, batch: int, seed: int, cyclic: bool, skip: int = 0):
    """Deterministic index batches; cyclic mode reshuffles per epoch and
    carries remainders across epoch boundaries so batches stay full-size."""
    if not cyclic:
        if batch > n:
            raise ValueError(f"batch {batch} exceeds dataset size {n} (cyclic off)")
        perm = np.random.default_rng([seed, 0]).permutation(n)
        for start in range(0, n, batch):
            yield perm[start : start + batch]
        return
    epoch = 0
    buffer = np.empty(0, dtype=np.int64)
    emitted = 0
    while True:
        while len(buffer) < batch:
            perm = np.random.default_rng([seed, epoch]).permutation(n)
            buffer = np.concatenate([buffer, perm])
            epoch += 1
        out, buffer = buffer[:batch], buffer[batch:]
        emitted += 1
        if emitted > skip:
            yield out


def batches(data: FactorDataset, batch: int, seed: int, cyclic: bool = False):
    """Stream of ImageBatch; shuffled per epoch under the seed."""
    for idx in _batch_indices(len(data), batch, seed, cyclic):
        yield ImageBatch(
            pixels=data.pixels(idx),
            factors=data.factor_rows(idx) if data.labeled else None,
        )


def fixed_factor_batch(
    data: FactorDataset, factor: int, value: int, batch: int, seed: int | np.random.Generator
) -> ImageBatch:
    """A batch whose records all share factors[factor] == value.

    Strata smaller than the batch are sampled with replacement and the batch
    is flagged accordingly.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    stratum = data.stratum_indices(factor, value)
    if len(stratum) == 0:
        raise ValueError(f"no records with factor {factor} == {value}")
    replacement = len(stratum) < batch
    chosen = rng.choice(stratum, size=batch, replace=replacement)
    return ImageBatch(
        pixels=data.pixels(chosen),
        factors=data.factor_rows(chosen),
        replacement=replacement,
    )
