"""Learning-rate schedules: linear scaling, warm-up, step decay, length interpolation."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
import yaml

from .errors import InvalidArgumentError

REFERENCE_LR = 0.1
REFERENCE_BATCH = 256
IMAGENET_1K_SIZE = 1.28e6
# warm-up default: five IN-1k epochs worth of images
DEFAULT_WARMUP_IMAGES = 5 * IMAGENET_1K_SIZE


def scaled_lr(minibatch: int, base: float = REFERENCE_LR, ref: int = REFERENCE_BATCH) -> float:
    """Linear scaling rule: ``base / ref * minibatch``."""
    if minibatch < 1:
        raise InvalidArgumentError(f"minibatch must be >= 1, got {minibatch}")
    return base / ref * minibatch


@dataclass
class ScheduleSpec:
    """A pretraining schedule measured in images processed.

    Without ``explicit_steps`` the rate is multiplied by ``decay_factor`` at
    ``n_decays`` equally spaced points, splitting training into
    ``n_decays + 1`` equal plateaus. With ``explicit_steps`` (segment lengths
    in epochs of ``epoch_size`` images) one decay happens at each segment
    boundary.
    """

    total_images: float
    minibatch: int
    base_lr: float = REFERENCE_LR
    ref_batch: int = REFERENCE_BATCH
    warmup_images: float = 0.0
    decay_factor: float = 0.5
    n_decays: int = 20
    explicit_steps: tuple[float, ...] | None = None
    epoch_size: float | None = None
    weight_decay: float = 1e-4
    name: str = ""

    def __post_init__(self):
        if not self.total_images > 0:
            raise InvalidArgumentError(f"total_images must be positive, got {self.total_images}")
        if not 0 < self.decay_factor <= 1:
            raise InvalidArgumentError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.explicit_steps is not None:
            self.explicit_steps = tuple(float(s) for s in self.explicit_steps)
            if not self.epoch_size or self.epoch_size <= 0:
                raise InvalidArgumentError("explicit_steps need a positive epoch_size")
            if sum(self.explicit_steps) > self.total_images / self.epoch_size + 1e-9:
                raise InvalidArgumentError("explicit_steps add up to more than the total epochs")
            self.n_decays = len(self.explicit_steps) - 1
        if self.n_decays < 0:
            raise InvalidArgumentError(f"n_decays must be >= 0, got {self.n_decays}")
        if self.warmup_images < 0:
            raise InvalidArgumentError("warmup_images must be >= 0")
        bounds = self.decay_points()
        first = bounds[0] if len(bounds) else self.total_images
        if self.warmup_images > first:
            raise InvalidArgumentError(
                f"warm-up ({self.warmup_images:g} images) runs past the first decay at {first:g} images"
            )

    @property
    def peak_lr(self) -> float:
        return scaled_lr(self.minibatch, self.base_lr, self.ref_batch)

    @property
    def total_epochs(self) -> float | None:
        return None if not self.epoch_size else self.total_images / self.epoch_size

    def decay_points(self) -> np.ndarray:
        """Images-processed counts at which each decay takes effect."""
        if self.explicit_steps is not None:
            return np.cumsum(self.explicit_steps)[:-1] * self.epoch_size
        k = np.arange(1, self.n_decays + 1)
        return k * self.total_images / (self.n_decays + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["peak_lr"] = self.peak_lr
        if d["explicit_steps"] is not None:
            d["explicit_steps"] = list(d["explicit_steps"])
        return d


def lr_at(images_seen: float, spec: ScheduleSpec) -> float:
    """Learning rate after ``images_seen`` images."""
    if not 0 <= images_seen <= spec.total_images:
        raise InvalidArgumentError(f"images_seen={images_seen} outside [0, {spec.total_images}]")
    peak = spec.peak_lr
    if images_seen < spec.warmup_images:
        return spec.base_lr + (peak - spec.base_lr) * images_seen / spec.warmup_images
    n_done = int(np.searchsorted(spec.decay_points(), images_seen, side="right"))
    return peak * spec.decay_factor**n_done


def plateaus(spec: ScheduleSpec) -> list[dict]:
    """Constant-rate segments after warm-up."""
    edges = np.concatenate([[spec.warmup_images], spec.decay_points(), [spec.total_images]])
    out = []
    for i in range(len(edges) - 1):
        start, end = float(edges[i]), float(edges[i + 1])
        out.append({"start_images": start, "end_images": end, "lr": spec.peak_lr * spec.decay_factor**i})
    return out


def interpolate_length(n_images: float, endpoints, log: bool = False) -> float:
    """Images-processed budget for a dataset of ``n_images``.

    ``endpoints`` holds two ``(dataset_size, images_processed)`` pairs.
    Interpolation is linear in dataset size (``log=True``: in log size).
    Sizes outside the endpoint range are clamped.
    """
    (n0, l0), (n1, l1) = sorted(endpoints)
    if n0 == n1:
        return float(l0)
    if n_images < n0 or n_images > n1:
        warnings.warn(f"dataset size {n_images:g} outside [{n0:g}, {n1:g}]; clamping", stacklevel=2)
        n_images = min(max(n_images, n0), n1)
    if log:
        w = (math.log(n_images) - math.log(n0)) / (math.log(n1) - math.log(n0))
    else:
        w = (n_images - n0) / (n1 - n0)
    return float(l0 + w * (l1 - l0))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def load_presets() -> dict:
    text = resources.files("wildset").joinpath("presets/schedules.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


_IN_PRESETS = {"in1k": "train-IN-1k", "in5k": "train-IN-5k", "in9k": "train-IN-9k"}


@dataclass
class PresetSchedule:
    spec: ScheduleSpec
    source: dict = field(default_factory=dict)


def preset_schedule(
    preset: str,
    minibatch: int,
    dataset_size: float | None = None,
    hashtags: str = "17k",
    warmup_images: float | None = None,
    log_interpolation: bool = False,
) -> PresetSchedule:
    """Build a :class:`ScheduleSpec` from a named preset.

    ``in1k``/``in5k``/``in9k`` use epoch-based step lists (``dataset_size``
    defaults to 1.28M for in1k and is required otherwise). ``ig`` interpolates
    the images-processed budget between the two dataset extremes of the
    ``hashtags`` vocabulary; decay count and factor come from the nearer
    extreme.
    """
    table = load_presets()
    pre = table["pretraining"]
    if preset in _IN_PRESETS:
        name = _IN_PRESETS[preset]
        row = pre[name]
        size = dataset_size or table["imagenet_sizes"].get(name)
        if not size:
            raise InvalidArgumentError(f"preset {preset!r} needs --dataset-size")
        warm = 5 * size if warmup_images is None else warmup_images
        spec = ScheduleSpec(
            total_images=row["epochs"] * size,
            minibatch=minibatch,
            base_lr=row["lr"],
            warmup_images=warm,
            decay_factor=row["lr_decay"],
            explicit_steps=tuple(row["steps"]),
            epoch_size=size,
            weight_decay=row["weight_decay"],
            name=name,
        )
        return PresetSchedule(spec, dict(row, name=name))
    if preset == "ig":
        try:
            lo_name, hi_name = table["ig_extremes"][hashtags]
        except KeyError:
            raise InvalidArgumentError(f"unknown hashtag set {hashtags!r}; choose from {sorted(table['ig_extremes'])}") from None
        lo, hi = pre[lo_name], pre[hi_name]
        size = lo["dataset_size"] if dataset_size is None else dataset_size
        total = interpolate_length(
            size, [(lo["dataset_size"], lo["images"]), (hi["dataset_size"], hi["images"])], log=log_interpolation
        )
        near = lo if abs(size - lo["dataset_size"]) <= abs(size - hi["dataset_size"]) else hi
        spec = ScheduleSpec(
            total_images=total,
            minibatch=minibatch,
            base_lr=near["lr"],
            warmup_images=DEFAULT_WARMUP_IMAGES if warmup_images is None else warmup_images,
            decay_factor=near["lr_decay"],
            n_decays=near["n_decays"],
            epoch_size=size,
            weight_decay=near["weight_decay"],
            name=f"train-IG-{hashtags}",
        )
        return PresetSchedule(spec, {"extremes": [lo_name, hi_name]})
    raise InvalidArgumentError(f"unknown preset {preset!r}; choose from in1k, in5k, in9k, ig")


def finetuning_presets(source: str | None = None, target: str | None = None) -> list[dict]:
    rows = load_presets()["finetuning"]
    return [r for r in rows if (source is None or r["source"] == source) and (target is None or r["target"] == target)]


def detection_lr(backbone: str, source: str) -> float:
    det = load_presets()["detection"]
    for row in det["initial_lr"]:
        if row["backbone"] == backbone and row["source"] == source:
            return float(row["lr"])
    raise InvalidArgumentError(f"no detection preset for backbone={backbone!r}, source={source!r}")
