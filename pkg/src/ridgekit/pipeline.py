"""Image -> meta-base record: preprocessing, orientation, core, RFP and minutiae."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import RidgekitError
from .imaging import GrayImage, PreprocessResult, load_pgm, preprocess
from .minutiae import MinutiaeSet, extract_minutiae, remove_false
from .orientation import CorePoint, OrientationField, core_bit_code, estimate_orientation, find_core, smooth_orientation
from .rfpcode import DEFAULT_STRIDE, N_CODES, RidgeFlowPattern, extract_rfp
from .search import QueryTuple, compute_beta

THREADS_ENV = "RIDGEKIT_THREADS"


@dataclass
class EnrollOutcome:
    record: RidgeFlowPattern
    stages: PreprocessResult
    field: OrientationField
    core: CorePoint
    minutiae: MinutiaeSet

    def query(self) -> QueryTuple:
        return QueryTuple.from_record(self.record)


def enroll_image(img: GrayImage, image_id: str = "query", n: int = N_CODES,
                 stride: int = DEFAULT_STRIDE, block: int = 16) -> EnrollOutcome:
    stages = preprocess(img)
    field = smooth_orientation(estimate_orientation(stages.enhanced, block=block, roi=stages.roi))
    core = find_core(field)
    rfp = extract_rfp(stages.skeleton, field, core, n=n, stride=stride, image_id=image_id)
    minutiae = remove_false(extract_minutiae(stages.skeleton), stages.roi)
    record = RidgeFlowPattern(
        image_id,
        rfp.codes,
        None,
        len(minutiae.accepted),
        compute_beta(stages.skeleton, core, stages.roi),
        core_bit_code(core, img.width, img.height),
        pads=rfp.pads,
    )
    return EnrollOutcome(record, stages, field, core, minutiae)


def thread_count(workers: int | None = None) -> int:
    """Explicit value, else RIDGEKIT_THREADS, else the CPU count (0/unset = default)."""
    if workers:
        return max(1, workers)
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise RidgekitError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if value > 0:
            return value
    return os.cpu_count() or 1


def _enroll_one(item, n, stride):
    if isinstance(item, (str, Path)):
        image_id = Path(item).stem
        try:
            img = load_pgm(item)
        except (RidgekitError, OSError) as exc:
            return image_id, exc
    else:
        image_id, img = item
    try:
        return image_id, enroll_image(img, image_id, n=n, stride=stride)
    except (RidgekitError, ValueError) as exc:
        return image_id, exc


def enroll_many(images, n: int = N_CODES, stride: int = DEFAULT_STRIDE,
                workers: int | None = None) -> list[tuple[str, EnrollOutcome | Exception]]:
    """Enroll images concurrently; results keep input order."""
    images = list(images)
    if not images:
        return []
    with ThreadPoolExecutor(max_workers=thread_count(workers)) as pool:
        return list(pool.map(lambda item: _enroll_one(item, n, stride), images))
