"""The worker body: detect words on a page, crop, recognize."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..det_post import Detector, HeuristicWordDetector, PostprocessConfig, postprocess
from ..errors import ImageUnreadable, OcrkError
from ..preprocess import DEFAULT as DEFAULT_PREPROCESS
from ..preprocess import PreprocessConfig, crop_box, detection_scale, read_pgm, resize_for_detection
from ..types import GrayImage
from .jobs import JobResult, WordResult


@dataclass
class Pipeline:
    recognizer: object
    detector: Detector = field(default_factory=HeuristicWordDetector)
    post: PostprocessConfig = field(default_factory=PostprocessConfig)
    preprocess: PreprocessConfig = DEFAULT_PREPROCESS

    def run(self, img: GrayImage, job_id: str = "") -> JobResult:
        start = time.perf_counter()
        scale = detection_scale(img, self.preprocess)
        small = resize_for_detection(img, self.preprocess)
        found = postprocess(self.detector.detect(small), self.post)
        boxes = [(sb.box.scaled(1 / scale, 1 / scale), sb.score) for sb in found]
        boxes.sort(key=lambda b: (b[0].y_min, b[0].x_min))
        detected = time.perf_counter()
        words = [WordResult(box, self.recognizer.recognize(crop_box(img, box, self.preprocess.crop_margin)), score)
                 for box, score in boxes]
        finished = time.perf_counter()
        return JobResult(job_id, "done", words, (detected - start) * 1e3, (finished - detected) * 1e3)

    def process_image(self, img_path, job_id: str = "") -> JobResult:
        try:
            img = read_pgm(img_path)
            img.require_nonempty()
        except (ImageUnreadable, OcrkError) as exc:
            return JobResult(job_id, "failed", error=str(exc))
        return self.run(img, job_id)

    def __call__(self, job) -> JobResult:
        return self.process_image(job.image_path, job.job_id)


def process_image(pipeline: Pipeline, img_path) -> JobResult:
    return pipeline.process_image(img_path)
