"""Request/response bodies of the reconstruction service.

File-based stages exchange paths, not payloads: the service reads and
writes on its own filesystem, so responses carry the locations of produced
artifacts plus small summaries.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class ErrorBody(BaseModel):
    kind: Literal["invalid-input", "numerical-failure", "io"]
    message: str


class DepthRequest(BaseModel):
    scene_dir: str
    weights: str
    out_dir: str
    resolution: Literal["native", "2x"] = "native"
    views: Optional[int] = None  # neighbors per reference view
    config: Optional[str] = None  # path to a key=value config file
    threads: Optional[int] = None
    scale_mode: Optional[str] = None
    seed: Optional[int] = None


class DepthResponse(BaseModel):
    outputs: dict[int, str]
    scale_factors: dict[int, float]


class FuseRequest(BaseModel):
    lr_dir: str
    hr_dir: str
    out_dir: str
    threshold: Optional[float] = None
    config: Optional[str] = None


class FuseResponse(BaseModel):
    outputs: dict[int, str]


class StitchRequest(BaseModel):
    scene_dir: str
    depth_dir: str
    out_ply: str
    pass_percent: Optional[float] = None
    pixel_threshold: Optional[float] = None
    depth_threshold: Optional[float] = None
    min_consistent: Optional[int] = None
    stitch_resolution: Optional[Literal["native", "half"]] = None
    config: Optional[str] = None


class StitchResponse(BaseModel):
    ply: str
    num_points: int
    k: float
    pass_fraction: float
    flagged: bool


class EvalRequest(BaseModel):
    recon_ply: str
    gt_ply: str
    tau: float = Field(gt=0)
    max_dist: float = 20.0


class EvalResponse(BaseModel):
    accuracy: float
    completeness: float
    overall: float
    precision: float
    recall: float
    f1: float


class SynthRequest(BaseModel):
    out_dir: str
    spec_path: Optional[str] = None
    spec_text: Optional[str] = None  # alternative to spec_path


class SynthResponse(BaseModel):
    scene_dir: str
    views: int


class BenchRequest(BaseModel):
    config: Optional[str] = None
    width: Optional[int] = None
    height: Optional[int] = None
    views: Optional[int] = None


class BenchResponse(BaseModel):
    cascaded_elems: int
    non_cascaded_elems: int
    ratio: float
    cascaded_bytes: int
    non_cascaded_bytes: int
