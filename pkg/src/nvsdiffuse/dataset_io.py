"""Data model and on-disk formats for camera sequences, clouds and renders.

Directory layout of a dataset root::

    views/view_%02d/frame_%05d.png     input frames
    views/view_%02d/cameras.json       per-frame poses of that view
    clouds/cloud_%05d.ply              sparse colored points per timestep
    path/cameras.json                  virtual camera path
    config.json                        solver parameters (optional)
    gt/frame_%05d.png, gt/depth_%05d.pfm   ground truth for the path (optional)

Render outputs go to ``frame_%05d.png``, ``depth_%05d.pfm`` and ``metrics.csv``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BadHeader,
    DatasetError,
    IoFailure,
    MissingFile,
    PoseCountMismatch,
    ResolutionMismatch,
)
from .geometry import CameraPose

logger = logging.getLogger(__name__)

ABLATION_TOGGLES = ("no_temporal", "no_pc_weights", "no_depth_weights", "no_image_grads", "no_proj_weights")


# ---------------------------------------------------------------------------
# data model


@dataclass
class TimestepPointCloud:
    time_index: int
    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) != len(self.colors):
            raise ValueError("positions and colors differ in length")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("point coordinates must be finite")
        if np.any(self.colors < 0) or np.any(self.colors > 1) or not np.all(np.isfinite(self.colors)):
            raise ValueError("point colors must lie in [0, 1]")

    def __len__(self):
        return len(self.positions)


@dataclass
class FrameSet:
    """``S`` synchronized views with ``T`` frames and poses each."""

    images: list[list[np.ndarray]]
    poses: list[list[CameraPose]]

    def __post_init__(self):
        if len(self.images) < 2:
            raise DatasetError(f"need at least 2 views, got {len(self.images)}")
        if len(self.poses) != len(self.images):
            raise PoseCountMismatch(f"{len(self.images)} image streams but {len(self.poses)} pose streams")
        shape = None
        for s, (frames, poses) in enumerate(zip(self.images, self.poses)):
            if len(frames) < 1:
                raise DatasetError(f"view {s} has no frames")
            if len(frames) != len(poses):
                raise PoseCountMismatch(f"view {s}: {len(frames)} frames but {len(poses)} poses")
            for img in frames:
                if shape is None:
                    shape = img.shape
                elif img.shape != shape:
                    raise ResolutionMismatch(f"view {s}: frame shape {img.shape} differs from {shape}")
        lengths = {len(f) for f in self.images}
        if len(lengths) != 1:
            raise PoseCountMismatch(f"views have different frame counts {sorted(lengths)}")

    @property
    def S(self) -> int:
        return len(self.images)

    @property
    def T(self) -> int:
        return len(self.images[0])

    @property
    def height(self) -> int:
        return self.images[0][0].shape[0]

    @property
    def width(self) -> int:
        return self.images[0][0].shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height


@dataclass
class CameraPath:
    poses: list[CameraPose]

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, t):
        return self.poses[t]

    def __iter__(self):
        return iter(self.poses)


@dataclass
class SolverParams:
    """Weights and schedule of the diffusion solve.

    ``ranking_sigma`` is the bandwidth of the view-ranking score and is kept
    separate from the color-agreement ``sigma``. ``ablations`` holds any subset
    of :data:`ABLATION_TOGGLES`.
    """

    lambda_pc: float = 1.0
    lambda_t: float = 0.05
    lambda_p: float = 10.0
    lambda_g: float = 10.0
    sigma: float = 0.075
    n_views: int = 4
    pyramid_levels: int = 4
    outer_iters: int = 3
    inner_iters: int = 500
    cg_tolerance: float = 1e-10
    preconditioner: str = "lu"
    kappa: int = 20
    smoothing_window_sigma: float = 1.5
    data_weight: float = 1.0
    ranking_sigma: float = 0.075
    eps_g: float = 1e-3
    eps_w: float = 1e-6
    ablations: tuple[str, ...] = ()

    def __post_init__(self):
        self.ablations = tuple(self.ablations)
        for name in ("lambda_pc", "lambda_t", "lambda_p", "lambda_g", "data_weight"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("sigma", "ranking_sigma", "cg_tolerance", "smoothing_window_sigma", "eps_g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.n_views < 1 or self.pyramid_levels < 1 or self.inner_iters < 1 or self.kappa < 1:
            raise ValueError("n_views, pyramid_levels, inner_iters and kappa must be >= 1")
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be >= 0")
        if self.preconditioner not in ("lu", "ilu", "jacobi"):
            raise ValueError("preconditioner must be 'lu', 'ilu' or 'jacobi'")
        unknown = set(self.ablations) - set(ABLATION_TOGGLES)
        if unknown:
            raise ValueError(f"unknown ablation toggles {sorted(unknown)}")

    def replace(self, **changes) -> "SolverParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ablations"] = list(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown solver parameters {sorted(unknown)}")
        return cls(**d)


@dataclass
class RenderedFrame:
    time_index: int
    color: np.ndarray
    depth: np.ndarray
    coverage: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# PFM / PNG / PLY


def save_depth(path, depth: np.ndarray) -> None:
    """Write a single-channel little-endian PFM (scale -1.0)."""
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError("depth must be a 2-D grid")
    if not np.all(np.isfinite(depth)):
        raise ValueError("depth grid contains non-finite values")
    h, w = depth.shape
    data = np.flipud(depth).astype("<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
            fh.write(data.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_depth(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError as exc:
        raise MissingFile("missing depth map", path) from exc
    m = re.match(rb"(P[fF])\s+(\d+)\s+(\d+)\s+(\S+)\s", raw)
    if m is None:
        raise BadHeader("not a PFM file", path)
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError as exc:
        raise BadHeader("bad PFM scale", path) from exc
    dtype = "<f4" if scale < 0 else ">f4"
    body = raw[m.end():]
    n = w * h * channels
    if w == 0 or h == 0 or len(body) < 4 * n:
        raise BadHeader(f"PFM body holds {len(body)} bytes, expected {4 * n}", path)
    data = np.frombuffer(body[: 4 * n], dtype=dtype).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def save_image(path, img: np.ndarray) -> None:
    """Store a [0, 1] float image as 8-bit PNG (or PPM by extension)."""
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        Image.fromarray(q).save(path)
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except FileNotFoundError as exc:
        raise MissingFile("missing image", path) from exc
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise BadHeader(f"unreadable image ({exc})", path) from exc
    return arr


def save_ply(path, cloud: TimestepPointCloud) -> None:
    """Binary little-endian PLY with double x, y, z and uchar red, green, blue."""
    n = len(cloud)
    rec = np.empty(n, dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("r", "u1"), ("g", "u1"), ("b", "u1")])
    rec["x"], rec["y"], rec["z"] = cloud.positions.T
    rgb = np.round(np.clip(cloud.colors, 0, 1) * 255).astype(np.uint8)
    rec["r"], rec["g"], rec["b"] = rgb.T
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"comment time_index {cloud.time_index}\n"
        f"element vertex {n}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(rec.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}  # fmt: skip


def load_ply(path, time_index: int = 0) -> TimestepPointCloud:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError as exc:
        raise MissingFile("missing point cloud", path) from exc
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise BadHeader("not a PLY file", path)
    try:
        lines = raw[:end].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise BadHeader("PLY header is not ASCII", path) from exc
    fmt = None
    count = None
    props = []
    in_vertex = False
    try:
        for line in lines[1:]:
            tok = line.split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    count = int(tok[2])
                elif count is None:
                    raise BadHeader("vertex element must come first", path)
            elif tok[0] == "property" and in_vertex:
                if tok[1] == "list":
                    raise BadHeader("list properties on vertices are not supported", path)
                props.append((tok[2], _PLY_TYPES[tok[1]]))
    except (IndexError, KeyError, ValueError) as exc:
        raise BadHeader(f"malformed PLY header ({exc})", path) from exc
    if fmt not in ("binary_little_endian", "ascii") or count is None or count < 0:
        raise BadHeader("expected a vertex element in binary_little_endian or ascii format", path)
    names = [p[0] for p in props]
    needed = ("x", "y", "z", "red", "green", "blue")
    if any(n not in names for n in needed):
        raise BadHeader(f"vertex properties {names} lack one of {needed}", path)
    body = raw[end + len(b"end_header\n"):]
    if fmt == "ascii":
        try:
            rows = np.loadtxt(body.decode("ascii").splitlines(), ndmin=2) if count else np.zeros((0, len(props)))
        except (ValueError, UnicodeDecodeError) as exc:
            raise BadHeader(f"malformed PLY body ({exc})", path) from exc
        if rows.shape != (count, len(props)):
            raise BadHeader("PLY body does not match vertex count", path)
        cols = {n: rows[:, i] for i, n in enumerate(names)}
    else:
        dt = np.dtype([(n, "<" + t) for n, t in props])
        if len(body) < dt.itemsize * count:
            raise BadHeader(f"PLY body truncated: {len(body)} bytes for {count} vertices", path)
        rec = np.frombuffer(body[: dt.itemsize * count], dtype=dt)
        cols = {n: rec[n] for n in names}
    pos = np.column_stack([cols["x"], cols["y"], cols["z"]]).astype(np.float64)
    rgb = np.column_stack([cols["red"], cols["green"], cols["blue"]]).astype(np.float64)
    if not np.issubdtype(np.dtype(dict(props)["red"]), np.floating):
        rgb = rgb / 255.0
    try:
        return TimestepPointCloud(time_index, pos, rgb)
    except ValueError as exc:
        raise BadHeader(str(exc), path) from exc


# ---------------------------------------------------------------------------
# cameras and config


def poses_to_json(poses, path) -> None:
    frames = [
        {
            "t": int(p.time_index),
            "K": p.K.ravel().tolist(),
            "R": p.R.ravel().tolist(),
            "C": p.C.tolist(),
        }
        for p in poses
    ]
    try:
        Path(path).write_text(json.dumps({"frames": frames}, indent=1))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_poses(path, view_index: int = -1) -> list[CameraPose]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise MissingFile("missing camera file", path) from exc
    except (ValueError, UnicodeDecodeError) as exc:
        raise BadHeader(f"invalid JSON ({exc})", path) from exc
    frames = doc.get("frames") if isinstance(doc, dict) else doc
    if not isinstance(frames, list):
        raise BadHeader("expected a 'frames' list", path)
    poses = []
    for i, fr in enumerate(frames):
        try:
            K = np.array(fr["K"], dtype=np.float64)
            R = np.array(fr["R"], dtype=np.float64)
            C = np.array(fr["C"], dtype=np.float64)
            if K.size != 9 or R.size != 9 or C.size != 3:
                raise ValueError("K and R need 9 entries, C needs 3")
            poses.append(CameraPose(K, R, C, time_index=int(fr.get("t", i)), view_index=view_index))
        except (KeyError, TypeError, ValueError) as exc:
            raise BadHeader(f"frame entry {i}: {exc}", path) from exc
    return poses


def load_camera_path(path) -> CameraPath:
    return CameraPath(load_poses(path, view_index=-1))


def save_camera_path(path, cam_path: CameraPath) -> None:
    poses_to_json(cam_path.poses, path)


def load_params(path) -> SolverParams:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        return SolverParams.from_dict(doc)
    except FileNotFoundError as exc:
        raise MissingFile("missing config", path) from exc
    except (ValueError, TypeError, UnicodeDecodeError) as exc:
        raise BadHeader(f"invalid solver config ({exc})", path) from exc


def save_params(path, params: SolverParams) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=1))


# ---------------------------------------------------------------------------
# dataset directories


def _view_dirs(root: Path) -> list[Path]:
    vdir = root / "views"
    if not vdir.is_dir():
        raise MissingFile("missing views directory", vdir)
    dirs = sorted(p for p in vdir.iterdir() if p.is_dir() and re.fullmatch(r"view_\d{2}", p.name))
    expected = [vdir / f"view_{s:02d}" for s in range(len(dirs))]
    if dirs != expected:
        raise MissingFile("view directories must be numbered view_00, view_01, ... without gaps", vdir)
    return dirs


def load_dataset(root) -> tuple[FrameSet, list[TimestepPointCloud]]:
    """Read and validate a dataset directory.

    Raises:
        MissingFile: a required file or directory is absent.
        BadHeader: a file cannot be parsed.
        ResolutionMismatch: frames differ in size.
        PoseCountMismatch: a view's pose count differs from its frame count.
    """
    root = Path(root)
    images, poses = [], []
    for s, vdir in enumerate(_view_dirs(root)):
        cams_file = vdir / "cameras.json"
        frame_files = sorted(vdir.glob("frame_*.png"))
        if not cams_file.exists():
            raise PoseCountMismatch(f"view {s} has {len(frame_files)} frames but no cameras.json", cams_file)
        view_poses = load_poses(cams_file, view_index=s)
        if len(view_poses) != len(frame_files):
            raise PoseCountMismatch(
                f"view {s}: {len(frame_files)} frames but {len(view_poses)} poses", cams_file
            )
        frames = []
        for t in range(len(frame_files)):
            f = vdir / f"frame_{t:05d}.png"
            img = load_image(f)
            if frames and img.shape != frames[0].shape:
                raise ResolutionMismatch(f"shape {img.shape} differs from {frames[0].shape}", f)
            if images and img.shape != images[0][0].shape:
                raise ResolutionMismatch(f"shape {img.shape} differs from view 0 {images[0][0].shape}", f)
            frames.append(img)
        images.append(frames)
        poses.append(view_poses)
    if len(images) < 2:
        raise DatasetError(f"need at least 2 views, found {len(images)}", root / "views")
    try:
        frameset = FrameSet(images, poses)
    except DatasetError as exc:
        raise type(exc)(str(exc), root) from exc
    clouds = [load_ply(root / "clouds" / f"cloud_{t:05d}.ply", time_index=t) for t in range(frameset.T)]
    return frameset, clouds


def save_dataset(
    root,
    frameset: FrameSet,
    clouds: list[TimestepPointCloud],
    path: CameraPath | None = None,
    params: SolverParams | None = None,
) -> None:
    root = Path(root)
    for s in range(frameset.S):
        vdir = root / "views" / f"view_{s:02d}"
        vdir.mkdir(parents=True, exist_ok=True)
        for t, img in enumerate(frameset.images[s]):
            save_image(vdir / f"frame_{t:05d}.png", img)
        poses_to_json(frameset.poses[s], vdir / "cameras.json")
    (root / "clouds").mkdir(parents=True, exist_ok=True)
    for cloud in clouds:
        save_ply(root / "clouds" / f"cloud_{cloud.time_index:05d}.ply", cloud)
    if path is not None:
        (root / "path").mkdir(parents=True, exist_ok=True)
        save_camera_path(root / "path" / "cameras.json", path)
    if params is not None:
        save_params(root / "config.json", params)


def save_frame(frame: RenderedFrame, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_image(out_dir / f"frame_{frame.time_index:05d}.png", frame.color)
    save_depth(out_dir / f"depth_{frame.time_index:05d}.pfm", frame.depth)
    if frame.coverage is not None:
        save_image(out_dir / f"coverage_{frame.time_index:05d}.png", frame.coverage.astype(np.float64))


def load_frames(directory) -> list[RenderedFrame]:
    """Load ``frame_%05d.png`` / ``depth_%05d.pfm`` pairs (and coverage masks if present)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFile("missing frame directory", directory)
    frames = []
    for f in sorted(directory.glob("frame_*.png")):
        t = int(f.stem.split("_")[1])
        cov_file = directory / f"coverage_{t:05d}.png"
        coverage = load_image(cov_file)[..., 0] > 0.5 if cov_file.exists() else None
        frames.append(RenderedFrame(t, load_image(f), load_depth(directory / f"depth_{t:05d}.pfm"), coverage))
    return frames


def load_ground_truth(root) -> list[RenderedFrame] | None:
    gt = Path(root) / "gt"
    return load_frames(gt) if gt.is_dir() else None

