"""On-disk formats.

All integers are little-endian and all reals 32-bit little-endian floats.

Dataset split (``.dgpb``)::

    b"DGPB" | u16 version | u32 record count | records...
    record  = u32 payload length | payload
    payload = u32 n | u32 m | u32 kfa_k
              f32 fx, fy, cx, cy | u32 width, height
              f32 sigma, outlier_rate, sphere_radius
              f32[9] rotation (row-major) | f32[3] translation
              u32[n] keypoint vertex indices | f32[n*3] keypoint points
              f32[n*m*6] per hypothesis (u, v, r, g, b, depth; NaN = invalid)
              u8[n*m] ground-truth outlier flags
              f32[n*m*kfa_k] KFA inputs

Model weights (``.dgpw``)::

    b"DGPW" | u16 version | u32 n_keypoints | u32 k | u8 dynamic
    u8 bandwidth mode (0 gaussian, 1 uniform) | f32 fallback depth
    u32 edge-conv layer count | u32 tensor count | tensors...
    tensor = u16 name length | name (utf-8) | u32 rank | u32[rank] dims | f32[...] row-major

Depth raster (``.dgpd``)::

    b"DGPD" | u32 width | u32 height | f32[height*width] row-major (NaN = invalid)
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .depth import DepthMap
from .errors import IoError, ParseError, ValidationError
from .geometry import CameraIntrinsics, Pose
from .keypoints import KeypointSet
from .metrics import MeshModel

DATASET_MAGIC = b"DGPB"
WEIGHTS_MAGIC = b"DGPW"
DEPTH_MAGIC = b"DGPD"
DATASET_VERSION = 1
WEIGHTS_VERSION = 1

_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")
_BANDWIDTH_CODES = {"gaussian": 0, "uniform": 1}


def orthonormalize(R) -> np.ndarray:
    """Nearest rotation (polar factor) to a nearly orthonormal matrix."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def _open_read(path) -> bytes:
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _write(path, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.buf = memoryview(data)
        self.pos = 0
        self.what = what

    def take(self, nbytes: int) -> memoryview:
        if self.pos + nbytes > len(self.buf):
            raise ParseError(f"truncated {self.what} at byte {self.pos}")
        out = self.buf[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).copy()


# ---------------------------------------------------------------- datasets

def _encode_sample(sample) -> bytes:
    c = sample.correspondences
    n, m = c.n, c.m
    kfa_k = 0 if c.kfa is None else c.kfa.shape[-1]
    intr = c.intrinsics
    out = io.BytesIO()
    out.write(struct.pack("<3I", n, m, kfa_k))
    out.write(struct.pack("<4f2I", intr.focal_x, intr.focal_y, intr.principal_x, intr.principal_y,
                          int(intr.width), int(intr.height)))
    out.write(struct.pack("<3f", sample.sigma, sample.outlier_rate, sample.sphere_radius))
    pose = np.concatenate([sample.gt_pose.rotation.ravel(), sample.gt_pose.translation])
    out.write(pose.astype(_F32).tobytes())
    out.write(c.keypoints.indices.astype(_U32).tobytes())
    out.write(c.keypoints.points.astype(_F32).tobytes())
    hyp = np.concatenate([c.pixels, c.rgb, c.depth[..., None]], axis=-1)
    out.write(hyp.astype(_F32).tobytes())
    out.write(c.is_outlier.astype(np.uint8).tobytes())
    if kfa_k:
        out.write(c.kfa.astype(_F32).tobytes())
    return out.getvalue()


def encode_dataset(samples) -> bytes:
    out = io.BytesIO()
    out.write(DATASET_MAGIC)
    out.write(struct.pack("<HI", DATASET_VERSION, len(samples)))
    for s in samples:
        payload = _encode_sample(s)
        out.write(struct.pack("<I", len(payload)))
        out.write(payload)
    return out.getvalue()


def save_dataset(path, samples) -> None:
    _write(path, encode_dataset(samples))


def decode_dataset(data: bytes, mesh: MeshModel | None = None) -> list:
    from .synth import CorrespondenceSet, SyntheticSample

    r = _Reader(data, "dataset")
    if bytes(r.take(4)) != DATASET_MAGIC:
        raise ParseError("not a DGPB dataset (bad magic)")
    version, count = r.unpack("<HI")
    if version != DATASET_VERSION:
        raise ParseError(f"unsupported dataset version {version}")
    samples = []
    for rec in range(count):
        (length,) = r.unpack("<I")
        start = r.pos
        n, m, kfa_k = r.unpack("<3I")
        fx, fy, cx, cy, w, h = r.unpack("<4f2I")
        sigma, rate, radius = r.unpack("<3f")
        pose = r.array(_F32, 12).astype(np.float64)
        idx = r.array(_U32, n).astype(np.int64)
        pts = r.array(_F32, n * 3).astype(np.float64).reshape(n, 3)
        hyp = r.array(_F32, n * m * 6).astype(np.float64).reshape(n, m, 6)
        flags = r.array(np.uint8, n * m).astype(bool).reshape(n, m)
        kfa = r.array(_F32, n * m * kfa_k).astype(np.float64).reshape(n, m, kfa_k) if kfa_k else None
        if r.pos - start != length:
            raise ParseError(f"record {rec} length mismatch ({r.pos - start} != {length})")
        intr = CameraIntrinsics(fx, fy, cx, cy, w, h)
        corrs = CorrespondenceSet(KeypointSet(idx, pts), hyp[..., 0:2], hyp[..., 2:5], hyp[..., 5], intr, flags, kfa)
        gt = Pose(orthonormalize(pose[:9].reshape(3, 3)), pose[9:])
        model = mesh if mesh is not None else MeshModel(pts)
        samples.append(SyntheticSample(corrs, gt, model, float(radius), float(sigma), float(rate)))
    if r.pos != len(r.buf):
        raise ParseError("trailing bytes after last dataset record")
    return samples


def load_dataset(path, mesh: MeshModel | None = None) -> list:
    return decode_dataset(_open_read(path), mesh)


# ---------------------------------------------------------------- weights

def encode_weights(model) -> bytes:
    out = io.BytesIO()
    out.write(WEIGHTS_MAGIC)
    out.write(struct.pack("<H", WEIGHTS_VERSION))
    out.write(struct.pack("<IIBBf", model.n_keypoints, model.k, int(model.dynamic),
                          _BANDWIDTH_CODES[model.bandwidth_mode], model.fallback_depth))
    tensors = dict(model.parameters())
    tensors["input_shift"] = model.input_shift
    tensors["input_scale"] = model.input_scale
    out.write(struct.pack("<II", len(model.layers), len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<I", arr.ndim))
        out.write(np.asarray(arr.shape, dtype=_U32).tobytes())
        out.write(np.ascontiguousarray(arr, dtype=_F32).tobytes())
    return out.getvalue()


def save_weights(path, model) -> None:
    _write(path, encode_weights(model))


def decode_weights(data: bytes):
    from .dgpnp import DgPnpModel, EdgeConvLayer

    r = _Reader(data, "weights")
    if bytes(r.take(4)) != WEIGHTS_MAGIC:
        raise ParseError("not a DGPW weight file (bad magic)")
    (version,) = r.unpack("<H")
    if version != WEIGHTS_VERSION:
        raise ParseError(f"unsupported weights version {version}")
    n_kp, k, dynamic, bw, fallback = r.unpack("<IIBBf")
    n_layers, n_tensors = r.unpack("<II")
    tensors = {}
    for _ in range(n_tensors):
        (nlen,) = r.unpack("<H")
        name = bytes(r.take(nlen)).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = tuple(int(d) for d in r.array(_U32, rank))
        tensors[name] = r.array(_F32, int(np.prod(dims))).astype(np.float64).reshape(dims)
    if r.pos != len(r.buf):
        raise ParseError("trailing bytes after last tensor")
    modes = {v: key for key, v in _BANDWIDTH_CODES.items()}
    try:
        layers = [EdgeConvLayer(tensors[f"layer{i}.alpha"], tensors[f"layer{i}.beta"]) for i in range(n_layers)]
        kfa = {key: tensors[key] for key in ("kfa_w1", "kfa_b1", "kfa_w2", "kfa_b2") if key in tensors}
        model = DgPnpModel(
            layers=layers,
            head_w1=tensors["head_w1"],
            head_b1=tensors["head_b1"],
            head_w2=tensors["head_w2"],
            head_b2=tensors["head_b2"],
            n_keypoints=n_kp,
            k=k,
            dynamic=bool(dynamic),
            bandwidth_mode=modes[bw],
            fallback_depth=float(fallback),
            input_shift=tensors.get("input_shift", np.zeros(6)),
            input_scale=tensors.get("input_scale", np.ones(6)),
            **kfa,
        )
    except KeyError as exc:
        raise ParseError(f"weight file is missing tensor {exc}") from exc
    return model


def load_weights(path):
    return decode_weights(_open_read(path))


# ---------------------------------------------------------------- depth

def encode_depth(depth: DepthMap) -> bytes:
    vals = np.where(depth.valid, depth.values, np.nan).astype(_F32)
    return DEPTH_MAGIC + struct.pack("<II", depth.width, depth.height) + vals.tobytes()


def save_depth(path, depth: DepthMap) -> None:
    _write(path, encode_depth(depth))


def decode_depth(data: bytes) -> DepthMap:
    r = _Reader(data, "depth raster")
    if bytes(r.take(4)) != DEPTH_MAGIC:
        raise ParseError("not a DGPD depth raster (bad magic)")
    w, h = r.unpack("<II")
    vals = r.array(_F32, w * h).astype(np.float64).reshape(h, w)
    if r.pos != len(r.buf):
        raise ParseError("trailing bytes after depth raster")
    return DepthMap.from_array(vals)


def load_depth(path) -> DepthMap:
    return decode_depth(_open_read(path))


# ---------------------------------------------------------------- meshes

def save_obj(path, mesh: MeshModel) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    _write(path, ("\n".join(lines) + "\n").encode())


def _parse_obj(text: str) -> MeshModel:
    verts = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0] != "v":
            continue
        try:
            verts.append([float(p) for p in parts[1:4]])
        except ValueError as exc:
            raise ParseError(f"bad vertex: {line.strip()!r}", lineno) from exc
        if len(verts[-1]) != 3:
            raise ParseError("vertex needs three coordinates", lineno)
    if not verts:
        raise ParseError("no vertices found in OBJ")
    return MeshModel(np.array(verts))


def _parse_ply(data: bytes) -> MeshModel:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file")
    header_end = data.index(b"\n", end) + 1
    header = data[:header_end].decode("ascii", errors="replace").splitlines()
    fmt, count, props, in_vertex = None, 0, [], False
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise ParseError("list properties on vertices are not supported")
            props.append((parts[2], parts[1]))
    names = [p[0] for p in props]
    if not {"x", "y", "z"} <= set(names):
        raise ParseError("PLY vertices lack x/y/z")
    cols = [names.index(a) for a in "xyz"]
    if fmt == "ascii":
        rows = data[header_end:].decode("ascii").splitlines()
        verts = []
        for i in range(count):
            try:
                vals = rows[i].split()
                verts.append([float(vals[c]) for c in cols])
            except (IndexError, ValueError) as exc:
                raise ParseError("bad PLY vertex row", len(header) + i + 1) from exc
        return MeshModel(np.array(verts))
    if fmt == "binary_little_endian":
        types = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8", "uchar": "u1",
                 "uint8": "u1", "char": "i1", "int8": "i1", "short": "<i2", "ushort": "<u2", "int": "<i4",
                 "int32": "<i4", "uint": "<u4", "uint32": "<u4", "int16": "<i2", "uint16": "<u2"}
        try:
            dt = np.dtype([(name, types[t]) for name, t in props])
        except KeyError as exc:
            raise ParseError(f"unsupported PLY property type {exc}") from exc
        if len(data) - header_end < dt.itemsize * count:
            raise ParseError(f"PLY body holds fewer than {count} vertices")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=header_end)
        return MeshModel(np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64))
    raise ParseError(f"unsupported PLY format {fmt!r}")


def load_mesh(path) -> MeshModel:
    """Vertex list from an OBJ or PLY (ascii / binary little-endian) file."""
    path = Path(path)
    data = _open_read(path)
    if path.suffix.lower() == ".ply" or data.startswith(b"ply"):
        return _parse_ply(data)
    return _parse_obj(data.decode("utf-8", errors="replace"))


# ---------------------------------------------------------------- pose tables

POSE_COLUMNS = ["id", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz"]


def save_poses(path, poses, ids=None) -> None:
    ids = list(range(len(poses))) if ids is None else list(ids)
    lines = [",".join(POSE_COLUMNS)]
    for i, p in zip(ids, poses):
        vals = list(p.rotation.ravel()) + list(p.translation)
        lines.append(",".join([str(i)] + [repr(float(v)) for v in vals]))
    _write(path, ("\n".join(lines) + "\n").encode())


def load_poses(path) -> tuple[list, list]:
    """Read a pose CSV; returns (ids, poses). Errors name the 1-based line."""
    text = _open_read(path).decode("utf-8", errors="replace")
    ids, poses = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        if lineno == 1 and cells[0] == "id":
            if cells != POSE_COLUMNS:
                raise ParseError(f"expected header {','.join(POSE_COLUMNS)}", lineno)
            continue
        if len(cells) != len(POSE_COLUMNS):
            raise ParseError(f"expected {len(POSE_COLUMNS)} fields, got {len(cells)}", lineno)
        try:
            vals = np.array([float(c) for c in cells[1:]])
        except ValueError as exc:
            raise ParseError(f"non-numeric field ({exc})", lineno) from exc
        if not np.all(np.isfinite(vals)):
            raise ParseError("non-finite value", lineno)
        try:
            poses.append(Pose(orthonormalize(vals[:9].reshape(3, 3)), vals[9:]))
        except ValidationError as exc:
            raise ParseError(str(exc), lineno) from exc
        ids.append(cells[0])
    return ids, poses
