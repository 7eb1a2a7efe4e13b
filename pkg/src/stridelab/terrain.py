"""Heightmap terrain: generation, bilinear sampling, local patch observation."""
import base64
import json
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SchemaError, VersionError

TERRAIN_FILE_VERSION = 1

PATCH_RES = 20
PATCH_SIZE_M = 10.0  # heading-aligned square side
PATCH_DIM = PATCH_RES * PATCH_RES

TERRAIN_KINDS = ("flat", "slope", "stairs", "rough", "mixed")


@dataclass(frozen=True)
class Heightmap:
    origin: np.ndarray  # (2,) world xy of node (0, 0)
    cell_size: float
    heights: np.ndarray  # (width, depth), meters; axis 0 = x, axis 1 = y

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ParameterError("cell_size must be positive")
        if not np.all(np.isfinite(self.heights)):
            raise ParameterError("heights must be finite")

    @property
    def width(self):
        return self.heights.shape[0]

    @property
    def depth(self):
        return self.heights.shape[1]


def generate_terrain(kind, params=None, seed=0, extent=60.0, cell_size=0.1):
    """Deterministic heightmap for (kind, params, seed).

    The grid is centered on the origin and spans `extent` meters per side.
    """
    params = dict(params or {})
    if kind not in TERRAIN_KINDS:
        raise ParameterError(f"unknown terrain kind {kind!r}")
    n = int(round(extent / cell_size)) + 1
    origin = np.array([-extent / 2.0, -extent / 2.0])
    xs = origin[0] + cell_size * np.arange(n)
    ys = origin[1] + cell_size * np.arange(n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")

    if kind == "flat":
        h = np.zeros((n, n))
    elif kind == "slope":
        grade = float(params.get("grade", 0.1))
        if not 0.0 <= grade <= 0.4:
            raise ParameterError("slope grade must be in [0, 0.4]")
        h = grade * gx
    elif kind == "stairs":
        rise = float(params.get("rise", 0.15))
        run = float(params.get("run", 0.4))
        if not 0.0 < rise <= 0.25:
            raise ParameterError("stair rise must be in (0, 0.25]")
        if run <= 0:
            raise ParameterError("stair run must be positive")
        h = rise * np.floor(gx / run)
    elif kind == "rough":
        amplitude = float(params.get("amplitude", 0.1))
        if not 0.0 < amplitude <= 0.3:
            raise ParameterError("rough amplitude must be in (0, 0.3]")
        h = amplitude * _value_noise(gx, gy, seed, octaves=3, base_scale=4.0)
    else:  # mixed: gentle slope plus roughness
        grade = float(params.get("grade", 0.05))
        amplitude = float(params.get("amplitude", 0.08))
        if not 0.0 <= grade <= 0.4:
            raise ParameterError("slope grade must be in [0, 0.4]")
        if not 0.0 < amplitude <= 0.3:
            raise ParameterError("rough amplitude must be in (0, 0.3]")
        h = grade * gx + amplitude * _value_noise(gx, gy, seed, octaves=3, base_scale=4.0)
    return Heightmap(origin=origin, cell_size=cell_size, heights=h)


def _value_noise(gx, gy, seed, octaves, base_scale):
    """Seeded value noise, normalized to [-1, 1]."""
    out = np.zeros_like(gx)
    amp_sum = 0.0
    for o in range(octaves):
        scale = base_scale / (2.0 ** o)
        amp = 1.0 / (2.0 ** o)
        out += amp * _noise_octave(gx / scale, gy / scale, seed * 1000 + o)
        amp_sum += amp
    return out / amp_sum


def _noise_octave(u, v, seed):
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0
    fu = fu * fu * (3.0 - 2.0 * fu)
    fv = fv * fv * (3.0 - 2.0 * fv)
    n00 = _lattice(u0, v0, seed)
    n10 = _lattice(u0 + 1, v0, seed)
    n01 = _lattice(u0, v0 + 1, seed)
    n11 = _lattice(u0 + 1, v0 + 1, seed)
    return (
        n00 * (1 - fu) * (1 - fv)
        + n10 * fu * (1 - fv)
        + n01 * (1 - fu) * fv
        + n11 * fu * fv
    )


def _lattice(i, j, seed):
    """Hash lattice point to [-1, 1], deterministic across platforms."""
    h = (i * np.int64(374761393) + j * np.int64(668265263) + np.int64(seed) * np.int64(2147483647))
    h = (h ^ (h >> 13)) * np.int64(1274126177)
    h = h ^ (h >> 16)
    return (h & np.int64(0xFFFFFF)).astype(float) / float(0x7FFFFF) - 1.0


def sample_height(hm, x, y):
    """Bilinear height; out-of-bounds clamps to the edge cells."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = (x - hm.origin[0]) / hm.cell_size
    v = (y - hm.origin[1]) / hm.cell_size
    u = np.clip(u, 0.0, hm.width - 1.0)
    v = np.clip(v, 0.0, hm.depth - 1.0)
    u0 = np.minimum(np.floor(u).astype(int), hm.width - 2)
    v0 = np.minimum(np.floor(v).astype(int), hm.depth - 2)
    fu = u - u0
    fv = v - v0
    h = hm.heights
    return (
        h[u0, v0] * (1 - fu) * (1 - fv)
        + h[u0 + 1, v0] * fu * (1 - fv)
        + h[u0, v0 + 1] * (1 - fu) * fv
        + h[u0 + 1, v0 + 1] * fu * fv
    )


def _patch_offsets():
    half = PATCH_SIZE_M / 2.0
    line = np.linspace(-half, half, PATCH_RES)
    fwd, lat = np.meshgrid(line, line, indexing="ij")  # rows along heading
    return fwd.ravel(), lat.ravel()


_PATCH_FWD, _PATCH_LAT = _patch_offsets()


def local_patch(hm, root_pos, root_yaw):
    """Root-relative heights on a heading-aligned 20x20 grid (row-major,
    rows along heading)."""
    root_pos = np.asarray(root_pos, dtype=float)
    root_yaw = np.asarray(root_yaw, dtype=float)
    c = np.cos(root_yaw)[..., None]
    s = np.sin(root_yaw)[..., None]
    x = root_pos[..., 0:1] + c * _PATCH_FWD - s * _PATCH_LAT
    y = root_pos[..., 1:2] + s * _PATCH_FWD + c * _PATCH_LAT
    under_root = sample_height(hm, root_pos[..., 0], root_pos[..., 1])
    return sample_height(hm, x, y) - under_root[..., None]


def save_terrain(hm, path, kind="custom", params=None, seed=0, binary_threshold=250000):
    doc = {
        "version": TERRAIN_FILE_VERSION,
        "kind": kind,
        "params": params or {},
        "seed": seed,
        "origin": [float(hm.origin[0]), float(hm.origin[1])],
        "cell_size": hm.cell_size,
        "width": hm.width,
        "depth": hm.depth,
    }
    if hm.heights.size > binary_threshold:
        blob = hm.heights.astype("<f4").tobytes()
        doc["heights_b64"] = base64.b64encode(blob).decode("ascii")
    else:
        doc["heights"] = [float(v) for v in hm.heights.ravel()]
    with open(path, "w") as f:
        json.dump(doc, f)


def load_terrain(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(str(e), field_path=str(path))
    if doc.get("version") != TERRAIN_FILE_VERSION:
        raise VersionError(f"terrain file version {doc.get('version')} unsupported")
    try:
        w, d = int(doc["width"]), int(doc["depth"])
        if "heights_b64" in doc:
            blob = base64.b64decode(doc["heights_b64"])
            heights = np.frombuffer(blob, dtype="<f4").astype(float).reshape(w, d)
        else:
            heights = np.asarray(doc["heights"], dtype=float).reshape(w, d)
        return Heightmap(
            origin=np.asarray(doc["origin"], dtype=float),
            cell_size=float(doc["cell_size"]),
            heights=heights,
        )
    except (KeyError, ValueError, TypeError) as e:
        raise SchemaError(str(e), field_path=str(path))
