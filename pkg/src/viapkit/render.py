"""Software rasterizer and procedural multi-view dataset.

Parametric meshes (cube / sphere / cone / torus) are rendered from spherical
camera poses with a depth-buffered, flat-shaded triangle rasterizer. Camera
poses get multiplicative jitter so every view of an object is unique. The
renderer is pure: same spec + pose in, bit-identical image out.

Conventions: world is z-up, cameras look at the origin, images are
(H, W, 3) float64 in [0, 1], row 0 at the top.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

IMG_SIZE = 32
BACKGROUND = (0.9, 0.9, 0.9)
FOV_DEGREES = 45.0
SEGMENTS = 24
AMBIENT = 0.995
# light direction in camera space; x-component 0 keeps renders of rotationally
# symmetric shapes left-right symmetric, which the tests lean on
LIGHT_CAM = (0.0, 0.6, 0.8)

CLASS_KINDS = ("cube", "sphere", "cone", "torus")

# Surfaces are deliberately low-contrast against the 0.9 background, with the
# class identity carried mostly by a faint horizontal banding (see
# _BAND_PERIODS below). Bold per-class colors would let a classifier lean on
# huge-amplitude cues that no small-epsilon noise can touch; keeping every
# discriminative feature within a few gray levels of the background is what
# makes the attack phenomenology of interest reachable at all.
BASE_ALBEDO = {
    "cube": (0.898, 0.898, 0.898),
    "sphere": (0.898, 0.898, 0.898),
    "cone": (0.898, 0.898, 0.898),
    "torus": (0.898, 0.898, 0.898),
}

# Per-class banding period (world units along z). The bands are horizontal —
# functions of object-space z only — so they read the same from every azimuth
# of the camera orbit, and pose/size jitter wiggles them by only a pixel or
# so between views. Amplitude is a ~2/255 modulation: strong enough to learn
# from noiseless float renders, small enough to be erased by the pixel
# budgets studied here.
_BAND_PERIODS = (0.62, 0.45, 0.34, 0.27)
BAND_AMPLITUDE = 0.010

DATASET_MAGIC = "viapkit-dataset-v1"


# ---------------------------------------------------------------------------
# Shapes and meshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapeSpec:
    """One concrete object: a mesh kind plus its instance size/surface."""

    class_id: int
    kind: str
    size: float = 1.0
    albedo: tuple = (0.8, 0.8, 0.8)
    band_period: float = 0.45   # world-z spacing of the albedo bands
    band_phase: float = 0.0
    band_amp: float = BAND_AMPLITUDE
    seed: int = 0  # records which jitter draw produced size/albedo/phase

    def __post_init__(self):
        if self.kind not in CLASS_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if not (self.size > 0.0):
            raise ValueError("size must be positive")
        if len(self.albedo) != 3 or any(not (0.0 <= a <= 1.0) for a in self.albedo):
            raise ValueError("albedo components must lie in [0,1]")
        if not (self.band_period > 0.0):
            raise ValueError("band_period must be positive")
        if not (0.0 <= self.band_amp < 1.0):
            raise ValueError("band_amp must lie in [0, 1)")


def make_object(kind: str, class_id: int, seed: int) -> ShapeSpec:
    """Instance a shape with seeded size/albedo jitter around the class base.

    The band period is the class's; size and the slight albedo tint are
    per-object and carry no class information. Band placement is nominally
    shared within a class, but size jitter rescales it with the mesh, so
    band positions still drift object to object and view to view.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    size = float(rng.uniform(0.95, 1.05))
    base = np.array(BASE_ALBEDO[kind])
    albedo = np.clip(base + rng.uniform(-0.002, 0.002, size=3), 0.05, 0.95)
    return ShapeSpec(
        class_id=class_id,
        kind=kind,
        size=size,
        albedo=tuple(albedo),
        band_period=_BAND_PERIODS[class_id % len(_BAND_PERIODS)],
        seed=seed,
    )


def _ring(n: int) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables for n equal azimuth steps, exactly mirror-symmetric.

    The second half is written as a reflection of the first so that surfaces
    of revolution come out bit-symmetric about the x-z plane.
    """
    ang = np.arange(n) * (2.0 * np.pi / n)
    c, s = np.cos(ang), np.sin(ang)
    s[0] = 0.0
    for k in range(1, (n + 1) // 2):
        c[n - k] = c[k]
        s[n - k] = -s[k]
    if n % 2 == 0:
        c[n // 2] = -1.0
        s[n // 2] = 0.0
    return c, s


def _quad_faces(v00, v10, v11, v01, flip_diag: bool) -> list:
    # alternate the split diagonal per azimuth hemisphere, keeping the
    # triangle set mirror-symmetric
    if flip_diag:
        return [(v01, v00, v10), (v01, v10, v11)]
    return [(v00, v10, v11), (v00, v11, v01)]


def _mesh_cube(s: float):
    c = np.array(
        [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64
    )
    verts = 0.5 * s * c
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, cc, d in quads:
        faces += [(a, b, cc), (a, cc, d)]
    return verts, np.array(faces, dtype=np.int64)


def _mesh_sphere(s: float, seg: int = SEGMENTS):
    r = 0.75 * s
    cos_a, sin_a = _ring(seg)
    polar = np.arange(seg + 1) * (np.pi / seg)
    sp, cp = np.sin(polar), np.cos(polar)
    verts = np.empty(((seg + 1) * seg, 3))
    for i in range(seg + 1):
        base = i * seg
        verts[base : base + seg, 0] = r * sp[i] * cos_a
        verts[base : base + seg, 1] = r * sp[i] * sin_a
        verts[base : base + seg, 2] = r * cp[i]
    faces = []
    for i in range(seg):
        for j in range(seg):
            jn = (j + 1) % seg
            faces += _quad_faces(
                i * seg + j, (i + 1) * seg + j, (i + 1) * seg + jn, i * seg + jn,
                flip_diag=j >= seg // 2,
            )
    return verts, np.array(faces, dtype=np.int64)


def _mesh_cone(s: float, seg: int = SEGMENTS):
    base_r, half_h = 0.55 * s, 0.70 * s
    cos_a, sin_a = _ring(seg)
    rim = np.stack([base_r * cos_a, base_r * sin_a, np.full(seg, -half_h)], axis=1)
    verts = np.vstack([rim, [[0.0, 0.0, half_h]], [[0.0, 0.0, -half_h]]])
    apex, center = seg, seg + 1
    faces = []
    for j in range(seg):
        jn = (j + 1) % seg
        faces += [(apex, j, jn), (center, jn, j)]
    return verts, np.array(faces, dtype=np.int64)


def _mesh_torus(s: float, seg: int = SEGMENTS):
    ring_r, tube_r = 0.60 * s, 0.25 * s
    cos_a, sin_a = _ring(seg)   # azimuth
    cos_t, sin_t = _ring(seg)   # tube cross-section
    verts = np.empty((seg * seg, 3))
    for u in range(seg):
        rad = ring_r + tube_r * cos_t
        base = u * seg
        verts[base : base + seg, 0] = rad * cos_a[u]
        verts[base : base + seg, 1] = rad * sin_a[u]
        verts[base : base + seg, 2] = tube_r * sin_t
    faces = []
    for u in range(seg):
        un = (u + 1) % seg
        for v in range(seg):
            vn = (v + 1) % seg
            faces += _quad_faces(
                u * seg + v, un * seg + v, un * seg + vn, u * seg + vn,
                flip_diag=u >= seg // 2,
            )
    return verts, np.array(faces, dtype=np.int64)


_MESH_BUILDERS = {
    "cube": _mesh_cube,
    "sphere": _mesh_sphere,
    "cone": _mesh_cone,
    "torus": _mesh_torus,
}


def build_mesh(spec: ShapeSpec) -> tuple[np.ndarray, np.ndarray]:
    """(vertices (V,3), faces (F,3)) for a shape instance."""
    return _MESH_BUILDERS[spec.kind](spec.size)


# ---------------------------------------------------------------------------
# Camera
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraPose:
    """Spherical camera position; the camera always looks at the origin."""

    theta: float  # polar angle from +z, radians
    phi: float    # azimuth, radians
    radius: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= np.pi):
            raise ValueError(f"theta {self.theta} outside [0, pi]")
        if not (0.0 <= self.phi < 2.0 * np.pi):
            raise ValueError(f"phi {self.phi} outside [0, 2*pi)")
        if not (self.radius > 0.0):
            raise ValueError("radius must be positive")

    def as_tuple(self) -> tuple:
        return (self.theta, self.phi, self.radius)


AXES = ("theta", "phi", "radius")


def sample_camera(
    base: CameraPose, jitter_frac: float, rng: np.random.Generator,
    axis_restrict: str | None = None,
) -> CameraPose:
    """Multiplicative pose jitter: each coordinate scaled by (1 + u), u ~ U(-f, f).

    theta is clamped back to [0, pi] and phi wrapped mod 2*pi. With
    axis_restrict set, only that coordinate is jittered; the draws for the
    other axes still happen, so restricting an axis does not shift the
    stream. jitter_frac = 0 returns the pose unchanged.
    """
    if not (0.0 <= jitter_frac < 1.0):
        raise ValueError("jitter_frac must lie in [0, 1)")
    if axis_restrict is not None and axis_restrict not in AXES:
        raise ValueError(f"axis_restrict must be one of {AXES}")
    u = rng.uniform(-jitter_frac, jitter_frac, size=3)
    if jitter_frac == 0.0:
        return base
    theta, phi, radius = base.theta, base.phi, base.radius
    if axis_restrict in (None, "theta"):
        theta = min(max(theta * (1.0 + u[0]), 0.0), float(np.pi))
    if axis_restrict in (None, "phi"):
        phi = (phi * (1.0 + u[1])) % (2.0 * np.pi)
    if axis_restrict in (None, "radius"):
        radius = radius * (1.0 + u[2])
    return CameraPose(theta, phi, radius)


def _camera_frame(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Rows of R are the camera's right/up/backward axes; eye is its position."""
    st, ct = math.sin(pose.theta), math.cos(pose.theta)
    cp, sp = math.cos(pose.phi), math.sin(pose.phi)
    eye = pose.radius * np.array([st * cp, st * sp, ct])
    zc = eye / np.linalg.norm(eye)
    x = np.cross([0.0, 0.0, 1.0], zc)
    if np.linalg.norm(x) < 1e-12:  # looking straight down an axis pole
        x = np.cross([0.0, 1.0, 0.0], zc)
    xc = x / np.linalg.norm(x)
    yc = np.cross(zc, xc)
    return np.stack([xc, yc, zc]), eye


# ---------------------------------------------------------------------------
# Rasterizer
# ---------------------------------------------------------------------------

def render(shape: ShapeSpec, pose: CameraPose, size: int = IMG_SIZE) -> np.ndarray:
    """Rasterize one view: perspective projection, z-buffer, banded Lambertian.

    Depth test is strict-less, so the first triangle to claim a pixel at a
    given depth keeps it. Shading is two-sided (|n.l|) with a constant
    ambient floor, modulated by the shape's horizontal albedo bands; pixels
    not covered by any triangle are the background color exactly.
    """
    verts, faces = build_mesh(shape)
    bound = float(np.linalg.norm(verts, axis=1).max())
    if pose.radius <= bound:
        raise ValueError(
            f"camera radius {pose.radius} is inside the object (bounding radius {bound:.3f})"
        )

    rot, eye = _camera_frame(pose)
    pc = (verts - eye) @ rot.T
    depth_v = -pc[:, 2]           # positive distances along the view axis
    focal = 1.0 / math.tan(math.radians(FOV_DEGREES) / 2.0)
    ndc = focal * pc[:, :2] / depth_v[:, None]

    light = np.asarray(LIGHT_CAM)
    light = light / np.linalg.norm(light)
    albedo = np.asarray(shape.albedo)

    img = np.empty((size, size, 3))
    img[:] = BACKGROUND
    zbuf = np.full((size, size), np.inf)
    # pixel-center coordinates in NDC; exact in binary for power-of-two sizes
    xs = (2.0 * np.arange(size) + 1.0 - size) / size
    ys = (size - 1.0 - 2.0 * np.arange(size)) / size

    for f0, f1, f2 in faces:
        z0, z1, z2 = depth_v[f0], depth_v[f1], depth_v[f2]
        if min(z0, z1, z2) <= 1e-9:
            continue  # behind the camera; cannot happen for r > bound
        a, b, c = ndc[f0], ndc[f1], ndc[f2]
        area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(area2) < 1e-14:
            continue

        lo_x, hi_x = min(a[0], b[0], c[0]), max(a[0], b[0], c[0])
        lo_y, hi_y = min(a[1], b[1], c[1]), max(a[1], b[1], c[1])
        j0 = max(0, int(math.floor((lo_x + 1.0) * size / 2.0 - 0.5)) - 1)
        j1 = min(size - 1, int(math.ceil((hi_x + 1.0) * size / 2.0 - 0.5)) + 1)
        i0 = max(0, int(math.floor((size - 1.0 - hi_y * size) / 2.0)) - 1)
        i1 = min(size - 1, int(math.ceil((size - 1.0 - lo_y * size) / 2.0)) + 1)
        if j0 > j1 or i0 > i1:
            continue

        px = xs[j0 : j1 + 1][None, :]
        py = ys[i0 : i1 + 1][:, None]
        w0 = (c[0] - b[0]) * (py - b[1]) - (c[1] - b[1]) * (px - b[0])
        w1 = (a[0] - c[0]) * (py - c[1]) - (a[1] - c[1]) * (px - c[0])
        w2 = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
        if area2 > 0:
            mask = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        else:
            mask = (w0 <= 0.0) & (w1 <= 0.0) & (w2 <= 0.0)
        if not mask.any():
            continue

        inv_z = (w0 / z0 + w1 / z1 + w2 / z2) / area2  # perspective-correct
        with np.errstate(divide="ignore"):
            depth = 1.0 / inv_z
        zsub = zbuf[i0 : i1 + 1, j0 : j1 + 1]
        sel = mask & (depth < zsub)
        if not sel.any():
            continue

        e1 = pc[f1] - pc[f0]
        e2 = pc[f2] - pc[f0]
        n = np.cross(e1, e2)
        n = n / np.linalg.norm(n)
        shade = AMBIENT + (1.0 - AMBIENT) * abs(float(n @ light))

        # object-space height of each covered fragment (perspective-correct);
        # drives the banding, so the pattern rides on the surface, not the screen
        hz = (
            w0 * (verts[f0, 2] / z0) + w1 * (verts[f1, 2] / z1) + w2 * (verts[f2, 2] / z2)
        ) / area2
        oz = depth[sel] * hz[sel]
        band = np.sin(2.0 * np.pi * oz / shape.band_period + shape.band_phase)
        color = albedo[None, :] * (shade * (1.0 + shape.band_amp * band))[:, None]

        zsub[sel] = depth[sel]
        img[i0 : i1 + 1, j0 : j1 + 1][sel] = np.clip(color, 0.0, 1.0)

    return img


def write_ppm(image: np.ndarray, path) -> None:
    """Dump an [0,1] float image as binary PPM (P6) for eyeballing."""
    h, w = image.shape[:2]
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledView:
    """One rendered image plus everything needed to reproduce or score it."""

    image: np.ndarray
    label: int
    object_id: int
    view_id: int
    pose: CameraPose
    split: str


@dataclass
class DatasetManifest:
    classes: tuple
    image_shape: tuple
    seed: int
    jitter_frac: float
    views: list = field(default_factory=list)  # per-view record dicts

    def validate(self) -> None:
        per_object: dict[int, set] = {}
        seen = set()
        for rec in self.views:
            key = (rec["object"], rec["view"])
            if key in seen:
                raise ValueError(f"duplicate (object, view) pair {key}")
            seen.add(key)
            if rec["split"] not in ("train", "test"):
                raise ValueError(f"bad split tag {rec['split']!r}")
            per_object.setdefault(rec["object"], set()).add(rec["split"])
        for obj, splits in per_object.items():
            if splits != {"train", "test"}:
                raise ValueError(f"object {obj} missing a split: has {sorted(splits)}")

    def to_json_dict(self) -> dict:
        return {
            "format": DATASET_MAGIC,
            "classes": list(self.classes),
            "image_shape": list(self.image_shape),
            "seed": self.seed,
            "jitter_frac": self.jitter_frac,
            "views": self.views,
        }


class Dataset:
    """In-memory dataset: stacked images plus aligned label/object/split arrays."""

    def __init__(self, manifest: DatasetManifest, images: np.ndarray):
        manifest.validate()
        if images.shape[0] != len(manifest.views):
            raise ValueError("image count does not match manifest")
        if images.min() < 0.0 or images.max() > 1.0:
            raise ValueError("dataset pixels outside [0,1]")
        self.manifest = manifest
        self.images = images
        self.labels = np.array([r["class"] for r in manifest.views], dtype=np.int64)
        self.object_ids = np.array([r["object"] for r in manifest.views], dtype=np.int64)
        self.view_ids = np.array([r["view"] for r in manifest.views], dtype=np.int64)
        self.train_mask = np.array([r["split"] == "train" for r in manifest.views])

    @property
    def classes(self) -> tuple:
        return tuple(self.manifest.classes)

    @property
    def n_classes(self) -> int:
        return len(self.manifest.classes)

    def indices(self, split: str | None = None, object_id: int | None = None) -> np.ndarray:
        keep = np.ones(len(self.labels), dtype=bool)
        if split == "train":
            keep &= self.train_mask
        elif split == "test":
            keep &= ~self.train_mask
        elif split is not None:
            raise ValueError(f"unknown split {split!r}")
        if object_id is not None:
            keep &= self.object_ids == object_id
        return np.flatnonzero(keep)

    def view(self, i: int) -> LabeledView:
        rec = self.manifest.views[i]
        return LabeledView(
            image=self.images[i],
            label=int(self.labels[i]),
            object_id=int(self.object_ids[i]),
            view_id=int(self.view_ids[i]),
            pose=CameraPose(*rec["pose"]),
            split=rec["split"],
        )

    def views(self, idx) -> list:
        return [self.view(int(i)) for i in idx]

    def objects(self) -> list[int]:
        return sorted(set(int(o) for o in self.object_ids))


def stack_views(views) -> tuple[np.ndarray, np.ndarray]:
    """Stack LabeledViews into a batch + label vector."""
    if not views:
        raise ValueError("no views to stack")
    images = np.stack([v.image for v in views])
    labels = np.array([v.label for v in views], dtype=np.int64)
    return images, labels


def base_viewpoints(n_views: int, radius: float) -> list[CameraPose]:
    """Deterministic pose ring: one elevation, azimuths spread evenly.

    Pose variety between views comes from the azimuth spacing plus the
    multiplicative jitter applied on top; a single base elevation keeps the
    train and held-out views of an object statistically alike, which is what
    lets a handful of training views stand in for the whole orbit.
    """
    poses = []
    for v in range(n_views):
        phi = (2.0 * np.pi * v / n_views) % (2.0 * np.pi)
        poses.append(CameraPose(0.48 * np.pi, phi, radius))
    return poses


def generate_dataset(
    out_dir=None,
    *,
    classes: tuple = CLASS_KINDS,
    objects_per_class: int = 4,
    views_per_object: int = 10,
    train_views: int | None = None,
    seed: int = 7,
    jitter_frac: float = 0.15,
    axis_restrict: str | None = "theta",
    image_size: int = IMG_SIZE,
    camera_radius: float = 3.0,
) -> Dataset:
    """Render the full (class x object x view) grid and split views per object.

    Default config: 4 classes x 4 objects x 10 views = 160 views, 7 train /
    3 test per object. Object size/color jitter and camera jitter are driven
    by per-(object, view) seed sequences, so any subset regenerates
    identically. When out_dir is given, writes images.f64 + manifest.json.

    Jitter defaults to the elevation axis only. Elevation tilt is what makes
    two views of the same object genuinely different images of the same
    stripes; radius jitter mostly rescales the object, and the far tail of
    that scaling pushes the finest class stripes against the raster grid's
    resolving limit where they stop being readable.
    """
    if views_per_object < 2:
        raise ValueError("views_per_object must be at least 2 (both splits need a view)")
    if train_views is None:
        train_views = min(views_per_object - 1, math.ceil(0.7 * views_per_object))
    if not (1 <= train_views <= views_per_object - 1):
        raise ValueError("train_views must leave at least one view in each split")

    bases = base_viewpoints(views_per_object, camera_radius)
    manifest = DatasetManifest(
        classes=tuple(classes),
        image_shape=(image_size, image_size, 3),
        seed=seed,
        jitter_frac=jitter_frac,
    )
    images = []
    object_id = 0
    for class_id, kind in enumerate(classes):
        for _obj in range(objects_per_class):
            obj_seed = int(
                np.random.SeedSequence([seed, class_id, _obj]).generate_state(1)[0]
            )
            shape = make_object(kind, class_id, obj_seed)
            for view_id in range(views_per_object):
                cam_rng = np.random.Generator(
                    np.random.PCG64(np.random.SeedSequence([seed, class_id, _obj, view_id]))
                )
                pose = sample_camera(bases[view_id], jitter_frac, cam_rng, axis_restrict)
                img = render(shape, pose, size=image_size)
                nbytes = img.size * 8
                manifest.views.append(
                    {
                        "index": len(images),
                        "object": object_id,
                        "class": class_id,
                        "view": view_id,
                        "split": "train" if view_id < train_views else "test",
                        "pose": [pose.theta, pose.phi, pose.radius],
                        "offset": len(images) * nbytes,
                        "nbytes": nbytes,
                    }
                )
                images.append(img)
            object_id += 1

    dataset = Dataset(manifest, np.stack(images))
    if out_dir is not None:
        save_dataset(dataset, out_dir)
    return dataset


def save_dataset(dataset: Dataset, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    blob = np.ascontiguousarray(dataset.images, dtype="<f8").tobytes()
    with open(os.path.join(out_dir, "images.f64"), "wb") as fh:
        fh.write(blob)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(dataset.manifest.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(in_dir) -> Dataset:
    with open(os.path.join(in_dir, "manifest.json")) as fh:
        raw = json.load(fh)
    if raw.get("format") != DATASET_MAGIC:
        raise ValueError(f"{in_dir}: not a dataset directory (format tag mismatch)")
    manifest = DatasetManifest(
        classes=tuple(raw["classes"]),
        image_shape=tuple(raw["image_shape"]),
        seed=raw["seed"],
        jitter_frac=raw["jitter_frac"],
        views=raw["views"],
    )
    shape = manifest.image_shape
    with open(os.path.join(in_dir, "images.f64"), "rb") as fh:
        blob = fh.read()
    per = int(np.prod(shape)) * 8
    if len(blob) != per * len(manifest.views):
        raise ValueError(f"{in_dir}: image blob size does not match manifest")
    images = np.empty((len(manifest.views),) + shape)
    for rec in manifest.views:
        off = rec["offset"]
        images[rec["index"]] = np.frombuffer(
            blob, dtype="<f8", count=per // 8, offset=off
        ).reshape(shape)
    return Dataset(manifest, images)
