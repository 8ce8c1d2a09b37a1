"""Pinhole projection and a differentiable rasterizer.

Produces a soft silhouette (sigmoid of signed squared pixel distance to
each projected front-facing triangle, combined over faces), a hard z-buffer
depth image, and flat per-face camera-space normals, plus the analytic
gradient of the composite rendering loss with respect to surface vertex
positions.

Conventions:
  * camera space looks down -z; depth d = -z_c is positive in front,
  * u = fx * x_c / d + cx, v = fy * y_c / d + cy,
  * image arrays are indexed [row, col] = [v, u]; the pixel at (row, col)
    has center (col + 0.5, row + 0.5) in (u, v),
  * a projected triangle is front-facing iff its signed (u, v) area is
    positive, which outward-wound surfaces satisfy for faces toward the
    camera,
  * depth images use a sentinel (default 0) for background; normal images
    use the zero vector.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.special import expit

from .tet_mesh import MeshError, SurfaceMesh, TetSphereSet, union_surfaces

__all__ = [
    "Camera",
    "View",
    "RenderConfig",
    "LossWeights",
    "project",
    "look_at_camera",
    "render_silhouette_soft",
    "render_depth",
    "render_normal",
    "render_loss_and_grad",
    "read_mask",
    "write_mask",
    "write_depth_npy",
    "write_depth_png16",
    "write_normal_npy",
    "write_normal_png",
    "load_views",
    "load_cameras",
    "save_camera_file",
]


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: 3x3 intrinsics, 4x4 world-to-camera rigid transform."""

    intrinsics: np.ndarray
    world_to_camera: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        k = np.ascontiguousarray(self.intrinsics, dtype=np.float64)
        w2c = np.ascontiguousarray(self.world_to_camera, dtype=np.float64)
        if k.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {k.shape}")
        if w2c.shape != (4, 4):
            raise ValueError(f"world_to_camera must be 4x4, got {w2c.shape}")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        r = w2c[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) >= 1e-6:
            raise ValueError("rotation block is not orthonormal")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "world_to_camera", w2c)

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]


@dataclass
class View:
    """A camera plus its target images.

    mask is required (grayscale in [0, 1], > 0.5 means foreground). depth
    and normal targets are optional; both mark background with zeros.
    """

    camera: Camera
    mask: np.ndarray
    depth: np.ndarray | None = None
    normal: np.ndarray | None = None

    def __post_init__(self):
        self.mask = np.ascontiguousarray(self.mask, dtype=np.float64)
        shape = (self.camera.height, self.camera.width)
        if self.mask.shape != shape:
            raise ValueError(f"mask shape {self.mask.shape} != camera {shape}")
        if self.depth is not None:
            self.depth = np.ascontiguousarray(self.depth, dtype=np.float64)
            if self.depth.shape != shape:
                raise ValueError(f"depth shape {self.depth.shape} != camera {shape}")
        if self.normal is not None:
            self.normal = np.ascontiguousarray(self.normal, dtype=np.float64)
            if self.normal.shape != shape + (3,):
                raise ValueError(f"normal shape {self.normal.shape} != camera {shape + (3,)}")


@dataclass
class RenderConfig:
    """Rasterizer knobs.

    sigma is the soft-silhouette sharpness in squared pixels. Faces whose
    distance to a pixel exceeds cutoff_pixels contribute nothing there;
    None picks a cutoff where the dropped sigmoid tail is ~1e-17.
    """

    sigma: float = 0.1
    near: float = 1e-4
    far: float = 1e6
    background_depth: float = 0.0
    cutoff_pixels: float | None = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not self.near < self.far:
            raise ValueError("need near < far")

    def cutoff(self) -> float:
        if self.cutoff_pixels is not None:
            return float(self.cutoff_pixels)
        return float(np.sqrt(40.0 * self.sigma)) + 1.0


@dataclass
class LossWeights:
    """Relative weights of the depth and normal terms (silhouette is 1)."""

    depth: float = 1.0
    normal: float = 0.1


def project(camera: Camera, points) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole-project world points.

    Returns (uv, depth) where depth = -z_camera. Points at depth <= 0 are
    behind the camera; their uv is NaN and they are excluded from
    rasterization by the callers.
    """
    pts = np.asarray(points, dtype=np.float64)
    flat = pts.reshape(-1, 3)
    xc = flat @ camera.rotation.T + camera.translation
    depth = -xc[:, 2]
    uv = np.full((len(flat), 2), np.nan)
    ok = depth > 0
    with np.errstate(invalid="ignore"):
        uv[ok, 0] = camera.fx * xc[ok, 0] / depth[ok] + camera.cx
        uv[ok, 1] = camera.fy * xc[ok, 1] / depth[ok] + camera.cy
    return uv.reshape(pts.shape[:-1] + (2,)), depth.reshape(pts.shape[:-1])


def look_at_camera(eye, target, up, focal, width, height, cx=None, cy=None) -> Camera:
    """Camera at eye looking toward target, classic right-handed basis."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    backward = eye - target
    nb = np.linalg.norm(backward)
    if nb < 1e-12:
        raise ValueError("eye and target coincide")
    z = backward / nb
    x = np.cross(up, z)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise ValueError("up is parallel to the view direction")
    x = x / nx
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    w2c = np.eye(4)
    w2c[:3, :3] = r
    w2c[:3, 3] = -r @ eye
    k = np.array(
        [
            [focal, 0.0, width / 2.0 if cx is None else cx],
            [0.0, focal, height / 2.0 if cy is None else cy],
            [0.0, 0.0, 1.0],
        ]
    )
    return Camera(intrinsics=k, world_to_camera=w2c, width=int(width), height=int(height))


def _project_for_raster(vertices, camera, near):
    uv, depth = project(camera, vertices)
    return uv, depth, depth > near


def _bbox_pairs(tri_uv, keep, width, height, margin):
    """Flattened (face, pixel) pairs from per-face pixel bounding boxes.

    Returns (face_rows, px, py) where face_rows indexes into the kept-face
    axis of tri_uv. Faces projecting outside the image produce no pairs.
    """
    kept = np.nonzero(keep)[0]
    if len(kept) == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty
    t = tri_uv[kept]
    x0 = np.clip(np.floor(t[:, :, 0].min(axis=1) - margin), 0, width - 1).astype(np.int64)
    x1 = np.clip(np.ceil(t[:, :, 0].max(axis=1) + margin), 0, width - 1).astype(np.int64)
    y0 = np.clip(np.floor(t[:, :, 1].min(axis=1) - margin), 0, height - 1).astype(np.int64)
    y1 = np.clip(np.ceil(t[:, :, 1].max(axis=1) + margin), 0, height - 1).astype(np.int64)
    inside = (
        (t[:, :, 0].max(axis=1) + margin >= 0)
        & (t[:, :, 0].min(axis=1) - margin <= width)
        & (t[:, :, 1].max(axis=1) + margin >= 0)
        & (t[:, :, 1].min(axis=1) - margin <= height)
    )
    bw = np.where(inside, x1 - x0 + 1, 0)
    bh = np.where(inside, y1 - y0 + 1, 0)
    counts = bw * bh
    total = int(counts.sum())
    if total == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rows = np.repeat(np.arange(len(kept), dtype=np.int64), counts)
    within = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
    px = x0[rows] + within % bw[rows]
    py = y0[rows] + within // bw[rows]
    return kept[rows], px, py


def _silhouette_forward(uv, faces, keep, width, height, sigma, cutoff):
    """Per-pair soft-coverage terms and the accumulated softplus image.

    The per-pixel value is I = 1 - prod_j (1 - sigmoid(z_j)) computed
    stably as 1 - exp(-sum_j softplus(z_j)), z_j = sign * d^2 / sigma.
    Returns (S, pairs) where S is the flat softplus sum per pixel and pairs
    carries everything the backward pass needs.
    """
    tri = uv[faces]
    face_rows, px, py = _bbox_pairs(tri, keep, width, height, cutoff)
    if len(face_rows) == 0:
        return np.zeros(width * height), None
    p = np.stack([px + 0.5, py + 0.5], axis=1)
    a = tri[face_rows]

    best_d2 = None
    best = {}
    inside = np.ones(len(face_rows), dtype=bool)
    for e in range(3):
        va = a[:, e]
        vb = a[:, (e + 1) % 3]
        w = vb - va
        rel = p - va
        ww = np.einsum("ij,ij->i", w, w)
        t = np.einsum("ij,ij->i", rel, w) / np.maximum(ww, 1e-30)
        t = np.clip(t, 0.0, 1.0)
        q = va + t[:, None] * w
        diff = p - q
        d2 = np.einsum("ij,ij->i", diff, diff)
        cross = w[:, 0] * rel[:, 1] - w[:, 1] * rel[:, 0]
        inside &= cross >= 0.0
        if best_d2 is None:
            best_d2 = d2
            best = {"edge": np.zeros(len(d2), dtype=np.int64), "t": t, "diff": diff}
        else:
            closer = d2 < best_d2
            best_d2 = np.where(closer, d2, best_d2)
            best["edge"][closer] = e
            best["t"] = np.where(closer, t, best["t"])
            best["diff"] = np.where(closer[:, None], diff, best["diff"])

    live = inside | (best_d2 <= cutoff * cutoff)
    sign = np.where(inside, 1.0, -1.0)
    z = sign * best_d2 / sigma
    z = z[live]
    softplus = np.logaddexp(0.0, z)
    pix = py[live] * width + px[live]
    s = np.bincount(pix, weights=softplus, minlength=width * height)
    pairs = {
        "face": face_rows[live],
        "pix": pix,
        "z": z,
        "sign": sign[live],
        "edge": best["edge"][live],
        "t": best["t"][live],
        "diff": best["diff"][live],
    }
    return s, pairs


def render_silhouette_soft(surface: SurfaceMesh, camera: Camera, config: RenderConfig) -> np.ndarray:
    """Soft silhouette in [0, 1]; front-facing faces only; empty mesh -> zeros."""
    h, w = camera.height, camera.width
    if surface.num_faces == 0:
        return np.zeros((h, w))
    uv, depth, valid = _project_for_raster(surface.vertices, camera, config.near)
    tri_ok = np.all(valid[surface.faces], axis=1)
    tuv = uv[surface.faces]
    area2 = np.zeros(len(tuv))
    ok = np.nonzero(tri_ok)[0]
    if len(ok):
        e1 = tuv[ok, 1] - tuv[ok, 0]
        e2 = tuv[ok, 2] - tuv[ok, 0]
        area2[ok] = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    keep = tri_ok & (area2 > 0.0)
    s, _ = _silhouette_forward(uv, surface.faces, keep, w, h, config.sigma, config.cutoff())
    return (1.0 - np.exp(-s)).reshape(h, w)


def _rasterize_hard(surface: SurfaceMesh, camera: Camera, config: RenderConfig):
    """Hard z-buffer pass.

    Returns (depth_img, face_img, bary_img); face_img is -1 on background.
    Nearest interpolated depth wins; exact ties go to the lowest face id.
    """
    h, w = camera.height, camera.width
    depth_img = np.full(h * w, config.background_depth)
    face_img = np.full(h * w, -1, dtype=np.int64)
    bary_img = np.zeros((h * w, 3))
    if surface.num_faces == 0:
        return depth_img.reshape(h, w), face_img.reshape(h, w), bary_img.reshape(h, w, 3)
    uv, depth, valid = _project_for_raster(surface.vertices, camera, config.near)
    valid = valid & (depth < config.far)
    faces = surface.faces
    tri_ok = np.all(valid[faces], axis=1)
    tuv = uv[faces]
    with np.errstate(invalid="ignore"):
        e1 = tuv[:, 1] - tuv[:, 0]
        e2 = tuv[:, 2] - tuv[:, 0]
        area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    keep = tri_ok & (np.abs(area2) > 1e-14)
    face_rows, px, py = _bbox_pairs(tuv, keep, w, h, 0.0)
    if len(face_rows) == 0:
        return depth_img.reshape(h, w), face_img.reshape(h, w), bary_img.reshape(h, w, 3)
    p = np.stack([px + 0.5, py + 0.5], axis=1)
    t = tuv[face_rows]
    denom = area2[face_rows]

    def cross2(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    w0 = cross2(t[:, 1] - p, t[:, 2] - p) / denom
    w1 = cross2(t[:, 2] - p, t[:, 0] - p) / denom
    w2 = 1.0 - w0 - w1
    covered = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
    if not covered.any():
        return depth_img.reshape(h, w), face_img.reshape(h, w), bary_img.reshape(h, w, 3)
    face_rows = face_rows[covered]
    bary = np.stack([w0[covered], w1[covered], w2[covered]], axis=1)
    pix = py[covered] * w + px[covered]
    d = np.einsum("ij,ij->i", bary, depth[faces[face_rows]])
    order = np.lexsort((face_rows, d, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    sel = order[first]
    depth_img[pix[sel]] = d[sel]
    face_img[pix[sel]] = face_rows[sel]
    bary_img[pix[sel]] = bary[sel]
    return depth_img.reshape(h, w), face_img.reshape(h, w), bary_img.reshape(h, w, 3)


def render_depth(surface: SurfaceMesh, camera: Camera, config: RenderConfig) -> np.ndarray:
    """Hard z-buffer depth; background pixels carry the sentinel."""
    depth_img, _, _ = _rasterize_hard(surface, camera, config)
    return depth_img


def _face_normals_world(surface: SurfaceMesh) -> tuple[np.ndarray, np.ndarray]:
    v = surface.vertices[surface.faces]
    m = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    norm = np.linalg.norm(m, axis=1)
    n = m / np.maximum(norm, 1e-30)[:, None]
    return n, norm


def render_normal(surface: SurfaceMesh, camera: Camera, config: RenderConfig) -> np.ndarray:
    """Flat per-face camera-space unit normals; background is the zero vector."""
    h, w = camera.height, camera.width
    _, face_img, _ = _rasterize_hard(surface, camera, config)
    out = np.zeros((h, w, 3))
    covered = face_img >= 0
    if covered.any():
        n_world, _ = _face_normals_world(surface)
        n_cam = n_world @ camera.rotation.T
        out[covered] = n_cam[face_img[covered]]
    return out


def _uv_grad_to_world(guv, xc, depth, camera):
    """Chain per-vertex (u, v) gradients through the projection."""
    fx, fy = camera.fx, camera.fy
    d = depth
    gu, gv = guv[:, 0], guv[:, 1]
    vec = np.zeros((len(guv), 3))
    ok = d > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        vec[ok, 0] = gu[ok] * fx / d[ok]
        vec[ok, 1] = gv[ok] * fy / d[ok]
        vec[ok, 2] = (
            gu[ok] * fx * xc[ok, 0] / d[ok] ** 2
            + gv[ok] * fy * xc[ok, 1] / d[ok] ** 2
        )
    return vec @ camera.rotation


def render_loss_and_grad(
    sphere_set: TetSphereSet,
    views,
    config: RenderConfig,
    weights: LossWeights | None = None,
) -> tuple[float, np.ndarray]:
    """Composite rendering loss and its gradient on union-surface vertices.

    Per view: MSE(soft silhouette, mask) over all pixels, plus weighted
    MSE(depth) and mean(1 - n.n_target), both restricted to pixels that are
    foreground in the rendering and in the target. The total is the mean
    over views, so adding views refines rather than rescales the loss. The
    returned gradient rows align with union_surfaces(sphere_set) vertices;
    interior tet vertices are untouched by construction.

    The depth chain holds screen-space barycentric coordinates fixed and
    the hard pixel-to-face assignment is treated as constant, the standard
    subgradient routing for z-buffer rasterization.
    """
    views = list(views)
    if len(views) == 0:
        raise ValueError("render_loss_and_grad needs at least one view")
    if weights is None:
        weights = LossWeights()
    surface = union_surfaces(sphere_set)
    verts = surface.vertices
    faces = surface.faces
    grad = np.zeros_like(verts)
    phi = 0.0

    for view in views:
        cam = view.camera
        h, w = cam.height, cam.width
        npix = h * w
        uv, depth, valid = _project_for_raster(verts, cam, config.near)
        xc = verts @ cam.rotation.T + cam.translation

        # soft silhouette term
        tri_ok = np.all(valid[faces], axis=1)
        tuv = uv[faces]
        area2 = np.zeros(len(faces))
        ok = np.nonzero(tri_ok)[0]
        if len(ok):
            e1 = tuv[ok, 1] - tuv[ok, 0]
            e2 = tuv[ok, 2] - tuv[ok, 0]
            area2[ok] = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        keep = tri_ok & (area2 > 0.0)
        s, pairs = _silhouette_forward(uv, faces, keep, w, h, config.sigma, config.cutoff())
        img = 1.0 - np.exp(-s)
        resid = img - view.mask.ravel()
        phi += float(np.dot(resid, resid)) / npix
        guv = np.zeros((len(verts), 2))
        if pairs is not None:
            g_img = 2.0 * resid / npix
            gz = g_img[pairs["pix"]] * np.exp(-s[pairs["pix"]]) * expit(pairs["z"])
            gd2 = gz * pairs["sign"] / config.sigma
            e = pairs["edge"]
            va = faces[pairs["face"], e]
            vb = faces[pairs["face"], (e + 1) % 3]
            t = pairs["t"]
            # envelope theorem on the clamped segment parameter
            ga = (gd2 * -2.0 * (1.0 - t))[:, None] * pairs["diff"]
            gb = (gd2 * -2.0 * t)[:, None] * pairs["diff"]
            np.add.at(guv, va, ga)
            np.add.at(guv, vb, gb)

        # hard raster, shared by the depth and normal terms
        need_raster = view.depth is not None or view.normal is not None
        if need_raster:
            depth_img, face_img, bary_img = _rasterize_hard(surface, cam, config)
            rendered_fg = face_img >= 0

        if view.depth is not None and weights.depth != 0.0:
            fg = rendered_fg & (view.depth > 0)
            n_fg = int(np.count_nonzero(fg))
            if n_fg:
                res = depth_img[fg] - view.depth[fg]
                phi += weights.depth * float(np.dot(res, res)) / n_fg
                coeff = 2.0 * weights.depth * res / n_fg
                f_sel = face_img[fg]
                bary = bary_img[fg]
                gdepth = np.zeros(len(verts))
                for k in range(3):
                    np.add.at(gdepth, faces[f_sel, k], coeff * bary[:, k])
                # depth d = -(R[2] . X + t_z)
                grad += gdepth[:, None] * (-cam.rotation[2])[None, :]

        if view.normal is not None and weights.normal != 0.0:
            t_norm = np.linalg.norm(view.normal, axis=2)
            fg = rendered_fg & (t_norm > 0.5)
            n_fg = int(np.count_nonzero(fg))
            if n_fg:
                n_world, m_len = _face_normals_world(surface)
                n_cam = n_world @ cam.rotation.T
                f_sel = face_img[fg]
                target_n = view.normal[fg]
                dots = np.einsum("ij,ij->i", n_cam[f_sel], target_n)
                phi += weights.normal * float(np.mean(1.0 - dots))
                # accumulate dL/dn_cam per face, then chain to world verts
                g_ncam = np.zeros((len(faces), 3))
                np.add.at(g_ncam, f_sel, (-weights.normal / n_fg) * target_n)
                g_nworld = g_ncam @ cam.rotation
                touched = np.nonzero(np.any(g_nworld != 0.0, axis=1))[0]
                if len(touched):
                    n_t = n_world[touched]
                    g_t = g_nworld[touched]
                    g_m = (
                        g_t - n_t * np.einsum("ij,ij->i", n_t, g_t)[:, None]
                    ) / np.maximum(m_len[touched], 1e-30)[:, None]
                    tv = verts[faces[touched]]
                    np.add.at(grad, faces[touched, 0], np.cross(tv[:, 1] - tv[:, 2], g_m))
                    np.add.at(grad, faces[touched, 1], np.cross(tv[:, 2] - tv[:, 0], g_m))
                    np.add.at(grad, faces[touched, 2], np.cross(tv[:, 0] - tv[:, 1], g_m))

        grad += _uv_grad_to_world(guv, xc, depth, cam)

    # mean over views: more views refine the signal instead of outscaling
    # the geometry-energy terms
    return phi / len(views), grad / len(views)


# ---------------------------------------------------------------------------
# image and camera-file IO


def read_mask(path) -> np.ndarray:
    """Grayscale PNG to float in [0, 1]; 8- and 16-bit images supported."""
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        if im.mode in ("I;16", "I"):
            return np.asarray(im, dtype=np.float64) / 65535.0
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_mask(path, image: np.ndarray) -> None:
    """Float [0, 1] image to 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8), mode="L").save(path)


def write_depth_npy(path, depth: np.ndarray) -> None:
    np.save(path, np.asarray(depth, dtype=np.float64))


def write_depth_png16(path, depth: np.ndarray, background: float = 0.0) -> None:
    """16-bit preview PNG: 0 = background, 1..65535 linear over [min, max]."""
    d = np.asarray(depth, dtype=np.float64)
    fg = d != background
    out = np.zeros(d.shape, dtype=np.uint16)
    if fg.any():
        lo, hi = d[fg].min(), d[fg].max()
        span = hi - lo if hi > lo else 1.0
        out[fg] = (1.0 + 65534.0 * (d[fg] - lo) / span).round().astype(np.uint16)
    Image.fromarray(out).save(path)


def write_normal_npy(path, normal: np.ndarray) -> None:
    np.save(path, np.asarray(normal, dtype=np.float64))


def write_normal_png(path, normal: np.ndarray) -> None:
    """8-bit RGB preview: components mapped (n + 1) / 2; background stays 0."""
    n = np.asarray(normal, dtype=np.float64)
    fg = np.linalg.norm(n, axis=2) > 1e-9
    arr = np.zeros(n.shape, dtype=np.uint8)
    arr[fg] = np.clip((n[fg] + 1.0) * 0.5 * 255.0, 0, 255).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _camera_from_entry(entry, path, index) -> Camera:
    try:
        k = np.asarray(entry["intrinsics"], dtype=np.float64).reshape(3, 3)
        w2c = np.asarray(entry["world_to_camera"], dtype=np.float64).reshape(4, 4)
        width = int(entry["width"])
        height = int(entry["height"])
    except (KeyError, ValueError) as exc:
        raise MeshError(f"{path}: camera entry {index}: {exc}") from None
    return Camera(intrinsics=k, world_to_camera=w2c, width=width, height=height)


def load_cameras(path) -> list:
    """Cameras only (no images) from a camera JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or not entries:
        raise MeshError(f"{path}: expected a non-empty JSON list of cameras")
    return [_camera_from_entry(e, path, i) for i, e in enumerate(entries)]


def load_views(path, base_dir=None) -> list:
    """Views (cameras + target images) from a camera JSON file.

    Image paths are resolved relative to base_dir (default: the JSON file's
    directory). mask_path is required per entry; depth_path/normal_path are
    optional .npy arrays.
    """
    with open(path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or not entries:
        raise MeshError(f"{path}: expected a non-empty JSON list of views")
    base = base_dir if base_dir is not None else os.path.dirname(os.path.abspath(path))
    views = []
    for i, entry in enumerate(entries):
        cam = _camera_from_entry(entry, path, i)
        if "mask_path" not in entry:
            raise MeshError(f"{path}: camera entry {i} has no mask_path")
        mask = read_mask(os.path.join(base, entry["mask_path"]))
        depth = None
        normal = None
        if entry.get("depth_path"):
            depth = np.load(os.path.join(base, entry["depth_path"]))
        if entry.get("normal_path"):
            normal = np.load(os.path.join(base, entry["normal_path"]))
        views.append(View(camera=cam, mask=mask, depth=depth, normal=normal))
    return views


def save_camera_file(path, entries) -> None:
    """Write the camera JSON file.

    entries: iterable of dicts with a Camera under "camera" plus optional
    mask_path/depth_path/normal_path strings.
    """
    out = []
    for e in entries:
        cam: Camera = e["camera"]
        rec = {
            "intrinsics": [float(v) for v in cam.intrinsics.ravel()],
            "world_to_camera": [float(v) for v in cam.world_to_camera.ravel()],
            "width": cam.width,
            "height": cam.height,
        }
        for key in ("mask_path", "depth_path", "normal_path"):
            if e.get(key):
                rec[key] = e[key]
        out.append(rec)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=1)
