"""Reconstruction loop: Adam on vertex positions with scheduled regularizers.

Each iteration renders the union surface against every view, scatters the
image-space gradient back to the owning spheres, adds the analytic gradient
of the biharmonic and non-inversion terms (both scaled by the cosine
schedule), and takes one bias-corrected Adam step. Connectivity never
changes; only vertex positions move.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .deformation import (
    biharmonic_energy,
    build_laplacian,
    count_inverted,
    deformation_gradients,
    geometric_energy_gradient,
    inversion_penalty,
)
from .renderer import LossWeights, RenderConfig, render_loss_and_grad
from .tet_mesh import TetSphereSet, save_tetmesh, union_vertex_owners

__all__ = [
    "ReconstructionConfig",
    "OptimState",
    "cosine_weight_schedule",
    "adam_step",
    "reconstruct",
    "load_config",
    "CONFIG_PATH_KEYS",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconstructionConfig:
    """Knobs for one reconstruction run.

    w1 weighs the biharmonic smoothness term, w2 the inversion penalty;
    with scheduler on, both are multiplied by the cosine ramp each
    iteration. sigma is the soft-rasterizer sharpness in squared pixels,
    halved twice over the run when sigma_schedule is on.
    """

    iterations: int = 2000
    learning_rate: float = 1e-3
    w1: float = 5e-6
    w2: float = 2e-5
    scheduler: bool = True
    w_depth: float = 1.0
    w_normal: float = 0.1
    sigma: float = 0.1
    sigma_schedule: bool = True
    template_resolution: int = 2
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("w1 and w2 must be non-negative")
        if self.w_depth < 0 or self.w_normal < 0:
            raise ValueError("render weights must be non-negative")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.template_resolution < 1:
            raise ValueError("template_resolution must be at least 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be non-negative")


@dataclass
class OptimState:
    """Adam state over the flattened vertex coordinates."""

    x: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def cosine_weight_schedule(t: float, n: int) -> float:
    """Weight ramp 4^sin(t*pi/(2n)): 1 at t=0, 4 at t=n, monotone between.

    t past the horizon clamps to n with a warning; negative t is an error.
    """
    if n < 1:
        raise ValueError("horizon n must be at least 1")
    if t < 0:
        raise ValueError("iteration t must be non-negative")
    if t > n:
        log.warning("schedule queried at t=%s past horizon n=%d, clamping", t, n)
        t = n
    return float(4.0 ** math.sin(t * math.pi / (2.0 * n)))


def adam_step(
    state: OptimState,
    gradient: np.ndarray,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimState:
    """One bias-corrected Adam update; returns a new state with t advanced."""
    g = np.asarray(gradient, dtype=np.float64).ravel()
    if g.shape != state.x.shape:
        raise ValueError(f"gradient shape {g.shape} does not match x {state.x.shape}")
    if not np.all(np.isfinite(g)):
        bad = int(np.count_nonzero(~np.isfinite(g)))
        raise FloatingPointError(
            f"{bad} non-finite gradient entries at iteration {state.t + 1}"
        )
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    x = state.x - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return OptimState(x=x, m=m, v=v, t=t)


def _sigma_at(config: ReconstructionConfig, t: int) -> float:
    if not config.sigma_schedule:
        return config.sigma
    stage = min((3 * t) // config.iterations, 2)
    return config.sigma * 0.5**stage


def _set_positions(sphere_set: TetSphereSet, x: np.ndarray) -> None:
    off = 0
    for sphere in sphere_set.spheres:
        n = sphere.num_vertices
        sphere.vertices[:] = x[3 * off : 3 * (off + n)].reshape(n, 3)
        off += n


def _energy_snapshot(sphere_set: TetSphereSet, laplacian) -> tuple[float, float, int]:
    fields = [
        deformation_gradients(s.vertices, s) for s in sphere_set.spheres
    ]
    f_all = np.concatenate(fields, axis=0)
    return (
        biharmonic_energy(f_all, laplacian),
        inversion_penalty(f_all),
        count_inverted(f_all),
    )


def reconstruct(
    sphere_set: TetSphereSet,
    views,
    config: ReconstructionConfig,
    checkpoint_dir=None,
) -> tuple[TetSphereSet, dict]:
    """Deform the spheres to match the views; returns (spheres, report).

    The report carries one record per iteration, {t, phi, biharmonic,
    penalty, inverted}, all unweighted and measured before that iteration's
    step; the converged state is summarized in the final_* fields. Vertex
    positions are updated in place on the given set.
    """
    views = list(views)
    if len(views) == 0:
        raise ValueError("reconstruct needs at least one view")
    if sphere_set.num_spheres == 0:
        raise ValueError("reconstruct needs at least one sphere")

    laplacian = build_laplacian(sphere_set)
    sphere_idx, vertex_idx = union_vertex_owners(sphere_set)
    verts_per_sphere = sphere_set.spheres[0].num_vertices
    surf_to_global = sphere_idx * verts_per_sphere + vertex_idx

    x0 = np.concatenate([s.vertices.ravel() for s in sphere_set.spheres])
    state = OptimState(x=x0, m=np.zeros_like(x0), v=np.zeros_like(x0))
    weights = LossWeights(depth=config.w_depth, normal=config.w_normal)
    n = config.iterations
    records = []

    for t in range(n):
        _set_positions(sphere_set, state.x)
        render_cfg = RenderConfig(sigma=_sigma_at(config, t))
        phi, g_surf = render_loss_and_grad(sphere_set, views, render_cfg, weights)
        bih, pen, inv = _energy_snapshot(sphere_set, laplacian)
        records.append(
            {"t": t, "phi": phi, "biharmonic": bih, "penalty": pen, "inverted": inv}
        )
        if not math.isfinite(phi):
            raise RuntimeError(
                f"non-finite rendering loss {phi} at iteration {t} "
                f"(sigma={render_cfg.sigma:g}, inverted={inv})"
            )

        grad = np.zeros((sphere_set.num_spheres * verts_per_sphere, 3))
        np.add.at(grad, surf_to_global, g_surf)
        eta = cosine_weight_schedule(t, n) if config.scheduler else 1.0
        grad = grad.ravel() + geometric_energy_gradient(
            state.x, sphere_set, laplacian, config.w1 * eta, config.w2 * eta
        )
        state = adam_step(state, grad, config.learning_rate)

        if (
            checkpoint_dir is not None
            and config.checkpoint_every > 0
            and (t + 1) % config.checkpoint_every == 0
        ):
            _set_positions(sphere_set, state.x)
            _write_checkpoint(sphere_set, checkpoint_dir, t + 1)

    _set_positions(sphere_set, state.x)
    render_cfg = RenderConfig(sigma=_sigma_at(config, n - 1))
    phi, _ = render_loss_and_grad(sphere_set, views, render_cfg, weights)
    bih, pen, inv = _energy_snapshot(sphere_set, laplacian)

    report = {
        "iterations": n,
        "final_phi": phi,
        "final_biharmonic": bih,
        "final_penalty": pen,
        "final_inverted": inv,
        "records": records,
    }
    return sphere_set, report


def _write_checkpoint(sphere_set: TetSphereSet, directory, iteration: int) -> None:
    os.makedirs(directory, exist_ok=True)
    for k, sphere in enumerate(sphere_set.spheres):
        path = os.path.join(directory, f"checkpoint_{iteration:05d}_sphere_{k:03d}.tet")
        save_tetmesh(sphere, path)


_BOOL_WORDS = {
    "true": True,
    "false": False,
    "on": True,
    "off": False,
    "yes": True,
    "no": False,
    "1": True,
    "0": False,
}

_INT_KEYS = {"iterations", "template_resolution", "seed", "checkpoint_every"}
_FLOAT_KEYS = {"learning_rate", "w1", "w2", "w_depth", "w_normal", "sigma"}
_BOOL_KEYS = {"scheduler", "sigma_schedule"}
CONFIG_PATH_KEYS = ("init", "views", "output_dir", "checkpoint_dir")


def load_config(path) -> tuple[ReconstructionConfig, dict]:
    """Parse a key=value run configuration file.

    Blank lines and # comments are ignored. Numeric and boolean keys map
    onto ReconstructionConfig fields; the path keys (init, views,
    output_dir, checkpoint_dir) are resolved relative to the file and
    returned in a separate dict. Unknown keys raise with the line number.
    """
    base = os.path.dirname(os.path.abspath(path))
    values: dict = {}
    paths: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip().lower()
            value = value.strip()
            if not value:
                raise ValueError(f"{path}:{lineno}: empty value for {key!r}")
            try:
                if key in _INT_KEYS:
                    values[key] = int(value)
                elif key in _FLOAT_KEYS:
                    values[key] = float(value)
                elif key in _BOOL_KEYS:
                    values[key] = _BOOL_WORDS[value.lower()]
                elif key in CONFIG_PATH_KEYS:
                    paths[key] = os.path.normpath(os.path.join(base, value))
                else:
                    raise KeyError
            except KeyError:
                if key in _BOOL_KEYS:
                    raise ValueError(
                        f"{path}:{lineno}: bad boolean {value!r} for {key!r}"
                    ) from None
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}") from None
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    try:
        config = ReconstructionConfig(**values)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    return config, paths
