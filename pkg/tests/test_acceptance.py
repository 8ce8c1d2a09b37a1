"""Release gate: one test per numbered acceptance criterion.

Each test wraps its checks in the criterion() context, which reports a
one-line PASS/FAIL verdict in the terminal summary (see conftest) and
fails the test if any check inside missed its tolerance. Criteria 4, 5
and 10 run the full reconstruction loop, so the whole file takes roughly
fifteen minutes of CPU; everything else is seconds.

Criterion 9 audits topology fingerprints collected from every
reconstruction the other criteria perform, so its test is defined last.
"""

import math
import os
import time
from contextlib import contextmanager

import numpy as np

import conftest
from tetrecon.cli import main
from tetrecon.deformation import (
    biharmonic_energy,
    build_laplacian,
    deformation_gradients,
    geometric_energy_gradient,
    inversion_penalty,
)
from tetrecon.initialization import (
    CoverageProblem,
    initialize_spheres,
    load_init_json,
    solve_set_cover_exact,
    solve_set_cover_greedy,
)
from tetrecon.metrics import (
    apply_rigid_transform,
    area_length_ratio,
    chamfer,
    connected_components,
    f_score,
    icp_align,
    manifoldness_check,
    volume_iou,
)
from tetrecon.optimizer import ReconstructionConfig, cosine_weight_schedule, reconstruct
from tetrecon.renderer import (
    LossWeights,
    RenderConfig,
    View,
    look_at_camera,
    render_depth,
    render_loss_and_grad,
    render_normal,
    render_silhouette_soft,
)
from tetrecon.tet_mesh import (
    SurfaceMesh,
    TetMesh,
    TetSphereSet,
    boundary_faces,
    generate_unit_tetsphere,
    instantiate_spheres,
    topology_fingerprint,
    union_surfaces,
    union_vertex_owners,
)
from util_shapes import (
    build_torus_fixture,
    cube_mesh,
    lattice_mesh,
    ring_cameras,
    sphere_chamfer,
    sphere_mask,
    torus_chamfer,
)

# topology fingerprints (before, after) from every reconstruction run in
# this file; criterion 9 audits them, so its test must execute last
FINGERPRINTS = {}

RECONSTRUCTION_LABELS = (
    "shrink-reg",
    "shrink-zero-reg",
    "torus-24view",
    "torus-w1=1e-06",
    "torus-w1=5e-06",
    "torus-w1=5e-05",
)


class Checks(list):
    def add(self, passed, detail):
        self.append((bool(passed), detail))


@contextmanager
def criterion(num, label):
    checks = Checks()
    try:
        yield checks
    except Exception as exc:  # noqa: BLE001 - verdict line must still appear
        conftest.record_criterion(num, label, False, f"{type(exc).__name__}: {exc}")
        raise
    ok = bool(checks) and all(passed for passed, _ in checks)
    parts = [d if passed else f"FAILED {d}" for passed, d in checks]
    conftest.record_criterion(num, label, ok, "; ".join(parts))
    assert ok, f"criterion {num} ({label}): " + "; ".join(
        d for passed, d in checks if not passed
    )


def single_triangle(tri_verts):
    return SurfaceMesh(
        vertices=np.asarray(tri_verts, dtype=np.float64), faces=np.array([[0, 1, 2]])
    )


def run_and_fingerprint(label, sphere_set, views, config):
    before = topology_fingerprint(sphere_set)
    sphere_set, report = reconstruct(sphere_set, views, config)
    FINGERPRINTS[label] = (before, topology_fingerprint(sphere_set))
    return sphere_set, report


def fd_worst_rel(ss, views, cfg, weights, n_checks, seed=1, eps=1e-6):
    """Max relative error of the analytic render gradient vs central FD."""
    rng = np.random.default_rng(seed)
    _, grad = render_loss_and_grad(ss, views, cfg, weights)
    sphere_idx, vert_idx = union_vertex_owners(ss)
    base = [s.vertices.copy() for s in ss.spheres]
    worst = 0.0
    for flat in rng.choice(grad.size, min(n_checks, grad.size), replace=False):
        row, col = divmod(int(flat), 3)
        vals = {}
        for sign in (1, -1):
            for s, b in zip(ss.spheres, base):
                s.vertices[:] = b
            ss.spheres[sphere_idx[row]].vertices[vert_idx[row], col] += sign * eps
            vals[sign], _ = render_loss_and_grad(ss, views, cfg, weights)
        for s, b in zip(ss.spheres, base):
            s.vertices[:] = b
        fd = (vals[1] - vals[-1]) / (2 * eps)
        worst = max(worst, abs(fd - grad[row, col]) / max(abs(fd), abs(grad[row, col]), 1e-8))
    return worst


def test_criterion_01_geometric_gradient():
    with criterion(1, "geometric gradient matches finite differences") as checks:
        dims_pool = [
            (2, 2, 3), (2, 3, 2), (3, 2, 2), (2, 3, 3), (3, 2, 3),
            (3, 3, 2), (3, 3, 3), (2, 2, 4), (2, 4, 2), (4, 2, 2),
        ]
        w1, w2 = 2e-3, 4e-3
        worst = 0.0
        start = time.perf_counter()
        for i in range(20):
            rng = np.random.default_rng(100 + i)
            mesh = lattice_mesh(dims_pool[i % len(dims_pool)], rng)
            assert 50 <= mesh.num_tets <= 200
            lap = build_laplacian(mesh)
            bbox = float(np.linalg.norm(np.ptp(mesh.vertices, axis=0)))
            x = mesh.vertices + 0.02 * bbox * rng.standard_normal(mesh.vertices.shape)

            def energy(xf):
                f = deformation_gradients(xf.reshape(-1, 3), mesh)
                return w1 * biharmonic_energy(f, lap) + w2 * inversion_penalty(f)

            grad = geometric_energy_gradient(x, mesh, lap, w1, w2).ravel()
            eps = 1e-5 * bbox
            flat = x.ravel().copy()
            for j in rng.choice(flat.size, 12, replace=False):
                plus, minus = flat.copy(), flat.copy()
                plus[j] += eps
                minus[j] -= eps
                fd = (energy(plus) - energy(minus)) / (2 * eps)
                worst = max(worst, abs(fd - grad[j]) / max(abs(fd), abs(grad[j]), 1e-10))
        elapsed = time.perf_counter() - start
        checks.add(worst < 1e-4, f"worst rel err {worst:.2e} < 1e-4 over 20 meshes")
        checks.add(elapsed < 30.0, f"wall {elapsed:.1f}s < 30s")


def test_criterion_02_renderer_gradient():
    with criterion(2, "render loss gradient matches finite differences") as checks:
        start = time.perf_counter()
        cfg = RenderConfig(sigma=0.3)
        cams = ring_cameras([(0.0, 1), (60.0, 1)], dist=3.0, focal=20.0, size=24)

        # silhouette term alone, 48-face ball against analytic disk targets
        rng = np.random.default_rng(2)
        tpl = generate_unit_tetsphere(1)
        ss = instantiate_spheres(tpl, [[0, 0, 0]], [0.7])
        for s in ss.spheres:
            s.vertices[:] = s.vertices + 0.02 * rng.standard_normal(s.vertices.shape)
        assert len(union_surfaces(ss).faces) <= 50
        sil_views = [View(camera=c, mask=sphere_mask(c, [0, 0, 0], 0.45)) for c in cams]
        worst_sil = fd_worst_rel(ss, sil_views, cfg, LossWeights(), 12)
        checks.add(worst_sil < 1e-3, f"silhouette {worst_sil:.2e} < 1e-3")

        # silhouette + normal, targets rendered from a smaller ball
        tsurf = union_surfaces(instantiate_spheres(tpl, [[0, 0, 0]], [0.6]))
        sn_views = [
            View(
                camera=c,
                mask=render_silhouette_soft(tsurf, c, cfg),
                normal=render_normal(tsurf, c, cfg),
            )
            for c in cams
        ]
        worst_sn = fd_worst_rel(ss, sn_views, cfg, LossWeights(depth=1.0, normal=0.1), 12)
        checks.add(worst_sn < 1e-3, f"silhouette+normal {worst_sn:.2e} < 1e-3")

        # full loss including depth; the depth chain holds screen-space
        # barycentrics fixed, so FD agrees on fronto-parallel faces
        verts = np.array(
            [[-0.4, -0.4, 0.0], [0.5, -0.35, 0.0], [0.05, 0.5, 0.0], [0.0, 0.0, -0.8]]
        )
        vol = np.linalg.det(np.stack([verts[1] - verts[0], verts[2] - verts[0], verts[3] - verts[0]]))
        tets = np.array([[0, 1, 2, 3]]) if vol > 0 else np.array([[0, 2, 1, 3]])
        tet_ss = TetSphereSet(
            spheres=[TetMesh(vertices=verts.copy(), tets=tets)],
            centers=np.zeros((1, 3)),
            radii=np.ones(1),
        )
        tverts = verts.copy()
        tverts[:, :2] *= 0.9
        tmesh = TetMesh(vertices=tverts, tets=tets)
        tsurf2 = union_surfaces(
            TetSphereSet(spheres=[tmesh], centers=np.zeros((1, 3)), radii=np.ones(1))
        )
        cam = look_at_camera(
            eye=[0, 0, 3], target=[0, 0, 0], up=[0, 1, 0], focal=30, width=16, height=16
        )
        full_cfg = RenderConfig(sigma=0.4)
        full_views = [
            View(
                camera=cam,
                mask=render_silhouette_soft(tsurf2, cam, full_cfg),
                depth=render_depth(tsurf2, cam, full_cfg),
                normal=render_normal(tsurf2, cam, full_cfg),
            )
        ]
        worst_full = fd_worst_rel(
            tet_ss, full_views, full_cfg, LossWeights(depth=1.0, normal=0.1), 12
        )
        checks.add(worst_full < 1e-3, f"full loss {worst_full:.2e} < 1e-3")

        elapsed = time.perf_counter() - start
        checks.add(elapsed < 60.0, f"wall {elapsed:.1f}s < 60s")


def test_criterion_03_affine_invariance():
    with criterion(3, "positive affine maps carry zero energy") as checks:
        tpl = generate_unit_tetsphere(2)
        lap = build_laplacian(tpl)
        rng = np.random.default_rng(3)
        worst_bih = 0.0
        worst_pen = 0.0
        done = 0
        while done < 100:
            affine = rng.uniform(-1.5, 1.5, (3, 3))
            if np.linalg.det(affine) <= 0.05:
                continue
            shift = rng.uniform(-1.0, 1.0, 3)
            x = tpl.vertices @ affine.T + shift
            field = deformation_gradients(x, tpl)
            worst_bih = max(worst_bih, biharmonic_energy(field, lap))
            worst_pen = max(worst_pen, inversion_penalty(field))
            done += 1
        checks.add(worst_bih < 1e-10, f"worst biharmonic {worst_bih:.2e} < 1e-10")
        checks.add(worst_pen == 0.0, f"worst penalty {worst_pen!r} == 0 exactly")


def test_criterion_04_shrink_regression():
    with criterion(4, "sphere shrink stays inversion-free with regularization") as checks:
        start = time.perf_counter()
        cams = ring_cameras([(0.0, 8), (45.0, 4), (-45.0, 4)], dist=3.0, focal=110.0, size=128)
        views = [View(camera=c, mask=sphere_mask(c, [0.0, 0.0, 0.0], 0.5)) for c in cams]
        tpl = generate_unit_tetsphere(2)

        reg_config = ReconstructionConfig(
            iterations=1500, learning_rate=1e-3, w1=5e-6, w2=2e-5, sigma=0.1
        )
        ss = instantiate_spheres(tpl, [[0, 0, 0]], [1.0])
        ss, report = run_and_fingerprint("shrink-reg", ss, views, reg_config)
        inv_peak = max(r["inverted"] for r in report["records"])
        checks.add(
            report["final_inverted"] == 0,
            f"regularized final inversions {report['final_inverted']} == 0"
            f" (transient peak {inv_peak})",
        )
        cham, _, _ = sphere_chamfer(ss, 0.5)
        checks.add(cham < 0.01, f"chamfer to analytic sphere {cham:.4f} < 0.01")

        zero_config = ReconstructionConfig(
            iterations=400, learning_rate=1e-3, w1=0.0, w2=0.0, sigma=0.1
        )
        ss0 = instantiate_spheres(tpl, [[0, 0, 0]], [1.0])
        ss0, report0 = run_and_fingerprint("shrink-zero-reg", ss0, views, zero_config)
        checks.add(
            report0["final_inverted"] > 0,
            f"unregularized inversions {report0['final_inverted']} > 0",
        )

        elapsed = time.perf_counter() - start
        checks.add(elapsed < 600.0, f"wall {elapsed:.0f}s < 600s")


def test_criterion_05_torus_reconstruction(tmp_path_factory):
    with criterion(5, "torus from 24 views through the init command") as checks:
        start = time.perf_counter()
        workdir = str(tmp_path_factory.mktemp("torus24"))
        _, _, views = build_torus_fixture(workdir, n_views=24, size=128)

        init_path = os.path.join(workdir, "init.json")
        code = main(
            ["init", workdir, os.path.join(workdir, "cameras.json"),
             "--grid", "32", "-o", init_path]
        )
        checks.add(code == 0, "init command exit 0")
        centers, radii, _ = load_init_json(init_path)

        tpl = generate_unit_tetsphere(2)
        ss = instantiate_spheres(tpl, centers, radii)
        cc_before = connected_components(union_surfaces(ss))
        config = ReconstructionConfig(
            iterations=400, learning_rate=1e-3, w1=5e-6, w2=2e-5, sigma=0.1
        )
        ss, report = run_and_fingerprint("torus-24view", ss, views, config)

        cham, _, _ = torus_chamfer(ss)
        checks.add(cham < 0.03, f"chamfer {cham:.4f} < 0.03 with {len(centers)} spheres")
        manifold_ok = all(manifoldness_check(boundary_faces(s)) for s in ss.spheres)
        checks.add(manifold_ok, "every sphere boundary manifold")
        cc_after = connected_components(union_surfaces(ss))
        checks.add(cc_before == cc_after, f"component count stable ({cc_before})")

        elapsed = time.perf_counter() - start
        checks.add(elapsed < 1200.0, f"wall {elapsed:.0f}s < 1200s")


def test_criterion_06_scheduler_exactness():
    with criterion(6, "learning-rate schedule hits its pinned points") as checks:
        n = 3000
        e0 = abs(cosine_weight_schedule(0, n) - 1.0)
        en = abs(cosine_weight_schedule(n, n) - 4.0)
        e3 = abs(cosine_weight_schedule(n / 3, n) - 2.0)
        checks.add(e0 < 1e-12, f"eta(0)=1 err {e0:.1e}")
        checks.add(en < 1e-12, f"eta(n)=4 err {en:.1e}")
        checks.add(e3 < 1e-12, f"eta(n/3)=2 err {e3:.1e}")


def test_criterion_07_set_cover_quality():
    with criterion(7, "greedy set cover feasible and near-optimal") as checks:
        rng = np.random.default_rng(7)
        worst_ratio = 0.0
        start = time.perf_counter()
        for _ in range(200):
            m = int(rng.integers(3, 16))
            coverage = rng.random((m, m)) < rng.uniform(0.2, 0.6)
            np.fill_diagonal(coverage, True)
            problem = CoverageProblem(
                candidates=rng.uniform(-1, 1, (m, 3)),
                radii=rng.uniform(0.05, 0.3, m),
                coverage=coverage,
            )
            greedy = solve_set_cover_greedy(problem)
            # D @ v >= 1: every row must be covered by a selected column
            assert coverage[:, greedy].any(axis=1).all(), "greedy cover infeasible"
            exact = solve_set_cover_exact(problem)
            ratio = len(greedy) / len(exact)
            worst_ratio = max(worst_ratio, ratio / (1.0 + math.log(m)))
            assert len(greedy) <= (1.0 + math.log(m)) * len(exact) + 1e-9
        elapsed = time.perf_counter() - start
        checks.add(
            worst_ratio <= 1.0 + 1e-9,
            f"worst greedy/exact vs (1+ln m) bound {worst_ratio:.3f} <= 1",
        )
        checks.add(elapsed < 60.0, f"wall {elapsed:.1f}s < 60s")


def test_criterion_08_metric_oracles():
    with criterion(8, "metric implementations match independent oracles") as checks:
        rng = np.random.default_rng(8)
        a = rng.uniform(0, 1, (100, 3))
        b = rng.uniform(0, 1, (100, 3))
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
        brute_cham = 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())
        err_cham = abs(chamfer(a, b) - brute_cham)
        checks.add(err_cham < 1e-12, f"chamfer vs brute force {err_cham:.1e} < 1e-12")

        tau = 0.2
        precision = (d.min(axis=1) <= tau).mean()
        recall = (d.min(axis=0) <= tau).mean()
        brute_f = 2 * precision * recall / (precision + recall)
        err_f = abs(f_score(a, b, tau=tau) - brute_f)
        checks.add(err_f < 1e-12, f"f_score vs brute force {err_f:.1e} < 1e-12")

        equi = np.array([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
        alr_equi = area_length_ratio(single_triangle(equi))
        checks.add(abs(alr_equi - 1.0) < 1e-12, f"ALR equilateral err {abs(alr_equi - 1.0):.1e}")
        iso = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
        alr_iso = area_length_ratio(single_triangle(iso))
        checks.add(abs(alr_iso - 0.7174) < 1e-3, f"ALR right isoceles {alr_iso:.6f} = 0.7174 +- 1e-3")

        iou = volume_iou(cube_mesh([0, 0, 0]), cube_mesh([0.5, 0, 0]), resolution=64)
        checks.add(abs(iou - 1.0 / 3.0) < 0.02, f"shifted-cube IoU {iou:.4f} = 1/3 +- 0.02")

        worst_icp = 0.0
        for seed, angle, shift in ((1, 0.4, [0.2, -0.1, 0.3]), (2, -0.7, [0.05, 0.3, -0.2])):
            pts = np.random.default_rng(seed).standard_normal((80, 3))
            rot = np.array(
                [[np.cos(angle), -np.sin(angle), 0], [np.sin(angle), np.cos(angle), 0], [0, 0, 1]]
            )
            moved = pts @ rot.T + np.asarray(shift)
            transform = icp_align(moved, pts)
            err = max(
                np.abs(transform[:3, :3] - rot.T).max(),
                np.abs(transform[:3, 3] - (-rot.T @ np.asarray(shift))).max(),
                np.abs(apply_rigid_transform(moved, transform) - pts).max(),
            )
            worst_icp = max(worst_icp, err)
        checks.add(worst_icp < 1e-4, f"ICP recovery err {worst_icp:.1e} < 1e-4")


def test_criterion_10_coefficient_monotonicity(tmp_path_factory):
    with criterion(10, "larger smoothness weight drives biharmonic energy down") as checks:
        workdir = str(tmp_path_factory.mktemp("torus8"))
        _, _, views = build_torus_fixture(
            workdir, n_views=8, size=64, focal=55.0, rings=((20, 4), (60, 4))
        )
        centers, radii = initialize_spheres(views, grid_resolution=24)
        tpl = generate_unit_tetsphere(2)
        finals = []
        for w1 in (1e-6, 5e-6, 5e-5):
            ss = instantiate_spheres(tpl, centers, radii)
            config = ReconstructionConfig(
                iterations=150, learning_rate=1e-3, w1=w1, w2=2e-5, sigma=0.1
            )
            ss, report = run_and_fingerprint(f"torus-w1={w1:.0e}", ss, views, config)
            finals.append(report["final_biharmonic"])
        checks.add(
            finals[0] > finals[1] > finals[2],
            "final biharmonic strictly decreasing: "
            + " > ".join(f"{v:.3g}" for v in finals),
        )


def test_criterion_09_topology_preserved():
    # defined after criteria 4, 5 and 10 so every reconstruction has run
    with criterion(9, "connectivity byte-identical across every run") as checks:
        missing = [lbl for lbl in RECONSTRUCTION_LABELS if lbl not in FINGERPRINTS]
        checks.add(not missing, f"all {len(RECONSTRUCTION_LABELS)} runs recorded"
                   + (f", missing {missing}" if missing else ""))
        changed = [lbl for lbl, (before, after) in FINGERPRINTS.items() if before != after]
        checks.add(not changed, "fingerprints identical"
                   + (f", changed {changed}" if changed else f" on {len(FINGERPRINTS)} runs"))
