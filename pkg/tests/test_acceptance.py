"""Acceptance suite: one test per criterion, tolerances pinned here.

Criterion status lines are printed in the terminal summary (see
conftest.pytest_terminal_summary).  Criterion 13 exercises the optional
HTTP bridge and is skipped when the bridge build is absent; everything
else runs self-contained.
"""

import hashlib
import json
import math
import shutil
import subprocess
import time
import urllib.request
from pathlib import Path

import numpy as np
import pytest

from wavedit.cli import main as cli_main
from wavedit.edit2d import EditConfig, run_edit_2d
from wavedit.imageio import write_ppm
from wavedit.mesh import Camera, GBuffer, make_quad, render_gbuffer
from wavedit.metrics import psnr, ssim, subband_energy
from wavedit.numerics import finite_diff_gradient, inner_product
from wavedit.prng import Prng, sample_gaussian
from wavedit.score import (
    AnalyticDdsProvider,
    GaussianPromptModel,
    NoiseSchedule,
    Prompt,
    dds_gradient,
    sds_gradient,
    tensor_to_wire,
    wire_to_tensor,
)
from wavedit.spectral import (
    build_lowpass_mask,
    dct2,
    dft2,
    idct2,
    idft2,
    masked_spectral_gradient,
)
from wavedit.subband import FreezePolicy, FrequencyState, decompose_latent
from wavedit.triplane import (
    FrequencyTriplane,
    MlpDecoder,
    TextureEditConfig,
    backprop_render,
    init_fit,
    init_triplane,
    reconstruct_planes,
    render_view,
    run_texture_edit,
    sample_triplane,
)
from wavedit.wavelet import daubechies_filters, wavedec2, waverec2, waverec2_adjoint

from conftest import band_max_diff, seeded_grid

SCHEDULE = NoiseSchedule()
LATENT_SHAPE = (4, 64, 64)


# ---------------------------------------------------------------------------
# 1. perfect reconstruction


def test_criterion_01_perfect_reconstruction():
    start = time.perf_counter()
    worst = 0.0
    for p in range(1, 9):
        f = daubechies_filters(p)
        for levels in range(1, 6):
            for trial in range(20):
                x = seeded_grid(LATENT_SHAPE, seed=100000 + 1000 * p + 50 * levels + trial)
                err = float(np.max(np.abs(waverec2(wavedec2(x, f, levels), f) - x)))
                worst = max(worst, err)
                assert err <= 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0, f"ran {elapsed:.1f}s, budget 30s"
    print(f"criterion 1: worst Linf {worst:.2e} over 800 round trips in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Parseval + adjoint identities


def test_criterion_02_parseval_and_adjoint():
    for p in (1, 3, 5, 8):
        f = daubechies_filters(p)
        for levels in (1, 3, 5):
            x = seeded_grid(LATENT_SHAPE, seed=200 + p + levels)
            s = wavedec2(x, f, levels)
            energy = math.fsum(float(np.sum(s.band(k) ** 2)) for k in s.keys())
            e_in = float(np.sum(x * x))
            assert abs(energy - e_in) / e_in <= 1e-9

            g = seeded_grid(LATENT_SHAPE, seed=300 + p + levels)
            adj = waverec2_adjoint(g, f, levels)
            lhs = inner_product(waverec2(s, f), g)
            rhs = math.fsum(inner_product(s.band(k), adj.band(k)) for k in s.keys())
            assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))

            assert band_max_diff(adj, wavedec2(g, f, levels)) <= 1e-10


# ---------------------------------------------------------------------------
# 3. subband shapes


def test_criterion_03_subband_shapes():
    state = decompose_latent(seeded_grid(LATENT_SHAPE, seed=7), 3, 3)
    assert state.band(("low",)).shape == (4, 8, 8)
    assert state.band((1, "hl")).shape == (4, 32, 32)
    assert state.band((2, "hl")).shape == (4, 16, 16)
    assert state.band((3, "hl")).shape == (4, 8, 8)


# ---------------------------------------------------------------------------
# 4 + 5. 500-step editing runs at 4x64x64 (shared between the criteria)


@pytest.fixture(scope="module")
def edit_runs():
    z_src = seeded_grid(LATENT_SHAPE, seed=11, scale=0.2, offset=0.5)
    delta = seeded_grid(LATENT_SHAPE, seed=12, scale=0.15)
    model = GaussianPromptModel(
        {"src": Prompt(z_src, 0.0), "tgt": Prompt(z_src + delta, 0.0)},
        schedule=SCHEDULE)
    provider = AnalyticDdsProvider(model, "src", "tgt", shared_noise=True)

    def run(policy, seed):
        cfg = EditConfig(filter_index=3, levels=3, policy=policy, steps=500,
                         optimizer="sgd", step_size=0.1, seed=seed,
                         trace_every=500)
        return run_edit_2d(z_src, provider, cfg)

    timed = time.perf_counter()
    freeze_high = run(FreezePolicy.high(3), seed=21)
    freeze_low = run(FreezePolicy.low(3), seed=22)
    stopgrad_runtime = time.perf_counter() - timed
    freeze_none = run(FreezePolicy.none(3), seed=23)
    return {
        "z_src": z_src,
        "delta": delta,
        "freeze_high": freeze_high,
        "freeze_low": freeze_low,
        "freeze_none": freeze_none,
        "stopgrad_runtime": stopgrad_runtime,
    }


def test_criterion_04_stopgrad_bit_exactness(edit_runs):
    src_state = decompose_latent(edit_runs["z_src"], 3, 3)

    high_state = edit_runs["freeze_high"].trace.snapshots[-1].state
    for key in src_state.keys():
        if key != ("low",):
            assert np.array_equal(high_state.band(key), src_state.band(key)), \
                f"detail band {key} drifted under freeze-high"

    low_state = edit_runs["freeze_low"].trace.snapshots[-1].state
    assert np.array_equal(low_state.band(("low",)), src_state.band(("low",)))

    runtime = edit_runs["stopgrad_runtime"]
    assert runtime < 60.0, f"two 500-step runs took {runtime:.1f}s, budget 60s"
    print(f"criterion 4: two 500-step runs in {runtime:.1f}s")


def test_criterion_05_analytic_fixed_point(edit_runs):
    z_src, delta = edit_runs["z_src"], edit_runs["delta"]
    fixed_point = z_src + delta

    err_none = float(np.max(np.abs(edit_runs["freeze_none"].z_out - fixed_point)))
    assert err_none <= 1e-3

    target_state = decompose_latent(fixed_point, 3, 3)
    high_state = edit_runs["freeze_high"].trace.snapshots[-1].state
    low_err = float(np.max(np.abs(high_state.band(("low",))
                                  - target_state.band(("low",)))))
    assert low_err <= 1e-3
    src_state = decompose_latent(z_src, 3, 3)
    for key in src_state.keys():
        if key != ("low",):
            assert np.array_equal(high_state.band(key), src_state.band(key))
    print(f"criterion 5: fixed-point Linf {err_none:.2e}, low-band err {low_err:.2e}")


# ---------------------------------------------------------------------------
# 6. noise cancellation vs randomness


def test_criterion_06_noise_cancellation():
    shape = (1, 8, 8)
    z_src = seeded_grid(shape, seed=31)
    delta = seeded_grid(shape, seed=32, scale=0.25)
    z_hat = seeded_grid(shape, seed=33)
    model = GaussianPromptModel(
        {"src": Prompt(z_src, 0.0), "tgt": Prompt(z_src + delta, 0.0)},
        schedule=SCHEDULE)
    t = 400

    eps_a = seeded_grid(shape, seed=34)
    eps_b = seeded_grid(shape, seed=35)
    g_a = dds_gradient(z_hat, z_src, t, eps_a, model, "src", "tgt")
    g_b = dds_gradient(z_hat, z_src, t, eps_b, model, "src", "tgt")
    assert float(np.max(np.abs(g_a - g_b))) <= 1e-12

    n = 10**4
    eps_stream = Prng(78)
    noise = Prng(77)
    draws = np.empty((n,) + shape)
    for i in range(n):
        eps = sample_gaussian(eps_stream, shape)
        draws[i] = dds_gradient(z_hat, z_src, t, eps, model, "src", "tgt",
                                shared_noise=False, noise_prng=noise)
    assert float(draws.std()) > 0.0
    mean = draws.mean(axis=0)
    stderr = draws.std(axis=0, ddof=1) / math.sqrt(n)
    z_scores = np.abs(mean - g_a) / stderr
    assert np.all(z_scores <= 3.0), f"max z-score {z_scores.max():.2f}"
    print(f"criterion 6: max Monte-Carlo z-score {z_scores.max():.2f} over {n} draws")


# ---------------------------------------------------------------------------
# 7. full-chain triplane gradient check


def _ensure_kink_margin(mlp, feats, margin):
    """Shift hidden biases so no pre-activation sits within `margin` of a
    ReLU kink at the operating point: the finite-difference sweep then never
    crosses a nondifferentiable point.  Later layers cannot disturb earlier
    pre-activations, so one ordered pass suffices."""
    weights = [list(wb) for wb in mlp.weights]
    for li in range(len(weights) - 1):
        current = MlpDecoder(weights=[tuple(wb) for wb in weights])
        _, pre, _ = current.forward(feats, want_cache=True)
        z = pre[li]
        b = weights[li][1].copy()
        for u in range(z.shape[1]):
            v = np.sort(z[:, u])
            if np.abs(v).min() >= margin:
                continue
            targets = [v[0] - 2 * margin, v[-1] + 2 * margin]
            widths = np.diff(v)
            for i in np.nonzero(widths >= 2.5 * margin)[0]:
                targets.append(0.5 * (v[i] + v[i + 1]))
            b[u] -= min(targets, key=abs)
        weights[li][1] = b
    out = MlpDecoder(weights=[tuple(wb) for wb in weights])
    _, pre, _ = out.forward(feats, want_cache=True)
    for z in pre[:-1]:
        assert float(np.abs(z).min()) >= margin
    return out


def _replace_band(ft, name, key, values):
    state = ft.state(name)
    sub = state.subbands.replace_bands({key: values})
    return ft.replace(name, FrequencyState(
        subbands=sub, filter_index=state.filter_index,
        levels=state.levels, latent_shape=state.latent_shape))


def test_criterion_07_triplane_gradient_check():
    start = time.perf_counter()
    prng = Prng(2024)
    states = []
    for i in range(3):
        plane = 0.5 * prng.split(f"plane{i}").gaussian_block(4 * 16 * 16)
        states.append(decompose_latent(plane.reshape(4, 16, 16), 3, 2))
    ft = FrequencyTriplane(*states)
    pts = 0.9 * (2.0 * prng.split("pts").uniform_block(8 * 8 * 3) - 1.0)
    gbuf = GBuffer(hit_mask=np.ones((1, 8, 8)),
                   positions=pts.reshape(3, 8, 8),
                   uv=np.zeros((2, 8, 8)))
    feats = sample_triplane(reconstruct_planes(ft),
                            gbuf.positions.reshape(3, -1).T)
    mlp = _ensure_kink_margin(MlpDecoder.create(prng.split("mlp"), feature_dim=12),
                              feats, margin=6e-4)
    target = 0.5 + 0.2 * prng.split("tgt").gaussian_block(3 * 8 * 8).reshape(3, 8, 8)

    def loss(ft_v, mlp_v):
        return 0.5 * float(np.sum((render_view(ft_v, mlp_v, gbuf) - target) ** 2))

    render = render_view(ft, mlp, gbuf)
    plane_grads, mlp_grads = backprop_render(ft, mlp, gbuf, render - target)

    def check(got, fd, what):
        scale = max(float(np.max(np.abs(fd))), 1e-10)
        rel = np.abs(got - fd) / np.maximum(np.abs(fd), 1e-3 * scale)
        assert float(rel.max()) <= 1e-4, f"{what}: rel err {rel.max():.2e}"
        return float(rel.max())

    worst = 0.0
    for name in ("xy", "xz", "zy"):
        state = ft.state(name)
        for key in state.keys():
            fd = finite_diff_gradient(
                lambda b, n=name, k=key: loss(_replace_band(ft, n, k, b), mlp),
                state.band(key).copy(), h=1e-4)
            worst = max(worst, check(plane_grads[name].band(key), fd,
                                     f"plane {name} band {key}"))

    for i, (w, b) in enumerate(mlp.weights):
        def loss_w(v, i=i, w=w, b=b):
            ws = list(mlp.weights)
            ws[i] = (v.reshape(w.shape), b)
            return loss(ft, MlpDecoder(weights=ws))

        fd_w = finite_diff_gradient(lambda v: loss_w(v),
                                    w.reshape(1, 1, -1).copy(), h=1e-4)
        worst = max(worst, check(mlp_grads[i][0].ravel(), fd_w.ravel(),
                                 f"mlp W{i}"))

        def loss_b(v, i=i, w=w, b=b):
            ws = list(mlp.weights)
            ws[i] = (w, v.ravel())
            return loss(ft, MlpDecoder(weights=ws))

        fd_b = finite_diff_gradient(lambda v: loss_b(v),
                                    b.reshape(1, 1, -1).copy(), h=1e-4)
        worst = max(worst, check(mlp_grads[i][1].ravel(), fd_b.ravel(),
                                 f"mlp b{i}"))

    elapsed = time.perf_counter() - start
    assert elapsed < 300.0, f"ran {elapsed:.1f}s, budget 300s"
    print(f"criterion 7: worst relative error {worst:.2e} in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 8. texture pipeline


def test_criterion_08_texture_pipeline():
    mesh = make_quad(z=0.0)
    # two-tone checkerboard keeps the shifted color target inside the
    # sigmoid-reachable gamut
    checker = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.float64)
    tex = np.repeat((0.2 + 0.6 * checker)[None], 3, axis=0)
    cam = Camera(position=(0, 0, 3), look_at=(0, 0, 0), fov_deg=45.0,
                 resolution=(64, 64))
    prng = Prng(0)
    ft = init_triplane(prng.split("planes"), channels=16, size=128,
                       filter_index=3, levels=2)
    mlp = MlpDecoder.create(prng.split("mlp"), feature_dim=48)
    fit = init_fit(ft, mlp, mesh, tex, [cam], steps=200, step_size=0.02)
    assert fit.losses[-1] <= 0.05, f"fit L1 {fit.losses[-1]:.4f}"

    class ShiftSds:
        def __init__(self, shift):
            self.shift = shift

        def gradient(self, z_hat, z_src, *, t, eps):
            model = GaussianPromptModel(
                {"tgt": Prompt(z_src + self.shift, 0.0)}, SCHEDULE)
            return sds_gradient(z_hat, t, eps, model, "tgt")

    gbuf = render_gbuffer(mesh, cam)
    rows, cols = gbuf.hit_indices()
    before = render_view(fit.triplane, fit.mlp, gbuf)
    shift = np.array([0.12, -0.08, 0.1])[:, None, None]
    target_mean = (before + shift)[:, rows, cols].mean(axis=1)
    cfg = TextureEditConfig(steps=200, seed=5, step_size=0.2)
    res = run_texture_edit(fit.triplane, fit.mlp, mesh, [cam], ShiftSds(shift),
                           FreezePolicy.high(2), cfg)
    after_mean = res.renders[0][:, rows, cols].mean(axis=1)
    mean_err = float(np.mean(np.abs(after_mean - target_mean)))
    assert mean_err <= 0.05, f"L1 of means {mean_err:.4f}"
    for name in ("xy", "xz", "zy"):
        a, b = fit.triplane.state(name), res.triplane.state(name)
        for key in a.keys():
            if key != ("low",):
                assert b.band(key) is a.band(key)
    print(f"criterion 8: fit L1 {fit.losses[-1]:.4f}, edit mean err {mean_err:.4f}")


# ---------------------------------------------------------------------------
# 9. spectral engines


def test_criterion_09_spectral_engines():
    x = seeded_grid((2, 16, 16), seed=41)
    assert float(np.max(np.abs(idct2(dct2(x)) - x))) <= 1e-9
    assert float(np.max(np.abs(idft2(dft2(x)) - x))) <= 1e-9

    mask = build_lowpass_mask(16, 16, 0.4, "radial")
    g = seeded_grid((1, 16, 16), seed=42)
    h = seeded_grid((1, 16, 16), seed=43)
    for transform in ("dct", "dft"):
        for keep in ("low", "high"):
            def proj(v, tr=transform, kp=keep):
                return masked_spectral_gradient(v, mask, tr, kp)

            once = proj(g)
            assert float(np.max(np.abs(proj(once) - once))) <= 1e-9
            assert abs(inner_product(proj(g), h) - inner_product(g, proj(h))) <= 1e-9

    # frozen-coefficient drift over 500 projected update steps
    rect = build_lowpass_mask(8, 8, 0.45, "rect")
    for transform, fwd, sel in (("dct", dct2, rect.dct_grid()),
                                ("dft", dft2, rect.dft_grid())):
        param = seeded_grid((1, 8, 8), seed=44)
        frozen0 = fwd(param) * (1.0 - sel)
        stream = np.random.default_rng(9)
        for _ in range(500):
            grad = stream.normal(size=param.shape)
            param = param - 0.05 * masked_spectral_gradient(grad, rect,
                                                            transform, "low")
        drift = float(np.max(np.abs(fwd(param) * (1.0 - sel) - frozen0)))
        assert drift <= 1e-6, f"{transform} frozen drift {drift:.2e}"


# ---------------------------------------------------------------------------
# 10. metrics


def test_criterion_10_metrics():
    img = np.clip(seeded_grid((3, 32, 32), seed=51, scale=0.2, offset=0.5), 0, 1)
    assert ssim(img, img) == 1.0
    base = np.zeros((3, 16, 16))
    assert abs(psnr(base, base + 0.1) - 20.0) <= 1e-9
    report = subband_energy(decompose_latent(seeded_grid(LATENT_SHAPE, seed=52), 3, 3))
    assert abs(math.fsum(f for _, _, f in report.entries) - 1.0) <= 1e-9


# ---------------------------------------------------------------------------
# 11. CLI reproducibility


def _tree_hashes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_criterion_11_cli_reproducibility(tmp_path):
    src = tmp_path / "src.ppm"
    img = np.round(np.clip(seeded_grid((3, 32, 32), seed=61, scale=0.15,
                                       offset=0.5), 0, 1) * 255) / 255
    write_ppm(img, src)

    invocations = [
        ["decompose", "--in", str(src), "--p", "3", "--J", "3", "--seed", "9"],
        ["edit2d", "--in", str(src), "--steps", "6", "--J", "2",
         "--policy", "freeze-high", "--seed", "9", "--trace-every", "3"],
        ["wavelet-sweep", "--in", str(src), "--p", "1..2", "--J", "1..2",
         "--steps", "2", "--seed", "9"],
    ]
    for i, argv in enumerate(invocations):
        out_a = tmp_path / f"a{i}"
        out_b = tmp_path / f"b{i}"
        assert cli_main(argv + ["--out", str(out_a)]) == 0
        assert cli_main(argv + ["--out", str(out_b)]) == 0
        hashes_a = _tree_hashes(out_a)
        assert hashes_a == _tree_hashes(out_b), f"{argv[0]} not reproducible"
        assert hashes_a  # produced something


# ---------------------------------------------------------------------------
# 12. figure-shaped outputs


def test_criterion_12_figure_layouts(tmp_path):
    src = tmp_path / "src.ppm"
    img = np.clip(seeded_grid((3, 32, 32), seed=71, scale=0.15, offset=0.5), 0, 1)
    write_ppm(img, src)

    sweep = tmp_path / "sweep"
    rc = cli_main(["wavelet-sweep", "--in", str(src), "--out", str(sweep),
                   "--steps", "2", "--seed", "3"])
    assert rc == 0
    cells = list(sweep.glob("edit_p*_J*.ppm"))
    assert len(cells) == 8 * 5  # full filter-index x level grid
    for p in range(1, 9):
        for j in range(1, 6):
            assert (sweep / f"edit_p{p}_J{j}.ppm").exists()
    assert (sweep / "sweep_grid.png").exists()

    dec = tmp_path / "dec"
    rc = cli_main(["decompose", "--in", str(src), "--out", str(dec),
                   "--p", "3", "--J", "3"])
    assert rc == 0
    maps = list(dec.glob("subband_*.ppm"))
    assert len(maps) == 3 * 3 + 1  # J*3 + 1 layout
    assert (dec / "subbands.png").exists()


# ---------------------------------------------------------------------------
# 13. bridge conformance (secondary component; skipped when not built)


BRIDGE_DIR = Path(__file__).resolve().parent.parent / "bridge"
BRIDGE_ENTRY = BRIDGE_DIR / "dist" / "src" / "main.js"


@pytest.fixture(scope="module")
def live_bridge():
    if shutil.which("node") is None or not BRIDGE_ENTRY.exists():
        pytest.skip("bridge build not present; primary suite runs without it")
    import socket

    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
    proc = subprocess.Popen(
        ["node", str(BRIDGE_ENTRY), "--port", str(port)],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
    endpoint = f"http://127.0.0.1:{port}"
    try:
        for _ in range(50):
            try:
                with urllib.request.urlopen(endpoint + "/v1/health", timeout=0.5):
                    break
            except OSError:
                time.sleep(0.1)
        else:
            raise RuntimeError("bridge did not come up")
        yield endpoint
    finally:
        proc.terminate()
        proc.wait(timeout=10)


# gradient floor for identical-input identical-prompt requests, pinned from
# one observed run of the deterministic bridge backend (f32 wire rounding)
BRIDGE_NOISE_FLOOR = 1e-6


def test_criterion_13_bridge_conformance(live_bridge):
    from wavedit.score import RemoteGradientClient

    client = RemoteGradientClient(live_bridge, "a stone wall", "a brick wall",
                                  timeout=10.0)
    assert client.health() == {"protocol_version": "1"}

    z = seeded_grid((4, 8, 8), seed=81, scale=0.3)
    grad = client.gradient(z, z + 0.25, t=300, eps=None)
    assert grad.shape == z.shape
    assert np.isfinite(grad).all()
    assert float(np.abs(grad).max()) > 0.0  # prompts differ: signal present

    same_client = RemoteGradientClient(live_bridge, "a stone wall",
                                       "a stone wall", timeout=10.0)
    g0 = same_client.gradient(z, z, t=300, eps=None)
    assert float(np.abs(g0).max()) <= BRIDGE_NOISE_FLOOR

    # wire-protocol conformance vectors from the primary's recorded stub
    wire = tensor_to_wire(z)
    assert np.max(np.abs(wire_to_tensor(wire) - z)) < 1e-6
    bad = json.dumps({
        "protocol_version": "1",
        "latent": tensor_to_wire(np.zeros((1, 2, 2))),
        "source_latent": tensor_to_wire(np.zeros((1, 4, 4))),
        "timestep": 100,
        "prompt_source": "x",
        "prompt_target": "y",
        "guidance_scale": 1.0,
    }).encode()
    req = urllib.request.Request(live_bridge + "/v1/gradient", data=bad,
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=10.0) as resp:
        payload = json.loads(resp.read())
    assert payload["error"]["code"] == "shape_mismatch"
