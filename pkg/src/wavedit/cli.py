"""Command-line surface.

Every subcommand writes into a fresh run directory (re-running into an
existing one fails), echoes its fully-resolved configuration as JSON, and
is bit-reproducible from that config plus ``--seed``.

Exit codes: 0 success, 2 invalid configuration or flags, 3 I/O failure,
4 provider failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, echo_config, load_config_file, resolve_config
from .container import ContainerError, load_triplane, save_state, save_triplane
from .edit2d import EditAborted, EditConfig, normalize_band, export_trace, run_edit_2d
from .figures import save_image_grid, save_loss_curve, save_norm_curves
from .imageio import ImageFormatError, read_image, write_image
from .mesh import Camera, load_obj, make_quad, make_torus, make_uv_sphere, normalize_mesh
from .metrics import psnr, ssim, subband_energy
from .prng import Prng
from .score import (
    AnalyticDdsProvider,
    GaussianPromptModel,
    NoiseSchedule,
    Prompt,
    ProviderError,
    RemoteGradientClient,
    ZeroProvider,
    sds_gradient,
)
from .spectral import build_lowpass_mask, dct2, dft2, masked_spectral_gradient
from .subband import FreezePolicy, decompose_latent
from .triplane import (
    MlpDecoder,
    TextureEditAborted,
    TextureEditConfig,
    init_fit,
    init_triplane,
    bake_texture,
    render_view,
    run_texture_edit,
)
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PROVIDER = 4


def _parse_shift(text: str) -> list:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad shift {text!r}; expected comma-separated floats") from None
    return values


def _shift_grid(shift, channels: int) -> np.ndarray:
    values = list(shift)
    if len(values) == 1:
        values = values * channels
    if len(values) != channels:
        raise ConfigError(f"shift has {len(values)} components, image has {channels}")
    return np.asarray(values, dtype=np.float64)[:, None, None]


def _make_run_dir(path_str: str) -> Path:
    out = Path(path_str)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.mkdir(exist_ok=False)  # run directories are immutable
    return out


def _config_overrides(args, keys) -> dict:
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(load_config_file(args.config))
    for key in keys:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            overrides[key] = value
    return overrides


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


class ShiftTargetSdsProvider:
    """Single-branch gradient toward (source + constant color shift)."""

    def __init__(self, shift: np.ndarray, std: float = 0.0):
        self.shift = shift
        self.std = std
        self.schedule = NoiseSchedule()

    def gradient(self, z_hat, z_src, *, t, eps):
        model = GaussianPromptModel(
            {"tgt": Prompt(mean=z_src + self.shift, std=self.std)}, self.schedule)
        return sds_gradient(z_hat, t, eps, model, "tgt")


def _analytic_dds_provider(z_src: np.ndarray, shift: np.ndarray, std: float,
                           shared_noise: bool, seed: int) -> AnalyticDdsProvider:
    model = GaussianPromptModel({
        "src": Prompt(mean=z_src, std=std),
        "tgt": Prompt(mean=z_src + shift, std=std),
    })
    noise_prng = None if shared_noise else Prng(seed).split("provider-noise")
    return AnalyticDdsProvider(model, "src", "tgt", shared_noise=shared_noise,
                               noise_prng=noise_prng)


def _provider_for(cfg: dict, z_src: np.ndarray):
    kind = cfg["provider"]
    if kind == "zero":
        return ZeroProvider()
    shift = _shift_grid(cfg["shift"], z_src.shape[0])
    if kind == "analytic-dds":
        return _analytic_dds_provider(z_src, shift, cfg["data-std"],
                                      cfg["shared-noise"], cfg["seed"])
    if kind == "analytic-sds":
        return ShiftTargetSdsProvider(shift, std=cfg["data-std"])
    if kind == "remote":
        if not cfg["endpoint"]:
            raise ConfigError("remote provider needs --endpoint")
        return RemoteGradientClient(cfg["endpoint"], cfg["prompt-source"],
                                    cfg["prompt-target"], cfg["guidance-scale"])
    raise ConfigError(f"unknown provider {kind!r}")


# ---------------------------------------------------------------------------
# decompose


_DECOMPOSE_SCHEMA = {"p": 3, "J": 3, "seed": 0}


def cmd_decompose(args) -> int:
    cfg = resolve_config(_DECOMPOSE_SCHEMA, _config_overrides(args, _DECOMPOSE_SCHEMA))
    image = read_image(args.input)
    out = _make_run_dir(args.out)
    echo_config(cfg, out)
    state = decompose_latent(image, cfg["p"], cfg["J"])
    report = subband_energy(state)

    rows = []
    cells = [[]]
    labels = []
    for key, energy, fraction in report.entries:
        name = "low" if key == ("low",) else f"L{key[0]}_{key[1]}"
        band = state.band(key)
        write_image(normalize_band(band), out / f"subband_{name}.ppm")
        rows.append([name, _fmt(energy), _fmt(fraction)])
        cells[0].append(normalize_band(band))
        labels.append(name)
    _write_csv(out / "subband_energy.csv", ["subband", "energy", "fraction"], rows)
    save_image_grid(cells, [""], labels, f"subbands p={cfg['p']} J={cfg['J']}",
                    out / "subbands.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# edit2d


_EDIT2D_SCHEMA = {
    "p": 3, "J": 3, "policy": "none", "steps": 500, "optimizer": "sgd",
    "lr": 0.1, "seed": 0, "t-min": 50, "t-max": 950, "trace-every": 50,
    "provider": "analytic-dds", "shift": [0.15], "data-std": 0.0,
    "shared-noise": True, "endpoint": "", "prompt-source": "", "prompt-target": "",
    "guidance-scale": 7.5,
}


def _run_edit_from_config(cfg: dict, image: np.ndarray):
    policy = FreezePolicy.preset(cfg["policy"], cfg["J"])
    edit_cfg = EditConfig(
        filter_index=cfg["p"], levels=cfg["J"], policy=policy,
        steps=cfg["steps"], optimizer=cfg["optimizer"], step_size=cfg["lr"],
        seed=cfg["seed"], t_range=(cfg["t-min"], cfg["t-max"]),
        trace_every=cfg.get("trace-every", 0),
    )
    provider = _provider_for(cfg, image)
    return run_edit_2d(image, provider, edit_cfg)


def cmd_edit2d(args) -> int:
    cfg = resolve_config(_EDIT2D_SCHEMA, _config_overrides(args, _EDIT2D_SCHEMA))
    image = read_image(args.input)
    out = _make_run_dir(args.out)
    echo_config(cfg, out)
    result = _run_edit_from_config(cfg, image)
    write_image(np.clip(result.z_out, 0.0, 1.0), out / "edited.ppm")
    export_trace(result.trace, out / "trace")
    save_state(decompose_latent(result.z_out, cfg["p"], cfg["J"]),
               out / "final_state.fbds")
    trace_rows = []
    levels = cfg["J"]
    for rec in result.trace.steps:
        for key, norm in rec.grad_norms.items():
            label = "low" if key == ("low",) else f"L{key[0]}_{key[1]}"
            trace_rows.append((rec.step, label, norm,
                               result.trace.policy.is_frozen(key)))
    save_norm_curves(trace_rows, out / "grad_norms.png",
                     title=f"policy={cfg['policy']} J={levels}")
    save_image_grid([[image, np.clip(result.z_out, 0, 1)]], [""],
                    ["source", "edited"], "edit2d", out / "before_after.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wavelet-sweep


_SWEEP_SCHEMA = {
    "p": "1..8", "J": "1..5", "policy": "freeze-high",
    "steps": 100, "optimizer": "sgd", "lr": 0.1, "seed": 0,
    "t-min": 50, "t-max": 950, "provider": "analytic-dds", "shift": [0.15],
    "data-std": 0.0, "shared-noise": True,
    "endpoint": "", "prompt-source": "", "prompt-target": "", "guidance-scale": 7.5,
}


def _parse_range(text) -> list:
    """'3' -> [3]; '1..8' -> [1, ..., 8]."""
    text = str(text)
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise ConfigError(f"bad range {text!r}; expected N or LO..HI") from None
    if hi < lo:
        raise ConfigError(f"empty range {text!r}")
    return list(range(lo, hi + 1))


def cmd_wavelet_sweep(args) -> int:
    cfg = resolve_config(_SWEEP_SCHEMA, _config_overrides(args, _SWEEP_SCHEMA))
    image = read_image(args.input)
    p_values = _parse_range(cfg["p"])
    j_values = _parse_range(cfg["J"])
    out = _make_run_dir(args.out)
    echo_config(cfg, out)
    rows = []
    cells = []
    for p in p_values:
        row_cells = []
        for j in j_values:
            cell_cfg = dict(cfg, p=p, J=j)
            cell_cfg["seed"] = Prng(cfg["seed"]).split(f"cell-p{p}-J{j}").seed
            result = _run_edit_from_config(cell_cfg, image)
            edited = np.clip(result.z_out, 0.0, 1.0)
            write_image(edited, out / f"edit_p{p}_J{j}.ppm")
            report = subband_energy(decompose_latent(image, p, j))
            rows.append([p, j, _fmt(ssim(image, edited)),
                         _fmt(report.fraction(("low",)))])
            row_cells.append(edited)
        cells.append(row_cells)
    _write_csv(out / "sweep.csv",
               ["p", "J", "ssim_vs_source", "source_low_energy_fraction"], rows)
    save_image_grid(cells, [f"db{p}" for p in p_values],
                    [f"J={j}" for j in j_values],
                    "wavelet sweep", out / "sweep_grid.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# spectral-compare


_SPECTRAL_SCHEMA = {
    "p": 3, "J": 3, "cutoff": None, "mask-shape": "rect", "keep": "low",
    "steps": 100, "lr": 0.1, "seed": 0, "t-min": 50, "t-max": 950,
    "provider": "analytic-dds", "shift": [0.15], "data-std": 0.0,
    "shared-noise": True, "endpoint": "", "prompt-source": "",
    "prompt-target": "", "guidance-scale": 7.5,
}


def _run_spectral_edit(image: np.ndarray, provider, mask, transform: str,
                       keep: str, cfg: dict) -> np.ndarray:
    """Pixel-space loop with the gradient projected per step."""
    z = image.copy()
    root = Prng(cfg["seed"])
    noise = root.split("noise")
    tstream = root.split("timestep")
    from .prng import sample_gaussian
    from .score import draw_timestep

    for _ in range(cfg["steps"]):
        t = draw_timestep(tstream, (cfg["t-min"], cfg["t-max"]))
        eps = sample_gaussian(noise, image.shape)
        g = provider.gradient(z, image, t=t, eps=eps)
        z = z - cfg["lr"] * masked_spectral_gradient(g, mask, transform, keep)
    return z


def cmd_spectral_compare(args) -> int:
    cfg = resolve_config(_SPECTRAL_SCHEMA, _config_overrides(args, _SPECTRAL_SCHEMA))
    if cfg["cutoff"] is None:
        raise ConfigError("spectral-compare requires --cutoff")
    image = read_image(args.input)
    out = _make_run_dir(args.out)
    echo_config(cfg, out)

    # wavelet arm: keep=low <-> only the low band updates (details frozen)
    policy = "freeze-high" if cfg["keep"] == "low" else "freeze-low"
    wavelet_cfg = dict(cfg, policy=policy, optimizer="sgd",
                       **{"trace-every": 0})
    wavelet_cfg = {k: v for k, v in wavelet_cfg.items()
                   if k in _EDIT2D_SCHEMA or k == "config_version"}
    wavelet_cfg = resolve_config(_EDIT2D_SCHEMA, wavelet_cfg)
    dwt_result = _run_edit_from_config(wavelet_cfg, image)
    dwt_img = np.clip(dwt_result.z_out, 0.0, 1.0)

    mask = build_lowpass_mask(image.shape[1], image.shape[2],
                              cfg["cutoff"], cfg["mask-shape"])
    provider = _provider_for(cfg, image)
    dct_img = np.clip(_run_spectral_edit(image, provider, mask, "dct",
                                         cfg["keep"], cfg), 0.0, 1.0)
    dft_img = np.clip(_run_spectral_edit(image, provider, mask, "dft",
                                         cfg["keep"], cfg), 0.0, 1.0)

    for name, img in (("dwt", dwt_img), ("dct", dct_img), ("dft", dft_img)):
        write_image(img, out / f"edited_{name}.ppm")

    # energy split of the source under each decomposition, for cutoff matching
    report = subband_energy(decompose_latent(image, cfg["p"], cfg["J"]))
    dct_coeff = dct2(image)
    dft_coeff = dft2(image)
    dct_low = float(np.sum((dct_coeff * mask.dct_grid()) ** 2) / np.sum(dct_coeff**2))
    dft_total = float(np.sum(np.abs(dft_coeff) ** 2))
    dft_low = float(np.sum(np.abs(dft_coeff * mask.dft_grid()) ** 2) / dft_total)
    _write_csv(out / "energy_split.csv",
               ["method", "low_fraction", "ssim_vs_source"],
               [["dwt", _fmt(report.fraction(("low",))), _fmt(ssim(image, dwt_img))],
                ["dct", _fmt(dct_low), _fmt(ssim(image, dct_img))],
                ["dft", _fmt(dft_low), _fmt(ssim(image, dft_img))]])
    save_image_grid([[image, dwt_img, dct_img, dft_img]], [""],
                    ["source", "dwt", "dct", "dft"],
                    f"cutoff={cfg['cutoff']} keep={cfg['keep']}",
                    out / "comparison.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics


_METRICS_SCHEMA = {"p": 3, "J": 3}


def cmd_metrics(args) -> int:
    cfg = resolve_config(_METRICS_SCHEMA, _config_overrides(args, _METRICS_SCHEMA))
    img_a = read_image(args.a)
    img_b = read_image(args.b)
    out = _make_run_dir(args.out)
    echo_config(cfg, out)
    report = subband_energy(decompose_latent(img_a, cfg["p"], cfg["J"]))
    header = ["image_id", "ssim", "psnr", "clip_score", "lpips"]
    energy_cols = []
    for key, _, fraction in report.entries:
        name = "low" if key == ("low",) else f"L{key[0]}_{key[1]}"
        header.append(f"energy_frac_{name}")
        energy_cols.append(_fmt(fraction))
    value = ssim(img_a, img_b)
    p = psnr(img_a, img_b)
    # clip_score / lpips need pretrained networks; left as labeled placeholders
    row = [Path(args.a).name, _fmt(value),
           "inf" if math.isinf(p) else _fmt(p), "", ""] + energy_cols
    _write_csv(out / "metrics.csv", header, [row])
    return EXIT_OK


# ---------------------------------------------------------------------------
# texture commands


_TEXTURE_INIT_SCHEMA = {
    "mesh": "quad", "steps": 2000, "lr": 0.02, "seed": 0,
    "channels": 16, "plane-size": 128, "p": 3, "J": 2,
    "azimuths": 8, "elevations": 2, "radius": 3.0, "resolution": 64,
}


def _load_mesh(spec: str):
    builtin = {"quad": make_quad, "sphere": make_uv_sphere, "torus": make_torus}
    if spec in builtin:
        return normalize_mesh(builtin[spec]())
    return normalize_mesh(load_obj(spec))


def _orbit_cameras(n_azimuth: int, n_elev: int, radius: float, resolution: int):
    cams = []
    elevations = [0.0] if n_elev <= 1 else list(
        np.linspace(-25.0, 25.0, n_elev))
    for elev in elevations:
        for k in range(n_azimuth):
            az = 2.0 * math.pi * k / n_azimuth
            el = math.radians(elev)
            pos = (radius * math.cos(el) * math.cos(az),
                   radius * math.sin(el),
                   radius * math.cos(el) * math.sin(az))
            cams.append(Camera(position=pos, look_at=(0.0, 0.0, 0.0),
                               resolution=(resolution, resolution)))
    return cams


def _front_camera(resolution: int) -> Camera:
    return Camera(position=(0.0, 0.0, 3.0), look_at=(0.0, 0.0, 0.0),
                  fov_deg=45.0, resolution=(resolution, resolution))


def _texture_cameras(mesh_spec: str, cfg: dict):
    if mesh_spec == "quad":
        return [_front_camera(cfg["resolution"])]  # flat geometry: front view only
    return _orbit_cameras(cfg["azimuths"], cfg["elevations"], cfg["radius"],
                          cfg["resolution"])


def cmd_texture_init(args) -> int:
    cfg = resolve_config(_TEXTURE_INIT_SCHEMA,
                         _config_overrides(args, _TEXTURE_INIT_SCHEMA))
    texture = read_image(args.texture)
    out = _make_run_dir(args.out)
    echo_config(cfg, out)
    mesh = _load_mesh(cfg["mesh"])
    cameras = _texture_cameras(cfg["mesh"], cfg)
    prng = Prng(cfg["seed"])
    ft = init_triplane(prng.split("planes"), channels=cfg["channels"],
                       size=cfg["plane-size"], filter_index=cfg["p"],
                       levels=cfg["J"])
    mlp = MlpDecoder.create(prng.split("mlp"), feature_dim=3 * cfg["channels"])
    result = init_fit(ft, mlp, mesh, texture, cameras,
                      steps=cfg["steps"], step_size=cfg["lr"])
    save_triplane(result.triplane, result.mlp, out / "checkpoint.fbds")
    from .mesh import render_gbuffer
    renders = []
    for i, cam in enumerate(cameras):
        img = render_view(result.triplane, result.mlp, render_gbuffer(mesh, cam))
        write_image(np.clip(img, 0, 1), out / f"render_{i:02d}.ppm")
        renders.append(img)
    _write_csv(out / "fit_loss.csv", ["step", "mean_l1"],
               [[i + 1, _fmt(v)] for i, v in enumerate(result.losses)])
    save_loss_curve(result.losses, out / "fit_loss.png")
    save_image_grid([renders[:8]], [""], [f"view {i}" for i in range(len(renders[:8]))],
                    "fitted renders", out / "renders.png")
    return EXIT_OK


_TEXTURE_EDIT_SCHEMA = {
    "mesh": "quad", "policy": "freeze-high", "steps": 500, "lr": 0.01,
    "optimizer": "adam", "seed": 0, "shift": [0.15], "data-std": 0.0,
    "t-min": 50, "t-max": 950, "resolution": 64, "azimuths": 8,
    "elevations": 2, "radius": 3.0, "bake-size": 128,
}


def cmd_texture_edit(args) -> int:
    cfg = resolve_config(_TEXTURE_EDIT_SCHEMA,
                         _config_overrides(args, _TEXTURE_EDIT_SCHEMA))
    ft, mlp = load_triplane(args.checkpoint)
    out = _make_run_dir(args.out)
    echo_config(cfg, out)
    mesh = _load_mesh(cfg["mesh"])
    cameras = _texture_cameras(cfg["mesh"], cfg)
    shift = _shift_grid(cfg["shift"], 3)
    provider = ShiftTargetSdsProvider(shift, std=cfg["data-std"])
    policy = FreezePolicy.preset(cfg["policy"], ft.levels)
    edit_cfg = TextureEditConfig(steps=cfg["steps"], optimizer=cfg["optimizer"],
                                 step_size=cfg["lr"], seed=cfg["seed"],
                                 t_range=(cfg["t-min"], cfg["t-max"]))
    from .mesh import render_gbuffer
    before = [render_view(ft, mlp, render_gbuffer(mesh, cam)) for cam in cameras]
    result = run_texture_edit(ft, mlp, mesh, cameras, provider, policy, edit_cfg)
    save_triplane(result.triplane, result.mlp, out / "checkpoint.fbds")
    for i, img in enumerate(result.renders):
        write_image(np.clip(img, 0, 1), out / f"render_{i:02d}.ppm")
    baked = bake_texture(result.triplane, result.mlp, mesh,
                         cfg["bake-size"], cfg["bake-size"])
    write_image(np.clip(baked, 0, 1), out / "baked_texture.ppm")
    save_image_grid([before[:4], result.renders[:4]],
                    ["before", "after"],
                    [f"view {i}" for i in range(len(before[:4]))],
                    f"texture edit policy={cfg['policy']}", out / "before_after.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavedit",
        description="Frequency-selective score-distillation editing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, schema, skip=()):
        p.add_argument("--config", help="JSON config file (flags override)")
        for key, default in schema.items():
            if key in skip:
                continue
            flag = f"--{key}"
            if isinstance(default, bool):
                p.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"),
                               default=None, metavar="BOOL")
            elif isinstance(default, int):
                p.add_argument(flag, type=int, default=None)
            elif isinstance(default, float) or default is None:
                p.add_argument(flag, type=float, default=None)
            elif isinstance(default, list):
                p.add_argument(flag, type=_parse_shift, default=None)
            else:
                p.add_argument(flag, type=str, default=None)

    p = sub.add_parser("decompose", help="dump subband visualizations + energies")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    add_common(p, _DECOMPOSE_SCHEMA)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("edit2d", help="frequency-selective 2-D edit")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    add_common(p, _EDIT2D_SCHEMA)
    p.set_defaults(func=cmd_edit2d)

    p = sub.add_parser("wavelet-sweep", help="edit across a p x J grid")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    add_common(p, _SWEEP_SCHEMA)
    p.set_defaults(func=cmd_wavelet_sweep)

    p = sub.add_parser("spectral-compare", help="wavelet vs DCT vs DFT freezing")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    add_common(p, _SPECTRAL_SCHEMA)
    p.set_defaults(func=cmd_spectral_compare)

    p = sub.add_parser("metrics", help="fidelity metrics between two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    add_common(p, _METRICS_SCHEMA)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("texture-init", help="fit a triplane field to a textured mesh")
    p.add_argument("--texture", required=True)
    p.add_argument("--out", required=True)
    add_common(p, _TEXTURE_INIT_SCHEMA)
    p.set_defaults(func=cmd_texture_init)

    p = sub.add_parser("texture-edit", help="frequency-selective texture edit")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    add_common(p, _TEXTURE_EDIT_SCHEMA)
    p.set_defaults(func=cmd_texture_edit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ImageFormatError, ContainerError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ProviderError, EditAborted, TextureEditAborted) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
