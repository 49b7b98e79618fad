"""Latent-level score gradients: analytic Gaussian oracles and a remote client.

The desk-scale stand-in for a text-conditioned denoiser models each
"prompt" label as an isotropic Gaussian N(mu, s^2 I) over clean latents.
For that data distribution the minimum-MSE noise predictor at timestep t
has the closed form

    eps*(z_t, t) = sigma_t * (z_t - alpha_t * mu) / (alpha_t^2 s^2 + sigma_t^2)

which makes every distillation gradient analytically checkable: the
shared-noise delta gradient with s = 0 reduces to

    w(t) * (alpha_t / sigma_t) * ((z_hat - z_src) - (mu_tgt - mu_src))

independent of the injected noise, and is exactly the gradient of a
quadratic objective.  Real text-to-image backends sit behind the HTTP
wire protocol implemented by ``RemoteGradientClient`` (32-bit floats on
the wire, widened to 64-bit at the boundary).
"""

from __future__ import annotations

import base64
import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from .numerics import require_same_shape
from .prng import Prng, sample_gaussian

PROTOCOL_VERSION = "1"
DEFAULT_T_RANGE = (50, 950)


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule; alpha_t^2 + sigma_t^2 = 1 for all t in 1..T."""

    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.arange(1, self.timesteps + 1, dtype=np.float64)
        beta = self.beta_start + (t - 1) * (self.beta_end - self.beta_start) / (self.timesteps - 1)
        bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
        if not np.all(np.diff(bar) < 0):
            raise ValueError("alpha_bar must decrease monotonically")
        object.__setattr__(self, "alpha_bar", bar)

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.timesteps:
            raise ValueError(f"timestep {t} outside [1, {self.timesteps}]")
        return t

    def alpha(self, t: int) -> float:
        return float(np.sqrt(self.alpha_bar[self._check_t(t)]))

    def sigma(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bar[self._check_t(t)]))


def draw_timestep(prng: Prng, t_range=DEFAULT_T_RANGE) -> int:
    return prng.randint(int(t_range[0]), int(t_range[1]))


@dataclass(frozen=True)
class Prompt:
    mean: np.ndarray  # clean-latent mean, grid-shaped
    std: float = 0.0  # isotropic data std, >= 0


class GaussianPromptModel:
    """Label -> Gaussian latent distribution, with a timestep weight w(t)."""

    def __init__(self, prompts: dict, schedule: NoiseSchedule | None = None,
                 weight: str = "one"):
        if weight not in ("one", "sigma2"):
            raise ValueError(f"weight must be 'one' or 'sigma2', got {weight!r}")
        self.prompts = {k: Prompt(np.asarray(v.mean, dtype=np.float64), float(v.std))
                        for k, v in prompts.items()}
        self.schedule = schedule or NoiseSchedule()
        self._weight = weight

    def prompt(self, label: str) -> Prompt:
        try:
            return self.prompts[label]
        except KeyError:
            raise KeyError(f"unknown prompt label {label!r}") from None

    def w(self, t: int) -> float:
        if self._weight == "one":
            return 1.0
        return self.schedule.sigma(t) ** 2


def optimal_eps(z_t: np.ndarray, t: int, model: GaussianPromptModel,
                label: str) -> np.ndarray:
    """Closed-form MMSE noise prediction for the labeled Gaussian prompt."""
    p = model.prompt(label)
    a = model.schedule.alpha(t)
    s = model.schedule.sigma(t)
    require_same_shape(z_t, p.mean)
    return s * (z_t - a * p.mean) / (a * a * p.std * p.std + s * s)


def dds_gradient(z_hat: np.ndarray, z_src: np.ndarray, t: int, eps: np.ndarray,
                 model: GaussianPromptModel, src_label: str, tgt_label: str,
                 shared_noise: bool = True, noise_prng: Prng | None = None) -> np.ndarray:
    """Delta gradient: target-branch eps prediction minus source-branch.

    shared_noise=True perturbs both branches with the same eps, which
    cancels the noise exactly for deterministic prompts; otherwise the
    source branch draws fresh noise from noise_prng and the per-call
    gradient is noisy around the same mean.
    """
    require_same_shape(z_hat, z_src)
    require_same_shape(z_hat, eps)
    a = model.schedule.alpha(t)
    s = model.schedule.sigma(t)
    if shared_noise:
        eps_src = eps
    else:
        if noise_prng is None:
            raise ValueError("independent-noise mode needs a noise_prng")
        eps_src = sample_gaussian(noise_prng, z_src.shape)
    e_tgt = optimal_eps(a * z_hat + s * eps, t, model, tgt_label)
    e_src = optimal_eps(a * z_src + s * eps_src, t, model, src_label)
    return model.w(t) * (e_tgt - e_src)


def sds_gradient(z_hat: np.ndarray, t: int, eps: np.ndarray,
                 model: GaussianPromptModel, tgt_label: str) -> np.ndarray:
    """Single-branch score-distillation gradient: eps prediction minus eps."""
    require_same_shape(z_hat, eps)
    a = model.schedule.alpha(t)
    s = model.schedule.sigma(t)
    e_tgt = optimal_eps(a * z_hat + s * eps, t, model, tgt_label)
    return model.w(t) * (e_tgt - eps)


# ---------------------------------------------------------------------------
# Provider objects consumed by the editing loops


class AnalyticDdsProvider:
    def __init__(self, model: GaussianPromptModel, src_label: str, tgt_label: str,
                 shared_noise: bool = True, noise_prng: Prng | None = None):
        self.model = model
        self.src_label = src_label
        self.tgt_label = tgt_label
        self.shared_noise = shared_noise
        self.noise_prng = noise_prng

    def gradient(self, z_hat, z_src, *, t, eps):
        return dds_gradient(z_hat, z_src, t, eps, self.model,
                            self.src_label, self.tgt_label,
                            shared_noise=self.shared_noise,
                            noise_prng=self.noise_prng)


class AnalyticSdsProvider:
    def __init__(self, model: GaussianPromptModel, tgt_label: str):
        self.model = model
        self.tgt_label = tgt_label

    def gradient(self, z_hat, z_src, *, t, eps):
        return sds_gradient(z_hat, t, eps, self.model, self.tgt_label)


class ZeroProvider:
    def gradient(self, z_hat, z_src, *, t, eps):
        return np.zeros_like(z_hat)


# ---------------------------------------------------------------------------
# Wire protocol


class ProviderError(RuntimeError):
    """Base for every remote-provider failure."""


class TransportError(ProviderError):
    pass


class ProtocolVersionError(ProviderError):
    pass


class WireShapeError(ProviderError):
    pass


class ServerSideError(ProviderError):
    def __init__(self, code: str, message: str):
        super().__init__(f"server error [{code}]: {message}")
        self.code = code


def tensor_to_wire(grid: np.ndarray) -> dict:
    """Grid -> {shape, dtype, data}; 32-bit little-endian floats, base64."""
    a = np.ascontiguousarray(np.asarray(grid, dtype=np.float64), dtype="<f4")
    return {
        "shape": [int(d) for d in a.shape],
        "dtype": "f32",
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def wire_to_tensor(obj: dict) -> np.ndarray:
    """Inverse of tensor_to_wire, widening to 64-bit."""
    if obj.get("dtype") != "f32":
        raise WireShapeError(f"unsupported wire dtype {obj.get('dtype')!r}")
    shape = tuple(int(d) for d in obj["shape"])
    raw = base64.b64decode(obj["data"])
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise WireShapeError(f"payload is {len(raw)} bytes, shape needs {expected}")
    flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return flat.reshape(shape)


@dataclass
class ScoreRequest:
    latent: np.ndarray
    source_latent: np.ndarray
    timestep: int
    prompt_source: str
    prompt_target: str
    guidance_scale: float = 7.5

    def to_json(self) -> dict:
        return {
            "protocol_version": PROTOCOL_VERSION,
            "latent": tensor_to_wire(self.latent),
            "source_latent": tensor_to_wire(self.source_latent),
            "timestep": int(self.timestep),
            "prompt_source": self.prompt_source,
            "prompt_target": self.prompt_target,
            "guidance_scale": float(self.guidance_scale),
        }


def decode_gradient_response(body: bytes, expected_shape) -> np.ndarray:
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise TransportError(f"response is not JSON: {exc}") from exc
    if "error" in payload:
        err = payload["error"]
        code = str(err.get("code", "unknown"))
        message = str(err.get("message", ""))
        if code == "protocol_version":
            raise ProtocolVersionError(message)
        raise ServerSideError(code, message)
    if "gradient" not in payload:
        raise TransportError("response has neither 'gradient' nor 'error'")
    grad = wire_to_tensor(payload["gradient"])
    if grad.shape != tuple(expected_shape):
        raise WireShapeError(
            f"gradient shape {grad.shape} != latent shape {tuple(expected_shape)}"
        )
    return grad


class RemoteGradientClient:
    """POSTs score requests to an HTTP endpoint speaking protocol version 1.

    One request in flight; transient transport failures are retried with
    exponential backoff (3 attempts total).
    """

    def __init__(self, endpoint: str, prompt_source: str, prompt_target: str,
                 guidance_scale: float = 7.5, timeout: float = 30.0,
                 retries: int = 3, backoff: float = 0.5):
        self.endpoint = endpoint.rstrip("/")
        self.prompt_source = prompt_source
        self.prompt_target = prompt_target
        self.guidance_scale = guidance_scale
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def gradient(self, z_hat, z_src, *, t, eps):
        req = ScoreRequest(latent=z_hat, source_latent=z_src, timestep=t,
                           prompt_source=self.prompt_source,
                           prompt_target=self.prompt_target,
                           guidance_scale=self.guidance_scale)
        body = json.dumps(req.to_json()).encode("utf-8")
        url = self.endpoint + "/v1/gradient"
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                http_req = urllib.request.Request(
                    url, data=body, headers={"Content-Type": "application/json"})
                with urllib.request.urlopen(http_req, timeout=self.timeout) as resp:
                    return decode_gradient_response(resp.read(), np.shape(z_hat))
            except urllib.error.HTTPError as exc:
                # Structured server errors arrive with non-200 status too.
                return decode_gradient_response(exc.read(), np.shape(z_hat))
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last_exc = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2.0**attempt))
        raise TransportError(f"POST {url} failed after {self.retries} attempts: {last_exc}")

    def health(self) -> dict:
        try:
            with urllib.request.urlopen(self.endpoint + "/v1/health",
                                        timeout=self.timeout) as resp:
                payload = json.loads(resp.read())
        except (urllib.error.URLError, TimeoutError, ConnectionError, json.JSONDecodeError) as exc:
            raise TransportError(f"health check failed: {exc}") from exc
        if payload.get("protocol_version") != PROTOCOL_VERSION:
            raise ProtocolVersionError(
                f"server speaks {payload.get('protocol_version')!r}, "
                f"client needs {PROTOCOL_VERSION!r}")
        return payload
