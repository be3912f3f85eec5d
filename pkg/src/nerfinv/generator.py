"""Latent-conditioned radiance fields.

Two generator kinds share one contract: ``map_latent`` turns a latent code
into per-layer style parameters (frequencies and phase shifts), and
``eval_field`` turns style parameters plus 3-D points into colors and
densities.

* ``siren``: a FiLM-conditioned SIREN, every hidden unit computes
  ``sin(freq * (W h + c) + phase)``.
* ``blob``: an analytic sum of Gaussian blobs.  Blob 0 is a large "head"
  near the origin; the remaining blobs are small features anchored on a
  ring in front of it.  Cheap and exactly evaluable, so it doubles as a
  verification oracle and as the workhorse for long experiments.

  Optional "floater" rows describe free blobs in the space between the head
  and the camera.  No latent switches them on (``map_latent`` pins their
  amplitude logit far negative), so a style with active floaters lies
  outside the generator's range.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64

SIREN_FIRST_OMEGA = 30.0
SIREN_FREQ_SPREAD = 0.25
SIREN_PHASE_SPREAD = 1.0
SIREN_DENSITY_BIAS = -1.0
SIREN_DENSITY_SCALE = 2.0

# blob squashing constants: (offset, span) pairs
HEAD_CENTER_SPAN = 0.08
HEAD_RADIUS = (0.20, 0.06)
HEAD_AMP = (6.0, 6.0)
FEATURE_RING = 0.12
FEATURE_LATERAL_SPAN = 0.08
FEATURE_DEPTH = (0.18, 0.35)
FEATURE_DEPTH_GAIN = 0.35
FEATURE_RADIUS = (0.05, 0.04)
FEATURE_AMP = (15.0, 30.0)
FLOATER_SPAN = 0.3
FLOATER_DEPTH = (0.8, 0.15)
FLOATER_RADIUS = (0.06, 0.06)
FLOATER_AMP = 40.0
FLOATER_OFF_LOGIT = -10.0
BLOB_WIDTH = 8


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    """Architecture and seeds; identical specs build bit-identical generators.

    For ``kind="blob"`` the ``depth`` is the number of style rows, ``width``
    is fixed at 8 (center 3, radius 1, color 3, amplitude 1) and the latent
    drives the first ``latent_dim / 8`` rows; any remaining rows are floaters.
    """

    kind: str = "siren"
    depth: int = 4
    width: int = 64
    latent_dim: int = 64
    weight_seed: int = 0
    mapping_seed: int = 1

    def __post_init__(self):
        if self.kind not in ("siren", "blob"):
            raise GeneratorError(f"unknown generator kind {self.kind!r}")
        if self.depth < 1 or self.width < 1 or self.latent_dim < 1:
            raise GeneratorError("depth, width and latent_dim must be >= 1")
        if self.kind == "blob":
            if self.width != BLOB_WIDTH:
                raise GeneratorError("blob generator width must be 8")
            if self.latent_dim % BLOB_WIDTH or not BLOB_WIDTH <= self.latent_dim <= BLOB_WIDTH * self.depth:
                raise GeneratorError("blob generator needs latent_dim = 8 * n_blobs with n_blobs <= depth")

    @classmethod
    def blob(cls, n_blobs: int = 4, n_floaters: int = 0, weight_seed: int = 0, mapping_seed: int = 1) -> "GeneratorSpec":
        return cls("blob", n_blobs + n_floaters, BLOB_WIDTH, BLOB_WIDTH * n_blobs, weight_seed, mapping_seed)

    @property
    def n_blobs(self) -> int:
        """Latent-driven blobs (head plus features)."""
        return self.latent_dim // BLOB_WIDTH if self.kind == "blob" else 0

    @property
    def n_floaters(self) -> int:
        return self.depth - self.n_blobs if self.kind == "blob" else 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(**d)


@dataclass
class StyleParams:
    """Per-layer frequencies and phase shifts, each of shape ``(layers, m)``."""

    freqs: torch.Tensor
    phases: torch.Tensor

    def __post_init__(self):
        if self.freqs.shape != self.phases.shape or self.freqs.ndim != 2:
            raise GeneratorError(
                f"freqs {tuple(self.freqs.shape)} and phases {tuple(self.phases.shape)} must share a 2-D shape"
            )

    @property
    def n_layers(self) -> int:
        return self.freqs.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.freqs.shape)

    def flat(self) -> torch.Tensor:
        return torch.cat([self.freqs.reshape(-1), self.phases.reshape(-1)])

    @classmethod
    def from_flat(cls, theta: torch.Tensor, shape: tuple[int, int]) -> "StyleParams":
        n = shape[0] * shape[1]
        return cls(theta[:n].reshape(shape), theta[n:].reshape(shape))

    def detach(self) -> "StyleParams":
        return StyleParams(self.freqs.detach().clone(), self.phases.detach().clone())

    def layer_vectors(self) -> torch.Tensor:
        """Concatenated ``(freq_l, phase_l)`` rows, shape ``(layers, 2m)``."""
        return torch.cat([self.freqs, self.phases], dim=1)


def sample_latent(seed: int, d: int) -> np.ndarray:
    """``d`` standard-normal draws from numpy's PCG64 stream seeded with ``seed``."""
    if d < 1:
        raise GeneratorError(f"latent dimension must be >= 1, got {d}")
    return np.random.default_rng(seed).standard_normal(d)


class _Siren:
    def __init__(self, spec: GeneratorSpec):
        rng = np.random.default_rng(spec.weight_seed)
        w = spec.width

        def uniform(bound, shape):
            return torch.as_tensor(rng.uniform(-bound, bound, size=shape), dtype=DTYPE)

        # first layer follows the SIREN first-layer init with omega_0 folded in
        self.weights = [uniform(1.0 / 3.0, (w, 3)) * SIREN_FIRST_OMEGA]
        self.biases = [uniform(1.0 / math.sqrt(3.0), (w,))]
        for _ in range(spec.depth - 1):
            self.weights.append(uniform(math.sqrt(6.0 / w), (w, w)))
            self.biases.append(uniform(1.0 / math.sqrt(w), (w,)))
        self.w_density = uniform(math.sqrt(6.0 / w), (w,))
        self.w_color = uniform(math.sqrt(6.0 / w), (3, w))
        self.b_color = uniform(1.0 / math.sqrt(w), (3,))

        mrng = np.random.default_rng(spec.mapping_seed)
        d = spec.latent_dim
        # one affine map shared by every layer: identical styles per layer at map time
        self.freq_matrix = torch.as_tensor(mrng.standard_normal((w, d)) / math.sqrt(d), dtype=DTYPE)
        self.phase_matrix = torch.as_tensor(mrng.standard_normal((w, d)) / math.sqrt(d), dtype=DTYPE)
        self.freq_matrix = self.freq_matrix * SIREN_FREQ_SPREAD
        self.phase_matrix = self.phase_matrix * SIREN_PHASE_SPREAD
        self.freq_offset = torch.ones(w, dtype=DTYPE)
        self.phase_offset = torch.zeros(w, dtype=DTYPE)
        self.depth = spec.depth

    def map(self, z: torch.Tensor) -> StyleParams:
        g = self.freq_matrix @ z + self.freq_offset
        b = self.phase_matrix @ z + self.phase_offset
        return StyleParams(g.expand(self.depth, -1).clone(), b.expand(self.depth, -1).clone())

    def eval(self, params: StyleParams, p: torch.Tensor):
        h = p
        for layer, (w, c) in enumerate(zip(self.weights, self.biases)):
            h = torch.sin(params.freqs[layer] * (h @ w.T + c) + params.phases[layer])
        density = SIREN_DENSITY_SCALE * F.softplus(h @ self.w_density + SIREN_DENSITY_BIAS)
        color = torch.sigmoid(h @ self.w_color.T + self.b_color)
        return color, density


def _feature_anchors(n_blobs: int) -> torch.Tensor:
    n_feat = max(n_blobs - 1, 1)
    ang = math.pi / 2 + 2 * math.pi * np.arange(n_feat) / n_feat
    xy = FEATURE_RING * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return torch.as_tensor(xy, dtype=DTYPE)


def _floater_parameters(raw: torch.Tensor):
    xy = FLOATER_SPAN * torch.tanh(raw[:, 0:2])
    depth = FLOATER_DEPTH[0] + FLOATER_DEPTH[1] * torch.tanh(raw[:, 2:3])
    radius = FLOATER_RADIUS[0] + FLOATER_RADIUS[1] * torch.sigmoid(raw[:, 3])
    amp = FLOATER_AMP * torch.sigmoid(raw[:, 7])
    return torch.cat([xy, depth], dim=1), radius, torch.sigmoid(raw[:, 4:7]), amp


def blob_parameters(params: StyleParams, n_floaters: int = 0):
    """Squash blob style rows into ``(centers, radii, colors, amps)``; the last ``n_floaters`` rows are floaters."""
    raw = params.layer_vectors()
    if raw.shape[1] != BLOB_WIDTH:
        raise GeneratorError("blob style rows must have 4 frequencies and 4 phases")
    if not 0 <= n_floaters < raw.shape[0]:
        raise GeneratorError("need at least one latent-driven blob")
    if n_floaters:
        main = blob_parameters(StyleParams(params.freqs[:-n_floaters], params.phases[:-n_floaters]))
        extra = _floater_parameters(raw[-n_floaters:])
        return tuple(torch.cat([a, b]) for a, b in zip(main, extra))
    n = raw.shape[0]
    u_center, u_radius = raw[:, 0:3], raw[:, 3]
    u_color, u_amp = raw[:, 4:7], raw[:, 7]

    head_center = HEAD_CENTER_SPAN * torch.tanh(u_center[:1])
    head_radius = HEAD_RADIUS[0] + HEAD_RADIUS[1] * torch.sigmoid(u_radius[:1])
    head_amp = HEAD_AMP[0] + HEAD_AMP[1] * torch.sigmoid(u_amp[:1])
    if n == 1:
        return head_center, head_radius, torch.sigmoid(u_color), head_amp

    anchors = _feature_anchors(n)
    lateral = anchors + FEATURE_LATERAL_SPAN * torch.tanh(u_center[1:, 0:2])
    depth = FEATURE_DEPTH[0] + FEATURE_DEPTH[1] * torch.tanh(FEATURE_DEPTH_GAIN * u_center[1:, 2:3])
    feat_center = torch.cat([lateral, depth], dim=1)
    feat_radius = FEATURE_RADIUS[0] + FEATURE_RADIUS[1] * torch.sigmoid(u_radius[1:])
    feat_amp = FEATURE_AMP[0] + FEATURE_AMP[1] * torch.sigmoid(u_amp[1:])
    centers = torch.cat([head_center, feat_center])
    radii = torch.cat([head_radius, feat_radius])
    amps = torch.cat([head_amp, feat_amp])
    return centers, radii, torch.sigmoid(u_color), amps


def gaussian_blobs(centers, radii, colors, amps, p: torch.Tensor):
    d2 = ((p[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    per_blob = amps * torch.exp(-d2 / (2.0 * radii**2))
    density = per_blob.sum(-1)
    color = (per_blob @ colors) / (density[:, None] + 1e-12)
    return color, density


class _Blob:
    def __init__(self, spec: GeneratorSpec):
        self.n = spec.n_blobs
        self.n_floaters = spec.n_floaters

    def map(self, z: torch.Tensor) -> StyleParams:
        rows = z.reshape(self.n, BLOB_WIDTH)
        off = torch.zeros(self.n_floaters, BLOB_WIDTH, dtype=z.dtype)
        off[:, 7] = FLOATER_OFF_LOGIT
        rows = torch.cat([rows, off])
        return StyleParams(rows[:, :4].clone(), rows[:, 4:].clone())

    def eval(self, params: StyleParams, p: torch.Tensor):
        return gaussian_blobs(*blob_parameters(params, self.n_floaters), p)


@lru_cache(maxsize=32)
def build(spec: GeneratorSpec):
    return _Siren(spec) if spec.kind == "siren" else _Blob(spec)


def style_shape(gen: GeneratorSpec) -> tuple[int, int]:
    return (gen.depth, gen.width // 2) if gen.kind == "blob" else (gen.depth, gen.width)


def free_rows(gen: GeneratorSpec) -> range:
    """Style rows the latent map holds fixed (blob floaters); empty for SIREN."""
    return range(gen.n_blobs, gen.depth) if gen.kind == "blob" else range(0)


def _as_latent(gen: GeneratorSpec, z) -> torch.Tensor:
    z = torch.as_tensor(np.asarray(z) if not torch.is_tensor(z) else z, dtype=DTYPE)
    if z.ndim != 1 or z.shape[0] != gen.latent_dim:
        raise GeneratorError(f"latent has shape {tuple(z.shape)}, generator expects ({gen.latent_dim},)")
    if not torch.isfinite(z).all():
        raise GeneratorError("latent has non-finite entries")
    return z


def map_latent(gen: GeneratorSpec, z) -> StyleParams:
    """Affine latent-to-style map: ``freq_l = A z + a``, ``phase_l = B z + b``."""
    return build(gen).map(_as_latent(gen, z))


def eval_field(gen: GeneratorSpec, params: StyleParams, p) -> tuple[torch.Tensor, torch.Tensor]:
    """Colors in [0,1] and nonnegative densities at points ``p`` of shape (N, 3) or (3,)."""
    if params.shape != style_shape(gen):
        raise GeneratorError(f"style shape {params.shape} does not match generator {style_shape(gen)}")
    p = torch.as_tensor(p, dtype=DTYPE)
    single = p.ndim == 1
    color, density = build(gen).eval(params, p.reshape(-1, 3))
    if single:
        return color[0], density[0]
    return color, density


def blob_field(z, p) -> tuple[torch.Tensor, torch.Tensor]:
    """Evaluate the blob generator implied by ``len(z) = 8 * n_blobs`` directly from a latent."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size % BLOB_WIDTH:
        raise GeneratorError("blob latent length must be a multiple of 8")
    gen = GeneratorSpec.blob(z.size // BLOB_WIDTH)
    return eval_field(gen, map_latent(gen, z), p)


def average_style(gen: GeneratorSpec, n: int, seed: int) -> StyleParams:
    """Elementwise mean of ``map_latent`` over ``n`` latents drawn from one seeded stream."""
    if n < 1:
        raise GeneratorError("need at least one latent to average")
    zs = np.random.default_rng(seed).standard_normal((n, gen.latent_dim))
    acc_f = acc_p = 0.0
    for z in zs:
        s = map_latent(gen, z)
        acc_f = acc_f + s.freqs
        acc_p = acc_p + s.phases
    return StyleParams(acc_f / n, acc_p / n)


class RadianceField:
    """A generator bound to fixed style parameters; callable on (N, 3) points."""

    def __init__(self, gen: GeneratorSpec, params: StyleParams):
        self.gen = gen
        self.params = params

    @classmethod
    def from_latent(cls, gen: GeneratorSpec, z) -> "RadianceField":
        return cls(gen, map_latent(gen, z))

    def __call__(self, p: torch.Tensor):
        return eval_field(self.gen, self.params, p)

    def density(self, p: torch.Tensor) -> torch.Tensor:
        return self(p)[1]

    def render_rays(self, origins, dirs, t, delta, background):
        """Fused blob renderer; returns ``(pixels, final_transmittance)`` or None."""
        if self.gen.kind != "blob":
            return None
        from ._blobrender import render_blob_rays

        blobs = blob_parameters(self.params, self.gen.n_floaters)
        return render_blob_rays(*blobs, origins, dirs, t, delta, background)
