"""Fused forward/backward volume rendering for Gaussian-blob fields.

Same quadrature as ``renderer.composite``; the backward pass recomputes the
per-ray forward quantities instead of storing (rays, samples, blobs) tensors.
"""
from __future__ import annotations

import numba
import numpy as np
import torch

EPS = 1e-12
# exp(-CUTOFF) ~ 2e-22: blob contributions beyond it are skipped
CUTOFF = 50.0


@numba.njit(cache=True)
def _forward(origins, dirs, t, delta, centers, radii, colors, amps, bg, pixels, final):
    R, N = t.shape
    B = centers.shape[0]
    inv = 1.0 / (2.0 * radii**2)
    for r in range(R):
        T = 1.0
        p0 = 0.0
        p1 = 0.0
        p2 = 0.0
        for i in range(N):
            x = origins[r, 0] + t[r, i] * dirs[r, 0]
            y = origins[r, 1] + t[r, i] * dirs[r, 1]
            z = origins[r, 2] + t[r, i] * dirs[r, 2]
            s = 0.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            for b in range(B):
                dx = x - centers[b, 0]
                dy = y - centers[b, 1]
                dz = z - centers[b, 2]
                a = (dx * dx + dy * dy + dz * dz) * inv[b]
                if a > CUTOFF:
                    continue
                sb = amps[b] * np.exp(-a)
                s += sb
                c0 += sb * colors[b, 0]
                c1 += sb * colors[b, 1]
                c2 += sb * colors[b, 2]
            tau = s * delta
            alpha = -np.expm1(-tau)
            w = T * alpha / (s + EPS)
            p0 += w * c0
            p1 += w * c1
            p2 += w * c2
            T = T * np.exp(-tau)
        pixels[r, 0] = p0 + T * bg[0]
        pixels[r, 1] = p1 + T * bg[1]
        pixels[r, 2] = p2 + T * bg[2]
        final[r] = T


@numba.njit(cache=True)
def _backward(origins, dirs, t, delta, centers, radii, colors, amps, bg, grad,
              g_centers, g_radii, g_colors, g_amps):
    R, N = t.shape
    B = centers.shape[0]
    inv = 1.0 / (2.0 * radii**2)
    sig = np.empty(N)
    col = np.empty((N, 3))
    trans = np.empty(N + 1)
    wts = np.empty(N)
    for r in range(R):
        g0 = grad[r, 0]
        g1 = grad[r, 1]
        g2 = grad[r, 2]
        if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
            continue
        T = 1.0
        for i in range(N):
            x = origins[r, 0] + t[r, i] * dirs[r, 0]
            y = origins[r, 1] + t[r, i] * dirs[r, 1]
            z = origins[r, 2] + t[r, i] * dirs[r, 2]
            s = 0.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            for b in range(B):
                dx = x - centers[b, 0]
                dy = y - centers[b, 1]
                dz = z - centers[b, 2]
                a = (dx * dx + dy * dy + dz * dz) * inv[b]
                if a > CUTOFF:
                    continue
                sb = amps[b] * np.exp(-a)
                s += sb
                c0 += sb * colors[b, 0]
                c1 += sb * colors[b, 1]
                c2 += sb * colors[b, 2]
            sig[i] = s
            col[i, 0] = c0 / (s + EPS)
            col[i, 1] = c1 / (s + EPS)
            col[i, 2] = c2 / (s + EPS)
            trans[i] = T
            tau = s * delta
            wts[i] = T * (-np.expm1(-tau))
            T = T * np.exp(-tau)
        trans[N] = T
        # suffix radiance S_i = sum_{j>i} w_j c_j + T_N * bg, dotted with grad
        gS = T * (g0 * bg[0] + g1 * bg[1] + g2 * bg[2])
        for i in range(N - 1, -1, -1):
            gc = g0 * col[i, 0] + g1 * col[i, 1] + g2 * col[i, 2]
            d_sigma = delta * (trans[i + 1] * gc - gS)
            gS += wts[i] * gc
            inv_s = 1.0 / (sig[i] + EPS)
            d_sigma -= wts[i] * gc * inv_s
            d_colw0 = wts[i] * g0 * inv_s
            d_colw1 = wts[i] * g1 * inv_s
            d_colw2 = wts[i] * g2 * inv_s
            x = origins[r, 0] + t[r, i] * dirs[r, 0]
            y = origins[r, 1] + t[r, i] * dirs[r, 1]
            z = origins[r, 2] + t[r, i] * dirs[r, 2]
            for b in range(B):
                dx = x - centers[b, 0]
                dy = y - centers[b, 1]
                dz = z - centers[b, 2]
                q = dx * dx + dy * dy + dz * dz
                if q * inv[b] > CUTOFF:
                    continue
                e = np.exp(-q * inv[b])
                sb = amps[b] * e
                g_colors[b, 0] += sb * d_colw0
                g_colors[b, 1] += sb * d_colw1
                g_colors[b, 2] += sb * d_colw2
                d_sb = d_sigma + d_colw0 * colors[b, 0] + d_colw1 * colors[b, 1] + d_colw2 * colors[b, 2]
                g_amps[b] += d_sb * e
                k = d_sb * sb
                g_radii[b] += k * q / radii[b] ** 3
                f = k / (radii[b] * radii[b])
                g_centers[b, 0] += f * dx
                g_centers[b, 1] += f * dy
                g_centers[b, 2] += f * dz


def _np(x):
    return np.ascontiguousarray(x.detach().cpu().numpy(), dtype=np.float64)


class BlobRender(torch.autograd.Function):
    @staticmethod
    def forward(ctx, centers, radii, colors, amps, origins, dirs, t, delta, bg):
        arrays = [_np(a) for a in (origins, dirs, t)]
        blobs = [_np(a) for a in (centers, radii, colors, amps)]
        bg_np = _np(bg)
        R = arrays[0].shape[0]
        pixels = np.empty((R, 3))
        final = np.empty(R)
        _forward(*arrays, float(delta), *blobs, bg_np, pixels, final)
        ctx.saved = (arrays, blobs, bg_np, float(delta))
        final = torch.from_numpy(final)
        # opacity is a diagnostic output; its gradient is not propagated
        ctx.mark_non_differentiable(final)
        return torch.from_numpy(pixels), final

    @staticmethod
    def backward(ctx, grad_pixels, grad_final):
        arrays, blobs, bg_np, delta = ctx.saved
        grads = [np.zeros_like(b) for b in blobs]
        _backward(*arrays, delta, *blobs, bg_np, _np(grad_pixels), *grads)
        out = [torch.from_numpy(g) for g in grads]
        return (*out, None, None, None, None, None)


def render_blob_rays(centers, radii, colors, amps, origins, dirs, t, delta, background):
    bg = torch.as_tensor(background, dtype=torch.float64)
    return BlobRender.apply(centers, radii, colors, amps, origins, dirs, t, delta, bg)
