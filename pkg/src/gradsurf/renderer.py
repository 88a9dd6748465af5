"""SDF volume rendering: density conversion, ray sampling, compositing.

The rendered color of a pixel is the transmittance-weighted sum of sampled
colors along its ray; densities come from a Laplace CDF of the negated SDF.
Core routines are jax-pure and shape-static so the trainer can fuse them
into jitted steps; the public wrappers below take numpy in and hand numpy
back.
"""

import functools
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .cameras import generate_rays, pixel_grid
from .errors import ConfigMismatchError
from .fields import eval_radiance, eval_sdf_feat

DELTA_FLOOR = 1e-9  # keeps sample spacings strictly positive


@dataclass(frozen=True)
class RenderOptions:
    n_coarse: int = 64
    n_fine: int = 64
    background: tuple = (0.0, 0.0, 0.0)
    scene_bound: float = 1.0
    stratified: bool = True


@dataclass
class SampleSet:
    t: np.ndarray       # (..., S) distances from the origin, ascending
    x: np.ndarray       # (..., S, 3) sample points
    delta: np.ndarray   # (..., S) spacings; the last one is capped at far - t_S


@dataclass
class RenderResult:
    color: np.ndarray          # (..., 3)
    weights: np.ndarray        # (..., S)
    transmittance: np.ndarray  # (..., S)
    opacity: np.ndarray        # (...)


def sdf_to_density(f, beta):
    """Laplace-CDF density: sigma = Psi_beta(-f) / beta."""
    if not isinstance(beta, jax.core.Tracer) and float(beta) <= 0.0:
        raise ValueError("beta must be positive")
    return _laplace_density(jnp.asarray(f), beta)


def _laplace_density(f, beta):
    # split by sign with clamped exponents so neither branch overflows
    neg = 0.5 * jnp.exp(-jnp.maximum(f, 0.0) / beta)          # f >= 0
    pos = 1.0 - 0.5 * jnp.exp(jnp.minimum(f, 0.0) / beta)     # f < 0
    return jnp.where(f >= 0.0, neg, pos) / beta


def composite(colors, sigmas, deltas, background=(0.0, 0.0, 0.0)):
    """Evaluate the transmittance-weighted sum over samples.

    Accepts a single ray ((S, 3), (S,), (S,)) or a batch with leading dims.
    Returns (color, weights, transmittance, opacity). Transmittance follows
    the exact sequential recurrence T_1 = 1, T_{i+1} = T_i * (1 - alpha_i).
    """
    colors = jnp.asarray(colors)
    sigmas = jnp.asarray(sigmas)
    deltas = jnp.asarray(deltas)
    if colors.shape[:-1] != sigmas.shape or sigmas.shape != deltas.shape:
        raise ValueError(f"mismatched shapes: colors {colors.shape}, sigmas {sigmas.shape}, deltas {deltas.shape}")
    single = sigmas.ndim == 1
    if single:
        colors, sigmas, deltas = colors[None], sigmas[None], deltas[None]
    batch = sigmas.shape[:-1]
    alpha = 1.0 - jnp.exp(-sigmas * deltas)
    alpha2 = alpha.reshape(-1, alpha.shape[-1])

    def step(T, a):
        return T * (1.0 - a), T

    _, Ts = jax.lax.scan(step, jnp.ones(alpha2.shape[0], dtype=alpha.dtype), alpha2.T)
    trans = Ts.T.reshape(*batch, -1)
    weights = trans * alpha
    opacity = weights.sum(-1)
    bg = jnp.asarray(background, dtype=colors.dtype)
    color = (weights[..., None] * colors).sum(-2) + (1.0 - opacity)[..., None] * bg
    if single:
        return color[0], weights[0], trans[0], opacity[0]
    return color, weights, trans, opacity


def ray_sphere_bounds(origins, dirs, radius, eps=1e-4):
    """Entry/exit distances of rays against the bounding sphere.

    Returns (near, far); rays that miss get far <= near and render as
    background without field evaluations.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    b = (o * d).sum(-1)
    c = (o * o).sum(-1) - radius * radius
    disc = b * b - c
    sq = np.sqrt(np.maximum(disc, 0.0))
    near = np.maximum(-b - sq, eps)
    far = np.maximum(-b + sq, eps)
    miss = disc <= 0.0
    far = np.where(miss, near, far)
    return near.astype(np.float32), far.astype(np.float32)


def _stratified_ts(key, n_rays, n, near, far, stratified):
    span = (far - near)[:, None]
    edges = jnp.arange(n, dtype=span.dtype) / n
    if stratified:
        u = jax.random.uniform(key, (n_rays, n), dtype=span.dtype)
    else:
        u = jnp.full((n_rays, n), 0.5, dtype=span.dtype)
    return near[:, None] + span * (edges[None, :] + u / n)


def _sample_fine(key, t_coarse, weights, n_fine):
    """Inverse-CDF samples from the piecewise-constant coarse weight pdf.

    Falls back to a uniform pdf over the coarse span when the total weight
    vanishes (e.g. fully transparent rays).
    """
    w = weights[..., :-1]
    nb = w.shape[-1]
    total = w.sum(-1, keepdims=True)
    pdf = jnp.where(total > 1e-8, w / jnp.maximum(total, 1e-12), jnp.ones_like(w) / nb)
    cdf = jnp.concatenate([jnp.zeros_like(pdf[..., :1]), jnp.cumsum(pdf, -1)], -1)
    u = jax.random.uniform(key, (*w.shape[:-1], n_fine), dtype=w.dtype)
    idx = (u[..., None] >= cdf[..., None, :]).sum(-1)       # in [1, nb+1]
    b = jnp.clip(idx - 1, 0, nb - 1)
    cdf_lo = jnp.take_along_axis(cdf, b, axis=-1)
    cdf_hi = jnp.take_along_axis(cdf, b + 1, axis=-1)
    t_lo = jnp.take_along_axis(t_coarse, b, axis=-1)
    t_hi = jnp.take_along_axis(t_coarse, b + 1, axis=-1)
    frac = (u - cdf_lo) / jnp.maximum(cdf_hi - cdf_lo, 1e-12)
    return t_lo + frac * (t_hi - t_lo)


def _grad_wrt_points(params, x):
    return jax.grad(lambda q: eval_sdf_feat(params, q)[0].sum())(x)


def render_rays_core(geom_params, rad_params, o, d, near, far, key,
                     n_coarse, n_fine, background, stratified):
    """Full differentiable render of a ray batch; geometry and color nets may differ.

    Returns a dict with color, weights, trans, opacity per ray plus the
    per-sample t, x, sdf, grad used downstream (eikonal terms, depth,
    normal maps). Rays with far <= near contribute pure background.
    """
    n_rays = o.shape[0]
    hit = (far > near).astype(o.dtype)
    far_eff = jnp.where(far > near, far, near + 1e-3)
    beta = geom_params.beta
    key_c, key_f = jax.random.split(key)

    t_c = _stratified_ts(key_c, n_rays, n_coarse, near, far_eff, stratified)
    if n_fine > 0:
        x_c = o[:, None, :] + d[:, None, :] * t_c[..., None]
        f_c = eval_sdf_feat(geom_params, x_c)[0]
        sigma_c = _laplace_density(f_c, beta) * hit[:, None]
        delta_c = _deltas(t_c, far_eff)
        _, w_c, _, _ = composite(jnp.zeros((*f_c.shape, 3), dtype=f_c.dtype), sigma_c, delta_c)
        w_c = jax.lax.stop_gradient(w_c)
        t_f = _sample_fine(key_f, t_c, w_c, n_fine)
        t = jnp.sort(jnp.concatenate([t_c, t_f], -1), -1)
    else:
        t = t_c

    x = o[:, None, :] + d[:, None, :] * t[..., None]
    f, feat = eval_sdf_feat(geom_params, x)
    g = _grad_wrt_points(geom_params, x)
    normal = g / jnp.maximum(jnp.linalg.norm(g, axis=-1, keepdims=True), 1e-8)
    dirs = jnp.broadcast_to(d[:, None, :], x.shape)
    color_s = eval_radiance(rad_params, x, normal, dirs, feat)
    sigma = _laplace_density(f, beta) * hit[:, None]
    delta = _deltas(t, far_eff)
    color, weights, trans, opacity = composite(color_s, sigma, delta, background)
    return {"color": color, "weights": weights, "trans": trans, "opacity": opacity,
            "t": t, "x": x, "sdf": f, "grad": g, "normal": normal, "delta": delta}


def _deltas(t, far):
    dt = t[..., 1:] - t[..., :-1]
    last = jnp.maximum(far[:, None] - t[..., -1:], DELTA_FLOOR)
    return jnp.concatenate([jnp.maximum(dt, DELTA_FLOOR), last], -1)


@functools.partial(jax.jit, static_argnums=(7, 8, 9, 10))
def _render_jit(geom_params, rad_params, o, d, near, far, key,
                n_coarse, n_fine, background, stratified):
    return render_rays_core(geom_params, rad_params, o, d, near, far, key,
                            n_coarse, n_fine, background, stratified)


def _pad_to(arr, n):
    pad = n - arr.shape[0]
    if pad == 0:
        return arr
    return np.concatenate([arr, np.repeat(arr[-1:], pad, axis=0)], axis=0)


def _render_batch_np(geom_params, rad_params, o, d, near, far, opts, seed):
    """Numpy-boundary render with shape padding so jit caches stay small."""
    n = o.shape[0]
    n_pad = max(64, 1 << (n - 1).bit_length())
    key = jax.random.PRNGKey(seed)
    out = _render_jit(geom_params, rad_params,
                      jnp.asarray(_pad_to(o.astype(np.float32), n_pad)),
                      jnp.asarray(_pad_to(d.astype(np.float32), n_pad)),
                      jnp.asarray(_pad_to(near, n_pad)),
                      jnp.asarray(_pad_to(far, n_pad)),
                      key, opts.n_coarse, opts.n_fine, tuple(opts.background), opts.stratified)
    return {k: np.asarray(v)[:n] for k, v in out.items()}


def sample_ray(ray, near, far, n_coarse, n_fine, seed, params=None, coarse_weights=None):
    """Sample distances along one ray: stratified coarse plus importance fine.

    The fine distribution comes from `coarse_weights` if given, else from a
    coarse density pass of `params`; with neither, fine samples fall back to
    the uniform pdf. Deterministic given the seed.
    """
    if far <= near:
        raise ValueError(f"degenerate interval [{near}, {far}]")
    if n_coarse < 1 or n_fine < 0:
        raise ValueError("sample counts must be >= 1 coarse, >= 0 fine")
    o = jnp.asarray(np.asarray(ray[0], dtype=np.float32))[None]
    d = jnp.asarray(np.asarray(ray[1], dtype=np.float32))[None]
    near_a = jnp.full((1,), near, dtype=jnp.float32)
    far_a = jnp.full((1,), far, dtype=jnp.float32)
    key_c, key_f = jax.random.split(jax.random.PRNGKey(seed))
    t = _stratified_ts(key_c, 1, n_coarse, near_a, far_a, True)
    if n_fine > 0:
        if coarse_weights is not None:
            w = jnp.asarray(coarse_weights, dtype=jnp.float32)[None]
        elif params is not None:
            x_c = o[:, None, :] + d[:, None, :] * t[..., None]
            f_c = eval_sdf_feat(params, x_c)[0]
            sigma_c = _laplace_density(f_c, params.beta)
            _, w, _, _ = composite(jnp.zeros((*f_c.shape, 3)), sigma_c, _deltas(t, far_a))
        else:
            w = jnp.zeros_like(t)
        t_f = _sample_fine(key_f, t, w, n_fine)
        t = jnp.sort(jnp.concatenate([t, t_f], -1), -1)
    t_np = np.asarray(t[0], dtype=np.float64)
    x = np.asarray(ray[0], dtype=np.float64) + np.asarray(ray[1], dtype=np.float64) * t_np[:, None]
    dt = np.diff(t_np)
    delta = np.concatenate([np.maximum(dt, DELTA_FLOOR), [max(far - t_np[-1], DELTA_FLOOR)]])
    return SampleSet(t=t_np, x=x, delta=delta)


def render_pixels(params, camera, pixels, opts=RenderOptions(), seed=0, radiance_params=None):
    """Render a pixel batch; returns (RenderResult, SampleSet) in input order."""
    o, d = generate_rays(camera, pixels)
    near, far = ray_sphere_bounds(o, d, opts.scene_bound)
    rad = radiance_params if radiance_params is not None else params
    out = _render_batch_np(params, rad, o, d, near, far, opts, seed)
    result = RenderResult(color=out["color"], weights=out["weights"],
                          transmittance=out["trans"], opacity=out["opacity"])
    samples = SampleSet(t=out["t"], x=out["x"], delta=out["delta"])
    return result, samples


def patch_pixels(rect, width, height):
    """Integer pixel grid of a P x P rect plus its 1-pixel apron."""
    u0, v0, pw, ph = rect
    if u0 - 1 < 0 or v0 - 1 < 0 or u0 + pw > width - 1 or v0 + ph > height - 1:
        raise ValueError(f"patch {rect} apron leaves the {width}x{height} image")
    us = np.arange(u0 - 1, u0 + pw + 1)
    vs = np.arange(v0 - 1, v0 + ph + 1)
    uu, vv = np.meshgrid(us, vs)
    return np.stack([uu.reshape(-1), vv.reshape(-1)], axis=-1)


def render_patch(params, camera, rect, opts=RenderOptions(), seed=0):
    """Render rect plus a 1-pixel apron: (P+2, P+2, 3) for a P x P rect."""
    px = patch_pixels(rect, camera.width, camera.height)
    result, _ = render_pixels(params, camera, px, opts, seed)
    pw, ph = rect[2], rect[3]
    return result.color.reshape(ph + 2, pw + 2, 3)


def render_image(params, camera, opts=RenderOptions(), seed=0, chunk=4096):
    """Full RGB image for a camera, chunked over pixels."""
    return transfer_render(params, params, camera, opts, seed, chunk)


def transfer_render(geom_params, radiance_params, camera, opts=RenderOptions(), seed=0, chunk=4096):
    """Render with one field's geometry and another's colors.

    Both parameter sets must share a FieldConfig; transfer_render(p, p, ...)
    is the ordinary rendering path.
    """
    if geom_params.config != radiance_params.config:
        raise ConfigMismatchError(
            f"field configs differ: {geom_params.config} vs {radiance_params.config}")
    px = pixel_grid(camera)
    out = np.zeros((len(px), 3), dtype=np.float32)
    for lo in range(0, len(px), chunk):
        o, d = generate_rays(camera, px[lo:lo + chunk])
        near, far = ray_sphere_bounds(o, d, opts.scene_bound)
        res = _render_batch_np(geom_params, radiance_params, o, d, near, far, opts, seed)
        out[lo:lo + chunk] = res["color"]
    return out.reshape(camera.height, camera.width, 3)


def render_normal_map(params, camera, opts=RenderOptions(), seed=0, chunk=4096):
    """Weight-accumulated unit normals mapped to RGB via (n + 1) / 2.

    Empty rays accumulate the zero vector and map to the (0.5, 0.5, 0.5)
    background.
    """
    px = pixel_grid(camera)
    out = np.zeros((len(px), 3), dtype=np.float32)
    for lo in range(0, len(px), chunk):
        o, d = generate_rays(camera, px[lo:lo + chunk])
        near, far = ray_sphere_bounds(o, d, opts.scene_bound)
        res = _render_batch_np(params, params, o, d, near, far, opts, seed)
        acc = (res["weights"][..., None] * res["normal"]).sum(-2)
        out[lo:lo + chunk] = (acc + 1.0) / 2.0
    return out.reshape(camera.height, camera.width, 3)
