"""Camera sampling, ray generation, volume compositing, shading.

One frame = one camera; rays march uniformly through the bounding sphere,
radiances composite front-to-back over the environment-map background.
Modulations are computed once per frame and shared by every ray. The whole
frame is recorded on a single tape, so the trainer can seed a gradient image
at the pixels and pull it back to the mapping-network weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, Tape, sigmoid
from .errors import ContractError, InputError, StructuralError
from .fields import density_bias, posenc, radiance_nodes, envmap_nodes
from .grids import GridParams, encode_jacobian_x, encode_points_node
from .model import ModelConfig, ModelSnapshot, modulation_nodes

__all__ = [
    "CameraConfig", "CameraSample", "RenderOpts", "RenderedFrame",
    "sample_camera", "camera_rays", "ray_sphere_segment", "composite",
    "shade", "render_frame", "build_render_graph",
]

SHADING_MODES = ("albedo", "full", "textureless")
BOUND_RADIUS = 2.0
DEGENERATE_NORMAL_EPS = 1e-8


@dataclass(frozen=True)
class CameraConfig:
    distance_range: tuple[float, float] = (2.0, 3.0)
    focal_range: tuple[float, float] = (0.7, 1.35)
    elevation_range_deg: tuple[float, float] = (-10.0, 45.0)
    light_distance_range: tuple[float, float] = (1.0, 3.0)
    light_angle_max: float = math.pi / 4
    # albedo-weighted to stabilize color learning
    shading_probs: tuple[float, float, float] = (0.5, 0.25, 0.25)
    ambient_range: tuple[float, float] = (0.2, 1.0)


@dataclass
class CameraSample:
    distance: float
    azimuth: float
    elevation: float
    focal: float
    light_pos: np.ndarray
    shading: str = "albedo"
    ambient: float = 1.0

    @property
    def view_bucket(self) -> str:
        """front / side / rear in 90 / 180 / 90 degree azimuth sectors."""
        deg = math.degrees(self.azimuth) % 360.0
        if deg < 45.0 or deg >= 315.0:
            return "front"
        if deg < 135.0 or (225.0 <= deg < 315.0):
            return "side"
        return "rear"

    def position(self) -> np.ndarray:
        ce = math.cos(self.elevation)
        return self.distance * np.array([ce * math.cos(self.azimuth),
                                         ce * math.sin(self.azimuth),
                                         math.sin(self.elevation)])


def sample_camera(rng: np.random.Generator, cfg: CameraConfig = CameraConfig()) -> CameraSample:
    """Random view + point light + shading augmentation for one frame."""
    azimuth = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = (math.radians(d) for d in cfg.elevation_range_deg)
    elevation = rng.uniform(lo, hi)
    distance = rng.uniform(*cfg.distance_range)
    focal = rng.uniform(*cfg.focal_range)

    cam = CameraSample(distance=distance, azimuth=azimuth, elevation=elevation,
                       focal=focal, light_pos=np.zeros(3))
    cam_dir = cam.position() / distance
    light_dist = rng.uniform(*cfg.light_distance_range)
    theta = rng.uniform(0.0, cfg.light_angle_max)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    # rotate cam_dir by theta around a random orthogonal axis
    aux = np.array([0.0, 0.0, 1.0]) if abs(cam_dir[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(cam_dir, aux)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(cam_dir, e1)
    ldir = math.cos(theta) * cam_dir + math.sin(theta) * (math.cos(phi) * e1 + math.sin(phi) * e2)
    cam.light_pos = light_dist * ldir

    r = rng.uniform()
    p_albedo, p_full, _ = cfg.shading_probs
    cam.shading = "albedo" if r < p_albedo else ("full" if r < p_albedo + p_full else "textureless")
    cam.ambient = rng.uniform(*cfg.ambient_range)
    return cam


def camera_rays(cam: CameraSample, hw: tuple[int, int], dtype=np.float64):
    """Pinhole rays through pixel centers: (origin (3,), unit dirs (H*W, 3)).

    Row-major pixels, +y up in the image plane; larger focal = narrower view.
    """
    h, w = hw
    origin = cam.position()
    fwd = -origin / np.linalg.norm(origin)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-12:  # looking straight down/up
        right = np.array([math.cos(cam.azimuth + math.pi / 2), math.sin(cam.azimuth + math.pi / 2), 0.0])
    else:
        right = right / nr
    upv = np.cross(right, fwd)

    xs = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    ys = 1.0 - (np.arange(h) + 0.5) / h * 2.0
    gx, gy = np.meshgrid(xs, ys)
    dirs = (cam.focal * fwd[None, :]
            + gx.reshape(-1, 1) * right[None, :]
            + gy.reshape(-1, 1) * upv[None, :])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return origin.astype(dtype), dirs.astype(dtype)


def ray_sphere_segment(origin, dirs, radius: float = BOUND_RADIUS):
    """Entry/exit parameters against the bounding sphere.

    Returns (t_near (R,), t_far (R,), hit (R,) bool). Origins inside get
    t_near = 0; tangent or non-intersecting rays are misses.
    """
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    single = dirs.ndim == 1
    d = dirs.reshape(-1, 3)
    b = d @ origin
    c = float(origin @ origin) - radius * radius
    disc = b * b - c
    hit = disc > 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = np.maximum(-b - sq, 0.0)
    t1 = -b + sq
    hit = hit & (t1 > 0.0) & (t1 > t0)
    if single:
        return float(t0[0]), float(t1[0]), bool(hit[0])
    return t0, t1, hit


def composite_nodes(tape: Tape, sigmas: Node, colors: Node, deltas: Node, background: Node):
    """Front-to-back compositing over a background.

    sigmas (R, S), colors (R, S, 3), deltas (R, S), background (R, 3).
    Returns (pixels (R, 3), alpha (R,), weights (R, S)).
    """
    r, s = sigmas.value.shape
    dt = sigmas.value.dtype
    sd = tape.mul(sigmas, deltas)
    trans = tape.exp(tape.scale(tape.cumsum_ex(sd, axis=-1), -1.0))    # T_i
    absorb = tape.sub(tape.constant(np.ones((r, s), dtype=dt)), tape.exp(tape.scale(sd, -1.0)))
    weights = tape.mul(trans, absorb)                                  # T_i alpha_i
    t_final = tape.exp(tape.scale(tape.sum(sd, axis=-1), -1.0))        # T_N (R,)
    fg = tape.sum(tape.mul(tape.reshape(weights, (r, s, 1)), colors), axis=1)
    pixels = tape.add(fg, tape.mul(tape.reshape(t_final, (r, 1)), background))
    alpha = tape.sub(tape.constant(np.ones(r, dtype=dt)), t_final)
    return pixels, alpha, weights


def composite(sigmas, colors, deltas, background):
    """Per-ray compositing (forward only): returns (pixel rgb, alpha, weights).

    Accepts one ray (S,), (S, 3), (S,), (3,) or a batch with leading ray dim.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if np.any(sigmas < 0):
        raise InputError("densities must be non-negative")
    if np.any(deltas <= 0):
        raise InputError("deltas must be positive")
    single = sigmas.ndim == 1
    sg = sigmas.reshape(1, -1) if single else sigmas
    cl = colors.reshape(1, -1, 3) if single else colors
    dl = deltas.reshape(1, -1) if single else deltas
    bg = background.reshape(1, 3) if single else background
    if not (sg.shape == dl.shape and cl.shape == sg.shape + (3,)):
        raise StructuralError(f"length mismatch: sigmas {sigmas.shape}, colors {colors.shape}, deltas {deltas.shape}")
    tape = Tape()
    pixels, alpha, weights = composite_nodes(tape, tape.constant(sg), tape.constant(cl),
                                             tape.constant(dl), tape.constant(bg))
    if single:
        return pixels.value[0], float(alpha.value[0]), weights.value[0]
    return pixels.value, alpha.value, weights.value


def shade(albedo, normal, light_pos, point, mode: str, ambient: float = 0.3):
    """Per-sample shading: albedo passthrough, lambertian 'full', or white 'textureless'.

    Degenerate normals (norm < 1e-8) fall back to albedo for that sample.
    """
    if mode not in SHADING_MODES:
        raise ContractError(f"unknown shading mode {mode!r}")
    albedo = np.asarray(albedo, dtype=np.float64)
    if mode == "albedo":
        return albedo.copy()
    normal = np.asarray(normal, dtype=np.float64)
    point = np.asarray(point, dtype=np.float64)
    single = albedo.ndim == 1
    alb = albedo.reshape(-1, 3)
    nrm = normal.reshape(-1, 3)
    pts = point.reshape(-1, 3)
    ldir = np.asarray(light_pos, dtype=np.float64)[None, :] - pts
    ldir /= np.maximum(np.linalg.norm(ldir, axis=1, keepdims=True), 1e-12)
    nn = np.linalg.norm(nrm, axis=1)
    lam = np.maximum(0.0, (nrm * ldir).sum(axis=1) / np.maximum(nn, 1e-12))
    factor = ambient + (1.0 - ambient) * lam
    factor = np.where(nn < DEGENERATE_NORMAL_EPS, 1.0, factor)
    base = alb if mode == "full" else np.ones_like(alb)
    out = base * factor[:, None]
    return out[0] if single else out.reshape(albedo.shape)


def density_normals(param_values: dict[str, np.ndarray], grids: GridParams,
                    pts: np.ndarray, cfg: ModelConfig,
                    feats: np.ndarray | None = None) -> np.ndarray:
    """Unit normals -grad(sigma)/|grad(sigma)| at sample points, detached.

    The density pre-activation gradient is assembled analytically: trilinear
    jacobian -> hidden layer chain -> plus the spatial bias term. Rows with
    a near-zero gradient come back as zero vectors (shading falls back to
    albedo there).
    """
    jac = encode_jacobian_x(pts, grids, cfg.grid)  # (N, F, 3)
    if feats is None:
        from .grids import encode_point
        feats = encode_point(pts, grids, cfg.grid)
    w1, b1 = param_values["head.w1"], param_values["head.b1"]
    w2 = param_values["head.w2"]
    z = feats @ w1 + b1
    sgate = sigmoid(z)
    dsilu = sgate * (1.0 + z * (1.0 - sgate))
    dpre_dfeat = (dsilu * w2[:, 0][None, :]) @ w1.T  # (N, F)
    grad = (jac * dpre_dfeat[:, :, None]).sum(axis=1)
    norms = np.linalg.norm(pts, axis=-1, keepdims=True)
    grad = grad + (-20.0) * pts / np.maximum(norms, 1e-12)  # bias term d/dx 10(1-2|x|)
    gn = np.linalg.norm(grad, axis=-1, keepdims=True)
    normals = np.where(gn > DEGENERATE_NORMAL_EPS, -grad / np.maximum(gn, 1e-30), 0.0)
    return normals


@dataclass(frozen=True)
class RenderOpts:
    image_size: int = 64
    n_samples: int = 32
    jitter: bool = False
    max_size: int = 512

    def __post_init__(self):
        if not (0 < self.image_size <= self.max_size):
            raise InputError(f"image size must be in (0, {self.max_size}]")
        if self.n_samples < 1:
            raise InputError("need at least one sample per ray")


@dataclass
class RenderedFrame:
    rgb: np.ndarray        # (H, W, 3) in [0, 1]
    alpha: np.ndarray      # (H, W) accumulated opacity
    weights: np.ndarray    # (H*W, S) compositing weights, kept for regularizers


@dataclass
class RenderGraph:
    """Tape nodes and detached arrays for one frame."""

    pixels: Node           # (R, 3)
    alpha: Node            # (R,)
    weights: Node          # (R, S)
    points: np.ndarray     # (R, S, 3)
    dirs: np.ndarray       # (R, 3)
    normals: np.ndarray | None
    hit: np.ndarray        # (R,) bool


def build_render_graph(tape: Tape, pnodes: dict[str, Node], cfg: ModelConfig,
                       c: np.ndarray, cam: CameraSample, opts: RenderOpts,
                       rng: np.random.Generator | None = None,
                       modulation: tuple[np.ndarray, GridParams] | None = None) -> RenderGraph:
    """Record one frame on `tape`.

    pnodes maps parameter names to tape nodes (leaves while training,
    constants at inference). When `modulation` is given, the mapping network
    is skipped and the cached (v, grids) enter as constants.
    """
    dt = cfg.np_dtype
    h = w = opts.image_size
    origin, dirs = camera_rays(cam, (h, w), dtype=dt)
    t0, t1, hit = ray_sphere_segment(origin, dirs)
    n_ray, n_smp = dirs.shape[0], opts.n_samples

    span = np.where(hit, t1 - t0, 1.0)
    if opts.jitter:
        if rng is None:
            raise ContractError("jittered sampling needs an rng")
        offs = rng.uniform(0.0, 1.0, size=(n_ray, n_smp))
    else:
        offs = np.broadcast_to(np.full(n_smp, 0.5), (n_ray, n_smp))
    tvals = t0[:, None] + (np.arange(n_smp)[None, :] + offs) * (span[:, None] / n_smp)
    pts = (origin[None, None, :] + tvals[:, :, None] * dirs[:, None, :]).astype(dt)
    deltas = np.broadcast_to((span / n_smp)[:, None], (n_ray, n_smp)).astype(dt)

    # modulation: once per frame, reused by all rays
    if modulation is None:
        v_node, flat = modulation_nodes(tape, pnodes, tape.constant(c.reshape(-1).astype(dt)),
                                        pnodes["sn.map.w1"].value, pnodes["sn.map.w2"].value)
        table_nodes = []
        start = 0
        for res, size in zip(cfg.grid.levels, cfg.grid.level_sizes()):
            seg = tape.slice(flat, start, start + size, axis=0)
            table_nodes.append(tape.reshape(seg, (res ** 3, cfg.grid.features_per_level)))
            start += size
    else:
        v_arr, grids = modulation
        v_node = tape.constant(np.asarray(v_arr, dtype=dt))
        table_nodes = [tape.constant(np.asarray(t, dtype=dt)) for t in grids.levels]

    feats = encode_points_node(tape, tape.constant(pts.reshape(-1, 3)), table_nodes, cfg.grid)
    bias = tape.constant(density_bias(pts.reshape(-1, 3)).astype(dt))
    sigma, rgb = radiance_nodes(tape, feats, bias, pnodes)

    # shading (normals detached; albedo mode leaves colors untouched)
    normals = None
    if cam.shading == "albedo":
        colors = rgb
    else:
        grid_vals = GridParams([t.value for t in table_nodes])
        pv = {k: n.value for k, n in pnodes.items()}
        normals = density_normals(pv, grid_vals, pts.reshape(-1, 3), cfg, feats=feats.value)
        ldir = cam.light_pos[None, :] - pts.reshape(-1, 3)
        ldir /= np.maximum(np.linalg.norm(ldir, axis=1, keepdims=True), 1e-12)
        nn = np.linalg.norm(normals, axis=1)
        lam = np.maximum(0.0, (normals * ldir).sum(axis=1))
        factor = cam.ambient + (1.0 - cam.ambient) * lam
        factor = np.where(nn < 0.5, 1.0, factor).astype(dt)  # zero rows = degenerate
        if cam.shading == "full":
            colors = tape.mul(rgb, tape.constant(factor[:, None]))
        else:  # textureless: white albedo, gradient reaches geometry only
            colors = tape.constant(np.repeat(factor[:, None], 3, axis=1))

    sigma = tape.reshape(sigma, (n_ray, n_smp))
    sigma = tape.mul(sigma, tape.constant(hit.astype(dt)[:, None]))  # miss rays: background only
    colors = tape.reshape(colors, (n_ray, n_smp, 3))

    enc = posenc(dirs).astype(dt)
    bg = envmap_nodes(tape, tape.constant(enc), v_node, pnodes["env.w"], pnodes["env.b"],
                      pnodes["sn.env.w"].value)
    pixels, alpha, weights = composite_nodes(tape, sigma, colors, tape.constant(deltas), bg)
    return RenderGraph(pixels=pixels, alpha=alpha, weights=weights, points=pts,
                       dirs=dirs, normals=normals, hit=hit)


def render_frame(snapshot: ModelSnapshot, c: np.ndarray, cam: CameraSample,
                 opts: RenderOpts = RenderOpts(),
                 modulation: tuple[np.ndarray, GridParams] | None = None,
                 rng: np.random.Generator | None = None) -> RenderedFrame:
    """Forward render of one frame from an immutable snapshot."""
    from .model import compute_modulation
    if modulation is None:
        modulation = compute_modulation(snapshot, c)
    tape = Tape()
    pnodes = {k: tape.constant(v) for k, v in snapshot.params.items()}
    g = build_render_graph(tape, pnodes, snapshot.config, np.asarray(c), cam, opts,
                           rng=rng, modulation=modulation)
    h = w = opts.image_size
    return RenderedFrame(rgb=g.pixels.value.reshape(h, w, 3).copy(),
                         alpha=g.alpha.value.reshape(h, w).copy(),
                         weights=g.weights.value.copy())
