"""Synthetic corpus generation: icosphere viewpoints, a software volume
renderer over a time-varying analytic field, and the sort/pair/subset protocol.

The corpus is deterministic down to the byte for a fixed config: the field is
an analytic Gaussian mixture (lobes orbiting over time), rays are orthographic,
and everything renders in float64 numpy before the 8-bit quantization.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .networks import VisParams

log = logging.getLogger(__name__)

EPS_NORM = 1e-9


@dataclass(frozen=True)
class ViewPoint:
    """Unit camera position on the sphere with its spherical angles."""

    theta: float  # polar angle in [0, pi]
    phi_view: float  # azimuth in [0, 2*pi)
    position: tuple[float, float, float]

    def __post_init__(self):
        n = float(np.linalg.norm(self.position))
        if abs(n - 1.0) > EPS_NORM:
            raise ValueError(f"position norm {n} not unit")

    @staticmethod
    def from_position(p) -> "ViewPoint":
        p = np.asarray(p, dtype=np.float64)
        p = p / np.linalg.norm(p)
        theta = float(np.arccos(np.clip(p[2], -1.0, 1.0)))
        phi = float(np.arctan2(p[1], p[0])) % (2.0 * np.pi)
        return ViewPoint(theta=theta, phi_view=phi, position=(float(p[0]), float(p[1]), float(p[2])))

    def antipode(self) -> "ViewPoint":
        # exact negation (no renormalization) so antipodal ray geometry mirrors
        # bit-for-bit
        x, y, z = self.position
        theta = float(np.arccos(np.clip(-z, -1.0, 1.0)))
        phi = float(np.arctan2(-y, -x)) % (2.0 * np.pi)
        return ViewPoint(theta=theta, phi_view=phi, position=(-x, -y, -z))


def icosphere_views(subdiv_level: int) -> list[ViewPoint]:
    """Vertices of a subdivided icosahedron projected to the unit sphere.

    Midpoint subdivision with an edge cache, so vertex counts follow
    V' = V + E: 12, 42, 162, 642, 2562 for levels 0..4.
    """
    if not (0 <= subdiv_level <= 4):
        raise ValueError(f"subdiv_level must be in [0,4], got {subdiv_level}")
    g = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, g, 0), (1, g, 0), (-1, -g, 0), (1, -g, 0),
        (0, -1, g), (0, 1, g), (0, -1, -g), (0, 1, -g),
        (g, 0, -1), (g, 0, 1), (-g, 0, -1), (-g, 0, 1),
    ]
    verts = [tuple(np.asarray(v, dtype=np.float64) / np.linalg.norm(v)) for v in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(subdiv_level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2.0
                m = m / np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return [ViewPoint.from_position(v) for v in verts]


@dataclass(frozen=True)
class FieldConfig:
    """Time-varying Gaussian-mixture scalar field."""

    n_lobes: int = 5
    orbit_radius: float = 0.55
    lobe_sigma: float = 0.28
    orbit_turns: float = 0.5  # fraction of a full revolution over t in [0,1]
    tilt: float = 0.35  # vertical oscillation amplitude of the lobe centers
    seed: int = 0
    symmetric: bool = False  # mirror every lobe through the origin


class GaussianField:
    """Evaluates the mixture and its analytic gradient at arbitrary points."""

    def __init__(self, cfg: FieldConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        k = cfg.n_lobes
        self.phases = rng.uniform(0.0, 2.0 * np.pi, k)
        self.amps = rng.uniform(0.7, 1.0, k)
        self.z_phases = rng.uniform(0.0, 2.0 * np.pi, k)

    def centers(self, t_norm: float) -> np.ndarray:
        cfg = self.cfg
        ang = self.phases + 2.0 * np.pi * cfg.orbit_turns * t_norm
        c = np.stack(
            [
                cfg.orbit_radius * np.cos(ang),
                cfg.orbit_radius * np.sin(ang),
                cfg.tilt * np.sin(self.z_phases + 2.0 * np.pi * cfg.orbit_turns * t_norm),
            ],
            axis=1,
        )
        if cfg.symmetric:
            c = np.concatenate([c, -c], axis=0)
        return c

    def _amps(self) -> np.ndarray:
        return np.concatenate([self.amps, self.amps]) if self.cfg.symmetric else self.amps

    def value(self, points: np.ndarray, t_norm: float) -> np.ndarray:
        c = self.centers(t_norm)
        a = self._amps()
        inv2s2 = 1.0 / (2.0 * self.cfg.lobe_sigma**2)
        d2 = ((points[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)  # [N, K]
        return (a[None, :] * np.exp(-d2 * inv2s2)).sum(axis=1)

    def value_and_gradient(self, points: np.ndarray, t_norm: float):
        c = self.centers(t_norm)
        a = self._amps()
        s2 = self.cfg.lobe_sigma**2
        diff = points[:, None, :] - c[None, :, :]  # [N, K, 3]
        w = a[None, :] * np.exp(-(diff**2).sum(axis=2) / (2.0 * s2))  # [N, K]
        value = w.sum(axis=1)
        grad = -(w[:, :, None] * diff).sum(axis=1) / s2
        return value, grad


# camera / marching geometry
_CAM_DIST = 3.0
_HALF_EXTENT = 1.35
_NEAR, _FAR = _CAM_DIST - 1.8, _CAM_DIST + 1.8
_N_STEPS = 160
_ISO_LEVEL = 0.4
_IR_ALBEDO = np.array([0.88, 0.62, 0.35])
_DVR_COLD = np.array([0.20, 0.35, 0.90])
_DVR_HOT = np.array([0.95, 0.40, 0.15])
_DVR_DENSITY = 24.0
_WORLD_UP = np.array([0.0, 0.0, 1.0])
_ALT_UP = np.array([1.0, 0.0, 0.0])


def _camera_basis(view: ViewPoint):
    forward = -np.asarray(view.position, dtype=np.float64)  # toward the origin
    up_hint = _WORLD_UP if abs(forward @ _WORLD_UP) < 1.0 - 1e-9 else _ALT_UP
    right = np.cross(up_hint, forward)
    right /= np.linalg.norm(right)
    up = np.cross(forward, right)
    return right, up, forward


def _ray_origins(view: ViewPoint, res: tuple[int, int]):
    h, w = res
    right, up, forward = _camera_basis(view)
    ys = (np.arange(h, dtype=np.float64) + 0.5 - h / 2.0) * (2.0 * _HALF_EXTENT / h)
    xs = (np.arange(w, dtype=np.float64) + 0.5 - w / 2.0) * (2.0 * _HALF_EXTENT / w)
    # image rows run top to bottom: +y in camera space is up
    gy, gx = np.meshgrid(-ys, xs, indexing="ij")
    cam = np.asarray(view.position, dtype=np.float64) * _CAM_DIST
    origins = cam[None, :] + gx.reshape(-1, 1) * right[None, :] + gy.reshape(-1, 1) * up[None, :]
    return origins, forward


def render_synthetic(
    t: int,
    view: ViewPoint,
    mode: str,
    res: tuple[int, int],
    field_config: FieldConfig | None = None,
    n_timesteps: int = 6,
) -> np.ndarray:
    """Deterministic [3,H,W] float64 render in [0,1], white background.

    IR: first iso-crossing along each orthographic ray, refined by one secant
    step, shaded with a Lambertian headlight. DVR: front-to-back
    emission-absorption with a linear two-color transfer function.
    """
    if mode not in ("IR", "DVR"):
        raise ValueError(f"mode must be 'IR' or 'DVR', got {mode!r}")
    if not (0 <= t <= n_timesteps - 1):
        raise ValueError(f"t={t} outside [0,{n_timesteps - 1}]")
    t_norm = t / (n_timesteps - 1) if n_timesteps > 1 else 0.0
    fld = GaussianField(field_config or FieldConfig())
    h, w = res
    origins, forward = _ray_origins(view, res)
    n_px = origins.shape[0]
    taus = np.linspace(_NEAR, _FAR, _N_STEPS)
    dtau = float(taus[1] - taus[0])

    if mode == "IR":
        prev_val = fld.value(origins + taus[0] * forward[None, :], t_norm) - _ISO_LEVEL
        hit_tau = np.full(n_px, np.nan)
        for k in range(1, _N_STEPS):
            val = fld.value(origins + taus[k] * forward[None, :], t_norm) - _ISO_LEVEL
            crossing = np.isnan(hit_tau) & (prev_val < 0) & (val >= 0)
            if crossing.any():
                # secant refinement inside the bracketing interval
                frac = prev_val[crossing] / (prev_val[crossing] - val[crossing])
                hit_tau[crossing] = taus[k - 1] + frac * dtau
            prev_val = val
        img = np.ones((n_px, 3))
        hit = ~np.isnan(hit_tau)
        if hit.any():
            pts = origins[hit] + hit_tau[hit, None] * forward[None, :]
            _, grad = fld.value_and_gradient(pts, t_norm)
            normals = grad / np.maximum(np.linalg.norm(grad, axis=1, keepdims=True), 1e-12)
            # headlight: light arrives along the viewing direction
            lambert = np.abs(normals @ forward)
            shade = 0.25 + 0.75 * lambert
            img[hit] = shade[:, None] * _IR_ALBEDO[None, :]
    else:
        color = np.zeros((n_px, 3))
        transmit = np.ones(n_px)
        for k in range(_N_STEPS):
            val = fld.value(origins + taus[k] * forward[None, :], t_norm)
            u = np.clip((val - 0.15) / 0.85, 0.0, 1.0)
            alpha = 1.0 - np.exp(-_DVR_DENSITY * u * dtau)
            sample_rgb = _DVR_COLD[None, :] + u[:, None] * (_DVR_HOT - _DVR_COLD)[None, :]
            color += (transmit * alpha)[:, None] * sample_rgb
            transmit *= 1.0 - alpha
            if transmit.max() < 1e-4:
                break
        img = color + transmit[:, None]  # composite over white

    img = np.clip(img, 0.0, 1.0)
    return img.reshape(h, w, 3).transpose(2, 0, 1)


@dataclass
class ManifestRecord:
    path: str
    t: int
    theta: float
    phi_view: float
    split: str  # train | heldout
    pair_id: int
    side: str  # l | r


def sort_and_pair(views: list[ViewPoint], n_timesteps: int) -> list[ManifestRecord]:
    """Stable (theta, phi) sort, adjacent pairing, odd leftover dropped.

    pair_id enumerates (timestep, pair index) globally; both members of a pair
    share the timestep and, by the sort rule, adjacent azimuths.
    """
    if len(views) < 2:
        raise ValueError(f"need at least 2 views to pair, got {len(views)}")
    order = sorted(range(len(views)), key=lambda i: (views[i].theta, views[i].phi_view))
    if len(order) % 2:
        dropped = order[-1]
        log.info("odd view count %d: dropping last sorted view %d", len(views), dropped)
        order = order[:-1]
    records = []
    pairs_per_t = len(order) // 2
    for t in range(n_timesteps):
        for j in range(pairs_per_t):
            pair_id = t * pairs_per_t + j
            for side, idx in (("l", order[2 * j]), ("r", order[2 * j + 1])):
                v = views[idx]
                records.append(
                    ManifestRecord(
                        path=f"t{t:03d}_p{j:03d}_{side}.png",
                        t=t,
                        theta=v.theta,
                        phi_view=v.phi_view,
                        split="train",
                        pair_id=pair_id,
                        side=side,
                    )
                )
    return records


def select_training_subset(
    records: list[ManifestRecord], view_fraction: float = 0.5, time_fraction: float = 1.0 / 3.0
) -> list[ManifestRecord]:
    """Evenly strided train/heldout split over pairs and timesteps.

    Keeps every round(1/view_fraction)-th pair and every
    round(1/time_fraction)-th timestep (both starting at index 0) as train;
    everything else becomes heldout. Pairs are never split across the two.
    """
    view_stride = round(1.0 / view_fraction)
    time_stride = round(1.0 / time_fraction)
    timesteps = sorted({r.t for r in records})
    train_t = {t for i, t in enumerate(timesteps) if i % time_stride == 0}
    # pair index within its timestep follows pair_id ordering
    pairs_by_t: dict[int, list[int]] = {}
    for r in records:
        pairs_by_t.setdefault(r.t, [])
        if r.pair_id not in pairs_by_t[r.t]:
            pairs_by_t[r.t].append(r.pair_id)
    train_pairs = set()
    for t, pids in pairs_by_t.items():
        if t not in train_t:
            continue
        for i, pid in enumerate(sorted(pids)):
            if i % view_stride == 0:
                train_pairs.add(pid)
    if not train_pairs:
        raise ValueError("subset selection produced no training pairs")
    return [replace(r, split="train" if r.pair_id in train_pairs else "heldout") for r in records]


MANIFEST_COLUMNS = ("path", "t", "theta", "phi", "split", "pair_id", "side")


def write_manifest(records: list[ManifestRecord], path) -> None:
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for r in records:
        lines.append(
            "\t".join(
                [r.path, str(r.t), repr(r.theta), repr(r.phi_view), r.split, str(r.pair_id), r.side]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != MANIFEST_COLUMNS:
        raise ValueError(f"bad manifest header in {path}")
    records = []
    for line in lines[1:]:
        p, t, theta, phi, split, pair_id, side = line.split("\t")
        records.append(
            ManifestRecord(
                path=p,
                t=int(t),
                theta=float(theta),
                phi_view=float(phi),
                split=split,
                pair_id=int(pair_id),
                side=side,
            )
        )
    return records


@dataclass(frozen=True)
class CorpusConfig:
    subdiv_level: int = 1
    n_timesteps: int = 6
    height: int = 128
    width: int = 128
    mode: str = "IR"
    field: FieldConfig = field(default_factory=FieldConfig)

    def to_dict(self) -> dict:
        d = {
            "subdiv_level": self.subdiv_level,
            "n_timesteps": self.n_timesteps,
            "height": self.height,
            "width": self.width,
            "mode": self.mode,
            "field": self.field.__dict__.copy(),
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "CorpusConfig":
        d = dict(d)
        fld = d.pop("field", {})
        return CorpusConfig(field=FieldConfig(**fld), **d)


def save_corpus_config(cfg: CorpusConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def load_corpus_config(path) -> CorpusConfig:
    return CorpusConfig.from_dict(json.loads(Path(path).read_text()))


def generate_corpus(cfg: CorpusConfig, out_dir) -> list[ManifestRecord]:
    """Render the full corpus, write 8-bit PNGs, manifest.tsv and corpus.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    views = icosphere_views(cfg.subdiv_level)
    records = sort_and_pair(views, cfg.n_timesteps)
    records = select_training_subset(records)
    by_angles = {}
    for r in records:
        by_angles.setdefault((r.theta, r.phi_view), ViewPoint.from_position(_position_of(r)))
    for r in records:
        img = render_synthetic(
            r.t,
            by_angles[(r.theta, r.phi_view)],
            cfg.mode,
            (cfg.height, cfg.width),
            field_config=cfg.field,
            n_timesteps=cfg.n_timesteps,
        )
        arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(out / r.path)
    write_manifest(records, out / "manifest.tsv")
    save_corpus_config(cfg, out / "corpus.json")
    return records


def _position_of(r: ManifestRecord) -> tuple[float, float, float]:
    st, ct = np.sin(r.theta), np.cos(r.theta)
    return (st * np.cos(r.phi_view), st * np.sin(r.phi_view), ct)


def load_image(path) -> np.ndarray:
    """PNG -> [3,H,W] float32 in [0,1]."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def vis_params_of(r: ManifestRecord, n_timesteps: int) -> VisParams:
    """Normalize (t, theta, phi) to [0,1] for the entropy-model conditioning."""
    t_norm = r.t / (n_timesteps - 1) if n_timesteps > 1 else 0.0
    return VisParams(t=t_norm, theta=r.theta / np.pi, phi_view=r.phi_view / (2.0 * np.pi))


def pair_records(records: list[ManifestRecord], split: str | None = None):
    """Group manifest rows into (left, right) tuples, optionally by split."""
    by_pair: dict[int, dict[str, ManifestRecord]] = {}
    for r in records:
        if split is not None and r.split != split:
            continue
        by_pair.setdefault(r.pair_id, {})[r.side] = r
    out = []
    for pid in sorted(by_pair):
        sides = by_pair[pid]
        if set(sides) != {"l", "r"}:
            raise ValueError(f"pair {pid} is missing a side")
        out.append((sides["l"], sides["r"]))
    return out
