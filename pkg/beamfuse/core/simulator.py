# Synthetic V2I drives in a BS-centric planar frame.
#
# The base station sits at the origin looking toward +y at a street that
# runs along x. Azimuth is measured from the +y boresight, positive toward
# +x, so sin(azimuth) = x / range. Each sequence gets its own scene (walls,
# static blockers, moving blockers) and trajectory; snapshots carry the
# five sensor modalities, the 64-beam power sweep and the true pose.
#
# All randomness flows through beamfuse.core.rng in a fixed call order so a
# (config, seed) pair always yields the same bytes.

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from beamfuse.core import config as C
from beamfuse.core.config import RunConfig
from beamfuse.core.errors import GenerationError, UsageError
from beamfuse.core.rng import STREAM_SCENE, STREAM_SENSORS, STREAM_TRAJECTORY, Xoshiro256pp

logger = logging.getLogger(__name__)

GAIN_FLOOR = 1e-12
RASTER_SPACING_M = 0.25
RADAR_BLOB_SIGMA_BINS = 1.0


@dataclass(frozen=True)
class Rect:
    """Axis-aligned blocker: centre, half-extents and radar reflectivity."""

    cx: float
    cy: float
    hx: float
    hy: float
    reflectivity: float = 1.0

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return self.cx - self.hx, self.cx + self.hx, self.cy - self.hy, self.cy + self.hy

    def overlaps(self, other: "Rect") -> bool:
        return abs(self.cx - other.cx) < self.hx + other.hx and abs(self.cy - other.cy) < self.hy + other.hy

    def contains(self, x: float, y: float) -> bool:
        x0, x1, y0, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1

    def grown(self, dx: float, dy: float) -> "Rect":
        return dataclasses.replace(self, hx=self.hx + dx, hy=self.hy + dy)


@dataclass(frozen=True)
class Wall:
    """Horizontal wall segment y = const, x in [x_min, x_max]."""

    y: float
    x_min: float
    x_max: float


def _reflect(value: float, low: float, high: float) -> float:
    """Fold a coordinate into [low, high] as if bouncing off both ends."""
    span = high - low
    if span <= 0:
        return low
    u = (value - low) % (2.0 * span)
    return low + (u if u <= span else 2.0 * span - u)


@dataclass(frozen=True)
class Mover:
    """A blocker shuttling along x at constant speed."""

    start: Rect
    speed: float
    x_min: float
    x_max: float

    def at(self, time_s: float) -> Rect:
        cx = _reflect(self.start.cx + self.speed * time_s, self.x_min + self.start.hx, self.x_max - self.start.hx)
        return dataclasses.replace(self.start, cx=cx)


@dataclass(frozen=True)
class Scene:
    x_min: float
    x_max: float
    lane_y_min: float
    lane_y_max: float
    walls: Tuple[Wall, ...]
    blockers: Tuple[Rect, ...]
    movers: Tuple[Mover, ...] = ()
    dynamic: Tuple[Rect, ...] = ()
    seed: int = 0

    def at(self, time_s: float) -> "Scene":
        """The scene with moving blockers frozen at their time-t positions."""
        return dataclasses.replace(self, dynamic=tuple(m.at(time_s) for m in self.movers))

    @property
    def occluders(self) -> Tuple[Rect, ...]:
        return self.blockers + self.dynamic

    @property
    def far_wall(self) -> Optional[Wall]:
        return max(self.walls, key=lambda w: w.y) if self.walls else None


@dataclass
class Trajectory:
    positions: np.ndarray
    speed: float
    seq_id: int
    dt: float
    v_max: float

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class BeamCodebook:
    """Fixed receive codebook: beams uniform in sine space over +-max_angle.

    The array serves a sector of +-max_angle. With sector_clamp, directions
    outside it are seen at the sector edge, so the edge beam stays the best
    one there instead of whichever sidelobe happens to be largest.
    """

    num_beams: int = C.NUM_BEAMS
    num_antennas: int = 16
    max_angle_deg: float = 60.0
    sector_clamp: bool = True

    def __post_init__(self):
        if self.num_beams != C.NUM_BEAMS:
            raise UsageError(f"Codebook must have {C.NUM_BEAMS} beams, got {self.num_beams}")

    @property
    def sines(self) -> np.ndarray:
        edge = math.sin(math.radians(self.max_angle_deg))
        return np.linspace(-edge, edge, self.num_beams)

    @property
    def angles(self) -> np.ndarray:
        return np.arcsin(self.sines)

    def gain(self, azimuth) -> np.ndarray:
        """Normalised array gain |AF|^2 / N^2 of every beam toward the given azimuth(s)."""
        sines = self.sines
        s = np.sin(np.atleast_1d(np.asarray(azimuth, dtype=np.float64)))
        if self.sector_clamp:
            s = np.clip(s, sines[0], sines[-1])
        u = s[:, None] - sines[None, :]
        n = np.arange(self.num_antennas)
        af = np.exp(1j * np.pi * u[:, :, None] * n[None, None, :]).sum(axis=-1)
        gain = np.abs(af) ** 2 / float(self.num_antennas ** 2)
        return gain[0] if np.ndim(azimuth) == 0 else gain

    def nearest_beam(self, azimuth: float) -> int:
        return int(np.argmin(np.abs(self.sines - math.sin(azimuth))))


@dataclass(frozen=True)
class ChannelParams:
    p0_db: float = -40.0
    d0_m: float = 10.0
    blockage_loss_db: float = 25.0
    reflection_loss_db: float = 10.0
    shadow_sigma_db: float = 1.0
    include_reflection: bool = True

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "ChannelParams":
        return cls(cfg.p0_db, cfg.d0_m, cfg.blockage_loss_db, cfg.reflection_loss_db, cfg.shadow_sigma_db)


@dataclass
class Snapshot:
    """One synchronised observation tuple plus ground truth."""

    t: int
    image: np.ndarray
    lidar: np.ndarray
    radar: np.ndarray
    gnss: np.ndarray
    power: np.ndarray
    prev_power: np.ndarray
    truth: np.ndarray
    seq_id: int
    blocked_geom: bool = False


@dataclass
class SequenceData:
    seq_id: int
    scene: Scene
    trajectory: Trajectory
    snapshots: List[Snapshot] = field(default_factory=list)


def azimuth_of(x: float, y: float) -> float:
    return math.atan2(x, y)


# ---------------------------------------------------------------------------
# Scene and trajectory
# ---------------------------------------------------------------------------

def build_scene(cfg: RunConfig, seed: int) -> Scene:
    """Deterministic scene: two walls, k non-overlapping static blockers, moving blockers."""
    rng = Xoshiro256pp.for_stream(seed, STREAM_SCENE)
    walls = (
        Wall(cfg.near_wall_y, -cfg.near_wall_half_length, cfg.near_wall_half_length),
        Wall(cfg.far_wall_y, cfg.corridor_x_min, cfg.corridor_x_max),
    )
    blockers: List[Rect] = []
    for index in range(cfg.static_blockers):
        for _ in range(C.PLACEMENT_RETRIES):
            hx = rng.uniform(*C.STATIC_BLOCKER_HALF_X)
            hy = rng.uniform(*C.STATIC_BLOCKER_HALF_Y)
            candidate = Rect(
                cx=rng.uniform(cfg.corridor_x_min + hx, cfg.corridor_x_max - hx),
                cy=rng.uniform(*C.STATIC_BLOCKER_Y_BAND),
                hx=hx,
                hy=hy,
                reflectivity=rng.uniform(*C.STATIC_BLOCKER_REFLECTIVITY),
            )
            if not any(candidate.overlaps(other) for other in blockers):
                blockers.append(candidate)
                break
        else:
            raise GenerationError(
                f"Could not place static blocker {index + 1} of {cfg.static_blockers} "
                f"after {C.PLACEMENT_RETRIES} attempts"
            )
    movers: List[Mover] = []
    for _ in range(cfg.dynamic_blockers):
        hx = rng.uniform(*C.MOVER_HALF_X)
        hy = rng.uniform(*C.MOVER_HALF_Y)
        start = Rect(
            cx=rng.uniform(cfg.corridor_x_min + hx, cfg.corridor_x_max - hx),
            cy=rng.uniform(*C.MOVER_Y_BAND),
            hx=hx,
            hy=hy,
            reflectivity=rng.uniform(*C.MOVER_REFLECTIVITY),
        )
        speed = rng.uniform(*C.MOVER_SPEED) * (1.0 if rng.random() < 0.5 else -1.0)
        movers.append(Mover(start, speed, cfg.corridor_x_min, cfg.corridor_x_max))
    return Scene(
        x_min=cfg.corridor_x_min,
        x_max=cfg.corridor_x_max,
        lane_y_min=cfg.lane_y_min,
        lane_y_max=cfg.lane_y_max,
        walls=walls,
        blockers=tuple(blockers),
        movers=tuple(movers),
        seed=seed,
    )


def sample_trajectory(scene: Scene, seed: int, T: int, dt: float = 0.1,
                      speed_range: Tuple[float, float] = (8.0, 14.0), seq_id: int = 0) -> Trajectory:
    """Constant-speed drive along x with a smooth sinusoidal lane-offset wander.

    Every step has length exactly speed * dt before folding at the corridor
    ends, so consecutive poses are never further apart than v_max * dt.
    """
    if T < 2:
        raise UsageError("A trajectory needs at least two snapshots")
    rng = Xoshiro256pp.for_stream(seed, STREAM_TRAJECTORY)
    speed = rng.uniform(*speed_range)
    amplitude = rng.uniform(*C.VEHICLE_WANDER_AMPLITUDE)
    amplitude = min(amplitude, 0.5 * (scene.lane_y_max - scene.lane_y_min))
    low = max(C.VEHICLE_LANE_CENTER[0], scene.lane_y_min + amplitude)
    high = min(C.VEHICLE_LANE_CENTER[1], scene.lane_y_max - amplitude)
    centre = rng.uniform(low, high) if high > low else 0.5 * (scene.lane_y_min + scene.lane_y_max)
    rate = rng.uniform(*C.VEHICLE_WANDER_RATE)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    x_low = scene.x_min + 1.0
    x_high = scene.x_max - 1.0
    margin = min(5.0, 0.25 * (x_high - x_low))
    x_start = rng.uniform(x_low + margin, x_high - margin)
    direction = 1.0 if rng.random() < 0.5 else -1.0

    step = speed * dt
    positions = np.zeros((T, 2), dtype=np.float64)
    travelled = 0.0
    previous_y = centre + amplitude * math.sin(phase)
    positions[0] = (x_start, previous_y)
    for t in range(1, T):
        y = centre + amplitude * math.sin(rate * t * dt + phase)
        dy = y - previous_y
        travelled += math.sqrt(max(step * step - dy * dy, 0.0))
        positions[t] = (_reflect(x_start + direction * travelled, x_low, x_high), y)
        previous_y = y
    np.clip(positions[:, 1], scene.lane_y_min, scene.lane_y_max, out=positions[:, 1])
    return Trajectory(positions=positions, speed=speed, seq_id=seq_id, dt=dt, v_max=speed_range[1])


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def segment_hits_rect(p1: Tuple[float, float], rect: Rect, p0: Tuple[float, float] = (0.0, 0.0)) -> bool:
    """Liang-Barsky clip of the segment p0->p1 against a closed rectangle."""
    x0, x1, y0, y1 = rect.bounds
    dx = p1[0] - p0[0]
    dy = p1[1] - p0[1]
    t_low, t_high = 0.0, 1.0
    for delta, start, lo, hi in ((dx, p0[0], x0, x1), (dy, p0[1], y0, y1)):
        if abs(delta) < 1e-15:
            if start < lo or start > hi:
                return False
            continue
        ta = (lo - start) / delta
        tb = (hi - start) / delta
        if ta > tb:
            ta, tb = tb, ta
        t_low = max(t_low, ta)
        t_high = min(t_high, tb)
        if t_low > t_high:
            return False
    return True


def los_blocked(scene: Scene, s_t) -> bool:
    """True iff the segment BS -> s_t crosses any static or dynamic blocker."""
    point = (float(s_t[0]), float(s_t[1]))
    return any(segment_hits_rect(point, rect) for rect in scene.occluders)


# ---------------------------------------------------------------------------
# mmWave power sweep
# ---------------------------------------------------------------------------

def channel_terms(scene: Scene, codebook: BeamCodebook, s_t, blocked: bool,
                  channel: ChannelParams) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Per-beam LoS and far-wall reflection powers in dB (noise-free)."""
    x, y = float(s_t[0]), float(s_t[1])
    distance = math.hypot(x, y)
    if distance <= 0.0:
        raise UsageError("Vehicle position coincides with the base station")
    gain = np.maximum(codebook.gain(azimuth_of(x, y)), GAIN_FLOOR)
    los = channel.p0_db - 20.0 * math.log10(distance / channel.d0_m) + 10.0 * np.log10(gain)
    if blocked:
        los = los - channel.blockage_loss_db
    wall = scene.far_wall
    if not channel.include_reflection or wall is None:
        return los, None
    image_y = 2.0 * wall.y - y
    image_distance = math.hypot(x, image_y)
    image_gain = np.maximum(codebook.gain(azimuth_of(x, image_y)), GAIN_FLOOR)
    reflected = (channel.p0_db - 20.0 * math.log10(image_distance / channel.d0_m)
                 - channel.reflection_loss_db + 10.0 * np.log10(image_gain))
    return los, reflected


def simulate_power(scene: Scene, codebook: BeamCodebook, s_t, rng: Optional[Xoshiro256pp],
                   channel: ChannelParams = ChannelParams()) -> np.ndarray:
    """64 received powers in dB: LoS (with blockage penalty) plus one wall reflection and shadowing."""
    los, reflected = channel_terms(scene, codebook, s_t, los_blocked(scene, s_t), channel)
    linear = np.power(10.0, los / 10.0)
    if reflected is not None:
        linear = linear + np.power(10.0, reflected / 10.0)
    power = 10.0 * np.log10(linear)
    if rng is not None:
        power = power + rng.normal(0.0, channel.shadow_sigma_db)
    return power


# ---------------------------------------------------------------------------
# Camera stand-in
# ---------------------------------------------------------------------------

def _polar_bins(xs: np.ndarray, ys: np.ndarray, bins: int = 32) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Floor-binned (azimuth, range) indices over [-60, 60] deg x [0, 80] m and a validity mask."""
    azimuth = np.degrees(np.arctan2(xs, ys))
    distance = np.hypot(xs, ys)
    az_bin = np.floor((azimuth + C.CAMERA_MAX_AZIMUTH_DEG) / (2 * C.CAMERA_MAX_AZIMUTH_DEG) * bins).astype(np.int64)
    rng_bin = np.floor(distance / C.CAMERA_MAX_RANGE_M * bins).astype(np.int64)
    valid = (az_bin >= 0) & (az_bin < bins) & (rng_bin >= 0) & (rng_bin < bins)
    return az_bin, rng_bin, valid


def _rect_samples(rect: Rect, spacing: float = RASTER_SPACING_M) -> Tuple[np.ndarray, np.ndarray]:
    x0, x1, y0, y1 = rect.bounds
    xs = np.linspace(x0, x1, max(2, int(math.ceil((x1 - x0) / spacing)) + 1))
    ys = np.linspace(y0, y1, max(2, int(math.ceil((y1 - y0) / spacing)) + 1))
    grid_x, grid_y = np.meshgrid(xs, ys)
    return grid_x.ravel(), grid_y.ravel()


def _wall_samples(wall: Wall, spacing: float = RASTER_SPACING_M) -> Tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(wall.x_min, wall.x_max, max(2, int(math.ceil((wall.x_max - wall.x_min) / spacing)) + 1))
    return xs, np.full_like(xs, wall.y)


def _occupancy(samples: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    grid = np.zeros(C.IMAGE_SHAPE[1:], dtype=np.float32)
    for xs, ys in samples:
        az_bin, rng_bin, valid = _polar_bins(xs, ys)
        grid[az_bin[valid], rng_bin[valid]] = 1.0
    return grid


def camera_bin(s_t) -> Optional[Tuple[int, int]]:
    az_bin, rng_bin, valid = _polar_bins(np.array([float(s_t[0])]), np.array([float(s_t[1])]))
    return (int(az_bin[0]), int(rng_bin[0])) if valid[0] else None


def render_camera(scene: Scene, s_t) -> np.ndarray:
    """3x32x32 azimuth-by-range occupancy render seen from the BS.

    Channel 0 holds walls and static blockers, channel 1 moving blockers and
    channel 2 the target vehicle cell, which is blanked when LoS is blocked.
    """
    image = np.zeros(C.IMAGE_SHAPE, dtype=np.float32)
    image[0] = _occupancy([_wall_samples(w) for w in scene.walls] + [_rect_samples(r) for r in scene.blockers])
    image[1] = _occupancy([_rect_samples(r) for r in scene.dynamic])
    if s_t is not None and not los_blocked(scene, s_t):
        cell = camera_bin(s_t)
        if cell is not None:
            image[2, cell[0], cell[1]] = 1.0
    return image


# ---------------------------------------------------------------------------
# LiDAR
# ---------------------------------------------------------------------------

def _slab(origin_free: np.ndarray, lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-ray parameter interval inside lo <= t * d <= hi for ray directions d."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = lo / origin_free
        tb = hi / origin_free
    parallel = np.abs(origin_free) < 1e-15
    inside = (lo <= 0.0) & (0.0 <= hi)
    enter = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
    leave = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
    return enter, leave


def cast_rays(scene: Scene, s_t, count: int = C.LIDAR_POINTS, max_range: float = 80.0
              ) -> Tuple[np.ndarray, np.ndarray]:
    """Planar rays from the BS at angles 2*pi*i/count; returns (directions, first-hit distance or inf)."""
    theta = 2.0 * np.pi * np.arange(count) / count
    dx, dy = np.cos(theta), np.sin(theta)
    best = np.full(count, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for wall in scene.walls:
            t = wall.y / dy
            x_hit = t * dx
            ok = np.isfinite(t) & (t > 0) & (x_hit >= wall.x_min) & (x_hit <= wall.x_max)
            best = np.where(ok & (t < best), t, best)
    for rect in scene.occluders:
        x0, x1, y0, y1 = rect.bounds
        ex, lx = _slab(dx, x0, x1)
        ey, ly = _slab(dy, y0, y1)
        enter = np.maximum(ex, ey)
        leave = np.minimum(lx, ly)
        ok = (enter <= leave) & (enter > 0)
        best = np.where(ok & (enter < best), enter, best)
    if s_t is not None:
        cx, cy = float(s_t[0]), float(s_t[1])
        along = dx * cx + dy * cy
        disc = along * along - (cx * cx + cy * cy - C.VEHICLE_RADIUS_M ** 2)
        t = along - np.sqrt(np.maximum(disc, 0.0))
        ok = (disc >= 0) & (t > 0)
        best = np.where(ok & (t < best), t, best)
    best = np.where(best <= max_range, best, np.inf)
    return np.stack([dx, dy], axis=1), best


def raycast_lidar(scene: Scene, s_t, rng: Xoshiro256pp, max_range: float = 80.0,
                  z_sigma: float = 0.05, count: int = C.LIDAR_POINTS) -> np.ndarray:
    """256 planar returns; misses are replaced by jittered copies of hits."""
    directions, distance = cast_rays(scene, s_t, count, max_range)
    hit = np.isfinite(distance)
    hit_index = np.flatnonzero(hit)
    if hit_index.size == 0:
        raise GenerationError("LiDAR scan has no geometry to hit; cannot fill a fixed-size cloud")
    points = np.zeros((count, 3), dtype=np.float64)
    points[hit, :2] = directions[hit] * distance[hit, None]
    for i in np.flatnonzero(~hit):
        source = points[hit_index[rng.integer(hit_index.size)], :2]
        jittered = source + np.array([rng.normal(0.0, z_sigma), rng.normal(0.0, z_sigma)])
        norm = math.hypot(jittered[0], jittered[1])
        if norm > max_range:
            jittered *= max_range / norm
        points[i, :2] = jittered
    for i in range(count):
        points[i, 2] = rng.normal(0.0, z_sigma)
    return points


# ---------------------------------------------------------------------------
# Radar stand-in
# ---------------------------------------------------------------------------

def radar_objects(scene: Scene, s_t) -> List[Tuple[float, float, float]]:
    """(x, y, reflectivity) of the vehicle and every blocker centre."""
    objects = []
    if s_t is not None:
        objects.append((float(s_t[0]), float(s_t[1]), C.VEHICLE_REFLECTIVITY))
    for rect in scene.occluders:
        objects.append((rect.cx, rect.cy, rect.reflectivity))
    return objects


def synth_radar(scene: Scene, s_t, normalize: bool = True) -> np.ndarray:
    """32x32 range-by-azimuth magnitude map of Gaussian blobs scaled by reflectivity / d^2."""
    rows, cols = C.RADAR_SHAPE
    grid_r, grid_a = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    radar = np.zeros(C.RADAR_SHAPE, dtype=np.float64)
    for x, y, reflectivity in radar_objects(scene, s_t):
        az_bin, rng_bin, valid = _polar_bins(np.array([x]), np.array([y]), bins=rows)
        if not valid[0]:
            continue
        amplitude = reflectivity / (x * x + y * y)
        distance_sq = (grid_r - rng_bin[0]) ** 2 + (grid_a - az_bin[0]) ** 2
        radar += amplitude * np.exp(-distance_sq / (2.0 * RADAR_BLOB_SIGMA_BINS ** 2))
    peak = radar.max()
    if normalize and peak > 0:
        radar /= peak
    return radar.astype(np.float32)


# ---------------------------------------------------------------------------
# GNSS
# ---------------------------------------------------------------------------

def gnss_noisify(s_t, rng: Xoshiro256pp, sigma: float = 2.0) -> np.ndarray:
    """s~_t = s_t + n_t with n_t ~ N(0, sigma^2 I)."""
    noise = np.array([rng.normal(0.0, sigma), rng.normal(0.0, sigma)])
    return np.asarray(s_t, dtype=np.float64) + noise


# ---------------------------------------------------------------------------
# Sequences
# ---------------------------------------------------------------------------

def codebook_from_config(cfg: RunConfig) -> BeamCodebook:
    return BeamCodebook(C.NUM_BEAMS, cfg.num_antennas, cfg.codebook_max_angle_deg)


def generate_sequence(cfg: RunConfig, seq_id: int) -> SequenceData:
    """Scene, trajectory and every snapshot of one sequence, seeded by seed XOR id."""
    seq_seed = cfg.seed ^ seq_id
    scene = build_scene(cfg, seq_seed)
    trajectory = sample_trajectory(scene, seq_seed, cfg.snapshots_per_sequence, cfg.dt,
                                   (cfg.speed_min, cfg.speed_max), seq_id)
    codebook = codebook_from_config(cfg)
    channel = ChannelParams.from_config(cfg)
    rng = Xoshiro256pp.for_stream(seq_seed, STREAM_SENSORS)
    data = SequenceData(seq_id, scene, trajectory)
    previous = np.zeros(C.NUM_BEAMS, dtype=np.float64)
    for index in range(len(trajectory)):
        frame = scene.at(index * cfg.dt)
        s_t = trajectory.positions[index]
        power = simulate_power(frame, codebook, s_t, rng, channel)
        lidar = raycast_lidar(frame, s_t, rng, cfg.lidar_range_m, cfg.lidar_z_sigma_m)
        gnss = gnss_noisify(s_t, rng, cfg.gnss_sigma_m)
        data.snapshots.append(Snapshot(
            t=index + 1,
            image=render_camera(frame, s_t),
            lidar=lidar,
            radar=synth_radar(frame, s_t),
            gnss=gnss,
            power=power,
            prev_power=previous,
            truth=s_t.copy(),
            seq_id=seq_id,
            blocked_geom=los_blocked(frame, s_t),
        ))
        previous = power
    blocked = sum(s.blocked_geom for s in data.snapshots)
    logger.info("Sequence %d: %d snapshots, speed %.1f m/s, %d geometrically blocked",
                seq_id, len(data.snapshots), trajectory.speed, blocked)
    return data


def generate_sequences(cfg: RunConfig, workers: int = 1) -> List[SequenceData]:
    """All sequences of a run; sequences are independent so they may be built in parallel."""
    ids = list(range(cfg.sequences))
    if workers <= 1:
        return [generate_sequence(cfg, i) for i in ids]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(generate_sequence, [cfg] * len(ids), ids))
