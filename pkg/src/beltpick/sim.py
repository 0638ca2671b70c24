"""Deterministic conveyor simulator.

The world is a belt moving along +x through a rectangular working area
watched by a tilted depth camera.  Boxes and cylinders spawn upstream,
ride through the area, and either get picked or fall off the end; in
learning mode everything that leaves (picked or lost) re-enters after a
fixed delay, so the object stream never dries up.

Rendering is an analytic ray cast against the true shapes plus Gaussian
depth noise.  Pick outcomes come from a hidden oracle that knows the
true object poses: reaching between two objects fails as a multi grasp,
grips that are too off-centre, too shallow or wider than the jaws can
close on fail as slips, and otherwise a slip probability grows with
grip offset and object mass.  The learner never sees any of this state,
only the camera and the gripper opening trace.

Every random draw (spawning, sensor noise, slip outcomes, perturbation)
comes from one Generator owned by the scene, so a seed fixes the entire
history bit for bit.
"""

import struct
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .accel import HAS_NUMBA, njit
from .calib import DepthImage, GantryPoint
from .handles import GripperModel, Handle
from .policy import OpeningTrace

ZRSC_MAGIC = b"ZRSC"
ZRSC_VERSION = 1

KIND_BOX = 0
KIND_CYL = 1


@dataclass
class SimConfig:
    # working area (heightmap region): x in [0, area_len], y in [0, area_dep]
    area_len: float = 1.2
    area_dep: float = 0.8
    belt_start: float = -2.4     # upstream spawn boundary
    belt_end: float = 1.5        # objects past this are off the belt
    belt_speed: float = 0.02     # m/s
    cycle_time: float = 6.0      # seconds per pick cycle
    loop_delay: float = 60.0     # merry-go-around return delay
    loop_enabled: bool = True
    # camera
    cam_height: float = 1.2
    cam_tilt_deg: float = 30.0
    cam_res: tuple = (240, 320)  # (rows, cols)
    cam_f: float = 250.0         # focal length in pixels
    noise_sigma: float = 0.002
    # object population
    box_side: tuple = (0.04, 0.14)
    box_height: tuple = (0.03, 0.08)
    cyl_diam: tuple = (0.04, 0.09)
    cyl_height: tuple = (0.03, 0.09)
    density: float = 600.0
    cluster_prob: float = 0.5    # chance to spawn touching an earlier object
    # pick oracle
    contact_overlap_min: float = 0.02
    offset_frac_max: float = 0.3
    slip_base: float = 0.05
    slip_k_offset: float = 1.0
    slip_k_mass: float = 0.08
    mass_ref: float = 0.5
    perturb_pos: float = 0.03
    perturb_yaw_deg: float = 15.0
    # calibration target
    rod_size: float = 0.02
    rod_len: float = 0.25

    @property
    def camera_pose(self):
        """(origin, world_from_camera rotation) for the tilted camera."""
        tilt = np.deg2rad(self.cam_tilt_deg)
        cx = self.area_len / 2.0
        cy = self.area_dep / 2.0
        origin = np.array([cx - self.cam_height * np.tan(tilt),
                           cy, self.cam_height])
        target = np.array([cx, cy, 0.0])
        zc = target - origin
        zc = zc / np.linalg.norm(zc)
        up = np.array([0.0, 0.0, 1.0])
        xc = np.cross(up, zc)
        xc = xc / np.linalg.norm(xc)
        yc = np.cross(zc, xc)
        R = np.column_stack([xc, yc, zc])
        return origin, R

    @property
    def cam_intrinsics(self):
        rows, cols = self.cam_res
        return dict(fx=self.cam_f, fy=self.cam_f,
                    cx=(cols - 1) / 2.0, cy=(rows - 1) / 2.0)


@dataclass
class SimObject:
    obj_id: int
    kind: int                    # KIND_BOX or KIND_CYL
    x: float
    y: float
    yaw: float
    sx: float                    # box: x-side; cyl: diameter
    sy: float                    # box: y-side; cyl: diameter
    sz: float                    # height
    z0: float = 0.0              # bottom height (support level)
    mass: float = 0.1

    @property
    def top(self):
        return self.z0 + self.sz

    def footprint_radius(self):
        if self.kind == KIND_CYL:
            return self.sx / 2.0
        return float(np.hypot(self.sx, self.sy)) / 2.0


@dataclass
class QueuedObject:
    ready_time: float
    obj: SimObject


@dataclass
class PickOutcome:
    verdict: str                 # deposited | slipped | missed | multi_grasp
    trace: OpeningTrace
    grip_width: float = 0.0
    object_id: int = -1


@dataclass
class BeltScene:
    config: SimConfig
    rng: np.random.Generator
    sim_time: float = 0.0
    objects: list = field(default_factory=list)
    queue: list = field(default_factory=list)
    next_id: int = 0
    lost: int = 0
    deposited: int = 0


def make_scene(config: SimConfig, seed) -> BeltScene:
    return BeltScene(config=config, rng=np.random.default_rng(seed))


def _new_object(scene: BeltScene, x, y) -> SimObject:
    cfg = scene.config
    rng = scene.rng
    kind = KIND_BOX if rng.random() < 0.6 else KIND_CYL
    if kind == KIND_BOX:
        sx = float(rng.uniform(*cfg.box_side))
        sy = float(rng.uniform(*cfg.box_side))
        sz = float(rng.uniform(*cfg.box_height))
        vol = sx * sy * sz
    else:
        sx = sy = float(rng.uniform(*cfg.cyl_diam))
        sz = float(rng.uniform(*cfg.cyl_height))
        vol = np.pi * (sx / 2.0) ** 2 * sz
    yaw = float(rng.uniform(0, np.pi))
    mass = float(cfg.density * vol * rng.uniform(0.8, 1.2))
    obj = SimObject(scene.next_id, kind, float(x), float(y), yaw,
                    sx, sy, sz, 0.0, mass)
    scene.next_id += 1
    return obj


def _resettle(scene: BeltScene):
    """Drop every object onto the belt or whatever lies under it.
    Processed bottom-up so stacks stay stacked."""
    order = sorted(scene.objects, key=lambda o: (o.z0, o.obj_id))
    placed = []
    for obj in order:
        support = 0.0
        for other in placed:
            d = np.hypot(obj.x - other.x, obj.y - other.y)
            if d < 0.8 * (obj.footprint_radius() +
                          other.footprint_radius()):
                support = max(support, other.top)
        obj.z0 = support
        placed.append(obj)


def spawn_objects(scene: BeltScene, count, x_range, y_margin=0.06):
    """Spawn ``count`` objects with centres in ``x_range``; a fraction
    lands deliberately next to an earlier object to form piles."""
    cfg = scene.config
    rng = scene.rng
    for _ in range(count):
        if scene.objects and rng.random() < cfg.cluster_prob:
            host = scene.objects[int(rng.integers(len(scene.objects)))]
            x = host.x + float(rng.uniform(-0.06, 0.06))
            y = host.y + float(rng.uniform(-0.06, 0.06))
            x = float(np.clip(x, x_range[0], x_range[1]))
        else:
            x = float(rng.uniform(*x_range))
            y = float(rng.uniform(y_margin, cfg.area_dep - y_margin))
        y = float(np.clip(y, y_margin, cfg.area_dep - y_margin))
        scene.objects.append(_new_object(scene, x, y))
    _resettle(scene)


def _object_arrays(objects):
    n = len(objects)
    kind = np.empty(n, dtype=np.int64)
    geo = np.empty((n, 7))
    for i, o in enumerate(objects):
        kind[i] = o.kind
        geo[i] = (o.x, o.y, o.yaw, o.sx, o.sy, o.sz, o.z0)
    return kind, geo


@njit(cache=True)
def _raycast_nb(kind, geo, origin, R, fx, fy, cx, cy, include_belt, out):
    rows, cols = out.shape
    ox, oy, oz = origin[0], origin[1], origin[2]
    for i in range(rows):
        yp = (i - cy) / fy
        for j in range(cols):
            xp = (j - cx) / fx
            dx = R[0, 0] * xp + R[0, 1] * yp + R[0, 2]
            dy = R[1, 0] * xp + R[1, 1] * yp + R[1, 2]
            dz = R[2, 0] * xp + R[2, 1] * yp + R[2, 2]
            best = np.inf
            if include_belt and dz < -1e-12:
                s = -oz / dz
                if s > 0:
                    best = s
            for k in range(kind.shape[0]):
                bx = geo[k, 0]
                by = geo[k, 1]
                yaw = geo[k, 2]
                hx = geo[k, 3] / 2.0
                hy = geo[k, 4] / 2.0
                z0 = geo[k, 6]
                z1 = z0 + geo[k, 5]
                if kind[k] == 0:
                    c = np.cos(yaw)
                    sn = np.sin(yaw)
                    lox = c * (ox - bx) + sn * (oy - by)
                    loy = -sn * (ox - bx) + c * (oy - by)
                    ldx = c * dx + sn * dy
                    ldy = -sn * dx + c * dy
                    tmin = 0.0
                    tmax = np.inf
                    ok = True
                    for ax in range(3):
                        if ax == 0:
                            o_, d_, lo_, hi_ = lox, ldx, -hx, hx
                        elif ax == 1:
                            o_, d_, lo_, hi_ = loy, ldy, -hy, hy
                        else:
                            o_, d_, lo_, hi_ = oz, dz, z0, z1
                        if abs(d_) < 1e-14:
                            if o_ < lo_ or o_ > hi_:
                                ok = False
                                break
                        else:
                            t0 = (lo_ - o_) / d_
                            t1 = (hi_ - o_) / d_
                            if t0 > t1:
                                t0, t1 = t1, t0
                            if t0 > tmin:
                                tmin = t0
                            if t1 < tmax:
                                tmax = t1
                            if tmin > tmax:
                                ok = False
                                break
                    if ok and tmin > 0 and tmin < best:
                        best = tmin
                else:
                    r = hx
                    exq = ox - bx
                    eyq = oy - by
                    a = dx * dx + dy * dy
                    s_cap = np.inf
                    # top cap
                    if abs(dz) > 1e-14:
                        s = (z1 - oz) / dz
                        if s > 0:
                            px = exq + s * dx
                            py = eyq + s * dy
                            if px * px + py * py <= r * r:
                                s_cap = s
                    if s_cap < best:
                        best = s_cap
                    if a > 1e-14:
                        b = 2.0 * (exq * dx + eyq * dy)
                        cq = exq * exq + eyq * eyq - r * r
                        disc = b * b - 4.0 * a * cq
                        if disc >= 0.0:
                            sd = np.sqrt(disc)
                            s = (-b - sd) / (2.0 * a)
                            if s > 0:
                                z = oz + s * dz
                                if z0 <= z <= z1 and s < best:
                                    best = s
            out[i, j] = best


def _raycast_np(kind, geo, origin, R, fx, fy, cx, cy, include_belt, out):
    rows, cols = out.shape
    jj, ii = np.meshgrid(np.arange(cols), np.arange(rows))
    xp = (jj - cx) / fx
    yp = (ii - cy) / fy
    d = np.stack([R[0, 0] * xp + R[0, 1] * yp + R[0, 2],
                  R[1, 0] * xp + R[1, 1] * yp + R[1, 2],
                  R[2, 0] * xp + R[2, 1] * yp + R[2, 2]])
    best = np.full((rows, cols), np.inf)
    ox, oy, oz = origin
    if include_belt:
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -oz / d[2]
        hit = (d[2] < -1e-12) & (s > 0)
        best[hit] = s[hit]
    for k in range(len(kind)):
        bx, by, yaw, sx, sy, sz, z0 = geo[k]
        hx, hy = sx / 2.0, sy / 2.0
        z1 = z0 + sz
        if kind[k] == KIND_BOX:
            c, sn = np.cos(yaw), np.sin(yaw)
            lo = np.array([c * (ox - bx) + sn * (oy - by),
                           -sn * (ox - bx) + c * (oy - by), oz])
            ld = np.stack([c * d[0] + sn * d[1],
                           -sn * d[0] + c * d[1], d[2]])
            tmin = np.zeros((rows, cols))
            tmax = np.full((rows, cols), np.inf)
            ok = np.ones((rows, cols), dtype=bool)
            for ax, (lo_, hi_) in enumerate([(-hx, hx), (-hy, hy),
                                             (z0, z1)]):
                d_ = ld[ax]
                small = np.abs(d_) < 1e-14
                inside0 = (lo[ax] >= lo_) & (lo[ax] <= hi_)
                ok &= ~small | inside0
                with np.errstate(divide="ignore", invalid="ignore"):
                    t0 = (lo_ - lo[ax]) / d_
                    t1 = (hi_ - lo[ax]) / d_
                swap = t0 > t1
                t0s = np.where(swap, t1, t0)
                t1s = np.where(swap, t0, t1)
                upd = ~small
                tmin = np.where(upd, np.maximum(tmin, t0s), tmin)
                tmax = np.where(upd, np.minimum(tmax, t1s), tmax)
            ok &= (tmin <= tmax) & (tmin > 0)
            best = np.where(ok & (tmin < best), tmin, best)
        else:
            r = hx
            exq, eyq = ox - bx, oy - by
            a = d[0] ** 2 + d[1] ** 2
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (z1 - oz) / d[2]
            px = exq + s * d[0]
            py = eyq + s * d[1]
            cap_ok = (np.abs(d[2]) > 1e-14) & (s > 0) & \
                (px ** 2 + py ** 2 <= r ** 2)
            best = np.where(cap_ok & (s < best), s, best)
            b = 2.0 * (exq * d[0] + eyq * d[1])
            cq = exq ** 2 + eyq ** 2 - r ** 2
            disc = b ** 2 - 4 * a * cq
            with np.errstate(divide="ignore", invalid="ignore"):
                sroot = (-b - np.sqrt(disc)) / (2 * a)
            z = oz + sroot * d[2]
            side_ok = (a > 1e-14) & (disc >= 0) & (sroot > 0) & \
                (z >= z0) & (z <= z1)
            best = np.where(side_ok & (sroot < best), sroot, best)
    out[:] = best


def _render(config: SimConfig, objects, *, include_belt, rng,
            noise_sigma) -> DepthImage:
    origin, R = config.camera_pose
    intr = config.cam_intrinsics
    rows, cols = config.cam_res
    out = np.empty((rows, cols))
    kind, geo = _object_arrays(objects)
    fn = _raycast_nb if HAS_NUMBA else _raycast_np
    fn(kind, geo, origin, R, intr["fx"], intr["fy"], intr["cx"],
       intr["cy"], include_belt, out)
    depth = np.where(np.isfinite(out), out, np.nan)
    if noise_sigma > 0:
        noise = rng.normal(0.0, noise_sigma, size=depth.shape)
        depth = depth + np.where(np.isnan(depth), 0.0, noise)
    return DepthImage(depth=depth, **intr)


def render_depth(scene: BeltScene) -> DepthImage:
    """Camera shot of the working area including the belt plane."""
    return _render(scene.config, scene.objects, include_belt=True,
                   rng=scene.rng, noise_sigma=scene.config.noise_sigma)


def render_calibration_target(scene: BeltScene,
                              pose: GantryPoint) -> DepthImage:
    """Depth image of the gripper mast parked at ``pose``.

    The reported gantry point is the centre of the mast's top face, the
    part the camera actually sees; the mast hangs below it.  Nothing
    else is rendered, so the background is invalid.
    """
    cfg = scene.config
    rod = SimObject(-1, KIND_BOX, pose.x, pose.y, 0.0, cfg.rod_size,
                    cfg.rod_size, cfg.rod_len, z0=pose.z - cfg.rod_len)
    return _render(cfg, [rod], include_belt=False, rng=scene.rng,
                   noise_sigma=cfg.noise_sigma)


def true_height(scene: BeltScene, x, y):
    """Ground-truth surface height at a point (tests only)."""
    h = 0.0
    for o in scene.objects:
        if o.kind == KIND_BOX:
            c, sn = np.cos(o.yaw), np.sin(o.yaw)
            lx = c * (x - o.x) + sn * (y - o.y)
            ly = -sn * (x - o.x) + c * (y - o.y)
            if abs(lx) <= o.sx / 2 and abs(ly) <= o.sy / 2:
                h = max(h, o.top)
        else:
            if np.hypot(x - o.x, y - o.y) <= o.sx / 2:
                h = max(h, o.top)
    return h


def _grasp_geometry(obj: SimObject, handle: Handle):
    """Object extent and offsets in the handle frame: (width along the
    grasp axis, centre offset along it, [min, max] across extent)."""
    dvec = np.array([np.cos(handle.angle), np.sin(handle.angle)])
    nvec = np.array([-dvec[1], dvec[0]])
    rel = np.array([obj.x - handle.x, obj.y - handle.y])
    off_d = float(rel @ dvec)
    off_n = float(rel @ nvec)
    if obj.kind == KIND_CYL:
        half_d = obj.sx / 2.0
        half_n = obj.sx / 2.0
    else:
        delta = handle.angle - obj.yaw
        half_d = (obj.sx / 2.0) * abs(np.cos(delta)) + \
            (obj.sy / 2.0) * abs(np.sin(delta))
        half_n = (obj.sx / 2.0) * abs(np.sin(delta)) + \
            (obj.sy / 2.0) * abs(np.cos(delta))
    return 2.0 * half_d, off_d, (off_n - half_n, off_n + half_n)


def _perturb(scene: BeltScene, obj: SimObject):
    cfg = scene.config
    obj.x += float(scene.rng.uniform(-cfg.perturb_pos, cfg.perturb_pos))
    obj.y += float(scene.rng.uniform(-cfg.perturb_pos, cfg.perturb_pos))
    obj.yaw += float(np.deg2rad(
        scene.rng.uniform(-cfg.perturb_yaw_deg, cfg.perturb_yaw_deg)))


def _trace(start_opening, grip, fail_at, throw_time=3.0):
    """Synthesized opening trace: close at t=1, throw completes at
    ``throw_time``, release at t=4.  ``fail_at`` < 0 means held."""
    times = np.array([0.0, 1.0, 2.0, throw_time, 4.0])
    openings = np.array([start_opening, grip, grip, grip, start_opening])
    if fail_at >= 0:
        openings[fail_at:4] = 0.0
    return OpeningTrace(times, openings, throw_time)


def execute_pick(scene: BeltScene, handle: Handle,
                 gripper: GripperModel) -> PickOutcome:
    """Resolve one pick attempt against ground truth.

    The contact set is every object overlapping the open jaw region and
    reaching above the descend height.  Empty set: a miss.  More than
    one object: a multi grasp that drops everything and shoves the pile.
    A single object must fit the jaws, be grabbed deep enough across and
    close enough to centre along the axis, then survives a slip roll
    that worsens with offset and mass.
    """
    cfg = scene.config
    reach = handle.opening + handle.extra
    contacts = []
    for obj in scene.objects:
        if obj.top <= handle.z + 1e-9:
            continue
        w_obj, off_d, (n_lo, n_hi) = _grasp_geometry(obj, handle)
        if abs(off_d) - w_obj / 2.0 >= reach / 2.0:
            continue
        if n_hi <= -gripper.finger_width / 2.0 or \
                n_lo >= gripper.finger_width / 2.0:
            continue
        contacts.append((obj, w_obj, off_d, (n_lo, n_hi)))

    start = reach
    if not contacts:
        return PickOutcome("missed", _trace(start, 0.0, 1))

    if len(contacts) > 1:
        for obj, _, _, _ in contacts:
            _perturb(scene, obj)
        _resettle(scene)
        return PickOutcome("multi_grasp", _trace(start, 0.0, 2))

    obj, w_obj, off_d, (n_lo, n_hi) = contacts[0]
    overlap = min(n_hi, gripper.finger_width / 2.0) - \
        max(n_lo, -gripper.finger_width / 2.0)
    deterministic_slip = (
        w_obj > reach
        or w_obj < gripper.min_opening
        or overlap < cfg.contact_overlap_min
        or abs(off_d) > cfg.offset_frac_max * w_obj
    )
    if deterministic_slip:
        _perturb(scene, obj)
        _resettle(scene)
        return PickOutcome("slipped", _trace(start, 0.0, 2),
                           object_id=obj.obj_id)

    p_slip = cfg.slip_base \
        + cfg.slip_k_offset * (abs(off_d) / max(w_obj, 1e-9)) \
        + cfg.slip_k_mass * max(0.0, obj.mass / cfg.mass_ref - 1.0)
    p_slip = float(np.clip(p_slip, 0.0, 0.95))
    if scene.rng.random() < p_slip:
        _perturb(scene, obj)
        _resettle(scene)
        return PickOutcome("slipped", _trace(start, 0.0, 2),
                           object_id=obj.obj_id)

    scene.objects.remove(obj)
    scene.deposited += 1
    if cfg.loop_enabled:
        scene.queue.append(QueuedObject(
            scene.sim_time + cfg.loop_delay, obj))
    _resettle(scene)
    grip = max(w_obj, gripper.min_opening)
    return PickOutcome("deposited", _trace(start, grip, -1),
                       grip_width=grip, object_id=obj.obj_id)


def advance(scene: BeltScene, dt=None):
    """Move the belt by one cycle: shift objects, drop off / requeue
    whatever passed the end, and re-enter queued objects upstream."""
    cfg = scene.config
    if dt is None:
        dt = cfg.cycle_time
    scene.sim_time += dt
    shift = cfg.belt_speed * dt
    for obj in scene.objects:
        obj.x += shift

    remaining = []
    for obj in scene.objects:
        if obj.x > cfg.belt_end:
            if cfg.loop_enabled:
                scene.queue.append(QueuedObject(
                    scene.sim_time + cfg.loop_delay, obj))
            else:
                scene.lost += 1
        else:
            remaining.append(obj)
    scene.objects = remaining

    still_waiting = []
    for item in sorted(scene.queue, key=lambda q: (q.ready_time,
                                                   q.obj.obj_id)):
        if item.ready_time <= scene.sim_time:
            obj = item.obj
            obj.x = cfg.belt_start + float(scene.rng.uniform(0.0, 0.1))
            obj.y = float(np.clip(
                obj.y + scene.rng.uniform(-0.03, 0.03),
                0.05, cfg.area_dep - 0.05))
            obj.z0 = 0.0
            scene.objects.append(obj)
        else:
            still_waiting.append(item)
    scene.queue = still_waiting
    _resettle(scene)


def objects_in_area(scene: BeltScene, entry_margin=0.0):
    """Objects inside the working area; ``entry_margin`` ignores ones
    still straddling the upstream edge (only partially sensed)."""
    cfg = scene.config
    return [o for o in scene.objects
            if entry_margin <= o.x <= cfg.area_len]


# ---------------------------------------------------------------------------
# scene snapshots (ZRSC)


def _pack_obj(obj: SimObject) -> bytes:
    return struct.pack("<iB8d", obj.obj_id, obj.kind, obj.x, obj.y,
                       obj.yaw, obj.sx, obj.sy, obj.sz, obj.z0, obj.mass)


def _unpack_obj(data, pos):
    vals = struct.unpack_from("<iB8d", data, pos)
    return SimObject(vals[0], vals[1], *vals[2:]), \
        pos + struct.calcsize("<iB8d")


def save_scene(path, scene: BeltScene):
    """Versioned binary snapshot: counters, full RNG state, objects and
    the re-entry queue; loading resumes the exact simulation."""
    st = scene.rng.bit_generator.state
    out = bytearray()
    out += ZRSC_MAGIC
    out += struct.pack("<H", ZRSC_VERSION)
    out += struct.pack("<dqqq", scene.sim_time, scene.next_id,
                       scene.lost, scene.deposited)
    out += st["state"]["state"].to_bytes(16, "little")
    out += st["state"]["inc"].to_bytes(16, "little")
    out += struct.pack("<Bq", 1 if st["has_uint32"] else 0,
                       st["uinteger"])
    out += struct.pack("<I", len(scene.objects))
    for obj in scene.objects:
        out += _pack_obj(obj)
    out += struct.pack("<I", len(scene.queue))
    for item in scene.queue:
        out += struct.pack("<d", item.ready_time)
        out += _pack_obj(item.obj)
    with open(path, "wb") as f:
        f.write(bytes(out))


def load_scene(path, config: SimConfig) -> BeltScene:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != ZRSC_MAGIC:
        raise ValueError(f"bad scene magic {data[:4]!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != ZRSC_VERSION:
        raise ValueError(f"unsupported scene version {version}")
    pos = 6
    sim_time, next_id, lost, deposited = struct.unpack_from(
        "<dqqq", data, pos)
    pos += struct.calcsize("<dqqq")
    state = int.from_bytes(data[pos:pos + 16], "little")
    inc = int.from_bytes(data[pos + 16:pos + 32], "little")
    pos += 32
    has32, uinteger = struct.unpack_from("<Bq", data, pos)
    pos += struct.calcsize("<Bq")
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": state, "inc": inc},
        "has_uint32": int(has32),
        "uinteger": int(uinteger),
    }
    scene = BeltScene(config=config, rng=rng, sim_time=sim_time,
                      next_id=next_id, lost=lost, deposited=deposited)
    (n_obj,) = struct.unpack_from("<I", data, pos)
    pos += 4
    for _ in range(n_obj):
        obj, pos = _unpack_obj(data, pos)
        scene.objects.append(obj)
    (n_q,) = struct.unpack_from("<I", data, pos)
    pos += 4
    for _ in range(n_q):
        (ready,) = struct.unpack_from("<d", data, pos)
        pos += 8
        obj, pos = _unpack_obj(data, pos)
        scene.queue.append(QueuedObject(ready, obj))
    return scene
