"""Scenario configuration, world assembly, run orchestration and output.

Scene files are line-oriented ``key = value`` under ``[section]`` headers.
Quantities accept an explicit unit suffix (``0.25 cm``, ``23 kN/m3``,
``19.8 deg``); bare numbers are SI (m, Pa, rad, s).  All internal state is
SI.  See ``docs/scene_format.md`` for the full schema; two paper scenes are
bundled as canonical fixtures.
"""

from __future__ import annotations

import csv
import importlib.resources
import logging
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constitutive import MaterialParams
from .contact import ContactMaterial
from .errors import ConfigError, NumericalAbort
from .particles import (HCOEF, KIND_SOIL, KIND_STATIC, ParticleSet,
                        lattice_init)
from .rigid import RigidBlock, make_block
from .solver import (CLASS_STOPPER, SolverControls, StabilizationParams,
                     World, stable_dt, step)

logger = logging.getLogger(__name__)

UNIT_FACTORS = {
    "m": 1.0, "cm": 1.0e-2, "mm": 1.0e-3,
    "pa": 1.0, "kpa": 1.0e3, "mpa": 1.0e6, "gpa": 1.0e9,
    "n/m3": 1.0, "kn/m3": 1.0e3,
    "kg/m3": 1.0,
    "deg": math.pi / 180.0, "rad": 1.0,
    "s": 1.0, "ms": 1.0e-3,
    "1/s": 1.0,
}

LOG_EVERY = 200


# ----------------------------------------------------------------------
# low-level file parsing
# ----------------------------------------------------------------------

class _RawScene:
    """Sections -> key -> list of (raw value, line number)."""

    def __init__(self, path):
        self.path = path
        self.sections: dict[str, dict[str, list[tuple[str, int]]]] = {}
        self.section_lines: dict[str, int] = {}

    def err(self, line, msg) -> ConfigError:
        return ConfigError(f"{self.path}:{line}: {msg}")

    def has(self, section, key=None):
        if section not in self.sections:
            return False
        return key is None or key in self.sections[section]

    def get_raw(self, section, key, default=None, required=False):
        entries = self.sections.get(section, {}).get(key)
        if not entries:
            if required:
                raise ConfigError(
                    f"{self.path}: missing required key '{key}' in section [{section}]")
            return default, 0
        if len(entries) > 1:
            raise self.err(entries[1][1], f"duplicate key '{key}' in [{section}]")
        return entries[0]

    def get_all(self, section, key):
        return self.sections.get(section, {}).get(key, [])


def _parse_raw(text: str, path) -> _RawScene:
    raw = _RawScene(path)
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip().lower()
            if not section:
                raise raw.err(lineno, "empty section name")
            raw.sections.setdefault(section, {})
            raw.section_lines.setdefault(section, lineno)
            continue
        if "=" not in stripped:
            raise raw.err(lineno, f"expected 'key = value', got {stripped!r}")
        if section is None:
            raise raw.err(lineno, "key outside of any [section]")
        key, value = stripped.split("=", 1)
        key = key.strip().lower()
        value = value.strip()
        if not key or not value:
            raise raw.err(lineno, "empty key or value")
        raw.sections[section].setdefault(key, []).append((value, lineno))
    return raw


def _number(raw: _RawScene, section, key, default=None, required=False):
    """Parse '<float> [unit]' into SI."""
    value, line = raw.get_raw(section, key, required=required)
    if value is None:
        return default
    parts = value.split()
    try:
        x = float(parts[0])
    except ValueError:
        raise raw.err(line, f"{key}: expected a number, got {parts[0]!r}")
    if len(parts) == 1:
        return x
    if len(parts) != 2:
        raise raw.err(line, f"{key}: expected 'number [unit]', got {value!r}")
    unit = parts[1].lower()
    if unit not in UNIT_FACTORS:
        raise raw.err(line, f"{key}: unknown unit {parts[1]!r}")
    return x * UNIT_FACTORS[unit]


def _boolean(raw: _RawScene, section, key, default):
    value, line = raw.get_raw(section, key)
    if value is None:
        return default
    v = value.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise raw.err(line, f"{key}: expected true/false, got {value!r}")


def _polygon(raw: _RawScene, section, key):
    value, line = raw.get_raw(section, key)
    if value is None:
        return None
    pts = []
    for chunk in value.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        nums = chunk.split()
        if len(nums) != 2:
            raise raw.err(line, f"{key}: each vertex needs two numbers, got {chunk!r}")
        try:
            pts.append((float(nums[0]), float(nums[1])))
        except ValueError:
            raise raw.err(line, f"{key}: bad vertex {chunk!r}")
    if len(pts) < 3:
        raise raw.err(line, f"{key}: a polygon needs at least 3 vertices")
    return np.array(pts)


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------

@dataclass
class BlockPlacement:
    id: int
    x: float
    y: float
    fixed: bool = False


@dataclass
class StopperSegment:
    x: float
    y0: float
    y1: float


@dataclass
class SceneConfig:
    """Validated, unit-normalized scenario description."""

    gravity: tuple
    # soil
    soil_polygon: np.ndarray | None
    spacing: float
    soil_unit_weight: float
    soil_young: float
    soil_poisson: float
    soil_friction_angle: float
    soil_dilatancy_angle: float
    soil_cohesion: float
    # blocks
    block_width: float | None
    block_height: float | None
    block_unit_weight: float | None
    block_young: float | None
    block_poisson: float | None
    block_boundary_spacing: float | None
    course_overlap: float | None
    placements: list[BlockPlacement] = field(default_factory=list)
    # friction map
    friction: dict = field(default_factory=dict)
    # base / boundaries / stopper
    base_x_min: float | None = None
    base_x_max: float | None = None
    base_y: float = 0.0
    base_young: float | None = None
    base_poisson: float | None = None
    left_wall: float | None = None
    right_wall: float | None = None
    wall_particles: bool = True
    stopper_segments: list[StopperSegment] = field(default_factory=list)
    # stabilization / solver
    viscosity_alpha: float = 0.1
    viscosity_beta: float = 0.1
    artificial_stress_eps: float = 0.3
    artificial_stress_exponent: float = 2.55
    t_end: float = 0.0
    cfl_factor: float = 0.1
    dt_max: float = 1.0e-4
    snapshot_interval: float = 0.05
    damping_phase_duration: float = 0.2
    damping_coefficient: float = 100.0
    hold_blocks_during_settling: bool = True
    seed: int = 0

    def material(self) -> MaterialParams:
        return MaterialParams(
            young_modulus=self.soil_young,
            poisson_ratio=self.soil_poisson,
            cohesion=self.soil_cohesion,
            friction_angle=self.soil_friction_angle,
            dilatancy_angle=self.soil_dilatancy_angle,
            unit_weight=self.soil_unit_weight)

    def controls(self) -> SolverControls:
        return SolverControls(
            t_end=self.t_end, cfl_factor=self.cfl_factor, dt_max=self.dt_max,
            snapshot_interval=self.snapshot_interval,
            damping_phase_duration=self.damping_phase_duration,
            damping_coefficient=self.damping_coefficient)

    def stabilization(self) -> StabilizationParams:
        return StabilizationParams(
            viscosity_alpha=self.viscosity_alpha,
            viscosity_beta=self.viscosity_beta,
            artificial_stress_eps=self.artificial_stress_eps,
            artificial_stress_exponent=self.artificial_stress_exponent)


def loads(text: str, path="<scene>") -> SceneConfig:
    raw = _parse_raw(text, path)
    if not raw.has("soil"):
        raise ConfigError(f"{path}: missing required section [soil] "
                          "(key 'spacing' at minimum)")
    if not raw.has("solver"):
        raise ConfigError(f"{path}: missing required section [solver] "
                          "(key 't_end' at minimum)")

    gx = _number(raw, "gravity", "gx", default=0.0)
    gy = _number(raw, "gravity", "gy", default=-9.81)

    spacing = _number(raw, "soil", "spacing", required=True)
    cfg = SceneConfig(
        gravity=(gx, gy),
        soil_polygon=_polygon(raw, "soil", "polygon"),
        spacing=spacing,
        soil_unit_weight=_number(raw, "soil", "unit_weight", default=23.0e3),
        soil_young=_number(raw, "soil", "young_modulus", default=1.5e6),
        soil_poisson=_number(raw, "soil", "poisson_ratio", default=0.3),
        soil_friction_angle=_number(raw, "soil", "friction_angle", default=math.radians(19.8)),
        soil_dilatancy_angle=_number(raw, "soil", "dilatancy_angle", default=0.0),
        soil_cohesion=_number(raw, "soil", "cohesion", default=0.0),
        block_width=None, block_height=None, block_unit_weight=None,
        block_young=None, block_poisson=None, block_boundary_spacing=None,
        course_overlap=None,
    )
    if spacing <= 0.0:
        raise ConfigError(f"{path}: soil spacing must be positive")

    if raw.has("blocks"):
        cfg.block_width = _number(raw, "blocks", "width", required=True)
        cfg.block_height = _number(raw, "blocks", "height", required=True)
        cfg.block_unit_weight = _number(raw, "blocks", "unit_weight", required=True)
        cfg.block_young = _number(raw, "blocks", "young_modulus", default=69.0e9)
        cfg.block_poisson = _number(raw, "blocks", "poisson_ratio", default=0.33)
        cfg.block_boundary_spacing = _number(raw, "blocks", "boundary_spacing",
                                             default=spacing / 2.0)
        cfg.course_overlap = _number(raw, "blocks", "course_overlap")
        for value, line in raw.get_all("blocks", "place"):
            parts = [p.strip() for p in value.split(",")]
            if len(parts) not in (3, 4):
                raise raw.err(line, f"place: expected 'id, x, y[, fixed]', got {value!r}")
            try:
                pid = int(parts[0])
                px = float(parts[1])
                py = float(parts[2])
            except ValueError:
                raise raw.err(line, f"place: bad numbers in {value!r}")
            fixed = False
            if len(parts) == 4:
                if parts[3].lower() != "fixed":
                    raise raw.err(line, f"place: unknown flag {parts[3]!r}")
                fixed = True
            cfg.placements.append(BlockPlacement(pid, px, py, fixed))
        if not cfg.placements:
            raise ConfigError(f"{path}: [blocks] section has no 'place' entries")
        ids = [p.id for p in cfg.placements]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"{path}: duplicate block ids in [blocks]")

    if raw.has("friction"):
        for key in ("block_block", "block_base", "block_soil", "block_stopper"):
            v = _number(raw, "friction", key)
            if v is not None:
                if v < 0.0:
                    raise ConfigError(f"{path}: friction {key} must be non-negative")
                cfg.friction[key] = v

    if raw.has("base"):
        cfg.base_x_min = _number(raw, "base", "x_min", required=True)
        cfg.base_x_max = _number(raw, "base", "x_max", required=True)
        cfg.base_y = _number(raw, "base", "y", default=0.0)
        cfg.base_young = _number(raw, "base", "young_modulus")
        cfg.base_poisson = _number(raw, "base", "poisson_ratio")
        if cfg.base_x_max <= cfg.base_x_min:
            raise ConfigError(f"{path}: base x_max must exceed x_min")

    if raw.has("boundaries"):
        cfg.left_wall = _number(raw, "boundaries", "left_wall")
        cfg.right_wall = _number(raw, "boundaries", "right_wall")
        cfg.wall_particles = _boolean(raw, "boundaries", "wall_particles", default=True)

    if raw.has("stopper"):
        for value, line in raw.get_all("stopper", "segment"):
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 3:
                raise raw.err(line, f"segment: expected 'x, y0, y1', got {value!r}")
            try:
                sx, sy0, sy1 = (float(p) for p in parts)
            except ValueError:
                raise raw.err(line, f"segment: bad numbers in {value!r}")
            if sy1 <= sy0:
                raise raw.err(line, "segment: y1 must exceed y0")
            cfg.stopper_segments.append(StopperSegment(sx, sy0, sy1))

    if raw.has("stabilization"):
        cfg.viscosity_alpha = _number(raw, "stabilization", "viscosity_alpha", default=cfg.viscosity_alpha)
        cfg.viscosity_beta = _number(raw, "stabilization", "viscosity_beta", default=cfg.viscosity_beta)
        cfg.artificial_stress_eps = _number(raw, "stabilization", "artificial_stress_eps", default=cfg.artificial_stress_eps)
        cfg.artificial_stress_exponent = _number(raw, "stabilization", "artificial_stress_exponent", default=cfg.artificial_stress_exponent)

    tv, _ = raw.get_raw("solver", "t_end")
    if tv is None:
        raise ConfigError(f"{path}: missing required key 't_end' in section [solver]")
    cfg.t_end = _number(raw, "solver", "t_end", required=True)
    cfg.cfl_factor = _number(raw, "solver", "cfl_factor", default=cfg.cfl_factor)
    cfg.dt_max = _number(raw, "solver", "dt_max", default=cfg.dt_max)
    cfg.snapshot_interval = _number(raw, "solver", "snapshot_interval", default=cfg.snapshot_interval)
    cfg.damping_phase_duration = _number(raw, "solver", "damping_phase_duration", default=cfg.damping_phase_duration)
    cfg.damping_coefficient = _number(raw, "solver", "damping_coefficient", default=cfg.damping_coefficient)
    cfg.hold_blocks_during_settling = _boolean(raw, "solver", "hold_blocks_during_settling", default=True)
    seed = _number(raw, "solver", "seed", default=0.0)
    cfg.seed = int(seed)

    _validate_config(cfg, path)
    return cfg


def load(path) -> SceneConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read scene file {path}: {e}")
    return loads(text, path=str(path))


def _validate_config(cfg: SceneConfig, path):
    try:
        cfg.material()
        cfg.controls()
        cfg.stabilization()
    except ValueError as e:
        raise ConfigError(f"{path}: {e}")

    if cfg.placements:
        w, h = cfg.block_width, cfg.block_height
        if w <= 0 or h <= 0:
            raise ConfigError(f"{path}: block dimensions must be positive")
        # pairwise overlap check at t=0 (axis-aligned; tolerance 1 um)
        tol = 1.0e-6
        for i, a in enumerate(cfg.placements):
            for b in cfg.placements[i + 1:]:
                ox = w - abs(a.x - b.x)
                oy = h - abs(a.y - b.y)
                if ox > tol and oy > tol:
                    raise ConfigError(
                        f"{path}: blocks {a.id} and {b.id} overlap at t=0 "
                        f"(by {min(ox, oy):.3g} m)")
        # stacked-course overlap must match the configured value
        if cfg.course_overlap is not None and len(cfg.placements) > 1:
            ordered = sorted(cfg.placements, key=lambda p: p.y)
            for lo, hi in zip(ordered, ordered[1:]):
                if abs((hi.y - lo.y) - h) > 0.35 * h:
                    continue  # not a stacked pair
                overlap = w - abs(hi.x - lo.x)
                if abs(overlap - cfg.course_overlap) > 1.0e-9:
                    raise ConfigError(
                        f"{path}: blocks {lo.id}/{hi.id} course overlap "
                        f"{overlap:.6g} m does not match configured "
                        f"{cfg.course_overlap:.6g} m")


def dumps(cfg: SceneConfig) -> str:
    """Serialize a config back to scene-file text (SI units, canonical order)."""
    out = []

    def sec(name):
        out.append(f"[{name}]")

    def kv(key, value):
        out.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")

    sec("gravity")
    kv("gx", float(cfg.gravity[0]))
    kv("gy", float(cfg.gravity[1]))
    out.append("")
    sec("soil")
    if cfg.soil_polygon is not None:
        pts = ", ".join(f"{p[0]!r} {p[1]!r}" for p in cfg.soil_polygon)
        out.append(f"polygon = {pts}")
    kv("spacing", float(cfg.spacing))
    kv("unit_weight", float(cfg.soil_unit_weight))
    kv("young_modulus", float(cfg.soil_young))
    kv("poisson_ratio", float(cfg.soil_poisson))
    kv("friction_angle", float(cfg.soil_friction_angle))
    kv("dilatancy_angle", float(cfg.soil_dilatancy_angle))
    kv("cohesion", float(cfg.soil_cohesion))
    out.append("")
    if cfg.placements:
        sec("blocks")
        kv("width", float(cfg.block_width))
        kv("height", float(cfg.block_height))
        kv("unit_weight", float(cfg.block_unit_weight))
        kv("young_modulus", float(cfg.block_young))
        kv("poisson_ratio", float(cfg.block_poisson))
        kv("boundary_spacing", float(cfg.block_boundary_spacing))
        if cfg.course_overlap is not None:
            kv("course_overlap", float(cfg.course_overlap))
        for p in cfg.placements:
            suffix = ", fixed" if p.fixed else ""
            out.append(f"place = {p.id}, {p.x!r}, {p.y!r}{suffix}")
        out.append("")
    if cfg.friction:
        sec("friction")
        for k, v in sorted(cfg.friction.items()):
            kv(k, float(v))
        out.append("")
    if cfg.base_x_min is not None:
        sec("base")
        kv("x_min", float(cfg.base_x_min))
        kv("x_max", float(cfg.base_x_max))
        kv("y", float(cfg.base_y))
        if cfg.base_young is not None:
            kv("young_modulus", float(cfg.base_young))
        if cfg.base_poisson is not None:
            kv("poisson_ratio", float(cfg.base_poisson))
        out.append("")
    if cfg.left_wall is not None or cfg.right_wall is not None:
        sec("boundaries")
        if cfg.left_wall is not None:
            kv("left_wall", float(cfg.left_wall))
        if cfg.right_wall is not None:
            kv("right_wall", float(cfg.right_wall))
        kv("wall_particles", "true" if cfg.wall_particles else "false")
        out.append("")
    if cfg.stopper_segments:
        sec("stopper")
        for s in cfg.stopper_segments:
            out.append(f"segment = {s.x!r}, {s.y0!r}, {s.y1!r}")
        out.append("")
    sec("stabilization")
    kv("viscosity_alpha", float(cfg.viscosity_alpha))
    kv("viscosity_beta", float(cfg.viscosity_beta))
    kv("artificial_stress_eps", float(cfg.artificial_stress_eps))
    kv("artificial_stress_exponent", float(cfg.artificial_stress_exponent))
    out.append("")
    sec("solver")
    kv("t_end", float(cfg.t_end))
    kv("cfl_factor", float(cfg.cfl_factor))
    kv("dt_max", float(cfg.dt_max))
    kv("snapshot_interval", float(cfg.snapshot_interval))
    kv("damping_phase_duration", float(cfg.damping_phase_duration))
    kv("damping_coefficient", float(cfg.damping_coefficient))
    kv("hold_blocks_during_settling", "true" if cfg.hold_blocks_during_settling else "false")
    kv("seed", cfg.seed)
    out.append("")
    return "\n".join(out)


def bundled_scene_path(name: str) -> Path:
    """Path of a scene shipped with the package (e.g. 'paper_srw6.scene')."""
    res = importlib.resources.files("srwsim") / "scenes" / name
    with importlib.resources.as_file(res) as p:
        return Path(p)


# ----------------------------------------------------------------------
# world assembly
# ----------------------------------------------------------------------

def _k0_effective(mat: MaterialParams) -> float:
    """At-rest lateral ratio, floored at the Drucker-Prager admissible
    minimum (the elastic nu/(1-nu) can violate the yield criterion)."""
    k0 = mat.k0
    a = math.sqrt(3.0) * mat.alpha_phi
    if mat.alpha_phi <= 0.0:
        return k0
    k_min = (1.0 - a) / (1.0 + 2.0 * a)
    return max(k0, k_min + 1.0e-3)


def _geostatic_init(ps: ParticleSet, mat: MaterialParams, spacing: float):
    """Column-wise geostatic stress profile from the local soil surface."""
    if ps.n == 0:
        return
    gamma = mat.unit_weight
    k0 = _k0_effective(mat)
    cols = np.round((ps.pos[:, 0] - 0.5 * spacing) / spacing).astype(np.int64)
    soil = ps.kind == KIND_SOIL
    surf = {}
    for c, y in zip(cols[soil], ps.pos[soil, 1]):
        cur = surf.get(c)
        if cur is None or y > cur:
            surf[c] = y
    for i in range(ps.n):
        top = surf.get(cols[i])
        if top is None:
            # static wall columns carry the profile of the nearest soil column
            for dc in (1, -1, 2, -2, 3, -3):
                top = surf.get(cols[i] + dc)
                if top is not None:
                    break
        if top is None:
            continue
        depth = (top + 0.5 * spacing) - ps.pos[i, 1]
        if depth <= 0.0:
            continue
        syy = -gamma * depth
        ps.stress[i, 0] = k0 * syy
        ps.stress[i, 1] = syy
        ps.stress[i, 2] = k0 * syy
        ps.stress[i, 3] = 0.0


def _base_row(cfg: SceneConfig, mat: MaterialParams, gmag: float) -> ParticleSet:
    spacing = cfg.spacing
    i0 = math.ceil(cfg.base_x_min / spacing - 0.5)
    i1 = math.floor(cfg.base_x_max / spacing - 0.5)
    xs = (np.arange(i0, i1 + 1) + 0.5) * spacing
    n = len(xs)
    if n == 0:
        raise ConfigError("base extent shorter than one lattice spacing")
    rho0 = mat.density(gmag)
    return ParticleSet(
        ids=np.arange(n, dtype=np.int64),
        kind=np.full(n, KIND_STATIC, np.uint8),
        pos=np.column_stack([xs, np.full(n, cfg.base_y - 0.5 * spacing)]),
        vel=np.zeros((n, 2)),
        rho=np.full(n, rho0),
        mass=np.full(n, rho0 * spacing * spacing),
        stress=np.zeros((n, 4)),
        eps_p=np.zeros(n),
        h=HCOEF * spacing,
        spacing=spacing)


def build_world(cfg: SceneConfig, debug: bool = False) -> World:
    mat = cfg.material()
    gravity = np.asarray(cfg.gravity, float)
    gmag = float(np.linalg.norm(gravity))
    if gmag <= 0.0:
        gmag = 9.81

    sets = []
    if cfg.soil_polygon is not None:
        sets.append(lattice_init(cfg.soil_polygon, cfg.spacing, mat,
                                 kind=KIND_SOIL, gravity_magnitude=gmag))
    if cfg.base_x_min is not None:
        sets.append(_base_row(cfg, mat, gmag))
    ps = ParticleSet.concatenate(sets) if sets else ParticleSet.empty(cfg.spacing)
    _geostatic_init(ps, mat, cfg.spacing)

    blocks = []
    contact_materials = None
    friction = None
    contact_statics = None
    if cfg.placements:
        bdens = cfg.block_unit_weight / gmag
        for p in sorted(cfg.placements, key=lambda q: q.id):
            blk = make_block(cfg.block_width, cfg.block_height, bdens,
                             cfg.block_boundary_spacing, id=p.id)
            blk.R = np.array([p.x, p.y])
            blk.fixed = p.fixed
            blocks.append(blk)
        base_young = cfg.base_young if cfg.base_young is not None else cfg.block_young
        base_poisson = cfg.base_poisson if cfg.base_poisson is not None else cfg.block_poisson
        contact_materials = {
            "soil": ContactMaterial("soil", mat.young_modulus, mat.poisson_ratio),
            "block": ContactMaterial("block", cfg.block_young, cfg.block_poisson),
            "base": ContactMaterial("base", base_young, base_poisson),
            "stopper": ContactMaterial("stopper", base_young, base_poisson),
        }
        friction = dict(cfg.friction)
        friction.setdefault("block_stopper", 0.0)
        missing = []
        if cfg.soil_polygon is not None and "block_soil" not in friction:
            missing.append("block_soil")
        if cfg.base_x_min is not None and "block_base" not in friction:
            missing.append("block_base")
        if len(blocks) > 1 and "block_block" not in friction:
            missing.append("block_block")
        if missing:
            raise ConfigError(f"missing friction coefficients: {', '.join(missing)}")

        if cfg.stopper_segments:
            s = cfg.block_boundary_spacing
            pts = []
            for seg in cfg.stopper_segments:
                n = max(1, round((seg.y1 - seg.y0) / s))
                ys = seg.y0 + (np.arange(n) + 0.5) * (seg.y1 - seg.y0) / n
                pts.extend((seg.x, y) for y in ys)
            contact_statics = {
                "pos": np.array(pts),
                "h": np.full(len(pts), 1.2 * s),
                "cls": np.full(len(pts), CLASS_STOPPER, np.int64),
            }

    return World(ps, mat, cfg.stabilization(), cfg.controls(), gravity,
                 blocks=blocks, contact_statics=contact_statics,
                 contact_materials=contact_materials, friction=friction,
                 base_y=cfg.base_y if cfg.base_x_min is not None else None,
                 left_wall=cfg.left_wall, right_wall=cfg.right_wall,
                 mirror_walls=cfg.wall_particles, debug=debug)


# ----------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------

def runout_metric(blocks: list[RigidBlock], left_boundary: float = 0.0,
                  block_id: int = 1) -> float:
    """Horizontal distance from the left boundary to the farthest-right
    extent of the given block's rotated footprint."""
    for blk in blocks:
        if blk.id == block_id:
            return float(blk.R[0] + blk.half_extent_x() - left_boundary)
    raise ValueError(f"no block with id {block_id}")


def collapse_metric(history, threshold: float):
    """(collapsed, onset time): first time any block centroid moved more
    than ``threshold`` from its initial position."""
    if len(history) < 2:
        return False, None
    t0, r0 = history[0]
    for t, r in history[1:]:
        d = np.sqrt(((r - r0) ** 2).sum(axis=1))
        if np.any(d > threshold):
            return True, t
    return False, None


# ----------------------------------------------------------------------
# run orchestration
# ----------------------------------------------------------------------

@dataclass
class RunSummary:
    out_dir: str
    n_soil: int
    n_static: int
    n_blocks: int
    t_end: float
    steps: int
    collapsed: bool
    collapse_onset: float | None
    runout: float | None
    total_kinetic_energy: float
    max_entity_kinetic_energy: float
    max_plastic_strain: float
    coulomb_excess_max: float
    wall_time: float

    def rows(self):
        return [
            ("n_soil", self.n_soil),
            ("n_static", self.n_static),
            ("n_blocks", self.n_blocks),
            ("t_end", f"{self.t_end:.9g}"),
            ("steps", self.steps),
            ("collapsed", str(self.collapsed).lower()),
            ("collapse_onset", "" if self.collapse_onset is None else f"{self.collapse_onset:.9g}"),
            ("runout_m", "" if self.runout is None else f"{self.runout:.9g}"),
            ("total_kinetic_energy", f"{self.total_kinetic_energy:.9g}"),
            ("max_entity_kinetic_energy", f"{self.max_entity_kinetic_energy:.9g}"),
            ("max_plastic_strain", f"{self.max_plastic_strain:.9g}"),
            ("coulomb_excess_max", f"{self.coulomb_excess_max:.9g}"),
            ("wall_time_s", f"{self.wall_time:.3f}"),
        ]


def _write_soil_snapshot(path: Path, ps: ParticleSet):
    soil = ps.kind == KIND_SOIL
    data = np.column_stack([
        ps.ids[soil], ps.pos[soil, 0], ps.pos[soil, 1],
        ps.vel[soil, 0], ps.vel[soil, 1], ps.rho[soil],
        ps.stress[soil, 0], ps.stress[soil, 1], ps.stress[soil, 2],
        ps.stress[soil, 3], ps.eps_p[soil]])
    np.savetxt(path, data, delimiter=",",
               fmt=["%d"] + ["%.9g"] * 10,
               header="id,x,y,vx,vy,rho,sxx,syy,szz,sxy,eps_p_acc", comments="")


def _write_block_snapshot(path: Path, world: World):
    rows = []
    for k, blk in enumerate(world.blocks):
        rows.append([blk.id, world.B_R[k, 0], world.B_R[k, 1], world.B_th[k],
                     world.B_V[k, 0], world.B_V[k, 1], world.B_om[k]])
    data = np.asarray(rows, float) if rows else np.empty((0, 7))
    np.savetxt(path, data, delimiter=",",
               fmt=["%d"] + ["%.9g"] * 6,
               header="id,cx,cy,theta,vx,vy,omega", comments="")


class _SnapshotWriter:
    def __init__(self, out_dir: Path, world: World):
        self.out_dir = out_dir
        self.world = world
        self.index = 0
        self.rows = []
        static = world.ps.kind != KIND_SOIL
        if np.any(static):
            data = np.column_stack([world.ps.ids[static], world.ps.pos[static, 0],
                                    world.ps.pos[static, 1]])
            np.savetxt(out_dir / "static.csv", data, delimiter=",",
                       fmt=["%d", "%.9g", "%.9g"], header="id,x,y", comments="")

    def write(self):
        w = self.world
        soil_file = f"soil_{self.index:05d}.csv"
        _write_soil_snapshot(self.out_dir / soil_file, w.ps)
        blocks_file = ""
        if w.n_blocks:
            blocks_file = f"blocks_{self.index:05d}.csv"
            _write_block_snapshot(self.out_dir / blocks_file, w)
        self.rows.append((self.index, w.time, soil_file, blocks_file))
        self.index += 1

    def finish(self):
        with open(self.out_dir / "snapshots.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["index", "time", "soil_file", "blocks_file"])
            for idx, t, sf, bf in self.rows:
                wr.writerow([idx, f"{t:.9g}", sf, bf])


def run(cfg: SceneConfig, out_dir, t_end: float | None = None,
        snapshot_interval: float | None = None) -> RunSummary:
    """Settle, release, run to t_end; write snapshots, log, and summary."""
    t_start = _time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if t_end is None:
        t_end = cfg.t_end
    if snapshot_interval is None:
        snapshot_interval = cfg.snapshot_interval

    world = build_world(cfg)
    (out_dir / "scene.scene").write_text(dumps(cfg))
    gmag = max(world.g_mag, 1e-12)

    log_rows = []

    def log_state(dt):
        log_rows.append((world.step_index, f"{world.time:.9g}", f"{dt:.9g}",
                         f"{world.kinetic_energy():.9g}",
                         f"{world.max_speed():.9g}"))

    # settling phase: damped, blocks optionally held
    duration = cfg.damping_phase_duration
    if duration > 0.0 and world.ps.n > 0:
        world.damping_active = True
        held = cfg.hold_blocks_during_settling and world.n_blocks > 0
        saved_fixed = world.B_fixed.copy()
        if held:
            world.B_fixed[:] = 1
        world.time = -duration
        while world.time < -1.0e-12:
            dt = stable_dt(world.ps, world.material, world.controls, gmag,
                           extra_speed=world.max_speed())
            dt = min(dt, -world.time)
            step(world, dt)
            if world.step_index % LOG_EVERY == 0:
                log_state(dt)
        world.damping_active = False
        if held:
            world.B_fixed[:] = saved_fixed
        world.ps.vel[:] = 0.0
        world.B_V[:] = 0.0
        world.B_om[:] = 0.0

    # main phase
    world.time = 0.0
    world.step_index = 0
    world.remove_stopper()
    writer = _SnapshotWriter(out_dir, world)
    writer.write()
    history = [(0.0, world.B_R.copy())]
    next_snap = snapshot_interval

    try:
        while world.time < t_end - 1.0e-12:
            dt = stable_dt(world.ps, world.material, world.controls, gmag,
                           extra_speed=world.max_speed())
            dt = min(dt, t_end - world.time)
            step(world, dt)
            if world.step_index % LOG_EVERY == 0:
                log_state(dt)
                history.append((world.time, world.B_R.copy()))
            if snapshot_interval > 0.0 and world.time >= next_snap - 1.0e-12:
                writer.write()
                history.append((world.time, world.B_R.copy()))
                next_snap += snapshot_interval
                logger.info("t=%.4f s  step=%d  ke=%.3e", world.time,
                            world.step_index, world.kinetic_energy())
    finally:
        # keep partial output on aborts
        if world.time > 0.0 and (not writer.rows or writer.rows[-1][1] < world.time):
            try:
                writer.write()
                history.append((world.time, world.B_R.copy()))
            except Exception:
                pass
        writer.finish()
        with open(out_dir / "log.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["step", "time", "dt", "kinetic_energy", "max_speed"])
            wr.writerows(log_rows)

    world.sync_blocks()
    runout = None
    if world.n_blocks and any(b.id == 1 for b in world.blocks):
        runout = runout_metric(world.blocks,
                               left_boundary=cfg.left_wall or 0.0, block_id=1)
    collapsed, onset = collapse_metric(history, cfg.block_width or math.inf)
    summary = RunSummary(
        out_dir=str(out_dir),
        n_soil=world.ps.n_soil,
        n_static=int(np.count_nonzero(world.ps.kind != KIND_SOIL)),
        n_blocks=world.n_blocks,
        t_end=world.time,
        steps=world.step_index,
        collapsed=collapsed,
        collapse_onset=onset,
        runout=runout,
        total_kinetic_energy=world.kinetic_energy(),
        max_entity_kinetic_energy=world.max_entity_kinetic_energy(),
        max_plastic_strain=float(world.ps.eps_p.max()) if world.ps.n else 0.0,
        coulomb_excess_max=world.audit_max_coulomb_excess,
        wall_time=_time.perf_counter() - t_start)
    with open(out_dir / "summary.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["key", "value"])
        wr.writerows(summary.rows())
    return summary


def metrics_from_run(run_dir, out_file=None) -> Path:
    """Per-snapshot metric table (time, block poses, run-out, max plastic
    strain) from a finished run directory."""
    run_dir = Path(run_dir)
    manifest = run_dir / "snapshots.csv"
    if not manifest.exists():
        raise ConfigError(f"{run_dir} does not look like a run directory "
                          "(missing snapshots.csv)")
    scene_file = run_dir / "scene.scene"
    cfg = load(scene_file) if scene_file.exists() else None
    out_file = Path(out_file) if out_file else run_dir / "metrics.csv"

    with open(manifest) as f:
        entries = list(csv.DictReader(f))

    rows = []
    block_ids = []
    for e in entries:
        t = float(e["time"])
        max_eps = 0.0
        soil_path = run_dir / e["soil_file"]
        if soil_path.exists():
            data = np.loadtxt(soil_path, delimiter=",", skiprows=1, ndmin=2)
            if data.size:
                max_eps = float(data[:, 10].max())
        row = {"time": t, "max_eps_p": max_eps, "runout_m": ""}
        if e["blocks_file"]:
            bdata = np.loadtxt(run_dir / e["blocks_file"], delimiter=",",
                               skiprows=1, ndmin=2)
            for brow in bdata:
                bid = int(brow[0])
                if bid not in block_ids:
                    block_ids.append(bid)
                row[f"block{bid}_cx"] = brow[1]
                row[f"block{bid}_cy"] = brow[2]
                row[f"block{bid}_theta"] = brow[3]
                if bid == 1 and cfg is not None and cfg.block_width:
                    half = (cfg.block_width / 2.0 * abs(math.cos(brow[3]))
                            + cfg.block_height / 2.0 * abs(math.sin(brow[3])))
                    row["runout_m"] = brow[1] + half - (cfg.left_wall or 0.0)
        rows.append(row)

    cols = ["time", "runout_m", "max_eps_p"]
    for bid in sorted(block_ids):
        cols += [f"block{bid}_cx", f"block{bid}_cy", f"block{bid}_theta"]
    with open(out_file, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(cols)
        for row in rows:
            wr.writerow([row.get(c, "") for c in cols])
    return out_file
