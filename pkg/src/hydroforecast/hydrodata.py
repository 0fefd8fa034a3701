"""Synthetic towing-tank oracle and dataset factory.

The oracle is quasi-static quadratic drag on the robot body plus four legs
whose effective area depends on the second and third joint angles, relaxed
through a first-order sensor lag so the measured wrench has genuine ODE
structure. Datasets mirror the towing protocol: a 4 speeds x 3 directions
x 16 joint-config grid (192 conditions), segment-switching variants, and
10%-of-std Gaussian noise injection.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_DT = 0.02
SPEEDS = (0.2, 0.3, 0.4, 0.5)
DIRECTIONS = (("X", (1.0, 0.0)),
              ("Y", (0.0, 1.0)),
              ("XY", (math.cos(math.pi / 4), math.sin(math.pi / 4))))
JOINT_LIMIT = 2.6
JOINT_GRID_SIZE = 4
SEGMENT_LEN = 10


@dataclass(frozen=True)
class OracleParams:
    rho: float = 1000.0
    cd: tuple[float, float, float] = (1.1, 1.3, 0.9)
    body_area: tuple[float, float, float] = (0.10, 0.25, 0.30)
    leg_area_coeffs: tuple[float, float, float] = (0.01, 0.008, 0.006)
    lever_arms: tuple[tuple[float, float, float], ...] = (
        (0.3, 0.2, 0.0), (0.3, -0.2, 0.0), (-0.3, 0.2, 0.0), (-0.3, -0.2, 0.0))
    tau_relax: float = 0.2

    def __post_init__(self):
        if self.rho <= 0 or self.tau_relax <= 0:
            raise ValueError("rho and tau_relax must be positive")
        if any(a < 0 for a in self.body_area) or self.leg_area_coeffs[0] < 0:
            raise ValueError("areas must be nonnegative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OracleParams":
        return cls(rho=d["rho"], cd=tuple(d["cd"]), body_area=tuple(d["body_area"]),
                   leg_area_coeffs=tuple(d["leg_area_coeffs"]),
                   lever_arms=tuple(tuple(r) for r in d["lever_arms"]),
                   tau_relax=d["tau_relax"])


@dataclass
class TowingCondition:
    """Joint angles shared across legs (scalars) or per leg (length-4 arrays)."""
    q2: np.ndarray | float
    q3: np.ndarray | float
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rho: float | None = None  # overrides OracleParams.rho when set


def steady_wrench(cond: TowingCondition, p: OracleParams) -> np.ndarray:
    """Quasi-static drag wrench (Fx, Fy, Fz, Tx, Ty, Tz) in SI units."""
    rho = p.rho if cond.rho is None else cond.rho
    cd = np.asarray(p.cd)
    v = np.asarray(cond.v, dtype=np.float64)
    omega = np.asarray(cond.omega, dtype=np.float64)
    a0, a1, a2 = p.leg_area_coeffs
    q2 = np.broadcast_to(np.asarray(cond.q2, dtype=np.float64), (len(p.lever_arms),))
    q3 = np.broadcast_to(np.asarray(cond.q3, dtype=np.float64), (len(p.lever_arms),))
    force = -0.5 * rho * cd * np.asarray(p.body_area) * np.linalg.norm(v) * v
    torque = np.zeros(3)
    for k, arm in enumerate(p.lever_arms):
        r_k = np.asarray(arm)
        area_k = a0 + a1 * abs(math.sin(q2[k])) + a2 * abs(math.sin(q2[k] + q3[k]))
        v_k = v + np.cross(omega, r_k)
        f_k = -0.5 * rho * cd * area_k * np.linalg.norm(v_k) * v_k
        force = force + f_k
        torque = torque + np.cross(r_k, f_k)
    return np.concatenate([force, torque])


def simulate_measured_wrench(conditions: list[TowingCondition], p: OracleParams,
                             dt: float = DEFAULT_DT, w_init: np.ndarray | None = None,
                             substeps: int = 4) -> np.ndarray:
    """First-order sensor relaxation toward the steady wrench, RK4-integrated.

    Row i is the measured wrench after relaxing over one sample period with
    the i-th condition zero-order held. ``w_init`` defaults to the steady
    wrench of the first condition.
    """
    memo: dict[int, np.ndarray] = {}  # ZOH segments reuse one condition object
    for c in conditions:
        if id(c) not in memo:
            memo[id(c)] = steady_wrench(c, p)
    targets = np.stack([memo[id(c)] for c in conditions])
    w = targets[0].copy() if w_init is None else np.asarray(w_init, dtype=np.float64).copy()
    tau = p.tau_relax
    h = dt / substeps
    out = np.empty_like(targets)
    for i in range(len(conditions)):
        ss = targets[i]
        for _ in range(substeps):
            k1 = (ss - w) / tau
            k2 = (ss - (w + 0.5 * h * k1)) / tau
            k3 = (ss - (w + 0.5 * h * k2)) / tau
            k4 = (ss - (w + h * k3)) / tau
            w = w + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i] = w
    return out


# ---- dataset containers --------------------------------------------------


@dataclass
class TrajectoryRecord:
    times: np.ndarray          # [L]
    conditions: np.ndarray     # [L, n]
    forces: np.ndarray         # [L, f]
    f0: np.ndarray             # [f]
    condition_ids: np.ndarray  # [L] int
    direction: str | None = None


@dataclass
class TrajectoryDataset:
    task: str
    variant: str
    n: int
    f: int
    length: int
    dt: float
    seed: int
    noise_fraction: float
    oracle: OracleParams
    records: list[TrajectoryRecord]
    splits: dict[str, list[int]] | None = None

    @property
    def num_trajectories(self) -> int:
        return len(self.records)

    def stack(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(X [M, L, n], F [M, L, f], F0 [M, f])."""
        x = np.stack([r.conditions for r in self.records])
        fr = np.stack([r.forces for r in self.records])
        f0 = np.stack([r.f0 for r in self.records])
        return x, fr, f0

    def subset(self, ids: list[int], variant_suffix: str = "") -> "TrajectoryDataset":
        return TrajectoryDataset(task=self.task, variant=self.variant + variant_suffix,
                                 n=self.n, f=self.f, length=self.length, dt=self.dt,
                                 seed=self.seed, noise_fraction=self.noise_fraction,
                                 oracle=self.oracle,
                                 records=[self.records[i] for i in ids])


# ---- condition grid ------------------------------------------------------


def task1_condition_grid() -> list[dict]:
    """192 towing conditions: 4 speeds x 3 directions x 16 joint configs."""
    joints = np.linspace(-JOINT_LIMIT, JOINT_LIMIT, JOINT_GRID_SIZE)
    grid = []
    for speed in SPEEDS:
        for dir_name, (dx, dy) in DIRECTIONS:
            for q2 in joints:
                for q3 in joints:
                    vx, vy = speed * dx, speed * dy
                    grid.append({
                        "input": np.array([q2, q3, vx, vy]),
                        "cond": TowingCondition(q2=q2, q3=q3, v=np.array([vx, vy, 0.0])),
                        "direction": dir_name,
                    })
    return grid


def _traj_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, stream])


def gen_task1(variant: str, num_conditions: int = 192, length: int | None = None,
              dt: float = DEFAULT_DT, seed: int = 0,
              params: OracleParams | None = None,
              noise_fraction: float = 0.1) -> TrajectoryDataset:
    """Task 1 datasets: static conditions, switching segments, or noisy switching."""
    if variant not in ("static", "switching", "noisy"):
        raise ValueError(f"unknown task 1 variant {variant!r}")
    p = params or OracleParams()
    grid = task1_condition_grid()
    if not 1 <= num_conditions <= len(grid):
        raise ValueError(f"num_conditions must be in [1, {len(grid)}]")
    if length is None:
        length = 100 if variant == "static" else 50
    if variant != "static" and length % SEGMENT_LEN != 0:
        raise ValueError(f"switching length must be a multiple of {SEGMENT_LEN}")
    records = []
    for j in range(num_conditions):
        times = dt * np.arange(1, length + 1)
        if variant == "static":
            entry = grid[j]
            conds = [entry["cond"]] * length
            inputs = np.tile(entry["input"], (length, 1))
            cond_ids = np.full(length, j, dtype=np.int64)
            w_init = np.zeros(6)  # towed from rest: the transient is the signal
            direction = entry["direction"]
        else:
            rng = _traj_rng(seed, j, 0)
            seg_ids = rng.choice(len(grid), size=length // SEGMENT_LEN, replace=False)
            cond_ids = np.repeat(seg_ids, SEGMENT_LEN).astype(np.int64)
            conds = [grid[c]["cond"] for c in cond_ids]
            inputs = np.stack([grid[c]["input"] for c in cond_ids])
            w_init = steady_wrench(conds[0], p)
            direction = grid[seg_ids[0]]["direction"]
        forces6 = simulate_measured_wrench(conds, p, dt=dt, w_init=w_init)
        records.append(TrajectoryRecord(times=times, conditions=inputs,
                                        forces=forces6[:, :2].copy(),
                                        f0=w_init[:2].copy(),
                                        condition_ids=cond_ids, direction=direction))
    ds = TrajectoryDataset(task="1." + {"static": "1", "switching": "2", "noisy": "3"}[variant],
                           variant=variant, n=4, f=2, length=length, dt=dt, seed=seed,
                           noise_fraction=noise_fraction if variant == "noisy" else 0.0,
                           oracle=p, records=records)
    if variant == "noisy":
        _inject_noise(ds, seed, noise_fraction)
    return ds


def _inject_noise(ds: TrajectoryDataset, seed: int, fraction: float) -> None:
    sigma = np.std(np.concatenate([r.forces for r in ds.records], axis=0), axis=0)
    for j, rec in enumerate(ds.records):
        rng = _traj_rng(seed, j, 1)
        rec.forces = rec.forces + rng.normal(0.0, fraction * sigma, rec.forces.shape)


def gen_task2(num_trajectories: int = 24, length: int = 400, dt: float = DEFAULT_DT,
              seed: int = 0, params: OracleParams | None = None,
              noise_fraction: float = 0.1) -> TrajectoryDataset:
    """Task 2: 35-dim kinematic conditions, 6-dim wrench, segment-switched speed."""
    if length < 40:
        raise ValueError("task 2 length must be >= 40")
    if length % SEGMENT_LEN != 0:
        raise ValueError(f"task 2 length must be a multiple of {SEGMENT_LEN}")
    p = params or OracleParams()
    num_segments = length // SEGMENT_LEN
    records = []
    for j in range(num_trajectories):
        rng = _traj_rng(seed, j, 2)
        times = dt * np.arange(1, length + 1)
        t = times

        # sinusoidal gait: 4 legs x (hip, thigh, calf), per-leg phase offsets
        freq = rng.uniform(0.6, 1.2)
        leg_phases = np.array([0.0, math.pi, math.pi / 2, 3 * math.pi / 2])
        means = np.array([0.0, 0.6, -1.2])
        amps = np.array([0.2, 0.4, 0.4]) * rng.uniform(0.7, 1.3)
        ang = 2 * math.pi * freq
        joint_pos = np.empty((length, 12))
        joint_vel = np.empty((length, 12))
        for leg in range(4):
            for joint in range(3):
                phase = leg_phases[leg] + joint * 0.3
                col = 3 * leg + joint
                joint_pos[:, col] = means[joint] + amps[joint] * np.sin(ang * t + phase)
                joint_vel[:, col] = amps[joint] * ang * np.cos(ang * t + phase)

        # small damped random walk for angular velocity
        omega = np.empty((length, 3))
        w = np.zeros(3)
        steps_noise = rng.normal(0.0, 0.05 * math.sqrt(dt), (length, 3))
        for i in range(length):
            w = 0.98 * w + steps_noise[i]
            omega[i] = w

        # unit quaternion integrated from omega
        quat = np.empty((length, 4))
        q = np.array([1.0, 0.0, 0.0, 0.0])
        for i in range(length):
            wx, wy, wz = omega[i]
            dq = 0.5 * np.array([
                -q[1] * wx - q[2] * wy - q[3] * wz,
                q[0] * wx + q[2] * wz - q[3] * wy,
                q[0] * wy - q[1] * wz + q[3] * wx,
                q[0] * wz + q[1] * wy - q[2] * wx,
            ])
            q = q + dt * dq
            q = q / np.linalg.norm(q)
            quat[i] = q

        # piecewise-constant linear velocity, one draw per 10-step segment
        seg_speed = rng.uniform(0.2, 0.5, num_segments)
        seg_angle = rng.uniform(0.0, 2 * math.pi, num_segments)
        seg_vz = rng.uniform(-0.05, 0.05, num_segments)
        seg_v = np.stack([seg_speed * np.cos(seg_angle),
                          seg_speed * np.sin(seg_angle), seg_vz], axis=1)
        cond_ids = np.repeat(np.arange(num_segments), SEGMENT_LEN).astype(np.int64)
        lin_vel = seg_v[cond_ids]

        density = float(rng.uniform(950.0, 1050.0))
        dens_col = np.full((length, 1), density)

        inputs = np.concatenate([joint_pos, joint_vel, quat, omega, lin_vel, dens_col],
                                axis=1)
        conds = [TowingCondition(q2=joint_pos[i, 1::3], q3=joint_pos[i, 2::3],
                                 v=lin_vel[i], omega=omega[i], rho=density)
                 for i in range(length)]
        w_init = steady_wrench(conds[0], p)
        forces = simulate_measured_wrench(conds, p, dt=dt, w_init=w_init)
        records.append(TrajectoryRecord(times=times, conditions=inputs, forces=forces,
                                        f0=w_init.copy(), condition_ids=cond_ids))
    ds = TrajectoryDataset(task="2", variant="task2", n=35, f=6, length=length, dt=dt,
                           seed=seed, noise_fraction=noise_fraction, oracle=p,
                           records=records)
    if noise_fraction > 0:
        _inject_noise(ds, seed, noise_fraction)
    return ds


def generate(task: str, seed: int = 0, num_trajectories: int | None = None,
             dt: float = DEFAULT_DT, length: int | None = None,
             params: OracleParams | None = None) -> TrajectoryDataset:
    """Dispatch by task tag: 1.1, 1.2, 1.3, or 2."""
    if task == "1.1":
        return gen_task1("static", num_conditions=num_trajectories or 192,
                         length=length, dt=dt, seed=seed, params=params)
    if task == "1.2":
        return gen_task1("switching", num_conditions=num_trajectories or 192,
                         length=length, dt=dt, seed=seed, params=params)
    if task == "1.3":
        return gen_task1("noisy", num_conditions=num_trajectories or 192,
                         length=length, dt=dt, seed=seed, params=params)
    if task == "2":
        return gen_task2(num_trajectories=num_trajectories or 24,
                         length=length or 400, dt=dt, seed=seed, params=params)
    raise ValueError(f"unknown task {task!r} (1.1, 1.2, 1.3, or 2)")


# ---- splitting -----------------------------------------------------------


def split_dataset(ds: TrajectoryDataset, ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> tuple[TrajectoryDataset, TrajectoryDataset,
                                          TrajectoryDataset, dict[str, list[int]]]:
    """Whole-trajectory split; floor sizes with the remainder going to train.

    Task 1 trajectories carry a towing-direction label and are interleaved
    by direction so every direction lands in every split.
    """
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be positive and sum to 1")
    m = ds.num_trajectories
    n_val = int(m * ratios[1])
    n_test = int(m * ratios[2])
    n_train = m - n_val - n_test
    if n_val == 0 or n_test == 0 or n_train == 0:
        raise ValueError(f"{m} trajectories is too few for splits {ratios}")
    rng = np.random.default_rng([seed, 17])
    directions = [r.direction for r in ds.records]
    if all(d is not None for d in directions):
        by_dir: dict[str, list[int]] = {}
        for i, d in enumerate(directions):
            by_dir.setdefault(d, []).append(i)
        pools = []
        for d in sorted(by_dir):
            ids = np.array(by_dir[d])
            rng.shuffle(ids)
            pools.append(list(ids))
        order = []
        while any(pools):
            for pool in pools:
                if pool:
                    order.append(int(pool.pop()))
    else:
        order = list(rng.permutation(m))
    assignment = {
        "val": sorted(int(i) for i in order[:n_val]),
        "test": sorted(int(i) for i in order[n_val:n_val + n_test]),
        "train": sorted(int(i) for i in order[n_val + n_test:]),
    }
    return (ds.subset(assignment["train"]), ds.subset(assignment["val"]),
            ds.subset(assignment["test"]), assignment)


# ---- disk format ---------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def save_dataset(ds: TrajectoryDataset, outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    traj_meta = []
    for j, rec in enumerate(ds.records):
        name = f"traj_{j:04d}.csv"
        header = (["t"] + [f"x_{i}" for i in range(ds.n)]
                  + [f"F_{i}" for i in range(ds.f)] + ["cond_id"])
        lines = [",".join(header)]
        for i in range(ds.length):
            row = ([_fmt(rec.times[i])] + [_fmt(v) for v in rec.conditions[i]]
                   + [_fmt(v) for v in rec.forces[i]] + [str(int(rec.condition_ids[i]))])
            lines.append(",".join(row))
        (out / name).write_text("\n".join(lines) + "\n")
        entry = {"file": name, "f0": [float(v) for v in rec.f0]}
        if rec.direction is not None:
            entry["direction"] = rec.direction
        traj_meta.append(entry)
    manifest = {
        "task": ds.task,
        "variant": ds.variant,
        "n": ds.n,
        "f": ds.f,
        "L": ds.length,
        "num_trajectories": ds.num_trajectories,
        "dt": ds.dt,
        "seed": ds.seed,
        "noise_fraction": ds.noise_fraction,
        "oracle_params": ds.oracle.to_dict(),
        "splits": ds.splits,
        "trajectories": traj_meta,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(indir) -> TrajectoryDataset:
    root = Path(indir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = json.loads(manifest_path.read_text())
    records = []
    if len(manifest["trajectories"]) != manifest["num_trajectories"]:
        raise ValueError("manifest trajectory count does not match its own listing")
    for entry in manifest["trajectories"]:
        path = root / entry["file"]
        if not path.exists():
            raise FileNotFoundError(f"manifest lists missing trajectory file {path}")
        raw = np.genfromtxt(path, delimiter=",", skip_header=1)
        n, f = manifest["n"], manifest["f"]
        records.append(TrajectoryRecord(
            times=raw[:, 0].copy(),
            conditions=raw[:, 1:1 + n].copy(),
            forces=raw[:, 1 + n:1 + n + f].copy(),
            f0=np.asarray(entry["f0"], dtype=np.float64),
            condition_ids=raw[:, -1].astype(np.int64),
            direction=entry.get("direction")))
    return TrajectoryDataset(
        task=manifest["task"], variant=manifest["variant"], n=manifest["n"],
        f=manifest["f"], length=manifest["L"], dt=manifest["dt"],
        seed=manifest["seed"], noise_fraction=manifest["noise_fraction"],
        oracle=OracleParams.from_dict(manifest["oracle_params"]),
        records=records, splits=manifest.get("splits"))
