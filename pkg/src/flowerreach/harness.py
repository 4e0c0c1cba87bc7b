"""Closed-loop simulation, batch execution and reporting.

One trial runs three clocks off the physics step counter: physics (RK4 and
joint servo) every step, control (mission + MPPI) every ``substeps`` steps,
and the camera whenever its period has elapsed (latest-estimate semantics).

Randomness: MPPI noise comes from counter streams keyed by (seed, control
step, rollout); perception noise from a sequential child stream of the seed.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import ArmState, ControlInput, FullState
from .dynamics import ZERO_WRENCH, SimulationDiverged, arm_coupling_wrench, step_rk4
from .manipulator import end_effector_world, servo_step
from .mission import (MissionState, MissionStatus, TERMINAL, WorldSnapshot, lead_setpoint,
                      mission_step,
                      write_transition_log)
from .mppi import ControllerFailure, MppiController, write_diagnostics
from .perception import (corrupt_detection, fuse_estimate, localize_target, observe,
                         write_detection_trace)
from .rng import TAG_PERCEPTION, child_generator
from .scenario import Scenario

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = (
    "step", "time",
    "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz",
    "theta1", "theta2", "ee_x", "ee_y", "ee_z",
    "est_x", "est_y", "est_z", "tgt_x", "tgt_y", "tgt_z", "ee_error",
    "state", "sp_x", "sp_y", "sp_z", "sp_yaw",
    "thrust", "tau_x", "tau_y", "tau_z",
)


def fmt(x) -> str:
    return f"{float(x):.9g}"


@dataclass
class TrialResult:
    seed: int
    outcome: str
    time_to_done: float
    final_error: float
    min_error: float
    align_rms: float
    steps: int
    log_path: Optional[str] = None

    @property
    def done(self) -> bool:
        return self.outcome == "Done"


@dataclass
class BatchReport:
    trials: list
    success_rate: float
    median_time_to_done: float
    final_error_p50: float
    final_error_p90: float
    final_error_max: float

    @classmethod
    def from_trials(cls, trials: Sequence[TrialResult]) -> "BatchReport":
        if not trials:
            raise ValueError("a batch needs at least one trial")
        done = [t for t in trials if t.done]
        finals = np.array([t.final_error for t in trials])
        times = [t.time_to_done for t in done]
        return cls(
            trials=list(trials),
            success_rate=len(done) / len(trials),
            median_time_to_done=float(np.median(times)) if times else math.nan,
            final_error_p50=float(np.percentile(finals, 50)),
            final_error_p90=float(np.percentile(finals, 90)),
            final_error_max=float(finals.max()),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["trials"] = [asdict(t) for t in self.trials]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BatchReport":
        trials = [TrialResult(**t) for t in data["trials"]]
        return cls(**{**data, "trials": trials})


def _nearest_target(targets, point) -> np.ndarray:
    if point is None:
        return targets[0]
    d = [float(np.linalg.norm(t - point)) for t in targets]
    return targets[int(np.argmin(d))]


def run_trial(scenario: Scenario, seed: int, out_dir=None, duration: float | None = None,
              parallel: bool | None = None, linger: float = 0.0) -> TrialResult:
    """Simulate one mission until Done, Failed (timeout or leaving the arena) or divergence.

    After Done the vehicle keeps holding its last setpoint for ``linger``
    seconds (logged as DONE rows). With ``out_dir`` set, writes trajectory,
    transition, detection and MPPI diagnostic CSVs named by seed.
    """
    sc = scenario
    if not sc.targets:
        raise ValueError("scenario has no targets")
    mppi_cfg = sc.mppi if parallel is None else sc.mppi.__class__(**{**asdict(sc.mppi), "parallel": parallel})
    mission_cfg = sc.mission
    if duration is not None:
        mission_cfg = mission_cfg.__class__(**{**mission_cfg.__dict__, "timeout": float(duration)})
    params = sc.params
    dt_phys, substeps = sc.sim.dt_phys, sc.substeps
    dt_ctrl = dt_phys * substeps
    cam, noise = sc.camera, sc.noise
    rng = child_generator(seed, TAG_PERCEPTION)

    def coupling_of(st: FullState):
        return arm_coupling_wrench(st.arm, st.R, params) if sc.sim.coupling else ZERO_WRENCH

    state = sc.initial
    controller = MppiController(mppi_cfg, params, seed)
    controller.reset(coupling_of(state))
    status = MissionStatus.initial(state, mission_cfg)
    estimate = None
    n_cam = 0
    rows, transitions, detections = [], [], []
    errors, align_err = [], []
    outcome, time_done = None, math.nan
    max_steps = int(math.ceil(mission_cfg.timeout / dt_ctrl + 1e-9)) + 1
    linger_steps = int(round(max(linger, 0.0) / dt_ctrl))
    done_at = None

    for j in range(max_steps + linger_steps):
        t = j * dt_ctrl
        ee = end_effector_world(state, params)
        before = status.state
        status = mission_step(status, WorldSnapshot(state, ee, estimate, t), mission_cfg, params)
        if status.state != before:
            transitions.append((t, before, status.state, status.trigger))
        truth = _nearest_target(sc.targets, None if estimate is None else estimate.position_world)
        err = float(np.linalg.norm(ee.position - truth))
        errors.append(err)
        if status.state == MissionState.ALIGN:
            align_err.append(float(np.linalg.norm(state.p - (truth + mission_cfg.offset))))

        if status.state == MissionState.DONE and done_at is None:
            done_at = j
        holding = done_at is not None and j - done_at < linger_steps
        u = None
        if status.state not in TERMINAL or holding:
            try:
                lead = lead_setpoint(status.setpoint, state.p, mission_cfg.carrot)
                u = controller(state, lead, coupling_of(state))
            except ControllerFailure:
                outcome = "Diverged"
        rows.append(_row(j, t, state, ee, estimate, truth, err, status, u))
        if (status.state in TERMINAL and not holding) or outcome:
            break

        try:
            for i in range(substeps):
                n = j * substeps + i
                if n * dt_phys * sc.sim.camera_rate >= n_cam - 1e-9:
                    n_cam += 1
                    estimate, det = _sense(sc, state, estimate, rng, n * dt_phys)
                    detections.append((n * dt_phys, det))
                arm = servo_step(state.arm, status.arm_command, params.joint_rate_limit,
                                 dt_phys, params)
                state = state.replace(arm=arm)
                state = step_rk4(state, u, params, coupling_of(state), dt_phys)
        except SimulationDiverged:
            outcome = "Diverged"
            break
        if not sc.sim.inside_arena(state.p):
            log.warning("seed %d: vehicle left the arena at t=%.3f s", seed, t + dt_ctrl)
            outcome = "Failed"
            break

    if outcome is None:
        outcome = "Done" if status.state == MissionState.DONE else "Failed"
        if outcome == "Done":
            time_done = status.elapsed
    result = TrialResult(
        seed=seed, outcome=outcome, time_to_done=time_done,
        final_error=errors[-1 if done_at is None else done_at], min_error=min(errors),
        align_rms=float(np.sqrt(np.mean(np.square(align_err)))) if align_err else math.nan,
        steps=len(rows),
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"trial_{seed}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAJECTORY_COLUMNS)
            writer.writerows(rows)
        write_transition_log(out / f"transitions_{seed}.csv", transitions)
        write_detection_trace(out / f"detections_{seed}.csv", detections)
        write_diagnostics(out / f"mppi_{seed}.csv", controller.diagnostics)
        result.log_path = str(path)
    log.info("seed %d: %s after %d steps, final error %.4f m", seed, outcome, len(rows),
             result.final_error)
    return result


@dataclass
class RegulationResult:
    times: np.ndarray
    errors: np.ndarray
    diverged: bool = False

    def holds(self, threshold: float, after: float) -> bool:
        """Error stays below ``threshold`` for every sample at or after ``after``."""
        if self.diverged:
            return False
        tail = self.errors[self.times >= after - 1e-9]
        return tail.size > 0 and bool(np.all(tail < threshold))


def regulation_trial(params, mppi_cfg, seed: int, start, setpoint,
                     arm: ArmState = ArmState(), duration: float = 10.0,
                     dt_phys: float = 0.002, coupling: bool = True) -> RegulationResult:
    """Hold ``setpoint`` with MPPI from ``start`` and a fixed arm, no perception.

    ``start`` is a FullState whose arm is replaced by ``arm``. Errors are the
    vehicle position error sampled at every control step.
    """
    substeps = int(round(mppi_cfg.dt / dt_phys))
    state = start.replace(arm=arm)

    def coupling_of(st: FullState):
        return arm_coupling_wrench(st.arm, st.R, params) if coupling else ZERO_WRENCH

    controller = MppiController(mppi_cfg, params, seed)
    controller.reset(coupling_of(state))
    n = int(round(duration / mppi_cfg.dt))
    times, errors = np.empty(n + 1), np.empty(n + 1)
    for j in range(n + 1):
        times[j] = j * mppi_cfg.dt
        errors[j] = float(np.linalg.norm(state.p - setpoint.p_des))
        if j == n:
            break
        try:
            u = controller(state, setpoint, coupling_of(state))
            for _ in range(substeps):
                state = step_rk4(state, u, params, coupling_of(state), dt_phys)
        except (ControllerFailure, SimulationDiverged):
            return RegulationResult(times[:j + 1], errors[:j + 1], diverged=True)
    return RegulationResult(times, errors)


def _sense(sc: Scenario, state: FullState, estimate, rng, now: float):
    seen = observe(sc.targets, state, sc.camera)
    if seen is None:
        return estimate, None
    det = corrupt_detection(seen[1], sc.noise, rng, sc.camera)
    if det is None:
        return estimate, None
    obs = localize_target(det, sc.camera, state, stamp=now)
    return fuse_estimate(estimate, obs, sc.sim.fuse_alpha), det


def _row(j, t, state: FullState, ee, estimate, truth, err, status, u: Optional[ControlInput]):
    est = estimate.position_world if estimate is not None else (math.nan,) * 3
    controls = u.as_array() if u is not None else (math.nan,) * 4
    sp = status.setpoint
    return [j, fmt(t), *map(fmt, state.p), *map(fmt, state.v), *map(fmt, state.R.q),
            *map(fmt, state.omega), fmt(state.arm.theta1), fmt(state.arm.theta2),
            *map(fmt, ee.position), *map(fmt, est), *map(fmt, truth), fmt(err),
            status.state.name, *map(fmt, sp.p_des), fmt(sp.yaw_des), *map(fmt, controls)]


def _trial_job(args):
    scenario, seed, out_dir, duration = args
    return run_trial(scenario, seed, out_dir, duration)


def run_batch(scenario: Scenario, seeds: Sequence[int], out_dir=None, jobs: int = 1,
              duration: float | None = None) -> BatchReport:
    """Run one trial per seed and aggregate. Trials share nothing."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("run_batch needs at least one seed")
    args = [(scenario, s, out_dir, duration) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_trial_job, args))
    else:
        trials = [_trial_job(a) for a in args]
    report = BatchReport.from_trials(trials)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "batch.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return report


@dataclass
class ReportSummary:
    text: str
    skipped_rows: int
    problems: list = field(default_factory=list)
    extracts: list = field(default_factory=list)


def report(in_dir) -> ReportSummary:
    """Summary table for a batch directory plus per-trial approach extracts.

    Extract CSVs (``extracts/approach_<seed>.csv``) hold time, end-effector
    and true-target positions and their distance from the first Approach
    step onward. Malformed trajectory rows are skipped and counted.
    """
    in_dir = Path(in_dir)
    batch_path = in_dir / "batch.json"
    try:
        batch = BatchReport.from_dict(json.loads(batch_path.read_text()))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FileNotFoundError(f"no readable batch report in {in_dir}: {exc}") from exc
    extract_dir = in_dir / "extracts"
    extract_dir.mkdir(exist_ok=True)
    skipped, problems, extracts = 0, [], []
    lines = [
        f"trials: {len(batch.trials)}   success rate: {batch.success_rate:.2f}   "
        f"median time to done: {batch.median_time_to_done:.2f} s",
        f"final error p50/p90/max: {batch.final_error_p50:.4f} / "
        f"{batch.final_error_p90:.4f} / {batch.final_error_max:.4f} m",
        "",
        f"{'seed':>6} {'outcome':>9} {'t_done[s]':>10} {'final[m]':>9} {'min[m]':>8} {'align_rms[m]':>12}",
    ]
    for t in batch.trials:
        lines.append(f"{t.seed:>6} {t.outcome:>9} {t.time_to_done:>10.2f} {t.final_error:>9.4f} "
                     f"{t.min_error:>8.4f} {t.align_rms:>12.4f}")
        traj = in_dir / f"trial_{t.seed}.csv"
        try:
            rows, bad = _read_trajectory(traj)
        except (OSError, ValueError) as exc:
            problems.append(f"{traj.name}: {exc}")
            continue
        skipped += bad
        path = extract_dir / f"approach_{t.seed}.csv"
        _write_extract(path, rows)
        extracts.append(path)
    if skipped:
        lines.append(f"warning: skipped {skipped} malformed trajectory rows")
    lines.extend(f"warning: {p}" for p in problems)
    return ReportSummary("\n".join(lines), skipped, problems, extracts)


def _read_trajectory(path: Path):
    rows, bad = [], 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRAJECTORY_COLUMNS:
            raise ValueError("unexpected header")
        idx = {c: i for i, c in enumerate(header)}
        for rec in reader:
            if len(rec) != len(header):
                bad += 1
                continue
            try:
                rows.append({
                    "time": float(rec[idx["time"]]),
                    "state": rec[idx["state"]],
                    "ee": [float(rec[idx[c]]) for c in ("ee_x", "ee_y", "ee_z")],
                    "tgt": [float(rec[idx[c]]) for c in ("tgt_x", "tgt_y", "tgt_z")],
                })
            except ValueError:
                bad += 1
                continue
            if rows[-1]["state"] not in MissionState.__members__:
                rows.pop()
                bad += 1
    return rows, bad


def _write_extract(path: Path, rows) -> None:
    start = next((i for i, r in enumerate(rows) if r["state"] == "APPROACH"), len(rows))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "ee_x", "ee_y", "ee_z", "tgt_x", "tgt_y", "tgt_z", "error", "state"])
        for r in rows[start:]:
            e = math.dist(r["ee"], r["tgt"])
            writer.writerow([fmt(r["time"]), *map(fmt, r["ee"]), *map(fmt, r["tgt"]), fmt(e), r["state"]])
