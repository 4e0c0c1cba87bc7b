"""Simulator and controllers for a quadrotor carrying a two-link arm that
positions its tool on a flower detected by an RGB-D camera."""
from .core import (ArmState, ControlInput, FullState, ModelParams, Rotation, ValidationError,
                   integrate_rotation, rotate)
from .dynamics import (SimulationDiverged, Wrench, arm_coupling_wrench, hover_thrust, step_rk4,
                       uav_derivatives)
from .harness import BatchReport, TrialResult, regulation_trial, report, run_batch, run_trial
from .manipulator import (ArmCommand, EndEffectorPose, UnreachableError, arm_fk, arm_ik,
                          end_effector_world, servo_step)
from .mission import (MissionConfig, MissionState, MissionStatus, StaleTargetError, WorldSnapshot,
                      alignment_check, desired_standoff, mission_step)
from .mppi import (ControllerFailure, ControlSequence, MppiConfig, MppiController, Setpoint,
                   mppi_optimize, mppi_step, rollout_cost, stage_cost)
from .perception import (CameraModel, Detection, NoiseParams, TargetEstimate, corrupt_detection,
                         fuse_estimate, localize_target, project_target)
from .scenario import Scenario, ScenarioParseError, load_scenario, save_scenario

__version__ = "0.1.0"
