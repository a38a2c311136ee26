"""Safe human-robot collaboration: speed-and-separation velocity scaling
and voice/gesture command fusion, with a deterministic cell simulator."""

from .fusion import FusionEngine, MultimodalCommand, point_at
from .geometry import LinkWitness, min_human_robot_distance, segment_segment_distance
from .kinematics import RobotModel, directed_jacobian, forward_kinematics, link_point_jacobian
from .safety import SafetyParams, assemble_constraints, iso_speed_limit, safety_step, solve_scaling
from .scenario import load_scenario
from .sim import run
from .trajectory import GeometricPath, advance, build_path, nominal_rate

__version__ = "0.1.0"
