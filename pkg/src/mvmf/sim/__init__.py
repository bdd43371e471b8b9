"""Schedule execution against a truth field, with wake, comm and detours."""
from .analysis import (Crossing, ReportError, TardinessReport, detect_crossings, drift_progress,
                       heading_deviation, tardiness_report, trajectory_deviation)
from .drift import advect, synthesize_tracks, triangle_formation
from .log import MissionLog, local_to_lonlat
from .wake import VesselTrack, WakeConflict, WakeModel, wake_conflicts, wake_perturbation
from .world import (ABOARD, ADRIFT, LOST, RETRIEVED, CommModel, SimConfig, SimulationError, WorldState,
                    execute_schedule, make_world, run_mission, step)

__all__ = [
    "Crossing", "ReportError", "TardinessReport", "detect_crossings", "drift_progress", "heading_deviation",
    "tardiness_report", "trajectory_deviation", "advect", "synthesize_tracks", "triangle_formation",
    "MissionLog", "local_to_lonlat", "VesselTrack", "WakeConflict", "WakeModel", "wake_conflicts",
    "wake_perturbation", "ABOARD", "ADRIFT", "LOST", "RETRIEVED", "CommModel", "SimConfig", "SimulationError",
    "WorldState", "execute_schedule", "make_world", "run_mission", "step",
]
