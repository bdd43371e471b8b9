"""Two-level planner: coverage selection, then Dec-MCTS allocation."""
from .actions import POI, CandidateAction, covered_pois, make_action, sample_actions
from .config import PlannerConfig
from .decmcts import schedule_decmcts
from .schedule import (DROP, PICK, CostModel, InfeasibleError, InstanceTooLargeError, Schedule, ScheduledEvent,
                       Vessel, build_schedule, exhaustive_schedule, makespan, time_plan, validate_schedule)
from .selection import coverage, greedy_cover, select_actions_mcts
from .wake import NoClearPathError, TransitPlan, plan_wake_safe_transits, shortest_clear_path

__all__ = [
    "POI", "CandidateAction", "covered_pois", "make_action", "sample_actions", "PlannerConfig",
    "schedule_decmcts", "DROP", "PICK", "CostModel", "InfeasibleError", "InstanceTooLargeError", "Schedule",
    "ScheduledEvent", "Vessel", "build_schedule", "exhaustive_schedule", "makespan", "time_plan",
    "validate_schedule", "coverage", "greedy_cover", "select_actions_mcts", "NoClearPathError", "TransitPlan",
    "plan_wake_safe_transits", "shortest_clear_path",
]
