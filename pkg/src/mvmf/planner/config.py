from __future__ import annotations

import math
from dataclasses import asdict, dataclass


@dataclass
class PlannerConfig:
    # coverage selection (single-tree UCT)
    mcts_iterations: int = 5000
    exploration: float = math.sqrt(2)
    rollout_depth: int | None = None
    count_penalty: float = 0.01  # per action, in units of one POI
    seed: int = 0
    include_exited: bool = False
    # Dec-MCTS scheduling
    decmcts_rounds: int = 10
    decmcts_iterations: int = 1000
    plan_distribution_size: int = 5
    softmax_temperature: float = 0.05
    tree_discount: float = 0.9
    unattended_penalty: float = 0.5  # s of cost per s a float waits past its pick deadline
    # wake-safe transits
    wake_avoidance: bool = False
    wake_radius: float = 15.0

    def __post_init__(self):
        if self.mcts_iterations <= 0 or self.decmcts_iterations <= 0 or self.decmcts_rounds <= 0:
            raise ValueError("iteration counts must be positive")
        if self.unattended_penalty < 0:
            raise ValueError("penalty weight must be non-negative")
        if self.plan_distribution_size < 1:
            raise ValueError("plan distribution size must be at least 1")
        if self.wake_radius < 0:
            raise ValueError("wake radius must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)
