"""
Scenarios Module.
Named synthetic study designs: a desk-size recovery check per model kind, a
sparse design for partial pooling and a run at production-data scale.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional

from simulation.engine import SyntheticWellGenerator
from src.config import ModelKind


@dataclass(frozen=True)
class ScenarioDefinition:
    """
    Defines the size, seed and fixed truths of a synthetic study.
    """
    name: str
    kind: ModelKind
    n_blocks: int
    n_times: int
    n_wells: int
    seed: int
    description: str = ""
    truth_params: Dict[str, float] = field(default_factory=dict)
    cell_concentration: float = 0.5

    def generator(self, seed: Optional[int] = None) -> SyntheticWellGenerator:
        return SyntheticWellGenerator(
            self.kind, self.n_blocks, self.n_times, self.n_wells,
            seed=self.seed if seed is None else seed,
            cell_concentration=self.cell_concentration,
        )

    def generate(self, seed: Optional[int] = None):
        return self.generator(seed).generate(self.truth_params or None)


SCENARIOS = {
    "recovery_spatial": ScenarioDefinition(
        "recovery_spatial", ModelKind.A, n_blocks=40, n_times=1, n_wells=800, seed=101,
        description="Spatial model, 40 blocks, one period",
        truth_params={"sigma_y": 0.5},
    ),
    "recovery_spatiotemporal": ScenarioDefinition(
        "recovery_spatiotemporal", ModelKind.B, n_blocks=20, n_times=6, n_wells=1000, seed=2015,
        description="Spatio-temporal model at desk scale",
        truth_params={"sigma_y": 0.5},
    ),
    "recovery_expanded": ScenarioDefinition(
        "recovery_expanded", ModelKind.C, n_blocks=20, n_times=6, n_wells=1000, seed=2016,
        description="Water/sand expanded model at desk scale",
        truth_params={"sigma_y": 0.5},
    ),
    "sparse_cells": ScenarioDefinition(
        "sparse_cells", ModelKind.B, n_blocks=30, n_times=6, n_wells=400, seed=7,
        description="Many cells with one or two wells; partial pooling should beat raw averages",
        truth_params={"sigma_y": 0.8},
        cell_concentration=0.3,
    ),
    "production_scale": ScenarioDefinition(
        "production_scale", ModelKind.B, n_blocks=415, n_times=10, n_wells=3848, seed=2024,
        description="Size of the 2015-2024 horizontal well set",
        truth_params={"sigma_y": 0.5},
    ),
}
