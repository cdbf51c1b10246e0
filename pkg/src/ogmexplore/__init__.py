"""Frontier-exploration simulator and information metrics over 2D
occupancy grids."""

from .world import WorldGrid, WorldGenParams, generate_world, load_world, save_world
from .sensing import Pose2D, SensorParams, Scan, BeamTrace, trace_beam, simulate_scan
from .mapping import (OccupancyGrid, InverseSensorModel, CropInput, PredictionMap,
                      update_map, extract_crop, compose_prediction_map)
from .frontier import Frontier, Viewpoint, detect_frontiers, sample_viewpoints, best_viewpoint
from .prediction import (PredictionEnsemble, InpaintPredictor, BridgePredictor,
                         predict, ensemble_mean, ensemble_variance, compose_variance_map)
from .information import (FsmiParams, BeamOdds, cell_gain, hit_probabilities,
                          fsmi_beam, fsmi_beam_oracle, entropy_mi_oracle, fsmi,
                          volumetric_gain, variance_info, info_nearest)
from .planning import (UtilityParams, ExplorationConfig, TrialResult, astar_cost,
                       utility, select_best_frontier, run_exploration)
from .harness import ExperimentConfig, SummaryTable, run_experiment, render_curves

__version__ = "0.1.0"
