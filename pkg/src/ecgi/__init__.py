"""Heart-surface potential reconstruction from body-surface observations.

Forward simulation of excitable-tissue dynamics on triangulated surfaces,
a synthetic transfer model, classical regularized inversions, and a
physiology-constrained residual network trained with a hand-rolled
automatic-differentiation tape.
"""

from .mesh import (TriMesh, Adjacency, MeshError, OffFormatError,
                   build_adjacency, icosphere, vertex_normals, load_off,
                   save_off)
from .ops import (TemporalGrid, LaplacianOperator, laplacian_matrix,
                  stencil_matrix, temporal_derivative,
                  INTERIOR_STENCIL, BOUNDARY_STENCILS)
from .apsim import (APParams, SpatioTemporalField, StimulusSpec,
                    SimulationError, reaction_terms, simulate, downsample,
                    save_field_csv, load_field_csv)
from .forward import (TransferModel, Observation, synth_transfer, observe,
                      save_transfer, load_transfer)
from .autodiff import (Tape, Var, Gradients, input_directional_derivative,
                       second_directional_derivative)
from .network import (NetworkConfig, NetworkParams, InputScaling,
                      BoundParams, init_network, network_forward,
                      layer_layout, save_checkpoint, load_checkpoint)
from .training import (TrainConfig, TrainHistory, TrainingDivergence,
                       InverseProblem, train, predict_field,
                       detect_bad_init)
from .baselines import (TikhonovConfig, StreConfig, SolverError, tikhonov,
                        stre, edge_incidence)
from .metrics import MetricsReport, evaluate
from .render import render_svg, colormap_rgb
from .cli import ExperimentConfig, load_config, run_seed, main

__version__ = "1.0.0"
