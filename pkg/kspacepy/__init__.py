from .errors import (KspaceError, ConfigError, FormatError, ShapeMismatchError,
    InfeasibleTrajectoryError, StaleCacheError, TrainingAbort, ProjectionWarning)
from .trajectory import (TrajectorySet, init_radial, init_golden_angle, init_trajectory,
    clone_frame_trajectory, save_trajectory, load_trajectory, GOLDEN_ANGLE)
from .kinematics import KinematicLimits, FeasibilityReport, difference_bounds, audit, project_feasible
from .nufft import (GriddingKernel, NufftOperator, forward_direct, forward_fast, adjoint, adjoint_fast,
    grad_wrt_coords)
from .reconmodel import ArchConfig, ReconParams, init_params, save_params, load_params
from .pipeline import PipelineState, forward_loss, backward
from .optimizer import AdamState, adam_step, LrSchedule, lr_at_epoch, TRAJECTORY_SCHEDULE, RECON_SCHEDULE
from .data import (FrameSequence, Ellipse, PhantomSpec, generate_phantom, random_phantom_spec, build_dataset,
    augment, split_dataset, save_sequence, load_sequence, load_directory, write_dataset, load_split)
from .metrics import psnr, vif, fsim, evaluate_sequence, MetricsReport
from .config import ExperimentConfig, load_config, PRESETS
from .training import FreezeSchedule, Stage, build_schedule, run, evaluate, TrainReport, REGIMES
