"""Differentiable position-based fluids with localized spacetime control."""

from .adjoint import Tape, backward, forward_record
from .control import (
    ForceField,
    ParticleClassification,
    SpacetimeWindow,
    backward_trace_window,
    classify,
    project_density,
    transfer_forces,
)
from .objective import (
    EditSpec,
    GridTarget,
    ObjectiveWeights,
    Pathline,
    ParticleTarget,
    buffer_loss,
    compile_pathlines,
    force_reg_loss,
    grid_edit_loss,
    particle_edit_loss,
    total_objective,
)
from .optimizer import (
    ControlSolution,
    OptimizeConfig,
    Scene,
    minimize_integer_cmaes,
    minimize_lbfgs,
    optimize_window,
    resim_blend,
    search_temporal_window,
    simulate_scene,
)
from .simcore import (
    NeighborTable,
    ParticleState,
    SimConfig,
    SimulationDiverged,
    StepRecord,
    Trajectory,
    build_neighbors,
    compute_density,
    kernel_grad,
    kernel_w,
    predict,
    simulate,
    solve_incompressibility,
    step,
    update_velocity,
    vorticity_confinement,
)

__version__ = "0.1.0"
