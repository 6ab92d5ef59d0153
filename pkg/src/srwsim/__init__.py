"""2D SPH soil + rigid-block simulator for segmental retaining wall collapse."""

from .constitutive import (MaterialParams, RateInput, StressState,
                           dp_constants, invariants_of, plastic_multiplier,
                           stress_rate, update_stress, yield_value)
from .contact import (ContactMaterial, ContactParams, ContactState, detect,
                      normal_force, pair_params, shear_force)
from .errors import ConfigError, NumericalAbort, SrwsimError
from .kernel import KernelSpec, evaluate, gradient
from .particles import (NeighborGrid, ParticleSet, lattice_init, neighbors,
                        rebuild)
from .rigid import RigidBlock, accumulate, advance, make_block
from .scene import (SceneConfig, bundled_scene_path, build_world,
                    collapse_metric, load, run, runout_metric)
from .solver import (SolverControls, StabilizationParams, World,
                     apply_boundaries, compute_accelerations, density_rate,
                     sound_speed, stable_dt, step, velocity_gradient)

__version__ = "0.1.0"
