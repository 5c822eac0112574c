"""plenoptiforge: constraint-driven design of focused plenoptic cameras.

Given a multi-element main lens, the toolkit computes aperture, microlens
array and sensor parameters under focus / disparity / depth-of-field
constraints with a 2D meridional ray tracer, and validates designs with a
contrast-evaluation harness.
"""

__version__ = "0.1.0"

from .errors import (DarkPixelError, DegenerateRegionError,
                     DesignGeometryError, EdgeNotFoundError, EmptyDofError,
                     InfeasibleError, InsufficientClustersError,
                     NoConvergenceError, NoFocusError, ParseError,
                     PlenoptiforgeError, RayBlockedError, SchemaVersionError,
                     ShapeMismatchError, ValidationError)
from .optics_core import (PLANAR, CameraDesign, LensPrescription, MlaSpec,
                          Ray2D, SensorSpec, Surface, TraceReport,
                          apply_thin_microlens, aperture_fan,
                          default_bundle_size, entrance_pupil,
                          ideal_thin_lens, refract_at_surface, thin_singlet,
                          trace_main_lens_only, trace_through_camera)
from .measurements import (DEFAULT_ALPHA, DofInterval, FocusReport,
                           best_visual_focus, best_visual_from,
                           bundle_min_blur_z, camera_dof, intersect_dof,
                           measure_disparity, measure_magnification,
                           min_blur_focus, mli_lit_pixels, mli_overlap,
                           paraxial_focus, pixel_dof, visible_mli_size)
from .design_paraxial import (DesignConstraints, PrincipalPlanes,
                              effective_focal_length, principal_planes,
                              thick_lens_design, thin_lens_design)
from .design_refine import (RefineSettings, RefineStep, RefineTrace,
                            DofMatchStep, disparity_coefficient, dof_match,
                            gamma_partials, refine)
from .eval_sim import (Pattern1D, SensorImage1D, center_mli_region, contrast,
                       stripe_edge_gamma,
                       contrast_sweep, default_pattern, linewidth_sweep,
                       locate_edge_subpixel, measured_gamma, normalize_white,
                       render_pattern, white_image, write_profile_csv,
                       write_sweep_csv)
from .io_config import (DesignFile, DerivedMetrics, ExperimentSpec,
                        Provenance, build_design, bundled_lens,
                        bundled_lens_names, load_design, load_experiment_spec,
                        load_prescription, parse_design, parse_prescription,
                        resolve_lens, run_experiment, save_design,
                        serialize_design, snap_pitch)
