"""eyesynth: physically-based near-eye image renderer and dataset engine.

Renders annotated synthetic eye images (pixel-exact segmentation masks and
geometric ground truth) from a parametric eye model with an aspherical
cornea, tear film, pupil aperture, retroreflective retina, deformable
eyelids, HDR environment lighting and reflective eyewear.
"""

from .eye import (EyeParams, SemanticClass, build_eye, classify_surface,
                  eyelid_closure_for_gaze, iris_uv, retroreflect_weight)
from .metrics import IoUReport, dataset_miou, iou_per_class, miou
from .optics import (InterfaceHit, Ray, SphereSurface, SpheroidSurface,
                     beckmann_density, fresnel_dielectric, intersect_sphere,
                     intersect_spheroid, refract)
from .recipes import (DatasetRecipe, SampledImageSpec, generate_dataset,
                      standard_recipe, plan_dataset, stratified_split)
from .render import (MetadataRecord, RenderConfig, RenderOutput,
                     compute_metadata, render, render_masks,
                     render_tiles_parallel)
from .rng import Rng
from .scene import (CameraModel, EmitterLayout, EnvironmentState,
                    EyeglassesConfig, Scene, env_radiance,
                    generate_camera_ray, intersect_scene,
                    sample_env_intensity_bin, sample_pose_s_general,
                    sample_pose_s_nvgaze, sample_pose_s_openeds)

__version__ = "0.1.0"
