from .camera import Camera, orbit_camera
from .gaussians import (GaussianSet, GaussianTensors, dc_to_rgb,
                        load_gaussian_ply, load_point_ply, load_point_xyz,
                        rgb_to_dc, save_gaussian_ply, save_point_ply,
                        save_point_xyz)
from .project import (COV2D_FLOOR, NEAR_PLANE, cov_from_factors,
                      project_gaussian, quat_to_rotmat)
from .rasterize import (ALPHA_MAX, STOP_TRANSMITTANCE, TILE_SIZE,
                        RenderedImage, composite, rasterize, render,
                        render_backward)
from .sh import SH_C0, sh_basis, sh_eval
from . import image_io
