"""Python bindings for the flamegs reconstruction library."""

from ._flamegs import *  # noqa: F401,F403
from ._flamegs import __doc__  # noqa: F401


def desk_dataset(cameras=10, width=200, height=256, focal=300.0, components=5, seed=7,
                 samples=256, grid=50, threads=1):
    """Phantom dataset on a ring rig, returned with its reconstruction box."""
    rig_opts = RigOptions()
    rig_opts.cameras, rig_opts.width, rig_opts.height, rig_opts.focal = cameras, width, height, focal
    rig = make_rig(rig_opts)
    bounds = default_grid_for_rig(rig, grid)
    center = 0.5 * (bounds.bbox_min + bounds.bbox_max)
    spec = make_random_phantom(center, components, seed)
    return render_phantom_views(spec, rig, bounds, samples, threads), bounds
