"""Bimanual grasp synthesis at desk scale.

Modules: :mod:`geometry` (meshes, poses, gripper boxes, collisions),
:mod:`quality` (force closure, torque balance, dexterity), :mod:`sampler`
(antipodal ground truth), :mod:`matcher` (Hungarian matching, losses, pair
matching), :mod:`net` (numpy transformer), :mod:`metrics` (diversity and
ranking) and :mod:`cli`.
"""
from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def data_path(name: str) -> Path:
    """Path of a bundled mesh (``cube.obj``, ``bar.obj``)."""
    return Path(str(resources.files(__package__) / "data" / name))
