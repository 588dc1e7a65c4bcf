"""Skeleton definition, loading, and forward kinematics.

The skeleton is a fixed joint hierarchy: a pelvis root followed by 51
rotated joints (21 body, 15 left-hand, 15 right-hand) in the same order
as the motion feature layout. Fingertips are end sites: leaf offsets
rigidly attached to the last finger joint, positioned from its world
transform but carrying no rotation of their own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import MissingAnchorJoints, ShapeMismatch

N_BODY = 21
N_HAND = 15
N_ROTATED = N_BODY + 2 * N_HAND  # 51 rotated joints, pelvis excluded
N_JOINTS = N_ROTATED + 1  # plus the pelvis root


@dataclass(frozen=True)
class Skeleton:
    """Joint hierarchy with rest-pose bone offsets (meters).

    joints are topologically ordered: parents[i] < i, parents[0] == -1.
    anchors maps semantic roles (frog_pip, frog_dip, left_fingertips,
    feet, wrists) to joint or end-site names.
    """

    names: tuple[str, ...]
    parents: np.ndarray  # (N_JOINTS,) int
    offsets: np.ndarray  # (N_JOINTS, 3) float64
    end_site_names: tuple[str, ...]
    end_site_parents: np.ndarray  # (E,) int
    end_site_offsets: np.ndarray  # (E, 3)
    anchors: dict[str, tuple[str, ...]]
    root_position: np.ndarray  # (3,)
    root_rotation: np.ndarray  # (3, 3)
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})
        if len(self.names) != N_JOINTS:
            raise ShapeMismatch(f"skeleton must have {N_JOINTS} joints, got {len(self.names)}")
        if self.parents[0] != -1:
            raise ShapeMismatch("joint 0 must be the root (parent -1)")
        for i in range(1, len(self.names)):
            if not (0 <= self.parents[i] < i):
                raise ShapeMismatch(f"joint {i} is not topologically ordered")

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise MissingAnchorJoints(f"skeleton has no joint named {name!r}") from None

    def end_site_index(self, name: str) -> int:
        try:
            return self.end_site_names.index(name)
        except ValueError:
            raise MissingAnchorJoints(f"skeleton has no end site named {name!r}") from None

    def anchor_joints(self, role: str) -> list[int]:
        if role not in self.anchors:
            raise MissingAnchorJoints(f"skeleton defines no anchor role {role!r}")
        return [self.index(n) for n in self.anchors[role]]

    def anchor_end_sites(self, role: str) -> list[int]:
        if role not in self.anchors:
            raise MissingAnchorJoints(f"skeleton defines no anchor role {role!r}")
        return [self.end_site_index(n) for n in self.anchors[role]]

    @property
    def root_pose(self) -> tuple[np.ndarray, np.ndarray]:
        return self.root_position, self.root_rotation

    def rest_positions(self) -> np.ndarray:
        """World joint positions with all rotations at identity."""
        eye = np.broadcast_to(np.eye(3), (1, N_ROTATED, 3, 3))
        return fk_world(eye, self)[0][0]


def fk_world(
    rot: np.ndarray,
    skeleton: Skeleton,
    root_pose: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward kinematics over a batch of frames.

    rot: (F, 51, 3, 3) local rotations of the rotated joints, in feature
    order (joint i of the skeleton is rot[:, i-1]).
    Returns (positions (F, 52, 3), world rotations (F, 52, 3, 3)). The
    position of joint i is its parent's position plus the parent's world
    rotation applied to the rest offset; the root sits at root_pose.
    """
    rot = np.asarray(rot, dtype=np.float64)
    if rot.ndim != 4 or rot.shape[1:] != (N_ROTATED, 3, 3):
        raise ShapeMismatch(f"expected (F, {N_ROTATED}, 3, 3) rotations, got {rot.shape}")
    n = rot.shape[0]
    if root_pose is None:
        root_pose = skeleton.root_pose
    root_t, root_r = root_pose

    pos = np.empty((n, N_JOINTS, 3))
    world = np.empty((n, N_JOINTS, 3, 3))
    pos[:, 0] = root_t
    world[:, 0] = root_r
    for i in range(1, N_JOINTS):
        p = skeleton.parents[i]
        pos[:, i] = pos[:, p] + np.einsum("fij,j->fi", world[:, p], skeleton.offsets[i])
        world[:, i] = world[:, p] @ rot[:, i - 1]
    return pos, world


def forward_kinematics(
    rot: np.ndarray,
    skeleton: Skeleton,
    root_pose: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Joint positions (F, 52, 3) for local rotations (F, 51, 3, 3)."""
    return fk_world(rot, skeleton, root_pose)[0]


def end_site_positions(pos: np.ndarray, world: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Positions (F, E, 3) of all end sites given FK output."""
    parents = skeleton.end_site_parents
    return pos[:, parents] + np.einsum("feij,ej->fei", world[:, parents], skeleton.end_site_offsets)


def load_skeleton(path: str | Path) -> Skeleton:
    """Read a skeleton JSON file (fields: joints, end_sites, anchors, root_pose)."""
    with open(path, "r", encoding="utf-8") as fh:
        return skeleton_from_dict(json.load(fh))


def skeleton_from_dict(doc: dict) -> Skeleton:
    names = [j["name"] for j in doc["joints"]]
    order = {n: i for i, n in enumerate(names)}
    parents = np.array(
        [-1 if j["parent"] is None else order[j["parent"]] for j in doc["joints"]], dtype=np.int64
    )
    offsets = np.array([j["offset"] for j in doc["joints"]], dtype=np.float64)
    es = doc.get("end_sites", [])
    root = doc.get("root_pose", {})
    return Skeleton(
        names=tuple(names),
        parents=parents,
        offsets=offsets,
        end_site_names=tuple(e["name"] for e in es),
        end_site_parents=np.array([order[e["parent"]] for e in es], dtype=np.int64),
        end_site_offsets=np.array([e["offset"] for e in es], dtype=np.float64).reshape(len(es), 3),
        anchors={k: tuple(v) for k, v in doc.get("anchors", {}).items()},
        root_position=np.array(root.get("position", [0.0, 0.0, 0.0]), dtype=np.float64),
        root_rotation=np.array(root.get("rotation", np.eye(3).tolist()), dtype=np.float64),
    )


def default_skeleton() -> Skeleton:
    """The skeleton shipped with the package (data/skeleton.json)."""
    text = resources.files("elgar").joinpath("data/skeleton.json").read_text(encoding="utf-8")
    return skeleton_from_dict(json.loads(text))
