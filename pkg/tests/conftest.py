import copy
import sys
from pathlib import Path

import pytest

# Ensure `src/` is importable when running pytest without installing the package.
ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from blockmap.alignment import GlobalMap, align_block, form_block_inputs  # noqa: E402
from blockmap.change import run_block_update  # noqa: E402
from blockmap.config import PipelineConfig  # noqa: E402
from blockmap.semantics import ObjectRegistry, integrate_block  # noqa: E402
from blockmap.stream import SceneSpec, SyntheticProvider, SyntheticScene  # noqa: E402

INTRINSICS = {"fx": 48.0, "fy": 48.0, "cx": 32.0, "cy": 24.0, "width": 64, "height": 48}
SMALL_INTRINSICS = {"fx": 24.0, "fy": 24.0, "cx": 16.0, "cy": 12.0, "width": 32, "height": 24}
WALL = {"id": "wall", "kind": "plane", "point": [0.0, 0.0, 4.0], "normal": [0.0, 0.0, 1.0]}
# front face at z=2 covers pixels u 25..39, v 20..38 from the origin
CHAIR = {"id": "chair", "kind": "box", "label": "chair", "min": [-0.3, -0.2, 2.0], "max": [0.3, 0.6, 2.6]}


def _scene(
    n_frames=30,
    objects=None,
    camera=None,
    intrinsics=None,
    pred_scale=2.0,
    block_size=10,
    **extra,
):
    spec = {
        "intrinsics": dict(intrinsics or INTRINSICS),
        "n_frames": int(n_frames),
        "fps": 10.0,
        "block_size": int(block_size),
        "pred_scale": float(pred_scale),
        "noise": {"pred_sigma": 0.0, "sensor_sigma": 0.0},
        "camera": copy.deepcopy(camera) if camera is not None else {"keyframes": [{"frame": 0, "position": [0.0, 0.0, 0.0]}]},
        "objects": copy.deepcopy(objects) if objects is not None else [dict(WALL), dict(CHAIR)],
    }
    spec.update(extra)
    return spec


def _config(**sections):
    """Test config: small grids, in-thread runner; ``sections`` override per section."""
    obj = {
        "align": {"block_size": 10, "keyframe_count": 3, "grid_stride": 4},
        "tracker": {"grid_stride": 4},
        "runner": {"threaded": False},
    }
    for name, values in sections.items():
        obj.setdefault(name, {}).update(values)
    return PipelineConfig.from_dict(obj)


@pytest.fixture
def scene_dict():
    """Factory for synthetic scene specs (64x48 camera at the origin, wall at z=4, one chair)."""
    return _scene


@pytest.fixture
def small_intrinsics():
    return dict(SMALL_INTRINSICS)


@pytest.fixture
def chair():
    return dict(CHAIR)


@pytest.fixture
def wall():
    return dict(WALL)


@pytest.fixture
def make_config():
    return _config


def _run_blocks(spec, cfg=None, seed=0):
    """Align, track and update states block by block in memory.

    Returns ``(gmap, registry, steps)`` with one ``(BlockState, BlockTracking, events)`` per block.
    """
    cfg = cfg or _config()
    scene = SyntheticScene(SceneSpec.from_dict(spec), seed=seed)
    provider = SyntheticProvider(scene)
    gmap = GlobalMap.empty(cfg.map.voxel_size)
    registry = ObjectRegistry(voxel_size=cfg.tracker.object_voxel_size)
    steps = []
    for block in form_block_inputs(scene.iter_frames(), cfg.align.block_size, cfg.align.keyframe_count, cfg.tracker.grid_stride):
        bs = align_block(gmap, block, cfg.align, provider, smoother=cfg.smoother)
        tracking = integrate_block(gmap, bs, registry, cfg.tracker)
        events = run_block_update(registry, bs, tracking, cfg.change)
        steps.append((bs, tracking, events))
    return gmap, registry, steps


@pytest.fixture
def run_blocks():
    return _run_blocks
