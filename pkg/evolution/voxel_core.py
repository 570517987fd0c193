"""
Voxel lattices and the repair pipeline that turns a CPPN hull into a building.

Lattices are numpy arrays indexed (x, y, z) with y vertical:
    boolean hull      -> dtype bool
    material lattice  -> dtype uint8 holding Material ids
    one-hot lattice   -> float32, channels first (5, x, y, z)
"""

from enum import IntEnum
from scipy import ndimage

import base64
import logging
import numpy as np

from .errors import Error

logger = logging.getLogger(__name__)

DEFAULT_DIMS = (20, 20, 20)

# 6-face adjacency
FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)

# (dx, dz) for the four entrance rotations
HORIZONTAL_DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class Material(IntEnum):
    EXTERIOR_AIR = 0
    INTERIOR_AIR = 1
    FLOOR = 2
    WALL = 3
    ROOF = 4


MATERIAL_NAMES = ['exterior_air', 'interior_air', 'floor', 'wall', 'roof']
NUM_MATERIALS = len(Material)
SOLID_MATERIALS = (Material.FLOOR, Material.WALL, Material.ROOF)


class LatticeError(Error):
    """
    Exception raised on malformed lattices.
    Attributes:
        message: explanation of the error
        field: offending field of a lattice record, if any
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


def empty_hull(dims=DEFAULT_DIMS):
    return np.zeros(dims, dtype=bool)


def flood_fill_filter(hull):
    """
    Drops every filled voxel that is not face-connected to a filled voxel at y=0
    """
    hull = np.asarray(hull, dtype=bool)
    labels, count = ndimage.label(hull, structure=FACE_CONNECTIVITY)
    if count == 0:
        return hull.copy()

    grounded = np.unique(labels[:, 0, :])
    grounded = grounded[grounded != 0]
    return np.isin(labels, grounded)


def largest_component(hull):
    """
    Keeps the face-connected component with the most voxels.
    ndimage.label numbers components in (x, y, z) raster order, so the first
    maximum belongs to the component with the lexicographically lowest voxel.
    """
    hull = np.asarray(hull, dtype=bool)
    labels, count = ndimage.label(hull, structure=FACE_CONNECTIVITY)
    if count <= 1:
        return hull.copy()

    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(np.argmax(sizes))


def exterior_reachable(empty):
    """
    Marks empty voxels reachable from the lattice boundary through empty voxels
    """
    labels, count = ndimage.label(empty, structure=FACE_CONNECTIVITY)
    if count == 0:
        return np.zeros(empty.shape, dtype=bool)

    boundary = np.concatenate([
        labels[0, :, :].ravel(), labels[-1, :, :].ravel(),
        labels[:, 0, :].ravel(), labels[:, -1, :].ravel(),
        labels[:, :, 0].ravel(), labels[:, :, -1].ravel(),
    ])
    boundary = np.unique(boundary)
    boundary = boundary[boundary != 0]
    return np.isin(labels, boundary)


def assign_materials(hull):
    """
    Rule-based material assignment, applied in order:
    floor at y=0, roof under empty space (or the top boundary), interior air for
    enclosed empty voxels, exterior air for the rest of the empty voxels and
    wall for the rest of the filled voxels.
    """
    filled = np.asarray(hull, dtype=bool)
    empty = ~filled

    floor = np.zeros_like(filled)
    floor[:, 0, :] = filled[:, 0, :]

    empty_above = np.ones_like(filled)
    empty_above[:, :-1, :] = empty[:, 1:, :]
    roof = filled & ~floor & empty_above

    interior = empty & ~exterior_reachable(empty)

    lattice = np.full(filled.shape, Material.WALL, dtype=np.uint8)
    lattice[empty] = Material.EXTERIOR_AIR
    lattice[interior] = Material.INTERIOR_AIR
    lattice[roof] = Material.ROOF
    lattice[floor] = Material.FLOOR
    return lattice


def check_entrance(lattice):
    """
    True if some floor voxel has interior air directly above it and a wall column
    three voxels high beside it in one of the four horizontal directions
    """
    lattice = np.asarray(lattice)
    size_x, size_y, size_z = lattice.shape

    for x, y, z in np.argwhere(lattice == Material.FLOOR):
        if y + 3 >= size_y:
            continue
        if lattice[x, y + 1, z] != Material.INTERIOR_AIR:
            continue
        for dx, dz in HORIZONTAL_DIRECTIONS:
            nx, nz = x + dx, z + dz
            if not (0 <= nx < size_x and 0 <= nz < size_z):
                continue
            if np.all(lattice[nx, y + 1:y + 4, nz] == Material.WALL):
                return True

    return False


def repair_pipeline(hull):
    """
    Grounds, de-fragments and materialises a hull.
    Returns (material lattice, feasible)
    """
    grounded = flood_fill_filter(hull)
    main = largest_component(grounded)
    lattice = assign_materials(main)
    return lattice, check_entrance(lattice)


def solid_mask(lattice):
    return np.isin(lattice, SOLID_MATERIALS)


def structural_stats(lattice):
    """
    Bounding box, mirror symmetry, overhang instability and exposed surface of
    the solid (floor, wall, roof) voxels.

    symmetry     best of the x and z mirror planes: solid voxels whose mirror
                 image is also solid, over all solid voxels
    instability  solid voxels above ground with nothing solid below them, over
                 all solid voxels
    surface_area solid faces touching air or the lattice boundary
    """
    solid = solid_mask(np.asarray(lattice))
    count = int(solid.sum())
    if count == 0:
        return {
            'bounding_box': (0, 0, 0),
            'symmetry': 0.0,
            'instability': 0.0,
            'surface_area': 0,
        }

    coords = np.argwhere(solid)
    extent = coords.max(axis=0) - coords.min(axis=0) + 1
    bounding_box = tuple(int(v) for v in extent)

    mirror_x = int((solid & solid[::-1, :, :]).sum())
    mirror_z = int((solid & solid[:, :, ::-1]).sum())
    symmetry = max(mirror_x, mirror_z) / count

    unsupported = solid[:, 1:, :] & ~solid[:, :-1, :]
    instability = int(unsupported.sum()) / count

    padded = np.pad(solid, 1, mode='constant', constant_values=False)
    surface_area = 0
    for axis in range(3):
        # every solid/non-solid transition along an axis is one exposed face
        surface_area += int(np.count_nonzero(np.diff(padded.astype(np.int8), axis=axis)))

    return {
        'bounding_box': bounding_box,
        'symmetry': float(symmetry),
        'instability': float(instability),
        'surface_area': surface_area,
    }


def material_counts(lattice):
    counts = np.bincount(np.asarray(lattice).ravel(), minlength=NUM_MATERIALS)
    return {name: int(counts[m]) for m, name in zip(Material, MATERIAL_NAMES)}


def to_onehot(lattice):
    lattice = np.asarray(lattice)
    if lattice.ndim != 3:
        raise LatticeError('expected a 3D material lattice, got shape {}'.format(lattice.shape))
    if lattice.size and lattice.max() >= NUM_MATERIALS:
        raise LatticeError('material id {} out of range'.format(int(lattice.max())))
    return np.ascontiguousarray(np.eye(NUM_MATERIALS, dtype=np.float32)[lattice].transpose(3, 0, 1, 2))


def from_onehot(onehot):
    """
    Per-voxel argmax over the material channels; ties go to the lowest id
    """
    onehot = np.asarray(onehot)
    if onehot.ndim != 4 or onehot.shape[0] != NUM_MATERIALS:
        raise LatticeError('expected ({}, x, y, z) channels, got shape {}'.format(NUM_MATERIALS, onehot.shape))
    return np.argmax(onehot, axis=0).astype(np.uint8)


def lattice_to_json(lattice):
    """
    Cells are row-major material id bytes with x fastest, then z, then y
    """
    lattice = np.asarray(lattice, dtype=np.uint8)
    cells = np.ascontiguousarray(lattice.transpose(1, 2, 0)).tobytes()
    return {
        'dims': [int(d) for d in lattice.shape],
        'materials': list(MATERIAL_NAMES),
        'cells': base64.b64encode(cells).decode('ascii'),
    }


def lattice_from_json(record):
    if not isinstance(record, dict):
        raise LatticeError('lattice record must be an object')

    dims = record.get('dims')
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(d, int) and d > 0 for d in dims)):
        raise LatticeError('dims must be three positive integers', field='dims')

    if record.get('materials') != MATERIAL_NAMES:
        raise LatticeError('materials must be {}'.format(MATERIAL_NAMES), field='materials')

    try:
        cells = base64.b64decode(record.get('cells', ''), validate=True)
    except (TypeError, ValueError):
        raise LatticeError('cells is not valid base64', field='cells')

    size_x, size_y, size_z = dims
    if len(cells) != size_x * size_y * size_z:
        raise LatticeError('cells holds {} bytes, dims need {}'.format(len(cells), size_x * size_y * size_z),
                           field='cells')

    flat = np.frombuffer(cells, dtype=np.uint8)
    if flat.size and flat.max() >= NUM_MATERIALS:
        raise LatticeError('material id {} out of range'.format(int(flat.max())), field='cells')

    return flat.reshape(size_y, size_z, size_x).transpose(2, 0, 1).copy()


def lattice_to_csv_rows(lattice):
    """
    x,y,z,material rows for every voxel that is not exterior air
    """
    lattice = np.asarray(lattice)
    rows = []
    for x, y, z in np.argwhere(lattice != Material.EXTERIOR_AIR):
        rows.append((int(x), int(y), int(z), MATERIAL_NAMES[lattice[x, y, z]]))
    return rows


def random_cuboid_hull(dims, rng, min_size=4, max_size=18):
    """
    A one-voxel-thick cuboid shell with sides Uniform{min_size..max_size},
    standing on y=0, with an empty core.
    """
    hull = empty_hull(dims)
    w, h, d = [int(rng.integers(min_size, min(max_size, n) + 1)) for n in dims]
    x0 = int(rng.integers(0, dims[0] - w + 1))
    z0 = int(rng.integers(0, dims[2] - d + 1))
    hull[x0:x0 + w, 0:h, z0:z0 + d] = True
    hull[x0 + 1:x0 + w - 1, 1:h - 1, z0 + 1:z0 + d - 1] = False
    return hull


def lattice_key(lattice):
    """
    Hashable identity of a material lattice (exact voxel equality)
    """
    lattice = np.asarray(lattice, dtype=np.uint8)
    return lattice.shape, lattice.tobytes()
