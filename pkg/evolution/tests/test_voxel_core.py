from collections import deque
from django.test import SimpleTestCase

from ..voxel_core import (
    Material, LatticeError, NUM_MATERIALS, assign_materials, check_entrance, empty_hull, flood_fill_filter,
    from_onehot, largest_component, lattice_from_json, lattice_key, lattice_to_csv_rows, lattice_to_json,
    material_counts, random_cuboid_hull, repair_pipeline, structural_stats, to_onehot,
)

import base64
import logging
import numpy as np

NEIGHBOURS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def hollow_box(dims, size, origin=(0, 0, 0)):
    """
    One-voxel-thick closed shell of the given (w, h, d) size
    """
    hull = empty_hull(dims)
    (x0, y0, z0), (w, h, d) = origin, size
    hull[x0:x0 + w, y0:y0 + h, z0:z0 + d] = True
    hull[x0 + 1:x0 + w - 1, y0 + 1:y0 + h - 1, z0 + 1:z0 + d - 1] = False
    return hull


def bfs(mask, starts):
    """
    Voxels of `mask` reachable from `starts` through face neighbours
    """
    seen = np.zeros(mask.shape, dtype=bool)
    queue = deque()
    for start in starts:
        if mask[start] and not seen[start]:
            seen[start] = True
            queue.append(start)
    while queue:
        x, y, z = queue.popleft()
        for dx, dy, dz in NEIGHBOURS:
            n = (x + dx, y + dy, z + dz)
            if all(0 <= c < s for c, s in zip(n, mask.shape)) and mask[n] and not seen[n]:
                seen[n] = True
                queue.append(n)
    return seen


def union_find_components(mask):
    """
    Face-connected components of `mask` as lists of voxels, each list sorted
    and the lists ordered by their first voxel
    """
    parent = {tuple(p): tuple(p) for p in np.argwhere(mask)}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for v in list(parent):
        for dx, dy, dz in NEIGHBOURS[::2]:
            n = (v[0] + dx, v[1] + dy, v[2] + dz)
            if n in parent:
                a, b = find(v), find(n)
                if a != b:
                    parent[max(a, b)] = min(a, b)

    groups = {}
    for v in parent:
        groups.setdefault(find(v), []).append(v)
    return sorted(sorted(g) for g in groups.values())


def mask_of(voxels, shape):
    mask = np.zeros(shape, dtype=bool)
    for v in voxels:
        mask[v] = True
    return mask


def brute_force_surface(solid):
    faces = 0
    for x, y, z in np.argwhere(solid):
        for dx, dy, dz in NEIGHBOURS:
            n = (x + dx, y + dy, z + dz)
            if not all(0 <= c < s for c, s in zip(n, solid.shape)) or not solid[n]:
                faces += 1
    return faces


class RepairTests(SimpleTestCase):

    def setUp(self):
        logging.disable(logging.CRITICAL)

    def tearDown(self):
        logging.disable(logging.NOTSET)

    # Test grounding of single voxels
    def test_flood_fill_single_voxel(self):
        hull = empty_hull((10, 12, 10))

        # A floor voxel floods itself
        hull[5, 0, 5] = True
        self.assertTrue(np.array_equal(flood_fill_filter(hull), hull))

        # A floating voxel is dropped
        floating = empty_hull((10, 12, 10))
        floating[5, 10, 5] = True
        self.assertFalse(flood_fill_filter(floating).any())

    # Test grounding against a breadth-first search from y=0
    def test_flood_fill_random(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            hull = rng.random((8, 8, 8)) < 0.45
            starts = [tuple(p) for p in np.argwhere(hull[:, 0:1, :])]
            expected = bfs(hull, starts)
            self.assertTrue(np.array_equal(flood_fill_filter(hull), expected))

    # Test largest component selection
    def test_largest_component(self):
        hull = empty_hull((12, 12, 12))
        hull[0:10, 0, 0] = True
        hull[0:3, 0, 5] = True

        kept = largest_component(hull)
        self.assertEqual(int(kept.sum()), 10)
        self.assertTrue(kept[0:10, 0, 0].all())
        self.assertFalse(kept[0:3, 0, 5].any())

        # Empty stays empty
        self.assertFalse(largest_component(empty_hull((4, 4, 4))).any())

    # Test largest component against a breadth-first search
    def test_largest_component_random(self):
        rng = np.random.default_rng(3)
        hull = rng.random((8, 8, 8)) < 0.3
        kept = largest_component(hull)
        start = tuple(np.argwhere(kept)[0])
        self.assertTrue(np.array_equal(bfs(hull, [start]), kept))

        # No other component is bigger
        remaining = hull & ~kept
        while remaining.any():
            component = bfs(remaining, [tuple(np.argwhere(remaining)[0])])
            self.assertLessEqual(int(component.sum()), int(kept.sum()))
            remaining &= ~component

    # Test equal-size components keep the one that comes first in raster order
    def test_largest_component_tie(self):
        hull = empty_hull((6, 6, 6))
        hull[3, 0, 0:3] = True
        hull[0, 4, 2:5] = True
        kept = largest_component(hull)
        self.assertTrue(kept[0, 4, 2:5].all())
        self.assertEqual(int(kept.sum()), 3)

        # The first voxel decides, not where the component extends
        hull = empty_hull((6, 6, 6))
        hull[1, 0:2, 5] = True
        hull[1, 2, 0] = True
        hull[1, 3, 0] = True
        kept = largest_component(hull)
        self.assertTrue(kept[1, 0:2, 5].all())
        self.assertFalse(kept[1, 2:4, 0].any())

    # Test the repair steps against union-find and boundary searches on 1000 random lattices
    def test_repair_oracle(self):
        rng = np.random.default_rng(2024)
        for trial in range(1000):
            hull = rng.random((8, 8, 8)) < rng.uniform(0.2, 0.7)
            components = union_find_components(hull)

            grounded = mask_of([v for c in components if any(y == 0 for _, y, _ in c) for v in c], hull.shape)
            filtered = flood_fill_filter(hull)
            self.assertTrue(np.array_equal(filtered, grounded), trial)
            self.assertTrue(np.array_equal(flood_fill_filter(filtered), filtered), trial)

            # The first of the biggest, components being in raster order of their first voxel
            survivors = union_find_components(filtered)
            biggest = max(survivors, key=len) if survivors else []
            main = largest_component(filtered)
            self.assertTrue(np.array_equal(main, mask_of(biggest, hull.shape)), trial)

            lattice, _ = repair_pipeline(hull)
            empty = ~main
            boundary = [tuple(p) for p in np.argwhere(empty)
                        if any(c in (0, s - 1) for c, s in zip(p, empty.shape))]
            self.assertTrue(np.array_equal(lattice == Material.INTERIOR_AIR, empty & ~bfs(empty, boundary)), trial)

            # Repair only ever removes voxels
            solid = np.isin(lattice, (Material.FLOOR, Material.WALL, Material.ROOF))
            self.assertFalse((solid & ~hull).any(), trial)

    # Test materials of a solid cube
    def test_assign_materials_solid_cube(self):
        hull = empty_hull((6, 6, 6))
        hull[0:3, 0:3, 0:3] = True
        lattice = assign_materials(hull)

        self.assertTrue((lattice[0:3, 0, 0:3] == Material.FLOOR).all())
        self.assertTrue((lattice[0:3, 2, 0:3] == Material.ROOF).all())
        self.assertTrue((lattice[0:3, 1, 0:3] == Material.WALL).all())
        self.assertEqual(lattice[1, 1, 1], Material.WALL)
        self.assertFalse((lattice == Material.INTERIOR_AIR).any())

    # Test interior air of a hollow box
    def test_assign_materials_hollow_box(self):
        lattice = assign_materials(hollow_box((8, 8, 8), (5, 4, 5)))
        self.assertTrue((lattice[1:4, 1:3, 1:4] == Material.INTERIOR_AIR).all())
        self.assertEqual(int((lattice == Material.INTERIOR_AIR).sum()), 3 * 2 * 3)

    # Test interior air against a breadth-first search from the boundary
    def test_assign_materials_random(self):
        rng = np.random.default_rng(11)
        hull = largest_component(flood_fill_filter(rng.random((8, 8, 8)) < 0.6))
        lattice = assign_materials(hull)

        empty = ~hull
        boundary = [tuple(p) for p in np.argwhere(empty)
                    if any(c in (0, s - 1) for c, s in zip(p, empty.shape))]
        reachable = bfs(empty, boundary)
        self.assertTrue(np.array_equal(lattice == Material.INTERIOR_AIR, empty & ~reachable))

    # Test the entrance rule
    def test_check_entrance(self):
        box = assign_materials(hollow_box((10, 10, 10), (5, 5, 5)))
        self.assertTrue(check_entrance(box))

        # A slab of height 2 encloses nothing
        slab = empty_hull((10, 10, 10))
        slab[:, 0:2, :] = True
        self.assertFalse(check_entrance(assign_materials(slab)))

        # No floor at all
        self.assertFalse(check_entrance(assign_materials(empty_hull((10, 10, 10)))))

    # Test the full repair pipeline
    def test_repair_pipeline(self):
        lattice, feasible = repair_pipeline(np.ones((20, 20, 20), dtype=bool))
        self.assertFalse(feasible)
        self.assertFalse((lattice == Material.INTERIOR_AIR).any())

        lattice, feasible = repair_pipeline(hollow_box((20, 20, 20), (6, 6, 6), origin=(3, 0, 3)))
        self.assertTrue(feasible)

        lattice, feasible = repair_pipeline(empty_hull((20, 20, 20)))
        self.assertFalse(feasible)
        self.assertFalse(lattice.any())

        # Debris is removed before materials are assigned
        hull = hollow_box((20, 20, 20), (6, 6, 6))
        hull[15, 12, 15] = True
        lattice, _ = repair_pipeline(hull)
        self.assertEqual(lattice[15, 12, 15], Material.EXTERIOR_AIR)


class StatsTests(SimpleTestCase):

    # Test stats of an empty lattice
    def test_empty(self):
        stats = structural_stats(np.zeros((20, 20, 20), dtype=np.uint8))
        self.assertEqual(stats['bounding_box'], (0, 0, 0))
        self.assertEqual(stats['symmetry'], 0.0)
        self.assertEqual(stats['instability'], 0.0)
        self.assertEqual(stats['surface_area'], 0)

    # Test stats of a small cube
    def test_cube(self):
        lattice = np.zeros((20, 20, 20), dtype=np.uint8)
        lattice[0:2, 0:2, 0:2] = Material.WALL
        stats = structural_stats(lattice)
        self.assertEqual(stats['bounding_box'], (2, 2, 2))
        self.assertEqual(stats['surface_area'], 24)
        self.assertEqual(stats['instability'], 0.0)

    # Test symmetry and instability fractions
    def test_fractions(self):
        lattice = np.zeros((6, 6, 6), dtype=np.uint8)
        lattice[2:4, 0:2, 0:2] = Material.WALL
        self.assertEqual(structural_stats(lattice)['symmetry'], 1.0)

        # One of two voxels hangs over air
        lattice = np.zeros((6, 6, 6), dtype=np.uint8)
        lattice[0, 0, 0] = Material.FLOOR
        lattice[0, 2, 0] = Material.ROOF
        self.assertEqual(structural_stats(lattice)['instability'], 0.5)

    # Test surface area against a per-face scan
    def test_surface_random(self):
        rng = np.random.default_rng(5)
        lattice = rng.integers(0, NUM_MATERIALS, size=(7, 7, 7)).astype(np.uint8)
        solid = np.isin(lattice, (Material.FLOOR, Material.WALL, Material.ROOF))
        stats = structural_stats(lattice)
        self.assertEqual(stats['surface_area'], brute_force_surface(solid))
        self.assertLessEqual(stats['surface_area'], 6 * int(solid.sum()))
        self.assertTrue(0.0 <= stats['symmetry'] <= 1.0)
        self.assertTrue(0.0 <= stats['instability'] <= 1.0)

    # Test material counts
    def test_material_counts(self):
        lattice = assign_materials(hollow_box((8, 8, 8), (5, 4, 5)))
        counts = material_counts(lattice)
        self.assertEqual(counts['interior_air'], 18)
        self.assertEqual(sum(counts.values()), 8 ** 3)


class EncodingTests(SimpleTestCase):

    # Test one-hot conversion
    def test_onehot(self):
        rng = np.random.default_rng(1)
        lattice = rng.integers(0, NUM_MATERIALS, size=(4, 5, 6)).astype(np.uint8)
        onehot = to_onehot(lattice)
        self.assertEqual(onehot.shape, (NUM_MATERIALS, 4, 5, 6))
        self.assertTrue(np.array_equal(from_onehot(onehot), lattice))

        # Ties go to the lowest id
        tie = np.full((NUM_MATERIALS, 1, 1, 1), 0.2)
        self.assertEqual(from_onehot(tie)[0, 0, 0], Material.EXTERIOR_AIR)

        peaked = np.array([0.1, 0.6, 0.1, 0.1, 0.1]).reshape(NUM_MATERIALS, 1, 1, 1)
        self.assertEqual(from_onehot(peaked)[0, 0, 0], Material.INTERIOR_AIR)

        # Out of range ids
        with self.assertRaises(LatticeError):
            to_onehot(np.full((2, 2, 2), 7, dtype=np.uint8))

    # Test every 2x2x2 material pattern survives one-hot encoding
    def test_onehot_exhaustive(self):
        patterns = np.indices((NUM_MATERIALS,) * 8).reshape(8, -1).T.astype(np.uint8)
        self.assertEqual(len(patterns), NUM_MATERIALS ** 8)

        # Patterns stacked along x, one 2x2x2 block each
        lattice = patterns.reshape(-1, 2, 2, 2).reshape(-1, 2, 2)
        onehot = to_onehot(lattice)
        self.assertTrue(np.all(onehot.sum(axis=0) == 1.0))
        self.assertTrue(np.array_equal(from_onehot(onehot), lattice))

    # Test lattice JSON cell order
    def test_lattice_json(self):
        lattice = np.zeros((2, 1, 1), dtype=np.uint8)
        lattice[1, 0, 0] = Material.WALL
        record = lattice_to_json(lattice)
        self.assertEqual(record['dims'], [2, 1, 1])
        self.assertEqual(base64.b64decode(record['cells']), bytes([0, 3]))

        # z varies after x, y last
        lattice = np.zeros((2, 2, 2), dtype=np.uint8)
        lattice[0, 0, 1] = Material.FLOOR
        lattice[0, 1, 0] = Material.ROOF
        cells = base64.b64decode(lattice_to_json(lattice)['cells'])
        self.assertEqual(cells[2], Material.FLOOR)
        self.assertEqual(cells[4], Material.ROOF)

        rebuilt = lattice_from_json(lattice_to_json(lattice))
        self.assertTrue(np.array_equal(rebuilt, lattice))

    # Test malformed lattice records
    def test_lattice_json_errors(self):
        good = lattice_to_json(np.zeros((2, 2, 2), dtype=np.uint8))

        with self.assertRaises(LatticeError) as context:
            lattice_from_json(dict(good, dims=[2, 2]))
        self.assertEqual(context.exception.field, 'dims')

        with self.assertRaises(LatticeError) as context:
            lattice_from_json(dict(good, materials=['air']))
        self.assertEqual(context.exception.field, 'materials')

        with self.assertRaises(LatticeError) as context:
            lattice_from_json(dict(good, cells=base64.b64encode(bytes(3)).decode('ascii')))
        self.assertEqual(context.exception.field, 'cells')

        with self.assertRaises(LatticeError) as context:
            lattice_from_json(dict(good, cells=base64.b64encode(bytes([9] * 8)).decode('ascii')))
        self.assertEqual(context.exception.field, 'cells')

        with self.assertRaises(LatticeError):
            lattice_from_json([])

    # Test voxel rows skip exterior air
    def test_csv_rows(self):
        lattice = np.zeros((3, 3, 3), dtype=np.uint8)
        lattice[1, 0, 2] = Material.FLOOR
        self.assertEqual(lattice_to_csv_rows(lattice), [(1, 0, 2, 'floor')])

    # Test lattice identity keys
    def test_lattice_key(self):
        a = np.zeros((3, 3, 3), dtype=np.uint8)
        b = a.copy()
        self.assertEqual(lattice_key(a), lattice_key(b))
        b[0, 0, 0] = Material.WALL
        self.assertNotEqual(lattice_key(a), lattice_key(b))


class CuboidTests(SimpleTestCase):

    # Test random cuboid shells
    def test_random_cuboid_hull(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            hull = random_cuboid_hull((20, 20, 20), rng)

            # Grounded, one piece and enclosing air
            self.assertTrue(hull[:, 0, :].any())
            self.assertTrue(np.array_equal(flood_fill_filter(hull), hull))
            self.assertTrue(np.array_equal(largest_component(hull), hull))
            self.assertTrue((assign_materials(hull) == Material.INTERIOR_AIR).any())

            extent = np.argwhere(hull).max(axis=0) - np.argwhere(hull).min(axis=0) + 1
            self.assertTrue(all(4 <= e <= 18 for e in extent))

    # Test the same generator state gives the same shell
    def test_random_cuboid_deterministic(self):
        a = random_cuboid_hull((20, 20, 20), np.random.default_rng(9))
        b = random_cuboid_hull((20, 20, 20), np.random.default_rng(9))
        self.assertTrue(np.array_equal(a, b))
