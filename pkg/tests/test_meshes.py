"""Structured mesh construction, refinement and conformity."""

import io

import numpy as np
import pytest

from dpgfem.meshes import (
    build_structured,
    check_conforming,
    read_mesh,
    refine_marked,
    refine_uniform,
    shape_regularity,
    write_mesh,
)


@pytest.mark.parametrize("n,cells", [(1, 2), (2, 8), (3, 18)])
def test_square_cell_counts(n, cells):
    mesh = build_structured("unit-square", n)
    assert mesh.ncells == cells
    assert mesh.nvertices == (n + 1) ** 2
    assert abs(mesh.cell_volumes.sum() - 1.0) < 1e-14


@pytest.mark.parametrize("n,cells", [(1, 5), (2, 40)])
def test_cube_cell_counts(n, cells):
    mesh = build_structured("unit-cube", n)
    assert mesh.ncells == cells
    assert abs(mesh.cell_volumes.sum() - 1.0) < 1e-13
    check_conforming(mesh)


def test_lshape_is_three_quarters_of_the_square():
    mesh = build_structured("l-shape", 2)
    assert mesh.ncells == 6
    assert abs(mesh.cell_volumes.sum() - 0.75) < 1e-14
    with pytest.raises(ValueError):
        build_structured("l-shape", 3)


def test_zero_subdivisions_rejected():
    with pytest.raises(ValueError):
        build_structured("unit-square", 0)
    with pytest.raises(ValueError):
        build_structured("nonexistent-domain", 1)


def test_uniform_refinement_quadruples_triangles(eight_tri):
    fine = refine_uniform(eight_tri)
    assert fine.ncells == 32
    assert fine.mesh_size == pytest.approx(eight_tri.mesh_size / 2)


def test_uniform_refinement_octuples_tets(five_tet):
    fine = refine_uniform(five_tet)
    assert fine.ncells == 40
    check_conforming(fine)
    assert abs(fine.cell_volumes.sum() - 1.0) < 1e-13


def test_two_refinements_halve_diameter_twice(two_tri):
    fine = refine_uniform(refine_uniform(two_tri))
    assert fine.ncells == 32
    assert fine.mesh_size == pytest.approx(two_tri.mesh_size / 4)


def test_shape_regularity_invariant_under_red_refinement(eight_tri):
    v0 = shape_regularity(eight_tri)
    v1 = shape_regularity(refine_uniform(eight_tri))
    assert v1 == pytest.approx(v0, rel=1e-12)


def test_marked_bisection_of_both_triangles(two_tri):
    fine = refine_marked(two_tri, {0, 1})
    assert fine.ncells == 4
    check_conforming(fine)


def test_marked_refinement_closure_keeps_conformity(eight_tri, rng):
    mesh = eight_tri
    for _ in range(5):
        k = int(rng.integers(1, mesh.ncells + 1))
        marked = rng.choice(mesh.ncells, size=k, replace=False)
        mesh = refine_marked(mesh, set(int(m) for m in marked))
        check_conforming(mesh)
    assert abs(mesh.cell_volumes.sum() - 1.0) < 1e-13


def test_marked_refinement_3d_conformity(five_tet, rng):
    mesh = five_tet
    for _ in range(3):
        k = int(rng.integers(1, mesh.ncells + 1))
        marked = rng.choice(mesh.ncells, size=k, replace=False)
        mesh = refine_marked(mesh, set(int(m) for m in marked))
        check_conforming(mesh)
    assert abs(mesh.cell_volumes.sum() - 1.0) < 1e-13


def test_marked_out_of_range_rejected(two_tri):
    with pytest.raises(ValueError):
        refine_marked(two_tri, {5})
    assert refine_marked(two_tri, set()) is two_tri


def test_refinement_records_parents(two_tri):
    fine = refine_marked(two_tri, {0})
    assert fine.ncells > two_tri.ncells
    assert len(fine.parents) == fine.ncells
    assert all(0 <= p < two_tri.ncells for p in fine.parents)
    # children of the marked cell split its area
    kids = np.where(fine.parents == 0)[0]
    assert len(kids) >= 2
    assert fine.cell_volumes[kids].sum() == pytest.approx(
        two_tri.cell_volumes[0])


def test_facet_adjacency(eight_tri):
    interior = eight_tri.interior_facets
    boundary = eight_tri.boundary_facets
    assert len(interior) + len(boundary) == eight_tri.nfacets
    assert len(boundary) == 8
    # every boundary facet carries a tag
    assert set(boundary) == set(eight_tri.boundary_tags)


def test_mesh_io_roundtrip(eight_tri):
    buf = io.StringIO()
    write_mesh(eight_tri, buf)
    buf.seek(0)
    back = read_mesh(buf)
    assert back.ncells == eight_tri.ncells
    assert np.allclose(back.vertices, eight_tri.vertices)
    assert np.array_equal(back.cells, eight_tri.cells)
    assert back.boundary_tags == eight_tri.boundary_tags
