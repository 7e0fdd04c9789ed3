import numpy as np
import pytest
from scipy import linalg
from exceptions import InvalidInputError, ShapeMismatchError
from fem.assembly import assemble_mass
from fem.fields import Field
from fem.grid import build_mesh_pair
from fem.solvers import nodal_load, solve_steady
from msreduction.cem import (
    MultiscaleBasis,
    basis_energy,
    build_basis,
    cem_basis,
    constraint_residual,
    energy_outside,
    oversample_region,
)
from msreduction.partition import coarse_hats_1d, kappa_tilde, partition_of_unity
from msreduction.projection import coarse_target, project_source, reconstruct
from msreduction.spectral import auxiliary_spectrum, local_spectral_matrices
from problems.permeability import synthetic_kappa
from stages.metrics import fine_relative_L2

# ─────────────────────────── partition of unity ─────────────────────────── #


def test_partition_sums_to_one(small_mesh):
    chi = partition_of_unity(small_mesh)
    assert chi.shape == (small_mesh.n_coarse_nodes, small_mesh.n_nodes)
    assert np.allclose(chi.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(chi >= 0.0)


def test_partition_is_nodal_at_coarse_nodes(small_mesh):
    chi = partition_of_unity(small_mesh)
    r = small_mesh.refinement
    n = small_mesh.coarse_cells_per_side + 1
    for b in range(n):
        for a in range(n):
            fine = (b * r) * small_mesh.side + a * r
            expected = np.zeros(small_mesh.n_coarse_nodes)
            expected[b * n + a] = 1.0
            assert np.allclose(chi[:, fine], expected)


def test_hat_midpoint_is_one_half():
    mesh = build_mesh_pair(2, 4)
    hats = coarse_hats_1d(mesh)
    # midpoint of the first coarse cell is fine tick 2
    assert hats[0, 2] == pytest.approx(0.5)
    assert hats[1, 2] == pytest.approx(0.5)
    assert hats[2, 2] == 0.0


def test_kappa_tilde_is_linear_and_positive(small_mesh, small_kappa):
    weight = kappa_tilde(small_mesh, small_kappa)
    assert np.all(weight.values > 0)
    scaled = kappa_tilde(small_mesh, small_kappa.scaled(3.0))
    assert np.allclose(scaled.values, 3.0 * weight.values)


def test_kappa_tilde_of_unit_kappa():
    mesh = build_mesh_pair(2, 2)
    weight = kappa_tilde(mesh, Field.constant(mesh, 1.0))
    # sum_j |grad chi_j|^2 = (2 / H^2) * (sum of squared hats along the other axis), averaged at the center
    hats_center = np.array([0.75, 0.25])
    expected = 2.0 / mesh.H**2 * np.sum(hats_center**2) * 2.0
    assert np.allclose(weight.values, expected)


# ─────────────────────────── auxiliary spectrum ─────────────────────────── #


def test_auxiliary_spectrum_properties(small_mesh, small_kappa):
    weight = kappa_tilde(small_mesh, small_kappa)
    aux = auxiliary_spectrum(small_mesh, small_kappa, weight, 3)
    assert aux.eigenvalues.shape == (small_mesh.n_coarse, 3)
    assert np.all(np.diff(aux.eigenvalues, axis=1) >= 0)
    assert np.all(aux.eigenvalues[:, 0] >= -1e-10 * aux.eigenvalues[:, -1])
    for i in range(small_mesh.n_coarse):
        assert np.allclose(aux.s_gram(i), np.eye(3), atol=1e-8)
        stiffness, mass = local_spectral_matrices(small_mesh, small_kappa, weight, i)
        for j in range(3):
            phi = aux.modes[i, j]
            residual = stiffness @ phi - aux.eigenvalues[i, j] * mass @ phi
            assert np.linalg.norm(residual) <= 1e-8 * max(np.linalg.norm(stiffness @ phi), 1.0)


def test_first_mode_is_constant(small_mesh, small_kappa):
    weight = kappa_tilde(small_mesh, small_kappa)
    aux = auxiliary_spectrum(small_mesh, small_kappa, weight, 1)
    first = aux.modes[:, 0]
    assert np.allclose(first, first[:, :1], rtol=1e-6)
    assert np.all(first > 0)


def test_eigenvalues_match_dense_oracle():
    mesh = build_mesh_pair(1, 4)
    kappa = Field.constant(mesh, 1.0)
    weight = kappa_tilde(mesh, kappa)
    aux = auxiliary_spectrum(mesh, kappa, weight, 4)
    stiffness, mass = local_spectral_matrices(mesh, kappa, weight, 0)
    lower = np.linalg.cholesky(mass)
    inverse = np.linalg.inv(lower)
    oracle = np.sort(np.linalg.eigvalsh(inverse @ stiffness @ inverse.T))[:4]
    assert np.allclose(aux.eigenvalues[0], oracle, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("modes", [0, 100])
def test_auxiliary_spectrum_rejects_bad_mode_count(small_mesh, small_kappa, modes):
    weight = kappa_tilde(small_mesh, small_kappa)
    with pytest.raises(InvalidInputError):
        auxiliary_spectrum(small_mesh, small_kappa, weight, modes)


# ─────────────────────────── oversampling ─────────────────────────── #


def test_oversample_regions(small_mesh):
    assert oversample_region(small_mesh, 4, 0).tolist() == [4]
    assert oversample_region(small_mesh, 4, 1).tolist() == list(range(9))
    assert oversample_region(small_mesh, 0, 1).tolist() == [0, 1, 3, 4]
    assert oversample_region(small_mesh, 8, 1).tolist() == [4, 5, 7, 8]
    assert oversample_region(small_mesh, 0, 5).size == small_mesh.n_coarse


def test_oversample_region_rejects_negative_layers(small_mesh):
    with pytest.raises(InvalidInputError):
        oversample_region(small_mesh, 0, -1)


# ─────────────────────────── CEM basis ─────────────────────────── #


def test_basis_shape_and_column_layout(small_mesh, small_basis):
    assert small_basis.matrix.shape == (small_mesh.n_nodes, small_mesh.n_coarse * 2)
    assert small_basis.column_index(3, 2) == 7
    assert small_basis.columns_for_element(3).tolist() == [6, 7]
    with pytest.raises(InvalidInputError):
        small_basis.column_index(0, 3)


def test_mode_groups_partition_columns(small_basis):
    groups = [small_basis.columns_for_mode(j) for j in (1, 2)]
    assert not set(groups[0]) & set(groups[1])
    assert sorted(np.concatenate(groups).tolist()) == list(range(small_basis.n_basis))


def test_constraints_hold(small_mesh, small_basis):
    assert constraint_residual(small_mesh, small_basis.aux, small_basis) <= 1e-6


def test_columns_vanish_outside_their_region(small_mesh, small_basis):
    for column in range(small_basis.n_basis):
        i = column // small_basis.modes_per_element
        region = small_basis.support(column, small_mesh)
        positions = np.array([small_mesh.coarse_position(k) for k in region])
        (cx0, cy0), (cx1, cy1) = positions.min(axis=0), positions.max(axis=0)
        interior = small_mesh.block_nodes(cx0, cy0, cx1, cy1, interior=True)
        outside = np.setdiff1d(np.arange(small_mesh.n_nodes), interior)
        assert np.all(small_basis.matrix[outside, column] == 0.0), f"column {column} of element {i}"


def test_gram_matrix_is_positive_definite(small_basis):
    assert np.all(np.linalg.eigvalsh(small_basis.gram) > 0)


def test_energy_does_not_grow_with_oversampling(small_mesh, small_kappa, small_basis):
    wider = cem_basis(small_mesh, small_kappa, small_basis.aux, 2)
    narrow_energy = basis_energy(small_mesh, small_kappa, small_basis)
    wide_energy = basis_energy(small_mesh, small_kappa, wider)
    assert np.all(wide_energy <= narrow_energy * (1 + 1e-10))
    assert constraint_residual(small_mesh, small_basis.aux, wider) <= 1e-6


def test_whole_domain_oversampling_matches_global_minimizer(small_mesh, small_kappa, small_basis):
    # on a 3 x 3 coarse grid two layers already cover the domain from every element
    two = cem_basis(small_mesh, small_kappa, small_basis.aux, 2)
    five = cem_basis(small_mesh, small_kappa, small_basis.aux, 5)
    assert np.allclose(
        basis_energy(small_mesh, small_kappa, two), basis_energy(small_mesh, small_kappa, five), rtol=1e-10
    )


def test_energy_tail_of_a_column(small_mesh, small_kappa, small_basis):
    column = small_basis.column_index(4, 1)
    assert energy_outside(small_mesh, small_kappa, small_basis, column, 1) == pytest.approx(0.0, abs=1e-14)
    share = energy_outside(small_mesh, small_kappa, small_basis, column, 0)
    assert 0.0 <= share < 1.0


@pytest.mark.slow
def test_energy_tail_decays_with_oversampling():
    # 7 x 7 coarse grid: three layers around the centre element cover the whole domain
    mesh = build_mesh_pair(7, 3)
    kappa = synthetic_kappa(mesh, {"inclusion": 1.0e4, "channels": 1, "inclusions": 4, "seed": 11})
    aux = auxiliary_spectrum(mesh, kappa, kappa_tilde(mesh, kappa), 3)
    centre = 3 * 7 + 3
    tails = []
    for ell in (1, 2, 3):
        basis = cem_basis(mesh, kappa, aux, ell)
        columns = [basis.column_index(centre, j) for j in range(1, 4)]
        tails.append(np.mean([energy_outside(mesh, kappa, basis, column, ell - 1) for column in columns]))
    assert tails[0] > tails[1] > tails[2] > 0.0


def test_basis_is_deterministic_across_workers(small_mesh, small_kappa, small_basis):
    again = cem_basis(small_mesh, small_kappa, small_basis.aux, 1, workers=3)
    assert np.array_equal(again.matrix, small_basis.matrix)


def test_cem_basis_needs_one_layer(small_mesh, small_kappa, small_basis):
    with pytest.raises(InvalidInputError):
        cem_basis(small_mesh, small_kappa, small_basis.aux, 0)


def test_basis_round_trips_through_disk(tmp_path, small_mesh, small_basis):
    small_basis.save(str(tmp_path / "basis"), extra={"note": "test"})
    loaded = MultiscaleBasis.load(str(tmp_path / "basis"), small_mesh)
    assert np.array_equal(loaded.matrix, small_basis.matrix)
    assert loaded.ell == small_basis.ell
    assert np.allclose(loaded.aux.weighted_modes, small_basis.aux.weighted_modes)
    with pytest.raises(ShapeMismatchError):
        MultiscaleBasis.load(str(tmp_path / "basis"), build_mesh_pair(2, 3))


# ─────────────────────────── projection ─────────────────────────── #


def test_coarse_target_reproduces_span(small_basis, rng):
    coefficients = rng.normal(size=small_basis.n_basis)
    recovered = coarse_target(reconstruct(coefficients, small_basis), small_basis)
    assert np.allclose(recovered, coefficients, rtol=1e-8, atol=1e-8 * np.abs(coefficients).max())


def test_coarse_target_ignores_orthogonal_complement(small_basis, rng):
    u = rng.normal(size=small_basis.n_nodes)
    q, _ = linalg.qr(small_basis.matrix, mode="economic")
    orthogonal = u - q @ (q.T @ u)
    assert np.abs(coarse_target(orthogonal, small_basis)).max() <= 1e-8


def test_coarse_target_is_idempotent(small_basis, rng):
    u = rng.normal(size=(3, small_basis.n_nodes))
    once = coarse_target(u, small_basis)
    twice = coarse_target(reconstruct(once, small_basis), small_basis)
    assert np.allclose(twice, once, atol=1e-8)


def test_coarse_target_rejects_wrong_length(small_basis):
    with pytest.raises(ShapeMismatchError):
        coarse_target(np.ones(small_basis.n_nodes + 1), small_basis)


def test_project_source(small_basis):
    m0 = 4
    zero = project_source(np.zeros((m0, small_basis.n_nodes)), small_basis)
    assert zero.shape == (m0, small_basis.n_basis)
    assert not zero.any()

    k = 5
    row = project_source(small_basis.matrix[:, k][None, :], small_basis)
    assert np.allclose(row[0], small_basis.gram[k])

    ones = np.ones((m0, small_basis.n_nodes))
    columns = small_basis.columns_for_mode(1)
    assert project_source(ones, small_basis, columns).shape == (m0, columns.size)

    with pytest.raises(InvalidInputError):
        project_source(ones, small_basis, np.array([], dtype=int))
    with pytest.raises(ShapeMismatchError):
        project_source(np.ones((m0, 7)), small_basis)


@pytest.mark.slow
def test_projection_of_a_steady_solution_is_accurate():
    mesh = build_mesh_pair(10, 10)
    kappa = synthetic_kappa(mesh)
    basis = build_basis(mesh, kappa, modes=3, ell=3, workers=4)
    mass = assemble_mass(mesh, Field.constant(mesh, 1.0))
    u_h = solve_steady(mesh, kappa, nodal_load(mass, np.ones(mesh.n_nodes)))
    error = fine_relative_L2(coarse_target(u_h, basis), u_h, basis, mass)
    assert error <= 1e-2
