//! Closed-form and cross-route oracles for the solvers.

use std::f64::consts::PI;

use treespec::connector::{
    analyze_reference_vertex, connector_energy_form, constrained_minimizer_2d, full_extremes, harmonic_partition_on,
    ConnectorDomain2D,
};
use treespec::fem2d::assemble_p1;
use treespec::inflated::{build_geometry_2d, mesh_with_segments, GeometrySpec2D};
use treespec::lab::{in_kernel_q, rayleigh_bound_check, transfer_constants, vertex_holder_check};
use treespec::mesh::{mesh_rectangle, mesh_strip};
use treespec::operator1d::{
    assemble_1d, discreteness_condition_check, radial_decomposition_spectrum, Mesh1D, PotentialProfile, WeightProfile,
};
use treespec::tree::{Tree, TreeSpec};

fn binary(depth: usize, delta: f64) -> Tree<f64> {
    Tree::build(TreeSpec::new(2, 1.0, 0.5, delta, depth)).unwrap()
}

#[test]
fn single_edge_mixed_spectrum() {
    let tree = Tree::build(TreeSpec::new(1, 1.0, 0.5, 0.5, 0)).unwrap();
    let rho = WeightProfile::rho_star(&tree);
    let mesh = Mesh1D::uniform(&tree, 1.0 / 512.0, &[]).unwrap();
    let sys = assemble_1d(&tree, &rho, &rho, &PotentialProfile::zero(), &mesh).unwrap();
    let s = sys.eigenpairs(5, 1e-12).unwrap();
    for m in 1..=5 {
        let exact = ((2 * m - 1) as f64 * PI / 2.0).powi(2);
        assert!((s.values[m - 1] - exact).abs() / exact < 1e-3, "mode {m}: {}", s.values[m - 1]);
    }
}

#[test]
fn unit_square_neumann_gap() {
    let mesh = mesh_rectangle(1.0, 1.0, 0.02).unwrap();
    let sys = assemble_p1(&mesh, None, &vec![false; mesh.nodes.len()]);
    let s = sys.eigenpairs(3, 1e-10).unwrap();
    assert!(s.values[0].abs() < 1e-8);
    assert!((s.values[1] - PI * PI).abs() / (PI * PI) < 0.01);
}

#[test]
fn strip_eigenvalue_converges_at_second_order() {
    let exact = (PI / 2.0).powi(2);
    let err = |cols: usize| {
        let mesh = mesh_strip(1.0, 0.1, cols, 2).unwrap();
        let dir: Vec<bool> = mesh.nodes.iter().map(|p| p[0] == 0.0).collect();
        let s = assemble_p1(&mesh, None, &dir).eigenpairs(1, 1e-12).unwrap();
        s.values[0] - exact
    };
    let ratio = err(16) / err(32);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn decomposition_matches_direct_assembly() {
    let cosine = PotentialProfile::Cosine { offset: 0.0, amplitude: 1.0, frequency: 1.0, phase: 0.0 };
    for depth in 1..=3 {
        for delta in [0.5, 0.6, 0.8] {
            for w in [PotentialProfile::zero(), cosine.clone()] {
                let tree = binary(depth, delta);
                let rho = WeightProfile::rho_star(&tree);
                let mesh = Mesh1D::uniform(&tree, 1.0 / 32.0, &[]).unwrap();
                let direct = assemble_1d(&tree, &rho, &rho, &w, &mesh).unwrap().eigenpairs(12, 1e-12).unwrap();
                let merged = radial_decomposition_spectrum(&tree, &rho, &rho, &w, &mesh, 12, 1e-12).unwrap();
                let merged = merged.expanded();
                for (i, (a, b)) in direct.values.iter().zip(&merged).enumerate() {
                    assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "J={depth} d={delta} #{i}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn raising_the_potential_raises_every_eigenvalue() {
    let tree = binary(2, 0.6);
    let rho = WeightProfile::rho_star(&tree);
    let mesh = Mesh1D::uniform(&tree, 1.0 / 32.0, &[]).unwrap();
    let w = PotentialProfile::Cosine { offset: 0.0, amplitude: 2.0, frequency: 3.0, phase: 0.5 };
    let a = assemble_1d(&tree, &rho, &rho, &w, &mesh).unwrap().eigenpairs(10, 1e-12).unwrap();
    let b = assemble_1d(&tree, &rho, &rho, &w.shifted(1.0), &mesh).unwrap().eigenpairs(10, 1e-12).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!(y >= x);
    }
}

#[test]
fn discreteness_classifier() {
    let check = |delta: f64| {
        let tree = binary(4, delta);
        discreteness_condition_check(&tree, &WeightProfile::rho_star(&tree)).unwrap()
    };
    let (a, b, c) = (check(0.6), check(0.4), check(0.5));
    assert!(a.holds && (a.generation_factor - 1.2).abs() < 1e-12 && a.best_constant == 1.0);
    assert!(!b.holds && (b.generation_factor - 0.8).abs() < 1e-12 && b.best_constant == 0.0);
    assert!(c.holds && (c.generation_factor - 1.0).abs() < 1e-12);
}

#[test]
fn harmonic_partition_obeys_maximum_principle_on_fine_mesh() {
    let domain = ConnectorDomain2D::reference_pentagon(0.6, 0.3).unwrap();
    let cm = domain.mesh(32).unwrap();
    let fields = harmonic_partition_on(&cm).unwrap();
    for f in &fields {
        assert!(f.iter().all(|&v| (-1e-3..=1.0 + 1e-3).contains(&v)));
    }
}

#[test]
fn connector_mass_matrix_is_stable_under_refinement() {
    let coarse = analyze_reference_vertex(2, 0.6, 2, 0.3, 8).unwrap();
    let fine = analyze_reference_vertex(2, 0.6, 2, 0.3, 16).unwrap();
    let (lo_c, _) = full_extremes(&coarse.matrices.b);
    let (lo_f, _) = full_extremes(&fine.matrices.b);
    assert!(lo_c > 0.0 && lo_f > 0.0);
    assert!((lo_c - lo_f).abs() / lo_f < 0.05);
    assert!(fine.matrices.b.iter().all(|&v| v > 0.0));
}

#[test]
fn connector_energy_is_bilinear_in_targets() {
    let cm = ConnectorDomain2D::reference_pentagon(0.6, 0.3).unwrap().mesh(8).unwrap();
    let form = connector_energy_form(&cm, 0).unwrap();
    let f = [1.0, 0.0, 0.0];
    let direct = constrained_minimizer_2d(&cm, &f, 0).unwrap();
    assert!((direct.energy - form[(0, 0)]).abs() < 1e-9 * direct.energy);
    let g = [0.3, -1.2, 0.7];
    let direct = constrained_minimizer_2d(&cm, &g, 0).unwrap();
    let via_form: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| g[i] * form[(i, j)] * g[j]).sum();
    assert!((direct.energy - via_form).abs() < 1e-8 * direct.energy);
    let mixed = constrained_minimizer_2d(&cm, &g, 1).unwrap();
    assert!(mixed.energy >= direct.energy);
}

#[test]
fn transfer_constants_stay_bounded_as_eps_shrinks() {
    let spec = TreeSpec::new(2, 1.0, 0.5, 0.6, 2);
    let constants = analyze_reference_vertex(2, 0.6, 2, 0.3, 4).unwrap().constants;
    let runs: Vec<_> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&eps| {
            let mesh = mesh_with_segments(&build_geometry_2d(&GeometrySpec2D::new(spec, eps)).unwrap(), 2).unwrap();
            transfer_constants(&mesh, &constants).unwrap()
        })
        .collect();
    for r in &runs {
        assert!(r.q_energy <= 1.0 + 1e-9 && r.p_energy <= 1.0 + 1e-9);
    }
    let spread = |get: fn(&treespec::lab::TransferConstants) -> f64| {
        let v: Vec<f64> = runs.iter().map(get).collect();
        v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    for (name, s) in [
        ("q lower", spread(|r| r.q_mass_lower)),
        ("q upper", spread(|r| r.q_mass_upper)),
        ("p lower", spread(|r| r.p_mass_lower)),
        ("p upper", spread(|r| r.p_mass_upper)),
    ] {
        assert!(s.is_finite() && s < 4.0, "{name} spread {s}");
    }
}

#[test]
fn kernel_filter_rejects_non_kernel_functions() {
    let spec = TreeSpec::new(2, 1.0, 0.5, 0.6, 2);
    let mesh = mesh_with_segments(&build_geometry_2d(&GeometrySpec2D::new(spec, 0.1)).unwrap(), 4).unwrap();
    let n = mesh.stations.layout(mesh.tree()).nodes;
    let mut f = vec![0.0; n];
    assert!(in_kernel_q(&mesh, &f, 1e-14).unwrap());
    f[n - 1] = 1.0;
    assert!(!in_kernel_q(&mesh, &f, 1e-14).unwrap());
}

#[test]
fn holder_constant_scales_linearly_and_vanishes_on_constants() {
    let spec = TreeSpec::new(2, 1.0, 0.5, 0.6, 2);
    let mesh = mesh_with_segments(&build_geometry_2d(&GeometrySpec2D::new(spec, 0.1)).unwrap(), 4).unwrap();
    let ones = vec![1.0; mesh.mesh.nodes.len()];
    assert!(vertex_holder_check(&mesh, &ones) < 1e-13);
    let u: Vec<f64> = mesh.radial.iter().map(|t| t * t).collect();
    let twice: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
    let (a, b) = (vertex_holder_check(&mesh, &u), vertex_holder_check(&mesh, &twice));
    assert!((b - 2.0 * a).abs() <= 1e-12 * b);
}

#[test]
fn rayleigh_bounds_hold_on_held_out_samples() {
    let spec = TreeSpec::new(2, 1.0, 0.5, 0.6, 2);
    for eps in [0.2, 0.1] {
        let r = rayleigh_bound_check(&spec, eps, 4, 0.3, 200, 11).unwrap();
        assert!(r.q_constant.is_some() && r.p_constant.is_some());
        assert_eq!((r.q_violations, r.p_violations), (0, 0));
    }
}
