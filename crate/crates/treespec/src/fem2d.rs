//! Piecewise-linear finite elements on planar triangulations.

use crate::mesh::{signed_area, Mesh2D, Point};
use crate::sparse::{SparseSymmetric, TripletBuilder};
use crate::system::AssembledSystem;

/// Gradients of the three barycentric coordinates and the triangle area.
pub fn p1_gradients(a: Point, b: Point, c: Point) -> ([[f64; 2]; 3], f64) {
    let area = signed_area(a, b, c);
    let inv = 1.0 / (2.0 * area);
    let g = [
        [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
        [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
        [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
    ];
    (g, area.abs())
}

/// Full P1 stiffness, mass and potential-mass matrices over all nodes. The
/// potential is interpolated from nodal values and integrated exactly.
pub fn p1_matrices(
    mesh: &Mesh2D,
    potential: Option<&[f64]>,
) -> (SparseSymmetric, SparseSymmetric, SparseSymmetric) {
    let n = mesh.nodes.len();
    let mut k = TripletBuilder::new(n);
    let mut m = TripletBuilder::new(n);
    let mut w = TripletBuilder::new(n);
    for t in &mesh.triangles {
        let p = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
        let (g, area) = p1_gradients(p[0], p[1], p[2]);
        for a in 0..3 {
            for b in 0..3 {
                let kab = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                let mab = if a == b { area / 6.0 } else { area / 12.0 };
                k.add(t[a], t[b], kab);
                m.add(t[a], t[b], mab);
                if let Some(pot) = potential {
                    let mut wab = 0.0;
                    for c in 0..3 {
                        let triple = match (a == b, b == c, a == c) {
                            (true, true, _) => area / 10.0,
                            (true, false, _) | (false, true, _) | (_, _, true) => area / 30.0,
                            _ => area / 60.0,
                        };
                        wab += pot[t[c]] * triple;
                    }
                    w.add(t[a], t[b], wab);
                }
            }
        }
    }
    (k.build(), m.build(), w.build())
}

/// Schrodinger pencil `(grad u . grad v + W u v, u v)` with homogeneous
/// Dirichlet values on flagged nodes.
pub fn assemble_p1(mesh: &Mesh2D, potential: Option<&[f64]>, dirichlet: &[bool]) -> AssembledSystem {
    let (k, m, w) = p1_matrices(mesh, potential);
    let k = if potential.is_some() { k.add_scaled(&w, 1.0) } else { k };
    AssembledSystem::from_full(&k, &m, dirichlet)
}

/// Line integrals `int phi_i` along a polyline of mesh nodes.
pub fn line_weights(mesh: &Mesh2D, polyline: &[usize]) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; polyline.len()];
    let mut length = 0.0;
    for i in 0..polyline.len() - 1 {
        let (a, b) = (mesh.nodes[polyline[i]], mesh.nodes[polyline[i + 1]]);
        let l = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        w[i] += l / 2.0;
        w[i + 1] += l / 2.0;
        length += l;
    }
    (w, length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::smallest_eigenpairs;
    use crate::mesh::{mesh_rectangle, mesh_strip};

    #[test]
    fn stiffness_annihilates_constants() {
        let mesh = mesh_rectangle(1.0, 0.7, 0.1).unwrap();
        let (k, m, _) = p1_matrices(&mesh, None);
        let ones = vec![1.0; mesh.nodes.len()];
        assert!(k.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        assert!((m.form(&ones, &ones) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn potential_mass_of_constant_is_scaled_mass() {
        let mesh = mesh_rectangle(1.0, 1.0, 0.2).unwrap();
        let pot = vec![3.0; mesh.nodes.len()];
        let (_, m, w) = p1_matrices(&mesh, Some(&pot));
        let x: Vec<f64> = mesh.nodes.iter().map(|p| p[0] + 2.0 * p[1]).collect();
        assert!((w.form(&x, &x) - 3.0 * m.form(&x, &x)).abs() < 1e-12);
    }

    #[test]
    fn mixed_strip_approaches_interval_value() {
        // Dirichlet on the left end of a thin strip.
        let mesh = mesh_strip(1.0, 0.05, 200, 2).unwrap();
        let dir: Vec<bool> = mesh.nodes.iter().map(|p| p[0] == 0.0).collect();
        let sys = assemble_p1(&mesh, None, &dir);
        let s = smallest_eigenpairs(&sys.stiffness, &sys.mass, 2, 1e-10).unwrap();
        let exact = (std::f64::consts::PI / 2.0).powi(2);
        assert!((s.values[0] - exact).abs() / exact < 1e-3);
    }
}
