//! Stiffness/mass pairs with a map between free degrees of freedom and the
//! underlying node numbering.

use crate::eigen::{smallest_eigenpairs, Spectrum};
use crate::error::Result;
use crate::sparse::{SparseSymmetric, TripletBuilder};

#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub stiffness: SparseSymmetric,
    pub mass: SparseSymmetric,
    /// Node index of each free degree of freedom.
    pub dof_nodes: Vec<usize>,
    /// Degree of freedom of each node, `None` where eliminated.
    pub node_dofs: Vec<Option<usize>>,
}

impl AssembledSystem {
    /// Keeps the nodes not flagged in `fixed`; homogeneous values are assumed
    /// on fixed nodes.
    pub fn from_full(k: &SparseSymmetric, m: &SparseSymmetric, fixed: &[bool]) -> Self {
        let n = k.dim();
        let mut node_dofs = vec![None; n];
        let mut dof_nodes = Vec::new();
        for i in 0..n {
            if !fixed[i] {
                node_dofs[i] = Some(dof_nodes.len());
                dof_nodes.push(i);
            }
        }
        let restrict = |a: &SparseSymmetric| {
            let mut b = TripletBuilder::new(dof_nodes.len());
            for (di, &i) in dof_nodes.iter().enumerate() {
                for (j, v) in a.row(i) {
                    if let Some(dj) = node_dofs[j] {
                        b.add(di, dj, v);
                    }
                }
            }
            b.build()
        };
        AssembledSystem {
            stiffness: restrict(k),
            mass: restrict(m),
            dof_nodes,
            node_dofs,
        }
    }

    pub fn dofs(&self) -> usize {
        self.dof_nodes.len()
    }

    pub fn nodes(&self) -> usize {
        self.node_dofs.len()
    }

    pub fn eigenpairs(&self, count: usize, tol: f64) -> Result<Spectrum> {
        smallest_eigenpairs(&self.stiffness, &self.mass, count.min(self.dofs()), tol)
    }

    /// Node values from a dof vector, zero on eliminated nodes.
    pub fn expand(&self, dofs: &[f64]) -> Vec<f64> {
        self.node_dofs
            .iter()
            .map(|d| d.map_or(0.0, |d| dofs[d]))
            .collect()
    }

    pub fn restrict(&self, nodes: &[f64]) -> Vec<f64> {
        self.dof_nodes.iter().map(|&i| nodes[i]).collect()
    }

    pub fn energy(&self, dofs: &[f64]) -> f64 {
        self.stiffness.form(dofs, dofs)
    }

    pub fn norm_sq(&self, dofs: &[f64]) -> f64 {
        self.mass.form(dofs, dofs)
    }

    pub fn rayleigh(&self, dofs: &[f64]) -> f64 {
        self.energy(dofs) / self.norm_sq(dofs)
    }
}
