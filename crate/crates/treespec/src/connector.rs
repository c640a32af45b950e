//! Vertex neighbourhoods: partitions of unity on the skeleton star and on the
//! planar connector, their form matrices, section-constrained minimizers and
//! the two-sided equivalence constants built from them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem2d::{line_weights, p1_matrices};
use crate::mesh::{blend_patch, push_segment, BoundaryTag, Mesh2D, Point};
use crate::scalar::Real;
use crate::sparse::{EnvelopeCholesky, SparseSymmetric, TripletBuilder};

/// Free space kept between the two child sections near the apex, as a
/// fraction of the parent section width.
pub const APEX_GAP: f64 = 0.1;

/// `f - (f . 1^) 1^` with `1^` the normalized all-ones vector.
pub fn project_off_ones<T: Real>(f: &[T]) -> Vec<T> {
    let mean = f.iter().fold(T::zero(), |a, &x| a + x) / T::from_count(f.len());
    f.iter().map(|&x| x - mean).collect()
}

pub fn project_off_ones_complex<T: Real>(f: &[Complex<T>]) -> Vec<Complex<T>> {
    let n = T::from_count(f.len());
    let sum = f.iter().fold(Complex::new(T::zero(), T::zero()), |a, &x| a + x);
    let mean = Complex::new(sum.re / n, sum.im / n);
    f.iter().map(|&x| x - mean).collect()
}

/// Star of `k+1` arms meeting at a vertex; arm 0 leads to the parent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkeletonStar<T> {
    pub arm_lengths: Vec<T>,
    pub arm_weights: Vec<T>,
}

impl<T: Real> SkeletonStar<T> {
    pub fn uniform(k: usize) -> Self {
        SkeletonStar {
            arm_lengths: vec![T::one(); k + 1],
            arm_weights: vec![T::one(); k + 1],
        }
    }

    /// Reference star of a regular tree: unit arms, parent weight 1 and child
    /// weights `delta^(N-1)`.
    pub fn regular(k: usize, delta: T, dimension: usize) -> Self {
        let child = delta.powi(dimension as i32 - 1);
        let mut arm_weights = vec![child; k + 1];
        arm_weights[0] = T::one();
        SkeletonStar {
            arm_lengths: vec![T::one(); k + 1],
            arm_weights,
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        SkeletonStar {
            arm_lengths: self.arm_lengths.iter().map(|&l| l * factor).collect(),
            arm_weights: self.arm_weights.clone(),
        }
    }

    pub fn arms(&self) -> usize {
        self.arm_lengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms() < 2 || self.arm_weights.len() != self.arms() {
            return Err(Error::param("star", "need at least two arms with one weight each"));
        }
        if self
            .arm_lengths
            .iter()
            .chain(&self.arm_weights)
            .any(|&x| !(x > T::zero()))
        {
            return Err(Error::param("star", "arm lengths and weights must be positive"));
        }
        Ok(())
    }
}

/// Piecewise-affine hats: `psi_e` is 1 at the end of arm `e`, 0 at the other
/// ends and `1/(k+1)` at the centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionOfUnity1D<T> {
    pub arms: usize,
    pub center_value: T,
}

pub fn build_partition_1d<T: Real>(star: &SkeletonStar<T>) -> PartitionOfUnity1D<T> {
    PartitionOfUnity1D {
        arms: star.arms(),
        center_value: T::one() / T::from_count(star.arms()),
    }
}

impl<T: Real> PartitionOfUnity1D<T> {
    /// Values of `psi_e` at the centre and at the far end of `arm`.
    pub fn end_values(&self, e: usize, arm: usize) -> (T, T) {
        let end = if e == arm { T::one() } else { T::zero() };
        (self.center_value, end)
    }

    /// `psi_e` at distance `s` from the centre along an arm of length `len`.
    pub fn value(&self, e: usize, arm: usize, s: T, len: T) -> T {
        let (c, end) = self.end_values(e, arm);
        c + (end - c) * s / len
    }
}

pub type SmallMatrix<T> = Vec<Vec<T>>;

/// Exact `(int psi_l' psi_m' rho, int psi_l psi_m rho)` over the star.
pub fn skeleton_form_matrices<T: Real>(
    star: &SkeletonStar<T>,
    partition: &PartitionOfUnity1D<T>,
) -> (SmallMatrix<T>, SmallMatrix<T>) {
    let n = star.arms();
    let mut a = vec![vec![T::zero(); n]; n];
    let mut b = vec![vec![T::zero(); n]; n];
    let half = T::lit(0.5);
    let third = T::one() / T::lit(3.0);
    for arm in 0..n {
        let (len, rho) = (star.arm_lengths[arm], star.arm_weights[arm]);
        for l in 0..n {
            let (pl, el) = partition.end_values(l, arm);
            let ql = (el - pl) / len;
            for m in 0..n {
                let (pm, em) = partition.end_values(m, arm);
                let qm = (em - pm) / len;
                a[l][m] = a[l][m] + rho * ql * qm * len;
                b[l][m] = b[l][m]
                    + rho
                        * (pl * pm * len
                            + (pl * qm + pm * ql) * len * len * half
                            + ql * qm * len * len * len * third);
            }
        }
    }
    (a, b)
}

/// Minimizer of `int (|h'|^2 + gamma |h|^2) rho` over the star with end
/// values `F`, with its centre value and outgoing derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonMinimizer<T> {
    pub center_value: T,
    pub outgoing_derivatives: Vec<T>,
    pub energy: T,
}

pub fn skeleton_minimizer<T: Real>(star: &SkeletonStar<T>, ends: &[T], gamma: u8) -> SkeletonMinimizer<T> {
    let n = star.arms();
    let mut num = T::zero();
    let mut den = T::zero();
    for e in 0..n {
        let (len, rho) = (star.arm_lengths[e], star.arm_weights[e]);
        let (a, b) = if gamma == 0 {
            (rho / len, rho / len)
        } else {
            (rho * len.cosh() / len.sinh(), rho / len.sinh())
        };
        num = num + b * ends[e];
        den = den + a;
    }
    let x = num / den;
    let mut energy = T::zero();
    let mut outgoing = Vec::with_capacity(n);
    for e in 0..n {
        let (len, rho, f) = (star.arm_lengths[e], star.arm_weights[e], ends[e]);
        if gamma == 0 {
            let d = (f - x) / len;
            outgoing.push(d);
            energy = energy + rho * d * d * len;
        } else {
            outgoing.push((f - x * len.cosh()) / len.sinh());
            energy = energy
                + rho * ((f * f + x * x) * len.cosh() - T::lit(2.0) * x * f) / len.sinh();
        }
    }
    SkeletonMinimizer {
        center_value: x,
        outgoing_derivatives: outgoing,
        energy,
    }
}

/// Matrix of the minimized skeleton energy as a quadratic form in the end
/// values.
pub fn skeleton_energy_form<T: Real>(star: &SkeletonStar<T>, gamma: u8) -> SmallMatrix<T> {
    let n = star.arms();
    let mut diag = vec![T::zero(); n];
    let mut coupling = vec![T::zero(); n];
    let mut total = T::zero();
    for e in 0..n {
        let (len, rho) = (star.arm_lengths[e], star.arm_weights[e]);
        if gamma == 0 {
            diag[e] = rho / len;
            coupling[e] = rho / len;
            total = total + rho / len;
        } else {
            diag[e] = rho * len.cosh() / len.sinh();
            coupling[e] = rho / len.sinh();
            total = total + diag[e];
        }
    }
    (0..n)
        .map(|l| {
            (0..n)
                .map(|m| {
                    let d = if l == m { diag[l] } else { T::zero() };
                    d - coupling[l] * coupling[m] / total
                })
                .collect()
        })
        .collect()
}

pub fn to_dmatrix<T: Real>(m: &SmallMatrix<T>) -> DMatrix<f64> {
    let n = m.len();
    DMatrix::from_fn(n, n, |i, j| m[i][j].as_f64())
}

/// Planar connector with its sections; section 0 is the parent side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectorDomain2D {
    pub polygon: Vec<Point>,
    pub sections: Vec<[Point; 2]>,
    pub center: Point,
    shape: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
enum Shape {
    Pentagon {
        parent_width: f64,
        child_ratio: f64,
        apex: f64,
        shoulder_x: f64,
        shoulder_y: f64,
    },
    Rectangle {
        length: f64,
        width: f64,
    },
}

/// Triangulated connector with ordered section node lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectorMesh {
    pub mesh: Mesh2D,
    pub sections: Vec<Vec<usize>>,
    pub segments: usize,
}

impl ConnectorDomain2D {
    /// Symmetric pentagon with base section of width `parent_width` and two
    /// child sections of width `child_ratio * parent_width` lying on the roof
    /// edges, separated near the apex. The apex rises `apex * parent_width`
    /// above the shoulders; the shoulders sit where the child section
    /// midpoints are two parent widths above the base.
    pub fn pentagon(parent_width: f64, child_ratio: f64, apex: f64) -> Result<Self> {
        if !(child_ratio > 0.0 && child_ratio < 1.0) {
            return Err(Error::param("d", format!("child ratio must lie in (0,1), got {child_ratio}")));
        }
        if !(apex > 0.0) {
            return Err(Error::param("c", format!("apex parameter must be positive, got {apex}")));
        }
        if !(parent_width > 0.0) {
            return Err(Error::param("width", "parent width must be positive"));
        }
        let reach = child_ratio + APEX_GAP;
        let xs = if reach * reach - apex * apex > 0.25 {
            (reach * reach - apex * apex).sqrt()
        } else {
            0.5
        };
        let apex_angle = 2.0 * (xs / apex).atan().to_degrees();
        if apex_angle < 40.0 {
            return Err(Error::param(
                "c",
                format!("apex parameter {apex} too large: apex angle {apex_angle:.1} deg < 40 deg"),
            ));
        }
        let slant = (xs * xs + apex * apex).sqrt();
        let ys = 2.0 - 0.5 * child_ratio * apex / slant;
        let w = parent_width;
        let sl = [-xs * w, ys * w];
        let sr = [xs * w, ys * w];
        let top = [0.0, (ys + apex) * w];
        let along = |from: Point, len: f64| {
            let d = [(top[0] - from[0]) / (slant * w), (top[1] - from[1]) / (slant * w)];
            [from[0] + d[0] * len * w, from[1] + d[1] * len * w]
        };
        let inner_l = along(sl, child_ratio);
        let inner_r = along(sr, child_ratio);
        Ok(ConnectorDomain2D {
            polygon: vec![[-0.5 * w, 0.0], [0.5 * w, 0.0], sr, top, sl],
            sections: vec![[[-0.5 * w, 0.0], [0.5 * w, 0.0]], [inner_r, sr], [sl, inner_l]],
            center: [0.0, 2.0 * w],
            shape: Shape::Pentagon {
                parent_width: w,
                child_ratio,
                apex,
                shoulder_x: xs,
                shoulder_y: ys,
            },
        })
    }

    /// Reference pentagon with unit parent section.
    pub fn reference_pentagon(child_ratio: f64, apex: f64) -> Result<Self> {
        Self::pentagon(1.0, child_ratio, apex)
    }

    /// Rectangle with the two short sides as sections.
    pub fn rectangle(length: f64, width: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0) {
            return Err(Error::param("rectangle", "sides must be positive"));
        }
        let (a, b, c, d) = ([-0.5 * width, 0.0], [0.5 * width, 0.0], [0.5 * width, length], [-0.5 * width, length]);
        Ok(ConnectorDomain2D {
            polygon: vec![a, b, c, d],
            sections: vec![[a, b], [d, c]],
            center: [0.0, 0.5 * length],
            shape: Shape::Rectangle { length, width },
        })
    }

    pub fn arms(&self) -> usize {
        self.sections.len()
    }

    pub fn parent_width(&self) -> f64 {
        match self.shape {
            Shape::Pentagon { parent_width, .. } => parent_width,
            Shape::Rectangle { width, .. } => width,
        }
    }

    pub fn section_lengths(&self) -> Vec<f64> {
        self.sections
            .iter()
            .map(|s| ((s[1][0] - s[0][0]).powi(2) + (s[1][1] - s[0][1]).powi(2)).sqrt())
            .collect()
    }

    /// Shoelace area of the polygon.
    pub fn area(&self) -> f64 {
        let p = &self.polygon;
        0.5 * (0..p.len())
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % p.len()]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
    }

    /// Triangulation with `segments` elements on every section.
    pub fn mesh(&self, segments: usize) -> Result<ConnectorMesh> {
        if segments == 0 {
            return Err(Error::Mesh("need at least one segment per section".into()));
        }
        let n = segments;
        let mut nodes: Vec<Point> = Vec::new();
        match self.shape {
            Shape::Pentagon { parent_width: w, child_ratio, apex, shoulder_y, .. } => {
                let bottom = push_segment(&mut nodes, self.sections[0][0], self.sections[0][1], n);
                let [sl, inner_l] = self.sections[2];
                let [inner_r, sr] = self.sections[1];
                let top = self.polygon[3];
                let gap_len = ((top[0] - inner_l[0]).powi(2) + (top[1] - inner_l[1]).powi(2)).sqrt();
                let gap_segs = ((gap_len / (child_ratio * w / n as f64)).round() as usize).max(1);
                let mut roof = push_segment(&mut nodes, sl, inner_l, n);
                let left_end = roof.len();
                extend_segment(&mut nodes, &mut roof, top, gap_segs);
                extend_segment(&mut nodes, &mut roof, inner_r, gap_segs);
                let right_start = roof.len() - 1;
                extend_segment(&mut nodes, &mut roof, sr, n);
                let spacing = 0.5 * (1.0 + child_ratio) / n as f64;
                let rows = (((shoulder_y + 0.5 * apex) / spacing).round() as usize).max(3);
                let levels: Vec<f64> = (0..=rows).map(|r| r as f64 / rows as f64).collect();
                let patch = blend_patch(&mut nodes, &bottom, &roof, &levels)?;
                let sections = vec![
                    bottom.clone(),
                    roof[right_start..].to_vec(),
                    roof[..left_end].to_vec(),
                ];
                finish(nodes, patch.triangles, sections, n)
            }
            Shape::Rectangle { length, width } => {
                let [a, b] = self.sections[0];
                let [d, c] = self.sections[1];
                let bottom = push_segment(&mut nodes, a, b, n);
                let top = push_segment(&mut nodes, d, c, n);
                let rows = ((length / (width / n as f64)).round() as usize).max(1);
                let levels: Vec<f64> = (0..=rows).map(|r| r as f64 / rows as f64).collect();
                let patch = blend_patch(&mut nodes, &bottom, &top, &levels)?;
                finish(nodes, patch.triangles, vec![bottom, top], n)
            }
        }
    }

    /// Triangulation whose section elements do not exceed `h`.
    pub fn mesh_with_size(&self, h: f64) -> Result<ConnectorMesh> {
        let longest = self.section_lengths().into_iter().fold(0.0, f64::max);
        self.mesh((longest / h).ceil().max(1.0) as usize)
    }
}

/// Continues a node row straight to `to`, reusing its last node.
fn extend_segment(nodes: &mut Vec<Point>, row: &mut Vec<usize>, to: Point, segments: usize) {
    let from = nodes[*row.last().expect("row is non-empty")];
    for i in 1..=segments {
        nodes.push(crate::mesh::lerp(from, to, i as f64 / segments as f64));
        row.push(nodes.len() - 1);
    }
}

fn finish(
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    sections: Vec<Vec<usize>>,
    segments: usize,
) -> Result<ConnectorMesh> {
    let mut mesh = Mesh2D { nodes, triangles, boundary: Vec::new() };
    mesh.orient();
    mesh.validate()?;
    mesh.tag_boundary(|_| BoundaryTag::Neumann);
    Ok(ConnectorMesh { mesh, sections, segments })
}

impl ConnectorMesh {
    /// Rows of the section-average operator, `(1/|S_j|) int_{S_j} phi_i`.
    pub fn section_average_rows(&self) -> Vec<Vec<(usize, f64)>> {
        self.sections
            .iter()
            .map(|s| {
                let (w, len) = line_weights(&self.mesh, s);
                s.iter().zip(w).map(|(&i, wi)| (i, wi / len)).collect()
            })
            .collect()
    }

    pub fn section_averages(&self, field: &[f64]) -> Vec<f64> {
        self.section_average_rows()
            .iter()
            .map(|row| row.iter().map(|&(i, w)| w * field[i]).sum())
            .collect()
    }

    pub fn section_nodes(&self) -> Vec<bool> {
        let mut mark = vec![false; self.mesh.nodes.len()];
        for s in &self.sections {
            for &i in s {
                mark[i] = true;
            }
        }
        mark
    }
}

/// Discrete harmonic partition: `phi_e` is 1 on section `e`, 0 on the other
/// sections and satisfies the natural condition elsewhere.
pub fn harmonic_partition_on(cm: &ConnectorMesh) -> Result<Vec<Vec<f64>>> {
    let (k, _, _) = p1_matrices(&cm.mesh, None);
    let fixed = cm.section_nodes();
    let n = cm.mesh.nodes.len();
    let mut free_index = vec![usize::MAX; n];
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    for (f, &i) in free.iter().enumerate() {
        free_index[i] = f;
    }
    let mut b = TripletBuilder::new(free.len());
    for (f, &i) in free.iter().enumerate() {
        for (j, v) in k.row(i) {
            if !fixed[j] {
                b.add(f, free_index[j], v);
            }
        }
    }
    let kii = b.build();
    let factor = if free.is_empty() { None } else { Some(EnvelopeCholesky::factor(&kii)?) };
    let mut fields = Vec::with_capacity(cm.sections.len());
    for e in 0..cm.sections.len() {
        let mut g = vec![0.0; n];
        for &i in &cm.sections[e] {
            g[i] = 1.0;
        }
        if let Some(factor) = &factor {
            let rhs: Vec<f64> = free
                .iter()
                .map(|&i| -k.row(i).map(|(j, v)| v * g[j]).sum::<f64>())
                .collect();
            let x = factor.solve(&rhs);
            for (f, &i) in free.iter().enumerate() {
                g[i] = x[f];
            }
        }
        fields.push(g);
    }
    Ok(fields)
}

pub fn harmonic_partition_2d(domain: &ConnectorDomain2D, h: f64) -> Result<(ConnectorMesh, Vec<Vec<f64>>)> {
    let cm = domain.mesh_with_size(h)?;
    let fields = harmonic_partition_on(&cm)?;
    Ok((cm, fields))
}

/// `(int grad phi_l . grad phi_m, int phi_l phi_m)`.
pub fn connector_form_matrices(cm: &ConnectorMesh, fields: &[Vec<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (k, m, _) = p1_matrices(&cm.mesh, None);
    let n = fields.len();
    let a = DMatrix::from_fn(n, n, |i, j| k.form(&fields[i], &fields[j]));
    let b = DMatrix::from_fn(n, n, |i, j| m.form(&fields[i], &fields[j]));
    (a, b)
}

/// Minimizer of `int |grad g|^2 + gamma |g|^2` with prescribed section averages.
/// The multipliers are signed so that the energy equals `targets . multipliers`
/// (for `gamma = 0`, of the mean-free part of the targets).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedMinimizer {
    pub field: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub energy: f64,
}

fn saddle_solve(
    a: &SparseSymmetric,
    rows: &[Vec<(usize, f64)>],
    targets: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a.dim();
    let c = rows.len();
    let mut s = DMatrix::<f64>::zeros(n + c, n + c);
    for i in 0..n {
        for (j, v) in a.row(i) {
            s[(i, j)] += v;
        }
    }
    for (r, row) in rows.iter().enumerate() {
        for &(i, w) in row {
            s[(n + r, i)] += w;
            s[(i, n + r)] += w;
        }
    }
    let mut rhs = DVector::zeros(n + c);
    for r in 0..c {
        rhs[n + r] = targets[r];
    }
    let x = s
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Invariant("singular section-constrained system".into()))?;
    Ok((x.rows(0, n).iter().copied().collect(), x.rows(n, c).iter().map(|v| -v).collect()))
}

pub fn constrained_minimizer_2d(cm: &ConnectorMesh, targets: &[f64], gamma: u8) -> Result<ConstrainedMinimizer> {
    if targets.len() != cm.sections.len() {
        return Err(Error::param("F", "one target per section required"));
    }
    let (k, m, _) = p1_matrices(&cm.mesh, None);
    let rows = cm.section_average_rows();
    if gamma == 0 {
        // Solve with mean-free data, then shift by the mean.
        let shift = targets.iter().sum::<f64>() / targets.len() as f64;
        let centred: Vec<f64> = targets.iter().map(|t| t - shift).collect();
        let (field, multipliers) = saddle_solve(&k, &rows, &centred)?;
        let energy = k.form(&field, &field);
        Ok(ConstrainedMinimizer {
            field: field.iter().map(|v| v + shift).collect(),
            multipliers,
            energy,
        })
    } else {
        let a = k.add_scaled(&m, 1.0);
        let (field, multipliers) = saddle_solve(&a, &rows, targets)?;
        let energy = a.form(&field, &field);
        Ok(ConstrainedMinimizer { field, multipliers, energy })
    }
}

/// Matrix of the minimized connector energy as a quadratic form in the
/// section averages.
pub fn connector_energy_form(cm: &ConnectorMesh, gamma: u8) -> Result<DMatrix<f64>> {
    let n = cm.sections.len();
    let mut out = DMatrix::zeros(n, n);
    for l in 0..n {
        let mut e = vec![0.0; n];
        e[l] = 1.0;
        let sol = constrained_minimizer_2d(cm, &e, gamma)?;
        for m in 0..n {
            out[(m, l)] = sol.multipliers[m];
        }
    }
    Ok((&out + out.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormMatrices {
    pub a_bar: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Minimized-energy forms on the skeleton star and on the connector.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyForms {
    pub skeleton_harmonic: DMatrix<f64>,
    pub skeleton_mixed: DMatrix<f64>,
    pub connector_harmonic: DMatrix<f64>,
    pub connector_mixed: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalenceConstants {
    pub alpha_a_bar: f64,
    pub alpha_a: f64,
    pub alpha_b_bar: f64,
    pub alpha_b: f64,
    pub beta_a_bar: f64,
    pub beta_b_bar: f64,
    pub beta_a: f64,
    pub beta_b: f64,
}

impl EquivalenceConstants {
    /// Zone multiplier of the upper weight.
    pub fn q_factor(&self) -> f64 {
        (self.alpha_a / self.beta_a_bar).max(self.alpha_b / self.beta_b_bar)
    }

    /// Zone multiplier of the lower weight.
    pub fn p_factor(&self) -> f64 {
        (self.beta_a / self.alpha_a_bar).min(self.beta_b / self.alpha_b_bar)
    }
}

/// Orthonormal basis of the complement of the ones vector (Helmert basis).
pub fn complement_basis(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n - 1);
    for c in 0..n - 1 {
        let i = (c + 1) as f64;
        let scale = 1.0 / (i * (i + 1.0)).sqrt();
        for r in 0..=c {
            q[(r, c)] = scale;
        }
        q[(c + 1, c)] = -i * scale;
    }
    q
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut v: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Extremal eigenvalues of `m` on the complement of the ones vector.
pub fn complement_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let q = complement_basis(m.nrows());
    let v = sorted_eigenvalues(q.transpose() * m * &q);
    (v[0], v[v.len() - 1])
}

pub fn full_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let v = sorted_eigenvalues(m.clone());
    (v[0], v[v.len() - 1])
}

fn alpha_of(extremes: (f64, f64), name: &str) -> Result<f64> {
    let (lo, hi) = extremes;
    if !(lo > 0.0) {
        return Err(Error::Invariant(format!(
            "{name} is not positive definite on the relevant subspace (smallest eigenvalue {lo:e})"
        )));
    }
    Ok(hi.max(1.0 / lo))
}

fn beta_of(extremes: (f64, f64), name: &str) -> Result<f64> {
    let lo = extremes.0;
    if !(lo > 0.0) {
        return Err(Error::Invariant(format!("{name} energy form degenerate ({lo:e})")));
    }
    Ok(lo)
}

pub fn equivalence_constants(m: &FormMatrices, e: &EnergyForms) -> Result<EquivalenceConstants> {
    Ok(EquivalenceConstants {
        alpha_a_bar: alpha_of(complement_extremes(&m.a_bar), "skeleton stiffness")?,
        alpha_a: alpha_of(complement_extremes(&m.a), "connector stiffness")?,
        alpha_b_bar: alpha_of(full_extremes(&m.b_bar), "skeleton mass")?,
        alpha_b: alpha_of(full_extremes(&m.b), "connector mass")?,
        beta_a_bar: beta_of(complement_extremes(&e.skeleton_harmonic), "skeleton harmonic")?,
        beta_b_bar: beta_of(full_extremes(&e.skeleton_mixed), "skeleton mixed")?,
        beta_a: beta_of(complement_extremes(&e.connector_harmonic), "connector harmonic")?,
        beta_b: beta_of(full_extremes(&e.connector_mixed), "connector mixed")?,
    })
}

/// Everything computed for the reference vertex of a regular binary tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectorAnalysis {
    pub star: SkeletonStar<f64>,
    pub domain: ConnectorDomain2D,
    pub mesh: ConnectorMesh,
    pub fields: Vec<Vec<f64>>,
    pub matrices: FormMatrices,
    pub energies: EnergyForms,
    pub constants: EquivalenceConstants,
}

/// Reference star and pentagon for branching 2 in the plane, meshed with
/// `segments` elements per section.
pub fn analyze_reference_vertex(
    branching: usize,
    delta: f64,
    dimension: usize,
    apex: f64,
    segments: usize,
) -> Result<ConnectorAnalysis> {
    if branching != 2 || dimension != 2 {
        return Err(Error::param(
            "k",
            "planar connectors are implemented for branching 2 and N = 2 only",
        ));
    }
    let star = SkeletonStar::regular(branching, delta, dimension);
    star.validate()?;
    let partition = build_partition_1d(&star);
    let (a_bar, b_bar) = skeleton_form_matrices(&star, &partition);
    let domain = ConnectorDomain2D::reference_pentagon(delta, apex)?;
    let mesh = domain.mesh(segments)?;
    let fields = harmonic_partition_on(&mesh)?;
    let (a, b) = connector_form_matrices(&mesh, &fields);
    let matrices = FormMatrices {
        a_bar: to_dmatrix(&a_bar),
        a,
        b_bar: to_dmatrix(&b_bar),
        b,
    };
    let energies = EnergyForms {
        skeleton_harmonic: to_dmatrix(&skeleton_energy_form(&star, 0)),
        skeleton_mixed: to_dmatrix(&skeleton_energy_form(&star, 1)),
        connector_harmonic: connector_energy_form(&mesh, 0)?,
        connector_mixed: connector_energy_form(&mesh, 1)?,
    };
    let constants = equivalence_constants(&matrices, &energies)?;
    Ok(ConnectorAnalysis {
        star,
        domain,
        mesh,
        fields,
        matrices,
        energies,
        constants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_off_ones(&[1.0, 1.0, 1.0]), vec![0.0, 0.0, 0.0]);
        let p = project_off_ones(&[1.0f64, 0.0, 0.0]);
        let expect = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
        for i in 0..3 {
            assert!((p[i] - expect[i]).abs() < 1e-15);
        }
        let c = project_off_ones_complex(&[Complex::new(1.0f64, 2.0), Complex::new(0.0, 0.0)]);
        assert!((c[0] + c[1]).norm() < 1e-15);
    }

    #[test]
    fn partition_center_value() {
        let p = build_partition_1d(&SkeletonStar::<f64>::uniform(2));
        assert!((p.center_value - 1.0 / 3.0).abs() < 1e-15);
        let p1 = build_partition_1d(&SkeletonStar::<f64>::uniform(1));
        assert!((p1.value(0, 0, 0.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((p1.value(0, 0, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!(p1.value(0, 1, 1.0, 1.0).abs() < 1e-15);
    }

    #[test]
    fn skeleton_matrices_for_unit_binary_star() {
        let star = SkeletonStar::<f64>::uniform(2);
        let (a, b) = skeleton_form_matrices(&star, &build_partition_1d(&star));
        for i in 0..3 {
            assert!((a[i][i] - 2.0 / 3.0).abs() < 1e-15);
            assert!((b[i][i] - 5.0 / 9.0).abs() < 1e-15);
            assert!(a[i].iter().sum::<f64>().abs() < 1e-15);
            for j in 0..3 {
                if i != j {
                    assert!((a[i][j] + 1.0 / 3.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn alpha_of_unit_star_is_one() {
        let star = SkeletonStar::<f64>::uniform(2);
        let (a, _) = skeleton_form_matrices(&star, &build_partition_1d(&star));
        let (lo, hi) = complement_extremes(&to_dmatrix(&a));
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_of_diagonal_matrix() {
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0, 3.0]));
        assert!((alpha_of(full_extremes(&b), "b").unwrap() - 3.0).abs() < 1e-12);
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 1.0, 3.0]));
        assert!((alpha_of(full_extremes(&b), "b").unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn non_psd_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(alpha_of(full_extremes(&m), "m").is_err());
    }

    #[test]
    fn skeleton_scaling_law() {
        let star = SkeletonStar::<f64>::regular(2, 0.6, 2);
        let f = [0.3, -1.2, 0.7];
        let e1 = skeleton_minimizer(&star, &f, 0).energy;
        let e_half = skeleton_minimizer(&star.scaled(0.5), &f, 0).energy;
        assert!((e_half - 2.0 * e1).abs() < 1e-12 * e1);
    }

    #[test]
    fn minimizer_is_kirchhoff() {
        let star = SkeletonStar::<f64>::regular(3, 0.7, 2);
        let f = [1.0, 0.2, -0.4, 0.9];
        for gamma in [0u8, 1] {
            let h = skeleton_minimizer(&star, &f, gamma);
            let flux: f64 = h
                .outgoing_derivatives
                .iter()
                .zip(&star.arm_weights)
                .map(|(d, w)| d * w)
                .sum();
            assert!(flux.abs() < 1e-12);
        }
    }

    #[test]
    fn energy_form_reproduces_minimizer_energy() {
        let star = SkeletonStar::<f64>::regular(2, 0.6, 2);
        let f = [0.5, -0.25, 1.5];
        for gamma in [0u8, 1] {
            let form = skeleton_energy_form(&star, gamma);
            let q: f64 = (0..3).map(|i| (0..3).map(|j| f[i] * form[i][j] * f[j]).sum::<f64>()).sum();
            let e = skeleton_minimizer(&star, &f, gamma).energy;
            assert!((q - e).abs() < 1e-12);
        }
    }

    #[test]
    fn pentagon_geometry() {
        let d = ConnectorDomain2D::reference_pentagon(0.6, 0.3).unwrap();
        let len = d.section_lengths();
        assert!((len[0] - 1.0).abs() < 1e-12);
        assert!((len[1] - 0.6).abs() < 1e-12 && (len[2] - 0.6).abs() < 1e-12);
        assert!(d.area() > 0.0);
        assert!(ConnectorDomain2D::reference_pentagon(0.6, 3.0).is_err());
    }

    #[test]
    fn pentagon_mesh_quality() {
        let d = ConnectorDomain2D::reference_pentagon(0.6, 0.3).unwrap();
        for n in [4, 8, 16, 32] {
            let cm = d.mesh(n).unwrap();
            assert!(cm.mesh.min_angle() >= 20.0, "n={n} angle {}", cm.mesh.min_angle());
            assert_eq!(cm.sections[1].len(), n + 1);
        }
    }

    #[test]
    fn rectangle_partition_sums_to_one() {
        let d = ConnectorDomain2D::rectangle(2.0, 1.0).unwrap();
        let (cm, phi) = harmonic_partition_2d(&d, 0.25).unwrap();
        for i in 0..cm.mesh.nodes.len() {
            assert!((phi[0][i] + phi[1][i] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_targets_give_constant_field() {
        let d = ConnectorDomain2D::reference_pentagon(0.6, 0.3).unwrap();
        let cm = d.mesh(4).unwrap();
        let sol = constrained_minimizer_2d(&cm, &[2.0, 2.0, 2.0], 0).unwrap();
        assert!(sol.field.iter().all(|v| (v - 2.0).abs() < 1e-10));
        assert!(sol.energy.abs() < 1e-12);
        assert!(sol.multipliers.iter().all(|k| k.abs() < 1e-10));
    }
}
