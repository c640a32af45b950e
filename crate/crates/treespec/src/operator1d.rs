//! Width-weighted Schrodinger operators `-(rho_a u')'/rho_b + W` on a
//! truncated regular tree: weight and potential profiles, P1 assembly with
//! Kirchhoff vertex conditions, the radial decomposition into interval
//! operators and the discreteness and tail checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connector::EquivalenceConstants;
use crate::eigen::{merge_spectra, Spectrum};
use crate::error::{Error, Result};
use crate::sparse::TripletBuilder;
use crate::system::AssembledSystem;
use crate::tree::{EdgeId, TailMode, Tree};

const GAUSS2: [(f64, f64); 2] = [(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)];
const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Piecewise-constant radial weight: a base value per generation, multiplied
/// by a factor on the skeleton neighbourhood of each interior vertex.
///
/// Zone `j` surrounds the vertices at the far end of generation-`j` edges; it
/// covers the last `zone_radius[j]` of those edges and the first
/// `zone_radius[j]` of every child edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightProfile {
    pub base: Vec<f64>,
    pub zone_radius: Vec<f64>,
    pub zone_factor: Vec<f64>,
    /// Two-sided constant `c` with `rho*/c <= rho <= c rho*`.
    pub envelope: f64,
}

impl WeightProfile {
    /// The reference weight `rho* = delta^((N-1) j) |Omega|`.
    pub fn rho_star(tree: &Tree<f64>) -> Self {
        let depth = tree.depth();
        WeightProfile {
            base: (0..=depth).map(|j| tree.rho_star_generation(j)).collect(),
            zone_radius: vec![0.0; depth],
            zone_factor: vec![1.0; depth],
            envelope: 1.0,
        }
    }

    /// `rho*` multiplied by `factors[j]` on zones of radius `radii[j]`.
    pub fn zoned(tree: &Tree<f64>, radii: &[f64], factors: &[f64]) -> Result<Self> {
        let depth = tree.depth();
        if radii.len() != depth || factors.len() != depth {
            return Err(Error::param("zones", format!("expected {depth} zone radii and factors")));
        }
        if factors.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::param("zone_factor", "zone factors must be positive"));
        }
        if radii.iter().any(|&z| !(z >= 0.0)) {
            return Err(Error::param("zone_radius", "zone radii must be nonnegative"));
        }
        for i in 0..=depth {
            let before = if i > 0 { radii[i - 1] } else { 0.0 };
            let after = if i < depth { radii[i] } else { 0.0 };
            if before + after > tree.edge_length(i) * (1.0 + 1e-12) {
                return Err(Error::Domain(format!(
                    "vertex zones overlap on generation {i}: {before} + {after} exceeds edge length {}",
                    tree.edge_length(i)
                )));
            }
        }
        let envelope = factors.iter().fold(1.0f64, |c, &f| c.max(f).max(1.0 / f));
        Ok(WeightProfile {
            base: (0..=depth).map(|j| tree.rho_star_generation(j)).collect(),
            zone_radius: radii.to_vec(),
            zone_factor: factors.to_vec(),
            envelope,
        })
    }

    /// Uniform factor on zones of radius `eps * delta^j`.
    pub fn with_scaled_zones(tree: &Tree<f64>, eps: f64, factor: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::param("eps", format!("must lie in (0,1), got {eps}")));
        }
        let delta = tree.spec().width_ratio;
        let depth = tree.depth();
        let radii: Vec<f64> = (0..depth).map(|j| eps * delta.powi(j as i32)).collect();
        Self::zoned(tree, &radii, &vec![factor; depth])
    }

    pub fn depth(&self) -> usize {
        self.base.len() - 1
    }

    /// Breakpoints `0 <= a <= b <= L` inside a generation-`i` edge of length
    /// `len`; the weight is constant on `[0,a)`, `[a,b)` and `[b,L]`.
    pub fn breakpoints(&self, generation: usize, len: f64) -> (f64, f64) {
        let a = if generation > 0 { self.zone_radius[generation - 1] } else { 0.0 };
        let b = if generation < self.depth() { len - self.zone_radius[generation] } else { len };
        (a, b)
    }

    /// Value at arclength `s` from the start of a generation-`i` edge of length `len`.
    pub fn value(&self, generation: usize, s: f64, len: f64) -> f64 {
        let (a, b) = self.breakpoints(generation, len);
        let mut v = self.base[generation];
        if generation > 0 && s < a {
            v *= self.zone_factor[generation - 1];
        }
        if generation < self.depth() && s >= b {
            v *= self.zone_factor[generation];
        }
        v
    }

    fn check(&self, tree: &Tree<f64>, name: &str) -> Result<()> {
        if self.depth() != tree.depth() {
            return Err(Error::param(name, "profile depth does not match the tree"));
        }
        if self.base.iter().chain(&self.zone_factor).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::param(name, "weights must be positive"));
        }
        Ok(())
    }
}

/// Upper weight `max(alpha^A/beta^Abar, alpha^B/beta^Bbar) rho*` on zones of radius `eps delta^j`.
pub fn build_rho_q(tree: &Tree<f64>, constants: &EquivalenceConstants, eps: f64) -> Result<WeightProfile> {
    WeightProfile::with_scaled_zones(tree, eps, constants.q_factor())
}

/// Lower weight `min(beta^A/alpha^Abar, beta^B/alpha^Bbar) rho*` on zones of radius `eps delta^j`.
pub fn build_rho_p(tree: &Tree<f64>, constants: &EquivalenceConstants, eps: f64) -> Result<WeightProfile> {
    WeightProfile::with_scaled_zones(tree, eps, constants.p_factor())
}

/// Radial potential `W(t)`, `t` the distance from the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PotentialProfile {
    Constant { value: f64 },
    /// `sum_i coefficients[i] t^i`.
    Polynomial { coefficients: Vec<f64> },
    /// `offset + amplitude cos(frequency t + phase)`.
    Cosine {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Piecewise-linear per generation in the local arclength.
    Table { positions: Vec<Vec<f64>>, values: Vec<Vec<f64>> },
}

impl Default for PotentialProfile {
    fn default() -> Self {
        PotentialProfile::Constant { value: 0.0 }
    }
}

impl PotentialProfile {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, PotentialProfile::Constant { value } if *value == 0.0)
    }

    /// `W` at local arclength `s` on a generation-`i` edge starting at radius `t0`.
    pub fn value(&self, generation: usize, t0: f64, s: f64) -> f64 {
        let t = t0 + s;
        match self {
            PotentialProfile::Constant { value } => *value,
            PotentialProfile::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, &c| acc * t + c)
            }
            PotentialProfile::Cosine { offset, amplitude, frequency, phase } => {
                offset + amplitude * (frequency * t + phase).cos()
            }
            PotentialProfile::Table { positions, values } => {
                let (p, v) = (&positions[generation], &values[generation]);
                if s <= p[0] {
                    return v[0];
                }
                let i = p.partition_point(|&x| x <= s);
                if i >= p.len() {
                    return v[v.len() - 1];
                }
                let w = (s - p[i - 1]) / (p[i] - p[i - 1]);
                v[i - 1] + w * (v[i] - v[i - 1])
            }
        }
    }

    /// Bound `C_W >= |W|` on `[0, radius]`.
    pub fn bound(&self, radius: f64) -> f64 {
        match self {
            PotentialProfile::Constant { value } => value.abs(),
            PotentialProfile::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .map(|(i, c)| c.abs() * radius.powi(i as i32))
                .sum(),
            PotentialProfile::Cosine { offset, amplitude, .. } => offset.abs() + amplitude.abs(),
            PotentialProfile::Table { values, .. } => {
                values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
            }
        }
    }

    /// `W + shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        match self {
            PotentialProfile::Constant { value } => PotentialProfile::Constant { value: value + shift },
            PotentialProfile::Polynomial { coefficients } => {
                let mut c = coefficients.clone();
                if c.is_empty() {
                    c.push(0.0);
                }
                c[0] += shift;
                PotentialProfile::Polynomial { coefficients: c }
            }
            PotentialProfile::Cosine { offset, amplitude, frequency, phase } => PotentialProfile::Cosine {
                offset: offset + shift,
                amplitude: *amplitude,
                frequency: *frequency,
                phase: *phase,
            },
            PotentialProfile::Table { positions, values } => PotentialProfile::Table {
                positions: positions.clone(),
                values: values.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect(),
            },
        }
    }

    fn validate(&self, tree: &Tree<f64>) -> Result<()> {
        if let PotentialProfile::Table { positions, values } = self {
            if positions.len() != tree.depth() + 1 || values.len() != positions.len() {
                return Err(Error::param("W", "table needs one row per generation"));
            }
            for (p, v) in positions.iter().zip(values) {
                if p.is_empty() || p.len() != v.len() || p.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::param("W", "table rows must be increasing and matched"));
                }
            }
        }
        Ok(())
    }
}

/// Node positions (local arclength) on one edge of each generation; all edges
/// of a generation share them, so vertex degrees of freedom are conforming.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mesh1D {
    pub positions: Vec<Vec<f64>>,
}

impl Mesh1D {
    /// Uniform nodes with spacing at most `h`, refined so that every weight
    /// breakpoint of `profiles` is a node.
    pub fn uniform(tree: &Tree<f64>, h: f64, profiles: &[&WeightProfile]) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::param("h", "mesh size must be positive"));
        }
        let positions = (0..=tree.depth())
            .map(|i| {
                let len = tree.edge_length(i);
                let mut cuts = vec![0.0, len];
                for p in profiles {
                    let (a, b) = p.breakpoints(i, len);
                    cuts.push(a);
                    cuts.push(b);
                }
                cuts.sort_by(f64::total_cmp);
                cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * len);
                let mut nodes = vec![0.0];
                for w in cuts.windows(2) {
                    let n = ((w[1] - w[0]) / h).ceil().max(1.0) as usize;
                    for s in 1..=n {
                        nodes.push(w[0] + (w[1] - w[0]) * s as f64 / n as f64);
                    }
                }
                *nodes.last_mut().expect("non-empty") = len;
                nodes
            })
            .collect();
        Ok(Mesh1D { positions })
    }

    pub fn from_positions(tree: &Tree<f64>, positions: Vec<Vec<f64>>) -> Result<Self> {
        let m = Mesh1D { positions };
        m.check(tree)?;
        Ok(m)
    }

    pub fn segments(&self, generation: usize) -> usize {
        self.positions[generation].len() - 1
    }

    pub fn max_spacing(&self) -> f64 {
        self.positions
            .iter()
            .flat_map(|p| p.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max)
    }

    fn check(&self, tree: &Tree<f64>) -> Result<()> {
        if self.positions.len() != tree.depth() + 1 {
            return Err(Error::Mesh("one node row per generation required".into()));
        }
        for (i, p) in self.positions.iter().enumerate() {
            let len = tree.edge_length(i);
            if p.len() < 2
                || p[0] != 0.0
                || (p[p.len() - 1] - len).abs() > 1e-12 * len
                || p.windows(2).any(|w| w[1] <= w[0])
            {
                return Err(Error::Mesh(format!(
                    "generation {i} nodes must increase from 0 to the edge length {len}"
                )));
            }
        }
        Ok(())
    }

    /// Global node numbering on the full tree: the root vertex is 0, the far
    /// vertex of edge `f` is `1 + f`, interior nodes follow edge by edge.
    pub fn layout(&self, tree: &Tree<f64>) -> TreeLayout {
        let edges = tree.edge_count();
        let mut interior_start = Vec::with_capacity(edges);
        let mut next = 1 + edges;
        for e in tree.edges() {
            interior_start.push(next);
            next += self.segments(e.generation) - 1;
        }
        TreeLayout { interior_start, nodes: next }
    }

    /// Node list of one edge in the full-tree numbering.
    pub fn edge_nodes(&self, tree: &Tree<f64>, layout: &TreeLayout, edge: EdgeId) -> Vec<usize> {
        let f = tree.flat_index(edge);
        let start = match edge.parent(tree.branching()) {
            Some(p) => 1 + tree.flat_index(p),
            None => 0,
        };
        let n = self.segments(edge.generation);
        let mut out = Vec::with_capacity(n + 1);
        out.push(start);
        out.extend((0..n - 1).map(|l| layout.interior_start[f] + l));
        out.push(1 + f);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeLayout {
    pub interior_start: Vec<usize>,
    pub nodes: usize,
}

/// Element matrices `(stiffness, mass)` of every element of one generation,
/// weights integrated exactly and `W` by 2-point Gauss on each piece where
/// the weights are constant.
fn element_matrices(
    tree: &Tree<f64>,
    alpha: &WeightProfile,
    beta: &WeightProfile,
    potential: &PotentialProfile,
    mesh: &Mesh1D,
    generation: usize,
    scale: f64,
) -> Vec<([[f64; 2]; 2], [[f64; 2]; 2])> {
    let len = tree.edge_length(generation);
    let t0 = tree.shell_start(generation);
    let mut cuts = vec![];
    for p in [alpha, beta] {
        let (a, b) = p.breakpoints(generation, len);
        cuts.push(a);
        cuts.push(b);
    }
    mesh.positions[generation]
        .windows(2)
        .map(|w| {
            let (x0, x1) = (w[0], w[1]);
            let h = x1 - x0;
            let mut pts = vec![x0, x1];
            pts.extend(cuts.iter().copied().filter(|&c| c > x0 && c < x1));
            pts.sort_by(f64::total_cmp);
            let mut k = [[0.0; 2]; 2];
            let mut m = [[0.0; 2]; 2];
            for piece in pts.windows(2) {
                let (c, d) = (piece[0], piece[1]);
                if d <= c {
                    continue;
                }
                let mid = 0.5 * (c + d);
                let ra = alpha.value(generation, mid, len) * scale;
                let rb = beta.value(generation, mid, len) * scale;
                let stiff = ra * (d - c) / (h * h);
                k[0][0] += stiff;
                k[1][1] += stiff;
                k[0][1] -= stiff;
                k[1][0] -= stiff;
                for (xi, wq) in GAUSS2 {
                    let x = mid + 0.5 * (d - c) * xi;
                    let wt = 0.5 * (d - c) * wq * rb;
                    let phi = [(x1 - x) / h, (x - x0) / h];
                    let pot = potential.value(generation, t0, x);
                    for a in 0..2 {
                        for b in 0..2 {
                            m[a][b] += wt * phi[a] * phi[b];
                            k[a][b] += wt * pot * phi[a] * phi[b];
                        }
                    }
                }
            }
            (k, m)
        })
        .collect()
}

fn check_inputs(
    tree: &Tree<f64>,
    alpha: &WeightProfile,
    beta: &WeightProfile,
    potential: &PotentialProfile,
    mesh: &Mesh1D,
) -> Result<()> {
    alpha.check(tree, "rho_alpha")?;
    beta.check(tree, "rho_beta")?;
    potential.validate(tree)?;
    mesh.check(tree)
}

/// P1 discretization of the form `sum_e int rho_a u'v' + W rho_b u v` on the
/// full truncated tree. The root is Dirichlet; vertex continuity comes from
/// shared nodes and Kirchhoff conditions are natural.
pub fn assemble_1d(
    tree: &Tree<f64>,
    alpha: &WeightProfile,
    beta: &WeightProfile,
    potential: &PotentialProfile,
    mesh: &Mesh1D,
) -> Result<AssembledSystem> {
    check_inputs(tree, alpha, beta, potential, mesh)?;
    let layout = mesh.layout(tree);
    let per_generation: Vec<_> = (0..=tree.depth())
        .into_par_iter()
        .map(|i| element_matrices(tree, alpha, beta, potential, mesh, i, 1.0))
        .collect();
    let mut k = TripletBuilder::new(layout.nodes);
    let mut m = TripletBuilder::new(layout.nodes);
    for edge in tree.edges() {
        let nodes = mesh.edge_nodes(tree, &layout, edge);
        for (e, (ke, me)) in per_generation[edge.generation].iter().enumerate() {
            let idx = [nodes[e], nodes[e + 1]];
            for a in 0..2 {
                for b in 0..2 {
                    k.add(idx[a], idx[b], ke[a][b]);
                    m.add(idx[a], idx[b], me[a][b]);
                }
            }
        }
    }
    let mut fixed = vec![false; layout.nodes];
    fixed[0] = true;
    Ok(AssembledSystem::from_full(&k.build(), &m.build(), &fixed))
}

/// Node positions (distance from the root) of the radial mesh starting at
/// generation `from`.
pub fn radial_positions(tree: &Tree<f64>, mesh: &Mesh1D, from: usize) -> Vec<f64> {
    let mut out = vec![tree.shell_start(from)];
    for i in from..=tree.depth() {
        let t0 = tree.shell_start(i);
        out.extend(mesh.positions[i][1..].iter().map(|s| t0 + s));
    }
    out
}

/// Interval operator on `[t_j, R)` with weights multiplied by the relative
/// counting function `k^(i-j)`; Dirichlet at the left end (the root for `j = 0`).
pub fn radial_component_operator(
    tree: &Tree<f64>,
    alpha: &WeightProfile,
    beta: &WeightProfile,
    potential: &PotentialProfile,
    vertex_generation: usize,
    mesh: &Mesh1D,
) -> Result<AssembledSystem> {
    check_inputs(tree, alpha, beta, potential, mesh)?;
    let j = vertex_generation;
    if j > tree.depth() {
        return Err(Error::param("j", format!("vertex generation {j} exceeds depth {}", tree.depth())));
    }
    let k_branch = tree.branching() as f64;
    let n: usize = 1 + (j..=tree.depth()).map(|i| mesh.segments(i)).sum::<usize>();
    let mut kb = TripletBuilder::new(n);
    let mut mb = TripletBuilder::new(n);
    let mut offset = 0;
    for i in j..=tree.depth() {
        let g = k_branch.powi((i - j) as i32);
        for (ke, me) in element_matrices(tree, alpha, beta, potential, mesh, i, g) {
            for a in 0..2 {
                for b in 0..2 {
                    kb.add(offset + a, offset + b, ke[a][b]);
                    mb.add(offset + a, offset + b, me[a][b]);
                }
            }
            offset += 1;
        }
    }
    let mut fixed = vec![false; n];
    fixed[0] = true;
    Ok(AssembledSystem::from_full(&kb.build(), &mb.build(), &fixed))
}

/// Multiplicity of the generation-`j` component: `k^(j-1)(k-1)`, and 1 for the root.
pub fn component_multiplicity(branching: usize, j: usize) -> usize {
    if j == 0 {
        1
    } else {
        branching.pow(j as u32 - 1) * (branching - 1)
    }
}

/// Spectrum of the full-tree operator assembled from the root component and
/// one component per vertex generation, with multiplicities.
pub fn radial_decomposition_spectrum(
    tree: &Tree<f64>,
    alpha: &WeightProfile,
    beta: &WeightProfile,
    potential: &PotentialProfile,
    mesh: &Mesh1D,
    count: usize,
    tol: f64,
) -> Result<Spectrum> {
    let last = if tree.branching() == 1 { 0 } else { tree.depth() };
    let parts: Vec<(Spectrum, usize)> = (0..=last)
        .into_par_iter()
        .map(|j| {
            let sys = radial_component_operator(tree, alpha, beta, potential, j, mesh)?;
            let spec = if sys.dofs() == 0 {
                Spectrum::default()
            } else {
                sys.eigenpairs(count, tol)?
            };
            Ok((spec, component_multiplicity(tree.branching(), j)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_spectra(&parts).truncated(count))
}

/// Outcome of the growth test for `g rho` along the tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretenessReport {
    pub holds: bool,
    /// Infimum of `g(t)rho(t)/(g(s)rho(s))` over `s <= t` on the truncated tree.
    pub truncated_constant: f64,
    /// Constant for the infinite tree: the truncated one when the growth
    /// persists, zero otherwise.
    pub best_constant: f64,
    /// Asymptotic ratio of `g rho` between consecutive generations.
    pub generation_factor: f64,
}

pub fn discreteness_condition_check(tree: &Tree<f64>, rho: &WeightProfile) -> Result<DiscretenessReport> {
    rho.check(tree, "rho")?;
    let k = tree.branching() as f64;
    let mut running_max = 0.0f64;
    let mut inf = f64::INFINITY;
    for i in 0..=tree.depth() {
        let len = tree.edge_length(i);
        let (a, b) = rho.breakpoints(i, len);
        let g = k.powi(i as i32);
        for s in [0.5 * a, 0.5 * (a + b), 0.5 * (b + len)] {
            let h = g * rho.value(i, s, len);
            running_max = running_max.max(h);
            inf = inf.min(h / running_max);
        }
    }
    let depth = tree.depth();
    let factor = if depth >= 1 {
        k * rho.base[depth] / rho.base[depth - 1]
    } else {
        tree.spec().generation_factor()
    };
    let holds = factor >= 1.0 - 1e-12;
    Ok(DiscretenessReport {
        holds,
        truncated_constant: inf,
        best_constant: if holds { inf } else { 0.0 },
        generation_factor: factor,
    })
}

/// Integrals `(int |u|^2 rho_b over generations >= from, int |u'|^2 rho_a)`
/// of a nodal field in the full-tree numbering of `mesh`.
fn integrals(
    tree: &Tree<f64>,
    alpha: &WeightProfile,
    beta: &WeightProfile,
    mesh: &Mesh1D,
    u: &[f64],
    from: usize,
) -> (f64, f64) {
    let layout = mesh.layout(tree);
    let mut tail = 0.0;
    let mut energy = 0.0;
    for edge in tree.edges() {
        let i = edge.generation;
        let len = tree.edge_length(i);
        let nodes = mesh.edge_nodes(tree, &layout, edge);
        let pos = &mesh.positions[i];
        let (a0, a1) = alpha.breakpoints(i, len);
        let (b0, b1) = beta.breakpoints(i, len);
        for e in 0..nodes.len() - 1 {
            let (x0, x1) = (pos[e], pos[e + 1]);
            let (u0, u1) = (u[nodes[e]], u[nodes[e + 1]]);
            let du = (u1 - u0) / (x1 - x0);
            let mut cuts = vec![x0, x1];
            cuts.extend([a0, a1, b0, b1].into_iter().filter(|&c| c > x0 && c < x1));
            cuts.sort_by(f64::total_cmp);
            for piece in cuts.windows(2) {
                let (c, d) = (piece[0], piece[1]);
                let mid = 0.5 * (c + d);
                energy += (d - c) * alpha.value(i, mid, len) * du * du;
                if i >= from {
                    let rb = beta.value(i, mid, len);
                    for (xi, wq) in GAUSS2 {
                        let x = mid + 0.5 * (d - c) * xi;
                        let val = u0 + (x - x0) * du;
                        tail += 0.5 * (d - c) * wq * rb * val * val;
                    }
                }
            }
        }
    }
    (tail, energy)
}

/// `(int |u|^2 rho_b, int |u'|^2 rho_a)` for a nodal field in the full-tree
/// numbering of `mesh`, the root value included.
pub fn weighted_norms(tree: &Tree<f64>, alpha: &WeightProfile, beta: &WeightProfile, mesh: &Mesh1D, u: &[f64]) -> (f64, f64) {
    integrals(tree, alpha, beta, mesh, u, 0)
}

/// `int_{tail} |u|^2 rho_b / (R(j)^2 int |u'|^2 rho_a)` with `R(j)` the
/// radius of the subtrees beyond generation `j`.
pub fn tail_bound_check(
    tree: &Tree<f64>,
    alpha: &WeightProfile,
    beta: &WeightProfile,
    mesh: &Mesh1D,
    u: &[f64],
    j: usize,
) -> Result<f64> {
    if u.len() != mesh.layout(tree).nodes {
        return Err(Error::param("u", "field does not match the mesh"));
    }
    if u[0] != 0.0 {
        return Err(Error::param("u", "field must vanish at the root"));
    }
    let (tail, energy) = integrals(tree, alpha, beta, mesh, u, j + 1);
    if tail == 0.0 {
        return Ok(0.0);
    }
    let r = tree.tail_radius(j, TailMode::Truncated);
    Ok(tail / (r * r * energy))
}

/// Contract value `c^2/C` for [`tail_bound_check`].
pub fn tail_bound(tree: &Tree<f64>, alpha: &WeightProfile, beta: &WeightProfile) -> Result<f64> {
    let c = alpha.envelope.max(beta.envelope);
    let report = discreteness_condition_check(tree, &WeightProfile::rho_star(tree))?;
    Ok(c * c / report.truncated_constant)
}

/// `int p |u|^2 / int rho g |u'|^2` with `p = rho g / (R (R - t))` for a
/// field on the radial node positions `positions` (starting at 0).
pub fn hardy_inequality_check(tree: &Tree<f64>, rho: &WeightProfile, positions: &[f64], u: &[f64]) -> Result<f64> {
    rho.check(tree, "rho")?;
    if positions.len() != u.len() || positions.len() < 2 {
        return Err(Error::param("u", "one value per radial node required"));
    }
    let radius = tree.radius();
    if u[u.len() - 1] != 0.0 {
        return Err(Error::Domain("u must vanish near the far end of the radial interval".into()));
    }
    let k = tree.branching() as f64;
    let weight = |t: f64| {
        let i = tree.generation_at(t.min(radius * (1.0 - 1e-15))).unwrap_or(tree.depth());
        let s = t - tree.shell_start(i);
        rho.value(i, s, tree.edge_length(i)) * k.powi(i as i32)
    };
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for e in 0..positions.len() - 1 {
        let (x0, x1) = (positions[e], positions[e + 1]);
        let du = (u[e + 1] - u[e]) / (x1 - x0);
        for (xi, wq) in GAUSS4 {
            let x = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * xi;
            let w = 0.5 * (x1 - x0) * wq;
            let val = u[e] + (x - x0) * du;
            let rg = weight(x);
            lhs += w * rg / (radius * (radius - x)) * val * val;
            rhs += w * rg * du * du;
        }
    }
    if lhs == 0.0 {
        return Ok(0.0);
    }
    Ok(lhs / rhs)
}

/// Sum of outgoing weighted slopes `sum_e rho_a u'_e(v)` at every interior
/// vertex, from one-sided differences of a full-tree nodal field.
pub fn kirchhoff_residuals(tree: &Tree<f64>, alpha: &WeightProfile, mesh: &Mesh1D, u: &[f64]) -> Vec<f64> {
    let layout = mesh.layout(tree);
    let k = tree.branching();
    let mut out = Vec::new();
    for edge in tree.edges().filter(|e| e.generation < tree.depth()) {
        let i = edge.generation;
        let nodes = mesh.edge_nodes(tree, &layout, edge);
        let pos = &mesh.positions[i];
        let n = nodes.len();
        let len = tree.edge_length(i);
        let mut flux = alpha.value(i, len, len) * (u[nodes[n - 2]] - u[nodes[n - 1]]) / (pos[n - 1] - pos[n - 2]);
        for c in 0..k {
            let child = edge.child(k, c);
            let cn = mesh.edge_nodes(tree, &layout, child);
            let cp = &mesh.positions[i + 1];
            flux += alpha.value(i + 1, 0.0, tree.edge_length(i + 1)) * (u[cn[1]] - u[cn[0]]) / cp[1];
        }
        out.push(flux);
    }
    out
}

/// Potential on the skeleton from cross-section averages of a planar
/// potential: `section_average(i, s)` on edge parts, and inside the zone of
/// radius `zone_radius[j]` the partition-of-unity interpolation of the
/// averages `b_e` taken on the zone boundary.
pub fn average_potential_1d(
    tree: &Tree<f64>,
    zone_radius: &[f64],
    mesh: &Mesh1D,
    section_average: impl Fn(usize, f64) -> f64,
) -> Result<PotentialProfile> {
    mesh.check(tree)?;
    let depth = tree.depth();
    if zone_radius.len() != depth {
        return Err(Error::param("zone_radius", format!("expected {depth} radii")));
    }
    let arms = (tree.branching() + 1) as f64;
    let k = tree.branching() as f64;
    let mut values = Vec::with_capacity(depth + 1);
    for i in 0..=depth {
        let len = tree.edge_length(i);
        let row = mesh.positions[i]
            .iter()
            .map(|&s| {
                // Zone before the edge (vertex j = i - 1) and after it (j = i).
                if i > 0 && s < zone_radius[i - 1] {
                    let z = zone_radius[i - 1];
                    let parent = section_average(i - 1, tree.edge_length(i - 1) - z);
                    let child = section_average(i, z);
                    let mean = (parent + k * child) / arms;
                    mean * (1.0 - s / z) + child * s / z
                } else if i < depth && s > len - zone_radius[i] {
                    let z = zone_radius[i];
                    let parent = section_average(i, len - z);
                    let child = section_average(i + 1, z);
                    let mean = (parent + k * child) / arms;
                    let sigma = len - s;
                    mean * (1.0 - sigma / z) + parent * sigma / z
                } else {
                    section_average(i, s)
                }
            })
            .collect();
        values.push(row);
    }
    Ok(PotentialProfile::Table { positions: mesh.positions.clone(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeSpec;
    use std::f64::consts::PI;

    fn interval() -> Tree<f64> {
        Tree::build(TreeSpec::new(1, 1.0, 0.5, 0.5, 0)).unwrap()
    }

    fn binary(depth: usize, delta: f64) -> Tree<f64> {
        Tree::build(TreeSpec::new(2, 0.5, 0.5, delta, depth)).unwrap()
    }

    #[test]
    fn interval_spectrum() {
        let t = interval();
        let rho = WeightProfile::rho_star(&t);
        let mesh = Mesh1D::uniform(&t, 1.0 / 256.0, &[]).unwrap();
        let sys = assemble_1d(&t, &rho, &rho, &PotentialProfile::zero(), &mesh).unwrap();
        let s = sys.eigenpairs(2, 1e-10).unwrap();
        assert!((s.values[0] / (PI / 2.0).powi(2) - 1.0).abs() < 1e-3);
        assert!((s.values[1] / (1.5 * PI).powi(2) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_potential_shifts_spectrum() {
        let t = binary(2, 0.6);
        let rho = WeightProfile::rho_star(&t);
        let mesh = Mesh1D::uniform(&t, 0.02, &[]).unwrap();
        let a = assemble_1d(&t, &rho, &rho, &PotentialProfile::zero(), &mesh).unwrap().eigenpairs(5, 1e-10).unwrap();
        let b = assemble_1d(&t, &rho, &rho, &PotentialProfile::Constant { value: 2.5 }, &mesh)
            .unwrap()
            .eigenpairs(5, 1e-10)
            .unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((y - x - 2.5).abs() < 1e-8 * y.max(1.0));
        }
    }

    #[test]
    fn zone_factor_values() {
        let t = binary(2, 0.6);
        let w = WeightProfile::zoned(&t, &[0.05, 0.03], &[2.5, 2.5]).unwrap();
        let len1 = t.edge_length(1);
        assert!((w.value(1, 0.5 * len1, len1) - 0.6).abs() < 1e-15);
        assert!((w.value(1, 0.01, len1) - 1.5).abs() < 1e-15);
        assert!((w.value(1, len1 - 0.01, len1) - 1.5).abs() < 1e-15);
        assert_eq!(w.envelope, 2.5);
        assert!(WeightProfile::zoned(&t, &[0.3, 0.3], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn discreteness_examples() {
        let ok = binary(6, 0.6);
        let r = discreteness_condition_check(&ok, &WeightProfile::rho_star(&ok)).unwrap();
        assert!(r.holds && (r.best_constant - 1.0).abs() < 1e-12);
        assert!((r.generation_factor - 1.2).abs() < 1e-12);
        let bad = binary(6, 0.4);
        let r = discreteness_condition_check(&bad, &WeightProfile::rho_star(&bad)).unwrap();
        assert!(!r.holds && r.best_constant == 0.0);
        let edge = binary(6, 0.5);
        let r = discreteness_condition_check(&edge, &WeightProfile::rho_star(&edge)).unwrap();
        assert!(r.holds && (r.best_constant - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layout_counts_nodes() {
        let t = binary(2, 0.6);
        let mesh = Mesh1D::uniform(&t, 0.1, &[]).unwrap();
        let layout = mesh.layout(&t);
        let expected = 1 + (0..=2).map(|i| t.edges_in_generation(i) * mesh.segments(i)).sum::<usize>();
        assert_eq!(layout.nodes, expected);
    }

    #[test]
    fn path_graph_decomposition_is_trivial() {
        let t = Tree::build(TreeSpec::new(1, 0.5, 0.5, 0.7, 3)).unwrap();
        let rho = WeightProfile::rho_star(&t);
        let mesh = Mesh1D::uniform(&t, 0.01, &[]).unwrap();
        let direct = assemble_1d(&t, &rho, &rho, &PotentialProfile::zero(), &mesh).unwrap().eigenpairs(6, 1e-12).unwrap();
        let dec = radial_decomposition_spectrum(&t, &rho, &rho, &PotentialProfile::zero(), &mesh, 6, 1e-12).unwrap();
        for (a, b) in direct.values.iter().zip(&dec.values) {
            assert!((a - b).abs() < 1e-9 * a);
        }
    }

    #[test]
    fn hardy_ratio_is_scale_free() {
        let t = interval();
        let rho = WeightProfile::rho_star(&t);
        let pos: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let hat: Vec<f64> = pos
            .iter()
            .map(|&x| if x <= 0.5 { x / 0.5 } else if x <= 0.9 { (0.9 - x) / 0.4 } else { 0.0 })
            .collect();
        let r1 = hardy_inequality_check(&t, &rho, &pos, &hat).unwrap();
        let twice: Vec<f64> = hat.iter().map(|v| 2.0 * v).collect();
        let r2 = hardy_inequality_check(&t, &rho, &pos, &twice).unwrap();
        assert!(r1.is_finite() && r1 > 0.0);
        assert!((r1 - r2).abs() < 1e-12 * r1);
        assert_eq!(hardy_inequality_check(&t, &rho, &pos, &vec![0.0; pos.len()]).unwrap(), 0.0);
    }

    #[test]
    fn averaged_constant_stays_constant() {
        let t = binary(2, 0.6);
        let mesh = Mesh1D::uniform(&t, 0.01, &[]).unwrap();
        let w = average_potential_1d(&t, &[0.05, 0.03], &mesh, |_, _| 3.0).unwrap();
        for i in 0..=2 {
            for &s in &mesh.positions[i] {
                assert!((w.value(i, t.shell_start(i), s) - 3.0).abs() < 1e-14);
            }
        }
    }
}
