//! Executable versions of the convergence and bound statements: eigenvalue
//! sandwiches between the skeleton and the inflated tree, weight
//! convergence, eigenfunction projection, kernel gaps and Rayleigh bounds.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::connector::{analyze_reference_vertex, EquivalenceConstants};
use crate::eigen::{dense_generalized, smallest_eigenpairs};
use crate::system::AssembledSystem;
use crate::error::{Error, Result};
use crate::fem2d::p1_matrices;
use crate::inflated::{build_geometry_2d, mesh_with_segments, GeometrySpec2D, TreeMesh2D};
use crate::operator1d::{
    assemble_1d, build_rho_p, build_rho_q, radial_decomposition_spectrum, weighted_norms, Mesh1D,
    PotentialProfile, WeightProfile,
};
use crate::sparse::SparseSymmetric;
use crate::tree::{Tree, TreeSpec};

pub const EIGEN_TOL: f64 = 1e-10;

/// `(1 + c eps) x / (1 - c eps x)`, infinite at and beyond the pole.
pub fn phi_q(x: f64, c: f64, eps: f64) -> f64 {
    let den = 1.0 - c * eps * x;
    if den <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 + c * eps) * x / den
    }
}

/// `(1 + c eps) x / (1 - sqrt(eps) - c eps x)`, infinite at and beyond the pole.
pub fn phi_p(x: f64, c: f64, eps: f64) -> f64 {
    let den = 1.0 - eps.sqrt() - c * eps * x;
    if den <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 + c * eps) * x / den
    }
}

/// Grid of candidate constants, 64 per decade over `[1e-3, 1e3]`.
pub fn constant_grid() -> impl Iterator<Item = f64> {
    (0..=6 * 64).map(|i| 10f64.powf(-3.0 + i as f64 / 64.0))
}

/// Smallest grid constant for which `holds(c)`.
pub fn fit_constant(holds: impl Fn(f64) -> bool) -> Option<f64> {
    constant_grid().find(|&c| holds(c))
}

/// `a <= bound` with a finite bound.
fn below(a: f64, bound: f64) -> bool {
    bound.is_finite() && a <= bound
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Richardson estimate from two mesh levels of a second-order method:
/// `(fine + (fine - coarse)/3, |fine - coarse|/3)`.
pub fn richardson(coarse: f64, fine: f64) -> (f64, f64) {
    (fine + (fine - coarse) / 3.0, (fine - coarse).abs() / 3.0)
}

fn limit_spectrum(
    tree: &Tree<f64>,
    potential: &PotentialProfile,
    mesh: &Mesh1D,
    count: usize,
) -> Result<Vec<f64>> {
    let rho = WeightProfile::rho_star(tree);
    Ok(radial_decomposition_spectrum(tree, &rho, &rho, potential, mesh, count, EIGEN_TOL)?.expanded())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightConvergenceConfig {
    pub tree: TreeSpec<f64>,
    pub potential: PotentialProfile,
    pub refinements: Vec<usize>,
    pub modes: usize,
    /// Zone factor of the stiffness weight and of the mass weight.
    pub stiffness_factor: f64,
    pub mass_factor: f64,
    pub h: f64,
}

impl WeightConvergenceConfig {
    pub fn reference() -> Self {
        WeightConvergenceConfig {
            tree: TreeSpec::new(2, 1.0, 0.5, 0.6, 3),
            potential: PotentialProfile::zero(),
            refinements: vec![4, 8, 16, 32],
            modes: 5,
            stiffness_factor: 2.0,
            mass_factor: 1.0,
            h: 1.0 / 512.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightConvergenceRow {
    pub refinement: usize,
    pub mode: usize,
    pub limit: f64,
    pub value: f64,
    pub error: f64,
    pub lower: f64,
    pub upper: f64,
    pub envelope_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightConvergenceReport {
    pub envelope_constant: f64,
    pub potential_bound: f64,
    pub rows: Vec<WeightConvergenceRow>,
    pub strictly_decreasing: bool,
    pub final_relative_error: f64,
    pub envelope_holds: bool,
}

/// Spectra of operators whose weights differ from `rho*` on vertex zones of
/// radius `delta^j / n` only, against the `rho*` operator on matched meshes.
pub fn weight_convergence_experiment(cfg: &WeightConvergenceConfig) -> Result<WeightConvergenceReport> {
    let tree = Tree::build(cfg.tree)?;
    let depth = tree.depth();
    let delta = cfg.tree.width_ratio;
    let runs = cfg
        .refinements
        .par_iter()
        .map(|&n| {
            let radii: Vec<f64> = (0..depth).map(|j| delta.powi(j as i32) / n as f64).collect();
            let alpha = WeightProfile::zoned(&tree, &radii, &vec![cfg.stiffness_factor; depth])?;
            let beta = WeightProfile::zoned(&tree, &radii, &vec![cfg.mass_factor; depth])?;
            let mesh = Mesh1D::uniform(&tree, cfg.h, &[&alpha])?;
            let limit = limit_spectrum(&tree, &cfg.potential, &mesh, cfg.modes.max(10))?;
            let values = radial_decomposition_spectrum(&tree, &alpha, &beta, &cfg.potential, &mesh, cfg.modes.max(10), EIGEN_TOL)?
                .expanded();
            Ok((n, limit, values, alpha.envelope.max(beta.envelope)))
        })
        .collect::<Result<Vec<_>>>()?;
    let c = runs.iter().map(|r| r.3).fold(1.0, f64::max);
    let cw = cfg.potential.bound(tree.radius());
    let mut rows = Vec::new();
    for (n, limit, values, _) in &runs {
        for l in 0..limit.len().min(values.len()).min(10) {
            let lower = (limit[l] - 2.0 * cw) / (c * c);
            let upper = c * c * (limit[l] + 2.0 * cw);
            rows.push(WeightConvergenceRow {
                refinement: *n,
                mode: l + 1,
                limit: limit[l],
                value: values[l],
                error: (values[l] - limit[l]).abs(),
                lower,
                upper,
                envelope_ok: lower <= values[l] && values[l] <= upper,
            });
        }
    }
    let mut strictly_decreasing = true;
    let mut final_relative_error: f64 = 0.0;
    for m in 1..=cfg.modes {
        let errs: Vec<&WeightConvergenceRow> = rows.iter().filter(|r| r.mode == m).collect();
        strictly_decreasing &= errs.windows(2).all(|w| w[1].error < w[0].error);
        if let Some(last) = errs.last() {
            final_relative_error = final_relative_error.max(last.error / last.limit);
        }
    }
    let envelope_holds = rows.iter().all(|r| r.envelope_ok);
    Ok(WeightConvergenceReport {
        envelope_constant: c,
        potential_bound: cw,
        rows,
        strictly_decreasing,
        final_relative_error,
        envelope_holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichConfig {
    pub tree: TreeSpec<f64>,
    pub potential: PotentialProfile,
    pub eps: Vec<f64>,
    pub modes: usize,
    /// Elements across each section on the coarse 2-D level; the fine level doubles it.
    pub segments: usize,
    pub apex: f64,
    pub h: f64,
}

impl SandwichConfig {
    pub fn reference() -> Self {
        SandwichConfig {
            tree: TreeSpec::new(2, 1.0, 0.5, 0.6, 2),
            potential: PotentialProfile::zero(),
            eps: vec![0.2, 0.1, 0.05],
            modes: 4,
            segments: 4,
            apex: crate::inflated::DEFAULT_APEX,
            h: 1.0 / 1024.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichRow {
    pub mode: usize,
    pub mu: f64,
    pub lambda: f64,
    pub nu_coarse: f64,
    pub nu_fine: f64,
    pub nu: f64,
    pub nu_error: f64,
    pub phi_q: f64,
    pub phi_p: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichLevel {
    pub eps: f64,
    pub constant: Option<f64>,
    pub constants: EquivalenceConstants,
    pub rows: Vec<SandwichRow>,
    /// `|nu_1 - mu_1|` against the limit operator and its error bar.
    pub gap: f64,
    pub gap_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub limit: Vec<f64>,
    pub levels: Vec<SandwichLevel>,
    pub constant_spread: f64,
    pub gap_decreasing: bool,
    /// Largest eps at which a constant was found.
    pub largest_eps_fitted: Option<f64>,
    pub pass: bool,
}

struct PlanarRun {
    mesh: TreeMesh2D,
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

fn planar_run(spec: &GeometrySpec2D, segments: usize, potential: &PotentialProfile, count: usize) -> Result<PlanarRun> {
    let geometry = build_geometry_2d(spec)?;
    let mesh = mesh_with_segments(&geometry, segments)?;
    let w = if potential.is_zero() { None } else { Some(mesh.potential_nodes(potential)) };
    let sys = mesh.assemble(w.as_deref());
    let s = sys.eigenpairs(count, EIGEN_TOL)?;
    let vectors = (0..s.len()).filter_map(|i| s.vector(i)).map(|v| sys.expand(&v)).collect();
    Ok(PlanarRun { mesh, values: s.values.clone(), vectors })
}

/// The 1-D potential seen by the skeleton operators at this eps.
fn skeleton_potential(run: &PlanarRun, potential: &PotentialProfile) -> Result<PotentialProfile> {
    if potential.is_zero() {
        Ok(PotentialProfile::zero())
    } else {
        run.mesh.average_potential(&run.mesh.potential_nodes(potential))
    }
}

pub fn sandwich_experiment(cfg: &SandwichConfig) -> Result<SandwichReport> {
    let tree = Tree::build(cfg.tree)?;
    let fine_segments = 2 * cfg.segments;
    let reference = analyze_reference_vertex(
        tree.branching(),
        cfg.tree.width_ratio,
        cfg.tree.dimension,
        cfg.apex,
        fine_segments,
    )?;
    let constants = reference.constants;
    let limit_mesh = Mesh1D::uniform(&tree, cfg.h, &[])?;
    let limit = limit_spectrum(&tree, &cfg.potential, &limit_mesh, cfg.modes.max(4))?;
    let levels = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let spec = GeometrySpec2D::new(cfg.tree, eps).with_apex(cfg.apex);
            let coarse = planar_run(&spec, cfg.segments, &cfg.potential, cfg.modes + 2)?;
            let fine = planar_run(&spec, fine_segments, &cfg.potential, cfg.modes + 2)?;
            let w1 = skeleton_potential(&fine, &cfg.potential)?;
            let rho_q = build_rho_q(&tree, &constants, eps)?;
            let rho_p = build_rho_p(&tree, &constants, eps)?;
            let star = WeightProfile::rho_star(&tree);
            let mesh = Mesh1D::uniform(&tree, cfg.h, &[&rho_q])?;
            let mu = radial_decomposition_spectrum(&tree, &rho_q, &star, &w1, &mesh, cfg.modes, EIGEN_TOL)?.expanded();
            let lambda = radial_decomposition_spectrum(&tree, &rho_p, &star, &w1, &mesh, cfg.modes, EIGEN_TOL)?.expanded();
            let nus: Vec<(f64, f64, f64, f64)> = (0..cfg.modes)
                .map(|m| {
                    let (ext, err) = richardson(coarse.values[m], fine.values[m]);
                    (coarse.values[m], fine.values[m], ext, err)
                })
                .collect();
            let holds = |c: f64| {
                (0..cfg.modes).all(|m| {
                    let (_, _, nu, err) = nus[m];
                    below(nu - err, phi_q(mu[m], c, eps)) && below(lambda[m], phi_p(nu + err, c, eps))
                })
            };
            let constant = fit_constant(holds);
            let rows = (0..cfg.modes)
                .map(|m| {
                    let (nc, nf, nu, err) = nus[m];
                    let (pq, pp) = match constant {
                        Some(c) => (phi_q(mu[m], c, eps), phi_p(nu + err, c, eps)),
                        None => (f64::NAN, f64::NAN),
                    };
                    SandwichRow {
                        mode: m + 1,
                        mu: mu[m],
                        lambda: lambda[m],
                        nu_coarse: nc,
                        nu_fine: nf,
                        nu,
                        nu_error: err,
                        phi_q: pq,
                        phi_p: pp,
                        pass: constant.is_some() && below(nu - err, pq) && below(lambda[m], pp),
                    }
                })
                .collect();
            Ok(SandwichLevel {
                eps,
                constant,
                constants,
                rows,
                gap: (nus[0].2 - limit[0]).abs(),
                gap_error: nus[0].3,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fitted: Vec<f64> = levels.iter().filter_map(|l| l.constant).collect();
    let constant_spread = if fitted.len() == levels.len() && !fitted.is_empty() {
        fitted.iter().fold(0.0f64, |a, &b| a.max(b)) / fitted.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    } else {
        f64::INFINITY
    };
    // Decrease must survive the error bars: each gap's upper end below the previous lower end.
    let gap_decreasing = levels.windows(2).all(|w| w[1].gap + w[1].gap_error < w[0].gap - w[0].gap_error);
    let largest_eps_fitted = levels
        .iter()
        .filter(|l| l.constant.is_some())
        .map(|l| l.eps)
        .fold(None, |a: Option<f64>, e| Some(a.map_or(e, |x| x.max(e))));
    let pass = constant_spread <= 3.0 && gap_decreasing && levels.iter().all(|l| l.rows.iter().all(|r| r.pass));
    Ok(SandwichReport { limit, levels, constant_spread, gap_decreasing, largest_eps_fitted, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionConfig {
    pub tree: TreeSpec<f64>,
    pub potential: PotentialProfile,
    pub eps: Vec<f64>,
    pub segments: usize,
    pub apex: f64,
    pub mode: usize,
}

impl ProjectionConfig {
    pub fn reference() -> Self {
        ProjectionConfig {
            tree: TreeSpec::new(2, 1.0, 0.5, 0.6, 2),
            potential: PotentialProfile::zero(),
            eps: vec![0.2, 0.1, 0.05],
            segments: 8,
            apex: crate::inflated::DEFAULT_APEX,
            mode: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionRow {
    pub eps: f64,
    pub eigenvalue: f64,
    pub distance: f64,
    pub overlap: f64,
    pub holder_constant: f64,
    pub connector_tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionReport {
    pub rows: Vec<ProjectionRow>,
    pub decreasing: bool,
    pub tracked: bool,
    pub final_distance: f64,
    /// Non-monotone sequence with confirmed mode identity.
    pub soft_failure: bool,
}

/// `max |P u(p_e) - P u(p_f)| / sqrt(dist(p_e, p_f))` over section points of
/// each connector.
pub fn vertex_holder_check(mesh: &TreeMesh2D, u: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for pc in &mesh.connectors {
        let b = mesh.vertex_averages(pc.edge, u);
        let dist = 2.0 * mesh.geometry.zone_radius[pc.generation];
        for i in 0..b.len() {
            for j in i + 1..b.len() {
                best = best.max((b[i] - b[j]).abs() / dist.sqrt());
            }
        }
    }
    best
}

pub fn eigenfunction_projection_experiment(cfg: &ProjectionConfig) -> Result<ProjectionReport> {
    let tree = Tree::build(cfg.tree)?;
    let star = WeightProfile::rho_star(&tree);
    let m = cfg.mode.max(1) - 1;
    let rows = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let spec = GeometrySpec2D::new(cfg.tree, eps).with_apex(cfg.apex);
            let run = planar_run(&spec, cfg.segments, &cfg.potential, m + 1)?;
            let mesh = &run.mesh;
            let stations = &mesh.stations;
            let (_, mass, _) = p1_matrices(&mesh.mesh, None);
            let mut u = run.vectors[m].clone();
            let norm = mass.form(&u, &u).sqrt();
            let scale = eps.sqrt() / norm;
            u.iter_mut().for_each(|v| *v *= scale);
            let pu = mesh.project(&u)?;
            let target = skeleton_mode(&tree, &cfg.potential, mesh, m)?;
            let (tt, _) = weighted_norms(&tree, &star, &star, stations, &target);
            let (pp, _) = weighted_norms(&tree, &star, &star, stations, &pu);
            let inner = weighted_inner(&tree, stations, &target, &pu);
            let sign = if inner < 0.0 { -1.0 } else { 1.0 };
            let diff: Vec<f64> = pu.iter().zip(&target).map(|(a, b)| sign * a - b).collect();
            let (dd, _) = weighted_norms(&tree, &star, &star, stations, &diff);
            let (stiff, _, _) = p1_matrices(&mesh.mesh, None);
            let h1 = (stiff.form(&u, &u) + mass.form(&u, &u)).sqrt();
            let holder_scale = eps.sqrt() / h1;
            let holder: Vec<f64> = u.iter().map(|v| v * holder_scale).collect();
            Ok(ProjectionRow {
                eps,
                eigenvalue: run.values[m],
                distance: (dd / tt).sqrt(),
                overlap: inner.abs() / (tt * pp).sqrt(),
                holder_constant: vertex_holder_check(mesh, &holder),
                connector_tail: mesh.connector_tail_check(&u)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let decreasing = rows.windows(2).all(|w| w[1].distance < w[0].distance);
    let tracked = rows.iter().all(|r| r.overlap >= 0.5);
    let final_distance = rows.last().map_or(f64::NAN, |r| r.distance);
    Ok(ProjectionReport { decreasing, tracked, final_distance, soft_failure: !decreasing && tracked, rows })
}

/// `int u v rho*` on the station mesh.
fn weighted_inner(tree: &Tree<f64>, mesh: &Mesh1D, u: &[f64], v: &[f64]) -> f64 {
    let star = WeightProfile::rho_star(tree);
    let sum: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + b).collect();
    let dif: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    0.25 * (weighted_norms(tree, &star, &star, mesh, &sum).0 - weighted_norms(tree, &star, &star, mesh, &dif).0)
}

/// Eigenfunction `m` of the limit operator on the station mesh, normalized in `L^2(rho*)`.
fn skeleton_mode(tree: &Tree<f64>, potential: &PotentialProfile, mesh: &TreeMesh2D, m: usize) -> Result<Vec<f64>> {
    let star = WeightProfile::rho_star(tree);
    let sys = assemble_1d(tree, &star, &star, potential, &mesh.stations)?;
    let s = sys.eigenpairs(m + 1, EIGEN_TOL)?;
    let v = s.vector(m).ok_or_else(|| Error::Invariant("missing eigenvector".into()))?;
    let full = sys.expand(&v);
    let (n2, _) = weighted_norms(tree, &star, &star, &mesh.stations, &full);
    Ok(full.iter().map(|x| x / n2.sqrt()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelGapConfig {
    pub tree: TreeSpec<f64>,
    pub eps: Vec<f64>,
    pub segments: usize,
    pub apex: f64,
}

impl KernelGapConfig {
    pub fn reference() -> Self {
        KernelGapConfig {
            tree: TreeSpec::new(2, 1.0, 0.5, 0.6, 2),
            eps: vec![0.2, 0.1, 0.05],
            segments: 4,
            apex: crate::inflated::DEFAULT_APEX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelGapReport {
    pub eps: Vec<f64>,
    pub q_infimum: Vec<f64>,
    pub p_infimum: Vec<f64>,
    pub q_slope: f64,
    pub p_slope: f64,
    pub q_pass: bool,
    pub p_pass: bool,
}

/// Restriction of a pencil to a sparse basis.
fn smallest_on_basis(k: &SparseSymmetric, m: &SparseSymmetric, basis: &[Vec<(usize, f64)>]) -> Result<f64> {
    if basis.is_empty() {
        return Err(Error::Mesh("kernel is empty at this resolution; refine the mesh".into()));
    }
    let kz = k.congruence(basis);
    let mz = m.congruence(basis);
    Ok(smallest_eigenpairs(&kz, &mz, 1, EIGEN_TOL)?.values[0])
}

/// Infimum of `int |f'|^2 rho* / int |f|^2 rho*` over skeleton functions
/// annihilated by `Q`: those vanishing outside the vertex zones and at every
/// section point.
pub fn kernel_q_infimum(mesh: &TreeMesh2D) -> Result<f64> {
    let tree = mesh.tree();
    let star = WeightProfile::rho_star(tree);
    let sys = assemble_1d(tree, &star, &star, &PotentialProfile::zero(), &mesh.stations)?;
    let free = kernel_q_nodes(mesh);
    let basis: Vec<Vec<(usize, f64)>> = free
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .filter_map(|(node, _)| sys.node_dofs[node].map(|d| vec![(d, 1.0)]))
        .collect();
    smallest_on_basis(&sys.stiffness, &sys.mass, &basis)
}

/// Station nodes strictly inside a vertex zone.
fn kernel_q_nodes(mesh: &TreeMesh2D) -> Vec<bool> {
    let tree = mesh.tree();
    let layout = mesh.stations.layout(tree);
    let mut free = vec![false; layout.nodes];
    let depth = tree.depth();
    for edge in tree.edges() {
        let i = edge.generation;
        let ids = mesh.stations.edge_nodes(tree, &layout, edge);
        let off = mesh.column_offset[i];
        let cols = mesh.columns[tree.flat_index(edge)].len();
        if i > 0 {
            for &g in &ids[..off] {
                free[g] = true;
            }
        }
        if i < depth {
            for &g in &ids[off + cols..] {
                free[g] = true;
            }
        }
    }
    free
}

/// True when `Q f` vanishes identically (up to `tol`).
pub fn in_kernel_q(mesh: &TreeMesh2D, f: &[f64], tol: f64) -> Result<bool> {
    Ok(mesh.lift(f)?.iter().all(|v| v.abs() <= tol))
}

/// Infimum of `int |grad u|^2 / int |u|^2` over planar fields annihilated by
/// `P`: every rectangle column, and hence every connector section, has zero
/// average. One node per column is eliminated.
pub fn kernel_p_infimum(mesh: &TreeMesh2D) -> Result<f64> {
    let (k, m, _) = p1_matrices(&mesh.mesh, None);
    let n = mesh.mesh.nodes.len();
    let mut pivot_of: Vec<Option<(usize, f64, f64)>> = vec![None; n];
    let mut fixed = vec![false; n];
    for (f, cols) in mesh.columns.iter().enumerate() {
        for (c, col) in cols.iter().enumerate() {
            if f == 0 && c == 0 {
                for &g in col {
                    fixed[g] = true;
                }
                continue;
            }
            let (w, _) = crate::fem2d::line_weights(&mesh.mesh, col);
            let p = col[col.len() / 2];
            let wp = w[col.len() / 2];
            fixed[p] = true;
            for (&g, &wg) in col.iter().zip(&w) {
                if g != p {
                    pivot_of[g] = Some((p, wg, wp));
                }
            }
        }
    }
    let basis: Vec<Vec<(usize, f64)>> = (0..n)
        .filter(|&i| !fixed[i])
        .map(|i| match pivot_of[i] {
            Some((p, wi, wp)) => vec![(i, 1.0), (p, -wi / wp)],
            None => vec![(i, 1.0)],
        })
        .collect();
    smallest_on_basis(&k, &m, &basis)
}

pub fn kernel_gap_check(cfg: &KernelGapConfig) -> Result<KernelGapReport> {
    let results = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let spec = GeometrySpec2D::new(cfg.tree, eps).with_apex(cfg.apex);
            let mesh = mesh_with_segments(&build_geometry_2d(&spec)?, cfg.segments)?;
            Ok((kernel_q_infimum(&mesh)?, kernel_p_infimum(&mesh)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let q: Vec<f64> = results.iter().map(|r| r.0).collect();
    let p: Vec<f64> = results.iter().map(|r| r.1).collect();
    let q_slope = log_log_slope(&cfg.eps, &q);
    let p_slope = log_log_slope(&cfg.eps, &p);
    Ok(KernelGapReport {
        eps: cfg.eps.clone(),
        q_infimum: q,
        p_infimum: p,
        q_slope,
        p_slope,
        q_pass: (q_slope + 2.0).abs() <= 0.3,
        p_pass: (p_slope + 1.0).abs() <= 0.3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayleighBoundReport {
    pub eps: f64,
    pub samples: usize,
    pub q_constant: Option<f64>,
    pub p_constant: Option<f64>,
    pub q_violations: usize,
    pub p_violations: usize,
}

/// Random low-frequency samples: constants are fitted on the first half and
/// the bounds counted on the second half.
pub fn rayleigh_bound_check(
    tree_spec: &TreeSpec<f64>,
    eps: f64,
    segments: usize,
    apex: f64,
    samples: usize,
    seed: u64,
) -> Result<RayleighBoundReport> {
    let tree = Tree::build(*tree_spec)?;
    let spec = GeometrySpec2D::new(*tree_spec, eps).with_apex(apex);
    let mesh = mesh_with_segments(&build_geometry_2d(&spec)?, segments)?;
    let constants = analyze_reference_vertex(2, tree_spec.width_ratio, 2, apex, segments)?.constants;
    let rho_q = build_rho_q(&tree, &constants, eps)?;
    let rho_p = build_rho_p(&tree, &constants, eps)?;
    let star = WeightProfile::rho_star(&tree);
    let stations = &mesh.stations;
    let sys = assemble_1d(&tree, &star, &star, &PotentialProfile::zero(), stations)?;
    let basis_count = 8.min(sys.dofs());
    let modes = sys.eigenpairs(basis_count, EIGEN_TOL)?;
    let modes: Vec<Vec<f64>> = (0..modes.len()).filter_map(|i| modes.vector(i)).map(|v| sys.expand(&v)).collect();
    let (k2, m2, _) = p1_matrices(&mesh.mesh, None);
    let dirichlet = mesh.mesh.nodes_with_tag(crate::mesh::BoundaryTag::RootDirichlet);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q_pairs = Vec::with_capacity(samples);
    let mut p_pairs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let coeff: Vec<f64> = (0..modes.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..modes[0].len())
            .map(|i| modes.iter().zip(&coeff).map(|(v, c)| c * v[i]).sum())
            .collect();
        let (fm, fe) = weighted_norms(&tree, &rho_q, &star, stations, &f);
        let u = mesh.lift(&f)?;
        q_pairs.push((fe / fm, k2.form(&u, &u) / m2.form(&u, &u)));
        let noise_scale = 1e-3 * u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let v: Vec<f64> = u
            .iter()
            .zip(&dirichlet)
            .map(|(x, &d)| if d { 0.0 } else { x + noise_scale * rng.gen_range(-1.0..1.0) })
            .collect();
        let pv = mesh.project(&v)?;
        let (pm, pe) = weighted_norms(&tree, &rho_p, &star, stations, &pv);
        p_pairs.push((k2.form(&v, &v) / m2.form(&v, &v), pe / pm));
    }
    let half = samples / 2;
    let q_holds = |c: f64, set: &[(f64, f64)]| set.iter().all(|&(r1, r2)| below(r2, phi_q(r1, c, eps)));
    let p_holds = |c: f64, set: &[(f64, f64)]| set.iter().all(|&(r2, r1)| below(r1, phi_p(r2, c, eps)));
    let q_constant = fit_constant(|c| q_holds(c, &q_pairs[..half]));
    let p_constant = fit_constant(|c| p_holds(c, &p_pairs[..half]));
    let q_violations = match q_constant {
        Some(c) => q_pairs[half..].iter().filter(|&&(r1, r2)| !below(r2, phi_q(r1, c, eps))).count(),
        None => samples - half,
    };
    let p_violations = match p_constant {
        Some(c) => p_pairs[half..].iter().filter(|&&(r2, r1)| !below(r1, phi_p(r2, c, eps))).count(),
        None => samples - half,
    };
    Ok(RayleighBoundReport { eps, samples, q_constant, p_constant, q_violations, p_violations })
}

/// Exact discrete suprema of the constants in the transfer inequalities
/// between skeleton functions and planar fields, for a fixed mesh. The
/// energy entries are `sup int |grad Q f|^2 / (eps int |f'|^2 rho_Q)` and
/// `sup eps int |(P u)'|^2 rho_P / int |grad u|^2`; the mass entries are the
/// smallest constants `c` with
///
/// - `int |Q f|^2 >= eps int (|f|^2 - c eps |f'|^2) rho*`
/// - `int |Q f|^2 <= eps int (|f|^2 + c eps |f'|^2) rho*`
/// - `eps int |P u|^2 rho* >= int (1 - sqrt(eps)) |u|^2 - c eps |grad u|^2`
/// - `eps int |P u|^2 rho* <= (1 + 2 sqrt(eps)) int |u|^2 + c eps |grad u|^2`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferConstants {
    pub eps: f64,
    pub q_energy: f64,
    pub p_energy: f64,
    pub q_mass_lower: f64,
    pub q_mass_upper: f64,
    pub p_mass_lower: f64,
    pub p_mass_upper: f64,
}

/// Dense matrices of `Q` and `P` between the free degrees of freedom of the
/// station system and of the planar system.
pub struct TransferMatrices {
    pub lift: DMatrix<f64>,
    pub project: DMatrix<f64>,
}

pub fn transfer_matrices(mesh: &TreeMesh2D, stations: &AssembledSystem, planar: &AssembledSystem) -> Result<TransferMatrices> {
    let (d1, d2) = (stations.dofs(), planar.dofs());
    let mut lift = DMatrix::zeros(d2, d1);
    let mut unit = vec![0.0; d1];
    for j in 0..d1 {
        unit[j] = 1.0;
        let u = planar.restrict(&mesh.lift(&stations.expand(&unit))?);
        unit[j] = 0.0;
        lift.set_column(j, &DVector::from_vec(u));
    }
    let mut project = DMatrix::zeros(d1, d2);
    let mut unit = vec![0.0; d2];
    for j in 0..d2 {
        unit[j] = 1.0;
        let f = stations.restrict(&mesh.project(&planar.expand(&unit))?);
        unit[j] = 0.0;
        project.set_column(j, &DVector::from_vec(f));
    }
    Ok(TransferMatrices { lift, project })
}

fn largest_generalized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let (values, _) = dense_generalized(a, b)?;
    Ok(values.last().copied().unwrap_or(0.0).max(0.0))
}

pub fn transfer_constants(mesh: &TreeMesh2D, constants: &EquivalenceConstants) -> Result<TransferConstants> {
    let tree = mesh.tree();
    let eps = mesh.eps();
    let star = WeightProfile::rho_star(tree);
    let zero = PotentialProfile::zero();
    let s_star = assemble_1d(tree, &star, &star, &zero, &mesh.stations)?;
    let s_q = assemble_1d(tree, &build_rho_q(tree, constants, eps)?, &star, &zero, &mesh.stations)?;
    let s_p = assemble_1d(tree, &build_rho_p(tree, constants, eps)?, &star, &zero, &mesh.stations)?;
    let planar = mesh.assemble(None);
    let t = transfer_matrices(mesh, &s_star, &planar)?;
    let (k2, m2) = (planar.stiffness.to_dense(), planar.mass.to_dense());
    let (ks, ms) = (s_star.stiffness.to_dense(), s_star.mass.to_dense());
    let lt = t.lift.transpose();
    let pt = t.project.transpose();
    let lml = &lt * &m2 * &t.lift;
    let pmp = &pt * &ms * &t.project;
    let root = eps.sqrt();
    Ok(TransferConstants {
        eps,
        q_energy: largest_generalized(&(&lt * &k2 * &t.lift), &(s_q.stiffness.to_dense() * eps))?,
        p_energy: largest_generalized(&(&pt * s_p.stiffness.to_dense() * &t.project * eps), &k2)?,
        q_mass_lower: largest_generalized(&(&ms * eps - &lml), &(&ks * (eps * eps)))?,
        q_mass_upper: largest_generalized(&(&lml - &ms * eps), &(&ks * (eps * eps)))?,
        p_mass_lower: largest_generalized(&(&m2 * (1.0 - root) - &pmp * eps), &(&k2 * eps))?,
        p_mass_upper: largest_generalized(&(&pmp * (eps / (1.0 + 2.0 * root)) - &m2), &(&k2 * eps))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_examples() {
        assert!((phi_q(10.0, 0.01, 1.0) - 10.1 / 0.9).abs() < 1e-12);
        assert!((phi_q(3.0, 2.0, 1e-6) / 3.0 - 1.0).abs() < 1e-4);
        assert_eq!(phi_q(10.0, 1.0, 0.1), f64::INFINITY);
        assert_eq!(phi_p(1.0, 2.0, 0.25), f64::INFINITY);
        assert!(phi_p(1.0, 0.1, 0.01).is_finite());
    }

    #[test]
    fn constant_fit_is_smallest_grid_point() {
        let c = fit_constant(|c| c >= 2.0).unwrap();
        assert!(c >= 2.0 && c / 10f64.powf(1.0 / 64.0) < 2.0);
        assert_eq!(fit_constant(|_| false), None);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(-2)).collect();
        assert!((log_log_slope(&x, &y) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn richardson_of_exact_quadratic_error() {
        // e(h) = C h^2: coarse at 2h, fine at h.
        let (ext, err) = richardson(1.0 + 4.0 * 0.01, 1.0 + 0.01);
        assert!((ext - 1.0).abs() < 1e-14);
        assert!((err - 0.01).abs() < 1e-14);
    }

    #[test]
    fn unit_zone_factors_reproduce_the_limit() {
        let mut cfg = WeightConvergenceConfig::reference();
        cfg.tree = TreeSpec::new(2, 1.0, 0.5, 0.6, 2);
        cfg.stiffness_factor = 1.0;
        cfg.mass_factor = 1.0;
        cfg.refinements = vec![4];
        cfg.h = 1.0 / 128.0;
        let r = weight_convergence_experiment(&cfg).unwrap();
        assert!(r.rows.iter().all(|row| row.error <= 1e-9 * row.limit));
    }
}
