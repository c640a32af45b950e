//! Invariant checks shared by the property suite and the acceptance run:
//! partitions of unity, form-matrix sandwiches, Hardy and tail inequalities,
//! transfer inequalities between the skeleton and the planar tree, and
//! Kirchhoff residuals.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treespec::connector::{
    analyze_reference_vertex, build_partition_1d, complement_extremes, full_extremes,
    harmonic_partition_on, project_off_ones, skeleton_energy_form, skeleton_form_matrices,
    to_dmatrix, ConnectorAnalysis, ConnectorDomain2D, SkeletonStar,
};
use treespec::fem2d::p1_matrices;
use treespec::inflated::{build_geometry_2d, mesh_with_segments, GeometrySpec2D, TreeMesh2D};
use treespec::lab::{transfer_constants, TransferConstants};
use treespec::mesh::BoundaryTag;
use treespec::operator1d::{
    assemble_1d, build_rho_p, build_rho_q, discreteness_condition_check, hardy_inequality_check,
    kirchhoff_residuals, radial_positions, tail_bound, tail_bound_check, weighted_norms, Mesh1D,
    PotentialProfile, WeightProfile,
};
use treespec::tree::{Tree, TreeSpec};

pub const CASES: u32 = 1000;

pub type Check = Result<(), String>;

fn fail(e: treespec::Error) -> String {
    e.to_string()
}

macro_rules! ensure {
    ($cond:expr) => {
        if !$cond {
            return Err(format!("violated: {}", stringify!($cond)));
        }
    };
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn quad(m: &DMatrix<f64>, f: &[f64]) -> f64 {
    let n = f.len();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| f[i] * m[(i, j)] * f[j])
        .sum()
}

fn norm_sq(f: &[f64]) -> f64 {
    f.iter().map(|x| x * x).sum()
}

pub fn random_star(rng: &mut impl Rng) -> SkeletonStar<f64> {
    let k = rng.gen_range(1..=4);
    SkeletonStar {
        arm_lengths: (0..=k).map(|_| rng.gen_range(0.1..3.0)).collect(),
        arm_weights: (0..=k).map(|_| rng.gen_range(0.1..3.0)).collect(),
    }
}

fn reference() -> &'static ConnectorAnalysis {
    static CELL: OnceLock<ConnectorAnalysis> = OnceLock::new();
    CELL.get_or_init(|| analyze_reference_vertex(2, 0.6, 2, 0.3, 8).unwrap())
}

struct Planar {
    mesh: TreeMesh2D,
    constants: TransferConstants,
    rho_q: WeightProfile,
    rho_p: WeightProfile,
    star: WeightProfile,
    modes: Vec<Vec<f64>>,
    first_eigenvalue: f64,
}

pub const PLANAR_EPS: [f64; 3] = [0.2, 0.1, 0.05];

fn planar() -> &'static Vec<Planar> {
    static CELL: OnceLock<Vec<Planar>> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = TreeSpec::new(2, 1.0, 0.5, 0.6, 2);
        let constants = analyze_reference_vertex(2, 0.6, 2, 0.3, 4)
            .unwrap()
            .constants;
        PLANAR_EPS
            .iter()
            .map(|&eps| {
                let geometry = build_geometry_2d(&GeometrySpec2D::new(spec, eps)).unwrap();
                let mesh = mesh_with_segments(&geometry, 2).unwrap();
                let tree = mesh.tree().clone();
                let star = WeightProfile::rho_star(&tree);
                let sys = assemble_1d(
                    &tree,
                    &star,
                    &star,
                    &PotentialProfile::zero(),
                    &mesh.stations,
                )
                .unwrap();
                let s = sys.eigenpairs(6, 1e-10).unwrap();
                let modes = (0..s.len())
                    .map(|i| sys.expand(&s.vector(i).unwrap()))
                    .collect();
                let first_eigenvalue = mesh.assemble(None).eigenpairs(1, 1e-10).unwrap().values[0];
                Planar {
                    constants: transfer_constants(&mesh, &constants).unwrap(),
                    rho_q: build_rho_q(&tree, &constants, eps).unwrap(),
                    rho_p: build_rho_p(&tree, &constants, eps).unwrap(),
                    star,
                    modes,
                    first_eigenvalue,
                    mesh,
                }
            })
            .collect()
    })
}

/// Skeleton function vanishing at the root: low modes plus nodal noise.
fn skeleton_sample(p: &Planar, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.modes[0].len();
    let noise = rng.gen_range(0.0..0.3);
    let mut f: Vec<f64> = (0..n).map(|_| noise * rng.gen_range(-1.0..1.0)).collect();
    for m in &p.modes {
        let c: f64 = rng.gen_range(-1.0..1.0);
        for i in 0..n {
            f[i] += c * m[i];
        }
    }
    f[0] = 0.0;
    f
}

/// Planar field vanishing on the root section: a lifted skeleton sample plus
/// nodal noise.
fn planar_sample(p: &Planar, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let f = skeleton_sample(p, seed);
    let base = p.mesh.lift(&f).unwrap();
    let dirichlet = p.mesh.mesh.nodes_with_tag(BoundaryTag::RootDirichlet);
    let scale = rng.gen_range(0.0..0.5) * base.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    base.iter()
        .zip(&dirichlet)
        .map(|(x, &d)| {
            if d {
                0.0
            } else {
                x + scale * rng.gen_range(-1.0..1.0)
            }
        })
        .collect()
}

fn slack(x: f64) -> f64 {
    1e-9 * x.abs().max(1e-300)
}

pub fn skeleton_partition_sums_to_one(star: &SkeletonStar<f64>, arm_pick: usize, t: f64) -> Check {
    let arm = arm_pick % star.arms();
    let p = build_partition_1d(star);
    let len = star.arm_lengths[arm];
    let sum: f64 = (0..star.arms())
        .map(|e| p.value(e, arm, t * len, len))
        .sum();
    ensure!((sum - 1.0).abs() <= 1e-12);
    Ok(())
}

pub fn skeleton_forms_satisfy_sandwich(star: &SkeletonStar<f64>, seed: u64) -> Check {
    let p = build_partition_1d(star);
    let (a, b) = skeleton_form_matrices(star, &p);
    let (a, b) = (to_dmatrix(&a), to_dmatrix(&b));
    let n = star.arms();
    let ones = vec![1.0; n];
    ensure!(quad(&a, &ones).abs() <= 1e-12 * a.norm());
    let (alo, ahi) = complement_extremes(&a);
    let (blo, bhi) = full_extremes(&b);
    ensure!(alo > 0.0 && blo > 0.0);
    let alpha_a = ahi.max(1.0 / alo);
    let alpha_b = bhi.max(1.0 / blo);
    let e0 = to_dmatrix(&skeleton_energy_form(star, 0));
    let e1 = to_dmatrix(&skeleton_energy_form(star, 1));
    let beta0 = complement_extremes(&e0).0;
    let beta1 = full_extremes(&e1).0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let perp = norm_sq(&project_off_ones(&f));
    let full = norm_sq(&f);
    let fa = quad(&a, &f);
    let fb = quad(&b, &f);
    ensure!(perp / alpha_a <= fa + slack(fa) && fa <= alpha_a * perp + slack(fa));
    ensure!(full / alpha_b <= fb + slack(fb) && fb <= alpha_b * full + slack(fb));
    // The hat combination is admissible for the minimization problems.
    let m0 = quad(&e0, &f);
    let m1 = quad(&e1, &f);
    ensure!(beta0 * perp <= m0 + slack(m0) && m0 <= fa + slack(fa));
    ensure!(beta1 * full <= m1 + slack(m1) && m1 <= fa + fb + slack(fa + fb));
    Ok(())
}

pub fn connector_forms_satisfy_sandwich(seed: u64) -> Check {
    let r = reference();
    let m = &r.matrices;
    let e = &r.energies;
    let c = &r.constants;
    let ones = vec![1.0; 3];
    ensure!(quad(&m.a, &ones).abs() <= 1e-8 * m.a.norm());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let perp = norm_sq(&project_off_ones(&f));
    let full = norm_sq(&f);
    let fa = quad(&m.a, &f);
    let fb = quad(&m.b, &f);
    ensure!(perp / c.alpha_a <= fa + slack(fa) && fa <= c.alpha_a * perp + slack(fa));
    ensure!(full / c.alpha_b <= fb + slack(fb) && fb <= c.alpha_b * full + slack(fb));
    let h0 = quad(&e.connector_harmonic, &f);
    let h1 = quad(&e.connector_mixed, &f);
    ensure!(c.beta_a * perp <= h0 + slack(h0));
    ensure!(c.beta_b * full <= h1 + slack(h1));
    ensure!(h0 <= h1 + slack(h1));
    ensure!(h0 <= fa + slack(fa) && h1 <= fa + fb + slack(fa + fb));
    Ok(())
}

pub fn connector_partition_sums_to_one(delta: f64, apex: f64, segments: usize) -> Check {
    let domain = ConnectorDomain2D::pentagon(1.0, delta, apex).map_err(fail)?;
    let cm = domain.mesh(segments).map_err(fail)?;
    let fields = harmonic_partition_on(&cm).map_err(fail)?;
    for l in 0..cm.mesh.nodes.len() {
        let sum: f64 = fields.iter().map(|f| f[l]).sum();
        ensure!((sum - 1.0).abs() <= 1e-10);
    }
    Ok(())
}

pub fn hardy_ratio_is_bounded(k: usize, delta: f64, depth: usize, seed: u64) -> Check {
    let tree = Tree::build(TreeSpec::new(k, 1.0, 0.5, delta, depth)).map_err(fail)?;
    let rho = WeightProfile::rho_star(&tree);
    let mesh = Mesh1D::uniform(&tree, 1.0 / 32.0, &[]).map_err(fail)?;
    let t = radial_positions(&tree, &mesh, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = t.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    *u.last_mut().expect("non-empty") = 0.0;
    let ratio = hardy_inequality_check(&tree, &rho, &t, &u).map_err(fail)?;
    // Muckenhoupt: weight w = g rho with w(t) >= C w(s) for s <= t gives 4 / C^2.
    let c = discreteness_condition_check(&tree, &rho)
        .map_err(fail)?
        .truncated_constant;
    ensure!(
        ratio <= 4.0 / (c * c),
        "ratio {} bound {}",
        ratio,
        4.0 / (c * c)
    );
    Ok(())
}

pub fn skeleton_tail_ratio_is_bounded(
    k: usize,
    delta: f64,
    depth: usize,
    j_pick: usize,
    seed: u64,
) -> Check {
    let tree = Tree::build(TreeSpec::new(k, 1.0, 0.5, delta, depth)).map_err(fail)?;
    let j = j_pick % depth;
    let rho = WeightProfile::rho_star(&tree);
    let mesh = Mesh1D::uniform(&tree, 1.0 / 16.0, &[]).map_err(fail)?;
    let layout = mesh.layout(&tree);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..layout.nodes)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    u[0] = 0.0;
    for edge in tree.edges().filter(|e| e.generation == tree.depth()) {
        u[1 + tree.flat_index(edge)] = 0.0;
    }
    let ratio = tail_bound_check(&tree, &rho, &rho, &mesh, &u, j).map_err(fail)?;
    let bound = tail_bound(&tree, &rho, &rho).map_err(fail)?;
    ensure!(ratio <= bound, "ratio {} bound {}", ratio, bound);
    Ok(())
}

pub fn lift_energy_is_bounded(which: usize, seed: u64) -> Check {
    let p = &planar()[which];
    let eps = PLANAR_EPS[which];
    let f = skeleton_sample(p, seed);
    let u = p.mesh.lift(&f).map_err(fail)?;
    let (k2, m2, _) = p1_matrices(&p.mesh.mesh, None);
    let grad = k2.form(&u, &u);
    let (_, fq) = weighted_norms(p.mesh.tree(), &p.rho_q, &p.star, &p.mesh.stations, &f);
    let (fm, fe) = weighted_norms(p.mesh.tree(), &p.star, &p.star, &p.mesh.stations, &f);
    ensure!(grad <= eps * fq + slack(grad));
    let mass = m2.form(&u, &u);
    let c = &p.constants;
    ensure!(mass >= eps * (fm - c.q_mass_lower * eps * fe) - slack(mass));
    ensure!(mass <= eps * (fm + c.q_mass_upper * eps * fe) + slack(mass));
    Ok(())
}

pub fn projection_energy_is_bounded(which: usize, seed: u64) -> Check {
    let p = &planar()[which];
    let eps = PLANAR_EPS[which];
    let u = planar_sample(p, seed);
    let pu = p.mesh.project(&u).map_err(fail)?;
    let (k2, m2, _) = p1_matrices(&p.mesh.mesh, None);
    let grad = k2.form(&u, &u);
    let mass = m2.form(&u, &u);
    let (_, pe) = weighted_norms(p.mesh.tree(), &p.rho_p, &p.star, &p.mesh.stations, &pu);
    let (pm, _) = weighted_norms(p.mesh.tree(), &p.star, &p.star, &p.mesh.stations, &pu);
    ensure!(eps * pe <= grad + slack(grad));
    let c = &p.constants;
    let root = eps.sqrt();
    ensure!(eps * pm >= (1.0 - root) * mass - c.p_mass_lower * eps * grad - slack(mass));
    ensure!(eps * pm <= (1.0 + 2.0 * root) * (mass + c.p_mass_upper * eps * grad) + slack(mass));
    Ok(())
}

pub fn connector_tail_ratio_is_bounded(which: usize, seed: u64) -> Check {
    let p = &planar()[which];
    let eps = PLANAR_EPS[which];
    let u = planar_sample(p, seed);
    let ratio = p.mesh.connector_tail_check(&u).map_err(fail)?;
    // Connector mass never exceeds the whole mass, which the first
    // eigenvalue bounds by the energy.
    ensure!(ratio <= 1.0 / (eps * p.first_eigenvalue) * (1.0 + 1e-9));
    Ok(())
}

pub fn kirchhoff_residual_is_first_order(
    k: usize,
    delta: f64,
    depth: usize,
    fine: bool,
    amplitude: f64,
) -> Check {
    let tree = Tree::build(TreeSpec::new(k, 1.0, 0.5, delta, depth)).map_err(fail)?;
    let rho = WeightProfile::rho_star(&tree);
    let h = if fine { 1.0 / 32.0 } else { 1.0 / 16.0 };
    let mesh = Mesh1D::uniform(&tree, h, &[]).map_err(fail)?;
    let w = PotentialProfile::Cosine {
        offset: 0.0,
        amplitude,
        frequency: 1.0,
        phase: 0.0,
    };
    let sys = assemble_1d(&tree, &rho, &rho, &w, &mesh).map_err(fail)?;
    let s = sys.eigenpairs(3, 1e-11).map_err(fail)?;
    let cw = w.bound(tree.radius());
    for i in 0..s.len() {
        let u = sys.expand(&s.vector(i).expect("vectors"));
        let sup = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let res = kirchhoff_residuals(&tree, &rho, &mesh, &u);
        let gens = tree
            .edges()
            .filter(|e| e.generation < tree.depth())
            .map(|e| e.generation);
        for (r, g) in res.iter().zip(gens) {
            // The vertex row of the discrete equation leaves only mass and
            // potential terms: at most (|lambda| + C_W) sup|u| times the
            // rho-weighted half lengths of the incident elements.
            let hp = mesh.positions[g]
                .windows(2)
                .last()
                .map(|w| w[1] - w[0])
                .expect("one element");
            let hc = mesh.positions[g + 1][1];
            let weight = rho.base[g] * hp / 2.0 + k as f64 * rho.base[g + 1] * hc / 2.0;
            let bound = (s.values[i].abs() + cw) * sup * weight;
            ensure!(
                r.abs() <= bound * (1.0 + 1e-8) + 1e-12,
                "residual {} bound {}",
                r,
                bound
            );
        }
    }
    Ok(())
}

/// Runs every family on `cases` random instances drawn from `seed` and
/// returns `(family, violations, first message)`.
pub fn sweep(cases: u32, seed: u64) -> Vec<(&'static str, usize, Option<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    type Family<'a> = (&'static str, Box<dyn FnMut(&mut ChaCha8Rng) -> Check + 'a>);
    let mut families: Vec<Family> = vec![
        (
            "skeleton partition of unity",
            Box::new(|r| {
                let star = random_star(r);
                let arm = r.gen_range(0..5);
                skeleton_partition_sums_to_one(&star, arm, r.gen_range(0.0..=1.0))
            }),
        ),
        (
            "skeleton form sandwich",
            Box::new(|r| {
                let star = random_star(r);
                skeleton_forms_satisfy_sandwich(&star, r.gen())
            }),
        ),
        (
            "connector form sandwich",
            Box::new(|r| connector_forms_satisfy_sandwich(r.gen())),
        ),
        (
            "connector partition of unity",
            Box::new(|r| {
                connector_partition_sums_to_one(
                    r.gen_range(0.4..0.85),
                    r.gen_range(0.2..0.45),
                    r.gen_range(2..6),
                )
            }),
        ),
        (
            "hardy ratio",
            Box::new(|r| {
                hardy_ratio_is_bounded(
                    r.gen_range(2..=3),
                    r.gen_range(0.35..0.95),
                    r.gen_range(1..=3),
                    r.gen(),
                )
            }),
        ),
        (
            "skeleton tail ratio",
            Box::new(|r| {
                skeleton_tail_ratio_is_bounded(
                    r.gen_range(2..=3),
                    r.gen_range(0.5..0.95),
                    r.gen_range(1..=3),
                    r.gen_range(0..3),
                    r.gen(),
                )
            }),
        ),
        (
            "lift energy and mass",
            Box::new(|r| lift_energy_is_bounded(r.gen_range(0..3), r.gen())),
        ),
        (
            "projection energy and mass",
            Box::new(|r| projection_energy_is_bounded(r.gen_range(0..3), r.gen())),
        ),
        (
            "connector tail ratio",
            Box::new(|r| connector_tail_ratio_is_bounded(r.gen_range(0..3), r.gen())),
        ),
        (
            "kirchhoff residual",
            Box::new(|r| {
                kirchhoff_residual_is_first_order(
                    r.gen_range(2..=3),
                    r.gen_range(0.4..0.9),
                    r.gen_range(1..=2),
                    r.gen(),
                    r.gen_range(0.0..2.0),
                )
            }),
        ),
    ];
    families
        .iter_mut()
        .map(|(name, check)| {
            let mut violations = 0;
            let mut first = None;
            for _ in 0..cases {
                if let Err(e) = check(&mut rng) {
                    violations += 1;
                    first.get_or_insert(e);
                }
            }
            (*name, violations, first)
        })
        .collect()
}
