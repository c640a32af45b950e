//! One runner per subcommand. Each writes its tables and summary through the
//! sink and reports whether its assertions held.

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::json;
use treespec::connector::{analyze_reference_vertex, FormMatrices};
use treespec::eigen::Spectrum;
use treespec::inflated::{build_geometry_2d, mesh_with_segments, GeometrySpec2D};
use treespec::lab::{
    eigenfunction_projection_experiment, kernel_gap_check, rayleigh_bound_check, sandwich_experiment,
    weight_convergence_experiment, KernelGapConfig, ProjectionConfig, SandwichConfig, WeightConvergenceConfig,
};
use treespec::operator1d::{
    assemble_1d, discreteness_condition_check, radial_decomposition_spectrum, Mesh1D, WeightProfile,
};
use treespec::tree::Tree;

use crate::config::RunConfig;
use crate::output::{Cell, Sink};
use crate::row;

pub struct Outcome {
    pub pass: bool,
    pub summary: String,
}

/// Row-major nested vectors of the form matrices, for JSON.
fn matrix_rows(m: &FormMatrices) -> serde_json::Value {
    macro_rules! rows {
        ($a:expr) => {
            $a.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>()
        };
    }
    json!({"a_bar": rows!(m.a_bar), "a": rows!(m.a), "b_bar": rows!(m.b_bar), "b": rows!(m.b)})
}

fn tree(cfg: &RunConfig) -> Result<Tree<f64>> {
    Tree::build(cfg.tree.spec()).context("building the tree")
}

/// Stiffness and mass weights of the 1-D operator.
fn weights(cfg: &RunConfig, tree: &Tree<f64>) -> Result<(WeightProfile, WeightProfile)> {
    Ok(match cfg.weights.zone_eps {
        None => (WeightProfile::rho_star(tree), WeightProfile::rho_star(tree)),
        Some(eps) => (
            WeightProfile::with_scaled_zones(tree, eps, cfg.weights.stiffness_factor)?,
            WeightProfile::with_scaled_zones(tree, eps, cfg.weights.mass_factor)?,
        ),
    })
}

fn segments(cfg: &RunConfig, default: usize) -> usize {
    cfg.geometry.segments.unwrap_or(default)
}

const SPECTRUM_HEADER: [&str; 4] = ["index", "lambda", "multiplicity", "residual"];

/// One row per eigenvalue counted with multiplicity.
fn spectrum_rows(s: &Spectrum, count: usize) -> Vec<Vec<Cell>> {
    let mut rows = Vec::new();
    for (i, &v) in s.values.iter().enumerate() {
        let residual = s.residuals.get(i).copied().unwrap_or(f64::NAN);
        for _ in 0..s.multiplicities[i] {
            if rows.len() < count {
                rows.push(row![rows.len() + 1, v, s.multiplicities[i], residual]);
            }
        }
    }
    rows
}

fn one_dimensional(cfg: &RunConfig, sink: &Sink, name: &str, decompose: bool) -> Result<Outcome> {
    let tree = tree(cfg)?;
    let (alpha, beta) = weights(cfg, &tree)?;
    let mesh = Mesh1D::uniform(&tree, cfg.experiment.h, &[&alpha, &beta])?;
    let count = cfg.experiment.modes;
    let s = if decompose {
        radial_decomposition_spectrum(&tree, &alpha, &beta, &cfg.potential, &mesh, count, cfg.experiment.tol)?
    } else {
        assemble_1d(&tree, &alpha, &beta, &cfg.potential, &mesh)?.eigenpairs(count, cfg.experiment.tol)?
    };
    let rows = spectrum_rows(&s, count);
    let path = sink.csv(&format!("{name}.csv"), &SPECTRUM_HEADER, &rows)?;
    sink.json(&format!("{name}.json"), &json!({"command": name, "pass": true, "spectrum": s}))?;
    let first = s.values.first().copied().unwrap_or(f64::NAN);
    Ok(Outcome { pass: true, summary: format!("{} eigenvalues, lambda_1 = {first:.10}, {}", rows.len(), path.display()) })
}

pub fn spectrum1d(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    one_dimensional(cfg, sink, "spectrum1d", false)
}

pub fn decompose(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    one_dimensional(cfg, sink, "decompose", true)
}

pub fn spectrum2d(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    let seg = segments(cfg, 4);
    let runs = cfg
        .geometry
        .eps
        .par_iter()
        .map(|&eps| {
            let spec = GeometrySpec2D::new(cfg.tree.spec(), eps).with_apex(cfg.geometry.apex);
            let mesh = mesh_with_segments(&build_geometry_2d(&spec)?, seg)?;
            let w = (!cfg.potential.is_zero()).then(|| mesh.potential_nodes(&cfg.potential));
            let sys = mesh.assemble(w.as_deref());
            let s = sys.eigenpairs(cfg.experiment.modes, cfg.experiment.tol)?;
            let ground = s.vector(0).map(|v| sys.expand(&v));
            Ok((eps, mesh, s, ground))
        })
        .collect::<treespec::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (level, (eps, mesh, s, ground)) in runs.iter().enumerate() {
        for r in spectrum_rows(s, cfg.experiment.modes) {
            let mut full = row![*eps, mesh.mesh.nodes.len()];
            full.extend(r);
            rows.push(full);
        }
        if cfg.experiment.dump_mesh {
            sink.mesh(&format!("mesh{level}"), &mesh.mesh, ground.as_deref())?;
        }
    }
    let path = sink.csv("spectrum2d.csv", &["eps", "nodes", "index", "lambda", "multiplicity", "residual"], &rows)?;
    let firsts: Vec<f64> = runs.iter().map(|r| r.2.values.first().copied().unwrap_or(f64::NAN)).collect();
    let summary: Vec<_> = runs.iter().map(|r| json!({"eps": r.0, "nodes": r.1.mesh.nodes.len(), "spectrum": r.2})).collect();
    sink.json("spectrum2d.json", &json!({"command": "spectrum2d", "pass": true, "levels": summary}))?;
    let listed: Vec<String> = firsts.iter().map(|v| format!("{v:.6}")).collect();
    Ok(Outcome { pass: true, summary: format!("first eigenvalue per eps: {}, {}", listed.join(" "), path.display()) })
}

pub fn sandwich(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    let lab = SandwichConfig {
        tree: cfg.tree.spec(),
        potential: cfg.potential.clone(),
        eps: cfg.geometry.eps.clone(),
        modes: cfg.experiment.modes,
        segments: segments(cfg, 4),
        apex: cfg.geometry.apex,
        h: cfg.experiment.h,
    };
    let report = sandwich_experiment(&lab)?;
    let mut rows = Vec::new();
    for level in &report.levels {
        for r in &level.rows {
            rows.push(row![
                level.eps,
                r.mode,
                report.limit.get(r.mode - 1).copied().unwrap_or(f64::NAN),
                r.mu,
                r.lambda,
                r.nu_coarse,
                r.nu_fine,
                r.nu,
                r.nu_error,
                r.phi_q,
                r.phi_p,
                level.constant.unwrap_or(f64::NAN),
                r.pass
            ]);
        }
    }
    let header = [
        "eps", "mode", "limit", "mu", "lambda", "nu_coarse", "nu_fine", "nu", "nu_error", "phi_q", "phi_p", "c", "pass",
    ];
    let path = sink.csv("sandwich.csv", &header, &rows)?;
    let mut pass = report.pass;
    let mut rayleigh = Vec::new();
    if cfg.experiment.rayleigh_samples > 0 {
        let seed = cfg.seed.context("seed is required for the Rayleigh bound check")?;
        for &eps in &cfg.geometry.eps {
            let r = rayleigh_bound_check(&lab.tree, eps, lab.segments, lab.apex, cfg.experiment.rayleigh_samples, seed)?;
            pass &= r.q_violations == 0 && r.p_violations == 0;
            rayleigh.push(r);
        }
    }
    sink.json("sandwich.json", &json!({"command": "sandwich", "pass": pass, "report": report, "rayleigh": rayleigh}))?;
    let gaps: Vec<String> = report.levels.iter().map(|l| format!("{:.3e}+-{:.1e}", l.gap, l.gap_error)).collect();
    Ok(Outcome {
        pass,
        summary: format!(
            "c spread {:.3}, gap {} decreasing {}, {}",
            report.constant_spread,
            gaps.join(" "),
            report.gap_decreasing,
            path.display()
        ),
    })
}

pub fn converge_weights(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    let lab = WeightConvergenceConfig {
        tree: cfg.tree.spec(),
        potential: cfg.potential.clone(),
        refinements: cfg.weights.refinements.clone(),
        modes: cfg.experiment.modes,
        stiffness_factor: cfg.weights.stiffness_factor,
        mass_factor: cfg.weights.mass_factor,
        h: cfg.experiment.h,
    };
    let report = weight_convergence_experiment(&lab)?;
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| row![r.refinement, r.mode, r.limit, r.value, r.error, r.lower, r.upper, r.envelope_ok])
        .collect();
    let header = ["n", "mode", "limit", "value", "relative_error", "lower", "upper", "envelope_ok"];
    let path = sink.csv("converge_weights.csv", &header, &rows)?;
    let pass = report.strictly_decreasing
        && report.envelope_holds
        && report.final_relative_error <= cfg.experiment.max_relative_error;
    sink.json("converge_weights.json", &json!({"command": "converge-weights", "pass": pass, "report": report}))?;
    Ok(Outcome {
        pass,
        summary: format!(
            "decreasing {}, envelope {}, final relative error {:.4} (limit {}), {}",
            report.strictly_decreasing,
            report.envelope_holds,
            report.final_relative_error,
            cfg.experiment.max_relative_error,
            path.display()
        ),
    })
}

pub fn project(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    let lab = ProjectionConfig {
        tree: cfg.tree.spec(),
        potential: cfg.potential.clone(),
        eps: cfg.geometry.eps.clone(),
        segments: segments(cfg, 8),
        apex: cfg.geometry.apex,
        mode: cfg.experiment.mode,
    };
    let report = eigenfunction_projection_experiment(&lab)?;
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| row![r.eps, r.eigenvalue, r.distance, r.overlap, r.holder_constant, r.connector_tail])
        .collect();
    let header = ["eps", "eigenvalue", "distance", "overlap", "holder_constant", "connector_tail"];
    let path = sink.csv("project.csv", &header, &rows)?;
    let pass = report.tracked && report.final_distance <= cfg.experiment.max_distance;
    sink.json("project.json", &json!({"command": "project", "pass": pass, "report": report}))?;
    if report.soft_failure {
        eprintln!("warning: distances are not monotone although the mode is tracked");
    }
    Ok(Outcome {
        pass,
        summary: format!(
            "final distance {:.4e}, decreasing {}, tracked {}, {}",
            report.final_distance,
            report.decreasing,
            report.tracked,
            path.display()
        ),
    })
}

pub fn kernel_gap(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    let lab = KernelGapConfig {
        tree: cfg.tree.spec(),
        eps: cfg.geometry.eps.clone(),
        segments: segments(cfg, 4),
        apex: cfg.geometry.apex,
    };
    let report = kernel_gap_check(&lab)?;
    let rows: Vec<_> = (0..report.eps.len())
        .map(|i| row![report.eps[i], report.q_infimum[i], report.p_infimum[i]])
        .collect();
    let path = sink.csv("kernel_gap.csv", &["eps", "q_kernel_infimum", "p_kernel_infimum"], &rows)?;
    let pass = report.q_pass && report.p_pass;
    sink.json("kernel_gap.json", &json!({"command": "kernel-gap", "pass": pass, "report": report}))?;
    Ok(Outcome {
        pass,
        summary: format!("slopes Q {:.3} P {:.3}, {}", report.q_slope, report.p_slope, path.display()),
    })
}

pub fn check_discreteness(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    let tree = tree(cfg)?;
    let (alpha, _) = weights(cfg, &tree)?;
    let r = discreteness_condition_check(&tree, &alpha)?;
    let path = sink.csv(
        "discreteness.csv",
        &["generation_factor", "truncated_constant", "best_constant", "holds"],
        &[row![r.generation_factor, r.truncated_constant, r.best_constant, r.holds]],
    )?;
    sink.json("discreteness.json", &json!({"command": "check-discreteness", "pass": r.holds, "report": r}))?;
    let verdict = if r.holds { "condition holds" } else { "condition fails" };
    Ok(Outcome {
        pass: r.holds,
        summary: format!("{verdict}, generation factor {:.6}, {}", r.generation_factor, path.display()),
    })
}

pub fn connector_constants(cfg: &RunConfig, sink: &Sink) -> Result<Outcome> {
    let t = &cfg.tree;
    let a = analyze_reference_vertex(t.k, t.delta, t.dimension, cfg.geometry.apex, cfg.geometry.connector_segments)?;
    let c = a.constants;
    let named = [
        ("alpha_a_bar", c.alpha_a_bar),
        ("alpha_a", c.alpha_a),
        ("alpha_b_bar", c.alpha_b_bar),
        ("alpha_b", c.alpha_b),
        ("beta_a_bar", c.beta_a_bar),
        ("beta_b_bar", c.beta_b_bar),
        ("beta_a", c.beta_a),
        ("beta_b", c.beta_b),
        ("q_factor", c.q_factor()),
        ("p_factor", c.p_factor()),
    ];
    let rows: Vec<_> = named.iter().map(|&(n, v)| row![n, v]).collect();
    let path = sink.csv("connector_constants.csv", &["name", "value"], &rows)?;
    let pass = named.iter().all(|&(_, v)| v > 0.0 && v.is_finite());
    sink.json(
        "connector_constants.json",
        &json!({"command": "connector-constants", "pass": pass, "constants": c, "matrices": matrix_rows(&a.matrices)}),
    )?;
    if cfg.experiment.dump_mesh {
        sink.mesh("connector", &a.mesh.mesh, None)?;
    }
    Ok(Outcome {
        pass,
        summary: format!("q factor {:.6}, p factor {:.6}, {}", c.q_factor(), c.p_factor(), path.display()),
    })
}
