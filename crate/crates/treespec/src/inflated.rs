//! The planar inflation of a binary tree: rectangles along the edges and
//! pentagon connectors at the vertices, meshed conformingly, with the
//! projection `P` to the skeleton and the lift `Q` back.

use serde::Serialize;

use crate::connector::{harmonic_partition_on, ConnectorDomain2D, ConnectorMesh};
use crate::error::{Error, Result};
use crate::fem2d::{assemble_p1, line_weights, p1_matrices};
use crate::mesh::{zip_rows, BoundaryTag, Mesh2D, Point};
use crate::operator1d::{Mesh1D, PotentialProfile};
use crate::system::AssembledSystem;
use crate::tree::{Tree, TreeSpec};

pub const DEFAULT_APEX: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometrySpec2D {
    pub tree: TreeSpec<f64>,
    pub eps: f64,
    pub apex: f64,
}

impl GeometrySpec2D {
    pub fn new(tree: TreeSpec<f64>, eps: f64) -> Self {
        GeometrySpec2D { tree, eps, apex: DEFAULT_APEX }
    }

    pub fn with_apex(mut self, apex: f64) -> Self {
        self.apex = apex;
        self
    }
}

/// Piece of the inflated tree in its own chart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Component {
    Rectangle { generation: usize, width: f64, length: f64 },
    Connector { generation: usize, domain: ConnectorDomain2D },
}

impl Component {
    pub fn area(&self) -> f64 {
        match self {
            Component::Rectangle { width, length, .. } => width * length,
            Component::Connector { domain, .. } => domain.area(),
        }
    }
}

/// Dimensions of the inflated tree. The vertex at the end of a generation-`j`
/// edge is replaced by a connector spanning `eps delta^j` of the skeleton on
/// each incident arm; rectangles fill the rest of every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGeometry2D {
    pub spec: GeometrySpec2D,
    pub tree: Tree<f64>,
    pub widths: Vec<f64>,
    pub zone_radius: Vec<f64>,
    /// Skeleton arclength range `[start, end]` of the rectangle of each generation.
    pub rectangles: Vec<(f64, f64)>,
    pub connectors: Vec<ConnectorDomain2D>,
}

pub fn build_geometry_2d(spec: &GeometrySpec2D) -> Result<TreeGeometry2D> {
    let tree = Tree::build(spec.tree)?;
    if tree.branching() != 2 || spec.tree.dimension != 2 {
        return Err(Error::param("k", "the planar inflation needs k = 2 and N = 2"));
    }
    if !(spec.eps > 0.0 && spec.eps < 1.0) {
        return Err(Error::param("eps", format!("must lie in (0,1), got {}", spec.eps)));
    }
    let depth = tree.depth();
    let delta = spec.tree.width_ratio;
    let widths: Vec<f64> = (0..=depth).map(|j| spec.eps * delta.powi(j as i32)).collect();
    let zone_radius: Vec<f64> = widths[..depth].to_vec();
    let mut rectangles = Vec::with_capacity(depth + 1);
    for i in 0..=depth {
        let len = tree.edge_length(i);
        let start = if i > 0 { zone_radius[i - 1] } else { 0.0 };
        let end = if i < depth { len - zone_radius[i] } else { len };
        if end - start <= 0.0 {
            return Err(Error::Domain(format!(
                "connectors leave no room for the generation-{i} rectangle; reduce eps or J"
            )));
        }
        rectangles.push((start, end));
    }
    let connectors = (0..depth)
        .map(|j| ConnectorDomain2D::pentagon(widths[j], delta, spec.apex))
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeGeometry2D { spec: spec.clone(), tree, widths, zone_radius, rectangles, connectors })
}

impl TreeGeometry2D {
    /// One entry per rectangle and connector shape, with its multiplicity.
    pub fn components(&self) -> Vec<(Component, usize)> {
        let mut out = Vec::new();
        for i in 0..=self.tree.depth() {
            let (a, b) = self.rectangles[i];
            out.push((
                Component::Rectangle { generation: i, width: self.widths[i], length: b - a },
                self.tree.edges_in_generation(i),
            ));
            if i < self.tree.depth() {
                out.push((
                    Component::Connector { generation: i, domain: self.connectors[i].clone() },
                    self.tree.edges_in_generation(i),
                ));
            }
        }
        out
    }

    pub fn area(&self) -> f64 {
        self.components().iter().map(|(c, m)| c.area() * *m as f64).sum()
    }
}

/// A placed connector: global ids of its local nodes and its triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedConnector {
    /// Flat index of the edge the connector ends.
    pub edge: usize,
    pub generation: usize,
    pub nodes: Vec<usize>,
    pub triangles: std::ops::Range<usize>,
}

/// Global triangulation with the bookkeeping needed by `P` and `Q`.
#[derive(Debug, Clone)]
pub struct TreeMesh2D {
    pub geometry: TreeGeometry2D,
    pub mesh: Mesh2D,
    pub segments: usize,
    /// Node positions of the skeleton mesh the projections live on.
    pub stations: Mesh1D,
    /// Per edge: the node columns of its rectangle.
    pub columns: Vec<Vec<Vec<usize>>>,
    /// Per generation: index in the station row of the first rectangle column.
    pub column_offset: Vec<usize>,
    /// Per edge ending in a connector.
    pub connectors: Vec<PlacedConnector>,
    /// Per generation: the local connector mesh and its harmonic partition.
    pub connector_meshes: Vec<(ConnectorMesh, Vec<Vec<f64>>)>,
    /// Skeleton coordinate of every node.
    pub radial: Vec<f64>,
}

fn frame(a: Point, b: Point) -> (Point, Point, Point) {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let u = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
    let normal = [-u[1], u[0]];
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    (mid, u, normal)
}

fn place(f: &(Point, Point, Point), p: Point) -> Point {
    let (m, u, n) = f;
    [m[0] + p[0] * u[0] + p[1] * n[0], m[1] + p[0] * u[1] + p[1] * n[1]]
}

/// Triangulates with `segments` elements across every cross section.
pub fn mesh_with_segments(geometry: &TreeGeometry2D, segments: usize) -> Result<TreeMesh2D> {
    if segments == 0 {
        return Err(Error::Mesh("need at least one element across".into()));
    }
    let n = segments;
    let tree = &geometry.tree;
    let depth = tree.depth();
    let k = tree.branching();

    let connector_meshes = geometry
        .connectors
        .iter()
        .map(|d| {
            let cm = d.mesh(n)?;
            let phi = harmonic_partition_on(&cm)?;
            Ok((cm, phi))
        })
        .collect::<Result<Vec<_>>>()?;

    // Rectangle columns and skeleton stations per generation.
    let mut column_positions = Vec::with_capacity(depth + 1);
    let mut station_rows = Vec::with_capacity(depth + 1);
    let mut column_offset = Vec::with_capacity(depth + 1);
    for i in 0..=depth {
        let (a, b) = geometry.rectangles[i];
        let cols = ((b - a) / (geometry.widths[i] / n as f64)).ceil().max(1.0) as usize;
        let pos: Vec<f64> = (0..=cols).map(|c| a + (b - a) * c as f64 / cols as f64).collect();
        let mut row = Vec::new();
        if i > 0 {
            let z = geometry.zone_radius[i - 1];
            row.extend((0..n).map(|m| z * m as f64 / n as f64));
        }
        column_offset.push(row.len());
        row.extend(pos.iter().copied());
        if i < depth {
            let z = geometry.zone_radius[i];
            let len = tree.edge_length(i);
            row.extend((1..=n).map(|m| len - z + z * m as f64 / n as f64));
            let last = row.len() - 1;
            row[last] = len;
        }
        column_positions.push(pos);
        station_rows.push(row);
    }
    let stations = Mesh1D::from_positions(tree, station_rows)?;

    let mut nodes: Vec<Point> = Vec::new();
    let mut radial: Vec<f64> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut columns: Vec<Vec<Vec<usize>>> = Vec::with_capacity(tree.edge_count());
    let mut start_sections: Vec<Option<Vec<usize>>> = vec![None; tree.edge_count()];
    let mut connectors = Vec::new();

    let w0 = geometry.widths[0];
    let mut root = Vec::with_capacity(n + 1);
    for m in 0..=n {
        nodes.push([-0.5 * w0 + w0 * m as f64 / n as f64, 0.0]);
        radial.push(0.0);
        root.push(nodes.len() - 1);
    }
    start_sections[0] = Some(root);

    for edge in tree.edges() {
        let f = tree.flat_index(edge);
        let i = edge.generation;
        let t0 = tree.shell_start(i);
        let start = start_sections[f].take().expect("parent placed before child");
        let (a, b) = (nodes[start[0]], nodes[start[n]]);
        let fr = frame(a, b);
        let w = geometry.widths[i];
        let pos = &column_positions[i];
        let mut cols = vec![start];
        for c in 1..pos.len() {
            let y = pos[c] - pos[0];
            let col: Vec<usize> = (0..=n)
                .map(|m| {
                    nodes.push(place(&fr, [-0.5 * w + w * m as f64 / n as f64, y]));
                    radial.push(t0 + pos[c]);
                    nodes.len() - 1
                })
                .collect();
            triangles.extend(zip_rows(&nodes, &cols[c - 1], &col)?);
            cols.push(col);
        }
        if i < depth {
            let end = cols.last().expect("at least two columns");
            let (ea, eb) = (nodes[end[0]], nodes[end[n]]);
            let cf = frame(ea, eb);
            let (cm, _) = &connector_meshes[i];
            let base_local = &cm.sections[0];
            let mut map = vec![usize::MAX; cm.mesh.nodes.len()];
            for (m, &l) in base_local.iter().enumerate() {
                map[l] = end[m];
            }
            let z = geometry.zone_radius[i];
            let t_base = t0 + tree.edge_length(i) - z;
            for (l, p) in cm.mesh.nodes.iter().enumerate() {
                if map[l] == usize::MAX {
                    nodes.push(place(&cf, *p));
                    radial.push(t_base + p[1] * z / w);
                    map[l] = nodes.len() - 1;
                }
            }
            let first = triangles.len();
            triangles.extend(cm.mesh.triangles.iter().map(|t| [map[t[0]], map[t[1]], map[t[2]]]));
            connectors.push(PlacedConnector { edge: f, generation: i, nodes: map.clone(), triangles: first..triangles.len() });
            for c in 0..k {
                let child = tree.flat_index(edge.child(k, c));
                let section: Vec<usize> = cm.sections[1 + c].iter().map(|&l| map[l]).collect();
                // Child stations start exactly at the section.
                for &g in &section {
                    radial[g] = t0 + tree.edge_length(i) + z;
                }
                start_sections[child] = Some(section);
            }
        }
        columns.push(cols);
    }

    let mut mesh = Mesh2D { nodes, triangles, boundary: Vec::new() };
    mesh.orient();
    mesh.validate()?;
    let root_nodes: Vec<bool> = {
        let mut mark = vec![false; mesh.nodes.len()];
        for &g in &columns[0][0] {
            mark[g] = true;
        }
        mark
    };
    mesh.tag_boundary(|e| {
        if root_nodes[e[0]] && root_nodes[e[1]] {
            BoundaryTag::RootDirichlet
        } else {
            BoundaryTag::Neumann
        }
    });
    Ok(TreeMesh2D {
        geometry: geometry.clone(),
        mesh,
        segments: n,
        stations,
        columns,
        column_offset,
        connectors,
        connector_meshes,
        radial,
    })
}

/// Triangulation with every element edge at most `h_target`.
pub fn mesh_2d(geometry: &TreeGeometry2D, h_target: f64) -> Result<TreeMesh2D> {
    if !(h_target > 0.0) {
        return Err(Error::param("h", "mesh size must be positive"));
    }
    let mut n = ((2f64.sqrt() * geometry.widths[0] / h_target).ceil() as usize).max(1);
    for _ in 0..64 {
        let m = mesh_with_segments(geometry, n)?;
        if m.mesh.max_edge() <= h_target * (1.0 + 1e-12) {
            return Ok(m);
        }
        n += (n / 8).max(1);
    }
    Err(Error::Mesh(format!("could not reach element size {h_target}; try a larger h or smaller J")))
}

impl TreeMesh2D {
    pub fn eps(&self) -> f64 {
        self.geometry.spec.eps
    }

    pub fn tree(&self) -> &Tree<f64> {
        &self.geometry.tree
    }

    /// Dirichlet on the root section, Neumann elsewhere.
    pub fn assemble(&self, potential: Option<&[f64]>) -> AssembledSystem {
        let dirichlet = self.mesh.nodes_with_tag(BoundaryTag::RootDirichlet);
        assemble_p1(&self.mesh, potential, &dirichlet)
    }

    /// Nodal values of a radial potential through the skeleton coordinate.
    pub fn potential_nodes(&self, w: &PotentialProfile) -> Vec<f64> {
        let tree = self.tree();
        self.radial
            .iter()
            .map(|&t| {
                let i = tree.generation_at(t.min(tree.radius())).unwrap_or(tree.depth()).min(tree.depth());
                let t0 = tree.shell_start(i);
                w.value(i, t0, t - t0)
            })
            .collect()
    }

    fn average(&self, line: &[usize], u: &[f64]) -> f64 {
        let (w, len) = line_weights(&self.mesh, line);
        line.iter().zip(w).map(|(&g, wi)| wi * u[g]).sum::<f64>() / len
    }

    /// Section averages `(parent, children...)` around the vertex ending edge `f`.
    pub fn vertex_averages(&self, f: usize, u: &[f64]) -> Vec<f64> {
        let tree = self.tree();
        let edge = tree.edge_at(f);
        let k = tree.branching();
        let mut out = vec![self.average(self.columns[f].last().expect("columns"), u)];
        for c in 0..k {
            let child = tree.flat_index(edge.child(k, c));
            out.push(self.average(&self.columns[child][0], u));
        }
        out
    }

    /// `P u`: cross-section averages at the rectangle stations and the
    /// partition-of-unity interpolation of section averages in the vertex
    /// zones, in the full-tree numbering of the station mesh.
    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.mesh.nodes.len() {
            return Err(Error::param("u", "field does not match the mesh"));
        }
        let tree = self.tree();
        let layout = self.stations.layout(tree);
        let k = tree.branching();
        let arms = (k + 1) as f64;
        let mut out = vec![0.0; layout.nodes];
        let depth = tree.depth();
        for edge in tree.edges() {
            let f = tree.flat_index(edge);
            let i = edge.generation;
            let ids = self.stations.edge_nodes(tree, &layout, edge);
            let off = self.column_offset[i];
            for (c, col) in self.columns[f].iter().enumerate() {
                out[ids[off + c]] = self.average(col, u);
            }
            let n = self.segments;
            let row = &self.stations.positions[i];
            if i > 0 {
                let parent = tree.flat_index(edge.parent(k).expect("non-root"));
                let b = self.vertex_averages(parent, u);
                let mean = b.iter().sum::<f64>() / arms;
                let own = 1 + edge.position(k);
                let z = self.geometry.zone_radius[i - 1];
                for m in 0..n {
                    let s = row[m] / z;
                    out[ids[m]] = mean * (1.0 - s) + b[own] * s;
                }
            }
            if i < depth {
                let b = self.vertex_averages(f, u);
                let mean = b.iter().sum::<f64>() / arms;
                let z = self.geometry.zone_radius[i];
                let len = tree.edge_length(i);
                let last = row.len() - 1;
                for m in 0..n {
                    let sigma = (len - row[last - m]) / z;
                    out[ids[last - m]] = mean * (1.0 - sigma) + b[0] * sigma;
                }
            }
        }
        out[0] = self.average(&self.columns[0][0], u);
        Ok(out)
    }

    /// `Q f`: constant across rectangle sections and `sum_e f(p_e) phi_e` in
    /// each connector, `p_e` the skeleton points of its sections.
    pub fn lift(&self, f: &[f64]) -> Result<Vec<f64>> {
        let tree = self.tree();
        let layout = self.stations.layout(tree);
        if f.len() != layout.nodes {
            return Err(Error::param("f", "function does not match the station mesh"));
        }
        let k = tree.branching();
        let mut u = vec![0.0; self.mesh.nodes.len()];
        let mut section_values = vec![(0.0, 0.0); tree.edge_count()];
        for edge in tree.edges() {
            let fl = tree.flat_index(edge);
            let ids = self.stations.edge_nodes(tree, &layout, edge);
            let off = self.column_offset[edge.generation];
            let cols = &self.columns[fl];
            for (c, col) in cols.iter().enumerate() {
                for &g in col {
                    u[g] = f[ids[off + c]];
                }
            }
            section_values[fl] = (f[ids[off]], f[ids[off + cols.len() - 1]]);
        }
        for pc in &self.connectors {
            let f_edge = pc.edge;
            let edge = tree.edge_at(f_edge);
            let mut ends = vec![section_values[f_edge].1];
            for c in 0..k {
                ends.push(section_values[tree.flat_index(edge.child(k, c))].0);
            }
            let phi = &self.connector_meshes[pc.generation].1;
            for (l, &g) in pc.nodes.iter().enumerate() {
                u[g] = (0..ends.len()).map(|e| ends[e] * phi[e][l]).sum();
            }
        }
        Ok(u)
    }

    /// `int |u|^2` over the connectors divided by `eps int |grad u|^2`.
    pub fn connector_tail_check(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.mesh.nodes.len() {
            return Err(Error::param("u", "field does not match the mesh"));
        }
        let (k, _, _) = p1_matrices(&self.mesh, None);
        let energy = k.form(u, u);
        let mut connector_mass = 0.0;
        for pc in &self.connectors {
            for t in &self.mesh.triangles[pc.triangles.clone()] {
                let p = [self.mesh.nodes[t[0]], self.mesh.nodes[t[1]], self.mesh.nodes[t[2]]];
                let area = crate::mesh::signed_area(p[0], p[1], p[2]).abs();
                let v = [u[t[0]], u[t[1]], u[t[2]]];
                let sum: f64 = v.iter().sum();
                let sq: f64 = v.iter().map(|x| x * x).sum();
                connector_mass += area / 12.0 * (sq + sum * sum);
            }
        }
        if connector_mass == 0.0 {
            return Ok(0.0);
        }
        Ok(connector_mass / (self.eps() * energy))
    }

    /// Potential on the skeleton from the cross-section averages of a nodal
    /// potential, averaged over the edges of each generation.
    pub fn average_potential(&self, w: &[f64]) -> Result<PotentialProfile> {
        let tree = self.tree();
        let layout = self.stations.layout(tree);
        let pw = self.project(w)?;
        let mut values: Vec<Vec<f64>> = self.stations.positions.iter().map(|r| vec![0.0; r.len()]).collect();
        for edge in tree.edges() {
            let ids = self.stations.edge_nodes(tree, &layout, edge);
            let scale = 1.0 / tree.edges_in_generation(edge.generation) as f64;
            for (m, &g) in ids.iter().enumerate() {
                values[edge.generation][m] += scale * pw[g];
            }
        }
        Ok(PotentialProfile::Table { positions: self.stations.positions.clone(), values })
    }
}

/// Sampled values of `d x2/d theta = (r^j + c d^j - c 2^j d^j s)/p^j` for the
/// straightened binary tree and the bound `1 + c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JacobianReport {
    pub p: f64,
    pub grid_sup: f64,
    pub analytic_sup: f64,
    pub bound: f64,
    pub within_bound: bool,
    /// The sufficient condition `d <= p` fails.
    pub width_exceeds_p: bool,
    pub jacobian_min: f64,
    pub jacobian_ratio: f64,
}

pub fn jacobian_assumption_check(r: f64, d: f64, apex: f64, depth: usize, samples: usize) -> Result<JacobianReport> {
    if !(r > 0.0 && r < 1.0 && d > 0.0 && d < 1.0) {
        return Err(Error::param("r", "ratios must lie in (0,1)"));
    }
    let radius = 1.0 / (1.0 - r);
    let p = (radius - 1.0) / radius;
    let samples = samples.max(2);
    let dx2 = |j: i32, s: f64| (r.powi(j) + apex * d.powi(j) - apex * 2f64.powi(j) * d.powi(j) * s) / p.powi(j);
    let mut grid_sup = f64::NEG_INFINITY;
    let mut analytic_sup = f64::NEG_INFINITY;
    let mut jmin = f64::INFINITY;
    let mut jmax = f64::NEG_INFINITY;
    for j in 0..=depth as i32 {
        let top = 2f64.powi(-j);
        for q in 0..samples {
            let s = top * q as f64 / (samples - 1) as f64;
            let v = dx2(j, s);
            grid_sup = grid_sup.max(v.abs());
            let jac = (2.0 * d).powi(j) * v;
            jmin = jmin.min(jac);
            jmax = jmax.max(jac);
        }
        analytic_sup = analytic_sup.max(dx2(j, 0.0).abs()).max(dx2(j, top).abs());
    }
    Ok(JacobianReport {
        p,
        grid_sup,
        analytic_sup,
        bound: 1.0 + apex,
        within_bound: grid_sup <= 1.0 + apex + 1e-12,
        width_exceeds_p: d > p,
        jacobian_min: jmin,
        jacobian_ratio: jmax / jmin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry(depth: usize, eps: f64) -> TreeGeometry2D {
        build_geometry_2d(&GeometrySpec2D::new(TreeSpec::new(2, 1.0, 0.5, 0.6, depth), eps)).unwrap()
    }

    #[test]
    fn single_rectangle_area() {
        let g = geometry(0, 0.1);
        assert!((g.area() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mesh_area_matches_components() {
        let g = geometry(2, 0.1);
        let m = mesh_with_segments(&g, 4).unwrap();
        assert!((m.mesh.area() - g.area()).abs() < 1e-12 * g.area());
        assert!(m.mesh.min_angle() >= 20.0);
    }

    #[test]
    fn constants_project_and_lift_to_constants() {
        let g = geometry(2, 0.1);
        let m = mesh_with_segments(&g, 4).unwrap();
        let ones = vec![1.0; m.mesh.nodes.len()];
        assert!(m.project(&ones).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let f = vec![1.0; m.stations.layout(m.tree()).nodes];
        assert!(m.lift(&f).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn radial_field_projects_to_itself_on_rectangles() {
        let g = geometry(2, 0.1);
        let m = mesh_with_segments(&g, 4).unwrap();
        let tree = m.tree();
        let pu = m.project(&m.radial).unwrap();
        let layout = m.stations.layout(tree);
        for edge in tree.edges() {
            let ids = m.stations.edge_nodes(tree, &layout, edge);
            let off = m.column_offset[edge.generation];
            for c in 0..m.columns[tree.flat_index(edge)].len() {
                let s = m.stations.positions[edge.generation][off + c];
                assert!((pu[ids[off + c]] - tree.shell_start(edge.generation) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_examples() {
        let rep = jacobian_assumption_check(0.5, 0.4, 0.3, 6, 33).unwrap();
        assert!(rep.within_bound && !rep.width_exceeds_p);
        assert!((rep.grid_sup - rep.analytic_sup).abs() < 1e-12);
        let flat = jacobian_assumption_check(0.5, 0.4, 0.0, 6, 33).unwrap();
        assert!((flat.grid_sup - 1.0).abs() < 1e-12);
        assert!(jacobian_assumption_check(0.5, 0.6, 0.3, 6, 33).unwrap().width_exceeds_p);
    }
}
