//! Planar triangulations built from stacked node rows.
//!
//! Every patch is a sequence of polylines running from a left side to a right
//! side; consecutive polylines are joined by a zipper triangulation that
//! tolerates different node counts on the two rows.

use serde::Serialize;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BoundaryTag {
    RootDirichlet,
    Neumann,
}

impl BoundaryTag {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryTag::RootDirichlet => "ROOT_DIRICHLET",
            BoundaryTag::Neumann => "NEUMANN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh2D {
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<BoundaryEdge>,
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Smallest interior angle of a triangle, in degrees.
pub fn min_angle(a: Point, b: Point, c: Point) -> f64 {
    let (la, lb, lc) = (dist(b, c), dist(a, c), dist(a, b));
    let angle = |opp: f64, s1: f64, s2: f64| {
        ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2)).clamp(-1.0, 1.0).acos()
    };
    angle(la, lb, lc)
        .min(angle(lb, la, lc))
        .min(angle(lc, la, lb))
        .to_degrees()
}

pub fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Point at parameter `s` in `[0,1]` of a polyline whose nodes sit at
/// uniform parameter spacing.
pub fn polyline_at(nodes: &[Point], s: f64) -> Point {
    let segs = nodes.len() - 1;
    let x = (s * segs as f64).clamp(0.0, segs as f64);
    let i = (x.floor() as usize).min(segs - 1);
    lerp(nodes[i], nodes[i + 1], x - i as f64)
}

/// Triangulates the strip between two rows given left to right. Rows share
/// orientation: `bottom` lies on the right-hand side when walking `top`
/// backwards, so triangles come out counterclockwise for a row stack that
/// grows upward.
pub fn zip_rows(nodes: &[Point], bottom: &[usize], top: &[usize]) -> Result<Vec<[usize; 3]>> {
    let (p, q) = (bottom.len() - 1, top.len() - 1);
    let score = |t: [usize; 3]| {
        if signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]) <= 0.0 {
            f64::NEG_INFINITY
        } else {
            min_angle(nodes[t[0]], nodes[t[1]], nodes[t[2]])
        }
    };
    // Max-min path through the (p+1) x (q+1) grid of row positions; ties
    // broken by the total of the element angles.
    let better = |a: (f64, f64), b: (f64, f64)| a.0 > b.0 + 1e-9 || ((a.0 - b.0).abs() <= 1e-9 && a.1 > b.1);
    let idx = |i: usize, j: usize| i * (q + 1) + j;
    let mut best = vec![(f64::NEG_INFINITY, f64::NEG_INFINITY); (p + 1) * (q + 1)];
    let mut from_bottom = vec![false; (p + 1) * (q + 1)];
    best[0] = (f64::INFINITY, 0.0);
    for i in 0..=p {
        for j in 0..=q {
            if i == 0 && j == 0 {
                continue;
            }
            let mut cand = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            let mut via_bottom = false;
            if i > 0 {
                let s = score([bottom[i - 1], bottom[i], top[j]]);
                let prev = best[idx(i - 1, j)];
                cand = (prev.0.min(s), prev.1 + s);
                via_bottom = true;
            }
            if j > 0 {
                let s = score([bottom[i], top[j], top[j - 1]]);
                let prev = best[idx(i, j - 1)];
                let c = (prev.0.min(s), prev.1 + s);
                if !via_bottom || better(c, cand) {
                    cand = c;
                    via_bottom = false;
                }
            }
            best[idx(i, j)] = cand;
            from_bottom[idx(i, j)] = via_bottom;
        }
    }
    if best[idx(p, q)].0 == f64::NEG_INFINITY {
        return Err(Error::Mesh(format!("no valid triangulation between rows of {p} and {q} segments")));
    }
    let mut out = Vec::with_capacity(p + q);
    let (mut i, mut j) = (p, q);
    while i > 0 || j > 0 {
        if from_bottom[idx(i, j)] {
            out.push([bottom[i - 1], bottom[i], top[j]]);
            i -= 1;
        } else {
            out.push([bottom[i], top[j], top[j - 1]]);
            j -= 1;
        }
    }
    out.reverse();
    Ok(out)
}

/// Nodes and triangles of a patch spanned by blending a bottom and a top
/// polyline. `levels` lists blend parameters from 0 to 1; the node count of
/// each intermediate row is interpolated between the two end rows.
#[derive(Debug, Clone)]
pub struct BlendPatch {
    pub rows: Vec<Vec<usize>>,
    pub triangles: Vec<[usize; 3]>,
}

/// Adds a blended patch to `nodes`. Rows at `t = 0` and `t = 1` reuse the
/// given node indices so that patches can share their end rows.
pub fn blend_patch(
    nodes: &mut Vec<Point>,
    bottom: &[usize],
    top: &[usize],
    levels: &[f64],
) -> Result<BlendPatch> {
    let bpts: Vec<Point> = bottom.iter().map(|&i| nodes[i]).collect();
    let tpts: Vec<Point> = top.iter().map(|&i| nodes[i]).collect();
    let (nb, nt) = (bottom.len() - 1, top.len() - 1);
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(levels.len());
    for (r, &t) in levels.iter().enumerate() {
        if r == 0 {
            rows.push(bottom.to_vec());
            continue;
        }
        if r + 1 == levels.len() {
            rows.push(top.to_vec());
            continue;
        }
        let count = ((1.0 - t) * nb as f64 + t * nt as f64).round().max(1.0) as usize;
        let row: Vec<usize> = (0..=count)
            .map(|i| {
                let s = i as f64 / count as f64;
                let p = lerp(polyline_at(&bpts, s), polyline_at(&tpts, s), t);
                nodes.push(p);
                nodes.len() - 1
            })
            .collect();
        rows.push(row);
    }
    let mut triangles = Vec::new();
    for w in rows.windows(2) {
        triangles.extend(zip_rows(nodes, &w[0], &w[1])?);
    }
    Ok(BlendPatch { rows, triangles })
}

/// Uniform node row along a straight segment.
pub fn push_segment(nodes: &mut Vec<Point>, a: Point, b: Point, segments: usize) -> Vec<usize> {
    (0..=segments)
        .map(|i| {
            nodes.push(lerp(a, b, i as f64 / segments as f64));
            nodes.len() - 1
        })
        .collect()
}

impl Mesh2D {
    /// Makes every triangle counterclockwise.
    pub fn orient(&mut self) {
        for t in &mut self.triangles {
            if signed_area(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
        }
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| signed_area(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]).abs())
            .sum()
    }

    pub fn min_angle(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| min_angle(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]))
            .fold(180.0, f64::min)
    }

    pub fn max_edge(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| {
                [
                    dist(self.nodes[t[0]], self.nodes[t[1]]),
                    dist(self.nodes[t[1]], self.nodes[t[2]]),
                    dist(self.nodes[t[0]], self.nodes[t[2]]),
                ]
            })
            .fold(0.0, f64::max)
    }

    /// Edges used by exactly one triangle, each as a sorted node pair.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| {
                [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]]
                    .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
            })
            .collect();
        edges.sort_unstable();
        let mut out = Vec::new();
        let mut i = 0;
        while i < edges.len() {
            let mut j = i + 1;
            while j < edges.len() && edges[j] == edges[i] {
                j += 1;
            }
            if j - i == 1 {
                out.push(edges[i]);
            }
            i = j;
        }
        out
    }

    /// Tags all boundary edges with `classify`.
    pub fn tag_boundary(&mut self, classify: impl Fn([usize; 2]) -> BoundaryTag) {
        self.boundary = self
            .boundary_edges()
            .into_iter()
            .map(|nodes| BoundaryEdge { nodes, tag: classify(nodes) })
            .collect();
    }

    pub fn nodes_with_tag(&self, tag: BoundaryTag) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        for e in self.boundary.iter().filter(|e| e.tag == tag) {
            mark[e.nodes[0]] = true;
            mark[e.nodes[1]] = true;
        }
        mark
    }

    /// Checks that every triangle has positive area and every edge is shared
    /// by at most two triangles.
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.triangles.iter().enumerate() {
            if signed_area(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]) <= 0.0 {
                return Err(Error::Mesh(format!("triangle {i} is not positively oriented")));
            }
        }
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| {
                [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]]
                    .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
            })
            .collect();
        edges.sort_unstable();
        for w in edges.windows(3) {
            if w[0] == w[2] {
                return Err(Error::Mesh(format!("edge {:?} shared by three triangles", w[0])));
            }
        }
        Ok(())
    }
}

/// Triangulates an axis-aligned rectangle `[0,width] x [0,height]` with
/// near-equilateral elements whose edges do not exceed `h`. Odd rows are
/// shifted by half a spacing and closed by half-width boundary segments.
pub fn mesh_rectangle(width: f64, height: f64, h: f64) -> Result<Mesh2D> {
    if !(width > 0.0 && height > 0.0 && h > 0.0) {
        return Err(Error::Mesh("rectangle sides and h must be positive".into()));
    }
    let nx = (width / h).ceil().max(1.0) as usize;
    let ny = (height / (h * 3f64.sqrt() / 2.0)).ceil().max(1.0) as usize;
    let dx = width / nx as f64;
    let mut nodes = Vec::new();
    let mut rows = Vec::with_capacity(ny + 1);
    for r in 0..=ny {
        let y = height * r as f64 / ny as f64;
        let mut xs: Vec<f64> = if r % 2 == 0 {
            (0..=nx).map(|i| i as f64 * dx).collect()
        } else {
            let mut v = vec![0.0];
            v.extend((0..nx).map(|i| (i as f64 + 0.5) * dx));
            v.push(width);
            v
        };
        xs.dedup();
        let row: Vec<usize> = xs
            .into_iter()
            .map(|x| {
                nodes.push([x, y]);
                nodes.len() - 1
            })
            .collect();
        rows.push(row);
    }
    let mut triangles = Vec::new();
    for w in rows.windows(2) {
        triangles.extend(zip_rows(&nodes, &w[0], &w[1])?);
    }
    let mut mesh = Mesh2D { nodes, triangles, boundary: Vec::new() };
    mesh.tag_boundary(|_| BoundaryTag::Neumann);
    Ok(mesh)
}

/// Column-structured rectangle `[0,length] x [0,width]` with `cols` columns
/// and `rows` cells across; column `i` holds nodes `i*(rows+1) ..`.
pub fn mesh_strip(length: f64, width: f64, cols: usize, rows: usize) -> Result<Mesh2D> {
    let mut nodes = Vec::new();
    let mut columns = Vec::new();
    for i in 0..=cols {
        let x = length * i as f64 / cols as f64;
        columns.push(push_segment(&mut nodes, [x, width], [x, 0.0], rows));
    }
    let mut triangles = Vec::new();
    for w in columns.windows(2) {
        triangles.extend(zip_rows(&nodes, &w[0], &w[1])?);
    }
    let mut mesh = Mesh2D { nodes, triangles, boundary: Vec::new() };
    mesh.tag_boundary(|_| BoundaryTag::Neumann);
    Ok(mesh)
}
