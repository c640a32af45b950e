//! Regular rooted metric trees: generations, counting function, canonical
//! cross-section weight and truncation radii.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Edge budget used by [`Tree::build`] when none is given.
pub const DEFAULT_EDGE_BUDGET: usize = 1 << 22;

/// Parameters of a regular tree truncated at generation `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec<T> {
    pub branching: usize,
    pub base_length: T,
    pub length_ratio: T,
    pub width_ratio: T,
    pub dimension: usize,
    pub cross_section: T,
    pub depth: usize,
}

impl<T: Real> TreeSpec<T> {
    pub fn new(branching: usize, base_length: T, length_ratio: T, width_ratio: T, depth: usize) -> Self {
        TreeSpec {
            branching,
            base_length,
            length_ratio,
            width_ratio,
            dimension: 2,
            cross_section: T::one(),
            depth,
        }
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension;
        self
    }

    pub fn with_cross_section(mut self, measure: T) -> Self {
        self.cross_section = measure;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: T| x > T::zero() && x < T::one();
        if self.branching == 0 {
            return Err(Error::param("k", "branching must be a positive integer"));
        }
        if !(self.base_length > T::zero()) || !self.base_length.is_finite() {
            return Err(Error::param("l0", format!("must be positive, got {}", self.base_length)));
        }
        if !open_unit(self.length_ratio) {
            return Err(Error::param("r", format!("must lie in (0,1), got {}", self.length_ratio)));
        }
        if !open_unit(self.width_ratio) {
            return Err(Error::param("delta", format!("must lie in (0,1), got {}", self.width_ratio)));
        }
        if self.dimension < 2 {
            return Err(Error::param("N", format!("must be at least 2, got {}", self.dimension)));
        }
        if !(self.cross_section > T::zero()) || !self.cross_section.is_finite() {
            return Err(Error::param(
                "omega",
                format!("must be positive, got {}", self.cross_section),
            ));
        }
        Ok(())
    }

    /// Per-generation factor `k * delta^(N-1)` of the total cross section.
    pub fn generation_factor(&self) -> T {
        T::from_count(self.branching) * self.width_ratio.powi(self.dimension as i32 - 1)
    }
}

/// Edge address: generation and position within the generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId {
    pub generation: usize,
    pub index: usize,
}

impl EdgeId {
    pub fn root() -> Self {
        EdgeId { generation: 0, index: 0 }
    }

    pub fn parent(&self, k: usize) -> Option<EdgeId> {
        (self.generation > 0).then(|| EdgeId {
            generation: self.generation - 1,
            index: self.index / k,
        })
    }

    pub fn child(&self, k: usize, position: usize) -> EdgeId {
        debug_assert!(position < k);
        EdgeId {
            generation: self.generation + 1,
            index: self.index * k + position,
        }
    }

    /// Position of this edge among its siblings.
    pub fn position(&self, k: usize) -> usize {
        self.index % k
    }
}

/// Point on an edge, addressed by arclength from the edge's start vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreePoint<T> {
    pub edge: EdgeId,
    pub arclength: T,
}

/// Which radius to report for the part of the tree beyond a generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailMode {
    Infinite,
    Truncated,
}

/// A built regular tree with generation-major implicit indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree<T> {
    spec: TreeSpec<T>,
    /// `starts[j]` is the distance from the root to the start of generation `j`;
    /// `starts[depth + 1]` is the radius.
    starts: Vec<T>,
    offsets: Vec<usize>,
}

impl<T: Real> Tree<T> {
    pub fn build(spec: TreeSpec<T>) -> Result<Self> {
        Self::build_with_budget(spec, DEFAULT_EDGE_BUDGET)
    }

    pub fn build_with_budget(spec: TreeSpec<T>, budget: usize) -> Result<Self> {
        spec.validate()?;
        let mut offsets = Vec::with_capacity(spec.depth + 2);
        let mut total: usize = 0;
        let mut width: usize = 1;
        for j in 0..=spec.depth {
            offsets.push(total);
            total = total
                .checked_add(width)
                .filter(|&t| t <= budget)
                .ok_or_else(|| {
                    Error::Resource(format!(
                        "tree with k={} and J={} exceeds the edge budget {budget}",
                        spec.branching, spec.depth
                    ))
                })?;
            if j < spec.depth {
                width = width.checked_mul(spec.branching).ok_or_else(|| {
                    Error::Resource("edge count overflows usize".to_string())
                })?;
            }
        }
        offsets.push(total);
        let mut starts = Vec::with_capacity(spec.depth + 2);
        let mut t = T::zero();
        for j in 0..=spec.depth {
            starts.push(t);
            t = t + spec.base_length * spec.length_ratio.powi(j as i32);
        }
        starts.push(t);
        Ok(Tree { spec, starts, offsets })
    }

    pub fn spec(&self) -> &TreeSpec<T> {
        &self.spec
    }

    pub fn branching(&self) -> usize {
        self.spec.branching
    }

    pub fn depth(&self) -> usize {
        self.spec.depth
    }

    pub fn edge_length(&self, generation: usize) -> T {
        self.spec.base_length * self.spec.length_ratio.powi(generation as i32)
    }

    pub fn edges_in_generation(&self, generation: usize) -> usize {
        self.offsets[generation + 1] - self.offsets[generation]
    }

    /// Vertices at generation `j` are the far ends of generation-`j` edges.
    pub fn vertices_in_generation(&self, generation: usize) -> usize {
        self.edges_in_generation(generation)
    }

    pub fn edge_count(&self) -> usize {
        self.offsets[self.spec.depth + 1]
    }

    /// Flat generation-major index of an edge.
    pub fn flat_index(&self, edge: EdgeId) -> usize {
        self.offsets[edge.generation] + edge.index
    }

    pub fn edge_at(&self, flat: usize) -> EdgeId {
        let generation = match self.offsets.binary_search(&flat) {
            Ok(g) => g,
            Err(g) => g - 1,
        };
        EdgeId {
            generation,
            index: flat - self.offsets[generation],
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        (0..=self.spec.depth).flat_map(move |g| {
            (0..self.edges_in_generation(g)).map(move |index| EdgeId { generation: g, index })
        })
    }

    /// Distance from the root to the start vertex of generation `j`.
    pub fn shell_start(&self, generation: usize) -> T {
        self.starts[generation]
    }

    pub fn radius(&self) -> T {
        self.starts[self.spec.depth + 1]
    }

    pub fn infinite_radius(&self) -> T {
        self.spec.base_length / (T::one() - self.spec.length_ratio)
    }

    /// Sum of all edge lengths of the truncated tree.
    pub fn total_length(&self) -> T {
        (0..=self.spec.depth).fold(T::zero(), |acc, j| {
            acc + T::from_count(self.edges_in_generation(j)) * self.edge_length(j)
        })
    }

    pub fn distance_from_root(&self, point: &TreePoint<T>) -> T {
        self.starts[point.edge.generation] + point.arclength
    }

    pub fn check_point(&self, point: &TreePoint<T>) -> Result<()> {
        let g = point.edge.generation;
        if g > self.spec.depth || point.edge.index >= self.edges_in_generation(g) {
            return Err(Error::Domain(format!("edge {:?} not in tree", point.edge)));
        }
        if point.arclength < T::zero() || point.arclength > self.edge_length(g) {
            return Err(Error::Domain(format!(
                "arclength {} outside edge of length {}",
                point.arclength,
                self.edge_length(g)
            )));
        }
        Ok(())
    }

    /// Generation whose shell contains `t`, with shell boundaries assigned to
    /// the deeper generation.
    pub fn generation_at(&self, t: T) -> Result<usize> {
        if !(t >= T::zero()) || t >= self.radius() {
            return Err(Error::Domain(format!(
                "t = {t} outside [0, {})",
                self.radius()
            )));
        }
        let j = self.starts[1..=self.spec.depth + 1]
            .iter()
            .take_while(|&&s| s <= t)
            .count();
        Ok(j)
    }

    pub fn counting_function(&self, t: T) -> Result<usize> {
        Ok(self.edges_in_generation(self.generation_at(t)?))
    }

    pub fn rho_star_generation(&self, generation: usize) -> T {
        self.spec
            .width_ratio
            .powi(((self.spec.dimension - 1) * generation) as i32)
            * self.spec.cross_section
    }

    pub fn rho_star(&self, point: &TreePoint<T>) -> Result<T> {
        self.check_point(point)?;
        Ok(self.rho_star_generation(point.edge.generation))
    }

    pub fn total_cross_section(&self, t: T) -> Result<T> {
        let j = self.generation_at(t)?;
        Ok(T::from_count(self.edges_in_generation(j)) * self.rho_star_generation(j))
    }

    /// Radius of the maximal subtree beyond generation `j`.
    pub fn tail_radius(&self, generation: usize, mode: TailMode) -> T {
        let l0 = self.spec.base_length;
        let r = self.spec.length_ratio;
        let infinite = l0 * r.powi(generation as i32 + 1) / (T::one() - r);
        match mode {
            TailMode::Infinite => infinite,
            TailMode::Truncated => {
                if generation >= self.spec.depth {
                    T::zero()
                } else {
                    self.radius() - self.starts[generation + 1]
                }
            }
        }
    }
}
