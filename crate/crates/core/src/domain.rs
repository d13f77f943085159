//! Truncated half-space domains `[0, L1] x [-L2, L2]` (or `[0, L1]` for
//! one-dimensional graphs) and their structured simplicial meshes.
//!
//! The wall `{x1 = 0}` carries the free (natural) boundary condition; every
//! other boundary piece is an artificial Dirichlet truncation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Free,
    Dirichlet,
    Interior,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Free => "FREE",
            Tag::Dirichlet => "DIRICHLET",
            Tag::Interior => "INTERIOR",
        }
    }
}

/// `x1 in [0, depth]`, `x2 in [-width, width]` (the latter only for `n = 2`),
/// meshed with target spacing `resolution`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfDomain {
    pub n: usize,
    pub depth: f64,
    #[serde(default)]
    pub width: f64,
    pub resolution: f64,
}

impl HalfDomain {
    pub fn line(depth: f64, resolution: f64) -> Self {
        Self { n: 1, depth, width: 0.0, resolution }
    }

    pub fn rect(depth: f64, width: f64, resolution: f64) -> Self {
        Self { n: 2, depth, width, resolution }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != 1 && self.n != 2 {
            return Err(Error::Config(format!("graph dimension must be 1 or 2, got {}", self.n)));
        }
        if !(self.depth.is_finite() && self.depth > 0.0) {
            return Err(Error::Config(format!("depth must be positive, got {}", self.depth)));
        }
        if self.n == 2 && !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::Config(format!("width must be positive, got {}", self.width)));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::Config(format!("resolution must be positive, got {}", self.resolution)));
        }
        Ok(())
    }

    /// Distance from `x` to the Dirichlet part of the boundary.
    pub fn dirichlet_distance(&self, x: [f64; 2]) -> f64 {
        let far = self.depth - x[0];
        if self.n == 1 {
            far
        } else {
            far.min(self.width - x[1].abs())
        }
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        if self.n == 1 {
            self.depth
        } else {
            self.depth * 2.0 * self.width
        }
    }
}

/// Structured simplicial mesh of a [`HalfDomain`].
///
/// Coordinates are stored as `[x1, x2]`; for `n = 1` the second entry is zero.
/// Cells are stored flat with stride `n + 1`, boundary facets with stride `n`.
#[derive(Clone, Debug)]
pub struct Mesh {
    domain: HalfDomain,
    nx: usize,
    ny: usize,
    coords: Vec<[f64; 2]>,
    cells: Vec<usize>,
    facets: Vec<usize>,
    facet_tags: Vec<Tag>,
    facet_cells: Vec<usize>,
    vertex_tags: Vec<Tag>,
    cell_measures: Vec<f64>,
    // Gradients of the barycentric coordinates, stride n + 1.
    shape_grads: Vec<[f64; 2]>,
    neighbor_offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Mesh {
    pub fn build(domain: &HalfDomain) -> Result<Self> {
        domain.validate()?;
        let nx = (domain.depth / domain.resolution).round() as usize;
        let ny = if domain.n == 2 { (2.0 * domain.width / domain.resolution).round() as usize } else { 0 };
        if nx < 2 || (domain.n == 2 && ny < 2) {
            return Err(Error::Config(format!(
                "resolution {} too coarse: need at least two cells across each direction",
                domain.resolution
            )));
        }
        Ok(Self::from_grid(*domain, nx, ny))
    }

    fn from_grid(domain: HalfDomain, nx: usize, ny: usize) -> Self {
        let hx = domain.depth / nx as f64;
        let mut coords = Vec::new();
        let mut vertex_tags = Vec::new();
        let mut cells = Vec::new();
        let mut facets = Vec::new();
        let mut facet_tags = Vec::new();
        let mut facet_cells = Vec::new();

        if domain.n == 1 {
            for i in 0..=nx {
                coords.push([i as f64 * hx, 0.0]);
                vertex_tags.push(if i == 0 {
                    Tag::Free
                } else if i == nx {
                    Tag::Dirichlet
                } else {
                    Tag::Interior
                });
            }
            for i in 0..nx {
                cells.extend([i, i + 1]);
            }
            facets.push(0);
            facet_tags.push(Tag::Free);
            facet_cells.push(0);
            facets.push(nx);
            facet_tags.push(Tag::Dirichlet);
            facet_cells.push(nx - 1);
        } else {
            let hy = 2.0 * domain.width / ny as f64;
            let id = |i: usize, j: usize| j * (nx + 1) + i;
            for j in 0..=ny {
                for i in 0..=nx {
                    let x1 = if i == nx { domain.depth } else { i as f64 * hx };
                    let x2 = if j == ny { domain.width } else { -domain.width + j as f64 * hy };
                    coords.push([x1, x2]);
                    let on_outer = i == nx || j == 0 || j == ny;
                    vertex_tags.push(if on_outer {
                        Tag::Dirichlet
                    } else if i == 0 {
                        Tag::Free
                    } else {
                        Tag::Interior
                    });
                }
            }
            // Square (i, j) is split along its (i, j)-(i+1, j+1) diagonal into
            // cells 2s and 2s + 1, s = j * nx + i.
            for j in 0..ny {
                for i in 0..nx {
                    let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                    cells.extend([v00, v10, v11]);
                    cells.extend([v00, v11, v01]);
                }
            }
            let cell_of = |i: usize, j: usize, upper: bool| 2 * (j * nx + i) + upper as usize;
            for j in 0..ny {
                facets.extend([id(0, j), id(0, j + 1)]);
                facet_tags.push(Tag::Free);
                facet_cells.push(cell_of(0, j, true));
            }
            for j in 0..ny {
                facets.extend([id(nx, j), id(nx, j + 1)]);
                facet_tags.push(Tag::Dirichlet);
                facet_cells.push(cell_of(nx - 1, j, false));
            }
            for i in 0..nx {
                facets.extend([id(i, 0), id(i + 1, 0)]);
                facet_tags.push(Tag::Dirichlet);
                facet_cells.push(cell_of(i, 0, false));
                facets.extend([id(i, ny), id(i + 1, ny)]);
                facet_tags.push(Tag::Dirichlet);
                facet_cells.push(cell_of(i, ny - 1, true));
            }
        }

        let mut mesh = Self {
            domain,
            nx,
            ny,
            coords,
            cells,
            facets,
            facet_tags,
            facet_cells,
            vertex_tags,
            cell_measures: Vec::new(),
            shape_grads: Vec::new(),
            neighbor_offsets: Vec::new(),
            neighbors: Vec::new(),
        };
        mesh.compute_cell_geometry();
        mesh.compute_neighbors();
        mesh
    }

    fn compute_cell_geometry(&mut self) {
        let k = self.n() + 1;
        let nc = self.num_cells();
        self.cell_measures = Vec::with_capacity(nc);
        self.shape_grads = Vec::with_capacity(nc * k);
        for c in 0..nc {
            let v = self.cell(c);
            if self.n() == 1 {
                let len = self.coords[v[1]][0] - self.coords[v[0]][0];
                self.cell_measures.push(len);
                self.shape_grads.push([-1.0 / len, 0.0]);
                self.shape_grads.push([1.0 / len, 0.0]);
            } else {
                let [p0, p1, p2] = [self.coords[v[0]], self.coords[v[1]], self.coords[v[2]]];
                let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
                self.cell_measures.push(0.5 * det);
                self.shape_grads.push([(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det]);
                self.shape_grads.push([(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det]);
                self.shape_grads.push([(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det]);
            }
        }
    }

    fn compute_neighbors(&mut self) {
        let nv = self.num_vertices();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nv];
        for c in 0..self.num_cells() {
            let v = self.cell(c).to_vec();
            for &a in &v {
                for &b in &v {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        self.neighbor_offsets = Vec::with_capacity(nv + 1);
        self.neighbors.clear();
        self.neighbor_offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            self.neighbors.extend(list);
            self.neighbor_offsets.push(self.neighbors.len());
        }
    }

    pub fn domain(&self) -> &HalfDomain {
        &self.domain
    }

    /// Graph dimension `n`.
    pub fn n(&self) -> usize {
        self.domain.n
    }

    /// Number of cells along `x1` and `x2` (`ny = 0` when `n = 1`).
    pub fn grid_size(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Actual mesh spacing along `x1`.
    pub fn h(&self) -> f64 {
        self.domain.depth / self.nx as f64
    }

    pub fn num_vertices(&self) -> usize {
        self.coords.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.n() + 1)
    }

    pub fn coord(&self, v: usize) -> [f64; 2] {
        self.coords[v]
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let k = self.n() + 1;
        &self.cells[c * k..(c + 1) * k]
    }

    pub fn cell_measure(&self, c: usize) -> f64 {
        self.cell_measures[c]
    }

    /// Gradients of the barycentric coordinates of cell `c`, one per local vertex.
    pub fn shape_gradients(&self, c: usize) -> &[[f64; 2]] {
        let k = self.n() + 1;
        &self.shape_grads[c * k..(c + 1) * k]
    }

    pub fn cell_barycenter(&self, c: usize) -> [f64; 2] {
        let v = self.cell(c);
        let k = v.len() as f64;
        let mut b = [0.0; 2];
        for &i in v {
            b[0] += self.coords[i][0] / k;
            b[1] += self.coords[i][1] / k;
        }
        b
    }

    pub fn vertex_tag(&self, v: usize) -> Tag {
        self.vertex_tags[v]
    }

    pub fn vertex_tags(&self) -> &[Tag] {
        &self.vertex_tags
    }

    pub fn num_facets(&self) -> usize {
        self.facet_tags.len()
    }

    pub fn facet(&self, f: usize) -> &[usize] {
        let k = self.n();
        &self.facets[f * k..(f + 1) * k]
    }

    pub fn facet_tag(&self, f: usize) -> Tag {
        self.facet_tags[f]
    }

    /// The unique cell adjacent to boundary facet `f`.
    pub fn facet_cell(&self, f: usize) -> usize {
        self.facet_cells[f]
    }

    /// `(n-1)`-dimensional measure of facet `f` in the parameter domain.
    pub fn facet_measure(&self, f: usize) -> f64 {
        let v = self.facet(f);
        if v.len() == 1 {
            1.0
        } else {
            let (a, b) = (self.coords[v[0]], self.coords[v[1]]);
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        }
    }

    /// Indices of the FREE (wall) facets.
    pub fn wall_facets(&self) -> Vec<usize> {
        (0..self.num_facets()).filter(|&f| self.facet_tags[f] == Tag::Free).collect()
    }

    /// Vertices sharing a cell with `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.neighbor_offsets[v]..self.neighbor_offsets[v + 1]]
    }

    /// Vertices within two edges of `v`, including `v` itself, sorted.
    pub fn two_ring(&self, v: usize) -> Vec<usize> {
        self.ring(v, 2)
    }

    /// Vertices within `k` edges of `v`, including `v` itself, sorted.
    pub fn ring(&self, v: usize, k: usize) -> Vec<usize> {
        let mut out = vec![v];
        let mut frontier = vec![v];
        for _ in 0..k {
            let mut next = Vec::new();
            for &a in &frontier {
                next.extend_from_slice(self.neighbors(a));
            }
            next.sort_unstable();
            next.dedup();
            next.retain(|b| !out.contains(b));
            out.extend_from_slice(&next);
            frontier = next;
        }
        out.sort_unstable();
        out
    }

    /// Lumped mass `sum_{K ∋ v} |K| / (n + 1)` of every vertex.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.num_vertices()];
        let k = (self.n() + 1) as f64;
        for c in 0..self.num_cells() {
            for &v in self.cell(c) {
                m[v] += self.cell_measures[c] / k;
            }
        }
        m
    }

    /// Vertices `v` with `|v - x0| <= r`, in index order. An empty result
    /// means `r` is below the local mesh size.
    pub fn half_ball_vertices(&self, x0: [f64; 2], r: f64) -> Vec<usize> {
        let r2 = r * r;
        (0..self.num_vertices())
            .filter(|&v| {
                let p = self.coords[v];
                (p[0] - x0[0]).powi(2) + (p[1] - x0[1]).powi(2) <= r2 * (1.0 + 1e-12)
            })
            .collect()
    }

    /// Vertex closest to `x`.
    pub fn nearest_vertex(&self, x: [f64; 2]) -> usize {
        let d = |v: usize| (self.coords[v][0] - x[0]).powi(2) + (self.coords[v][1] - x[1]).powi(2);
        (0..self.num_vertices()).min_by(|&a, &b| d(a).total_cmp(&d(b))).expect("mesh has vertices")
    }

    /// Cell containing `x`, or the cell with the nearest barycenter if `x`
    /// lies outside the domain.
    pub fn locate(&self, x: [f64; 2]) -> usize {
        let d = |c: usize| {
            let b = self.cell_barycenter(c);
            (b[0] - x[0]).powi(2) + (b[1] - x[1]).powi(2)
        };
        (0..self.num_cells()).min_by(|&a, &b| d(a).total_cmp(&d(b))).expect("mesh has cells")
    }

    /// Uniform refinement halving the mesh size; coarse vertices and tags are
    /// preserved.
    pub fn refine(&self) -> Mesh {
        let mut domain = self.domain;
        domain.resolution /= 2.0;
        let ny = if self.n() == 2 { 2 * self.ny } else { 0 };
        Self::from_grid(domain, 2 * self.nx, ny)
    }

    /// Writes `id,x1[,x2],tag` rows.
    pub fn write_vertices_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.n() == 1 {
            writeln!(w, "id,x1,tag")?;
        } else {
            writeln!(w, "id,x1,x2,tag")?;
        }
        for (v, p) in self.coords.iter().enumerate() {
            if self.n() == 1 {
                writeln!(w, "{v},{:.16e},{}", p[0], self.vertex_tags[v].as_str())?;
            } else {
                writeln!(w, "{v},{:.16e},{:.16e},{}", p[0], p[1], self.vertex_tags[v].as_str())?;
            }
        }
        Ok(())
    }

    /// Writes `id,v0,v1[,v2]` rows.
    pub fn write_cells_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.n() == 1 {
            writeln!(w, "id,v0,v1")?;
        } else {
            writeln!(w, "id,v0,v1,v2")?;
        }
        for c in 0..self.num_cells() {
            let row: Vec<String> = self.cell(c).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{c},{}", row.join(","))?;
        }
        Ok(())
    }
}
