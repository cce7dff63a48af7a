//! Model domains, uniform lattices and grid fields.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NODE_CAP: usize = 10_000_000;

/// Sentinel used in neighbor tables for a boundary (Dirichlet) node.
pub const BOUNDARY: u32 = u32::MAX;

/// A point in R^d for d ≤ 3. Unused trailing coordinates are zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point {
    coords: [f64; 3],
    dim: usize,
}

impl TryFrom<Vec<f64>> for Point {
    type Error = String;

    fn try_from(v: Vec<f64>) -> std::result::Result<Self, String> {
        if !(1..=3).contains(&v.len()) {
            return Err(format!(
                "points must have 1 to 3 coordinates, got {}",
                v.len()
            ));
        }
        Ok(Point::new(&v))
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.coords().to_vec()
    }
}

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        assert!(
            (1..=3).contains(&coords.len()),
            "points must have 1 to 3 coordinates"
        );
        let mut c = [0.0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Point {
            coords: c,
            dim: coords.len(),
        }
    }

    pub fn scalar(x: f64) -> Self {
        Point::new(&[x])
    }

    pub fn origin(dim: usize) -> Self {
        Point::new(&[0.0; 3][..dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn norm_sq(&self) -> f64 {
        self.coords().iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        let s = self.norm_sq();
        if s > 1e-280 && s < 1e280 {
            return s.sqrt();
        }
        // rescale to avoid underflow or overflow of the squares
        let m = self.coords.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if m == 0.0 || !m.is_finite() {
            return m;
        }
        m * self.scale(1.0 / m).norm_sq().sqrt()
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.coords[0] * other.coords[0]
            + self.coords[1] * other.coords[1]
            + self.coords[2] * other.coords[2]
    }

    pub fn sub(&self, other: &Point) -> Point {
        let mut c = self.coords;
        for (ci, oi) in c.iter_mut().zip(other.coords.iter()) {
            *ci -= oi;
        }
        Point {
            coords: c,
            dim: self.dim,
        }
    }

    pub fn add(&self, other: &Point) -> Point {
        let mut c = self.coords;
        for (ci, oi) in c.iter_mut().zip(other.coords.iter()) {
            *ci += oi;
        }
        Point {
            coords: c,
            dim: self.dim,
        }
    }

    pub fn scale(&self, s: f64) -> Point {
        let mut c = self.coords;
        for ci in c.iter_mut() {
            *ci *= s;
        }
        Point {
            coords: c,
            dim: self.dim,
        }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.sub(other).norm()
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.dim,
            });
        }
        Ok(())
    }
}

/// Node-level mask for a gridded rectangle: `cells` holds one flag per point
/// of the lattice `lo + spacing * k`, row-major with the first axis slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectMask {
    pub spacing: f64,
    pub shape: Vec<usize>,
    pub cells: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    Interval {
        a: f64,
        b: f64,
    },
    Ball {
        center: Point,
        radius: f64,
    },
    Rectangle {
        lo: Point,
        hi: Point,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<RectMask>,
    },
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        let d = Domain::Interval { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        let d = Domain::Ball { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn unit_ball(dim: usize) -> Self {
        Domain::Ball {
            center: Point::origin(dim),
            radius: 1.0,
        }
    }

    pub fn rectangle(lo: Point, hi: Point, mask: Option<RectMask>) -> Result<Self> {
        let d = Domain::Rectangle { lo, hi, mask };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(Error::InvalidDomain(format!(
                        "interval requires a < b, got ({a}, {b})"
                    )));
                }
            }
            Domain::Ball { center, radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidDomain(format!(
                        "ball radius must be positive, got {radius}"
                    )));
                }
                if center.coords().iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidDomain("non-finite ball center".into()));
                }
            }
            Domain::Rectangle { lo, hi, mask } => {
                lo.check_dim(hi.dim())?;
                if lo.coords().iter().zip(hi.coords()).any(|(l, h)| !(l < h)) {
                    return Err(Error::InvalidDomain(
                        "rectangle requires lo < hi in every coordinate".into(),
                    ));
                }
                if let Some(m) = mask {
                    if m.shape.len() != lo.dim() {
                        return Err(Error::InvalidDomain(
                            "mask rank differs from dimension".into(),
                        ));
                    }
                    if m.shape.iter().product::<usize>() != m.cells.len() {
                        return Err(Error::InvalidDomain(
                            "mask shape does not match cells".into(),
                        ));
                    }
                    if !(m.spacing > 0.0) {
                        return Err(Error::InvalidDomain("mask spacing must be positive".into()));
                    }
                    if !m.cells.iter().any(|&c| c) {
                        return Err(Error::InvalidDomain("mask is empty".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Ball { center, .. } => center.dim(),
            Domain::Rectangle { lo, .. } => lo.dim(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Interval { a, b } => b - a,
            Domain::Ball { radius, .. } => 2.0 * radius,
            Domain::Rectangle { lo, hi, .. } => hi.dist(lo),
        }
    }

    /// The same region viewed as a ball, when it is one (intervals included).
    pub fn as_ball(&self) -> Option<(Point, f64)> {
        match self {
            Domain::Interval { a, b } => Some((Point::scalar(0.5 * (a + b)), 0.5 * (b - a))),
            Domain::Ball { center, radius } => Some((*center, *radius)),
            Domain::Rectangle { .. } => None,
        }
    }

    /// Membership in the open region.
    pub fn contains(&self, x: &Point) -> Result<bool> {
        x.check_dim(self.dim())?;
        Ok(self.contains_unchecked(x))
    }

    pub(crate) fn contains_unchecked(&self, x: &Point) -> bool {
        match self {
            Domain::Interval { a, b } => *a < x.x() && x.x() < *b,
            Domain::Ball { center, radius } => x.sub(center).norm_sq() < radius * radius,
            Domain::Rectangle { lo, hi, mask } => {
                let inside = x
                    .coords()
                    .iter()
                    .zip(lo.coords().iter().zip(hi.coords()))
                    .all(|(c, (l, h))| l < c && c < h);
                if !inside {
                    return false;
                }
                match mask {
                    None => true,
                    Some(m) => {
                        let mut flat = 0usize;
                        for (k, (&c, &l)) in x.coords().iter().zip(lo.coords()).enumerate() {
                            let i = ((c - l) / m.spacing).round();
                            if i < 0.0 || i as usize >= m.shape[k] {
                                return false;
                            }
                            flat = flat * m.shape[k] + i as usize;
                        }
                        m.cells[flat]
                    }
                }
            }
        }
    }

    /// Euclidean distance from an interior point to the complement.
    pub fn distance_to_boundary(&self, x: &Point) -> f64 {
        match self {
            Domain::Interval { a, b } => (x.x() - a).min(b - x.x()).max(0.0),
            Domain::Ball { center, radius } => (radius - x.dist(center)).max(0.0),
            Domain::Rectangle { lo, hi, .. } => x
                .coords()
                .iter()
                .zip(lo.coords().iter().zip(hi.coords()))
                .map(|(c, (l, h))| (c - l).min(h - c))
                .fold(f64::INFINITY, f64::min)
                .max(0.0),
        }
    }

    fn lattice_anchor(&self) -> Point {
        match self {
            Domain::Interval { a, .. } => Point::scalar(*a),
            Domain::Ball { center, .. } => *center,
            Domain::Rectangle { lo, .. } => *lo,
        }
    }

    /// Inclusive integer index range covering the closed region, per axis.
    fn lattice_extent(&self, h: f64) -> Vec<(i64, i64)> {
        match self {
            Domain::Interval { a, b } => vec![(0, ((b - a) / h).ceil() as i64)],
            Domain::Ball { center, radius } => {
                let m = (radius / h).ceil() as i64;
                vec![(-m, m); center.dim()]
            }
            Domain::Rectangle { lo, hi, .. } => lo
                .coords()
                .iter()
                .zip(hi.coords())
                .map(|(l, u)| (0, ((u - l) / h).ceil() as i64))
                .collect(),
        }
    }
}

/// A uniform lattice restricted to a domain.
///
/// Interior nodes are the lattice points inside the open domain; boundary
/// nodes are the remaining lattice points adjacent to an interior node and
/// carry zero Dirichlet data. Interior nodes are numbered in lexicographic
/// order of their lattice index (first axis slowest).
#[derive(Debug)]
pub struct Grid {
    domain: Domain,
    h: f64,
    dim: usize,
    anchor: Point,
    lo: [i64; 3],
    shape: [usize; 3],
    lookup: Vec<u32>,
    interior: Vec<[i32; 3]>,
    boundary: Vec<[i32; 3]>,
    neighbors: Vec<u32>,
}

impl Grid {
    pub fn build(domain: &Domain, h: f64) -> Result<Arc<Grid>> {
        Grid::build_with_cap(domain, h, DEFAULT_NODE_CAP)
    }

    pub fn build_with_cap(domain: &Domain, h: f64, cap: usize) -> Result<Arc<Grid>> {
        domain.validate()?;
        let diameter = domain.diameter();
        if !(h > 0.0 && h.is_finite()) || h >= diameter {
            return Err(Error::DegenerateMesh { h, diameter });
        }
        let dim = domain.dim();
        let anchor = domain.lattice_anchor();
        let ext = domain.lattice_extent(h);
        let mut lo = [0i64; 3];
        let mut shape = [1usize; 3];
        let mut total: usize = 1;
        for k in 0..dim {
            // one extra layer so every boundary neighbor has a slot
            lo[k] = ext[k].0 - 1;
            let len = (ext[k].1 - ext[k].0 + 3) as usize;
            shape[k] = len;
            total = total.saturating_mul(len);
        }
        if total > cap {
            return Err(Error::NodeCountOverflow { nodes: total, cap });
        }

        let mut lookup = vec![BOUNDARY; total];
        let mut interior = Vec::new();
        let coord = |idx: [i64; 3]| -> Point {
            let mut c = [0.0; 3];
            for k in 0..dim {
                c[k] = anchor.coords[k] + h * idx[k] as f64;
            }
            Point::new(&c[..dim])
        };
        for flat in 0..total {
            let idx = unflatten(flat, &lo, &shape, dim);
            if domain.contains_unchecked(&coord(idx)) {
                lookup[flat] = interior.len() as u32;
                interior.push([idx[0] as i32, idx[1] as i32, idx[2] as i32]);
            }
        }
        if interior.is_empty() {
            return Err(Error::DegenerateMesh { h, diameter });
        }

        let deg = 2 * dim;
        let mut neighbors = vec![BOUNDARY; interior.len() * deg];
        let mut seen_boundary = vec![false; total];
        let mut boundary = Vec::new();
        for (i, node) in interior.iter().enumerate() {
            for k in 0..dim {
                for (s, step) in [-1i64, 1].into_iter().enumerate() {
                    let mut idx = [node[0] as i64, node[1] as i64, node[2] as i64];
                    idx[k] += step;
                    let flat = flatten(idx, &lo, &shape, dim);
                    let nb = lookup[flat];
                    neighbors[i * deg + 2 * k + s] = nb;
                    if nb == BOUNDARY && !seen_boundary[flat] {
                        seen_boundary[flat] = true;
                        boundary.push([idx[0] as i32, idx[1] as i32, idx[2] as i32]);
                    }
                }
            }
        }
        boundary.sort_unstable();

        Ok(Arc::new(Grid {
            domain: domain.clone(),
            h,
            dim,
            anchor,
            lo,
            shape,
            lookup,
            interior,
            boundary,
            neighbors,
        }))
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Volume of one lattice cell, h^d.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    pub fn boundary_len(&self) -> usize {
        self.boundary.len()
    }

    pub fn lattice_index(&self, node: usize) -> [i32; 3] {
        self.interior[node]
    }

    pub fn point(&self, node: usize) -> Point {
        self.point_of_index(self.interior[node])
    }

    pub fn boundary_point(&self, b: usize) -> Point {
        self.point_of_index(self.boundary[b])
    }

    fn point_of_index(&self, idx: [i32; 3]) -> Point {
        let mut c = [0.0; 3];
        for k in 0..self.dim {
            c[k] = self.anchor.coords[k] + self.h * idx[k] as f64;
        }
        Point::new(&c[..self.dim])
    }

    /// Neighbor slots of an interior node: `2k` is the `-e_k` neighbor and
    /// `2k+1` the `+e_k` neighbor; [`BOUNDARY`] marks a Dirichlet node.
    pub fn neighbors(&self, node: usize) -> &[u32] {
        let deg = 2 * self.dim;
        &self.neighbors[node * deg..(node + 1) * deg]
    }

    /// Interior node at the given lattice index, if any.
    pub fn node_at(&self, idx: [i64; 3]) -> Option<usize> {
        for k in 0..self.dim {
            if idx[k] < self.lo[k] || idx[k] >= self.lo[k] + self.shape[k] as i64 {
                return None;
            }
        }
        match self.lookup[flatten(idx, &self.lo, &self.shape, self.dim)] {
            BOUNDARY => None,
            n => Some(n as usize),
        }
    }

    /// Continuous lattice coordinates of a point.
    pub fn lattice_coords(&self, x: &Point) -> [f64; 3] {
        let mut c = [0.0; 3];
        for k in 0..self.dim {
            c[k] = (x.coords[k] - self.anchor.coords[k]) / self.h;
        }
        c
    }

    /// Interior node closest to `x`, if the nearest lattice point is interior.
    pub fn nearest_node(&self, x: &Point) -> Option<usize> {
        let c = self.lattice_coords(x);
        let mut idx = [0i64; 3];
        for k in 0..self.dim {
            idx[k] = c[k].round() as i64;
        }
        self.node_at(idx)
    }

    /// Multilinear weights of `x` over the 2^d surrounding lattice points,
    /// restricted to interior nodes and renormalized to sum to one.
    /// Returns an empty list when none of the corners is interior.
    pub fn multilinear_weights(&self, x: &Point) -> Vec<(usize, f64)> {
        let c = self.lattice_coords(x);
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for k in 0..self.dim {
            let f = c[k].floor();
            base[k] = f as i64;
            frac[k] = c[k] - f;
        }
        let mut out: Vec<(usize, f64)> = Vec::new();
        for corner in 0..(1usize << self.dim) {
            let mut idx = base;
            let mut w = 1.0;
            for k in 0..self.dim {
                if corner >> k & 1 == 1 {
                    idx[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w == 0.0 {
                continue;
            }
            if let Some(n) = self.node_at(idx) {
                out.push((n, w));
            }
        }
        let total: f64 = out.iter().map(|(_, w)| w).sum();
        if total > 0.0 {
            for (_, w) in out.iter_mut() {
                *w /= total;
            }
        }
        out.sort_unstable_by_key(|(n, _)| *n);
        out
    }
}

fn flatten(idx: [i64; 3], lo: &[i64; 3], shape: &[usize; 3], dim: usize) -> usize {
    let mut flat = 0usize;
    for k in 0..dim {
        flat = flat * shape[k] + (idx[k] - lo[k]) as usize;
    }
    flat
}

fn unflatten(mut flat: usize, lo: &[i64; 3], shape: &[usize; 3], dim: usize) -> [i64; 3] {
    let mut idx = [0i64; 3];
    for k in (0..dim).rev() {
        idx[k] = (flat % shape[k]) as i64 + lo[k];
        flat /= shape[k];
    }
    idx
}

/// Values on the interior nodes of a grid; boundary values are zero.
#[derive(Clone, Debug)]
pub struct GridField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "field length must match grid");
        GridField { grid, values }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        GridField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&Point) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        GridField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> GridField {
        assert!(Arc::ptr_eq(&self.grid, &other.grid) || self.grid.len() == other.grid.len());
        GridField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Σ f_i g_i h^d, the grid quadrature of the product.
    pub fn integrate_against(&self, weight: &GridField) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .zip(&weight.values)
            .map(|(a, b)| a * b)
            .sum();
        s * self.grid.cell_volume()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Value at an arbitrary point by multilinear interpolation, with zero
    /// Dirichlet data outside the interior nodes.
    pub fn interpolate(&self, x: &Point) -> f64 {
        let c = self.grid.lattice_coords(x);
        let dim = self.grid.dim;
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for k in 0..dim {
            let f = c[k].floor();
            base[k] = f as i64;
            frac[k] = c[k] - f;
        }
        let mut v = 0.0;
        for corner in 0..(1usize << dim) {
            let mut idx = base;
            let mut w = 1.0;
            for k in 0..dim {
                if corner >> k & 1 == 1 {
                    idx[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                if let Some(n) = self.grid.node_at(idx) {
                    v += w * self.values[n];
                }
            }
        }
        v
    }
}
