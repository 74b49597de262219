//! Elliptical neighborhoods, star-topology graphs with spectral-angle edge
//! weights, and dense graph utilities.

mod laplacian;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use laplacian::{laplacian, normalized_laplacian, rbf_adjacency};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::hsi::{write_file, AbundanceStack, HsiCube};
use crate::tensor::Tensor;

pub const GRAPH_CSV_HEADER: &str = "sender_row,sender_col,recv_row,recv_col,sad";

/// Integer offsets `(dr, dc)` with `dr²/a² + dc²/b² ≤ 1`; every selected
/// offset carries the pixel's full spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipseKernel {
    pub a: usize,
    pub b: usize,
    pub offsets: Vec<(isize, isize)>,
}

pub fn build_kernel(a: usize, b: usize) -> Result<EllipseKernel> {
    if a == 0 || b == 0 {
        return Err(Error::InvalidArgument(format!("ellipse axes must be >= 1, got a={a}, b={b}")));
    }
    let (ai, bi) = (a as isize, b as isize);
    let mut offsets = Vec::new();
    for dr in -ai..=ai {
        for dc in -bi..=bi {
            // dr²/a² + dc²/b² ≤ 1, multiplied through by a²b².
            if dr * dr * bi * bi + dc * dc * ai * ai <= ai * ai * bi * bi {
                offsets.push((dr, dc));
            }
        }
    }
    Ok(EllipseKernel { a, b, offsets })
}

impl EllipseKernel {
    pub fn contains(&self, dr: isize, dc: isize) -> bool {
        let (a, b) = (self.a as isize, self.b as isize);
        dr * dr * b * b + dc * dc * a * a <= a * a * b * b
    }

    /// In-image pixels of the ellipse centered at `(row, col)`, row-major.
    pub fn members(&self, row: usize, col: usize, height: usize, width: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets.iter().filter_map(move |&(dr, dc)| {
            let r = row as isize + dr;
            let c = col as isize + dc;
            (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width).then_some((r as usize, c as usize))
        })
    }
}

/// Sender pixels on a regular grid through `(a, b)` with the given strides,
/// extended to the top/left edges by whole strides. A final row or column
/// is appended when the bottom or right border would lie more than half an
/// axis from the last grid line. An image that fits inside one ellipse
/// centered on it gets that single centroid.
pub fn tile_centroids(
    height: usize,
    width: usize,
    kernel: &EllipseKernel,
    stride_r: usize,
    stride_c: usize,
) -> Result<Vec<(usize, usize)>> {
    if stride_r == 0 || stride_c == 0 {
        return Err(Error::InvalidArgument("centroid strides must be >= 1".into()));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("image has no pixels".into()));
    }
    let (cr, cc) = (height / 2, width / 2);
    let fits = (0..height).all(|r| (0..width).all(|c| kernel.contains(r as isize - cr as isize, c as isize - cc as isize)));
    if fits {
        return Ok(vec![(cr, cc)]);
    }
    let lines = |n: usize, axis: usize, stride: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (axis % stride..n).step_by(stride).collect();
        if v.is_empty() {
            v.push(n / 2);
        }
        let last = *v.last().expect("non-empty");
        if 2 * (n - 1 - last) > axis {
            v.push(n - 1);
        }
        v
    };
    let rows = lines(height, kernel.a, stride_r);
    let cols = lines(width, kernel.b, stride_c);
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}

/// Pixels (row-major) not inside any centroid's ellipse.
pub fn uncovered_pixels(height: usize, width: usize, kernel: &EllipseKernel, centroids: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut covered = vec![false; height * width];
    for &(r, c) in centroids {
        for (rr, cc) in kernel.members(r, c, height, width) {
            covered[rr * width + cc] = true;
        }
    }
    (0..height * width)
        .filter(|&p| !covered[p])
        .map(|p| (p / width, p % width))
        .collect()
}

/// Which vectors the edge spectral angles are computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SadSource {
    Spectra,
    Abundances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Semi-axis along rows.
    pub a: usize,
    /// Semi-axis along columns.
    pub b: usize,
    /// Centroid row stride; defaults to `a`.
    pub stride_r: Option<usize>,
    /// Centroid column stride; defaults to `b`.
    pub stride_c: Option<usize>,
    pub sad_source: SadSource,
    /// Use `⟨x_i, x_i⟩` in the angle numerator instead of `⟨x_i, x_j⟩`.
    pub paper_literal_adjacency: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            a: 3,
            b: 5,
            stride_r: None,
            stride_c: None,
            sad_source: SadSource::Spectra,
            paper_literal_adjacency: false,
        }
    }
}

/// Directed sender → receiver edge between pixel indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub sender: usize,
    pub receiver: usize,
    pub sad: f64,
}

/// Star graphs over all pixels: each centroid sends to every other pixel in
/// its ellipse. Edges are sorted by (sender, receiver).
#[derive(Clone, Debug, PartialEq)]
pub struct EllipticalGraph {
    pub height: usize,
    pub width: usize,
    pub centroids: Vec<usize>,
    pub edges: Vec<Edge>,
    /// Mean edge weight of each centroid's star, aligned with `centroids`.
    pub neighborhood_mean: Vec<f64>,
}

/// Spectral angle between two vectors; `literal` reproduces the
/// self-inner-product numerator. Zero vectors are reported by pixel.
pub fn edge_weight(xi: &[f64], xj: &[f64], literal: bool, pixel_i: (usize, usize), pixel_j: (usize, usize)) -> Result<f64> {
    let ni: f64 = xi.iter().map(|v| v * v).sum();
    let nj: f64 = xj.iter().map(|v| v * v).sum();
    if ni == 0.0 {
        return Err(Error::ZeroSpectrum { row: pixel_i.0, col: pixel_i.1 });
    }
    if nj == 0.0 {
        return Err(Error::ZeroSpectrum { row: pixel_j.0, col: pixel_j.1 });
    }
    let num: f64 = if literal { ni } else { xi.iter().zip(xj).map(|(a, b)| a * b).sum() };
    Ok((num / (ni * nj).sqrt()).clamp(-1.0, 1.0).acos())
}

impl EllipticalGraph {
    /// Builds the graph with edge weights from `vectors(pixel)`.
    pub fn build<'a>(
        height: usize,
        width: usize,
        config: &GraphConfig,
        vectors: impl Fn(usize) -> &'a [f64],
    ) -> Result<Self> {
        let kernel = build_kernel(config.a, config.b)?;
        let centers = tile_centroids(
            height,
            width,
            &kernel,
            config.stride_r.unwrap_or(config.a),
            config.stride_c.unwrap_or(config.b),
        )?;
        let mut edges = Vec::new();
        let mut neighborhood_mean = Vec::with_capacity(centers.len());
        let mut centroids = Vec::with_capacity(centers.len());
        for &(r, c) in &centers {
            let s = r * width + c;
            let mut total = 0.0;
            let mut n = 0usize;
            for (rr, cc) in kernel.members(r, c, height, width) {
                let q = rr * width + cc;
                if q == s {
                    continue;
                }
                let sad = edge_weight(vectors(s), vectors(q), config.paper_literal_adjacency, (r, c), (rr, cc))?;
                edges.push(Edge { sender: s, receiver: q, sad });
                total += sad;
                n += 1;
            }
            centroids.push(s);
            neighborhood_mean.push(if n > 0 { total / n as f64 } else { 0.0 });
        }
        edges.sort_by_key(|e| (e.sender, e.receiver));
        Ok(EllipticalGraph {
            height,
            width,
            centroids,
            edges,
            neighborhood_mean,
        })
    }

    /// Graph over a cube, weighting edges by spectra or abundances.
    pub fn from_cube(cube: &HsiCube, abundances: Option<&AbundanceStack>, config: &GraphConfig) -> Result<Self> {
        match (config.sad_source, abundances) {
            (SadSource::Spectra, _) => Self::build(cube.height(), cube.width(), config, |p| cube.spectrum_at(p)),
            (SadSource::Abundances, Some(a)) => {
                if a.height() != cube.height() || a.width() != cube.width() {
                    return Err(Error::shape("graph", "abundance stack and cube differ in size"));
                }
                Self::build(a.height(), a.width(), config, |p| a.pixel(p))
            }
            (SadSource::Abundances, None) => {
                Err(Error::InvalidArgument("sad_source = abundances needs an abundance stack".into()))
            }
        }
    }

    pub fn nodes(&self) -> usize {
        self.height * self.width
    }

    /// Each unordered pixel pair once as `(i, j, sad)` with `i < j`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize, f64)> {
        let mut pairs = BTreeMap::new();
        for e in &self.edges {
            pairs.entry((e.sender.min(e.receiver), e.sender.max(e.receiver))).or_insert(e.sad);
        }
        pairs.into_iter().map(|((i, j), w)| (i, j, w)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(GRAPH_CSV_HEADER);
        out.push('\n');
        for e in &self.edges {
            let (sr, sc) = (e.sender / self.width, e.sender % self.width);
            let (rr, rc) = (e.receiver / self.width, e.receiver % self.width);
            writeln!(out, "{sr},{sc},{rr},{rc},{}", sig9(e.sad)).expect("write to string");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }
}

/// Node features (each pixel's abundance vector) and per-edge records
/// `[sender features, receiver features, sad]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedFeatures {
    /// `[N, P]`.
    pub node_features: Tensor,
    /// `[E, 2]` sender and receiver pixel indices, as stored values.
    pub edge_index: Tensor,
    /// `[E, 2P + 1]`.
    pub edge_records: Tensor,
}

pub fn stack_features(graph: &EllipticalGraph, abundances: &AbundanceStack) -> Result<StackedFeatures> {
    if abundances.pixels() != graph.nodes() {
        return Err(Error::shape(
            "stack_features",
            format!("{} abundance pixels for a {}-node graph", abundances.pixels(), graph.nodes()),
        ));
    }
    let p = abundances.count();
    let mut index = Vec::with_capacity(graph.edges.len() * 2);
    let mut records = Vec::with_capacity(graph.edges.len() * (2 * p + 1));
    for e in &graph.edges {
        if e.sender >= graph.nodes() || e.receiver >= graph.nodes() {
            return Err(Error::InvalidArgument(format!("edge ({}, {}) outside the graph", e.sender, e.receiver)));
        }
        index.extend([e.sender as f64, e.receiver as f64]);
        records.extend_from_slice(abundances.pixel(e.sender));
        records.extend_from_slice(abundances.pixel(e.receiver));
        records.push(e.sad);
    }
    let n_edges = graph.edges.len();
    Ok(StackedFeatures {
        node_features: Tensor::new(&[graph.nodes(), p], abundances.data().to_vec())?,
        edge_index: Tensor::new(&[n_edges, 2], index)?,
        edge_records: Tensor::new(&[n_edges, 2 * p + 1], records)?,
    })
}

impl StackedFeatures {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(
            &[
                ("node_features".into(), self.node_features.clone()),
                ("edge_index".into(), self.edge_index.clone()),
                ("edge_records".into(), self.edge_records.clone()),
            ],
            path,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t = checkpoint::load(path)?;
        let get = |name: &str| -> Result<Tensor> {
            t.iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::InvalidArgument(format!("{}: missing tensor {name:?}", path.display())))
        };
        Ok(StackedFeatures {
            node_features: get("node_features")?,
            edge_index: get("edge_index")?,
            edge_records: get("edge_records")?,
        })
    }
}
