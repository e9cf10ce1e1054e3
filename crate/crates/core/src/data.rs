//! Synthetic data: a paired chain ("ladder") model with circularly shifted
//! inputs, and binary denoising of blob textures.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{grid_edges, EdgeKind, Graph, Labeling, Params, Tables};
use crate::trainer::Instance;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainGenConfig {
    /// Length of each of the two chains.
    pub n: usize,
    pub seed: u64,
    /// Circular shift applied to the input layer after sampling.
    pub shift: usize,
    pub samples: usize,
    /// Total Gibbs sweeps; the first half is discarded as burn-in.
    pub gibbs_sweeps: usize,
}

impl ChainGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(
                "chain length must be at least 2".into(),
            ));
        }
        if self.shift >= self.n {
            return Err(Error::InvalidConfig(format!(
                "shift {} must be below the chain length {}",
                self.shift, self.n
            )));
        }
        if self.gibbs_sweeps < 2 {
            return Err(Error::InvalidConfig("need at least 2 Gibbs sweeps".into()));
        }
        Ok(())
    }
}

/// Samples drawn from a ladder model, split into the (shifted) input layer
/// `x` and the output layer `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub x: Vec<Vec<usize>>,
    pub y: Vec<Vec<usize>>,
}

impl ChainSamples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn shifted(&self, by: usize) -> Self {
        ChainSamples {
            x: self.x.iter().map(|x| circular_shift(x, by)).collect(),
            y: self.y.clone(),
        }
    }

    /// Splits off the samples at `at..` into a second set.
    pub fn split_off(&mut self, at: usize) -> Self {
        ChainSamples {
            x: self.x.split_off(at),
            y: self.y.split_off(at),
        }
    }
}

/// `out[i] = xs[(i + by) mod n]`.
pub fn circular_shift<T: Copy>(xs: &[T], by: usize) -> Vec<T> {
    let n = xs.len();
    if n == 0 {
        return Vec::new();
    }
    (0..n).map(|i| xs[(i + by) % n]).collect()
}

/// Binary ladder on `2n` nodes: inputs `x_i = i`, outputs `y_i = n + i`.
/// Edges are the input chain, then the output chain, then the rungs.
pub fn ladder_graph(n: usize) -> Result<Arc<Graph>> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    edges.extend((1..n).map(|i| (n + i - 1, n + i)));
    edges.extend((0..n).map(|i| (i, n + i)));
    Graph::new(vec![2; 2 * n], edges)
}

/// Unaries uniform on [-1, 1]; every edge is `t` on agreement and `-t` on
/// disagreement with `t` uniform on [-1, 1].
pub fn random_ladder_params<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Params> {
    let g = ladder_graph(n)?;
    let mut theta = Tables::zeros(&g);
    for v in &mut theta.as_mut_slice()[..g.unary_len()] {
        *v = rng.random_range(-1.0..=1.0);
    }
    for e in 0..g.edge_count() {
        let t: f64 = rng.random_range(-1.0..=1.0);
        theta.edge_mut(e).copy_from_slice(&[t, -t, -t, t]);
    }
    Ok(theta)
}

fn gibbs_sweep<R: Rng + ?Sized>(
    theta: &Params,
    x: &mut [usize],
    logits: &mut Vec<f64>,
    rng: &mut R,
) {
    let g = theta.graph();
    for i in 0..g.node_count() {
        logits.clear();
        logits.extend_from_slice(theta.unary(i));
        for &e in g.incident(i) {
            let (a, b) = g.edge(e);
            for (xi, l) in logits.iter_mut().enumerate() {
                *l += if a == i {
                    theta.edge_at(e, xi, x[b])
                } else {
                    theta.edge_at(e, x[a], xi)
                };
            }
        }
        crate::numeric::softmax_in_place(logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        x[i] = logits.len() - 1;
        for (k, p) in logits.iter().enumerate() {
            acc += p;
            if u < acc {
                x[i] = k;
                break;
            }
        }
    }
}

/// Systematic-scan Gibbs sampler started from all-zero labels. Discards the
/// first `sweeps / 2` sweeps, then keeps one state every
/// `max(1, (sweeps - burn_in) / samples)` sweeps until `samples` are kept.
pub fn gibbs_samples<R: Rng + ?Sized>(
    theta: &Params,
    sweeps: usize,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("parameters"));
    }
    let burn_in = sweeps / 2;
    let thin = ((sweeps - burn_in) / samples.max(1)).max(1);
    let mut x = vec![0; theta.graph().node_count()];
    let mut logits = Vec::new();
    for _ in 0..burn_in {
        gibbs_sweep(theta, &mut x, &mut logits, rng);
    }
    let mut out = Vec::with_capacity(samples);
    while out.len() < samples {
        for _ in 0..thin {
            gibbs_sweep(theta, &mut x, &mut logits, rng);
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Draws a random ladder model and samples from it. The returned samples
/// already carry the configured shift on the input layer.
pub fn gen_chain_model(config: &ChainGenConfig) -> Result<(Params, ChainSamples)> {
    config.validate()?;
    let n = config.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let theta = random_ladder_params(n, &mut rng)?;
    let raw = gibbs_samples(&theta, config.gibbs_sweeps, config.samples, &mut rng)?;
    let samples = ChainSamples {
        x: raw.iter().map(|s| s[..n].to_vec()).collect(),
        y: raw.iter().map(|s| s[n..].to_vec()).collect(),
    };
    Ok((theta, samples.shifted(config.shift)))
}

/// Conditional chain CRF over the output layer. Node `i` has the one-hot
/// block `(1, x_i)` at position `2i` of its unary features so every node has
/// its own weights; edge `e` has a one-hot edge feature of its own.
pub fn chain_instances(samples: &ChainSamples) -> Result<Vec<Instance>> {
    let Some(n) = samples.y.first().map(Vec::len) else {
        return Ok(Vec::new());
    };
    let g = Graph::chain(n, 2)?;
    let mut edge = vec![0.0; (n - 1) * (n - 1)];
    for e in 0..n - 1 {
        edge[e * (n - 1) + e] = 1.0;
    }
    samples
        .x
        .iter()
        .zip(&samples.y)
        .map(|(x, y)| {
            if x.len() != n || y.len() != n {
                return Err(Error::ShapeMismatch(
                    "chain samples of different lengths".into(),
                ));
            }
            let mut unary = vec![0.0; n * 2 * n];
            for i in 0..n {
                unary[i * 2 * n + 2 * i] = 1.0;
                unary[i * 2 * n + 2 * i + 1] = x[i] as f64;
            }
            Instance::new(g.clone(), unary, edge.clone(), Labeling::full(y))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    /// Seeded random textures: smoothed Gaussian noise thresholded at zero.
    Blobs { count: usize },
    /// User-supplied binary rasters, row-major with values 0 or 1.
    Rasters(Vec<Vec<u8>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub rows: usize,
    pub cols: usize,
    pub source: ImageSource,
    /// Noise level `n > 1`; lower values mean more noise.
    pub noise: f64,
    pub seed: u64,
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise > 1.0) || !self.noise.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise level must be a finite number above 1, got {}",
                self.noise
            )));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidConfig(
                "image must have at least one pixel".into(),
            ));
        }
        if let ImageSource::Rasters(images) = &self.source {
            for (k, img) in images.iter().enumerate() {
                if img.len() != self.rows * self.cols {
                    return Err(Error::ShapeMismatch(format!(
                        "raster {k} has {} pixels, expected {}",
                        img.len(),
                        self.rows * self.cols
                    )));
                }
                if img.iter().any(|&v| v > 1) {
                    return Err(Error::InvalidConfig(format!("raster {k} is not binary")));
                }
            }
        }
        Ok(())
    }
}

fn box_blur(field: &[f64], rows: usize, cols: usize, radius: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; field.len()];
    for r in 0..rows {
        for c in 0..cols {
            let (lo, hi) = (c.saturating_sub(radius), (c + radius).min(cols - 1));
            let s: f64 = field[r * cols + lo..=r * cols + hi].iter().sum();
            tmp[r * cols + c] = s / (hi - lo + 1) as f64;
        }
    }
    let mut out = vec![0.0; field.len()];
    for c in 0..cols {
        for r in 0..rows {
            let (lo, hi) = (r.saturating_sub(radius), (r + radius).min(rows - 1));
            let s: f64 = (lo..=hi).map(|k| tmp[k * cols + c]).sum();
            out[r * cols + c] = s / (hi - lo + 1) as f64;
        }
    }
    out
}

/// Random binary texture: Gaussian noise blurred twice with a box of radius
/// `max(1, min(rows, cols) / 8)` and thresholded at zero.
pub fn blob_texture<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<u8> {
    let noise: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let radius = (rows.min(cols) / 8).max(1);
    let smooth = box_blur(&box_blur(&noise, rows, cols, radius), rows, cols, radius);
    smooth.iter().map(|&v| u8::from(v > 0.0)).collect()
}

/// `y = x (1 - tⁿ) + (1 - x) tⁿ` with `t` uniform on [0, 1].
pub fn corrupt(x: u8, t: f64, noise: f64) -> f64 {
    let tn = libm::pow(t, noise);
    if x == 1 {
        1.0 - tn
    } else {
        tn
    }
}

/// Grid CRF instance for one clean image and its noisy observation. Unary
/// features are `(1, y_i)`; edge features are (horizontal, vertical)
/// indicators.
pub fn denoise_instance(rows: usize, cols: usize, clean: &[u8], noisy: &[f64]) -> Result<Instance> {
    let g = Graph::grid(rows, cols, 2)?;
    if clean.len() != rows * cols || noisy.len() != rows * cols {
        return Err(Error::ShapeMismatch(
            "image size does not match the grid".into(),
        ));
    }
    let unary = noisy.iter().flat_map(|&y| [1.0, y]).collect();
    let edge = grid_edges(rows, cols)
        .into_iter()
        .flat_map(|(_, kind)| match kind {
            EdgeKind::Horizontal => [1.0, 0.0],
            EdgeKind::Vertical => [0.0, 1.0],
        })
        .collect();
    let target: Vec<usize> = clean.iter().map(|&v| usize::from(v)).collect();
    Instance::new(g, unary, edge, Labeling::full(&target))
}

/// Noisy denoising dataset. Image `k` uses its own random stream derived
/// from the seed, so instances can be generated independently.
pub fn gen_denoise(config: &DenoiseConfig) -> Result<Vec<Instance>> {
    config.validate()?;
    let (rows, cols) = (config.rows, config.cols);
    let count = match &config.source {
        ImageSource::Blobs { count } => *count,
        ImageSource::Rasters(images) => images.len(),
    };
    (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64 + 1);
            let clean = match &config.source {
                ImageSource::Blobs { .. } => blob_texture(rows, cols, &mut rng),
                ImageSource::Rasters(images) => images[k].clone(),
            };
            let noisy: Vec<f64> = clean
                .iter()
                .map(|&x| corrupt(x, rng.random_range(0.0..=1.0), config.noise))
                .collect();
            denoise_instance(rows, cols, &clean, &noisy)
        })
        .collect()
}

/// `sin(c·s)` for every binary vector `c` followed by `cos(c·s)` for every
/// `c`. Bit `k` of the enumeration index is `c_k`, so `c = 0` comes first.
pub fn sinusoidal_expand(s: &[f64]) -> Vec<f64> {
    let m = 1usize << s.len();
    let dots: Vec<f64> = (0..m)
        .map(|c| {
            s.iter()
                .enumerate()
                .filter(|(k, _)| c >> k & 1 == 1)
                .map(|(_, v)| v)
                .sum()
        })
        .collect();
    dots.iter()
        .map(|&d| libm::sin(d))
        .chain(dots.iter().map(|&d| libm::cos(d)))
        .collect()
}
