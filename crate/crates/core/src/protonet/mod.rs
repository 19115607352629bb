//! Prototypical-network classifier on top of a two-layer MLP encoder.
//!
//! The encoder is `z(x) = ReLU(x·W1 + b1)·W2 + b2`. A class prototype is the
//! mean embedding of its support rows, and a query is classified by a
//! softmax over negative (unsquared) Euclidean distances to the prototypes.
//! Gradients of the episode cross-entropy are derived by hand and flow
//! through queries, prototypes and support rows.

mod adam;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;
use crate::tasks::Episode;

pub use adam::{adam_step, AdamConfig, AdamState};

/// Floor added under the square root of every distance so the gradient of
/// a zero distance is finite.
pub const DIST_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// d × H
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// H × D
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl EncoderParams {
    /// Kaiming-uniform weights in ±√(6 / fan_in), zero biases.
    pub fn init(d: usize, hidden: usize, embed: usize, seed: u64) -> Result<Self> {
        if d == 0 || hidden == 0 || embed == 0 {
            return Err(Error::InvalidArgument(format!(
                "encoder dims must be positive, got d={d}, H={hidden}, D={embed}"
            )));
        }
        let mut rng = seed::derived_rng(seed, &["init".into()]);
        let a1 = (6.0 / d as f64).sqrt();
        let a2 = (6.0 / hidden as f64).sqrt();
        let w1 = Array2::from_shape_simple_fn((d, hidden), || rng.random_range(-a1..a1));
        let w2 = Array2::from_shape_simple_fn((hidden, embed), || rng.random_range(-a2..a2));
        Ok(Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(embed),
        })
    }

    pub fn zeros(d: usize, hidden: usize, embed: usize) -> Self {
        Self {
            w1: Array2::zeros((d, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, embed)),
            b2: Array1::zeros(embed),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (d, h, e) = self.dims();
        Self::zeros(d, h, e)
    }

    /// `(d, H, D)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.nrows(), self.w1.ncols(), self.w2.ncols())
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (d, h, e) = self.dims();
        if self.b1.len() != h || self.w2.nrows() != h || self.b2.len() != e || d == 0 {
            return Err(Error::Shape(format!(
                "inconsistent encoder: W1 {:?}, b1 {}, W2 {:?}, b2 {}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        Ok(())
    }

    /// Every parameter, flattened in the order W1, b1, W2, b2.
    pub fn flat(&self) -> Vec<f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied().collect()
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn add_assign(&mut self, other: &EncoderParams) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.flat_mut() {
            *v *= factor;
        }
    }

    fn hidden_pre(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.w1.nrows() {
            return Err(Error::Shape(format!(
                "input has {} columns, encoder expects {}",
                x.ncols(),
                self.w1.nrows()
            )));
        }
        Ok(x.dot(&self.w1) + &self.b1)
    }

    /// Embeds the rows of `x` (n × d) into n × D.
    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let hidden = self.hidden_pre(x)?.mapv_into(|v| v.max(0.0));
        Ok(hidden.dot(&self.w2) + &self.b2)
    }
}

/// Anything that maps input rows to embedding rows.
pub trait Embedding: Sync {
    fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl Embedding for EncoderParams {
    fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encode(x)
    }
}

/// The raw feature space.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Embedding for Identity {
    fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(x.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    /// k × D, row c is the prototype of class `classes[c]`.
    pub prototypes: Array2<f64>,
    pub classes: Vec<usize>,
    /// Support count per class.
    pub counts: Vec<usize>,
}

/// Per-class mean of support embeddings. Labels must cover 0..n_classes.
pub fn compute_prototypes(z_support: ArrayView2<f64>, labels: &[usize], n_classes: usize) -> Result<PrototypeSet> {
    if z_support.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} support embeddings, {} labels",
            z_support.nrows(),
            labels.len()
        )));
    }
    let mut sums = Array2::<f64>::zeros((n_classes, z_support.ncols()));
    let mut counts = vec![0usize; n_classes];
    for (row, &c) in z_support.rows().into_iter().zip(labels) {
        if c >= n_classes {
            return Err(Error::InvalidArgument(format!("label {c} outside 0..{n_classes}")));
        }
        counts[c] += 1;
        let mut acc = sums.row_mut(c);
        acc += &row;
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InsufficientClass {
            class: empty,
            available: 0,
            required: 1,
        });
    }
    for (mut row, &n) in sums.rows_mut().into_iter().zip(&counts) {
        row.mapv_inplace(|v| v / n as f64);
    }
    Ok(PrototypeSet {
        prototypes: sums,
        classes: (0..n_classes).collect(),
        counts,
    })
}

/// Row-by-row squared Euclidean distances between `a` and `b`.
pub fn squared_distances(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ai) in a.rows().into_iter().enumerate() {
        for (c, bc) in b.rows().into_iter().enumerate() {
            out[[i, c]] = ai.iter().zip(bc.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    out
}

/// q × k matrix of Euclidean distances (with the [`DIST_EPS`] floor).
pub fn distances(z: ArrayView2<f64>, prototypes: ArrayView2<f64>) -> Array2<f64> {
    squared_distances(z, prototypes).mapv(|sq| (sq + DIST_EPS).sqrt())
}

fn softmax_neg(dist: &Array2<f64>) -> Array2<f64> {
    let mut probs = dist.mapv(|v| -v);
    for mut row in probs.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    probs
}

/// Softmax over classes of negative distances to each prototype.
pub fn classify(z_query: ArrayView2<f64>, prototypes: &PrototypeSet) -> Result<Array2<f64>> {
    if prototypes.prototypes.nrows() == 0 {
        return Err(Error::InvalidArgument("no prototypes".into()));
    }
    if z_query.ncols() != prototypes.prototypes.ncols() {
        return Err(Error::Shape(format!(
            "queries have dim {}, prototypes {}",
            z_query.ncols(),
            prototypes.prototypes.ncols()
        )));
    }
    Ok(softmax_neg(&distances(z_query, prototypes.prototypes.view())))
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &p)| if p > best.1 { (c, p) } else { best })
                .0
        })
        .collect()
}

/// Mean cross-entropy over the episode's queries.
pub fn episode_loss(params: &EncoderParams, episode: &Episode) -> Result<f64> {
    let z_s = params.encode(episode.support.view())?;
    let z_q = params.encode(episode.query.view())?;
    let protos = compute_prototypes(z_s.view(), &episode.support_labels, episode.way())?;
    let dist = distances(z_q.view(), protos.prototypes.view());
    Ok(cross_entropy(&dist, &episode.query_labels))
}

fn cross_entropy(dist: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in dist.rows().into_iter().zip(labels) {
        // logits are -d; with m = max logit the loss is (m + d_y) + ln Σ exp(-d - m)
        let max = row.fold(f64::NEG_INFINITY, |m, &d| m.max(-d));
        total += (max + row[y]) + row.iter().map(|&d| (-d - max).exp()).sum::<f64>().ln();
    }
    total / labels.len() as f64
}

/// Episode loss and its exact gradient with respect to every parameter.
pub fn episode_loss_and_grad(params: &EncoderParams, episode: &Episode) -> Result<(f64, EncoderParams)> {
    let n_s = episode.support.nrows();
    let n_q = episode.query.nrows();
    let way = episode.way();
    if n_q == 0 {
        return Err(Error::Empty("episode has no queries".into()));
    }
    let x = concatenate(Axis(0), &[episode.support.view(), episode.query.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;

    // forward
    let pre = params.hidden_pre(x.view())?;
    let hidden = pre.mapv(|v| v.max(0.0));
    let z = hidden.dot(&params.w2) + &params.b2;
    let z_s = z.slice(s![..n_s, ..]);
    let z_q = z.slice(s![n_s.., ..]);
    let protos = compute_prototypes(z_s, &episode.support_labels, way)?;
    let dist = distances(z_q, protos.prototypes.view());
    let loss = cross_entropy(&dist, &episode.query_labels);
    let probs = softmax_neg(&dist);

    // dL/dlogit = (p - onehot) / n_q, logit = -dist
    let mut g_logit = probs;
    for (i, &y) in episode.query_labels.iter().enumerate() {
        g_logit[[i, y]] -= 1.0;
    }
    g_logit.mapv_inplace(|v| v / n_q as f64);

    let embed = z.ncols();
    let mut g_z = Array2::<f64>::zeros((n_s + n_q, embed));
    let mut g_proto = Array2::<f64>::zeros((way, embed));
    for i in 0..n_q {
        let zi = z_q.row(i);
        for c in 0..way {
            // d(-dist)/dz_i = -(z_i - p_c)/dist, d(-dist)/dp_c = +(z_i - p_c)/dist
            let coef = g_logit[[i, c]] / dist[[i, c]];
            if coef == 0.0 {
                continue;
            }
            let pc = protos.prototypes.row(c);
            let mut gz = g_z.row_mut(n_s + i);
            let mut gp = g_proto.row_mut(c);
            Zip::from(&mut gz).and(&mut gp).and(&zi).and(&pc).for_each(|gz, gp, &a, &b| {
                let diff = coef * (a - b);
                *gz -= diff;
                *gp += diff;
            });
        }
    }
    for (j, &c) in episode.support_labels.iter().enumerate() {
        let share = 1.0 / protos.counts[c] as f64;
        let mut gz = g_z.row_mut(j);
        gz.scaled_add(share, &g_proto.row(c));
    }

    // backward through the MLP
    let g_b2 = g_z.sum_axis(Axis(0));
    let g_w2 = hidden.t().dot(&g_z);
    let mut g_pre = g_z.dot(&params.w2.t());
    Zip::from(&mut g_pre).and(&pre).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
    let g_b1 = g_pre.sum_axis(Axis(0));
    let g_w1 = x.t().dot(&g_pre);

    Ok((
        loss,
        EncoderParams {
            w1: g_w1,
            b1: g_b1,
            w2: g_w2,
            b2: g_b2,
        },
    ))
}

#[cfg(test)]
mod tests;
