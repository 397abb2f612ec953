//! Training objectives: center loss, cross-entropy, the deconstruction loss
//! over the class cross-correlation of predictions, and an optional batch-hard
//! triplet term. Every loss returns its value together with the gradient with
//! respect to its input so the network can backpropagate it directly.
//!
//! Matrices are row-major slices: `N x D` features, `N x C` logits or
//! probabilities.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Columns whose standard deviation falls below this are treated as constant.
pub const CORRELATION_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

fn check_matrix(values: &[f64], rows: usize, cols: usize) -> Result<()> {
    if cols == 0 || values.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{} values do not form a {} x {} matrix",
            values.len(),
            rows,
            cols
        )));
    }
    Ok(())
}

/// One learned center per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters {
    classes: usize,
    dim: usize,
    values: Vec<f64>,
}

impl ClassCenters {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            values: vec![0.0; classes * dim],
        }
    }

    pub fn from_vec(classes: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        check_matrix(&values, classes, dim)?;
        Ok(Self { classes, dim, values })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn center(&self, class: usize) -> &[f64] {
        &self.values[class * self.dim..(class + 1) * self.dim]
    }

    /// Moves each center toward the mean of its batch features:
    /// `c -= alpha * sum(c - x) / (1 + count)`.
    pub fn update(&mut self, features: &[f64], labels: &[usize], alpha: f64) -> Result<()> {
        check_labels(labels, self.classes)?;
        check_matrix(features, labels.len(), self.dim)?;
        let mut delta = vec![0.0; self.values.len()];
        let mut count = vec![0usize; self.classes];
        for (x, &l) in features.chunks_exact(self.dim).zip(labels) {
            count[l] += 1;
            let c = &self.values[l * self.dim..(l + 1) * self.dim];
            for ((d, cv), xv) in delta[l * self.dim..(l + 1) * self.dim].iter_mut().zip(c).zip(x) {
                *d += cv - xv;
            }
        }
        for k in 0..self.classes {
            if count[k] == 0 {
                continue;
            }
            let scale = alpha / (1 + count[k]) as f64;
            for (c, d) in self.values[k * self.dim..(k + 1) * self.dim]
                .iter_mut()
                .zip(&delta[k * self.dim..(k + 1) * self.dim])
            {
                *c -= scale * d;
            }
        }
        Ok(())
    }
}

/// `(gamma / 2) * sum_n ||x_n - c_{y_n}||^2`; gradient with respect to the features.
pub fn center_loss(features: &[f64], labels: &[usize], centers: &ClassCenters, gamma: f64) -> Result<LossGrad> {
    check_labels(labels, centers.classes)?;
    check_matrix(features, labels.len(), centers.dim)?;
    let mut value = 0.0;
    let mut grad = vec![0.0; features.len()];
    for ((x, g), &l) in features
        .chunks_exact(centers.dim)
        .zip(grad.chunks_exact_mut(centers.dim))
        .zip(labels)
    {
        for ((xv, cv), gv) in x.iter().zip(centers.center(l)).zip(g.iter_mut()) {
            let d = xv - cv;
            value += d * d;
            *gv = gamma * d;
        }
    }
    Ok(LossGrad {
        value: 0.5 * gamma * value,
        grad,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - m);
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Batch mean of `-log softmax(logits)[label]`; gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> Result<LossGrad> {
    check_labels(labels, classes)?;
    check_matrix(logits, labels.len(), classes)?;
    let n = labels.len() as f64;
    let mut grad = softmax_rows(logits, classes);
    let mut value = 0.0;
    for ((row, g), &l) in logits
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + math::ln(row.iter().map(|v| math::exp(v - m)).sum::<f64>());
        value += lse - row[l];
        g[l] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok(LossGrad { value: value / n, grad })
}

/// `C x C` class cross-correlation of batch predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    size: usize,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        check_matrix(&values, size, size)?;
        Ok(Self { size, values })
    }

    pub fn identity(size: usize) -> Self {
        let mut values = vec![0.0; size * size];
        (0..size).for_each(|i| values[i * size + i] = 1.0);
        Self { size, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn loss(&self, lambda: f64) -> f64 {
        dc_value(&self.values, self.size, lambda)
    }
}

/// Intermediate state of a Pearson correlation, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PearsonCache {
    rows: usize,
    cols: usize,
    /// Standardized columns (zero for constant columns).
    z: Vec<f64>,
    inv_std: Vec<Option<f64>>,
}

/// Pearson correlation between the columns of an arbitrary `N x C` matrix.
///
/// Columns are centered and divided by their population standard deviation,
/// then `S = Z^T Z / N`. Constant columns standardize to zero, so their row
/// and column of `S` (diagonal included) are zero.
pub fn pearson_correlation(m: &[f64], rows: usize, cols: usize) -> Result<(CorrelationMatrix, PearsonCache)> {
    check_matrix(m, rows, cols)?;
    if rows < 2 {
        return Err(Error::BatchTooSmall);
    }
    let n = rows as f64;
    let mut z = m.to_vec();
    let mut inv_std = vec![None; cols];
    for j in 0..cols {
        let mean = (0..rows).map(|i| m[i * cols + j]).sum::<f64>() / n;
        let var = (0..rows)
            .map(|i| {
                let d = m[i * cols + j] - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let std = math::sqrt(var);
        if std > CORRELATION_EPS {
            inv_std[j] = Some(1.0 / std);
            (0..rows).for_each(|i| z[i * cols + j] = (m[i * cols + j] - mean) / std);
        } else {
            (0..rows).for_each(|i| z[i * cols + j] = 0.0);
        }
    }
    let mut s = vec![0.0; cols * cols];
    for row in z.chunks_exact(cols) {
        for a in 0..cols {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..cols {
                s[a * cols + b] += row[a] * row[b];
            }
        }
    }
    s.iter_mut().for_each(|v| *v /= n);
    Ok((
        CorrelationMatrix { size: cols, values: s },
        PearsonCache { rows, cols, z, inv_std },
    ))
}

/// Gradient with respect to the input matrix given `dL/dS`.
pub fn pearson_backward(cache: &PearsonCache, grad_s: &[f64]) -> Vec<f64> {
    let (rows, cols) = (cache.rows, cache.cols);
    let n = rows as f64;
    // dZ = Z (G + G^T) / N
    let mut sym = vec![0.0; cols * cols];
    for a in 0..cols {
        for b in 0..cols {
            sym[a * cols + b] = grad_s[a * cols + b] + grad_s[b * cols + a];
        }
    }
    let mut dz = vec![0.0; rows * cols];
    for (zr, dr) in cache.z.chunks_exact(cols).zip(dz.chunks_exact_mut(cols)) {
        for a in 0..cols {
            if zr[a] == 0.0 {
                continue;
            }
            for b in 0..cols {
                dr[b] += zr[a] * sym[a * cols + b] / n;
            }
        }
    }
    let mut dm = vec![0.0; rows * cols];
    for j in 0..cols {
        let Some(inv) = cache.inv_std[j] else { continue };
        let mean_dz = (0..rows).map(|i| dz[i * cols + j]).sum::<f64>() / n;
        let mean_dzz = (0..rows).map(|i| dz[i * cols + j] * cache.z[i * cols + j]).sum::<f64>() / n;
        for i in 0..rows {
            dm[i * cols + j] = inv * (dz[i * cols + j] - mean_dz - cache.z[i * cols + j] * mean_dzz);
        }
    }
    dm
}

/// Cross-correlation of predicted class probabilities (`N x C`, rows summing to one).
pub fn correlation_matrix(probs: &[f64], rows: usize, classes: usize) -> Result<CorrelationMatrix> {
    check_matrix(probs, rows, classes)?;
    if rows < 2 {
        return Err(Error::BatchTooSmall);
    }
    let valid = probs
        .chunks_exact(classes)
        .all(|r| r.iter().all(|&p| p >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= 1e-5);
    if !valid {
        return Err(Error::NotProbabilities);
    }
    Ok(pearson_correlation(probs, rows, classes)?.0)
}

fn dc_value(s: &[f64], size: usize, lambda: f64) -> f64 {
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..size {
        for j in 0..size {
            let v = s[i * size + j];
            if i == j {
                diag += (1.0 - v) * (1.0 - v);
            } else {
                off += v * v;
            }
        }
    }
    diag + lambda * off
}

/// `sum_i (1 - S_ii)^2 + lambda * sum_{i != j} S_ij^2`.
pub fn deconstruction_loss(s: &[f64], rows: usize, cols: usize, lambda: f64) -> Result<f64> {
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    check_matrix(s, rows, cols)?;
    Ok(dc_value(s, rows, lambda))
}

/// `dL/dS` of the deconstruction loss.
pub fn deconstruction_grad(s: &CorrelationMatrix, lambda: f64) -> Vec<f64> {
    let c = s.size;
    let mut g = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let v = s.values[i * c + j];
            g[i * c + j] = if i == j { -2.0 * (1.0 - v) } else { 2.0 * lambda * v };
        }
    }
    g
}

/// Deconstruction loss of the batch predictions, differentiated back to the logits.
pub fn deconstruction_from_logits(logits: &[f64], rows: usize, classes: usize, lambda: f64) -> Result<LossGrad> {
    check_matrix(logits, rows, classes)?;
    let probs = softmax_rows(logits, classes);
    let (s, cache) = pearson_correlation(&probs, rows, classes)?;
    let value = s.loss(lambda);
    let dprobs = pearson_backward(&cache, &deconstruction_grad(&s, lambda));
    // softmax Jacobian: dl = p * (dp - <dp, p>)
    let mut grad = vec![0.0; logits.len()];
    for ((p, dp), g) in probs
        .chunks_exact(classes)
        .zip(dprobs.chunks_exact(classes))
        .zip(grad.chunks_exact_mut(classes))
    {
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for ((gv, pv), dv) in g.iter_mut().zip(p).zip(dp) {
            *gv = pv * (dv - dot);
        }
    }
    Ok(LossGrad { value, grad })
}

/// Batch-hard triplet loss on Euclidean distances, averaged over anchors that
/// have both a positive and a negative in the batch.
pub fn batch_hard_triplet(features: &[f64], dim: usize, labels: &[usize], margin: f64) -> Result<LossGrad> {
    check_matrix(features, labels.len(), dim)?;
    let n = labels.len();
    let row = |i: usize| &features[i * dim..(i + 1) * dim];
    let dist = |i: usize, j: usize| -> f64 {
        math::sqrt(row(i).iter().zip(row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + 1e-12)
    };
    let mut grad = vec![0.0; features.len()];
    let mut value = 0.0;
    let mut anchors = 0usize;
    let mut active = Vec::new();
    for i in 0..n {
        let pos = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| (j, dist(i, j)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let neg = (0..n)
            .filter(|&j| labels[j] != labels[i])
            .map(|j| (j, dist(i, j)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let (Some((p, dp)), Some((q, dn))) = (pos, neg) {
            anchors += 1;
            let l = margin + dp - dn;
            if l > 0.0 {
                value += l;
                active.push((i, p, dp, q, dn));
            }
        }
    }
    if anchors == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let scale = 1.0 / anchors as f64;
    for (i, p, dp, q, dn) in active {
        for k in 0..dim {
            let gp = (features[i * dim + k] - features[p * dim + k]) / dp * scale;
            let gn = (features[i * dim + k] - features[q * dim + k]) / dn * scale;
            grad[i * dim + k] += gp - gn;
            grad[p * dim + k] -= gp;
            grad[q * dim + k] += gn;
        }
    }
    Ok(LossGrad {
        value: value * scale,
        grad,
    })
}

/// Relative weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_center: f64,
    pub w_ce: f64,
    pub w_dc: f64,
    pub lambda_dc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_center: 0.0005,
            w_ce: 1.0,
            w_dc: 1.0,
            lambda_dc: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_center, self.w_ce, self.w_dc, self.lambda_dc];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {:?}",
                self
            )));
        }
        Ok(())
    }
}

/// Unweighted loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub center: f64,
    pub ce: f64,
    pub dc: f64,
}

/// `w_center * center + w_ce * ce + w_dc * dc`.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    if [parts.center, parts.ce, parts.dc].iter().any(|v| v.is_nan()) {
        return Err(Error::Diverged);
    }
    Ok(weights.w_center * parts.center + weights.w_ce * parts.ce + weights.w_dc * parts.dc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_loss_cases() {
        let centers = ClassCenters::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let zero = center_loss(&[0.0, 0.0, 1.0, 1.0], &[0, 1], &centers, 1.0).unwrap();
        assert_eq!(zero.value, 0.0);
        let half = center_loss(&[1.0, 0.0], &[0], &centers, 1.0).unwrap();
        assert!((half.value - 0.5).abs() < 1e-15);
        assert_eq!(half.grad, vec![1.0, 0.0]);
        let doubled = center_loss(&[2.0, 0.0], &[0], &centers, 1.0).unwrap();
        assert!((doubled.value - 4.0 * half.value).abs() < 1e-15);
        assert_eq!(
            center_loss(&[0.0, 0.0], &[2], &centers, 1.0),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        );
    }

    #[test]
    fn center_update_moves_toward_batch_mean() {
        let mut c = ClassCenters::zeros(2, 1);
        c.update(&[2.0, 4.0, 7.0], &[0, 0, 1], 0.5).unwrap();
        // class 0: delta = -6, scale 0.5/3 -> +1; class 1: delta -7, scale 0.25 -> +1.75
        assert!((c.center(0)[0] - 1.0).abs() < 1e-15);
        assert!((c.center(1)[0] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let ce = cross_entropy(&[0.3; 8], 4, &[1, 3]).unwrap();
        assert!((ce.value - libm::log(4.0)).abs() < 1e-12);
        assert!((ce.value - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn confident_logits_give_near_zero_ce() {
        let ce = cross_entropy(&[50.0, 0.0, 0.0], 3, &[0]).unwrap();
        assert!(ce.value < 1e-20);
        assert!(cross_entropy(&[0.0; 3], 3, &[3]).is_err());
    }

    #[test]
    fn identical_columns_correlate_perfectly() {
        let probs = [0.5, 0.5, 0.0, 0.3, 0.3, 0.4, 0.1, 0.1, 0.8];
        let s = correlation_matrix(&probs, 3, 3).unwrap();
        assert!((s.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((s.get(2, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complementary_columns_anticorrelate() {
        let probs = [0.2, 0.8, 0.9, 0.1, 0.5, 0.5, 0.35, 0.65];
        let s = correlation_matrix(&probs, 4, 2).unwrap();
        assert!((s.get(0, 1) + 1.0).abs() < 1e-12);
        assert!((s.get(1, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_zeroed() {
        let probs = [0.2, 0.3, 0.5, 0.4, 0.3, 0.3, 0.1, 0.3, 0.6];
        let s = correlation_matrix(&probs, 3, 3).unwrap();
        for k in 0..3 {
            assert_eq!(s.get(1, k), 0.0);
            assert_eq!(s.get(k, 1), 0.0);
        }
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_errors() {
        assert_eq!(correlation_matrix(&[0.5, 0.5], 1, 2), Err(Error::BatchTooSmall));
        assert_eq!(
            correlation_matrix(&[0.5, 0.6, 0.5, 0.5], 2, 2),
            Err(Error::NotProbabilities)
        );
    }

    #[test]
    fn dc_loss_hand_values() {
        assert_eq!(CorrelationMatrix::identity(3).loss(0.2), 0.0);
        assert!((deconstruction_loss(&[1.0; 4], 2, 2, 0.2).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(deconstruction_loss(&[0.0; 4], 2, 2, 0.2).unwrap(), 2.0);
        assert_eq!(
            deconstruction_loss(&[0.0; 6], 2, 3, 0.2),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        );
    }

    #[test]
    fn total_loss_weighting() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossParts::default(), &w).unwrap(), 0.0);
        let parts = LossParts {
            center: 2.0,
            ce: 1.0,
            dc: 1.0,
        };
        assert!((total_loss(&parts, &w).unwrap() - 2.001).abs() < 1e-12);
        let no_dc = LossWeights { w_dc: 0.0, ..w };
        assert!((total_loss(&parts, &no_dc).unwrap() - 1.001).abs() < 1e-12);
        let nan = LossParts { dc: f64::NAN, ..parts };
        assert_eq!(total_loss(&nan, &w), Err(Error::Diverged));
    }

    #[test]
    fn triplet_is_zero_when_classes_are_separated() {
        let f = [0.0, 0.0, 0.1, 0.0, 10.0, 0.0, 10.1, 0.0];
        let t = batch_hard_triplet(&f, 2, &[0, 0, 1, 1], 0.3).unwrap();
        assert_eq!(t.value, 0.0);
        let close = [0.0, 0.0, 1.0, 0.0, 0.5, 0.0, 1.5, 0.0];
        assert!(batch_hard_triplet(&close, 2, &[0, 0, 1, 1], 0.3).unwrap().value > 0.0);
    }
}
