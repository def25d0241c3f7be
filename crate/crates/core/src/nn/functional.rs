use ndarray::{Array1, Array2, Axis, Zip};

pub fn relu(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU using the post-activation values: a = max(z, 0),
/// so the pass-through mask is a > 0.
pub fn relu_backward(post: &Array2<f32>, gy: &Array2<f32>) -> Array2<f32> {
    let mut gx = gy.clone();
    Zip::from(&mut gx).and(post).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

pub fn sigmoid(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn sigmoid_backward(post: &Array2<f32>, gy: &Array2<f32>) -> Array2<f32> {
    let mut gx = gy.clone();
    Zip::from(&mut gx).and(post).for_each(|g, &s| {
        *g *= s * (1.0 - s);
    });
    gx
}

/// Numerically stable row-wise softmax.
pub fn softmax(logits: &Array2<f32>) -> Array2<f32> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

/// Mean cross-entropy against hard labels together with the logit gradient
/// d(loss)/d(logits) = (softmax - onehot) / batch.
pub fn cross_entropy(logits: &Array2<f32>, labels: &[usize]) -> (f64, Array2<f32>) {
    assert_eq!(logits.nrows(), labels.len(), "batch/label length mismatch");
    let batch = logits.nrows();
    let p = softmax(logits);
    let mut loss = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        loss -= (p[[i, y]].max(1e-12) as f64).ln();
    }
    loss /= batch as f64;
    let mut dlogits = p;
    for (i, &y) in labels.iter().enumerate() {
        dlogits[[i, y]] -= 1.0;
    }
    dlogits.mapv_inplace(|v| v / batch as f32);
    (loss, dlogits)
}

/// Distillation loss against soft targets at temperature tau, with the
/// conventional tau^2 scaling so its gradient magnitude is comparable to a
/// hard-label loss. Targets are treated as constants.
pub fn distill_cross_entropy(
    logits: &Array2<f32>,
    soft_targets: &Array2<f32>,
    tau: f32,
) -> (f64, Array2<f32>) {
    assert_eq!(logits.dim(), soft_targets.dim());
    let batch = logits.nrows();
    let scaled = logits.mapv(|v| v / tau);
    let p = softmax(&scaled);
    let mut loss = 0.0f64;
    Zip::from(&p).and(soft_targets).for_each(|&pi, &qi| {
        loss -= qi as f64 * (pi.max(1e-12) as f64).ln();
    });
    loss = loss * (tau as f64) * (tau as f64) / batch as f64;
    let mut dlogits = &p - soft_targets;
    dlogits.mapv_inplace(|v| v * tau / batch as f32);
    (loss, dlogits)
}

/// Soft targets for distillation: softmax of teacher logits at temperature tau.
pub fn soft_targets(teacher_logits: &Array2<f32>, tau: f32) -> Array2<f32> {
    softmax(&teacher_logits.mapv(|v| v / tau))
}

/// Mean squared error over all elements, with d(loss)/d(pred).
pub fn mse(pred: &Array2<f32>, target: &Array2<f32>) -> (f64, Array2<f32>) {
    assert_eq!(pred.dim(), target.dim());
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|&d| d as f64 * d as f64).sum::<f64>() / n;
    let dpred = diff.mapv(|d| 2.0 * d / n as f32);
    (loss, dpred)
}

/// argmax per row.
pub fn argmax_rows(logits: &Array2<f32>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            let mut bv = f32::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if v > bv {
                    bv = v;
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f32> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &y) in labels.iter().enumerate() {
        out[[i, y]] = 1.0;
    }
    out
}

/// Row sums as a check helper for probability outputs.
pub fn row_sums(x: &Array2<f32>) -> Array1<f32> {
    x.sum_axis(Axis(1))
}
