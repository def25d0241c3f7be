use ndarray::{ArrayD, ArrayViewD};

/// Whether a parameter tensor holds connection weights or biases.
/// Update-cost accounting is weights-only by default, so the two are
/// tracked separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// A trainable tensor with its gradient, Adam state and freeze flag.
///
/// Instrumentation: every backward pass that accumulates a gradient into
/// this parameter also records `rows * len` in `touch_units`, where `rows`
/// is the batch size flowing through the layer. Dividing the accumulated
/// touches by the replay batch size yields the empirical counterpart of
/// the analytic update count.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    m: ArrayD<f32>,
    v: ArrayD<f32>,
    step: u64,
    pub frozen: bool,
    touched: bool,
    touch_units: u64,
    touch_rows: u64,
    pub kind: ParamKind,
}

impl Param {
    pub fn new(value: ArrayD<f32>, kind: ParamKind) -> Self {
        let zeros = ArrayD::zeros(value.raw_dim());
        Param {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            step: 0,
            frozen: false,
            touched: false,
            touch_units: 0,
            touch_rows: 0,
            value,
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Accumulate a gradient contribution from a backward pass over `rows`
    /// samples. Frozen parameters ignore the contribution entirely, so they
    /// stay bit-identical through any number of optimizer steps and never
    /// register instrumentation touches.
    pub fn accumulate(&mut self, grad: ArrayViewD<'_, f32>, rows: usize) {
        if self.frozen {
            return;
        }
        self.grad += &grad;
        self.touched = true;
        self.touch_units += rows as u64 * self.value.len() as u64;
        self.touch_rows += rows as u64;
    }

    pub fn touched(&self) -> bool {
        self.touched
    }

    /// Instrumentation readout: (sample-weighted touches, backward rows).
    pub fn touches(&self) -> (u64, u64) {
        (self.touch_units, self.touch_rows)
    }

    pub fn reset_touches(&mut self) {
        self.touch_units = 0;
        self.touch_rows = 0;
    }

    /// One Adam update. Parameters that are frozen or received no gradient
    /// since the last step are skipped outright, which keeps them
    /// bit-identical rather than merely numerically close.
    pub fn adam_step(&mut self, lr: f32, beta1: f32, beta2: f32, eps: f32) {
        if self.frozen || !self.touched {
            return;
        }
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        ndarray::azip!((w in &mut self.value, g in &self.grad, m in &mut self.m, v in &mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * *g;
            *v = beta2 * *v + (1.0 - beta2) * *g * *g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *w -= lr * mh / (vh.sqrt() + eps);
        });
        self.grad.fill(0.0);
        self.touched = false;
    }

    /// Drop any accumulated gradient without applying it.
    pub fn clear_grad(&mut self) {
        if self.touched {
            self.grad.fill(0.0);
            self.touched = false;
        }
    }
}

/// Adam hyperparameters. The defaults are the ones used by every training
/// recipe in this crate (lr 1e-4).
#[derive(Debug, Clone, Copy)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f32) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) {
        for p in params {
            p.adam_step(self.lr, self.beta1, self.beta2, self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    fn param(vals: &[f32]) -> Param {
        Param::new(
            ArrayD::from_shape_vec(vec![vals.len()], vals.to_vec()).unwrap(),
            ParamKind::Weight,
        )
    }

    #[test]
    fn frozen_param_is_bit_identical_after_steps() {
        let mut p = param(&[1.0, -2.0, 3.5]);
        p.frozen = true;
        let before = p.value.clone();
        let g = ArrayD::from_shape_vec(vec![3], vec![0.5, 0.5, 0.5]).unwrap();
        for _ in 0..10 {
            p.accumulate(g.view(), 4);
            p.adam_step(1e-2, 0.9, 0.999, 1e-8);
        }
        assert_eq!(p.value.as_slice().unwrap(), before.as_slice().unwrap());
        assert_eq!(p.touches(), (0, 0));
    }

    #[test]
    fn untouched_param_skips_update() {
        let mut p = param(&[1.0]);
        let before = p.value.clone();
        p.adam_step(1e-2, 0.9, 0.999, 1e-8);
        assert_eq!(p.value[[0]], before[[0]]);
    }

    #[test]
    fn touch_units_count_rows_times_len() {
        let mut p = param(&[0.0; 6]);
        let g = ArrayD::zeros(vec![6]);
        p.accumulate(g.view(), 7);
        assert_eq!(p.touches(), (42, 7));
        p.reset_touches();
        assert_eq!(p.touches(), (0, 0));
    }
}
