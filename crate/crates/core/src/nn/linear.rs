use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::init::{bias_fan_in, uniform_fan_in};
use super::param::{Param, ParamKind};

/// Fully-connected layer, weight stored [in_dim, out_dim] so that
/// forward is `y = x.dot(w) + b` on row-major batches.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = uniform_fan_in(rng, in_dim, in_dim, out_dim);
        let b = bias_fan_in(rng, in_dim, out_dim);
        Linear {
            w: Param::new(w.into_dyn(), ParamKind::Weight),
            b: Param::new(b.into_dyn(), ParamKind::Bias),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.shape()[1]
    }

    fn w2(&self) -> ndarray::ArrayView2<'_, f32> {
        self.w.value.view().into_dimensionality().unwrap()
    }

    fn b1(&self) -> ndarray::ArrayView1<'_, f32> {
        self.b.value.view().into_dimensionality().unwrap()
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut y = x.dot(&self.w2());
        y += &self.b1();
        y
    }

    /// Backward pass: accumulates weight/bias gradients from `(x, gy)` and
    /// returns the input gradient when `want_gx` is set. Skipping `gx` at
    /// the stop layer avoids computing gradients below an injection point.
    pub fn backward(&mut self, x: &Array2<f32>, gy: &Array2<f32>, want_gx: bool) -> Option<Array2<f32>> {
        let rows = x.nrows();
        if !self.w.frozen {
            let gw = x.t().dot(gy);
            self.w.accumulate(gw.into_dyn().view(), rows);
            let gb = gy.sum_axis(Axis(0));
            self.b.accumulate(gb.into_dyn().view(), rows);
        }
        if want_gx {
            Some(gy.dot(&self.w2().t()))
        } else {
            None
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.w.frozen = frozen;
        self.b.frozen = frozen;
    }

    pub fn frozen(&self) -> bool {
        self.w.frozen
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.w, &self.b]
    }
}
