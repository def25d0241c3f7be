use ndarray::{Array2, Array4, Axis};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::init::{bias_fan_in, uniform_fan_in};
use super::param::{Param, ParamKind};

/// 2-D convolution implemented as im2col + matmul. Weight layout is
/// [in_c * k * k, out_c] so the forward pass shares the Linear matmul path.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param,
    pub b: Param,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let w = uniform_fan_in(rng, fan_in, fan_in, out_c);
        let b = bias_fan_in(rng, fan_in, out_c);
        Conv2d {
            w: Param::new(w.into_dyn(), ParamKind::Weight),
            b: Param::new(b.into_dyn(), ParamKind::Bias),
            in_c,
            out_c,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn w2(&self) -> ndarray::ArrayView2<'_, f32> {
        self.w.value.view().into_dimensionality().unwrap()
    }

    /// Forward pass returning the output and the im2col matrix for backward.
    pub fn forward_cached(&self, x: &Array4<f32>) -> (Array4<f32>, Array2<f32>) {
        let (batch, c, h, w) = x.dim();
        assert_eq!(c, self.in_c, "conv input channel mismatch");
        let (oh, ow) = self.out_spatial(h, w);
        let cols = im2col(x, self.kernel, self.stride, self.padding, oh, ow);
        let mut y2 = cols.dot(&self.w2());
        y2 += &self
            .b
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        // [B*OH*OW, OC] -> [B, OC, OH, OW]
        let y = y2
            .into_shape_with_order((batch, oh, ow, self.out_c))
            .unwrap()
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned();
        (y, cols)
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        self.forward_cached(x).0
    }

    /// Backward pass accumulating gradients; returns the input gradient when
    /// requested. `in_hw` is the spatial size of the layer input.
    pub fn backward(
        &mut self,
        cols: &Array2<f32>,
        in_hw: (usize, usize),
        gy: &Array4<f32>,
        want_gx: bool,
    ) -> Option<Array4<f32>> {
        let (batch, oc, oh, ow) = gy.dim();
        assert_eq!(oc, self.out_c);
        // [B, OC, OH, OW] -> [B*OH*OW, OC]
        let gy2 = gy
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_shape_with_order((batch * oh * ow, oc))
            .unwrap()
            .to_owned();
        if !self.w.frozen {
            let gw = cols.t().dot(&gy2);
            self.w.accumulate(gw.into_dyn().view(), batch);
            let gb = gy2.sum_axis(Axis(0));
            self.b.accumulate(gb.into_dyn().view(), batch);
        }
        if want_gx {
            let gcols = gy2.dot(&self.w2().t());
            Some(col2im(
                &gcols,
                batch,
                self.in_c,
                in_hw,
                self.kernel,
                self.stride,
                self.padding,
                (oh, ow),
            ))
        } else {
            None
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.w.frozen = frozen;
        self.b.frozen = frozen;
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.w, &self.b]
    }
}

/// im2col: [B, C, H, W] -> [B*OH*OW, C*K*K], parallel over the batch.
fn im2col(x: &Array4<f32>, k: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> Array2<f32> {
    let (batch, c, h, w) = x.dim();
    let mut cols = Array2::<f32>::zeros((batch * oh * ow, c * k * k));
    let col_chunks: Vec<_> = cols.axis_chunks_iter_mut(Axis(0), oh * ow).collect();
    let samples: Vec<_> = x.outer_iter().collect();
    col_chunks
        .into_par_iter()
        .zip(samples)
        .for_each(|(mut chunk, xs)| {
            for ci in 0..c {
                for kh in 0..k {
                    for kw in 0..k {
                        let col = (ci * k + kh) * k + kw;
                        for ohi in 0..oh {
                            let ih = (ohi * stride + kh) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for owi in 0..ow {
                                let iw = (owi * stride + kw) as isize - pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                chunk[[ohi * ow + owi, col]] = xs[[ci, ih as usize, iw as usize]];
                            }
                        }
                    }
                }
            }
        });
    cols
}

/// Scatter-add inverse of im2col, parallel over the batch.
#[allow(clippy::too_many_arguments)]
fn col2im(
    gcols: &Array2<f32>,
    batch: usize,
    c: usize,
    (h, w): (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) -> Array4<f32> {
    let mut gx = Array4::<f32>::zeros((batch, c, h, w));
    let gx_samples: Vec<_> = gx.outer_iter_mut().collect();
    let gcol_chunks: Vec<_> = gcols.axis_chunks_iter(Axis(0), oh * ow).collect();
    gx_samples
        .into_par_iter()
        .zip(gcol_chunks)
        .for_each(|(mut gxs, chunk)| {
            for ci in 0..c {
                for kh in 0..k {
                    for kw in 0..k {
                        let col = (ci * k + kh) * k + kw;
                        for ohi in 0..oh {
                            let ih = (ohi * stride + kh) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for owi in 0..ow {
                                let iw = (owi * stride + kw) as isize - pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                gxs[[ci, ih as usize, iw as usize]] += chunk[[ohi * ow + owi, col]];
                            }
                        }
                    }
                }
            }
        });
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::rng_for;
    use ndarray::Array4;

    /// Direct convolution oracle for small cases.
    fn conv_naive(x: &Array4<f32>, conv: &Conv2d) -> Array4<f32> {
        let (batch, c, h, w) = x.dim();
        let (oh, ow) = conv.out_spatial(h, w);
        let wv = conv.w.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let bv = conv.b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = Array4::<f32>::zeros((batch, conv.out_c, oh, ow));
        for bi in 0..batch {
            for oc in 0..conv.out_c {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut acc = bv[oc];
                        for ci in 0..c {
                            for kh in 0..conv.kernel {
                                for kw in 0..conv.kernel {
                                    let ih = (ohi * conv.stride + kh) as isize - conv.padding as isize;
                                    let iw = (owi * conv.stride + kw) as isize - conv.padding as isize;
                                    if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                        continue;
                                    }
                                    let widx = (ci * conv.kernel + kh) * conv.kernel + kw;
                                    acc += x[[bi, ci, ih as usize, iw as usize]] * wv[[widx, oc]];
                                }
                            }
                        }
                        y[[bi, oc, ohi, owi]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_forward_matches_naive_conv() {
        let mut rng = rng_for(11, "conv");
        let conv = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 5, 5), |(b, c, i, j)| {
            (b as f32 + 1.0) * 0.1 + c as f32 * 0.3 - i as f32 * 0.07 + j as f32 * 0.05
        });
        let got = conv.forward(&x);
        let want = conv_naive(&x, &conv);
        assert_eq!(got.dim(), want.dim());
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-4, "{g} vs {w}");
        }
    }

    #[test]
    fn frozen_conv_accumulates_nothing() {
        let mut rng = rng_for(1, "conv");
        let mut conv = Conv2d::new(1, 2, 3, 1, 1, &mut rng);
        conv.set_frozen(true);
        let x = Array4::from_elem((1, 1, 4, 4), 1.0f32);
        let (y, cols) = conv.forward_cached(&x);
        let gy = Array4::from_elem(y.dim(), 1.0f32);
        conv.backward(&cols, (4, 4), &gy, false);
        assert_eq!(conv.w.touches(), (0, 0));
        assert!(!conv.w.touched());
    }
}
