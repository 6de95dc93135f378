//! 3x3 same-padded convolution blocks: conv -> batch norm -> ReLU -> max-pool.
//!
//! Per-sample feature maps are `(channels, time * freq)` matrices. The
//! convolution runs as one GEMM over an im2col buffer.

use ndarray::{Array1, Array2, Axis};

use super::layers::{BatchNorm, BatchStats, NORM_EPS};
use super::{fan_in_uniform, join, Mode, Module, ParamMut, ParamRef};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Spatial extent of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub time: usize,
    pub freq: usize,
}

impl Dims {
    pub fn area(self) -> usize {
        self.time * self.freq
    }

    pub fn pooled(self, pool: (usize, usize)) -> Result<Dims> {
        if self.time < pool.0 || self.freq < pool.1 {
            return Err(Error::shape(
                format!("spatial dims >= pooling window {pool:?}"),
                format!("{}x{}", self.time, self.freq),
            ));
        }
        Ok(Dims {
            time: self.time / pool.0,
            freq: self.freq / pool.1,
        })
    }
}

fn im2col(x: &Array2<f64>, d: Dims) -> Array2<f64> {
    let c_in = x.nrows();
    let mut cols = Array2::zeros((c_in * TAPS, d.area()));
    for ci in 0..c_in {
        let src = x.row(ci);
        let src = src.as_slice().expect("standard layout");
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let mut dst = cols.row_mut(ci * TAPS + ky * KERNEL + kx);
                let dst = dst.as_slice_mut().expect("standard layout");
                for t in 0..d.time {
                    let st = t as isize + ky as isize - 1;
                    if st < 0 || st >= d.time as isize {
                        continue;
                    }
                    let st = st as usize;
                    // f + kx - 1 must land in [0, freq)
                    let f_lo = usize::from(kx == 0);
                    let f_hi = if kx == 2 { d.freq - 1 } else { d.freq };
                    for f in f_lo..f_hi {
                        dst[t * d.freq + f] = src[st * d.freq + f + kx - 1];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, c_in: usize, d: Dims) -> Array2<f64> {
    let mut x = Array2::zeros((c_in, d.area()));
    for ci in 0..c_in {
        let mut dst = x.row_mut(ci);
        let dst = dst.as_slice_mut().expect("standard layout");
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let src = cols.row(ci * TAPS + ky * KERNEL + kx);
                let src = src.as_slice().expect("standard layout");
                for t in 0..d.time {
                    let st = t as isize + ky as isize - 1;
                    if st < 0 || st >= d.time as isize {
                        continue;
                    }
                    let st = st as usize;
                    let f_lo = usize::from(kx == 0);
                    let f_hi = if kx == 2 { d.freq - 1 } else { d.freq };
                    for f in f_lo..f_hi {
                        dst[st * d.freq + f + kx - 1] += src[t * d.freq + f];
                    }
                }
            }
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(c_out, c_in * 9)`, taps ordered `(c_in, ky, kx)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    pub fn new(rng: &mut Rng, c_in: usize, c_out: usize) -> Self {
        let fan_in = c_in * TAPS;
        Conv2d {
            weight: Array2::from_shape_vec(
                (c_out, fan_in),
                fan_in_uniform(rng, fan_in, c_out * fan_in),
            )
            .expect("shape"),
            bias: Array1::from(fan_in_uniform(rng, fan_in, c_out)),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.ncols() / TAPS
    }

    pub fn c_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>, d: Dims) -> Array2<f64> {
        self.forward_cols(&im2col(x, d))
    }

    fn forward_cols(&self, cols: &Array2<f64>) -> Array2<f64> {
        self.weight.dot(cols) + &self.bias.view().insert_axis(Axis(1))
    }

    /// Returns `(dx, dweight, dbias)` for one sample.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        d: Dims,
        dy: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let (dx, dw, db) = self.backward_cols(&im2col(x, d), d, dy, true);
        (dx.expect("requested"), dw, db)
    }

    fn backward_cols(
        &self,
        cols: &Array2<f64>,
        d: Dims,
        dy: &Array2<f64>,
        need_dx: bool,
    ) -> (Option<Array2<f64>>, Array2<f64>, Array1<f64>) {
        let dw = dy.dot(&cols.t());
        let db = dy.sum_axis(Axis(1));
        let dx = need_dx.then(|| col2im(&self.weight.t().dot(dy), self.c_in(), d));
        (dx, dw, db)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub pool: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ConvBlockCache {
    /// im2col buffer of every input sample.
    cols: Vec<Array2<f64>>,
    xhat: Vec<Array2<f64>>,
    argmax: Vec<Vec<u32>>,
    inv_std: Array1<f64>,
    stats: Option<BatchStats>,
    in_dims: Dims,
    out_dims: Dims,
}

impl ConvBlockCache {
    pub fn stats(&self) -> Option<&BatchStats> {
        self.stats.as_ref()
    }

    /// Post-ReLU, pre-pool activations of every sample.
    pub fn relu_outputs(&self, block: &ConvBlock) -> Vec<Array2<f64>> {
        self.xhat.iter().map(|x| block.activate(x)).collect()
    }
}

impl ConvBlock {
    pub fn new(rng: &mut Rng, c_in: usize, c_out: usize, pool: (usize, usize)) -> Self {
        ConvBlock {
            conv: Conv2d::new(rng, c_in, c_out),
            bn: BatchNorm::new(c_out),
            pool,
        }
    }

    fn activate(&self, xhat: &Array2<f64>) -> Array2<f64> {
        let g = self.bn.gamma.view().insert_axis(Axis(1));
        let b = self.bn.beta.view().insert_axis(Axis(1));
        (xhat * &g + &b).mapv(|v| v.max(0.0))
    }

    /// Forward over a batch. Train mode normalizes with statistics pooled
    /// over every sample and position of each channel.
    pub fn forward(
        &self,
        inputs: Vec<Array2<f64>>,
        d: Dims,
        mode: Mode,
    ) -> Result<(Vec<Array2<f64>>, ConvBlockCache)> {
        let out_dims = d.pooled(self.pool)?;
        if inputs.is_empty() {
            return Err(Error::Empty("conv block batch".into()));
        }
        for x in &inputs {
            if x.nrows() != self.conv.c_in() || x.ncols() != d.area() {
                return Err(Error::shape(
                    format!("{}x{}", self.conv.c_in(), d.area()),
                    format!("{}x{}", x.nrows(), x.ncols()),
                ));
            }
        }
        let cols: Vec<Array2<f64>> = par::map_collect(&inputs, |x| im2col(x, d));
        drop(inputs);
        let mut z: Vec<Array2<f64>> = par::map_collect(&cols, |c| self.conv.forward_cols(c));

        let c = self.conv.c_out();
        let (mean, var, stats) = if mode.is_train() {
            let count = z.len() * d.area();
            let mut sum = Array1::<f64>::zeros(c);
            for zi in &z {
                sum += &zi.sum_axis(Axis(1));
            }
            let mean = sum / count as f64;
            let mut sq = Array1::<f64>::zeros(c);
            for zi in &z {
                for (ch, row) in zi.rows().into_iter().enumerate() {
                    let m = mean[ch];
                    sq[ch] += row.iter().map(|&v| (v - m) * (v - m)).sum::<f64>();
                }
            }
            let var = sq / count as f64;
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                count,
            };
            (mean, var, Some(stats))
        } else {
            (
                self.bn.running_mean.clone(),
                self.bn.running_var.clone(),
                None,
            )
        };
        let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());

        // normalize in place, then ReLU and pool without materializing the
        // activations
        let pooled: Vec<(Array2<f64>, Vec<u32>)> = par::map_collect_mut(&mut z, |zi| {
            for (ch, mut row) in zi.rows_mut().into_iter().enumerate() {
                let (m, s) = (mean[ch], inv_std[ch]);
                row.mapv_inplace(|v| (v - m) * s);
            }
            self.pool_activations(zi, d, out_dims)
        });
        let mut outs = Vec::with_capacity(pooled.len());
        let mut argmax = Vec::with_capacity(pooled.len());
        for (p, a) in pooled {
            outs.push(p);
            argmax.push(a);
        }
        Ok((
            outs,
            ConvBlockCache {
                cols,
                xhat: z,
                argmax,
                inv_std,
                stats,
                in_dims: d,
                out_dims,
            },
        ))
    }

    /// Max-pools `relu(gamma * xhat + beta)`.
    fn pool_activations(
        &self,
        xhat: &Array2<f64>,
        d: Dims,
        out_d: Dims,
    ) -> (Array2<f64>, Vec<u32>) {
        let c = xhat.nrows();
        let pool = self.pool;
        let mut out = Array2::zeros((c, out_d.area()));
        let mut arg = vec![0u32; c * out_d.area()];
        for ch in 0..c {
            let (g, b) = (self.bn.gamma[ch], self.bn.beta[ch]);
            let src = xhat.row(ch);
            let src = src.as_slice().expect("standard layout");
            for ot in 0..out_d.time {
                for of in 0..out_d.freq {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dt in 0..pool.0 {
                        for df in 0..pool.1 {
                            let i = (ot * pool.0 + dt) * d.freq + of * pool.1 + df;
                            let v = (src[i] * g + b).max(0.0);
                            if v > best {
                                best = v;
                                best_i = i;
                            }
                        }
                    }
                    let o = ot * out_d.freq + of;
                    out[[ch, o]] = best;
                    arg[ch * out_d.area() + o] = best_i as u32;
                }
            }
        }
        (out, arg)
    }

    pub fn backward(
        &self,
        cache: &ConvBlockCache,
        d_out: Vec<Array2<f64>>,
        grad: &mut ConvBlock,
    ) -> Vec<Array2<f64>> {
        self.backward_inner(cache, d_out, grad, true)
    }

    /// Accumulates parameter gradients only, skipping `dL/dinput`.
    pub fn backward_params(
        &self,
        cache: &ConvBlockCache,
        d_out: Vec<Array2<f64>>,
        grad: &mut ConvBlock,
    ) {
        self.backward_inner(cache, d_out, grad, false);
    }

    fn backward_inner(
        &self,
        cache: &ConvBlockCache,
        d_out: Vec<Array2<f64>>,
        grad: &mut ConvBlock,
        need_dx: bool,
    ) -> Vec<Array2<f64>> {
        let d = cache.in_dims;
        let oa = cache.out_dims.area();
        let c = self.conv.c_out();
        let gamma = &self.bn.gamma;
        let beta = &self.bn.beta;

        // un-pool and pass through ReLU, giving dL/d(bn output) per sample
        let idx: Vec<usize> = (0..d_out.len()).collect();
        let mut dy: Vec<Array2<f64>> = par::map_collect(&idx, |&n| {
            let mut dy = Array2::<f64>::zeros((c, d.area()));
            for ch in 0..c {
                for o in 0..oa {
                    let i = cache.argmax[n][ch * oa + o] as usize;
                    let pre = cache.xhat[n][[ch, i]] * gamma[ch] + beta[ch];
                    if pre > 0.0 {
                        dy[[ch, i]] += d_out[n][[ch, o]];
                    }
                }
            }
            dy
        });
        drop(d_out);

        let mut sum_dy = Array1::<f64>::zeros(c);
        let mut sum_dy_xhat = Array1::<f64>::zeros(c);
        for (dyi, xh) in dy.iter().zip(&cache.xhat) {
            for ch in 0..c {
                let (a, b) = (dyi.row(ch), xh.row(ch));
                sum_dy[ch] += a.sum();
                sum_dy_xhat[ch] += a.dot(&b);
            }
        }
        grad.bn.gamma += &sum_dy_xhat;
        grad.bn.beta += &sum_dy;

        // dy becomes dL/dz in place
        let inv = &cache.inv_std;
        if cache.stats.is_some() {
            let count = (dy.len() * d.area()) as f64;
            par::for_each_mut(&mut dy, |n, dyn_| {
                for (ch, mut row) in dyn_.rows_mut().into_iter().enumerate() {
                    let xh = cache.xhat[n].row(ch);
                    let (g, k) = (gamma[ch], inv[ch] / count);
                    let (sd, sdx) = (sum_dy[ch] * g, sum_dy_xhat[ch] * g);
                    row.zip_mut_with(&xh, |v, &x| *v = (*v * g * count - sd - x * sdx) * k);
                }
            });
        } else {
            par::for_each_mut(&mut dy, |_, dyn_| {
                for (ch, mut row) in dyn_.rows_mut().into_iter().enumerate() {
                    let k = gamma[ch] * inv[ch];
                    row.mapv_inplace(|v| v * k);
                }
            });
        }

        let per_sample: Vec<(Option<Array2<f64>>, Array2<f64>, Array1<f64>)> =
            par::map_collect(&idx, |&n| {
                self.conv.backward_cols(&cache.cols[n], d, &dy[n], need_dx)
            });
        let mut dx = Vec::with_capacity(per_sample.len());
        for (dxi, dw, db) in per_sample {
            grad.conv.weight += &dw;
            grad.conv.bias += &db;
            dx.extend(dxi);
        }
        dx
    }
}

impl Module for ConvBlock {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        let c = join(prefix, "conv");
        out.push(ParamRef {
            name: join(&c, "weight"),
            shape: vec![self.conv.c_out(), self.conv.c_in(), KERNEL, KERNEL],
            data: self.conv.weight.as_slice().expect("standard layout"),
            trainable: true,
        });
        out.push(ParamRef {
            name: join(&c, "bias"),
            shape: vec![self.conv.c_out()],
            data: self.conv.bias.as_slice().expect("standard layout"),
            trainable: true,
        });
        self.bn.visit(&join(prefix, "bn"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let c = join(prefix, "conv");
        let shape = vec![self.conv.c_out(), self.conv.c_in(), KERNEL, KERNEL];
        let c_out = self.conv.c_out();
        out.push(ParamMut {
            name: join(&c, "weight"),
            shape,
            data: self.conv.weight.as_slice_mut().expect("standard layout"),
            trainable: true,
        });
        out.push(ParamMut {
            name: join(&c, "bias"),
            shape: vec![c_out],
            data: self.conv.bias.as_slice_mut().expect("standard layout"),
            trainable: true,
        });
        self.bn.visit_mut(&join(prefix, "bn"), out);
    }
}
