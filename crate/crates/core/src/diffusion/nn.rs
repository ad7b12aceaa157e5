//! Dense and strided-convolution layers over a flat parameter vector, with
//! hand-written backward passes.
//!
//! Activations are column-major `channels x positions` matrices, so a
//! feature map is stored position by position (`HWC`).

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Hands out contiguous parameter ranges.
#[derive(Debug, Default)]
pub(crate) struct Layout {
    pub len: usize,
}

impl Layout {
    fn alloc(&mut self, n: usize) -> usize {
        let at = self.len;
        self.len += n;
        at
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub(crate) fn silu_mat(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(silu)
}

/// `dy * silu'(pre)`
pub(crate) fn silu_back(pre: &DMatrix<f64>, dy: &DMatrix<f64>) -> DMatrix<f64> {
    pre.zip_map(dy, |x, d| d * silu_grad(x))
}

fn fill_normal(p: &mut [f64], std: f64, rng: &mut ChaCha8Rng) {
    for v in p {
        *v = std * rng.sample::<f64, _>(StandardNormal);
    }
}

/// Fully connected layer `y = W [x; c] + b` where the optional context
/// block `c` is shared by every column of `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dense {
    w: usize,
    b: usize,
    pub x_in: usize,
    pub c_in: usize,
    pub out: usize,
}

impl Dense {
    pub fn new(layout: &mut Layout, x_in: usize, c_in: usize, out: usize) -> Self {
        let w = layout.alloc(out * (x_in + c_in));
        let b = layout.alloc(out);
        Dense {
            w,
            b,
            x_in,
            c_in,
            out,
        }
    }

    fn wx<'a>(&self, p: &'a [f64]) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(
            &p[self.w..self.w + self.out * self.x_in],
            self.out,
            self.x_in,
        )
    }

    fn wc<'a>(&self, p: &'a [f64]) -> DMatrixView<'a, f64> {
        let s = self.w + self.out * self.x_in;
        DMatrixView::from_slice(&p[s..s + self.out * self.c_in], self.out, self.c_in)
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.b..self.b + self.out]
    }

    /// Normal init with separate fan-in scaling for the two input blocks.
    pub fn init(&self, p: &mut [f64], gain: f64, rng: &mut ChaCha8Rng) {
        let blocks = if self.c_in > 0 { 2.0 } else { 1.0 };
        let nx = self.out * self.x_in;
        fill_normal(
            &mut p[self.w..self.w + nx],
            gain / (self.x_in as f64 * blocks).sqrt(),
            rng,
        );
        if self.c_in > 0 {
            let s = self.w + nx;
            fill_normal(
                &mut p[s..s + self.out * self.c_in],
                gain / (self.c_in as f64 * blocks).sqrt(),
                rng,
            );
        }
        p[self.b..self.b + self.out].fill(0.0);
    }

    /// Per-column offset `W_c c + b`.
    pub fn offset(&self, p: &[f64], c: Option<&DVector<f64>>) -> DVector<f64> {
        let mut o = DVector::from_column_slice(self.bias(p));
        if let Some(c) = c {
            o += self.wc(p) * c;
        }
        o
    }

    pub fn forward(&self, p: &[f64], x: &DMatrix<f64>, c: Option<&DVector<f64>>) -> DMatrix<f64> {
        let mut y = self.wx(p) * x;
        let o = self.offset(p, c);
        for mut col in y.column_iter_mut() {
            col += &o;
        }
        y
    }

    /// Accumulates parameter gradients into `g` and returns `(dx, dc)`.
    /// `dx` is skipped when `need_dx` is false.
    pub fn backward(
        &self,
        p: &[f64],
        x: &DMatrix<f64>,
        c: Option<&DVector<f64>>,
        dy: &DMatrix<f64>,
        g: &mut [f64],
        need_dx: bool,
    ) -> (Option<DMatrix<f64>>, Option<DVector<f64>>) {
        let s: DVector<f64> = dy.column_sum();
        {
            let nx = self.out * self.x_in;
            let mut gwx =
                DMatrixViewMut::from_slice(&mut g[self.w..self.w + nx], self.out, self.x_in);
            gwx.gemm(1.0, dy, &x.transpose(), 1.0);
        }
        let dc = c.map(|c| {
            let st = self.w + self.out * self.x_in;
            let mut gwc = DMatrixViewMut::from_slice(
                &mut g[st..st + self.out * self.c_in],
                self.out,
                self.c_in,
            );
            gwc.ger(1.0, &s, c, 1.0);
            self.wc(p).tr_mul(&s)
        });
        for (gb, v) in g[self.b..self.b + self.out].iter_mut().zip(s.iter()) {
            *gb += v;
        }
        let dx = need_dx.then(|| self.wx(p).tr_mul(dy));
        (dx, dc)
    }
}

/// 3x3 convolution, stride 2, zero padding 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Conv {
    w: usize,
    b: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h_in: usize,
    pub w_in: usize,
}

impl Conv {
    pub fn new(layout: &mut Layout, c_in: usize, c_out: usize, h_in: usize, w_in: usize) -> Self {
        let w = layout.alloc(c_out * 9 * c_in);
        let b = layout.alloc(c_out);
        Conv {
            w,
            b,
            c_in,
            c_out,
            h_in,
            w_in,
        }
    }

    pub fn h_out(&self) -> usize {
        self.h_in.div_ceil(2)
    }

    pub fn w_out(&self) -> usize {
        self.w_in.div_ceil(2)
    }

    fn weights<'a>(&self, p: &'a [f64]) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(
            &p[self.w..self.w + self.c_out * 9 * self.c_in],
            self.c_out,
            9 * self.c_in,
        )
    }

    pub fn init(&self, p: &mut [f64], gain: f64, rng: &mut ChaCha8Rng) {
        let n = self.c_out * 9 * self.c_in;
        fill_normal(
            &mut p[self.w..self.w + n],
            gain / ((9 * self.c_in) as f64).sqrt(),
            rng,
        );
        p[self.b..self.b + self.c_out].fill(0.0);
    }

    /// For every output position and tap, the input position it reads.
    fn taps(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (ho, wo) = (self.h_out(), self.w_out());
        (0..ho * wo).flat_map(move |po| {
            let (oi, oj) = (po / wo, po % wo);
            (0..9).filter_map(move |tap| {
                let ii = (2 * oi + tap / 3) as isize - 1;
                let jj = (2 * oj + tap % 3) as isize - 1;
                if ii < 0 || jj < 0 || ii >= self.h_in as isize || jj >= self.w_in as isize {
                    None
                } else {
                    Some((po, tap, ii as usize * self.w_in + jj as usize))
                }
            })
        })
    }

    pub fn im2col(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut cols = DMatrix::zeros(9 * self.c_in, self.h_out() * self.w_out());
        for (po, tap, pi) in self.taps() {
            cols.view_mut((tap * self.c_in, po), (self.c_in, 1))
                .copy_from(&x.column(pi));
        }
        cols
    }

    fn col2im(&self, dcols: &DMatrix<f64>) -> DMatrix<f64> {
        let mut dx = DMatrix::zeros(self.c_in, self.h_in * self.w_in);
        for (po, tap, pi) in self.taps() {
            let mut col = dx.column_mut(pi);
            col += dcols.view((tap * self.c_in, po), (self.c_in, 1));
        }
        dx
    }

    /// Returns `(im2col(x), W cols + b)`.
    pub fn forward(&self, p: &[f64], x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let cols = self.im2col(x);
        let mut y = self.weights(p) * &cols;
        let b = DVector::from_column_slice(&p[self.b..self.b + self.c_out]);
        for mut col in y.column_iter_mut() {
            col += &b;
        }
        (cols, y)
    }

    pub fn backward(
        &self,
        p: &[f64],
        cols: &DMatrix<f64>,
        dy: &DMatrix<f64>,
        g: &mut [f64],
        need_dx: bool,
    ) -> Option<DMatrix<f64>> {
        {
            let n = self.c_out * 9 * self.c_in;
            let mut gw =
                DMatrixViewMut::from_slice(&mut g[self.w..self.w + n], self.c_out, 9 * self.c_in);
            gw.gemm(1.0, dy, &cols.transpose(), 1.0);
        }
        for (gb, v) in g[self.b..self.b + self.c_out]
            .iter_mut()
            .zip(dy.column_sum().iter())
        {
            *gb += v;
        }
        need_dx.then(|| self.col2im(&self.weights(p).tr_mul(dy)))
    }
}

/// AdamW moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One update at 1-based step `t`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], t: u64) {
        let c1 = 1.0 - self.beta1.powf(t as f64);
        let c2 = 1.0 - self.beta2.powf(t as f64);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p -= self.lr * (update + self.weight_decay * *p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_params(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut layout = Layout::default();
        let d = Dense::new(&mut layout, 3, 2, 4);
        let p = random_params(layout.len, 1);
        let x = DMatrix::from_fn(3, 5, |i, j| (i as f64 - j as f64) * 0.3);
        let c = DVector::from_vec(vec![0.7, -0.2]);
        let r = DMatrix::from_fn(4, 5, |i, j| ((i * 5 + j) as f64).sin());
        // L = sum(r . silu(y))
        let loss = |p: &[f64], x: &DMatrix<f64>, c: &DVector<f64>| {
            silu_mat(&d.forward(p, x, Some(c))).component_mul(&r).sum()
        };
        let pre = d.forward(&p, &x, Some(&c));
        let dy = silu_back(&pre, &r);
        let mut g = vec![0.0; layout.len];
        let (dx, dc) = d.backward(&p, &x, Some(&c), &dy, &mut g, true);
        let h = 1e-6;
        for i in 0..layout.len {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp[i] += h;
            pm[i] -= h;
            let fd = (loss(&pp, &x, &c) - loss(&pm, &x, &c)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3), "param {i}");
        }
        let dx = dx.unwrap();
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[(1, 2)] += h;
        xm[(1, 2)] -= h;
        let fd = (loss(&p, &xp, &c) - loss(&p, &xm, &c)) / (2.0 * h);
        assert!((fd - dx[(1, 2)]).abs() <= 1e-6);
        let dc = dc.unwrap();
        let (mut cp, mut cm) = (c.clone(), c.clone());
        cp[1] += h;
        cm[1] -= h;
        let fd = (loss(&p, &x, &cp) - loss(&p, &x, &cm)) / (2.0 * h);
        assert!((fd - dc[1]).abs() <= 1e-6);
    }

    #[test]
    fn conv_matches_direct_sum_and_its_gradient() {
        let mut layout = Layout::default();
        let conv = Conv::new(&mut layout, 2, 3, 5, 4);
        let p = random_params(layout.len, 2);
        let x = DMatrix::from_fn(2, 20, |c, q| ((c * 20 + q) as f64 * 0.37).cos());
        let (cols, y) = conv.forward(&p, &x);
        assert_eq!(y.shape(), (3, 3 * 2));
        // direct evaluation of one output
        let (co, oi, oj) = (1, 1, 1);
        let mut direct = p[conv.b + co];
        for ki in 0..3 {
            for kj in 0..3 {
                let (ii, jj) = (2 * oi + ki - 1, 2 * oj + kj - 1);
                if ii < 5 && jj < 4 {
                    for ci in 0..2 {
                        let w = p[conv.w + (((ki * 3 + kj) * 2 + ci) * 3) + co];
                        direct += w * x[(ci, ii * 4 + jj)];
                    }
                }
            }
        }
        assert!((direct - y[(co, oi * 2 + oj)]).abs() < 1e-12);

        let r = DMatrix::from_fn(3, 6, |i, j| ((i + 2 * j) as f64).sin());
        let mut g = vec![0.0; layout.len];
        let dx = conv.backward(&p, &cols, &r, &mut g, true).unwrap();
        let loss = |p: &[f64], x: &DMatrix<f64>| conv.forward(p, x).1.component_mul(&r).sum();
        let h = 1e-6;
        for i in [0, 7, 20, layout.len - 1] {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp[i] += h;
            pm[i] -= h;
            assert!(((loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h) - g[i]).abs() < 1e-7);
        }
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[(1, 9)] += h;
        xm[(1, 9)] -= h;
        assert!(((loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h) - dx[(1, 9)]).abs() < 1e-7);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut opt = AdamW::new(2, 0.1, 0.0);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5], 1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }
}
