//! Shadow encoder, pointwise U-Net denoiser and their parameters.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::transport::PenumbraImage;

use super::nn::{silu_back, silu_mat, AdamW, Conv, Dense, Layout};

const MAGIC: &[u8; 4] = b"SSDW";
const VERSION: u32 = 1;

/// Architecture sizes. Everything here is stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub image_channels: usize,
    /// Channels of the four stride-2 encoder stages.
    pub encoder_channels: [usize; 4],
    pub latent_dim: usize,
    pub time_dim: usize,
    /// Width of the first denoiser stage; the deeper stages use 2x and 4x.
    pub base_channels: usize,
    /// Number of diffusion steps the model is trained for.
    pub steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_width: 64,
            image_height: 64,
            image_channels: 1,
            encoder_channels: [16, 32, 64, 128],
            latent_dim: 512,
            time_dim: 64,
            base_channels: 32,
            steps: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.image_width,
            self.image_height,
            self.image_channels,
            self.latent_dim,
            self.base_channels,
            self.steps,
        ];
        if sizes.contains(&0) || self.encoder_channels.contains(&0) {
            return Err(Error::InvalidConfig("model sizes must be positive".into()));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "time embedding width must be even and positive".into(),
            ));
        }
        Ok(())
    }

    fn context_dim(&self) -> usize {
        self.latent_dim + self.time_dim
    }
}

/// Layer descriptors laid out over one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Network {
    pub cfg: ModelConfig,
    pub len: usize,
    convs: [Conv; 4],
    head: Dense,
    lift: Dense,
    down: Dense,
    mid: Dense,
    up: Dense,
    top: Dense,
    out: Dense,
}

impl Network {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut l = Layout::default();
        let ch = cfg.encoder_channels;
        let c0 = Conv::new(
            &mut l,
            cfg.image_channels,
            ch[0],
            cfg.image_height,
            cfg.image_width,
        );
        let c1 = Conv::new(&mut l, ch[0], ch[1], c0.h_out(), c0.w_out());
        let c2 = Conv::new(&mut l, ch[1], ch[2], c1.h_out(), c1.w_out());
        let c3 = Conv::new(&mut l, ch[2], ch[3], c2.h_out(), c2.w_out());
        let head = Dense::new(&mut l, ch[3], 0, cfg.latent_dim);
        let (b, ctx) = (cfg.base_channels, cfg.context_dim());
        let lift = Dense::new(&mut l, 3, ctx, b);
        let down = Dense::new(&mut l, b, 0, 2 * b);
        let mid = Dense::new(&mut l, 2 * b, ctx, 4 * b);
        let up = Dense::new(&mut l, 4 * b + 2 * b, 0, 2 * b);
        let top = Dense::new(&mut l, 2 * b + b, 0, b);
        let out = Dense::new(&mut l, b, 0, 3);
        Ok(Network {
            cfg,
            len: l.len,
            convs: [c0, c1, c2, c3],
            head,
            lift,
            down,
            mid,
            up,
            top,
            out,
        })
    }

    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.len];
        let gain = 2f64.sqrt();
        for c in &self.convs {
            c.init(&mut p, gain, &mut rng);
        }
        self.head.init(&mut p, 1.0, &mut rng);
        for d in [&self.lift, &self.down, &self.mid, &self.up, &self.top] {
            d.init(&mut p, gain, &mut rng);
        }
        self.out.init(&mut p, 0.1, &mut rng);
        p
    }

    /// Per-image standardized input as a `channels x pixels` matrix.
    pub fn prepare_image(&self, y: &PenumbraImage) -> Result<DMatrix<f64>> {
        let c = &self.cfg;
        if y.width != c.image_width || y.height != c.image_height || y.channels != c.image_channels
        {
            return Err(Error::dims(
                format!("{}x{}x{}", c.image_width, c.image_height, c.image_channels),
                format!("{}x{}x{}", y.width, y.height, y.channels),
            ));
        }
        if y.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "image contains non-finite values".into(),
            ));
        }
        let n = y.values.len() as f64;
        let mean = y.values.iter().sum::<f64>() / n;
        let var = y
            .values
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        // PenumbraImage stores pixel-major interleaved channels, which is
        // exactly the channels x pixels column-major layout
        Ok(DMatrix::from_iterator(
            c.image_channels,
            c.image_width * c.image_height,
            y.values.iter().map(|v| (v - mean) * scale),
        ))
    }

    pub fn encode(&self, p: &[f64], x: &DMatrix<f64>) -> DVector<f64> {
        self.encode_cached(p, x).latent
    }

    fn encode_cached(&self, p: &[f64], x: &DMatrix<f64>) -> EncoderCache {
        let mut cols = Vec::with_capacity(4);
        let mut pres = Vec::with_capacity(4);
        let mut h = x.clone();
        for conv in &self.convs {
            let (c, pre) = conv.forward(p, &h);
            h = silu_mat(&pre);
            cols.push(c);
            pres.push(pre);
        }
        let pooled = DMatrix::from_column_slice(h.nrows(), 1, h.column_mean().as_slice());
        let latent = self.head.forward(p, &pooled, None).column(0).into_owned();
        EncoderCache {
            cols,
            pres,
            pooled,
            positions: h.ncols(),
            latent,
        }
    }

    fn encode_backward(
        &self,
        p: &[f64],
        cache: &EncoderCache,
        dlatent: &DVector<f64>,
        g: &mut [f64],
    ) {
        let dl = DMatrix::from_column_slice(dlatent.len(), 1, dlatent.as_slice());
        let (dpool, _) = self.head.backward(p, &cache.pooled, None, &dl, g, true);
        let dpool = dpool.expect("requested") / cache.positions as f64;
        let mut dh = DMatrix::from_fn(dpool.nrows(), cache.positions, |i, _| dpool[(i, 0)]);
        for k in (0..4).rev() {
            let dpre = silu_back(&cache.pres[k], &dh);
            match self.convs[k].backward(p, &cache.cols[k], &dpre, g, k > 0) {
                Some(d) => dh = d,
                None => break,
            }
        }
    }

    /// `[latent; sinusoidal(t)]`
    pub fn context(&self, latent: &DVector<f64>, t: usize) -> DVector<f64> {
        let half = self.cfg.time_dim / 2;
        let mut ctx = DVector::zeros(self.cfg.context_dim());
        ctx.rows_mut(0, latent.len()).copy_from(latent);
        let base = latent.len();
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let a = t as f64 * freq;
            ctx[base + i] = a.sin();
            ctx[base + half + i] = a.cos();
        }
        ctx
    }

    /// Predicted noise for a `3 x n` batch of points under context `ctx`.
    pub fn denoise(&self, p: &[f64], u: &DMatrix<f64>, ctx: &DVector<f64>) -> DMatrix<f64> {
        self.denoise_cached(p, u, ctx).out
    }

    fn denoise_cached(&self, p: &[f64], u: &DMatrix<f64>, ctx: &DVector<f64>) -> DenoiserCache {
        let pre0 = self.lift.forward(p, u, Some(ctx));
        let h0 = silu_mat(&pre0);
        let pre1 = self.down.forward(p, &h0, None);
        let h1 = silu_mat(&pre1);
        let pre2 = self.mid.forward(p, &h1, Some(ctx));
        let h2 = silu_mat(&pre2);
        let s3 = stack(&h2, &h1);
        let pre3 = self.up.forward(p, &s3, None);
        let h3 = silu_mat(&pre3);
        let s4 = stack(&h3, &h0);
        let pre4 = self.top.forward(p, &s4, None);
        let h4 = silu_mat(&pre4);
        let out = self.out.forward(p, &h4, None);
        DenoiserCache {
            pre0,
            h0,
            pre1,
            h1,
            pre2,
            s3,
            pre3,
            s4,
            pre4,
            h4,
            out,
        }
    }

    /// Accumulates parameter gradients and returns `dL/dctx`.
    fn denoise_backward(
        &self,
        p: &[f64],
        u: &DMatrix<f64>,
        ctx: &DVector<f64>,
        c: &DenoiserCache,
        dout: &DMatrix<f64>,
        g: &mut [f64],
    ) -> DVector<f64> {
        let b = self.cfg.base_channels;
        let (dh4, _) = self.out.backward(p, &c.h4, None, dout, g, true);
        let dpre4 = silu_back(&c.pre4, &dh4.expect("requested"));
        let (ds4, _) = self.top.backward(p, &c.s4, None, &dpre4, g, true);
        let ds4 = ds4.expect("requested");
        let dh3 = ds4.rows(0, 2 * b).into_owned();
        let mut dh0 = ds4.rows(2 * b, b).into_owned();
        let dpre3 = silu_back(&c.pre3, &dh3);
        let (ds3, _) = self.up.backward(p, &c.s3, None, &dpre3, g, true);
        let ds3 = ds3.expect("requested");
        let dh2 = ds3.rows(0, 4 * b).into_owned();
        let mut dh1 = ds3.rows(4 * b, 2 * b).into_owned();
        let dpre2 = silu_back(&c.pre2, &dh2);
        let (dx, dctx_mid) = self.mid.backward(p, &c.h1, Some(ctx), &dpre2, g, true);
        dh1 += dx.expect("requested");
        let dpre1 = silu_back(&c.pre1, &dh1);
        let (dx, _) = self.down.backward(p, &c.h0, None, &dpre1, g, true);
        dh0 += dx.expect("requested");
        let dpre0 = silu_back(&c.pre0, &dh0);
        let (_, dctx_lift) = self.lift.backward(p, u, Some(ctx), &dpre0, g, false);
        dctx_mid.expect("context given") + dctx_lift.expect("context given")
    }

    /// Loss `sum |eps - pred|^2` over the given terms that share one image,
    /// with parameter gradients accumulated into `g` (scaled by `scale`).
    pub fn example_loss_grad(
        &self,
        p: &[f64],
        image: &DMatrix<f64>,
        terms: &[(usize, DMatrix<f64>, DMatrix<f64>)],
        scale: f64,
        g: &mut [f64],
    ) -> f64 {
        let enc = self.encode_cached(p, image);
        let mut dlatent = DVector::zeros(self.cfg.latent_dim);
        let mut loss = 0.0;
        for (t, u_t, eps) in terms {
            let ctx = self.context(&enc.latent, *t);
            let cache = self.denoise_cached(p, u_t, &ctx);
            let diff = &cache.out - eps;
            loss += diff.norm_squared();
            let dout = diff * (2.0 * scale);
            let dctx = self.denoise_backward(p, u_t, &ctx, &cache, &dout, g);
            dlatent += dctx.rows(0, self.cfg.latent_dim);
        }
        self.encode_backward(p, &enc, &dlatent, g);
        loss
    }
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    s.rows_mut(0, a.nrows()).copy_from(a);
    s.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    s
}

struct EncoderCache {
    cols: Vec<DMatrix<f64>>,
    pres: Vec<DMatrix<f64>>,
    pooled: DMatrix<f64>,
    positions: usize,
    latent: DVector<f64>,
}

struct DenoiserCache {
    pre0: DMatrix<f64>,
    h0: DMatrix<f64>,
    pre1: DMatrix<f64>,
    h1: DMatrix<f64>,
    pre2: DMatrix<f64>,
    s3: DMatrix<f64>,
    pre3: DMatrix<f64>,
    s4: DMatrix<f64>,
    pre4: DMatrix<f64>,
    h4: DMatrix<f64>,
    out: DMatrix<f64>,
}

/// Trainable weights, their moving average and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub(crate) net: Network,
    pub weights: Vec<f64>,
    pub ema: Vec<f64>,
    pub step: u64,
    pub optimizer: AdamW,
}

impl DenoiserParams {
    pub fn new(cfg: ModelConfig, seed: u64, lr: f64, weight_decay: f64) -> Result<Self> {
        let net = Network::new(cfg)?;
        let weights = net.init(seed);
        Ok(DenoiserParams {
            ema: weights.clone(),
            optimizer: AdamW::new(net.len, lr, weight_decay),
            net,
            weights,
            step: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    pub fn len(&self) -> usize {
        self.net.len
    }

    pub fn is_empty(&self) -> bool {
        self.net.len == 0
    }

    /// Latent of `y` under the given weight vector.
    pub fn encode_with(&self, weights: &[f64], y: &PenumbraImage) -> Result<DVector<f64>> {
        let x = self.net.prepare_image(y)?;
        Ok(self.net.encode(weights, &x))
    }

    /// Latent under the averaged weights.
    pub fn encode(&self, y: &PenumbraImage) -> Result<DVector<f64>> {
        self.encode_with(&self.ema, y)
    }

    /// Noise prediction for `3 x n` points at step `t`.
    pub fn predict_with(
        &self,
        weights: &[f64],
        u: &DMatrix<f64>,
        t: usize,
        latent: &DVector<f64>,
    ) -> DMatrix<f64> {
        self.net.denoise(weights, u, &self.net.context(latent, t))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Little-endian binary: magic, version, config, step, optimizer
    /// hyperparameters, then weights, EMA and both moment vectors.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.net.cfg;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let dims = [
            c.image_width,
            c.image_height,
            c.image_channels,
            c.encoder_channels[0],
            c.encoder_channels[1],
            c.encoder_channels[2],
            c.encoder_channels[3],
            c.latent_dim,
            c.time_dim,
            c.base_channels,
            c.steps,
        ];
        for d in dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        // 1 = per-image mean/variance input normalization
        w.write_all(&[1u8])?;
        w.write_all(&self.step.to_le_bytes())?;
        let o = &self.optimizer;
        for v in [o.lr, o.beta1, o.beta2, o.eps, o.weight_decay] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.net.len as u64).to_le_bytes())?;
        for block in [&self.weights, &self.ema, &o.m, &o.v] {
            for v in block.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(
                "not a denoiser checkpoint (bad magic)".into(),
            ));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, expected {VERSION}"
            )));
        }
        let mut d = [0usize; 11];
        for v in &mut d {
            *v = usize::try_from(read_u64(&mut r)?)
                .map_err(|_| Error::Format("size overflow".into()))?;
        }
        let cfg = ModelConfig {
            image_width: d[0],
            image_height: d[1],
            image_channels: d[2],
            encoder_channels: [d[3], d[4], d[5], d[6]],
            latent_dim: d[7],
            time_dim: d[8],
            base_channels: d[9],
            steps: d[10],
        };
        let mut norm = [0u8; 1];
        r.read_exact(&mut norm)?;
        if norm[0] != 1 {
            return Err(Error::Format(format!(
                "unknown input normalization {}",
                norm[0]
            )));
        }
        let step = read_u64(&mut r)?;
        let mut hyper = [0.0; 5];
        for v in &mut hyper {
            *v = read_f64(&mut r)?;
        }
        let net = Network::new(cfg).map_err(|e| Error::Format(e.to_string()))?;
        let n = read_u64(&mut r)? as usize;
        if n != net.len {
            return Err(Error::Format(format!(
                "checkpoint holds {n} weights, architecture needs {}",
                net.len
            )));
        }
        let mut read_block = || -> Result<Vec<f64>> { (0..n).map(|_| read_f64(&mut r)).collect() };
        let weights = read_block()?;
        let ema = read_block()?;
        let m = read_block()?;
        let v = read_block()?;
        Ok(DenoiserParams {
            net,
            weights,
            ema,
            step,
            optimizer: AdamW {
                lr: hyper[0],
                beta1: hyper[1],
                beta2: hyper[2],
                eps: hyper[3],
                weight_decay: hyper[4],
                m,
                v,
            },
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
