//! Gradient-based alternating minimization over emitter, occupancy,
//! background and regularization weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::transport::{TransportMatrix, VisibilitySet};

use super::localize::PROJECTOR_RIDGE;
use super::tikhonov::{transport_gram, RidgeSystem};

/// Lower bound kept on the regularization weight.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// Logit standing in for a hard 0/1 occupancy; large enough that the mask
/// leaks ~1e-13, small enough that log(1 - sigmoid) stays finite.
const HARD_LOGIT: f64 = 30.0;

/// Whether the solver carries a background estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundMode {
    Estimate,
    Neglect,
}

/// Parameterization of the background estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundShape {
    /// One free value per wall pixel.
    Field,
    /// A single level shared by all wall pixels.
    Uniform,
}

/// How relaxed occupancies combine into the effective transport mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relaxation {
    /// `1 - (1/K) sum_k sigma_k V_k`
    MeanSum,
    /// `1 - sum_k sigma_k V_k`
    Sum,
    /// `prod_k (1 - sigma_k V_k)`, which equals union occlusion at binary
    /// occupancies.
    Product,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub num_iter: usize,
    pub eta_z: f64,
    pub eta_b: f64,
    pub eta_lambda: f64,
    pub threshold: f64,
    pub background: BackgroundMode,
    pub background_shape: BackgroundShape,
    pub relaxation: Relaxation,
    /// Initial regularization weight, relative to the mean diagonal of `A^T A`.
    pub lambda0: f64,
    /// Range of the uniform initial draw of `z`.
    pub z_init: (f64, f64),
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            num_iter: 2000,
            eta_z: 1e-1,
            eta_b: 1e-2,
            eta_lambda: 1e-3,
            threshold: 0.5,
            background: BackgroundMode::Estimate,
            background_shape: BackgroundShape::Uniform,
            relaxation: Relaxation::Product,
            lambda0: 1e-3,
            z_init: (-3.0, -1.0),
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.num_iter == 0 {
            return Err(Error::InvalidConfig("num_iter must be >= 1".into()));
        }
        for (name, v) in [
            ("eta_z", self.eta_z),
            ("eta_b", self.eta_b),
            ("eta_lambda", self.eta_lambda),
            ("lambda0", self.lambda0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.z_init.0 < self.z_init.1
            && self.z_init.0.is_finite()
            && self.z_init.1.is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "empty z_init range {:?}",
                self.z_init
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Optimizer variables. `f` is the emitter estimate from the latest solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionState {
    pub z: Vec<f64>,
    pub b: Vec<f64>,
    pub lambda: f64,
    pub f: Vec<f64>,
    pub iteration: usize,
}

impl InversionState {
    /// Uniform random `z` on `range`, zero background.
    pub fn initial(
        voxels: usize,
        rows: usize,
        cols: usize,
        lambda: f64,
        range: (f64, f64),
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        InversionState {
            z: (0..voxels)
                .map(|_| rng.random_range(range.0..range.1))
                .collect(),
            b: vec![0.0; rows],
            lambda,
            f: vec![0.0; cols],
            iteration: 0,
        }
    }

    pub fn occupancy(&self) -> Vec<f64> {
        self.z.iter().map(|&z| sigmoid(z)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub lambda: f64,
    pub b_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub f: Vec<f64>,
    pub alpha: Vec<bool>,
    pub b: Vec<f64>,
    pub lambda: f64,
    pub trace: Vec<TraceRow>,
    pub state: InversionState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub z: Vec<f64>,
    pub b: Vec<f64>,
    pub lambda: f64,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 - sigmoid(z))`, computed without cancellation.
#[inline]
fn log_one_minus_sigmoid(z: f64) -> f64 {
    // -softplus(z)
    -(z.max(0.0) + (-z.abs()).exp().ln_1p())
}

fn check_shapes(a: &TransportMatrix, vis: &VisibilitySet, y: &[f64]) -> Result<()> {
    if y.len() != a.rows {
        return Err(Error::dims(format!("{} measurements", a.rows), y.len()));
    }
    if vis.rows != a.rows || vis.cols != a.cols {
        return Err(Error::dims(
            format!("visibility {}x{}", a.rows, a.cols),
            format!("{}x{}", vis.rows, vis.cols),
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "measurement contains non-finite values".into(),
        ));
    }
    Ok(())
}

/// Effective transport `A . W(z)` for the chosen relaxation.
pub fn effective_transport(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    z: &[f64],
    relax: Relaxation,
) -> TransportMatrix {
    let k = vis.len().max(1) as f64;
    let weights: Vec<f64> = match relax {
        Relaxation::MeanSum => z.iter().map(|&v| sigmoid(v) / k).collect(),
        Relaxation::Sum => z.iter().map(|&v| sigmoid(v)).collect(),
        Relaxation::Product => z.iter().map(|&v| log_one_minus_sigmoid(v)).collect(),
    };
    let cols = a.cols;
    let mut data = a.data.clone();
    par::for_each_row_mut(&mut data, cols, |m, row| {
        let entries = vis.row(m);
        if entries.is_empty() {
            return;
        }
        // difference array over emitter pixels
        let mut diff = vec![0.0; cols + 1];
        for e in entries {
            let w = weights[e.slot as usize];
            diff[e.emitter_start as usize] += w;
            diff[(e.emitter_start + e.len) as usize] -= w;
        }
        let mut acc = 0.0;
        for (n, v) in row.iter_mut().enumerate() {
            acc += diff[n];
            let mask = match relax {
                Relaxation::Product => acc.exp(),
                _ => 1.0 - acc,
            };
            *v *= mask;
        }
    });
    TransportMatrix {
        rows: a.rows,
        cols: a.cols,
        data,
        scene_hash: a.scene_hash,
    }
}

/// Residual target for the emitter solve.
fn target(y: &[f64], b: &[f64], mode: BackgroundMode) -> Vec<f64> {
    match mode {
        BackgroundMode::Estimate => y.iter().zip(b).map(|(y, b)| y - b).collect(),
        BackgroundMode::Neglect => y.to_vec(),
    }
}

/// `L = (1/M) |y - b - A_v f|^2` at a fixed emitter `f`.
pub fn loss_at(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    y: &[f64],
    z: &[f64],
    b: &[f64],
    f: &[f64],
    relax: Relaxation,
) -> f64 {
    let av = effective_transport(a, vis, z, relax);
    let fit = av.apply(f);
    y.iter()
        .zip(b)
        .zip(&fit)
        .map(|((y, b), p)| (y - b - p).powi(2))
        .sum::<f64>()
        / a.rows as f64
}

/// Everything computed from one emitter solve.
struct Evaluation {
    av: TransportMatrix,
    sys: RidgeSystem,
    f_star: Vec<f64>,
    f: Vec<f64>,
    r: Vec<f64>,
    loss: f64,
}

fn evaluate(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    y: &[f64],
    z: &[f64],
    b: &[f64],
    lambda: f64,
    relax: Relaxation,
    mode: BackgroundMode,
) -> Result<Evaluation> {
    let av = effective_transport(a, vis, z, relax);
    let sys = RidgeSystem::from_transport(&av, lambda)?;
    let t = target(y, b, mode);
    let f_star = sys.solve(&t);
    let f: Vec<f64> = f_star.iter().map(|v| v.max(0.0)).collect();
    let fit = av.apply(&f);
    let r: Vec<f64> = t.iter().zip(&fit).map(|(t, p)| t - p).collect();
    let loss = r.iter().map(|v| v * v).sum::<f64>() / a.rows as f64;
    Ok(Evaluation {
        av,
        sys,
        f_star,
        f,
        r,
        loss,
    })
}

/// Emitter step: `max((A_v^T A_v + lambda I)^{-1} A_v^T (y - b), 0)`.
pub fn emitter_step(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    y: &[f64],
    z: &[f64],
    b: &[f64],
    lambda: f64,
    relax: Relaxation,
) -> Result<Vec<f64>> {
    check_shapes(a, vis, y)?;
    Ok(evaluate(a, vis, y, z, b, lambda, relax, BackgroundMode::Estimate)?.f)
}

fn occupancy_gradient(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    ev: &Evaluation,
    z: &[f64],
    relax: Relaxation,
) -> Vec<f64> {
    let rows = a.rows;
    let cols = a.cols;
    let kk = vis.len();
    // Product: d/dz of prod_j (1 - s_j) over a blocked pair is -s_k * W, so the
    // masked transport carries the weight directly.
    let source = match relax {
        Relaxation::Product => &ev.av,
        _ => a,
    };
    let raw = par::chunked_sum(rows, kk, |range, acc| {
        let mut prefix = vec![0.0; cols + 1];
        for m in range {
            let entries = vis.row(m);
            let rm = ev.r[m];
            if entries.is_empty() || rm == 0.0 {
                continue;
            }
            let row = source.row(m);
            for n in 0..cols {
                prefix[n + 1] = prefix[n] + row[n] * ev.f[n];
            }
            for e in entries {
                let s = e.emitter_start as usize;
                acc[e.slot as usize] += rm * (prefix[s + e.len as usize] - prefix[s]);
            }
        }
    });
    let scale = 2.0 / rows as f64;
    let k = kk.max(1) as f64;
    raw.iter()
        .zip(z)
        .map(|(g, &zk)| {
            let s = sigmoid(zk);
            let chain = match relax {
                Relaxation::MeanSum => s * (1.0 - s) / k,
                Relaxation::Sum => s * (1.0 - s),
                Relaxation::Product => s,
            };
            scale * chain * g
        })
        .collect()
}

fn lambda_gradient(ev: &Evaluation, rows: usize) -> f64 {
    let dfdl_raw = ev.sys.solve_normal(&ev.f_star);
    let dfdl: Vec<f64> = dfdl_raw
        .iter()
        .zip(&ev.f_star)
        .map(|(d, fs)| if *fs > 0.0 { -d } else { 0.0 })
        .collect();
    let atr = ev.sys.at_mul(&ev.r);
    -2.0 / rows as f64 * atr.iter().zip(&dfdl).map(|(p, q)| p * q).sum::<f64>()
}

fn all_gradients(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    ev: &Evaluation,
    z: &[f64],
    relax: Relaxation,
) -> Gradients {
    let rows = a.rows;
    Gradients {
        z: occupancy_gradient(a, vis, ev, z, relax),
        b: ev.r.iter().map(|r| -2.0 / rows as f64 * r).collect(),
        lambda: lambda_gradient(ev, rows),
    }
}

/// Analytic gradients of `L = (1/M) |y - b - A_v f|^2` at `state`.
///
/// `f` is first re-solved from `(z, b, lambda)`. The `z` and `b` gradients hold
/// that `f` fixed; the `lambda` gradient differentiates through the ridge
/// solution.
pub fn gradients(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    y: &[f64],
    state: &InversionState,
    relax: Relaxation,
) -> Result<Gradients> {
    check_shapes(a, vis, y)?;
    if state.z.len() != vis.len() || state.b.len() != a.rows {
        return Err(Error::dims(
            format!("{} voxels and {} background values", vis.len(), a.rows),
            format!("{} and {}", state.z.len(), state.b.len()),
        ));
    }
    let ev = evaluate(
        a,
        vis,
        y,
        &state.z,
        &state.b,
        state.lambda,
        relax,
        BackgroundMode::Estimate,
    )?;
    Ok(all_gradients(a, vis, &ev, &state.z, relax))
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Runs the alternating minimization and returns the binarized occupancy.
pub fn alternating_minimize(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    y: &[f64],
    opts: &SolverOptions,
) -> Result<Inversion> {
    alternating_minimize_with(a, vis, y, opts, &mut |_, _| {})
}

/// As [`alternating_minimize`], reporting each trace row as it is produced.
///
/// The optimizer works on `A` scaled to unit RMS column norm and `y` scaled
/// to unit RMS, so step sizes are independent of scene units. The `z` step is
/// normalized by the largest gradient entry, `lambda` takes multiplicative
/// sign steps, and a uniform background step is preconditioned by the
/// curvature of the reduced objective along the constant image.
pub fn alternating_minimize_with(
    a: &TransportMatrix,
    vis: &VisibilitySet,
    y: &[f64],
    opts: &SolverOptions,
    observer: &mut dyn FnMut(&TraceRow, &InversionState),
) -> Result<Inversion> {
    opts.validate()?;
    check_shapes(a, vis, y)?;
    let rows = a.rows;
    let cols = a.cols;

    let s_a = (a.data.iter().map(|v| v * v).sum::<f64>() / cols as f64).sqrt();
    let s_y = rms(y);
    if s_a == 0.0 {
        return Err(Error::InvalidInput(
            "transport matrix is identically zero".into(),
        ));
    }
    let s_y = if s_y > 0.0 { s_y } else { 1.0 };
    let a_n = TransportMatrix {
        rows,
        cols,
        data: a.data.iter().map(|v| v / s_a).collect(),
        scene_hash: a.scene_hash,
    };
    let y_n: Vec<f64> = y.iter().map(|v| v / s_y).collect();

    let mut state =
        InversionState::initial(vis.len(), rows, cols, opts.lambda0, opts.z_init, opts.seed);
    let estimate = opts.background == BackgroundMode::Estimate;
    let mut trace = Vec::with_capacity(opts.num_iter);

    for iter in 1..=opts.num_iter {
        let ev = evaluate(
            &a_n,
            vis,
            &y_n,
            &state.z,
            &state.b,
            state.lambda,
            opts.relaxation,
            opts.background,
        )?;
        let row = TraceRow {
            iter,
            loss: ev.loss * s_y * s_y,
            lambda: state.lambda * s_a * s_a,
            b_norm: state.b.iter().map(|v| v * v).sum::<f64>().sqrt() * s_y,
        };
        observer(&row, &state);
        trace.push(row);
        if !ev.loss.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                reason: "loss is not finite".into(),
            });
        }
        let g = all_gradients(&a_n, vis, &ev, &state.z, opts.relaxation);

        if estimate {
            match opts.background_shape {
                BackgroundShape::Field => {
                    for (b, r) in state.b.iter_mut().zip(&ev.r) {
                        *b = (*b + opts.eta_b * r).max(0.0);
                    }
                }
                BackgroundShape::Uniform => {
                    // curvature of the reduced objective along the constant
                    // direction: |(I - H) 1|^2
                    let ones = vec![1.0; rows];
                    let fit = ev.sys.a_mul(&ev.sys.solve(&ones));
                    let curv: f64 = fit.iter().map(|h| (1.0 - h).powi(2)).sum();
                    let slope: f64 = ev.r.iter().sum();
                    if curv > 0.0 {
                        let level = (state.b[0] + opts.eta_b * slope / curv).max(0.0);
                        state.b.fill(level);
                    }
                }
            }
        }

        let gmax = max_abs(&g.z);
        if gmax > 0.0 {
            for (z, gz) in state.z.iter_mut().zip(&g.z) {
                *z -= opts.eta_z * gz / gmax;
            }
        }
        if g.lambda != 0.0 {
            state.lambda =
                (state.lambda * (1.0 - opts.eta_lambda * g.lambda.signum())).max(LAMBDA_FLOOR);
        }
        state.f = ev.f;
        state.iteration = iter;
    }

    let alpha: Vec<bool> = state
        .z
        .iter()
        .map(|&z| sigmoid(z) > opts.threshold)
        .collect();
    // Final refit against the binarized occupancy so that f, b and alpha
    // describe the same scene. A uniform background is only identifiable
    // through the part of the constant image outside range(A_alpha); the
    // ridge fit used during the iterations is biased along that direction.
    let hard: Vec<f64> = alpha
        .iter()
        .map(|&on| if on { HARD_LOGIT } else { -HARD_LOGIT })
        .collect();
    if estimate && opts.background_shape == BackgroundShape::Uniform {
        let av = effective_transport(&a_n, vis, &hard, opts.relaxation);
        let (a_cm, gram) = transport_gram(&av);
        let ridge = PROJECTOR_RIDGE * gram.diagonal().mean();
        if ridge > 0.0 {
            let exact = RidgeSystem::with_gram(a_cm, gram, ridge)?;
            let ones = vec![1.0; rows];
            let u: Vec<f64> = exact
                .a_mul(&exact.solve(&ones))
                .iter()
                .map(|h| 1.0 - h)
                .collect();
            let curv: f64 = u.iter().map(|v| v * v).sum();
            if curv > 0.0 {
                let level = u.iter().zip(&y_n).map(|(u, y)| u * y).sum::<f64>() / curv;
                state.b.fill(level.max(0.0));
            }
        }
    }
    state.f = evaluate(
        &a_n,
        vis,
        &y_n,
        &hard,
        &state.b,
        state.lambda,
        opts.relaxation,
        opts.background,
    )?
    .f;
    let out = InversionState {
        z: state.z.clone(),
        b: state.b.iter().map(|v| v * s_y).collect(),
        lambda: state.lambda * s_a * s_a,
        f: state.f.iter().map(|v| v * s_y / s_a).collect(),
        iteration: state.iteration,
    };
    Ok(Inversion {
        f: out.f.clone(),
        alpha,
        b: out.b.clone(),
        lambda: out.lambda,
        trace,
        state: out,
    })
}
