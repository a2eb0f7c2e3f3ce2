//! Epsilon-insensitive support vector regression trained by sequential
//! minimal optimization over the 2n-variable dual.

use crate::codec::{Reader, Writer};
use crate::error::{ensure, Result, WingsError};
use crate::linalg::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f32 },
}

impl Kernel {
    pub fn code(&self) -> u8 {
        match self {
            Kernel::Linear => 0,
            Kernel::Rbf { .. } => 1,
        }
    }

    pub fn gamma(&self) -> f32 {
        match *self {
            Kernel::Linear => 0.0,
            Kernel::Rbf { gamma } => gamma,
        }
    }

    #[inline]
    fn eval(&self, a: &[f32], b: &[f32]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| {
                        let d = *x as f64 - *y as f64;
                        d * d
                    })
                    .sum();
                (-(gamma as f64) * d2).exp()
            }
        }
    }
}

/// Concrete hyper-parameters for one regression problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrConfig {
    pub c: f32,
    pub epsilon: f32,
    pub kernel: Kernel,
    /// Iteration cap, in passes over the 2n dual variables.
    pub max_passes: usize,
    /// Stop when the maximal KKT violation gap falls below this.
    pub tol: f32,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            c: 10.0,
            epsilon: 0.01,
            kernel: Kernel::Rbf { gamma: 1.0 },
            max_passes: 1000,
            tol: 1e-3,
        }
    }
}

impl SvrConfig {
    fn validate(&self) -> Result<()> {
        ensure!(
            self.c > 0.0 && self.c.is_finite(),
            "C must be finite and > 0"
        );
        ensure!(
            self.epsilon >= 0.0 && self.epsilon.is_finite(),
            "epsilon must be finite and >= 0"
        );
        ensure!(
            self.tol > 0.0 && self.tol.is_finite(),
            "tol must be finite and > 0"
        );
        ensure!(self.max_passes >= 1, "max_passes must be at least 1");
        if let Kernel::Rbf { gamma } = self.kernel {
            ensure!(
                gamma > 0.0 && gamma.is_finite(),
                "gamma must be finite and > 0"
            );
        }
        Ok(())
    }
}

/// Tube width rule applied per regression problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonRule {
    Absolute(f32),
    /// Fraction of the target's standard deviation.
    RelativeStd(f32),
}

/// RBF width rule applied per regression problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaRule {
    Linear,
    /// `1 / d`.
    InverseDim,
    /// `1 / (d * var(x))` over all input entries; `1 / d` if the inputs are constant.
    Scaled,
    Fixed(f32),
}

/// Hyper-parameter recipe resolved against each problem's data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrPolicy {
    pub c: f32,
    pub epsilon: EpsilonRule,
    pub gamma: GammaRule,
    pub max_passes: usize,
    pub tol: f32,
}

impl Default for SvrPolicy {
    fn default() -> Self {
        SvrPolicy {
            c: 10.0,
            epsilon: EpsilonRule::RelativeStd(0.01),
            gamma: GammaRule::InverseDim,
            max_passes: 1000,
            tol: 1e-3,
        }
    }
}

impl SvrPolicy {
    pub fn resolve(&self, x: &Matrix, y: &[f32]) -> SvrConfig {
        let d = x.cols().max(1) as f32;
        let epsilon = match self.epsilon {
            EpsilonRule::Absolute(e) => e,
            EpsilonRule::RelativeStd(f) => f * std_dev(y),
        };
        let kernel = match self.gamma {
            GammaRule::Linear => Kernel::Linear,
            GammaRule::InverseDim => Kernel::Rbf { gamma: 1.0 / d },
            GammaRule::Scaled => {
                let var = variance(x.data());
                let gamma = if var > 0.0 && var.is_finite() {
                    (1.0 / (d as f64 * var)) as f32
                } else {
                    1.0 / d
                };
                Kernel::Rbf { gamma }
            }
            GammaRule::Fixed(g) => Kernel::Rbf { gamma: g },
        };
        SvrConfig {
            c: self.c,
            epsilon,
            kernel,
            max_passes: self.max_passes,
            tol: self.tol,
        }
    }
}

fn variance(v: &[f32]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().map(|&a| a as f64).sum::<f64>() / n;
    v.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Population standard deviation.
pub fn std_dev(y: &[f32]) -> f32 {
    if y.is_empty() {
        return 0.0;
    }
    let n = y.len() as f64;
    let mean = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    (y.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt() as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    pub kernel: Kernel,
    pub c: f32,
    pub epsilon: f32,
    /// `s x d`.
    pub support_vectors: Matrix,
    /// `alpha - alpha*` per support vector.
    pub dual_coefs: Vec<f32>,
    pub bias: f32,
}

/// Training outcome with solver diagnostics.
#[derive(Debug, Clone)]
pub struct SvrFit {
    pub model: SvrModel,
    pub converged: bool,
    pub iterations: usize,
    /// Largest per-sample KKT violation on the training data.
    pub kkt_residual: f64,
    /// Unpruned `alpha - alpha*` for every training sample.
    pub coefs_full: Vec<f64>,
    pub bias_full: f64,
}

/// Below this magnitude a dual coefficient is dropped from the model.
pub const PRUNE_THRESHOLD: f64 = 1e-8;
const TAU: f64 = 1e-12;

pub fn train_svr(x: &Matrix, y: &[f32], cfg: &SvrConfig, seed: u64) -> Result<SvrFit> {
    cfg.validate()?;
    let n = x.rows();
    ensure!(n >= 2, "SVR needs at least 2 samples, got {n}");
    ensure!(y.len() == n, "{} targets for {n} samples", y.len());
    ensure!(x.is_finite(), "SVR inputs must be finite");
    ensure!(
        y.iter().all(|v| v.is_finite()),
        "SVR targets must be finite"
    );

    let mut kmat = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let v = cfg.kernel.eval(x.row(i), x.row(j));
            kmat[i * n + j] = v;
            kmat[j * n + i] = v;
        }
    }

    let l = 2 * n;
    let c = cfg.c as f64;
    let eps = cfg.epsilon as f64;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let kidx = |t: usize| if t < n { t } else { t - n };
    let mut alpha = vec![0.0f64; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| {
            let yt = y[kidx(t)] as f64;
            if t < n {
                eps - yt
            } else {
                eps + yt
            }
        })
        .collect();
    let order = Rng::new(seed).derive("svr-order", &[]).permutation(l);
    let tol = cfg.tol as f64;
    let max_iter = cfg.max_passes.saturating_mul(l).max(1);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // first index: maximal violator in the "up" set
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for &t in &order {
            let v = if t < n {
                if alpha[t] < c {
                    -grad[t]
                } else {
                    continue;
                }
            } else if alpha[t] > 0.0 {
                grad[t]
            } else {
                continue;
            };
            if v > gmax {
                gmax = v;
                i_sel = t;
            }
        }
        // second index: largest objective decrease in the "low" set
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i_sel != usize::MAX {
            let ki = kidx(i_sel);
            let kii = kmat[ki * n + ki];
            for &t in &order {
                let (in_low, v) = if t < n {
                    (alpha[t] > 0.0, grad[t])
                } else {
                    (alpha[t] < c, -grad[t])
                };
                if !in_low {
                    continue;
                }
                if v > gmax2 {
                    gmax2 = v;
                }
                let diff = gmax + v;
                if diff > 0.0 {
                    let kt = kidx(t);
                    let mut quad = kii + kmat[kt * n + kt] - 2.0 * kmat[ki * n + kt];
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let obj = -(diff * diff) / quad;
                    if obj < obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax + gmax2 < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (ki, kj) = (kidx(i), kidx(j));
        let (yi, yj) = (sign(i), sign(j));
        let qij = yi * yj * kmat[ki * n + kj];
        let qii = kmat[ki * n + ki];
        let qjj = kmat[kj * n + kj];
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_ai, old_aj);
        if yi != yj {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (dai, daj) = (ai - old_ai, aj - old_aj);
        for (t, g) in grad.iter_mut().enumerate().take(l) {
            let kt = kidx(t);
            let yt = sign(t);
            *g += yt * (yi * kmat[kt * n + ki] * dai + yj * kmat[kt * n + kj] * daj);
        }
    }

    // bias from free variables, else midpoint of the feasible interval
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..l {
        let yg = sign(t) * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let bias = -rho;
    let coefs: Vec<f64> = (0..n).map(|i| alpha[i] - alpha[i + n]).collect();

    let kkt_residual = kkt_residual_of(&kmat, n, y, &coefs, bias, c, eps);

    let keep: Vec<usize> = (0..n)
        .filter(|&i| coefs[i].abs() >= PRUNE_THRESHOLD)
        .collect();
    let model = SvrModel {
        kernel: cfg.kernel,
        c: cfg.c,
        epsilon: cfg.epsilon,
        support_vectors: x.select_rows(&keep),
        dual_coefs: keep.iter().map(|&i| coefs[i] as f32).collect(),
        bias: bias as f32,
    };
    Ok(SvrFit {
        model,
        converged,
        iterations,
        kkt_residual,
        coefs_full: coefs,
        bias_full: bias,
    })
}

/// Largest violation of the optimality conditions, per sample:
/// zero coefficient needs `|f - y| <= eps`; a free coefficient needs the
/// sample on the tube edge of its side; a coefficient at `±C` needs the
/// sample on or beyond that edge.
fn kkt_residual_of(
    kmat: &[f64],
    n: usize,
    y: &[f32],
    coefs: &[f64],
    bias: f64,
    c: f64,
    eps: f64,
) -> f64 {
    let bound = 1e-12 * c.max(1.0);
    let mut worst = 0.0f64;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| coefs[j] * kmat[i * n + j]).sum::<f64>() + bias;
        let r = y[i] as f64 - f; // > 0 means above the regression line
        let b = coefs[i];
        let v = if b.abs() <= bound {
            (r.abs() - eps).max(0.0)
        } else if b > 0.0 {
            if b >= c - bound {
                (eps - r).max(0.0)
            } else {
                (r - eps).abs()
            }
        } else if b <= -c + bound {
            (eps + r).max(0.0)
        } else {
            (r + eps).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// `sum_i coef_i K(sv_i, x) + bias` for each row of `x`.
pub fn predict(m: &SvrModel, x: &Matrix) -> Result<Vec<f32>> {
    ensure!(
        m.support_vectors.rows() == 0 || x.cols() == m.support_vectors.cols(),
        "SVR expects {} features, got {}",
        m.support_vectors.cols(),
        x.cols()
    );
    Ok((0..x.rows()).map(|r| predict_one(m, x.row(r))).collect())
}

pub fn predict_one(m: &SvrModel, x: &[f32]) -> f32 {
    let mut acc = m.bias as f64;
    for (s, &a) in m.dual_coefs.iter().enumerate() {
        acc += a as f64 * m.kernel.eval(m.support_vectors.row(s), x);
    }
    acc as f32
}

/// Stored parameter count: support vectors, coefficients and bias.
pub fn svr_param_count(m: &SvrModel) -> usize {
    let s = m.dual_coefs.len();
    s * m.support_vectors.cols() + s + 1
}

/// Byte ranges of an encoded model, relative to its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SvrLayout {
    pub support_vectors: (usize, usize),
    pub dual_coefs: (usize, usize),
}

impl SvrModel {
    /// Input dimension (0 when there are no support vectors and it was not recorded).
    pub fn dim(&self) -> usize {
        self.support_vectors.cols()
    }

    pub fn encoded_len(&self) -> usize {
        1 + 4 * 3 + 4 + 4 + 4 * (self.support_vectors.len() + self.dual_coefs.len()) + 4
    }

    pub(crate) fn encode(&self, w: &mut Writer) -> SvrLayout {
        let start = w.buf.len();
        w.u8(self.kernel.code());
        w.f32(self.kernel.gamma());
        w.f32(self.c);
        w.f32(self.epsilon);
        w.dim(self.dual_coefs.len());
        w.dim(self.support_vectors.cols());
        let sv0 = w.buf.len() - start;
        w.f32s(self.support_vectors.data());
        let dc0 = w.buf.len() - start;
        w.f32s(&self.dual_coefs);
        let dc1 = w.buf.len() - start;
        w.f32(self.bias);
        SvrLayout {
            support_vectors: (sv0, dc0),
            dual_coefs: (dc0, dc1),
        }
    }

    pub(crate) fn decode(r: &mut Reader, strict: bool) -> Result<(SvrModel, SvrLayout)> {
        let start = r.pos();
        let at = r.offset();
        let code = r.u8("kernel id")?;
        let gamma = r.f32("gamma")?;
        let kernel = match code {
            0 => Kernel::Linear,
            1 => Kernel::Rbf { gamma },
            other => return Err(WingsError::format(at, format!("unknown kernel id {other}"))),
        };
        let c = r.f32("C")?;
        let epsilon = r.f32("epsilon")?;
        let s = r.dim("support count")?;
        let d = r.dim("support dim")?;
        let total = s
            .checked_mul(d)
            .ok_or_else(|| r.err("support vector size overflows"))?;
        let sv0 = r.pos() - start;
        let sv = r.f32s(total, "support vectors", strict)?;
        let dc0 = r.pos() - start;
        let dual_coefs = r.f32s(s, "dual coefficients", strict)?;
        let dc1 = r.pos() - start;
        let bias = r.f32("bias")?;
        if strict && !bias.is_finite() {
            return Err(r.err("non-finite bias"));
        }
        Ok((
            SvrModel {
                kernel,
                c,
                epsilon,
                support_vectors: Matrix::from_raw(s, d, sv),
                dual_coefs,
                bias,
            },
            SvrLayout {
                support_vectors: (sv0, dc0),
                dual_coefs: (dc0, dc1),
            },
        ))
    }
}
