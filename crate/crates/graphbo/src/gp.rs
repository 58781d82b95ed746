//! Gaussian-process surrogate over node embeddings with a spectral kernel.
//!
//! The kernel diagonalizes in the embedding basis: `k(u,v) = sum_i r(lambda_i)
//! phi_i(u) phi_i(v)` where `r` is a spectral filter (polynomial, Matérn-type,
//! or RBF-type decay) over the surrogate-Laplacian eigenvalue estimates.
//! Hyperparameters are fitted by gradient descent on the negative log marginal
//! likelihood; because the kernel is low-rank in the filter responses, every
//! trace term reduces to per-eigenvalue sums and one Cholesky per step.
//!
//! Targets are standardized to zero mean / unit variance internally (the
//! prior mean is zero); predictions are mapped back to the original scale.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::SpectralEigenpairs;
use crate::par;

/// Every filter response is clamped below by this, keeping the Gram matrix
/// positive semi-definite.
pub const EPS_PSD: f64 = 1e-9;

/// Fitted noise variances never drop below this (unless pinned noiseless).
pub const SIGMA2_FLOOR: f64 = 1e-8;

/// Jitter escalation ladder for Cholesky retries.
const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];

#[derive(Debug, Error)]
pub enum GpError {
    #[error("need at least {needed} training points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("kernel matrix factorization failed after jitter escalation to 1e-4")]
    Factorization,
    #[error("negative log marginal likelihood is not finite at initialization")]
    NonFiniteInit,
    #[error("invalid filter parameter: {0}")]
    Parameter(String),
}

/// Spectral filter `r(lambda)` shaping the kernel's eigenvalue response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralFilter {
    /// `r(lambda) = max(sum_a beta_a lambda^a, 0) + EPS_PSD`. The clamp keeps
    /// the response nonnegative where the raw polynomial would dip below 0.
    Polynomial { betas: Vec<f64> },
    /// `r(lambda) = (beta nu + lambda)^{-nu}`; requires `beta nu + lambda > 0`.
    Matern { beta: f64, nu: f64 },
    /// `r(lambda) = sigma_f^2 exp(-lambda / (2 l^2))` — smooth monotone decay.
    Rbf { sigma_f: f64, lengthscale: f64 },
}

impl SpectralFilter {
    /// Degree-2 low-pass default: r(0) = 1, decreasing in lambda.
    pub fn default_polynomial() -> Self {
        SpectralFilter::Polynomial {
            betas: vec![1.0, -0.5, 0.0],
        }
    }

    pub fn default_matern() -> Self {
        SpectralFilter::Matern { beta: 1.0, nu: 2.5 }
    }

    pub fn default_rbf() -> Self {
        SpectralFilter::Rbf {
            sigma_f: 1.0,
            lengthscale: 1.0,
        }
    }

    /// Filter response at one eigenvalue, clamped at [`EPS_PSD`].
    pub fn response(&self, lambda: f64) -> f64 {
        let raw = match self {
            SpectralFilter::Polynomial { betas } => {
                let mut p = 0.0;
                let mut pow = 1.0;
                for b in betas {
                    p += b * pow;
                    pow *= lambda;
                }
                p.max(0.0) + EPS_PSD
            }
            SpectralFilter::Matern { beta, nu } => (beta * nu + lambda).powf(-nu),
            SpectralFilter::Rbf {
                sigma_f,
                lengthscale,
            } => sigma_f * sigma_f * (-lambda / (2.0 * lengthscale * lengthscale)).exp(),
        };
        raw.max(EPS_PSD)
    }

    fn validate(&self, lambdas: &[f64]) -> Result<(), GpError> {
        match self {
            SpectralFilter::Polynomial { betas } => {
                if betas.is_empty() {
                    return Err(GpError::Parameter("polynomial needs >= 1 coefficient".into()));
                }
            }
            SpectralFilter::Matern { beta, nu } => {
                for &l in lambdas {
                    if beta * nu + l <= 0.0 {
                        return Err(GpError::Parameter(format!(
                            "matern base beta*nu + lambda = {} <= 0",
                            beta * nu + l
                        )));
                    }
                }
                if *nu <= 0.0 {
                    return Err(GpError::Parameter("matern nu must be positive".into()));
                }
            }
            SpectralFilter::Rbf {
                sigma_f,
                lengthscale,
            } => {
                if *sigma_f <= 0.0 || *lengthscale <= 0.0 {
                    return Err(GpError::Parameter(
                        "rbf scale and lengthscale must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Unconstrained optimization coordinates (positive params in log space).
    fn pack(&self) -> Vec<f64> {
        match self {
            SpectralFilter::Polynomial { betas } => betas.clone(),
            SpectralFilter::Matern { beta, nu } => vec![beta.ln(), nu.ln()],
            SpectralFilter::Rbf {
                sigma_f,
                lengthscale,
            } => vec![sigma_f.ln(), lengthscale.ln()],
        }
    }

    fn unpack(&self, theta: &[f64]) -> SpectralFilter {
        match self {
            SpectralFilter::Polynomial { .. } => SpectralFilter::Polynomial {
                betas: theta.to_vec(),
            },
            SpectralFilter::Matern { .. } => SpectralFilter::Matern {
                beta: theta[0].exp(),
                nu: theta[1].exp(),
            },
            SpectralFilter::Rbf { .. } => SpectralFilter::Rbf {
                sigma_f: theta[0].exp(),
                lengthscale: theta[1].exp(),
            },
        }
    }

    /// `d r / d theta_j` at one eigenvalue, in the packed coordinates.
    fn response_grad(&self, lambda: f64, out: &mut [f64]) {
        match self {
            SpectralFilter::Polynomial { betas } => {
                let mut p = 0.0;
                let mut pow = 1.0;
                for b in betas {
                    p += b * pow;
                    pow *= lambda;
                }
                let active = p > 0.0;
                let mut pow = 1.0;
                for g in out.iter_mut() {
                    *g = if active { pow } else { 0.0 };
                    pow *= lambda;
                }
            }
            SpectralFilter::Matern { beta, nu } => {
                let base = beta * nu + lambda;
                let r = base.powf(-nu);
                // d/d log beta = beta * dr/dbeta = -nu^2 beta base^{-nu-1}
                out[0] = -nu * nu * beta * base.powf(-nu - 1.0);
                // d/d log nu = nu * dr/dnu, dr/dnu = r (-ln base - nu beta / base)
                out[1] = nu * r * (-base.ln() - nu * beta / base);
            }
            SpectralFilter::Rbf {
                sigma_f,
                lengthscale,
            } => {
                let r = sigma_f * sigma_f * (-lambda / (2.0 * lengthscale * lengthscale)).exp();
                out[0] = 2.0 * r;
                out[1] = r * lambda / (lengthscale * lengthscale);
            }
        }
    }

    fn param_count(&self) -> usize {
        match self {
            SpectralFilter::Polynomial { betas } => betas.len(),
            _ => 2,
        }
    }
}

/// Which filter family to instantiate (experiment configs pick by name).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Polynomial,
    Matern,
    Rbf,
}

impl KernelKind {
    pub fn default_filter(self) -> SpectralFilter {
        match self {
            KernelKind::Polynomial => SpectralFilter::default_polynomial(),
            KernelKind::Matern => SpectralFilter::default_matern(),
            KernelKind::Rbf => SpectralFilter::default_rbf(),
        }
    }
}

/// Kernel over nodes: filter responses combined with the embedding rows.
#[derive(Debug, Clone)]
pub struct SpectralKernel {
    pub filter: SpectralFilter,
    pub eigenpairs: SpectralEigenpairs,
    responses: Vec<f64>,
}

impl SpectralKernel {
    pub fn new(filter: SpectralFilter, eigenpairs: SpectralEigenpairs) -> Result<Self, GpError> {
        filter.validate(&eigenpairs.lambdas)?;
        let responses = eigenpairs
            .lambdas
            .iter()
            .map(|&l| filter.response(l))
            .collect();
        Ok(Self {
            filter,
            eigenpairs,
            responses,
        })
    }

    fn set_filter(&mut self, filter: SpectralFilter) -> Result<(), GpError> {
        filter.validate(&self.eigenpairs.lambdas)?;
        self.responses = self
            .eigenpairs
            .lambdas
            .iter()
            .map(|&l| filter.response(l))
            .collect();
        self.filter = filter;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.eigenpairs.dim()
    }

    /// `k(u,v) = sum_i r(lambda_i) phi_i(u) phi_i(v)`.
    pub fn eval(&self, u: usize, v: usize) -> f64 {
        let phis = &self.eigenpairs.phis;
        let mut k = 0.0;
        for i in 0..self.responses.len() {
            // grouping keeps k(u,v) bitwise equal to k(v,u)
            k += self.responses[i] * (phis[(u, i)] * phis[(v, i)]);
        }
        k
    }

    /// Gram matrix over a node list.
    pub fn gram(&self, nodes: &[usize]) -> DMatrix<f64> {
        let m = nodes.len();
        DMatrix::from_fn(m, m, |a, b| self.eval(nodes[a], nodes[b]))
    }
}

/// Kernel evaluation as a free function (mirrors the kernel/GP op split).
pub fn kernel_eval(kern: &SpectralKernel, u: usize, v: usize) -> f64 {
    kern.eval(u, v)
}

/// Negative log marginal likelihood of raw targets under a given Gram matrix
/// plus noise: `1/2 y^T K~^{-1} y + 1/2 log det K~ + m/2 log 2pi` with
/// `K~ = K + (noise + jitter) I`. Pure helper; no standardization.
pub fn nll_of(k: &DMatrix<f64>, y: &DVector<f64>, noise_var: f64) -> Result<f64, GpError> {
    let (chol, _) = factor_with_ladder(k, noise_var)?;
    Ok(nll_from_factor(&chol, y))
}

fn factor_with_ladder(
    k: &DMatrix<f64>,
    noise_var: f64,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    for &jitter in &JITTER_LADDER {
        let mut kt = k.clone();
        for i in 0..kt.nrows() {
            kt[(i, i)] += noise_var + jitter;
        }
        if let Some(c) = Cholesky::new(kt) {
            return Ok((c, jitter));
        }
    }
    Err(GpError::Factorization)
}

fn nll_from_factor(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> f64 {
    let m = y.len() as f64;
    let alpha = chol.solve(y);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    0.5 * y.dot(&alpha) + 0.5 * logdet + 0.5 * m * (2.0 * std::f64::consts::PI).ln()
}

/// Report from a hyperparameter fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub initial_nll: f64,
    pub final_nll: f64,
    pub nll_trace: Vec<f64>,
}

/// GP posterior over node values with a spectral kernel.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    pub kernel: SpectralKernel,
    pub train_nodes: Vec<usize>,
    /// Noise variance in standardized-target space; 0 when `noiseless`.
    pub noise_var: f64,
    pub noiseless: bool,
    y_mean: f64,
    y_std: f64,
    y_standardized: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpSurrogate {
    /// Build the posterior factorization for fixed hyperparameters. Targets
    /// are standardized internally; `noise_var` is interpreted in the
    /// standardized space (pinned to 0 when `noiseless`).
    pub fn fit(
        kernel: SpectralKernel,
        train_nodes: Vec<usize>,
        y: &[f64],
        noise_var: f64,
        noiseless: bool,
    ) -> Result<Self, GpError> {
        if train_nodes.is_empty() {
            return Err(GpError::TooFewPoints { needed: 1, got: 0 });
        }
        assert_eq!(train_nodes.len(), y.len());
        let m = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / m;
        let var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / m;
        let y_std = var.sqrt().max(1e-12);
        let y_standardized = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));
        let noise_var = if noiseless {
            0.0
        } else {
            noise_var.max(SIGMA2_FLOOR)
        };
        let gram = kernel.gram(&train_nodes);
        let (chol, jitter) = factor_with_ladder(&gram, noise_var)?;
        let alpha = chol.solve(&y_standardized);
        Ok(Self {
            kernel,
            train_nodes,
            noise_var,
            noiseless,
            y_mean,
            y_std,
            y_standardized,
            chol,
            alpha,
            jitter,
        })
    }

    fn refactor(&mut self) -> Result<(), GpError> {
        let gram = self.kernel.gram(&self.train_nodes);
        let (chol, jitter) = factor_with_ladder(&gram, self.noise_var)?;
        self.alpha = chol.solve(&self.y_standardized);
        self.chol = chol;
        self.jitter = jitter;
        Ok(())
    }

    /// Negative log marginal likelihood at the current hyperparameters
    /// (standardized targets).
    pub fn nll(&self) -> f64 {
        nll_from_factor(&self.chol, &self.y_standardized)
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Number of training points.
    pub fn len(&self) -> usize {
        self.train_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_nodes.is_empty()
    }

    /// Incumbent: the best (maximum) raw training value.
    pub fn best_observed(&self) -> f64 {
        self.y_standardized
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
            * self.y_std
            + self.y_mean
    }

    /// Gradient descent on the negative log marginal likelihood over the
    /// filter parameters (and the noise variance unless noiseless), in
    /// unconstrained coordinates. Keeps the best parameters encountered.
    pub fn fit_hyperparams(&mut self, lr: f64, steps: usize) -> Result<FitReport, GpError> {
        if self.len() < 2 {
            return Err(GpError::TooFewPoints {
                needed: 2,
                got: self.len(),
            });
        }
        let fit_noise = !self.noiseless;
        let initial_nll = self.nll();
        if !initial_nll.is_finite() {
            return Err(GpError::NonFiniteInit);
        }
        if steps == 0 {
            return Ok(FitReport {
                initial_nll,
                final_nll: initial_nll,
                nll_trace: vec![initial_nll],
            });
        }
        let n_filter = self.kernel.filter.param_count();
        let mut theta = self.kernel.filter.pack();
        if fit_noise {
            // Soft floor: sigma^2 = SIGMA2_FLOOR + exp(theta_noise).
            theta.push((self.noise_var - SIGMA2_FLOOR).max(1e-12).ln());
        }
        let mut best_theta = theta.clone();
        let mut best_nll = initial_nll;
        let mut trace = Vec::with_capacity(steps + 1);
        trace.push(initial_nll);

        for _ in 0..steps {
            let grad = self.nll_grad(&theta, n_filter, fit_noise);
            for (t, g) in theta.iter_mut().zip(grad.iter()) {
                *t -= lr * g;
            }
            self.apply_theta(&theta, n_filter, fit_noise)?;
            self.refactor()?;
            let nll = self.nll();
            trace.push(nll);
            if !nll.is_finite() {
                break;
            }
            if nll < best_nll {
                best_nll = nll;
                best_theta.copy_from_slice(&theta);
            }
        }
        self.apply_theta(&best_theta, n_filter, fit_noise)?;
        self.refactor()?;
        Ok(FitReport {
            initial_nll,
            final_nll: best_nll,
            nll_trace: trace,
        })
    }

    fn apply_theta(
        &mut self,
        theta: &[f64],
        n_filter: usize,
        fit_noise: bool,
    ) -> Result<(), GpError> {
        let filter = self.kernel.filter.unpack(&theta[..n_filter]);
        self.kernel.set_filter(filter)?;
        if fit_noise {
            self.noise_var = SIGMA2_FLOOR + theta[n_filter].exp();
        }
        Ok(())
    }

    /// dNLL/dtheta via the low-rank structure: with `K = Phi diag(r) Phi^T`,
    /// `tr(K~^{-1} dK) = sum_i dr_i phi_i^T K~^{-1} phi_i` and
    /// `alpha^T dK alpha = sum_i dr_i (phi_i^T alpha)^2`.
    fn nll_grad(&self, _theta: &[f64], n_filter: usize, fit_noise: bool) -> Vec<f64> {
        let k = self.kernel.dim();
        let m = self.len();
        let phis = &self.kernel.eigenpairs.phis;
        // Phi_t: m x k rows of the training nodes.
        let phi_t = DMatrix::from_fn(m, k, |a, i| phis[(self.train_nodes[a], i)]);
        let w = self.chol.solve(&phi_t); // K~^{-1} Phi_t
        let mut grad = vec![0.0; n_filter + usize::from(fit_noise)];
        let mut dr = vec![0.0; n_filter];
        for i in 0..k {
            self.kernel
                .filter
                .response_grad(self.kernel.eigenpairs.lambdas[i], &mut dr);
            let phi_i = phi_t.column(i);
            let quad = phi_i.dot(&w.column(i)); // phi_i^T K~^{-1} phi_i
            let proj = phi_i.dot(&self.alpha);
            let factor = 0.5 * (quad - proj * proj);
            for (g, d) in grad[..n_filter].iter_mut().zip(dr.iter()) {
                *g += factor * d;
            }
        }
        if fit_noise {
            // dK~/dsigma2 = I: 0.5 (tr K~^{-1} - ||alpha||^2), chained through
            // sigma^2 = floor + exp(theta).
            let l = self.chol.l_dirty();
            let eye = DMatrix::identity(m, m);
            let linv = l
                .solve_lower_triangular(&eye)
                .expect("triangular factor is invertible");
            let tr_inv = linv.iter().map(|x| x * x).sum::<f64>();
            let d_sigma = 0.5 * (tr_inv - self.alpha.norm_squared());
            grad[n_filter] = d_sigma * (self.noise_var - SIGMA2_FLOOR);
        }
        grad
    }

    /// Posterior mean and standard deviation at a node, on the original
    /// target scale. The variance is the latent one (no observation noise).
    pub fn predict(&self, v: usize) -> (f64, f64) {
        let m = self.len();
        let k_star = DVector::from_fn(m, |a, _| self.kernel.eval(self.train_nodes[a], v));
        let mean_std = k_star.dot(&self.alpha);
        let w = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .expect("triangular factor is invertible");
        let var_std = (self.kernel.eval(v, v) - w.norm_squared()).max(0.0);
        (
            self.y_mean + self.y_std * mean_std,
            self.y_std * var_std.sqrt(),
        )
    }

    /// [`Self::predict`] over many nodes (data-parallel).
    pub fn predict_batch(&self, nodes: &[usize]) -> Vec<(f64, f64)> {
        par::map_slice(nodes, |&v| self.predict(v))
    }
}
