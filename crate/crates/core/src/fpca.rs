//! FPCA-Cox baseline: average each patient's images, extract principal
//! component scores, fit a linear Cox model on the standardized scores.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::cox::{breslow_baseline, BaselineHazard};
use crate::data::{landmark, ImageSequence, Subject, SurvivalRecord};
use crate::error::{Error, Result};

/// Pixel-wise mean of the first `visits` images, flattened row-major.
pub fn average_images(seq: &ImageSequence, visits: usize) -> Result<Vec<f64>> {
    if visits == 0 || visits > seq.len() {
        return Err(Error::Input(format!("cannot average {visits} of {} images", seq.len())));
    }
    let mut out = vec![0.0; seq.images[0].pixels().len()];
    for im in &seq.images[..visits] {
        for (o, p) in out.iter_mut().zip(im.pixels()) {
            *o += p;
        }
    }
    let n = visits as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fpca {
    pub mean: Vec<f64>,
    /// Orthonormal eigenfunctions, one per kept component.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of every nonzero component, nonincreasing.
    pub eigenvalues: Vec<f64>,
    pub kept: usize,
    pub pve_target: f64,
}

impl Fpca {
    pub fn kept_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues[..self.kept]
    }
}

fn check_signals(signals: &[Vec<f64>]) -> Result<usize> {
    let p = signals.first().map(Vec::len).unwrap_or(0);
    if p == 0 || signals.iter().any(|s| s.len() != p) {
        return Err(Error::Input("signals must be nonempty and of equal length".into()));
    }
    Ok(p)
}

/// Eigen-decomposition of the sample covariance (divisor `n - 1`) through
/// the `n x n` Gram matrix. Keeps the fewest components whose cumulative
/// variance share reaches `pve_target`.
pub fn fit_fpca(signals: &[Vec<f64>], pve_target: f64) -> Result<Fpca> {
    let n = signals.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("FPCA needs 2 signals, got {n}")));
    }
    if !(pve_target > 0.0 && pve_target <= 1.0) {
        return Err(Error::Config(format!("PVE target {pve_target} outside (0, 1]")));
    }
    let p = check_signals(signals)?;
    let mut mean = vec![0.0; p];
    for s in signals {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, p, |i, j| signals[i][j] - mean[j]);

    let gram = (&centered * centered.transpose()) / (n - 1) as f64;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if !(top > 0.0) {
        return Err(Error::Degenerate("all signals are identical".into()));
    }
    let tol = top * 1e-10;

    let mut eigenvalues = Vec::new();
    let mut components = Vec::new();
    for &k in &order {
        let lambda = eig.eigenvalues[k];
        if lambda <= tol {
            break;
        }
        let u = eig.eigenvectors.column(k);
        let mut phi = centered.transpose() * u;
        phi /= ((n - 1) as f64 * lambda).sqrt();
        // fix the sign: largest-magnitude entry positive
        let (imax, _) = phi.iter().enumerate().fold((0, 0.0), |acc, (i, v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        if phi[imax] < 0.0 {
            phi.neg_mut();
        }
        eigenvalues.push(lambda);
        components.push(phi.iter().copied().collect::<Vec<f64>>());
    }
    let total: f64 = eigenvalues.iter().sum();
    let mut cumulative = 0.0;
    let mut kept = eigenvalues.len();
    for (k, l) in eigenvalues.iter().enumerate() {
        cumulative += l;
        if cumulative / total >= pve_target - 1e-12 {
            kept = k + 1;
            break;
        }
    }
    components.truncate(kept);
    Ok(Fpca { mean, components, eigenvalues, kept, pve_target })
}

/// `xi_k = <signal - mean, phi_k>`.
pub fn project_scores(model: &Fpca, signal: &[f64]) -> Result<Vec<f64>> {
    if signal.len() != model.mean.len() {
        return Err(Error::Input(format!(
            "signal of length {} for an FPCA over {} points",
            signal.len(),
            model.mean.len()
        )));
    }
    Ok(model
        .components
        .iter()
        .map(|phi| {
            phi.iter()
                .zip(signal.iter().zip(&model.mean))
                .map(|(f, (x, m))| f * (x - m))
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCox {
    pub beta: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Coefficient norm exceeded 50: monotone likelihood suspected.
    pub separated: bool,
    /// Log partial likelihood after each accepted step, starting at `beta = 0`.
    pub trace: Vec<f64>,
}

pub const MAX_NEWTON_ITERATIONS: usize = 50;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const RIDGE_JITTER: f64 = 1e-8;
pub const SEPARATION_NORM: f64 = 50.0;

/// Breslow log partial likelihood, its gradient and Hessian at `beta`.
fn derivatives(x: &DMatrix<f64>, records: &[SurvivalRecord], beta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let (n, p) = x.shape();
    let eta = x * beta;
    let shift = eta.max();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));

    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let mut i = 0;
    while i < n {
        let t = records[order[i]].time;
        let mut j = i;
        while j < n && records[order[j]].time == t {
            let k = order[j];
            let w = (eta[k] - shift).exp();
            let xk = x.row(k).transpose();
            s0 += w;
            s1.axpy(w, &xk, 1.0);
            s2.ger(w, &xk, &xk, 1.0);
            j += 1;
        }
        let d = order[i..j].iter().filter(|&&k| records[k].event).count();
        if d > 0 {
            let mean = &s1 / s0;
            let df = d as f64;
            for &k in &order[i..j] {
                if records[k].event {
                    ll += eta[k];
                    grad += x.row(k).transpose();
                }
            }
            ll -= df * (s0.ln() + shift);
            grad.axpy(-df, &mean, 1.0);
            let cov = &s2 / s0 - &mean * mean.transpose();
            hess -= cov * df;
        }
        i = j;
    }
    (ll, grad, hess)
}

pub fn cox_log_likelihood(x: &[Vec<f64>], records: &[SurvivalRecord], beta: &[f64]) -> Result<f64> {
    let m = design(x, records)?;
    Ok(derivatives(&m, records, &DVector::from_column_slice(beta)).0)
}

fn design(x: &[Vec<f64>], records: &[SurvivalRecord]) -> Result<DMatrix<f64>> {
    if x.len() != records.len() || x.is_empty() {
        return Err(Error::Input("covariate rows must match records".into()));
    }
    let p = x[0].len();
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(Error::Input("covariate rows must be nonempty and equal length".into()));
    }
    Ok(DMatrix::from_fn(x.len(), p, |i, j| x[i][j]))
}

/// Newton-Raphson maximization of the Breslow partial likelihood with step
/// halving whenever a full step lowers it.
pub fn fit_linear_cox(x: &[Vec<f64>], records: &[SurvivalRecord]) -> Result<LinearCox> {
    let m = design(x, records)?;
    if !records.iter().any(|r| r.event) {
        return Err(Error::NoEvents);
    }
    let p = m.ncols();
    let mut beta = DVector::zeros(p);
    let (mut ll, mut grad, mut hess) = derivatives(&m, records, &beta);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = grad.amax() < GRADIENT_TOLERANCE;
    while !converged && iterations < MAX_NEWTON_ITERATIONS {
        iterations += 1;
        let mut info = -hess.clone();
        for k in 0..p {
            info[(k, k)] += RIDGE_JITTER;
        }
        let step = match info.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => info
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::Degenerate("singular information matrix".into()))?,
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &step * scale;
            let (c_ll, c_grad, c_hess) = derivatives(&m, records, &candidate);
            if c_ll.is_finite() && c_ll >= ll {
                beta = candidate;
                ll = c_ll;
                grad = c_grad;
                hess = c_hess;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(ll);
        converged = grad.amax() < GRADIENT_TOLERANCE;
    }
    let separated = beta.norm() > SEPARATION_NORM;
    Ok(LinearCox { beta: beta.iter().copied().collect(), log_likelihood: ll, iterations, converged, separated, trace })
}

/// FPCA-Cox fitted at one landmark.
#[derive(Debug, Clone)]
pub struct FpcaCox {
    pub fpca: Fpca,
    pub score_sd: Vec<f64>,
    pub cox: LinearCox,
    pub baseline: BaselineHazard,
    pub landmark: f64,
}

pub const DEFAULT_PVE: f64 = 0.95;

impl FpcaCox {
    pub fn fit(subjects: &[Subject], t_star: f64, pve_target: f64) -> Result<Self> {
        let cohort = landmark(subjects, t_star);
        if cohort.len() < 2 {
            return Err(Error::InsufficientData("fewer than 2 patients at the landmark".into()));
        }
        let signals = cohort
            .iter()
            .map(|l| average_images(&l.subject.sequence, l.visits))
            .collect::<Result<Vec<_>>>()?;
        let records: Vec<SurvivalRecord> = cohort.iter().map(|l| l.subject.record).collect();
        let fpca = fit_fpca(&signals, pve_target)?;
        let scores = signals.iter().map(|s| project_scores(&fpca, s)).collect::<Result<Vec<_>>>()?;
        let n = scores.len() as f64;
        let score_sd: Vec<f64> = (0..fpca.kept)
            .map(|k| {
                let mean = scores.iter().map(|s| s[k]).sum::<f64>() / n;
                let var = scores.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let standardized: Vec<Vec<f64>> = scores
            .iter()
            .map(|s| s.iter().zip(&score_sd).map(|(v, sd)| v / sd).collect())
            .collect();
        let cox = fit_linear_cox(&standardized, &records)?;
        let risks: Vec<f64> = standardized.iter().map(|s| dot(s, &cox.beta)).collect();
        let baseline = breslow_baseline(&risks, &records)?;
        Ok(Self { fpca, score_sd, cox, baseline, landmark: t_star })
    }

    pub fn risk(&self, seq: &ImageSequence, visits: usize) -> Result<f64> {
        let signal = average_images(seq, visits)?;
        let scores = project_scores(&self.fpca, &signal)?;
        let z: Vec<f64> = scores.iter().zip(&self.score_sd).map(|(v, sd)| v / sd).collect();
        Ok(dot(&z, &self.cox.beta))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
