//! Point-process GLM estimation of causally conditioned entropy rates.
//!
//! Each binary process is modelled as a discretized point process whose
//! conditional intensity is log-linear in the recent history of a set of
//! regressor processes:
//!
//! `log lambda_j = a0 + sum_r sum_{l=1..J} c_{r,l} x_r[j - l]`.
//!
//! Fits maximize the Poisson log-likelihood `sum_j y_j log(lambda_j D) -
//! lambda_j D` (D the bin width) with Newton steps. Entropy rates are the
//! empirical average of the Bernoulli log-loss with `p_j = lambda_j D`, and the
//! normalized rate of a source set is the relative entropy-rate reduction
//! obtained by adding it to the regressors.

use crate::exactinfo::{InfoValue, ProcessSelector};
use crate::model::ProcessPanel;
use crate::structure::{DiBackend, DiOracle, StructureError};
use nalgebra::{DMatrix, DVector};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

/// Default bounds applied to `lambda * D` when it is used as a Bernoulli
/// probability; the upper bound is [`GlmOptions::probability_ceiling`].
pub const PROB_CLIP: (f64, f64) = (1e-12, 0.5);

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("panel is not binary")]
    NotBinary,
    #[error("process index {index} out of range for {m} processes")]
    ProcessOutOfRange { index: usize, m: usize },
    #[error("{rows} usable observations for {params} parameters; need at least {needed}")]
    InsufficientData {
        rows: usize,
        params: usize,
        needed: usize,
    },
    #[error("fit of process {target} on {regressors:?} diverged after {} iterations (possible separation)", .trace.len())]
    Diverged {
        target: usize,
        regressors: Vec<usize>,
        trace: Vec<f64>,
    },
    #[error("fit of process {target} on {regressors:?} did not converge in {} iterations, gradient norm {gradient_norm:e}", .trace.len())]
    NotConverged {
        target: usize,
        regressors: Vec<usize>,
        gradient_norm: f64,
        trace: Vec<f64>,
    },
    #[error("baseline entropy rate of process {0} is zero")]
    ZeroDenominator(usize),
    #[error("window must be positive for order selection")]
    BadWindow,
    #[error("probability ceiling {0} must lie in (1e-12, 1)")]
    BadCeiling(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fitting options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    /// History length `J` in bins.
    pub window: usize,
    /// Bin width in seconds.
    pub bin_width: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the Euclidean norm of the gradient of the
    /// per-bin mean log-likelihood.
    pub gradient_tolerance: f64,
    /// Minimum number of usable rows per parameter.
    pub rows_per_parameter: usize,
    /// Upper clip of `lambda * D` in the entropy-rate pmf. The default 0.5
    /// suits the small-bin regime; raise it toward 1 for dense binary data.
    #[serde(default = "default_ceiling")]
    pub probability_ceiling: f64,
}

fn default_ceiling() -> f64 {
    PROB_CLIP.1
}

impl Default for GlmOptions {
    fn default() -> Self {
        GlmOptions {
            window: 10,
            bin_width: 1e-3,
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            rows_per_parameter: 10,
            probability_ceiling: PROB_CLIP.1,
        }
    }
}

/// Convergence record of one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Mean log-likelihood per bin after each iteration, starting with the
    /// initial point.
    pub log_likelihood_trace: Vec<f64>,
    pub rows: usize,
    /// Features that were never active; their coefficients are fixed at 0.
    pub inactive_features: usize,
}

/// Conditional-intensity model of one process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmPointProcessModel {
    pub target: usize,
    /// Regressor processes in ascending order; always contains `target`.
    pub regressors: Vec<usize>,
    pub window: usize,
    /// `a0`, then `window` lag coefficients (lag 1 first) per regressor.
    pub coefficients: Vec<f64>,
    pub bin_width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitReport>,
}

impl GlmPointProcessModel {
    /// Builds a model from explicit coefficients.
    pub fn new(
        target: usize,
        regressors: Vec<usize>,
        window: usize,
        coefficients: Vec<f64>,
        bin_width: f64,
    ) -> Self {
        assert!(
            regressors.contains(&target),
            "regressors must include the target"
        );
        assert_eq!(coefficients.len(), 1 + window * regressors.len());
        GlmPointProcessModel {
            target,
            regressors,
            window,
            coefficients,
            bin_width,
            fit: None,
        }
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    /// Lag coefficients of the `r`-th regressor (position in `regressors`).
    pub fn lags(&self, r: usize) -> &[f64] {
        &self.coefficients[1 + r * self.window..1 + (r + 1) * self.window]
    }

    /// Coefficients of a regressor process, if present.
    pub fn lags_of(&self, process: usize) -> Option<&[f64]> {
        self.regressors
            .iter()
            .position(|&p| p == process)
            .map(|r| self.lags(r))
    }

    /// `log lambda` at bin `j` of `series` (indexed by process). Bins before
    /// the start of the record count as silent.
    pub fn log_intensity(&self, series: &[&[u8]], j: usize) -> f64 {
        let mut eta = self.intercept();
        for (r, &p) in self.regressors.iter().enumerate() {
            let s = series[p];
            for (l, c) in self.lags(r).iter().enumerate() {
                let lag = l + 1;
                if lag <= j && s[j - lag] == 1 {
                    eta += c;
                }
            }
        }
        eta
    }

    pub fn is_finite(&self) -> bool {
        self.coefficients.iter().all(|c| c.is_finite())
    }
}

fn check_panel(
    panel: &ProcessPanel,
    procs: impl IntoIterator<Item = usize>,
) -> Result<(), EstimateError> {
    if !panel.is_binary() {
        return Err(EstimateError::NotBinary);
    }
    let m = panel.m();
    for p in procs {
        if p >= m {
            return Err(EstimateError::ProcessOutOfRange { index: p, m });
        }
    }
    Ok(())
}

/// Rows of the design collapsed by their set of active features.
struct Design {
    features: usize,
    rows: usize,
    groups: Vec<Group>,
}

struct Group {
    active: Vec<u16>,
    count: f64,
    ones: f64,
}

fn build_design(
    panel: &ProcessPanel,
    target: usize,
    regressors: &[usize],
    window: usize,
    start: usize,
) -> Design {
    let mut map: HashMap<Vec<u16>, (u64, u64)> = HashMap::new();
    let mut rows = 0;
    let mut active = Vec::with_capacity(16);
    for tr in panel.trajectories() {
        let y = tr.series(target);
        let xs: Vec<&[u8]> = regressors.iter().map(|&p| tr.series(p)).collect();
        for j in start..panel.n() {
            active.clear();
            for (r, x) in xs.iter().enumerate() {
                for l in 1..=window {
                    if x[j - l] == 1 {
                        active.push((r * window + l - 1) as u16);
                    }
                }
            }
            let e = map.entry(active.clone()).or_insert((0, 0));
            e.0 += 1;
            e.1 += y[j] as u64;
            rows += 1;
        }
    }
    let mut groups: Vec<Group> = map
        .into_iter()
        .map(|(active, (c, o))| Group {
            active,
            count: c as f64,
            ones: o as f64,
        })
        .collect();
    // deterministic summation order
    groups.sort_by(|a, b| a.active.cmp(&b.active));
    Design {
        features: regressors.len() * window,
        rows,
        groups,
    }
}

impl Design {
    fn eta(&self, g: &Group, beta: &[f64], log_dt: f64) -> f64 {
        beta[0] + log_dt + g.active.iter().map(|&f| beta[1 + f as usize]).sum::<f64>()
    }

    /// Mean Poisson log-likelihood per bin, without the constant term.
    fn log_likelihood(&self, beta: &[f64], log_dt: f64) -> f64 {
        let s: f64 = self
            .groups
            .iter()
            .map(|g| {
                let eta = self.eta(g, beta, log_dt);
                g.ones * eta - g.count * eta.exp()
            })
            .sum();
        s / self.rows as f64
    }

    /// Gradient and negative Hessian of the mean log-likelihood.
    fn derivatives(&self, beta: &[f64], log_dt: f64) -> (DVector<f64>, DMatrix<f64>) {
        let p = 1 + self.features;
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let mut idx = Vec::with_capacity(16);
        for g in &self.groups {
            let eta = self.eta(g, beta, log_dt);
            let mu = g.count * eta.exp();
            let resid = g.ones - mu;
            idx.clear();
            idx.push(0usize);
            idx.extend(g.active.iter().map(|&f| 1 + f as usize));
            for &a in &idx {
                grad[a] += resid;
                for &b in &idx {
                    info[(a, b)] += mu;
                }
            }
        }
        let n = self.rows as f64;
        (grad / n, info / n)
    }

    /// Mean Bernoulli log-loss in nats with `p = clip(lambda D)`.
    fn entropy_rate(&self, beta: &[f64], log_dt: f64, ceiling: f64) -> f64 {
        let s: f64 = self
            .groups
            .iter()
            .map(|g| {
                let p = self.eta(g, beta, log_dt).exp().clamp(PROB_CLIP.0, ceiling);
                -(g.ones * p.ln() + (g.count - g.ones) * (1.0 - p).ln())
            })
            .sum();
        s / self.rows as f64
    }
}

struct Fitted {
    model: GlmPointProcessModel,
    entropy_rate: f64,
}

fn fit_design(
    design: &Design,
    target: usize,
    regressors: Vec<usize>,
    opts: &GlmOptions,
) -> Result<Fitted, EstimateError> {
    if !(opts.probability_ceiling > PROB_CLIP.0 && opts.probability_ceiling < 1.0) {
        return Err(EstimateError::BadCeiling(opts.probability_ceiling));
    }
    let p = 1 + design.features;
    let needed = opts.rows_per_parameter * p;
    if design.rows < needed {
        return Err(EstimateError::InsufficientData {
            rows: design.rows,
            params: p,
            needed,
        });
    }
    let log_dt = opts.bin_width.ln();
    // features never active carry no information; pin them at zero
    let mut used = vec![false; p];
    used[0] = true;
    for g in &design.groups {
        for &f in &g.active {
            used[1 + f as usize] = true;
        }
    }
    let free: Vec<usize> = (0..p).filter(|&k| used[k]).collect();

    let total_ones: f64 = design.groups.iter().map(|g| g.ones).sum();
    let rate = (total_ones.max(0.5)) / design.rows as f64;
    let mut beta = vec![0.0; p];
    beta[0] = rate.ln() - log_dt;

    let mut ll = design.log_likelihood(&beta, log_dt);
    let mut trace = vec![ll];
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let diverged = |trace: Vec<f64>| EstimateError::Diverged {
        target,
        regressors: regressors.clone(),
        trace,
    };
    for _ in 0..opts.max_iterations {
        let (grad, info) = design.derivatives(&beta, log_dt);
        let g = DVector::from_iterator(free.len(), free.iter().map(|&k| grad[k]));
        grad_norm = g.norm();
        if grad_norm <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let h = DMatrix::from_fn(free.len(), free.len(), |a, b| info[(free[a], free[b])]);
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                // near-singular information: fall back to a damped solve
                let damp = DMatrix::identity(free.len(), free.len()) * 1e-10;
                match (h + damp).cholesky() {
                    Some(ch) => ch.solve(&g),
                    None => return Err(diverged(trace)),
                }
            }
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let mut cand = beta.clone();
            for (a, &k) in free.iter().enumerate() {
                cand[k] += scale * step[a];
            }
            let cand_ll = design.log_likelihood(&cand, log_dt);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-15 * ll.abs() {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        trace.push(ll);
        if !accepted || beta.iter().any(|b| !b.is_finite() || b.abs() > 50.0) {
            return Err(diverged(trace));
        }
    }
    if !converged {
        let (grad, _) = design.derivatives(&beta, log_dt);
        grad_norm = free.iter().map(|&k| grad[k] * grad[k]).sum::<f64>().sqrt();
        converged = grad_norm <= opts.gradient_tolerance;
    }
    if !converged {
        return Err(EstimateError::NotConverged {
            target,
            regressors,
            gradient_norm: grad_norm,
            trace,
        });
    }
    let entropy_rate = design.entropy_rate(&beta, log_dt, opts.probability_ceiling);
    let model = GlmPointProcessModel {
        target,
        regressors,
        window: opts.window,
        coefficients: beta,
        bin_width: opts.bin_width,
        fit: Some(FitReport {
            iterations,
            converged,
            gradient_norm: grad_norm,
            log_likelihood_trace: trace,
            rows: design.rows,
            inactive_features: p - free.len(),
        }),
    };
    Ok(Fitted {
        model,
        entropy_rate,
    })
}

fn regressor_list(target: usize, conditioning: &BTreeSet<usize>) -> Vec<usize> {
    let mut r: BTreeSet<usize> = conditioning.clone();
    r.insert(target);
    r.into_iter().collect()
}

/// Maximum-likelihood GLM of `target` on the history of `target` and
/// `conditioning`.
pub fn fit_glm(
    panel: &ProcessPanel,
    target: usize,
    conditioning: &BTreeSet<usize>,
    opts: &GlmOptions,
) -> Result<GlmPointProcessModel, EstimateError> {
    Ok(fit_with_entropy(panel, target, conditioning, opts)?.model)
}

fn fit_with_entropy(
    panel: &ProcessPanel,
    target: usize,
    conditioning: &BTreeSet<usize>,
    opts: &GlmOptions,
) -> Result<Fitted, EstimateError> {
    check_panel(panel, conditioning.iter().copied().chain([target]))?;
    let regressors = regressor_list(target, conditioning);
    let design = build_design(panel, target, &regressors, opts.window, opts.window);
    fit_design(&design, target, regressors, opts)
}

/// Mean log-likelihood gradient of `model` on the panel (analytic), for
/// diagnostics and tests.
pub fn log_likelihood_gradient(panel: &ProcessPanel, model: &GlmPointProcessModel) -> Vec<f64> {
    let design = build_design(
        panel,
        model.target,
        &model.regressors,
        model.window,
        model.window,
    );
    let (g, _) = design.derivatives(&model.coefficients, model.bin_width.ln());
    g.iter().copied().collect()
}

/// Mean Poisson log-likelihood per bin of `model` on the panel.
pub fn mean_log_likelihood(panel: &ProcessPanel, model: &GlmPointProcessModel) -> f64 {
    let design = build_design(
        panel,
        model.target,
        &model.regressors,
        model.window,
        model.window,
    );
    design.log_likelihood(&model.coefficients, model.bin_width.ln())
}

/// `H(Y || X_I)` in nats per bin, from a fresh fit on the target's own history
/// and the history of `conditioning`.
pub fn causal_entropy_rate(
    panel: &ProcessPanel,
    target: usize,
    conditioning: &BTreeSet<usize>,
    opts: &GlmOptions,
) -> Result<f64, EstimateError> {
    Ok(fit_with_entropy(panel, target, conditioning, opts)?.entropy_rate)
}

/// Entropy-rate pair and normalized directed information rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub target: usize,
    pub sources: Vec<usize>,
    pub conditioning: Vec<usize>,
    /// `H(Y || X_{I2})`, nats per bin.
    pub h_base: f64,
    /// `H(Y || X_{I2 u I1})`, nats per bin.
    pub h_full: f64,
    /// `(h_base - h_full) / h_base`, reported raw.
    pub normalized: f64,
    pub rows: usize,
}

/// Target and sorted regressor list of a fit.
type FitKey = (usize, Vec<usize>);

/// Estimation backend with fits memoized by `(target, regressor set)`.
pub struct EstimatedBackend {
    panel: Arc<ProcessPanel>,
    opts: GlmOptions,
    fits: Mutex<HashMap<FitKey, Arc<FitSummary>>>,
    rates: Mutex<HashMap<ProcessSelector, RateEstimate>>,
}

/// A cached fit and its entropy rate.
#[derive(Clone, Debug, Serialize)]
pub struct FitSummary {
    pub model: GlmPointProcessModel,
    pub entropy_rate: f64,
}

impl EstimatedBackend {
    pub fn new(panel: Arc<ProcessPanel>, opts: GlmOptions) -> Result<Self, EstimateError> {
        check_panel(&panel, [])?;
        Ok(EstimatedBackend {
            panel,
            opts,
            fits: Mutex::new(HashMap::new()),
            rates: Mutex::new(HashMap::new()),
        })
    }

    pub fn options(&self) -> &GlmOptions {
        &self.opts
    }

    /// Fit of `target` on `target` plus `conditioning`, computed once.
    pub fn fit(
        &self,
        target: usize,
        conditioning: &BTreeSet<usize>,
    ) -> Result<Arc<FitSummary>, EstimateError> {
        let key = (target, regressor_list(target, conditioning));
        if let Some(f) = self.fits.lock().get(&key) {
            return Ok(f.clone());
        }
        let fitted = fit_with_entropy(&self.panel, target, conditioning, &self.opts)?;
        let summary = Arc::new(FitSummary {
            model: fitted.model,
            entropy_rate: fitted.entropy_rate,
        });
        Ok(self.fits.lock().entry(key).or_insert(summary).clone())
    }

    pub fn rate(&self, sel: &ProcessSelector) -> Result<RateEstimate, EstimateError> {
        if let Some(r) = self.rates.lock().get(sel) {
            return Ok(r.clone());
        }
        let base = self.fit(sel.target, &sel.conditioning)?;
        let mut all = sel.conditioning.clone();
        all.extend(sel.sources.iter().copied());
        let full = self.fit(sel.target, &all)?;
        if base.entropy_rate <= 0.0 {
            return Err(EstimateError::ZeroDenominator(sel.target));
        }
        let normalized = if sel.sources.is_empty() {
            0.0
        } else {
            (base.entropy_rate - full.entropy_rate) / base.entropy_rate
        };
        let est = RateEstimate {
            target: sel.target,
            sources: sel.sources.iter().copied().collect(),
            conditioning: sel.conditioning.iter().copied().collect(),
            h_base: base.entropy_rate,
            h_full: full.entropy_rate,
            normalized,
            rows: full.model.fit.as_ref().map_or(0, |f| f.rows),
        };
        self.rates.lock().insert(sel.clone(), est.clone());
        Ok(est)
    }

    /// Every rate computed so far, sorted by selector.
    pub fn rate_table(&self) -> Vec<RateEstimate> {
        let rates = self.rates.lock();
        let mut keys: Vec<&ProcessSelector> = rates.keys().collect();
        keys.sort();
        keys.into_iter().map(|k| rates[k].clone()).collect()
    }

    /// Every fit computed so far, sorted by key.
    pub fn fit_table(&self) -> Vec<Arc<FitSummary>> {
        let fits = self.fits.lock();
        let mut keys: Vec<&FitKey> = fits.keys().collect();
        keys.sort();
        keys.into_iter().map(|k| fits[k].clone()).collect()
    }
}

impl DiBackend for EstimatedBackend {
    fn m(&self) -> usize {
        self.panel.m()
    }

    fn evaluate(&self, sel: &ProcessSelector) -> Result<InfoValue, StructureError> {
        let r = self.rate(sel)?;
        Ok(InfoValue::normalized_estimate(r.normalized, r.h_base))
    }
}

/// Normalized rate of `sources` into `target` given `conditioning`.
pub fn normalized_di_rate(
    panel: &ProcessPanel,
    sel: &ProcessSelector,
    opts: &GlmOptions,
) -> Result<RateEstimate, EstimateError> {
    let backend = EstimatedBackend::new(Arc::new(panel.clone()), *opts)?;
    backend.rate(sel)
}

/// Oracle answering selector queries with normalized rate estimates.
pub fn make_estimated_oracle(
    panel: Arc<ProcessPanel>,
    opts: GlmOptions,
) -> Result<DiOracle<EstimatedBackend>, EstimateError> {
    Ok(DiOracle::new(EstimatedBackend::new(panel, opts)?))
}

/// BIC score of one candidate history length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderScore {
    pub window: usize,
    pub bic: f64,
}

/// Picks the history length minimizing `-2 LL + p ln N` among `candidates`.
/// All candidates are scored on the same rows so the scores are comparable.
/// This is a BIC stand-in for a minimum-description-length criterion.
pub fn select_order_bic(
    panel: &ProcessPanel,
    target: usize,
    conditioning: &BTreeSet<usize>,
    candidates: &[usize],
    opts: &GlmOptions,
) -> Result<(usize, Vec<OrderScore>), EstimateError> {
    check_panel(panel, conditioning.iter().copied().chain([target]))?;
    let start = *candidates.iter().max().ok_or(EstimateError::BadWindow)?;
    let regressors = regressor_list(target, conditioning);
    let mut scores = Vec::new();
    for &w in candidates {
        let o = GlmOptions { window: w, ..*opts };
        let design = build_design(panel, target, &regressors, w, start);
        let fitted = fit_design(&design, target, regressors.clone(), &o)?;
        let n = design.rows as f64;
        let ll = design.log_likelihood(&fitted.model.coefficients, o.bin_width.ln()) * n;
        let p = fitted.model.coefficients.len() as f64;
        scores.push(OrderScore {
            window: w,
            bic: -2.0 * ll + p * n.ln(),
        });
    }
    let best = scores
        .iter()
        .min_by(|a, b| a.bic.total_cmp(&b.bic))
        .map(|s| s.window)
        .ok_or(EstimateError::BadWindow)?;
    Ok((best, scores))
}

fn join(xs: &[usize], names: &[String]) -> String {
    xs.iter()
        .map(|&x| names.get(x).cloned().unwrap_or_else(|| x.to_string()))
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes the estimates table:
/// `target,sources,conditioning,h_base,h_full,normalized`.
pub fn write_rates_csv<W: Write>(
    mut out: W,
    rates: &[RateEstimate],
    names: &[String],
) -> Result<(), EstimateError> {
    writeln!(out, "target,sources,conditioning,h_base,h_full,normalized")?;
    for r in rates {
        writeln!(
            out,
            "{},{},{},{:.9},{:.9},{:.9}",
            names
                .get(r.target)
                .cloned()
                .unwrap_or_else(|| r.target.to_string()),
            join(&r.sources, names),
            join(&r.conditioning, names),
            r.h_base,
            r.h_full,
            r.normalized
        )?;
    }
    Ok(())
}
