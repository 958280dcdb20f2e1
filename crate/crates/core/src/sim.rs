//! Seeded synthetic systems: point-process GLM networks, random positive
//! generative models, and small reference models with known structure.
//!
//! Randomness comes from ChaCha8 generators. Within one seed, stream `i` drives
//! the events of process `i` and stream [`COEFFICIENT_STREAM`] draws the
//! network coefficients, so results do not depend on evaluation order.

use crate::estimate::GlmPointProcessModel;
use crate::model::{
    window_context, Alphabet, GenerativeModel, GenerativeModelBuilder, ModelError, ProcessPanel,
    Trajectory, Var,
};
use crate::structure::DirectedGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

pub const COEFFICIENT_STREAM: u64 = 1 << 32;
const MAX_EVENT_PROB: f64 = 1.0 - 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("intensity of process {process} overflowed at bin {bin} (log intensity {log_intensity}); rescale the coefficients")]
    IntensityOverflow {
        process: usize,
        bin: usize,
        log_intensity: f64,
    },
    #[error("process {process} saturated in {fraction:.3} of bins; rescale the coefficients")]
    Saturated { process: usize, fraction: f64 },
    #[error("could not satisfy the effect floor for {0} within the retry budget")]
    RetryBudget(Var),
}

/// Mean and standard deviation of a normal coefficient distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalSpec {
    pub mean: f64,
    pub sd: f64,
}

/// Configuration of a GLM point-process network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m: usize,
    pub n: usize,
    pub parents: Vec<BTreeSet<usize>>,
    #[serde(default)]
    pub names: Option<Vec<String>>,
    /// History length of every process, in bins.
    pub window: usize,
    /// Baseline event rate in events per second; sets the intercept.
    pub baseline_rate: f64,
    /// Distribution of the own-history coefficients.
    pub self_weights: NormalSpec,
    /// Distribution of the parent-history coefficients.
    pub cross_weights: NormalSpec,
    /// Bin width in seconds.
    pub bin_width: f64,
    pub seed: u64,
    /// Largest tolerated fraction of bins where `lambda * D` reaches 1.
    #[serde(default = "default_saturation")]
    pub max_saturation: f64,
}

/// Default largest fraction of saturated bins per process.
pub const DEFAULT_MAX_SATURATION: f64 = 0.05;

fn default_saturation() -> f64 {
    DEFAULT_MAX_SATURATION
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::Config(s));
        if self.m == 0 {
            return bad("m must be positive".into());
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.parents.len() != self.m {
            return bad(format!(
                "{} parent sets for {} processes",
                self.parents.len(),
                self.m
            ));
        }
        for (i, ps) in self.parents.iter().enumerate() {
            if ps.contains(&i) || ps.iter().any(|&p| p >= self.m) {
                return bad(format!("invalid parent set for process {i}"));
            }
        }
        if let Some(names) = &self.names {
            if names.len() != self.m {
                return bad("one name per process is required".into());
            }
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return bad("bin width must be positive".into());
        }
        if !(self.baseline_rate > 0.0 && self.baseline_rate.is_finite()) {
            return bad("baseline rate must be positive".into());
        }
        for s in [self.self_weights, self.cross_weights] {
            if !(s.sd >= 0.0 && s.sd.is_finite() && s.mean.is_finite()) {
                return bad("weight distributions need finite mean and nonnegative sd".into());
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> DirectedGraph {
        let g = DirectedGraph::from_parents(self.parents.clone()).expect("validated parents");
        match &self.names {
            Some(n) => g.with_names(n.clone()).expect("validated names"),
            None => g,
        }
    }
}

/// Draws the ground-truth intensity models of a configuration.
pub fn draw_glm_models(cfg: &SimConfig) -> Result<Vec<GlmPointProcessModel>, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(COEFFICIENT_STREAM);
    let own = Normal::new(cfg.self_weights.mean, cfg.self_weights.sd)
        .map_err(|e| SimError::Config(e.to_string()))?;
    let cross = Normal::new(cfg.cross_weights.mean, cfg.cross_weights.sd)
        .map_err(|e| SimError::Config(e.to_string()))?;
    let a0 = cfg.baseline_rate.ln();
    Ok((0..cfg.m)
        .map(|i| {
            let mut regs = cfg.parents[i].clone();
            regs.insert(i);
            let regressors: Vec<usize> = regs.into_iter().collect();
            let mut coefficients = vec![a0];
            for &r in &regressors {
                let dist = if r == i { &own } else { &cross };
                coefficients.extend((0..cfg.window).map(|_| dist.sample(&mut rng)));
            }
            GlmPointProcessModel::new(i, regressors, cfg.window, coefficients, cfg.bin_width)
        })
        .collect())
}

/// Samples `n` bins from explicit intensity models (one per process, indexed by
/// target). Each bin is Bernoulli with probability `min(lambda D, 1 - 1e-9)`.
pub fn simulate_with_models(
    models: &[GlmPointProcessModel],
    n: usize,
    seed: u64,
    max_saturation: f64,
) -> Result<ProcessPanel, SimError> {
    let m = models.len();
    for (i, md) in models.iter().enumerate() {
        if md.target != i || md.regressors.iter().any(|&r| r >= m) {
            return Err(SimError::Config(format!(
                "model {i} does not match its slot"
            )));
        }
        if !md.is_finite() {
            return Err(SimError::Config(format!(
                "model {i} has non-finite coefficients"
            )));
        }
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..m)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut series = vec![vec![0u8; n]; m];
    let mut saturated = vec![0usize; m];
    for j in 0..n {
        for (i, md) in models.iter().enumerate() {
            let mut eta = md.intercept();
            for (r, &p) in md.regressors.iter().enumerate() {
                let s = &series[p];
                for (l, c) in md.lags(r).iter().enumerate() {
                    let lag = l + 1;
                    if lag <= j && s[j - lag] == 1 {
                        eta += c;
                    }
                }
            }
            let p = eta.exp() * md.bin_width;
            if !p.is_finite() {
                return Err(SimError::IntensityOverflow {
                    process: i,
                    bin: j,
                    log_intensity: eta,
                });
            }
            if p >= 1.0 {
                saturated[i] += 1;
            }
            series[i][j] = rngs[i].gen_bool(p.min(MAX_EVENT_PROB)) as u8;
        }
    }
    for (i, &s) in saturated.iter().enumerate() {
        let fraction = s as f64 / n.max(1) as f64;
        if fraction > max_saturation {
            return Err(SimError::Saturated {
                process: i,
                fraction,
            });
        }
    }
    let traj = Trajectory::from_rows(&series)?;
    Ok(ProcessPanel::new(vec![Alphabet::BINARY; m], n, vec![traj])?)
}

/// Draws coefficients and simulates one trajectory of the network.
pub fn simulate_glm_network(
    cfg: &SimConfig,
) -> Result<(ProcessPanel, Vec<GlmPointProcessModel>), SimError> {
    let models = draw_glm_models(cfg)?;
    let panel = simulate_with_models(&models, cfg.n, cfg.seed, cfg.max_saturation)?;
    Ok((panel, models))
}

/// Names of the six-process reference network.
pub const REFERENCE_NAMES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

/// Edge list `(from, to)` of the six-process reference network.
///
/// A has three parents (B, C, E) and is the only node with three; C has D and
/// F; there is no D -> B edge. The remaining edges (F -> B, A -> D, F -> E)
/// complete a network with one directed cycle (A -> D -> C -> A).
pub const REFERENCE_EDGES: [(usize, usize); 8] = [
    (1, 0),
    (2, 0),
    (4, 0),
    (5, 1),
    (3, 2),
    (5, 2),
    (0, 3),
    (5, 4),
];

pub fn reference_network() -> DirectedGraph {
    DirectedGraph::from_edges(6, &REFERENCE_EDGES)
        .expect("static edge list")
        .with_names(REFERENCE_NAMES.iter().map(|s| s.to_string()).collect())
        .expect("six names")
}

/// Calibrated configuration of the six-process reference network: 20 events/s
/// baseline, 1 ms bins, six-bin histories, refractory own-history weights and
/// excitatory parent weights.
pub fn reference_config(n: usize, seed: u64) -> SimConfig {
    SimConfig {
        m: 6,
        n,
        parents: reference_network().parent_map().to_vec(),
        names: Some(REFERENCE_NAMES.iter().map(|s| s.to_string()).collect()),
        window: 6,
        baseline_rate: 20.0,
        self_weights: NormalSpec {
            mean: -3.0,
            sd: 0.5,
        },
        cross_weights: NormalSpec { mean: 1.8, sd: 0.3 },
        bin_width: 1e-3,
        seed,
        max_saturation: default_saturation(),
    }
}

/// Parameters of [`random_generative_model`].
#[derive(Clone, Debug, PartialEq)]
pub struct RandomModelSpec {
    pub alphabets: Vec<Alphabet>,
    pub n: usize,
    pub max_in_degree: usize,
    /// Lower bound on every conditional probability, in `(0, 0.5)`.
    pub noise_floor: f64,
    /// Minimum total variation between two rows of a factor whose contexts
    /// differ only in the symbols of one parent process.
    pub effect_floor: f64,
    /// Resampling attempts per row before giving up.
    pub retry_budget: usize,
    pub seed: u64,
}

impl RandomModelSpec {
    pub fn binary(m: usize, n: usize, max_in_degree: usize, seed: u64) -> Self {
        RandomModelSpec {
            alphabets: vec![Alphabet::BINARY; m],
            n,
            max_in_degree,
            noise_floor: 0.05,
            effect_floor: 0.05,
            retry_budget: 10_000,
            seed,
        }
    }
}

fn random_row(rng: &mut ChaCha8Rng, size: usize, floor: f64) -> Vec<f64> {
    // uniform point on the simplex, then shrunk so every entry is >= floor
    let e: Vec<f64> = (0..size)
        .map(|_| -rng.gen::<f64>().max(1e-300).ln())
        .collect();
    let s: f64 = e.iter().sum();
    let free = 1.0 - floor * size as f64;
    let mut row: Vec<f64> = e.iter().map(|x| floor + free * x / s).collect();
    let total: f64 = row.iter().sum();
    let last = row.len() - 1;
    row[last] += 1.0 - total;
    row
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Random positive model with a random parent map of bounded in-degree and
/// full-history window `n - 1`. Every declared parent shifts the conditional
/// row by at least the effect floor whenever only its symbols change.
pub fn random_generative_model(spec: &RandomModelSpec) -> Result<GenerativeModel, SimError> {
    let m = spec.alphabets.len();
    if !(spec.noise_floor > 0.0 && spec.noise_floor < 0.5) {
        return Err(SimError::Config("noise floor must lie in (0, 0.5)".into()));
    }
    if spec.n == 0 || m == 0 {
        return Err(SimError::Config("m and n must be positive".into()));
    }
    if spec
        .alphabets
        .iter()
        .any(|a| spec.noise_floor * a.size() as f64 >= 1.0)
    {
        return Err(SimError::Config(
            "noise floor too large for the alphabet".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_deg = spec.max_in_degree.min(m - 1);
    let mut parents = Vec::with_capacity(m);
    for i in 0..m {
        let deg = rng.gen_range(0..=max_deg);
        let mut others: Vec<usize> = (0..m).filter(|&p| p != i).collect();
        for k in 0..deg {
            let j = rng.gen_range(k..others.len());
            others.swap(k, j);
        }
        parents.push(others[..deg].to_vec());
    }
    let window = spec.n - 1;
    let mut b = GenerativeModelBuilder::new(spec.alphabets.clone(), spec.n, window);
    for (i, ps) in parents.iter().enumerate() {
        b = b.parents(i, ps)?;
    }
    let parent_sets: Vec<BTreeSet<usize>> = parents
        .iter()
        .map(|ps| ps.iter().copied().collect())
        .collect();
    for i in 0..m {
        let a = spec.alphabets[i].size();
        for t in 0..spec.n {
            let context = window_context(&parent_sets, window, i, t);
            let radices: Vec<usize> = context
                .iter()
                .map(|v| spec.alphabets[v.process].size())
                .collect();
            let rows: usize = radices.iter().product();
            let mut table: Vec<Vec<f64>> = Vec::with_capacity(rows);
            for r in 0..rows {
                let digits = decode(r, &radices);
                let mut tries = 0;
                let row = loop {
                    let row = random_row(&mut rng, a, spec.noise_floor);
                    let ok = (0..r).all(|q| {
                        let other = decode(q, &radices);
                        match differing_process(&context, &digits, &other) {
                            Some(p) if p != i => {
                                total_variation(&row, &table[q]) >= spec.effect_floor
                            }
                            _ => true,
                        }
                    });
                    if ok {
                        break row;
                    }
                    tries += 1;
                    if tries > spec.retry_budget {
                        return Err(SimError::RetryBudget(Var::new(i, t)));
                    }
                };
                table.push(row);
            }
            b = b.factor(i, t, context, table.concat())?;
        }
    }
    Ok(b.build()?)
}

fn decode(mut code: usize, radices: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for k in (0..radices.len()).rev() {
        out[k] = code % radices[k];
        code /= radices[k];
    }
    out
}

/// The single process on which two contexts differ, if they differ on exactly
/// one process.
fn differing_process(context: &[Var], a: &[usize], b: &[usize]) -> Option<usize> {
    let mut proc = None;
    for (k, v) in context.iter().enumerate() {
        if a[k] != b[k] {
            match proc {
                None => proc = Some(v.process),
                Some(p) if p == v.process => {}
                Some(_) => return None,
            }
        }
    }
    proc
}

fn bern(p1: f64) -> Vec<f64> {
    vec![1.0 - p1, p1]
}

fn check_flip(p: f64) -> Result<(), SimError> {
    if !(p > 0.0 && p <= 0.5) {
        return Err(SimError::Config(format!(
            "flip probability {p} must lie in (0, 0.5]"
        )));
    }
    Ok(())
}

/// Four binary processes W, X, Y, Z (indices 0..4). W and X are iid fair
/// coins, `Y_t` is `W_{t-1} xor X_{t-1}` and `Z_t` is `W_{t-2} xor X_{t-2}`,
/// each flipped with probability `p`; earlier times are fair coins.
pub fn xor_system(p: f64, n: usize) -> Result<GenerativeModel, SimError> {
    check_flip(p)?;
    if n < 3 {
        return Err(SimError::Config("the xor system needs n >= 3".into()));
    }
    let xor_table = || {
        let mut t = Vec::new();
        for w in 0..2 {
            for x in 0..2 {
                t.extend(bern(if w ^ x == 1 { 1.0 - p } else { p }));
            }
        }
        t
    };
    let mut b = GenerativeModelBuilder::binary(4, n, 2)
        .names(["W", "X", "Y", "Z"])
        .parents(2, &[0, 1])?
        .parents(3, &[0, 1])?;
    for t in 0..n {
        b = b
            .factor(0, t, vec![], bern(0.5))?
            .factor(1, t, vec![], bern(0.5))?;
        b = if t >= 1 {
            b.factor(
                2,
                t,
                vec![Var::new(0, t - 1), Var::new(1, t - 1)],
                xor_table(),
            )?
        } else {
            b.factor(2, t, vec![], bern(0.5))?
        };
        b = if t >= 2 {
            b.factor(
                3,
                t,
                vec![Var::new(0, t - 2), Var::new(1, t - 2)],
                xor_table(),
            )?
        } else {
            b.factor(3, t, vec![], bern(0.5))?
        };
    }
    Ok(b.build()?)
}

/// Two binary processes X, Y: X is iid fair, `Y_0` is fair and `Y_t` copies
/// `X_{t-1}` with flip probability `p`.
pub fn noisy_copy(p: f64, n: usize) -> Result<GenerativeModel, SimError> {
    check_flip(p)?;
    let mut b = GenerativeModelBuilder::binary(2, n, 1)
        .names(["X", "Y"])
        .parents(1, &[0])?;
    for t in 0..n {
        b = b.factor(0, t, vec![], bern(0.5))?;
        b = if t == 0 {
            b.factor(1, t, vec![], bern(0.5))?
        } else {
            b.factor(
                1,
                t,
                vec![Var::new(0, t - 1)],
                [bern(p), bern(1.0 - p)].concat(),
            )?
        };
    }
    Ok(b.build()?)
}

/// Three binary processes X, Y, Z with X and Y driving each other and Y
/// driving Z, each step depending on the previous one:
/// `P(X_t=1) = 0.15 + 0.5 y + 0.2 x`, `P(Y_t=1) = 0.2 + 0.55 x + 0.15 y`,
/// `P(Z_t=1) = 0.1 + 0.6 y + 0.2 z` (all at `t - 1`); time 0 is fair.
pub fn coupled_pair_with_follower(n: usize) -> Result<GenerativeModel, SimError> {
    let b = GenerativeModelBuilder::binary(3, n, 1)
        .names(["X", "Y", "Z"])
        .parents(0, &[1])?
        .parents(1, &[0])?
        .parents(2, &[1])?;
    let rules: [fn(&[u8]) -> f64; 3] = [
        // contexts are [X_{t-1}, Y_{t-1}] for X and Y, [Y_{t-1}, Z_{t-1}] for Z
        |c| 0.15 + 0.2 * c[0] as f64 + 0.5 * c[1] as f64,
        |c| 0.2 + 0.55 * c[0] as f64 + 0.15 * c[1] as f64,
        |c| 0.1 + 0.6 * c[0] as f64 + 0.2 * c[1] as f64,
    ];
    let mut b = b;
    for t in 0..n {
        for (i, rule) in rules.iter().enumerate() {
            b = if t == 0 {
                b.factor(i, 0, vec![], bern(0.5))?
            } else {
                b.window_factor(i, t, |c| bern(rule(c)))?
            };
        }
    }
    Ok(b.build()?)
}

/// The generating parent map of a model as a graph.
pub fn model_graph(model: &GenerativeModel) -> DirectedGraph {
    DirectedGraph::from_parents(model.parent_map().to_vec())
        .expect("model parents are valid")
        .with_names(model.names().to_vec())
        .expect("model names are distinct")
}
