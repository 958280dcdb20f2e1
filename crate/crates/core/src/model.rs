//! Finite-alphabet process panels and positive generative models.
//!
//! A [`GenerativeModel`] describes `m` processes over `n` time steps (times are
//! 0-based). Every variable `X_{i,t}` has one conditional table (a [`Factor`])
//! that may only read variables of its own process or of its declared parents,
//! at times strictly before `t` and no older than the model window. The joint
//! distribution is the product of all factors, so the near future of the
//! processes decouples given the full past.
//!
//! [`enumerate_joint`] expands the model into an exact [`Joint`] table over all
//! trajectories, which is the substrate of the exact information engine.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use thiserror::Error;

/// Default upper bound on the number of enumerated trajectories.
pub const DEFAULT_STATE_CAP: usize = 1 << 24;
/// Smallest conditional probability accepted as "positive".
pub const DEFAULT_POSITIVITY_FLOOR: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("alphabet size {0} is degenerate, at least 2 symbols are required")]
    DegenerateAlphabet(usize),
    #[error("process index {index} out of range for {m} processes")]
    ProcessOutOfRange { index: usize, m: usize },
    #[error("time {time} out of range for horizon {n}")]
    TimeOutOfRange { time: usize, n: usize },
    #[error("process {0} lists itself as a parent")]
    SelfParent(usize),
    #[error("trajectory shape {got_m}x{got_n} does not match {m}x{n}")]
    ShapeMismatch {
        m: usize,
        n: usize,
        got_m: usize,
        got_n: usize,
    },
    #[error("symbol {symbol} of process {process} at time {time} is outside its alphabet of size {size}")]
    SymbolOutOfRange {
        process: usize,
        time: usize,
        symbol: usize,
        size: usize,
    },
    #[error("factor of {target} conditions on {var}, which is not strictly in its past")]
    FutureConditioning { target: Var, var: Var },
    #[error("factor of {target} conditions on {var}, outside the window of {window} steps")]
    OutsideWindow {
        target: Var,
        var: Var,
        window: usize,
    },
    #[error("factor of {target} conditions on {var}, whose process is not a declared parent")]
    UndeclaredParent { target: Var, var: Var },
    #[error("factor of {target} lists {var} twice")]
    DuplicateContext { target: Var, var: Var },
    #[error("no factor was given for {0}")]
    MissingFactor(Var),
    #[error("factor of {target} has {got} probabilities, expected {expected}")]
    TableSize {
        target: Var,
        got: usize,
        expected: usize,
    },
    #[error("row {row} of the factor of {target} sums to {sum}")]
    RowSum { target: Var, row: usize, sum: f64 },
    #[error("model is not positive: {} table entries below the floor", .0.violations.len())]
    NotPositive(PositivityReport),
    #[error("{states} trajectories exceed the enumeration cap of {cap}; use the estimation path")]
    StateSpaceTooLarge { states: f64, cap: usize },
    #[error("conditioning set contains {var}, which is not strictly before the target {target}")]
    ConditionsOnFuture { target: Var, var: Var },
    #[error("panel parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Size of a finite alphabet; symbols are `0..size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Alphabet(usize);

impl Alphabet {
    pub fn new(size: usize) -> Result<Self, ModelError> {
        if !(2..=256).contains(&size) {
            return Err(ModelError::DegenerateAlphabet(size));
        }
        Ok(Alphabet(size))
    }

    pub const BINARY: Alphabet = Alphabet(2);

    pub fn size(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for Alphabet {
    type Error = ModelError;
    fn try_from(v: usize) -> Result<Self, Self::Error> {
        Alphabet::new(v)
    }
}

impl From<Alphabet> for usize {
    fn from(a: Alphabet) -> usize {
        a.0
    }
}

/// A single random variable `X_{process, time}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Var {
    pub process: usize,
    pub time: usize,
}

impl Var {
    pub fn new(process: usize, time: usize) -> Self {
        Var { process, time }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "X[{},{}]", self.process, self.time)
    }
}

/// One realization of all processes: an `m x n` matrix of symbols.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Trajectory {
    m: usize,
    n: usize,
    // process-major: symbols[i * n + t]
    symbols: Vec<u8>,
}

impl Trajectory {
    pub fn zeros(m: usize, n: usize) -> Self {
        Trajectory {
            m,
            n,
            symbols: vec![0; m * n],
        }
    }

    /// Builds a trajectory from one row of symbols per process.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, ModelError> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(ModelError::ShapeMismatch {
                m,
                n,
                got_m: m,
                got_n: bad.len(),
            });
        }
        Ok(Trajectory {
            m,
            n,
            symbols: rows.concat(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, process: usize, time: usize) -> u8 {
        self.symbols[process * self.n + time]
    }

    pub fn set(&mut self, process: usize, time: usize, symbol: u8) {
        self.symbols[process * self.n + time] = symbol;
    }

    pub fn at(&self, v: Var) -> u8 {
        self.get(v.process, v.time)
    }

    /// The full time series of one process.
    pub fn series(&self, process: usize) -> &[u8] {
        &self.symbols[process * self.n..(process + 1) * self.n]
    }

    fn check(&self, alphabets: &[Alphabet], n: usize) -> Result<(), ModelError> {
        if self.m != alphabets.len() || self.n != n {
            return Err(ModelError::ShapeMismatch {
                m: alphabets.len(),
                n,
                got_m: self.m,
                got_n: self.n,
            });
        }
        for (i, a) in alphabets.iter().enumerate() {
            for t in 0..n {
                let s = self.get(i, t) as usize;
                if s >= a.size() {
                    return Err(ModelError::SymbolOutOfRange {
                        process: i,
                        time: t,
                        symbol: s,
                        size: a.size(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Sampled trajectories of `m` finite-alphabet processes over a common horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessPanel {
    alphabets: Vec<Alphabet>,
    n: usize,
    trajectories: Vec<Trajectory>,
}

impl ProcessPanel {
    pub fn new(
        alphabets: Vec<Alphabet>,
        n: usize,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self, ModelError> {
        for tr in &trajectories {
            tr.check(&alphabets, n)?;
        }
        Ok(ProcessPanel {
            alphabets,
            n,
            trajectories,
        })
    }

    pub fn m(&self) -> usize {
        self.alphabets.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alphabets(&self) -> &[Alphabet] {
        &self.alphabets
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn is_binary(&self) -> bool {
        self.alphabets.iter().all(|a| a.size() == 2)
    }

    /// Writes the panel CSV: header `t,p0,...`, one row per time step, and a
    /// blank line between trajectories.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        let m = self.m();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..m).map(|i| format!("p{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for (k, tr) in self.trajectories.iter().enumerate() {
            if k > 0 {
                writeln!(out)?;
            }
            for t in 0..self.n {
                line.clear();
                line.push_str(&t.to_string());
                for i in 0..m {
                    line.push(',');
                    line.push_str(&tr.get(i, t).to_string());
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    /// Parses the panel CSV. When `alphabets` is `None` each process gets the
    /// smallest alphabet covering its observed symbols (at least binary).
    pub fn read_csv<R: BufRead>(
        input: R,
        alphabets: Option<Vec<Alphabet>>,
    ) -> Result<Self, ModelError> {
        let mut lines = input.lines().enumerate();
        let m = loop {
            let Some((no, line)) = lines.next() else {
                return Err(ModelError::Parse {
                    line: 0,
                    msg: "empty input".into(),
                });
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.trim().split(',').map(str::trim).collect();
            if cols.first() != Some(&"t") || cols.len() < 2 {
                return Err(ModelError::Parse {
                    line: no + 1,
                    msg: "header must be t,p0,p1,...".into(),
                });
            }
            for (k, c) in cols[1..].iter().enumerate() {
                if *c != format!("p{k}") {
                    return Err(ModelError::Parse {
                        line: no + 1,
                        msg: format!("expected column p{k}, found {c}"),
                    });
                }
            }
            break cols.len() - 1;
        };

        let mut series: Vec<Vec<Vec<u8>>> = Vec::new();
        let mut current: Vec<Vec<u8>> = vec![Vec::new(); m];
        let flush = |current: &mut Vec<Vec<u8>>, series: &mut Vec<Vec<Vec<u8>>>| {
            if !current[0].is_empty() {
                series.push(std::mem::replace(current, vec![Vec::new(); m]));
            }
        };
        for (no, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                flush(&mut current, &mut series);
                continue;
            }
            let mut cols = line.trim().split(',').map(str::trim);
            let t: usize =
                cols.next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| ModelError::Parse {
                        line: no + 1,
                        msg: "bad time column".into(),
                    })?;
            if t != current[0].len() {
                return Err(ModelError::Parse {
                    line: no + 1,
                    msg: format!("expected t = {}, found {t}", current[0].len()),
                });
            }
            let mut count = 0;
            for (i, c) in cols.enumerate() {
                if i >= m {
                    return Err(ModelError::Parse {
                        line: no + 1,
                        msg: "too many columns".into(),
                    });
                }
                let s: u8 = c.parse().map_err(|_| ModelError::Parse {
                    line: no + 1,
                    msg: format!("bad symbol {c:?}"),
                })?;
                current[i].push(s);
                count += 1;
            }
            if count != m {
                return Err(ModelError::Parse {
                    line: no + 1,
                    msg: format!("expected {m} symbols, found {count}"),
                });
            }
        }
        flush(&mut current, &mut series);

        let n = series.first().map_or(0, |s| s[0].len());
        let trajectories = series
            .iter()
            .map(|rows| Trajectory::from_rows(rows))
            .collect::<Result<Vec<_>, _>>()?;
        let alphabets = match alphabets {
            Some(a) => a,
            None => (0..m)
                .map(|i| {
                    let max = trajectories
                        .iter()
                        .flat_map(|tr| tr.series(i).iter().copied())
                        .max()
                        .unwrap_or(0) as usize;
                    Alphabet::new((max + 1).max(2))
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        ProcessPanel::new(alphabets, n, trajectories)
    }
}

/// Conditional table of one variable given an explicit list of past variables.
///
/// Rows are indexed by the context symbols in mixed radix (first context
/// variable most significant); each row is a pmf over the target alphabet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub process: usize,
    pub time: usize,
    pub context: Vec<Var>,
    pub probs: Vec<f64>,
}

impl Factor {
    pub fn target(&self) -> Var {
        Var::new(self.process, self.time)
    }

    fn row_index(&self, alphabets: &[Alphabet], symbol_of: impl Fn(Var) -> usize) -> usize {
        self.context.iter().fold(0, |acc, v| {
            acc * alphabets[v.process].size() + symbol_of(*v)
        })
    }
}

/// A positive joint distribution given as a product of per-variable factors.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeModel {
    alphabets: Vec<Alphabet>,
    n: usize,
    window: usize,
    parents: Vec<BTreeSet<usize>>,
    // indexed [process * n + time]
    factors: Vec<Factor>,
    names: Vec<String>,
}

impl GenerativeModel {
    pub fn m(&self) -> usize {
        self.alphabets.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn alphabets(&self) -> &[Alphabet] {
        &self.alphabets
    }

    pub fn parents(&self, process: usize) -> &BTreeSet<usize> {
        &self.parents[process]
    }

    pub fn parent_map(&self) -> &[BTreeSet<usize>] {
        &self.parents
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn factor(&self, process: usize, time: usize) -> &Factor {
        &self.factors[process * self.n + time]
    }

    pub fn factors(&self) -> impl Iterator<Item = &Factor> {
        self.factors.iter()
    }

    /// Every variable the factor of `(process, time)` may legally read, in
    /// canonical order (process ascending, then time ascending).
    pub fn window_context(&self, process: usize, time: usize) -> Vec<Var> {
        window_context(&self.parents, self.window, process, time)
    }

    /// Conditional pmf row of `X_{process,time}` for the given trajectory.
    pub fn conditional_row(&self, process: usize, time: usize, traj: &Trajectory) -> &[f64] {
        let f = self.factor(process, time);
        let a = self.alphabets[process].size();
        let r = f.row_index(&self.alphabets, |v| traj.at(v) as usize);
        &f.probs[r * a..(r + 1) * a]
    }

    /// Total number of trajectories, as a float to avoid overflow.
    pub fn state_count(&self) -> f64 {
        self.alphabets
            .iter()
            .map(|a| (a.size() as f64).powi(self.n as i32))
            .product()
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.into_model()
    }
}

/// The canonical context of a full-window factor.
pub fn window_context(
    parents: &[BTreeSet<usize>],
    window: usize,
    process: usize,
    time: usize,
) -> Vec<Var> {
    let lo = time.saturating_sub(window);
    let mut procs: BTreeSet<usize> = parents[process].clone();
    procs.insert(process);
    procs
        .into_iter()
        .flat_map(|p| (lo..time).map(move |t| Var::new(p, t)))
        .collect()
}

/// Incrementally assembles and validates a [`GenerativeModel`].
#[derive(Clone, Debug)]
pub struct GenerativeModelBuilder {
    alphabets: Vec<Alphabet>,
    n: usize,
    window: usize,
    parents: Vec<BTreeSet<usize>>,
    factors: BTreeMap<(usize, usize), Factor>,
    names: Option<Vec<String>>,
    floor: f64,
}

impl GenerativeModelBuilder {
    pub fn new(alphabets: Vec<Alphabet>, n: usize, window: usize) -> Self {
        let m = alphabets.len();
        GenerativeModelBuilder {
            alphabets,
            n,
            window,
            parents: vec![BTreeSet::new(); m],
            factors: BTreeMap::new(),
            names: None,
            floor: DEFAULT_POSITIVITY_FLOOR,
        }
    }

    pub fn binary(m: usize, n: usize, window: usize) -> Self {
        Self::new(vec![Alphabet::BINARY; m], n, window)
    }

    pub fn names<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.names = Some(names.into_iter().map(Into::into).collect());
        self
    }

    pub fn positivity_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn parents(mut self, process: usize, parents: &[usize]) -> Result<Self, ModelError> {
        let m = self.alphabets.len();
        if process >= m {
            return Err(ModelError::ProcessOutOfRange { index: process, m });
        }
        for &p in parents {
            if p >= m {
                return Err(ModelError::ProcessOutOfRange { index: p, m });
            }
            if p == process {
                return Err(ModelError::SelfParent(process));
            }
        }
        self.parents[process] = parents.iter().copied().collect();
        Ok(self)
    }

    /// Adds the factor of `X_{process,time}`. Parents must be declared first so
    /// the context can be checked.
    pub fn factor(
        mut self,
        process: usize,
        time: usize,
        context: Vec<Var>,
        probs: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let m = self.alphabets.len();
        if process >= m {
            return Err(ModelError::ProcessOutOfRange { index: process, m });
        }
        if time >= self.n {
            return Err(ModelError::TimeOutOfRange { time, n: self.n });
        }
        let target = Var::new(process, time);
        let mut seen = BTreeSet::new();
        for &v in &context {
            if v.process >= m {
                return Err(ModelError::ProcessOutOfRange {
                    index: v.process,
                    m,
                });
            }
            if v.time >= time {
                return Err(ModelError::FutureConditioning { target, var: v });
            }
            if v.time + self.window < time {
                return Err(ModelError::OutsideWindow {
                    target,
                    var: v,
                    window: self.window,
                });
            }
            if v.process != process && !self.parents[process].contains(&v.process) {
                return Err(ModelError::UndeclaredParent { target, var: v });
            }
            if !seen.insert(v) {
                return Err(ModelError::DuplicateContext { target, var: v });
            }
        }
        let rows: usize = context
            .iter()
            .map(|v| self.alphabets[v.process].size())
            .product();
        let a = self.alphabets[process].size();
        if probs.len() != rows * a {
            return Err(ModelError::TableSize {
                target,
                got: probs.len(),
                expected: rows * a,
            });
        }
        for (r, row) in probs.chunks(a).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(ModelError::RowSum {
                    target,
                    row: r,
                    sum,
                });
            }
        }
        self.factors.insert(
            (process, time),
            Factor {
                process,
                time,
                context,
                probs,
            },
        );
        Ok(self)
    }

    /// Adds a factor that reads the full window of own and parent history.
    /// `row_fn` receives the context symbols in [`window_context`] order.
    pub fn window_factor(
        self,
        process: usize,
        time: usize,
        mut row_fn: impl FnMut(&[u8]) -> Vec<f64>,
    ) -> Result<Self, ModelError> {
        let context = window_context(&self.parents, self.window, process, time);
        let radices: Vec<usize> = context
            .iter()
            .map(|v| self.alphabets[v.process].size())
            .collect();
        let rows: usize = radices.iter().product();
        let mut probs = Vec::with_capacity(rows * self.alphabets[process].size());
        let mut symbols = vec![0u8; context.len()];
        for r in 0..rows {
            let mut rem = r;
            for k in (0..radices.len()).rev() {
                symbols[k] = (rem % radices[k]) as u8;
                rem /= radices[k];
            }
            probs.extend(row_fn(&symbols));
        }
        self.factor(process, time, context, probs)
    }

    fn assemble(self) -> Result<GenerativeModel, ModelError> {
        let m = self.alphabets.len();
        let mut factors = Vec::with_capacity(m * self.n);
        let mut table = self.factors;
        for i in 0..m {
            for t in 0..self.n {
                let f = table
                    .remove(&(i, t))
                    .ok_or(ModelError::MissingFactor(Var::new(i, t)))?;
                factors.push(f);
            }
        }
        let names = self
            .names
            .unwrap_or_else(|| (0..m).map(|i| format!("p{i}")).collect());
        Ok(GenerativeModel {
            alphabets: self.alphabets,
            n: self.n,
            window: self.window,
            parents: self.parents,
            factors,
            names,
        })
    }

    /// Validates completeness and positivity.
    pub fn build(self) -> Result<GenerativeModel, ModelError> {
        let floor = self.floor;
        let model = self.assemble()?;
        let report = validate_positivity_with_floor(&model, floor);
        if !report.is_ok() {
            return Err(ModelError::NotPositive(report));
        }
        Ok(model)
    }

    /// Like [`build`](Self::build) but skips the positivity check, so that a
    /// degenerate model can still be inspected with [`validate_positivity`].
    pub fn build_unchecked(self) -> Result<GenerativeModel, ModelError> {
        self.assemble()
    }
}

/// A conditional-table entry below the positivity floor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositivityViolation {
    pub process: usize,
    pub time: usize,
    /// Context symbols of the offending row, in the factor's context order.
    pub context: Vec<u8>,
    pub symbol: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PositivityReport {
    pub violations: Vec<PositivityViolation>,
}

impl PositivityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_positivity(model: &GenerativeModel) -> PositivityReport {
    validate_positivity_with_floor(model, DEFAULT_POSITIVITY_FLOOR)
}

pub fn validate_positivity_with_floor(model: &GenerativeModel, floor: f64) -> PositivityReport {
    let mut violations = Vec::new();
    for f in model.factors() {
        let a = model.alphabets[f.process].size();
        let radices: Vec<usize> = f
            .context
            .iter()
            .map(|v| model.alphabets[v.process].size())
            .collect();
        for (r, row) in f.probs.chunks(a).enumerate() {
            for (s, &p) in row.iter().enumerate() {
                if p < floor {
                    violations.push(PositivityViolation {
                        process: f.process,
                        time: f.time,
                        context: decode_mixed(r, &radices),
                        symbol: s,
                        value: p,
                    });
                }
            }
        }
    }
    PositivityReport { violations }
}

fn decode_mixed(mut code: usize, radices: &[usize]) -> Vec<u8> {
    let mut out = vec![0u8; radices.len()];
    for k in (0..radices.len()).rev() {
        out[k] = (code % radices[k]) as u8;
        code /= radices[k];
    }
    out
}

/// Probability of one full trajectory under the model.
pub fn trajectory_probability(
    model: &GenerativeModel,
    traj: &Trajectory,
) -> Result<f64, ModelError> {
    traj.check(&model.alphabets, model.n)?;
    let mut log_p = 0.0;
    for f in model.factors() {
        let a = model.alphabets[f.process].size();
        let r = f.row_index(&model.alphabets, |v| traj.at(v) as usize);
        log_p += f.probs[r * a + traj.get(f.process, f.time) as usize].ln();
    }
    Ok(log_p.exp())
}

/// Exact joint distribution over every trajectory of a model.
///
/// Trajectories are coded in mixed radix over variables ordered time-major
/// (`index = time * m + process`), with variable 0 least significant.
#[derive(Clone, Debug)]
pub struct Joint {
    m: usize,
    n: usize,
    radix: Vec<usize>,
    stride: Vec<usize>,
    probs: Vec<f64>,
}

impl Joint {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn alphabet_size(&self, process: usize) -> usize {
        self.radix[process]
    }

    fn var_index(&self, v: Var) -> usize {
        v.time * self.m + v.process
    }

    /// Symbol of variable `v` in trajectory `code`.
    pub fn symbol(&self, code: usize, v: Var) -> usize {
        let k = self.var_index(v);
        (code / self.stride[k]) % self.radix[k]
    }

    pub fn trajectory(&self, code: usize) -> Trajectory {
        let mut tr = Trajectory::zeros(self.m, self.n);
        for t in 0..self.n {
            for i in 0..self.m {
                tr.set(i, t, self.symbol(code, Var::new(i, t)) as u8);
            }
        }
        tr
    }

    /// Probability of the trajectory, looked up in the table.
    pub fn probability(&self, traj: &Trajectory) -> f64 {
        let mut code = 0;
        for t in 0..self.n {
            for i in 0..self.m {
                let k = t * self.m + i;
                code += traj.get(i, t) as usize * self.stride[k];
            }
        }
        self.probs[code]
    }

    pub fn check_var(&self, v: Var) -> Result<(), ModelError> {
        if v.process >= self.m {
            return Err(ModelError::ProcessOutOfRange {
                index: v.process,
                m: self.m,
            });
        }
        if v.time >= self.n {
            return Err(ModelError::TimeOutOfRange {
                time: v.time,
                n: self.n,
            });
        }
        Ok(())
    }

    /// Marginal table over `vars`, indexed in mixed radix with the first
    /// variable most significant.
    pub fn marginal(&self, vars: &[Var]) -> Vec<f64> {
        let radices: Vec<usize> = vars
            .iter()
            .map(|v| self.radix[self.var_index(*v)])
            .collect();
        let size: usize = radices.iter().product();
        let mut sub_stride = vec![1usize; vars.len()];
        for k in (0..vars.len().saturating_sub(1)).rev() {
            sub_stride[k] = sub_stride[k + 1] * radices[k + 1];
        }
        let idx: Vec<(usize, usize, usize)> = vars
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let vi = self.var_index(*v);
                (self.stride[vi], self.radix[vi], sub_stride[k])
            })
            .collect();
        let mut out = vec![0.0; size];
        for (code, &p) in self.probs.iter().enumerate() {
            let sub: usize = idx.iter().map(|&(st, r, ss)| (code / st) % r * ss).sum();
            out[sub] += p;
        }
        out
    }
}

/// Expands a model into the exact table of all trajectory probabilities.
///
/// Log-probabilities are accumulated one time layer at a time and exponentiated
/// once per trajectory.
pub fn enumerate_joint(model: &GenerativeModel, cap: usize) -> Result<Joint, ModelError> {
    let states = model.state_count();
    if states > cap as f64 {
        return Err(ModelError::StateSpaceTooLarge { states, cap });
    }
    let m = model.m();
    let n = model.n();
    let radix: Vec<usize> = (0..m * n).map(|k| model.alphabets[k % m].size()).collect();
    let mut stride = vec![1usize; m * n];
    for k in 1..m * n {
        stride[k] = stride[k - 1] * radix[k - 1];
    }
    let layer: usize = model.alphabets.iter().map(|a| a.size()).product();

    let mut logp: Vec<f64> = vec![0.0];
    for t in 0..n {
        let base = stride[t * m];
        let mut next = vec![0.0; logp.len() * layer];
        for (prefix, &lp) in logp.iter().enumerate() {
            for l in 0..layer {
                let code = prefix + l * base;
                let symbol_of = |v: Var| {
                    (code / stride[v.time * m + v.process]) % radix[v.time * m + v.process]
                };
                let mut acc = lp;
                for i in 0..m {
                    let f = model.factor(i, t);
                    let a = model.alphabets[i].size();
                    let r = f.row_index(&model.alphabets, symbol_of);
                    acc += f.probs[r * a + symbol_of(Var::new(i, t))].ln();
                }
                next[code] = acc;
            }
        }
        logp = next;
    }
    let probs = logp.into_iter().map(f64::exp).collect();
    Ok(Joint {
        m,
        n,
        radix,
        stride,
        probs,
    })
}

/// Conditional pmf of one variable given a set of strictly earlier variables.
#[derive(Clone, Debug)]
pub struct ConditionalPmf {
    pub target: Var,
    pub given: Vec<Var>,
    target_size: usize,
    given_radices: Vec<usize>,
    /// `None` for contexts of zero probability.
    rows: Vec<Option<Vec<f64>>>,
}

impl ConditionalPmf {
    /// Row for the given context symbols (in `given` order).
    pub fn row(&self, context: &[usize]) -> Option<&[f64]> {
        let r = context
            .iter()
            .zip(&self.given_radices)
            .fold(0, |acc, (s, r)| acc * r + s);
        self.rows[r].as_deref()
    }

    pub fn rows(&self) -> impl Iterator<Item = Option<&[f64]>> {
        self.rows.iter().map(|r| r.as_deref())
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    /// Evaluates `P(target = symbol | given)` on a trajectory.
    pub fn prob_on(&self, traj: &Trajectory) -> Option<f64> {
        let ctx: Vec<usize> = self.given.iter().map(|v| traj.at(*v) as usize).collect();
        self.row(&ctx).map(|row| row[traj.at(self.target) as usize])
    }
}

/// `P(target | given)` from the joint. Every conditioning variable must lie
/// strictly before the target, as causal conditioning requires.
pub fn marginal_conditional(
    joint: &Joint,
    target: Var,
    given: &[Var],
) -> Result<ConditionalPmf, ModelError> {
    joint.check_var(target)?;
    for &v in given {
        joint.check_var(v)?;
        if v.time >= target.time {
            return Err(ModelError::ConditionsOnFuture { target, var: v });
        }
    }
    let mut vars = given.to_vec();
    vars.push(target);
    let table = joint.marginal(&vars);
    let a = joint.alphabet_size(target.process);
    let rows = table
        .chunks(a)
        .map(|row| {
            let s: f64 = row.iter().sum();
            (s > 0.0).then(|| row.iter().map(|p| p / s).collect())
        })
        .collect();
    Ok(ConditionalPmf {
        target,
        given: given.to_vec(),
        target_size: a,
        given_radices: given
            .iter()
            .map(|v| joint.alphabet_size(v.process))
            .collect(),
        rows,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    m: usize,
    n: usize,
    window: usize,
    alphabets: Vec<Alphabet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
    parents: BTreeMap<String, Vec<usize>>,
    tables: Vec<TableRecord>,
}

#[derive(Serialize, Deserialize)]
struct TableRecord {
    process: usize,
    time: usize,
    context: Vec<(usize, usize)>,
    probs: Vec<f64>,
}

impl From<&GenerativeModel> for ModelFile {
    fn from(model: &GenerativeModel) -> Self {
        ModelFile {
            m: model.m(),
            n: model.n,
            window: model.window,
            alphabets: model.alphabets.clone(),
            names: Some(model.names.clone()),
            parents: model
                .parents
                .iter()
                .enumerate()
                .map(|(i, ps)| (i.to_string(), ps.iter().copied().collect()))
                .collect(),
            tables: model
                .factors
                .iter()
                .map(|f| TableRecord {
                    process: f.process,
                    time: f.time,
                    context: f.context.iter().map(|v| (v.process, v.time)).collect(),
                    probs: f.probs.clone(),
                })
                .collect(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<GenerativeModel, ModelError> {
        if self.alphabets.len() != self.m {
            return Err(ModelError::ShapeMismatch {
                m: self.m,
                n: self.n,
                got_m: self.alphabets.len(),
                got_n: self.n,
            });
        }
        let mut b = GenerativeModelBuilder::new(self.alphabets, self.n, self.window);
        if let Some(names) = self.names {
            b = b.names(names);
        }
        for (k, ps) in &self.parents {
            let i: usize = k.parse().map_err(|_| ModelError::Parse {
                line: 0,
                msg: format!("parent key {k:?} is not a process index"),
            })?;
            b = b.parents(i, ps)?;
        }
        for t in self.tables {
            let ctx = t.context.into_iter().map(|(p, s)| Var::new(p, s)).collect();
            b = b.factor(t.process, t.time, ctx, t.probs)?;
        }
        b.build()
    }
}
