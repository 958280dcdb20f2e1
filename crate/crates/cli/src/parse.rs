//! Parsers for the small query languages of `query` and `exact`.

use crate::error::CliError;
use std::collections::BTreeSet;

/// Resolves a comma-separated list of process names (or indices) to indices.
/// An empty or blank list is the empty set.
pub fn name_set(list: &str, names: &[String]) -> Result<BTreeSet<usize>, CliError> {
    let mut out = BTreeSet::new();
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let idx = names
            .iter()
            .position(|n| n == tok)
            .or_else(|| tok.parse::<usize>().ok().filter(|&i| i < names.len()))
            .ok_or_else(|| CliError::Usage(format!("unknown process {tok:?}")))?;
        out.insert(idx);
    }
    Ok(out)
}

/// `csep U | Z | W`.
pub struct CsepQuery {
    pub u: BTreeSet<usize>,
    pub z: BTreeSet<usize>,
    pub w: BTreeSet<usize>,
}

pub fn csep_query(text: &str, names: &[String]) -> Result<CsepQuery, CliError> {
    let body = text
        .trim()
        .strip_prefix("csep")
        .ok_or_else(|| CliError::Usage("query must start with `csep`".into()))?;
    let parts: Vec<&str> = body.split('|').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage("expected `csep U | Z | W`".into()));
    }
    let q = CsepQuery {
        u: name_set(parts[0], names)?,
        z: name_set(parts[1], names)?,
        w: name_set(parts[2], names)?,
    };
    if q.u.is_empty() || q.w.is_empty() {
        return Err(CliError::Usage("U and W must be nonempty".into()));
    }
    Ok(q)
}

/// `SOURCES -> TARGETS` optionally followed by `|| CONDITIONING`.
pub struct InfoQuery {
    pub sources: BTreeSet<usize>,
    pub targets: BTreeSet<usize>,
    pub conditioning: BTreeSet<usize>,
}

pub fn info_query(text: &str, names: &[String]) -> Result<InfoQuery, CliError> {
    let (flow, cond) = match text.split_once("||") {
        Some((a, b)) => (a, b),
        None => (text, ""),
    };
    let (src, tgt) = flow
        .split_once("->")
        .ok_or_else(|| CliError::Usage("expected `X -> Y [|| Z]`".into()))?;
    let q = InfoQuery {
        sources: name_set(src, names)?,
        targets: name_set(tgt, names)?,
        conditioning: name_set(cond, names)?,
    };
    if q.targets.is_empty() {
        return Err(CliError::Usage("target set must be nonempty".into()));
    }
    Ok(q)
}
