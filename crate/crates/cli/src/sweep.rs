//! One-parameter sweeps written as CSV.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use datamarket_core::{price_of_anarchy, solve_market, MarketInstance, MarketOutcome};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use crate::config::{read_text, MarketConfigFile};
use crate::report::num;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

/// Either an inline config or a path, resolved against the spec's directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum BaseConfig {
    Path(PathBuf),
    Inline(Value),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpecFile {
    /// Field to vary, e.g. `sources[0].x`.
    pub parameter: String,
    pub range: SweepRange,
    pub base: BaseConfig,
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Key(String),
    Index(usize),
}

/// A validated sweep: every point parses to a valid market.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
    pub markets: Vec<MarketInstance>,
}

fn parse_path(path: &str) -> Result<Vec<Segment>, CliError> {
    let bad = || CliError::Input(format!("sweep field `parameter`: cannot parse path {path:?}"));
    let mut out = Vec::new();
    for part in path.split('.') {
        let (key, mut rest) = part.split_once('[').map_or((part, None), |(k, r)| (k, Some(r)));
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(bad());
        }
        out.push(Segment::Key(key.to_string()));
        while let Some(r) = rest {
            let (idx, tail) = r.split_once(']').ok_or_else(bad)?;
            out.push(Segment::Index(idx.parse().map_err(|_| bad())?));
            rest = match tail {
                "" => None,
                t => Some(t.strip_prefix('[').ok_or_else(bad)?),
            };
        }
    }
    Ok(out)
}

fn set_number(base: &Value, path: &[Segment], v: f64, name: &str) -> Result<Value, CliError> {
    let mut doc = base.clone();
    let mut cur = &mut doc;
    for seg in path {
        cur = match seg {
            Segment::Key(k) => cur.get_mut(k.as_str()),
            Segment::Index(i) => cur.get_mut(*i),
        }
        .ok_or_else(|| CliError::Input(format!("sweep field `parameter`: `{name}` not found in base config")))?;
    }
    if !cur.is_number() {
        return Err(CliError::Input(format!(
            "sweep field `parameter`: `{name}` is not a number in base config"
        )));
    }
    *cur = serde_json::Number::from_f64(v)
        .map(Value::Number)
        .ok_or_else(|| CliError::Input(format!("sweep field `range`: value {v} is not finite")))?;
    Ok(doc)
}

/// `steps` evenly spaced values with both endpoints exact.
pub fn grid(range: &SweepRange) -> Vec<f64> {
    let last = range.steps - 1;
    (0..range.steps)
        .map(|s| match s {
            0 => range.from,
            s if s == last => range.to,
            s => range.from + (range.to - range.from) * (s as f64 / last as f64),
        })
        .collect()
}

impl SweepSpec {
    pub fn from_file(file: SweepSpecFile, dir: &Path) -> Result<Self, CliError> {
        if file.range.steps < 2 {
            return Err(CliError::Input(format!(
                "sweep field `range.steps`: need at least 2, got {}",
                file.range.steps
            )));
        }
        if !file.range.from.is_finite() || !file.range.to.is_finite() {
            return Err(CliError::Input("sweep field `range`: bounds must be finite".into()));
        }
        let base = match file.base {
            BaseConfig::Inline(v) => v,
            BaseConfig::Path(p) => {
                let p = dir.join(p);
                serde_json::from_str(&read_text(&p)?)
                    .map_err(|e| CliError::Input(format!("sweep field `base` ({}): {e}", p.display())))?
            }
        };
        let path = parse_path(&file.parameter)?;
        let values = grid(&file.range);
        let markets = values
            .iter()
            .map(|&v| {
                let doc = set_number(&base, &path, v, &file.parameter)?;
                MarketConfigFile::from_value(doc)?
                    .to_market()
                    .map_err(|e| CliError::Input(format!("sweep point {}={}: {e}", file.parameter, num(v))))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            parameter: file.parameter,
            values,
            markets,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let file: SweepSpecFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            CliError::Input(format!("sweep field `{field}`: {}", e.inner()))
        })?;
        Self::from_file(file, path.parent().unwrap_or(Path::new(".")))
    }

    /// The full CSV text. Rows are computed in parallel and emitted in sweep order.
    pub fn to_csv(&self) -> String {
        let m0 = &self.markets[0];
        let (n, nb) = (m0.n_sources(), m0.n_buyers());
        let mut text = header(n, nb);
        let rows: Vec<String> = self
            .values
            .par_iter()
            .zip(&self.markets)
            .map(|(&v, m)| row(v, m))
            .collect();
        for r in rows {
            text.push_str(&r);
        }
        text
    }
}

/// Column names, 1-based, source index before buyer index.
pub fn header(n: usize, nb: usize) -> String {
    let mut cols = vec!["param".to_string()];
    for i in 1..=n {
        cols.extend((1..=nb).map(|j| format!("gamma_{i}_{j}")));
    }
    for i in 1..=n {
        for l in (1..=n).filter(|&l| l != i) {
            cols.extend((1..=nb).map(|j| format!("xi_{i}_{l}_{j}")));
        }
    }
    cols.push("rho".into());
    for i in 1..=n {
        cols.extend((1..=nb).map(|j| format!("d_{i}_{j}")));
    }
    cols.extend((1..=n).map(|i| format!("e_star_{i}")));
    cols.extend((1..=n).map(|i| format!("e_hat_{i}")));
    cols.extend(["loss_eq", "loss_opt", "poa", "status"].map(String::from));
    cols.join(",") + "\n"
}

fn push_cells<I: IntoIterator<Item = Option<f64>>>(line: &mut String, cells: I) {
    for c in cells {
        line.push(',');
        if let Some(x) = c {
            line.push_str(&num(x));
        }
    }
}

/// One CSV line. Cells that are undefined at this point are left empty.
/// Status is `ok`, `no_equilibrium`, `no_welfare` (equilibrium exists but
/// the welfare report is undefined) or `error`.
pub fn row(param: f64, m: &MarketInstance) -> String {
    let (n, nb) = (m.n_sources(), m.n_buyers());
    let n_xi = n * n.saturating_sub(1) * nb;
    let mut line = num(param);
    let blank = |k: usize| std::iter::repeat(None).take(k);
    let (gamma, xi, rho, d, welfare, status) = match solve_market(m) {
        Ok(MarketOutcome::Equilibrium {
            weights,
            system,
            solution,
        }) => {
            let welfare = price_of_anarchy(&solution, &weights, m).ok();
            let status = if welfare.is_some() { "ok" } else { "no_welfare" };
            (Some(weights.gamma), Some(weights.xi), Some(system.rho), Some(solution.d), welfare, status)
        }
        Ok(MarketOutcome::NoEquilibrium { rho, xi, weights }) => {
            (weights.map(|w| w.gamma), Some(xi), Some(rho), None, None, "no_equilibrium")
        }
        Err(_) => (None, None, None, None, None, "error"),
    };
    match &gamma {
        Some(g) => push_cells(&mut line, (0..n).flat_map(|i| (0..nb).map(move |j| Some(g[j][i])))),
        None => push_cells(&mut line, blank(n * nb)),
    }
    match &xi {
        Some(x) => push_cells(
            &mut line,
            (0..n).flat_map(|i| {
                (0..n)
                    .filter(move |&l| l != i)
                    .flat_map(move |l| (0..nb).map(move |j| Some(x[j][i][l])))
            }),
        ),
        None => push_cells(&mut line, blank(n_xi)),
    }
    push_cells(&mut line, [rho]);
    match &d {
        Some(d) => push_cells(&mut line, (0..n).flat_map(|i| (0..nb).map(move |j| Some(d[j][i])))),
        None => push_cells(&mut line, blank(n * nb)),
    }
    match &welfare {
        Some(w) => {
            push_cells(&mut line, w.efforts_eq.iter().map(|&x| Some(x)));
            push_cells(&mut line, w.efforts_opt.iter().map(|&x| Some(x)));
            push_cells(&mut line, [Some(w.loss_eq), Some(w.loss_opt), Some(w.poa)]);
        }
        None => push_cells(&mut line, blank(2 * n + 3)),
    }
    let _ = write!(line, ",{status}");
    line.push('\n');
    line
}

pub fn run_sweep(spec: &Path, out_path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let sweep = SweepSpec::load(spec)?;
    let csv = sweep.to_csv();
    std::fs::write(out_path, &csv)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", out_path.display())))?;
    let no_eq = csv.lines().filter(|l| l.ends_with(",no_equilibrium")).count();
    writeln!(
        out,
        "wrote {} rows ({} without equilibrium) to {}",
        sweep.values.len(),
        no_eq,
        out_path.display()
    )
    .map_err(|e| CliError::Input(format!("cannot write output: {e}")))
}
