use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContentProvider, FunctionFamily, Market, UtilizationFamily};

pub const DEFAULT_P_POINTS: usize = 201;
pub const DEFAULT_P_MAX: f64 = 2.0;
pub const DEFAULT_Q_LEVELS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
pub const BUILTIN_NAMES: [&str; 2] = ["fig3-9cp", "fig5-8cp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Users pay `p`; no subsidies.
    OneSided,
    /// Providers play the subsidy game at every `q`.
    Game,
}

/// A validated market plus the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub market: Market,
    pub p_grid: Vec<f64>,
    pub q_levels: Vec<f64>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

/// Either `{"start", "stop", "points"}` or an explicit list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum GridSpec {
    Range { start: f64, stop: f64, points: usize },
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    #[serde(default = "default_mode")]
    mode: Mode,
    capacity: f64,
    #[serde(default)]
    utilization: UtilizationFamily,
    cps: Vec<CpEntry>,
    p_grid: Option<GridSpec>,
    q_levels: Option<Vec<f64>>,
    #[serde(default)]
    seed: u64,
    output_dir: Option<PathBuf>,
}

/// A provider given either by exponential rates or by explicit curves.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CpEntry {
    id: String,
    v: f64,
    alpha: Option<f64>,
    beta: Option<f64>,
    demand: Option<FunctionFamily>,
    throughput: Option<FunctionFamily>,
}

fn default_mode() -> Mode {
    Mode::Game
}

pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..points)
            .map(|k| {
                if k == points - 1 {
                    stop
                } else {
                    start + (stop - start) * k as f64 / (points - 1) as f64
                }
            })
            .collect(),
    }
}

fn default_p_grid() -> Vec<f64> {
    linspace(0.0, DEFAULT_P_MAX, DEFAULT_P_POINTS)
}

fn curve(
    field: String,
    rate: Option<f64>,
    family: Option<FunctionFamily>,
    rate_name: &str,
    family_name: &str,
) -> Result<FunctionFamily> {
    match (rate, family) {
        (Some(r), None) => {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::validation(format!("{field}.{rate_name}"), format!("must be finite and > 0, got {r}")));
            }
            Ok(FunctionFamily::exponential(r))
        }
        (None, Some(f)) => Ok(f),
        (Some(_), Some(_)) => Err(Error::validation(
            field,
            format!("give either `{rate_name}` or `{family_name}`, not both"),
        )),
        (None, None) => Err(Error::validation(
            format!("{field}.{rate_name}"),
            format!("missing; give `{rate_name}` or `{family_name}`"),
        )),
    }
}

fn check_grid(field: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation(field, "must not be empty"));
    }
    for (k, x) in grid.iter().enumerate() {
        if !(x.is_finite() && *x >= 0.0) {
            return Err(Error::validation(format!("{field}[{k}]"), format!("must be finite and >= 0, got {x}")));
        }
    }
    if let Some(k) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::validation(
            format!("{field}[{}]", k + 1),
            format!("grid must be strictly increasing ({} follows {})", grid[k + 1], grid[k]),
        ));
    }
    Ok(())
}

impl ScenarioFile {
    fn into_scenario(self, fallback_name: &str) -> Result<Scenario> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::validation("capacity", format!("must be finite and > 0, got {}", self.capacity)));
        }
        self.utilization
            .validate()
            .map_err(|e| Error::validation("utilization", e.to_string()))?;
        if self.cps.is_empty() {
            return Err(Error::validation("cps", "at least one content provider is required"));
        }
        let mut cps = Vec::with_capacity(self.cps.len());
        for (k, entry) in self.cps.into_iter().enumerate() {
            let field = format!("cps[{k}]");
            if entry.id.is_empty() {
                return Err(Error::validation(format!("{field}.id"), "must not be empty"));
            }
            if cps.iter().any(|c: &ContentProvider| c.id == entry.id) {
                return Err(Error::validation(format!("{field}.id"), format!("duplicate id `{}`", entry.id)));
            }
            if !(entry.v.is_finite() && entry.v >= 0.0) {
                return Err(Error::validation(format!("{field}.v"), format!("must be finite and >= 0, got {}", entry.v)));
            }
            let demand = curve(field.clone(), entry.alpha, entry.demand, "alpha", "demand")?;
            let throughput = curve(field.clone(), entry.beta, entry.throughput, "beta", "throughput")?;
            let cp = ContentProvider::new(entry.id, entry.v, demand, throughput)
                .map_err(|e| Error::validation(field, e.to_string()))?;
            cps.push(cp);
        }
        let p_grid = match self.p_grid {
            None => default_p_grid(),
            Some(GridSpec::Values(v)) => v,
            Some(GridSpec::Range { start, stop, points }) => {
                if points == 0 {
                    return Err(Error::validation("p_grid.points", "must be >= 1"));
                }
                if !(stop > start) && points > 1 {
                    return Err(Error::validation("p_grid.stop", format!("must exceed start ({start}), got {stop}")));
                }
                linspace(start, stop, points)
            }
        };
        check_grid("p_grid", &p_grid)?;
        let q_levels = match self.mode {
            Mode::OneSided => vec![0.0],
            Mode::Game => self.q_levels.unwrap_or_else(|| DEFAULT_Q_LEVELS.to_vec()),
        };
        check_grid("q_levels", &q_levels)?;
        Ok(Scenario {
            name: self.name.unwrap_or_else(|| fallback_name.to_string()),
            mode: self.mode,
            market: Market::new(self.capacity, self.utilization, cps)?,
            p_grid,
            q_levels,
            seed: self.seed,
            output_dir: self.output_dir,
        })
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str, fallback_name: &str) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_scenario(fallback_name)
}

/// Loads a scenario from `source`: a built-in name or a path to a JSON file.
pub fn load_scenario(source: &str) -> Result<Scenario> {
    if let Some(s) = builtin(source) {
        return Ok(s);
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    parse_scenario(&text, stem)
}

/// The built-in scenarios:
///
/// * `fig3-9cp`: one-sided pricing, `μ = 1`, nine providers with
///   `α, β ∈ {1, 3, 5}` and `v = 1`.
/// * `fig5-8cp`: the subsidy game, `μ = 1`, eight providers with
///   `α, β ∈ {2, 5}` and `v ∈ {0.5, 1}`, at caps `q ∈ {0, 0.5, 1, 1.5, 2}`.
pub fn builtin(name: &str) -> Option<Scenario> {
    let (mode, cps) = match name {
        "fig3-9cp" => {
            let mut cps = Vec::new();
            for a in [1.0, 3.0, 5.0] {
                for b in [1.0, 3.0, 5.0] {
                    cps.push(ContentProvider::exponential(format!("a{a}b{b}"), a, b, 1.0).ok()?);
                }
            }
            (Mode::OneSided, cps)
        }
        "fig5-8cp" => {
            let mut cps = Vec::new();
            for a in [2.0, 5.0] {
                for b in [2.0, 5.0] {
                    for (tag, v) in [("lo", 0.5), ("hi", 1.0)] {
                        cps.push(ContentProvider::exponential(format!("a{a}b{b}-{tag}"), a, b, v).ok()?);
                    }
                }
            }
            (Mode::Game, cps)
        }
        _ => return None,
    };
    let q_levels = match mode {
        Mode::OneSided => vec![0.0],
        Mode::Game => DEFAULT_Q_LEVELS.to_vec(),
    };
    Some(Scenario {
        name: name.to_string(),
        mode,
        market: Market::linear(1.0, cps).ok()?,
        p_grid: default_p_grid(),
        q_levels,
        seed: 0,
        output_dir: None,
    })
}
