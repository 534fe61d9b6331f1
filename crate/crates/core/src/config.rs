//! Run configuration.
//!
//! Config files are UTF-8 `key = value` lines grouped under `[section]`
//! headers; `#` or `;` starts a comment line. Parse errors carry the line
//! and column of the offense, unknown or duplicate keys are rejected, and
//! CLI flags override file values. All defaults are chosen so `selfcheck`
//! runs with no config file at all.
//!
//! Recognized keys:
//!
//! ```text
//! [grid]          n = 64 | 64,64        length = 6.283... | L1,L2
//! [metric]        order = 2.0
//! [run]           seed = 0              out = out         threads = 0
//! [flow]          t = 1.0               scheme = rk4|euler
//!                 substeps = 4          max_step_mass = 0.2
//!                 sampling = spline|trig
//! [solver]        intervals = 8         substeps = 4
//!                 lambda = 10,100,1000,10000
//!                 residual_tol = 1e-3   max_iters = 500
//!                 init_amplitude = 1e-3 sampling = spline|trig
//! [landmarks]     kernel = gaussian|sobolev   sigma = 1.0
//!                 steps = 16            lambda = ...
//!                 max_iters = 200       residual_tol = 1e-3
//! [registration]  mismatch_tol = 0.1    similarity_weight = (auto)
//! [karcher]       max_sweeps = 10       damping = 0.5     rel_tol = 1e-3
//! [io]            velocity start target source reference
//!                 images = a.sgf,b.sgf
//!                 source_landmarks target_landmarks
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::bvp::SolveOptions;
use crate::error::{Error, Result};
use crate::flow::{FlowOptions, Scheme};
use crate::grid::GridSpec;
use crate::interp::SampleMode;
use crate::matching::{KarcherConfig, MatchConfig};
use crate::spectral::MetricSpec;

/// Node cap for configured grids, matching the file-format limit. Keeps a
/// typo like `n = 1000000000` from allocating before validation can reject it.
const MAX_GRID_NODES: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Flow,
    Distance,
    Register,
    Karcher,
    Landmarks,
    Selfcheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Distance => "distance",
            Command::Register => "register",
            Command::Karcher => "karcher",
            Command::Landmarks => "landmarks",
            Command::Selfcheck => "selfcheck",
        }
    }
}

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
    column: usize,
}

/// Raw parsed config: `section.key` to value with source position.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

fn err_at(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::ConfigParse { line, column, message: message.into() }
}

impl RawConfig {
    /// Parses config text. Lines are `key = value`, `[section]`, comments
    /// (`#` or `;`), or blank.
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw_line.trim_end();
            let trimmed = line.trim_start();
            let indent = line.len() - trimmed.len();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(err_at(lineno, indent + line.trim_start().len(), "unterminated [section] header"));
                };
                let name = name.trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                    return Err(err_at(lineno, indent + 2, format!("bad section name: [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let Some(eq) = trimmed.find('=') else {
                return Err(err_at(lineno, indent + 1, "expected `key = value` or [section]"));
            };
            let key = trimmed[..eq].trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                return Err(err_at(lineno, indent + 1, format!("bad key: {key:?}")));
            }
            if section.is_empty() {
                return Err(err_at(lineno, indent + 1, format!("key {key} appears before any [section]")));
            }
            let value_col = indent + eq + 2;
            let value = trimmed[eq + 1..].trim().to_string();
            if value.is_empty() {
                return Err(err_at(lineno, value_col, format!("missing value for {key}")));
            }
            let full = format!("{section}.{key}");
            if entries
                .insert(full.clone(), Entry { value, line: lineno, column: value_col })
                .is_some()
            {
                return Err(err_at(lineno, indent + 1, format!("duplicate key {full}")));
            }
        }
        Ok(RawConfig { entries })
    }

    /// CLI override: replaces or inserts one `section.key`.
    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), Entry { value, line: 0, column: 0 });
    }

    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn take_parsed<T>(
        &mut self,
        key: &str,
        what: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => match parse(&e.value) {
                Some(v) => Ok(Some(v)),
                None => Err(err_at(e.line, e.column, format!("{key}: expected {what}, got {:?}", e.value))),
            },
        }
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.take_parsed(key, "a finite number", |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
    }

    fn take_usize(&mut self, key: &str) -> Result<Option<usize>> {
        self.take_parsed(key, "a nonnegative integer", |s| s.parse().ok())
    }

    fn take_u64(&mut self, key: &str) -> Result<Option<u64>> {
        self.take_parsed(key, "a nonnegative integer", |s| s.parse().ok())
    }

    fn take_f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        self.take_parsed(key, "a comma-separated list of numbers", |s| {
            s.split(',')
                .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
        })
    }

    fn take_usize_list(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        self.take_parsed(key, "a comma-separated list of integers", |s| {
            s.split(',').map(|t| t.trim().parse::<usize>().ok()).collect::<Option<Vec<usize>>>()
        })
    }

    fn take_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|e| PathBuf::from(e.value))
    }

    fn take_paths(&mut self, key: &str) -> Option<Vec<PathBuf>> {
        self.take(key)
            .map(|e| e.value.split(',').map(|t| PathBuf::from(t.trim())).collect())
    }

    fn take_sampling(&mut self, key: &str) -> Result<Option<SampleMode>> {
        self.take_parsed(key, "spline or trig", |s| match lc(s).as_str() {
            "spline" => Some(SampleMode::Spline),
            "trig" => Some(SampleMode::Trig),
            _ => None,
        })
    }

    /// Errors on the first key nobody consumed (catches typos).
    fn reject_unknown(&self) -> Result<()> {
        if let Some((key, e)) = self.entries.iter().next() {
            return Err(err_at(e.line, e.column, format!("unknown key {key}")));
        }
        Ok(())
    }
}

fn lc(s: &str) -> String {
    s.to_ascii_lowercase()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelChoice {
    Gaussian,
    Sobolev,
}

/// Input paths referenced by the subcommands.
#[derive(Clone, Debug, Default)]
pub struct Inputs {
    pub velocity: Option<PathBuf>,
    pub start: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub images: Vec<PathBuf>,
    pub source_landmarks: Option<PathBuf>,
    pub target_landmarks: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct LandmarkSettings {
    pub kernel: KernelChoice,
    pub sigma: f64,
    pub matching: MatchConfig,
}

/// Fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub grid: GridSpec,
    pub order: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub flow_time: f64,
    pub flow: FlowOptions,
    pub solve: SolveOptions,
    pub landmarks: LandmarkSettings,
    pub similarity_weight: Option<f64>,
    pub mismatch_tol: f64,
    pub karcher: KarcherSettings,
    pub inputs: Inputs,
}

#[derive(Clone, Debug)]
pub struct KarcherSettings {
    pub max_sweeps: usize,
    pub damping: f64,
    pub rel_tol: f64,
}

impl RunConfig {
    /// Resolves a raw config (already including CLI overrides) against the
    /// defaults. Consumes every key; leftovers are parse errors.
    pub fn build(command: Command, mut raw: RawConfig) -> Result<RunConfig> {
        let sizes = raw.take_usize_list("grid.n")?.unwrap_or_else(|| vec![64]);
        // refuse absurd grids before anything sized by them is allocated
        let nodes = sizes.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
        match nodes {
            Some(p) if p <= MAX_GRID_NODES => {}
            _ => {
                return Err(Error::InvalidInput(format!(
                    "grid.n = {sizes:?} asks for too many nodes (max {MAX_GRID_NODES})"
                )))
            }
        }
        let lengths = raw
            .take_f64_list("grid.length")?
            .unwrap_or_else(|| vec![std::f64::consts::TAU; sizes.len()]);
        let grid = GridSpec::new(&sizes, &lengths)?;
        let order = raw.take_f64("metric.order")?.unwrap_or(2.0);
        // admissibility (order > d/2 + 1) is enforced when the metric is
        // built; probe it now so bad configs fail before any work
        MetricSpec::new(&grid, order)?;

        let seed = raw.take_u64("run.seed")?.unwrap_or(0);
        let out = raw.take_path("run.out").unwrap_or_else(|| PathBuf::from("out"));
        let threads = raw.take_usize("run.threads")?.unwrap_or(0);

        let flow_time = raw.take_f64("flow.t")?.unwrap_or(1.0);
        let mut flow = FlowOptions::default();
        if let Some(s) = raw.take_parsed("flow.scheme", "rk4 or euler", |s| match lc(s).as_str() {
            "rk4" => Some(Scheme::Rk4),
            "euler" => Some(Scheme::Euler),
            _ => None,
        })? {
            flow.scheme = s;
        }
        if let Some(v) = raw.take_usize("flow.substeps")? {
            flow.substeps = v;
        }
        if let Some(v) = raw.take_f64("flow.max_step_mass")? {
            flow.max_step_mass = v;
        }
        if let Some(v) = raw.take_sampling("flow.sampling")? {
            flow.sampling = v;
        }

        let mut solve = SolveOptions::default();
        if let Some(v) = raw.take_usize("solver.intervals")? {
            solve.intervals = v;
        }
        if let Some(v) = raw.take_usize("solver.substeps")? {
            solve.substeps = v;
        }
        if let Some(v) = raw.take_f64_list("solver.lambda")? {
            solve.lambda_schedule = v;
        }
        if let Some(v) = raw.take_f64("solver.residual_tol")? {
            solve.residual_tol = v;
        }
        if let Some(v) = raw.take_usize("solver.max_iters")? {
            solve.max_iters = v;
        }
        if let Some(v) = raw.take_f64("solver.init_amplitude")? {
            solve.init_amplitude = v;
        }
        if let Some(v) = raw.take_sampling("solver.sampling")? {
            solve.sampling = v;
        }

        let kernel = raw
            .take_parsed("landmarks.kernel", "gaussian or sobolev", |s| match lc(s).as_str() {
                "gaussian" => Some(KernelChoice::Gaussian),
                "sobolev" => Some(KernelChoice::Sobolev),
                _ => None,
            })?
            .unwrap_or(KernelChoice::Gaussian);
        let sigma = raw.take_f64("landmarks.sigma")?.unwrap_or(1.0);
        let mut matching = MatchConfig::default();
        if let Some(v) = raw.take_usize("landmarks.steps")? {
            matching.steps = v;
        }
        if let Some(v) = raw.take_f64_list("landmarks.lambda")? {
            matching.lambda_schedule = v;
        }
        if let Some(v) = raw.take_usize("landmarks.max_iters")? {
            matching.max_iters = v;
        }
        if let Some(v) = raw.take_f64("landmarks.residual_tol")? {
            matching.residual_tol = v;
        }

        let similarity_weight = raw.take_f64("registration.similarity_weight")?;
        let mismatch_tol = raw.take_f64("registration.mismatch_tol")?.unwrap_or(0.1);

        let karcher = KarcherSettings {
            max_sweeps: raw.take_usize("karcher.max_sweeps")?.unwrap_or(10),
            damping: raw.take_f64("karcher.damping")?.unwrap_or(0.5),
            rel_tol: raw.take_f64("karcher.rel_tol")?.unwrap_or(1e-3),
        };

        let inputs = Inputs {
            velocity: raw.take_path("io.velocity"),
            start: raw.take_path("io.start"),
            target: raw.take_path("io.target"),
            source: raw.take_path("io.source"),
            reference: raw.take_path("io.reference"),
            images: raw.take_paths("io.images").unwrap_or_default(),
            source_landmarks: raw.take_path("io.source_landmarks"),
            target_landmarks: raw.take_path("io.target_landmarks"),
        };

        raw.reject_unknown()?;
        Ok(RunConfig {
            command,
            grid,
            order,
            seed,
            out,
            threads,
            flow_time,
            flow,
            solve,
            landmarks: LandmarkSettings { kernel, sigma, matching },
            similarity_weight,
            mismatch_tol,
            karcher: karcher_validated(karcher)?,
            inputs,
        })
    }

    pub fn metric(&self) -> Result<MetricSpec> {
        MetricSpec::new(&self.grid, self.order)
    }

    pub fn metric_on(&self, grid: &GridSpec) -> Result<MetricSpec> {
        MetricSpec::new(grid, self.order)
    }

    pub fn karcher_config(&self) -> KarcherConfig {
        KarcherConfig {
            registration: self.solve.clone(),
            mismatch_tol: self.mismatch_tol,
            max_sweeps: self.karcher.max_sweeps,
            damping: self.karcher.damping,
            rel_tol: self.karcher.rel_tol,
        }
    }
}

fn karcher_validated(k: KarcherSettings) -> Result<KarcherSettings> {
    if !(k.damping > 0.0 && k.damping <= 1.0) {
        return Err(Error::InvalidInput("karcher damping must be in (0, 1]".into()));
    }
    if !(k.rel_tol > 0.0) {
        return Err(Error::InvalidInput("karcher rel_tol must be > 0".into()));
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_parses_and_resolves() {
        let text = "\
# simulation setup
[grid]
n = 32,32
length = 6.283185307179586,6.283185307179586

[metric]
order = 2.5

[run]
seed = 7
out = results
threads = 2

[solver]
intervals = 6
lambda = 10,100

[io]
source = a.sgf
target = b.sgf
images = a.sgf, b.sgf
";
        let raw = RawConfig::parse(text).unwrap();
        let cfg = RunConfig::build(Command::Register, raw).unwrap();
        assert_eq!(cfg.grid.sizes(), &[32, 32]);
        assert_eq!(cfg.order, 2.5);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.threads, 2);
        assert_eq!(cfg.solve.intervals, 6);
        assert_eq!(cfg.solve.lambda_schedule, vec![10.0, 100.0]);
        assert_eq!(cfg.inputs.images.len(), 2);
        assert_eq!(cfg.out, PathBuf::from("results"));
    }

    #[test]
    fn defaults_support_a_bare_selfcheck() {
        let cfg = RunConfig::build(Command::Selfcheck, RawConfig::default()).unwrap();
        assert_eq!(cfg.grid.sizes(), &[64]);
        assert_eq!(cfg.order, 2.0);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let check = |text: &str, want_line: usize| {
            match RawConfig::parse(text) {
                Err(Error::ConfigParse { line, column, .. }) => {
                    assert_eq!(line, want_line, "wrong line for {text:?}");
                    assert!(column >= 1);
                }
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        };
        check("[grid]\nn 64\n", 2);
        check("[grid\n", 1);
        check("n = 64\n", 1); // key before section
        check("[grid]\nn =\n", 2); // missing value
        check("[grid]\nn = 64\nn = 32\n", 3); // duplicate
        check("[grid]\nBadKey = 1\n", 2);
    }

    #[test]
    fn typos_and_bad_values_are_rejected() {
        let raw = RawConfig::parse("[solver]\nintervalls = 8\n").unwrap();
        let err = RunConfig::build(Command::Distance, raw).unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 2, .. }), "{err:?}");

        let raw = RawConfig::parse("[metric]\norder = fast\n").unwrap();
        assert!(RunConfig::build(Command::Distance, raw).is_err());

        // inadmissible order names the bound
        let raw = RawConfig::parse("[metric]\norder = 1.0\n").unwrap();
        let err = RunConfig::build(Command::Distance, raw).unwrap_err();
        assert!(err.to_string().contains("d/2 + 1"), "{err}");
    }

    #[test]
    fn cli_overrides_replace_file_values() {
        let mut raw = RawConfig::parse("[run]\nseed = 1\n[grid]\nn = 16\n").unwrap();
        raw.set("run.seed", "9".into());
        raw.set("grid.n", "32".into());
        raw.set("metric.order", "3".into());
        let cfg = RunConfig::build(Command::Selfcheck, raw).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.grid.sizes(), &[32]);
        assert_eq!(cfg.order, 3.0);
    }
}
