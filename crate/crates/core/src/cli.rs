//! Command-line front end: scenario files, single runs, batch comparisons
//! and the gradient check.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{AdaptationScheme, LearningRate, SignMode};
use crate::error::{Error, Result};
use crate::gradcheck::{self, Architecture};
use crate::network::{Activation, ConvLayerSpec, NetworkSpec};
use crate::sim::presets::Preset;
use crate::sim::{run_scenario, summary_text, write_trajectory_csv, RunResult, Scenario, StepOrdering};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "convadapt", version, about = "Adaptive CNN tracking controller simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario file and write its trajectory and summary.
    Run {
        scenario: PathBuf,
        /// Overrides `[sim] seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run presets over several seeds and print an RMSE grid.
    Compare {
        /// Preset names or scenario file paths.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        presets: Vec<String>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// First seed; the batch uses `first_seed..first_seed + seeds`.
        #[arg(long, default_value_t = 1)]
        first_seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare the analytic Jacobian with central finite differences.
    Gradcheck {
        /// `cnn1`, `minimal`, or a scenario file whose network is checked.
        #[arg(long, default_value = "minimal")]
        arch: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Diagnostics go to `err`, reports to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run { scenario, seed, out: dir } => cmd_run(&scenario, seed, dir, out),
        Command::Compare {
            presets,
            seeds,
            first_seed,
            out: dir,
        } => cmd_compare(&presets, first_seed, seeds, &dir, out),
        Command::Gradcheck {
            arch,
            trials,
            step,
            seed,
            out: dir,
        } => cmd_gradcheck(&arch, trials, step, seed, &dir, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Io(_) => EXIT_OTHER,
        _ => EXIT_VALIDATION,
    }
}

fn cmd_run(path: &Path, seed: Option<u64>, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let loaded = load_scenario(path)?;
    let mut scenario = loaded.scenario;
    if let Some(s) = seed {
        scenario.sim.seed = s;
    }
    let dir = dir.or(loaded.output.dir).unwrap_or_else(|| PathBuf::from("."));
    let prefix = loaded.output.prefix.unwrap_or_else(|| scenario.name.clone());
    let result = run_scenario(&scenario)?;
    let (traj, summary) = write_run(&result, &dir, &prefix)?;
    let _ = write!(out, "{}", summary_text(&result));
    let _ = writeln!(out, "wrote {} and {}", traj.display(), summary.display());
    Ok(EXIT_OK)
}

/// Writes `<prefix>_traj.csv` and `<prefix>_summary.txt` into `dir`.
pub fn write_run(result: &RunResult, dir: &Path, prefix: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let traj = dir.join(format!("{prefix}_traj.csv"));
    let mut w = BufWriter::new(fs::File::create(&traj)?);
    write_trajectory_csv(&result.samples, &mut w)?;
    w.flush()?;
    let summary = dir.join(format!("{prefix}_summary.txt"));
    fs::write(&summary, summary_text(result))?;
    Ok((traj, summary))
}

/// Outcome of one preset × seed cell of a comparison.
#[derive(Clone, Debug)]
pub struct Cell {
    pub label: String,
    pub reference: Option<(f64, f64)>,
    pub seed: u64,
    pub outcome: std::result::Result<RunResult, String>,
}

/// Runs every scenario over `seeds` in parallel; divergent runs are kept as
/// failed cells.
pub fn compare_cells(scenarios: &[(String, Option<(f64, f64)>, Scenario)], seeds: &[u64]) -> Vec<Cell> {
    let jobs: Vec<_> = scenarios
        .iter()
        .flat_map(|job| seeds.iter().map(move |&s| (job, s)))
        .collect();
    jobs.par_iter()
        .map(|((label, reference, scenario), seed)| {
            let mut s = scenario.clone();
            s.sim.seed = *seed;
            Cell {
                label: label.clone(),
                reference: *reference,
                seed: *seed,
                outcome: run_scenario(&s).map_err(|e| e.to_string()),
            }
        })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Grid of median `ε₁`, `ε₂` with their range, next to the published
/// values where known.
pub fn grid_text(cells: &[Cell]) -> String {
    use std::fmt::Write as _;
    let mut labels: Vec<&str> = Vec::new();
    for c in cells {
        if !labels.contains(&c.label.as_str()) {
            labels.push(&c.label);
        }
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24}{:>8}{:>10}{:>22}{:>10}{:>22}{:>10}{:>10}",
        "controller", "runs", "eps1", "eps1 [min, max]", "eps2", "eps2 [min, max]", "ref eps1", "ref eps2"
    );
    for label in labels {
        let group: Vec<&Cell> = cells.iter().filter(|c| c.label == label).collect();
        let ok: Vec<&RunResult> = group.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
        let (r1, r2) = group[0]
            .reference
            .map_or(("-".to_string(), "-".to_string()), |(a, b)| (format!("{a:.4}"), format!("{b:.4}")));
        if ok.is_empty() {
            let _ = writeln!(s, "{:<24}{:>8}{:>10}{:>22}{:>10}{:>22}{:>10}{:>10}", label, format!("0/{}", group.len()), "-", "-", "-", "-", r1, r2);
            continue;
        }
        let mut e1: Vec<f64> = ok.iter().map(|r| r.rmse.0).collect();
        let mut e2: Vec<f64> = ok.iter().map(|r| r.rmse.1).collect();
        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            format!("[{lo:.4}, {hi:.4}]")
        };
        let (g1, g2) = (range(&e1), range(&e2));
        let _ = writeln!(
            s,
            "{:<24}{:>8}{:>10.4}{:>22}{:>10.4}{:>22}{:>10}{:>10}",
            label,
            format!("{}/{}", ok.len(), group.len()),
            median(&mut e1),
            g1,
            median(&mut e2),
            g2,
            r1,
            r2
        );
    }
    for c in cells {
        if let Err(e) = &c.outcome {
            let _ = writeln!(s, "diverged: {} seed {}: {e}", c.label, c.seed);
        }
    }
    s
}

fn cmd_compare(names: &[String], first_seed: u64, seeds: u64, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    if names.is_empty() {
        return Err(Error::Config("compare needs at least one preset".into()));
    }
    if seeds == 0 {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    let mut scenarios = Vec::new();
    for name in names {
        let (label, reference, scenario) = match name.parse::<Preset>() {
            Ok(p) => (p.name().to_string(), Some(p.reference_rmse()), p.scenario()),
            Err(_) if Path::new(name).is_file() => {
                let s = load_scenario(Path::new(name))?.scenario;
                let reference = s.name.parse::<Preset>().ok().map(Preset::reference_rmse);
                (s.name.clone(), reference, s)
            }
            Err(e) => return Err(e),
        };
        scenarios.push((label, reference, scenario));
    }
    let seed_list: Vec<u64> = (first_seed..first_seed + seeds).collect();
    let cells = compare_cells(&scenarios, &seed_list);
    fs::create_dir_all(dir)?;
    let mut csv = String::from("controller,seed,status,eps1,eps2,post_eps1,post_eps2\n");
    for c in &cells {
        match &c.outcome {
            Ok(r) => {
                let (p1, p2) = r
                    .post_change_rmse
                    .map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
                csv.push_str(&format!("{},{},ok,{},{},{p1},{p2}\n", c.label, c.seed, r.rmse.0, r.rmse.1));
                fs::write(dir.join(format!("{}_seed{}_summary.txt", c.label, c.seed)), summary_text(r))?;
            }
            Err(_) => csv.push_str(&format!("{},{},diverged,,,,\n", c.label, c.seed)),
        }
    }
    fs::write(dir.join("compare.csv"), csv)?;
    let grid = grid_text(&cells);
    fs::write(dir.join("compare.txt"), &grid)?;
    let _ = write!(out, "{grid}");
    Ok(EXIT_OK)
}

fn cmd_gradcheck(arch: &str, trials: usize, step: f64, seed: u64, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    if trials == 0 {
        return Err(Error::Config("gradcheck needs at least one trial".into()));
    }
    if !(step > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    let arch = match arch {
        "cnn1" => Architecture::cnn1(),
        "minimal" => Architecture::minimal(),
        path => {
            let s = load_scenario(Path::new(path))?.scenario;
            Architecture::custom(s.name, s.network)
        }
    };
    let reports = gradcheck::run_trials(&arch, trials, step, seed)?;
    fs::create_dir_all(dir)?;
    let mut worst = Vec::new();
    for (k, r) in reports.iter().enumerate() {
        let path = dir.join(format!("{}_gradcheck_{k}.csv", arch.name));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        r.write_csv(&mut w)?;
        w.flush()?;
        worst.extend(r.worst(5).into_iter().map(|e| (k, e)));
    }
    let max = reports.iter().map(|r| r.max_rel_err()).fold(0.0, f64::max);
    let passed = reports.iter().all(|r| r.passed());
    let _ = writeln!(
        out,
        "{}: {trials} trials, step {step:e}, max rel err {max:.3e} ({})",
        arch.name,
        if passed { "pass" } else { "FAIL" }
    );
    if passed {
        return Ok(EXIT_OK);
    }
    worst.sort_by(|a, b| b.1.rel_err.total_cmp(&a.1.rel_err));
    let _ = writeln!(out, "worst coordinates:");
    for (k, e) in worst.iter().take(10) {
        let _ = writeln!(
            out,
            "  trial {k} index {}: analytic {:e}, numeric {:e}, rel err {:.3e}",
            e.index, e.analytic, e.numeric, e.rel_err
        );
    }
    Ok(EXIT_GRADCHECK)
}

// ---------------------------------------------------------------------------
// scenario files

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Preset whose values fill every key the file leaves out; CNN1 when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub plant: PlantSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance_onset: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switching_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub designer_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<AdaptationScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_prime_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<LearningRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_mode: Option<SignMode>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stacking_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc_widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv_layers: Option<Vec<ConvLayerSpec>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_weight_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<StepOrdering>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// File name prefix; the scenario name when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
}

/// A scenario file after presets and overrides are resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Loaded {
    pub scenario: Scenario,
    pub output: OutputSection,
}

impl ScenarioFile {
    /// Fully explicit file describing `scenario`.
    pub fn from_scenario(scenario: &Scenario, output: OutputSection) -> Self {
        let c = &scenario.controller;
        let n = &scenario.network;
        Self {
            preset: None,
            name: Some(scenario.name.clone()),
            plant: PlantSection {
                initial_state: Some(scenario.plant.initial_state.clone()),
                disturbance_onset: scenario.plant.disturbance_onset,
            },
            controller: ControllerSection {
                switching_gain: Some(c.switching_gain),
                designer_matrix: Some(c.designer_matrix.clone()),
                learning_rate: Some(c.learning_rate),
                damping: Some(c.damping),
                theta_bar: Some(c.theta_bar),
                sign_mode: Some(c.sign_mode),
                scheme: Some(c.scheme),
                delta_bar: Some(c.delta_bar),
                phi_prime_bound: Some(c.phi_prime_bound),
            },
            network: NetworkSection {
                input_rows: Some(n.input_rows),
                input_cols: Some(n.input_cols),
                stacking_time: Some(scenario.stacking_time),
                conv_layers: Some(n.conv_layers.clone()),
                fc_widths: Some(n.fc_widths.clone()),
                alpha1: Some(n.alpha1),
                alpha2: Some(n.alpha2),
                activation: Some(n.activation),
            },
            sim: SimSection {
                dt: Some(scenario.sim.dt),
                t_end: Some(scenario.sim.t_end),
                seed: Some(scenario.sim.seed),
                init_weight_range: Some(scenario.sim.init_weight_range),
                ordering: Some(scenario.sim.ordering),
            },
            output,
        }
    }

    /// Fills unset keys from the named preset (CNN1 by default).
    pub fn resolve(&self) -> Result<Scenario> {
        let preset = match &self.preset {
            Some(p) => p.parse::<Preset>()?,
            None => Preset::Cnn1,
        };
        let mut s = preset.scenario();
        if let Some(v) = &self.name {
            s.name = v.clone();
        }
        let p = &self.plant;
        set(&mut s.plant.initial_state, &p.initial_state);
        if p.disturbance_onset.is_some() {
            s.plant.disturbance_onset = p.disturbance_onset;
        }
        let c = &self.controller;
        let sc = &mut s.controller;
        set(&mut sc.switching_gain, &c.switching_gain);
        set(&mut sc.designer_matrix, &c.designer_matrix);
        set(&mut sc.learning_rate, &c.learning_rate);
        set(&mut sc.damping, &c.damping);
        set(&mut sc.theta_bar, &c.theta_bar);
        set(&mut sc.sign_mode, &c.sign_mode);
        set(&mut sc.scheme, &c.scheme);
        set(&mut sc.delta_bar, &c.delta_bar);
        set(&mut sc.phi_prime_bound, &c.phi_prime_bound);
        let n = &self.network;
        let sn: &mut NetworkSpec = &mut s.network;
        set(&mut sn.input_rows, &n.input_rows);
        set(&mut sn.input_cols, &n.input_cols);
        set(&mut sn.conv_layers, &n.conv_layers);
        set(&mut sn.fc_widths, &n.fc_widths);
        set(&mut sn.alpha1, &n.alpha1);
        set(&mut sn.alpha2, &n.alpha2);
        set(&mut sn.activation, &n.activation);
        set(&mut s.stacking_time, &n.stacking_time);
        let m = &self.sim;
        set(&mut s.sim.dt, &m.dt);
        set(&mut s.sim.t_end, &m.t_end);
        set(&mut s.sim.seed, &m.seed);
        set(&mut s.sim.init_weight_range, &m.init_weight_range);
        set(&mut s.sim.ordering, &m.ordering);
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize scenario: {e}")))
    }
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

/// Parses and validates scenario text; `origin` names the source in
/// diagnostics.
pub fn parse_scenario(text: &str, origin: &str) -> Result<Loaded> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {}", e.to_string().trim_end())))?;
    let scenario = file.resolve().map_err(|e| Error::Config(format!("{origin}: {e}")))?;
    if let Err(fe) = scenario.check() {
        let at = match find_key(text, fe.section, fe.key) {
            Some(line) => format!("{origin}:{line}"),
            None => origin.to_string(),
        };
        return Err(Error::Config(format!("{at}: [{}] {}: {}", fe.section, fe.key, fe.message)));
    }
    Ok(Loaded {
        scenario,
        output: file.output,
    })
}

pub fn load_scenario(path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: cannot read: {e}", path.display())))?;
    parse_scenario(&text, &path.display().to_string())
}

/// 1-based line where `key` is set inside `[section]`, if it is set there.
pub fn find_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            if current == format!("{section}.{key}") {
                return Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
