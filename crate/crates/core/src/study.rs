//! Grid execution: a flat `key = value[, value...]` file expands into sandbox
//! cells, each cell is trained `runs` times and measured against its
//! unlabelled pool.
//!
//! Dataset names resolve to `<data_dir>/<name>.ddim` (labels beside it in
//! `<name>.labels`) or to the built-in synthetic blobs: `blobs` is the
//! unshifted task and `blobs@<shift>` moves every class center by `shift`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{aggregate, report_matrix, CellKey, ReportTable, RunAggregate};
use crate::dedims::{dissimilarity, DissimilarityReport, Measure, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::feature_store::{load_features, load_labeled, FileFormat, LabeledFeatureSet, SubsampleSpec};
use crate::mixmatch::{train, train_supervised, MixMatchConfig, TrainOutcome};
use crate::rng::derive_seed;
use crate::sandbox::{build_run, ClusterLayout, OodType, RunData, SandboxConfig, Sources};

const DISTANCE_STREAM: u64 = 0x4449_5354;

/// Built-in Gaussian-blob sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self { dim: 16, per_class: 1200, spread: 1.0, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSettings {
    pub measures: Vec<Measure>,
    /// Capped at `n_l / 2` per cell.
    pub tau: usize,
    pub draws: usize,
    pub bins: usize,
}

impl Default for DistanceSettings {
    fn default() -> Self {
        Self {
            measures: Measure::ALL.to_vec(),
            tau: SubsampleSpec::DEFAULT_TAU,
            draws: SubsampleSpec::DEFAULT_DRAWS,
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub mixmatch: MixMatchConfig,
    pub synth: SynthSettings,
    pub distances: DistanceSettings,
    pub data_dir: PathBuf,
    /// Also train the fully supervised baseline in every cell.
    pub baseline: bool,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            mixmatch: MixMatchConfig::default(),
            synth: SynthSettings::default(),
            distances: DistanceSettings::default(),
            data_dir: PathBuf::from("."),
            baseline: false,
        }
    }
}

/// A fully expanded grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub settings: StudySettings,
    pub cells: Vec<SandboxConfig>,
}

/// Keys that may carry several comma-separated values, in expansion order
/// (the last varies fastest).
pub const GRID_KEYS: [&str; 10] = [
    "s_iod", "t_ood", "s_uood", "pct_uood", "n_l", "n_u", "n_test", "num_classes", "seed", "runs",
];

/// Single-valued keys (`measures` takes a list but is not expanded).
pub const SETTING_KEYS: [&str; 22] = [
    "k",
    "temperature",
    "alpha",
    "gamma",
    "rampup",
    "epochs",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "sigma_aug",
    "hidden",
    "steps_per_epoch",
    "synth_dim",
    "synth_per_class",
    "synth_spread",
    "synth_seed",
    "measures",
    "tau",
    "draws",
    "bins",
    "data_dir",
    "baseline",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_grid_text(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let key = key.trim().to_string();
        let values: Vec<String> = value.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(Error::Config(format!("line {}: empty value for {key}", i + 1)));
        }
        if map.insert(key.clone(), values).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
        }
    }
    Ok(map)
}

impl Grid {
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = parse_grid_text(text)?;
        for (key, value) in overrides {
            map.insert(key.clone(), value.split(',').map(|v| v.trim().to_string()).collect());
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, Vec<String>>) -> Result<Self> {
        for key in map.keys() {
            if !GRID_KEYS.contains(&key.as_str()) && !SETTING_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key {key}")));
            }
        }
        let settings = settings_from_map(map)?;
        let base = SandboxConfig::default();
        let default_values = |key: &str| -> String {
            match key {
                "s_iod" => base.s_iod.clone(),
                "t_ood" => base.t_ood.to_string(),
                "s_uood" => base.s_uood.clone(),
                "pct_uood" => base.pct_uood.to_string(),
                "n_l" => base.n_l.to_string(),
                "n_u" => base.n_u.to_string(),
                "n_test" => base.n_test.to_string(),
                "num_classes" => base.num_classes.to_string(),
                "seed" => base.seed.to_string(),
                _ => base.runs.to_string(),
            }
        };
        let axes: Vec<Vec<String>> = GRID_KEYS
            .iter()
            .map(|k| map.get(*k).cloned().unwrap_or_else(|| vec![default_values(k)]))
            .collect();

        let mut cells = Vec::new();
        let mut index = vec![0usize; axes.len()];
        loop {
            let v = |i: usize| axes[i][index[i]].as_str();
            let cell = SandboxConfig {
                s_iod: v(0).to_string(),
                t_ood: v(1).parse()?,
                s_uood: v(2).to_string(),
                pct_uood: parse(GRID_KEYS[3], v(3))?,
                n_l: parse(GRID_KEYS[4], v(4))?,
                n_u: parse(GRID_KEYS[5], v(5))?,
                n_test: parse(GRID_KEYS[6], v(6))?,
                num_classes: parse(GRID_KEYS[7], v(7))?,
                seed: parse(GRID_KEYS[8], v(8))?,
                runs: parse(GRID_KEYS[9], v(9))?,
            };
            cell.validate()?;
            cells.push(cell);
            let mut pos = axes.len();
            loop {
                if pos == 0 {
                    let mut keys: Vec<CellKey> = cells.iter().map(CellKey::of).collect();
                    keys.sort();
                    if keys.windows(2).any(|w| w[0] == w[1]) {
                        return Err(Error::Config(
                            "grid has cells differing only in n_u, n_test, num_classes, seed or runs".into(),
                        ));
                    }
                    return Ok(Self { settings, cells });
                }
                pos -= 1;
                index[pos] += 1;
                if index[pos] < axes[pos].len() {
                    break;
                }
                index[pos] = 0;
            }
        }
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, overrides)
    }
}

fn settings_from_map(map: &BTreeMap<String, Vec<String>>) -> Result<StudySettings> {
    let mut s = StudySettings::default();
    for (key, values) in map {
        if GRID_KEYS.contains(&key.as_str()) {
            continue;
        }
        if key != "measures" && values.len() != 1 {
            return Err(Error::Config(format!("{key} takes a single value")));
        }
        let v = values[0].as_str();
        let mm = &mut s.mixmatch;
        match key.as_str() {
            "k" => mm.k = parse(key, v)?,
            "temperature" => mm.temperature = parse(key, v)?,
            "alpha" => mm.alpha = parse(key, v)?,
            "gamma" => mm.gamma = parse(key, v)?,
            "rampup" => mm.rampup = parse(key, v)?,
            "epochs" => mm.epochs = parse(key, v)?,
            "batch_size" => mm.batch_size = parse(key, v)?,
            "learning_rate" => mm.learning_rate = parse(key, v)?,
            "weight_decay" => mm.weight_decay = parse(key, v)?,
            "sigma_aug" => mm.sigma_aug = parse(key, v)?,
            "hidden" => mm.hidden = parse(key, v)?,
            "steps_per_epoch" => {
                mm.steps_per_epoch = if v == "auto" { None } else { Some(parse(key, v)?) }
            }
            "synth_dim" => s.synth.dim = parse(key, v)?,
            "synth_per_class" => s.synth.per_class = parse(key, v)?,
            "synth_spread" => s.synth.spread = parse(key, v)?,
            "synth_seed" => s.synth.seed = parse(key, v)?,
            "measures" => s.distances.measures = values.iter().map(|m| m.parse()).collect::<Result<_>>()?,
            "tau" => s.distances.tau = parse(key, v)?,
            "draws" => s.distances.draws = parse(key, v)?,
            "bins" => s.distances.bins = parse(key, v)?,
            "data_dir" => s.data_dir = PathBuf::from(v),
            "baseline" => s.baseline = parse(key, v)?,
            _ => unreachable!("key checked against SETTING_KEYS"),
        }
    }
    s.mixmatch.validate()?;
    if s.distances.measures.is_empty() || s.distances.tau == 0 || s.distances.draws == 0 || s.distances.bins == 0 {
        return Err(Error::Config("measures, tau, draws and bins must be non-empty / positive".into()));
    }
    Ok(s)
}

/// Shift of a synthetic source name: `blobs` → 0, `blobs@2.5` → 2.5.
pub fn synthetic_shift(name: &str) -> Option<f64> {
    match name.split_once('@') {
        None if name == "blobs" => Some(0.0),
        Some(("blobs", shift)) => shift.parse().ok().filter(|s: &f64| s.is_finite()),
        _ => None,
    }
}

fn dataset_path(data_dir: &Path, name: &str) -> PathBuf {
    let direct = data_dir.join(name);
    if matches!(direct.extension().and_then(|e| e.to_str()), Some("ddim" | "csv")) {
        direct
    } else {
        data_dir.join(format!("{name}.ddim"))
    }
}

/// Loads the named labelled source with `classes` classes.
pub fn resolve_source(settings: &StudySettings, name: &str, classes: usize) -> Result<LabeledFeatureSet> {
    if let Some(shift) = synthetic_shift(name) {
        let s = &settings.synth;
        let layout = ClusterLayout::new(classes, s.dim, s.seed)?;
        let set = layout.sample(s.per_class, s.spread, shift, derive_seed(s.seed, shift.to_bits()), name)?;
        return Ok(set);
    }
    let path = dataset_path(&settings.data_dir, name);
    let mut set = load_labeled(&path, FileFormat::from_path(&path))?;
    set.features = set.features.with_name(name);
    Ok(set)
}

/// Sources of one cell. Other-half cells need twice the class count.
pub fn cell_sources(settings: &StudySettings, cell: &SandboxConfig) -> Result<Sources> {
    let iod_classes = if cell.t_ood == OodType::OH { 2 * cell.num_classes } else { cell.num_classes };
    let iod = resolve_source(settings, &cell.s_iod, iod_classes)?;
    let ood = match cell.t_ood {
        OodType::OH => None,
        _ if synthetic_shift(&cell.s_uood).is_some() => {
            Some(resolve_source(settings, &cell.s_uood, cell.num_classes)?.features)
        }
        _ => {
            let path = dataset_path(&settings.data_dir, &cell.s_uood);
            Some(load_features(&path, FileFormat::from_path(&path))?.with_name(cell.s_uood.as_str()))
        }
    };
    Ok(Sources { iod, ood })
}

/// Accuracy trace of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub best_accuracy: f64,
    pub best_epoch: usize,
    pub epoch_accuracy: Vec<f64>,
}

impl RunSummary {
    fn of(run: usize, outcome: &TrainOutcome) -> Self {
        Self {
            run,
            best_accuracy: outcome.best_accuracy,
            best_epoch: outcome.best_epoch,
            epoch_accuracy: outcome.epoch_accuracy.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config: SandboxConfig,
    pub mixmatch: MixMatchConfig,
    pub runs: Vec<RunSummary>,
    pub aggregate: RunAggregate,
    pub supervised: Option<RunAggregate>,
    /// Labelled vs unlabelled pool, draws pooled over all runs.
    pub distances: Vec<DissimilarityReport>,
}

struct RunOutput {
    ssdl: RunSummary,
    supervised: Option<f64>,
    distances: Vec<DissimilarityReport>,
}

fn training_seed(cell: &SandboxConfig, run: usize) -> u64 {
    derive_seed(cell.seed, run as u64)
}

fn execute_run(settings: &StudySettings, cell: &SandboxConfig, sources: &Sources, run: usize) -> Result<RunOutput> {
    let data: RunData = build_run(cell, sources, run)?;
    let seed = training_seed(cell, run);
    let ssdl = RunSummary::of(run, &train(&data, &settings.mixmatch, seed)?);
    let supervised = if settings.baseline {
        Some(train_supervised(&data, &settings.mixmatch, seed)?.best_accuracy)
    } else {
        None
    };
    let tau = settings.distances.tau.min(cell.n_l / 2).max(1);
    let spec = SubsampleSpec::new(tau, settings.distances.draws, derive_seed(derive_seed(cell.seed, DISTANCE_STREAM), run as u64))?;
    let distances = settings
        .distances
        .measures
        .iter()
        .map(|&m| dissimilarity(&data.raw_labelled, &data.raw_unlabelled, &spec, m, settings.distances.bins))
        .collect::<Result<_>>()?;
    Ok(RunOutput { ssdl, supervised, distances })
}

fn collect_cell(settings: &StudySettings, cell: &SandboxConfig, outputs: Vec<RunOutput>) -> Result<CellResult> {
    let accuracies: Vec<f64> = outputs.iter().map(|o| o.ssdl.best_accuracy).collect();
    let supervised = if settings.baseline {
        let sup: Vec<f64> = outputs.iter().filter_map(|o| o.supervised).collect();
        Some(aggregate(&sup, cell)?)
    } else {
        None
    };
    let distances = (0..settings.distances.measures.len())
        .map(|m| {
            let per_run: Vec<DissimilarityReport> = outputs.iter().map(|o| o.distances[m].clone()).collect();
            DissimilarityReport::pooled(&per_run)
        })
        .collect::<Result<_>>()?;
    Ok(CellResult {
        config: cell.clone(),
        mixmatch: settings.mixmatch.clone(),
        aggregate: aggregate(&accuracies, cell)?,
        runs: outputs.into_iter().map(|o| o.ssdl).collect(),
        supervised,
        distances,
    })
}

/// Runs every cell. Work is spread over the current rayon pool run by run;
/// results are identical for any pool size.
pub fn run_grid(grid: &Grid) -> Result<Vec<CellResult>> {
    let mut cache: BTreeMap<(String, OodType, String, usize), Sources> = BTreeMap::new();
    for cell in &grid.cells {
        let key = (cell.s_iod.clone(), cell.t_ood, cell.s_uood.clone(), cell.num_classes);
        if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(key) {
            slot.insert(cell_sources(&grid.settings, cell)?);
        }
    }
    let jobs: Vec<(usize, usize)> = grid
        .cells
        .iter()
        .enumerate()
        .flat_map(|(c, cell)| (0..cell.runs).map(move |r| (c, r)))
        .collect();
    let mut outputs = jobs
        .par_iter()
        .map(|&(c, r)| {
            let cell = &grid.cells[c];
            let sources = &cache[&(cell.s_iod.clone(), cell.t_ood, cell.s_uood.clone(), cell.num_classes)];
            execute_run(&grid.settings, cell, sources, r)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    grid.cells
        .iter()
        .map(|cell| collect_cell(&grid.settings, cell, outputs.by_ref().take(cell.runs).collect()))
        .collect()
}

/// Runs one cell on its own.
pub fn run_cell(settings: &StudySettings, cell: &SandboxConfig) -> Result<CellResult> {
    let grid = Grid { settings: settings.clone(), cells: vec![cell.clone()] };
    Ok(run_grid(&grid)?.remove(0))
}

pub fn report(results: &[CellResult]) -> Result<ReportTable> {
    let aggregates: Vec<RunAggregate> = results.iter().map(|r| r.aggregate.clone()).collect();
    let distances: Vec<(CellKey, Vec<DissimilarityReport>)> =
        results.iter().map(|r| (CellKey::of(&r.config), r.distances.clone())).collect();
    report_matrix(&aggregates, &distances)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartesian_expansion_order() {
        let grid = Grid::from_text("n_l = 60, 100\npct_uood = 0,50 # two levels\nepochs = 3\n", &[]).unwrap();
        let cells: Vec<(u32, usize)> = grid.cells.iter().map(|c| (c.pct_uood, c.n_l)).collect();
        assert_eq!(cells, vec![(0, 60), (0, 100), (50, 60), (50, 100)]);
        assert_eq!(grid.settings.mixmatch.epochs, 3);
    }

    #[test]
    fn overrides_replace_file_values() {
        let grid = Grid::from_text("n_l = 60, 100\n", &[("n_l".into(), "150".into())]).unwrap();
        assert_eq!(grid.cells.len(), 1);
        assert_eq!(grid.cells[0].n_l, 150);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Grid::from_text("bogus = 1\n", &[]).is_err());
        assert!(Grid::from_text("n_l 60\n", &[]).is_err());
        assert!(Grid::from_text("n_l = 60\nn_l = 100\n", &[]).is_err());
        assert!(Grid::from_text("epochs = 1, 2\n", &[]).is_err());
        assert!(Grid::from_text("pct_uood = 25\n", &[]).is_err());
        assert!(Grid::from_text("seed = 1, 2\n", &[]).is_err());
        assert!(Grid::from_text("measures = cos, nope\n", &[]).is_err());
    }

    #[test]
    fn synthetic_names() {
        assert_eq!(synthetic_shift("blobs"), Some(0.0));
        assert_eq!(synthetic_shift("blobs@2.5"), Some(2.5));
        assert_eq!(synthetic_shift("blobs@x"), None);
        assert_eq!(synthetic_shift("mnist"), None);
    }

    #[test]
    fn other_half_sources_have_twice_the_classes() {
        let settings = StudySettings {
            synth: SynthSettings { per_class: 10, ..SynthSettings::default() },
            ..StudySettings::default()
        };
        let cell = SandboxConfig { t_ood: OodType::OH, ..SandboxConfig::default() };
        let sources = cell_sources(&settings, &cell).unwrap();
        assert_eq!(sources.iod.num_classes, 10);
        assert!(sources.ood.is_none());
    }

    #[test]
    fn tiny_grid_runs_and_reports() {
        let text = "n_l = 20\nn_u = 40\nn_test = 30\nruns = 2\nepochs = 2\npct_uood = 0, 100\n\
                    synth_dim = 4\nsynth_per_class = 40\ntau = 10\ndraws = 3\nbaseline = true\n";
        let grid = Grid::from_text(text, &[]).unwrap();
        let results = run_grid(&grid).unwrap();
        assert_eq!(results.len(), 2);
        for r in &results {
            assert_eq!(r.runs.len(), 2);
            assert_eq!(r.distances.len(), 4);
            assert_eq!(r.distances[0].draws, 6);
            assert!(r.supervised.is_some());
        }
        let table = report(&results).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(run_cell(&grid.settings, &grid.cells[1]).unwrap(), results[1]);
    }
}
