//! The end-to-end workflow: load, normalize, autoencoder, elliptical graph,
//! feature stacking, GCN refinement, ensemble selection, evaluation.
//!
//! Every run writes into its own directory:
//!
//! | file                    | content                                      |
//! |-------------------------|----------------------------------------------|
//! | `config.toml`           | effective configuration with the run seed     |
//! | `endmembers.csv`        | autoencoder endmembers                        |
//! | `abundances.csv`, `em*.pgm` | final abundance maps                      |
//! | `ae_abundances.csv`     | autoencoder abundances                        |
//! | `gcn_abundances.csv`    | GCN abundances (needs ground truth)           |
//! | `ensemble.csv`          | validation RMSE per channel and the choice    |
//! | `graph.csv`             | directed graph edges                          |
//! | `features.aew`          | stacked node and edge features                |
//! | `autoencoder.aew`, `autoencoder_log.csv` | weights and loss per epoch   |
//! | `gcn.aew`, `gcn_log.csv`, `cv.csv` | GCN weights, log and grid scores   |
//! | `truth/`                | ground truth used for scoring                 |
//! | `metrics.csv`, `metrics.txt` | the report                               |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::autoencoder::{train_autoencoder, TrainedAutoencoder};
use crate::config::RunConfig;
use crate::ensemble::{ensemble_select, summary_csv, Estimate, MetricsReport, Selection, Source};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::gcn::{
    cross_validate, node_features, normalized_operator, split_labels, targets_from, to_stack, train_gcn,
    write_training_log, CvResult, LabelSplit,
};
use crate::graph::{stack_features, EllipticalGraph};
use crate::hsi::{
    load_cube, normalize, read_abundance_csv, read_endmember_csv, read_endmember_names, save_abundance_maps,
    save_cube, synthesize_scene, write_abundance_csv, write_endmember_csv, write_file,
    write_named_endmember_csv, AbundanceStack, CubeFormat, GroundTruth, HsiCube, Precision,
};
use crate::metrics::match_endmembers;

pub const CONFIG_TOML: &str = "config.toml";
pub const ENDMEMBERS_CSV: &str = "endmembers.csv";
pub const ABUNDANCES_CSV: &str = "abundances.csv";
pub const AE_ABUNDANCES_CSV: &str = "ae_abundances.csv";
pub const GCN_ABUNDANCES_CSV: &str = "gcn_abundances.csv";
pub const ENSEMBLE_CSV: &str = "ensemble.csv";
pub const GRAPH_CSV: &str = "graph.csv";
pub const FEATURES_AEW: &str = "features.aew";
pub const AE_MODEL: &str = "autoencoder.aew";
pub const AE_LOG_CSV: &str = "autoencoder_log.csv";
pub const GCN_MODEL: &str = "gcn.aew";
pub const GCN_LOG_CSV: &str = "gcn_log.csv";
pub const CV_CSV: &str = "cv.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TXT: &str = "metrics.txt";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const TRUTH_DIR: &str = "truth";
pub const SCENE_CUBE: &str = "cube.hsb";

/// A loaded scene before normalization.
#[derive(Clone, Debug)]
pub struct Scene {
    pub cube: HsiCube,
    pub truth: Option<GroundTruth>,
    pub names: Vec<String>,
}

impl Scene {
    pub fn endmember_count(&self, config: &RunConfig) -> Result<usize> {
        if let Some(t) = &self.truth {
            return Ok(t.endmembers.count());
        }
        config
            .input
            .as_ref()
            .and_then(|i| i.endmembers)
            .ok_or_else(|| Error::InvalidArgument("input without truth needs `endmembers` in [input]".into()))
    }
}

/// Reads `endmembers.csv` and `abundances.csv` from a truth directory.
pub fn load_truth(dir: &Path) -> Result<(GroundTruth, Vec<String>)> {
    let path = dir.join(ENDMEMBERS_CSV);
    let endmembers = read_endmember_csv(&path)?;
    let names = read_endmember_names(&path)?;
    let abundances = read_abundance_csv(&dir.join(ABUNDANCES_CSV))?;
    if abundances.count() != endmembers.count() {
        return Err(Error::InvalidArgument(format!(
            "{}: {} endmembers but {} abundance channels",
            dir.display(),
            endmembers.count(),
            abundances.count()
        )));
    }
    Ok((GroundTruth { endmembers, abundances }, names))
}

/// Writes ground truth with material names as endmember headers.
pub fn save_truth(truth: &GroundTruth, names: &[String], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_named_endmember_csv(&truth.endmembers, names, &dir.join(ENDMEMBERS_CSV))?;
    write_abundance_csv(&truth.abundances, &dir.join(ABUNDANCES_CSV))
}

fn default_names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("em{j}")).collect()
}

pub fn load_scene(config: &RunConfig) -> Result<Scene> {
    let (cube, truth, file_names) = match (&config.input, &config.scene) {
        (Some(input), _) => {
            let cube = load_cube(&input.cube, input.format())?;
            let (truth, names) = match &input.truth {
                Some(dir) => {
                    let (t, n) = load_truth(dir)?;
                    (Some(t), Some(n))
                }
                None => (None, None),
            };
            (cube, truth, names)
        }
        (None, Some(spec)) => {
            let (cube, truth) = synthesize_scene(spec)?;
            (cube, Some(truth), None)
        }
        (None, None) => return Err(Error::InvalidArgument("one of [input] or [scene] is required".into())),
    };
    if let Some(t) = &truth {
        let a = &t.abundances;
        if t.endmembers.bands() != cube.bands() || a.height() != cube.height() || a.width() != cube.width() {
            return Err(Error::InvalidArgument(format!(
                "ground truth is {}x{} with {} bands, cube is {}x{}x{}",
                a.height(),
                a.width(),
                t.endmembers.bands(),
                cube.height(),
                cube.width(),
                cube.bands()
            )));
        }
    }
    let p = truth.as_ref().map(|t| t.endmembers.count());
    let names = if !config.materials.is_empty() {
        if p.is_some_and(|p| p != config.materials.len()) {
            return Err(Error::InvalidArgument(format!(
                "{} material names for {} endmembers",
                config.materials.len(),
                p.unwrap_or(0)
            )));
        }
        config.materials.clone()
    } else {
        file_names.or_else(|| p.map(default_names)).unwrap_or_default()
    };
    Ok(Scene { cube, truth, names })
}

/// Everything one run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub seed: u64,
    /// Autoencoder output, channels in ground-truth order when truth exists.
    pub autoencoder: TrainedAutoencoder,
    pub graph: EllipticalGraph,
    pub split: Option<LabelSplit>,
    pub cv: Option<CvResult>,
    pub gcn_abundances: Option<AbundanceStack>,
    pub selection: Option<Selection>,
    pub report: Option<MetricsReport>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// The effective configuration of one run: every stage seeded from `seed`.
pub fn seeded(config: &RunConfig, seed: u64) -> RunConfig {
    let mut c = config.clone();
    c.seed = seed;
    c.repeat = 1;
    c.autoencoder.seed = seed;
    c.gcn.seed = seed;
    c
}

/// Trains the autoencoder and, with ground truth, puts its channels in
/// truth order.
pub fn autoencoder_stage(cube: &HsiCube, truth: Option<&GroundTruth>, config: &RunConfig, p: usize) -> Result<TrainedAutoencoder> {
    let mut ae_config = config.autoencoder.clone();
    if let Some(last) = ae_config.encoder_filters.last_mut() {
        *last = p;
    }
    let mut ae = stage("autoencoder", train_autoencoder(cube, &ae_config))?;
    if let Some(t) = truth {
        let order = stage("match", match_endmembers(&ae.endmembers, &t.endmembers))?.order();
        ae.endmembers = ae.endmembers.reorder(&order)?;
        ae.abundances = ae.abundances.reorder(&order)?;
    }
    Ok(ae)
}

fn loss_log_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        writeln!(out, "{e},{}", sig9(*l)).expect("write to string");
    }
    out
}

fn write_autoencoder(ae: &TrainedAutoencoder, dir: &Path) -> Result<()> {
    ae.model.save(&dir.join(AE_MODEL))?;
    write_file(&dir.join(AE_LOG_CSV), loss_log_csv(&ae.loss_history).as_bytes())?;
    write_endmember_csv(&ae.endmembers, &dir.join(ENDMEMBERS_CSV))?;
    write_abundance_csv(&ae.abundances, &dir.join(AE_ABUNDANCES_CSV))
}

fn ensemble_csv(sel: &Selection, names: &[String]) -> String {
    let mut out = String::from("material,val_rmse_ae,val_rmse_gcn,val_rmse_selected,val_rmse_final,source\n");
    for j in 0..sel.choices.len() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            names[j],
            sig9(sel.val_rmse_ae[j]),
            sig9(sel.val_rmse_gcn[j]),
            sig9(sel.val_rmse_selected[j]),
            sig9(sel.val_rmse_final[j]),
            sel.choices[j]
        )
        .expect("write to string");
    }
    out
}

fn cv_csv(cv: &CvResult) -> String {
    let mut out = String::from("hidden,learning_rate,mean_bce,fold_bce\n");
    for s in &cv.scores {
        let folds: Vec<String> = s.fold_losses.iter().map(|v| sig9(*v)).collect();
        writeln!(out, "{},{},{},{}", s.hidden, sig9(s.learning_rate), sig9(s.mean), folds.join(" ")).expect("write to string");
    }
    out
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs every stage once with `seed`, writing into `dir`.
pub fn run_once(config: &RunConfig, seed: u64, dir: &Path) -> Result<RunOutcome> {
    let start = Instant::now();
    let config = seeded(config, seed);
    config.validate()?;
    let scene = load_scene(&config)?;
    let p = scene.endmember_count(&config)?;
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_TOML), config.to_toml().as_bytes())?;
    if config.input.is_none() {
        save_cube(&scene.cube, &dir.join(SCENE_CUBE), CubeFormat::Hsb, Precision::F64)?;
    }
    let cube = stage("normalize", normalize(&scene.cube, config.normalize))?;
    let truth = scene.truth.as_ref();

    let ae = autoencoder_stage(&cube, truth, &config, p)?;
    write_autoencoder(&ae, dir)?;

    let graph = stage("graph", EllipticalGraph::from_cube(&cube, Some(&ae.abundances), &config.graph))?;
    graph.write_csv(&dir.join(GRAPH_CSV))?;
    let stacked = stage("stack", stack_features(&graph, &ae.abundances))?;
    stacked.save(&dir.join(FEATURES_AEW))?;

    let mut outcome = RunOutcome {
        dir: dir.to_path_buf(),
        seed,
        autoencoder: ae,
        graph,
        split: None,
        cv: None,
        gcn_abundances: None,
        selection: None,
        report: None,
    };
    let Some(truth) = truth else {
        save_abundance_maps(&outcome.autoencoder.abundances, dir)?;
        return Ok(outcome);
    };

    let ae_abundances = &outcome.autoencoder.abundances;
    let mut gcn_config = config.gcn.clone();
    let split = split_labels(cube.pixels(), gcn_config.label_fraction, gcn_config.validation_fraction, seed);
    let operator = normalized_operator(&outcome.graph).into_shared();
    let features = stage("gcn", node_features(ae_abundances, &cube, &gcn_config))?;
    let targets = targets_from(&truth.abundances);
    if !gcn_config.cv_hidden.is_empty() || !gcn_config.cv_learning_rates.is_empty() {
        let cv = stage("cross-validation", cross_validate(operator.clone(), &features, &targets, &split.train, &gcn_config))?;
        write_file(&dir.join(CV_CSV), cv_csv(&cv).as_bytes())?;
        gcn_config.hidden = cv.best_hidden;
        gcn_config.learning_rate = cv.best_learning_rate;
        outcome.cv = Some(cv);
    }
    let (model, log) = stage("gcn", train_gcn(operator, &features, &targets, &split.train, &split.validation, &gcn_config))?;
    model.save(&dir.join(GCN_MODEL))?;
    write_training_log(&log, &dir.join(GCN_LOG_CSV))?;
    let refined = stage("gcn", model.forward(&features).and_then(|y| to_stack(&y, cube.height(), cube.width())))?;
    write_abundance_csv(&refined, &dir.join(GCN_ABUNDANCES_CSV))?;

    let selection = stage("ensemble", ensemble_select(ae_abundances, &refined, &truth.abundances, &split.validation))?;
    write_file(&dir.join(ENSEMBLE_CSV), ensemble_csv(&selection, &scene.names).as_bytes())?;
    save_abundance_maps(&selection.stack, dir)?;

    let truth_dir = dir.join(TRUTH_DIR);
    save_truth(truth, &scene.names, &truth_dir)?;
    let mut report = stage("eval", evaluate_dir(dir, &truth_dir))?;
    report.seed = Some(seed);
    report.timing_secs = Some(start.elapsed().as_secs_f64());
    report.write_csv(&dir.join(METRICS_CSV))?;
    write_file(&dir.join(METRICS_TXT), report.to_text().as_bytes())?;

    outcome.split = Some(split);
    outcome.gcn_abundances = Some(refined);
    outcome.selection = Some(selection);
    outcome.report = Some(report);
    Ok(outcome)
}

/// Directory of run `k` out of `repeat`.
pub fn run_dir(out: &Path, k: usize, repeat: usize) -> PathBuf {
    if repeat == 1 {
        out.to_path_buf()
    } else {
        out.join(format!("run{k:02}"))
    }
}

/// All `repeat` runs with seeds `seed, seed + 1, …` on at most `threads`
/// workers, plus `summary.csv` over the runs that have a report.
pub fn run(config: &RunConfig, threads: usize) -> Result<Vec<RunOutcome>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        (0..config.repeat)
            .into_par_iter()
            .map(|k| run_once(config, config.run_seed(k), &run_dir(&config.out, k, config.repeat)))
            .collect::<Result<_>>()
    })?;
    let reports: Vec<MetricsReport> = outcomes.iter().filter_map(|o| o.report.clone()).collect();
    if config.repeat > 1 && !reports.is_empty() {
        write_file(&config.out.join(SUMMARY_CSV), summary_csv(&reports).as_bytes())?;
    }
    Ok(outcomes)
}

fn read_sources(path: &Path) -> Result<Vec<Source>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let last = l.rsplit(',').next().unwrap_or("");
            last.trim().parse().map_err(|e: Error| Error::Parse {
                path: path.into(),
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

fn read_optional_stack(path: &Path) -> Result<Option<AbundanceStack>> {
    if path.exists() { read_abundance_csv(path).map(Some) } else { Ok(None) }
}

/// Scores a saved run directory against a truth directory. Material names
/// come from the truth endmember headers.
pub fn evaluate_dir(estimate: &Path, truth: &Path) -> Result<MetricsReport> {
    let (gt, names) = load_truth(truth)?;
    let abundances = read_abundance_csv(&estimate.join(ABUNDANCES_CSV))?;
    let ensemble = estimate.join(ENSEMBLE_CSV);
    let choices = if ensemble.exists() { Some(read_sources(&ensemble)?) } else { None };
    if choices.as_ref().is_some_and(|c| c.len() != abundances.count()) {
        return Err(Error::InvalidArgument(format!("{}: one row per channel expected", ensemble.display())));
    }
    let estimate = Estimate {
        endmembers: read_endmember_csv(&estimate.join(ENDMEMBERS_CSV))?,
        abundances,
        ae_abundances: read_optional_stack(&estimate.join(AE_ABUNDANCES_CSV))?,
        gcn_abundances: read_optional_stack(&estimate.join(GCN_ABUNDANCES_CSV))?,
        choices,
    };
    if estimate.endmembers.count() != gt.endmembers.count() || estimate.endmembers.bands() != gt.endmembers.bands() {
        return Err(Error::InvalidArgument(format!(
            "estimate has {} endmembers over {} bands, truth has {} over {}",
            estimate.endmembers.count(),
            estimate.endmembers.bands(),
            gt.endmembers.count(),
            gt.endmembers.bands()
        )));
    }
    Ok(MetricsReport::evaluate(&estimate, &gt, Some(&names))?.0)
}

/// Autoencoder only: endmembers, abundance maps and, with ground truth, a
/// report with every channel sourced from the autoencoder.
pub fn run_autoencoder(config: &RunConfig, dir: &Path) -> Result<(TrainedAutoencoder, Option<MetricsReport>)> {
    let config = seeded(config, config.seed);
    config.validate()?;
    let scene = load_scene(&config)?;
    let p = scene.endmember_count(&config)?;
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_TOML), config.to_toml().as_bytes())?;
    let cube = stage("normalize", normalize(&scene.cube, config.normalize))?;
    let ae = autoencoder_stage(&cube, scene.truth.as_ref(), &config, p)?;
    write_autoencoder(&ae, dir)?;
    save_abundance_maps(&ae.abundances, dir)?;
    let Some(truth) = &scene.truth else { return Ok((ae, None)) };
    let truth_dir = dir.join(TRUTH_DIR);
    save_truth(truth, &scene.names, &truth_dir)?;
    let mut report = stage("eval", evaluate_dir(dir, &truth_dir))?;
    report.seed = Some(config.seed);
    report.write_csv(&dir.join(METRICS_CSV))?;
    write_file(&dir.join(METRICS_TXT), report.to_text().as_bytes())?;
    Ok((ae, Some(report)))
}

/// Graph only, weighted by spectra: `graph.csv`.
pub fn run_graph(config: &RunConfig, dir: &Path) -> Result<EllipticalGraph> {
    config.validate()?;
    if config.graph.sad_source != crate::graph::SadSource::Spectra {
        return Err(Error::InvalidArgument("the graph command weights edges by spectra; set sad_source = \"spectra\"".into()));
    }
    let scene = load_scene(config)?;
    let cube = stage("normalize", normalize(&scene.cube, config.normalize))?;
    let graph = stage("graph", EllipticalGraph::from_cube(&cube, None, &config.graph))?;
    create_dir(dir)?;
    graph.write_csv(&dir.join(GRAPH_CSV))?;
    Ok(graph)
}
