//! Merge execution and the sweep procedure.
//!
//! The procedure runs in five steps:
//!
//! 1. an optional validation gate checking the run actually improved,
//! 2. uniform soups of the last `k` checkpoints for every `k` in a grid,
//! 3. interval soups for the shortlisted `k` values where the run is deep
//!    enough,
//! 4. a shortlist over the union of steps 2 and 3,
//! 5. loss- and steps-weighted soups of each shortlisted selection over a
//!    grid of penalty factors, next to the uniform soup of the same selection.
//!
//! Every row is then compared against the final checkpoint and the last
//! merging checkpoint.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{dare_ties_merge, slerp_merge, ties_merge, BaseChoice, DareParams, TiesParams};
use crate::error::{Error, Result};
use crate::io::container::{read_container, write_container, ContentDigest};
use crate::io::manifest::{
    write_merge_manifest, ManifestInput, MergeManifest, MethodParams, SchemeRecord, CONTAINER_FILE,
    MANIFEST_FILE,
};
use crate::merge::merge_linear;
use crate::naming::{BaselineMethod, BaselineName, MergeName, SoupScheme};
use crate::selection::{select_last_k, CheckpointRecord, RunManifest, SelectionSpec};
use crate::tensor::TensorMap;
use crate::weighting::{
    penalized_weights, uniform_weights, MetricKind, WeightScheme, WeightVector, DEFAULT_POWER,
};

/// Uniform-soup sizes tried first.
pub const DEFAULT_KS: [u32; 6] = [2, 3, 4, 5, 8, 10];
pub const DEFAULT_INTERVALS: [u32; 2] = [2, 3];
pub const DEFAULT_SHORTLIST: usize = 2;
pub const DEFAULT_LOSS_PENALTIES: [f64; 7] = [0.5, 0.6, 0.7, 0.75, 0.8, 0.9, 1.0];
pub const DEFAULT_STEPS_PENALTIES: [f64; 8] = [0.5, 0.6, 0.7, 0.75, 0.8, 0.9, 1.0, 1.05];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsBetter,
    LowerIsBetter,
}

impl Orientation {
    /// Orders scores best first.
    pub fn compare(self, a: f64, b: f64) -> std::cmp::Ordering {
        match self {
            Orientation::HigherIsBetter => b.total_cmp(&a),
            Orientation::LowerIsBetter => a.total_cmp(&b),
        }
    }

    pub fn is_better(self, candidate: f64, reference: f64) -> bool {
        self.compare(candidate, reference) == std::cmp::Ordering::Less
    }
}

/// Percentage improvement of `score` over `reference`; positive is always
/// better regardless of orientation.
pub fn relative_improvement(score: f64, reference: f64, orientation: Orientation) -> Option<f64> {
    if reference == 0.0 || !reference.is_finite() || !score.is_finite() {
        return None;
    }
    let delta = match orientation {
        Orientation::HigherIsBetter => score - reference,
        Orientation::LowerIsBetter => reference - score,
    };
    Some(delta / reference * 100.0)
}

/// A model handed to an evaluator.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub name: &'a str,
    pub tensors: &'a TensorMap,
    /// Where the container was written, if it was.
    pub container: Option<&'a Path>,
}

pub trait Evaluator: Send + Sync {
    /// Must be deterministic for a fixed candidate.
    fn score(&self, candidate: &Candidate<'_>) -> Result<f64>;

    fn orientation(&self) -> Orientation;

    /// Whether `score` may be called from several threads at once.
    fn supports_concurrency(&self) -> bool {
        true
    }

    fn describe(&self) -> String;
}

/// Runs `program [args..] <container path>` and parses one number from its
/// standard output.
#[derive(Debug, Clone)]
pub struct ExternalCommandEvaluator {
    pub program: String,
    pub args: Vec<String>,
    pub orientation: Orientation,
}

impl Evaluator for ExternalCommandEvaluator {
    fn score(&self, candidate: &Candidate<'_>) -> Result<f64> {
        let scratch;
        let container = match candidate.container {
            Some(path) => path.to_owned(),
            None => {
                scratch = tempfile::Builder::new()
                    .suffix(".safetensors")
                    .tempfile()
                    .map_err(|e| Error::io(std::env::temp_dir(), e))?;
                write_container(candidate.tensors, scratch.path())?;
                scratch.path().to_owned()
            }
        };
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(&container)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !output.status.success() {
            return Err(Error::Evaluator(format!(
                "{} exited with {} for {}: {}",
                self.program,
                output.status,
                candidate.name,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        stdout.trim().parse::<f64>().map_err(|_| {
            Error::Evaluator(format!(
                "{} printed {:?}, expected one real number",
                self.program,
                stdout.trim()
            ))
        })
    }

    fn orientation(&self) -> Orientation {
        self.orientation
    }

    fn supports_concurrency(&self) -> bool {
        false
    }

    fn describe(&self) -> String {
        format!("external-command({})", self.program)
    }
}

/// Lazily loaded, shared checkpoint tensors.
#[derive(Debug)]
pub struct CheckpointStore {
    run: RunManifest,
    loaded: Vec<OnceLock<Arc<TensorMap>>>,
}

impl CheckpointStore {
    pub fn new(run: RunManifest) -> Self {
        let loaded = run.checkpoints().iter().map(|_| OnceLock::new()).collect();
        Self { run, loaded }
    }

    /// Pre-populates a checkpoint, bypassing the filesystem.
    pub fn with_tensors(run: RunManifest, tensors: Vec<TensorMap>) -> Result<Self> {
        if tensors.len() != run.checkpoints().len() {
            return Err(Error::LengthMismatch {
                what: "one tensor map per checkpoint",
                expected: run.checkpoints().len(),
                actual: tensors.len(),
            });
        }
        let loaded = tensors
            .into_iter()
            .map(|t| OnceLock::from(Arc::new(t)))
            .collect();
        Ok(Self { run, loaded })
    }

    pub fn run(&self) -> &RunManifest {
        &self.run
    }

    pub fn get(&self, record: &CheckpointRecord) -> Result<Arc<TensorMap>> {
        let index = self
            .run
            .checkpoints()
            .iter()
            .position(|c| c.id == record.id)
            .ok_or_else(|| Error::InvalidRun(format!("unknown checkpoint {:?}", record.id)))?;
        if let Some(map) = self.loaded[index].get() {
            return Ok(Arc::clone(map));
        }
        let map = Arc::new(read_container(&record.path)?);
        Ok(Arc::clone(self.loaded[index].get_or_init(|| map)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodSpec {
    Uniform,
    Weighted {
        metric: MetricKind,
        penalty: f64,
        power: f64,
    },
    Ties(TiesParams),
    DareTies(TiesParams, DareParams),
    Slerp {
        t: f64,
    },
}

impl MethodSpec {
    pub fn label(&self) -> &'static str {
        match self {
            MethodSpec::Uniform => "uniform",
            MethodSpec::Weighted { .. } => "mwa",
            MethodSpec::Ties(_) => "ties",
            MethodSpec::DareTies(..) => "dare_ties",
            MethodSpec::Slerp { .. } => "slerp",
        }
    }
}

/// Everything needed to reproduce one merge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRecipe {
    pub selection: SelectionSpec,
    pub method: MethodSpec,
    /// Base checkpoint for task-vector methods; ignored by linear soups.
    pub base: BaseChoice,
}

impl MergeRecipe {
    pub fn uniform(selection: SelectionSpec) -> Self {
        Self {
            selection,
            method: MethodSpec::Uniform,
            base: BaseChoice::First,
        }
    }

    pub fn weighted(selection: SelectionSpec, metric: MetricKind, penalty: f64, power: f64) -> Self {
        Self {
            selection,
            method: MethodSpec::Weighted {
                metric,
                penalty,
                power,
            },
            base: BaseChoice::First,
        }
    }

    /// Directory name of the merged output.
    pub fn name(&self) -> String {
        let baseline = |method| {
            BaselineName {
                method,
                k: self.selection.k,
                interval: self.selection.interval,
                base: self.base,
            }
            .to_string()
        };
        match self.method {
            MethodSpec::Uniform => MergeName::new(self.selection, SoupScheme::Unweighted).to_string(),
            MethodSpec::Weighted {
                metric, penalty, ..
            } => MergeName::new(self.selection, SoupScheme::weighted(metric, penalty)).to_string(),
            MethodSpec::Ties(_) => baseline(BaselineMethod::Ties),
            MethodSpec::DareTies(..) => baseline(BaselineMethod::DareTies),
            MethodSpec::Slerp { .. } => baseline(BaselineMethod::Slerp),
        }
    }
}

/// A merged model held in memory, with its provenance.
#[derive(Debug, Clone)]
pub struct MergedModel {
    pub name: String,
    pub recipe: MergeRecipe,
    pub tensors: TensorMap,
    pub inputs: Vec<ManifestInput>,
    pub scheme: Option<SchemeRecord>,
    pub params: MethodParams,
}

impl MergedModel {
    pub fn manifest(&self, digest: ContentDigest) -> MergeManifest {
        MergeManifest {
            name: self.name.clone(),
            method: self.recipe.method.label().to_owned(),
            inputs: self.inputs.clone(),
            scheme: self.scheme.clone(),
            params: self.params.clone(),
            container: CONTAINER_FILE.to_owned(),
            digest,
        }
    }
}

fn metric_values(selected: &[&CheckpointRecord], metric: MetricKind) -> Vec<f64> {
    selected
        .iter()
        .map(|c| match metric {
            MetricKind::Loss => c.train_loss,
            MetricKind::Steps => c.step as f64,
        })
        .collect()
}

fn linear_inputs(selected: &[&CheckpointRecord], metrics: Option<&[f64]>, weights: &WeightVector) -> Vec<ManifestInput> {
    selected
        .iter()
        .enumerate()
        .map(|(i, c)| ManifestInput {
            checkpoint_id: c.id.clone(),
            step: c.step,
            metric: metrics.map(|m| m[i]),
            weight: Some(weights[i]),
        })
        .collect()
}

/// Selects checkpoints, computes weights and merges, all in memory.
pub fn execute_merge(store: &CheckpointStore, recipe: &MergeRecipe) -> Result<MergedModel> {
    let run = store.run();
    let selected = select_last_k(run, &recipe.selection)?;
    let maps = selected
        .iter()
        .map(|c| store.get(c))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TensorMap> = maps.iter().map(Arc::as_ref).collect();
    let base_record = match recipe.base {
        BaseChoice::First => run.first_checkpoint(),
        BaseChoice::Last => run.final_checkpoint(),
    };
    let task_inputs = || -> Vec<ManifestInput> {
        selected
            .iter()
            .map(|c| ManifestInput {
                checkpoint_id: c.id.clone(),
                step: c.step,
                metric: None,
                weight: None,
            })
            .collect()
    };
    let base_params = |params: MethodParams| MethodParams {
        base: Some(recipe.base.as_str().to_owned()),
        base_checkpoint: Some(base_record.id.clone()),
        ..params
    };

    let (tensors, inputs, scheme, params) = match recipe.method {
        MethodSpec::Uniform => {
            let weights = uniform_weights(refs.len())?;
            let merged = merge_linear(&refs, &weights)?;
            (merged, linear_inputs(&selected, None, &weights), None, MethodParams::default())
        }
        MethodSpec::Weighted {
            metric,
            penalty,
            power,
        } => {
            let scheme = WeightScheme::new(metric.objective(), penalty, power)?;
            let values = metric_values(&selected, metric);
            let weights = penalized_weights(&values, &scheme)?;
            let merged = merge_linear(&refs, &weights)?;
            let record = SchemeRecord {
                metric,
                objective: metric.objective(),
                penalty,
                power,
            };
            (
                merged,
                linear_inputs(&selected, Some(&values), &weights),
                Some(record),
                MethodParams::default(),
            )
        }
        MethodSpec::Ties(ties) => {
            let base = store.get(base_record)?;
            let merged = ties_merge(&refs, &base, &ties)?;
            let params = base_params(MethodParams {
                density: Some(ties.density()),
                ..MethodParams::default()
            });
            (merged, task_inputs(), None, params)
        }
        MethodSpec::DareTies(ties, dare) => {
            let base = store.get(base_record)?;
            let merged = dare_ties_merge(&refs, &base, &ties, &dare)?;
            let params = base_params(MethodParams {
                density: Some(ties.density()),
                drop_rate: Some(dare.drop_rate()),
                seed: Some(dare.seed),
                ..MethodParams::default()
            });
            (merged, task_inputs(), None, params)
        }
        MethodSpec::Slerp { t } => {
            if refs.len() != 2 {
                return Err(Error::InvalidSelection(format!(
                    "slerp merges exactly 2 checkpoints, selection has {}",
                    refs.len()
                )));
            }
            // selection is newest first; the base end sits at t = 0
            let (a, b) = match recipe.base {
                BaseChoice::First => (refs[1], refs[0]),
                BaseChoice::Last => (refs[0], refs[1]),
            };
            let merged = slerp_merge(a, b, t)?;
            let params = MethodParams {
                slerp_t: Some(t),
                base: Some(recipe.base.as_str().to_owned()),
                ..MethodParams::default()
            };
            (merged, task_inputs(), None, params)
        }
    };

    Ok(MergedModel {
        name: recipe.name(),
        recipe: *recipe,
        tensors,
        inputs,
        scheme,
        params,
    })
}

/// Writes `out_dir/<name>/model.safetensors` and `manifest.json`.
pub fn save_merge(model: &MergedModel, out_dir: &Path) -> Result<(PathBuf, MergeManifest)> {
    let dir = out_dir.join(&model.name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let container = dir.join(CONTAINER_FILE);
    let digest = write_container(&model.tensors, &container)?;
    let manifest = model.manifest(digest);
    write_merge_manifest(&manifest, dir.join(MANIFEST_FILE))?;
    Ok((container, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub name: String,
    pub method: String,
    pub k: u32,
    pub interval: Option<u32>,
    pub metric: Option<MetricKind>,
    pub penalty: Option<f64>,
    pub power: Option<f64>,
    pub score: f64,
    /// Percent improvement over the last merging checkpoint.
    pub vs_last_merging_pct: Option<f64>,
    /// Percent improvement over the final checkpoint.
    pub vs_final_pct: Option<f64>,
}

impl SweepRow {
    pub fn selection(&self) -> SelectionSpec {
        SelectionSpec {
            k: self.k,
            interval: self.interval,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Best first.
    pub rows: Vec<SweepRow>,
    /// Names of the top rows.
    pub shortlist: Vec<String>,
    /// Combinations that were not run because the run is too short.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

impl SweepReport {
    pub fn row(&self, name: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScore {
    pub checkpoint_id: String,
    pub step: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub final_checkpoint: ReferenceScore,
    pub last_merging_checkpoint: ReferenceScore,
}

/// Penalty factors tried per metric during weighted refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyGrid {
    pub loss: Vec<f64>,
    pub steps: Vec<f64>,
}

impl PenaltyGrid {
    pub fn same(penalties: &[f64]) -> Self {
        Self {
            loss: penalties.to_vec(),
            steps: penalties.to_vec(),
        }
    }
}

impl Default for PenaltyGrid {
    fn default() -> Self {
        Self {
            loss: DEFAULT_LOSS_PENALTIES.to_vec(),
            steps: DEFAULT_STEPS_PENALTIES.to_vec(),
        }
    }
}

/// Runs merges against one run and one evaluator.
pub struct Pipeline<'e> {
    store: CheckpointStore,
    evaluator: &'e dyn Evaluator,
    out_dir: Option<PathBuf>,
    shortlist_size: usize,
}

impl<'e> Pipeline<'e> {
    pub fn new(store: CheckpointStore, evaluator: &'e dyn Evaluator) -> Self {
        Self {
            store,
            evaluator,
            out_dir: None,
            shortlist_size: DEFAULT_SHORTLIST,
        }
    }

    /// Persist every merged model under `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn with_shortlist(mut self, size: usize) -> Self {
        self.shortlist_size = size.max(1);
        self
    }

    pub fn run(&self) -> &RunManifest {
        self.store.run()
    }

    pub fn store(&self) -> &CheckpointStore {
        &self.store
    }

    fn orientation(&self) -> Orientation {
        self.evaluator.orientation()
    }

    /// Merges, optionally saves, and scores one recipe.
    pub fn evaluate_recipe(&self, recipe: &MergeRecipe) -> Result<SweepRow> {
        let model = execute_merge(&self.store, recipe)?;
        let container = match &self.out_dir {
            Some(dir) => Some(save_merge(&model, dir)?.0),
            None => None,
        };
        let score = self.evaluator.score(&Candidate {
            name: &model.name,
            tensors: &model.tensors,
            container: container.as_deref(),
        })?;
        let (metric, penalty, power) = match recipe.method {
            MethodSpec::Weighted {
                metric,
                penalty,
                power,
            } => (Some(metric), Some(penalty), Some(power)),
            _ => (None, None, None),
        };
        Ok(SweepRow {
            name: model.name,
            method: recipe.method.label().to_owned(),
            k: recipe.selection.k,
            interval: recipe.selection.interval,
            metric,
            penalty,
            power,
            score,
            vs_last_merging_pct: None,
            vs_final_pct: None,
        })
    }

    fn evaluate_all(&self, recipes: &[MergeRecipe]) -> Result<Vec<SweepRow>> {
        if self.evaluator.supports_concurrency() {
            recipes.par_iter().map(|r| self.evaluate_recipe(r)).collect()
        } else {
            recipes.iter().map(|r| self.evaluate_recipe(r)).collect()
        }
    }

    fn report(&self, mut rows: Vec<SweepRow>, skipped: Vec<String>) -> SweepReport {
        let orientation = self.orientation();
        rows.sort_by(|a, b| orientation.compare(a.score, b.score));
        let shortlist = rows
            .iter()
            .take(self.shortlist_size)
            .map(|r| r.name.clone())
            .collect();
        SweepReport {
            rows,
            shortlist,
            skipped,
        }
    }

    /// Uniform soups of the last `k` checkpoints for each `k`.
    pub fn run_uniform_sweep(&self, ks: &[u32]) -> Result<SweepReport> {
        if ks.is_empty() {
            return Err(Error::InvalidConfig("no k values to sweep".into()));
        }
        let recipes = ks
            .iter()
            .map(|&k| Ok(MergeRecipe::uniform(SelectionSpec::last(k)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.report(self.evaluate_all(&recipes)?, vec![]))
    }

    /// Uniform soups of `base.k` checkpoints taken every `m`-th.
    pub fn run_interval_sweep(&self, base: SelectionSpec, ms: &[u32]) -> Result<SweepReport> {
        if ms.is_empty() {
            return Err(Error::InvalidConfig("no intervals to sweep".into()));
        }
        let recipes = ms
            .iter()
            .map(|&m| Ok(MergeRecipe::uniform(SelectionSpec::new(base.k, Some(m))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.report(self.evaluate_all(&recipes)?, vec![]))
    }

    /// Loss- and steps-weighted soups for each selection and penalty, plus
    /// the uniform soup of each selection as a reference row.
    pub fn run_weighted_refinement(
        &self,
        shortlisted: &[SelectionSpec],
        penalties: &PenaltyGrid,
        power: f64,
    ) -> Result<SweepReport> {
        if shortlisted.is_empty() {
            return Err(Error::InvalidConfig("empty shortlist".into()));
        }
        if penalties.loss.is_empty() || penalties.steps.is_empty() {
            return Err(Error::InvalidConfig("empty penalty list".into()));
        }
        let mut recipes = Vec::new();
        for &spec in shortlisted {
            recipes.push(MergeRecipe::uniform(spec));
            for (metric, grid) in [
                (MetricKind::Loss, &penalties.loss),
                (MetricKind::Steps, &penalties.steps),
            ] {
                for &p in grid {
                    WeightScheme::new(metric.objective(), p, power)?;
                    recipes.push(MergeRecipe::weighted(spec, metric, p, power));
                }
            }
        }
        Ok(self.report(self.evaluate_all(&recipes)?, vec![]))
    }

    fn score_checkpoint(&self, record: &CheckpointRecord) -> Result<ReferenceScore> {
        let tensors = self.store.get(record)?;
        let score = self.evaluator.score(&Candidate {
            name: &record.id,
            tensors: &tensors,
            container: Some(&record.path),
        })?;
        Ok(ReferenceScore {
            checkpoint_id: record.id.clone(),
            step: record.step,
            score,
        })
    }

    pub fn references(&self) -> Result<References> {
        let run = self.run();
        let last = run.last_merging_checkpoint().ok_or_else(|| {
            Error::InvalidRun("a run with one checkpoint has no last merging checkpoint".into())
        })?;
        Ok(References {
            final_checkpoint: self.score_checkpoint(run.final_checkpoint())?,
            last_merging_checkpoint: self.score_checkpoint(last)?,
        })
    }

    /// Fills the relative-improvement columns of `report`.
    pub fn compare_to_references(&self, report: &mut SweepReport) -> Result<References> {
        let refs = self.references()?;
        annotate(report, &refs, self.orientation());
        Ok(refs)
    }

    /// Runs the full five-step procedure.
    pub fn run_procedure(&self, config: &SweepConfig) -> Result<ProcedureReport> {
        let orientation = self.orientation();
        let references = self.references()?;

        let initial_validation = if config.skip_initial_validation {
            None
        } else {
            let first = self.score_checkpoint(self.run().first_checkpoint())?;
            let passed = orientation.is_better(references.final_checkpoint.score, first.score);
            if !passed {
                return Err(Error::ValidationGate(format!(
                    "final checkpoint scores {} which does not improve on the first checkpoint's {}",
                    references.final_checkpoint.score, first.score
                )));
            }
            Some(InitialValidation {
                first_checkpoint: first,
                final_score: references.final_checkpoint.score,
                passed,
            })
        };

        let mut uniform = self.run_uniform_sweep(&config.ks)?;

        let available = self.run().mergeable().len();
        let mut interval_recipes = Vec::new();
        let mut skipped = Vec::new();
        for name in &uniform.shortlist {
            let k = uniform.row(name).expect("shortlisted row").k;
            for &m in &config.ms {
                let spec = SelectionSpec::new(k, Some(m))?;
                if spec.interval.is_none() {
                    continue;
                }
                if spec.required_depth() <= available {
                    interval_recipes.push(MergeRecipe::uniform(spec));
                } else {
                    skipped.push(MergeName::new(spec, SoupScheme::Unweighted).to_string());
                }
            }
        }
        let mut interval = self.report(self.evaluate_all(&interval_recipes)?, skipped);

        let mut union: Vec<SweepRow> = uniform.rows.iter().chain(&interval.rows).cloned().collect();
        union.sort_by(|a, b| orientation.compare(a.score, b.score));
        let shortlist: Vec<SelectionSpec> = union
            .iter()
            .take(self.shortlist_size)
            .map(SweepRow::selection)
            .collect();

        let mut weighted = self.run_weighted_refinement(&shortlist, &config.penalties, config.power)?;

        for report in [&mut uniform, &mut interval, &mut weighted] {
            annotate(report, &references, orientation);
        }
        let best = [&uniform, &interval, &weighted]
            .iter()
            .filter_map(|r| r.best())
            .min_by(|a, b| orientation.compare(a.score, b.score))
            .cloned();

        Ok(ProcedureReport {
            evaluator: self.evaluator.describe(),
            orientation,
            initial_validation,
            references,
            uniform,
            interval,
            shortlist: shortlist
                .iter()
                .map(|s| MergeName::new(*s, SoupScheme::Unweighted).to_string())
                .collect(),
            weighted,
            best,
        })
    }
}

fn annotate(report: &mut SweepReport, refs: &References, orientation: Orientation) {
    for row in &mut report.rows {
        row.vs_last_merging_pct =
            relative_improvement(row.score, refs.last_merging_checkpoint.score, orientation);
        row.vs_final_pct = relative_improvement(row.score, refs.final_checkpoint.score, orientation);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub ks: Vec<u32>,
    pub ms: Vec<u32>,
    pub penalties: PenaltyGrid,
    pub power: f64,
    pub skip_initial_validation: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            ms: DEFAULT_INTERVALS.to_vec(),
            penalties: PenaltyGrid::default(),
            power: DEFAULT_POWER,
            skip_initial_validation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialValidation {
    pub first_checkpoint: ReferenceScore,
    pub final_score: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureReport {
    pub evaluator: String,
    pub orientation: Orientation,
    pub initial_validation: Option<InitialValidation>,
    pub references: References,
    pub uniform: SweepReport,
    pub interval: SweepReport,
    /// Selections carried into weighted refinement.
    pub shortlist: Vec<String>,
    pub weighted: SweepReport,
    pub best: Option<SweepRow>,
}

impl ProcedureReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::tests::uniform_run;
    use crate::tensor::Tensor;

    /// Scores the mean of tensor "w"; higher is better.
    struct MeanEvaluator;

    impl Evaluator for MeanEvaluator {
        fn score(&self, c: &Candidate<'_>) -> Result<f64> {
            let v = c.tensors.get("w").unwrap().to_f64();
            Ok(v.iter().sum::<f64>() / v.len() as f64)
        }
        fn orientation(&self) -> Orientation {
            Orientation::HigherIsBetter
        }
        fn describe(&self) -> String {
            "mean".into()
        }
    }

    fn store(count: u64) -> CheckpointStore {
        let run = uniform_run(count, 10);
        let maps = (1..=count)
            .map(|i| {
                let mut m = TensorMap::new();
                let v = i as f32;
                m.insert("w", Tensor::from_f32(vec![2], &[v, v * 0.5]).unwrap()).unwrap();
                m
            })
            .collect();
        CheckpointStore::with_tensors(run, maps).unwrap()
    }

    #[test]
    fn improvement_arithmetic() {
        let up = relative_improvement(0.22826, 0.21728, Orientation::HigherIsBetter).unwrap();
        assert!((up - 5.05).abs() < 0.01, "{up}");
        assert_eq!(relative_improvement(0.5, 0.5, Orientation::HigherIsBetter), Some(0.0));
        let a = relative_improvement(0.4920, 0.4872, Orientation::HigherIsBetter).unwrap();
        let b = relative_improvement(0.4920, 0.4863, Orientation::HigherIsBetter).unwrap();
        assert!((a - 0.99).abs() < 0.01 && (b - 1.17).abs() < 0.01, "{a} {b}");
        let down = relative_improvement(17.79124, 17.82556, Orientation::LowerIsBetter).unwrap();
        assert!(down > 0.0);
        assert_eq!(relative_improvement(1.0, 0.0, Orientation::LowerIsBetter), None);
    }

    #[test]
    fn uniform_sweep_rows() {
        let eval = MeanEvaluator;
        let p = Pipeline::new(store(12), &eval);
        let report = p.run_uniform_sweep(&DEFAULT_KS).unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.shortlist, vec!["last_2_unweighted", "last_3_unweighted"]);
        assert!(report.rows.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn single_checkpoint_soup_scores_like_checkpoint() {
        let eval = MeanEvaluator;
        let p = Pipeline::new(store(6), &eval);
        let report = p.run_uniform_sweep(&[1]).unwrap();
        let refs = p.references().unwrap();
        assert_eq!(report.rows[0].score, refs.last_merging_checkpoint.score);
    }

    #[test]
    fn sweep_errors_on_shallow_runs() {
        let eval = MeanEvaluator;
        let p = Pipeline::new(store(5), &eval);
        assert!(matches!(
            p.run_uniform_sweep(&[10]),
            Err(Error::InsufficientCheckpoints { .. })
        ));
        assert!(p.run_interval_sweep(SelectionSpec::last(3).unwrap(), &[3]).is_err());
    }

    #[test]
    fn interval_sweep_rows() {
        let eval = MeanEvaluator;
        let p = Pipeline::new(store(20), &eval);
        let report = p.run_interval_sweep(SelectionSpec::last(4).unwrap(), &[2, 3]).unwrap();
        assert_eq!(report.rows.len(), 2);
        let unit = p.run_interval_sweep(SelectionSpec::last(4).unwrap(), &[1]).unwrap();
        let plain = p.run_uniform_sweep(&[4]).unwrap();
        assert_eq!(unit.rows, plain.rows);
    }

    #[test]
    fn refinement_rows_and_reference() {
        let eval = MeanEvaluator;
        let p = Pipeline::new(store(12), &eval);
        let spec = SelectionSpec::last(4).unwrap();
        let report = p
            .run_weighted_refinement(&[spec], &PenaltyGrid::same(&[0.7, 0.8, 0.9, 1.0]), 2.0)
            .unwrap();
        assert_eq!(report.rows.len(), 9);
        assert_eq!(report.rows.iter().filter(|r| r.method == "mwa").count(), 8);
        let reference = report.row("last_4_unweighted").unwrap();
        let uniform = p.run_uniform_sweep(&[4]).unwrap();
        assert_eq!(reference, &uniform.rows[0]);

        assert!(p.run_weighted_refinement(&[spec], &PenaltyGrid::same(&[]), 2.0).is_err());
        assert!(p.run_weighted_refinement(&[], &PenaltyGrid::default(), 2.0).is_err());
    }

    #[test]
    fn unit_penalty_rows_use_basic_weights() {
        let s = store(8);
        let spec = SelectionSpec::last(3).unwrap();
        let model = execute_merge(&s, &MergeRecipe::weighted(spec, MetricKind::Loss, 1.0, 2.0)).unwrap();
        let selected = select_last_k(s.run(), &spec).unwrap();
        let losses: Vec<f64> = selected.iter().map(|c| c.train_loss).collect();
        let basic = crate::weighting::basic_weights(&losses, crate::weighting::MetricObjective::Min).unwrap();
        let weights: Vec<f64> = model.inputs.iter().map(|i| i.weight.unwrap()).collect();
        assert_eq!(weights, basic.to_vec());
    }

    #[test]
    fn recipe_names() {
        let spec = SelectionSpec::new(5, Some(3)).unwrap();
        let ties = MergeRecipe {
            selection: spec,
            method: MethodSpec::Ties(TiesParams::default()),
            base: BaseChoice::First,
        };
        assert_eq!(ties.name(), "ties_last_5_3_base_first");
        let dare = MergeRecipe {
            selection: SelectionSpec::last(10).unwrap(),
            method: MethodSpec::DareTies(TiesParams::default(), DareParams::new(0.5, 0).unwrap()),
            base: BaseChoice::First,
        };
        assert_eq!(dare.name(), "dare_ties_last_10_base_first");
        let w = MergeRecipe::weighted(SelectionSpec::last(10).unwrap(), MetricKind::Steps, 1.05, 2.0);
        assert_eq!(w.name(), "last_10_steps_pf-1_05");
    }

    #[test]
    fn slerp_requires_pairs() {
        let s = store(6);
        let bad = MergeRecipe {
            selection: SelectionSpec::last(3).unwrap(),
            method: MethodSpec::Slerp { t: 0.5 },
            base: BaseChoice::First,
        };
        assert!(execute_merge(&s, &bad).is_err());
        let good = MergeRecipe {
            selection: SelectionSpec::last(2).unwrap(),
            method: MethodSpec::Slerp { t: 0.0 },
            base: BaseChoice::Last,
        };
        // t = 0 with base last returns the newest selected checkpoint
        let model = execute_merge(&s, &good).unwrap();
        assert_eq!(model.tensors.get("w").unwrap().to_f64(), vec![5.0, 2.5]);
    }

    #[test]
    fn procedure_runs_end_to_end() {
        let eval = MeanEvaluator;
        let p = Pipeline::new(store(24), &eval);
        let report = p.run_procedure(&SweepConfig::default()).unwrap();
        assert_eq!(report.uniform.rows.len(), 6);
        assert!(!report.weighted.rows.is_empty());
        assert!(report.initial_validation.unwrap().passed);
        assert!(report
            .weighted
            .rows
            .iter()
            .all(|r| r.vs_final_pct.is_some() && r.vs_last_merging_pct.is_some()));
    }
}
