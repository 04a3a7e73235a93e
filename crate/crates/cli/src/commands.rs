//! Subcommand definitions and their execution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use trajcluster_core::cohort_sim::{simulate_cohort, CohortSpec};
use trajcluster_core::data_model::{Partition, TrajectorySet};
use trajcluster_core::frechet::{Aggregate, FrechetParams};
use trajcluster_core::hierarchical::{best_cut, cut_tree, distance_matrix, ward_linkage, Dendrogram, ElbowRule};
use trajcluster_core::imputation::{impute, CopyMeanMerge, Imputer};
use trajcluster_core::inference::{
    adjusted_rand_index, chi_square_test, cross_tab, describe, fisher_exact_2x2, ContingencyTable, TestResult,
};
use trajcluster_core::preprocess::{composite_zscore, rate_profiles, standardize_profiles, BaselineStats, RateProfile};
use trajcluster_core::responders::{
    classify_responders, placebo_reference_rates, ReferenceMode, ResponderConfig, ResponderOutcome, ResponderRule,
};
use trajcluster_core::seriation::{
    parse_colour, render_matrix_image, shade_bin, spectral_order, BinRule, PixmapFormat, RowOrder, SeriationConfig,
    Span,
};
use trajcluster_core::shape_kmeans::{cluster, ClusterSolution, KmlShapeConfig};
use trajcluster_core::Error as CoreError;

use crate::error::{CliError, CliResult};
use crate::io::{
    fmt_f64, ingest, read_component_csv, read_covariates_csv, read_partition, write_bytes, write_json,
    write_long_csv, write_partition, write_table, ReadOptions,
};
use crate::manifest::{sidecar_path, write_run_record, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "trajcluster", version, about = "Cluster and classify longitudinal outcome trajectories")]
pub struct Cli {
    /// Worker threads; defaults to every available core.
    #[arg(long, global = true, env = "TRAJCLUSTER_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort with known group labels.
    Simulate(SimulateArgs),
    /// Fill missing visits.
    Impute(ImputeArgs),
    /// Build composite Z-scores from component test scores.
    Zscore(ZscoreArgs),
    /// Shape-respecting k-means on trajectories.
    ClusterKmlshape(KmlArgs),
    /// Ward clustering of rates of change.
    ClusterHca(HcaArgs),
    /// Spectral seriation of the rate matrix, rendered as a pixmap.
    Seriate(SeriateArgs),
    /// Responder classification against the control arm.
    Responders(ResponderArgs),
    /// Contingency table between two partitions.
    Crosstab(CrosstabArgs),
    /// Per-group covariate summaries.
    Describe(DescribeArgs),
    /// Run every method on one cohort and cross-tabulate the results.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InputArgs {
    /// Trajectory CSV, long format unless --wide.
    #[arg(long)]
    pub input: PathBuf,
    /// Read one row per subject with one column per visit.
    #[arg(long)]
    pub wide: bool,
    /// Extra columns to keep as covariates.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Visit schedule in months; defaults to the times present in the file.
    #[arg(long, value_delimiter = ',')]
    pub schedule: Option<Vec<f64>>,
}

impl InputArgs {
    fn options(&self) -> ReadOptions {
        ReadOptions {
            covariates: self.covariates.clone(),
            schedule: self.schedule.clone(),
        }
    }

    fn load(&self) -> CliResult<TrajectorySet> {
        let got = ingest(&self.input, self.wide, &self.options())?;
        eprintln!(
            "read {} rows for {} subjects from {}",
            got.rows,
            got.set.len(),
            self.input.display()
        );
        Ok(got.set)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateArg {
    Max,
    Mean,
}

impl From<AggregateArg> for Aggregate {
    fn from(a: AggregateArg) -> Self {
        match a {
            AggregateArg::Max => Aggregate::Max,
            AggregateArg::Mean => Aggregate::Mean,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputeArg {
    /// Keep complete subjects only.
    None,
    Linear,
    Locf,
    Copymean,
    CopymeanAverage,
}

impl From<ImputeArg> for Imputer {
    fn from(a: ImputeArg) -> Self {
        match a {
            ImputeArg::None => Imputer::None,
            ImputeArg::Linear => Imputer::Linear,
            ImputeArg::Locf => Imputer::Locf,
            ImputeArg::Copymean => Imputer::CopyMean(CopyMeanMerge::Anchored),
            ImputeArg::CopymeanAverage => Imputer::CopyMean(CopyMeanMerge::Average),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElbowArg {
    Ratio,
    SecondDifference,
}

impl From<ElbowArg> for ElbowRule {
    fn from(a: ElbowArg) -> Self {
        match a {
            ElbowArg::Ratio => ElbowRule::Ratio,
            ElbowArg::SecondDifference => ElbowRule::SecondDifference,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinsArg {
    Symmetric,
    Quantile,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    Margin,
    Ratio,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceArg {
    PerHorizon,
    Pooled,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Cohort specification as JSON; overrides --n, --noise, --dropout and --intermittent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    /// Standard deviation of the measurement noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Per-visit dropout probability after baseline.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Per-visit probability of an intermittent missing value.
    #[arg(long, default_value_t = 0.0)]
    pub intermittent: f64,
    /// Required unless the spec file carries a seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Complete pre-dropout values.
    #[arg(long)]
    #[serde(skip)]
    pub truth: Option<PathBuf>,
    /// Generating group of each subject, as a partition.
    #[arg(long)]
    #[serde(skip)]
    pub labels: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = ImputeArg::Copymean)]
    pub method: ImputeArg,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ZscoreArgs {
    /// Long CSV with subject_id, arm, time_months and one column per component.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub components: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub schedule: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Baseline means and standard deviations, as JSON.
    #[arg(long)]
    #[serde(skip)]
    pub stats_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct KmlOptions {
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    /// Smallest admissible group, as a fraction of the cohort.
    #[arg(long, default_value_t = 0.10)]
    pub min_share: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = AggregateArg::Max)]
    pub aggregate: AggregateArg,
    /// Weight converting months into score units in the Fréchet distance.
    #[arg(long, default_value_t = 0.1)]
    pub time_scale: f64,
    /// Points on each centroid curve.
    #[arg(long, default_value_t = 5)]
    pub grid_size: usize,
    #[arg(long, value_enum, default_value_t = ImputeArg::Copymean)]
    pub impute: ImputeArg,
    /// Initialise each restart on a random subset of this fraction.
    #[arg(long)]
    pub subset_fraction: Option<f64>,
}

impl KmlOptions {
    fn config(&self, seed: u64) -> CliResult<KmlShapeConfig> {
        let mut cfg = KmlShapeConfig::new(self.k, seed);
        cfg.frechet = FrechetParams::new(self.time_scale, self.aggregate.into())?;
        cfg.mean.grid_size = self.grid_size;
        cfg.min_share = self.min_share;
        cfg.restarts = self.restarts;
        cfg.max_iter = self.max_iter;
        cfg.subset_fraction = self.subset_fraction;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct KmlArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub options: KmlOptions,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Centroid curves as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub centroids: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(group(ArgGroup::new("cut").required(true).args(["k", "auto_k"])))]
pub struct HcaArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of groups.
    #[arg(long)]
    pub k: Option<usize>,
    /// Choose the number of groups from the dendrogram.
    #[arg(long)]
    pub auto_k: bool,
    #[arg(long, default_value_t = 6)]
    pub k_max: usize,
    #[arg(long, value_enum, default_value_t = ElbowArg::Ratio)]
    pub elbow: ElbowArg,
    /// Z-standardise each rate column before computing distances.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Merge list as JSON.
    #[arg(long)]
    #[serde(skip)]
    pub dendrogram: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SeriationOptions {
    #[arg(long, default_value_t = 3)]
    pub shades: usize,
    /// Comma-separated colours from strongest decrease to strongest increase.
    #[arg(long, value_delimiter = ',')]
    pub palette: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = BinsArg::Symmetric)]
    pub bins: BinsArg,
    /// Pixels per cell along each axis.
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
    /// Write plain-text P3 instead of binary P6.
    #[arg(long)]
    pub ascii: bool,
    /// Skip the 2-SUM polish after the spectral order.
    #[arg(long)]
    pub no_refine: bool,
}

impl SeriationOptions {
    fn config(&self) -> CliResult<SeriationConfig> {
        let mut cfg = SeriationConfig::with_shades(self.shades);
        if let Some(names) = &self.palette {
            cfg.palette = names.iter().map(|c| parse_colour(c)).collect::<Result<_, _>>()?;
        }
        cfg.bins = match self.bins {
            BinsArg::Symmetric => BinRule::Symmetric,
            BinsArg::Quantile => BinRule::Quantile,
        };
        cfg.refine = !self.no_refine;
        cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SeriateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub options: SeriationOptions,
    /// Row blocks to extract, e.g. `top:100,mid:100,bottom:100` or `0.25:50`.
    #[arg(long)]
    pub groups: Option<String>,
    /// Pixmap destination.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Partition of the extracted row blocks.
    #[arg(long)]
    #[serde(skip)]
    pub partition_out: Option<PathBuf>,
    /// Seriated subject order as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub order_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ResponderOptions {
    #[arg(long, default_value = "placebo")]
    pub control_arm: String,
    #[arg(long, default_value_t = 0.20)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = RuleArg::Margin)]
    pub rule: RuleArg,
    #[arg(long, value_enum, default_value_t = ReferenceArg::PerHorizon)]
    pub reference: ReferenceArg,
}

impl ResponderOptions {
    fn config(&self) -> ResponderConfig {
        ResponderConfig {
            threshold: self.threshold,
            rule: match self.rule {
                RuleArg::Margin => ResponderRule::Margin,
                RuleArg::Ratio => ResponderRule::Ratio,
            },
            mode: match self.reference {
                ReferenceArg::PerHorizon => ReferenceMode::PerHorizon,
                ReferenceArg::Pooled => ReferenceMode::Pooled,
            },
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ResponderArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub options: ResponderOptions,
    /// One row per non-control subject.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub partition_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct CrosstabArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Apply the continuity correction to 2x2 chi-square tests.
    #[arg(long)]
    pub yates: bool,
    /// CSV destination; the table goes to stdout otherwise.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct DescribeArgs {
    #[arg(long)]
    pub partition: PathBuf,
    /// CSV with a subject_id column and one column per covariate.
    #[arg(long)]
    pub covariates: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub kml: KmlOptions,
    #[arg(long, default_value_t = 6)]
    pub k_max: usize,
    #[command(flatten)]
    pub seriation: SeriationOptions,
    /// Seriation row blocks; three blocks of a quarter of the rows by default.
    #[arg(long)]
    pub groups: Option<String>,
    #[command(flatten)]
    pub responders: ResponderOptions,
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn execute(command: &Command) -> CliResult<()> {
    let started = Instant::now();
    match command {
        Command::Simulate(a) => run_simulate(a, started),
        Command::Impute(a) => run_impute(a, started),
        Command::Zscore(a) => run_zscore(a, started),
        Command::ClusterKmlshape(a) => run_kml(a, started),
        Command::ClusterHca(a) => run_hca(a, started),
        Command::Seriate(a) => run_seriate(a, started),
        Command::Responders(a) => run_responders(a, started),
        Command::Crosstab(a) => run_crosstab(a),
        Command::Describe(a) => run_describe(a),
        Command::Compare(a) => run_compare(a, started),
    }
}

fn finish(primary: &Path, manifest: &RunManifest, started: Instant, outputs: &[PathBuf]) -> CliResult<()> {
    write_run_record(&sidecar_path(primary), manifest, started.elapsed(), outputs)
}

fn run_simulate(a: &SimulateArgs, started: Instant) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str::<CohortSpec>(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => {
            let seed = a.seed.ok_or_else(|| CliError::Usage("simulate needs --seed or a --spec file".into()))?;
            let mut spec = CohortSpec::three_shape(a.n, a.noise, seed);
            spec.dropout_hazard = a.dropout;
            spec.intermittent_prob = a.intermittent;
            spec
        }
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let sim = simulate_cohort(&spec)?;
    let inputs: Vec<&Path> = a.spec.iter().map(PathBuf::as_path).collect();
    let manifest = RunManifest::new("simulate", &json!({ "args": a, "spec": spec }), &inputs)?;
    let mut outputs = vec![a.out.clone()];
    write_long_csv(&a.out, &sim.observed)?;
    if let Some(t) = &a.truth {
        write_long_csv(t, &sim.truth)?;
        outputs.push(t.clone());
    }
    if let Some(l) = &a.labels {
        write_partition(l, &sim.labels, &manifest)?;
        outputs.push(l.clone());
    }
    eprintln!(
        "simulated {} subjects ({} complete, {} dropped out)",
        spec.n, sim.complete_count, sim.dropout_count
    );
    finish(&a.out, &manifest, started, &outputs)
}

fn run_impute(a: &ImputeArgs, started: Instant) -> CliResult<()> {
    let set = a.input.load()?;
    let filled = impute(&set, a.method.into())?;
    write_long_csv(&a.out, &filled)?;
    let manifest = RunManifest::new("impute", a, &[&a.input.input])?;
    finish(&a.out, &manifest, started, std::slice::from_ref(&a.out))
}

fn run_zscore(a: &ZscoreArgs, started: Instant) -> CliResult<()> {
    let opts = ReadOptions {
        covariates: a.covariates.clone(),
        schedule: a.schedule.clone(),
    };
    let table = read_component_csv(&a.input, &a.components, &opts)?;
    let stats = BaselineStats::from_baseline(&table)?;
    let composite = composite_zscore(&table, &stats)?;
    write_long_csv(&a.out, &composite.set)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.stats_out {
        write_json(path, &stats)?;
        outputs.push(path.clone());
    }
    eprintln!(
        "composite for {} subjects; {} visits missing because a component was absent",
        composite.set.len(),
        composite.partial_visits.len()
    );
    let manifest = RunManifest::new("zscore", a, &[&a.input])?;
    finish(&a.out, &manifest, started, &outputs)
}

/// Imputes (or keeps complete cases) and clusters.
fn kml_solution(set: &TrajectorySet, opts: &KmlOptions, seed: u64) -> CliResult<ClusterSolution> {
    let prepared = match opts.impute {
        ImputeArg::None => {
            let (complete, dropped) = set.complete_cases()?;
            eprintln!("kmlshape: {dropped} incomplete subjects left out");
            complete
        }
        other => impute(set, other.into())?,
    };
    let solution = cluster(&prepared, &opts.config(seed)?)?;
    if !solution.share_satisfied {
        eprintln!("kmlshape: no restart met the minimum group share; best run kept");
    }
    Ok(solution)
}

fn write_centroids(path: &Path, solution: &ClusterSolution) -> CliResult<()> {
    let header = ["group", "time_months", "value"].map(String::from);
    let mut rows = Vec::new();
    for (label, c) in solution.partition.labels().zip(&solution.centroids) {
        for i in 0..c.len() {
            let (t, v) = c.point(i);
            rows.push(vec![label.to_string(), fmt_f64(t), fmt_f64(v)]);
        }
    }
    write_table(path, &header, &rows)
}

fn run_kml(a: &KmlArgs, started: Instant) -> CliResult<()> {
    let set = a.input.load()?;
    let solution = kml_solution(&set, &a.options, a.seed)?;
    let manifest = RunManifest::new("cluster-kmlshape", a, &[&a.input.input])?;
    write_partition(&a.out, &solution.partition, &manifest)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.centroids {
        write_centroids(path, &solution)?;
        outputs.push(path.clone());
    }
    println!(
        "kmlshape: {} groups, sizes {:?}, dispersion {}",
        solution.partition.n_groups(),
        solution.partition.sizes(),
        solution.within_dispersion
    );
    finish(&a.out, &manifest, started, &outputs)
}

fn complete_profiles(set: &TrajectorySet, standardize: bool) -> CliResult<Vec<RateProfile>> {
    let (complete, dropped) = set.complete_cases()?;
    if dropped > 0 {
        eprintln!("{dropped} incomplete subjects left out of the rate analysis");
    }
    let mut profiles = rate_profiles(&complete)?;
    if standardize {
        standardize_profiles(&mut profiles);
    }
    Ok(profiles)
}

struct HcaResult {
    dendrogram: Dendrogram,
    partition: Partition,
    warning: Option<String>,
}

fn hca(profiles: &[RateProfile], k: Option<usize>, k_max: usize, rule: ElbowRule) -> CliResult<HcaResult> {
    let dendrogram = ward_linkage(&distance_matrix(profiles)?)?;
    if !dendrogram.is_monotone() {
        eprintln!("hca: merge heights are not monotone");
    }
    let (k, warning) = match k {
        Some(k) => (k, None),
        None => {
            let cut = best_cut(&dendrogram, k_max, rule)?;
            (cut.k, cut.warning)
        }
    };
    let partition = cut_tree(&dendrogram, k)?;
    Ok(HcaResult {
        dendrogram,
        partition,
        warning,
    })
}

fn run_hca(a: &HcaArgs, started: Instant) -> CliResult<()> {
    let set = a.input.load()?;
    let profiles = complete_profiles(&set, a.standardize)?;
    let k = if a.auto_k { None } else { a.k };
    let mut result = hca(&profiles, k, a.k_max, a.elbow.into())?;
    result.partition.params.insert("auto_k".into(), json!(a.auto_k));
    result.partition.params.insert("standardized".into(), json!(a.standardize));
    if let Some(w) = &result.warning {
        eprintln!("hca: {w}");
    }
    let manifest = RunManifest::new("cluster-hca", a, &[&a.input.input])?;
    write_partition(&a.out, &result.partition, &manifest)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.dendrogram {
        write_json(path, &result.dendrogram)?;
        outputs.push(path.clone());
    }
    println!(
        "hca: {} groups, sizes {:?}",
        result.partition.n_groups(),
        result.partition.sizes()
    );
    finish(&a.out, &manifest, started, &outputs)
}

/// Parses `top:100,mid:100,bottom:100` or `0.25:50` style span lists.
pub fn parse_spans(text: &str) -> CliResult<Vec<Span>> {
    text.split(',')
        .map(|part| {
            let (pos, count) = part
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("span `{part}` must look like `top:100`")))?;
            let start_fraction = match pos.trim() {
                "top" => 0.0,
                "mid" | "middle" => 0.5,
                "bottom" => 1.0,
                f => f
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("unknown span position `{f}`")))?,
            };
            let count = count
                .trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("span size `{count}` is not a count")))?;
            Ok(Span { start_fraction, count })
        })
        .collect()
}

struct SeriationRun {
    order: RowOrder,
    labels: Vec<String>,
    image: Vec<u8>,
}

fn seriate(profiles: &[RateProfile], opts: &SeriationOptions) -> CliResult<SeriationRun> {
    let cfg = opts.config()?;
    let dist = distance_matrix(profiles)?;
    let s = spectral_order(&dist, &cfg)?;
    if let Some(w) = &s.warning {
        eprintln!("seriation: {w}");
    }
    let rates: Vec<Vec<f64>> = profiles.iter().map(|p| p.rates.clone()).collect();
    let shades = shade_bin(&rates, cfg.shades, cfg.bins)?;
    let format = if opts.ascii { PixmapFormat::Ascii } else { PixmapFormat::Binary };
    let image = render_matrix_image(&shades, &s.order, &cfg, opts.scale, format)?;
    Ok(SeriationRun {
        order: s.order,
        labels: dist.labels,
        image,
    })
}

fn write_order(path: &Path, run: &SeriationRun) -> CliResult<()> {
    let header = ["position", "subject_id"].map(String::from);
    let rows: Vec<Vec<String>> = run
        .order
        .indices()
        .iter()
        .enumerate()
        .map(|(p, &i)| vec![(p + 1).to_string(), run.labels[i].clone()])
        .collect();
    write_table(path, &header, &rows)
}

fn run_seriate(a: &SeriateArgs, started: Instant) -> CliResult<()> {
    let spans = a.groups.as_deref().map(parse_spans).transpose()?;
    if spans.is_some() != a.partition_out.is_some() {
        return Err(CliError::Usage("--groups and --partition-out go together".into()));
    }
    let set = a.input.load()?;
    let profiles = complete_profiles(&set, false)?;
    let run = seriate(&profiles, &a.options)?;
    let manifest = RunManifest::new("seriate", a, &[&a.input.input])?;
    write_bytes(&a.out, &run.image)?;
    let mut outputs = vec![a.out.clone()];
    if let (Some(spans), Some(path)) = (spans, &a.partition_out) {
        let partition = trajcluster_core::seriation::extract_row_groups(&run.order, &run.labels, &spans)?;
        write_partition(path, &partition, &manifest)?;
        outputs.push(path.clone());
    }
    if let Some(path) = &a.order_out {
        write_order(path, &run)?;
        outputs.push(path.clone());
    }
    finish(&a.out, &manifest, started, &outputs)
}

fn responder_outcome(set: &TrajectorySet, opts: &ResponderOptions) -> CliResult<ResponderOutcome> {
    let refs = placebo_reference_rates(set, &opts.control_arm)?;
    Ok(classify_responders(set, &refs, &opts.config())?)
}

fn write_responder_labels(path: &Path, outcome: &ResponderOutcome) -> CliResult<()> {
    let header = ["subject_id", "arm", "horizon", "rate", "reference", "status"].map(String::from);
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    let rows: Vec<Vec<String>> = outcome
        .labels
        .iter()
        .map(|l| {
            vec![
                l.subject_id.clone(),
                l.arm.clone(),
                opt(l.horizon),
                opt(l.rate),
                opt(l.reference),
                l.status.as_str().to_string(),
            ]
        })
        .collect();
    write_table(path, &header, &rows)
}

fn run_responders(a: &ResponderArgs, started: Instant) -> CliResult<()> {
    let set = a.input.load()?;
    let outcome = responder_outcome(&set, &a.options)?;
    let manifest = RunManifest::new("responders", a, &[&a.input.input])?;
    write_responder_labels(&a.out, &outcome)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.partition_out {
        write_partition(path, &outcome.partition, &manifest)?;
        outputs.push(path.clone());
    }
    println!(
        "responders: {:?} over {} classified subjects",
        outcome.partition.sizes(),
        outcome.partition.n_subjects()
    );
    finish(&a.out, &manifest, started, &outputs)
}

/// Chi-square when every expected count is positive, Fisher for 2x2 tables
/// otherwise.
fn association_test(t: &ContingencyTable, yates: bool) -> Option<TestResult> {
    let (r, c) = t.shape();
    if r < 2 || c < 2 {
        return None;
    }
    match chi_square_test(t, yates && (r, c) == (2, 2)) {
        Ok(res) => Some(res),
        Err(CoreError::ZeroExpectedCount) if (r, c) == (2, 2) => fisher_exact_2x2(t).ok(),
        Err(_) => None,
    }
}

/// `a` groups down, `b` groups across, with `NA` for subjects missing from
/// the other partition and group-size totals.
pub fn crosstab_rows(a: &Partition, b: &Partition, t: &ContingencyTable) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec![format!("{}\\{}", a.method, b.method)];
    header.extend(t.col_labels.iter().cloned());
    header.push("NA".into());
    header.push("total".into());
    let mut rows = Vec::new();
    for (i, label) in t.row_labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(t.counts[i].iter().map(u64::to_string));
        row.push(t.row_absent[i].to_string());
        row.push((t.row_totals[i] + t.row_absent[i]).to_string());
        rows.push(row);
    }
    let mut na = vec!["NA".to_string()];
    na.extend(t.col_absent.iter().map(u64::to_string));
    na.push(String::new());
    na.push(t.col_absent.iter().sum::<u64>().to_string());
    rows.push(na);
    let mut total = vec!["total".to_string()];
    total.extend(t.col_totals.iter().zip(&t.col_absent).map(|(c, n)| (c + n).to_string()));
    let (row_na, col_na) = (t.row_absent.iter().sum::<u64>(), t.col_absent.iter().sum::<u64>());
    total.push(row_na.to_string());
    total.push((t.total + row_na + col_na).to_string());
    rows.push(total);
    (header, rows)
}

fn print_table(header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    let fail = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

fn describe_test(t: &Option<TestResult>) -> String {
    t.as_ref()
        .map(|r| format!("{} = {:.4}, p = {:.4}", r.test, r.statistic, r.p_value))
        .unwrap_or_default()
}

fn run_crosstab(a: &CrosstabArgs) -> CliResult<()> {
    let pa = read_partition(&a.a)?;
    let pb = read_partition(&a.b)?;
    let t = cross_tab(&pa, &pb)?;
    let (header, rows) = crosstab_rows(&pa, &pb, &t);
    match &a.out {
        Some(path) => write_table(path, &header, &rows)?,
        None => print_table(&header, &rows)?,
    }
    if let Some(test) = association_test(&t, a.yates) {
        eprintln!("{}", describe_test(&Some(test)));
    }
    if let Ok(ari) = adjusted_rand_index(&pa, &pb) {
        eprintln!("adjusted Rand index = {ari:.4} over {} common subjects", t.total);
    }
    Ok(())
}

fn run_describe(a: &DescribeArgs) -> CliResult<()> {
    let partition = read_partition(&a.partition)?;
    let covariates = read_covariates_csv(&a.covariates)?;
    let d = describe(&partition, &covariates);
    let mut header = vec!["variable".to_string(), "level".to_string()];
    header.extend(d.groups.iter().zip(&d.sizes).map(|(g, n)| format!("{g} (n={n})")));
    header.extend(["test", "statistic", "p_value"].map(String::from));
    let rows: Vec<Vec<String>> = d
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.variable.clone(), r.level.clone().unwrap_or_default()];
            row.extend(r.cells.iter().cloned());
            match &r.test {
                Some(t) => row.extend([t.test.clone(), fmt_f64(t.statistic), fmt_f64(t.p_value)]),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
            row
        })
        .collect();
    match &a.out {
        Some(path) => write_table(path, &header, &rows),
        None => print_table(&header, &rows),
    }
}

fn run_compare(a: &CompareArgs, started: Instant) -> CliResult<()> {
    let set = a.input.load()?;
    let dir = &a.out_dir;
    let manifest = RunManifest::new("compare", a, &[&a.input.input])?;
    let mut outputs = Vec::new();
    let mut save = |name: &str, partition: &Partition| -> CliResult<()> {
        let path = dir.join(format!("{name}.json"));
        write_partition(&path, partition, &manifest)?;
        outputs.push(path);
        Ok(())
    };

    let kml = kml_solution(&set, &a.kml, a.seed)?;
    save("kmlshape", &kml.partition)?;

    let profiles = complete_profiles(&set, false)?;
    let mut hca_run = hca(&profiles, None, a.k_max, ElbowRule::Ratio)?;
    hca_run.partition.params.insert("auto_k".into(), json!(true));
    if let Some(w) = &hca_run.warning {
        eprintln!("hca: {w}");
    }
    save("hca", &hca_run.partition)?;

    let ser = seriate(&profiles, &a.seriation)?;
    let spans = match &a.groups {
        Some(text) => parse_spans(text)?,
        None => {
            let count = (profiles.len() / 4).max(1);
            [0.0, 0.5, 1.0].map(|f| Span { start_fraction: f, count }).to_vec()
        }
    };
    let ser_partition = trajcluster_core::seriation::extract_row_groups(&ser.order, &ser.labels, &spans)?;
    save("seriation", &ser_partition)?;

    let outcome = responder_outcome(&set, &a.responders)?;
    save("responders", &outcome.partition)?;

    let mut extra = vec![dir.join("dendrogram.json"), dir.join("seriation.ppm"), dir.join("responders.csv")];
    write_json(&extra[0], &hca_run.dendrogram)?;
    write_bytes(&extra[1], &ser.image)?;
    write_responder_labels(&extra[2], &outcome)?;

    let methods: [(&str, &Partition); 4] = [
        ("kmlshape", &kml.partition),
        ("hca", &hca_run.partition),
        ("seriation", &ser_partition),
        ("responders", &outcome.partition),
    ];
    let summary_header = ["a", "b", "common", "ari", "test", "statistic", "df", "p_value"].map(String::from);
    let mut summary = Vec::new();
    for (i, (na, pa)) in methods.iter().enumerate() {
        for (nb, pb) in &methods[i + 1..] {
            let t = cross_tab(pa, pb)?;
            let (header, rows) = crosstab_rows(pa, pb, &t);
            let path = dir.join(format!("crosstab_{na}_{nb}.csv"));
            write_table(&path, &header, &rows)?;
            extra.push(path);
            let ari = adjusted_rand_index(pa, pb).map(fmt_f64).unwrap_or_default();
            let test = association_test(&t, false);
            summary.push(vec![
                na.to_string(),
                nb.to_string(),
                t.total.to_string(),
                ari,
                test.as_ref().map(|r| r.test.clone()).unwrap_or_default(),
                test.as_ref().map(|r| fmt_f64(r.statistic)).unwrap_or_default(),
                test.as_ref().and_then(|r| r.df).map(fmt_f64).unwrap_or_default(),
                test.as_ref().map(|r| fmt_f64(r.p_value)).unwrap_or_default(),
            ]);
        }
    }
    let summary_path = dir.join("overlap.csv");
    write_table(&summary_path, &summary_header, &summary)?;
    extra.push(summary_path);
    outputs.extend(extra);

    let mut sizes = BTreeMap::new();
    for (name, p) in &methods {
        sizes.insert(*name, p.sizes());
    }
    println!("compare: group sizes {}", json!(sizes));
    write_run_record(&dir.join("run.json"), &manifest, started.elapsed(), &outputs)
}
