//! Command-line front end: generate, map, train, predict, eval, latent.
//!
//! Every command writes into one run directory (`--out`) together with an
//! echo of the resolved configuration. If a command fails, the files it
//! already wrote are removed again.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::artifact::{read_json, write_json, MapArtifact, ModelArtifact};
use crate::benchmarks::{gen_paper_suite, gen_synthetic_family, paper_suite_metadata, SyntheticFamilySpec};
use crate::dataset::{self, load_inputs_csv, FusedDataset, Manifest, ManifestEntry, SourceDataset};
use crate::error::{Error, Result};
use crate::fusion::{
    evaluate, smallest_source, train_baseline_gp, train_fusion, train_single_source, ModelKind, RoutedInputs,
    Router, TrainedModel,
};
use crate::gp::GpConfig;
use crate::imc::{map_all_sources, ImcConfig};
use crate::lvgp::{write_latent_csv, LvgpConfig};

pub const SUITES: [&str; 2] = ["beam-paper", "synthetic"];

#[derive(Debug, Parser)]
#[command(name = "hetfuse", version, about = "Multi-source data fusion with input mapping and latent-variable GPs")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sets every named seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Reference source id.
    #[arg(long = "ref", global = true)]
    pub ref_source: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a benchmark suite as CSVs plus a manifest.
    Generate {
        #[arg(long)]
        suite: String,
    },
    /// Calibrate input maps and write the fused dataset.
    Map {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train fused_gp, fused_lvgp or single_source:<id>.
    Train {
        #[arg(long, value_parser = parse_kind)]
        kind: TrainKind,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory written by `map` (defaults to --out).
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// Predict raw inputs of one source with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// Score models on the manifest's test sets.
    Eval {
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// Export latent coordinates and dissimilarities of an LVGP model.
    Latent {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainKind {
    FusedGp,
    FusedLvgp,
    SingleSource(String),
}

impl TrainKind {
    fn file_stem(&self) -> String {
        match self {
            TrainKind::FusedGp => "fused_gp".into(),
            TrainKind::FusedLvgp => "fused_lvgp".into(),
            TrainKind::SingleSource(id) => format!("single_source_{id}"),
        }
    }
}

fn parse_kind(s: &str) -> std::result::Result<TrainKind, String> {
    match s {
        "fused_gp" => Ok(TrainKind::FusedGp),
        "fused_lvgp" => Ok(TrainKind::FusedLvgp),
        _ => match s.strip_prefix("single_source:") {
            Some(id) if !id.is_empty() => Ok(TrainKind::SingleSource(id.to_string())),
            _ => Err(format!(
                "unknown model kind {s:?}; expected fused_gp, fused_lvgp or single_source:<id>"
            )),
        },
    }
}

/// Sizes for the synthetic suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticOptions {
    pub d_ref: usize,
    pub d_s: usize,
    pub n_ref: usize,
    pub n_s: usize,
    pub noise_sigma: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            d_ref: 2,
            d_s: 2,
            n_ref: 60,
            n_s: 20,
            noise_sigma: 0.0,
        }
    }
}

/// Resolved run configuration (defaults, then config file, then flags).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub ref_source: Option<String>,
    /// When set, overrides every named seed below.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub imc: ImcConfig,
    pub gp: GpConfig,
    pub lvgp: LvgpConfig,
    pub synthetic: SyntheticOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            ref_source: None,
            seed: None,
            out: None,
            imc: ImcConfig::default(),
            gp: GpConfig::default(),
            lvgp: LvgpConfig::default(),
            synthetic: SyntheticOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut cfg: RunConfig = match &cli.config {
            Some(p) => read_json(p)?,
            None => RunConfig::default(),
        };
        if cli.seed.is_some() {
            cfg.seed = cli.seed;
        }
        if cli.out.is_some() {
            cfg.out = cli.out.clone();
        }
        if cli.ref_source.is_some() {
            cfg.ref_source = cli.ref_source.clone();
        }
        match &cli.command {
            Command::Map { manifest }
            | Command::Train { manifest, .. }
            | Command::Predict { manifest, .. }
            | Command::Eval { manifest, .. } => {
                if manifest.is_some() {
                    cfg.manifest = manifest.clone();
                }
            }
            _ => {}
        }
        if let Some(s) = cfg.seed {
            cfg.imc.seed = s;
            cfg.gp.seed = s;
            cfg.lvgp.gp.seed = s;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("run"))
    }

    fn manifest(&self) -> Result<(Manifest, PathBuf)> {
        let path = self
            .manifest
            .clone()
            .ok_or_else(|| Error::Config("no manifest given (use --manifest or the config file)".into()))?;
        let manifest = Manifest::read(&path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("imc".to_string(), self.imc.seed),
            ("gp".to_string(), self.gp.seed),
            ("lvgp".to_string(), self.lvgp.gp.seed),
        ])
    }
}

/// Files written by the current command, removed again on failure.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
    created_dirs: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        let mut out = Outputs {
            dir: dir.clone(),
            files: vec![],
            created_dirs: vec![],
        };
        out.ensure_dir(&dir)?;
        Ok(out)
    }

    fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = vec![];
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        missing.reverse();
        self.created_dirs.extend(missing);
        Ok(())
    }

    /// Registers `rel` under the run directory and returns its path.
    fn file(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            let parent = parent.to_path_buf();
            self.ensure_dir(&parent)?;
        }
        self.files.push(p.clone());
        Ok(p)
    }

    fn rollback(&self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.created_dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Sizes the global thread pool from `HETFUSE_THREADS` (0 or unset = automatic).
pub fn init_threads() -> Result<()> {
    let n = match std::env::var("HETFUSE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("HETFUSE_THREADS must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    if n > 0 {
        // A pool that is already initialized keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli)?;
    if let Command::Generate { suite } = &cli.command {
        if !SUITES.contains(&suite.as_str()) {
            return Err(Error::Config(format!(
                "unknown suite {suite:?}; available: {}",
                SUITES.join(", ")
            )));
        }
    }
    let mut out = Outputs::new(cfg.out_dir())?;
    let result = dispatch(cli, &cfg, &mut out);
    if result.is_err() {
        out.rollback();
    }
    result
}

fn dispatch(cli: &Cli, cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    match &cli.command {
        Command::Generate { suite } => cmd_generate(suite, cfg, out),
        Command::Map { .. } => cmd_map(cfg, out),
        Command::Train { kind, maps, .. } => cmd_train(kind, maps.as_deref(), cfg, out),
        Command::Predict {
            model,
            input,
            source,
            maps,
            ..
        } => cmd_predict(model, input, source, maps.as_deref(), cfg, out),
        Command::Eval { models, maps, .. } => cmd_eval(models, maps.as_deref(), cfg, out),
        Command::Latent { model } => cmd_latent(model, cfg, out),
    }
}

fn echo_config(cfg: &RunConfig, name: &str, out: &mut Outputs) -> Result<()> {
    write_json(&out.file(format!("{name}_config.json"))?, cfg)
}

fn entry(ds: &SourceDataset, csv: &str, test: Option<&str>) -> ManifestEntry {
    ManifestEntry {
        source_id: ds.source_id.clone(),
        csv_path: PathBuf::from(csv),
        input_columns: ds.input_names.clone(),
        output_column: ds.output_name.clone(),
        test_csv_path: test.map(PathBuf::from),
    }
}

fn cmd_generate(suite: &str, cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let seed = cfg.seed.unwrap_or(0);
    match suite {
        "beam-paper" => {
            let mut entries = vec![];
            for s in gen_paper_suite(seed)? {
                let id = s.train.source_id.clone();
                let (tr, te) = (format!("{id}_train.csv"), format!("{id}_test.csv"));
                dataset::write_csv(&s.train, &out.file(&tr)?)?;
                dataset::write_csv(&s.test, &out.file(&te)?)?;
                println!("{id}: {} train rows, {} test rows", s.train.n_rows(), s.test.n_rows());
                entries.push(entry(&s.train, &tr, Some(&te)));
            }
            Manifest {
                sources: entries,
                metadata: Some(paper_suite_metadata(seed)),
            }
            .write(&out.file("manifest.json")?)?;
        }
        "synthetic" => {
            let o = &cfg.synthetic;
            let spec = SyntheticFamilySpec {
                noise_sigma: o.noise_sigma,
                ..SyntheticFamilySpec::new(o.d_ref, o.d_s, seed)
            };
            let fam = gen_synthetic_family(&spec, o.n_ref, o.n_s)?;
            let mut entries = vec![];
            for ds in [&fam.reference, &fam.source] {
                let f = format!("{}.csv", ds.source_id);
                dataset::write_csv(ds, &out.file(&f)?)?;
                println!("{}: {} rows", ds.source_id, ds.n_rows());
                entries.push(entry(ds, &f, None));
            }
            let hidden = serde_json::json!({
                "A": fam.hidden.a.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
                "b": fam.hidden.b.iter().copied().collect::<Vec<f64>>(),
                "units": "raw inputs: x_ref = A x_s + b",
            });
            write_json(&out.file("hidden_map.json")?, &hidden)?;
            Manifest {
                sources: entries,
                metadata: Some(serde_json::json!({
                    "suite": "synthetic",
                    "seed": seed,
                    "base_function": spec.base,
                    "options": o,
                })),
            }
            .write(&out.file("manifest.json")?)?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown suite {other:?}; available: {}",
                SUITES.join(", ")
            )))
        }
    }
    echo_config(cfg, "generate", out)
}

/// Summary written by `map` next to the fused data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingSummary {
    pub ref_id: String,
    pub source_set: Vec<String>,
    pub losses: BTreeMap<String, f64>,
}

fn cmd_map(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let (manifest, base) = cfg.manifest()?;
    let sources = manifest.load_train(&base)?;
    let mapping = map_all_sources(&sources, cfg.ref_source.as_deref(), &cfg.imc, &cfg.gp)?;
    println!("reference: {} ({} rows)", mapping.ref_id, mapping.ref_gp.n_train());
    let ref_model = TrainedModel::SingleSourceGp {
        source_id: mapping.ref_id.clone(),
        model: mapping.ref_gp.clone(),
    };
    ModelArtifact::from_model(&ref_model).save(&out.file("reference_gp.json")?)?;
    let mut losses = BTreeMap::new();
    for c in &mapping.calibrations {
        let id = &c.map.source_id;
        MapArtifact::new(&c.map, &c.config).save(&out.file(format!("maps/{id}.json"))?)?;
        dataset::write_records(
            &out.file(format!("maps/{id}_trace.csv"))?,
            &["generation", "best_loss", "mean_loss"].map(String::from),
            c.trace.iter().map(|g| {
                vec![g.generation.to_string(), g.best_loss.to_string(), g.mean_loss.to_string()]
            }),
        )?;
        println!(
            "{id} -> {}: A is {}x{}, loss {:.6e}",
            mapping.ref_id,
            c.map.d_ref(),
            c.map.d_source(),
            c.map.loss
        );
        losses.insert(id.clone(), c.map.loss);
    }
    mapping.fused.write_csv(&out.file("fused.csv")?)?;
    write_json(
        &out.file("mapping.json")?,
        &MappingSummary {
            ref_id: mapping.ref_id.clone(),
            source_set: mapping.fused.source_set.clone(),
            losses,
        },
    )?;
    println!("fused dataset: {} rows", mapping.fused.n_rows());
    echo_config(cfg, "map", out)
}

fn map_dir(maps: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    maps.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir())
}

fn load_fused(dir: &Path) -> Result<FusedDataset> {
    let summary: MappingSummary = read_json(&dir.join("mapping.json"))?;
    FusedDataset::read_csv(&dir.join("fused.csv"), &summary.ref_id, summary.source_set)
}

/// Rebuilds the router from a `map` run directory.
pub fn load_router(dir: &Path) -> Result<Router> {
    let summary: MappingSummary = read_json(&dir.join("mapping.json"))?;
    let reference = ModelArtifact::load(&dir.join("reference_gp.json"))?.to_model()?;
    let TrainedModel::SingleSourceGp { model, .. } = reference else {
        return Err(Error::Config("reference_gp.json is not a single-source GP".into()));
    };
    let maps = summary
        .losses
        .keys()
        .map(|id| MapArtifact::load(&dir.join("maps").join(format!("{id}.json")))?.to_map())
        .collect::<Result<Vec<_>>>()?;
    Router::new(&summary.ref_id, model.input, maps)
}

fn cmd_train(kind: &TrainKind, maps: Option<&Path>, cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let model = match kind {
        TrainKind::FusedGp | TrainKind::FusedLvgp => {
            let fused = load_fused(&map_dir(maps, cfg))?;
            let ref_id = fused.ref_source_id.clone();
            if *kind == TrainKind::FusedGp {
                TrainedModel::FusedGp {
                    ref_id,
                    model: train_baseline_gp(&fused, &cfg.lvgp.gp)?,
                }
            } else {
                TrainedModel::FusedLvgp {
                    ref_id,
                    model: train_fusion(&fused, &cfg.lvgp)?,
                }
            }
        }
        TrainKind::SingleSource(id) => {
            let (manifest, base) = cfg.manifest()?;
            let sources = manifest.load_train(&base)?;
            let src = sources.iter().find(|s| &s.source_id == id).ok_or_else(|| Error::UnknownSource {
                source_id: id.clone(),
            })?;
            TrainedModel::SingleSourceGp {
                source_id: id.clone(),
                model: train_single_source(src, &cfg.gp)?,
            }
        }
    };
    let stem = kind.file_stem();
    ModelArtifact::from_model(&model).save(&out.file(format!("model_{stem}.json"))?)?;
    if let TrainedModel::FusedLvgp { model, .. } = &model {
        println!("{stem}: {} latent points", model.levels().len());
    }
    println!("trained {stem}");
    echo_config(cfg, &format!("train_{stem}"), out)
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    ModelArtifact::load(path)?.to_model()
}

fn cmd_predict(
    model_path: &Path,
    input: &Path,
    source: &str,
    maps: Option<&Path>,
    cfg: &RunConfig,
    out: &mut Outputs,
) -> Result<()> {
    let model = load_model(model_path)?;
    let (manifest, _) = cfg.manifest()?;
    let e = manifest
        .sources
        .iter()
        .find(|e| e.source_id == source)
        .ok_or_else(|| Error::UnknownSource {
            source_id: source.to_string(),
        })?;
    let x = load_inputs_csv(input, &e.input_columns)?;
    let n = x.nrows();
    let ds = SourceDataset::new(
        source,
        e.input_columns.clone(),
        x,
        nalgebra::DVector::zeros(n),
        e.output_column.clone(),
    )?;
    let routed = match model.kind() {
        ModelKind::SingleSourceGp => RoutedInputs::original(&ds),
        _ => load_router(&map_dir(maps, cfg))?.route(&ds)?,
    };
    let pred = model.predict(&routed)?;
    let sd = pred.std_dev();
    let mut header = vec!["source_id".to_string()];
    header.extend(e.input_columns.iter().cloned());
    header.extend(["y_pred", "y_std"].map(String::from));
    dataset::write_records(
        &out.file(format!("predictions_{source}.csv"))?,
        &header,
        (0..n).map(|i| {
            let mut rec = vec![source.to_string()];
            rec.extend(ds.x.row(i).iter().map(|v| v.to_string()));
            rec.push(pred.mean[i].to_string());
            rec.push(sd[i].to_string());
            rec
        }),
    )?;
    println!("predicted {n} rows of {source} with {}", model.label());
    echo_config(cfg, "predict", out)
}

fn cmd_eval(models: &[PathBuf], maps: Option<&Path>, cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let models = models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let (manifest, base) = cfg.manifest()?;
    let train = manifest.load_train(&base)?;
    let test = manifest.load_test(&base)?;
    if test.is_empty() {
        return Err(Error::Config("manifest declares no test sets".into()));
    }
    let needs_router = models.iter().any(|m| m.kind() != ModelKind::SingleSourceGp);
    let router = if needs_router {
        load_router(&map_dir(maps, cfg))?
    } else {
        let first = &models[0];
        let TrainedModel::SingleSourceGp { source_id, model } = first else {
            unreachable!()
        };
        Router::new(source_id, model.input.clone(), vec![])?
    };
    let mut focus: Vec<String> = models
        .iter()
        .filter_map(|m| match m {
            TrainedModel::SingleSourceGp { source_id, .. } => Some(source_id.clone()),
            _ => None,
        })
        .collect();
    if focus.is_empty() {
        focus.extend(smallest_source(&train, &router.ref_id).map(|s| s.source_id.clone()));
    }
    let test: Vec<SourceDataset> = test
        .into_iter()
        .filter(|d| models.iter().any(|m| m.covers(&d.source_id, &router)))
        .collect();
    let train: Vec<SourceDataset> = train
        .into_iter()
        .filter(|d| models.iter().any(|m| m.covers(&d.source_id, &router)))
        .collect();
    let ev = evaluate(&models, &train, &test, &router, &focus, cfg.seeds())?;
    write_json(&out.file("report.json")?, &ev.report)?;
    let table = ev.report.render_table();
    fs::write(out.file("report.txt")?, &table).map_err(|e| Error::io(&out.dir, e))?;
    for p in &ev.predictions {
        p.write_csv(&out.file(format!("predictions_{}.csv", p.model))?)?;
    }
    print!("{table}");
    echo_config(cfg, "eval", out)
}

fn cmd_latent(model_path: &Path, cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let TrainedModel::FusedLvgp { model, .. } = load_model(model_path)? else {
        return Err(Error::NoLatentSpace);
    };
    let rows = model.export_latent(cfg.ref_source.as_deref())?;
    write_latent_csv(&rows, &out.file("latent.csv")?)?;
    println!("{:<8} {:>10} {:>10} {:>8}", "level", "z1", "z2", "D");
    for r in &rows {
        println!("{:<8} {:>10.4} {:>10.4} {:>8.4}", r.level, r.z1, r.z2, r.d);
    }
    echo_config(cfg, "latent", out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse() {
        assert_eq!(parse_kind("fused_gp").unwrap(), TrainKind::FusedGp);
        assert_eq!(
            parse_kind("single_source:HCB").unwrap(),
            TrainKind::SingleSource("HCB".into())
        );
        assert!(parse_kind("single_source:").is_err());
        assert!(parse_kind("deep_gp").is_err());
    }

    #[test]
    fn flags_override_config_seeds() {
        let cli = Cli::try_parse_from(["hetfuse", "--seed", "9", "--ref", "RB", "map"]).unwrap();
        let cfg = RunConfig::resolve(&cli).unwrap();
        assert_eq!((cfg.imc.seed, cfg.gp.seed, cfg.lvgp.gp.seed), (9, 9, 9));
        assert_eq!(cfg.ref_source.as_deref(), Some("RB"));
    }

    #[test]
    fn unknown_kind_is_a_usage_error() {
        assert_eq!(main_with_args(["hetfuse", "train", "--kind", "nope"]), 2);
    }
}
