//! `pcaseg` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 when no candidate segmentation
//! could be produced.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pcaseg_core::eval::{aggregate, Aggregate};
use pcaseg_core::tensor_io::write_gray8_png;
use pcaseg_core::{
    concat_features, evaluate, fit_pca, read_ftz, read_label_png, run_segmentation,
    write_label_png, Error, EvalConfig, EvalReport, FeatureRecipe, Method, NMode, RunConfig,
    TensorStore,
};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    name = "pcaseg",
    version,
    about = "Class-agnostic segmentation from CNN feature tensors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster one or more feature recipes and write the best segmentation.
    Segment(SegmentArgs),
    /// Score predicted label maps against ground truth.
    Eval(EvalArgs),
    /// Print the covariance spectrum of one recipe.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone)]
struct RecipeArg {
    name: String,
    paths: Vec<String>,
}

fn parse_recipe(s: &str) -> Result<RecipeArg, String> {
    let (name, rest) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=PATH[,PATH...], got {s:?}"))?;
    if name.is_empty() {
        return Err("recipe name is empty".into());
    }
    let paths: Vec<String> = rest.split(',').map(str::to_string).collect();
    if paths.iter().any(String::is_empty) {
        return Err(format!("recipe {name:?} has an empty path"));
    }
    Ok(RecipeArg {
        name: name.to_string(),
        paths,
    })
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        return Err("image size must be positive".into());
    }
    Ok((h, w))
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// NAME=PATH[,PATH...]; repeat for several recipes.
    #[arg(long = "recipe", required = true, value_parser = parse_recipe)]
    recipes: Vec<RecipeArg>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    t_eig: Option<f64>,
    #[arg(long)]
    t_sil: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of kmeans,hierarchical.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Fixed cluster count instead of the spectrum rule.
    #[arg(long)]
    k: Option<usize>,
    /// Output label-map size; defaults to the winning feature grid.
    #[arg(long, value_parser = parse_size)]
    image_size: Option<(usize, usize)>,
    /// RunConfig as JSON; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, requires = "gt", conflicts_with = "manifest")]
    pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,
    /// JSON lines of {"pred": PATH, "gt": PATH}, relative to the manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "clusters")]
    n_mode: NMode,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long, value_parser = parse_recipe)]
    recipe: RecipeArg,
    #[arg(long, default_value_t = pcaseg_core::pca::DEFAULT_T_EIG)]
    t_eig: f64,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Segment(args) => cmd_segment(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::AllCandidatesErrored | Error::AllRecipesFailed) => 2,
        _ => 1,
    }
}

fn load_tensors<'a>(paths: impl IntoIterator<Item = &'a String>) -> Result<TensorStore> {
    let mut store = TensorStore::new();
    for path in paths.into_iter().collect::<BTreeSet<_>>() {
        let tensor = read_ftz(path).with_context(|| format!("reading {path}"))?;
        store.insert(path.clone(), tensor);
    }
    Ok(store)
}

fn to_recipe(arg: &RecipeArg, standardize: bool) -> FeatureRecipe {
    let mut recipe = FeatureRecipe::new(arg.name.clone(), arg.paths.clone());
    recipe.standardize = standardize;
    recipe
}

fn run_config(args: &SegmentArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(t) = args.t_eig {
        config.t_eig = t;
    }
    if let Some(t) = args.t_sil {
        config.t_sil = t;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(methods) = &args.methods {
        config.methods = methods.clone();
    }
    if args.k.is_some() {
        config.k_override = args.k;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_segment(args: SegmentArgs) -> Result<()> {
    let config = run_config(&args)?;
    let store = load_tensors(args.recipes.iter().flat_map(|r| &r.paths))?;
    let recipes: Vec<FeatureRecipe> = args
        .recipes
        .iter()
        .map(|r| to_recipe(r, config.standardize))
        .collect();

    // Without an explicit size the label map stays on the winner's grid; the
    // first pass upsamples to a throwaway size that is replaced below.
    let (image_h, image_w) = args.image_size.unwrap_or((1, 1));
    let mut result = run_segmentation(&recipes, &store, image_h, image_w, &config)?;
    if args.image_size.is_none() {
        let maps = &result.winner_representation().pc_maps;
        let (gh, gw) = (maps.grid_h(), maps.grid_w());
        result.label_map =
            pcaseg_core::upsample_labels(&result.winner_labels.labels, gh, gw, gh, gw)?;
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_label_png(&result.label_map, args.out.join("labelmap.png"))
        .context("writing labelmap.png")?;
    let maps = &result.winner_representation().pc_maps;
    for j in 0..maps.k() {
        let name = format!("pcmap_{j}.png");
        write_gray8_png(
            &args.out.join(&name),
            maps.grid_h(),
            maps.grid_w(),
            &maps.map_to_u8(j),
        )
        .with_context(|| format!("writing {name}"))?;
    }
    let report = result.report(&config);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(args.out.join("report.json"), text).context("writing report.json")?;

    if args.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        let w = &report.winner;
        println!(
            "winner: {} / {} with K = {}, SR = {:.4}",
            w.recipe, w.method, w.k, w.sr
        );
        for c in report.candidates {
            let k = c.k.map_or("-".to_string(), |k| k.to_string());
            match (c.sr, &c.error) {
                (Some(sr), _) => {
                    println!("  {:<16} {:<12} K={k:<3} SR={sr:.4}", c.recipe, c.method)
                }
                (None, Some(e)) => {
                    println!("  {:<16} {:<12} K={k:<3} error: {e}", c.recipe, c.method)
                }
                (None, None) => println!("  {:<16} {:<12} K={k:<3}", c.recipe, c.method),
            }
        }
        println!("wrote {}", args.out.display());
    }
    Ok(())
}

#[derive(Deserialize)]
struct ManifestEntry {
    pred: PathBuf,
    gt: PathBuf,
}

#[derive(Serialize)]
struct ImageReport {
    pred: PathBuf,
    gt: PathBuf,
    #[serde(flatten)]
    report: EvalReport,
}

#[derive(Serialize)]
struct ManifestReport {
    images: Vec<ImageReport>,
    aggregate: Option<Aggregate>,
}

fn eval_pair(pred: &Path, gt: &Path, n_mode: NMode) -> Result<EvalReport> {
    let p = read_label_png(pred).with_context(|| format!("reading {}", pred.display()))?;
    let g = read_label_png(gt).with_context(|| format!("reading {}", gt.display()))?;
    Ok(evaluate(&p, &g, EvalConfig { n_mode })?)
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry =
            serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        e.pred = base.join(e.pred);
        e.gt = base.join(e.gt);
        entries.push(e);
    }
    if entries.is_empty() {
        bail!("manifest {} lists no images", path.display());
    }
    Ok(entries)
}

fn emit(value: &impl Serialize, json: bool, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut stdout = std::io::stdout().lock();
    if json {
        serde_json::to_writer(&mut stdout, value)?;
    } else {
        serde_json::to_writer_pretty(&mut stdout, value)?;
    }
    writeln!(stdout)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    match (&args.pred, &args.gt, &args.manifest) {
        (Some(pred), Some(gt), None) => {
            let report = eval_pair(pred, gt, args.n_mode)?;
            emit(&report, args.json, args.out.as_deref())
        }
        (None, None, Some(manifest)) => {
            let mut images = Vec::new();
            for e in read_manifest(manifest)? {
                let report = eval_pair(&e.pred, &e.gt, args.n_mode)?;
                images.push(ImageReport {
                    pred: e.pred,
                    gt: e.gt,
                    report,
                });
            }
            let reports: Vec<EvalReport> = images.iter().map(|i| i.report.clone()).collect();
            let summary = ManifestReport {
                aggregate: aggregate(&reports),
                images,
            };
            emit(&summary, args.json, args.out.as_deref())
        }
        _ => bail!("pass either --pred and --gt, or --manifest"),
    }
}

#[derive(Serialize)]
struct Spectrum<'a> {
    recipe: &'a str,
    grid: [usize; 2],
    eigenvalues: &'a [f64],
    ratios: Vec<f64>,
    k_selected: usize,
    t_eig: f64,
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    if !(args.t_eig > 0.0 && args.t_eig < 1.0) {
        bail!("t_eig must be in (0, 1), got {}", args.t_eig);
    }
    let store = load_tensors(&args.recipe.paths)?;
    let recipe = to_recipe(&args.recipe, !args.no_standardize);
    let tensors: Vec<_> = recipe.sources.iter().map(|s| &store[s]).collect();
    let matrix = concat_features(&recipe, &tensors)?;
    let model = fit_pca(&matrix, args.t_eig)?;
    let spectrum = Spectrum {
        recipe: &recipe.id,
        grid: [matrix.grid_h(), matrix.grid_w()],
        eigenvalues: &model.eigenvalues,
        ratios: model.ratios(),
        k_selected: model.k_selected,
        t_eig: model.t_eig,
    };
    if args.json {
        println!("{}", serde_json::to_string(&spectrum)?);
    } else {
        println!(
            "{}: {}x{} grid, {} channels, K = {} at t_eig = {}",
            spectrum.recipe,
            spectrum.grid[0],
            spectrum.grid[1],
            model.dim(),
            spectrum.k_selected,
            spectrum.t_eig
        );
        for (j, (l, r)) in model
            .eigenvalues
            .iter()
            .zip(&spectrum.ratios)
            .enumerate()
            .take(16)
        {
            println!("  {j:>3}  {l:>14.6e}  {r:.4}");
        }
    }
    Ok(())
}
