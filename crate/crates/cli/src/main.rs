mod config;
mod render;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{AugmentName, BaselineName, GranularityName, RunConfig, SchemeName};
use pnet::baselines::run_baseline;
use pnet::dataio::{build_manifest, parse_frame_file, DatasetManifest, Taxonomy};
use pnet::harness::{
    compare_folds, evaluate_model, fold_seed, load_checkpoint, load_outline, make_plan,
    run_experiment, ConfusionMatrix, FoldSummary, FrameSet, LabelSpace, Scheme,
};
use pnet::nn::{FRAME_HEIGHT, FRAME_WIDTH};
use pnet::signal::{
    augment_sample, median_filter_3d, normalize_frame, preprocess_dataset, AugmentPolicy,
    PreparedDataset,
};
use pnet::synth::{default_format, generate_sequence, write_dataset, SynthSpec};
use pnet::tensor::SeededRng;

const DATASET_MARKER: &str = "dataset.json";

#[derive(Parser)]
#[command(name = "pnet", version, about = "In-bed posture and subject recognition from pressure-mat frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dataset root (`S<subject>/<posture>.txt`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Preprocessed-sequence cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(d) = &self.data {
            cfg.dataset = Some(d.clone());
        }
        if let Some(c) = &self.cache {
            cfg.cache = c.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeName>,
    /// Number of folds for the k-fold schemes.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_enum)]
    granularity: Option<GranularityName>,
    #[arg(long, value_enum)]
    augment: Option<AugmentName>,
    /// Run a feature baseline instead of the network.
    #[arg(long, value_enum)]
    baseline: Option<BaselineName>,
    /// Comma-separated λ values, e.g. `0,0.1,...,1`; one run per value plus
    /// Welch tests of the first value against each other.
    #[arg(long)]
    lambda_sweep: Option<String>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = self.common.resolve()?;
        macro_rules! set {
            ($($f:ident => $t:ident),*) => {$(
                if let Some(v) = self.$f.clone() {
                    cfg.$t = v;
                }
            )*};
        }
        set!(out => out, scheme => scheme, folds => folds, seed => seed, batch_size => batch_size,
             stride => stride, granularity => granularity, augment => augment);
        if self.lambda.is_some() {
            cfg.lambda = self.lambda;
        }
        if self.epochs.is_some() {
            cfg.epochs = self.epochs;
        }
        if self.baseline.is_some() {
            cfg.baseline = self.baseline;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Clean the dataset once and cache it, with manifest and removal report.
    Preprocess(Common),
    /// Cross-validated training (or a baseline) into a run directory.
    Train(TrainArgs),
    /// Re-scores saved fold checkpoints against their test splits.
    Evaluate {
        run: PathBuf,
        /// Overrides the cache directory recorded in the run.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Summary tables, per-fold breakdown, curves and confusion grids.
    Report { run: PathBuf },
    /// Raw and preprocessed rendering of one frame of a recording.
    FrameDump {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, short)]
        config: Option<PathBuf>,
    },
    /// Empirical firing frequency of each augmentation step.
    AugmentStats {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
    },
    /// Writes a synthetic dataset in the on-disk layout.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        subjects: usize,
        #[arg(long, default_value_t = 14)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// `subject:posture` pairs recorded as all-zero sequences.
        #[arg(long, value_delimiter = ',')]
        empty: Vec<String>,
    },
}

fn manifest_for(cfg: &RunConfig) -> Result<(DatasetManifest, Taxonomy)> {
    let root = cfg.dataset_root()?;
    if !root.is_dir() {
        bail!(
            "dataset root {} not found; expected <root>/S<subject>/<posture>.txt with one \
             {FRAME_HEIGHT}x{FRAME_WIDTH} frame of readings per line",
            root.display()
        );
    }
    let tax = cfg.taxonomy()?;
    let manifest = build_manifest(&root, &tax, &cfg.format)?;
    if manifest.entries.is_empty() {
        bail!(
            "no recordings under {}; expected S<subject>/<posture>.txt files",
            root.display()
        );
    }
    Ok((manifest, tax))
}

fn prepare(cfg: &RunConfig) -> Result<(DatasetManifest, Taxonomy, PreparedDataset)> {
    let (manifest, tax) = manifest_for(cfg)?;
    let prepared = preprocess_dataset(&manifest, &cfg.preprocess, &cfg.format, Some(&cfg.cache))?;
    Ok((manifest, tax, prepared))
}

fn cmd_preprocess(common: &Common) -> Result<()> {
    let cfg = common.resolve()?;
    let (manifest, tax, prepared) = prepare(&cfg)?;
    for w in manifest.warnings.iter().chain(&prepared.warnings) {
        eprintln!("warning: {w}");
    }
    std::fs::write(cfg.cache.join("manifest.txt"), manifest.to_text())?;
    std::fs::write(cfg.cache.join("taxonomy.txt"), tax.to_text())?;
    std::fs::write(cfg.cache.join("removal.txt"), prepared.removal.to_text())?;
    let frames: usize = prepared.sequences.iter().map(|s| s.frames.len()).sum();
    std::fs::write(
        cfg.cache.join(DATASET_MARKER),
        serde_json::to_string_pretty(&json!({
            "dataset_key": prepared.dataset_key,
            "recordings": manifest.entries.len(),
            "sequences_kept": prepared.sequences.len(),
            "frames_kept": frames,
            "preprocess": cfg.preprocess,
            "format": cfg.format,
        }))? + "\n",
    )?;
    println!(
        "{} recordings, {} subjects: cache {} hit(s), {} recomputed",
        manifest.entries.len(),
        manifest.subjects().len(),
        prepared.cache_hits,
        prepared.cache_misses
    );
    println!(
        "dropped {} empty sequence(s); kept {} sequences, {frames} frames",
        prepared.removal.dropped.len(),
        prepared.sequences.len()
    );
    println!("dataset key {}", prepared.dataset_key);
    Ok(())
}

fn load_frames(cfg: &RunConfig) -> Result<(FrameSet, Taxonomy, String)> {
    if !cfg.cache.join(DATASET_MARKER).exists() {
        bail!(
            "no preprocessed dataset in {}; run `pnet preprocess` first",
            cfg.cache.display()
        );
    }
    let (_, tax, prepared) = prepare(cfg)?;
    let data = FrameSet::from_sequences(&prepared.sequences, cfg.stride)?;
    Ok((data, tax, prepared.dataset_key))
}

fn write_run_files(dir: &Path, cfg: &RunConfig, dataset_key: &str, frames: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("run.toml"), cfg.to_toml()?)?;
    std::fs::write(
        dir.join("provenance.json"),
        serde_json::to_string_pretty(&json!({
            "version": env!("CARGO_PKG_VERSION"),
            "dataset_key": dataset_key,
            "frames": frames,
        }))? + "\n",
    )?;
    Ok(())
}

fn train_one(cfg: &RunConfig, data: &FrameSet, tax: &Taxonomy, key: &str) -> Result<Vec<FoldSummary>> {
    if let Some(b) = cfg.baseline_config() {
        let r = run_baseline(data, tax, &b, Some(&cfg.out))?;
        write_run_files(&cfg.out, cfg, key, data.len())?;
        println!("{}", render::fold_table(&r.folds));
        println!("{}", render::aggregate_tables(&r.mean));
        return Ok(r.folds);
    }
    let tc = cfg.train_config()?;
    let r = run_experiment(data, tax, &tc, Some(&cfg.out))?;
    write_run_files(&cfg.out, cfg, key, data.len())?;
    println!("{}", render::fold_table(&r.folds));
    println!("{}", render::aggregate_tables(&r.mean));
    Ok(r.folds)
}

/// Expands `a,b,...,z` using the step between the two values before `...`.
fn parse_sweep(text: &str) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::new();
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let mut i = 0;
    while i < parts.len() {
        if parts[i] == "..." {
            let (Some(&b), Some(end)) = (out.last(), parts.get(i + 1)) else {
                bail!("`...` needs two values before it and one after");
            };
            if out.len() < 2 {
                bail!("`...` needs two values before it");
            }
            let step = b - out[out.len() - 2];
            let end: f64 = end.parse().with_context(|| format!("bad λ value '{end}'"))?;
            if step <= 0.0 {
                bail!("λ sweep must increase");
            }
            let mut n = 1;
            while b + step * (n as f64) < end - 1e-9 {
                // rounding keeps 0.1-steps printable
                out.push(((b + step * n as f64) * 1e9).round() / 1e9);
                n += 1;
            }
            i += 1;
            continue;
        }
        out.push(parts[i].parse().with_context(|| format!("bad λ value '{}'", parts[i]))?);
        i += 1;
    }
    if out.len() < 2 {
        bail!("a λ sweep needs at least two values");
    }
    Ok(out)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if cfg.baseline.is_none() {
        cfg.train_config()?;
    }
    let (data, tax, key) = load_frames(&cfg)?;
    println!("{} frames from {} subjects", data.len(), {
        let mut s = data.subjects.clone();
        s.sort_unstable();
        s.dedup();
        s.len()
    });
    let Some(sweep) = &args.lambda_sweep else {
        train_one(&cfg, &data, &tax, &key)?;
        return Ok(());
    };
    if cfg.baseline.is_some() {
        bail!("--lambda-sweep applies to the network, not to baselines");
    }
    let lambdas = parse_sweep(sweep)?;
    let mut runs = Vec::new();
    for &l in &lambdas {
        let sub = RunConfig {
            lambda: Some(l),
            out: cfg.out.join(format!("lambda_{l}")),
            ..cfg.clone()
        };
        println!("== λ = {l}");
        runs.push(train_one(&sub, &data, &tax, &key)?);
    }
    let mut text = format!(
        "λ      posture-acc  diff-vs-{}      t        df        p\n",
        lambdas[0]
    );
    let mean = |f: &[FoldSummary]| f.iter().map(|x| x.posture_acc).sum::<f64>() / f.len() as f64;
    text.push_str(&format!("{:<6} {:>11.3}\n", lambdas[0], mean(&runs[0])));
    for (l, r) in lambdas.iter().zip(&runs).skip(1) {
        match compare_folds(r, &runs[0]) {
            Ok(w) => text.push_str(&format!(
                "{l:<6} {:>11.3} {:>12.3} {:>8.3} {:>9.3} {:>8.4}\n",
                mean(r),
                w.mean_diff,
                w.t,
                w.df,
                w.p
            )),
            Err(e) => text.push_str(&format!("{l:<6} {:>11.3}  test unavailable: {e}\n", mean(r))),
        }
    }
    std::fs::write(cfg.out.join("sweep.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_evaluate(run: &Path, cache: Option<&Path>) -> Result<()> {
    let mut cfg = RunConfig::load(Some(&run.join("run.toml")))
        .with_context(|| format!("{} is not a run directory", run.display()))?;
    if cfg.baseline.is_some() {
        bail!("baseline runs keep no checkpoints; use `pnet report`");
    }
    if let Some(c) = cache {
        cfg.cache = c.to_path_buf();
    }
    let tc = cfg.train_config()?;
    let (data, tax, _) = load_frames(&cfg)?;
    let labels = LabelSpace::new(&data, &tax, tc.granularity);
    let plan = make_plan(tc.scheme, &data.subjects, &data.sequences, tc.seed)?;
    println!("fold  posture  coarse  subject  stored-posture");
    for (i, fold) in plan.folds.iter().enumerate() {
        let dir = run.join(format!("fold_{i:02}"));
        let ck = dir.join("model.pnet");
        if !ck.exists() {
            println!("{i:>4}  missing checkpoint");
            continue;
        }
        let state = load_checkpoint(&ck)?;
        if state.seed != fold_seed(tc.seed, i) {
            bail!("fold {i} checkpoint was trained with a different seed");
        }
        let eval = evaluate_model(&state.params, &data, &fold.test, &labels, tc.scheme != Scheme::Loso, None)?;
        let stored = std::fs::read_to_string(dir.join("summary.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<FoldSummary>(&t).ok())
            .map_or("n/a".to_string(), |s| format!("{:.2}", s.posture_acc));
        println!(
            "{i:>4}  {:>7.2} {:>7.2}  {}  {stored}",
            eval.posture.accuracy(),
            eval.coarse.accuracy(),
            eval.subject.as_ref().map_or("    n/a".into(), |s| format!("{:>7.2}", s.accuracy()))
        );
    }
    Ok(())
}

fn sum_grids(run: &Path, name: &str, folds: usize) -> Result<Option<ConfusionMatrix>> {
    let mut total: Option<ConfusionMatrix> = None;
    for i in 0..folds {
        let path = run.join(format!("fold_{i:02}")).join(name);
        let Ok(text) = std::fs::read_to_string(&path) else {
            return Ok(None);
        };
        let m = ConfusionMatrix::parse_grid(&text)?;
        total = Some(match total {
            None => m,
            Some(mut t) => {
                for (r, row) in m.counts.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        t.counts[r][c] += v;
                    }
                }
                t
            }
        });
    }
    Ok(total)
}

fn cmd_report(run: &Path) -> Result<String> {
    let cfg_text = std::fs::read_to_string(run.join("config.json"))
        .with_context(|| format!("{} has no config.json; not a run directory", run.display()))?;
    let snapshot: serde_json::Value = serde_json::from_str(&cfg_text)?;
    let folds = snapshot["folds"].as_u64().context("config.json lacks a fold count")? as usize;
    let missing: Vec<usize> = (0..folds)
        .filter(|i| !run.join(format!("fold_{i:02}/summary.json")).exists())
        .collect();
    if !missing.is_empty() {
        bail!(
            "run is incomplete: missing fold(s) {}",
            missing.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
        );
    }
    let outline = load_outline(run).context("run has every fold but no report.json")?;
    let mut out = String::new();
    let what = if snapshot.get("baseline").is_some() {
        format!("baseline {}", snapshot["baseline"]["kind"].as_str().unwrap_or("?"))
    } else {
        format!(
            "network, λ = {}, {} epochs",
            snapshot["train"]["lambda"], snapshot["train"]["epochs"]
        )
    };
    out.push_str(&format!("run {}: {what}, {folds} folds, {} samples\n\n", run.display(), snapshot["samples"]));
    out.push_str(&render::aggregate_tables(&outline.mean));
    out.push_str("\nper fold\n");
    out.push_str(&render::fold_table(&outline.folds));
    for i in 0..folds {
        let path = run.join(format!("fold_{i:02}/curves.csv"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            out.push_str(&format!("\ncurves, fold {i}\n"));
            for line in text.lines() {
                out.push_str(&line.replace(',', "\t"));
                out.push('\n');
            }
        }
    }
    for (title, name) in [("3-category", "confusion_coarse.txt"), ("posture", "confusion_posture.txt"), ("subject", "confusion_subject.txt")] {
        if let Some(m) = sum_grids(run, name, folds)? {
            out.push_str(&format!("\n{title} confusion, summed over folds (rows true, columns predicted)\n"));
            out.push_str(&m.to_grid());
        }
    }
    Ok(out)
}

fn cmd_frame_dump(file: &Path, index: usize, config: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let seq = parse_frame_file(file, &cfg.format)?;
    if index >= seq.frames.len() {
        bail!("frame index {index} out of range: {} has {} frames", file.display(), seq.frames.len());
    }
    let raw: Vec<Vec<f32>> = seq.frames.iter().map(|f| f.values.clone()).collect();
    let mut clean = median_filter_3d(&raw, FRAME_HEIGHT, FRAME_WIDTH)?.swap_remove(index);
    normalize_frame(&mut clean);
    let frame = &raw[index];
    let max = frame.iter().copied().fold(0.0f32, f32::max);
    println!(
        "subject {} posture {}, frame {index} of {}; raw max {max}, row 0 at top, column 0 at left",
        seq.subject,
        seq.posture,
        seq.frames.len()
    );
    print!(
        "{}",
        render::side_by_side(
            &render::ascii_grid(frame, max),
            &render::ascii_grid(&clean, 1.0),
            ("raw (scaled to frame max)", "preprocessed (median 3x3x3, normalized)")
        )
    );
    Ok(())
}

fn cmd_augment_stats(seed: u64, draws: usize) -> Result<()> {
    if draws == 0 {
        bail!("need at least one draw");
    }
    let policy = AugmentPolicy::default();
    let spec = SynthSpec::default();
    let tax = Taxonomy::default();
    let mut frame = generate_sequence(&spec, &tax, 1, 1)?.swap_remove(7);
    normalize_frame(&mut frame);
    let mut rng = SeededRng::new(seed);
    let mut counts = vec![0usize; policy.steps.len()];
    for _ in 0..draws {
        let (_, fired) = augment_sample(&frame, FRAME_HEIGHT, FRAME_WIDTH, &policy, &mut rng)?;
        for (c, f) in counts.iter_mut().zip(fired) {
            *c += usize::from(f);
        }
    }
    println!("step                     probability  observed  ({draws} draws, seed {seed})");
    for (s, c) in policy.steps.iter().zip(counts) {
        println!(
            "{:<24} {:>11.3} {:>9.4}",
            format!("{:?}", s.transform),
            s.probability,
            c as f64 / draws as f64
        );
    }
    Ok(())
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(':').with_context(|| format!("expected subject:posture, got '{s}'"))?;
    Ok((a.parse()?, b.parse()?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(c) => cmd_preprocess(&c),
        Command::Train(t) => cmd_train(&t),
        Command::Evaluate { run, cache } => cmd_evaluate(&run, cache.as_deref()),
        Command::Report { run } => {
            print!("{}", cmd_report(&run)?);
            Ok(())
        }
        Command::FrameDump { file, index, config } => cmd_frame_dump(&file, index, config.as_deref()),
        Command::AugmentStats { seed, draws } => cmd_augment_stats(seed, draws),
        Command::Synth {
            out,
            subjects,
            frames,
            seed,
            empty,
        } => {
            let spec = SynthSpec {
                subjects,
                frames_per_sequence: frames,
                seed,
                empty_sequences: empty.iter().map(|s| parse_pair(s)).collect::<Result<_>>()?,
                ..Default::default()
            };
            write_dataset(&out, &spec, &Taxonomy::default(), &default_format())?;
            println!("wrote {subjects} subjects to {}", out.display());
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
