//! Command-line interface: hierarchy tooling, dataset generation,
//! training, evaluation, gradient checks, sweeps, and exports.
//!
//! Every command that writes artifacts also writes a `config_echo.cfg`
//! into its output directory holding the fully resolved configuration;
//! training-family echoes reload through `--config`. Flags override
//! config-file keys.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::data::{
    generate, generate_nested, load_dataset, save_dataset, NestedSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::hierarchy::{parse_pairs_file, random_hierarchy, validate, HierarchyTree};
use crate::layer::{diag_to_dense, matrix_to_text, HierarchicalLayer, RadiusMode, RadiusSpec};
use crate::model::{Model, ModelVariant};
use crate::train::{
    evaluate, grad_check, metrics_to_csv, radius_sweep, random_tree_ablation, small_check_instance,
    sweep_to_csv, train, SphereUpdate, TrainConfig, GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};

pub const CONFIG_ECHO_FILE: &str = "config_echo.cfg";
pub const PAIRS_FILE: &str = "pairs.txt";

#[derive(Parser)]
#[command(
    name = "hiersphere",
    version,
    about = "Hierarchically connected spherical classification layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared training-run flags. Explicit flags override `--config` keys,
/// which override built-in defaults.
#[derive(Args, Debug)]
struct TrainFlags {
    /// Dataset directory produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Hierarchy pair file; defaults to pairs.txt inside --data.
    #[arg(long)]
    hierarchy: Option<PathBuf>,
    /// Optional config file in the echoed key-value format.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model variant: plain, multitask, hierarchy, manifold, or riemann.
    #[arg(long)]
    variant: Option<String>,
    /// Loss weight of the multitask super-class head.
    #[arg(long)]
    lambda_multitask: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Weight decay on unconstrained tensors.
    #[arg(long)]
    wd: Option<f64>,
    /// Radius decay factor per depth level.
    #[arg(long)]
    gamma: Option<f64>,
    /// Root radius of the decay schedule.
    #[arg(long)]
    r0: Option<f64>,
    /// fixed or learnable.
    #[arg(long)]
    radius_mode: Option<String>,
    /// riemannian or projected updates for unit-norm columns.
    #[arg(long)]
    sphere_update: Option<String>,
    /// Ambient momentum on unit-norm columns.
    #[arg(long)]
    sphere_momentum: bool,
    /// Append a linear 2-d reduction before the last layer.
    #[arg(long)]
    probe_2d: bool,
    /// Hidden widths, comma separated; `none` for a linear model.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        let mut variant_name = cfg.variant.name().to_string();
        let mut lambda = match cfg.variant {
            ModelVariant::Multitask { lambda } => lambda,
            _ => 1.0,
        };
        if let Some(v) = &self.variant {
            variant_name = v.clone();
        }
        if let Some(l) = self.lambda_multitask {
            lambda = l;
        }
        cfg.variant = ModelVariant::parse(&variant_name, lambda)?;

        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr0 = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.wd {
            cfg.weight_decay = v;
        }
        let r0 = self.r0.unwrap_or(cfg.radius.r0);
        let gamma = self.gamma.unwrap_or(cfg.radius.gamma);
        let mode = match &self.radius_mode {
            Some(m) => parse_radius_mode(m)?,
            None => cfg.radius.mode,
        };
        cfg.radius = RadiusSpec::new(r0, gamma, mode)?;
        if let Some(s) = &self.sphere_update {
            cfg.sphere_update = SphereUpdate::parse(s)?;
        }
        if self.sphere_momentum {
            cfg.sphere_momentum = true;
        }
        if self.probe_2d {
            cfg.probe_2d = true;
        }
        if let Some(h) = &self.hidden {
            cfg.hidden = parse_list(h, "hidden")?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load_inputs(&self) -> Result<(crate::data::LabeledDataset, HierarchyTree)> {
        let dataset = load_dataset(&self.data)?;
        let tree_path = self
            .hierarchy
            .clone()
            .unwrap_or_else(|| self.data.join(PAIRS_FILE));
        let tree = parse_pairs_file(&tree_path)?;
        Ok((dataset, tree))
    }
}

fn parse_radius_mode(s: &str) -> Result<RadiusMode> {
    match s {
        "fixed" => Ok(RadiusMode::Fixed),
        "learnable" => Ok(RadiusMode::Learnable),
        other => Err(Error::InvalidConfig(format!("unknown radius mode {other}"))),
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, what: &str) -> Result<Vec<T>> {
    if value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} entry {t:?}")))
        })
        .collect()
}

#[derive(Subcommand)]
enum Command {
    /// Check a hierarchy pair file and print its shape.
    #[command(name = "hierarchy-validate")]
    HierarchyValidate {
        /// Pair file: a count line, then one "child parent" line per edge.
        path: PathBuf,
    },
    /// Generate a random two-level hierarchy as a pair file.
    #[command(name = "hierarchy-random")]
    HierarchyRandom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 36)]
        leaves: usize,
        #[arg(long, default_value_t = 9)]
        supers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a hierarchy's pair file, ancestry matrix, and radius diagonal.
    #[command(name = "hierarchy-export")]
    HierarchyExport {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        r0: f64,
        #[arg(long, default_value_t = 0.8)]
        gamma: f64,
    },
    /// Generate a synthetic hierarchical dataset plus its tree.
    #[command(name = "gen-data")]
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 9)]
        supers: usize,
        #[arg(long, default_value_t = 4)]
        subs: usize,
        #[arg(long, default_value_t = 30)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 16)]
        input_dim: usize,
        #[arg(long, default_value_t = 6.0)]
        super_spread: f64,
        #[arg(long, default_value_t = 1.5)]
        sub_spread: f64,
        #[arg(long, default_value_t = 0.3)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Build a deep tree instead: children per level, e.g. 2,2,2,2.
        /// Ignores --supers, --subs, and the two-level spreads.
        #[arg(long)]
        branching: Option<String>,
        /// Per-level mean spreads for --branching, e.g. 8,4,2,1.
        #[arg(long)]
        spreads: Option<String>,
    },
    /// Train a variant on a generated dataset.
    Train {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train, test, or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value = "riemann")]
        variant: String,
        #[arg(long, default_value_t = 1.0)]
        lambda_multitask: f64,
        #[arg(long, default_value = "fixed")]
        radius_mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check with the 2-d probe attached.
        #[arg(long)]
        probe_2d: bool,
    },
    /// Train once per radius decay factor and tabulate final metrics.
    #[command(name = "sweep-radius")]
    SweepRadius {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated decay factors.
        #[arg(long, default_value = "0.5,0.6,0.7,0.8,0.9,1.0")]
        gammas: String,
        /// Run the settings on scoped threads; results are identical.
        #[arg(long)]
        parallel: bool,
    },
    /// Train on the true tree and on shuffled trees of the same shape.
    #[command(name = "ablate-random-tree")]
    AblateRandomTree {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 1000)]
        tree_seed: u64,
    },
    /// Write per-sample embeddings with leaf and super-class labels.
    #[command(name = "export-embeddings")]
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::HierarchyValidate { path } => hierarchy_validate(&path),
        Command::HierarchyRandom {
            out,
            leaves,
            supers,
            seed,
        } => hierarchy_random(&out, leaves, supers, seed),
        Command::HierarchyExport {
            hierarchy,
            out,
            r0,
            gamma,
        } => hierarchy_export(&hierarchy, &out, r0, gamma),
        Command::GenData {
            out,
            supers,
            subs,
            samples_per_class,
            input_dim,
            super_spread,
            sub_spread,
            noise_sigma,
            train_fraction,
            seed,
            branching,
            spreads,
        } => gen_data(GenDataArgs {
            out,
            supers,
            subs,
            samples_per_class,
            input_dim,
            super_spread,
            sub_spread,
            noise_sigma,
            train_fraction,
            seed,
            branching,
            spreads,
        }),
        Command::Train { flags, out } => run_train(&flags, &out),
        Command::Eval {
            checkpoint,
            data,
            split,
        } => run_eval(&checkpoint, &data, &split),
        Command::Gradcheck {
            variant,
            lambda_multitask,
            radius_mode,
            seed,
            probe_2d,
        } => run_gradcheck(&variant, lambda_multitask, &radius_mode, seed, probe_2d),
        Command::SweepRadius {
            flags,
            out,
            gammas,
            parallel,
        } => run_sweep(&flags, &out, &gammas, parallel),
        Command::AblateRandomTree {
            flags,
            out,
            trials,
            tree_seed,
        } => run_ablation(&flags, &out, trials, tree_seed),
        Command::ExportEmbeddings {
            checkpoint,
            data,
            out,
        } => export_embeddings(&checkpoint, &data, &out),
    }
}

fn hierarchy_validate(path: &Path) -> Result<()> {
    let tree = parse_pairs_file(path)?;
    let report = validate(&tree);
    if !report.is_valid() {
        for v in report.violations() {
            println!("violation: {v}");
        }
        return Err(Error::InvalidTree(format!(
            "{} violations",
            report.violations().len()
        )));
    }
    println!("|P|={} |L|={}", tree.num_classes(), tree.num_leaves());
    Ok(())
}

fn hierarchy_random(out: &Path, leaves: usize, supers: usize, seed: u64) -> Result<()> {
    let tree = random_hierarchy(leaves, supers, seed)?;
    std::fs::create_dir_all(out)?;
    let path = out.join(PAIRS_FILE);
    std::fs::write(&path, tree.to_pairs()?)?;
    println!(
        "wrote {} (|P|={} |L|={})",
        path.display(),
        tree.num_classes(),
        tree.num_leaves()
    );
    Ok(())
}

fn hierarchy_export(hierarchy: &Path, out: &Path, r0: f64, gamma: f64) -> Result<()> {
    let tree = parse_pairs_file(hierarchy)?;
    let layer = HierarchicalLayer::from_tree(&tree)?;
    let spec = RadiusSpec::fixed(r0, gamma)?;
    let diag = spec.diagonal(&tree)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(PAIRS_FILE), tree.to_pairs()?)?;
    std::fs::write(out.join("h.txt"), matrix_to_text(layer.to_dense().view()))?;
    std::fs::write(
        out.join("d.txt"),
        matrix_to_text(diag_to_dense(diag.view()).view()),
    )?;
    println!(
        "wrote pairs.txt, h.txt ({}x{}), d.txt to {}",
        tree.num_classes(),
        tree.num_leaves(),
        out.display()
    );
    Ok(())
}

struct GenDataArgs {
    out: PathBuf,
    supers: usize,
    subs: usize,
    samples_per_class: usize,
    input_dim: usize,
    super_spread: f64,
    sub_spread: f64,
    noise_sigma: f64,
    train_fraction: f64,
    seed: u64,
    branching: Option<String>,
    spreads: Option<String>,
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    if args.branching.is_some() != args.spreads.is_some() {
        return Err(Error::InvalidConfig(
            "--branching and --spreads go together".into(),
        ));
    }
    let (dataset, tree) = match (&args.branching, &args.spreads) {
        (Some(branching), Some(spreads)) => generate_nested(&NestedSpec {
            branching: parse_list(branching, "branching")?,
            spreads: parse_list(spreads, "spreads")?,
            samples_per_class: args.samples_per_class,
            input_dim: args.input_dim,
            noise_sigma: args.noise_sigma,
            train_fraction: args.train_fraction,
            seed: args.seed,
        })?,
        _ => generate(&SyntheticSpec {
            num_supers: args.supers,
            subs_per_super: args.subs,
            samples_per_class: args.samples_per_class,
            input_dim: args.input_dim,
            super_spread: args.super_spread,
            sub_spread: args.sub_spread,
            noise_sigma: args.noise_sigma,
            train_fraction: args.train_fraction,
            seed: args.seed,
        })?,
    };
    std::fs::create_dir_all(&args.out)?;
    save_dataset(&args.out, &dataset)?;
    std::fs::write(args.out.join(PAIRS_FILE), tree.to_pairs()?)?;

    let mut echo = String::from("# command gen-data\n");
    echo.push_str(&format!("samples_per_class {}\n", args.samples_per_class));
    echo.push_str(&format!("input_dim {}\n", args.input_dim));
    echo.push_str(&format!("noise_sigma {}\n", args.noise_sigma));
    echo.push_str(&format!("train_fraction {}\n", args.train_fraction));
    echo.push_str(&format!("seed {}\n", args.seed));
    match (&args.branching, &args.spreads) {
        (Some(b), Some(s)) => {
            echo.push_str(&format!("branching {b}\n"));
            echo.push_str(&format!("spreads {s}\n"));
        }
        _ => {
            echo.push_str(&format!("supers {}\n", args.supers));
            echo.push_str(&format!("subs {}\n", args.subs));
            echo.push_str(&format!("super_spread {}\n", args.super_spread));
            echo.push_str(&format!("sub_spread {}\n", args.sub_spread));
        }
    }
    std::fs::write(args.out.join(CONFIG_ECHO_FILE), echo)?;

    println!(
        "wrote {} samples x {} dims, {} leaf classes (|P|={}), split {}/{} to {}",
        dataset.num_samples(),
        dataset.input_dim(),
        dataset.num_classes(),
        tree.num_classes(),
        dataset.train_idx.len(),
        dataset.test_idx.len(),
        args.out.display()
    );
    Ok(())
}

fn echo_with_context(cfg: &TrainConfig, context: &[(&str, String)]) -> String {
    let mut echo = String::new();
    for (k, v) in context {
        echo.push_str(&format!("# {k} {v}\n"));
    }
    echo.push_str(&cfg.to_text());
    echo
}

fn run_train(flags: &TrainFlags, out: &Path) -> Result<()> {
    let cfg = flags.resolve()?;
    let (dataset, tree) = flags.load_inputs()?;
    std::fs::create_dir_all(out)?;
    let started = Instant::now();
    let result = train(&cfg, &dataset, &tree)?;
    let elapsed = started.elapsed();

    std::fs::write(out.join("metrics.csv"), metrics_to_csv(&result.metrics))?;
    result.model.save_checkpoint(&out.join("checkpoint.txt"))?;
    std::fs::write(
        out.join(CONFIG_ECHO_FILE),
        echo_with_context(&cfg, &[("command", "train".into())]),
    )?;

    let last = result.metrics.last().expect("at least one epoch");
    let summary = format!(
        "variant {}\ntree |P|={} |L|={}\nepochs {}\ntrain_loss {}\ntest_accuracy {}\nsuperclass_accuracy {}\nnorm_drift {}\nelapsed_s {:.2}\n",
        cfg.variant.name(),
        tree.num_classes(),
        tree.num_leaves(),
        cfg.epochs,
        last.train_loss,
        last.test_accuracy,
        last.superclass_accuracy,
        last.norm_drift,
        elapsed.as_secs_f64()
    );
    std::fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!(
        "wrote metrics.csv, checkpoint.txt, summary.txt to {}",
        out.display()
    );
    Ok(())
}

fn split_indices(dataset: &crate::data::LabeledDataset, split: &str) -> Result<Vec<usize>> {
    match split {
        "train" => Ok(dataset.train_idx.clone()),
        "test" => Ok(dataset.test_idx.clone()),
        "all" => Ok((0..dataset.num_samples()).collect()),
        other => Err(Error::InvalidConfig(format!(
            "unknown split {other}, expected train, test, or all"
        ))),
    }
}

fn run_eval(checkpoint: &Path, data: &Path, split: &str) -> Result<()> {
    let model = Model::load_checkpoint(checkpoint)?;
    let dataset = load_dataset(data)?;
    if dataset.num_classes() > model.num_leaves() {
        return Err(Error::LabelOutOfRange {
            label: dataset.num_classes() - 1,
            classes: model.num_leaves(),
        });
    }
    let idx = split_indices(&dataset, split)?;
    let (x, y) = dataset.gather(&idx);
    let eval = evaluate(&model, x.view(), &y)?;
    println!("split {split} ({} samples)", idx.len());
    println!("accuracy {}", eval.accuracy);
    println!("superclass_accuracy {}", eval.superclass_accuracy);
    println!("loss {}", eval.mean_loss);
    Ok(())
}

fn run_gradcheck(
    variant: &str,
    lambda: f64,
    radius_mode: &str,
    seed: u64,
    probe_2d: bool,
) -> Result<()> {
    let variant = ModelVariant::parse(variant, lambda)?;
    let radius = RadiusSpec::new(1.0, 0.6, parse_radius_mode(radius_mode)?)?;
    let (model, x, labels) = small_check_instance(variant, &radius, seed)?;
    let mut model = if probe_2d {
        model.attach_2d_probe(seed.wrapping_add(0x70726f6265))?
    } else {
        model
    };
    let report = grad_check(
        &mut model,
        x.view(),
        &labels,
        GRADCHECK_STEP,
        GRADCHECK_TOLERANCE,
    )?;
    println!("{report}");
    if !report.passed {
        return Err(Error::GradCheckFailed {
            max: report.max_rel_err,
            tolerance: report.tolerance,
        });
    }
    Ok(())
}

fn run_sweep(flags: &TrainFlags, out: &Path, gammas: &str, parallel: bool) -> Result<()> {
    let cfg = flags.resolve()?;
    let (dataset, tree) = flags.load_inputs()?;
    let gammas: Vec<f64> = parse_list(gammas, "gammas")?;
    std::fs::create_dir_all(out)?;
    let points = radius_sweep(&cfg, &dataset, &tree, &gammas, parallel)?;
    std::fs::write(out.join("sweep.csv"), sweep_to_csv(&points))?;
    std::fs::write(
        out.join(CONFIG_ECHO_FILE),
        echo_with_context(
            &cfg,
            &[
                ("command", "sweep-radius".into()),
                (
                    "gammas",
                    gammas
                        .iter()
                        .map(|g| g.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                ),
                ("parallel", u8::from(parallel).to_string()),
            ],
        ),
    )?;
    println!(
        "{:<8} {:<10} {:<12} {:<10}",
        "gamma", "acc", "super_acc", "loss"
    );
    for p in &points {
        println!(
            "{:<8} {:<10.4} {:<12.4} {:<10.4}",
            p.gamma, p.final_accuracy, p.final_superclass_accuracy, p.final_loss
        );
    }
    println!("wrote sweep.csv to {}", out.display());
    Ok(())
}

fn run_ablation(flags: &TrainFlags, out: &Path, trials: usize, tree_seed: u64) -> Result<()> {
    let cfg = flags.resolve()?;
    let (dataset, tree) = flags.load_inputs()?;
    std::fs::create_dir_all(out)?;
    let report = random_tree_ablation(&cfg, &dataset, &tree, trials, tree_seed)?;

    let mut csv = String::from("run,accuracy\n");
    csv.push_str(&format!("true,{}\n", report.true_accuracy));
    for (i, acc) in report.random_accuracies.iter().enumerate() {
        csv.push_str(&format!("random_{i},{acc}\n"));
    }
    std::fs::write(out.join("ablation.csv"), csv)?;
    std::fs::write(
        out.join(CONFIG_ECHO_FILE),
        echo_with_context(
            &cfg,
            &[
                ("command", "ablate-random-tree".into()),
                ("trials", trials.to_string()),
                ("tree_seed", tree_seed.to_string()),
            ],
        ),
    )?;
    println!("true tree accuracy      {}", report.true_accuracy);
    println!("mean random accuracy    {}", report.mean_random_accuracy());
    println!(
        "advantage               {:+}",
        report.true_accuracy - report.mean_random_accuracy()
    );
    println!("wrote ablation.csv to {}", out.display());
    Ok(())
}

fn export_embeddings(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = Model::load_checkpoint(checkpoint)?;
    let dataset = load_dataset(data)?;
    if dataset.num_classes() > model.num_leaves() {
        return Err(Error::LabelOutOfRange {
            label: dataset.num_classes() - 1,
            classes: model.num_leaves(),
        });
    }
    let embeddings = model.extractor.forward(dataset.features.view());
    let k = embeddings.ncols();
    let mut csv = String::from("sample_id,label,superclass");
    for j in 1..=k {
        csv.push_str(&format!(",e{j}"));
    }
    csv.push('\n');
    for (i, row) in embeddings.rows().into_iter().enumerate() {
        let label = dataset.labels[i];
        csv.push_str(&format!("{i},{label},{}", model.super_of_leaf[label]));
        for v in row {
            csv.push_str(&format!(",{v:.16e}"));
        }
        csv.push('\n');
    }
    std::fs::create_dir_all(out)?;
    let path = out.join("embeddings.csv");
    std::fs::write(&path, csv)?;
    println!(
        "wrote {} ({} rows, {} embedding dims)",
        path.display(),
        embeddings.nrows(),
        k
    );
    Ok(())
}
