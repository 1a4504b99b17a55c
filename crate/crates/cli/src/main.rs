use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hybridpool::checkpoint::checkpoint_dtype;
use hybridpool::checks::{check_diffstride, check_model, check_spectral_pool, CheckOutcome};
use hybridpool::data::DatasetKind;
use hybridpool::metrics::MetricsRow;
use hybridpool::train::{evaluate_checkpoint, load_datasets, train, variant_probe, ProbeReport};
use hybridpool::{Checkpoint, DType, Error, MetricsLog, Result, Scalar, TrainConfig, Variant};

#[derive(Parser)]
#[command(
    name = "hybridpool",
    version,
    about = "Train and check hybrid spectral-pooling / DiffStride ResNets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.csv, best.ckpt and final.ckpt.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on the dataset its configuration names.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides the data directory stored in the checkpoint.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EvalSplit::Val)]
        split: EvalSplit,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the activation shape after every unit of the configured model.
    Shapes {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Write the metrics of a run (metrics CSV or checkpoint) as CSV.
    Export {
        #[arg(long)]
        input: PathBuf,
        /// Standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train every variant with each seed and report mean validation accuracy.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Writes compare.csv with one row per run.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Train,
    Val,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// ResNet-18 on CIFAR, 200 epochs.
    Full,
    /// Two-stage model on the 16x16 synthetic set, 10 epochs.
    Desk,
    /// ResNet-18 on a 5000/1000 CIFAR subset, 20 epochs.
    Probe,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    /// `key = value` file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sets any configuration key; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    stride_inits: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match self.preset {
            Preset::Full => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(Variant::HybridSpectral, 0),
            Preset::Probe => TrainConfig {
                epochs: 20,
                train_subset: 5000,
                val_subset: 1000,
                ..TrainConfig::default()
            },
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            c.apply_text(&text)?;
        }
        if let Some(d) = &self.data_dir {
            c.data_dir = Some(d.clone());
        }
        let flags = [
            ("dataset", self.dataset.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("precision", self.precision.clone()),
            ("variant", self.variant.clone()),
            ("stride_inits", self.stride_inits.clone()),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                c.set(key, &v)?;
            }
        }
        for kv in &self.sets {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
                field: "--set".into(),
                msg: format!("expected KEY=VALUE, got `{kv}`"),
            })?;
            c.set(k.trim(), v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Target::All)]
    target: Target,
    /// Input size `HxW` of the single-layer targets.
    #[arg(long, default_value = "8x8")]
    size: String,
    /// Spectral pooling output size `hxw`.
    #[arg(long, default_value = "4x4")]
    out_size: String,
    #[arg(long, value_delimiter = ',', default_value = "2.2,2.7")]
    strides: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    smoothness: f64,
    /// Model variant of the model target.
    #[arg(long, default_value = "hybrid-spectral")]
    variant: String,
    /// Entries checked per parameter tensor of the model target.
    #[arg(long, default_value_t = 5)]
    per_param: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Target {
    Diffstride,
    SpectralPool,
    Model,
    All,
}

fn parse_size(field: &str, s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config {
        field: field.into(),
        msg: format!("expected HxW, got `{s}`"),
    };
    let (h, w) = s.split_once('x').ok_or_else(bad)?;
    Ok((
        h.trim().parse().map_err(|_| bad())?,
        w.trim().parse().map_err(|_| bad())?,
    ))
}

fn print_row(log: &MetricsLog) {
    let Some(r) = log.rows.last() else { return };
    let strides: Vec<String> = r.strides.iter().map(|s| format!("{s:.4}")).collect();
    println!(
        "epoch {:>3}  lr {:<8} train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}  strides [{}]",
        r.epoch,
        r.lr,
        r.train_loss,
        r.train_acc,
        r.val_loss,
        r.val_acc,
        strides.join(", ")
    );
}

fn run_train<T: Scalar>(config: &TrainConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.into(),
        source: e,
    })?;
    let (tr, va) = load_datasets(config)?;
    println!("# {}", config.to_line());
    println!(
        "train {} images, val {} images, standardization {}",
        tr.len(),
        va.len(),
        tr.stats()
    );
    let start = Instant::now();
    let out = train::<T>(config, &tr, &va, Some(out_dir), &mut print_row)?;
    let last: &MetricsRow = out.log.rows.last().expect("at least one epoch");
    println!(
        "final val acc {:.4}, best val acc {:.4} at epoch {}",
        last.val_acc, out.best_val_acc, out.best_epoch
    );
    println!("wrote {}", out_dir.display());
    eprintln!("elapsed {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn run_eval<T: Scalar>(path: &Path, data_dir: Option<PathBuf>, split: EvalSplit, batch_size: usize) -> Result<()> {
    let ck = Checkpoint::<T>::load(path)?;
    let mut config = ck.train_config()?;
    if data_dir.is_some() {
        config.data_dir = data_dir;
    }
    let (tr, va) = load_datasets(&config)?;
    let data = match split {
        EvalSplit::Train => &tr,
        EvalSplit::Val => &va,
    };
    let (loss, acc) = evaluate_checkpoint(&ck, data, batch_size)?;
    println!("{} images  loss {loss:.6}  accuracy {acc:.6}", data.len());
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let (h, w) = parse_size("size", &args.size)?;
    let mut outcomes: Vec<CheckOutcome> = Vec::new();
    if matches!(args.target, Target::Diffstride | Target::All) {
        let [s_h, s_w] = args.strides[..] else {
            return Err(Error::Config {
                field: "strides".into(),
                msg: "expected two values S_h,S_w".into(),
            });
        };
        outcomes.push(check_diffstride(h, w, s_h, s_w, args.smoothness, args.seed)?);
    }
    if matches!(args.target, Target::SpectralPool | Target::All) {
        let (oh, ow) = parse_size("out_size", &args.out_size)?;
        outcomes.push(check_spectral_pool(h, w, oh, ow, args.seed)?);
    }
    if matches!(args.target, Target::Model | Target::All) {
        outcomes.push(check_model(args.variant.parse()?, args.per_param, args.seed)?);
    }
    let mut ok = true;
    for o in &outcomes {
        print!("{}", o.summary());
        ok &= o.passed();
    }
    Ok(ok)
}

fn export(input: &Path, output: Option<&Path>) -> Result<()> {
    let log = if checkpoint_dtype(input).is_ok() {
        let text = match checkpoint_dtype(input)? {
            DType::F32 => Checkpoint::<f32>::load(input)?.metrics,
            DType::F64 => Checkpoint::<f64>::load(input)?.metrics,
        };
        if text.is_empty() {
            return Err(Error::Data(format!("{} holds no metrics", input.display())));
        }
        MetricsLog::read_csv(text.as_bytes())?
    } else {
        MetricsLog::load(input)?
    };
    match output {
        Some(path) => log.save(path),
        None => log.write_csv(std::io::stdout().lock()),
    }
}

fn compare<T: Scalar>(config: &TrainConfig, seeds: &[u64], out_dir: Option<&Path>) -> Result<()> {
    let (tr, va) = load_datasets(config)?;
    println!("# {}", config.to_line());
    let report = variant_probe::<T>(config, &tr, &va, seeds, &mut |run| {
        println!(
            "{:<18} seed {:<4} val_acc {:.4}",
            run.variant.as_str(),
            run.seed,
            run.val_acc
        );
    })?;
    print!("{}", report.summary());
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
        write_report(&report, &dir.join("compare.csv"))?;
    }
    Ok(())
}

fn write_report(report: &ProbeReport, path: &Path) -> Result<()> {
    let mut text = String::from("variant,seed,val_acc,val_loss\r\n");
    for r in &report.runs {
        text += &format!("{},{},{:.16e},{:.16e}\r\n", r.variant, r.seed, r.val_acc, r.val_loss);
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { config, out_dir } => {
            let c = config.resolve()?;
            match c.precision {
                DType::F32 => run_train::<f32>(&c, &out_dir)?,
                DType::F64 => run_train::<f64>(&c, &out_dir)?,
            }
        }
        Command::Eval {
            checkpoint,
            data_dir,
            split,
            batch_size,
        } => match checkpoint_dtype(&checkpoint)? {
            DType::F32 => run_eval::<f32>(&checkpoint, data_dir, split, batch_size)?,
            DType::F64 => run_eval::<f64>(&checkpoint, data_dir, split, batch_size)?,
        },
        Command::Gradcheck(args) => {
            if !run_gradcheck(&args)? {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Shapes { config, batch } => {
            let c = config.resolve()?;
            println!("# {}", c.to_line());
            for (name, shape) in hybridpool::resnet::forward_shapes(&c.model_config(), batch)? {
                println!("{name:<22} {shape:?}");
            }
        }
        Command::Export { input, output } => export(&input, output.as_deref())?,
        Command::Compare { config, seeds, out_dir } => {
            let c = config.resolve()?;
            if c.dataset != DatasetKind::Synthetic && c.data_dir.is_none() {
                return Err(Error::Config {
                    field: "data_dir".into(),
                    msg: "required for CIFAR datasets".into(),
                });
            }
            match c.precision {
                DType::F32 => compare::<f32>(&c, &seeds, out_dir.as_deref())?,
                DType::F64 => compare::<f64>(&c, &seeds, out_dir.as_deref())?,
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
