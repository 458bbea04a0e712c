use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lakd::experiment::{
    cmd_ablate, cmd_eval, cmd_train, export_attention, load_splits, DataConfig, EvalRequest, Regime, RunConfig, Sweep,
    TeacherConfig,
};
use lakd::models::load_checkpoint;
use lakd::ndam::NdamConfig;
use lakd::sdm::PartitionPlan;
use lakd::{Error, Result};

#[derive(Parser)]
#[command(name = "lakd", version, about = "Local-block knowledge distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write record.csv, record.json, model.ckpt.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation split.
    Eval(EvalArgs),
    /// Run a detach-location or NDAM sweep.
    Ablate(AblateArgs),
    /// Dump per-unit attention maps as PGM images.
    ExportAttention(ExportArgs),
}

/// Comma-separated indices; empty means none.
#[derive(Clone, Debug)]
struct List(Vec<usize>);

impl std::str::FromStr for List {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(List(Vec::new()));
        }
        s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"))).collect::<std::result::Result<_, _>>().map(List)
    }
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    regime: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    student_depth: Option<usize>,
    #[arg(long)]
    student_width: Option<usize>,
    #[arg(long)]
    teacher_checkpoint: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Comma-separated units after which the gradient is cut.
    #[arg(long)]
    detach_after: Option<List>,
    /// Comma-separated feature-alignment units.
    #[arg(long)]
    align_at: Option<List>,
    #[arg(long)]
    ndam_alpha: Option<f64>,
    #[arg(long)]
    ndam_beta: Option<f64>,
    #[arg(long)]
    ndam_abs: Option<bool>,
    /// Skip the NDAM code path entirely.
    #[arg(long)]
    no_ndam: bool,
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// 300-epoch protocol with crop/flip augmentation.
    #[arg(long)]
    paper_scale: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let regime: Option<Regime> = self.regime.as_deref().map(str::parse).transpose()?;
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::synthetic_default(regime.unwrap_or(Regime::Scratch)),
        };
        if self.paper_scale {
            cfg.apply_paper_scale();
        }
        if let Some(r) = regime {
            cfg.regime = r;
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$($field).+ = v; })*
            };
        }
        set! {
            seed => seed,
            epochs => optim.epochs,
            batch_size => optim.batch_size,
            lr => optim.lr,
            student_depth => student.depth,
            student_width => student.width,
            alpha => weights.alpha,
            beta => weights.beta,
            temperature => weights.temperature,
            augment => data.augment,
        }
        if let Some(p) = &self.teacher_checkpoint {
            let t = cfg.teacher.get_or_insert(TeacherConfig { checkpoint: None, depth: None, width: None });
            t.checkpoint = Some(p.clone());
        }
        if self.detach_after.is_some() || self.align_at.is_some() {
            let plan = cfg.plan.get_or_insert_with(PartitionPlan::end_to_end);
            if let Some(d) = &self.detach_after {
                plan.detach_after = d.0.clone();
            }
            if let Some(a) = &self.align_at {
                plan.align_at = a.0.clone();
                cfg.kd_align = a.0.clone();
            }
        }
        if self.no_ndam {
            cfg.ndam = None;
        } else if self.ndam_alpha.is_some() || self.ndam_beta.is_some() || self.ndam_abs.is_some() {
            let n = cfg.ndam.get_or_insert_with(NdamConfig::default);
            n.alpha_pool = self.ndam_alpha.unwrap_or(n.alpha_pool);
            n.beta_pool = self.ndam_beta.unwrap_or(n.beta_pool);
            n.use_abs = self.ndam_abs.unwrap_or(n.use_abs);
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct DataArgs {
    /// Run configuration whose `data` section selects the dataset; the
    /// synthetic default is used otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl DataArgs {
    fn data(&self) -> Result<DataConfig> {
        Ok(match &self.config {
            Some(p) => RunConfig::load(p)?.data,
            None => RunConfig::synthetic_default(Regime::Scratch).data,
        })
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 128)]
    cka_samples: usize,
    /// Also write attention PGMs here.
    #[arg(long)]
    attention_dir: Option<PathBuf>,
    #[arg(long, default_value = "0")]
    samples: List,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Detach,
    Ndam,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_enum)]
    sweep: SweepKind,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "0")]
    samples: List,
    /// Feature units to dump; all when omitted.
    #[arg(long)]
    units: Option<List>,
    #[arg(long, default_value = "attention")]
    out: PathBuf,
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(a) => {
            let cfg = a.cfg.resolve()?;
            let record = cmd_train(&cfg)?;
            print_json(record.final_row())?;
        }
        Command::Eval(a) => {
            let req = EvalRequest {
                checkpoint: a.checkpoint,
                data: a.data.data()?,
                teacher: a.teacher,
                batch_size: a.batch_size,
                cka_samples: a.cka_samples,
                attention_dir: a.attention_dir,
                attention_samples: a.samples.0,
                seed: 0,
            };
            print_json(&cmd_eval(&req)?)?;
        }
        Command::Ablate(a) => {
            let cfg = a.cfg.resolve()?;
            let sweep = match a.sweep {
                SweepKind::Detach => Sweep::detach_default(),
                SweepKind::Ndam => Sweep::ndam_default(),
            };
            let table = cmd_ablate(&cfg, &sweep)?;
            print!("{}", table.to_csv()?);
            if table.failures() > 0 {
                eprintln!("{} of {} cells failed", table.failures(), table.rows.len());
                return Ok(ExitCode::from(1));
            }
        }
        Command::ExportAttention(a) => {
            let net = load_checkpoint(&a.checkpoint)?;
            let data = a.data.data()?;
            let splits = load_splits(&data)?;
            if net.num_classes() != splits.val.num_classes {
                return Err(Error::ClassMismatch(format!(
                    "checkpoint has {} classes, dataset has {}",
                    net.num_classes(),
                    splits.val.num_classes
                )));
            }
            let units = a.units.map_or_else(|| (1..=net.depth()).collect(), |l| l.0);
            let samples = a.samples.0;
            let files = export_attention(&net, &splits.val, data.normalization, &samples, &units, &a.out)?;
            print_json(&files)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
