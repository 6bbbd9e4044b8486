//! Command-line front end. Settings resolve as flags, then the `--config`
//! TOML file, then built-in defaults.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lth_rec::experiments::{self, ExperimentConfig, ImpOptions, Pruner};
use lth_rec::{Backbone, InputFormat, LightGcnConfig};

#[derive(Parser)]
#[command(name = "lth-rec", version, about = "Winning-ticket search for recommender embedding tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Interaction file; omit to use the synthetic planted dataset.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<InputFormat>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// `mf` or `lightgcn`.
    #[arg(long)]
    model: Option<String>,
    /// LightGCN propagation depth.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    embedding_size: Option<usize>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2_weight: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    sampler_seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long, value_enum)]
    pruner: Option<Pruner>,
    #[arg(long)]
    pruning_rate: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Continue from trained values instead of rewinding to the initial table.
    #[arg(long)]
    no_rewind: bool,
    #[arg(long)]
    prune_seed: Option<u64>,
    /// Acknowledge that the run exceeds desk scale.
    #[arg(long)]
    full_scale: bool,
}

impl Overrides {
    fn resolve(&self) -> lth_rec::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_toml_file(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src.clone() {
                    c.$($dst)+ = v;
                }
            };
        }
        set!(output_dir => output_dir);
        set!(format => dataset.format);
        set!(split_seed => dataset.split_seed);
        set!(embedding_size => embedding_size);
        set!(init_seed => init_seed);
        set!(epochs => train.epochs);
        set!(learning_rate => train.learning_rate);
        set!(l2_weight => train.l2_weight);
        set!(batch_size => train.batch_size);
        set!(sampler_seed => train.sampler_seed);
        set!(eval_every => train.eval_every);
        set!(pruner => pruner);
        set!(pruning_rate => prune.pruning_rate);
        set!(iterations => prune.iterations);
        set!(prune_seed => prune.prune_seed);
        if self.input.is_some() {
            c.dataset.path = self.input.clone();
        }
        match self.model.as_deref() {
            None => {}
            Some("mf") => c.model = Backbone::Mf,
            Some("lightgcn") => c.model = Backbone::LightGcn(LightGcnConfig::default()),
            Some(other) => return Err(lth_rec::Error::InvalidConfig(format!("unknown model {other}"))),
        }
        if let Some(k) = self.layers {
            match &mut c.model {
                Backbone::LightGcn(cfg) => *cfg = LightGcnConfig::uniform(k),
                Backbone::Mf => return Err(lth_rec::Error::InvalidConfig("--layers needs --model lightgcn".into())),
            }
        }
        c.prune.rewind &= !self.no_rewind;
        c.full_scale |= self.full_scale;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load or synthesize interactions and write the split manifest.
    Prepare(Overrides),
    /// Train the dense baseline (and the compression baseline with `--pruner lcm`).
    Train(Overrides),
    /// Run the ticket search (IMP, RP or OMP); resumes automatically.
    Imp {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        fresh: bool,
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Retrain every persisted ticket from the initial table and adjudicate.
    RetrainTickets {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Relative epochs-to-best from a retrain summary.
    SpeedReport {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the first rows of a table as a grid with pruned cells blank.
    VizExport {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        num_users: Option<usize>,
        #[arg(long, default_value_t = experiments::DEFAULT_VIZ_ROWS)]
        rows: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Memory and time bounds instantiated for a mask.
    ComplexityReport {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long)]
        adjacency_nnz: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a masked table in CSR form.
    ExportSparse {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> lth_rec::Result<()> {
    match cli.command {
        Command::Prepare(o) => {
            let p = experiments::cmd_prepare(&o.resolve()?)?;
            println!(
                "{} users, {} items, {} train edges",
                p.graph.num_users(),
                p.graph.num_items(),
                p.graph.train_edges().len()
            );
        }
        Command::Train(o) => {
            let r = experiments::cmd_train(&o.resolve()?)?;
            println!(
                "best epoch {}: test recall {:.4} ndcg {:.4} ({})",
                r.outcome.best_epoch,
                r.outcome.test.recall,
                r.outcome.test.ndcg,
                r.dir.display()
            );
            for row in r.lcm {
                println!("lcm F'={}: recall {:.4}", row.compressed_dim, row.recall);
            }
        }
        Command::Imp { overrides, fresh, stop_after } => {
            let r = experiments::cmd_imp(&overrides.resolve()?, ImpOptions { fresh, stop_after })?;
            for row in &r.rows {
                println!("iteration {:>3} sparsity {:.4}", row.iteration, row.measured_sparsity);
            }
            if !r.complete {
                println!("stopped early; rerun to resume");
            }
        }
        Command::RetrainTickets { overrides, threads } => {
            let r = experiments::cmd_retrain_tickets(&overrides.resolve()?, threads)?;
            for row in &r.rows {
                let tag = if row.red_star { " *" } else { "" };
                println!(
                    "iteration {:>3} sparsity {:.4} recall {:.4} best epoch {}{tag}",
                    row.iteration, row.measured_sparsity, row.recall, row.best_epoch
                );
            }
        }
        Command::SpeedReport { summary, out } => {
            experiments::cmd_speed_report(&summary, &out)?;
        }
        Command::VizExport { table, mask, num_users, rows, out } => {
            experiments::cmd_viz_export(&table, mask.as_deref(), num_users, rows, &out)?;
        }
        Command::ComplexityReport { mask, layers, adjacency_nnz, out } => {
            let r = experiments::cmd_complexity_report(&mask, layers, adjacency_nnz, &out)?;
            println!("{}\n{}", r.ticket_memory, r.ticket_mf_time);
        }
        Command::ExportSparse { table, mask, out } => {
            let a = experiments::cmd_export_sparse(&table, &mask, &out)?;
            println!("{} bytes, nnz {}", a.byte_size(), a.matrix.nnz());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
