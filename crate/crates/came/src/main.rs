//! `came` — train a co-trained classifier, synthesize shifted sample sets,
//! fit the accuracy regressor, and predict accuracy on unlabeled test sets.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use came::pipeline::{example_config_toml, ExperimentConfig, Pipeline, PipelineError};

#[derive(Parser)]
#[command(
    name = "came",
    version,
    about = "Automated model evaluation via contrastive accuracy regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration file (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override the configured workdir.
    #[arg(short, long)]
    workdir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, PipelineError> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(workdir) = &self.workdir {
            config.workdir = workdir.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Co-train the model (cached when config and data are unchanged).
    Train(ConfigArgs),
    /// Synthesize the distribution-shifted sample sets to disk.
    Synth(ConfigArgs),
    /// Measure (contrastive, classification) accuracy pairs on the sets.
    Collect(ConfigArgs),
    /// Fit the linear regressor on the collected pairs.
    Fit(ConfigArgs),
    /// Predict accuracy on the configured target sets.
    Predict(ConfigArgs),
    /// Run the full workflow end to end and write the report.
    Evaluate(ConfigArgs),
    /// Check the contrastive/classification risk sandwich bound.
    BoundCheck(ConfigArgs),
    /// Run the confidence-based baseline estimators on the targets.
    Baseline(ConfigArgs),
    /// Print a ready-to-run example configuration.
    ExampleConfig,
}

fn collect_pairs(pipeline: &Pipeline) -> Result<Vec<came::regress::AccuracyPair>, PipelineError> {
    let data = pipeline.load_data()?;
    let model = pipeline.stage_train(&data.train)?;
    let dirs = pipeline.stage_synth(&data.seed)?;
    let hash = pipeline.collect_cache_key(&data);
    pipeline.stage_collect(&model, &dirs, &hash)
}

fn run() -> Result<(), PipelineError> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::ExampleConfig => {
            print!("{}", example_config_toml());
            Ok(())
        }
        Command::Train(args) => {
            let pipeline = Pipeline::new(args.load()?)?;
            let data = pipeline.load_data()?;
            let model = pipeline.stage_train(&data.train)?;
            println!(
                "trained {} ({} parameters, {} epochs) -> {}",
                model.hp.arch,
                model.num_parameters(),
                model.epoch,
                pipeline.checkpoint_path().display()
            );
            Ok(())
        }
        Command::Synth(args) => {
            let pipeline = Pipeline::new(args.load()?)?;
            let data = pipeline.load_data()?;
            let dirs = pipeline.stage_synth(&data.seed)?;
            println!(
                "{} sample sets under {}",
                dirs.len(),
                pipeline.sets_dir().display()
            );
            Ok(())
        }
        Command::Collect(args) => {
            let pipeline = Pipeline::new(args.load()?)?;
            let pairs = collect_pairs(&pipeline)?;
            println!("{} pairs -> {}", pairs.len(), pipeline.pairs_path().display());
            Ok(())
        }
        Command::Fit(args) => {
            let pipeline = Pipeline::new(args.load()?)?;
            let pairs = collect_pairs(&pipeline)?;
            let fit = pipeline.stage_fit(&pairs)?;
            println!(
                "fit ({}): acc_cla = {:.4} * acc_con + {:.4}; r = {:.4}, rho = {:.4}, n = {}",
                fit.method, fit.slope, fit.intercept, fit.pearson_r, fit.spearman_rho, fit.n
            );
            Ok(())
        }
        Command::Predict(args) | Command::Evaluate(args) => {
            let pipeline = Pipeline::new(args.load()?)?;
            let report = pipeline.run_autoeval()?;
            println!(
                "fit on {} pairs: r = {:.4}, rho = {:.4}",
                report.fit_pairs, report.pearson_r, report.spearman_rho
            );
            if let Some(mae) = report.holdout_mae {
                println!("holdout MAE: {mae:.3} points");
            }
            if let Some(mae) = report.sanity_mae {
                println!("sanity-split MAE: {mae:.3} points");
            }
            for row in &report.rows {
                match (row.ground_truth_acc, row.abs_error) {
                    (Some(truth), Some(err)) => println!(
                        "{}: con {:.2}% -> predicted {:.2}% (truth {:.2}%, |err| {:.2})",
                        row.set_id, row.acc_con, row.predicted_acc, truth, err
                    ),
                    _ => println!(
                        "{}: con {:.2}% -> predicted {:.2}% (unlabeled)",
                        row.set_id, row.acc_con, row.predicted_acc
                    ),
                }
            }
            println!(
                "report: {}",
                pipeline.workdir().join("report.json").display()
            );
            Ok(())
        }
        Command::BoundCheck(args) => {
            let pipeline = Pipeline::new(args.load()?)?;
            let report = pipeline.run_bound_check()?;
            println!(
                "L_NCE = {:.4}, L_CE^mu + log(M/K) = {:.4}, bounds [{:.4}, {:.4}], holds = {}",
                report.nce, report.middle, report.lower, report.upper, report.holds
            );
            Ok(())
        }
        Command::Baseline(args) => {
            let pipeline = Pipeline::new(args.load()?)?;
            let rows = pipeline.run_baselines()?;
            for row in &rows {
                match (row.ground_truth_acc, row.abs_error) {
                    (Some(truth), Some(err)) => println!(
                        "{} / {}: {:.2}% (truth {:.2}%, |err| {:.2})",
                        row.target, row.estimator, row.estimate, truth, err
                    ),
                    _ => println!("{} / {}: {:.2}%", row.target, row.estimator, row.estimate),
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
