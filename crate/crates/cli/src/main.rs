use std::path::PathBuf;
use std::process::ExitCode;

use cbm_cli::config::{Overrides, Settings};
use cbm_cli::pipeline;
use cbm_cli::synth::{self, SynthConfig};
use cbm_cli::CliError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cbm", version, about = "Concept selection and concept-bottleneck classification over embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every pool concept (discriminability, visual activation) -> score-table.json
    Score(#[command(flatten)] Overrides),
    /// Greedy concept selection per class -> selection.json
    Select(#[command(flatten)] Overrides),
    /// Select, train and evaluate -> selection.json, model.cbm, metrics.json
    Train(#[command(flatten)] Overrides),
    /// Predict classes for the test images (or training images) -> predictions.json
    Predict(#[command(flatten)] Overrides),
    /// Explain one prediction by concept influence -> explanation.json
    Explain {
        #[arg(long)]
        image_id: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Accuracy of a trained model on labeled images -> eval.json
    Eval(#[command(flatten)] Overrides),
    /// Write a synthetic dataset and a config.toml pointing at it
    Synth {
        #[command(flatten)]
        params: SynthConfig,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Score(o) => {
            let path = pipeline::cmd_score(&Settings::resolve(&o)?)?;
            println!("wrote {}", path.display());
        }
        Command::Select(o) => {
            let path = pipeline::cmd_select(&Settings::resolve(&o)?)?;
            println!("wrote {}", path.display());
        }
        Command::Train(o) => {
            let settings = Settings::resolve(&o)?;
            for m in pipeline::cmd_train(&settings)? {
                let test = m.test_accuracy.map(|a| format!(", test accuracy {a:.4}")).unwrap_or_default();
                println!(
                    "shots {}: {} concepts, train accuracy {:.4}{test}, final loss {:.6}",
                    m.shots, m.num_concepts, m.train_accuracy, m.final_loss
                );
            }
            println!("outputs in {}", settings.config.output_dir().display());
        }
        Command::Predict(o) => {
            let path = pipeline::cmd_predict(&Settings::resolve(&o)?)?;
            println!("wrote {}", path.display());
        }
        Command::Explain { image_id, overrides } => {
            let path = pipeline::cmd_explain(&Settings::resolve(&overrides)?, &image_id)?;
            println!("wrote {}", path.display());
        }
        Command::Eval(o) => {
            let report = pipeline::cmd_eval(&Settings::resolve(&o)?)?;
            println!("accuracy {:.4} ({}/{})", report.accuracy, report.correct, report.images);
        }
        Command::Synth { params, out } => {
            let config = synth::write(&params, &out)?;
            println!("wrote {}", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
