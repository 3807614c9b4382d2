use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mldif::data::{ingest, DifDataset, RecodeSpec};
use mldif::dif::{
    lord_test, lr_dif, mh_dif, mlr_dif, DecisionRule, DifDecision, DifMethod, LogisticOptions, LordOptions,
    MultilevelOptions, SignificanceTest,
};
use mldif::glmm::Method;
use mldif::irt::{CalibrationOptions, ItemResponseMatrix};
use mldif::report::{self, Format, PrepareSummary};
use mldif::sim::{run_study, SimConfig};
use mldif::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mldif", version, about = "Differential item functioning for binary survey items")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Output format.
    #[arg(long, default_value = "md", value_parser = parse_format)]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recode a raw survey extract into the canonical dataset format.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        /// Recode specification (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Canonical dataset to write.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit Models 0-3 and print the comparison table.
    Compare {
        /// Canonical dataset (from `prepare`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "laplace", value_parser = parse_method)]
        method: Method,
        #[command(flatten)]
        common: Common,
    },
    /// Run one DIF procedure.
    Dif(DifArgs),
    /// Run a Monte Carlo study.
    Simulate {
        /// Simulation config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write `<stem>.json` and `<stem>.md`.
        #[arg(long)]
        report_stem: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RuleArg {
    Gated,
    Sequential,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TestArg {
    Wald,
    Lr,
}

#[derive(Args, Debug)]
struct DifArgs {
    /// mh, lr, mlr or lord.
    #[arg(value_parser = parse_dif_method)]
    procedure: DifMethod,
    /// Canonical dataset, or the item-response file for `lord`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Integration method for `mlr`.
    #[arg(long, default_value = "laplace", value_parser = parse_method)]
    method: Method,
    /// Include the trait x group interaction in `mlr` (Model 2).
    #[arg(long)]
    interaction: bool,
    /// Decision rule for `lr` and `mlr` with interaction.
    #[arg(long, value_enum, default_value = "gated")]
    rule: RuleArg,
    /// Significance test for `lr`.
    #[arg(long, value_enum, default_value = "wald")]
    test: TestArg,
    /// Group column of the item-response file (`lord`).
    #[arg(long, default_value = "group")]
    group_column: String,
    /// Studied item (`lord`).
    #[arg(long)]
    item: Option<String>,
    /// Comma-separated item set (`lord`); defaults to every item.
    #[arg(long, value_delimiter = ',')]
    items: Vec<String>,
    /// Estimate a common discrimination instead of fixing it at 1 (`lord`).
    #[arg(long)]
    estimate_discrimination: bool,
    #[command(flatten)]
    common: Common,
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_dif_method(s: &str) -> std::result::Result<DifMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.report {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn prepare(input: &Path, config: &Path, dataset: &Path, common: &Common) -> Result<()> {
    let spec = RecodeSpec::from_file(config)?;
    let ds = ingest(input, &spec)?;
    let file = fs::File::create(dataset)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dataset.display())))?;
    ds.write_csv(std::io::BufWriter::new(file))?;
    let summary = PrepareSummary::new(&ds);
    let text = match common.format {
        Format::Markdown => summary.markdown(),
        Format::Json => report::to_json(&summary)?,
        Format::Csv => match &summary.cluster_table {
            Some(t) => report::cluster_table_csv(t)?,
            None => format!("records\n{}\n", summary.records),
        },
    };
    emit(common, &text)
}

fn compare(input: &Path, method: Method, common: &Common) -> Result<()> {
    let ds = DifDataset::read_csv(input)?;
    let r = report::compare_models(&ds, method);
    let text = match common.format {
        Format::Markdown => report::comparison_markdown(&r),
        Format::Csv => report::comparison_csv(&r)?,
        Format::Json => report::to_json(&r)?,
    };
    emit(common, &text)
}

fn dif(a: &DifArgs) -> Result<()> {
    let rule = match a.rule {
        RuleArg::Gated => DecisionRule::Gated,
        RuleArg::Sequential => DecisionRule::Sequential,
    };
    let decision: DifDecision = match a.procedure {
        DifMethod::Lord => {
            let item = a.item.as_deref().ok_or_else(|| Error::Config("lord needs --item".into()))?;
            let all = if a.items.is_empty() {
                ItemResponseMatrix::from_csv(&a.input, &a.group_column, None)?
            } else {
                ItemResponseMatrix::from_csv(&a.input, &a.group_column, Some(&a.items))?
            };
            let set = all.item_names().to_vec();
            let opts = LordOptions {
                alpha: a.alpha,
                calibration: CalibrationOptions {
                    estimate_discrimination: a.estimate_discrimination,
                    ..Default::default()
                },
            };
            lord_test(&all, item, &set, &opts)?
        }
        method => {
            let ds = DifDataset::read_csv(&a.input)?;
            match method {
                DifMethod::Mh => mh_dif(&ds, a.alpha)?,
                DifMethod::Lr => {
                    let test = match a.test {
                        TestArg::Wald => SignificanceTest::Wald,
                        TestArg::Lr => SignificanceTest::LikelihoodRatio,
                    };
                    lr_dif(&ds, &LogisticOptions { alpha: a.alpha, rule, test })?
                }
                _ => mlr_dif(
                    &ds,
                    &MultilevelOptions {
                        alpha: a.alpha,
                        interaction: a.interaction,
                        method: a.method,
                        rule,
                        ..Default::default()
                    },
                )?,
            }
        }
    };
    let text = match a.common.format {
        Format::Markdown => report::decision_markdown(&decision)?,
        Format::Csv => report::decision_csv(&decision)?,
        Format::Json => report::to_json(&decision)?,
    };
    emit(&a.common, &text)
}

fn simulate(config: &Path, seed: Option<u64>, stem: Option<&Path>, common: &Common) -> Result<()> {
    let mut cfg = SimConfig::from_file(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let methods = cfg.methods.clone();
    let r = run_study(&cfg, &methods)?;
    if let Some(stem) = stem {
        write_file(&stem.with_extension("json"), &report::to_json(&r)?)?;
        write_file(&stem.with_extension("md"), &report::sim_markdown(&r))?;
    }
    let text = match common.format {
        Format::Markdown => report::sim_markdown(&r),
        Format::Csv => report::sim_csv(&r)?,
        Format::Json => report::to_json(&r)?,
    };
    emit(common, &text)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare { input, config, output, common } => prepare(input, config, output, common),
        Command::Compare { input, method, common } => compare(input, *method, common),
        Command::Dif(a) => dif(a),
        Command::Simulate { config, seed, report_stem, common } => simulate(config, *seed, report_stem.as_deref(), common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
