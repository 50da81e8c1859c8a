//! The `temponet` command line.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::attention::{Activation, MaskMode, ScaleMode};
use crate::diagnostics::check_all;
use crate::error::{Error, Result};
use crate::model::{EmbeddingMode, ModelKind};
use crate::pipeline::{self, DataSource, RunSpec, IMPROVEMENT_FILE, METRICS_FILE};
use crate::report::HorizonTable;
use crate::train::LossKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "temponet", version, about = "Multivariate time series forecasting with TempoNet and baselines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every model at every horizon and save checkpoints and histories.
    Train(RunArgs),
    /// Score saved checkpoints on the test partition and write tables and figures.
    Eval(EvalArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradArgs),
    /// Time single-window forward passes.
    Bench(BenchArgs),
    /// Rebuild the relative-improvement table from a saved MAE table.
    Report(ReportArgs),
}

/// Run settings. Flags override values from `--config`, which override defaults.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML run spec, e.g. a previous run's manifest.toml.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `synth` or the path of a CSV recording.
    #[arg(long)]
    pub data: Option<String>,
    /// Target column of a CSV recording.
    #[arg(long)]
    pub target: Option<String>,
    /// Comma-separated feature columns of a CSV recording.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// Sampling period of the CSV recording in milliseconds.
    #[arg(long)]
    pub period_ms: Option<f64>,
    #[arg(long)]
    pub synth_len: Option<usize>,
    #[arg(long)]
    pub synth_seed: Option<u64>,
    /// Comma-separated model kinds.
    #[arg(long = "model", value_enum, value_delimiter = ',')]
    pub models: Option<Vec<ModelKind>>,
    /// Comma-separated forecast horizons in steps.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub enc: Option<usize>,
    #[arg(long)]
    pub dec: Option<usize>,
    #[arg(long)]
    pub vanilla_enc: Option<usize>,
    #[arg(long)]
    pub vanilla_dec: Option<usize>,
    #[arg(long)]
    pub temporal_blocks: Option<usize>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub label_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_enum)]
    pub embedding: Option<EmbeddingMode>,
    #[arg(long, value_enum)]
    pub scale_mode: Option<ScaleMode>,
    #[arg(long, value_enum)]
    pub mask_mode: Option<MaskMode>,
    #[arg(long, value_enum)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub moving_avg: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub eval_stride: Option<usize>,
    #[arg(long)]
    pub plot_window: Option<usize>,
    /// Timed forward passes per benchmark.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Untimed forward passes before timing.
    #[arg(long)]
    pub warmup: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Directory holding the checkpoints; defaults to the output directory.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Check only this component.
    #[arg(long)]
    pub component: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Time the checkpoints in this directory instead of fresh models.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// MAE table written by `eval`; defaults to `<out>/metrics.csv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Model every other column is compared against.
    #[arg(long, default_value = "temponet")]
    pub reference: String,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunArgs {
    /// Defaults, then `--config`, then flags; sorted and validated.
    pub fn resolve(self) -> Result<RunSpec> {
        let mut spec = match &self.config {
            Some(path) => RunSpec::load(path)?,
            None => RunSpec::default(),
        };
        set(&mut spec.out, self.out);
        match self.data.as_deref() {
            Some("synth") => {
                if !matches!(spec.data, DataSource::Synth { .. }) {
                    spec.data = DataSource::default();
                }
            }
            Some(path) => {
                spec.data = DataSource::Csv {
                    path: path.into(),
                    schema: Default::default(),
                    period_ms: 1.0,
                }
            }
            None => {}
        }
        match &mut spec.data {
            DataSource::Synth { len, seed, .. } => {
                set(len, self.synth_len);
                set(seed, self.synth_seed);
            }
            DataSource::Csv { schema, period_ms, .. } => {
                set(&mut schema.target, self.target);
                if self.features.is_some() {
                    schema.features = self.features;
                }
                set(period_ms, self.period_ms);
            }
        }
        set(&mut spec.models, self.models);
        set(&mut spec.horizons, self.horizons);
        let m = &mut spec.model;
        set(&mut m.d_model, self.d);
        set(&mut m.heads, self.heads);
        set(&mut m.d_ff, self.d_ff);
        set(&mut m.n_enc, self.enc);
        set(&mut m.n_dec, self.dec);
        set(&mut m.n_temporal_blocks, self.temporal_blocks);
        set(&mut m.lookback, self.lookback);
        set(&mut m.label_len, self.label_len);
        set(&mut m.dropout, self.dropout);
        set(&mut m.embedding_mode, self.embedding);
        set(&mut m.scale_mode, self.scale_mode);
        set(&mut m.mask_mode, self.mask_mode);
        set(&mut m.activation, self.activation);
        set(&mut m.moving_avg, self.moving_avg);
        set(&mut spec.vanilla_enc, self.vanilla_enc);
        set(&mut spec.vanilla_dec, self.vanilla_dec);
        let t = &mut spec.train;
        set(&mut t.learning_rate, self.lr);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.max_epochs, self.epochs);
        set(&mut t.patience, self.patience);
        set(&mut t.seed, self.seed);
        set(&mut t.repetitions, self.repetitions);
        set(&mut t.loss, self.loss);
        if self.max_steps.is_some() {
            t.max_steps = self.max_steps;
        }
        if self.grad_clip.is_some() {
            t.grad_clip = self.grad_clip;
        }
        set(&mut t.val_fraction, self.val_fraction);
        set(&mut spec.split_ratio, self.split);
        set(&mut spec.train_stride, self.stride);
        set(&mut spec.eval_stride, self.eval_stride);
        set(&mut spec.plot_window, self.plot_window);
        set(&mut spec.bench.repeats, self.repeats);
        set(&mut spec.bench.warmup, self.warmup);
        spec.normalize()
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_data() {
        EXIT_DATA
    } else if e.is_numeric() {
        EXIT_NUMERIC
    } else if matches!(e, Error::Config(_)) {
        EXIT_USAGE
    } else {
        EXIT_NUMERIC
    }
}

/// Runs one subcommand, writing human-readable progress to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let spec = args.resolve()?;
            let data = pipeline::prepare(&spec)?;
            for r in pipeline::train_all(&spec, &data)? {
                writeln!(
                    out,
                    "{} h={}: best epoch {}, val MAE {:.6}, {} params, {:.0} ms",
                    r.model, r.horizon, r.best_epoch, r.best_val_mae, r.param_count, r.train_ms
                )?;
            }
            writeln!(out, "wrote {}", spec.out.display())?;
        }
        Command::Eval(args) => {
            let spec = args.run.resolve()?;
            let dir = args.checkpoints.unwrap_or_else(|| spec.out.clone());
            let data = pipeline::prepare(&spec)?;
            let result = pipeline::evaluate_all(&spec, &data, &dir)?;
            pipeline::write_eval(&spec, &result)?;
            for c in &result.report.cells {
                match (&c.failure, c.mae) {
                    (Some(why), _) => writeln!(out, "{} h={}: failed ({why})", c.model, c.horizon)?,
                    (None, Some(mae)) => writeln!(out, "{} h={}: MAE {mae:.4}", c.model, c.horizon)?,
                    (None, None) => {}
                }
            }
            writeln!(out, "wrote {}", spec.out.display())?;
        }
        Command::Gradcheck(args) => {
            let reports = check_all(args.component.as_deref(), args.tol)?;
            let mut worst: Option<(&str, f64)> = None;
            for r in &reports {
                let e = r.report.max_rel_error();
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                writeln!(out, "{:<32} {e:.3e} {verdict}", r.name)?;
                if !r.passed() && worst.is_none_or(|(_, w)| e > w) {
                    worst = Some((r.name, e));
                }
            }
            if let Some((component, max_rel_error)) = worst {
                return Err(Error::GradCheck {
                    component: component.into(),
                    max_rel_error,
                    tol: args.tol,
                });
            }
        }
        Command::Bench(args) => {
            let spec = args.run.resolve()?;
            let data = pipeline::prepare(&spec)?;
            let rows = pipeline::bench_all(&spec, &data, args.checkpoints.as_deref())?;
            for r in &rows {
                writeln!(
                    out,
                    "{} h={}: {:.4} ± {:.4} ms over {} runs after {} warm-up, {} params",
                    r.model, r.horizon, r.mean_ms, r.std_ms, r.repeats, r.warmup, r.param_count
                )?;
            }
            pipeline::write_bench(&spec, &rows)?;
        }
        Command::Report(args) => {
            let metrics = args.metrics.unwrap_or_else(|| args.out.join(METRICS_FILE));
            let table = HorizonTable::load(&metrics)?;
            let imp = table.improvement_over(&args.reference)?;
            std::fs::create_dir_all(&args.out).map_err(|e| Error::file(&args.out, e))?;
            imp.save(args.out.join(IMPROVEMENT_FILE))?;
            for (h, row) in imp.horizons.iter().zip(&imp.values) {
                let cells: Vec<String> = imp
                    .models
                    .iter()
                    .zip(row)
                    .map(|(m, v)| match v {
                        Some(v) => format!("{m} {v:+.1}%"),
                        None => format!("{m} -"),
                    })
                    .collect();
                writeln!(out, "h={h}: {}", cells.join(", "))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("temponet").chain(args.iter().copied()))
    }

    fn spec(args: &[&str]) -> RunSpec {
        match parse(args).unwrap().command {
            Command::Train(a) => a.resolve().unwrap(),
            _ => panic!("not a train command"),
        }
    }

    #[test]
    fn default_horizons_and_flag_overrides() {
        let s = spec(&["train"]);
        assert_eq!(s.horizons, vec![1, 20, 40, 60, 80, 100]);
        let s = spec(&["train", "--horizons", "60,20,20", "--d", "32", "--enc", "1", "--dec", "1", "--lr", "0.001"]);
        assert_eq!(s.horizons, vec![20, 60]);
        assert_eq!((s.model.d_model, s.model.n_enc, s.model.n_dec), (32, 1, 1));
        assert_eq!(s.train.learning_rate, 1e-3);
        let s = spec(&["train", "--model", "temponet,vanilla-transformer,temponet"]);
        assert_eq!(s.models, vec![ModelKind::Temponet, ModelKind::VanillaTransformer]);
    }

    #[test]
    fn config_file_sits_under_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let base = RunSpec {
            horizons: vec![5, 10],
            model: crate::model::ModelConfig { d_model: 16, heads: 4, ..Default::default() },
            ..RunSpec::default()
        };
        std::fs::write(&path, base.to_toml().unwrap()).unwrap();
        let p = path.to_str().unwrap();
        let s = spec(&["train", "--config", p]);
        assert_eq!(s, base);
        let s = spec(&["train", "--config", p, "--d", "32"]);
        assert_eq!((s.model.d_model, s.model.heads, s.horizons.clone()), (32, 4, vec![5, 10]));
    }

    #[test]
    fn csv_data_flags() {
        let s = spec(&["train", "--data", "rec.csv", "--target", "ankle", "--features", "a,b", "--period-ms", "2"]);
        match s.data {
            DataSource::Csv { path, schema, period_ms } => {
                assert_eq!(path, PathBuf::from("rec.csv"));
                assert_eq!(schema.target, "ankle");
                assert_eq!(schema.features, Some(vec!["a".to_string(), "b".to_string()]));
                assert_eq!(period_ms, 2.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn usage_errors() {
        assert!(parse(&["fly"]).is_err());
        assert!(parse(&["train", "--horizons", "x"]).is_err());
        let bad = match parse(&["train", "--horizons", "0"]).unwrap().command {
            Command::Train(a) => a.resolve().unwrap_err(),
            _ => unreachable!(),
        };
        assert_eq!(exit_code(&bad), EXIT_USAGE);
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::file("a.csv", "missing")), EXIT_DATA);
        assert_eq!(exit_code(&Error::Divergence { epoch: 1, step: 2, loss: f64::NAN }), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
    }

    #[test]
    fn gradcheck_filter_and_impossible_tolerance() {
        let cli = parse(&["gradcheck", "--component", "softmax"]).unwrap();
        let mut buf = Vec::new();
        run(cli, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("softmax"));
        let cli = parse(&["gradcheck", "--component", "softmax", "--tol", "1e-12"]).unwrap();
        let err = run(cli, &mut Vec::new()).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_NUMERIC);
    }
}
