use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfpf::bench::{bench_loadflow, contingency_workload};
use mfpf::case_io::resolve_case;
use mfpf::config::RunConfig;
use mfpf::data_io::{dataset_csv, read_dataset, write_dataset};
use mfpf::model_io::{read_model, write_model, Checkpoint};
use mfpf::parallel::{generate_dataset_parallel, sweep_parallel};
use mfpf::report;
use mfpf_core::eval::{evaluate, scatter_rows, SweepParam};
use mfpf_core::mfnn::{train, MfnnParams, MfnnSpec, TrainMode};
use mfpf_core::powerflow::{solve_dc, solve_nr, Injections};
use mfpf_core::scenario::{CaseRef, NormStats};
use mfpf_core::{NetworkCase, TopologyVector};

#[derive(Parser)]
#[command(name = "mfpf", version, about = "Multi-fidelity power-flow toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Bundled case (ieee14, ieee118, case14) or a case file path
    #[arg(long)]
    case: Option<String>,
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for data and training
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Method {
    Nr,
    Dc,
}

#[derive(Copy, Clone, ValueEnum)]
enum Param {
    Rho,
    Omega,
}

#[derive(Copy, Clone, ValueEnum)]
enum Which {
    Test,
    Val,
    Train,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one topology with NR or DC
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "nr")]
        method: Method,
        /// Zero-based line indices to take out of service
        #[arg(long, value_delimiter = ',')]
        outage: Vec<usize>,
    },
    /// Generate a labelled scenario dataset
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_low: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Train a surrogate on a dataset
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Score a checkpoint and the DC labels against NR
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Which,
    },
    /// Accuracy sweep over rho or omega
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: Param,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Time NR, DC and the surrogate on contingency scenarios
    Bench {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to time; without it an untrained network of the
        /// configured architecture is timed
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Joint,
    TwoStage,
}

/// Failure with its exit code: 2 for usage errors, 1 for runtime errors.
struct Fail(u8, String);

fn usage(msg: impl Into<String>) -> Fail {
    Fail(2, msg.into())
}

fn runtime(e: impl std::fmt::Display) -> Fail {
    Fail(1, e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Fail> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(v) = &c.case {
        cfg.case = v.clone();
    }
    if let Some(v) = c.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = c.jobs {
        cfg.jobs = v;
    }
    Ok(cfg)
}

fn resolve(cfg: RunConfig) -> Result<RunConfig, Fail> {
    cfg.resolve().map_err(|e| usage(e.to_string()))
}

fn case_of(cfg: &RunConfig) -> Result<NetworkCase, Fail> {
    resolve_case(&cfg.case).map_err(|e| usage(e.to_string()))
}

fn existing(p: &Path, what: &str) -> Result<(), Fail> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", p.display())))
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, Fail> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn echo(cfg: &RunConfig, case: &NetworkCase, extra: &[(&str, String)]) -> String {
    let mut pairs = vec![("case", case.name().to_string()), ("config", cfg.to_json())];
    pairs.extend(extra.iter().cloned());
    report::echo(&pairs)
}

fn run(cmd: Command) -> Result<u8, Fail> {
    match cmd {
        Command::Solve { common, method, outage } => {
            let cfg = resolve(load_config(&common)?)?;
            let case = case_of(&cfg)?;
            let n = case.n_lines();
            if let Some(&bad) = outage.iter().find(|&&i| i >= n) {
                return Err(usage(format!("line {bad} out of range, {} has {n} lines", case.name())));
            }
            let tau = TopologyVector::with_outages(n, &outage);
            let inj = Injections::from_case(&case);
            let sol = match method {
                Method::Nr => solve_nr(&case, &tau, &inj, &cfg.scenario.nr),
                Method::Dc => solve_dc(&case, &tau, &inj),
            }
            .map_err(runtime)?;
            let mut out = String::new();
            let _ = writeln!(out, "# case = {}, outages = {:?}", case.name(), outage);
            let _ = writeln!(
                out,
                "# converged = {}, iterations = {}, max_mismatch = {:.3e}",
                sol.converged, sol.iterations, sol.max_mismatch
            );
            let _ = writeln!(out, "{:>5} {:>5} {:>5} {:>12} {:>12} {:>12} {:>12}", "line", "from", "to", "p_li", "i_li", "v_li", "theta_li");
            for (k, l) in case.lines().iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{k:>5} {:>5} {:>5} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                    l.from_bus, l.to_bus, sol.p_li[k], sol.i_li[k], sol.v_li[k], sol.theta_li[k]
                );
            }
            print!("{out}");
            if common.out.is_some() {
                write(&cfg.out, "solve.txt", &out)?;
            }
            Ok(if sol.converged { 0 } else { 1 })
        }
        Command::GenData { common, n_low, k, rho, omega } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = n_low {
                cfg.scenario.n_low = v;
            }
            if let Some(v) = k {
                cfg.scenario.k = v;
            }
            if let Some(v) = rho {
                cfg.scenario.rho = v;
            }
            if let Some(v) = omega {
                cfg.scenario.omega = v;
            }
            let cfg = resolve(cfg)?;
            let case = case_of(&cfg)?;
            let ds = generate_dataset_parallel(&case, &cfg.scenario, cfg.jobs).map_err(runtime)?;
            let path = cfg.out.join("dataset.mfpf");
            write_dataset(&ds, &path).map_err(runtime)?;
            let csv = dataset_csv(&ds, case.generators().len(), case.loads().len());
            write(&cfg.out, "dataset.csv", &csv)?;
            eprintln!(
                "{} scenarios ({} train, {} with NR labels, {} val, {} test) -> {}",
                ds.scenarios.len(),
                ds.split.train.len(),
                ds.n_high_train(),
                ds.split.val.len(),
                ds.split.test.len(),
                path.display()
            );
            Ok(0)
        }
        Command::Train { common, data, epochs, mode } => {
            existing(&data, "dataset")?;
            let mut cfg = load_config(&common)?;
            if let Some(v) = epochs {
                cfg.train.epochs = v;
            }
            if let Some(m) = mode {
                cfg.train.mode = match m {
                    ModeArg::Joint => TrainMode::Joint,
                    ModeArg::TwoStage => TrainMode::TwoStage,
                };
            }
            let cfg = resolve(cfg)?;
            let ds = read_dataset(&data).map_err(runtime)?;
            let out = train(&ds, &cfg.train).map_err(runtime)?;
            let mut log = report::echo(&[
                ("case", ds.case_ref.name.clone()),
                ("train_config", serde_json::to_string(&cfg.train).expect("config serializes")),
            ]);
            log.push_str("epoch,train_loss,val_mse\n");
            for e in &out.log {
                let _ = writeln!(log, "{},{},{}", e.epoch, e.train_loss, e.val_mse);
            }
            write(&cfg.out, "train_log.csv", &log)?;
            let a = out.model.alphas();
            let path = cfg.out.join("model.mfpf");
            let ck = Checkpoint { model: out.model, train: cfg.train.clone(), best_epoch: out.best_epoch };
            write_model(&ck, &path).map_err(runtime)?;
            eprintln!("best epoch {} alphas {:?} -> {}", ck.best_epoch, a, path.display());
            Ok(0)
        }
        Command::Eval { common, data, model, split } => {
            existing(&data, "dataset")?;
            existing(&model, "model")?;
            let cfg = resolve(load_config(&common)?)?;
            let ds = read_dataset(&data).map_err(runtime)?;
            let ck = read_model(&model).map_err(runtime)?;
            if ck.model.case_ref != ds.case_ref {
                return Err(runtime(format!(
                    "model was trained on {} ({}), dataset is {} ({})",
                    ck.model.case_ref.name, ck.model.case_ref.line_hash, ds.case_ref.name, ds.case_ref.line_hash
                )));
            }
            let (name, idx) = match split {
                Which::Test => ("test", &ds.split.test),
                Which::Val => ("val", &ds.split.val),
                Which::Train => ("train", &ds.split.train),
            };
            let r = evaluate(&ck.model, &ds, idx).map_err(runtime)?;
            let head = report::echo(&[
                ("case", ds.case_ref.name.clone()),
                ("dataset_config", serde_json::to_string(&ds.config).expect("config serializes")),
                ("train_config", serde_json::to_string(&ck.train).expect("config serializes")),
                ("split", name.to_string()),
            ]);
            let text = report::eval_text(&r, &head);
            print!("{text}");
            write(&cfg.out, "eval.txt", &text)?;
            write(&cfg.out, "eval.csv", &report::eval_csv(&r, &head))?;
            let rows = scatter_rows(&ck.model, &ds, idx).map_err(runtime)?;
            write(&cfg.out, "scatter.csv", &report::scatter_csv(&rows, &head))?;
            Ok(0)
        }
        Command::Sweep { common, param, values, reps, epochs } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = epochs {
                cfg.train.epochs = v;
            }
            let cfg = resolve(cfg)?;
            let case = case_of(&cfg)?;
            let (p, default) = match param {
                Param::Rho => (SweepParam::Rho, &cfg.eval.rho_values),
                Param::Omega => (SweepParam::Omega, &cfg.eval.omega_values),
            };
            let values = if values.is_empty() { default.clone() } else { values };
            let reps = reps.unwrap_or(cfg.eval.sweep_reps);
            if reps == 0 || values.is_empty() {
                return Err(usage("sweep needs at least one value and one repetition"));
            }
            let t = sweep_parallel(&case, p, &values, &cfg.scenario, &cfg.train, reps, cfg.jobs);
            let head = echo(&cfg, &case, &[("reps", reps.to_string())]);
            let text = report::sweep_text(&t, &head);
            print!("{text}");
            write(&cfg.out, &format!("sweep_{}.txt", p.name()), &text)?;
            write(&cfg.out, &format!("sweep_{}.csv", p.name()), &report::sweep_csv(&t, &head))?;
            Ok(if t.rows.iter().all(|r| r.report.is_err()) { 1 } else { 0 })
        }
        Command::Bench { common, model, scenarios, reps, k } => {
            if let Some(m) = &model {
                existing(m, "model")?;
            }
            let cfg = resolve(load_config(&common)?)?;
            let case = case_of(&cfg)?;
            let n = scenarios.unwrap_or(cfg.eval.bench_scenarios);
            let reps = reps.unwrap_or(cfg.eval.bench_reps);
            let k = k.unwrap_or(cfg.eval.bench_k);
            let (net, note) = match &model {
                Some(p) => {
                    let ck = read_model(p).map_err(runtime)?;
                    ck.model.check_case(&case).map_err(runtime)?;
                    (ck.model, format!("checkpoint {}", p.display()))
                }
                None => {
                    let spec = MfnnSpec::for_case(&case, cfg.train.hidden_width, cfg.train.hidden_layers).map_err(runtime)?;
                    let x_len = spec.x_len;
                    let y_len = spec.y_len;
                    let params = spec.init(cfg.train.seed);
                    let m = MfnnParams {
                        spec,
                        params,
                        epsilon: mfpf_core::mfnn::EPSILON,
                        norm: NormStats::identity(x_len, y_len),
                        case_ref: CaseRef::of(&case),
                    };
                    (m, "untrained network of the configured architecture (inference cost only)".into())
                }
            };
            let work = contingency_workload(&case, n, k, cfg.scenario.seed).map_err(runtime)?;
            let t = bench_loadflow(&case, &work, Some(&net), reps, &cfg.scenario.nr).map_err(runtime)?;
            let head = echo(&cfg, &case, &[("surrogate", note), ("k", k.to_string())]);
            let text = report::timing_text(&t, &head);
            print!("{text}");
            write(&cfg.out, "timing.txt", &text)?;
            write(&cfg.out, "timing.csv", &report::timing_csv(&t, &head))?;
            Ok(0)
        }
    }
}
