//! `dbpim` command-line tool. Failures print one JSON document
//! `{"error": {"kind": ..., "message": ...}}` on stderr and exit nonzero
//! (2 for usage errors, 1 otherwise).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dbpim::compiler::container::listing;
use dbpim::compiler::{compile_layer, read_layer, write_layer, LayerKind};
use dbpim::csd::to_csd;
use dbpim::experiment::run_experiment;
use dbpim::io::config::resolve_output_dir;
use dbpim::io::synth::{generate_synthetic, layer_seed};
use dbpim::io::{ExperimentConfig, Tensor};
use dbpim::metrics::{CostTable, Report};
use dbpim::oracle::mvm_ref;
use dbpim::sim::baseline::run_dense_baseline;
use dbpim::sim::stats::SimStats;
use dbpim::sim::{format_trace, run_layer, SimOptions};
use dbpim::sparsify::{
    block_l2_prune, compute_thresholds, fta_approximate, sparsity_report, FtaWeights, PruneMask, WeightMatrix,
};
use dbpim::tensor::Matrix;
use dbpim::{ArchConfig, Error, Result};

#[derive(Parser)]
#[command(name = "dbpim", version, about = "Dyadic-block sparse PIM compiler and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory; DBPIM_OUT_DIR takes precedence.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the CSD encoding and non-zero digit count of INT8 values.
    Encode {
        #[arg(long = "value", required = true, allow_negative_numbers = true)]
        values: Vec<i8>,
        #[arg(long)]
        json: bool,
    },
    /// Generate the seeded synthetic weights and inputs of a config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Block-L2 pruning of a K x N weight tensor into a mask file.
    Prune {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        sparsity: f64,
        #[arg(long, default_value_t = 8)]
        alpha: usize,
        #[command(flatten)]
        out: OutDir,
    },
    /// Fixed-threshold approximation (pruning first unless a mask is given).
    Fta {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, conflicts_with = "mask")]
        sparsity: f64,
        #[arg(long, default_value_t = 8, conflicts_with = "mask")]
        alpha: usize,
        #[command(flatten)]
        out: OutDir,
    },
    /// Compile approximated weights into a layer container.
    Compile {
        #[arg(long)]
        fta: PathBuf,
        /// Number of input vectors (output pixels) the layer processes.
        #[arg(long)]
        m: usize,
        #[arg(long, value_enum, default_value_t = Kind::Fc)]
        kind: Kind,
        /// Layer id; defaults to the file stem of --fta.
        #[arg(long)]
        id: Option<String>,
        /// Config file whose arch overrides to compile for.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run DB-PIM on a config workload or on one compiled layer.
    Sim {
        #[arg(long, conflicts_with_all = ["layer", "inputs"], required_unless_present = "layer")]
        config: Option<PathBuf>,
        #[arg(long, requires = "inputs")]
        layer: Option<PathBuf>,
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Process all eight input bits of every row pass.
        #[arg(long)]
        no_skip: bool,
        /// Also write a per-row-pass trace.
        #[arg(long)]
        trace: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run the dense bit-serial baseline on a config workload or raw weights.
    Baseline {
        #[arg(long, conflicts_with_all = ["weights", "inputs"], required_unless_present = "weights")]
        config: Option<PathBuf>,
        #[arg(long, requires = "inputs")]
        weights: Option<PathBuf>,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long)]
        no_skip: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Join DB-PIM and baseline stats into a report.
    Report {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        costs: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// List a compiled layer or tensor container.
    Dump {
        file: PathBuf,
        /// Include every macro image cell.
        #[arg(long)]
        cells: bool,
    },
    /// Reference matrix product of inputs and (approximated) weights.
    #[command(hide = true)]
    Oracle {
        #[arg(long, required_unless_present = "fta")]
        weights: Option<PathBuf>,
        #[arg(long, conflicts_with = "weights")]
        fta: Option<PathBuf>,
        #[arg(long)]
        inputs: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fc,
    PwConv,
    StdConv,
}

impl From<Kind> for LayerKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Fc => LayerKind::Fc,
            Kind::PwConv => LayerKind::PwConv,
            Kind::StdConv => LayerKind::StdConv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

fn out_dir(out: &OutDir, configured: Option<&Path>) -> Result<PathBuf> {
    let dir = resolve_output_dir(out.out_dir.as_deref(), configured);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    t.write(path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_weights(path: &Path) -> Result<WeightMatrix> {
    let t = Tensor::read(path)?;
    WeightMatrix::new(t.name.clone(), t.to_i8_matrix()?)
}

fn stem(path: &Path, suffix: &str) -> String {
    let s = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    s.strip_suffix(suffix).map(str::to_string).unwrap_or_else(|| {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "layer".into())
    })
}

fn to_i32_matrix(m: &Matrix<i64>) -> Result<Matrix<i32>> {
    let data = m
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            i32::try_from(v).map_err(|_| Error::AccumulatorOverflow { row: i / m.cols(), col: i % m.cols(), value: v })
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_vec(m.rows(), m.cols(), data)
}

fn stats_name(baseline: bool) -> &'static str {
    if baseline {
        "baseline"
    } else {
        "db"
    }
}

fn write_run(dir: &Path, baseline: bool, stats: &SimStats, outputs: &[(String, Matrix<i32>)]) -> Result<()> {
    let tag = stats_name(baseline);
    for (id, m) in outputs {
        write_tensor(&dir.join(format!("{id}.{tag}.outputs.tc")), &Tensor::from_i32(id.clone(), m))?;
    }
    write_json(&dir.join(format!("{tag}.stats.json")), stats)?;
    println!("cycles {}", stats.cycles.total);
    Ok(())
}

fn run_config(path: &Path, out: &OutDir, baseline: bool, no_skip: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::load(path)?;
    if no_skip {
        cfg.ipu_skip = false;
    }
    let dir = out_dir(out, cfg.output_dir.as_deref())?;
    let run = run_experiment(&cfg, baseline)?;
    let outputs: Vec<_> = run.layers.into_iter().map(|l| (l.shape.id, l.outputs)).collect();
    write_run(&dir, baseline, &run.stats, &outputs)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode { values, json } => {
            for v in values {
                let w = to_csd(v);
                if json {
                    println!("{}", serde_json::json!({ "value": v, "csd": w.to_string(), "nonzero": w.nonzero_count() }));
                } else {
                    println!("{v} {w} nonzero={}", w.nonzero_count());
                }
            }
        }
        Command::Gen { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out_dir(&out, cfg.output_dir.as_deref())?;
            for (i, shape) in cfg.workload.layers.iter().enumerate() {
                let syn = generate_synthetic(shape, &cfg.workload.weights, &cfg.workload.inputs, layer_seed(cfg.seed, i))?;
                write_tensor(&dir.join(format!("{}.weights.tc", shape.id)), &Tensor::from_i8(&shape.id, &syn.weights))?;
                write_tensor(&dir.join(format!("{}.inputs.tc", shape.id)), &Tensor::from_i8(&shape.id, &syn.inputs))?;
            }
        }
        Command::Prune { weights, sparsity, alpha, out } => {
            let w = read_weights(&weights)?;
            let mask = block_l2_prune(&w, alpha, sparsity)?;
            let dir = out_dir(&out, None)?;
            write_json(&dir.join(format!("{}.mask.json", w.layer_id)), &mask)?;
        }
        Command::Fta { weights, mask, sparsity, alpha, out } => {
            let w = read_weights(&weights)?;
            let mask = match mask {
                Some(p) => read_json::<PruneMask>(&p)?,
                None => block_l2_prune(&w, alpha, sparsity)?,
            };
            let th = compute_thresholds(&w, &mask)?;
            let fta = fta_approximate(&w, &mask, &th)?;
            let dir = out_dir(&out, None)?;
            write_json(&dir.join(format!("{}.fta.json", w.layer_id)), &fta)?;
            write_tensor(&dir.join(format!("{}.fta.tc", w.layer_id)), &Tensor::from_i8(&w.layer_id, &fta.data))?;
            write_json(&dir.join(format!("{}.sparsity.json", w.layer_id)), &sparsity_report(&w, &mask, &fta)?)?;
        }
        Command::Compile { fta, m, kind, id, config, out } => {
            let weights: FtaWeights = read_json(&fta)?;
            let (arch, configured) = match &config {
                Some(p) => {
                    let c = ExperimentConfig::load(p)?;
                    (c.arch()?, c.output_dir)
                }
                None => (ArchConfig::default(), None),
            };
            let id = id.unwrap_or_else(|| stem(&fta, ".fta.json"));
            let layer = compile_layer(id.clone(), kind.into(), &weights, m, &arch, vec![])?;
            let dir = out_dir(&out, configured.as_deref())?;
            let path = dir.join(format!("{id}.dbl"));
            write_layer(&path, &layer)?;
            println!("wrote {}", path.display());
        }
        Command::Sim { config, layer, inputs, no_skip, trace, out } => {
            if let Some(c) = config {
                return run_config(&c, &out, false, no_skip);
            }
            let (Some(layer), Some(inputs)) = (layer, inputs) else {
                return Err(Error::InvalidArgument("sim needs --config or --layer with --inputs".into()));
            };
            let layer = read_layer(&layer)?;
            let x = Tensor::read(&inputs)?.to_i8_matrix()?;
            let res = run_layer(&layer, &x, SimOptions { ipu_skip: !no_skip, trace })?;
            let dir = out_dir(&out, None)?;
            if trace {
                write_text(&dir.join(format!("{}.trace.txt", layer.layer_id)), &format_trace(&res.trace))?;
            }
            write_run(&dir, false, &res.stats, &[(layer.layer_id, res.outputs)])?;
        }
        Command::Baseline { config, weights, inputs, no_skip, out } => {
            if let Some(c) = config {
                return run_config(&c, &out, true, no_skip);
            }
            let (Some(weights), Some(inputs)) = (weights, inputs) else {
                return Err(Error::InvalidArgument("baseline needs --config or --weights with --inputs".into()));
            };
            let w = read_weights(&weights)?;
            let x = Tensor::read(&inputs)?.to_i8_matrix()?;
            let opts = SimOptions { ipu_skip: !no_skip, trace: false };
            let res = run_dense_baseline(&w.layer_id, &w.data, &x, &ArchConfig::default(), &[], opts)?;
            let dir = out_dir(&out, None)?;
            write_run(&dir, true, &res.stats, &[(w.layer_id, res.outputs)])?;
        }
        Command::Report { db, baseline, costs, format } => {
            let costs = match costs {
                Some(p) => CostTable::from_json(&std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?)?,
                None => CostTable::default(),
            };
            let report = Report::new(&read_json(&db)?, &read_json(&baseline)?, &costs)?;
            match format {
                Format::Text => print!("{}", report.to_text()),
                Format::Json => println!("{}", report.to_json()?),
                Format::Csv => print!("{}", report.to_csv()),
            }
        }
        Command::Dump { file, cells } => {
            let bytes = std::fs::read(&file).map_err(|e| io_err(&file, e))?;
            if bytes.starts_with(dbpim::compiler::container::MAGIC) {
                print!("{}", listing(&dbpim::compiler::container::decode_layer(&bytes)?, cells));
            } else {
                let t = Tensor::decode(&bytes)?;
                println!("tensor {} {:?} {:?}", t.name, t.dtype(), t.shape);
                let v = t.values_i32();
                let width = t.shape.last().copied().unwrap_or(1).max(1);
                for row in v.chunks(width) {
                    println!("{}", row.iter().map(|x| format!("{x:>6}")).collect::<String>());
                }
            }
        }
        Command::Oracle { weights, fta, inputs, out } => {
            let (name, w) = match (weights, fta) {
                (_, Some(p)) => {
                    let f: FtaWeights = read_json(&p)?;
                    f.validate()?;
                    let w = Matrix::from_fn(f.data.rows(), f.data.cols(), |k, n| {
                        if f.mask.keeps(k, n) { f.data.get(k, n) as i32 } else { 0 }
                    });
                    (stem(&p, ".fta.json"), w)
                }
                (Some(p), None) => {
                    let w = read_weights(&p)?;
                    (w.layer_id.clone(), w.data.map(|v| v as i32))
                }
                (None, None) => return Err(Error::InvalidArgument("oracle needs --weights or --fta".into())),
            };
            let x = Tensor::read(&inputs)?.to_i8_matrix()?.map(|v| v as i32);
            let y = to_i32_matrix(&mvm_ref(&x, &w)?)?;
            let dir = out_dir(&out, None)?;
            write_tensor(&dir.join(format!("{name}.oracle.outputs.tc")), &Tensor::from_i32(name.clone(), &y))?;
        }
    }
    Ok(())
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end().to_string(), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}
