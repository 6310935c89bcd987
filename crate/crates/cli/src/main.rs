//! `panoecg` command line. Training and sweep commands print one JSON object
//! per line on stdout; diagnostics go to stderr.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use panoecg::dataset::{generate, load_dataset, subset, write_dataset, GeneratorConfig, MultiViewRecord};
use panoecg::experiments::{
    ablation, anypairs_policy, data_efficiency_sweep, deployment_policy, deviation_study, eval_task, supervision_sweep,
    AblationRow, DeskSetup, DipoleOracle, Protocol,
};
use panoecg::metrics::Task;
use panoecg::model::GeoVtModel;
use panoecg::train::{stage2_devcal, stage3_ofcal, train_stage, EpochLog, Hooks, Stage};
use panoecg::Seed;
use panoecg_service::{AppState, ServiceConfig};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "panoecg", version, about = "Panoramic ECG view synthesis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset from a `key = value` generator config.
    GenDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of subjects assigned to the training split.
        #[arg(long, default_value_t = 0.8)]
        train_ratio: f64,
    },
    /// Run one training stage on the training split.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ckpt_in: Option<PathBuf>,
        #[arg(long)]
        ckpt_out: Option<PathBuf>,
        /// Stage III only: calibrate this subject instead of every test record.
        #[arg(long)]
        record: Option<String>,
        /// Score synthesis on the test split every N epochs; 0 disables.
        #[arg(long, default_value_t = 0)]
        eval_every: usize,
    },
    /// Score a checkpoint, or the dipole oracle, on the test split.
    Evaluate {
        #[arg(long, required_unless_present = "oracle")]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// `rec` or `syn`.
        #[arg(long)]
        task: Task,
        #[arg(long)]
        oracle: bool,
    },
    #[command(subcommand)]
    Sweep(SweepCmd),
    /// Serve the HTTP API.
    Serve {
        /// Checkpoint to offer; its file stem is the checkpoint id. Repeatable.
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `PANOECG_PORT`, then 8080.
        #[arg(long)]
        port: Option<u16>,
        /// Concurrent calibrations. Defaults to `PANOECG_WORKERS`, then the core count.
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Subcommand)]
enum SweepCmd {
    /// Retrain with k supervised views per count.
    Supervision {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "3,6,9,12")]
        counts: Vec<usize>,
    },
    /// Train each architecture row and score both tasks.
    Ablation {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "a,b,c,d")]
        rows: Vec<Row>,
    },
    /// Inject azimuth offsets on one input lead and calibrate them away.
    Deviation {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// Label of the input lead to perturb.
        #[arg(long, default_value = "I")]
        lead: String,
        #[arg(long, value_delimiter = ',', default_value = "0,10,20,30")]
        offsets: Vec<f64>,
        /// Test records to use; 0 means all.
        #[arg(long, default_value_t = 0)]
        records: usize,
    },
    /// Stage II from the checkpoint and from scratch on growing fractions.
    Efficiency {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.5,1")]
        fractions: Vec<f64>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory written by `gen-dataset`.
    #[arg(long)]
    dataset: PathBuf,
    /// JSON run config; missing fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Row {
    A,
    B,
    C,
    D,
}

impl From<Row> for AblationRow {
    fn from(r: Row) -> Self {
        match r {
            Row::A => AblationRow::A,
            Row::B => AblationRow::B,
            Row::C => AblationRow::C,
            Row::D => AblationRow::D,
        }
    }
}

/// Contents of `--config`: the desk setup fields at the top level plus an
/// optional lead protocol.
#[derive(Deserialize, Default)]
#[serde(default)]
struct RunConfig {
    #[serde(flatten)]
    setup: DeskSetup,
    protocol: Option<Protocol>,
}

struct Data {
    setup: DeskSetup,
    protocol: Protocol,
    records: Vec<MultiViewRecord>,
    train: Vec<String>,
    test: Vec<String>,
}

impl Data {
    fn load(args: &DataArgs) -> Result<Self> {
        let run: RunConfig = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        let (manifest, records) =
            load_dataset(&args.dataset).with_context(|| format!("loading {}", args.dataset.display()))?;
        let protocol = run.protocol.unwrap_or_else(Protocol::desk);
        if let Some(r) = records.first() {
            protocol.validate(r.leads.len())?;
        }
        Ok(Data { setup: run.setup, protocol, records, train: manifest.train, test: manifest.test })
    }

    fn train(&self) -> Vec<&MultiViewRecord> {
        subset(&self.records, &self.train)
    }

    fn test(&self) -> Vec<&MultiViewRecord> {
        subset(&self.records, &self.test)
    }
}

fn load_model(path: &Path) -> Result<GeoVtModel<f32>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    GeoVtModel::load(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))
}

fn save_model(model: &GeoVtModel<f32>, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    model.save(&mut w)?;
    w.flush()?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn emit<S: serde::Serialize>(v: &S) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn gen_dataset(config: Option<&Path>, out: &Path, ratio: f64) -> Result<()> {
    let cfg = match config {
        Some(p) => GeneratorConfig::parse(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => GeneratorConfig::default(),
    };
    let records = generate(&cfg)?;
    let m = write_dataset(out, &records, &cfg.hash(), ratio, Seed(cfg.seed))?;
    eprintln!("wrote {} records ({} train, {} test) to {}", m.records.len(), m.train.len(), m.test.len(), out.display());
    Ok(())
}

fn train(
    stage: u8,
    data: &Data,
    ckpt_in: Option<&Path>,
    ckpt_out: Option<&Path>,
    record: Option<&str>,
    eval_every: usize,
) -> Result<()> {
    let setup = &data.setup;
    let init = ckpt_in.map(load_model).transpose()?;
    if stage == 3 {
        let model = init.context("stage 3 needs --ckpt-in")?;
        let test = data.test();
        let chosen: Vec<&MultiViewRecord> = match record {
            Some(id) => test.into_iter().filter(|r| r.subject_id == id).collect(),
            None => test,
        };
        if chosen.is_empty() {
            bail!("no test record matches");
        }
        if ckpt_out.is_some() && chosen.len() != 1 {
            bail!("--ckpt-out in stage 3 needs a single --record");
        }
        for r in &chosen {
            let (calibrated, session) = stage3_ofcal(&model, r, &data.protocol.inputs, &setup.stage3)?;
            emit(&session)?;
            if let Some(p) = ckpt_out {
                save_model(&calibrated, p)?;
            }
        }
        return Ok(());
    }
    let (cfg, policy) = if stage == 1 {
        (&setup.stage1, anypairs_policy(&data.protocol, &setup.stage1))
    } else {
        (&setup.stage2, deployment_policy(&data.protocol, &setup.stage2))
    };
    let mut model = match init {
        Some(m) => m,
        None if stage == 1 => GeoVtModel::new(setup.model.clone(), Seed(setup.seed))?,
        None => bail!("stage 2 needs --ckpt-in"),
    };
    let train = data.train();
    let test = data.test();
    let eval = |m: &GeoVtModel<f32>| {
        eval_task(m, &test, &data.protocol, Task::Synthesis, None, "eval", 0)
            .map(|r| (r.mean_psnr, r.mean_ssim))
            .unwrap_or((f64::NAN, f64::NAN))
    };
    let mut log = |e: &EpochLog| println!("{}", e.to_json_line());
    let mut hooks = Hooks {
        on_epoch: Some(&mut log),
        eval: (eval_every > 0 && !test.is_empty()).then_some(&eval as _),
        eval_every: eval_every.max(1),
    };
    debug_assert!(matches!(cfg.stage, Stage::I | Stage::II));
    if stage == 1 {
        train_stage(&mut model, &train, cfg, &policy, &mut hooks)?;
    } else {
        stage2_devcal(&mut model, &train, cfg, &policy, &mut hooks)?;
    }
    match ckpt_out {
        Some(p) => save_model(&model, p),
        None => Ok(()),
    }
}

fn evaluate(ckpt: Option<&Path>, data: &Data, task: Task, oracle: bool) -> Result<()> {
    let test = data.test();
    let report = if oracle {
        eval_task::<f32, _>(&DipoleOracle, &test, &data.protocol, task, None, "oracle", 0)?
    } else {
        let model = load_model(ckpt.context("--ckpt is required")?)?;
        eval_task(&model, &test, &data.protocol, task, None, "model", 0)?
    };
    emit(&report)
}

fn sweep(cmd: SweepCmd) -> Result<()> {
    match cmd {
        SweepCmd::Supervision { data, counts } => {
            let d = Data::load(&data)?;
            for p in supervision_sweep(&d.setup, &d.train(), &d.test(), &d.protocol, &counts)? {
                emit(&p)?;
            }
        }
        SweepCmd::Ablation { data, rows } => {
            let d = Data::load(&data)?;
            let rows: Vec<AblationRow> = rows.into_iter().map(Into::into).collect();
            for r in ablation(&d.setup, &d.train(), &d.test(), &d.protocol, &rows)? {
                emit(&r)?;
            }
        }
        SweepCmd::Deviation { data, ckpt, lead, offsets, records } => {
            let d = Data::load(&data)?;
            let model = load_model(&ckpt)?;
            let mut test = d.test();
            if records > 0 {
                test.truncate(records);
            }
            let first = test.first().context("empty test split")?;
            let idx = first.lead_index(&lead).with_context(|| format!("no lead labelled {lead}"))?;
            for p in deviation_study(&model, &test, &d.protocol, idx, &offsets, &d.setup.stage3)? {
                emit(&p)?;
            }
        }
        SweepCmd::Efficiency { data, ckpt, fractions } => {
            let d = Data::load(&data)?;
            let model = load_model(&ckpt)?;
            for p in data_efficiency_sweep(&d.setup, &model, &d.train(), &d.test(), &d.protocol, &fractions)? {
                emit(&p)?;
            }
        }
    }
    Ok(())
}

fn serve(ckpts: &[PathBuf], data: PathBuf, port: Option<u16>, workers: Option<usize>) -> Result<()> {
    let mut models = Vec::new();
    for p in ckpts {
        let id = p.file_stem().context("checkpoint path has no file name")?.to_string_lossy().into_owned();
        models.push((id, load_model(p)?));
    }
    let mut cfg = ServiceConfig::new(data, 8080).with_env().map_err(anyhow::Error::msg)?;
    if let Some(p) = port {
        cfg.port = p;
    }
    if let Some(w) = workers {
        cfg.workers = w.max(1);
    }
    let state = AppState::open(cfg, models)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(panoecg_service::serve(state))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::GenDataset { config, out, train_ratio } => gen_dataset(config.as_deref(), &out, train_ratio),
        Cmd::Train { stage, data, ckpt_in, ckpt_out, record, eval_every } => {
            train(stage, &Data::load(&data)?, ckpt_in.as_deref(), ckpt_out.as_deref(), record.as_deref(), eval_every)
        }
        Cmd::Evaluate { ckpt, data, task, oracle } => evaluate(ckpt.as_deref(), &Data::load(&data)?, task, oracle),
        Cmd::Sweep(cmd) => sweep(cmd),
        Cmd::Serve { ckpt, data, port, workers } => serve(&ckpt, data, port, workers),
    }
}
