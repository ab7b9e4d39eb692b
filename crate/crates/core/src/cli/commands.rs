use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::{parse_synthetic_spec, ChannelMode, DatasetSource, ExperimentConfig};
use crate::client::{run_algorithm1, ArtifactBundle, ClassSplit};
use crate::datasets::{
    load_features, make_synthetic, save_features, split_azsl, Dataset, FileFormat, SplitBundle, SplitOptions,
};
use crate::error::{Error, Result};
use crate::eval::{eval_czsl, eval_gzsl, per_class_top1, predict, Classifier, EvalReport};
use crate::protocol::{self, Channel, InProcessChannel, RemoteTeacher, TcpChannel};
use crate::teacher::{fit_regularizer, train_teacher, Direction, MessageKind, RiskLog, RiskTag, TeacherServer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_PROTOCOL: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Protocol { .. } | Error::Refused(_) => EXIT_PROTOCOL,
        _ => EXIT_RUNTIME,
    }
}

/// Replaces the master seed with `AZSL_SEED` when it is set.
pub fn apply_env_seed(cfg: &mut ExperimentConfig) -> Result<()> {
    if let Ok(v) = std::env::var("AZSL_SEED") {
        cfg.seed = v.trim().parse().map_err(|_| Error::Config {
            line: 0,
            message: format!("AZSL_SEED must be an unsigned integer, got `{v}`"),
        })?;
    }
    Ok(())
}

/// Loads or synthesizes the dataset and resolves the unseen class ids.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Vec<usize>)> {
    match &cfg.dataset {
        DatasetSource::Synthetic(spec) => Ok((make_synthetic(spec, cfg.seeds().data)?, spec.unseen_classes())),
        DatasetSource::File { path, format, unseen } => {
            let ds = load_features(path, *format)?;
            let ids = unseen
                .iter()
                .map(|name| {
                    ds.class_names()
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| Error::Config {
                            line: 0,
                            message: format!("unseen class `{name}` is not in {}", path.display()),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((ds, ids))
        }
    }
}

pub fn make_split(cfg: &ExperimentConfig, ds: &Dataset, unseen: &[usize]) -> Result<SplitBundle> {
    let mut opts = SplitOptions::new(unseen.to_vec(), cfg.teacher_mode(), cfg.seeds().split);
    opts.unseen_train_ratio = cfg.unseen_train_ratio;
    opts.seen_train_ratio = cfg.seen_train_ratio;
    split_azsl(ds, &opts)
}

/// Trains the teacher and fits the regularizer on the server side.
pub fn build_server(cfg: &ExperimentConfig, ds: &Dataset, split: &SplitBundle) -> Result<TeacherServer> {
    let teacher = train_teacher(ds, split, &cfg.teacher_config())?;
    let reg = fit_regularizer(ds, split, cfg.regularizer, cfg.alpha())?;
    Ok(TeacherServer::new(teacher, reg))
}

/// Per-class top-1 of the teacher on the unseen evaluation rows it can
/// label, in percent. `None` for an inductive teacher.
pub fn teacher_unseen_accuracy(server: &TeacherServer, ds: &Dataset, split: &SplitBundle) -> Result<Option<f64>> {
    let t = server.teacher();
    if split.unseen_classes.iter().any(|c| t.column_of(*c).is_none()) {
        return Ok(None);
    }
    let clf = Classifier::new(t.params.clone(), t.class_space.clone())?;
    let (x, labels) = ds.subset(&split.client_eval_unseen);
    let preds = predict(&clf, &x, &t.class_space)?;
    Ok(Some(per_class_top1(&preds, &labels, &split.unseen_classes)?))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub bundle: ArtifactBundle,
    pub czsl: EvalReport,
    pub gzsl: EvalReport,
    /// Only known when the teacher runs in process.
    pub teacher_unseen_accuracy: Option<f64>,
}

fn client_run<C: Channel>(
    channel: C,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split: &SplitBundle,
) -> Result<ArtifactBundle> {
    let mut remote = RemoteTeacher::new(channel);
    let classes = ClassSplit {
        dim_x: ds.dim_x(),
        seen: split.seen_classes.clone(),
        unseen: split.unseen_classes.clone(),
    };
    // The client sees the semantic table only; features are used for
    // evaluation after training.
    run_algorithm1(&mut remote, ds.semantics(), &classes, &cfg.train_config())
}

/// Trains and evaluates without touching the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let (ds, unseen) = load_dataset(cfg)?;
    let split = make_split(cfg, &ds, &unseen)?;
    let (bundle, teacher_acc) = match &cfg.channel {
        ChannelMode::InProcess => {
            let server = Arc::new(build_server(cfg, &ds, &split)?);
            let acc = teacher_unseen_accuracy(&server, &ds, &split)?;
            (client_run(InProcessChannel::new(server), cfg, &ds, &split)?, acc)
        }
        ChannelMode::Tcp(addr) => (client_run(TcpChannel::connect(addr.as_str())?, cfg, &ds, &split)?, None),
    };
    let czsl = eval_czsl(&bundle, &split, &ds)?;
    let gzsl = eval_gzsl(&bundle, &split, &ds)?;
    Ok(RunOutcome {
        bundle,
        czsl,
        gzsl,
        teacher_unseen_accuracy: teacher_acc,
    })
}

/// Runs the experiment and writes artifacts, reports, transcript and the
/// canonical config to the output directory.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let out = run_experiment(cfg)?;
    write_run(cfg, &out, &cfg.output)?;
    Ok(out)
}

pub fn write_run(cfg: &ExperimentConfig, out: &RunOutcome, dir: &Path) -> Result<()> {
    out.bundle.write_to(dir)?;
    fs::write(dir.join("report_czsl.txt"), out.czsl.to_text())?;
    fs::write(dir.join("report_gzsl.txt"), out.gzsl.to_text())?;
    let seeds = cfg.seeds();
    let mut text = cfg.to_canonical();
    let _ = writeln!(
        text,
        "# derived seeds: data={} split={} teacher={} client={} noise={}",
        seeds.data, seeds.split, seeds.teacher, seeds.client, seeds.noise
    );
    fs::write(dir.join("config.azsl"), text)?;
    Ok(())
}

/// Trains the teacher for `cfg` and serves it on `listener`. The server
/// transcript is streamed to `transcript` one JSON line per message.
pub fn serve_on(
    cfg: &ExperimentConfig,
    listener: &TcpListener,
    transcript: Option<&Path>,
    max_connections: Option<usize>,
) -> Result<()> {
    let (ds, unseen) = load_dataset(cfg)?;
    let split = make_split(cfg, &ds, &unseen)?;
    let mut server = build_server(cfg, &ds, &split)?;
    if let Some(path) = transcript {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        server = server.with_sink(Box::new(fs::File::create(path)?));
    }
    protocol::serve(listener, &server, max_connections)
}

/// Binds `endpoint` and serves until terminated.
pub fn cmd_serve(cfg: &ExperimentConfig) -> Result<()> {
    let endpoint = cfg.endpoint.clone().ok_or_else(|| Error::Config {
        line: 0,
        message: "serve needs `endpoint = host:port`".into(),
    })?;
    let listener = TcpListener::bind(&endpoint)?;
    eprintln!("teacher listening on {}", listener.local_addr()?);
    serve_on(cfg, &listener, Some(&cfg.output.join("server_transcript.jsonl")), None)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditSummary {
    pub messages: usize,
    pub kinds: BTreeMap<String, usize>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub low_risk: usize,
    pub mid_risk: usize,
    pub weight_blobs: usize,
}

impl AuditSummary {
    pub fn from_log(log: &RiskLog) -> Self {
        let mut s = AuditSummary {
            messages: log.len(),
            kinds: BTreeMap::new(),
            bytes_up: 0,
            bytes_down: 0,
            low_risk: 0,
            mid_risk: 0,
            weight_blobs: 0,
        };
        for e in log.entries() {
            let name = serde_json::to_value(e.kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            *s.kinds.entry(name).or_default() += 1;
            match e.direction {
                Direction::Up => s.bytes_up += e.bytes,
                Direction::Down => s.bytes_down += e.bytes,
            }
            match e.risk {
                RiskTag::Low => s.low_risk += 1,
                RiskTag::Mid => s.mid_risk += 1,
            }
            if e.kind == MessageKind::WeightBlob {
                s.weight_blobs += 1;
            }
        }
        s
    }

    pub fn is_blackbox_clean(&self) -> bool {
        self.mid_risk == 0 && self.weight_blobs == 0
    }

    pub fn verdict(&self) -> String {
        if self.is_blackbox_clean() {
            "BLACKBOX-CLEAN".to_string()
        } else {
            format!("WHITEBOX ({} mid-risk messages)", self.mid_risk)
        }
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "messages: {}", self.messages);
        for (k, n) in &self.kinds {
            let _ = writeln!(o, "  {k}: {n}");
        }
        let _ = writeln!(o, "bytes_up: {}", self.bytes_up);
        let _ = writeln!(o, "bytes_down: {}", self.bytes_down);
        let _ = writeln!(o, "risk: low={} mid={}", self.low_risk, self.mid_risk);
        let _ = writeln!(o, "{}", self.verdict());
        o
    }
}

pub fn cmd_audit(path: &Path) -> Result<AuditSummary> {
    let text = fs::read_to_string(path)?;
    let log = RiskLog::parse(&text).map_err(|e| Error::Parse {
        row: e.line(),
        message: format!("corrupt transcript {}: {e}", path.display()),
    })?;
    Ok(AuditSummary::from_log(&log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    NoiseDim,
    Alpha,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::NoiseDim => "noise_dim",
            SweepParam::Alpha => "alpha",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "noise_dim" | "noise.dim" => Ok(SweepParam::NoiseDim),
            "alpha" => Ok(SweepParam::Alpha),
            other => Err(format!("cannot sweep `{other}`; use noise_dim or alpha")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub u: f64,
    pub s: f64,
    pub h: f64,
}

/// One full run per value. Cells share the data seed and use run index `i`
/// for fresh client seeds; each writes to its own subdirectory.
pub fn cmd_sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[String]) -> Result<(Vec<SweepRow>, PathBuf)> {
    if values.is_empty() {
        return Err(Error::Config {
            line: 0,
            message: "sweep needs at least one value".into(),
        });
    }
    let mut rows = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let mut cell = cfg.clone();
        cell.run_index = i as u64;
        let bad = |m: String| Error::Config { line: 0, message: m };
        match param {
            SweepParam::NoiseDim => {
                let d: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("noise_dim value `{v}` is not a count")))?;
                if d == 0 {
                    return Err(bad("noise_dim must be >= 1".into()));
                }
                cell.train.noise.dim = d;
            }
            SweepParam::Alpha => {
                let a: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("alpha value `{v}` is not a number")))?;
                if !(a >= 0.0 && a.is_finite()) {
                    return Err(bad(format!("alpha must be >= 0, got {a}")));
                }
                cell.train.alpha = a;
            }
        }
        cell.output = cfg.output.join(format!("sweep-{}-{i}", param.as_str()));
        let out = cmd_run(&cell)?;
        rows.push(SweepRow {
            value: v.trim().to_string(),
            u: out.gzsl.u,
            s: out.gzsl.s.unwrap_or(0.0),
            h: out.gzsl.h.unwrap_or(0.0),
        });
    }
    fs::create_dir_all(&cfg.output)?;
    let path = cfg.output.join(format!("sweep_{}.csv", param.as_str()));
    fs::write(&path, sweep_csv(param, &rows))?;
    Ok((rows, path))
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut o = format!("{},u,s,H\n", param.as_str());
    for r in rows {
        let _ = writeln!(o, "{},{},{},{}", r.value, r.u, r.s, r.h);
    }
    o
}

/// Writes a synthetic dataset described by a spec file. The format follows
/// the output extension.
pub fn cmd_gen_data(spec_path: &Path, out: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(spec_path)?;
    let (spec, seed) = parse_synthetic_spec(&text)?;
    let format = FileFormat::from_path(out).ok_or_else(|| Error::Config {
        line: 0,
        message: format!("output {} must end in .csv or .azb", out.display()),
    })?;
    let ds = make_synthetic(&spec, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_features(&ds, out, format)?;
    Ok(ds)
}
