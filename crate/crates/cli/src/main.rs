//! `brainmark`: phantoms, augmentation, training, prediction, Grad-CAM and
//! evaluation from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

mod config;
mod data;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brainmark_core::augment::{augment_dataset, AugmentConfig, PolicyProbabilities};
use brainmark_core::eval::{evaluate, report_to_table, TableFormat};
use brainmark_core::landmarks::{read_landmark_dims, read_landmarks, table1_groups, write_landmarks, Group};
use brainmark_core::synth::{gen_phantom, PhantomSpec};
use brainmark_core::volume::read_volume;
use brainmark_core::LandmarkSet;
use brainmark_nn::checkpoint::read_model;
use brainmark_nn::gradcam::{export_cam_overlay, gradcam};
use brainmark_nn::model::DEFAULT_HOOK;
use brainmark_nn::train::{train, CHECKPOINT};
use brainmark_nn::{CamRequest, Model32, Plane, Sample, TrainState32};
use clap::{Parser, Subcommand};

use crate::config::{list, RunConfig};
use crate::data::{chain_name, load_dir, save_pair};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<brainmark_core::Error> for Failure {
    fn from(e: brainmark_core::Error) -> Self {
        use brainmark_core::Error as E;
        match e {
            E::NonFinite(_) => Failure::Numeric(e.to_string()),
            E::InvalidParameter(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<brainmark_nn::Error> for Failure {
    fn from(e: brainmark_nn::Error) -> Self {
        use brainmark_nn::Error as E;
        match e {
            E::Core(inner) => inner.into(),
            E::NonFinite(_) | E::ZeroMass => Failure::Numeric(e.to_string()),
            E::InvalidConfig(_) | E::HookLayerMissing(_) | E::LandmarkIndex(..) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "brainmark", version, about = "3D landmark detection on synthetic head phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom volumes with known landmarks.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "32,32,32")]
        dims: String,
        #[arg(long, default_value_t = 8)]
        landmarks: usize,
        #[arg(long, default_value = "1,1,1")]
        spacing: String,
    },
    /// Augment every sample of a dataset directory once.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// DA1..DA4 selection probabilities.
        #[arg(long, default_value = "0.2,0.25,0.25,0.3")]
        p: String,
        /// key = value file with augmentation ranges.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model, writing loss.csv and latest.ckpt to OUT after every epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Validation dataset directory.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Continue from OUT/latest.ckpt when it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Predict landmarks for one volume.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a Grad-CAM overlay slice as PNG.
    Gradcam {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        /// 1-based landmark index.
        #[arg(long)]
        landmark: usize,
        #[arg(long, default_value = "axial")]
        plane: Plane,
        /// Slice index along the plane's fixed axis; defaults to the middle.
        #[arg(long)]
        slice: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_HOOK)]
        layer: String,
    },
    /// Compare predicted and ground-truth landmark files with matching names.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "1,1,1")]
        spacing: String,
        /// `table1`, `none` or a JSON file of `{"name", "ids"}` groups.
        #[arg(long, default_value = "none")]
        groups: String,
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

fn parse_list<T: std::str::FromStr, const N: usize>(key: &str, v: &str) -> Result<[T; N], Failure> {
    list(key, v).map_err(Failure::Usage)
}

fn synth(count: usize, out: &Path, seed: u64, dims: &str, k: usize, spacing: &str) -> Result<(), Failure> {
    let spec = PhantomSpec {
        dims: parse_list("dims", dims)?,
        spacing: parse_list("spacing", spacing)?,
        k,
        seed,
        ..PhantomSpec::default()
    };
    fs::create_dir_all(out).map_err(io(out))?;
    for i in 0..count {
        let (v, l) = gen_phantom(&spec, i as u64)?;
        save_pair(out, i, &v, &l)?;
    }
    eprintln!("wrote {count} phantoms to {}", out.display());
    Ok(())
}

fn augment(input: &Path, out: &Path, seed: u64, p: &str, config: Option<&Path>) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(path) => RunConfig::parse(&fs::read_to_string(path).map_err(io(path))?).map_err(Failure::Usage)?.augment,
        None => AugmentConfig::default(),
    };
    cfg.probabilities = PolicyProbabilities::new(parse_list("p", p)?)?;
    let loaded = load_dir(input)?;
    let pairs: Vec<_> = loaded.iter().map(|(_, v, l)| (v.clone(), l.clone())).collect();
    let augmented = augment_dataset(&pairs, &cfg, seed)?;
    fs::create_dir_all(out).map_err(io(out))?;
    for ((i, _, _), a) in loaded.iter().zip(&augmented) {
        save_pair(out, *i, &a.volume, &a.landmarks)?;
        let sidecar = out.join(chain_name(*i));
        let json = serde_json::to_string_pretty(&a.chain).map_err(|e| Failure::Data(e.to_string()))?;
        fs::write(&sidecar, json).map_err(io(&sidecar))?;
    }
    eprintln!("augmented {} samples into {}", augmented.len(), out.display());
    Ok(())
}

fn samples(dir: &Path) -> Result<Vec<Sample>, Failure> {
    Ok(load_dir(dir)?.into_iter().map(|(_, volume, landmarks)| Sample { volume, landmarks }).collect())
}

fn run_train(config: &Path, data: &Path, out: &Path, val: Option<&Path>, resume: bool) -> Result<(), Failure> {
    let cfg = RunConfig::parse(&fs::read_to_string(config).map_err(io(config))?).map_err(Failure::Usage)?;
    let mut train_set = samples(data)?;
    if cfg.augment_training {
        let pairs: Vec<_> = train_set.iter().map(|s| (s.volume.clone(), s.landmarks.clone())).collect();
        let extra = augment_dataset(&pairs, &cfg.augment, cfg.augment_seed)?;
        train_set.extend(extra.into_iter().map(|a| Sample { volume: a.volume, landmarks: a.landmarks }));
    }
    let val_set = match val {
        Some(dir) => samples(dir)?,
        None => Vec::new(),
    };
    let ckpt = out.join(CHECKPOINT);
    let mut state = if resume && ckpt.exists() {
        let s = TrainState32::load(&ckpt)?;
        if s.model.config() != &cfg.model {
            return Err(Failure::Usage(format!("{} was trained with a different configuration", ckpt.display())));
        }
        s
    } else {
        TrainState32::new(cfg.model.clone())?
    };
    while state.epoch < cfg.model.epochs {
        let next = state.epoch + 1;
        train(&mut state, &train_set, &val_set, Some(out), next)?;
        let e = state.log.last().expect("an epoch just finished");
        eprintln!("epoch {:>3}  loss {:.5}  val MAE {:.3} voxels", e.epoch, e.train_loss, e.val_mae_voxels);
    }
    Ok(())
}

fn predict(model: &Path, volume: &Path, out: &Path) -> Result<(), Failure> {
    let m: Model32 = read_model(model)?;
    let v = read_volume(volume)?;
    let (_, points) = m.predict(&v)?;
    write_landmarks(&LandmarkSet::from_points(&points), v.dims(), out)?;
    Ok(())
}

fn run_gradcam(
    model: &Path,
    volume: &Path,
    landmark: usize,
    plane: Plane,
    slice: Option<usize>,
    out: &Path,
    layer: String,
) -> Result<(), Failure> {
    let m: Model32 = read_model(model)?;
    let v = read_volume(volume)?;
    let cam = gradcam(&m, &v, &CamRequest { landmark, layer })?;
    let slice = slice.unwrap_or(v.dims()[plane.axis()] / 2);
    if slice >= v.dims()[plane.axis()] {
        return Err(Failure::Usage(format!("slice {slice} outside dims {:?}", v.dims())));
    }
    export_cam_overlay(&v, &cam, plane, slice, out)?;
    Ok(())
}

fn load_groups(spec: &str) -> Result<Vec<Group>, Failure> {
    match spec {
        "table1" => Ok(table1_groups()),
        "none" => Ok(Vec::new()),
        path => {
            let text = fs::read_to_string(path).map_err(io(Path::new(path)))?;
            serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{path}: {e}")))
        }
    }
}

fn run_eval(pred: &Path, gt: &Path, spacing: &str, groups: &str, format: &str) -> Result<(), Failure> {
    let spacing: [f64; 3] = parse_list("spacing", spacing)?;
    let format: TableFormat = format.parse().map_err(|e: brainmark_core::Error| Failure::Usage(e.to_string()))?;
    let groups = load_groups(groups)?;
    let mut p_sets = Vec::new();
    let mut g_sets = Vec::new();
    for g_path in data::landmark_files(gt)? {
        let name = g_path.file_name().expect("listed files have names");
        let p_path = pred.join(name);
        if !p_path.exists() {
            return Err(Failure::Data(format!("no prediction {} for {}", p_path.display(), g_path.display())));
        }
        let dims = read_landmark_dims(&g_path)?;
        g_sets.push(read_landmarks(&g_path, dims)?);
        p_sets.push(read_landmarks(&p_path, dims)?);
    }
    let report = evaluate(&p_sets, &g_sets, spacing, &groups)?;
    print!("{}", report_to_table(&report, format));
    if report.excluded > 0 {
        eprintln!("{} out-of-bounds landmark pairs excluded", report.excluded);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { count, out, seed, dims, landmarks, spacing } => {
            synth(count, &out, seed, &dims, landmarks, &spacing)
        }
        Command::Augment { input, out, seed, p, config } => augment(&input, &out, seed, &p, config.as_deref()),
        Command::Train { config, data, out, val, resume } => run_train(&config, &data, &out, val.as_deref(), resume),
        Command::Predict { model, volume, out } => predict(&model, &volume, &out),
        Command::Gradcam { model, volume, landmark, plane, slice, out, layer } => {
            run_gradcam(&model, &volume, landmark, plane, slice, &out, layer)
        }
        Command::Eval { pred, gt, spacing, groups, format } => run_eval(&pred, &gt, &spacing, &groups, &format),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
