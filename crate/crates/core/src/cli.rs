//! Command-line front end. `run` does the work and returns a [`CliError`] that
//! the binary turns into an `ERROR:<code>:` line and an exit status.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bodymodel::project;
use crate::config::RunConfigFile;
use crate::container::{self, encode_f32, Header};
use crate::nnet::{network_gradcheck, NetArch, GRADCHECK_TOLERANCE};
use crate::rotmath::{geodesic_distance, Representation};
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::synthdata::{generate, unobserved_rotations, Dataset};
use crate::trainer::{
    evaluate, hypothesis_seed, smoothed_endpoints, train, visible_reprojection_error, Checkpoint, Predictor,
};
use crate::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    /// The single machine-parsable line printed on failure.
    pub fn line(&self) -> String {
        format!("ERROR:{}:{}", self.code, self.message.replace('\n', " "))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig { .. } | Error::InvalidSchedule(_) => EXIT_CONFIG,
            Error::Io { .. } | Error::Format { .. } => EXIT_IO,
            _ => EXIT_FAILURE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn out_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| Error::io(path, e).into()
}

fn stdout_err(e: std::io::Error) -> CliError {
    Error::io("<stdout>", e).into()
}

#[derive(Debug, Parser)]
#[command(name = "diffpose", version, about = "Conditional diffusion over body pose: data, training, sampling, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train the denoiser and regressor.
    Train(TrainArgs),
    /// Draw pose hypotheses for one dataset sample.
    Sample(SampleArgs),
    /// Min-of-n evaluation on a dataset.
    Eval(EvalArgs),
    /// Compare analytic network gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Print a noise schedule table.
    ScheduleDump(ScheduleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReprArg {
    SixD,
    AxisAngle,
}

impl From<ReprArg> for Representation {
    fn from(r: ReprArg) -> Self {
        match r {
            ReprArg::SixD => Representation::SixD,
            ReprArg::AxisAngle => Representation::AxisAngle,
        }
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_samples: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    representation: Option<ReprArg>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Plot data; defaults to `<out>.csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated hypothesis counts, e.g. "1,5,10,25".
    #[arg(long)]
    n_list: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 144)]
    pose_dim: usize,
    #[arg(long, default_value_t = 72)]
    cond_dim: usize,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    fd_step: f64,
    #[arg(long, default_value_t = 256)]
    n_random: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long = "T", alias = "t", default_value_t = ScheduleConfig::DESK.steps)]
    steps: usize,
    #[arg(long, default_value_t = ScheduleConfig::DESK.beta_start)]
    beta_start: f64,
    #[arg(long, default_value_t = ScheduleConfig::DESK.beta_end)]
    beta_end: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(stdout, "{e}").map_err(stdout_err)?;
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            return Err(CliError::config(first.to_string()));
        }
    };
    match cli.command {
        Command::GenData(a) => gen_data(a, stdout),
        Command::Train(a) => train_cmd(a, stdout),
        Command::Sample(a) => sample_cmd(a, stdout),
        Command::Eval(a) => eval_cmd(a, stdout),
        Command::Gradcheck(a) => gradcheck_cmd(a, stdout),
        Command::ScheduleDump(a) => schedule_dump(a, stdout),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfigFile, CliError> {
    Ok(RunConfigFile::load_or_default(path)?)
}

fn gen_data(a: GenDataArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.dataset.seed = s;
    }
    if let Some(n) = a.n_samples {
        cfg.dataset.n_samples = n;
    }
    let model = cfg.body_model()?;
    cfg.dataset.validate(model.num_joints())?;
    let ds = generate(&cfg.dataset, &model)?;
    ds.save(&a.out)?;
    let st = ds.stats();
    writeln!(
        stdout,
        "samples {}\nambiguous pairs {}\noccluded samples {}\noccluded joint fraction {:.4}",
        st.samples, st.twin_pairs, st.occluded_samples, st.occluded_joint_fraction
    )
    .map_err(stdout_err)
}

fn train_cmd(a: TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(r) = a.representation {
        cfg.train.representation = r.into();
    }
    cfg.train.validate()?;
    let model = cfg.body_model()?;
    let ds = Dataset::load(&a.data)?;
    ds.check_model(&model)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let every = cfg.train.eval_every;
    let mut io_err = None;
    let outcome = train(&cfg.train, &ds, &model, resume, |r| {
        if r.step % every == 0 && io_err.is_none() {
            io_err = writeln!(
                stdout,
                "step {} L_diff {:.6} L_hmr {:.6} L_all {:.6}",
                r.step, r.l_diff, r.hmr.total, r.l_all
            )
            .err();
        }
    })?;
    if let Some(e) = io_err {
        return Err(stdout_err(e));
    }
    outcome.checkpoint.save(&a.out)?;
    if let Some((first, last)) = smoothed_endpoints(&outcome.history, 100, |r| r.l_diff) {
        writeln!(
            stdout,
            "smoothed L_diff initial {first:.6} final {last:.6} reduction {:.1}%",
            100.0 * (1.0 - last / first)
        )
        .map_err(stdout_err)?;
    }
    writeln!(stdout, "checkpoint {} at step {}", a.out.display(), outcome.checkpoint.step).map_err(stdout_err)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisRecord {
    pub hypothesis: usize,
    pub seed: u64,
    pub theta: String,
    pub joints3d: String,
    pub joints2d: String,
    pub vertices: String,
}

fn flat3(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn sample_cmd(a: SampleArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref())?;
    if a.n == 0 {
        return Err(CliError::config("invalid config field `n`: must be positive"));
    }
    let model = cfg.body_model()?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    ds.check_model(&model)?;
    let sample = ds.samples.get(a.index).ok_or_else(|| {
        CliError::config(format!("invalid config field `index`: {} not below {}", a.index, ds.len()))
    })?;
    let p = Predictor::new(&ckpt)?;
    let (beta, cam) = p.shape_and_camera(&sample.z)?;
    let thetas = p.hypotheses(&sample.z, a.seed, a.index, a.n)?;

    let k = model.num_joints();
    let mut records = Vec::with_capacity(a.n);
    let mut csv = String::from("hypothesis,joint,x,y,z\n");
    let mut rots = Vec::with_capacity(a.n);
    let mut reproj = Vec::with_capacity(a.n);
    for (h, theta) in thetas.iter().enumerate() {
        let r = p.repr.decode_pose(theta)?;
        let verts = model.pose(&r, &beta)?.vertices;
        let joints = model.joints3d(&verts)?;
        let j2d: Vec<f64> = project(&joints, &cam).into_iter().flatten().collect();
        for (j, q) in joints.iter().enumerate() {
            let _ = writeln!(csv, "{h},{j},{:.6},{:.6},{:.6}", q.x, q.y, q.z);
        }
        reproj.push(visible_reprojection_error(&joints, &cam, &sample.keypoints2d, &sample.occlusion_mask));
        records.push(HypothesisRecord {
            hypothesis: h,
            seed: hypothesis_seed(a.seed, a.index, h),
            theta: encode_f32(theta),
            joints3d: encode_f32(&flat3(&joints)),
            joints2d: encode_f32(&j2d),
            vertices: encode_f32(&flat3(&verts)),
        });
        rots.push(r);
    }
    let header = Header::new(
        "hypotheses",
        &[
            ("joints", k),
            ("vertices", model.num_vertices()),
            ("pose_dim", p.repr.pose_dim(k)),
        ],
        records.len(),
        serde_json::json!({
            "representation": p.repr,
            "sample_index": a.index,
            "seed": a.seed,
            "checkpoint_step": ckpt.step,
        }),
    );
    container::write(&a.out, &header, &records)?;
    let csv_path = a.csv.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".csv");
        PathBuf::from(s)
    });
    std::fs::write(&csv_path, csv).map_err(out_err(&csv_path))?;

    let hidden: Vec<usize> = (0..k).filter(|j| sample.occlusion_mask[*j] == 0).collect();
    let free: Vec<usize> = unobserved_rotations(&model.parents, &sample.occlusion_mask)
        .into_iter()
        .filter(|j| model.parents.contains(&Some(*j)))
        .collect();
    let mut spread = 0.0f64;
    for &j in &free {
        for x in 0..rots.len() {
            for y in x + 1..rots.len() {
                spread = spread.max(geodesic_distance(&rots[x][j], &rots[y][j]));
            }
        }
    }
    let reproj: Vec<f64> = reproj.into_iter().flatten().collect();
    writeln!(stdout, "hypotheses {}", a.n).map_err(stdout_err)?;
    writeln!(stdout, "hidden joints {hidden:?}").map_err(stdout_err)?;
    writeln!(stdout, "unconstrained rotations {free:?} max pairwise geodesic {spread:.4} rad").map_err(stdout_err)?;
    if !reproj.is_empty() {
        let mean = reproj.iter().sum::<f64>() / reproj.len() as f64;
        let max = reproj.iter().copied().fold(0.0, f64::max);
        writeln!(stdout, "visible reprojection error mean {mean:.5} max {max:.5}").map_err(stdout_err)?;
    }
    Ok(())
}

fn parse_n_list(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::config(format!("invalid config field `n_list`: {e}")))
}

fn eval_cmd(a: EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = &a.n_list {
        cfg.eval.n_list = parse_n_list(s)?;
    }
    if let Some(s) = a.seed {
        cfg.eval.seed = s;
    }
    cfg.eval.validate()?;
    let model = cfg.body_model()?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    let table = evaluate(&ckpt, &ds, &model, &cfg.eval)?;
    let csv = table.to_csv();
    if let Some(path) = &a.out {
        std::fs::write(path, &csv).map_err(out_err(path))?;
    }
    stdout.write_all(csv.as_bytes()).map_err(stdout_err)
}

fn gradcheck_cmd(a: GradcheckArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut arch = NetArch::default_for(a.pose_dim, a.cond_dim);
    if let Some(w) = a.width {
        arch.width = w;
    }
    if let Some(b) = a.blocks {
        arch.blocks = b;
    }
    let report = network_gradcheck(arch, a.batch, a.fd_step, a.n_random, a.seed)?;
    let net_params = crate::nnet::Networks::zeros(arch)?;
    writeln!(
        stdout,
        "denoiser params {}\nchecked {}\nmax rel err {:.3e} at {} ({})",
        net_params.denoiser_param_count(),
        report.checked,
        report.max_rel_err,
        report.worst_index,
        report.worst_layer
    )
    .map_err(stdout_err)?;
    if report.passed() {
        writeln!(stdout, "PASS (< {GRADCHECK_TOLERANCE:e})").map_err(stdout_err)
    } else {
        Err(CliError {
            code: EXIT_FAILURE,
            message: format!("gradcheck failed: {} parameters above tolerance", report.flagged.len()),
        })
    }
}

fn schedule_dump(a: ScheduleArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let s = NoiseSchedule::linear(a.steps, a.beta_start, a.beta_end)?;
    let csv = s.to_csv();
    if let Some(path) = &a.out {
        std::fs::write(path, &csv).map_err(out_err(path))?;
    }
    stdout.write_all(csv.as_bytes()).map_err(stdout_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_ok(args: &[&str]) -> String {
        let mut out = Vec::new();
        run(std::iter::once("diffpose").chain(args.iter().copied()), &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    fn run_err(args: &[&str]) -> CliError {
        let mut out = Vec::new();
        run(std::iter::once("diffpose").chain(args.iter().copied()), &mut out).unwrap_err()
    }

    #[test]
    fn schedule_dump_two_steps() {
        let out = run_ok(&["schedule-dump", "--T", "2", "--beta-start", "0.1", "--beta-end", "0.2"]);
        let rows: Vec<&str> = out.lines().skip(1).collect();
        assert_eq!(rows.len(), 2);
        let ab: Vec<f64> = rows.iter().map(|r| r.split(',').nth(3).unwrap().parse().unwrap()).collect();
        assert!((ab[0] - 0.9).abs() < 1e-12 && (ab[1] - 0.72).abs() < 1e-12);
    }

    #[test]
    fn bad_flags_exit_two() {
        let e = run_err(&["schedule-dump", "--T", "2", "--beta-start", "0.3", "--beta-end", "0.2"]);
        assert_eq!(e.code, EXIT_CONFIG);
        assert!(e.line().starts_with("ERROR:2:"));
        assert_eq!(run_err(&["schedule-dump", "--bogus"]).code, EXIT_CONFIG);
        assert_eq!(run_err(&["eval", "--checkpoint", "x", "--data", "y", "--n-list", "1,a"]).code, EXIT_CONFIG);
    }

    #[test]
    fn missing_data_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ck.json");
        let e = run_err(&[
            "train",
            "--data",
            dir.path().join("missing.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(e.code, EXIT_IO);
        assert!(!out.exists());
    }
}
