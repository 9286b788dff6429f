use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mimtrack::harness::{
    bench_csv, bench_scan, evaluate, generate, random_scene, scene_pool, track_sequence, train, verify, BenchConfig,
    RunConfig, SequenceDataset,
};
use mimtrack::head::{read_trajectory, write_trajectory};
use mimtrack::memory::MemoryCorpus;
use mimtrack::model::TrackerModel;
use mimtrack::numerics::ParamStore;
use mimtrack::Result;

#[derive(Parser)]
#[command(name = "mimtrack", version, about = "Single-object tracking with selective state-space scans and retrieval memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        fs::create_dir_all(&self.out)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic sequence (frames as PPM plus groundtruth.txt).
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of sequences; more than one writes `seq_NNN/` subdirectories.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Train on the synthetic pool and write `checkpoint.bin`, `run.json`, `losses.csv`.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Track one sequence and write trajectory, metrics, timing, plots and memory.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sequence directory; a held-out synthetic scene is rendered when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Corpus file to start from instead of an empty memory.
        #[arg(long)]
        memory: Option<PathBuf>,
    },
    /// Score a trajectory file, or a checkpoint over the held-out pool.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "checkpoint", requires = "data")]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time the selective scan over doubling lengths.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [4096, 8192, 16384, 32768])]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        runs: usize,
    },
    /// Check every kernel against its reference; nonzero exit on failure.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<(TrackerModel, ParamStore)> {
    let store = ParamStore::load(checkpoint)?;
    let model = TrackerModel::bind(&cfg.model, &store)?;
    Ok((model, store))
}

fn write_report(out: &Path, report: &mimtrack::harness::MetricReport) -> Result<()> {
    fs::write(out.join("metrics.csv"), report.to_csv())?;
    fs::write(out.join("curves.svg"), report.to_svg())?;
    Ok(())
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Synth { common, count } => {
            let cfg = common.load()?;
            let canvas = cfg.model.canvas;
            if count == 1 {
                generate(&random_scene(cfg.seed, canvas, &cfg.data.scene)?)?.save(&common.out)?;
            } else {
                for (i, seq) in scene_pool(cfg.seed, count, canvas, &cfg.data.scene)?.iter().enumerate() {
                    seq.save(common.out.join(format!("seq_{i:03}")))?;
                }
            }
            println!("wrote {count} sequence(s) to {}", common.out.display());
        }
        Command::Train { common } => {
            let cfg = common.load()?;
            let d = &cfg.data;
            let pool = scene_pool(d.pool_seed, d.train_sequences, cfg.model.canvas, &d.scene)?;
            let outcome = train(&cfg, &pool)?;
            outcome.store.save(common.out.join("checkpoint.bin"))?;
            fs::write(common.out.join("run.json"), cfg.to_json())?;
            let mut losses = String::from("step,loss\n");
            for (i, l) in outcome.losses.iter().enumerate() {
                losses.push_str(&format!("{i},{l}\n"));
            }
            fs::write(common.out.join("losses.csv"), losses)?;
            let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
            println!("trained {} steps, final loss {last:.4}, checksum {}", outcome.losses.len(), outcome.store.checksum());
        }
        Command::Track { common, checkpoint, data, memory } => {
            let cfg = common.load()?;
            let (model, store) = load_model(&cfg, &checkpoint)?;
            let seq = match &data {
                Some(dir) => SequenceDataset::load(dir)?,
                None => generate(&random_scene(cfg.seed, cfg.model.canvas, &cfg.data.scene)?)?,
            };
            let initial = match &memory {
                Some(p) => Some(MemoryCorpus::load(p, cfg.model.capacity)?),
                None => None,
            };
            let out = track_sequence(&model, &store, &seq, initial)?;
            write_trajectory(&common.out.join("trajectory.txt"), &out.state.trajectory)?;
            write_report(&common.out, &out.report)?;
            fs::write(common.out.join("timing.csv"), out.timing_csv())?;
            out.corpus.save(common.out.join("memory.bin"))?;
            let r = &out.report;
            println!(
                "frames {} mean IoU {:.4} P@20 {:.4} success AUC {:.4} memory {}",
                r.frames,
                r.mean_iou,
                r.precision_at_20,
                r.success_auc,
                out.corpus.len()
            );
        }
        Command::Eval { common, trajectory, data, checkpoint } => {
            let cfg = common.load()?;
            if let (Some(traj), Some(dir)) = (&trajectory, &data) {
                let gt = SequenceDataset::load(dir)?.gt;
                let pred = read_trajectory(traj)?;
                if pred.len() != gt.len() || pred.is_empty() {
                    return Err(mimtrack::MimError::Invalid(format!("{} boxes for {} frames", pred.len(), gt.len())));
                }
                // frame 0 holds the given box
                let r = evaluate(&pred[1..], &gt[1..])?;
                write_report(&common.out, &r)?;
                println!("mean IoU {:.4} P@20 {:.4} success AUC {:.4}", r.mean_iou, r.precision_at_20, r.success_auc);
                return Ok(true);
            }
            let checkpoint = checkpoint.ok_or_else(|| mimtrack::MimError::Invalid("eval needs --trajectory or --checkpoint".into()))?;
            let (model, store) = load_model(&cfg, &checkpoint)?;
            let d = &cfg.data;
            let held_out = scene_pool(d.eval_seed, d.eval_sequences, cfg.model.canvas, &d.scene)?;
            let (mut pred, mut gt) = (Vec::new(), Vec::new());
            let mut rows = String::from("scene,mean_iou,precision_at_20,success_auc\n");
            for (i, seq) in held_out.iter().enumerate() {
                let out = track_sequence(&model, &store, seq, None)?;
                let r = &out.report;
                rows.push_str(&format!("{i},{},{},{}\n", r.mean_iou, r.precision_at_20, r.success_auc));
                pred.extend_from_slice(&out.state.trajectory[1..]);
                gt.extend_from_slice(&seq.gt[1..]);
            }
            let r = evaluate(&pred, &gt)?;
            write_report(&common.out, &r)?;
            fs::write(common.out.join("scenes.csv"), rows)?;
            println!(
                "{} scenes, mean IoU {:.4} P@20 {:.4} success AUC {:.4}",
                held_out.len(),
                r.mean_iou,
                r.precision_at_20,
                r.success_auc
            );
        }
        Command::Bench { common, lengths, runs } => {
            let cfg = common.load()?;
            let bench = BenchConfig {
                d_model: cfg.model.d_model,
                d_state: cfg.model.d_state,
                runs,
                seed: cfg.seed,
            };
            let csv = bench_csv(&bench_scan(&lengths, &bench)?);
            fs::write(common.out.join("bench.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Verify { common } => {
            let cfg = common.load()?;
            let report = verify(cfg.seed);
            let lines = report.to_json_lines();
            fs::write(common.out.join("verify.jsonl"), &lines)?;
            print!("{lines}");
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
