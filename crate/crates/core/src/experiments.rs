//! Planted-rank regression tasks and the end-to-end experiment harness.
//!
//! A teacher network shares the student's frozen weights and carries, per
//! head, a delta of known rank. The student starts from zero deltas and has
//! to discover how much rank each head needs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::LoraAdapter;
use crate::analysis::{capacity_term, rank_statistics, RankStatistics};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifest::{unix_now, RunManifest};
use crate::model::{task_loss, ModelConfig, ModelState};
use crate::rng::{self, STREAM_INPUTS, STREAM_NOISE, STREAM_PLANTED};
use crate::trainer::{stability_monitor, Mode, StepRecord, Trainer};

/// Rank-trajectory CSV header.
pub const CSV_HEADER: &str = "step,layer,head,alpha,effective_rank";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RANKS_FILE: &str = "ranks.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Standard deviation of the planted `B` factors, relative to `1/sqrt(d)`.
pub const PLANTED_B_SCALE: f64 = 1.0;

/// Tuned hyperparameters for the default planted grid (`configs/planted.cfg`).
pub const PLANTED_CONFIG: &str = include_str!("../configs/planted.cfg");

/// [`PLANTED_CONFIG`] parsed, with the seed replaced.
pub fn planted_config(seed: u64) -> RunConfig {
    let mut cfg = crate::config::parse_config(PLANTED_CONFIG).expect("bundled config parses");
    cfg.seed = seed;
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub layers: usize,
    pub heads: usize,
    pub d: usize,
    pub k: usize,
    /// Cycled across heads in (layer, head) order.
    pub planted_ranks: Vec<usize>,
    pub n_samples: usize,
    pub noise: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            d: self.d,
            k: self.k,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub spec: TaskSpec,
    pub teacher: ModelState,
    /// Planted rank of every head, flat over (layer, head).
    pub planted: Vec<usize>,
    pub x: Matrix,
    pub y: Matrix,
}

impl PlantedTask {
    /// The planted delta of each head.
    pub fn deltas(&self) -> Vec<Matrix> {
        self.teacher.adapters.iter().map(LoraAdapter::forward_delta).collect()
    }

    /// Fresh student sharing the teacher's frozen weights.
    pub fn student(&self, r0: usize) -> Result<ModelState> {
        ModelState::new(self.spec.model_config(), r0)
    }
}

pub fn generate_task(spec: &TaskSpec) -> Result<PlantedTask> {
    let cfg = spec.model_config();
    cfg.validate()?;
    if spec.planted_ranks.is_empty() {
        return Err(Error::invalid("planted rank list is empty"));
    }
    let max_rank = spec.d.min(spec.k);
    if let Some(bad) = spec.planted_ranks.iter().find(|&&r| r == 0 || r > max_rank) {
        return Err(Error::invalid(format!("planted rank {bad} outside 1..={max_rank}")));
    }
    if spec.n_samples == 0 || !(spec.noise >= 0.0) {
        return Err(Error::invalid("need n_samples >= 1 and noise >= 0"));
    }

    let n_heads = cfg.num_heads();
    let planted: Vec<usize> = (0..n_heads)
        .map(|i| spec.planted_ranks[i % spec.planted_ranks.len()])
        .collect();

    let b_std = PLANTED_B_SCALE / (spec.d as f64).sqrt();
    let a_std = 1.0 / (spec.k as f64).sqrt();
    let mut adapters = Vec::with_capacity(n_heads);
    for (i, &r) in planted.iter().enumerate() {
        let mut rng = rng::rng_from(spec.seed, &[STREAM_PLANTED, i as u64]);
        let b = Matrix::gaussian(spec.d, r, b_std, &mut rng);
        let a = Matrix::gaussian(r, spec.k, a_std, &mut rng);
        let ad = LoraAdapter::from_factors(b, a, 1.0, r)?.with_labels(i / spec.heads, i % spec.heads);
        adapters.push(ad);
    }
    let teacher = ModelState::new(cfg, 1)?.with_adapters(adapters)?;

    let mut rng = rng::rng_from(spec.seed, &[STREAM_INPUTS]);
    let x = Matrix::gaussian(spec.n_samples, spec.k, 1.0, &mut rng);
    let mut y = teacher.forward(&x)?;
    if spec.noise > 0.0 {
        let mut rng = rng::rng_from(spec.seed, &[STREAM_NOISE]);
        let noise = Matrix::gaussian(y.rows(), y.cols(), spec.noise, &mut rng);
        y.add_scaled(1.0, &noise)?;
    }
    Ok(PlantedTask {
        spec: spec.clone(),
        teacher,
        planted,
        x,
        y,
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. A constant input
/// has no ordering to agree with and scores 0.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("spearman inputs differ in length"));
    }
    if a.len() < 3 {
        return Err(Error::invalid("spearman needs at least 3 observations"));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman correlation between planted and learned ranks across heads.
pub fn recovery_score(learned: &ModelState, task: &PlantedTask) -> Result<f64> {
    if learned.adapters.len() != task.planted.len() {
        return Err(Error::invalid("learned state and task have different head grids"));
    }
    let got: Vec<f64> = learned.adapters.iter().map(|a| a.rank() as f64).collect();
    let want: Vec<f64> = task.planted.iter().map(|&r| r as f64).collect();
    spearman(&want, &got)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub steps: usize,
    pub final_task_loss: f64,
    pub final_params: usize,
    pub uniform_params: usize,
    pub ranks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub mean_scaled_rank: f64,
    pub frac_below: f64,
    pub frac_above: f64,
    pub capacity: f64,
    pub recovery: Option<f64>,
    pub max_alpha_step: f64,
    pub stability_bound: f64,
    pub base_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub planted_ranks: Vec<usize>,
    pub modes: Vec<ModeSummary>,
    /// Adaptive over uniform final parameter count, when both modes ran.
    pub param_ratio: Option<f64>,
    /// Adaptive over uniform final task loss, when both modes ran.
    pub loss_ratio: Option<f64>,
}

impl ExperimentSummary {
    pub fn mode(&self, mode: Mode) -> Option<&ModeSummary> {
        let name = mode.to_string();
        self.modes.iter().find(|m| m.mode == name)
    }
}

#[derive(Serialize)]
struct MetricsLine {
    step: usize,
    task_loss: f64,
    meta_loss: f64,
    l1: f64,
    tv: f64,
    grad_norm: f64,
    params: usize,
}

/// Streams step records as metrics JSONL and rank-trajectory CSV.
pub struct RecordWriter {
    metrics: BufWriter<File>,
    ranks: BufWriter<File>,
    heads: usize,
    metrics_path: PathBuf,
    ranks_path: PathBuf,
}

impl RecordWriter {
    pub fn create(dir: &Path, heads_per_layer: usize) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics_path = dir.join(METRICS_FILE);
        let ranks_path = dir.join(RANKS_FILE);
        let open = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| Error::io(p, e));
        let metrics = open(&metrics_path)?;
        let mut ranks = open(&ranks_path)?;
        writeln!(ranks, "{CSV_HEADER}").map_err(|e| Error::io(&ranks_path, e))?;
        Ok(RecordWriter {
            metrics,
            ranks,
            heads: heads_per_layer,
            metrics_path,
            ranks_path,
        })
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<()> {
        let line = MetricsLine {
            step: rec.step,
            task_loss: rec.task_loss,
            meta_loss: rec.meta_loss,
            l1: rec.l1,
            tv: rec.tv,
            grad_norm: rec.grad_norm,
            params: rec.params,
        };
        let json = serde_json::to_string(&line).expect("metrics serialize");
        writeln!(self.metrics, "{json}").map_err(|e| Error::io(&self.metrics_path, e))?;
        for (i, (alpha, rank)) in rec.alphas.iter().zip(&rec.ranks).enumerate() {
            writeln!(
                self.ranks,
                "{},{},{},{:?},{}",
                rec.step,
                i / self.heads,
                i % self.heads,
                alpha,
                rank
            )
            .map_err(|e| Error::io(&self.ranks_path, e))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(&self.metrics_path, e))?;
        self.ranks.flush().map_err(|e| Error::io(&self.ranks_path, e))
    }
}

/// Outcome of training one mode on a task.
pub struct ModeRun {
    pub records: Vec<StepRecord>,
    pub state: ModelState,
    pub summary: ModeSummary,
}

/// Trains one mode on `task`. Artifacts go to `out` when given.
pub fn train_mode(cfg: &RunConfig, task: &PlantedTask, mode: Mode, out: Option<&Path>) -> Result<ModeRun> {
    let mut tcfg = cfg.trainer_config();
    tcfg.mode = mode;
    let student = task.student(cfg.r0)?;
    let fingerprint = student.base_fingerprint();
    let mut trainer = Trainer::new(tcfg.clone(), student)?;

    let mut writer = match out {
        Some(dir) => Some(RecordWriter::create(dir, cfg.heads)?),
        None => None,
    };
    let records = trainer.run(&task.x, &task.y, |rec| match writer.as_mut() {
        Some(w) => w.write(rec),
        None => Ok(()),
    })?;
    if let Some(w) = writer {
        w.finish()?;
    }

    let mut state = trainer.into_state();
    if state.base_fingerprint() != fingerprint {
        return Err(Error::InvariantBreach("frozen weights changed during training".into()));
    }
    if mode == Mode::Adaptive {
        let seed = rng::derive_seed(cfg.seed, &[records.len() as u64]);
        for ad in &mut state.adapters {
            ad.sync_rank(seed)?;
            ad.check_invariants()?;
        }
    } else if state.adapters.iter().any(|a| a.rank() != cfg.r0) {
        return Err(Error::InvariantBreach("uniform mode changed a rank".into()));
    }

    let (max_alpha_step, stability_bound) = if records.len() >= 2 {
        let rep = stability_monitor(&records, tcfg.clip_c, tcfg.eta_alpha)?;
        (rep.max_delta, rep.bound)
    } else {
        (0.0, tcfg.stability_bound())
    };

    let final_task_loss = task_loss(&state.forward(&task.x)?, &task.y)?;
    if !final_task_loss.is_finite() {
        return Err(Error::Diverged {
            step: records.len(),
            reason: "final loss is not finite".into(),
        });
    }
    let stats: RankStatistics = rank_statistics(&state.adapters, cfg.r0);
    let alphas: Vec<f64> = state.adapters.iter().map(|a| a.alpha()).collect();
    let recovery = if state.adapters.len() >= 3 {
        Some(recovery_score(&state, task)?)
    } else {
        None
    };
    let summary = ModeSummary {
        mode: mode.to_string(),
        steps: records.len(),
        final_task_loss,
        final_params: stats.total_params,
        uniform_params: stats.uniform_params,
        ranks: state.adapters.iter().map(|a| a.rank()).collect(),
        capacity: capacity_term(&alphas, cfg.r0),
        alphas,
        mean_scaled_rank: stats.mean_scaled_rank,
        frac_below: stats.frac_below,
        frac_above: stats.frac_above,
        recovery,
        max_alpha_step,
        stability_bound,
        base_fingerprint: fingerprint,
    };
    Ok(ModeRun { records, state, summary })
}

/// Runs the configured modes on the planted task, writing per-mode metrics
/// and rank trajectories, `summary.json` and finally `manifest.json` into `out`.
pub fn run_experiment(cfg: &RunConfig, modes: &[Mode], out: &Path) -> Result<ExperimentSummary> {
    let started = unix_now();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let task = generate_task(&cfg.task_spec())?;

    let mut files = Vec::new();
    let mut summaries = Vec::new();
    for &mode in modes {
        let name = mode.to_string();
        let run = train_mode(cfg, &task, mode, Some(&out.join(&name)))?;
        files.push(format!("{name}/{METRICS_FILE}"));
        files.push(format!("{name}/{RANKS_FILE}"));
        summaries.push(run.summary);
    }

    let find = |m: &str| summaries.iter().find(|s| s.mode == m);
    let (param_ratio, loss_ratio) = match (find("adaptive"), find("uniform")) {
        (Some(a), Some(u)) => (
            Some(a.final_params as f64 / u.final_params as f64),
            Some(a.final_task_loss / u.final_task_loss),
        ),
        _ => (None, None),
    };
    let summary = ExperimentSummary {
        seed: cfg.seed,
        planted_ranks: task.planted.clone(),
        modes: summaries,
        param_ratio,
        loss_ratio,
    };
    let path = out.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    files.push(SUMMARY_FILE.to_string());

    RunManifest::write(out, cfg.to_text(), cfg.seed, started, &files)?;
    Ok(summary)
}

/// Human-readable report of a finished run directory. Verifies the manifest first.
pub fn report(run_dir: &Path) -> Result<String> {
    let manifest = RunManifest::load(run_dir)?;
    manifest.verify(run_dir)?;
    let path = run_dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let summary: ExperimentSummary = serde_json::from_str(&text).map_err(|e| Error::Artifact {
        path: path.clone(),
        message: e.to_string(),
    })?;

    let mut s = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(s, "run {} (seed {}, {} files verified)", run_dir.display(), summary.seed, manifest.files.len());
    let _ = writeln!(s, "planted ranks: {:?}", summary.planted_ranks);
    for m in &summary.modes {
        let _ = writeln!(s, "\n[{}] {} steps", m.mode, m.steps);
        let _ = writeln!(s, "  final task loss      {:.6e}", m.final_task_loss);
        let _ = writeln!(
            s,
            "  trainable params     {} ({:.1}% of rank-r0 budget {})",
            m.final_params,
            100.0 * m.final_params as f64 / m.uniform_params as f64,
            m.uniform_params
        );
        let _ = writeln!(s, "  learned ranks        {:?}", m.ranks);
        let _ = writeln!(s, "  mean r0*alpha        {:.3}", m.mean_scaled_rank);
        let _ = writeln!(s, "  heads < 0.8 r0       {:.1}%", 100.0 * m.frac_below);
        let _ = writeln!(s, "  heads > 1.5 r0       {:.1}%", 100.0 * m.frac_above);
        let _ = writeln!(s, "  capacity term        {:.4}", m.capacity);
        if let Some(r) = m.recovery {
            let _ = writeln!(s, "  rank recovery (rho)  {r:.3}");
        }
        let _ = writeln!(s, "  max |d alpha|        {:.3e} (bound {:.3e})", m.max_alpha_step, m.stability_bound);
    }
    if let (Some(p), Some(l)) = (summary.param_ratio, summary.loss_ratio) {
        let _ = writeln!(s, "\nadaptive / uniform: params {p:.3}, loss {l:.3}");
    }
    Ok(s)
}
