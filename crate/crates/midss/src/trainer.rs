//! Mean-teacher training loop: weak/strong views, teacher pseudo-labeling
//! with confidence gating, progressive amplitude mixing of the labeled view,
//! unified copy-paste intermediates, symmetric guidance, warmed-up total
//! loss, SGD on the student, and EMA on the teacher.
//!
//! Every stochastic decision draws from a stream keyed by (seed, iteration,
//! pair, purpose), so disabled pipeline stages never shift the draws of
//! enabled ones and batch elements can run on any number of workers without
//! changing a single output bit.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{
    apply_geo, apply_geo_onehot, make_views_with_geo, sample_weak, AugmentRanges, Interp,
};
use crate::data::{sample_batch, Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::exec;
use crate::fourier::{ram, tp_ram};
use crate::grid::{argmax_channels, elementwise_mix, Grid};
use crate::metrics::{per_class_metrics, EvalResult};
use crate::network::{
    ema_update, sgd_step, write_checkpoint, GradBlocks, NetParams, OptState,
};
use crate::objective::{
    ce_dice_grad, confidence_weight, ensemble_weight, intermediate_losses, lambda_schedule,
    supervised_loss, symmetric_loss, total_loss, LossBundle,
};
use crate::rng::SplitRng;
use crate::ucp::{generate_center_mask, merge_unlabeled_regions, unified_copy_paste};

// Top-level rng streams.
const STREAM_INIT: u64 = 0;
const STREAM_ITER: u64 = 1;
// Within an iteration.
const ITER_BATCH: u64 = 0;
const ITER_PAIR_BASE: u64 = 10;
// Within a pair.
const PAIR_LABELED_GEO: u64 = 0;
const PAIR_UNLABELED_VIEWS: u64 = 1;
const PAIR_MASK: u64 = 2;
const PAIR_RHO: u64 = 3;

/// Which method components are active; mirrors the ablation table rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodFlags {
    pub ucp: bool,
    pub vanilla_gd: bool,
    pub sym_gd: bool,
    pub tp_ram: bool,
    pub ram: bool,
    pub supervised_only: bool,
}

impl MethodFlags {
    pub fn supervised() -> Self {
        Self { supervised_only: true, ..Self::default() }
    }

    pub fn row1() -> Self {
        Self { ucp: true, ..Self::default() }
    }

    pub fn row2() -> Self {
        Self { ucp: true, vanilla_gd: true, ..Self::default() }
    }

    pub fn row3() -> Self {
        Self { ucp: true, sym_gd: true, ..Self::default() }
    }

    pub fn row4() -> Self {
        Self { ucp: true, tp_ram: true, ..Self::default() }
    }

    pub fn row5() -> Self {
        Self { ucp: true, sym_gd: true, ram: true, ..Self::default() }
    }

    pub fn full() -> Self {
        Self { ucp: true, sym_gd: true, tp_ram: true, ..Self::default() }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "supervised" => Self::supervised(),
            "row1" => Self::row1(),
            "row2" => Self::row2(),
            "row3" => Self::row3(),
            "row4" => Self::row4(),
            "row5" => Self::row5(),
            "full" | "row6" => Self::full(),
            other => return Err(Error::Config(format!("unknown ablation row `{other}`"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.sym_gd && self.vanilla_gd {
            return Err(Error::Config("sym_gd and vanilla_gd are mutually exclusive".into()));
        }
        if self.tp_ram && self.ram {
            return Err(Error::Config("tp_ram and ram are mutually exclusive".into()));
        }
        if self.supervised_only
            && (self.ucp || self.vanilla_gd || self.sym_gd || self.tp_ram || self.ram)
        {
            return Err(Error::Config("supervised_only disables all unlabeled paths".into()));
        }
        if self.sym_gd && !self.ucp {
            return Err(Error::Config("sym_gd requires ucp intermediates".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub t_total: u64,
    /// Confidence threshold gating pseudo-label pixels.
    pub tau: f64,
    /// Low-frequency window size fraction for amplitude mixing.
    pub beta: f64,
    /// Copy-paste mask size ratio range.
    pub ratio_range: (f64, f64),
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub seed: u64,
    pub eval_every: u64,
    pub flags: MethodFlags,
    pub arch: crate::network::ArchConfig,
    pub augment: AugmentRanges,
    /// Weight the symmetric loss with the literal merged confidence map
    /// instead of the agreement ensemble.
    pub sym_weight_literal_mg: bool,
    /// Build the teacher's weak intermediates from the raw labeled view
    /// rather than the style-mixed one.
    pub sym_gd_raw_labeled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t_total: 2000,
            tau: 0.95,
            beta: 0.01,
            ratio_range: (1.0 / 3.0, 2.0 / 3.0),
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 1e-4,
            ema_decay: 0.99,
            batch_labeled: 4,
            batch_unlabeled: 4,
            seed: 0,
            eval_every: 500,
            flags: MethodFlags::full(),
            arch: crate::network::ArchConfig::default(),
            augment: AugmentRanges::default(),
            sym_weight_literal_mg: false,
            sym_gd_raw_labeled: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.flags.validate()?;
        let min_tau = 1.0 / self.arch.num_classes as f64;
        if !(self.tau > min_tau && self.tau <= 1.0) {
            return Err(Error::Config(format!(
                "tau must be in (1/{}, 1], got {}",
                self.arch.num_classes, self.tau
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 0.5) {
            return Err(Error::Config(format!("beta must be in (0, 0.5], got {}", self.beta)));
        }
        let (lo, hi) = self.ratio_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!("invalid ratio range [{lo}, {hi}]")));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must be in [0, 1]".into()));
        }
        if self.batch_labeled == 0 {
            return Err(Error::Config("batch_labeled must be >= 1".into()));
        }
        if !self.flags.supervised_only && self.batch_unlabeled == 0 {
            return Err(Error::Config("batch_unlabeled must be >= 1 for unlabeled paths".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Diagnostics of one iteration.
#[derive(Clone, Debug)]
pub struct IterationTrace {
    pub t: u64,
    pub losses: LossBundle,
    /// Fraction of unlabeled weak-view pixels whose max teacher probability
    /// reached tau.
    pub accept_rate: f64,
    /// Mean Dice of the teacher's pseudo labels against the generator's
    /// ground truth, per unlabeled domain (diagnostic only).
    pub pseudo_dice: BTreeMap<u32, f64>,
}

pub struct TrainState {
    pub student: NetParams,
    pub teacher: NetParams,
    pub opt: OptState,
    pub t: u64,
    root: SplitRng,
}

pub fn init_state(cfg: &TrainConfig) -> TrainState {
    let root = SplitRng::new(cfg.seed);
    let student = NetParams::init(cfg.arch.clone(), &mut root.fork(STREAM_INIT));
    let teacher = student.clone();
    let opt = OptState::new(&student, cfg.lr, cfg.momentum, cfg.weight_decay);
    TrainState { student, teacher, opt, t: 0, root }
}

struct PairOutput {
    l_s: f64,
    l_in: f64,
    l_out: f64,
    l_sym: f64,
    grads: GradBlocks,
    accepted: usize,
    gated_pixels: usize,
    pseudo_dice: Option<(u32, f64)>,
}

#[allow(clippy::too_many_arguments)]
fn pair_forward_backward(
    cfg: &TrainConfig,
    student: &NetParams,
    teacher: &NetParams,
    t: u64,
    lambda: f64,
    labeled: &SampleRecord,
    unlabeled: Option<&SampleRecord>,
    pair_rng: SplitRng,
    n_labeled: usize,
    n_pairs: usize,
) -> Result<PairOutput> {
    let label = labeled
        .label
        .as_ref()
        .ok_or_else(|| Error::Config("labeled record without label".into()))?;
    let mut geo_rng = pair_rng.fork(PAIR_LABELED_GEO);
    let g_l = sample_weak(&mut geo_rng, &cfg.augment);
    let x_w = apply_geo(&labeled.image, &g_l, Interp::Bilinear);
    let y_w = apply_geo_onehot(label, &g_l)?;
    let (h, w) = (x_w.height(), x_w.width());

    let mut grads = GradBlocks::zeros_like(student);
    let (p_x, cache_x) = student.forward(&x_w)?;
    let l_s = supervised_loss(&y_w, &p_x);
    let ones = Grid::filled(h, w, 1, 1.0);
    let mut gp = ce_dice_grad(&y_w, &p_x, &ones);
    gp.data_mut().iter_mut().for_each(|v| *v /= n_labeled as f64);
    grads.add_scaled(&student.backward(&cache_x, &gp)?, 1.0);

    let mut out = PairOutput {
        l_s,
        l_in: 0.0,
        l_out: 0.0,
        l_sym: 0.0,
        grads,
        accepted: 0,
        gated_pixels: 0,
        pseudo_dice: None,
    };
    let Some(unl) = unlabeled else {
        return Ok(out);
    };

    let mut view_rng = pair_rng.fork(PAIR_UNLABELED_VIEWS);
    let (u_w, u_s, g_u) = make_views_with_geo(&unl.image, &mut view_rng, &cfg.augment);

    let p_w = teacher.predict(&u_w)?;
    let p_hat = argmax_channels(&p_w)?;
    let w_map = confidence_weight(&p_w, cfg.tau);
    out.accepted = w_map.data().iter().filter(|&&v| v == 1.0).count();
    out.gated_pixels = h * w;

    // Style-transition component: mix low-frequency amplitude of the
    // unlabeled weak view into the labeled one before copy-paste.
    let x_tilde = if cfg.flags.tp_ram {
        tp_ram(&x_w, &u_w, cfg.beta, t, cfg.t_total, &mut pair_rng.fork(PAIR_RHO))?
    } else if cfg.flags.ram {
        ram(&x_w, &u_w, cfg.beta, &mut pair_rng.fork(PAIR_RHO))?
    } else {
        x_w.clone()
    };

    let pair_scale = 1.0 / n_pairs as f64;
    if cfg.flags.ucp {
        let m = generate_center_mask(h, w, cfg.ratio_range, &mut pair_rng.fork(PAIR_MASK))?;
        let triple = unified_copy_paste(&x_tilde, &y_w, &u_s, &p_w, &p_hat, &w_map, &m)?;

        let (p_s_in, cache_in) = student.forward(&triple.sample_in)?;
        let (p_s_out, cache_out) = student.forward(&triple.sample_out)?;
        let (l_in, l_out) = intermediate_losses(&triple, &p_s_in, &p_s_out);
        out.l_in = l_in;
        out.l_out = l_out;

        let mut g_in = ce_dice_grad(&triple.pseudo_in, &p_s_in, &triple.weight_in);
        g_in.data_mut().iter_mut().for_each(|v| *v *= lambda * pair_scale);
        out.grads.add_scaled(&student.backward(&cache_in, &g_in)?, 1.0);
        let mut g_out = ce_dice_grad(&triple.pseudo_out, &p_s_out, &triple.weight_out);
        g_out.data_mut().iter_mut().for_each(|v| *v *= lambda * pair_scale);
        out.grads.add_scaled(&student.backward(&cache_out, &g_out)?, 1.0);

        if cfg.flags.sym_gd {
            // The teacher sees both weak intermediates, and its predictions
            // on the unlabeled regions are reassembled into a second pseudo
            // label for the strong view.
            let base = if cfg.sym_gd_raw_labeled { &x_w } else { &x_tilde };
            let u_w_in = elementwise_mix(base, &u_w, m.grid())?;
            let u_w_out = elementwise_mix(&u_w, base, m.grid())?;
            let p_w_in_t = teacher.predict(&u_w_in)?;
            let p_w_out_t = teacher.predict(&u_w_out)?;
            let p_hat_mg = merge_unlabeled_regions(
                &argmax_channels(&p_w_out_t)?,
                &argmax_channels(&p_w_in_t)?,
                &m,
            )?;
            let w_mg = elementwise_mix(
                &confidence_weight(&p_w_out_t, cfg.tau),
                &confidence_weight(&p_w_in_t, cfg.tau),
                m.grid(),
            )?;
            let w_sym = if cfg.sym_weight_literal_mg {
                w_mg
            } else {
                ensemble_weight(&p_hat, &p_hat_mg, &w_map, &w_mg)?
            };
            let (p_s, cache_s) = student.forward(&u_s)?;
            out.l_sym = symmetric_loss(&p_hat_mg, &p_s, &w_sym);
            let mut g_sym = ce_dice_grad(&p_hat_mg, &p_s, &w_sym);
            g_sym.data_mut().iter_mut().for_each(|v| *v *= lambda * lambda * pair_scale);
            out.grads.add_scaled(&student.backward(&cache_s, &g_sym)?, 1.0);
        }
    }

    if cfg.flags.vanilla_gd {
        // Direct consistency: the teacher's pseudo label on the weak view
        // supervises the student on the strong view.
        let (p_s, cache_s) = student.forward(&u_s)?;
        out.l_sym = symmetric_loss(&p_hat, &p_s, &w_map);
        let mut g_sym = ce_dice_grad(&p_hat, &p_s, &w_map);
        g_sym.data_mut().iter_mut().for_each(|v| *v *= lambda * lambda * pair_scale);
        out.grads.add_scaled(&student.backward(&cache_s, &g_sym)?, 1.0);
    }

    if let Some(diag) = &unl.diag_label {
        let aligned = apply_geo_onehot(diag, &g_u)?;
        let quads = per_class_metrics(&p_hat, &aligned);
        let mean_dc = quads.iter().map(|(_, q)| q.dc).sum::<f64>() / quads.len().max(1) as f64;
        out.pseudo_dice = Some((unl.domain_id, mean_dc));
    }
    Ok(out)
}

/// One optimization step over a labeled/unlabeled batch pair.
pub fn train_iteration(
    state: &mut TrainState,
    cfg: &TrainConfig,
    batch_l: &[&SampleRecord],
    batch_u: &[&SampleRecord],
) -> Result<IterationTrace> {
    let t = state.t;
    let lambda = lambda_schedule(t, cfg.t_total);
    let n_labeled = batch_l.len();
    if n_labeled == 0 {
        return Err(Error::Config("empty labeled batch".into()));
    }
    let n_pairs =
        if cfg.flags.supervised_only { 0 } else { n_labeled.min(batch_u.len()) };
    let iter_rng = state.root.fork(STREAM_ITER).fork(t);

    let student = &state.student;
    let teacher = &state.teacher;
    let outputs: Vec<Result<PairOutput>> = exec::map_indexed(n_labeled, |k| {
        pair_forward_backward(
            cfg,
            student,
            teacher,
            t,
            lambda,
            batch_l[k],
            if k < n_pairs { Some(batch_u[k]) } else { None },
            iter_rng.fork(ITER_PAIR_BASE + k as u64),
            n_labeled,
            n_pairs.max(1),
        )
    });

    // Fixed-order reduction keeps results bit-identical across worker counts.
    let mut grads = GradBlocks::zeros_like(&state.student);
    let (mut l_s, mut l_in, mut l_out, mut l_sym) = (0.0, 0.0, 0.0, 0.0);
    let (mut accepted, mut gated) = (0usize, 0usize);
    let mut dice_acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for o in outputs {
        let o = o?;
        grads.add_scaled(&o.grads, 1.0);
        l_s += o.l_s;
        l_in += o.l_in;
        l_out += o.l_out;
        l_sym += o.l_sym;
        accepted += o.accepted;
        gated += o.gated_pixels;
        if let Some((d, v)) = o.pseudo_dice {
            let e = dice_acc.entry(d).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    l_s /= n_labeled as f64;
    if n_pairs > 0 {
        l_in /= n_pairs as f64;
        l_out /= n_pairs as f64;
        l_sym /= n_pairs as f64;
    }
    let losses = total_loss(l_s, l_in, l_out, l_sym, t, cfg.t_total)?;

    sgd_step(&mut state.student, &grads, &mut state.opt)?;
    ema_update(&mut state.teacher, &state.student, cfg.ema_decay)?;
    state.t += 1;

    Ok(IterationTrace {
        t,
        losses,
        accept_rate: if gated > 0 { accepted as f64 / gated as f64 } else { 0.0 },
        pseudo_dice: dice_acc
            .into_iter()
            .map(|(d, (s, n))| (d, s / n as f64))
            .collect(),
    })
}

/// Student-only inference over the test split, metrics per domain and class.
pub fn evaluate_student(student: &NetParams, test: &[SampleRecord]) -> Result<EvalResult> {
    let per_sample: Vec<Result<Vec<(u32, usize, crate::metrics::MetricQuad)>>> =
        exec::map_indexed(test.len(), |i| {
            let rec = &test[i];
            let gt = rec
                .label
                .as_ref()
                .or(rec.diag_label.as_ref())
                .ok_or_else(|| Error::Config(format!("test case {} has no label", rec.case_id)))?;
            let prob = student.predict(&rec.image)?;
            let pred = argmax_channels(&prob)?;
            Ok(per_class_metrics(&pred, gt)
                .into_iter()
                .map(|(c, q)| (rec.domain_id, c, q))
                .collect())
        });
    let mut flat = Vec::new();
    for s in per_sample {
        flat.extend(s?);
    }
    Ok(EvalResult::from_samples(&flat))
}

/// Everything `run` leaves behind.
pub struct RunReport {
    pub traces: Vec<IterationTrace>,
    pub evals: Vec<(u64, EvalResult)>,
    pub final_eval: EvalResult,
    pub trace_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub report_path: PathBuf,
}

fn csv_cell(v: f64) -> String {
    format!("{v}")
}

/// Full training run: t_total iterations, periodic evaluation, CSV trace,
/// checkpoint, and JSON metric report under `out_dir`.
pub fn run(cfg: &TrainConfig, data: &Dataset, out_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut domains: Vec<u32> = data.test.iter().map(|r| r.domain_id).collect();
    domains.sort_unstable();
    domains.dedup();

    let mut state = init_state(cfg);
    let trace_path = out_dir.join("trace.csv");
    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?,
    );
    let mut header = String::from("t,l_s,l_in,l_out,l_sym,lambda,accept_rate");
    for d in &domains {
        header.push_str(&format!(",dice_d{d}"));
    }
    header.push('\n');
    csv.write_all(header.as_bytes()).map_err(|e| Error::io(&trace_path, e))?;

    let mut traces = Vec::with_capacity(cfg.t_total as usize);
    let mut evals: Vec<(u64, EvalResult)> = Vec::new();
    for _ in 0..cfg.t_total {
        let mut batch_rng = state.root.fork(STREAM_ITER).fork(state.t).fork(ITER_BATCH);
        let n_unl = if cfg.flags.supervised_only { 0 } else { cfg.batch_unlabeled };
        let (bl, bu) =
            sample_batch(&data.labeled, &data.unlabeled, cfg.batch_labeled, n_unl, &mut batch_rng)?;
        let trace = train_iteration(&mut state, cfg, &bl, &bu)?;

        let eval_now = state.t % cfg.eval_every == 0 || state.t == cfg.t_total;
        let mut row = format!(
            "{},{},{},{},{},{},{}",
            trace.t,
            csv_cell(trace.losses.l_s),
            csv_cell(trace.losses.l_in),
            csv_cell(trace.losses.l_out),
            csv_cell(trace.losses.l_sym),
            csv_cell(trace.losses.lambda),
            csv_cell(trace.accept_rate),
        );
        if eval_now {
            let ev = evaluate_student(&state.student, &data.test)?;
            for d in &domains {
                let mean = ev.mean_dice_over(|x| x == *d);
                row.push_str(&format!(",{}", csv_cell(mean)));
            }
            evals.push((state.t, ev));
        } else {
            for _ in &domains {
                row.push(',');
            }
        }
        row.push('\n');
        csv.write_all(row.as_bytes()).map_err(|e| Error::io(&trace_path, e))?;
        traces.push(trace);
    }
    drop(csv);

    let final_eval = match evals.last() {
        Some((t, ev)) if *t == cfg.t_total => ev.clone(),
        _ => {
            let ev = evaluate_student(&state.student, &data.test)?;
            evals.push((cfg.t_total, ev.clone()));
            ev
        }
    };

    let checkpoint_path = out_dir.join("checkpoint.bin");
    write_checkpoint(&checkpoint_path, &state.student, &state.teacher, state.t, cfg.seed)?;
    let report_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&final_eval).expect("report serializes");
    std::fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;

    Ok(RunReport { traces, evals, final_eval, trace_path, checkpoint_path, report_path })
}
