//! Bi-level search and discrete retraining.
//!
//! Each search iteration first updates the supernet weights `ω` on a trainA
//! batch with `θ` frozen, then (after the warm-up) the architecture logits
//! `θ` on a trainB batch with `ω` frozen. Both updates are first order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchParams, ArchVars};
use crate::autograd::Var;
use crate::config::{cosine_lr, validate_config, NetworkConfig, SearchConfig, TrainConfig};
use crate::data::{Augment, DatasetSplit, MultiToOnePair};
use crate::error::{Error, Result};
use crate::genotype::Genotype;
use crate::losses::{objective, ArchTerms, LossReport};
use crate::optim::{Adam, Sgd};
use crate::params::{mix_seed, Graph, ParamStore};
use crate::supernet::{ComplexityTable, DerainNetwork, Mode};

const STREAM_A: u64 = 1;
const STREAM_B: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_AUGMENT: u64 = 4;

/// Round-robin over `len` items in a fresh shuffle per epoch. The order of
/// epoch `e` depends only on `(seed, stream, e)`, so the cursor is the whole
/// state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairSampler {
    pub len: usize,
    pub seed: u64,
    pub stream: u64,
    pub cursor: u64,
}

impl PairSampler {
    pub fn new(len: usize, seed: u64, stream: u64) -> Self {
        PairSampler { len, seed, stream, cursor: 0 }
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(self.seed, self.stream), epoch));
        order.shuffle(&mut rng);
        order
    }

    pub fn next_index(&mut self) -> Result<usize> {
        if self.len == 0 {
            return Err(Error::EmptyBatch);
        }
        let (epoch, pos) = (self.cursor / self.len as u64, (self.cursor % self.len as u64) as usize);
        self.cursor += 1;
        Ok(self.epoch_order(epoch)[pos])
    }
}

/// Everything needed to continue a search exactly where it stopped.
#[derive(Clone, Debug)]
pub struct SearchState {
    pub network: DerainNetwork,
    pub arch: ArchParams,
    pub weight_opt: Sgd,
    pub arch_opt: Adam,
    /// Completed iterations `j`.
    pub iteration: usize,
    /// Planned iterations `J`.
    pub total: usize,
    pub sampler_a: PairSampler,
    pub sampler_b: PairSampler,
}

impl SearchState {
    pub fn new(cfg: NetworkConfig, scfg: &SearchConfig, split: &DatasetSplit) -> Result<Self> {
        validate_config(&cfg)?;
        scfg.validate()?;
        Ok(SearchState {
            network: DerainNetwork::instantiate(cfg, Mode::Relaxed, None, scfg.seed)?,
            arch: ArchParams::new(&cfg, scfg.shared_attention_choice),
            weight_opt: Sgd::new(scfg.weight_momentum, scfg.weight_decay),
            arch_opt: Adam::new(scfg.arch_betas, scfg.arch_weight_decay),
            iteration: 0,
            total: scfg.iterations,
            sampler_a: PairSampler::new(split.train_a.len(), scfg.seed, STREAM_A),
            sampler_b: PairSampler::new(split.train_b.len(), scfg.seed, STREAM_B),
        })
    }

    pub fn genotype(&self) -> Genotype {
        self.arch.binarize(&self.network.config)
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.total
    }
}

fn check_batch(cfg: &NetworkConfig, batch: &[MultiToOnePair]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for p in batch {
        p.validate()?;
        if p.len() != cfg.multi_to_one {
            return Err(Error::Dataset(format!(
                "pair {} has {} rainy images, the network expects N = {}",
                p.name,
                p.len(),
                cfg.multi_to_one
            )));
        }
    }
    Ok(())
}

struct ArchContext<'a> {
    vars: &'a ArchVars,
    table: &'a ComplexityTable,
    lambda_arch: f64,
    lambda_comp: f64,
}

/// Mean objective over the pairs of a batch; returns `(trainA, trainB)`
/// roots and the mean report.
fn batch_objective(
    net: &DerainNetwork,
    g: &mut Graph,
    batch: &[MultiToOnePair],
    arch: Option<&ArchContext>,
    internal: bool,
) -> Result<(Var, Var, LossReport)> {
    let mut roots_a = Vec::with_capacity(batch.len());
    let mut roots_b = Vec::with_capacity(batch.len());
    let mut reports = Vec::with_capacity(batch.len());
    for pair in batch {
        let mut outputs = Vec::with_capacity(pair.len());
        for r in &pair.rainy {
            let x = g.constant(r.clone());
            outputs.push(net.graph(g, x, arch.map(|a| a.vars))?);
        }
        let gt = g.constant(pair.gt.clone());
        let terms = arch.map(|a| ArchTerms {
            arch: a.vars,
            table: a.table,
            lambda_arch: a.lambda_arch,
            lambda_comp: a.lambda_comp,
        });
        let lv = objective(&mut g.tape, &outputs, gt, internal, terms)?;
        roots_a.push(lv.train_a);
        roots_b.push(lv.train_b);
        reports.push(lv.report(&g.tape));
    }
    let k = 1.0 / batch.len() as f64;
    let a = g.tape.add_all(&roots_a);
    let a = g.tape.mul_const(a, k);
    let b = g.tape.add_all(&roots_b);
    let b = g.tape.mul_const(b, k);
    Ok((a, b, LossReport::mean(&reports)))
}

fn check_finite(r: &LossReport, iteration: usize) -> Result<()> {
    match r.first_non_finite() {
        Some(component) => Err(Error::NonFinite { component, iteration }),
        None => Ok(()),
    }
}

/// Losses observed during one bi-level iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// All terms on the trainA batch, architecture terms at the `θ` in force
    /// during the weight update.
    pub weights: LossReport,
    /// All terms on the trainB batch; `None` during warm-up.
    pub arch: Option<LossReport>,
}

/// Step sizes and switches for one [`bilevel_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSettings {
    pub weight_lr: f64,
    pub arch_lr: f64,
    pub update_arch: bool,
}

/// One alternation: `ω` on `batch_a` with `θ` frozen, then `θ` on `batch_b`
/// with `ω` frozen. Any non-finite loss aborts before its update is applied.
pub fn bilevel_step(
    state: &mut SearchState,
    scfg: &SearchConfig,
    batch_a: &[MultiToOnePair],
    batch_b: &[MultiToOnePair],
    step: StepSettings,
) -> Result<StepReport> {
    let cfg = state.network.config;
    check_batch(&cfg, batch_a)?;
    check_batch(&cfg, batch_b)?;
    let table = state.network.complexity_table(state.arch.shared_attention_choice())?;
    let j = state.iteration;

    let (weights_report, grads) = {
        let mut g = Graph::new(&state.network.params, true);
        let vars = state.arch.bind(&mut g.tape, false);
        let ctx = ArchContext { vars: &vars, table: &table, lambda_arch: scfg.lambda_arch, lambda_comp: scfg.lambda_comp };
        let (root, _, report) = batch_objective(&state.network, &mut g, batch_a, Some(&ctx), scfg.internal_loss)?;
        check_finite(&report, j)?;
        let grads = g.tape.backward(root);
        (report, g.param_grads(&grads))
    };
    state.weight_opt.step_tensors(step.weight_lr, state.network.params.values_mut(), &grads);

    let mut arch_report = None;
    if step.update_arch {
        let (report, logit_grads) = {
            let mut g = Graph::new(&state.network.params, false);
            let vars = state.arch.bind(&mut g.tape, true);
            let ctx =
                ArchContext { vars: &vars, table: &table, lambda_arch: scfg.lambda_arch, lambda_comp: scfg.lambda_comp };
            let (_, root, report) = batch_objective(&state.network, &mut g, batch_b, Some(&ctx), scfg.internal_loss)?;
            check_finite(&report, j)?;
            let grads = g.tape.backward(root);
            (report, vars.logit_grads(&g.tape, &grads))
        };
        state.arch_opt.step(step.arch_lr, [(state.arch.logits_mut(), &logit_grads[..])]);
        if state.arch.logits().iter().any(|v| v.is_nan()) {
            return Err(Error::NanLogits);
        }
        arch_report = Some(report);
    }
    state.iteration += 1;
    Ok(StepReport { weights: weights_report, arch: arch_report })
}

fn draw_batch(
    sampler: &mut PairSampler,
    pairs: &[MultiToOnePair],
    count: usize,
    augment: &Augment,
    seed: u64,
) -> Result<Vec<MultiToOnePair>> {
    (0..count)
        .map(|_| {
            let draw = sampler.cursor;
            let i = sampler.next_index()?;
            let s = mix_seed(mix_seed(mix_seed(seed, STREAM_AUGMENT), sampler.stream), draw);
            augment.apply(&pairs[i], s)
        })
        .collect()
}

/// Result of a search.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub genotype: Genotype,
    pub state: SearchState,
    /// One row per iteration; see [`StepReport::weights`].
    pub log: Vec<LossReport>,
}

/// Continue `state` until `J` iterations are done. `observer` sees the state
/// after every iteration together with its log row and may abort.
pub fn resume_search(
    mut state: SearchState,
    scfg: &SearchConfig,
    split: &DatasetSplit,
    augment: &Augment,
    observer: &mut dyn FnMut(&SearchState, &LossReport) -> Result<()>,
) -> Result<SearchOutcome> {
    scfg.validate()?;
    if state.sampler_a.len != split.train_a.len() || state.sampler_b.len != split.train_b.len() {
        return Err(Error::Dataset("split sizes differ from the ones the search started with".into()));
    }
    if state.total > 0 {
        split.verify_disjoint()?;
    }
    let warmup = scfg.warmup_iterations();
    let mut log = Vec::with_capacity(state.total.saturating_sub(state.iteration));
    while !state.is_done() {
        let j = state.iteration;
        let batch_a = draw_batch(&mut state.sampler_a, &split.train_a, scfg.pairs_per_batch, augment, scfg.seed)?;
        let batch_b = draw_batch(&mut state.sampler_b, &split.train_b, scfg.pairs_per_batch, augment, scfg.seed)?;
        let step = StepSettings {
            weight_lr: cosine_lr(scfg.weight_lr_max, scfg.weight_lr_min, j, state.total),
            arch_lr: scfg.arch_lr,
            update_arch: j >= warmup,
        };
        let report = bilevel_step(&mut state, scfg, &batch_a, &batch_b, step)?;
        observer(&state, &report.weights)?;
        log.push(report.weights);
    }
    Ok(SearchOutcome { genotype: state.genotype(), state, log })
}

/// Full search from the seeded initial state.
pub fn run_search(
    cfg: NetworkConfig,
    scfg: &SearchConfig,
    split: &DatasetSplit,
    augment: &Augment,
) -> Result<SearchOutcome> {
    let state = SearchState::new(cfg, scfg, split)?;
    resume_search(state, scfg, split, augment, &mut |_, _| Ok(()))
}

/// Result of retraining a discrete network.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: DerainNetwork,
    /// One row per optimisation step.
    pub log: Vec<LossReport>,
    /// Mean `trainA` of each epoch.
    pub epoch_means: Vec<f64>,
}

/// Train the genotype's discrete network on `pairs` with Adam and a cosine
/// step size decaying from `lr` to 0. Parameters named like ones in `init`
/// start from those values.
pub fn run_train(
    genotype: &Genotype,
    tcfg: &TrainConfig,
    pairs: &[MultiToOnePair],
    augment: &Augment,
    init: Option<&ParamStore>,
    observer: &mut dyn FnMut(usize, &LossReport) -> Result<()>,
) -> Result<TrainOutcome> {
    let cfg = genotype.config;
    let mut net = DerainNetwork::instantiate(cfg, Mode::Discrete, Some(genotype), tcfg.seed)?;
    if let Some(src) = init {
        net.load_matching(src);
    }
    if tcfg.epochs == 0 {
        return Ok(TrainOutcome { network: net, log: Vec::new(), epoch_means: Vec::new() });
    }
    check_batch(&cfg, pairs)?;
    if tcfg.pairs_per_batch == 0 {
        return Err(Error::config("pairs_per_batch", "must be positive"));
    }
    let steps_per_epoch = pairs.len().div_ceil(tcfg.pairs_per_batch);
    let total = tcfg.epochs * steps_per_epoch;
    let mut opt = Adam::new(tcfg.betas, tcfg.weight_decay);
    let sampler = PairSampler::new(pairs.len(), tcfg.seed, STREAM_TRAIN);
    let mut log = Vec::with_capacity(total);
    let mut epoch_means = Vec::with_capacity(tcfg.epochs);
    let mut step = 0;
    for epoch in 0..tcfg.epochs {
        let order = sampler.epoch_order(epoch as u64);
        let mut sum = 0.0;
        for chunk in order.chunks(tcfg.pairs_per_batch) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let s = mix_seed(mix_seed(mix_seed(tcfg.seed, STREAM_AUGMENT), STREAM_TRAIN), step as u64 * 65_536 + i as u64);
                    augment.apply(&pairs[i], s)
                })
                .collect::<Result<Vec<_>>>()?;
            let (report, grads) = {
                let mut g = Graph::new(&net.params, true);
                let (root, _, report) = batch_objective(&net, &mut g, &batch, None, tcfg.internal_loss)?;
                check_finite(&report, step)?;
                let grads = g.tape.backward(root);
                (report, g.param_grads(&grads))
            };
            let lr = cosine_lr(tcfg.lr, 0.0, step, total);
            opt.step_tensors(lr, net.params.values_mut(), &grads);
            observer(step, &report)?;
            sum += report.train_a;
            log.push(report);
            step += 1;
        }
        epoch_means.push(sum / steps_per_epoch as f64);
    }
    Ok(TrainOutcome { network: net, log, epoch_means })
}

/// Retrain on `trainA ∪ trainB` of a split.
pub fn run_train_split(
    genotype: &Genotype,
    tcfg: &TrainConfig,
    split: &DatasetSplit,
    augment: &Augment,
) -> Result<TrainOutcome> {
    run_train(genotype, tcfg, &split.training(), augment, None, &mut |_, _| Ok(()))
}
