//! BPR training on (query, positive, negative) triples with Adam.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aliasdata::{AliasGraph, EvalQuery, NegType, NegativeIndex, Triple};
use crate::diffmath::{Scalar, Tape, Var};
use crate::encoder::Mention;
use crate::evalrank::evaluate;
use crate::scorer::{forward, ModelParams};
use crate::{Error, Result};

/// `−ln σ(s_pos − s_neg)`, with σ clamped at 1e-12.
pub fn bpr_loss(s_pos: f64, s_neg: f64) -> f64 {
    let d = s_pos - s_neg;
    let sig = if d >= 0.0 { 1.0 / (1.0 + (-d).exp()) } else { d.exp() / (1.0 + d.exp()) };
    -sig.max(1e-12).ln()
}

pub fn bpr_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, s_pos: Var, s_neg: Var) -> Result<Var> {
    let d = tape.sub(s_pos, s_neg)?;
    let s = tape.sigmoid(d)?;
    let s = tape.clamp_min(s, 1e-12)?;
    let l = tape.log(s)?;
    Ok(tape.neg(l)?)
}

/// Per-query negatives, grouped by heuristic type.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativeBank {
    by_query: HashMap<String, [Vec<String>; 5]>,
}

fn type_slot(t: NegType) -> usize {
    NegType::ALL.iter().position(|&x| x == t).expect("listed type")
}

impl NegativeBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: &str, negative: &str, kind: NegType) {
        self.by_query.entry(query.to_string()).or_default()[type_slot(kind)].push(negative.to_string());
    }

    /// Negatives for every mention of `pool` that has a co-alias in it,
    /// drawn from `pool` and never a co-alias in `full`.
    pub fn build(full: &AliasGraph, pool: &AliasGraph, budget: usize, seed: u64) -> Result<Self> {
        let index = NegativeIndex::new(pool);
        let rows: Vec<(String, Vec<(String, NegType)>)> = (0..pool.num_mentions())
            .into_par_iter()
            .filter(|&m| !pool.co_aliases(m).is_empty())
            .map(|m| {
                let q = pool.mention(m);
                let mut rng = crate::aliasdata::query_rng(seed, m);
                (q.to_string(), crate::aliasdata::all_negatives(&index, full, q, budget, &mut rng))
            })
            .collect();
        let mut bank = Self::new();
        for (q, negs) in rows {
            for (n, t) in negs {
                bank.insert(&q, &n, t);
            }
        }
        Ok(bank)
    }

    pub fn get(&self, query: &str, kind: NegType) -> &[String] {
        self.by_query.get(query).map_or(&[], |v| &v[type_slot(kind)])
    }

    pub fn num_queries(&self) -> usize {
        self.by_query.len()
    }
}

/// Draws `count` triples: an entity with at least two aliases uniformly, an
/// ordered pair of its aliases, a heuristic type uniformly among those
/// non-empty for the query, then a negative of that type uniformly.
pub fn sample_triples(graph: &AliasGraph, negatives: &NegativeBank, count: usize, seed: u64) -> Result<Vec<Triple>> {
    let eligible: Vec<usize> = (0..graph.num_entities()).filter(|&e| graph.aliases_of(e).len() >= 2).collect();
    let skipped = graph.num_entities() - eligible.len();
    if skipped > 0 {
        log::info!("{skipped} single-alias entities contribute no positives");
    }
    if eligible.is_empty() {
        return Err(Error::invalid("no entity has two aliases"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 20 * count + 1000 {
            if out.is_empty() {
                return Err(Error::invalid("negative bank has no entries for any sampled query"));
            }
            log::warn!("only {} of {count} triples could be drawn", out.len());
            break;
        }
        let e = *eligible.choose(&mut rng).unwrap();
        let pair: Vec<usize> = graph.aliases_of(e).choose_multiple(&mut rng, 2).copied().collect();
        let (q, p) = (graph.mention(pair[0]), graph.mention(pair[1]));
        let kinds: Vec<NegType> = NegType::ALL.into_iter().filter(|&t| !negatives.get(q, t).is_empty()).collect();
        let Some(&kind) = kinds.choose(&mut rng) else { continue };
        let n = negatives.get(q, kind).choose(&mut rng).unwrap();
        if n == q || graph.are_co_aliases(q, n) {
            continue;
        }
        out.push(Triple { q: q.to_string(), p: p.to_string(), n: n.clone() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// global gradient-norm clip
    pub clip_norm: f64,
    pub seed: u64,
    /// stop once this much wall time has passed
    pub time_limit: Option<Duration>,
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            seed: 0,
            time_limit: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.clip_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_map: Option<f64>,
    pub seconds: f64,
    pub steps: usize,
}

impl EpochStats {
    /// `epoch \t mean_loss \t dev_map \t wall_seconds`
    pub fn tsv_line(&self) -> String {
        let map = self.dev_map.map_or("-".to_string(), |m| format!("{m:.4}"));
        format!("{}\t{:.6}\t{map}\t{:.1}", self.epoch, self.mean_loss, self.seconds)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// best parameters by dev MAP, or the last ones without a dev set
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub steps: usize,
    pub hit_time_limit: bool,
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

/// Triple with its mentions encoded under the model vocabulary.
#[derive(Debug, Clone)]
pub struct EncodedTriple {
    pub q: Mention,
    pub p: Mention,
    pub n: Mention,
}

/// Owns parameters and optimizer state.
pub struct Trainer {
    params: ModelParams,
    cfg: TrainConfig,
    adam: Adam,
    steps: usize,
}

impl Trainer {
    pub fn new(params: ModelParams, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let zeros: Vec<Vec<f32>> = params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(Self { params, cfg, adam: Adam { m: zeros.clone(), v: zeros, t: 0 }, steps: 0 })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn encode(&self, t: &Triple) -> Result<EncodedTriple> {
        let (v, l) = (&self.params.vocab, self.params.config.max_len);
        Ok(EncodedTriple { q: v.mention(&t.q, l)?, p: v.mention(&t.p, l)?, n: v.mention(&t.n, l)? })
    }

    fn example(&self, t: &EncodedTriple) -> Result<(f64, Vec<Vec<f32>>)> {
        let mut tape = Tape::<f32>::new();
        let vars = self.params.bind(&mut tape, true);
        let sp = forward(&mut tape, &self.params, &vars, &t.q, &t.p)?.score;
        let sn = forward(&mut tape, &self.params, &vars, &t.q, &t.n)?.score;
        let loss = bpr_loss_on_tape(&mut tape, sp, sn)?;
        let value = tape.scalar(loss) as f64;
        if !value.is_finite() {
            log::error!("non-finite loss on triple ({:?}, {:?}, {:?})", t.q.text(), t.p.text(), t.n.text());
            return Err(Error::Numerical(format!(
                "non-finite loss on triple ({:?}, {:?}, {:?})",
                t.q.text(),
                t.p.text(),
                t.n.text()
            )));
        }
        let mut grads = tape.backward(loss)?;
        let per = vars
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, (_, t))| grads.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        Ok((value, per))
    }

    /// Mean loss and mean gradient over `batch`; examples run in parallel and
    /// are summed in batch order.
    pub fn batch_gradient(&self, batch: &[EncodedTriple]) -> Result<(f64, Vec<Vec<f32>>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let results: Vec<(f64, Vec<Vec<f32>>)> = batch.par_iter().map(|t| self.example(t)).collect::<Result<_>>()?;
        let mut total = 0.0;
        let mut sum: Vec<Vec<f32>> = self.params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        for (loss, g) in results {
            total += loss;
            for (s, x) in sum.iter_mut().zip(g) {
                s.iter_mut().zip(x).for_each(|(a, b)| *a += b);
            }
        }
        let scale = 1.0 / batch.len() as f32;
        sum.iter_mut().flatten().for_each(|x| *x *= scale);
        Ok((total / batch.len() as f64, sum))
    }

    /// One clipped Adam update; returns the batch loss before the update.
    pub fn step(&mut self, batch: &[EncodedTriple]) -> Result<f64> {
        let (loss, mut grads) = self.batch_gradient(batch)?;
        let norm = grads.iter().flatten().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical("non-finite gradient norm".into()));
        }
        if norm > self.cfg.clip_norm {
            let s = (self.cfg.clip_norm / norm) as f32;
            grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
        self.adam.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.adam.t);
        let c2 = 1.0 - b2.powi(self.adam.t);
        let lr = self.cfg.learning_rate;
        let eps = self.cfg.epsilon;
        for (((t, g), m), v) in self.params.tensors_mut().zip(&grads).zip(&mut self.adam.m).zip(&mut self.adam.v) {
            for (((w, &g), m), v) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = (b1 * *m as f64 + (1.0 - b1) * g as f64) as f32;
                *v = (b2 * *v as f64 + (1.0 - b2) * (g as f64).powi(2)) as f32;
                let mh = *m as f64 / c1;
                let vh = *v as f64 / c2;
                *w -= (lr * mh / (vh.sqrt() + eps)) as f32;
            }
        }
        self.steps += 1;
        Ok(loss)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Mean AP of `params` on `queries`.
pub fn dev_map(params: &ModelParams, queries: &[EvalQuery]) -> Result<f64> {
    Ok(evaluate(params, queries)?.map)
}

/// Minibatch training over shuffled `triples`, reporting each epoch to
/// `on_epoch`. With a dev set, the parameters with the best dev MAP are
/// returned.
pub fn train(
    triples: &[Triple],
    dev: Option<&[EvalQuery]>,
    config: &TrainConfig,
    params: ModelParams,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if triples.is_empty() {
        return Err(Error::invalid("no training triples"));
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(params, *config)?;
    let encoded: Vec<EncodedTriple> = triples.iter().map(|t| trainer.encode(t)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut hit_time_limit = false;
    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        let mut stop = false;
        for chunk in order.chunks(config.batch_size) {
            if config.time_limit.is_some_and(|t| start.elapsed() >= t) {
                hit_time_limit = true;
                stop = true;
                break;
            }
            if config.max_steps.is_some_and(|s| trainer.steps() >= s) {
                stop = true;
                break;
            }
            let batch: Vec<EncodedTriple> = chunk.iter().map(|&i| encoded[i].clone()).collect();
            total += trainer.step(&batch)? * batch.len() as f64;
            seen += batch.len();
        }
        if seen > 0 {
            let dev_map = dev.map(|d| dev_map(trainer.params(), d)).transpose()?;
            let stats = EpochStats {
                epoch,
                mean_loss: total / seen as f64,
                dev_map,
                seconds: start.elapsed().as_secs_f64(),
                steps: trainer.steps(),
            };
            on_epoch(&stats);
            history.push(stats);
            if let Some(m) = dev_map {
                if best.as_ref().is_none_or(|(b, _)| m > *b) {
                    best = Some((m, trainer.params().clone()));
                }
            }
        }
        if stop {
            break 'epochs;
        }
    }
    let steps = trainer.steps();
    let params = match best {
        Some((_, p)) => p,
        None => trainer.into_params(),
    };
    Ok(TrainOutcome { params, history, steps, hit_time_limit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpr_values() {
        assert!((bpr_loss(1.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bpr_loss(10.0, 0.0) < 5e-5);
        assert!(bpr_loss(0.0, 1e6).is_finite());
        assert!((bpr_loss(0.0, 1e6) - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn bpr_gradient_at_zero_margin() {
        let mut tape = Tape::<f64>::new();
        let sp = tape.param(crate::diffmath::Tensor::scalar(0.3));
        let sn = tape.param(crate::diffmath::Tensor::scalar(0.3));
        let l = bpr_loss_on_tape(&mut tape, sp, sn).unwrap();
        let g = tape.backward(l).unwrap();
        assert!((g.get(sp).unwrap()[0] + 0.5).abs() < 1e-12);
        assert!((g.get(sn).unwrap()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_entity_triples_are_exhaustive() {
        let g = AliasGraph::from_tsv("X\tA\nX\tB\nY\tC\n", "t").unwrap();
        let bank = NegativeBank::build(&g, &g, 10, 0).unwrap();
        let ts = sample_triples(&g, &bank, 50, 1).unwrap();
        for t in &ts {
            let ok = (t.q == "A" && t.p == "B" || t.q == "B" && t.p == "A") && t.n == "C";
            assert!(ok, "{t:?}");
        }
        assert_eq!(ts, sample_triples(&g, &bank, 50, 1).unwrap());
    }
}
