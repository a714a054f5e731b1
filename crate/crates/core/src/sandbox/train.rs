//! Staged adversarial training and the embedding probe.

use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{cross_entropy, AdvDataPoint, AdvModel, Dims, Head, Objective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// One joint-training run per value.
    pub lambdas: Vec<f64>,
    /// Checkpoints per run, evenly spaced over the joint stage's steps.
    pub checkpoints: usize,
    pub utility_epochs: usize,
    pub adversary_epochs: usize,
    pub joint_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub margin: f64,
    /// Train the adversary on equal numbers of labeled and unlabeled pairs.
    pub balanced: bool,
    pub seed: u64,
    pub hidden: usize,
    pub embed: usize,
    pub adv_hidden: usize,
    pub probe_epochs: usize,
    pub probe_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.5],
            checkpoints: 20,
            utility_epochs: 40,
            adversary_epochs: 20,
            joint_epochs: 40,
            learning_rate: 0.05,
            weight_decay: 0.0,
            batch_size: 16,
            margin: 1.0,
            balanced: true,
            seed: 42,
            hidden: 32,
            embed: 16,
            adv_hidden: 16,
            probe_epochs: 60,
            probe_learning_rate: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lambdas.is_empty() {
            return bad("lambda grid is empty".into());
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return bad(format!("lambda must be finite and >= 0, got {l}"));
        }
        if self.checkpoints == 0 {
            return bad("checkpoint count must be at least 1".into());
        }
        if self.joint_epochs == 0 {
            return bad("joint_epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.hidden == 0 || self.embed == 0 || self.adv_hidden == 0 {
            return bad("batch size and layer widths must be positive".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("probe_learning_rate", self.probe_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        Ok(())
    }

    pub fn dims(&self, input: usize) -> Dims {
        Dims {
            input,
            hidden: self.hidden,
            embed: self.embed,
            adv_hidden: self.adv_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// 1-based position among the run's checkpoints.
    pub index: usize,
    /// Joint-stage optimizer steps taken.
    pub step: usize,
    pub model: AdvModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRun {
    pub lambda: f64,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    /// After the utility stage.
    pub utility: AdvModel,
    /// After the adversary stage (`f`, `g` unchanged from `utility`).
    pub adversary: AdvModel,
    pub runs: Vec<LambdaRun>,
}

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Pair indices for one epoch: every pair, or the minority class (by
/// whether either side is labeled) plus an equal sample of the majority.
fn epoch_order(rng: &mut ChaCha8Rng, labeled: &[usize], unlabeled: &[usize], balanced: bool) -> Vec<usize> {
    let mut order: Vec<usize> = if balanced {
        let (minority, majority) = if labeled.len() <= unlabeled.len() {
            (labeled, unlabeled)
        } else {
            (unlabeled, labeled)
        };
        let picked = sample(rng, majority.len(), minority.len());
        minority.iter().copied().chain(picked.iter().map(|i| majority[i])).collect()
    } else {
        labeled.iter().chain(unlabeled).copied().collect()
    };
    order.shuffle(rng);
    order
}

struct Sgd<'a> {
    data: &'a [AdvDataPoint],
    cfg: &'a TrainConfig,
}

impl Sgd<'_> {
    fn step(&self, model: &mut AdvModel, idx: &[usize], objective: Objective, stage: u8, step: usize) -> Result<()> {
        let batch: Vec<AdvDataPoint> = idx.iter().map(|&i| self.data[i].clone()).collect();
        let (grad, _) = model
            .gradient(&batch, self.cfg.margin, objective)
            .map_err(|e| Error::Numeric(format!("stage {stage}, step {step}: {e}")))?;
        let [enc, util, adv] = model.blocks();
        let ranges = match objective {
            Objective::Utility => vec![enc, util],
            Objective::Adversary => vec![adv],
            Objective::Joint => vec![enc, util, adv],
        };
        let (lr, wd) = (self.cfg.learning_rate, self.cfg.weight_decay);
        for r in ranges {
            for i in r {
                let p = &mut model.params[i];
                *p -= lr * (grad[i] + wd * *p);
            }
        }
        Ok(())
    }
}

/// Runs the three training stages: ranking loss on `f`,`g`; adversary `h`
/// alone on frozen `f`,`g`; then joint training through the gradient
/// reversal layer, once per value of the λ grid.
///
/// A supplied `pretrained` model replaces the first stage.
pub fn train(
    data: &[AdvDataPoint],
    input_dim: usize,
    cfg: &TrainConfig,
    pretrained: Option<&AdvModel>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let any = |v: u8| data.iter().any(|p| p.pos_label == v || p.neg_label == v);
    if data.is_empty() || !any(0) || !any(1) {
        return Err(Error::Data("training data must contain both protected label classes".into()));
    }
    let (labeled, unlabeled): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| data[i].gendered());
    let sgd = Sgd { data, cfg };
    let bs = cfg.batch_size;

    let utility = match pretrained {
        Some(m) => {
            if m.dims != cfg.dims(input_dim) {
                return Err(Error::Config(format!(
                    "pretrained model has shape {:?}, config expects {:?}",
                    m.dims,
                    cfg.dims(input_dim)
                )));
            }
            m.clone()
        }
        None => {
            let mut model = AdvModel::new(cfg.dims(input_dim), 0.0, &mut stage_rng(cfg.seed, 0))?;
            let mut rng = stage_rng(cfg.seed, 1);
            let mut step = 0;
            for _ in 0..cfg.utility_epochs {
                let order = epoch_order(&mut rng, &labeled, &unlabeled, false);
                for chunk in order.chunks(bs) {
                    step += 1;
                    sgd.step(&mut model, chunk, Objective::Utility, 1, step)?;
                }
            }
            model
        }
    };

    let mut adversary = utility.clone();
    let mut rng = stage_rng(cfg.seed, 2);
    let mut step = 0;
    for _ in 0..cfg.adversary_epochs {
        let order = epoch_order(&mut rng, &labeled, &unlabeled, cfg.balanced);
        for chunk in order.chunks(bs) {
            step += 1;
            sgd.step(&mut adversary, chunk, Objective::Adversary, 2, step)?;
        }
    }

    let per_epoch = epoch_order(&mut stage_rng(cfg.seed, 3), &labeled, &unlabeled, cfg.balanced)
        .len()
        .div_ceil(bs);
    let total = per_epoch * cfg.joint_epochs;
    if cfg.checkpoints > total {
        return Err(Error::Config(format!(
            "{} checkpoints requested but the joint stage has only {total} steps",
            cfg.checkpoints
        )));
    }
    let marks: Vec<usize> = (1..=cfg.checkpoints).map(|i| (total * i).div_ceil(cfg.checkpoints)).collect();

    let mut runs = Vec::with_capacity(cfg.lambdas.len());
    for &lambda in &cfg.lambdas {
        let mut model = adversary.clone();
        model.grl = lambda;
        let mut rng = stage_rng(cfg.seed, 3);
        let mut checkpoints = Vec::with_capacity(cfg.checkpoints);
        let mut step = 0;
        for _ in 0..cfg.joint_epochs {
            let order = epoch_order(&mut rng, &labeled, &unlabeled, cfg.balanced);
            for chunk in order.chunks(bs) {
                step += 1;
                sgd.step(&mut model, chunk, Objective::Joint, 3, step)?;
                if marks.get(checkpoints.len()) == Some(&step) {
                    checkpoints.push(Checkpoint {
                        index: checkpoints.len() + 1,
                        step,
                        model: model.clone(),
                    });
                }
            }
        }
        runs.push(LambdaRun { lambda, checkpoints });
    }
    Ok(TrainOutput {
        utility,
        adversary,
        runs,
    })
}

/// Settings of the probe classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl ProbeConfig {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        Self {
            hidden: cfg.adv_hidden,
            epochs: cfg.probe_epochs,
            learning_rate: cfg.probe_learning_rate,
            batch_size: cfg.batch_size,
        }
    }
}

/// Accuracy of a fresh classifier (the adversary's architecture) trained to
/// predict the label from fixed embeddings.
///
/// Classes are balanced by downsampling, then split half for training and
/// half for measuring accuracy.
pub fn probe_embeddings(items: &[(Vec<f64>, u8)], cfg: &ProbeConfig, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ones, mut zeros): (Vec<usize>, Vec<usize>) = (0..items.len()).partition(|&i| items[i].1 == 1);
    let n = ones.len().min(zeros.len());
    if n < 2 {
        return Err(Error::Data("probe needs at least two items of each label".into()));
    }
    ones.shuffle(&mut rng);
    zeros.shuffle(&mut rng);
    ones.truncate(n);
    zeros.truncate(n);
    let half = n / 2;
    let mut train: Vec<usize> = ones[..half].iter().chain(&zeros[..half]).copied().collect();
    let test: Vec<usize> = ones[half..].iter().chain(&zeros[half..]).copied().collect();

    let embed = items[0].0.len();
    let head = Head {
        embed,
        hidden: cfg.hidden,
    };
    let mut params = vec![0.0; head.len()];
    head.init(&mut rng, &mut params);
    let mut grad = vec![0.0; params.len()];
    for _ in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for chunk in train.chunks(cfg.batch_size.max(1)) {
            grad.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &i in chunk {
                let (z, label) = (&items[i].0, items[i].1);
                let (hidden, probs) = head.forward(&params, z);
                loss += cross_entropy(probs, label);
                head.backward(&params, z, &hidden, probs, label, scale, &mut grad);
            }
            if !loss.is_finite() {
                return Err(Error::Numeric("probe loss is not finite".into()));
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let probs = head.forward(&params, &items[i].0).1;
            u8::from(probs[1] > probs[0]) == items[i].1
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Probe accuracy on the model's embeddings of held-out pairs.
pub fn probe_adversary(model: &AdvModel, heldout: &[AdvDataPoint], cfg: &ProbeConfig, seed: u64) -> Result<f64> {
    let items: Vec<(Vec<f64>, u8)> = heldout
        .iter()
        .flat_map(|p| [(model.embed(&p.pos), p.pos_label), (model.embed(&p.neg), p.neg_label)])
        .collect();
    probe_embeddings(&items, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::AttributeConfig;
    use crate::sandbox::data::{synth_corpus, CorpusConfig};
    use rand::Rng;

    fn small() -> (crate::sandbox::data::SynthCorpus, TrainConfig) {
        let corpus = synth_corpus(
            &CorpusConfig {
                n_queries: 40,
                docs_per_query: 10,
                bias_rate: 0.3,
                heldout_fraction: 0.5,
            },
            &AttributeConfig::default_gender(),
            5,
        )
        .unwrap();
        let cfg = TrainConfig {
            lambdas: vec![0.0, 0.8],
            checkpoints: 4,
            utility_epochs: 3,
            adversary_epochs: 3,
            joint_epochs: 3,
            hidden: 6,
            embed: 4,
            adv_hidden: 3,
            ..TrainConfig::default()
        };
        (corpus, cfg)
    }

    #[test]
    fn training_is_deterministic_with_spaced_checkpoints() {
        let (c, cfg) = small();
        let dim = c.vocabulary.input_dim();
        let a = train(&c.train, dim, &cfg, None).unwrap();
        let b = train(&c.train, dim, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 2);
        for run in &a.runs {
            assert_eq!(run.checkpoints.len(), 4);
            let steps: Vec<usize> = run.checkpoints.iter().map(|c| c.step).collect();
            assert!(steps.windows(2).all(|w| w[0] < w[1]));
            assert!(run.checkpoints.iter().all(|c| c.model.grl == run.lambda));
        }
    }

    #[test]
    fn adversary_stage_freezes_encoder_and_ranker() {
        let (c, cfg) = small();
        let out = train(&c.train, c.vocabulary.input_dim(), &cfg, None).unwrap();
        let [enc, util, adv] = out.utility.blocks();
        let bits = |m: &AdvModel, r: std::ops::Range<usize>| -> Vec<u64> { m.params[r].iter().map(|x| x.to_bits()).collect() };
        assert_eq!(bits(&out.utility, enc.clone()), bits(&out.adversary, enc));
        assert_eq!(bits(&out.utility, util.clone()), bits(&out.adversary, util));
        assert_ne!(bits(&out.utility, adv.clone()), bits(&out.adversary, adv));
    }

    #[test]
    fn pretrained_model_skips_utility_stage() {
        let (c, cfg) = small();
        let dim = c.vocabulary.input_dim();
        let first = train(&c.train, dim, &cfg, None).unwrap();
        let again = train(&c.train, dim, &cfg, Some(&first.utility)).unwrap();
        assert_eq!(first, again);
        let wrong = AdvModel::new(cfg.dims(dim + 1), 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(train(&c.train, dim, &cfg, Some(&wrong)).is_err());
    }

    #[test]
    fn single_class_data_is_rejected() {
        let (mut c, cfg) = small();
        for p in &mut c.train {
            p.pos_label = 0;
            p.neg_label = 0;
        }
        assert!(matches!(train(&c.train, c.vocabulary.input_dim(), &cfg, None), Err(Error::Data(_))));
    }

    #[test]
    fn divergence_reports_stage_and_step() {
        let (mut c, cfg) = small();
        c.train[3].pos[0].1 = f64::NAN;
        let err = train(&c.train, c.vocabulary.input_dim(), &cfg, None).unwrap_err();
        assert!(err.to_string().contains("stage 1, step"), "{err}");
    }

    #[test]
    fn too_many_checkpoints_is_a_config_error() {
        let (c, mut cfg) = small();
        cfg.checkpoints = 10_000;
        assert_eq!(train(&c.train, c.vocabulary.input_dim(), &cfg, None).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn probe_on_random_embeddings_is_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let items: Vec<(Vec<f64>, u8)> = (0..4000)
            .map(|i| ((0..8).map(|_| rng.random_range(-1.0..1.0)).collect(), (i % 2) as u8))
            .collect();
        let cfg = ProbeConfig {
            hidden: 8,
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 16,
        };
        let acc = probe_embeddings(&items, &cfg, 1).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn probe_detects_separable_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let items: Vec<(Vec<f64>, u8)> = (0..1000)
            .map(|i| {
                let l = (i % 2) as u8;
                let mut z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                z[0] = if l == 1 { 0.8 } else { -0.8 };
                (z, l)
            })
            .collect();
        let cfg = ProbeConfig {
            hidden: 4,
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 16,
        };
        assert!(probe_embeddings(&items, &cfg, 2).unwrap() > 0.95);
    }
}
