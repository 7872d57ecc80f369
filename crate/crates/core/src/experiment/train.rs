use super::metrics::soft_vote;
use crate::corpus::Label;
use crate::featurizer::FeatureSegment;
use crate::nn::{one_hot, EpochRecord, LrScheduler, Mode, Model, ModelCheckpoint, Tensor, TrainConfig};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// One classifier input: a `K x B` map per network branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub speaker_id: String,
    pub label: Label,
    pub inputs: Vec<Vec<f32>>,
}

/// Examples sharing one input geometry and branch count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub n_branches: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Pairs segments across representations by position. Every list must
    /// describe the same utterances and segment indices in the same order.
    pub fn from_segments(per_branch: &[&[FeatureSegment]]) -> Result<Self> {
        let first = per_branch
            .first()
            .ok_or_else(|| Error::Shape("dataset needs at least one representation".into()))?;
        let (height, width) = first
            .first()
            .map(|s| (s.values.rows(), s.values.cols()))
            .unwrap_or((0, 0));
        let mut examples = Vec::with_capacity(first.len());
        for (i, seg) in first.iter().enumerate() {
            let mut inputs = Vec::with_capacity(per_branch.len());
            for list in per_branch {
                let s = list
                    .get(i)
                    .ok_or_else(|| Error::Shape("representation lists differ in length".into()))?;
                if s.utterance_id != seg.utterance_id || s.index != seg.index || s.speaker_id != seg.speaker_id {
                    return Err(Error::Shape(format!(
                        "segment {i}: {}#{} does not pair with {}#{}",
                        s.utterance_id, s.index, seg.utterance_id, seg.index
                    )));
                }
                if (s.values.rows(), s.values.cols()) != (height, width) {
                    return Err(Error::DimensionMismatch(format!(
                        "segment {}x{} in a {height}x{width} dataset",
                        s.values.rows(),
                        s.values.cols()
                    )));
                }
                inputs.push(s.values.iter().map(|&v| v as f32).collect());
            }
            examples.push(Example {
                speaker_id: seg.speaker_id.clone(),
                label: seg.label,
                inputs,
            });
        }
        if per_branch.iter().any(|l| l.len() != first.len()) {
            return Err(Error::Shape("representation lists differ in length".into()));
        }
        Ok(Self {
            height,
            width,
            n_branches: per_branch.len(),
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.examples.iter().map(|e| e.speaker_id.as_str()).collect()
    }

    /// Examples of the listed speakers, in dataset order.
    pub fn subset(&self, speakers: &[String]) -> Dataset {
        let keep: BTreeSet<&str> = speakers.iter().map(|s| s.as_str()).collect();
        Dataset {
            height: self.height,
            width: self.width,
            n_branches: self.n_branches,
            examples: self
                .examples
                .iter()
                .filter(|e| keep.contains(e.speaker_id.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Branch inputs and one-hot targets for the given examples.
    pub fn batch(&self, idx: &[usize]) -> (Vec<Tensor<f32>>, Tensor<f32>) {
        let item = self.height * self.width;
        let inputs = (0..self.n_branches)
            .map(|b| {
                let mut data = Vec::with_capacity(idx.len() * item);
                for &i in idx {
                    data.extend_from_slice(&self.examples[i].inputs[b]);
                }
                Tensor::from_vec([idx.len(), 1, self.height, self.width], data).expect("consistent dataset")
            })
            .collect();
        let classes: Vec<usize> = idx.iter().map(|&i| self.examples[i].label.index()).collect();
        (inputs, one_hot(&classes, 2))
    }
}

const EVAL_BATCH: usize = 256;

/// Mean cross-entropy over a dataset in evaluation mode.
pub fn evaluate_loss(model: &mut Model<f32>, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(chunk);
        total += model.loss(&x, &y, &mut Mode::Eval)? * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Dysarthric-class probability of every example, evaluation mode.
pub fn predict_probs(model: &mut Model<f32>, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk);
        let p = model.predict(&x)?;
        out.extend((0..chunk.len()).map(|s| p.item(s)[Label::Dysarthric.index()] as f64));
    }
    Ok(out)
}

/// Mini-batch index lists for one epoch. A trailing batch of one example
/// joins the previous batch, since batch normalization cannot train on it.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Trains with SGD on shuffled mini-batches, evaluating the dev loss after
/// every epoch. The learning rate is halved when the dev loss stalls and
/// training stops when it falls below the minimum or after `max_epochs`.
/// Returns the final-epoch model and its history.
pub fn train_model(
    cfg: &TrainConfig,
    mut model: Model<f32>,
    train: &Dataset,
    dev: &Dataset,
) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    if train.len() < 2 || dev.is_empty() {
        return Err(Error::Training(format!(
            "need at least 2 training and 1 dev segments, got {} and {}",
            train.len(),
            dev.len()
        )));
    }
    if let Some(s) = train.speakers().intersection(&dev.speakers()).next() {
        return Err(Error::Training(format!(
            "speaker {s} appears in both train and dev data"
        )));
    }
    if train.n_branches != model.spec().n_branches() || dev.n_branches != train.n_branches {
        return Err(Error::Shape("dataset and model branch counts differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let baseline = evaluate_loss(&mut model, dev)?;
    let mut sched = LrScheduler::new(cfg, baseline);
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr();
        let mut total = 0.0;
        for idx in epoch_batches(train.len(), cfg.batch_size, &mut rng) {
            let (x, y) = train.batch(&idx);
            let loss = model.train_batch(&x, &y, lr, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    detail: format!("training batch of {} at learning rate {lr}", idx.len()),
                });
            }
            total += loss * idx.len() as f64;
        }
        let dev_loss = evaluate_loss(&mut model, dev)?;
        if !dev_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: "dev loss".into(),
            });
        }
        let train_loss = total / train.len() as f64;
        log::debug!("epoch {epoch}: train {train_loss:.4} dev {dev_loss:.4} lr {lr:e}");
        history.push(EpochRecord {
            train_loss,
            dev_loss,
            lr,
        });
        sched.update_lr(dev_loss);
        if sched.exhausted() {
            break;
        }
    }
    let epochs = history.len() as u32;
    Ok(ModelCheckpoint::from_model(
        &model,
        sched.lr(),
        epochs,
        cfg.seed,
        history,
    ))
}

/// Soft-voted score of one speaker from that speaker's examples.
pub fn speaker_score(model: &mut Model<f32>, speaker: &Dataset) -> Result<f64> {
    soft_vote(&predict_probs(model, speaker)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerScore {
    pub speaker_id: String,
    pub label: Label,
    pub score: f64,
}

/// Soft-voted score of every speaker in the dataset, in speaker-id order.
pub fn speaker_scores(model: &mut Model<f32>, data: &Dataset) -> Result<Vec<SpeakerScore>> {
    let probs = predict_probs(model, data)?;
    let mut per: BTreeMap<&str, (Label, Vec<f64>)> = BTreeMap::new();
    for (e, p) in data.examples.iter().zip(probs) {
        per.entry(&e.speaker_id)
            .or_insert_with(|| (e.label, Vec::new()))
            .1
            .push(p);
    }
    per.into_iter()
        .map(|(s, (label, p))| {
            Ok(SpeakerScore {
                speaker_id: s.to_string(),
                label,
                score: soft_vote(&p)?,
            })
        })
        .collect()
}
