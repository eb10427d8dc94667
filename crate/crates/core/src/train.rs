//! Episodic optimization, early stopping, evaluation and gradient
//! verification.

use crate::corpus::Corpus;
use crate::encoder::EncoderBackend;
use crate::episodes::{sample_episode, EpisodeSpec, TestTask};
use crate::error::{Error, Result};
use crate::metrics::{
    bias_classification, weighted_metrics, ConfusionMatrix, CoreMetrics, MetricsReport,
};
use crate::protonet::{
    episode_gradients, episode_representations, EpisodeTensors, HeadConfig, HeadParams,
};
use crate::rng::{indexed_seed, seeded_rng, sub_seed};
use crate::similarity::{argmax_rows, score_matrix, SimilarityKind};
use crate::Utterance;

/// Adam optimizer state over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Optimization schedule for the head.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_episodes: usize,
    /// Validate every this many episodes.
    pub eval_every: usize,
    /// Non-improving validation rounds tolerated before stopping.
    pub patience: usize,
    /// Global gradient-norm ceiling. The harmonic fusion has poles near
    /// coordinate cancellation, so episode gradients occasionally spike by
    /// orders of magnitude; clipping keeps single episodes from derailing
    /// the run. `None` disables.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            max_episodes: 10_000,
            eval_every: 100,
            patience: 10,
            max_grad_norm: Some(10.0),
            seed: 0,
        }
    }
}

fn clip_grads(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            *g *= scale;
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "learning_rate, eval_every and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Embedding backend plus head configuration, the unit that training and
/// evaluation operate on.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub encoder: EncoderBackend,
    pub l_seq: usize,
    pub head: HeadConfig,
}

impl Pipeline {
    /// Embed a support/query task into head-ready tensors.
    pub fn episode_tensors(
        &self,
        support: &[(Utterance, usize)],
        query: &[(Utterance, usize)],
        n_classes: usize,
    ) -> Result<EpisodeTensors> {
        let support_refs: Vec<&Utterance> = support.iter().map(|(u, _)| u).collect();
        let query_refs: Vec<&Utterance> = query.iter().map(|(u, _)| u).collect();
        let support_embs = self.encoder.encode_batch(&support_refs, self.l_seq)?;
        let query_embs = self.encoder.encode_batch(&query_refs, self.l_seq)?;

        let mut grouped = vec![Vec::new(); n_classes];
        for ((_, class_idx), emb) in support.iter().zip(support_embs) {
            grouped[*class_idx].push(emb);
        }
        Ok(EpisodeTensors {
            support: grouped,
            query: query_embs,
            query_labels: query.iter().map(|(_, c)| *c).collect(),
        })
    }
}

/// One logged training step; validation fields are present on evaluation
/// episodes only.
#[derive(Debug, Clone, Copy)]
pub struct HistoryRow {
    pub episode: usize,
    pub ce: f64,
    pub ucl1: f64,
    pub ucl2: f64,
    pub total: f64,
    pub val_accuracy: Option<f64>,
    pub val_wf1: Option<f64>,
}

/// Render history as `episode,ce,ucl1,ucl2,total,val_accuracy,val_wf1` CSV.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("episode,ce,ucl1,ucl2,total,val_accuracy,val_wf1\n");
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.episode,
            r.ce,
            r.ucl1,
            r.ucl2,
            r.total,
            opt(r.val_accuracy),
            opt(r.val_wf1),
        ));
    }
    out
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation round (or the final parameters
    /// when no validation task was supplied).
    pub params: HeadParams,
    pub history: Vec<HistoryRow>,
    pub best_val_f1: Option<f64>,
    pub episodes_run: usize,
}

/// Mean core metrics over several fixed tasks (distinct support draws give
/// a steadier estimate than any single draw).
pub fn evaluate_mean(
    pipeline: &Pipeline,
    params: &HeadParams,
    tasks: &[TestTask],
    kind: SimilarityKind,
) -> Result<CoreMetrics> {
    assert!(!tasks.is_empty());
    let mut acc = 0.0;
    let mut wp = 0.0;
    let mut wr = 0.0;
    let mut wf1 = 0.0;
    for task in tasks {
        let (core, _) = evaluate(pipeline, params, task, kind)?;
        acc += core.accuracy;
        wp += core.weighted_precision;
        wr += core.weighted_recall;
        wf1 += core.weighted_f1;
    }
    let n = tasks.len() as f64;
    Ok(CoreMetrics {
        accuracy: acc / n,
        weighted_precision: wp / n,
        weighted_recall: wr / n,
        weighted_f1: wf1 / n,
    })
}

/// Episodic training with periodic validation and early stopping. Episodes
/// come from `train_classes` of `corpus`; validation (when `val_tasks` is
/// non-empty) scores the fixed tasks with cosine, averages their weighted
/// F1, and keeps the parameters of the best round. Deterministic given the
/// seeds in `config`/`spec`.
pub fn train(
    pipeline: &Pipeline,
    corpus: &Corpus,
    train_classes: &[String],
    val_tasks: &[TestTask],
    spec: &EpisodeSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    pipeline.head.validate()?;

    let eligible: Vec<String> = train_classes
        .iter()
        .filter(|l| {
            corpus.per_class_counts.get(*l).copied().unwrap_or(0) >= spec.k_shot + spec.q_query
        })
        .cloned()
        .collect();
    if eligible.len() < spec.n_way {
        return Err(Error::InsufficientClasses {
            needed: spec.n_way,
            available: eligible.len(),
        });
    }

    let mut params = HeadParams::init(&pipeline.head, sub_seed(config.seed, "head-init"));
    let mut best_params = params.clone();
    let mut best_f1: Option<f64> = None;
    let mut stale_rounds = 0usize;
    let mut adam = Adam::new(params.flatten().len());
    let mut history = Vec::new();
    let mut episodes_run = 0usize;

    for episode_idx in 0..config.max_episodes {
        let mut sample_rng = seeded_rng(indexed_seed(spec.seed, "episode", episode_idx as u64));
        let episode = sample_episode(corpus, &eligible, spec, &mut sample_rng)?;
        let tensors =
            pipeline.episode_tensors(&episode.support, &episode.query, episode.class_map.len())?;
        let mut dropout_rng =
            seeded_rng(indexed_seed(config.seed, "dropout", episode_idx as u64));
        let (out, grads) =
            episode_gradients(&tensors, &params, &pipeline.head, Some(&mut dropout_rng))?;

        let mut flat = params.flatten();
        let mut grad_flat = grads.flatten();
        if let Some(max_norm) = config.max_grad_norm {
            clip_grads(&mut grad_flat, max_norm);
        }
        adam.step(&mut flat, &grad_flat, config.learning_rate);
        params.set_from_flat(&flat);
        episodes_run += 1;

        let mut row = HistoryRow {
            episode: episode_idx,
            ce: out.loss.ce,
            ucl1: out.loss.ucl1,
            ucl2: out.loss.ucl2,
            total: out.loss.total,
            val_accuracy: None,
            val_wf1: None,
        };

        if !val_tasks.is_empty() && (episode_idx + 1) % config.eval_every == 0 {
            let core = evaluate_mean(pipeline, &params, val_tasks, SimilarityKind::Cosine)?;
            row.val_accuracy = Some(core.accuracy);
            row.val_wf1 = Some(core.weighted_f1);
            if best_f1.is_none_or(|b| core.weighted_f1 > b) {
                best_f1 = Some(core.weighted_f1);
                best_params = params.clone();
                stale_rounds = 0;
            } else {
                stale_rounds += 1;
            }
            if stale_rounds >= config.patience {
                history.push(row);
                break;
            }
        }
        history.push(row);
    }

    let params = if best_f1.is_some() { best_params } else { params };
    Ok(TrainOutcome {
        params,
        history,
        best_val_f1: best_f1,
        episodes_run,
    })
}

/// Score a fixed task: prototypes from its support set, every query scored
/// with the requested similarity (scaled by the metric temperature, which
/// never changes the argmax), then the confusion matrix and core measures.
pub fn evaluate(
    pipeline: &Pipeline,
    params: &HeadParams,
    task: &TestTask,
    kind: SimilarityKind,
) -> Result<(CoreMetrics, ConfusionMatrix)> {
    let tensors = pipeline.episode_tensors(&task.support, &task.query, task.class_map.len())?;
    let (prototypes, query_reps) = episode_representations(&tensors, params, &pipeline.head)?;
    let scores =
        score_matrix(kind, &query_reps, &prototypes)? / pipeline.head.metric_temperature;
    let predictions = argmax_rows(&scores);

    let mut confusion = ConfusionMatrix::new(task.class_map.clone());
    for (i, (_, true_class)) in task.query.iter().enumerate() {
        confusion.record(*true_class, predictions[i]);
    }
    Ok((weighted_metrics(&confusion)?, confusion))
}

/// Run metadata needed to fill a [`MetricsReport`].
#[derive(Debug, Clone)]
pub struct RunInfo {
    pub model: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub seen_fraction: f64,
    pub seed: u64,
}

/// [`evaluate`] plus bias categorization and run metadata.
pub fn evaluate_report(
    pipeline: &Pipeline,
    params: &HeadParams,
    task: &TestTask,
    kind: SimilarityKind,
    info: &RunInfo,
) -> Result<MetricsReport> {
    let (core, _) = evaluate(pipeline, params, task, kind)?;
    let (bias_category, bias_error_type) =
        bias_classification(core.weighted_precision, core.weighted_recall);
    Ok(MetricsReport {
        accuracy: core.accuracy,
        weighted_precision: core.weighted_precision,
        weighted_recall: core.weighted_recall,
        weighted_f1: core.weighted_f1,
        bias_category,
        bias_error_type,
        model: info.model.clone(),
        similarity: kind,
        n_way: info.n_way,
        k_shot: info.k_shot,
        seen_fraction: info.seen_fraction,
        seed: info.seed,
        t: pipeline.head.metric_temperature,
        tau: pipeline.head.ucl_temperature,
    })
}

/// Worst relative disagreement between `analytic` and central finite
/// differences of `loss` over every parameter. Gradient magnitudes below
/// `1e-4` are compared absolutely at the same tolerance scale.
pub fn grad_check(
    params: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    step: f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let original = probe[i];
        probe[i] = original + step;
        let plus = loss(&probe);
        probe[i] = original - step;
        let minus = loss(&probe);
        probe[i] = original;
        let fd = (plus - minus) / (2.0 * step);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-4);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut params = vec![5.0, -3.0, 2.0];
        let mut adam = Adam::new(3);
        for _ in 0..2000 {
            let grads: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            adam.step(&mut params, &grads, 0.05);
        }
        assert!(params.iter().all(|p| p.abs() < 1e-3), "{params:?}");
    }

    #[test]
    fn grad_check_exact_on_quadratics() {
        let params = vec![1.5, -0.25, 3.0];
        let loss = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
        let analytic: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
        let err = grad_check(&params, &analytic, loss, 1e-5);
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn grad_check_flags_corrupted_gradients() {
        let params = vec![1.5, -0.25, 3.0];
        let loss = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
        let mut corrupted: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
        corrupted[1] *= 1.5;
        let err = grad_check(&params, &corrupted, loss, 1e-5);
        assert!(err > 1e-2, "err {err}");
    }

    #[test]
    fn history_csv_header_and_blank_validation_fields() {
        let rows = vec![
            HistoryRow {
                episode: 0,
                ce: 1.5,
                ucl1: 0.5,
                ucl2: 0.25,
                total: 2.25,
                val_accuracy: None,
                val_wf1: None,
            },
            HistoryRow {
                episode: 1,
                ce: 1.0,
                ucl1: 0.5,
                ucl2: 0.25,
                total: 1.75,
                val_accuracy: Some(0.5),
                val_wf1: Some(0.4),
            },
        ];
        let csv = history_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "episode,ce,ucl1,ucl2,total,val_accuracy,val_wf1"
        );
        assert_eq!(lines.next().unwrap(), "0,1.5,0.5,0.25,2.25,,");
        assert_eq!(lines.next().unwrap(), "1,1,0.5,0.25,1.75,0.5,0.4");
    }
}
