//! Training and evaluation loops for every task kind, parameterized by
//! [`RunConfig`], plus checkpoint assembly and restore.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::config::{FeatureKind, RunConfig, TaskKind};
use crate::data::{load_edge_list, load_labels, load_matrix_pairs, load_triples, Vocab};
use crate::decoder::{edge_matrix, node_matrix, Decoder, MlpHead};
use crate::encoder::Encoder;
use crate::error::{Result, UgnError};
use crate::graph::Graph;
use crate::loss::{total_loss, UNKNOWN_LABEL};
use crate::metrics::{argmax, auprc, classification_metrics, pearson_matrices, MetricReport};
use crate::mtcm::{compute_mtcm, difference_matrix, Mtcm, TranslationModel, TranslationPair};
use crate::optim::Adam;
use crate::pipelines::{few_shot_subsample, kg_entity_features, KgTriple};
use crate::supernode::synthesize_features;
use crate::tensor::Tensor;

/// Classification head over latents: the conv decoder on intermediate
/// matrices, or the ablation MLP over raw latents / latent products.
#[derive(Debug, Clone)]
pub enum Head {
    Conv(Decoder),
    Mlp(MlpHead),
}

/// Encoder plus classification head; used by every non-translation task.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub encoder: Encoder,
    pub head: Head,
}

impl ClassifierModel {
    pub fn init(
        input_dim: usize,
        classes: usize,
        cfg: &RunConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&cfg.encoder_dims);
        let encoder = Encoder::init(&dims, rng)?;
        let latent = encoder.latent_dim();
        let head = if cfg.mlp_head {
            Head::Mlp(MlpHead::init(latent, &cfg.decoder_hidden, classes, rng)?)
        } else {
            Head::Conv(Decoder::init(
                latent,
                &cfg.decoder_channels,
                &cfg.decoder_hidden,
                classes,
                rng,
            )?)
        };
        Ok(ClassifierModel { encoder, head })
    }

    pub fn classes(&self) -> usize {
        match &self.head {
            Head::Conv(d) => d.classes(),
            Head::Mlp(m) => m.classes(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.encoder.weights().iter().collect();
        match &self.head {
            Head::Conv(d) => out.extend(d.tensors()),
            Head::Mlp(m) => out.extend(m.tensors()),
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.encoder.weights_mut().iter_mut());
        match &mut self.head {
            Head::Conv(d) => out.extend(d.tensors_mut()),
            Head::Mlp(m) => out.extend(m.tensors_mut()),
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.encoder.layer_count())
            .map(|i| format!("enc.{i}"))
            .collect();
        let head_count = match &self.head {
            Head::Conv(d) => d.tensors().len(),
            Head::Mlp(m) => m.tensors().len(),
        };
        names.extend((0..head_count).map(|i| format!("head.{i}")));
        names
    }

    pub fn register<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors().iter().map(|t| tape.param((*t).clone())).collect()
    }

    fn encoder_var_count(&self) -> usize {
        self.encoder.layer_count()
    }

    /// Logits for one node from the latent matrix.
    pub fn node_logits<'t>(
        &self,
        latents: Var<'t>,
        node: usize,
        vars: &[Var<'t>],
    ) -> Result<Var<'t>> {
        let l = latents.row(node)?;
        let head_vars = &vars[self.encoder_var_count()..];
        match &self.head {
            Head::Conv(d) => d.forward(node_matrix(l)?, head_vars),
            Head::Mlp(m) => m.forward(l, None, head_vars),
        }
    }

    /// Logits for one node pair from the latent matrix.
    pub fn edge_logits<'t>(
        &self,
        latents: Var<'t>,
        u: usize,
        v: usize,
        vars: &[Var<'t>],
    ) -> Result<Var<'t>> {
        let lu = latents.row(u)?;
        let lv = latents.row(v)?;
        let head_vars = &vars[self.encoder_var_count()..];
        match &self.head {
            Head::Conv(d) => d.forward(edge_matrix(lu, lv)?, head_vars),
            Head::Mlp(m) => m.forward(lu, Some(lv), head_vars),
        }
    }
}

/// Training result: final checkpoint, per-epoch loss logs, and the final
/// evaluation metrics.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epoch_logs: Vec<MetricReport>,
    pub metrics: MetricReport,
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(UgnError::Training(format!(
            "non-finite loss {loss} at epoch {epoch}"
        )));
    }
    Ok(())
}

fn subsample<T: Copy>(items: &[T], cap: usize, rng: &mut impl Rng) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(rng);
    idx.truncate(cap);
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i]).collect()
}

fn build_features(cfg: &RunConfig, g: &Graph, rng: &mut impl Rng) -> Result<Tensor> {
    match cfg.features {
        FeatureKind::OneHot => Ok(Tensor::identity(g.node_count())),
        FeatureKind::Supernode => Ok(synthesize_features(g, cfg.supernodes, cfg.rand_dim, rng)?
            .into_tensor()),
    }
}

fn epoch_report(epoch: usize, supervised: f64, unsupervised: f64) -> MetricReport {
    let mut r = MetricReport::new();
    r.push("epoch", epoch as f64);
    r.push("loss_supervised", supervised);
    r.push("loss_unsupervised", unsupervised);
    r.push("loss_total", supervised + unsupervised);
    r
}

fn make_checkpoint(
    cfg: &RunConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    opt: &Adam,
    epoch: usize,
) -> Checkpoint {
    let (m, v) = opt.moments();
    Checkpoint {
        config_text: cfg.canonical_text(),
        config_hash: cfg.hash(),
        epoch,
        tensors: names.into_iter().zip(tensors).collect(),
        moments_m: m.to_vec(),
        moments_v: v.to_vec(),
        adam_t: opt.step_count(),
    }
}

/// Copy checkpoint tensors into a live parameter list, shape-checked.
fn restore_tensors(ckpt: &Checkpoint, params: &mut [&mut Tensor]) -> Result<()> {
    if ckpt.tensors.len() != params.len() {
        return Err(UgnError::Training(format!(
            "checkpoint has {} tensors, model expects {}",
            ckpt.tensors.len(),
            params.len()
        )));
    }
    for ((name, saved), live) in ckpt.tensors.iter().zip(params.iter_mut()) {
        if saved.shape() != live.shape() {
            return Err(UgnError::shape(
                format!("checkpoint tensor {name}"),
                saved.shape(),
                live.shape(),
            ));
        }
        **live = saved.clone();
    }
    Ok(())
}

/// Derived, order-stable RNG streams for one run.
struct RngSet {
    init: ChaCha8Rng,
    features: ChaCha8Rng,
    split: ChaCha8Rng,
    epoch: ChaCha8Rng,
}

impl RngSet {
    fn new(seed: u64) -> Self {
        RngSet {
            init: ChaCha8Rng::seed_from_u64(seed),
            features: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
            split: ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908),
            epoch: ChaCha8Rng::seed_from_u64(seed ^ 0xbb67_ae85_84ca_a73b),
        }
    }
}

/// Run training for the configured task.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    match cfg.task {
        TaskKind::Community | TaskKind::NodeClass => train_node_task(cfg, None),
        TaskKind::EdgeClass => train_edge_class(cfg, None),
        TaskKind::LinkPred => train_link_pred(cfg, None),
        TaskKind::KgCompletion => train_kg(cfg, None),
        TaskKind::Translation => train_translation(cfg, None),
    }
}

/// Rebuild the model of a checkpoint and evaluate it, optionally on a
/// different primary dataset path.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: Option<&str>) -> Result<MetricReport> {
    let mut map = std::collections::BTreeMap::new();
    for line in ckpt.config_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.to_string(), v.to_string());
        }
    }
    let mut cfg = RunConfig::from_map(map)?;
    if let Some(path) = data {
        match cfg.task {
            TaskKind::Translation => cfg.pairs = Some(path.to_string()),
            TaskKind::KgCompletion => cfg.triples = Some(path.to_string()),
            _ => cfg.graph = Some(path.to_string()),
        }
    }
    let outcome = match cfg.task {
        TaskKind::Community | TaskKind::NodeClass => train_node_task(&cfg, Some(ckpt))?,
        TaskKind::EdgeClass => train_edge_class(&cfg, Some(ckpt))?,
        TaskKind::LinkPred => train_link_pred(&cfg, Some(ckpt))?,
        TaskKind::KgCompletion => train_kg(&cfg, Some(ckpt))?,
        TaskKind::Translation => train_translation(&cfg, Some(ckpt))?,
    };
    Ok(outcome.metrics)
}

/// Pick the `per_class` highest-degree nodes of each class as the known
/// labels for semi-supervised training; everything else is unknown.
pub fn select_labeled_nodes(
    truth: &[i64],
    degrees: &[usize],
    classes: usize,
    per_class: usize,
) -> Vec<i64> {
    let mut train = vec![UNKNOWN_LABEL; truth.len()];
    for c in 0..classes as i64 {
        let mut members: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
        members.sort_by_key(|&i| (std::cmp::Reverse(degrees[i]), i));
        for &i in members.iter().take(per_class) {
            train[i] = c;
        }
    }
    train
}

fn infer_classes(labels: &[i64], cfg: &RunConfig) -> Result<usize> {
    if let Some(c) = cfg.classes {
        return Ok(c);
    }
    let max = labels.iter().copied().filter(|&l| l != UNKNOWN_LABEL).max();
    match max {
        Some(m) if m >= 1 => Ok(m as usize + 1),
        Some(_) => Ok(2),
        None => Err(UgnError::Config("classes: no labels to infer from".into())),
    }
}

fn train_node_task(cfg: &RunConfig, restore: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let graph_path = cfg.graph.as_deref().expect("validated");
    let data = load_edge_list(graph_path)?;
    let g = data.graph;
    let truth = load_labels(cfg.labels.as_deref().expect("validated"), g.node_count())?;
    let classes = infer_classes(&truth, cfg)?;
    let mut rngs = RngSet::new(cfg.seed);
    let features = build_features(cfg, &g, &mut rngs.features)?;
    let mut model = ClassifierModel::init(features.shape()[1], classes, cfg, &mut rngs.init)?;
    let train_labels = select_labeled_nodes(&truth, &g.degree_vector(), classes, cfg.labeled_per_class);
    let ahat = g.normalized_adjacency();
    let edges = g.undirected_edges();
    let n = g.node_count();

    let shapes: Vec<Vec<usize>> = model.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let mut opt = Adam::new(cfg.lr, &shapes);
    if let Some(ckpt) = restore {
        restore_tensors(ckpt, &mut model.tensors_mut())?;
    }

    let mut epoch_logs = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let epochs = if restore.is_some() { 0 } else { cfg.epochs };
    for epoch in 1..=epochs {
        let edges_epoch = subsample(&edges, cfg.edge_sample_cap, &mut rngs.epoch);
        let tape = Tape::with_precision(cfg.precision);
        let vars = model.register(&tape);
        let latents = model.encoder.forward(
            &tape,
            &ahat,
            &features,
            &vars[..model.encoder_var_count()],
        )?;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            rows.push(model.node_logits(latents, i, &vars)?);
        }
        let logits = tape.stack_rows(&rows)?;
        let (loss, parts) = total_loss(logits, &train_labels, &edges_epoch, cfg.unsup_loss)?;
        check_finite(parts.total, epoch)?;
        tape.backward(loss)?;
        let grads: Vec<Option<Tensor>> = vars.iter().map(|v| v.grad()).collect();
        opt.step(&mut model.tensors_mut(), &grads)?;
        epoch_logs.push(epoch_report(epoch, parts.supervised, parts.unsupervised));
        if let Some(p) = cfg.patience {
            if parts.total < best - 1e-12 {
                best = parts.total;
                stale = 0;
            } else {
                stale += 1;
                if stale > p {
                    break;
                }
            }
        }
    }

    // Inference pass over all nodes.
    let tape = Tape::with_precision(cfg.precision);
    let vars = model.register(&tape);
    let latents = model.encoder.forward(
        &tape,
        &ahat,
        &features,
        &vars[..model.encoder_var_count()],
    )?;
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for i in 0..n {
        if truth[i] == UNKNOWN_LABEL {
            continue;
        }
        let logits = model.node_logits(latents, i, &vars)?.value();
        pred.push(argmax(logits.data()));
        gold.push(truth[i] as usize);
    }
    let metrics = classification_metrics(&pred, &gold)?;

    let names = model.tensor_names();
    let tensors: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
    Ok(TrainOutcome {
        checkpoint: make_checkpoint(cfg, names, tensors, &opt, epochs),
        epoch_logs,
        metrics,
    })
}

/// Shared loop for pairwise classification over a fixed latent graph.
struct PairTask {
    graph: Graph,
    features: Tensor,
    train_pairs: Vec<(usize, usize)>,
    train_labels: Vec<i64>,
    test_pairs: Vec<(usize, usize)>,
    test_labels: Vec<i64>,
    classes: usize,
}

fn run_pair_task(
    cfg: &RunConfig,
    task: PairTask,
    restore: Option<&Checkpoint>,
    score_metric_auprc: bool,
) -> Result<TrainOutcome> {
    let mut rngs = RngSet::new(cfg.seed);
    let mut model =
        ClassifierModel::init(task.features.shape()[1], task.classes, cfg, &mut rngs.init)?;
    let ahat = task.graph.normalized_adjacency();
    let shapes: Vec<Vec<usize>> = model.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let mut opt = Adam::new(cfg.lr, &shapes);
    if let Some(ckpt) = restore {
        restore_tensors(ckpt, &mut model.tensors_mut())?;
    }

    let indices: Vec<usize> = (0..task.train_pairs.len()).collect();
    let mut epoch_logs = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let epochs = if restore.is_some() { 0 } else { cfg.epochs };
    for epoch in 1..=epochs {
        let batch = subsample(&indices, cfg.edge_sample_cap, &mut rngs.epoch);
        let tape = Tape::with_precision(cfg.precision);
        let vars = model.register(&tape);
        let latents = model.encoder.forward(
            &tape,
            &ahat,
            &task.features,
            &vars[..model.encoder_var_count()],
        )?;
        let mut rows = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for &i in &batch {
            let (u, v) = task.train_pairs[i];
            rows.push(model.edge_logits(latents, u, v, &vars)?);
            labels.push(task.train_labels[i]);
        }
        let logits = tape.stack_rows(&rows)?;
        let (loss, parts) = total_loss(logits, &labels, &[], false)?;
        check_finite(parts.total, epoch)?;
        tape.backward(loss)?;
        let grads: Vec<Option<Tensor>> = vars.iter().map(|v| v.grad()).collect();
        opt.step(&mut model.tensors_mut(), &grads)?;
        epoch_logs.push(epoch_report(epoch, parts.supervised, 0.0));
        if let Some(p) = cfg.patience {
            if parts.total < best - 1e-12 {
                best = parts.total;
                stale = 0;
            } else {
                stale += 1;
                if stale > p {
                    break;
                }
            }
        }
    }

    // Evaluate on the held-out pairs (training pairs if no split exists).
    let (pairs, labels) = if task.test_pairs.is_empty() {
        (&task.train_pairs, &task.train_labels)
    } else {
        (&task.test_pairs, &task.test_labels)
    };
    let tape = Tape::with_precision(cfg.precision);
    let vars = model.register(&tape);
    let latents = model.encoder.forward(
        &tape,
        &ahat,
        &task.features,
        &vars[..model.encoder_var_count()],
    )?;
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    let mut scores = Vec::new();
    let mut bools = Vec::new();
    for (&(u, v), &l) in pairs.iter().zip(labels) {
        let logits = model.edge_logits(latents, u, v, &vars)?.value();
        pred.push(argmax(logits.data()));
        gold.push(l as usize);
        if score_metric_auprc && task.classes == 2 {
            // Softmax probability of the positive class.
            let a = logits.data()[0];
            let b = logits.data()[1];
            let m = a.max(b);
            let pa = (a - m).exp();
            let pb = (b - m).exp();
            scores.push(pb / (pa + pb));
            bools.push(l == 1);
        }
    }
    let mut metrics = classification_metrics(&pred, &gold)?;
    if score_metric_auprc && task.classes == 2 {
        metrics.push("auprc", auprc(&scores, &bools)?);
    }

    let names = model.tensor_names();
    let tensors: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
    Ok(TrainOutcome {
        checkpoint: make_checkpoint(cfg, names, tensors, &opt, epochs),
        epoch_logs,
        metrics,
    })
}

fn split_at_fraction<T: Clone>(items: &mut Vec<T>, fraction: f64, rng: &mut impl Rng) -> Vec<T> {
    items.shuffle(rng);
    let k = ((items.len() as f64) * fraction).round() as usize;
    let k = k.clamp(1, items.len());
    items.split_off(k)
}

fn train_link_pred(cfg: &RunConfig, restore: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let data = load_edge_list(cfg.graph.as_deref().expect("validated"))?;
    let g = data.graph;
    let mut rngs = RngSet::new(cfg.seed);
    let mut train_pos = g.undirected_edges();
    if train_pos.is_empty() {
        return Err(UgnError::Graph("link prediction needs edges".into()));
    }
    let test_pos = split_at_fraction(&mut train_pos, cfg.train_fraction, &mut rngs.split);
    let n_train_neg = ((train_pos.len() as f64) * cfg.negative_ratio).round() as usize;
    let n_test_neg = ((test_pos.len() as f64) * cfg.negative_ratio).round() as usize;
    // Negatives avoid every positive edge, train and test alike.
    let mut negatives = g.negative_sample(n_train_neg + n_test_neg, None, &mut rngs.split)?;
    let test_neg = negatives.split_off(n_train_neg);
    let train_neg = negatives;

    // The encoder only ever sees training edges.
    let train_graph = Graph::new(g.node_count(), false, &train_pos)?;
    let features = build_features(cfg, &train_graph, &mut rngs.features)?;

    let mut train_pairs = train_pos.clone();
    let mut train_labels = vec![1i64; train_pos.len()];
    train_pairs.extend_from_slice(&train_neg);
    train_labels.extend(std::iter::repeat(0).take(train_neg.len()));
    let mut test_pairs = test_pos.clone();
    let mut test_labels = vec![1i64; test_pos.len()];
    test_pairs.extend_from_slice(&test_neg);
    test_labels.extend(std::iter::repeat(0).take(test_neg.len()));

    run_pair_task(
        cfg,
        PairTask {
            graph: train_graph,
            features,
            train_pairs,
            train_labels,
            test_pairs,
            test_labels,
            classes: 2,
        },
        restore,
        true,
    )
}

fn train_edge_class(cfg: &RunConfig, restore: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let data = load_edge_list(cfg.graph.as_deref().expect("validated"))?;
    let g = data.graph;
    let mut rngs = RngSet::new(cfg.seed);
    let mut labeled: Vec<((usize, usize), i64)> = data
        .edge_labels
        .iter()
        .map(|(&e, &l)| (e, l as i64))
        .collect();
    labeled.sort_by_key(|(e, _)| *e);
    if labeled.is_empty() {
        return Err(UgnError::Graph("edge classification needs edge labels".into()));
    }
    let test = split_at_fraction(&mut labeled, cfg.train_fraction, &mut rngs.split);
    let labels_all: Vec<i64> = labeled.iter().chain(&test).map(|(_, l)| *l).collect();
    let classes = infer_classes(&labels_all, cfg)?;
    let features = build_features(cfg, &g, &mut rngs.features)?;
    run_pair_task(
        cfg,
        PairTask {
            graph: g,
            features,
            train_pairs: labeled.iter().map(|(e, _)| *e).collect(),
            train_labels: labeled.iter().map(|(_, l)| *l).collect(),
            test_pairs: test.iter().map(|(e, _)| *e).collect(),
            test_labels: test.iter().map(|(_, l)| *l).collect(),
            classes,
        },
        restore,
        false,
    )
}

fn train_kg(cfg: &RunConfig, restore: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let mut vocab = match &cfg.vocab {
        Some(path) => Vocab::load(path)?,
        None => Vocab::new(),
    };
    let grow = cfg.vocab.is_none();
    let mut triples = load_triples(cfg.triples.as_deref().expect("validated"), &mut vocab, grow)?;
    if triples.is_empty() {
        return Err(UgnError::Graph("kg-completion needs triples".into()));
    }
    let mut rngs = RngSet::new(cfg.seed);
    let test = split_at_fraction(&mut triples, cfg.train_fraction, &mut rngs.split);
    let mut train = triples;
    if let Some(cap) = cfg.few_shot_cap {
        train = few_shot_subsample(&train, cap, &mut rngs.split)?;
    }
    let n = vocab.entity_count();
    let features = kg_entity_features(&train, n, cfg.rand_dim, &mut rngs.features)?;
    let edges: Vec<(usize, usize)> = train
        .iter()
        .filter(|t| t.head != t.tail)
        .map(|t| (t.head, t.tail))
        .collect();
    let graph = Graph::new(n, false, &edges)?;
    let as_pairs = |ts: &[KgTriple]| -> (Vec<(usize, usize)>, Vec<i64>) {
        (
            ts.iter().map(|t| (t.head, t.tail)).collect(),
            ts.iter().map(|t| t.relation as i64).collect(),
        )
    };
    let (train_pairs, train_labels) = as_pairs(&train);
    let (test_pairs, test_labels) = as_pairs(&test);
    let mut outcome = run_pair_task(
        cfg,
        PairTask {
            graph,
            features,
            train_pairs,
            train_labels,
            test_pairs,
            test_labels,
            classes: vocab.relation_count(),
        },
        restore,
        false,
    )?;
    // Rank-1 relation prediction: HITS@1 equals top-1 accuracy here.
    if let Some(acc) = outcome.metrics.get("accuracy") {
        outcome.metrics.push("hits_at_1", acc);
    }
    Ok(outcome)
}

fn train_translation(cfg: &RunConfig, restore: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let mut pairs = load_matrix_pairs(cfg.pairs.as_deref().expect("validated"))?;
    if pairs.is_empty() {
        return Err(UgnError::InvalidArgument("no translation pairs".into()));
    }
    let n = pairs[0].n();
    if pairs.iter().any(|p| p.n() != n) {
        return Err(UgnError::Dimension("translation pairs have mixed sizes".into()));
    }
    let mut rngs = RngSet::new(cfg.seed);
    let test = split_at_fraction(&mut pairs, cfg.train_fraction, &mut rngs.split);
    let train = pairs;

    let mtcm: Option<Mtcm> = if cfg.use_mtcm {
        let targets: Vec<Tensor> = train.iter().map(|p| p.target.clone()).collect();
        Some(compute_mtcm(&targets)?)
    } else {
        None
    };
    let regression_targets: Vec<Tensor> = train
        .iter()
        .map(|p| match &mtcm {
            Some(m) => difference_matrix(&p.target, m),
            None => Ok(p.target.clone()),
        })
        .collect::<Result<_>>()?;

    let mut dims = vec![n];
    dims.extend_from_slice(&cfg.encoder_dims);
    let mut model = TranslationModel::init(n, &dims, &cfg.head_hidden, &mut rngs.init)?;
    let shapes: Vec<Vec<usize>> = model.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let mut opt = Adam::new(cfg.lr, &shapes);
    if let Some(ckpt) = restore {
        restore_tensors(ckpt, &mut model.tensors_mut())?;
    }

    let mut epoch_logs = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let epochs = if restore.is_some() { 0 } else { cfg.epochs };
    for epoch in 1..=epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rngs.epoch);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let tape = Tape::with_precision(cfg.precision);
            let vars = model.register(&tape);
            let out = model.forward_var(&tape, &train[i].source, &vars)?;
            let loss = out.mse(&regression_targets[i])?;
            let lv = loss.value().scalar_value()?;
            check_finite(lv, epoch)?;
            epoch_loss += lv;
            tape.backward(loss)?;
            let grads: Vec<Option<Tensor>> = vars.iter().map(|v| v.grad()).collect();
            opt.step(&mut model.tensors_mut(), &grads)?;
        }
        let mean = epoch_loss / train.len() as f64;
        epoch_logs.push(epoch_report(epoch, mean, 0.0));
        if let Some(p) = cfg.patience {
            if mean < best - 1e-12 {
                best = mean;
                stale = 0;
            } else {
                stale += 1;
                if stale > p {
                    break;
                }
            }
        }
    }

    let eval_pairs: &[TranslationPair] = if test.is_empty() { &train } else { &test };
    let mut sum = 0.0;
    for p in eval_pairs {
        let pred = model.predict(&p.source, mtcm.as_ref())?;
        sum += pearson_matrices(&pred, &p.target)?;
    }
    let mut metrics = MetricReport::new();
    metrics.push("pearson_mean", sum / eval_pairs.len() as f64);
    metrics.push("test_pairs", eval_pairs.len() as f64);

    let names: Vec<String> = (0..model.encoder.layer_count())
        .map(|i| format!("enc.{i}"))
        .chain((0..model.head.tensors().len()).map(|i| format!("head.{i}")))
        .collect();
    let tensors: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
    Ok(TrainOutcome {
        checkpoint: make_checkpoint(cfg, names, tensors, &opt, epochs),
        epoch_logs,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sbm, save_edge_list, save_labels, save_matrix_pairs};
    use std::collections::{BTreeMap, HashMap};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("ugn-train-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn base_map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn write_sbm(name: &str, n: usize, communities: usize, seed: u64) -> (String, String) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, labels) = generate_sbm(n, communities, 0.8, 0.05, &mut rng).unwrap();
        let gp = tmp(&format!("{name}.edges"));
        let lp = tmp(&format!("{name}.labels"));
        save_edge_list(&gp, &g, &HashMap::new()).unwrap();
        save_labels(&lp, &labels).unwrap();
        (gp.display().to_string(), lp.display().to_string())
    }

    fn community_cfg(graph: &str, labels: &str, epochs: &str) -> RunConfig {
        RunConfig::from_map(base_map(&[
            ("task", "community"),
            ("seed", "11"),
            ("graph", graph),
            ("labels", labels),
            ("epochs", epochs),
            ("encoder_dims", "16,16"),
            ("decoder_channels", "4,8"),
            ("decoder_hidden", "32"),
            ("labeled_per_class", "2"),
        ]))
        .unwrap()
    }

    #[test]
    fn select_labeled_picks_highest_degree_per_class() {
        let truth = vec![0, 0, 0, 1, 1];
        let degrees = vec![1, 5, 3, 2, 4];
        let got = select_labeled_nodes(&truth, &degrees, 2, 1);
        assert_eq!(got, vec![UNKNOWN_LABEL, 0, UNKNOWN_LABEL, UNKNOWN_LABEL, 1]);
    }

    #[test]
    fn community_training_learns_small_sbm() {
        let (gp, lp) = write_sbm("sbm60", 60, 2, 5);
        let cfg = community_cfg(&gp, &lp, "60");
        let out = train(&cfg).unwrap();
        assert_eq!(out.epoch_logs.len(), 60);
        let first = out.epoch_logs[0].get("loss_total").unwrap();
        let last = out.epoch_logs.last().unwrap().get("loss_total").unwrap();
        assert!(last < first, "loss did not drop: {first} -> {last}");
        let acc = out.metrics.get("accuracy").unwrap();
        assert!(acc >= 0.9, "accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let (gp, lp) = write_sbm("sbm-det", 30, 2, 6);
        let cfg = community_cfg(&gp, &lp, "5");
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.metrics.to_text(), b.metrics.to_text());
        for (x, y) in a.epoch_logs.iter().zip(&b.epoch_logs) {
            assert_eq!(x.to_text(), y.to_text());
        }
    }

    #[test]
    fn evaluate_checkpoint_reproduces_final_metrics() {
        let (gp, lp) = write_sbm("sbm-eval", 30, 2, 7);
        let cfg = community_cfg(&gp, &lp, "8");
        let out = train(&cfg).unwrap();
        let metrics = evaluate_checkpoint(&out.checkpoint, None).unwrap();
        assert_eq!(metrics.to_text(), out.metrics.to_text());
    }

    #[test]
    fn evaluate_on_mismatched_graph_reports_shape() {
        let (gp, lp) = write_sbm("sbm-a", 30, 2, 8);
        let (gp2, _) = write_sbm("sbm-b", 40, 2, 9);
        let cfg = community_cfg(&gp, &lp, "2");
        let out = train(&cfg).unwrap();
        let err = evaluate_checkpoint(&out.checkpoint, Some(&gp2)).unwrap_err();
        assert!(matches!(err, UgnError::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn link_pred_reports_auprc() {
        let (gp, _) = write_sbm("sbm-lp", 40, 2, 10);
        let cfg = RunConfig::from_map(base_map(&[
            ("task", "link-pred"),
            ("seed", "3"),
            ("graph", &gp),
            ("epochs", "5"),
            ("encoder_dims", "16,16"),
            ("decoder_channels", "4,8"),
            ("decoder_hidden", "32"),
        ]))
        .unwrap();
        let out = train(&cfg).unwrap();
        let auprc = out.metrics.get("auprc").unwrap();
        assert!((0.0..=1.0).contains(&auprc), "{auprc}");
    }

    #[test]
    fn translation_training_runs_and_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs =
            crate::data::generate_translation_pairs(12, 20, 0.9, 0.1, 0.02, &mut rng).unwrap();
        let pp = tmp("pairs.txt");
        save_matrix_pairs(&pp, &pairs).unwrap();
        let cfg = RunConfig::from_map(base_map(&[
            ("task", "translation"),
            ("seed", "4"),
            ("pairs", &pp.display().to_string()),
            ("epochs", "3"),
            ("encoder_dims", "16,8"),
            ("head_hidden", "16"),
            ("use_mtcm", "1"),
        ]))
        .unwrap();
        let out = train(&cfg).unwrap();
        let p = out.metrics.get("pearson_mean").unwrap();
        assert!((-1.0..=1.0).contains(&p), "{p}");
        assert_eq!(out.epoch_logs.len(), 3);
    }

    #[test]
    fn nan_loss_aborts_with_training_error() {
        let (gp, lp) = write_sbm("sbm-nan", 30, 2, 12);
        let mut cfg = community_cfg(&gp, &lp, "200");
        cfg.lr = 1e18;
        match train(&cfg) {
            Err(UgnError::Training(msg)) => assert!(msg.contains("non-finite"), "{msg}"),
            Ok(out) => {
                // An absurd step size may still keep the loss finite; then
                // the run must at least have gone the distance.
                assert_eq!(out.epoch_logs.len(), 200);
            }
            Err(other) => panic!("unexpected error {other}"),
        }
    }
}
