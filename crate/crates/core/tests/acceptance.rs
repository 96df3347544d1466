//! Acceptance run. Prints one PASS/FAIL line per criterion, with the measured
//! figures, and exits non-zero if any criterion fails.
//!
//! Run alone with `cargo test -p pgcn --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pgcn::eval::{average_precision, mean_average_precision, nms, rank_order, Detection, GroundTruthMap};
use pgcn::gcn::{sample_neighbors, stack_forward, AggregationMode, ForwardMode, Sampling};
use pgcn::graph::{
    build_graph, find_contextual_edges, find_surrounding_edges, sort_candidates, EdgeKind, GraphConfig, Neighbor,
    ProposalGraph,
};
use pgcn::interval::{decode_offset, encode_offset, surround_distance, tiou};
use pgcn::io::text::write_detections;
use pgcn::io::{generate_synthetic, ground_truth_map, load_dataset, write_synthetic, PipelineConfig, Stream, SyntheticSpec};
use pgcn::labels::{SampleKind, TrainingSample};
use pgcn::loss::{multitask_loss, LossConfig};
use pgcn::network::{ModelConfig, PgcnModel};
use pgcn::par;
use pgcn::pipeline::{detect_dataset, train_stream, training_videos};
use pgcn::timing::{run_bench, BenchConfig};
use pgcn::trainer::{classification_accuracy, save};
use pgcn::{GroundTruthInstance, Interval, Offset, ProposalSet};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn iv(s: f64, e: f64) -> Interval {
    Interval::new(s, e).unwrap()
}

fn random_interval<R: Rng>(rng: &mut R, span: f64, len: (f64, f64)) -> Interval {
    let l = rng.random_range(len.0..len.1);
    let s = rng.random_range(0.0..span);
    iv(s, s + l)
}

// ---------------------------------------------------------------- 1

/// Cell-midpoint discretization of `[a, b)` on a grid of step `h`:
/// `(measure, center)` of each interval and of their union, plus the
/// intersection measure.
fn discretized(a: &Interval, b: &Interval, h: f64) -> (f64, f64, f64, f64) {
    let lo = a.start().min(b.start());
    let hi = a.end().max(b.end());
    let cells = ((hi - lo) / h).ceil() as usize + 1;
    let (mut na, mut nb, mut ni, mut nu) = (0usize, 0usize, 0usize, 0usize);
    let (mut sa, mut sb) = (0.0, 0.0);
    for k in 0..cells {
        let t = lo + (k as f64 + 0.5) * h;
        let ia = t >= a.start() && t < a.end();
        let ib = t >= b.start() && t < b.end();
        if ia {
            na += 1;
            sa += t;
        }
        if ib {
            nb += 1;
            sb += t;
        }
        ni += usize::from(ia && ib);
        nu += usize::from(ia || ib);
    }
    let ca = sa / na as f64;
    let cb = sb / nb as f64;
    (ni as f64 * h, nu as f64 * h, ca, cb)
}

fn interval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-4;
    let (mut worst_iou, mut worst_sur) = (0.0f64, 0.0f64);
    let mut symmetric = true;
    let mut bounded = true;
    for _ in 0..10_000 {
        let a = random_interval(&mut rng, 10.0, (0.5, 5.0));
        let b = random_interval(&mut rng, 10.0, (0.5, 5.0));
        let (inter, union, ca, cb) = discretized(&a, &b, h);
        let r = tiou(&a, &b);
        let d = surround_distance(&a, &b);
        worst_iou = worst_iou.max((r - inter / union).abs());
        worst_sur = worst_sur.max((d - (ca - cb).abs() / union).abs());
        symmetric &= r == tiou(&b, &a) && d == surround_distance(&b, &a);
        bounded &= (0.0..=1.0).contains(&r) && d >= 0.0;
    }
    Outcome::new(
        worst_iou < 2e-3 && worst_sur < 2e-3 && symmetric && bounded,
        format!("max |tIoU - oracle| {worst_iou:.2e}, max |d - oracle| {worst_sur:.2e}, symmetric {symmetric}, bounded {bounded}"),
    )
}

// ---------------------------------------------------------------- 2

type Pairs = Vec<(usize, usize)>;

fn reference_edges(intervals: &[Interval], cfg: &GraphConfig) -> (Pairs, Pairs) {
    let (mut ctx, mut sur) = (Vec::new(), Vec::new());
    for (i, a) in intervals.iter().enumerate() {
        for (j, b) in intervals.iter().enumerate() {
            if i == j {
                continue;
            }
            let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
            let union = a.length() + b.length() - inter;
            let r = inter / union;
            if r > cfg.theta_ctx {
                ctx.push((i, j));
            }
            if inter == 0.0 && (a.center() - b.center()).abs() / union < cfg.theta_sur {
                sur.push((i, j));
            }
        }
    }
    (ctx, sur)
}

fn proposal_set(intervals: &[Interval], dim: usize, rng: &mut ChaCha8Rng) -> ProposalSet {
    let n = intervals.len();
    let f = Array2::from_shape_fn((n, dim), |_| rng.random_range(0.0..1.0));
    let e = Array2::from_shape_fn((n, 3 * dim), |_| rng.random_range(0.0..1.0));
    ProposalSet::new(intervals.iter().map(|&i| (i, None)).collect(), f, e).unwrap()
}

fn graph_equivalence() -> Outcome {
    let cfg = GraphConfig::default();
    let quota = cfg.quota().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut mismatches, mut overlaps, mut over_quota, mut edges) = (0, 0, 0, 0usize);
    for _ in 0..100 {
        let n = rng.random_range(1..=200);
        let span = rng.random_range(20.0..200.0);
        let intervals: Vec<Interval> = (0..n).map(|_| random_interval(&mut rng, span, (0.5, 15.0))).collect();
        let (rc, rs) = reference_edges(&intervals, &cfg);
        let pairs = |mut v: Vec<pgcn::graph::EdgeCandidate>| {
            sort_candidates(&mut v);
            v.into_iter().map(|e| (e.node, e.neighbor)).collect::<Vec<_>>()
        };
        let c = pairs(find_contextual_edges(&intervals, cfg.theta_ctx));
        let s = pairs(find_surrounding_edges(&intervals, cfg.theta_sur));
        mismatches += usize::from(c != rc) + usize::from(s != rs);
        overlaps += c.iter().filter(|e| s.binary_search(e).is_ok()).count();

        let graph = build_graph(&proposal_set(&intervals, 4, &mut rng), &cfg).unwrap();
        for i in 0..n {
            let nb = graph.neighbors(i);
            let kinds = |k| nb.iter().filter(|x| x.kind == k).count();
            over_quota += usize::from(
                kinds(EdgeKind::Contextual) > quota.contextual || kinds(EdgeKind::Surrounding) > quota.surrounding,
            );
            edges += nb.len();
        }
    }
    Outcome::new(
        mismatches == 0 && overlaps == 0 && over_quota == 0,
        format!(
            "{mismatches} candidate-set mismatches, {overlaps} shared pairs, {over_quota} nodes over the {}+{} quota ({edges} kept edges)",
            quota.contextual, quota.surrounding
        ),
    )
}

// ---------------------------------------------------------------- 3

struct GradInstance {
    model: PgcnModel,
    graph: ProposalGraph,
    proposals: ProposalSet,
    targets: Vec<usize>,
    samples: Vec<TrainingSample>,
    rows: Vec<usize>,
    sampling: Sampling,
    draw_seed: u64,
}

impl GradInstance {
    fn random(rng: &mut ChaCha8Rng, index: usize) -> Self {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=6);
        let classes = rng.random_range(1..=3);
        let intervals: Vec<Interval> = (0..n).map(|_| random_interval(rng, 12.0, (1.0, 6.0))).collect();
        let proposals = proposal_set(&intervals, d, rng);
        let graph = build_graph(&proposals, &GraphConfig::default()).unwrap();
        let cfg = ModelConfig {
            num_classes: classes,
            feature_dim: d,
            num_layers: 2,
            hidden_dim: Some(rng.random_range(2..=5)),
            dropout: 0.0,
            mode: AggregationMode::Gcn,
        };
        let model = PgcnModel::init(&cfg, rng).unwrap();
        let mut samples = Vec::new();
        for p in 0..n {
            let kind = [SampleKind::Foreground, SampleKind::Incomplete, SampleKind::Background][rng.random_range(0..3)];
            let class = if kind == SampleKind::Background { 0 } else { rng.random_range(1..=classes) };
            samples.push(TrainingSample {
                proposal: p,
                kind,
                class_target: class,
                completeness_target: if kind == SampleKind::Foreground { 1.0 } else { -1.0 },
                regression_target: (kind == SampleKind::Foreground)
                    .then(|| Offset { center: rng.random_range(-0.5..0.5), length: rng.random_range(-0.5..0.5) }),
            });
        }
        let mut targets: Vec<usize> = samples.iter().map(|s| s.proposal).collect();
        targets.sort_unstable();
        targets.dedup();
        let rows = samples.iter().map(|s| targets.binary_search(&s.proposal).unwrap()).collect();
        // alternate between the full and the sampled training path
        let sampling = if index.is_multiple_of(2) { Sampling::Full } else { Sampling::Uniform(3) };
        Self { model, graph, proposals, targets, samples, rows, sampling, draw_seed: rng.random() }
    }

    /// Loss with neighbor draws replayed from a fixed seed.
    fn loss(&self, model: &PgcnModel) -> f64 {
        let mut draws = ChaCha8Rng::seed_from_u64(self.draw_seed);
        let mut mode = ForwardMode::Train { sampling: self.sampling, rng: &mut draws };
        let (out, _) = model.forward(&self.graph, &self.proposals, &self.targets, &mut mode).unwrap();
        multitask_loss(&out, &self.samples, &self.rows, &LossConfig::default()).unwrap().0.total
    }

    fn analytic(&self) -> Vec<Array2<f64>> {
        let mut draws = ChaCha8Rng::seed_from_u64(self.draw_seed);
        let mut mode = ForwardMode::Train { sampling: self.sampling, rng: &mut draws };
        let (out, cache) = self.model.forward(&self.graph, &self.proposals, &self.targets, &mut mode).unwrap();
        let (_, g) = multitask_loss(&out, &self.samples, &self.rows, &LossConfig::default()).unwrap();
        self.model.backward(&cache, &g).unwrap().tensors().into_iter().cloned().collect()
    }

    /// Central differences, or `None` when some coordinate sits on a kink
    /// (one-sided slopes disagree).
    fn numeric(&self, h: f64) -> Option<Vec<Array2<f64>>> {
        let base = self.loss(&self.model);
        let mut out = Vec::new();
        let count = self.model.tensors().len();
        for t in 0..count {
            let shape = self.model.tensors()[t].dim();
            let mut g = Array2::zeros(shape);
            for idx in 0..shape.0 * shape.1 {
                let (r, c) = (idx / shape.1, idx % shape.1);
                let shifted = |delta: f64| {
                    let mut m = self.model.clone();
                    m.tensors_mut()[t][[r, c]] += delta;
                    self.loss(&m)
                };
                let (plus, minus) = (shifted(h), shifted(-h));
                let (fwd, bwd) = ((plus - base) / h, (base - minus) / h);
                if (fwd - bwd).abs() > 1e-3 * (1.0 + fwd.abs().max(bwd.abs())) {
                    return None;
                }
                g[[r, c]] = (plus - minus) / (2.0 * h);
            }
            out.push(g);
        }
        Some(out)
    }
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut redrawn, mut worst) = (0, 0, 0.0f64);
    let mut index = 0;
    while checked < 50 {
        let inst = GradInstance::random(&mut rng, index);
        index += 1;
        let Some(numeric) = inst.numeric(1e-6) else {
            redrawn += 1;
            continue;
        };
        let analytic = inst.analytic();
        let (mut diff, mut scale) = (0.0, 0.0);
        for (a, n) in analytic.iter().zip(&numeric) {
            diff += (a - n).mapv(|v| v * v).sum();
            scale += a.mapv(|v| v * v).sum() + n.mapv(|v| v * v).sum();
        }
        let rel = diff.sqrt() / scale.sqrt().max(1e-12);
        worst = worst.max(rel);
        checked += 1;
    }
    Outcome::new(
        worst < 1e-4,
        format!("worst relative error {worst:.2e} over {checked} instances ({redrawn} redrawn near a kink)"),
    )
}

// ---------------------------------------------------------------- 4

fn offset_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let p = random_interval(&mut rng, 1000.0, (0.1, 200.0));
        let g = random_interval(&mut rng, 1000.0, (0.1, 200.0));
        let back = decode_offset(&p, &encode_offset(&p, &g)).unwrap();
        worst = worst.max((back.start() - g.start()).abs()).max((back.end() - g.end()).abs());
    }
    Outcome::new(worst < 1e-9, format!("max boundary error {worst:.2e} s over 10000 pairs"))
}

// ---------------------------------------------------------------- 5

fn sampling_fidelity() -> Outcome {
    let k = 10;
    let neighbors: Vec<Vec<Neighbor>> = (0..=k)
        .map(|i| {
            if i == 0 {
                (1..=k).map(|j| Neighbor { node: j, weight: 1.0, kind: EdgeKind::Contextual }).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    let graph = ProposalGraph::from_neighbors(neighbors).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 100_000;
    let mut counts = vec![0usize; k + 1];
    for _ in 0..draws / 4 {
        for nb in sample_neighbors(&graph, 0, 4, &mut rng) {
            counts[nb.node] += 1;
        }
    }
    let expected = 1.0 / k as f64;
    let worst_freq = counts[1..]
        .iter()
        .map(|&c| (c as f64 / draws as f64 - expected).abs())
        .fold(0.0, f64::max);

    // full neighborhood on the training path against the evaluation path
    let mut worst_path = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let n = rng.random_range(2..=60);
        let intervals: Vec<Interval> = (0..n).map(|_| random_interval(&mut rng, 40.0, (1.0, 10.0))).collect();
        let set = proposal_set(&intervals, 5, &mut rng);
        let graph = build_graph(&set, &GraphConfig::default()).unwrap();
        let model = PgcnModel::init(
            &ModelConfig { num_classes: 3, feature_dim: 5, dropout: 0.0, ..ModelConfig::default() },
            &mut rng,
        )
        .unwrap();
        let all: Vec<usize> = (0..n).collect();
        let mut draw = ChaCha8Rng::seed_from_u64(seed);
        let mut train = ForwardMode::Train { sampling: Sampling::Full, rng: &mut draw };
        let (a, _) = stack_forward(&graph, set.features(), &model.action_stack, &all, &mut train).unwrap();
        let (b, _) = stack_forward(&graph, set.features(), &model.action_stack, &all, &mut ForwardMode::Eval).unwrap();
        worst_path = worst_path.max((&a - &b).iter().fold(0.0, |m, v| m.max(v.abs())));
        let mut draw = ChaCha8Rng::seed_from_u64(seed);
        let mut train = ForwardMode::Train { sampling: Sampling::Full, rng: &mut draw };
        let (ha, _) = model.forward(&graph, &set, &all, &mut train).unwrap();
        let hb = model.infer(&graph, &set).unwrap();
        for (x, y) in [(&ha.logits, &hb.logits), (&ha.completeness, &hb.completeness), (&ha.regression, &hb.regression)] {
            worst_path = worst_path.max((x - y).iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    Outcome::new(
        worst_freq < 0.01 && worst_path <= 1e-12,
        format!(
            "max |freq - 1/{k}| {worst_freq:.4} over {draws} draws (relative {:.2}%), train/eval path gap {worst_path:.1e}",
            100.0 * worst_freq / expected
        ),
    )
}

// ---------------------------------------------------------------- 6

/// Brute force: rank, greedy-match, build the precision/recall list, and take
/// the area under the precision envelope point by point.
fn oracle_ap(dets: &[Detection], gt: &GroundTruthMap, class: usize, thr: f64) -> Option<f64> {
    let positives: usize = gt.values().flatten().filter(|g| g.label == class).count();
    if positives == 0 {
        return None;
    }
    let mut mine: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
    mine.sort_by(|a, b| rank_order(a, b));
    let mut used: BTreeMap<(String, usize), bool> = BTreeMap::new();
    let mut tp = 0usize;
    let mut curve = Vec::new();
    for (rank, d) in mine.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt.get(&d.video).into_iter().flatten().enumerate() {
            if g.label != class || used.contains_key(&(d.video.clone(), gi)) {
                continue;
            }
            let o = tiou(&d.interval, &g.interval);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((gi, o));
            }
        }
        if let Some((gi, o)) = best {
            if o > thr {
                used.insert((d.video.clone(), gi), true);
                tp += 1;
            }
        }
        curve.push((tp as f64 / positives as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..curve.len() {
        let (r, _) = curve[i];
        if r > prev_recall {
            let envelope = curve[i..].iter().map(|&(_, p)| p).fold(0.0, f64::max);
            ap += (r - prev_recall) * envelope;
            prev_recall = r;
        }
    }
    Some(ap)
}

fn det(video: &str, class: usize, s: f64, e: f64, score: f64) -> Detection {
    Detection { video: video.into(), class, interval: iv(s, e), score }
}

fn gts(items: &[(&str, f64, f64, usize)]) -> GroundTruthMap {
    let mut m = GroundTruthMap::new();
    for &(v, s, e, c) in items {
        m.entry(v.to_string()).or_default().push(GroundTruthInstance::new(iv(s, e), c).unwrap());
    }
    m
}

fn map_fixtures() -> Vec<(&'static str, Vec<Detection>, GroundTruthMap)> {
    let one = gts(&[("a", 10.0, 20.0, 1)]);
    let two = gts(&[("a", 10.0, 20.0, 1), ("a", 40.0, 50.0, 1)]);
    let multi = gts(&[("a", 0.0, 10.0, 1), ("a", 20.0, 30.0, 2), ("b", 5.0, 15.0, 1), ("b", 40.0, 60.0, 3)]);
    vec![
        ("exact match", vec![det("a", 1, 10.0, 20.0, 0.9)], one.clone()),
        ("tIoU 0.4 miss", vec![det("a", 1, 10.0, 14.0, 0.9)], one.clone()),
        (
            "hit, miss, hit",
            vec![det("a", 1, 10.0, 20.0, 0.9), det("a", 1, 70.0, 80.0, 0.8), det("a", 1, 40.0, 50.0, 0.7)],
            two.clone(),
        ),
        (
            "miss first",
            vec![det("a", 1, 70.0, 80.0, 0.9), det("a", 1, 10.0, 20.0, 0.8), det("a", 1, 40.0, 50.0, 0.7)],
            two.clone(),
        ),
        ("duplicate hit", vec![det("a", 1, 10.0, 20.0, 0.9), det("a", 1, 10.5, 20.0, 0.8)], one.clone()),
        ("no detections", vec![], one.clone()),
        ("wrong class", vec![det("a", 2, 10.0, 20.0, 0.9)], one.clone()),
        ("wrong video", vec![det("b", 1, 10.0, 20.0, 0.9)], one.clone()),
        ("exactly at threshold", vec![det("a", 1, 10.0, 15.0, 0.9)], one.clone()),
        (
            "two classes, two videos",
            vec![
                det("a", 1, 0.0, 10.0, 0.9),
                det("a", 2, 21.0, 30.0, 0.8),
                det("b", 1, 5.0, 14.0, 0.3),
                det("b", 3, 40.0, 55.0, 0.6),
                det("b", 3, 0.0, 3.0, 0.95),
            ],
            multi.clone(),
        ),
        ("half recall", vec![det("a", 1, 10.0, 20.0, 0.5)], two.clone()),
        (
            "tied scores",
            vec![det("a", 1, 70.0, 80.0, 0.5), det("a", 1, 10.0, 20.0, 0.5), det("a", 1, 40.0, 50.0, 0.5)],
            two.clone(),
        ),
        (
            "greedy takes best overlap",
            vec![det("a", 1, 12.0, 45.0, 0.9), det("a", 1, 40.0, 52.0, 0.8), det("a", 1, 9.0, 21.0, 0.7)],
            two.clone(),
        ),
        (
            "shared gt between overlapping dets",
            vec![det("a", 1, 10.0, 19.0, 0.9), det("a", 1, 11.0, 20.0, 0.85), det("a", 1, 41.0, 50.0, 0.2)],
            two.clone(),
        ),
        (
            "many false positives",
            (0..10).map(|i| det("a", 1, 100.0 + i as f64 * 10.0, 105.0 + i as f64 * 10.0, 0.9 - 0.05 * i as f64))
                .chain([det("a", 1, 10.0, 20.0, 0.1)])
                .collect(),
            one.clone(),
        ),
        (
            "class absent from gt",
            vec![det("a", 1, 10.0, 20.0, 0.9), det("a", 7, 10.0, 20.0, 0.99)],
            one.clone(),
        ),
        (
            "interleaved",
            vec![
                det("a", 1, 40.0, 50.0, 0.9),
                det("a", 1, 60.0, 70.0, 0.8),
                det("a", 1, 80.0, 90.0, 0.7),
                det("a", 1, 10.0, 20.0, 0.6),
            ],
            two.clone(),
        ),
        (
            "same gt in two videos",
            vec![det("a", 1, 10.0, 20.0, 0.4), det("b", 1, 10.0, 20.0, 0.9)],
            gts(&[("a", 10.0, 20.0, 1), ("b", 10.0, 20.0, 1)]),
        ),
        (
            "partial overlaps",
            vec![det("a", 1, 13.0, 23.0, 0.9), det("a", 1, 44.0, 56.0, 0.6), det("a", 1, 8.0, 18.0, 0.5)],
            two.clone(),
        ),
        (
            "multi-class mixed",
            vec![
                det("a", 2, 20.0, 30.0, 0.2),
                det("a", 2, 22.0, 31.0, 0.9),
                det("b", 1, 6.0, 15.0, 0.7),
                det("a", 1, 1.0, 9.0, 0.65),
                det("b", 3, 45.0, 60.0, 0.5),
                det("b", 3, 40.0, 50.0, 0.55),
            ],
            multi,
        ),
    ]
}

fn random_detections(rng: &mut ChaCha8Rng) -> Vec<Detection> {
    let n = rng.random_range(0..=60);
    (0..n)
        .map(|_| {
            let i = random_interval(rng, 100.0, (1.0, 20.0));
            // coarse scores so ties occur
            let score = (rng.random_range(0..20) as f64) / 20.0;
            Detection { video: "v".into(), class: 1, interval: i, score }
        })
        .collect()
}

fn reference_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut order = dets.to_vec();
    order.sort_by(rank_order);
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(order[i].clone());
        for j in i + 1..order.len() {
            if tiou(&order[i].interval, &order[j].interval) > thr {
                suppressed[j] = true;
            }
        }
    }
    keep
}

fn evaluation_oracle() -> Outcome {
    let thresholds = [0.1, 0.3, 0.5, 0.7];
    let mut mismatched = Vec::new();
    let mut fixture_count = 0;
    for (name, dets, gt) in map_fixtures() {
        fixture_count += 1;
        let report = mean_average_precision(&dets, &gt, &thresholds).unwrap();
        let classes: Vec<usize> = {
            let mut c: Vec<usize> = gt.values().flatten().map(|g| g.label).collect();
            c.sort_unstable();
            c.dedup();
            c
        };
        for (ti, &t) in thresholds.iter().enumerate() {
            let aps: Vec<f64> = classes.iter().filter_map(|&c| oracle_ap(&dets, &gt, c, t)).collect();
            let oracle = aps.iter().sum::<f64>() / aps.len() as f64;
            if report.mean_ap[ti] != oracle {
                mismatched.push(format!("{name}@{t}: {} vs {oracle}", report.mean_ap[ti]));
            }
        }
    }
    let (_, dets, gt) = &map_fixtures()[2];
    let derived = mean_average_precision(dets, gt, &[0.5]).unwrap().mean_ap[0];
    let derived_ok = (derived - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12
        && (average_precision(&[true, false, true], 2) - 0.8333).abs() < 1e-4;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut nms_bad = 0;
    for _ in 0..1000 {
        let dets = random_detections(&mut rng);
        let thr = [0.3, 0.5, 0.7][rng.random_range(0..3)];
        if nms(&dets, thr) != reference_nms(&dets, thr) {
            nms_bad += 1;
        }
    }
    Outcome::new(
        mismatched.is_empty() && derived_ok && nms_bad == 0,
        format!(
            "{} of {fixture_count} fixtures x {} thresholds differ from the oracle{}; three-detection fixture AP {derived:.4}; NMS mismatches {nms_bad}/1000",
            mismatched.len(),
            thresholds.len(),
            if mismatched.is_empty() { String::new() } else { format!(" ({})", mismatched.join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------- 7

/// Settings shared by the learning criteria: initial rate 0.01, decayed
/// tenfold every 50 epochs, 200 epochs.
fn learning_config() -> PipelineConfig {
    let mut cfg = PipelineConfig { lr_rgb: 0.01, ..PipelineConfig::default() };
    cfg.train.schedule.every = 50;
    cfg.train.epochs = 200;
    cfg
}

fn synthetic_overfit() -> Outcome {
    let spec = SyntheticSpec { videos: 10, classes: 3, separation: 1.0, noise: 0.1, ..SyntheticSpec::default() };
    let records = generate_synthetic(&spec).unwrap();
    let cfg = learning_config();
    let start = Instant::now();
    let state = par::with_threads(Some(1), || train_stream(&records, Stream::Rgb, &cfg, |_| {})).unwrap();
    let (acc, map) = par::with_threads(Some(1), || {
        let videos = training_videos(&records, Stream::Rgb, &cfg).unwrap();
        let acc = classification_accuracy(&state.model, &videos, Some(SampleKind::Foreground)).unwrap();
        let dets = detect_dataset(&records, Some(&state.model), None, &cfg, None).unwrap();
        let map = mean_average_precision(&dets, &ground_truth_map(&records), &[0.5]).unwrap().mean_ap[0];
        (acc, map)
    });
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        acc >= 0.95 && map >= 0.9 && secs < 300.0,
        format!("foreground accuracy {acc:.4}, mAP@0.5 {map:.4}, {secs:.1} s single-threaded"),
    )
}

// ---------------------------------------------------------------- 8

fn ablation() -> Outcome {
    // columns: gcn, mlp, gcn without regression at 0.5, then gcn and
    // gcn without regression at 0.9
    let mut table = String::from("      seed   gcn      mlp      noreg    | gcn@0.9  noreg@0.9\n");
    let mut sums = [0.0; 5];
    let seeds = 5;
    for seed in 0..seeds {
        let spec = SyntheticSpec {
            videos: 10,
            classes: 4,
            context: true,
            segments_per_video: 384,
            seed,
            ..SyntheticSpec::default()
        };
        let train_set = generate_synthetic(&spec).unwrap();
        // scored on unseen videos drawn from the same generator
        let test_set = generate_synthetic(&SyntheticSpec { seed: seed + 1000, ..spec }).unwrap();
        let gt = ground_truth_map(&test_set);
        let score = |cfg: &PipelineConfig, model: &PgcnModel| {
            let dets = detect_dataset(&test_set, Some(model), None, cfg, None).unwrap();
            mean_average_precision(&dets, &gt, &[0.5, 0.9]).unwrap().mean_ap
        };
        let mut row = [0.0; 5];
        for mode in [AggregationMode::Gcn, AggregationMode::Mlp] {
            let mut cfg = learning_config();
            cfg.mode = mode;
            cfg.train.seed = seed;
            let state = train_stream(&train_set, Stream::Rgb, &cfg, |_| {}).unwrap();
            let with = score(&cfg, &state.model);
            if mode == AggregationMode::Mlp {
                row[1] = with[0];
                continue;
            }
            cfg.eval.regression = false;
            let without = score(&cfg, &state.model);
            (row[0], row[2], row[3], row[4]) = (with[0], without[0], with[1], without[1]);
        }
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
        table.push_str(&format!(
            "      {seed:<6} {:.4}   {:.4}   {:.4}   | {:.4}   {:.4}\n",
            row[0], row[1], row[2], row[3], row[4]
        ));
    }
    let [gcn, mlp, noreg, gcn9, noreg9] = sums.map(|s| s / seeds as f64);
    table.push_str(&format!("      mean   {gcn:.4}   {mlp:.4}   {noreg:.4}   | {gcn9:.4}   {noreg9:.4}"));
    Outcome::new(
        gcn >= mlp && noreg <= gcn && noreg9 <= gcn9,
        format!(
            "mean mAP@0.5 on held-out videos: gcn {gcn:.4}, mlp {mlp:.4}, gcn without regression {noreg:.4} (at 0.9: {gcn9:.4} vs {noreg9:.4})\n{table}"
        ),
    )
}

// ---------------------------------------------------------------- 9

fn full_run(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let spec = SyntheticSpec { videos: 4, proposals_per_video: 30, seed: 11, ..SyntheticSpec::default() };
    let manifest = write_synthetic(&dir.join("data"), &spec).unwrap();
    let records = load_dataset(&manifest).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.train.epochs = 20;
    cfg.train.seed = 11;
    let rgb = train_stream(&records, Stream::Rgb, &cfg, |_| {}).unwrap();
    let flow = train_stream(&records, Stream::Flow, &cfg, |_| {}).unwrap();
    save(&rgb, &dir.join("rgb.ckpt")).unwrap();
    save(&flow, &dir.join("flow.ckpt")).unwrap();
    let dets = detect_dataset(&records, Some(&rgb.model), Some(&flow.model), &cfg, None).unwrap();
    write_detections(&dir.join("detections.tsv"), &dets).unwrap();
    let report = mean_average_precision(&dets, &ground_truth_map(&records), &cfg.eval.map_thresholds).unwrap();
    std::fs::write(dir.join("map.csv"), report.to_csv()).unwrap();

    let mut files = Vec::new();
    for name in ["rgb.ckpt", "flow.ckpt", "detections.tsv", "map.csv", "data/manifest.tsv"] {
        files.push((name.to_string(), std::fs::read(dir.join(name)).unwrap()));
    }
    files
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = full_run(a.path());
    // the second run is pinned to one worker
    let second = par::with_threads(Some(1), || full_run(b.path()));
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let bytes: usize = first.iter().map(|f| f.1.len()).sum();
    Outcome::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} files ({bytes} bytes) identical across two runs", first.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

// ---------------------------------------------------------------- 10

fn bench_sanity() -> Outcome {
    let cfg = BenchConfig { iterations: 30, rounds: 7, ..BenchConfig::default() };
    let report = run_bench(&cfg).unwrap();
    let gcn = report.seconds(AggregationMode::Gcn);
    let monotone = gcn.windows(2).all(|w| w[1] > w[0]);
    let mlp = report.seconds(AggregationMode::Mlp);
    let cells = |v: &[f64]| v.iter().map(|s| format!("{:.3}", s * 1e3)).collect::<Vec<_>>().join(" ");
    Outcome::new(
        monotone,
        format!(
            "ms/iter at N_s {:?}: gcn [{}], mlp [{}] ({} proposals)",
            cfg.sample_sizes,
            cells(&gcn),
            cells(&mlp),
            cfg.proposals
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("interval algebra vs discretized oracle", interval_oracle),
        ("graph candidates vs pairwise reference", graph_equivalence),
        ("analytic vs finite-difference gradients", gradient_check),
        ("offset encode/decode round trip", offset_round_trip),
        ("neighbor sampling fidelity", sampling_fidelity),
        ("mAP fixtures and NMS vs reference", evaluation_oracle),
        ("synthetic overfit", synthetic_overfit),
        ("ablation directionality", ablation),
        ("end-to-end determinism", determinism),
        ("bench cost grows with N_s", bench_sanity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let secs = start.elapsed().as_secs_f64();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2} {name} ({secs:.2} s): {}", i + 1, out.detail);
        failed += usize::from(!out.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
