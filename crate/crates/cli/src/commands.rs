use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;

use pgcn::graph::build_graph;
use pgcn::io::synth::SyntheticSpec;
use pgcn::io::text::{read_detections, read_external_labels, read_ground_truth, write_detections};
use pgcn::io::{ground_truth_map, load_dataset, write_synthetic, PipelineConfig, Profile, Stream};
use pgcn::pipeline::{detect_dataset, num_classes, training_videos};
use pgcn::timing::{run_bench, BenchConfig};
use pgcn::trainer::{restore, save, train, TrainState, LOG_HEADER};

use crate::{BenchArgs, BuildGraphArgs, Cli, Command, EvalArgs, GraphArgs, Global, InferArgs, SynthArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth(a) => synth(g, a),
        Command::BuildGraph(a) => build_graph_cmd(g, a),
        Command::Train(a) => train_cmd(g, a),
        Command::Infer(a) => infer(g, a),
        Command::Eval(a) => eval(g, a),
        Command::Bench(a) => bench(g, a),
    }
}

/// The configuration file, if any, under an optional profile override.
fn load_config(g: &Global, profile: Option<Profile>) -> Result<PipelineConfig> {
    let mut cfg = match (&g.config, profile) {
        (Some(p), profile) => {
            let mut text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            if let Some(profile) = profile {
                // profile keys are applied before all others, the last one winning
                text.push_str(&format!("\nprofile = {}\n", profile.as_str()));
            }
            PipelineConfig::parse_str(p, &text)?
        }
        (None, profile) => PipelineConfig::for_profile(profile.unwrap_or(Profile::Thumos)),
    };
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn base_config(g: &Global) -> Result<PipelineConfig> {
    load_config(g, None)
}

fn apply_graph(cfg: &mut PipelineConfig, a: &GraphArgs) -> Result<()> {
    if a.no_contextual {
        cfg.graph.contextual = false;
    }
    if a.no_surrounding {
        cfg.graph.surrounding = false;
    }
    if let Some(t) = a.theta_ctx {
        cfg.graph.theta_ctx = t;
    }
    if let Some(t) = a.theta_sur {
        cfg.graph.theta_sur = t;
    }
    cfg.validate()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn synth(g: &Global, a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.videos {
        spec.videos = v;
    }
    if let Some(v) = a.classes {
        spec.classes = v;
    }
    if let Some(v) = a.proposals {
        spec.proposals_per_video = v;
    }
    if let Some(v) = a.dim {
        spec.feature_dim = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(v) = a.segments {
        spec.segments_per_video = v;
    }
    spec.context |= a.context;
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    let manifest = write_synthetic(&a.out, &spec)?;
    println!("{}", manifest.display());
    Ok(())
}

fn build_graph_cmd(g: &Global, a: &BuildGraphArgs) -> Result<()> {
    let mut cfg = base_config(g)?;
    apply_graph(&mut cfg, &a.graph)?;
    let records = load_dataset(&a.manifest)?;
    let selected: Vec<_> = records
        .iter()
        .filter(|r| a.video.as_ref().is_none_or(|v| *v == r.id))
        .collect();
    if selected.is_empty() {
        bail!("no video matches '{}'", a.video.as_deref().unwrap_or(""));
    }
    let stream = Stream::from(a.stream);
    for r in selected {
        let graph = build_graph(&r.proposal_set(stream)?, &cfg.graph)?;
        match &a.out {
            Some(dir) => {
                let path = dir.join(format!("{}.edges.tsv", r.id));
                let mut w = create(&path)?;
                graph.write_edge_list(&mut w)?;
                w.flush()?;
                info!("{}: {} edges -> {}", r.id, graph.edges().len(), path.display());
            }
            None if a.video.is_some() => graph.write_edge_list(std::io::stdout().lock())?,
            None => bail!("--out is required when writing more than one video"),
        }
    }
    Ok(())
}

fn train_cmd(g: &Global, a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(g, a.profile.map(Profile::from))?;
    if let Some(n) = &a.n_s {
        cfg.set("neighbor_samples", n)?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    let stream = Stream::from(a.stream);
    if let Some(lr) = a.lr {
        match stream {
            Stream::Rgb => cfg.lr_rgb = lr,
            Stream::Flow => cfg.lr_flow = lr,
        }
    }
    apply_graph(&mut cfg, &a.graph)?;

    let records = load_dataset(&a.manifest)?;
    let classes = num_classes(&records);
    if classes == 0 {
        bail!("{}: no annotated instances to train on", a.manifest.display());
    }
    let videos = training_videos(&records, stream, &cfg)?;
    let Some(first) = videos.first() else {
        bail!("{}: no trainable videos", a.manifest.display());
    };
    let train_cfg = cfg.train_config(stream);
    let mut state = match &a.resume {
        Some(p) => {
            let s = restore(p)?;
            info!("resuming from {} at epoch {}", p.display(), s.epoch);
            s
        }
        None => TrainState::new(&cfg.model_config(classes, first.proposals.feature_dim()), &train_cfg)?,
    };

    let mut log = a.log.as_deref().map(create).transpose()?;
    if let Some(w) = &mut log {
        writeln!(w, "{LOG_HEADER}")?;
    }
    let mut log_err = None;
    train(&videos, &mut state, &train_cfg, |m| {
        info!("{m}");
        if let Some(w) = &mut log {
            if let Err(e) = writeln!(w, "{m}") {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).context("writing training log");
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    save(&state, &a.out)?;
    info!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn infer(g: &Global, a: &InferArgs) -> Result<()> {
    let mut cfg = base_config(g)?;
    if let Some(t) = a.nms_threshold {
        cfg.eval.nms_threshold = t;
    }
    if let Some(k) = a.top_k {
        cfg.eval.top_k = k;
    }
    if a.no_regression {
        cfg.eval.regression = false;
    }
    apply_graph(&mut cfg, &a.graph)?;
    if a.rgb.is_none() && a.flow.is_none() {
        bail!("infer needs --rgb, --flow, or both");
    }
    let rgb = a.rgb.as_deref().map(restore).transpose()?.map(|s| s.model);
    let flow = a.flow.as_deref().map(restore).transpose()?.map(|s| s.model);
    let external = a.external.as_deref().map(read_external_labels).transpose()?;
    let records = load_dataset(&a.manifest)?;
    let dets = detect_dataset(&records, rgb.as_ref(), flow.as_ref(), &cfg, external.as_ref())?;
    write_detections(&a.out, &dets)?;
    info!("{} detections written to {}", dets.len(), a.out.display());
    Ok(())
}

fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let mut cfg = base_config(g)?;
    if let Some(t) = &a.thresholds {
        cfg.set("map_thresholds", t)?;
        cfg.validate()?;
    }
    let gt = match (&a.manifest, &a.ground_truth) {
        (Some(m), _) => ground_truth_map(&load_dataset(m)?),
        (None, Some(p)) => read_ground_truth(p)?,
        (None, None) => bail!("eval needs --manifest or --ground-truth"),
    };
    let dets = read_detections(&a.detections)?;
    let report = pgcn::eval::mean_average_precision(&dets, &gt, &cfg.eval.map_thresholds)?;
    print!("{}", report.to_table());
    println!();
    print!("{}", report.to_csv());
    if let Some(p) = &a.csv {
        std::fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.per_class {
        std::fs::write(p, report.per_class_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn bench(g: &Global, a: &BenchArgs) -> Result<()> {
    if a.sizes.is_empty() {
        bail!("--sizes must list at least one sample size");
    }
    let cfg = BenchConfig {
        proposals: a.proposals,
        feature_dim: a.dim,
        sample_sizes: a.sizes.clone(),
        iterations: a.iterations,
        rounds: a.rounds,
        seed: g.seed.unwrap_or(0),
        ..BenchConfig::default()
    };
    let report = run_bench(&cfg)?;
    print!("{}", report.to_table());
    Ok(())
}
