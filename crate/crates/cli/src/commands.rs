use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use longtail_core::anno::{
    category_stats, serialize_dataset, AnnotationRecord, Dataset, ImageRecord, RleMask,
    Segmentation,
};
use longtail_core::compositor::{
    copy_paste, maybe_mosaic, select_paste_instances, BucketWeights, Sample,
};
use longtail_core::ema::{
    read_checkpoint, write_checkpoint, ApCurve, ApRecord, EmaState, SelectionCriterion,
};
use longtail_core::eval::{
    evaluate, parse_results, rescore, serialize_results, Detection, MetricKind,
};
use longtail_core::fixture::{gen_fixture, render_image};
use longtail_core::rfs::{build_epoch_schedule, compute_repeat_factors};
use longtail_core::seed;
use longtail_core::seesaw::{gradient_check, seesaw_loss};
use longtail_core::tta::{fuse, unmap, TtaView};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ToolConfig;
use crate::io::{emit_json, load_dataset, load_image, read_text, to_json, write_atomic, write_png};
use crate::{Cli, Command, MetricArg, SeesawCommand, UsageError};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(path) => ToolConfig::load(path).map_err(|e| UsageError(format!("{e:#}")))?,
        None => ToolConfig::default(),
    };
    match cli.command {
        Command::Stats(a) => stats(&a.annotations, a.out.as_deref()),
        Command::Rfs(a) => rfs(&cfg, a),
        Command::Copypaste(a) => copypaste(&cfg, a),
        Command::Mosaic(a) => mosaic(&cfg, a),
        Command::Seesaw(SeesawCommand::Loss(a)) => {
            let mut block = cfg.seesaw.clone();
            block.p = a.p.unwrap_or(block.p);
            block.q = a.q.unwrap_or(block.q);
            let eval = seesaw_loss(&a.logits, a.label, &block.with_counts(a.counts))?;
            emit_json(
                None,
                &serde_json::json!({ "loss": eval.loss, "grad": eval.grad }),
            )
        }
        Command::Seesaw(SeesawCommand::GradCheck(a)) => grad_check(&cfg, a),
        Command::Ema(a) => ema(&cfg, a),
        Command::Select(a) => select(a),
        Command::Eval(a) => eval(&cfg, a),
        Command::TtaFuse(a) => tta_fuse(&cfg, a),
        Command::GenFixture(a) => fixture(&cfg, a),
    }
}

fn require_seed(flag: Option<u64>, cfg: &ToolConfig) -> anyhow::Result<u64> {
    flag.or(cfg.seed).ok_or_else(|| {
        UsageError("this command is randomized: pass --seed or set `seed` in the config".into())
            .into()
    })
}

fn stats(annotations: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let ds = load_dataset(annotations)?;
    emit_json(out, &category_stats(&ds))
}

#[derive(Serialize)]
struct ScheduleOut<'a> {
    seed: u64,
    epoch: u64,
    threshold: f64,
    expected_len: f64,
    entries: &'a [u64],
}

fn rfs(cfg: &ToolConfig, a: crate::RfsArgs) -> anyhow::Result<()> {
    let seed = require_seed(a.seed, cfg)?;
    let ds = load_dataset(&a.annotations)?;
    let rf = compute_repeat_factors(&ds, a.threshold.unwrap_or(cfg.rfs.threshold))?;
    let schedule = build_epoch_schedule(&rf, a.epoch, seed);
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "repeat_factor", "multiplicity"])?;
        let mut counts: HashMap<u64, usize> = HashMap::new();
        for &id in &schedule.entries {
            *counts.entry(id).or_insert(0) += 1;
        }
        for &(id, r) in &rf.per_image {
            let m = counts.get(&id).copied().unwrap_or(0);
            w.write_record([id.to_string(), r.to_string(), m.to_string()])?;
        }
        write_atomic(path, &w.into_inner()?)?;
    }
    emit_json(
        a.out.as_deref(),
        &ScheduleOut {
            seed,
            epoch: a.epoch,
            threshold: rf.threshold,
            expected_len: rf.expected_len(),
            entries: &schedule.entries,
        },
    )
}

/// Loads the pixels and masks of dataset images on demand.
struct SampleCache<'a> {
    ds: &'a Dataset,
    dir: &'a Path,
    loaded: HashMap<u64, Sample>,
}

impl<'a> SampleCache<'a> {
    fn new(ds: &'a Dataset, dir: &'a Path) -> Self {
        Self {
            ds,
            dir,
            loaded: HashMap::new(),
        }
    }

    fn get(&mut self, image_id: u64) -> anyhow::Result<&Sample> {
        if !self.loaded.contains_key(&image_id) {
            let rec = self
                .ds
                .image(image_id)
                .with_context(|| format!("unknown image id {image_id}"))?;
            let img = load_image(self.dir, rec)?;
            self.loaded
                .insert(image_id, Sample::from_dataset(self.ds, image_id, img)?);
        }
        Ok(&self.loaded[&image_id])
    }
}

/// Builds a dataset holding `outputs`, keeping the source categories.
fn samples_dataset(src: &Dataset, outputs: &[(ImageRecord, &Sample)]) -> anyhow::Result<Dataset> {
    let mut annotations = Vec::new();
    for (rec, sample) in outputs {
        for a in &sample.annotations {
            let Some(bbox) = a.bbox() else { continue };
            annotations.push(AnnotationRecord {
                id: annotations.len() as u64 + 1,
                image_id: rec.id,
                category_id: a.category_id,
                segmentation: Segmentation::Rle(RleMask::encode(&a.mask)),
                bbox,
                area: a.area() as f64,
            });
        }
    }
    let images = outputs.iter().map(|(r, _)| r.clone()).collect();
    Ok(Dataset::new(
        images,
        src.categories().to_vec(),
        annotations,
    )?)
}

fn copypaste(cfg: &ToolConfig, a: crate::CopyPasteArgs) -> anyhow::Result<()> {
    let seed = require_seed(a.seed, cfg)?;
    let ds = load_dataset(&a.annotations)?;
    let mut params = cfg.paste.clone();
    if let Some(n) = a.n_instances {
        params.n_instances = n;
    }
    if let Some(w) = &a.weights {
        params.bucket_weights = BucketWeights {
            rare: w[0],
            common: w[1],
            frequent: w[2],
        };
    }
    let picks = select_paste_instances(&ds, &params, seed)?;
    let mut cache = SampleCache::new(&ds, &a.images);
    let target = cache.get(a.image_id)?.clone();
    for p in &picks {
        cache.get(p.image_id)?;
    }
    let sources: Vec<(&Sample, u64)> = picks
        .iter()
        .map(|p| (&cache.loaded[&p.image_id], p.annotation_id))
        .collect();
    let out = copy_paste(&target, &sources, &params, seed::derive(seed, 1))?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let rec = ds.image(a.image_id).expect("loaded above").clone();
    write_png(
        &a.out_dir.join("images").join(&rec.file_name),
        &out.sample.image,
    )?;
    let result = samples_dataset(&ds, &[(rec, &out.sample)])?;
    write_atomic(
        &a.out_dir.join("annotations.json"),
        serialize_dataset(&result).as_bytes(),
    )?;
    emit_json(
        None,
        &serde_json::json!({ "pasted": picks, "instances": out.sample.annotations.len(), "warnings": out.warnings }),
    )
}

fn mosaic(cfg: &ToolConfig, a: crate::MosaicArgs) -> anyhow::Result<()> {
    let seed = require_seed(a.seed, cfg)?;
    let ds = load_dataset(&a.annotations)?;
    let mut params = cfg.mosaic.clone();
    if let Some(p) = a.apply_prob {
        params.apply_prob = p;
    }
    let rf = compute_repeat_factors(&ds, a.threshold.unwrap_or(cfg.rfs.threshold))?;
    let schedule = build_epoch_schedule(&rf, a.epoch, seed);
    let needed = (a.count * 4).min(schedule.entries.len());
    let mut cache = SampleCache::new(&ds, &a.images);
    let mut pool = Vec::with_capacity(needed);
    for &id in &schedule.entries[..needed] {
        pool.push(cache.get(id)?.clone());
    }
    let mut outputs = Vec::new();
    let mut mosaics = 0usize;
    for (k, item) in maybe_mosaic(pool, params, seed::derive(seed, 1))?
        .take(a.count)
        .enumerate()
    {
        let item = item?;
        mosaics += usize::from(item.is_mosaic());
        let sample = item.into_sample();
        let rec = ImageRecord {
            id: k as u64 + 1,
            width: sample.width(),
            height: sample.height(),
            file_name: format!("{:06}.png", k + 1),
        };
        write_png(
            &a.out_dir.join("images").join(&rec.file_name),
            &sample.image,
        )?;
        outputs.push((rec, sample));
    }
    let refs: Vec<(ImageRecord, &Sample)> = outputs.iter().map(|(r, s)| (r.clone(), s)).collect();
    let result = samples_dataset(&ds, &refs)?;
    write_atomic(
        &a.out_dir.join("annotations.json"),
        serialize_dataset(&result).as_bytes(),
    )?;
    emit_json(
        None,
        &serde_json::json!({ "outputs": outputs.len(), "mosaics": mosaics }),
    )
}

fn grad_check(cfg: &ToolConfig, a: crate::GradCheckArgs) -> anyhow::Result<()> {
    let seed = require_seed(a.seed, cfg)?;
    if a.classes < 2 {
        return Err(UsageError("--classes must be at least 2".into()).into());
    }
    let mut rng = seed::rng(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..a.cases {
        let logits: Vec<f64> = (0..a.classes)
            .map(|_| rng.random_range(-4.0..4.0))
            .collect();
        let counts: Vec<u64> = (0..a.classes)
            .map(|_| {
                if rng.random_bool(0.3) {
                    0
                } else {
                    rng.random_range(1..5000)
                }
            })
            .collect();
        let label = rng.random_range(0..a.classes);
        let err = gradient_check(&logits, label, &cfg.seesaw.with_counts(counts), 1e-5)?;
        worst = worst.max(err);
    }
    let pass = worst < a.tolerance;
    emit_json(
        None,
        &serde_json::json!({ "cases": a.cases, "max_rel_error": worst, "tolerance": a.tolerance, "pass": pass }),
    )?;
    if !pass {
        bail!(
            "gradient check failed: max relative error {worst:e} >= {:e}",
            a.tolerance
        );
    }
    Ok(())
}

fn ema(cfg: &ToolConfig, a: crate::EmaArgs) -> anyhow::Result<()> {
    let mut state = EmaState::new(a.decay.unwrap_or(cfg.ema.decay))?;
    for path in &a.checkpoints {
        let file =
            std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let params = read_checkpoint(std::io::BufReader::new(file))
            .with_context(|| format!("reading {}", path.display()))?;
        let weights: Vec<f64> = params.iter().map(|&v| f64::from(v)).collect();
        state
            .update(&weights)
            .with_context(|| format!("updating with {}", path.display()))?;
    }
    let shadow: Vec<f32> = state
        .shadow()
        .unwrap_or_default()
        .iter()
        .map(|&v| v as f32)
        .collect();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &shadow)?;
    write_atomic(&a.out, &buf)
}

fn select(a: crate::SelectArgs) -> anyhow::Result<()> {
    let criterion: SelectionCriterion = a
        .criterion
        .parse()
        .map_err(|e| UsageError(format!("--criterion: {e}")))?;
    let records: Vec<ApRecord> = serde_json::from_str(&read_text(&a.curve)?)
        .with_context(|| format!("parsing {}", a.curve.display()))?;
    let curve = ApCurve::new(records)?;
    let epoch = longtail_core::ema::select_epoch(&curve, criterion)?;
    emit_json(
        None,
        &serde_json::json!({ "criterion": a.criterion, "epoch": epoch }),
    )
}

fn eval(cfg: &ToolConfig, a: crate::EvalArgs) -> anyhow::Result<()> {
    let gt = load_dataset(&a.gt)?;
    let mut dets = parse_results(&read_text(&a.results)?)
        .with_context(|| format!("loading {}", a.results.display()))?;
    if a.rescore {
        dets = rescore(&dets)?;
    }
    let mut ec = cfg.eval.clone();
    if let Some(m) = a.metric {
        ec.metric = match m {
            MetricArg::Mask => MetricKind::MaskIou,
            MetricArg::Boundary => MetricKind::BoundaryIou,
        };
    }
    ec.fixed_ap |= a.fixed_ap;
    if let Some(n) = a.max_per_img {
        ec.max_per_img = n;
    }
    if let Some(n) = a.max_per_class {
        ec.max_per_class_dataset = n;
    }
    let report = evaluate(&gt, &dets, &ec)?;
    emit_json(a.report.as_deref(), &report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewResults {
    view: TtaView,
    results: Vec<Detection>,
}

fn tta_fuse(cfg: &ToolConfig, a: crate::TtaFuseArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.annotations)?;
    let views: Vec<ViewResults> = serde_json::from_str(&read_text(&a.views)?)
        .with_context(|| format!("parsing {}", a.views.display()))?;
    let mut fc = cfg.fuse.clone();
    if let Some(t) = a.nms_iou {
        fc.nms_iou = t;
    }
    fc.mask_vote |= a.mask_vote;
    let mut sets = Vec::with_capacity(views.len());
    for v in &views {
        let mut mapped = Vec::with_capacity(v.results.len());
        for d in &v.results {
            let im = ds
                .image(d.image_id)
                .with_context(|| format!("unknown image id {}", d.image_id))?;
            mapped.extend(unmap(
                std::slice::from_ref(d),
                v.view,
                (im.width, im.height),
            )?);
        }
        sets.push(mapped);
    }
    let fused = fuse(&sets, &fc)?;
    let text = serialize_results(&fused);
    match &a.out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "fixture".into());
    out.with_file_name(format!("{stem}.truth.json"))
}

fn fixture(cfg: &ToolConfig, a: crate::GenFixtureArgs) -> anyhow::Result<()> {
    let seed = require_seed(a.seed, cfg)?;
    let mut params = cfg.fixture.clone();
    if let Some(n) = a.categories {
        params.n_categories = n;
    }
    if let Some(s) = a.zipf {
        params.zipf_s = s;
    }
    if let Some(n) = a.images {
        params.n_images = n;
    }
    let fx = gen_fixture(&params, seed)?;
    for w in &fx.truth.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(dir) = &a.render_dir {
        for im in fx.dataset.images() {
            write_png(&dir.join(&im.file_name), &render_image(&fx.dataset, im.id)?)?;
        }
    }
    write_atomic(&a.out, serialize_dataset(&fx.dataset).as_bytes())?;
    let sidecar = a.sidecar.clone().unwrap_or_else(|| sidecar_path(&a.out));
    write_atomic(&sidecar, to_json(&fx.truth).as_bytes())
}
