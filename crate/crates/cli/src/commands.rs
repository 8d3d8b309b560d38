use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use seqshort::data::{
    bag_read, generate_synthetic, stratified_kfold, stratified_split, BagRecord, DatasetManifest,
    SyntheticTaskSpec, MANIFEST_FILE,
};
use seqshort::encoder::{checkpoint_load, checkpoint_save};
use seqshort::explain::{entropy_profile, heatmap_export, rollout, HeatmapFormat};
use seqshort::profiler::{bench, linear_fit, write_bench_csv};
use seqshort::training::{evaluate, predict_proba, train, Sample, TrainConfig};
use seqshort::{ClassifierModel, Error, HeadKind, ModelConfig, Result};

use crate::args::{BenchArgs, EvalArgs, ExplainArgs, GenArgs, Head, ModelArgs, ModelPreset, OnOff, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn gen(args: &GenArgs) -> Result<()> {
    let (witness_min, witness_max) = match args.witnesses {
        Some(w) => (w, w),
        None => (args.witness_min, args.witness_max),
    };
    if args.classes == 0 || args.bags % args.classes != 0 {
        return Err(Error::Config(format!(
            "--bags {} must be a positive multiple of --classes {}",
            args.bags, args.classes
        )));
    }
    let spec = SyntheticTaskSpec {
        num_classes: args.classes,
        feature_dim: args.dim,
        bag_min: args.bag_min,
        bag_max: args.bag_max,
        witness_min,
        witness_max,
        witness_shift: args.shift,
        noise_std: args.noise,
        seed: args.seed,
    };
    spec.validate()?;
    if !(args.val_frac > 0.0 && args.val_frac < 1.0) {
        return Err(Error::Config(format!("--val-frac must be in (0, 1), got {}", args.val_frac)));
    }
    create_dir(&args.out)?;
    let all = generate_synthetic(&spec, args.bags / args.classes, &args.out)?;
    let split = stratified_split(&all, &[("train", 1.0 - args.val_frac), ("val", args.val_frac)], args.seed)?;
    split.write(args.out.join(MANIFEST_FILE))?;
    if let Some(k) = args.folds {
        for (i, fold) in stratified_kfold(&all, k, args.seed)?.iter().enumerate() {
            fold.write(args.out.join(format!("manifest_fold{i}.csv")))?;
        }
    }
    write_json(&args.out.join("gen_config.json"), &json!({ "args": args, "spec": spec }))?;
    log::info!("wrote {} bags to {}", all.entries.len(), args.out.display());
    Ok(())
}

fn resolve_model(m: &ModelArgs, input_dim: usize, classes: usize) -> Result<ModelConfig> {
    let mut cfg = match m.model {
        ModelPreset::Toy => ModelConfig::toy(input_dim, classes),
        ModelPreset::Full => ModelConfig::full(input_dim, m.seq_len.unwrap_or(256), classes),
    };
    if let Some(s) = m.seq_len {
        cfg.seqshort.output_len = s;
        cfg.encoder.seq_len = s;
    }
    if let Some(h) = m.hidden_dim {
        cfg.seqshort.hidden_dim = h;
        cfg.encoder.hidden_dim = h;
        cfg.encoder.ffn_dim = 4 * h;
    }
    if let Some(k) = m.seqshort_heads {
        cfg.seqshort.num_heads = k;
    }
    if let Some(k) = m.encoder_heads {
        cfg.encoder.num_heads = k;
    }
    if let Some(l) = m.layers {
        cfg.encoder.num_layers = l;
    }
    if let Some(f) = m.ffn_dim {
        cfg.encoder.ffn_dim = f;
    }
    if let Some(h) = m.head {
        cfg.encoder.head = match h {
            Head::Linear => HeadKind::Linear,
            Head::Mlp => HeadKind::Mlp,
        };
    }
    if let Some(s) = m.init_std {
        cfg.init_std = s;
    }
    cfg.encoder.use_positional_embeddings = m.pos_embeddings == OnOff::On;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let manifest = DatasetManifest::read(&args.data)?;
    manifest.validate()?;
    let mut cfg = TrainConfig::by_name(args.preset.name())?;
    cfg.seed = args.seed;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.warmup_epochs {
        cfg.warmup_epochs = v;
    }
    if let Some(v) = args.cosine_cycles {
        cfg.cosine_cycles = v;
    }
    if let Some(v) = args.lr {
        cfg.max_lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.freeze {
        cfg.freeze_policy = v;
    }
    cfg.validate()?;
    let mut model_cfg = resolve_model(&args.model, manifest.feature_dim, manifest.num_classes)?;
    model_cfg.encoder.freeze_policy = cfg.freeze_policy;

    let train_bags = manifest.load_split("train")?;
    let val_bags = manifest.load_split("val")?;
    let mut model = ClassifierModel::<f32>::new(model_cfg, args.seed)?;
    let mut report = train(&mut model, &train_bags, &val_bags, &cfg)?;

    create_dir(&args.out)?;
    let ckpt = args.out.join("model.sqck");
    checkpoint_save(&model, &ckpt)?;
    report.checkpoint = Some(ckpt);
    let ablations: Vec<&str> = if model_cfg.encoder.use_positional_embeddings {
        vec![]
    } else {
        vec!["no_positional_embeddings"]
    };
    write_json(
        &args.out.join("report.json"),
        &json!({ "run_config": args, "ablations": ablations, "report": report }),
    )?;
    println!(
        "final validation AUROC {:.4} ({} trainable of {} parameters)",
        report.final_val.auroc.macro_mean, report.trainable_params, report.total_params
    );
    Ok(())
}

fn load_split(manifest: &DatasetManifest, split: &str) -> Result<Vec<BagRecord>> {
    if split == "all" {
        let mut m = manifest.clone();
        m.entries.iter_mut().for_each(|e| e.split = "all".into());
        return m.load_split("all");
    }
    manifest.load_split(split)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let model = checkpoint_load::<f32>(&args.checkpoint)?;
    let manifest = DatasetManifest::read(&args.data)?;
    let bags = load_split(&manifest, &args.split)?;
    let metrics = evaluate(&model, &Sample::from_bags(&bags))?;
    let out = json!({ "run_config": args, "model_config": model.config(), "metrics": metrics });
    match &args.out {
        Some(path) => write_json(path, &out)?,
        None => {
            // A closed pipe is not an evaluation failure.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}

fn file_stem(id: &str, index: usize, used: &mut HashSet<String>) -> String {
    let mut stem: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if stem.is_empty() || !used.insert(stem.clone()) {
        stem = format!("{stem}_{index}");
        used.insert(stem.clone());
    }
    stem
}

fn export_both(weights: &[f64], coords: &[(i32, i32)], out: &Path, stem: &str) -> Result<[PathBuf; 2]> {
    let csv = out.join(format!("{stem}.csv"));
    let pgm = out.join(format!("{stem}.pgm"));
    heatmap_export(weights, coords, &csv, HeatmapFormat::Csv)?;
    heatmap_export(weights, coords, &pgm, HeatmapFormat::Pgm)?;
    Ok([csv, pgm])
}

pub fn explain(args: &ExplainArgs) -> Result<()> {
    let model = checkpoint_load::<f32>(&args.checkpoint)?;
    let mut bags = args.bags.iter().map(bag_read).collect::<Result<Vec<_>>>()?;
    if let Some(data) = &args.data {
        bags.extend(load_split(&DatasetManifest::read(data)?, &args.split)?);
    }
    if bags.is_empty() {
        return Err(Error::Data("no bags given (use --bags or --data)".into()));
    }
    let s = model.config().seqshort.output_len;
    if let Some(q) = args.query.iter().find(|&&q| q >= s) {
        return Err(Error::Config(format!("--query {q} out of range for S = {s}")));
    }
    create_dir(&args.out)?;
    let samples = Sample::from_bags(&bags);
    let probs = predict_proba(&model, &samples)?;
    let mut used = HashSet::new();
    let mut per_bag = Vec::with_capacity(bags.len());
    for (i, (bag, sample)) in bags.iter().zip(&samples).enumerate() {
        let stem = file_stem(&bag.id, i, &mut used);
        let out = model.forward(&sample.x)?;
        let r = rollout(&out.trace).map_err(|e| match e {
            Error::ZeroMass => {
                log::error!("bag `{}`: [CLS] rollout row has zero mass", bag.id);
                e
            }
            other => other,
        })?;
        let mut files = export_both(&r.cls_heatmap, &bag.coords, &args.out, &format!("{stem}_rollout"))?.to_vec();
        let mean = out.trace.seqshort.head_mean();
        for &q in &args.query {
            files.extend(export_both(mean.row(q), &bag.coords, &args.out, &format!("{stem}_query{q}"))?);
        }
        per_bag.push(json!({
            "id": bag.id,
            "label": bag.label,
            "probabilities": probs[i],
            "cls_mass": r.cls_mass,
            "files": files,
        }));
    }
    let mut profile = entropy_profile(&model, &bags)?;
    if args.sort {
        profile = profile.sorted_descending();
    }
    let entropy_csv = args.out.join("entropy_profile.csv");
    profile.write_csv(&entropy_csv)?;
    write_json(
        &args.out.join("explain.json"),
        &json!({
            "run_config": args,
            "model_config": model.config(),
            "entropy_profile": entropy_csv,
            "bags": per_bag,
        }),
    )?;
    log::info!("explained {} bags into {}", bags.len(), args.out.display());
    Ok(())
}

pub fn bench_cmd(args: &BenchArgs) -> Result<()> {
    if args.lengths.is_empty() || args.lengths.contains(&0) {
        return Err(Error::Config(format!("--lengths must be positive, got {:?}", args.lengths)));
    }
    if args.repeats > 0 && args.repeats < 3 {
        return Err(Error::Config("--repeats must be 0 or at least 3".into()));
    }
    let dim = args.dim.unwrap_or(match args.model.model {
        ModelPreset::Toy => 32,
        ModelPreset::Full => 1280,
    });
    let cfg = resolve_model(&args.model, dim, args.classes)?;
    let rows = if args.repeats > 0 {
        let model = ClassifierModel::<f32>::new(cfg, args.seed)?;
        bench(&cfg, &args.lengths, Some((&model, args.repeats)))?
    } else {
        bench::<f32>(&cfg, &args.lengths, None)?
    };
    write_bench_csv(&rows, &args.out)?;
    let timing_fit = if args.repeats > 0 && rows.len() >= 2 {
        let m: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
        let t: Vec<f64> = rows.iter().map(|r| r.median_ms.unwrap_or(0.0)).collect();
        Some(linear_fit(&m, &t)?)
    } else {
        None
    };
    write_json(
        &args.out.with_extension("json"),
        &json!({ "run_config": args, "model_config": cfg, "timing_fit": timing_fit }),
    )?;
    Ok(())
}
