use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use penh::config::KvConfig;
use penh::data::{self, Image, PairOperator, Split};
use penh::enhance::{build_can, CanConfig, CanModel};
use penh::quality::{build_tiny_nima, eval_metrics, EvalReport, NimaConfig, NimaModel};
use penh::train::{self, Checkpoint, Dtype, TrainConfig};
use penh::Tensor;

use crate::manifest::{create_dir, out_dir, usage, RunManifest};
use crate::{EnhanceArgs, EvalArgs, GenDataArgs, ScoreArgs, TrainCanArgs, TrainNimaArgs};

const RUN_MANIFEST: &str = "run_manifest.txt";

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let (h, w) = a.size;
    let operator: PairOperator = a.operator.parse().map_err(|e: penh::Error| usage(e.to_string()))?;
    let can = CanConfig::with_depth(a.can_depth, 32);
    can.validate()?;
    let (min, dilation) = can.min_size();
    if h < min || w < min {
        return Err(usage(format!(
            "--size {h}x{w} is below the {min}x{min} minimum of a depth-{} enhancer (dilation {dilation})",
            a.can_depth
        )));
    }
    let out = out_dir(a.out);
    create_dir(&out)?;
    let mut m = RunManifest::new("gen-data");
    m.set("seed", a.seed)
        .set("count", a.count)
        .set("size", format!("{h}x{w}"))
        .set("operator", operator)
        .set("can_depth", a.can_depth)
        .set_path("out", &out)
        .set_path("dataset_manifest", &out.join(data::synth::MANIFEST_FILE));
    m.write(&out.join(RUN_MANIFEST))?;

    let sets = data::make_datasets(a.seed, a.count, h, w, operator)?;
    let manifest = data::write_datasets(&out, &sets)?;
    println!(
        "wrote {} rated images and {} pairs to {} (manifest {})",
        sets.rated.len(),
        sets.pairs.len(),
        out.display(),
        manifest.display()
    );
    Ok(())
}

/// Loads `--config`, rejecting keys that are neither training keys nor
/// model keys under `model_prefix`.
fn load_config(path: Option<&Path>, model_prefix: &str) -> Result<KvConfig> {
    let Some(path) = path else { return Ok(KvConfig::new()) };
    let kv = KvConfig::load(path)?;
    let known: BTreeSet<String> = TrainConfig::nima().to_kv().keys().cloned().collect();
    for key in kv.keys() {
        if !known.contains(key) && !key.starts_with(model_prefix) && key != "dtype" {
            return Err(usage(format!("{}: unknown config key `{key}`", path.display())));
        }
    }
    Ok(kv)
}

fn parse_dtype(s: &str) -> Result<Dtype> {
    s.parse().map_err(|e: penh::Error| usage(e.to_string()))
}

fn load_nima(path: &Path) -> Result<NimaModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading quality model {}", path.display()))?;
    Ok(ckpt.to_nima()?)
}

fn load_can(path: &Path) -> Result<CanModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading enhancer {}", path.display()))?;
    Ok(ckpt.to_can()?)
}

fn report_row(r: &EvalReport) -> [String; 4] {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    [r.two_class_accuracy.to_string(), opt(r.lcc), opt(r.srcc), r.mean_emd.to_string()]
}

fn write_report(path: &Path, r: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["two_class_accuracy", "lcc", "srcc", "mean_emd"])?;
    w.write_record(report_row(r))?;
    w.flush()?;
    Ok(())
}

fn evaluate_predictor(model: &NimaModel, set: &[(Tensor, penh::quality::RatingDistribution)]) -> Result<EvalReport> {
    let predicted = set.iter().map(|(x, _)| model.predict(x)).collect::<penh::Result<Vec<_>>>()?;
    let truth: Vec<_> = set.iter().map(|(_, r)| r.clone()).collect();
    Ok(eval_metrics(&predicted, &truth)?)
}

pub fn train_nima(a: TrainNimaArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref(), "nima.")?;
    let mut cfg = TrainConfig::from_kv(&kv, TrainConfig::nima_desk())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.step_budget = s;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    let model_cfg = NimaConfig::from_kv(&kv, "nima.")?;
    let dtype = parse_dtype(&a.dtype)?;

    let out = out_dir(a.out);
    create_dir(&out)?;
    let ckpt_path = out.join("nima.ckpt");
    let history_path = out.join("nima_history.csv");
    let report_path = out.join("nima_eval.csv");
    let mut model_kv = KvConfig::new();
    model_cfg.to_kv(&mut model_kv, "");
    let mut m = RunManifest::new("train-nima");
    m.set_path("data", &a.data)
        .set("seed", cfg.seed)
        .set("dtype", dtype)
        .extend("train.", &cfg.to_kv())
        .extend("nima.", &model_kv)
        .set_path("checkpoint", &ckpt_path)
        .set_path("history", &history_path)
        .set_path("report", &report_path);
    m.write(&out.join(RUN_MANIFEST))?;

    let sets = data::load_datasets(&a.data)?;
    let train_set = sets.rated_split(Split::Train);
    let model = build_tiny_nima(model_cfg, cfg.seed)?;
    let (model, history) = train::train_nima_from(model, &train_set, &cfg, |epoch, loss| {
        if epoch % 10 == 0 {
            eprintln!("epoch {epoch}: loss {loss:.6}");
        }
    })?;

    let mut ckpt = Checkpoint::from_nima(&model, dtype);
    ckpt.set_meta("steps", cfg.step_budget);
    ckpt.set_meta("seed", cfg.seed);
    ckpt.set_meta("config_sha256", cfg.to_kv().sha256_hex());
    ckpt.save(&ckpt_path)?;

    let mut w = csv::Writer::from_path(&history_path)?;
    w.write_record(["epoch", "loss"])?;
    for (e, l) in history.epoch_loss.iter().enumerate() {
        w.write_record([e.to_string(), l.to_string()])?;
    }
    w.flush()?;

    let test_set = sets.rated_split(Split::Test);
    if test_set.len() >= 2 {
        let report = evaluate_predictor(&model, &test_set)?;
        write_report(&report_path, &report)?;
        let [acc, lcc, srcc, emd] = report_row(&report);
        println!("test split: accuracy {acc}, lcc {lcc}, srcc {srcc}, mean emd {emd}");
    }
    println!("parameters sha256 {}", model.params.sha256_hex());
    Ok(())
}

pub fn train_can(a: TrainCanArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref(), "can.")?;
    let mut cfg = TrainConfig::from_kv(&kv, TrainConfig::can())?;
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.step_budget = s;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let mut can_kv = kv.clone();
    if let Some(d) = a.depth {
        can_kv.set("can.depth", d);
    }
    let can_cfg = CanConfig::from_kv(&can_kv, "can.")?;
    let dtype = parse_dtype(a.dtype.as_deref().or(kv.raw("dtype")).unwrap_or("f32"))?;

    let out = out_dir(a.out);
    create_dir(&out)?;
    let ckpt_path = out.join("can.ckpt");
    let history_path = out.join("can_history.csv");
    let mut model_kv = KvConfig::new();
    can_cfg.to_kv(&mut model_kv, "");
    let mut m = RunManifest::new("train-can");
    m.set_path("data", &a.data)
        .set_path("nima", &a.nima)
        .set("seed", cfg.seed)
        .set("dtype", dtype)
        .extend("train.", &cfg.to_kv())
        .extend("can.", &model_kv)
        .set_path("checkpoint", &ckpt_path)
        .set_path("history", &history_path);
    m.write(&out.join(RUN_MANIFEST))?;

    let nima = load_nima(&a.nima)?.freeze();
    let sets = data::load_datasets(&a.data)?;
    let pairs = sets.pair_split(Split::Train);
    let model = build_can(can_cfg, cfg.seed)?;
    let every = (cfg.step_budget / 20).max(1);
    let (model, history) = train::train_can_from(model, &pairs, &nima, &cfg, |r| {
        if r.step % every == 0 {
            eprintln!("step {}: fidelity {:.6e} gamma*q {:.6e}", r.step, r.fidelity, r.gamma_q);
        }
    })?;

    let mut ckpt = Checkpoint::from_can(&model, dtype);
    ckpt.set_meta("steps", cfg.step_budget);
    ckpt.set_meta("seed", cfg.seed);
    ckpt.set_meta("gamma", cfg.gamma);
    ckpt.set_meta("config_sha256", cfg.to_kv().sha256_hex());
    ckpt.save(&ckpt_path)?;
    let f = std::fs::File::create(&history_path).with_context(|| format!("creating {}", history_path.display()))?;
    history.write_csv(std::io::BufWriter::new(f)).with_context(|| format!("writing {}", history_path.display()))?;
    if let Some(last) = history.last() {
        println!("final step {}: fidelity {:e}, gamma*q {:e}, total {:e}", last.step, last.fidelity, last.gamma_q, last.total);
    }
    Ok(())
}

/// Expands directories into their `.ppm` files; the result is sorted by
/// path.
fn collect_images(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for entry in std::fs::read_dir(p).with_context(|| format!("listing {}", p.display()))? {
                let path = entry.with_context(|| format!("listing {}", p.display()))?.path();
                if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
                    out.push(path);
                }
            }
        } else {
            out.push(p.clone());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| out_dir(None).join("scores.csv"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let images = collect_images(&a.images)?;
    let mut m = RunManifest::new("score");
    m.set_path("nima", &a.nima).set("images", images.len()).set_path("out", &out);
    m.write(&out.with_extension("manifest.txt"))?;

    let nima = load_nima(&a.nima)?;
    let mut w = csv::Writer::from_path(&out)?;
    let mut header = vec!["path".to_string(), "nima_score".to_string()];
    header.extend((1..=nima.config.buckets).map(|k| format!("p{k}")));
    w.write_record(&header)?;
    for path in &images {
        let img = data::read_image(path)?;
        let dist = nima.predict(img.tensor())?;
        let mut row = vec![path.display().to_string(), dist.mean_score().to_string()];
        row.extend(dist.probs().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("scored {} images into {}", images.len(), out.display());
    Ok(())
}

pub fn enhance(a: EnhanceArgs) -> Result<()> {
    let out = out_dir(a.out);
    create_dir(&out)?;
    let images = collect_images(&a.images)?;
    let mut names = BTreeSet::new();
    for p in &images {
        let name = p.file_name().ok_or_else(|| usage(format!("{} has no file name", p.display())))?;
        if !names.insert(name.to_owned()) {
            return Err(usage(format!("two inputs are named {}", name.to_string_lossy())));
        }
    }
    let mut m = RunManifest::new("enhance");
    m.set_path("can", &a.can).set("images", images.len()).set_path("out", &out);
    m.write(&out.join(RUN_MANIFEST))?;

    let can = load_can(&a.can)?;
    for path in &images {
        let img = data::read_image(path)?;
        let y = can.forward(img.tensor()).with_context(|| format!("enhancing {}", path.display()))?;
        let target = out.join(path.file_name().expect("checked above"));
        data::write_image(&target, &Image::clamped(y)?)?;
    }
    println!("enhanced {} images into {}", images.len(), out.display());
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let out = out_dir(a.out);
    create_dir(&out)?;
    let methods_path = out.join("eval_methods.csv");
    let scores_path = out.join("eval_scores.csv");
    let report_path = out.join("nima_eval.csv");
    let mut m = RunManifest::new("eval");
    m.set_path("nima", &a.nima)
        .set_path("can", &a.can)
        .set_path("can_baseline", &a.can_baseline)
        .set_path("data", &a.data)
        .set("score_std", "population")
        .set_path("methods", &methods_path)
        .set_path("scores", &scores_path)
        .set_path("report", &report_path);
    m.write(&out.join(RUN_MANIFEST))?;

    let nima = load_nima(&a.nima)?;
    let can = load_can(&a.can)?;
    let baseline = load_can(&a.can_baseline)?;
    let sets = data::load_datasets(&a.data)?;
    let test: Vec<_> = sets.pairs.iter().filter(|p| p.split == Split::Test).collect();
    if test.is_empty() {
        return Err(penh::Error::EmptyDataset.into());
    }

    let names = ["input", "reference", "CAN(L2)", "CAN(L2+NIMA)"];
    let mut scores = vec![Vec::new(); 4];
    let mut psnrs = vec![Vec::new(); 4];
    let mut per_image = csv::Writer::from_path(&scores_path)?;
    per_image.write_record(["pair_id", "method", "nima_score", "psnr"])?;
    for p in &test {
        let x = p.input.tensor();
        let r = p.reference.tensor();
        let outputs = [
            x.clone(),
            r.clone(),
            Image::clamped(baseline.forward(x)?)?.into_tensor(),
            Image::clamped(can.forward(x)?)?.into_tensor(),
        ];
        for (k, y) in outputs.iter().enumerate() {
            let s = nima.score(y)?;
            let q = data::psnr(y, r)?;
            scores[k].push(s);
            psnrs[k].push(q);
            per_image.write_record([p.id.to_string(), names[k].to_string(), s.to_string(), q.to_string()])?;
        }
    }
    per_image.flush()?;

    let mut w = csv::Writer::from_path(&methods_path)?;
    w.write_record(["method", "count", "mean_score", "std_score", "mean_psnr"])?;
    println!("{:<14} {:>6} {:>11} {:>10} {:>10}", "method", "count", "mean_score", "std_score", "psnr_db");
    for k in 0..4 {
        let (mean, std) = mean_std(&scores[k]);
        let (psnr, _) = mean_std(&psnrs[k]);
        w.write_record([names[k].to_string(), test.len().to_string(), mean.to_string(), std.to_string(), psnr.to_string()])?;
        println!("{:<14} {:>6} {:>11.4} {:>10.4} {:>10.3}", names[k], test.len(), mean, std, psnr);
    }
    w.flush()?;

    let rated = sets.rated_split(Split::Test);
    if rated.len() >= 2 {
        let report = evaluate_predictor(&nima, &rated)?;
        write_report(&report_path, &report)?;
        let [acc, lcc, srcc, emd] = report_row(&report);
        println!("predictor on rated test split: accuracy {acc}, lcc {lcc}, srcc {srcc}, mean emd {emd}");
    }
    Ok(())
}
