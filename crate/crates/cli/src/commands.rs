use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lpca_core::data_io::{checkpoint, load_manifest, netpbm, synth, to_byte, write_dataset, FloatSample, Image, Sample};
use lpca_core::metrics::{EvalPair, ImageScores, MetricReport};
use lpca_core::model::accounting::{count_params_flops, PUBLISHED_MACS, PUBLISHED_PARAMS};
use lpca_core::model::{end_to_end_gradcheck, LpcaNet, ModelConfig, Preset};
use lpca_core::training::{predict, train};
use lpca_core::{Error, Result};
use lpca_tensor::checks::{self, OpCheck};
use lpca_tensor::gradcheck::GradcheckReport;
use lpca_tensor::layers::Mode;
use lpca_tensor::{ModuleExt, Tape};
use rayon::prelude::*;

use crate::config::{RunConfig, RESOLVED_NAME};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn is_generated(name: &str) -> bool {
    name == "manifest.tsv"
        || name == RESOLVED_NAME
        || ["_rgb.ppm", "_depth.pgm", "_mask.pgm"].iter().any(|s| name.ends_with(s))
}

pub fn synth_cmd(cfg: &RunConfig, force: bool) -> Result<()> {
    let out = require(&cfg.out, "out")?;
    cfg.synth.validate()?;
    if let Ok(entries) = fs::read_dir(out) {
        let names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        if !names.is_empty() {
            if !force {
                return Err(Error::Config(format!(
                    "{} exists and is not empty (use --force to overwrite)",
                    out.display()
                )));
            }
            // Only files this command writes are removed.
            for name in names.iter().filter(|n| is_generated(n)) {
                let p = out.join(name);
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    let samples = synth::generate(&cfg.synth, cfg.synth_count)?;
    let manifest = write_dataset(&samples, out)?;
    cfg.write_resolved(out)?;
    let defect_px: usize = samples.iter().map(|s| s.mask.data.iter().filter(|&&v| v > 0).count()).sum();
    let total_px: usize = samples.iter().map(|s| s.mask.data.len()).sum();
    println!(
        "wrote {} samples ({} image files) and {}",
        samples.len(),
        3 * samples.len(),
        manifest.display()
    );
    println!(
        "defect pixels: {defect_px} of {total_px} ({:.2}%)",
        100.0 * defect_px as f64 / total_px.max(1) as f64
    );
    Ok(())
}

fn load_samples(path: &Path) -> Result<(Vec<String>, Vec<FloatSample>)> {
    let ds = load_manifest(path)?;
    if ds.is_empty() {
        return Err(Error::Data(format!("{} lists no samples", path.display())));
    }
    let ids = ds.samples.iter().map(|s| s.id.clone()).collect();
    Ok((ids, ds.samples.iter().map(Sample::to_float).collect()))
}

fn check_sizes(samples: &[FloatSample], ids: &[String], model: &ModelConfig) -> Result<()> {
    for (s, id) in samples.iter().zip(ids) {
        if (s.height, s.width) != model.input_hw {
            return Err(Error::Data(format!(
                "{id}: image is {}x{} but the model expects {}x{}",
                s.height, s.width, model.input_hw.0, model.input_hw.1
            )));
        }
    }
    Ok(())
}

pub fn train_cmd(cfg: &mut RunConfig, input_given: bool) -> Result<()> {
    let data = require(&cfg.data, "data")?.to_path_buf();
    let out = require(&cfg.out, "out")?.to_path_buf();
    let (ids, samples) = load_samples(&data)?;
    if !input_given {
        cfg.model.input_hw = (samples[0].height, samples[0].width);
    }
    cfg.model.validate()?;
    cfg.plan.validate()?;
    check_sizes(&samples, &ids, &cfg.model)?;
    let eval = match &cfg.eval_data {
        Some(p) => {
            let (eids, e) = load_samples(p)?;
            check_sizes(&e, &eids, &cfg.model)?;
            e
        }
        None => Vec::new(),
    };
    cfg.write_resolved(&out)?;

    let mut net = LpcaNet::<f32>::new(&cfg.model, cfg.seed)?;
    println!(
        "training {} preset ({} params) on {} samples for {} epochs",
        cfg.model.preset,
        net.param_count(),
        samples.len(),
        cfg.plan.epochs
    );
    let start = Instant::now();
    let outcome = train(&mut net, &samples, &eval, &cfg.plan, Some(&out))?;
    if let Some(last) = outcome.log.last() {
        let mut line = format!("epoch {} step {} loss {:.6}", last.epoch, last.step, last.loss);
        if let Some(m) = &last.metrics {
            let _ = write!(line, " held-out IoU {:.4} mAP {:.4}", m.iou, m.map);
        }
        println!("{line}");
    }
    if let Some(ck) = &outcome.last_checkpoint {
        println!("checkpoint {}", ck.display());
    }
    eprintln!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

/// The `config.resolved` that `train` writes next to its checkpoints.
pub fn config_beside(checkpoint: &Path) -> Result<PathBuf> {
    let beside = checkpoint.parent().unwrap_or(Path::new(".")).join(RESOLVED_NAME);
    if beside.is_file() {
        Ok(beside)
    } else {
        Err(Error::Config(format!("no --config given and {} does not exist", beside.display())))
    }
}

fn load_net(cfg: &RunConfig) -> Result<LpcaNet<f32>> {
    let ck = require(&cfg.checkpoint, "checkpoint")?;
    cfg.model.validate()?;
    let mut net = LpcaNet::<f32>::new(&cfg.model, cfg.seed)?;
    checkpoint::load(&mut net, ck)?;
    Ok(net)
}

fn prob_image(height: usize, width: usize, probs: &[f64]) -> Result<Image> {
    Image::gray(width, height, probs.iter().map(|&p| to_byte(p)).collect())
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<()> {
    let data = require(&cfg.data, "data")?;
    let out = require(&cfg.out, "out")?;
    let (ids, samples) = load_samples(data)?;
    check_sizes(&samples, &ids, &cfg.model)?;
    let net = load_net(cfg)?;

    let preds = samples.par_iter().map(|s| predict(&net, s)).collect::<Result<Vec<_>>>()?;
    let pairs = samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| EvalPair::new(s.height, s.width, p.clone(), s.mask.iter().map(|&m| m >= 0.5).collect()))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricReport::compute(&pairs)?;

    let pred_dir = out.join("pred");
    fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
    for ((id, s), p) in ids.iter().zip(&samples).zip(&preds) {
        netpbm::write(&prob_image(s.height, s.width, p)?, &pred_dir.join(format!("{id}.pgm")))?;
    }

    let mut metrics = format!("id,{}\n", MetricReport::CSV_HEADER);
    for (id, pair) in ids.iter().zip(&pairs) {
        let _ = writeln!(metrics, "{id},{}", ImageScores::of(pair).csv_row());
    }
    let _ = writeln!(metrics, "dataset,{}", report.csv_row());
    let mut pr = String::from("threshold,precision,recall\n");
    for pt in &report.pr_curve {
        let _ = writeln!(pr, "{:.6},{:.6},{:.6}", pt.threshold, pt.x, pt.y);
    }
    let mut roc = String::from("threshold,fpr,tpr\n");
    for pt in &report.roc_curve {
        let _ = writeln!(roc, "{:.6},{:.6},{:.6}", pt.threshold, pt.x, pt.y);
    }
    write_file(&out.join("pr_curve.csv"), pr)?;
    write_file(&out.join("roc_curve.csv"), roc)?;
    write_file(&out.join("metrics.csv"), metrics)?;
    cfg.write_resolved(out)?;

    println!("images {}", report.images);
    println!(
        "mAP {:.4}  IoU {:.4}  MAE {:.4}  maxF {:.4}  maxE {:.4}  S {:.4}  AUC {:.4}",
        report.map, report.iou, report.mae, report.max_f, report.max_e, report.s_measure, report.roc_auc
    );
    Ok(())
}

pub fn infer_cmd(cfg: &RunConfig, rgb: &Path, depth: &Path, out: &Path) -> Result<()> {
    let rgb = netpbm::read_expecting(rgb, 3)?;
    let depth = netpbm::read_expecting(depth, 1)?;
    let blank = Image::filled(rgb.width, rgb.height, 1, 0);
    let sample = Sample::new("input", rgb, depth, blank)?.to_float();
    check_sizes(std::slice::from_ref(&sample), &["input".into()], &cfg.model)?;
    let net = load_net(cfg)?;
    let probs = predict(&net, &sample)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    netpbm::write(&prob_image(sample.height, sample.width, &probs)?, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub struct GradcheckArgs {
    pub preset: Preset,
    pub ops: String,
    pub tolerance: f64,
    pub model_tolerance: f64,
    pub seeds: u64,
    pub inject_fault: bool,
}

pub const MODEL_CHECK: &str = "model_end_to_end";

struct Row {
    name: String,
    report: lpca_tensor::Result<GradcheckReport>,
    tolerance: f64,
}

impl Row {
    fn passed(&self) -> bool {
        self.report.as_ref().is_ok_and(|r| r.passed(self.tolerance))
    }
}

fn run_op(op: &OpCheck, seeds: u64) -> lpca_tensor::Result<GradcheckReport> {
    let mut merged: Option<GradcheckReport> = None;
    for seed in 0..seeds {
        let r = (op.run)(seed)?;
        match &mut merged {
            Some(m) => m.merge(r),
            None => merged = Some(r),
        }
    }
    Ok(merged.expect("at least one seed"))
}

pub fn gradcheck_cmd(args: &GradcheckArgs) -> Result<()> {
    if args.preset != Preset::Tiny {
        return Err(Error::Config("gradcheck runs on the tiny preset only".into()));
    }
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let mut ops = checks::all();
    let mut with_model = true;
    if args.ops != "all" {
        let wanted: Vec<&str> = args.ops.split(',').map(str::trim).collect();
        for w in &wanted {
            if *w != MODEL_CHECK && !ops.iter().any(|o| o.name == *w) {
                return Err(Error::Config(format!("unknown op {w:?}")));
            }
        }
        ops.retain(|o| wanted.contains(&o.name));
        with_model = wanted.contains(&MODEL_CHECK);
    }
    if args.inject_fault {
        ops.push(checks::INJECTED_FAULT);
    }

    let start = Instant::now();
    let mut rows: Vec<Row> = ops
        .par_iter()
        .map(|op| Row {
            name: op.name.to_string(),
            report: run_op(op, args.seeds),
            tolerance: args.tolerance,
        })
        .collect();
    if with_model {
        rows.push(Row {
            name: MODEL_CHECK.into(),
            report: end_to_end_gradcheck(0, 200, 1e-6).map_err(|e| lpca_tensor::TensorError::Config(e.to_string())),
            tolerance: args.model_tolerance,
        });
    }

    println!("{:<26} {:>12} {:>8} {:>10}  result", "op", "max_rel_err", "checked", "tolerance");
    for row in &rows {
        let status = if row.passed() { "PASS" } else { "FAIL" };
        match &row.report {
            Ok(r) => println!(
                "{:<26} {:>12.3e} {:>8} {:>10.0e}  {status}{}",
                row.name,
                r.max_rel_err,
                r.checked,
                row.tolerance,
                if !r.non_finite.is_empty() { " (non-finite)" } else { "" }
            ),
            Err(e) => println!("{:<26} {:>12} {:>8} {:>10.0e}  {status} ({e})", row.name, "-", "-", row.tolerance),
        }
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    println!(
        "{} of {} checks passed in {:.1}s",
        rows.len() - failed.len(),
        rows.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub struct BenchArgs {
    pub warmup: usize,
    pub runs: usize,
}

fn delta(ours: f64, published: f64) -> String {
    format!("{:+.1}%", 100.0 * (ours / published - 1.0))
}

pub fn bench_cmd(cfg: &RunConfig, args: &BenchArgs) -> Result<()> {
    if args.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    cfg.model.validate()?;
    let net = LpcaNet::<f32>::new(&cfg.model, cfg.seed)?;
    let (params, macs) = count_params_flops(&cfg.model);
    let built = net.param_count() as u64;
    let (h, w) = cfg.model.input_hw;
    println!("preset {} input {h}x{w}", cfg.model.preset);
    println!(
        "params {:.2} M (built model {built}; published {:.2} M, {})",
        params as f64 / 1e6,
        PUBLISHED_PARAMS / 1e6,
        delta(params as f64, PUBLISHED_PARAMS)
    );
    println!(
        "mult-adds {:.2} G (published {:.2} G, {})",
        macs as f64 / 1e9,
        PUBLISHED_MACS / 1e9,
        delta(macs as f64, PUBLISHED_MACS)
    );
    println!("note: published figures depend on a backbone cut and FLOP convention that are not fully specified");

    let sample = synth::generate_one(
        &lpca_core::data_io::SynthSpec {
            height: h,
            width: w,
            seed: cfg.seed,
            ..Default::default()
        },
        0,
    )?
    .to_float();
    let batch = lpca_core::data_io::make_batch::<f32>(&[&sample])?;
    let mut times = Vec::with_capacity(args.runs);
    for i in 0..args.warmup + args.runs {
        let start = Instant::now();
        let tape = Tape::no_grad();
        let out = net.forward(&tape.constant(batch.rgb.clone()), &tape.constant(batch.depth.clone()), Mode::Eval)?;
        std::hint::black_box(out.value().data()[0]);
        if i >= args.warmup {
            times.push(start.elapsed().as_secs_f64());
        }
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 { times[n / 2] } else { 0.5 * (times[n / 2 - 1] + times[n / 2]) };
    println!(
        "latency median {:.2} ms over {} runs after {} warmups ({:.2} fps, batch 1, {} thread(s))",
        median * 1e3,
        args.runs,
        args.warmup,
        1.0 / median,
        rayon::current_num_threads()
    );
    Ok(())
}
