use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use vpn_core::data_io::{DatasetSplit, Part};
use vpn_core::inference::{
    contrast_statistic, eval_streams, evaluate_clean, evaluate_noisy, export_heatmap, HeatmapPaths,
};
use vpn_core::models::{load_base, load_generator, save_base, save_generator, BaseClassifier, Generator};
use vpn_core::rng::Streams;
use vpn_core::training::{self, EpochRecord, Mode, RunMetrics};
use vpn_core::VpnError;

use crate::data;
use crate::settings::{EvalMode, Overrides, RunSpec};
use crate::{Failure, OrUsage};

fn check_base(base: &BaseClassifier, split: &DatasetSplit) -> anyhow::Result<()> {
    if (base.dim(), base.class_count()) != (split.dim(), split.class_count()) {
        bail!(
            "base checkpoint is for d={} with {} classes, dataset has d={} with {} classes",
            base.dim(),
            base.class_count(),
            split.dim(),
            split.class_count()
        );
    }
    Ok(())
}

fn check_generator(generator: &Generator, split: &DatasetSplit) -> anyhow::Result<()> {
    if (generator.dim(), generator.class_count()) != (split.dim(), split.class_count()) {
        bail!(
            "generator checkpoint is for d={} with {} classes, dataset has d={} with {} classes",
            generator.dim(),
            generator.class_count(),
            split.dim(),
            split.class_count()
        );
    }
    if generator.trained_steps() == 0 {
        bail!("generator checkpoint has never been trained");
    }
    Ok(())
}

fn prepare_out_dir(spec: &RunSpec, spec_name: &str) -> anyhow::Result<()> {
    fs::create_dir_all(&spec.out_dir)
        .with_context(|| format!("cannot create output directory {}", spec.out_dir.display()))?;
    spec.write(&spec.out_dir.join(spec_name))
}

fn save_pair(out: &Path, suffix: &str, base: &BaseClassifier, generator: Option<&Generator>) -> vpn_core::Result<()> {
    save_base(base, &out.join(format!("base{suffix}.ckpt")))?;
    if let Some(g) = generator {
        save_generator(g, &out.join(format!("generator{suffix}.ckpt")))?;
    }
    Ok(())
}

pub fn train(overrides: Overrides) -> Result<(), Failure> {
    let mut spec = RunSpec::resolve("train", overrides).usage()?;
    let split = data::load(&spec).usage()?;
    if spec.generator_ckpt.is_some() {
        return Err(Failure::Usage(anyhow!("train does not take --generator-ckpt")));
    }
    let (d, k) = (split.dim(), split.class_count());
    let base = match (spec.mode, &spec.base_ckpt) {
        (Mode::FixedBase, Some(path)) => {
            let base = load_base(path)
                .with_context(|| format!("cannot load base checkpoint {}", path.display()))
                .usage()?;
            check_base(&base, &split).usage()?;
            spec.model = base.arch();
            base
        }
        (Mode::FixedBase, None) => {
            return Err(Failure::Usage(anyhow!("fixed_base mode needs a trained --base-ckpt")))
        }
        (_, Some(_)) => return Err(Failure::Usage(anyhow!("--base-ckpt is only used by fixed_base mode"))),
        (_, None) => BaseClassifier::new(spec.model, d, k, spec.hidden, spec.seed),
    };
    let generator = if spec.mode.uses_generator() {
        spec.resolve_noise_scales(&split);
        let (gamma, cap) = (spec.gamma.expect("resolved"), spec.cap.expect("resolved"));
        Some(Generator::new(d, k, spec.hidden, gamma, cap, spec.seed).usage()?)
    } else {
        None
    };
    let config = spec.train_config();

    prepare_out_dir(&spec, "run_spec.toml").map_err(Failure::Runtime)?;
    let out = spec.out_dir.clone();
    let epochs = spec.epochs;
    let mut log = RunMetrics::new();
    let mut hook = |r: &EpochRecord, base: &BaseClassifier, generator: Option<&Generator>| {
        log.push(r.clone())?;
        log.write_csv(&out.join("metrics.csv"))?;
        save_pair(&out, "_last", base, generator)?;
        eprintln!(
            "epoch {}/{epochs}: loss {:.4} train {:.4} val {:.4} test {:.4} ({:.1}s)",
            r.epoch, r.train_loss, r.train_acc, r.val_acc, r.test_acc, r.seconds
        );
        Ok(())
    };

    match training::train(&split, base, generator, &config, Some(&mut hook)) {
        Ok(run) => {
            save_pair(&out, "", &run.base, run.generator.as_ref()).map_err(|e| Failure::Runtime(e.into()))?;
            run.metrics.write_csv(&out.join("metrics.csv")).map_err(|e| Failure::Runtime(e.into()))?;
            let best = run.metrics.best_record().expect("at least one epoch");
            println!(
                "selected epoch {}: val accuracy {} test accuracy {}",
                best.epoch, best.val_acc, best.test_acc
            );
            Ok(())
        }
        Err(VpnError::Diverged(run)) => {
            let message = format!(
                "training diverged at epoch {} batch {}: loss = {}",
                run.epoch, run.batch, run.loss
            );
            if run.metrics.records().is_empty() {
                save_pair(&out, "_last", &run.base, run.generator.as_ref())
                    .map_err(|e| Failure::Runtime(e.into()))?;
            }
            run.metrics.write_csv(&out.join("metrics.csv")).map_err(|e| Failure::Runtime(e.into()))?;
            Err(Failure::Diverged(anyhow!(message)))
        }
        Err(e) => Err(Failure::Runtime(e.into())),
    }
}

pub fn eval(overrides: Overrides) -> Result<(), Failure> {
    let mut spec = RunSpec::resolve("eval", overrides).usage()?;
    let split = data::load(&spec).usage()?;
    let base_path = spec.base_ckpt.clone().ok_or_else(|| anyhow!("eval needs --base-ckpt")).usage()?;
    let base = load_base(&base_path)
        .with_context(|| format!("cannot load base checkpoint {}", base_path.display()))
        .usage()?;
    check_base(&base, &split).usage()?;
    let mode = spec.eval_mode.unwrap_or(if spec.generator_ckpt.is_some() {
        EvalMode::Noisy
    } else {
        EvalMode::Clean
    });
    spec.eval_mode = Some(mode);

    let accuracy = match mode {
        EvalMode::Clean => evaluate_clean(&base, split.test()).map_err(|e| Failure::Runtime(e.into()))?,
        EvalMode::Noisy => {
            let path = spec
                .generator_ckpt
                .clone()
                .ok_or_else(|| anyhow!("noisy evaluation needs --generator-ckpt"))
                .usage()?;
            let generator = load_generator(&path)
                .with_context(|| format!("cannot load generator checkpoint {}", path.display()))
                .usage()?;
            check_generator(&generator, &split).usage()?;
            let streams = eval_streams(spec.seed, Part::Test);
            evaluate_noisy(&base, &generator, split.test(), &streams, spec.samples_per_class)
                .map_err(|e| Failure::Runtime(e.into()))?
        }
    };

    prepare_out_dir(&spec, "eval_spec.toml").map_err(Failure::Runtime)?;
    let csv = format!(
        "dataset,eval_mode,samples_per_class,seed,test_accuracy\n{},{},{},{},{accuracy}\n",
        spec.dataset,
        match mode {
            EvalMode::Noisy => "noisy",
            EvalMode::Clean => "clean",
        },
        spec.samples_per_class,
        spec.seed
    );
    let path = spec.out_dir.join("eval.csv");
    fs::write(&path, csv)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)?;
    println!("test accuracy {accuracy}");
    Ok(())
}

pub fn visualize(overrides: Overrides) -> Result<(), Failure> {
    let spec = RunSpec::resolve("visualize", overrides).usage()?;
    let split = data::load(&spec).usage()?;
    let shape = split
        .image_shape()
        .ok_or_else(|| anyhow!("{} has no image shape to visualize", spec.dataset))
        .usage()?;
    let path = spec
        .generator_ckpt
        .clone()
        .ok_or_else(|| anyhow!("visualize needs --generator-ckpt"))
        .usage()?;
    let generator = load_generator(&path)
        .with_context(|| format!("cannot load generator checkpoint {}", path.display()))
        .usage()?;
    check_generator(&generator, &split).usage()?;
    let test = split.test();
    if let Some(&bad) = spec.indices.iter().find(|&&i| i >= test.len()) {
        return Err(Failure::Usage(anyhow!(
            "sample index {bad} out of range: the test set has {} samples",
            test.len()
        )));
    }

    prepare_out_dir(&spec, "visualize_spec.toml").map_err(Failure::Runtime)?;
    let streams = Streams::new(spec.seed);
    let mut csv = String::from("index,label,foreground_mean,background_mean,difference,effect_size\n");
    for &i in &spec.indices {
        let s = test.sample(i);
        let paths = HeatmapPaths::new(&spec.out_dir, format!("sample{i}"));
        let art = export_heatmap(&generator, s.features, s.label, shape, &paths, &streams, i)
            .map_err(|e| Failure::Runtime(e.into()))?;
        match contrast_statistic(&art.variance, s.features, 0.5) {
            Ok(c) => {
                let _ = writeln!(
                    csv,
                    "{i},{},{},{},{},{}",
                    s.label, c.foreground_mean, c.background_mean, c.difference, c.effect_size
                );
                println!(
                    "sample {i} (label {}): variance in [{:.3e}, {:.3e}], foreground - background {:+.3e}, effect size {:+.3}",
                    s.label, art.min, art.max, c.difference, c.effect_size
                );
            }
            Err(_) => {
                let _ = writeln!(csv, "{i},{},,,,", s.label);
                println!(
                    "sample {i} (label {}): variance in [{:.3e}, {:.3e}], no foreground/background split",
                    s.label, art.min, art.max
                );
            }
        }
    }
    let path = spec.out_dir.join("contrast.csv");
    fs::write(&path, csv)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)?;
    Ok(())
}
