use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ste_core::collapse::{collapse_model, format_millions, verify_model_collapse};
use ste_core::data::{load_csv, load_idx, write_idx, FeatureStats};
use ste_core::synthetic::{Digits, DigitsConfig, SIDE};
use ste_core::trainer::{analyze_activations, Trainer};
use ste_core::{count_parameters, run_experiment, Checkpoint, Dataset, Matrix, Rng, Splits};

use crate::config::{Config, DataSource};
use crate::Failure;

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::data(format!("cannot create {}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| Failure::data(format!("checkpoint {}: {e}", path.display())))
}

fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), Failure> {
    ckpt.save(path).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn existing(key: &str, path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::data(format!("`{key}`: {} does not exist", path.display())))
    }
}

fn data_error(key: &str, e: ste_core::Error) -> Failure {
    Failure { code: 2, ..Failure::from_core(&format!("`{key}`"), e) }
}

/// Loads the configured train and test sets (raw, not normalized).
fn load_data(cfg: &Config) -> Result<(Dataset, Dataset), Failure> {
    match cfg.data_source()? {
        DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
            for (key, path) in [&train_images, &train_labels, &test_images, &test_labels] {
                existing(key, path)?;
            }
            let train = load_idx(&train_images.1, &train_labels.1).map_err(|e| data_error(train_images.0, e))?;
            let test = load_idx(&test_images.1, &test_labels.1).map_err(|e| data_error(test_images.0, e))?;
            Ok((train, test))
        }
        DataSource::Csv { train, test, label, header } => {
            existing(train.0, &train.1)?;
            existing(test.0, &test.1)?;
            let tr = load_csv(&train.1, &label, header).map_err(|e| data_error(train.0, e))?;
            let te = load_csv(&test.1, &label, header).map_err(|e| data_error(test.0, e))?;
            if tr.num_features() != te.num_features() {
                return Err(Failure::data(format!(
                    "`data.test` has {} features but `data.train` has {}",
                    te.num_features(),
                    tr.num_features()
                )));
            }
            Ok((tr, te))
        }
    }
}

fn prepare(train: &Dataset, test: &Dataset, val_fraction: f64, seed: u64) -> Result<Splits, Failure> {
    Splits::prepare(train, test, val_fraction, seed).map_err(|e| Failure { code: 2, ..Failure::from_core("data", e) })
}

fn stats_csv(stats: &FeatureStats) -> String {
    let mut out = String::from("feature,mean,std\n");
    for (i, (m, s)) in stats.mean.iter().zip(&stats.std).enumerate() {
        let _ = writeln!(out, "{i},{m},{s}");
    }
    out
}

fn read_stats(path: &Path) -> Result<FeatureStats, Failure> {
    let bad = |msg: String| Failure::data(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize| -> Result<f64, Failure> {
            rec.get(c)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(format!("row {} column {c} is not a number", i + 2)))
        };
        mean.push(field(1)?);
        std.push(field(2)?);
    }
    Ok(FeatureStats { mean, std })
}

pub fn train(config: &Path, seed: Option<u64>, out: &Path, resume: Option<&Path>) -> Result<(), Failure> {
    let cfg = Config::load(config)?;
    let mut tc = cfg.train_config()?;
    if let Some(s) = seed {
        tc.seed = s;
    }
    let reg = cfg.regularization()?;
    let (train_set, test_set) = load_data(&cfg)?;
    let spec = cfg.model_spec(reg, Some(train_set.num_features()))?;
    let splits = prepare(&train_set, &test_set, tc.val_fraction, tc.seed)?;
    create_dir(out)?;

    let core = |e| Failure::from_core("train", e);
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.model.spec() != spec {
                return Err(Failure::config(format!(
                    "{} was trained with a different model than the config describes",
                    path.display()
                )));
            }
            Trainer::resume(ckpt, &tc, &splits).map_err(core)?
        }
        None => Trainer::new(&spec, &tc, &splits).map_err(core)?,
    };
    while trainer.epochs_done() < tc.epochs as u64 {
        let rec = trainer.run_epoch().map_err(core)?;
        eprintln!(
            "epoch {:>4}/{}  train {:.4}  val {:.4}  lr {:.3e}",
            rec.epoch, tc.epochs, rec.train_loss, rec.val_loss, rec.lr
        );
    }
    let last = trainer.checkpoint();
    let outcome = trainer.finish().map_err(core)?;
    let best = outcome.best.clone().unwrap_or_else(|| last.clone());

    save_checkpoint(&best, &out.join("best.ckpt"))?;
    save_checkpoint(&last, &out.join("last.ckpt"))?;
    let mut history = String::from("epoch,train_loss,val_loss,lr\n");
    for h in &outcome.result.history {
        let _ = writeln!(history, "{},{},{},{}", h.epoch, h.train_loss, h.val_loss, h.lr);
    }
    write_file(&out.join("history.csv"), &history)?;
    write_file(&out.join("stats.csv"), &stats_csv(&splits.stats))?;

    let counts = count_parameters(&spec);
    let r = &outcome.result;
    let mut metrics = String::new();
    let _ = writeln!(metrics, "regularization = {}", reg.name());
    let _ = writeln!(metrics, "seed = {}", tc.seed);
    let _ = writeln!(metrics, "epochs = {}", last.epoch);
    let _ = writeln!(metrics, "best_epoch = {}", r.best_epoch.map_or("none".into(), |e| e.to_string()));
    let _ = writeln!(metrics, "best_val_loss = {}", best.val_loss);
    let _ = writeln!(metrics, "test_loss = {}", r.test.loss);
    let _ = writeln!(metrics, "test_accuracy = {}", r.test.accuracy);
    let _ = writeln!(metrics, "params_trained = {}", counts.total_trained);
    let _ = writeln!(metrics, "params_collapsed = {}", counts.total_collapsed);
    let _ = writeln!(metrics, "wall_time_secs = {:.3}", r.wall_time_secs);
    write_file(&out.join("metrics.txt"), &metrics)?;

    println!(
        "best epoch {}: test loss {:.4}, accuracy {:.2}%",
        r.best_epoch.map_or("none".into(), |e| e.to_string()),
        r.test.loss,
        r.test.accuracy
    );
    Ok(())
}

pub fn evaluate(checkpoint: &Path, config: &Path, split: &str) -> Result<(), Failure> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cfg = Config::load(config)?;
    let tc = cfg.train_config()?;
    let (train_set, test_set) = load_data(&cfg)?;
    let splits = prepare(&train_set, &test_set, tc.val_fraction, ckpt.seed)?;
    let data = match split {
        "train" => &splits.train,
        "val" => &splits.val,
        _ => &splits.test,
    };
    let e = ste_core::evaluate(&ckpt.model, data).map_err(|e| Failure { code: 2, ..Failure::from_core("evaluate", e) })?;
    println!("split = {split}\nexamples = {}\nloss = {}\naccuracy = {}", data.len(), e.loss, e.accuracy);
    Ok(())
}

pub fn collapse(checkpoint: &Path, out: &Path) -> Result<(), Failure> {
    let ckpt = load_checkpoint(checkpoint)?;
    let before = count_parameters(&ckpt.model.spec()).total_trained;
    let model = collapse_model(&ckpt.model);
    let after = count_parameters(&model.spec()).total_trained;
    save_checkpoint(&Checkpoint { model, opt: None, ..ckpt }, out)?;
    println!("{} -> {} parameters, written to {}", before, after, out.display());
    Ok(())
}

pub fn verify(checkpoint: &Path, collapsed: Option<&Path>, trials: usize, tol: f64) -> Result<(), Failure> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dense = match collapsed {
        Some(p) => load_checkpoint(p)?.model,
        None => collapse_model(&ckpt.model),
    };
    let report = verify_model_collapse(&ckpt.model, &dense, trials, tol, &mut Rng::new(ckpt.seed))
        .map_err(|e| Failure { code: 2, ..Failure::from_core("verify", e) })?;
    println!("max_abs_diff = {:e}", report.max_abs_diff);
    println!("{report}");
    if report.passed {
        Ok(())
    } else {
        Err(Failure::verification(format!(
            "collapsed network differs by {:e} (tolerance {:e})",
            report.max_abs_diff, tol
        )))
    }
}

pub fn count_params(config: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let cfg = Config::load(config)?;
    let spec = cfg.model_spec(cfg.regularization()?, None)?;
    let counts = count_parameters(&spec);
    let mut csv = String::from("layer,inputs,outputs,trained,collapsed\n");
    for (i, l) in counts.layers.iter().enumerate() {
        println!("layer {i}: {:>5} -> {:<5} trained {:>10}  collapsed {:>10}", l.inputs, l.outputs, l.trained, l.collapsed);
        let _ = writeln!(csv, "{i},{},{},{},{}", l.inputs, l.outputs, l.trained, l.collapsed);
    }
    let _ = writeln!(csv, "total,,,{},{}", counts.total_trained, counts.total_collapsed);
    println!("as trained: {} ({})", format_millions(counts.total_trained), counts.total_trained);
    println!("collapsed:  {} ({})", format_millions(counts.total_collapsed), counts.total_collapsed);
    if let Some(path) = out {
        write_file(path, &csv)?;
    }
    Ok(())
}

pub fn experiment(config: &Path, seeds: u64, out: &Path) -> Result<(), Failure> {
    if seeds == 0 {
        return Err(Failure::config("--seeds must be at least 1"));
    }
    let cfg = Config::load(config)?;
    let base_seed = cfg.train_config()?.seed;
    let (train_set, test_set) = load_data(&cfg)?;
    let configs = cfg.experiment_configs(Some(train_set.num_features()))?;
    create_dir(out)?;
    let seed_list: Vec<u64> = (base_seed..base_seed + seeds).collect();
    let mut runs = String::from("config,seed,best_epoch,test_loss,test_accuracy\n");
    let table = run_experiment(&configs, &train_set, &test_set, &seed_list, |c, seed, outcome| {
        let r = &outcome.result;
        let best = r.best_epoch.map_or(String::new(), |e| e.to_string());
        eprintln!("{} seed {seed}: test loss {:.4}, accuracy {:.2}%", c.name, r.test.loss, r.test.accuracy);
        let _ = writeln!(runs, "{},{seed},{best},{},{}", c.name, r.test.loss, r.test.accuracy);
    })
    .map_err(|e| Failure::from_core("experiment", e))?;
    write_file(&out.join("runs.csv"), &runs)?;
    write_file(&out.join("summary.csv"), &table.to_csv())?;
    write_file(&out.join("summary.txt"), &table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}

fn read_features(path: &Path) -> Result<Matrix, Failure> {
    let bad = |msg: String| Failure::data(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("line {} is not numeric", i + 1)))?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() {
        return Err(bad("no rows".into()));
    }
    let n = rows.len();
    Matrix::from_vec(n, cols, rows.into_iter().flatten().collect()).map_err(|e| bad(e.to_string()))
}

pub fn analyze(checkpoint: &Path, layer: usize, inputs: &Path, stats: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut features = read_features(inputs)?;
    if let Some(path) = stats {
        let stats = read_stats(path)?;
        let n = features.rows();
        let mut ds = Dataset::new(features, vec![0; n]).map_err(|e| Failure { code: 2, ..Failure::from_core("inputs", e) })?;
        stats.apply(&mut ds).map_err(|e| Failure { code: 2, ..Failure::from_core("stats", e) })?;
        features = ds.features;
    }
    let analysis = analyze_activations(&ckpt.model, &features, layer).map_err(|e| Failure::from_core("analyze", e))?;
    let a = analysis.correlation.rows();
    let mut corr = String::from("branch");
    for j in 0..a {
        let _ = write!(corr, ",b{j}");
    }
    corr.push('\n');
    for i in 0..a {
        let _ = write!(corr, "b{i}");
        for j in 0..a {
            let _ = write!(corr, ",{}", analysis.correlation[(i, j)]);
        }
        corr.push('\n');
    }
    write_file(out, &corr)?;

    let mut dump = String::from("input,branch,unit,value\n");
    for (x, branches) in analysis.branches.iter().enumerate() {
        for (b, v) in branches.iter().enumerate() {
            for (u, value) in v.iter().enumerate() {
                let _ = writeln!(dump, "{x},{b},{u},{value}");
            }
        }
    }
    let dump_path = branches_path(out);
    write_file(&dump_path, &dump)?;
    println!(
        "mean off-diagonal correlation {:.4}, max {:.4}; wrote {} and {}",
        analysis.mean_off_diagonal(),
        analysis.max_off_diagonal(),
        out.display(),
        dump_path.display()
    );
    Ok(())
}

fn branches_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or("analysis".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.branches.csv"))
}

pub fn gen_digits(out: &Path, train: usize, test: usize, seed: u64) -> Result<(), Failure> {
    if train == 0 || test == 0 {
        return Err(Failure::config("--train and --test must be positive"));
    }
    create_dir(out)?;
    let digits = Digits::generate(&DigitsConfig { examples: train + test, seed, ..Default::default() });
    let px = SIDE * SIDE;
    let write = |name: &str, range: std::ops::Range<usize>| {
        write_idx(
            &out.join(format!("{name}-images.idx")),
            &out.join(format!("{name}-labels.idx")),
            SIDE,
            SIDE,
            &digits.images[range.start * px..range.end * px],
            &digits.labels[range],
        )
        .map_err(|e| Failure::from_core("gen-digits", e))
    };
    write("train", 0..train)?;
    write("test", train..train + test)?;
    let config = format!(
        "# synthetic {SIDE}x{SIDE} digits, seed {seed}\n\
         data.format = idx\n\
         data.train_images = train-images.idx\n\
         data.train_labels = train-labels.idx\n\
         data.test_images = test-images.idx\n\
         data.test_labels = test-labels.idx\n\n\
         model.hidden = 128, 128\n\
         model.classes = 10\n\
         model.regularization = ste-dropout\n\
         model.averaging = 8\n\
         model.keep = 0.5\n\n\
         train.learning_rate = 0.2\n\
         train.batch_size = 32\n\
         train.epochs = 60\n\n\
         experiment.configs = none, dropout, ste-dropout\n\
         experiment.learning_rate.none = 0.003\n\
         experiment.learning_rate.dropout = 0.01\n\
         experiment.learning_rate.ste-dropout = 0.2\n"
    );
    write_file(&out.join("digits.cfg"), &config)?;
    println!("wrote {train} training and {test} test examples to {}", out.display());
    Ok(())
}
