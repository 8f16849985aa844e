//! Acceptance criteria A1 to A9. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use posterfuse::cli::{ablation_variants, cmd_gen_synth, cmd_train, run_ablation, AblationRow, Overrides, RunConfig};
use posterfuse::dataset::{generate_synthetic, split, GenreVocabulary, SplitSpec};
use posterfuse::loss::{asl_loss, asl_loss_value, quantize, AslConfig};
use posterfuse::metrics::{aggregate_metrics, genre_table, PredictionSet};
use posterfuse::model::forward::{mcam, smsam};
use posterfuse::model::{ModelConfig, ModelParams};
use posterfuse::tape::Tape;
use posterfuse::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn a1_gradient_fidelity() -> Check {
    let start = Instant::now();
    let o = common::gradcheck::check_model(&ModelConfig::tiny(), 1, 3, 1e-6);
    let secs = start.elapsed().as_secs_f64();
    ensure(
        o.max_rel_err < 1e-4 && secs < 60.0,
        format!(
            "{} parameters, max relative error {:.2e} ({}), {} kink redraws, {secs:.1} s",
            o.checked, o.max_rel_err, o.worst, o.redrawn
        ),
    )
}

fn a2_metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..500 {
        let n = rng.random_range(1..=50);
        let m = rng.random_range(1..=13);
        let density: f64 = rng.random_range(0.05..0.95);
        let mut y: Vec<Vec<bool>> = (0..n).map(|_| (0..m).map(|_| rng.random_bool(density)).collect()).collect();
        let s: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| f64::from(rng.random_range(0..5u8)) / 4.0).collect())
            .collect();
        match case % 4 {
            0 => y.iter_mut().flatten().for_each(|v| *v = true),
            1 => y.iter_mut().flatten().for_each(|v| *v = false),
            2 => {
                let dead = rng.random_range(0..m);
                y.iter_mut().for_each(|r| r[dead] = false);
            }
            _ => {}
        }
        let p: Vec<Vec<bool>> = s.iter().map(|r| r.iter().map(|&v| v > 0.5).collect()).collect();
        let set = PredictionSet::new(y.clone(), p.clone(), s.clone()).map_err(|e| e.to_string())?;
        let got = aggregate_metrics(&set).map_err(|e| e.to_string())?.aggregate_row();
        for (g, w) in got.iter().zip(common::brute_aggregates(&y, &p, &s)) {
            worst = worst.max((g - w).abs());
        }
        let vocab = GenreVocabulary::new((0..m).map(|j| format!("g{j}")).collect()).unwrap();
        let table = genre_table(&set, &vocab).map_err(|e| e.to_string())?;
        for (row, want) in table.rows.iter().zip(common::brute_per_class(&y, &p)) {
            let g = &row.metrics;
            for (a, b) in [g.precision, g.recall, g.f1, g.balanced_accuracy, g.specificity].iter().zip(want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(worst <= 1e-12, format!("500 instances, max deviation {worst:.1e}"))
}

/// Trained runs shared by A3, A4 and A5.
struct Runs {
    /// Per seed: rows for full, -SMSAM, -MCAM, -both.
    modules: Vec<Vec<AblationRow>>,
    /// Seed 0: image only, text only.
    modalities: Vec<AblationRow>,
    full_seconds: f64,
}

const MODULE_VARIANTS: [&str; 4] = ["full", "-SMSAM", "-MCAM (L=4)", "-MCAM -SMSAM"];

fn train_runs() -> Result<Runs, String> {
    let mut modules = Vec::new();
    let mut modalities = Vec::new();
    let mut full_seconds = 0.0;
    for seed in 0..3u64 {
        let mut config = RunConfig::default();
        config.apply(&Overrides {
            seed: Some(seed),
            ..Overrides::default()
        });
        let records = generate_synthetic(
            config.generator.n_records,
            &config.generator,
            &config.genres,
            config.data_seed(),
        )
        .map_err(|e| e.to_string())?;
        let data = split(records, &config.split).map_err(|e| e.to_string())?;
        let variants = ablation_variants(&config.model);
        let pick = |names: &[&str]| {
            names
                .iter()
                .map(|n| variants.iter().find(|v| v.name == *n).cloned().expect("variant exists"))
                .collect::<Vec<_>>()
        };

        let start = Instant::now();
        let mut rows = run_ablation(&config, &data, &pick(&MODULE_VARIANTS[..1])).map_err(|e| e.to_string())?;
        if seed == 0 {
            full_seconds = start.elapsed().as_secs_f64();
        }
        rows.extend(run_ablation(&config, &data, &pick(&MODULE_VARIANTS[1..])).map_err(|e| e.to_string())?);
        for r in &rows {
            eprintln!("  seed {seed} {:<14} macro-F1 {:6.2}  best epoch {}", r.variant, r.test.f1_macro, r.best_epoch);
        }
        modules.push(rows);
        if seed == 0 {
            modalities = run_ablation(&config, &data, &pick(&["image only", "text only"])).map_err(|e| e.to_string())?;
            for r in &modalities {
                eprintln!("  seed 0 {:<14} macro-F1 {:6.2}", r.variant, r.test.f1_macro);
            }
        }
    }
    Ok(Runs {
        modules,
        modalities,
        full_seconds,
    })
}

fn a3_learnability(runs: &Runs) -> Check {
    let t = &runs.modules[0][0].test;
    ensure(
        t.f1_macro >= 90.0 && t.hit_ratio >= 0.90 && runs.full_seconds < 600.0,
        format!(
            "test macro-F1 {:.2}, hit ratio {:.2}, {:.0} s",
            t.f1_macro, t.hit_ratio, runs.full_seconds
        ),
    )
}

fn a4_modality_ablation(runs: &Runs) -> Check {
    let full = runs.modules[0][0].test.f1_macro;
    let image = runs.modalities[0].test.f1_macro;
    let text = runs.modalities[1].test.f1_macro;
    ensure(
        full - image >= 3.0 && text < image && text < full,
        format!("full {full:.2}, image only {image:.2}, text only {text:.2}"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn a5_module_ablation(runs: &Runs) -> Check {
    let medians: Vec<f64> = (0..MODULE_VARIANTS.len())
        .map(|k| median(runs.modules.iter().map(|rows| rows[k].test.f1_macro).collect()))
        .collect();
    let full = medians[0];
    let both = medians[3];
    let detail = MODULE_VARIANTS
        .iter()
        .zip(&medians)
        .map(|(n, m)| format!("{n} {m:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(
        medians[1..].iter().all(|&m| full >= m) && medians.iter().all(|&m| both <= m),
        format!("3-seed median macro-F1: {detail}"),
    )
}

fn a6_asl_reduction() -> Check {
    let bce = AslConfig {
        gamma_pos: 0.0,
        gamma_neg: 0.0,
        margin: 0.0,
        ..AslConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z: Vec<f64> = (0..1000).map(|_| rng.random_range(1e-6..1.0 - 1e-6)).collect();
    let y: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.5)).collect();
    let want = common::bce_naive(&z, &y);
    let value = asl_loss_value(&z, &y, &bce).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::vector(z));
    let labels = Tensor::vector(y.iter().map(|&b| f64::from(b)).collect());
    let l = asl_loss(&mut tape, zv, &labels, &bce).map_err(|e| e.to_string())?;
    let taped = tape.value(l).data()[0];

    let hand = -0.5 * (0.5f64.powi(3) * 0.5f64.ln() + 0.3f64.powi(4) * 0.7f64.ln());
    let two = asl_loss_value(&[0.5, 0.5], &[true, false], &AslConfig::default()).map_err(|e| e.to_string())?;
    let errs = [(value - want).abs(), (taped - want).abs(), (two - hand).abs()];
    ensure(
        errs.iter().all(|&e| e <= 1e-12),
        format!("BCE deviation {:.1e} / {:.1e}, two-class deviation {:.1e}", errs[0], errs[1], errs[2]),
    )
}

fn a7_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = RunConfig::default();
    let m = ModelConfig::tiny();
    config.genres = GenreVocabulary::new((0..m.n_genres).map(|j| format!("genre{j}")).collect()).unwrap();
    config.generator.n_genres = m.n_genres;
    config.generator.visual_tokens = m.visual_tokens;
    config.generator.d_visual = m.d_visual_in;
    config.generator.textual_tokens = m.textual_tokens;
    config.generator.d_textual = m.d_textual_in;
    config.generator.n_records = 200;
    config.model = m;
    config.train.max_epochs = 5;
    config.train.learning_rate = 1e-3;
    config.apply(&Overrides {
        seed: Some(7),
        ..Overrides::default()
    });
    let data = dir.path().join("data.jsonl");
    cmd_gen_synth(&config, &data).map_err(|e| e.to_string())?;
    config.paths.dataset = Some(data);
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        config.paths.out = Some(dir.path().join(run));
        let s = cmd_train(&config).map_err(|e| e.to_string())?;
        let ckpt = std::fs::read(&s.checkpoint).map_err(|e| e.to_string())?;
        let hist = std::fs::read(dir.path().join(run).join("history.tsv")).map_err(|e| e.to_string())?;
        bytes.push((ckpt, hist));
    }
    ensure(
        bytes[0] == bytes[1],
        format!(
            "checkpoint {} bytes, history {} bytes, identical: {}",
            bytes[0].0.len(),
            bytes[0].1.len(),
            bytes[0] == bytes[1]
        ),
    )
}

fn a8_split_arithmetic() -> Check {
    let sizes = SplitSpec::default().sizes(13882);
    ensure(sizes == (11106, 1388, 1388), format!("13882 -> {sizes:?}"))
}

fn a9_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut random = |shape: &[usize], scale: f64| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let mut failures = Vec::new();

    let mut tape = Tape::new();
    let x = tape.constant(random(&[3, 5, 7], 20.0));
    let s = tape.softmax_rows(x);
    let softmax_err = tape
        .value(s)
        .data()
        .chunks(7)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    if softmax_err > 1e-12 || tape.value(s).data().iter().any(|&p| p < 0.0) {
        failures.push(format!("softmax row sums off by {softmax_err:.1e}"));
    }

    let input = random(&[4, 9], 3.0);
    let x = tape.constant(input.clone());
    let g = tape.constant(Tensor::vector(vec![1.0; 9]));
    let b = tape.constant(Tensor::vector(vec![0.0; 9]));
    let n = tape.layer_norm(x, g, b, 1e-5).map_err(|e| e.to_string())?;
    for (row, out) in input.data().chunks(9).zip(tape.value(n).data().chunks(9)) {
        let mu_in = row.iter().sum::<f64>() / 9.0;
        let var_in = row.iter().map(|v| (v - mu_in).powi(2)).sum::<f64>() / 9.0;
        let mu = out.iter().sum::<f64>() / 9.0;
        let var = out.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 9.0;
        if mu.abs() > 1e-12 || (var - var_in / (var_in + 1e-5)).abs() > 1e-12 {
            failures.push(format!("layer norm moments mean {mu:.1e} variance {var}"));
        }
    }

    let c = ModelConfig::tiny();
    let mut p = ModelParams::init(&c, 9).map_err(|e| e.to_string())?;
    for l in 0..c.depth_smsam {
        for h in 0..c.heads {
            let w = p.by_name_mut(&format!("smsam.block{l}.head{h}.w_v")).unwrap();
            *w = Tensor::zeros(w.shape());
        }
    }
    let z = random(&[c.seq_len, c.d_align], 1.0);
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let sm = p.layout().smsam.clone().unwrap();
    let out = smsam(&mut tape, &bound, &sm, zv, c.d_key).map_err(|e| e.to_string())?;
    let want = common::layer_norm(
        &common::to_mat(&z),
        p.by_name("smsam.ln_final.gain").unwrap().data(),
        p.by_name("smsam.ln_final.bias").unwrap().data(),
    );
    let resid = common::to_mat(tape.value(out))
        .iter()
        .flatten()
        .zip(want.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if resid > 1e-12 {
        failures.push(format!("zeroed value projections: smsam differs from LN by {resid:.1e}"));
    }

    let a = tape.constant(random(&[2, c.seq_len, c.d_align], 1.0));
    let bb = tape.constant(random(&[2, c.seq_len, c.d_align], 1.0));
    let mc = p.layout().mcam.clone().unwrap();
    let fused = mcam(&mut tape, &bound, &mc, a, bb, c.d_key).map_err(|e| e.to_string())?;
    if tape.shape(fused) != [2, c.seq_len, c.d_align] {
        failures.push(format!("mcam shape {:?}", tape.shape(fused)));
    }

    if quantize(&[0.5], 0.5) != [false] || quantize(&[0.5f64.next_up()], 0.5) != [true] {
        failures.push("quantize boundary".into());
    }

    ensure(
        failures.is_empty(),
        if failures.is_empty() {
            "softmax, layer-norm moments, residual identity, mcam shape, quantize boundary".into()
        } else {
            failures.join("; ")
        },
    )
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, &str, Check)> = Vec::new();
    let mut report = |id: &'static str, name: &'static str, c: Check| {
        let (tag, detail) = match &c {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{id} {tag} {name}: {detail}");
        results.push((id, name, c));
    };

    report("A1", "gradient fidelity", guarded(a1_gradient_fidelity));
    report("A2", "metric oracle equivalence", guarded(a2_metric_oracle));
    let runs = catch_unwind(train_runs).unwrap_or_else(|_| Err("training panicked".into()));
    match &runs {
        Ok(r) => {
            report("A3", "end-to-end learnability", guarded(|| a3_learnability(r)));
            report("A4", "modality ablation direction", guarded(|| a4_modality_ablation(r)));
            report("A5", "module ablation direction", guarded(|| a5_module_ablation(r)));
        }
        Err(e) => {
            for (id, name) in [
                ("A3", "end-to-end learnability"),
                ("A4", "modality ablation direction"),
                ("A5", "module ablation direction"),
            ] {
                report(id, name, Err(e.clone()));
            }
        }
    }
    report("A6", "ASL reduction", guarded(a6_asl_reduction));
    report("A7", "determinism", guarded(a7_determinism));
    report("A8", "split arithmetic", guarded(a8_split_arithmetic));
    report("A9", "shape and invariant suite", guarded(a9_invariants));

    let failed: Vec<&str> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
