//! Naive reference implementations used as test oracles, written without
//! the library's kernels, plus a finite-difference harness for whole-model
//! gradients.

#![allow(dead_code)]

use posterfuse::model::{InputModality, ModelParams};
use posterfuse::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    assert_eq!(t.shape().len(), 2, "expected a matrix");
    let cols = t.shape()[1];
    t.data().chunks(cols).map(|r| r.to_vec()).collect()
}

pub fn param_mat(p: &ModelParams, name: &str) -> Mat {
    to_mat(p.by_name(name).unwrap_or_else(|| panic!("missing {name}")))
}

pub fn param_vec(p: &ModelParams, name: &str) -> Vec<f64> {
    p.by_name(name).unwrap_or_else(|| panic!("missing {name}")).data().to_vec()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = b[0].len();
    let mut out = vec![vec![0.0; n]; a.len()];
    for i in 0..a.len() {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..b.len() {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let denom = (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| gain[j] * (v - mean) / denom + bias[j])
                .collect()
        })
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn attention(q: &Mat, k: &Mat, v: &Mat, d_key: usize) -> Mat {
    let scale = 1.0 / (d_key as f64).sqrt();
    let scores = matmul(q, &transpose(k));
    let weights: Mat = scores
        .iter()
        .map(|r| softmax(&r.iter().map(|s| s * scale).collect::<Vec<_>>()))
        .collect();
    matmul(&weights, v)
}

fn concat(parts: &[Mat]) -> Mat {
    (0..parts[0].len())
        .map(|i| parts.iter().flat_map(|p| p[i].iter().cloned()).collect())
        .collect()
}

fn norm_named(p: &ModelParams, prefix: &str, x: &Mat) -> Mat {
    layer_norm(
        x,
        &param_vec(p, &format!("{prefix}.gain")),
        &param_vec(p, &format!("{prefix}.bias")),
    )
}

fn align(p: &ModelParams, prefix: &str, x: &Mat) -> Mat {
    let n = norm_named(p, &format!("{prefix}.ln"), x);
    let proj = matmul(&n, &param_mat(p, &format!("{prefix}.projection")));
    matmul(&param_mat(p, &format!("{prefix}.resample")), &proj)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Reference forward pass for one record, written from the model equations
/// with plain loops and parameter lookups by name.
pub fn reference_forward(p: &ModelParams, visual: &Tensor, textual: &Tensor) -> Vec<f64> {
    let c = p.config();
    let mut f_va = align(p, "align.visual", &to_mat(visual));
    let mut f_ta = align(p, "align.textual", &to_mat(textual));
    let zero = |m: &Mat| vec![vec![0.0; m[0].len()]; m.len()];
    match c.input_modality {
        InputModality::Both => {}
        InputModality::VisualOnly => f_ta = zero(&f_ta),
        InputModality::TextualOnly => f_va = zero(&f_va),
    }

    let fused = if c.enable_mcam {
        let mut zv = Vec::new();
        let mut zt = Vec::new();
        for h in 0..c.heads {
            let w = |s: &str| param_mat(p, &format!("mcam.head{h}.{s}"));
            let q_t = matmul(&f_ta, &w("w_tq"));
            let k_v = matmul(&f_va, &w("w_vk"));
            let v_v = matmul(&f_va, &w("w_vv"));
            let q_v = matmul(&f_va, &w("w_vq"));
            let k_t = matmul(&f_ta, &w("w_tk"));
            let v_t = matmul(&f_ta, &w("w_tv"));
            zv.push(attention(&q_t, &k_v, &v_v, c.d_key));
            zt.push(attention(&q_v, &k_t, &v_t, c.d_key));
        }
        let a = norm_named(p, "mcam.ln_visual", &add(&concat(&zv), &f_va));
        let b = norm_named(p, "mcam.ln_textual", &add(&concat(&zt), &f_ta));
        norm_named(p, "mcam.ln_fused", &add(&a, &b))
    } else {
        norm_named(p, "fusion.ln", &add(&f_va, &f_ta))
    };

    let y = if c.enable_smsam {
        let mut z = fused;
        for l in 0..c.depth_smsam {
            let n = norm_named(p, &format!("smsam.block{l}.ln"), &z);
            let heads: Vec<Mat> = (0..c.heads)
                .map(|h| {
                    let w = |s: &str| param_mat(p, &format!("smsam.block{l}.head{h}.{s}"));
                    attention(&matmul(&n, &w("w_q")), &matmul(&n, &w("w_k")), &matmul(&n, &w("w_v")), c.d_key)
                })
                .collect();
            z = add(&concat(&heads), &z);
        }
        norm_named(p, "smsam.ln_final", &z)
    } else {
        fused
    };

    let width = y[0].len();
    let mut h: Vec<f64> = (0..width)
        .map(|j| y.iter().map(|r| r[j]).sum::<f64>() / y.len() as f64)
        .collect();
    for i in 0..c.ffn_hidden.len() {
        let w = param_mat(p, &format!("ffn.hidden{i}.weight"));
        let b = param_vec(p, &format!("ffn.hidden{i}.bias"));
        h = (0..b.len())
            .map(|j| (b[j] + (0..h.len()).map(|k| h[k] * w[k][j]).sum::<f64>()).max(0.0))
            .collect();
    }
    let w = param_mat(p, "ffn.output.weight");
    let b = param_vec(p, "ffn.output.bias");
    (0..b.len())
        .map(|j| sigmoid(b[j] + (0..h.len()).map(|k| h[k] * w[k][j]).sum::<f64>()))
        .collect()
}

/// Asymmetric loss of one sample by direct transcription of the formula.
pub fn asl_naive(z: &[f64], y: &[bool], gp: f64, gn: f64, eps: f64, clamp: f64) -> f64 {
    let mut s = 0.0;
    for (zi, yi) in z.iter().zip(y) {
        if *yi {
            s += (1.0 - zi).powf(gp) * zi.max(clamp).ln();
        } else {
            let p = if zi - eps > 0.0 { zi - eps } else { 0.0 };
            s += p.powf(gn) * (1.0 - p).max(clamp).ln();
        }
    }
    -s / z.len() as f64
}

pub fn bce_naive(z: &[f64], y: &[bool]) -> f64 {
    let mut s = 0.0;
    for (zi, yi) in z.iter().zip(y) {
        s += if *yi { zi.ln() } else { (1.0 - zi).ln() };
    }
    -s / z.len() as f64
}

/// Per-class (precision, recall, f1, balanced accuracy, specificity) in
/// percent, with zero-denominator rates at 0 and zero-support classes at 0
/// for F1 and balanced accuracy.
pub fn brute_per_class(y: &[Vec<bool>], p: &[Vec<bool>]) -> Vec<[f64; 5]> {
    let m = y[0].len();
    let mut out = Vec::new();
    for j in 0..m {
        let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..y.len() {
            match (y[i][j], p[i][j]) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
        let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        let prec = div(tp, tp + fp);
        let rec = div(tp, tp + fn_);
        let spec = div(tn, tn + fp);
        let support = tp + fn_;
        let f1 = if support == 0.0 { 0.0 } else { div(2.0 * prec * rec, prec + rec) };
        let ba = if support == 0.0 { 0.0 } else { (rec + spec) / 2.0 };
        out.push([100.0 * prec, 100.0 * rec, 100.0 * f1, 100.0 * ba, 100.0 * spec]);
    }
    out
}

/// The ten aggregate metrics in table order: F_m, BA_m, F_mu, BA_mu, F_w,
/// BA_w, F_s, BA_s, HL, Hit (percent).
pub fn brute_aggregates(y: &[Vec<bool>], p: &[Vec<bool>], scores: &[Vec<f64>]) -> [f64; 10] {
    let n = y.len();
    let m = y[0].len();
    let per = brute_per_class(y, p);
    let support: Vec<f64> = (0..m).map(|j| y.iter().filter(|r| r[j]).count() as f64).collect();
    let total_support: f64 = support.iter().sum();

    let mut f_m = 0.0;
    let mut ba_m = 0.0;
    for row in &per {
        f_m += row[2];
        ba_m += row[3];
    }
    f_m /= m as f64;
    ba_m /= m as f64;

    let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..m {
            match (y[i][j], p[i][j]) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
    }
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let mp = div(tp, tp + fp);
    let mr = div(tp, tp + fn_);
    let ms = div(tn, tn + fp);
    let f_mu = 100.0 * div(2.0 * mp * mr, mp + mr);
    let ba_mu = 100.0 * (mr + ms) / 2.0;

    let mut f_w = 0.0;
    let mut ba_w = 0.0;
    if total_support > 0.0 {
        for j in 0..m {
            f_w += support[j] * per[j][2];
            ba_w += support[j] * per[j][3];
        }
        f_w /= total_support;
        ba_w /= total_support;
    }

    let mut f_s = 0.0;
    let mut ba_s = 0.0;
    for i in 0..n {
        let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..m {
            match (y[i][j], p[i][j]) {
                (true, true) => a += 1.0,
                (false, true) => b += 1.0,
                (true, false) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
        let pr = div(a, a + b);
        let rc = div(a, a + c);
        let sp = div(d, d + b);
        f_s += div(2.0 * pr * rc, pr + rc);
        ba_s += (rc + sp) / 2.0;
    }
    f_s = 100.0 * f_s / n as f64;
    ba_s = 100.0 * ba_s / n as f64;

    let hl = (fp + fn_) / (n * m) as f64;

    let mut hits = 0.0;
    for i in 0..n {
        let mut best = 0;
        for j in 1..m {
            if scores[i][j] > scores[i][best] {
                best = j;
            }
        }
        if y[i][best] {
            hits += 1.0;
        }
    }
    let hit = 100.0 * hits / n as f64;

    [f_m, ba_m, f_mu, ba_mu, f_w, ba_w, f_s, ba_s, hl, hit]
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub mod gradcheck {
    use posterfuse::dataset::EmbeddingRecord;
    use posterfuse::loss::{batch_cost, AslConfig};
    use posterfuse::model::{predict, ModelConfig, ModelParams};
    use posterfuse::tensor::Tensor;
    use posterfuse::train::loss_and_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const STEP: f64 = 1e-5;
    pub const KINK_GAP: f64 = 1e-3;

    #[derive(Debug)]
    pub struct Outcome {
        pub checked: usize,
        pub max_rel_err: f64,
        pub worst: String,
        /// Input draws discarded because a score sat near the margin kink.
        pub redrawn: usize,
    }

    fn records(c: &ModelConfig, rng: &mut ChaCha8Rng, n: usize) -> Vec<EmbeddingRecord> {
        (0..n)
            .map(|i| {
                let mut m = |r: usize, w: usize| {
                    Tensor::new(vec![r, w], (0..r * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
                };
                let visual = m(c.visual_tokens, c.d_visual_in);
                let textual = m(c.textual_tokens, c.d_textual_in);
                let mut labels: Vec<bool> = (0..c.n_genres).map(|_| rng.random_bool(0.4)).collect();
                labels[i % c.n_genres] = true;
                EmbeddingRecord {
                    id: format!("g{i}"),
                    visual,
                    textual,
                    labels,
                }
            })
            .collect()
    }

    fn loss(p: &ModelParams, recs: &[EmbeddingRecord], asl: &AslConfig) -> f64 {
        let v = Tensor::stack(&recs.iter().map(|r| &r.visual).collect::<Vec<_>>()).unwrap();
        let t = Tensor::stack(&recs.iter().map(|r| &r.textual).collect::<Vec<_>>()).unwrap();
        let s = predict(p, &v, &t).unwrap();
        let m = s.shape()[1];
        let rows: Vec<&[f64]> = s.data().chunks(m).collect();
        batch_cost(rows.iter().zip(recs).map(|(z, r)| (*z, r.labels.as_slice())), asl).unwrap()
    }

    /// Central-difference check of every scalar parameter. Initial weights
    /// are jittered and scaled up so that negative-class scores spread over
    /// the margin region.
    pub fn check_model(c: &ModelConfig, seed: u64, batch: usize, floor: f64) -> Outcome {
        let asl = AslConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(c, seed).unwrap();
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = 1.5 * *v + rng.random_range(-0.1..0.1);
            }
        }
        let mut redrawn = 0;
        let recs = loop {
            let recs = records(c, &mut rng, batch);
            let v = Tensor::stack(&recs.iter().map(|r| &r.visual).collect::<Vec<_>>()).unwrap();
            let t = Tensor::stack(&recs.iter().map(|r| &r.textual).collect::<Vec<_>>()).unwrap();
            let s = predict(&params, &v, &t).unwrap();
            let near_kink = s.data().iter().any(|z| (z - asl.margin).abs() < KINK_GAP);
            if !near_kink {
                break recs;
            }
            redrawn += 1;
        };

        let refs: Vec<&EmbeddingRecord> = recs.iter().collect();
        let (_, grads) = loss_and_gradients(&params, &refs, &asl).unwrap();
        let mut out = Outcome {
            checked: 0,
            max_rel_err: 0.0,
            worst: String::new(),
            redrawn,
        };
        for (k, grad) in grads.iter().enumerate() {
            for i in 0..grad.len() {
                let orig = params.tensors()[k].data()[i];
                params.tensors_mut()[k].data_mut()[i] = orig + STEP;
                let up = loss(&params, &recs, &asl);
                params.tensors_mut()[k].data_mut()[i] = orig - STEP;
                let down = loss(&params, &recs, &asl);
                params.tensors_mut()[k].data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * STEP);
                let analytic = grad.data()[i];
                let e = super::rel_err(analytic, numeric, floor);
                out.checked += 1;
                if e > out.max_rel_err {
                    out.max_rel_err = e;
                    out.worst = format!("{}[{i}]: analytic {analytic:e} numeric {numeric:e}", params.names()[k]);
                }
            }
        }
        out
    }
}
