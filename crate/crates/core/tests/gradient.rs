//! Whole-model analytic gradients against central differences for every
//! architecture variant.

mod common;

use common::gradcheck::check_model;
use posterfuse::model::{InputModality, ModelConfig};

const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn assert_close(name: &str, c: &ModelConfig, seed: u64) {
    let o = check_model(c, seed, 3, FLOOR);
    assert!(o.checked > 0);
    assert!(o.max_rel_err < TOL, "{name}: {o:?}");
}

#[test]
fn without_cross_attention() {
    let c = ModelConfig {
        enable_mcam: false,
        ..ModelConfig::tiny()
    };
    assert_close("-MCAM", &c, 11);
}

#[test]
fn without_self_attention() {
    let c = ModelConfig {
        enable_smsam: false,
        ..ModelConfig::tiny()
    };
    assert_close("-SMSAM", &c, 12);
}

#[test]
fn without_either_module() {
    let c = ModelConfig {
        enable_mcam: false,
        enable_smsam: false,
        ..ModelConfig::tiny()
    };
    assert_close("-both", &c, 13);
}

#[test]
fn single_modality() {
    for (m, seed) in [(InputModality::VisualOnly, 14), (InputModality::TextualOnly, 15)] {
        let c = ModelConfig {
            input_modality: m,
            ..ModelConfig::tiny()
        };
        assert_close(&format!("{m:?}"), &c, seed);
    }
}

#[test]
fn single_position_sequence() {
    let c = ModelConfig {
        seq_len: 1,
        ..ModelConfig::tiny()
    };
    assert_close("S=1", &c, 16);
}
