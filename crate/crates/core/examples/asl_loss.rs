//! Asymmetric loss against plain binary cross-entropy on a few score and
//! label pairs, plus the decision threshold.
//!
//! cargo run --example asl_loss

use posterfuse::loss::{asl_loss_value, quantize, shifted_probability, AslConfig};

fn main() -> posterfuse::Result<()> {
    let asl = AslConfig::default();
    let bce = AslConfig::bce();
    println!("gamma+ {}  gamma- {}  margin {}", asl.gamma_pos, asl.gamma_neg, asl.margin);
    println!("{:>6} {:>6} {:>12} {:>12}", "score", "label", "ASL", "BCE");
    for z in [0.05, 0.15, 0.2, 0.3, 0.5, 0.8, 0.95] {
        for y in [true, false] {
            println!(
                "{z:>6.2} {:>6} {:>12.6} {:>12.6}",
                u8::from(y),
                asl_loss_value(&[z], &[y], &asl)?,
                asl_loss_value(&[z], &[y], &bce)?
            );
        }
    }
    println!("\nshifted negative probability: 0.15 -> {}, 0.5 -> {}", shifted_probability(0.15, 0.2), shifted_probability(0.5, 0.2));
    println!("quantize([0.49, 0.5, 0.51], 0.5) = {:?}", quantize(&[0.49, 0.5, 0.51], 0.5));
    Ok(())
}
