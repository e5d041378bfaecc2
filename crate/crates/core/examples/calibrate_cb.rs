//! Backs out the coupon rate that reproduces a quoted coupon-bond price.
//!
//! The closed-form price is linear in `c` and in `omega`, so for each recovery
//! fraction the matching coupon follows from the three priced terms.
//!
//! ```text
//! cargo run --example calibrate_cb -- 1.03313616115971
//! ```

use esg_core::analytic::longstaff_terms;
use esg_core::dynamics::{ConvenienceMode, ModeFlags, ModelParams, ShortRateMode};
use esg_core::engine::longstaff_inputs;

fn main() -> esg_core::Result<()> {
    let target: f64 = std::env::args().nth(1).map_or(1.033_136_161_159_71, |s| s.parse().expect("a price"));
    let params = ModelParams::longstaff_baseline();
    let mode = ModeFlags {
        short_rate: ShortRateMode::Composite,
        convenience: ConvenienceMode::LongstaffIndependent { eta: params.longstaff_eta() },
        ..ModeFlags::default()
    };
    let inputs = longstaff_inputs(&params, &mode, 0.0, 0.0)?;
    let terms = longstaff_terms(&inputs, &params.bond(), 1.0)?;
    println!(
        "annuity {:.15} principal {:.15} recovery {:.15}",
        terms.coupon_annuity, terms.principal, terms.recovery
    );
    println!("target {target}");
    for omega in [0.0, 0.25, 0.4, 0.5, 0.6, 0.75, 1.0] {
        let c = (target - terms.principal - (1.0 - omega) * terms.recovery) / terms.coupon_annuity;
        println!("omega {omega:.2}  c {c:.6}  check {:.15}", terms.price(c, omega));
    }
    Ok(())
}
