//! Which score compositions survive diffusion: the default five-claim suite.
//!
//! cargo run --release --example verify_identities [-- seed]

use diffcomp::eval::{verification_suite, SuiteConfig};
use diffcomp::{NoiseSchedule, Result};

fn main() -> Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let s = NoiseSchedule::linear_default(100)?;
    let report = verification_suite(&s, &SuiteConfig::default(), seed)?;
    println!("{:<24} {:<16} {:<10} levels  discrepancy / share above 5%", "claim", "verdict", "reference");
    for c in &report.claims {
        let detail: Vec<String> = if c.gap_fraction.is_empty() {
            c.t_values.iter().zip(&c.discrepancy).map(|(t, d)| format!("t={t}: {d:.1e}")).collect()
        } else {
            c.t_values.iter().zip(&c.gap_fraction).map(|(t, f)| format!("t={t}: {:.1}%", 100.0 * f)).collect()
        };
        println!("{:<24} {:<16} {:<10} {}", c.claim, format!("{:?}", c.verdict), c.reference, detail.join("  "));
    }
    println!("all as expected: {}", report.passed());
    Ok(())
}
