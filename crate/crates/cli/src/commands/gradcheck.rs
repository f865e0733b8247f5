use anyhow::Result;

use lcm::gradcheck::{run_suite, Fault, SuiteConfig};

use crate::config::invalid;
use crate::GradcheckArgs;

/// Exit status 0 when every case passes, 1 otherwise.
pub fn gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let fault = match a.inject_fault.as_deref() {
        None => None,
        Some("sign-flip") => Some(Fault::SignFlip),
        Some(other) => return Err(invalid(format!("unknown fault `{other}` (sign-flip)"))),
    };
    let cfg = SuiteConfig {
        preset: a.preset.clone(),
        tolerance: a.tolerance,
        instances: a.instances,
        seed: a.seed,
        max_coords: a.max_coords,
        fault,
        ..SuiteConfig::default()
    };
    let report = run_suite(&cfg)?;
    print!("{}", report.summary());
    let ok = report.passed();
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}
