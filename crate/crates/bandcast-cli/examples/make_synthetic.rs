//! Regenerates `data/synthetic5.csv`, the small five-variable quarterly panel
//! used by the integration tests and the quick-start in the README.
//!
//! The panel is a stationary VAR(2) draw with weak cross-variable dynamics,
//! shifted so each series lives in a realistic range for its mnemonic: CPI
//! inflation near 2, the unemployment rate near 4, yields near 2. Index-style
//! columns are written as raw index levels so the `100ln` transformation in
//! `configs/synthetic5.cfg` round-trips them.

use std::fmt::Write as _;
use std::path::Path;

use bandcast::simlab::{generate_dgp, DgpSpec};
use bandcast_cli::data::Quarter;

fn main() {
    let mut spec = DgpSpec::table_defaults(5, 2, 120, 19900101);
    spec.offdiag_range = (-0.05, 0.05);
    spec.iw_identity_weight = 0.5;
    spec.iw_ones_weight = 0.05;
    let (_, data) = generate_dgp(&spec).expect("dgp");

    // GDPC1, CPIAUCSL, UNRATE, GS10, FEDFUNDS in transformed units.
    let offsets = [2.5, 2.0, 4.0, 2.0, 1.5];
    let log_scale = [true, true, false, false, false];

    let mut out = String::from("date,GDPC1,CPIAUCSL,UNRATE,GS10,FEDFUNDS\n");
    let mut q = Quarter::new(1990, 1).unwrap();
    for t in 0..data.nrows() {
        write!(out, "{q}").unwrap();
        for j in 0..5 {
            let x = data[(t, j)] + offsets[j];
            let raw = if log_scale[j] { (x / 100.0).exp() } else { x };
            write!(out, ",{raw:.10}").unwrap();
        }
        out.push('\n');
        q = q.next();
    }

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic5.csv");
    std::fs::write(&path, out).expect("write csv");
    println!("wrote {}", path.display());
}
