//! Toy discrete problems used by the oracle checks, shipped as CSV files in
//! the `atom,f_1,…,f_M,g` layout.

use crate::error::Result;
use crate::model::DiscreteProblem;

/// `(name, csv text)` for every corpus file.
pub const FILES: &[(&str, &str)] = &[
    ("toy2", include_str!("../corpus/toy2.csv")),
    ("m1_k6", include_str!("../corpus/m1_k6.csv")),
    ("m1_k20", include_str!("../corpus/m1_k20.csv")),
    ("m1_identical", include_str!("../corpus/m1_identical.csv")),
    ("m2_k5", include_str!("../corpus/m2_k5.csv")),
    ("m2_k12", include_str!("../corpus/m2_k12.csv")),
    ("m2_dup", include_str!("../corpus/m2_dup.csv")),
    ("m3_k8", include_str!("../corpus/m3_k8.csv")),
    ("m3_k20", include_str!("../corpus/m3_k20.csv")),
];

/// Loads one corpus problem by name.
pub fn load(name: &str) -> Result<DiscreteProblem> {
    let (_, text) = FILES.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        crate::error::LfdError::InvalidArgument(format!("no corpus problem named {name}"))
    })?;
    DiscreteProblem::from_csv_reader(text.as_bytes())
}

/// Every corpus problem, in a fixed order.
pub fn all() -> Result<Vec<(&'static str, DiscreteProblem)>> {
    FILES
        .iter()
        .map(|(n, t)| Ok((*n, DiscreteProblem::from_csv_reader(t.as_bytes())?)))
        .collect()
}
