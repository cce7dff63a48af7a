//! Bundled experiment configs, one or more per acceptance criterion.

use crate::error::{CliError, CliResult};

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        pub const PRESETS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../presets/", $name, ".toml"))),)*
        ];
    };
}

presets!(
    "c01-kernel-accuracy",
    "c02a-tail-diffuse-disk",
    "c02b-tail-diffuse-interval",
    "c03-tail-disk-dirac",
    "c04-tail-mixed",
    "c05-local-reconstruction",
    "c06-nonlocal-reconstruction",
    "c07-c10-identities",
    "c11-reducing-expectation",
    "c12a-classd-bounded",
    "c12b-classd-dirac",
    "c13a-maximal-bounded",
    "c13b-maximal-dirac",
    "c14-determinism",
    "constants",
    "reduite-disk-dirac",
);

/// Presets run for each criterion by `verify`.
pub fn for_criterion(id: u32) -> &'static [&'static str] {
    match id {
        1 => &["c01-kernel-accuracy"],
        2 => &["c02a-tail-diffuse-disk", "c02b-tail-diffuse-interval"],
        3 => &["c03-tail-disk-dirac"],
        4 => &["c04-tail-mixed"],
        5 => &["c05-local-reconstruction"],
        6 => &["c06-nonlocal-reconstruction"],
        11 => &["c11-reducing-expectation"],
        12 => &["c12a-classd-bounded", "c12b-classd-dirac"],
        13 => &["c13a-maximal-bounded", "c13b-maximal-dirac"],
        _ => &[],
    }
}

/// Presets whose runs draw random samples.
pub const STOCHASTIC: &[&str] = &[
    "c11-reducing-expectation",
    "c12a-classd-bounded",
    "c12b-classd-dirac",
    "c13a-maximal-bounded",
    "c13b-maximal-dirac",
];

pub fn get(name: &str) -> CliResult<&'static str> {
    let name = name.strip_suffix(".toml").unwrap_or(name);
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| CliError::UnknownPreset(name.into()))
}
