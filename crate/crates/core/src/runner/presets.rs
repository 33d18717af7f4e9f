//! Built-in system profiles, one TOML file per archetype.

use crate::model::SystemProfile;

const PRESETS: &[(&str, &str)] = &[
    ("corda-os", include_str!("../../profiles/corda-os.toml")),
    ("corda-ent", include_str!("../../profiles/corda-ent.toml")),
    ("bitshares", include_str!("../../profiles/bitshares.toml")),
    ("fabric", include_str!("../../profiles/fabric.toml")),
    ("quorum", include_str!("../../profiles/quorum.toml")),
    ("sawtooth", include_str!("../../profiles/sawtooth.toml")),
    ("diem", include_str!("../../profiles/diem.toml")),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn get(name: &str) -> Option<SystemProfile> {
    source(name).map(|s| toml::from_str(s).expect("built-in preset parses"))
}

pub fn all() -> Vec<SystemProfile> {
    names().into_iter().filter_map(get).collect()
}
