//! Bundled case files.

/// WSCC 9-bus, 3-generator system with toolkit-default dynamic parameters.
pub const WSCC9: &str = include_str!("../data/wscc9.json");

/// One generator and one load on a lossless line, on the certificate boundary.
pub const TWO_BUS: &str = include_str!("../data/two_bus.json");

/// Looks up a bundled case by name (`wscc9` or `two_bus`).
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "wscc9" => Some(WSCC9),
        "two_bus" | "two-bus" => Some(TWO_BUS),
        _ => None,
    }
}
