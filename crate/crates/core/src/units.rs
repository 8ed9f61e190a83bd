//! Human-friendly quantities in scenario files.
//!
//! Canonical units are seconds, bytes and per-second rates. Size suffixes
//! are decimal (`KB` = 1000 bytes); time suffixes are `s`, `m`, `h`, `d`.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unit {
    /// Dimensionless: counts, fractions, FLOP/s.
    Plain,
    Bytes,
    Seconds,
    /// Bytes per second; accepts both `GB` and `GB/s`.
    BytesPerSecond,
}

const SIZE_SUFFIXES: &[(&str, f64)] = &[
    ("PB", 1e15),
    ("TB", 1e12),
    ("GB", 1e9),
    ("MB", 1e6),
    ("KB", 1e3),
    ("B", 1.0),
];

const TIME_SUFFIXES: &[(&str, f64)] = &[
    ("ms", 1e-3),
    ("min", 60.0),
    ("s", 1.0),
    ("m", 60.0),
    ("h", 3600.0),
    ("d", 86400.0),
];

/// Parse `text` as a quantity in `unit`, normalizing any suffix.
pub fn parse_quantity(text: &str, unit: Unit) -> Result<f64, String> {
    let trimmed = text.trim();
    let (number, suffix) = split_number(trimmed);
    let value: f64 = number.parse().map_err(|_| format!("`{trimmed}` is not a number"))?;
    let suffix = suffix.trim();
    if suffix.is_empty() {
        return Ok(value);
    }
    let table = match unit {
        Unit::Plain => return Err(format!("`{trimmed}` takes no unit suffix")),
        Unit::Bytes => SIZE_SUFFIXES,
        Unit::BytesPerSecond => SIZE_SUFFIXES,
        Unit::Seconds => TIME_SUFFIXES,
    };
    let suffix = if unit == Unit::BytesPerSecond {
        suffix.strip_suffix("/s").unwrap_or(suffix)
    } else {
        suffix
    };
    table
        .iter()
        .find(|(s, _)| *s == suffix)
        .map(|(_, scale)| value * scale)
        .ok_or_else(|| format!("unknown suffix `{suffix}` in `{trimmed}`"))
}

fn split_number(text: &str) -> (&str, &str) {
    // Longest prefix that still parses as a float, so `1e3s` and `2.5GB` work.
    let mut end = 0;
    for (i, _) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        if i > 0 && text[..i].parse::<f64>().is_ok() {
            end = i;
        }
    }
    text.split_at(end)
}
