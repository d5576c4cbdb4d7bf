use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use modalmix::{Family, PoissonPriorKind};

use crate::error::CliError;

const GALAXIES: &str = include_str!("../data/galaxies.csv");
const EARTHQUAKES: &str = include_str!("../data/earthquakes.csv");

/// A packaged dataset and the family it is usually fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct Builtin {
    pub name: &'static str,
    pub values: Vec<f64>,
    pub default_family: Family,
}

pub const BUILTIN_NAMES: [&str; 2] = ["galaxies", "earthquakes"];

/// `galaxies`: 82 galaxy velocities in thousands of km/s.
/// `earthquakes`: yearly counts of major earthquakes, 1900-2006.
pub fn builtin(name: &str) -> Result<Builtin, CliError> {
    let (name, raw, default_family) = match name {
        "galaxies" => ("galaxies", GALAXIES, Family::Gaussian { shared_precision: true }),
        "earthquakes" => (
            "earthquakes",
            EARTHQUAKES,
            Family::Poisson { prior: PoissonPriorKind::LogNormal },
        ),
        other => {
            return Err(CliError::Config(format!(
                "unknown builtin dataset '{other}' (available: {})",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    Ok(Builtin { name, values: parse_csv(raw.as_bytes())?, default_family })
}

/// Reads a CSV with a single column named `y`. LF and CRLF line endings
/// are both accepted.
pub fn parse_csv<R: Read>(reader: R) -> Result<Vec<f64>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CliError::Config(format!("reading CSV header: {e}")))?;
    let col = headers
        .iter()
        .position(|h| h.trim_start_matches('\u{feff}') == "y")
        .ok_or_else(|| CliError::Config("CSV has no column named \"y\"".into()))?;
    let mut values = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("reading CSV: {e}")))?;
        let field = record.get(col).unwrap_or("");
        let v: f64 = field
            .parse()
            .map_err(|_| CliError::Config(format!("row {}: '{field}' is not a number", line + 1)))?;
        values.push(v);
    }
    Ok(values)
}

pub fn load_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_csv(file)
}

/// Writes one value per row under a `y` header. Values are written in the
/// shortest form that parses back to the same `f64`.
pub fn write_csv(path: &Path, values: &[f64]) -> Result<(), CliError> {
    let mut out = String::with_capacity(values.len() * 12 + 2);
    out.push_str("y\n");
    for v in values {
        out.push_str(&format!("{v:?}\n"));
    }
    let mut file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    file.write_all(out.as_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
