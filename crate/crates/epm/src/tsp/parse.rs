//! TSPLIB (NODE_COORD_SECTION, EUC_2D) and plain CSV coordinate readers.

use super::TspInstance;
use crate::error::{EpmError, Result};

/// Parses a TSPLIB-format instance. Supported: TYPE TSP, EDGE_WEIGHT_TYPE
/// EUC_2D (nearest-integer distances) or CEIL_2D-free plain coordinates via
/// the CSV reader. Errors carry the offending line number.
pub fn parse_tsplib(text: &str) -> Result<TspInstance> {
    let mut dimension: Option<usize> = None;
    let mut weight_type: Option<String> = None;
    let mut coords: Vec<(f64, f64)> = Vec::new();
    let mut in_coords = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.eq_ignore_ascii_case("EOF") {
            break;
        }
        if in_coords {
            let mut parts = line.split_whitespace();
            let _id = parts.next().ok_or(EpmError::Parse {
                line: line_no,
                msg: "expected node index".into(),
            })?;
            let x: f64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or(EpmError::Parse {
                    line: line_no,
                    msg: "expected x coordinate".into(),
                })?;
            let y: f64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or(EpmError::Parse {
                    line: line_no,
                    msg: "expected y coordinate".into(),
                })?;
            coords.push((x, y));
            if let Some(d) = dimension {
                if coords.len() == d {
                    in_coords = false;
                }
            }
            continue;
        }
        if line.eq_ignore_ascii_case("NODE_COORD_SECTION") {
            in_coords = true;
            continue;
        }
        if let Some((key, value)) = line.split_once(':') {
            let key = key.trim().to_ascii_uppercase();
            let value = value.trim();
            match key.as_str() {
                "DIMENSION" => {
                    dimension = Some(value.parse().map_err(|_| EpmError::Parse {
                        line: line_no,
                        msg: format!("bad DIMENSION '{}'", value),
                    })?);
                }
                "EDGE_WEIGHT_TYPE" => {
                    weight_type = Some(value.to_ascii_uppercase());
                }
                _ => {}
            }
            continue;
        }
        // keyword lines without a colon (e.g. COMMENT blocks) are skipped
    }

    let weight_type = weight_type.unwrap_or_else(|| "EUC_2D".into());
    if weight_type != "EUC_2D" {
        return Err(EpmError::Parse {
            line: 0,
            msg: format!("unsupported EDGE_WEIGHT_TYPE '{}'", weight_type),
        });
    }
    if let Some(d) = dimension {
        if coords.len() != d {
            return Err(EpmError::Parse {
                line: 0,
                msg: format!("DIMENSION {} but {} coordinates", d, coords.len()),
            });
        }
    }
    if coords.is_empty() {
        return Err(EpmError::Parse {
            line: 0,
            msg: "no NODE_COORD_SECTION found".into(),
        });
    }
    TspInstance::from_coords(coords, true)
}

/// Parses plain CSV coordinates: one `x,y` pair per line, optional header.
/// Distances stay unrounded Euclidean.
pub fn parse_coord_csv(text: &str) -> Result<TspInstance> {
    let mut coords = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let a = parts.next().map(str::trim).unwrap_or("");
        let b = parts.next().map(str::trim).unwrap_or("");
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => coords.push((x, y)),
            _ if idx == 0 => continue, // header line
            _ => {
                return Err(EpmError::Parse {
                    line: line_no,
                    msg: format!("expected 'x,y' numbers, got '{}'", line),
                })
            }
        }
    }
    if coords.is_empty() {
        return Err(EpmError::Parse {
            line: 0,
            msg: "no coordinates found".into(),
        });
    }
    TspInstance::from_coords(coords, false)
}
