use std::fmt::Write as _;
use std::path::Path;

use super::{DataError, Result};
use crate::geometry::{PointCloud, Provenance};

/// One `x y z` line per point; `#` comments and blank lines are skipped.
pub fn parse_xyz(text: &str, id: &str) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(DataError::Parse {
                line: i + 1,
                message: format!("expected 3 coordinates, found {}", toks.len()),
            });
        }
        let mut p = [0.0; 3];
        for (slot, tok) in p.iter_mut().zip(&toks) {
            *slot = tok.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DataError::Parse {
                line: i + 1,
                message: format!("invalid coordinate {tok:?}"),
            })?;
        }
        pts.push(p);
    }
    if pts.is_empty() {
        return Err(DataError::InvalidArgument("cloud file has no points".into()));
    }
    Ok(PointCloud::new(id, pts)?)
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
    let cloud = parse_xyz(&std::fs::read_to_string(path)?, id)?;
    Ok(cloud.with_provenance(Provenance {
        source: Some(path.display().to_string()),
        seed: None,
    }))
}

/// Writes shortest round-trip decimals, so reading back is exact.
pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut s = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        let _ = writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let c = PointCloud::new("c", vec![[0.1, -2.0 / 3.0, 1e-300], [5.0, 6.0, 7.0]]).unwrap();
        write_xyz(&path, &c).unwrap();
        assert_eq!(read_xyz(&path).unwrap().points(), c.points());
    }

    #[test]
    fn bad_line() {
        assert!(matches!(parse_xyz("1 2 3\n1 2\n", "c"), Err(DataError::Parse { line: 2, .. })));
        assert!(parse_xyz("# nothing\n", "c").is_err());
    }
}
