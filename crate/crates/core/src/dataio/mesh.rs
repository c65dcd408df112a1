use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result};
use crate::geometry::{cross, norm, sub, PointCloud, Provenance, Vec3};

pub const DEFAULT_SAMPLE_COUNT: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(DataError::InvalidMesh(format!(
                "face {f:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidMesh("non-finite vertex".into()));
        }
        Ok(Self { vertices, faces })
    }

    pub fn triangle_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i]);
        0.5 * norm(&cross(&sub(b, a), &sub(c, a)))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.triangle_area(f)).sum()
    }
}

/// Content lines with comments stripped, paired with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_err(line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("expected {what}, found {tok:?}")))
}

/// Parses OFF text. The header keyword is optional and may be glued to the
/// counts (`OFF8 6 0`). Polygons are split into fans around their first
/// vertex.
pub fn parse_off(text: &str) -> Result<TriangleMesh> {
    let mut lines = content_lines(text);
    let (mut line_no, mut first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if let Some(rest) = first.strip_prefix("OFF") {
        let rest = rest.trim();
        if rest.is_empty() {
            (line_no, first) = lines
                .next()
                .ok_or_else(|| parse_err(line_no, "missing counts line after header"))?;
        } else {
            first = rest;
        }
    }
    let counts: Vec<&str> = first.split_whitespace().collect();
    if !(2..=3).contains(&counts.len()) {
        return Err(parse_err(line_no, format!("expected vertex, face and edge counts, found {first:?}")));
    }
    let nv = parse_usize(counts[0], line_no, "vertex count")?;
    let nf = parse_usize(counts[1], line_no, "face count")?;
    if let Some(ne) = counts.get(2) {
        parse_usize(ne, line_no, "edge count")?;
    }

    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(line_no, format!("file ends after {k} of {nv} vertices")))?;
        line_no = ln;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(ln, format!("vertex needs 3 coordinates, found {}", toks.len())));
        }
        let mut v = [0.0; 3];
        for (slot, tok) in v.iter_mut().zip(&toks) {
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(ln, format!("invalid coordinate {tok:?}")))?;
        }
        vertices.push(v);
    }

    let mut faces = Vec::with_capacity(nf);
    for k in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(line_no, format!("file ends after {k} of {nf} faces")))?;
        line_no = ln;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let arity = parse_usize(toks[0], ln, "face arity")?;
        if arity < 3 {
            return Err(parse_err(ln, format!("face arity {arity} below 3")));
        }
        if toks.len() != arity + 1 {
            return Err(parse_err(
                ln,
                format!("face declares {arity} vertices but lists {}", toks.len() - 1),
            ));
        }
        let idx = toks[1..]
            .iter()
            .map(|t| {
                let i = parse_usize(t, ln, "vertex index")?;
                if i >= nv {
                    return Err(parse_err(ln, format!("vertex index {i} out of range for {nv} vertices")));
                }
                Ok(i)
            })
            .collect::<Result<Vec<usize>>>()?;
        for w in 1..arity - 1 {
            faces.push([idx[0], idx[w], idx[w + 1]]);
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "unexpected data after the last face"));
    }
    TriangleMesh::new(vertices, faces)
}

pub fn read_off(path: &Path) -> Result<TriangleMesh> {
    parse_off(&std::fs::read_to_string(path)?)
}

/// OFF text for `mesh`, with coordinates written in shortest round-trip form.
pub fn write_off(mesh: &TriangleMesh) -> String {
    let mut out = String::from("OFF\n");
    let _ = writeln!(out, "{} {} 0", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

/// `n` points drawn uniformly over the surface of `mesh`.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(DataError::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.triangle_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(DataError::InvalidMesh("total surface area is zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let face = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        let [a, b, c] = mesh.faces[face].map(|i| mesh.vertices[i]);
        let s = rng.random::<f64>().sqrt();
        let r = rng.random::<f64>();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r), s * r);
        points.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    Ok(PointCloud::new("mesh-sample", points)?.with_provenance(Provenance {
        source: None,
        seed: Some(seed),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA: &str = "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";

    #[test]
    fn tetrahedron() {
        let m = parse_off(TETRA).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len()), (4, 4));
    }

    #[test]
    fn glued_header_and_comments() {
        let text = "OFF4 1 0\n# a comment\n\n0 0 0\n1 0 0 # trailing\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m = parse_off(text).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn headerless() {
        let m = parse_off("3 1\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.faces.len(), 1);
    }

    #[test]
    fn index_out_of_range_names_line() {
        let text = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n";
        match parse_off(text) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn write_then_parse() {
        let m = parse_off(TETRA).unwrap();
        assert_eq!(parse_off(&write_off(&m)).unwrap(), m);
    }

    #[test]
    fn zero_area_rejected() {
        let m = TriangleMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(sample_surface(&m, 4, 0), Err(DataError::InvalidMesh(_))));
    }

    #[test]
    fn samples_stay_in_triangle() {
        let m = TriangleMesh::new(vec![[0.0; 3], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let c = sample_surface(&m, 500, 3).unwrap();
        for p in c.points() {
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] / 2.0 + p[1] <= 1.0 + 1e-12 && p[2] == 0.0);
        }
        assert_eq!(c, sample_surface(&m, 500, 3).unwrap());
    }
}
